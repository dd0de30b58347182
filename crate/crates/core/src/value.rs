//! Plain values as seen by the user, and run outcomes shared by the
//! oracle and the VM.

use std::fmt;

use crate::cipher::NumKind;

/// A plaintext value tagged with its register representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value {
    pub kind: NumKind,
    pub bits: u64,
}

impl Value {
    pub fn new(kind: NumKind, bits: u64) -> Value {
        let bits = if kind.is_wide() { bits } else { bits & 0xffff_ffff };
        Value { kind, bits }
    }

    /// Parses decimal, `0x` hex or (for float kinds) any float literal Rust
    /// accepts, wrapping integers to the kind's width.
    pub fn parse(kind: NumKind, s: &str) -> Result<Value, String> {
        let s = s.trim();
        let bad = || format!("cannot read '{s}' as {}", kind_label(kind));
        let int = || -> Result<u64, String> {
            let (neg, body) = match s.strip_prefix('-') {
                Some(b) => (true, b),
                None => (false, s.strip_prefix('+').unwrap_or(s)),
            };
            let mag = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
                Some(h) => u64::from_str_radix(h, 16),
                None => body.parse::<u64>(),
            }
            .map_err(|_| bad())?;
            Ok(if neg { mag.wrapping_neg() } else { mag })
        };
        let bits = match kind {
            NumKind::F32 => u64::from(s.parse::<f32>().map_err(|_| bad())?.to_bits()),
            NumKind::F64 => s.parse::<f64>().map_err(|_| bad())?.to_bits(),
            _ => int()?,
        };
        Ok(Value::new(kind, bits))
    }
}

fn kind_label(k: NumKind) -> &'static str {
    match k {
        NumKind::I32 => "int",
        NumKind::U32 => "unsigned",
        NumKind::I64 => "long long",
        NumKind::U64 => "unsigned long long",
        NumKind::F32 => "float",
        NumKind::F64 => "double",
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NumKind::I32 => write!(f, "{}", self.bits as u32 as i32),
            NumKind::U32 => write!(f, "{}", self.bits as u32),
            NumKind::I64 => write!(f, "{}", self.bits as i64),
            NumKind::U64 => write!(f, "{}", self.bits),
            NumKind::F32 => write!(f, "{:?}", f32::from_bits(self.bits as u32)),
            NumKind::F64 => write!(f, "{:?}", f64::from_bits(self.bits)),
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Trap {
    #[error("trap: divide")]
    Divide,
    #[error("fault: {0}")]
    Fault(String),
    #[error("step budget of {0} exhausted")]
    Budget(u64),
}

/// Emitted values in order, then `main`'s return value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outputs {
    pub emits: Vec<Value>,
    pub ret: Option<Value>,
}

impl Outputs {
    pub fn all(&self) -> impl Iterator<Item = &Value> {
        self.emits.iter().chain(self.ret.iter())
    }
}

impl fmt::Display for Outputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.emits {
            writeln!(f, "emit {e}")?;
        }
        if let Some(r) = &self.ret {
            writeln!(f, "return {r}")?;
        }
        Ok(())
    }
}

/// Result of running a program: whatever was produced, plus how it ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub outputs: Outputs,
    pub status: Result<(), Trap>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_show() {
        let v = Value::parse(NumKind::I32, "-5").unwrap();
        assert_eq!(v.bits, 0xffff_fffb);
        assert_eq!(v.to_string(), "-5");
        assert_eq!(Value::parse(NumKind::U32, "0xffffffff").unwrap().to_string(), "4294967295");
        assert_eq!(Value::parse(NumKind::F64, "1.5").unwrap().to_string(), "1.5");
        assert_eq!(Value::parse(NumKind::I64, "-1").unwrap().bits, u64::MAX);
        assert!(Value::parse(NumKind::I32, "x").is_err());
    }
}
