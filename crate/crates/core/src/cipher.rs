//! Simulated encryption oracle.
//!
//! A [`KeyContext`] holds the only key. It seals 32-bit plaintext words into
//! 128-bit blocks together with a fresh nonce and an origin bit, so that
//! encryption is one-to-many and program constants can never collide with
//! runtime values. Arithmetic on ciphertexts goes through the [`Evaluator`]
//! capability, which deliberately has no way to hand a plaintext back out:
//! the VM only ever holds an `&dyn Evaluator`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

/// A 32-bit plaintext word. Arithmetic on it wraps mod 2^32; float
/// operations reinterpret the bits as IEEE 754 single precision.
pub type PlainWord = u32;

const MAGIC: u64 = 0x2A5F_1C3B;
const ROUNDS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CipherError {
    #[error("ciphertext failed integrity check")]
    Integrity,
    #[error("malformed ciphertext encoding: {0}")]
    Encoding(String),
    #[error("divide by zero")]
    DivideByZero,
    #[error("operand shape mismatch for {0:?}")]
    Arity(CtOp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Constant,
    Runtime,
}

impl Origin {
    fn bit(self) -> u64 {
        match self {
            Origin::Constant => 1,
            Origin::Runtime => 0,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Origin::Constant => 'C',
            Origin::Runtime => 'R',
        }
    }
}

/// An opaque sealed word.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ciphertext {
    payload: [u8; 16],
    origin: Origin,
}

impl Ciphertext {
    /// Reassembles a ciphertext from raw parts. Nothing is checked until the
    /// key holder opens it.
    pub fn from_parts(payload: [u8; 16], origin: Origin) -> Self {
        Ciphertext { payload, origin }
    }

    pub fn payload(&self) -> &[u8; 16] {
        &self.payload
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Text form used in object files and traces: base64 payload followed
    /// by `C` or `R`.
    pub fn to_text(&self) -> String {
        let mut s = B64.encode(self.payload);
        s.push(self.origin.as_char());
        s
    }

    pub fn from_text(s: &str) -> Result<Self, CipherError> {
        let (body, tag) = s
            .char_indices()
            .last()
            .map(|(i, c)| (&s[..i], c))
            .ok_or_else(|| CipherError::Encoding("empty".into()))?;
        let origin = match tag {
            'C' => Origin::Constant,
            'R' => Origin::Runtime,
            other => return Err(CipherError::Encoding(format!("bad origin tag {other:?}"))),
        };
        let bytes = B64
            .decode(body)
            .map_err(|e| CipherError::Encoding(e.to_string()))?;
        let payload: [u8; 16] = bytes
            .try_into()
            .map_err(|_| CipherError::Encoding("payload must be 16 bytes".into()))?;
        Ok(Ciphertext { payload, origin })
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ct({})", self.to_text())
    }
}

/// A 64-bit value as two sealed halves, high word first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CipherPair {
    pub hi: Ciphertext,
    pub lo: Ciphertext,
}

/// Either shape of encrypted operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CtValue {
    Word(Ciphertext),
    Pair(CipherPair),
}

/// The processor's unique per-address value derived from an address
/// ciphertext. Equal plaintext addresses give equal handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddrHandle(pub u64);

/// Numeric encodings understood by the conversion operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NumKind {
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl NumKind {
    pub const ALL: [NumKind; 6] = [
        NumKind::I32,
        NumKind::U32,
        NumKind::I64,
        NumKind::U64,
        NumKind::F32,
        NumKind::F64,
    ];

    pub fn is_wide(self) -> bool {
        matches!(self, NumKind::I64 | NumKind::U64 | NumKind::F64)
    }

    pub fn name(self) -> &'static str {
        match self {
            NumKind::I32 => "i",
            NumKind::U32 => "u",
            NumKind::I64 => "l",
            NumKind::U64 => "ul",
            NumKind::F32 => "f",
            NumKind::F64 => "d",
        }
    }
}

/// Ciphertext-domain operations `[f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CtOp {
    Add,
    Sub,
    Mul,
    Div,
    DivU,
    Rem,
    RemU,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    ShrU,
    AddF,
    SubF,
    MulF,
    DivF,
    /// Half-wise `+^2`: each 32-bit half added separately, no carry.
    AddHalves,
    /// Half-wise `-^2`.
    SubHalves,
    Add64,
    Sub64,
    Mul64,
    Div64,
    DivU64,
    Rem64,
    RemU64,
    And64,
    Or64,
    Xor64,
    Shl64,
    Shr64,
    ShrU64,
    AddD,
    SubD,
    MulD,
    DivD,
    Convert(NumKind, NumKind),
    /// Re-encrypts a value as a runtime ciphertext (used by `li`).
    Reseal,
}

impl CtOp {
    fn arity(self) -> usize {
        match self {
            CtOp::Convert(..) | CtOp::Reseal => 1,
            _ => 2,
        }
    }

    /// Whether operands (and result) are 64-bit pairs.
    fn wide_operands(self) -> bool {
        matches!(
            self,
            CtOp::AddHalves
                | CtOp::SubHalves
                | CtOp::Add64
                | CtOp::Sub64
                | CtOp::Mul64
                | CtOp::Div64
                | CtOp::DivU64
                | CtOp::Rem64
                | CtOp::RemU64
                | CtOp::And64
                | CtOp::Or64
                | CtOp::Xor64
                | CtOp::Shl64
                | CtOp::Shr64
                | CtOp::ShrU64
                | CtOp::AddD
                | CtOp::SubD
                | CtOp::MulD
                | CtOp::DivD
        )
    }
}

/// Comparison flavour: which ordering the plaintext words are compared in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    Signed,
    Unsigned,
    Float,
    Signed64,
    Unsigned64,
    Double,
}

impl Flavor {
    pub fn is_wide(self) -> bool {
        matches!(self, Flavor::Signed64 | Flavor::Unsigned64 | Flavor::Double)
    }

    pub fn is_float(self) -> bool {
        matches!(self, Flavor::Float | Flavor::Double)
    }
}

/// Relations. The `Not*` forms are exact complements of the IEEE ordered
/// relations and only differ from their integer counterparts on NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    NotLt,
    NotLe,
    NotGt,
    NotGe,
}

impl Rel {
    pub const ALL: [Rel; 10] = [
        Rel::Eq,
        Rel::Ne,
        Rel::Lt,
        Rel::Le,
        Rel::Gt,
        Rel::Ge,
        Rel::NotLt,
        Rel::NotLe,
        Rel::NotGt,
        Rel::NotGe,
    ];

    /// The relation that holds exactly when `self` does not.
    pub fn complement(self, flavor: Flavor) -> Rel {
        let float = flavor.is_float();
        match self {
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Lt if float => Rel::NotLt,
            Rel::Le if float => Rel::NotLe,
            Rel::Gt if float => Rel::NotGt,
            Rel::Ge if float => Rel::NotGe,
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Gt => Rel::Le,
            Rel::Ge => Rel::Lt,
            Rel::NotLt => Rel::Lt,
            Rel::NotLe => Rel::Le,
            Rel::NotGt => Rel::Gt,
            Rel::NotGe => Rel::Ge,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rel::Eq => "eq",
            Rel::Ne => "ne",
            Rel::Lt => "lt",
            Rel::Le => "le",
            Rel::Gt => "gt",
            Rel::Ge => "ge",
            Rel::NotLt => "nlt",
            Rel::NotLe => "nle",
            Rel::NotGt => "ngt",
            Rel::NotGe => "nge",
        }
    }
}

/// What the processor may do with ciphertexts. There is intentionally no
/// decrypt here.
pub trait Evaluator: Send + Sync {
    fn ct_op(&self, op: CtOp, args: &[CtValue]) -> Result<CtValue, CipherError>;
    fn ct_cmp(&self, rel: Rel, flavor: Flavor, a: &CtValue, b: &CtValue)
        -> Result<bool, CipherError>;
    fn addr_handle(&self, c: &Ciphertext) -> Result<AddrHandle, CipherError>;
}

/// splitmix64 finaliser; a bijection on u64.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The key holder. Immutable after creation apart from the nonce counter.
pub struct KeyContext {
    round_keys: [u64; ROUNDS],
    handle_key: u64,
    nonce: AtomicU64,
}

impl fmt::Debug for KeyContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyContext { .. }")
    }
}

impl KeyContext {
    /// Derives a key (and a starting point for the runtime nonce stream)
    /// from a 64-bit seed. Two contexts built from one seed replay the
    /// same ciphertexts.
    pub fn new(key_seed: u64) -> Self {
        let mut state = key_seed ^ 0x6a09_e667_f3bc_c908;
        let mut next = || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            mix64(state)
        };
        let mut round_keys = [0u64; ROUNDS];
        for k in round_keys.iter_mut() {
            *k = next();
        }
        let handle_key = next();
        let nonce = AtomicU64::new(next());
        KeyContext {
            round_keys,
            handle_key,
            nonce,
        }
    }

    fn permute(&self, mut l: u64, mut r: u64) -> [u8; 16] {
        for k in &self.round_keys {
            let t = l ^ mix64(r ^ k);
            l = r;
            r = t;
        }
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&l.to_be_bytes());
        out[8..].copy_from_slice(&r.to_be_bytes());
        out
    }

    fn unpermute(&self, block: &[u8; 16]) -> (u64, u64) {
        let mut l = u64::from_be_bytes(block[..8].try_into().unwrap());
        let mut r = u64::from_be_bytes(block[8..].try_into().unwrap());
        for k in self.round_keys.iter().rev() {
            let t = r ^ mix64(l ^ k);
            r = l;
            l = t;
        }
        (l, r)
    }

    /// Encrypts with an explicit nonce. Callers that need reproducible
    /// ciphertexts (the compiler) supply their own nonce stream.
    pub fn encrypt_with_nonce(&self, x: PlainWord, origin: Origin, nonce: u64) -> Ciphertext {
        let head = (u64::from(x) << 32) | (origin.bit() << 31) | MAGIC;
        Ciphertext {
            payload: self.permute(head, nonce),
            origin,
        }
    }

    /// Encrypts with a fresh nonce.
    pub fn encrypt(&self, x: PlainWord, origin: Origin) -> Ciphertext {
        let n = self.nonce.fetch_add(1, Ordering::Relaxed);
        self.encrypt_with_nonce(x, origin, mix64(n))
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<PlainWord, CipherError> {
        let (head, _nonce) = self.unpermute(&c.payload);
        if head & 0x7fff_ffff != MAGIC || (head >> 31) & 1 != c.origin.bit() {
            return Err(CipherError::Integrity);
        }
        Ok((head >> 32) as u32)
    }

    pub fn encrypt_pair(&self, x: u64, origin: Origin) -> CipherPair {
        CipherPair {
            hi: self.encrypt((x >> 32) as u32, origin),
            lo: self.encrypt(x as u32, origin),
        }
    }

    pub fn decrypt_pair(&self, p: &CipherPair) -> Result<u64, CipherError> {
        Ok((u64::from(self.decrypt(&p.hi)?) << 32) | u64::from(self.decrypt(&p.lo)?))
    }

    pub fn decrypt_value(&self, v: &CtValue) -> Result<u64, CipherError> {
        match v {
            CtValue::Word(c) => self.decrypt(c).map(u64::from),
            CtValue::Pair(p) => self.decrypt_pair(p),
        }
    }

    fn runtime_value(&self, wide: bool, x: u64) -> CtValue {
        if wide {
            CtValue::Pair(self.encrypt_pair(x, Origin::Runtime))
        } else {
            CtValue::Word(self.encrypt(x as u32, Origin::Runtime))
        }
    }
}

impl Evaluator for KeyContext {
    fn ct_op(&self, op: CtOp, args: &[CtValue]) -> Result<CtValue, CipherError> {
        if args.len() != op.arity() {
            return Err(CipherError::Arity(op));
        }
        let (in_wide, out_wide) = match op {
            CtOp::Convert(from, to) => (from.is_wide(), to.is_wide()),
            CtOp::Reseal => {
                let w = matches!(args[0], CtValue::Pair(_));
                (w, w)
            }
            _ => (op.wide_operands(), op.wide_operands()),
        };
        let mut plain = [0u64; 2];
        for (slot, a) in plain.iter_mut().zip(args) {
            if matches!(a, CtValue::Pair(_)) != in_wide {
                return Err(CipherError::Arity(op));
            }
            *slot = self.decrypt_value(a)?;
        }
        let out = plain::apply(op, &plain[..args.len()])?;
        Ok(self.runtime_value(out_wide, out))
    }

    fn ct_cmp(
        &self,
        rel: Rel,
        flavor: Flavor,
        a: &CtValue,
        b: &CtValue,
    ) -> Result<bool, CipherError> {
        let wide = flavor.is_wide();
        if matches!(a, CtValue::Pair(_)) != wide || matches!(b, CtValue::Pair(_)) != wide {
            return Err(CipherError::Encoding("comparison operand width".into()));
        }
        let x = self.decrypt_value(a)?;
        let y = self.decrypt_value(b)?;
        Ok(plain::compare(rel, flavor, x, y))
    }

    fn addr_handle(&self, c: &Ciphertext) -> Result<AddrHandle, CipherError> {
        let a = self.decrypt(c)?;
        Ok(AddrHandle(mix64(u64::from(a) ^ self.handle_key)))
    }
}

/// Plaintext meaning of each ciphertext operation. Words travel as the low
/// 32 bits of a u64; pairs as the full u64 (high word first).
pub mod plain {
    use super::{CipherError, CtOp, Flavor, NumKind, Rel};

    fn halves(a: u64, b: u64, f: impl Fn(u32, u32) -> u32) -> u64 {
        let hi = f((a >> 32) as u32, (b >> 32) as u32);
        let lo = f(a as u32, b as u32);
        (u64::from(hi) << 32) | u64::from(lo)
    }

    pub fn convert(from: NumKind, to: NumKind, bits: u64) -> u64 {
        macro_rules! to_kind {
            ($v:expr) => {
                match to {
                    NumKind::I32 => u64::from(($v as i32) as u32),
                    NumKind::U32 => u64::from($v as u32),
                    NumKind::I64 => ($v as i64) as u64,
                    NumKind::U64 => $v as u64,
                    NumKind::F32 => u64::from(($v as f32).to_bits()),
                    NumKind::F64 => ($v as f64).to_bits(),
                }
            };
        }
        match from {
            NumKind::I32 => to_kind!(bits as u32 as i32),
            NumKind::U32 => to_kind!(bits as u32),
            NumKind::I64 => to_kind!(bits as i64),
            NumKind::U64 => to_kind!(bits),
            NumKind::F32 => to_kind!(f32::from_bits(bits as u32)),
            NumKind::F64 => to_kind!(f64::from_bits(bits)),
        }
    }

    pub fn apply(op: CtOp, args: &[u64]) -> Result<u64, CipherError> {
        let a = args[0];
        let b = args.get(1).copied().unwrap_or(0);
        let (x, y) = (a as u32, b as u32);
        let (fx, fy) = (f32::from_bits(x), f32::from_bits(y));
        let (dx, dy) = (f64::from_bits(a), f64::from_bits(b));
        let w = |v: u32| Ok(u64::from(v));
        let nz32 = || if y == 0 { Err(CipherError::DivideByZero) } else { Ok(()) };
        let nz64 = || if b == 0 { Err(CipherError::DivideByZero) } else { Ok(()) };
        match op {
            CtOp::Add => w(x.wrapping_add(y)),
            CtOp::Sub => w(x.wrapping_sub(y)),
            CtOp::Mul => w(x.wrapping_mul(y)),
            CtOp::Div => {
                nz32()?;
                w((x as i32).wrapping_div(y as i32) as u32)
            }
            CtOp::DivU => {
                nz32()?;
                w(x / y)
            }
            CtOp::Rem => {
                nz32()?;
                w((x as i32).wrapping_rem(y as i32) as u32)
            }
            CtOp::RemU => {
                nz32()?;
                w(x % y)
            }
            CtOp::And => w(x & y),
            CtOp::Or => w(x | y),
            CtOp::Xor => w(x ^ y),
            CtOp::Shl => w(x.wrapping_shl(y)),
            CtOp::Shr => w((x as i32).wrapping_shr(y) as u32),
            CtOp::ShrU => w(x.wrapping_shr(y)),
            CtOp::AddF => w((fx + fy).to_bits()),
            CtOp::SubF => w((fx - fy).to_bits()),
            CtOp::MulF => w((fx * fy).to_bits()),
            CtOp::DivF => w((fx / fy).to_bits()),
            CtOp::AddHalves => Ok(halves(a, b, u32::wrapping_add)),
            CtOp::SubHalves => Ok(halves(a, b, u32::wrapping_sub)),
            CtOp::Add64 => Ok(a.wrapping_add(b)),
            CtOp::Sub64 => Ok(a.wrapping_sub(b)),
            CtOp::Mul64 => Ok(a.wrapping_mul(b)),
            CtOp::Div64 => {
                nz64()?;
                Ok((a as i64).wrapping_div(b as i64) as u64)
            }
            CtOp::DivU64 => {
                nz64()?;
                Ok(a / b)
            }
            CtOp::Rem64 => {
                nz64()?;
                Ok((a as i64).wrapping_rem(b as i64) as u64)
            }
            CtOp::RemU64 => {
                nz64()?;
                Ok(a % b)
            }
            CtOp::And64 => Ok(a & b),
            CtOp::Or64 => Ok(a | b),
            CtOp::Xor64 => Ok(a ^ b),
            CtOp::Shl64 => Ok(a.wrapping_shl(b as u32)),
            CtOp::Shr64 => Ok((a as i64).wrapping_shr(b as u32) as u64),
            CtOp::ShrU64 => Ok(a.wrapping_shr(b as u32)),
            CtOp::AddD => Ok((dx + dy).to_bits()),
            CtOp::SubD => Ok((dx - dy).to_bits()),
            CtOp::MulD => Ok((dx * dy).to_bits()),
            CtOp::DivD => Ok((dx / dy).to_bits()),
            CtOp::Convert(from, to) => Ok(convert(from, to, a)),
            CtOp::Reseal => Ok(a),
        }
    }

    pub fn compare(rel: Rel, flavor: Flavor, a: u64, b: u64) -> bool {
        use std::cmp::Ordering;
        let ord: Option<Ordering> = match flavor {
            Flavor::Signed => Some((a as u32 as i32).cmp(&(b as u32 as i32))),
            Flavor::Unsigned => Some((a as u32).cmp(&(b as u32))),
            Flavor::Signed64 => Some((a as i64).cmp(&(b as i64))),
            Flavor::Unsigned64 => Some(a.cmp(&b)),
            Flavor::Float => f32::from_bits(a as u32).partial_cmp(&f32::from_bits(b as u32)),
            Flavor::Double => f64::from_bits(a).partial_cmp(&f64::from_bits(b)),
        };
        let holds = |r: Rel| match (r, ord) {
            (_, None) => matches!(r, Rel::Ne),
            (Rel::Eq, Some(o)) => o == Ordering::Equal,
            (Rel::Ne, Some(o)) => o != Ordering::Equal,
            (Rel::Lt, Some(o)) => o == Ordering::Less,
            (Rel::Le, Some(o)) => o != Ordering::Greater,
            (Rel::Gt, Some(o)) => o == Ordering::Greater,
            (Rel::Ge, Some(o)) => o != Ordering::Less,
            _ => unreachable!(),
        };
        match rel {
            Rel::NotLt => !holds(Rel::Lt),
            Rel::NotLe => !holds(Rel::Le),
            Rel::NotGt => !holds(Rel::Gt),
            Rel::NotGe => !holds(Rel::Ge),
            r => holds(r),
        }
    }
}
