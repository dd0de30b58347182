//! FxA instruction records and the `FXA1` object-file format.
//!
//! Every arithmetic instruction fuses offset corrections into the operation
//! through embedded encrypted constants:
//!
//! ```text
//! add   r0 <- r1 [+] r2 [+] k
//! mul   r0 <- (r1 [-] k1) [*] (r2 [-] k2) [+] k0
//! beq   if r1 [=] r2 [+] k then pc <- pc + j
//! blt   if (r1 [-] k1) [<] (r2 [-] k2) then pc <- pc + j
//! ```
//!
//! 64-bit operands occupy a register pair `r, r+1` (high word in `r`) and
//! carry pair constants; offsets on pairs are applied half-wise.

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::cipher::{Ciphertext, CtOp, CtValue, Flavor, NumKind, Origin, Rel};
use crate::obfuscation::IoSchedule;

/// Number of architectural general purpose registers.
pub const GPR_COUNT: u32 = 32;
/// Special purpose registers available for aliasing temporaries.
pub const SPR_COUNT: u32 = 65_536;
/// Indices at or above this bound are backed by the execution stack.
pub const SPR_BOUND: u32 = GPR_COUNT + SPR_COUNT;
/// Largest register index an object file may name.
pub const REG_LIMIT: u32 = 1 << 24;

pub const MAGIC: &[u8; 4] = b"FXA1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u32);

impl Reg {
    /// Stack pointer.
    pub const SP: Reg = Reg(1);
    /// Return value (pair: r3, r4).
    pub const RET: Reg = Reg(3);

    pub fn next(self) -> Reg {
        Reg(self.0 + 1)
    }

    pub fn offset(self, n: u32) -> Reg {
        Reg(self.0 + n)
    }

    pub fn is_stack_backed(self) -> bool {
        self.0 >= SPR_BOUND
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Three-constant fused operations: de-offset both inputs, apply, re-offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusedOp {
    Mul,
    Div,
    Divu,
    Rem,
    Remu,
    And,
    Or,
    Xor,
    Sll,
    Sra,
    Srl,
    Addf,
    Subf,
    Mulf,
    Divf,
    AddLl,
    SubLl,
    MulLl,
    DivLl,
    DivuLl,
    RemLl,
    RemuLl,
    AndLl,
    OrLl,
    XorLl,
    SllLl,
    SraLl,
    SrlLl,
    AddD,
    SubD,
    MulD,
    DivD,
}

impl FusedOp {
    pub const ALL: [FusedOp; 32] = [
        FusedOp::Mul,
        FusedOp::Div,
        FusedOp::Divu,
        FusedOp::Rem,
        FusedOp::Remu,
        FusedOp::And,
        FusedOp::Or,
        FusedOp::Xor,
        FusedOp::Sll,
        FusedOp::Sra,
        FusedOp::Srl,
        FusedOp::Addf,
        FusedOp::Subf,
        FusedOp::Mulf,
        FusedOp::Divf,
        FusedOp::AddLl,
        FusedOp::SubLl,
        FusedOp::MulLl,
        FusedOp::DivLl,
        FusedOp::DivuLl,
        FusedOp::RemLl,
        FusedOp::RemuLl,
        FusedOp::AndLl,
        FusedOp::OrLl,
        FusedOp::XorLl,
        FusedOp::SllLl,
        FusedOp::SraLl,
        FusedOp::SrlLl,
        FusedOp::AddD,
        FusedOp::SubD,
        FusedOp::MulD,
        FusedOp::DivD,
    ];

    pub fn ct_op(self) -> CtOp {
        match self {
            FusedOp::Mul => CtOp::Mul,
            FusedOp::Div => CtOp::Div,
            FusedOp::Divu => CtOp::DivU,
            FusedOp::Rem => CtOp::Rem,
            FusedOp::Remu => CtOp::RemU,
            FusedOp::And => CtOp::And,
            FusedOp::Or => CtOp::Or,
            FusedOp::Xor => CtOp::Xor,
            FusedOp::Sll => CtOp::Shl,
            FusedOp::Sra => CtOp::Shr,
            FusedOp::Srl => CtOp::ShrU,
            FusedOp::Addf => CtOp::AddF,
            FusedOp::Subf => CtOp::SubF,
            FusedOp::Mulf => CtOp::MulF,
            FusedOp::Divf => CtOp::DivF,
            FusedOp::AddLl => CtOp::Add64,
            FusedOp::SubLl => CtOp::Sub64,
            FusedOp::MulLl => CtOp::Mul64,
            FusedOp::DivLl => CtOp::Div64,
            FusedOp::DivuLl => CtOp::DivU64,
            FusedOp::RemLl => CtOp::Rem64,
            FusedOp::RemuLl => CtOp::RemU64,
            FusedOp::AndLl => CtOp::And64,
            FusedOp::OrLl => CtOp::Or64,
            FusedOp::XorLl => CtOp::Xor64,
            FusedOp::SllLl => CtOp::Shl64,
            FusedOp::SraLl => CtOp::Shr64,
            FusedOp::SrlLl => CtOp::ShrU64,
            FusedOp::AddD => CtOp::AddD,
            FusedOp::SubD => CtOp::SubD,
            FusedOp::MulD => CtOp::MulD,
            FusedOp::DivD => CtOp::DivD,
        }
    }

    pub fn is_wide(self) -> bool {
        FusedOp::ALL.iter().position(|o| *o == self).unwrap() >= 15
    }

    pub fn name(self) -> &'static str {
        match self {
            FusedOp::Mul => "mul",
            FusedOp::Div => "div",
            FusedOp::Divu => "divu",
            FusedOp::Rem => "rem",
            FusedOp::Remu => "remu",
            FusedOp::And => "and",
            FusedOp::Or => "or",
            FusedOp::Xor => "xor",
            FusedOp::Sll => "sll",
            FusedOp::Sra => "sra",
            FusedOp::Srl => "srl",
            FusedOp::Addf => "addf",
            FusedOp::Subf => "subf",
            FusedOp::Mulf => "mulf",
            FusedOp::Divf => "divf",
            FusedOp::AddLl => "add_ll",
            FusedOp::SubLl => "sub_ll",
            FusedOp::MulLl => "mul_ll",
            FusedOp::DivLl => "div_ll",
            FusedOp::DivuLl => "divu_ll",
            FusedOp::RemLl => "rem_ll",
            FusedOp::RemuLl => "remu_ll",
            FusedOp::AndLl => "and_ll",
            FusedOp::OrLl => "or_ll",
            FusedOp::XorLl => "xor_ll",
            FusedOp::SllLl => "sll_ll",
            FusedOp::SraLl => "sra_ll",
            FusedOp::SrlLl => "srl_ll",
            FusedOp::AddD => "add_d",
            FusedOp::SubD => "sub_d",
            FusedOp::MulD => "mul_d",
            FusedOp::DivD => "div_d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    /// `r0 <- r1 [+] r2 [+] k`
    Add,
    /// `r0 <- r1 [-] r2 [+] k`
    Sub,
    /// `r0 <- r1 [+] k`
    Addi,
    /// `r0 <- k` re-sealed as a runtime value
    Li,
    Fused(FusedOp),
    /// `r0 <- r1 [+^2] k` on pairs
    Addi2,
    Li2,
    /// `r0 <- cvt(r1 [-] k1) [+] k0`
    Cvt(NumKind, NumKind),
    Mov,
    Branch(Rel, Flavor),
    B,
    /// `mem[r0 [+] k0] <- r1`
    Sw,
    /// `r0 <- mem[r1 [+] k1]`
    Lw,
    Jr,
    Jal,
    J,
    Nop,
    /// Appends `r0` to the output stream on a numbered port.
    Out,
}

/// How the `imm` field of an instruction is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImmKind {
    None,
    /// Displacement relative to the instruction's own program count.
    Relative,
    /// Absolute program count.
    Absolute,
    Port,
}

/// Register count, constant widths (true = pair) and immediate use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub regs: usize,
    pub consts: Vec<bool>,
    pub imm: ImmKind,
}

fn branch_valid(rel: Rel, flavor: Flavor) -> bool {
    flavor.is_float() || matches!(rel, Rel::Eq | Rel::Ne | Rel::Lt | Rel::Le | Rel::Gt | Rel::Ge)
}

impl Opcode {
    /// Every opcode, in encoding order.
    pub fn all() -> &'static [Opcode] {
        static TABLE: OnceLock<Vec<Opcode>> = OnceLock::new();
        TABLE.get_or_init(|| {
            let mut v = vec![Opcode::Add, Opcode::Sub, Opcode::Addi, Opcode::Li];
            v.extend(FusedOp::ALL.iter().map(|f| Opcode::Fused(*f)));
            v.extend([Opcode::Addi2, Opcode::Li2]);
            for from in NumKind::ALL {
                for to in NumKind::ALL {
                    if from != to {
                        v.push(Opcode::Cvt(from, to));
                    }
                }
            }
            v.push(Opcode::Mov);
            let flavors = [
                Flavor::Signed,
                Flavor::Unsigned,
                Flavor::Float,
                Flavor::Signed64,
                Flavor::Unsigned64,
                Flavor::Double,
            ];
            for flavor in flavors {
                for rel in Rel::ALL {
                    if branch_valid(rel, flavor) {
                        v.push(Opcode::Branch(rel, flavor));
                    }
                }
            }
            v.extend([
                Opcode::B,
                Opcode::Sw,
                Opcode::Lw,
                Opcode::Jr,
                Opcode::Jal,
                Opcode::J,
                Opcode::Nop,
                Opcode::Out,
            ]);
            v
        })
    }

    pub fn code(self) -> u8 {
        Opcode::all()
            .iter()
            .position(|o| *o == self)
            .expect("opcode not in table") as u8
    }

    pub fn from_code(code: u8) -> Option<Opcode> {
        Opcode::all().get(code as usize).copied()
    }

    pub fn signature(self) -> Signature {
        let sig = |regs, consts: &[bool], imm| Signature {
            regs,
            consts: consts.to_vec(),
            imm,
        };
        match self {
            Opcode::Add | Opcode::Sub => sig(3, &[false], ImmKind::None),
            Opcode::Addi => sig(2, &[false], ImmKind::None),
            Opcode::Li => sig(1, &[false], ImmKind::None),
            Opcode::Fused(f) => {
                let w = f.is_wide();
                sig(3, &[w, w, w], ImmKind::None)
            }
            Opcode::Addi2 => sig(2, &[true], ImmKind::None),
            Opcode::Li2 => sig(1, &[true], ImmKind::None),
            Opcode::Cvt(from, to) => sig(2, &[from.is_wide(), to.is_wide()], ImmKind::None),
            Opcode::Mov => sig(2, &[], ImmKind::None),
            Opcode::Branch(rel, flavor) => {
                let w = flavor.is_wide();
                let one = matches!(rel, Rel::Eq | Rel::Ne)
                    && matches!(flavor, Flavor::Signed | Flavor::Signed64);
                if one {
                    sig(2, &[w], ImmKind::Relative)
                } else {
                    sig(2, &[w, w], ImmKind::Relative)
                }
            }
            Opcode::B => sig(0, &[], ImmKind::Relative),
            Opcode::Sw | Opcode::Lw => sig(2, &[false], ImmKind::None),
            Opcode::Jr => sig(1, &[], ImmKind::None),
            Opcode::Jal | Opcode::J => sig(0, &[], ImmKind::Absolute),
            Opcode::Nop => sig(0, &[], ImmKind::None),
            Opcode::Out => sig(1, &[], ImmKind::Port),
        }
    }

    pub fn mnemonic(self) -> String {
        match self {
            Opcode::Add => "add".into(),
            Opcode::Sub => "sub".into(),
            Opcode::Addi => "addi".into(),
            Opcode::Li => "li".into(),
            Opcode::Fused(f) => f.name().into(),
            Opcode::Addi2 => "addi2".into(),
            Opcode::Li2 => "li2".into(),
            Opcode::Cvt(a, b) => format!("cvt_{}{}", a.name(), b.name()),
            Opcode::Mov => "mov".into(),
            Opcode::Branch(rel, flavor) => {
                let suffix = match flavor {
                    Flavor::Signed => "",
                    Flavor::Unsigned => "u",
                    Flavor::Float => "f",
                    Flavor::Signed64 => "l",
                    Flavor::Unsigned64 => "lu",
                    Flavor::Double => "d",
                };
                format!("b{}{}", rel.name(), suffix)
            }
            Opcode::B => "b".into(),
            Opcode::Sw => "sw".into(),
            Opcode::Lw => "lw".into(),
            Opcode::Jr => "jr".into(),
            Opcode::Jal => "jal".into(),
            Opcode::J => "j".into(),
            Opcode::Nop => "nop".into(),
            Opcode::Out => "out".into(),
        }
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Branch(..))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub op: Opcode,
    pub regs: Vec<Reg>,
    pub consts: Vec<CtValue>,
    pub imm: i64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IsaError {
    #[error("{op}: expected {expected} registers, found {found}")]
    RegCount {
        op: String,
        expected: usize,
        found: usize,
    },
    #[error("{op}: constant {index} has the wrong shape")]
    ConstShape { op: String, index: usize },
    #[error("{op}: constant {index} is not a program constant")]
    ConstOrigin { op: String, index: usize },
    #[error("instruction {pc}: target {target} outside program of length {len}")]
    Target { pc: usize, target: i64, len: usize },
    #[error("register {0} beyond register space")]
    RegRange(u32),
}

impl Instruction {
    pub fn new(op: Opcode, regs: Vec<Reg>, consts: Vec<CtValue>, imm: i64) -> Self {
        Instruction {
            op,
            regs,
            consts,
            imm,
        }
    }

    pub fn nop() -> Self {
        Instruction::new(Opcode::Nop, vec![], vec![], 0)
    }

    /// Checks arity and constant shapes against the opcode's signature.
    pub fn validate(&self) -> Result<(), IsaError> {
        let sig = self.op.signature();
        let name = self.op.mnemonic();
        if self.regs.len() != sig.regs {
            return Err(IsaError::RegCount {
                op: name,
                expected: sig.regs,
                found: self.regs.len(),
            });
        }
        if self.consts.len() != sig.consts.len() {
            return Err(IsaError::ConstShape {
                op: name,
                index: self.consts.len(),
            });
        }
        for (index, (c, wide)) in self.consts.iter().zip(&sig.consts).enumerate() {
            let words: Vec<&Ciphertext> = match (c, wide) {
                (CtValue::Word(w), false) => vec![w],
                (CtValue::Pair(p), true) => vec![&p.hi, &p.lo],
                _ => {
                    return Err(IsaError::ConstShape {
                        op: name,
                        index,
                    })
                }
            };
            if words.iter().any(|w| w.origin() != Origin::Constant) {
                return Err(IsaError::ConstOrigin { op: name, index });
            }
        }
        if let Some(r) = self.regs.iter().find(|r| r.0 >= REG_LIMIT) {
            return Err(IsaError::RegRange(r.0));
        }
        Ok(())
    }

    /// Absolute target of a jump or branch executed at `pc`, if any.
    pub fn target(&self, pc: usize) -> Option<i64> {
        match self.op.signature().imm {
            ImmKind::Relative => Some(pc as i64 + self.imm),
            ImmKind::Absolute => Some(self.imm),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op.mnemonic())?;
        for r in &self.regs {
            write!(f, " {r}")?;
        }
        if self.op.signature().imm != ImmKind::None {
            write!(f, " #{}", self.imm)?;
        }
        if !self.consts.is_empty() {
            write!(f, " [{} const]", self.consts.len())?;
        }
        Ok(())
    }
}

/// A compiled program: code, entry point and the user's io schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectCode {
    pub instructions: Vec<Instruction>,
    pub entry: u32,
    pub schedule: IoSchedule,
}

impl ObjectCode {
    /// Validates every instruction and every control-flow target. A target
    /// equal to the program length is the halt sentinel.
    pub fn validate(&self) -> Result<(), IsaError> {
        let len = self.instructions.len();
        if self.entry as usize > len {
            return Err(IsaError::Target {
                pc: 0,
                target: self.entry as i64,
                len,
            });
        }
        for (pc, ins) in self.instructions.iter().enumerate() {
            ins.validate()?;
            if let Some(t) = ins.target(pc) {
                if t < 0 || t as usize > len {
                    return Err(IsaError::Target { pc, target: t, len });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic header")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("stream truncated")]
    Truncated,
    #[error("unknown opcode byte {0}")]
    UnknownOpcode(u8),
    #[error("record length mismatch at instruction {0}")]
    RecordLength(usize),
    #[error("bad constant: {0}")]
    Constant(String),
    #[error("bad schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Invalid(#[from] IsaError),
}

fn put_const(out: &mut Vec<u8>, c: &Ciphertext) {
    let s = c.to_text();
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

fn encode_record(ins: &Instruction) -> Vec<u8> {
    let mut out = vec![ins.op.code()];
    for r in &ins.regs {
        out.extend_from_slice(&r.0.to_le_bytes());
    }
    if ins.op.signature().imm != ImmKind::None {
        out.extend_from_slice(&ins.imm.to_le_bytes());
    }
    for c in &ins.consts {
        match c {
            CtValue::Word(w) => put_const(&mut out, w),
            CtValue::Pair(p) => {
                put_const(&mut out, &p.hi);
                put_const(&mut out, &p.lo);
            }
        }
    }
    out
}

/// Serialises an object file. Deterministic: equal objects give equal bytes.
pub fn encode_object(o: &ObjectCode) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(o.instructions.len() as u32).to_le_bytes());
    for ins in &o.instructions {
        let rec = encode_record(ins);
        out.extend_from_slice(&(rec.len() as u16).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out.extend_from_slice(&o.entry.to_le_bytes());
    let sched = o.schedule.to_text();
    out.extend_from_slice(&(sched.len() as u32).to_le_bytes());
    out.extend_from_slice(sched.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn ct(&mut self) -> Result<Ciphertext, FormatError> {
        let n = self.u8()? as usize;
        let s = std::str::from_utf8(self.take(n)?)
            .map_err(|e| FormatError::Constant(e.to_string()))?;
        Ciphertext::from_text(s).map_err(|e| FormatError::Constant(e.to_string()))
    }
}

fn decode_record(bytes: &[u8]) -> Result<Instruction, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let code = r.u8()?;
    let op = Opcode::from_code(code).ok_or(FormatError::UnknownOpcode(code))?;
    let sig = op.signature();
    let regs = (0..sig.regs)
        .map(|_| r.u32().map(Reg))
        .collect::<Result<Vec<_>, _>>()?;
    let imm = if sig.imm != ImmKind::None { r.i64()? } else { 0 };
    let mut consts = Vec::with_capacity(sig.consts.len());
    for wide in &sig.consts {
        if *wide {
            let hi = r.ct()?;
            let lo = r.ct()?;
            consts.push(CtValue::Pair(crate::cipher::CipherPair { hi, lo }));
        } else {
            consts.push(CtValue::Word(r.ct()?));
        }
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Truncated);
    }
    Ok(Instruction::new(op, regs, consts, imm))
}

/// Parses an object file and validates it.
pub fn decode_object(bytes: &[u8]) -> Result<ObjectCode, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| FormatError::Magic)? != MAGIC {
        return Err(FormatError::Magic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut instructions = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let len = r.u16()? as usize;
        let rec = r.take(len)?;
        instructions.push(decode_record(rec).map_err(|e| match e {
            FormatError::Truncated => FormatError::RecordLength(i),
            other => other,
        })?);
    }
    let entry = r.u32()?;
    let slen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(slen)?)
        .map_err(|e| FormatError::Schedule(e.to_string()))?;
    let schedule = IoSchedule::from_text(text).map_err(|e| FormatError::Schedule(e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(FormatError::Truncated);
    }
    let o = ObjectCode {
        instructions,
        entry,
        schedule,
    };
    o.validate()?;
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{CipherPair, KeyContext};

    fn ctx() -> KeyContext {
        KeyContext::new(11)
    }

    /// Builds a well-formed instance of `op` with the given registers.
    pub(crate) fn sample(k: &KeyContext, op: Opcode, reg_base: u32, imm: i64) -> Instruction {
        let sig = op.signature();
        let regs = (0..sig.regs as u32).map(|i| Reg(reg_base + i)).collect();
        let consts = sig
            .consts
            .iter()
            .enumerate()
            .map(|(i, w)| {
                if *w {
                    CtValue::Pair(k.encrypt_pair(i as u64, Origin::Constant))
                } else {
                    CtValue::Word(k.encrypt(i as u32, Origin::Constant))
                }
            })
            .collect();
        let imm = if sig.imm == ImmKind::None { 0 } else { imm };
        Instruction::new(op, regs, consts, imm)
    }

    #[test]
    fn every_opcode_has_a_signature_and_code() {
        let k = ctx();
        let all = Opcode::all();
        assert!(all.len() < 256);
        for (i, op) in all.iter().enumerate() {
            assert_eq!(op.code() as usize, i);
            assert_eq!(Opcode::from_code(i as u8), Some(*op));
            sample(&k, *op, 5, 0).validate().unwrap();
        }
        assert_eq!(Opcode::from_code(250), None);
    }

    #[test]
    fn arity_table_matches_instruction_families() {
        assert_eq!(Opcode::Add.signature().consts.len(), 1);
        assert_eq!(Opcode::Fused(FusedOp::Mul).signature().consts.len(), 3);
        assert_eq!(Opcode::Fused(FusedOp::Mulf).signature().consts.len(), 3);
        assert_eq!(Opcode::Fused(FusedOp::MulLl).signature().consts, vec![true; 3]);
        assert_eq!(Opcode::Branch(Rel::Eq, Flavor::Signed).signature().consts.len(), 1);
        assert_eq!(Opcode::Branch(Rel::Lt, Flavor::Unsigned).signature().consts.len(), 2);
        assert_eq!(Opcode::Branch(Rel::Eq, Flavor::Float).signature().consts.len(), 2);
        for op in [Opcode::Mov, Opcode::B, Opcode::Jr, Opcode::Jal, Opcode::J, Opcode::Nop] {
            assert!(op.signature().consts.is_empty());
        }
    }

    #[test]
    fn validation_rejects_runtime_constants_and_bad_shapes() {
        let k = ctx();
        let mut ins = sample(&k, Opcode::Add, 0, 0);
        ins.consts[0] = CtValue::Word(k.encrypt(1, Origin::Runtime));
        assert!(matches!(ins.validate(), Err(IsaError::ConstOrigin { .. })));
        let mut ins = sample(&k, Opcode::Addi2, 0, 0);
        ins.consts[0] = CtValue::Word(k.encrypt(1, Origin::Constant));
        assert!(matches!(ins.validate(), Err(IsaError::ConstShape { .. })));
        let mut ins = sample(&k, Opcode::Mov, 0, 0);
        ins.regs.pop();
        assert!(matches!(ins.validate(), Err(IsaError::RegCount { .. })));
    }

    fn object(ins: Vec<Instruction>) -> ObjectCode {
        ObjectCode {
            instructions: ins,
            entry: 0,
            schedule: IoSchedule::default(),
        }
    }

    #[test]
    fn nop_program_has_one_record_and_round_trips() {
        let o = object(vec![Instruction::nop()]);
        let bytes = encode_object(&o);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 1);
        assert_eq!(decode_object(&bytes).unwrap(), o);
    }

    #[test]
    fn round_trip_preserves_ciphertext_bytes() {
        let k = ctx();
        let o = object(vec![
            sample(&k, Opcode::Fused(FusedOp::MulLl), 40, 0),
            sample(&k, Opcode::Branch(Rel::Lt, Flavor::Double), 8, -1),
        ]);
        let back = decode_object(&encode_object(&o)).unwrap();
        assert_eq!(back.instructions[0].consts, o.instructions[0].consts);
        assert_eq!(back, o);
    }

    #[test]
    fn decode_errors() {
        let o = object(vec![Instruction::nop(), Instruction::new(Opcode::J, vec![], vec![], 1)]);
        let bytes = encode_object(&o);
        assert_eq!(decode_object(&bytes[..bytes.len() - 3]).unwrap_err(), FormatError::Truncated);
        assert_eq!(decode_object(b"NOPE").unwrap_err(), FormatError::Magic);

        let far = object(vec![Instruction::new(Opcode::B, vec![], vec![], 5)]);
        assert!(matches!(
            decode_object(&encode_object(&far)),
            Err(FormatError::Invalid(IsaError::Target { .. }))
        ));

        let mut bad = encode_object(&object(vec![Instruction::nop()]));
        // opcode byte of the first record: magic(4) version(1) count(4) len(2)
        bad[11] = 255;
        assert_eq!(decode_object(&bad).unwrap_err(), FormatError::UnknownOpcode(255));
    }

    #[test]
    fn halt_sentinel_is_a_valid_target() {
        let o = object(vec![Instruction::new(Opcode::J, vec![], vec![], 1)]);
        o.validate().unwrap();
        let k = ctx();
        let pair = CipherPair {
            hi: k.encrypt(0, Origin::Constant),
            lo: k.encrypt(0, Origin::Constant),
        };
        let ins = Instruction::new(Opcode::Li2, vec![Reg(2)], vec![CtValue::Pair(pair)], 0);
        ins.validate().unwrap();
    }
}
