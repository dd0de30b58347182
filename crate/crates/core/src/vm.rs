//! The encrypted processor.
//!
//! The machine holds ciphertexts only and reaches the cipher through the
//! [`Evaluator`] capability, which offers operations, comparisons and
//! address handles but no way back to plaintext. Memory sits behind a
//! memoising front end that maps address handles to physical slots: the
//! first touch of an address takes the next free slot, and every write
//! takes a fresh one.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::cipher::{AddrHandle, CipherError, CipherPair, Ciphertext, CtOp, CtValue, Evaluator};
use crate::isa::{ImmKind, Instruction, ObjectCode, Opcode, Reg};
use crate::obfuscation::IoLoc;
use crate::value::Trap;

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub budget: u64,
    /// Keep per-step trace entries. Statistics sweeps that only need
    /// outputs can switch this off.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget: DEFAULT_BUDGET,
            trace: true,
        }
    }
}

/// One executed instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub step: u64,
    pub pc: usize,
    pub op: Opcode,
    pub regs: Vec<Reg>,
    pub consts: Vec<CtValue>,
    pub imm: i64,
    /// Outcome of a conditional branch.
    pub taken: Option<bool>,
    /// Physical slot touched by `lw`/`sw`.
    pub slot: Option<u64>,
    /// Register words read, in operand order.
    pub reads: Vec<Ciphertext>,
    /// Register words written.
    pub writes: Vec<Ciphertext>,
}

impl TraceEntry {
    /// Tab-separated record: step, opcode, regs, consts, branch flag, slot,
    /// jump displacement.
    pub fn to_line(&self) -> String {
        let regs: Vec<String> = self.regs.iter().map(|r| r.to_string()).collect();
        let mut consts = Vec::new();
        for c in &self.consts {
            match c {
                CtValue::Word(w) => consts.push(w.to_text()),
                CtValue::Pair(p) => consts.push(format!("{}:{}", p.hi.to_text(), p.lo.to_text())),
            }
        }
        let flag = match self.taken {
            Some(true) => "1",
            Some(false) => "0",
            None => "-",
        };
        let slot = self.slot.map_or("-".to_string(), |s| s.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.op.mnemonic(),
            regs.join(","),
            consts.join(","),
            flag,
            slot,
            self.imm
        )
    }
}

pub fn trace_text(trace: &[TraceEntry]) -> String {
    let mut s = String::new();
    for e in trace {
        let _ = writeln!(s, "{}", e.to_line());
    }
    s
}

/// Address front end: address handle to physical slot.
#[derive(Debug, Default, Clone)]
pub struct Tlb {
    map: HashMap<AddrHandle, u64>,
    next_free: u64,
}

impl Tlb {
    pub fn translate(&mut self, h: AddrHandle, write: bool) -> Result<u64, Trap> {
        match (self.map.get(&h), write) {
            (Some(s), false) => Ok(*s),
            (None, false) => Err(Trap::Fault("read of an address never written".into())),
            (_, true) => {
                let s = self.next_free;
                self.next_free += 1;
                self.map.insert(h, s);
                Ok(s)
            }
        }
    }

    /// Number of slots ever granted.
    pub fn next_free(&self) -> u64 {
        self.next_free
    }

    pub fn mapped(&self) -> usize {
        self.map.len()
    }
}

#[derive(Debug, Clone)]
pub struct MachineState {
    pub regs: HashMap<Reg, Ciphertext>,
    /// Physical memory indexed by slot.
    pub mem: Vec<Ciphertext>,
    pub pc: usize,
    /// Return address set by `jal`.
    pub ra: usize,
    pub tlb: Tlb,
}

#[derive(Debug, Clone)]
pub struct VmRun {
    pub trace: Vec<TraceEntry>,
    /// `out` instructions in execution order.
    pub outputs: Vec<(u32, Ciphertext)>,
    pub state: MachineState,
    pub steps: u64,
    pub status: Result<(), Trap>,
}

impl VmRun {
    /// Reads a scheduled register location after the run.
    pub fn reg_value(&self, r: Reg, wide: bool) -> Option<CtValue> {
        let hi = *self.state.regs.get(&r)?;
        if wide {
            let lo = *self.state.regs.get(&r.next())?;
            Some(CtValue::Pair(CipherPair { hi, lo }))
        } else {
            Some(CtValue::Word(hi))
        }
    }
}

fn cipher_trap(e: CipherError) -> Trap {
    match e {
        CipherError::DivideByZero => Trap::Divide,
        e => Trap::Fault(e.to_string()),
    }
}

fn words(v: &CtValue) -> Vec<Ciphertext> {
    match v {
        CtValue::Word(w) => vec![*w],
        CtValue::Pair(p) => vec![p.hi, p.lo],
    }
}

struct Machine<'a> {
    ev: &'a dyn Evaluator,
    st: MachineState,
    reads: Vec<Ciphertext>,
    writes: Vec<Ciphertext>,
}

impl Machine<'_> {
    fn read(&mut self, r: Reg, wide: bool) -> Result<CtValue, Trap> {
        let get = |m: &Self, r: Reg| {
            m.st
                .regs
                .get(&r)
                .copied()
                .ok_or_else(|| Trap::Fault(format!("read of unset register {r}")))
        };
        let v = if wide {
            CtValue::Pair(CipherPair {
                hi: get(self, r)?,
                lo: get(self, r.next())?,
            })
        } else {
            CtValue::Word(get(self, r)?)
        };
        self.reads.extend(words(&v));
        Ok(v)
    }

    fn write(&mut self, r: Reg, v: CtValue) {
        match v {
            CtValue::Word(w) => {
                self.st.regs.insert(r, w);
            }
            CtValue::Pair(p) => {
                self.st.regs.insert(r, p.hi);
                self.st.regs.insert(r.next(), p.lo);
            }
        }
        self.writes.extend(words(&v));
    }

    fn op(&self, op: CtOp, args: &[CtValue]) -> Result<CtValue, Trap> {
        self.ev.ct_op(op, args).map_err(cipher_trap)
    }

    fn add(&self, a: CtValue, k: CtValue) -> Result<CtValue, Trap> {
        let op = if matches!(a, CtValue::Pair(_)) { CtOp::AddHalves } else { CtOp::Add };
        self.op(op, &[a, k])
    }

    fn sub(&self, a: CtValue, k: CtValue) -> Result<CtValue, Trap> {
        let op = if matches!(a, CtValue::Pair(_)) { CtOp::SubHalves } else { CtOp::Sub };
        self.op(op, &[a, k])
    }

    fn addr(&self, a: CtValue) -> Result<AddrHandle, Trap> {
        match a {
            CtValue::Word(w) => self.ev.addr_handle(&w).map_err(cipher_trap),
            CtValue::Pair(_) => Err(Trap::Fault("pair address".into())),
        }
    }

    /// Executes one instruction. Returns the next pc, the branch outcome,
    /// the memory slot and any output.
    fn step(&mut self, pc: usize, ins: &Instruction) -> Result<(usize, Option<bool>, Option<u64>, Option<(u32, Ciphertext)>), Trap> {
        let r = &ins.regs;
        let k = &ins.consts;
        let next = pc + 1;
        let mut taken = None;
        let mut slot = None;
        let mut out = None;
        let mut pc_next = next;
        match ins.op {
            Opcode::Add | Opcode::Sub => {
                let a = self.read(r[1], false)?;
                let b = self.read(r[2], false)?;
                let op = if ins.op == Opcode::Add { CtOp::Add } else { CtOp::Sub };
                let t = self.op(op, &[a, b])?;
                let v = self.add(t, k[0])?;
                self.write(r[0], v);
            }
            Opcode::Addi | Opcode::Addi2 => {
                let a = self.read(r[1], ins.op == Opcode::Addi2)?;
                let v = self.add(a, k[0])?;
                self.write(r[0], v);
            }
            Opcode::Li | Opcode::Li2 => {
                let v = self.op(CtOp::Reseal, &[k[0]])?;
                self.write(r[0], v);
            }
            Opcode::Fused(f) => {
                let w = f.is_wide();
                let a = self.read(r[1], w)?;
                let b = self.read(r[2], w)?;
                let a = self.sub(a, k[0])?;
                let b = self.sub(b, k[1])?;
                let t = self.op(f.ct_op(), &[a, b])?;
                let v = self.add(t, k[2])?;
                self.write(r[0], v);
            }
            Opcode::Cvt(from, to) => {
                let a = self.read(r[1], from.is_wide())?;
                let a = self.sub(a, k[0])?;
                let t = self.op(CtOp::Convert(from, to), &[a])?;
                let v = self.add(t, k[1])?;
                self.write(r[0], v);
            }
            Opcode::Mov => {
                let a = self.read(r[1], false)?;
                self.write(r[0], a);
            }
            Opcode::Branch(rel, flavor) => {
                let w = flavor.is_wide();
                let a = self.read(r[0], w)?;
                let b = self.read(r[1], w)?;
                let (x, y) = if k.len() == 1 {
                    (a, self.add(b, k[0])?)
                } else {
                    (self.sub(a, k[0])?, self.sub(b, k[1])?)
                };
                let t = self.ev.ct_cmp(rel, flavor, &x, &y).map_err(cipher_trap)?;
                taken = Some(t);
                if t {
                    pc_next = (pc as i64 + ins.imm) as usize;
                }
            }
            Opcode::B => pc_next = (pc as i64 + ins.imm) as usize,
            Opcode::J => pc_next = ins.imm as usize,
            Opcode::Jal => {
                self.st.ra = next;
                pc_next = ins.imm as usize;
            }
            Opcode::Jr => pc_next = self.st.ra,
            Opcode::Sw => {
                let a = self.read(r[0], false)?;
                let v = self.read(r[1], false)?;
                let h = self.addr(self.add(a, k[0])?)?;
                let s = self.st.tlb.translate(h, true)?;
                let CtValue::Word(w) = v else { unreachable!() };
                if s as usize == self.st.mem.len() {
                    self.st.mem.push(w);
                } else {
                    self.st.mem[s as usize] = w;
                }
                slot = Some(s);
            }
            Opcode::Lw => {
                let a = self.read(r[1], false)?;
                let h = self.addr(self.add(a, k[0])?)?;
                let s = self.st.tlb.translate(h, false)?;
                self.write(r[0], CtValue::Word(self.st.mem[s as usize]));
                slot = Some(s);
            }
            Opcode::Nop => {}
            Opcode::Out => {
                let CtValue::Word(w) = self.read(r[0], false)? else { unreachable!() };
                out = Some((ins.imm as u32, w));
            }
        }
        Ok((pc_next, taken, slot, out))
    }
}

/// Runs `o` with input ciphertexts placed per its schedule, in order.
pub fn run(o: &ObjectCode, ev: &dyn Evaluator, inputs: &[CtValue], cfg: RunConfig) -> VmRun {
    let mut m = Machine {
        ev,
        st: MachineState {
            regs: HashMap::new(),
            mem: Vec::new(),
            pc: o.entry as usize,
            ra: 0,
            tlb: Tlb::default(),
        },
        reads: Vec::new(),
        writes: Vec::new(),
    };
    let mut res = VmRun {
        trace: Vec::new(),
        outputs: Vec::new(),
        state: m.st.clone(),
        steps: 0,
        status: Ok(()),
    };
    if inputs.len() != o.schedule.inputs.len() {
        res.status = Err(Trap::Fault(format!(
            "expected {} inputs, got {}",
            o.schedule.inputs.len(),
            inputs.len()
        )));
        return res;
    }
    for (e, v) in o.schedule.inputs.iter().zip(inputs) {
        match e.loc {
            IoLoc::Reg(r) => m.write(r, *v),
            IoLoc::Port(_) => {
                res.status = Err(Trap::Fault(format!("input {} is not in a register", e.name)));
                return res;
            }
        }
    }
    m.writes.clear();
    let len = o.instructions.len();
    while m.st.pc < len {
        if res.steps >= cfg.budget {
            res.status = Err(Trap::Budget(cfg.budget));
            break;
        }
        let pc = m.st.pc;
        let ins = &o.instructions[pc];
        let step = m.step(pc, ins);
        let reads = std::mem::take(&mut m.reads);
        let writes = std::mem::take(&mut m.writes);
        let (next, taken, slot, out) = match step {
            Ok(x) => x,
            Err(t) => {
                res.status = Err(t);
                break;
            }
        };
        if cfg.trace {
            res.trace.push(TraceEntry {
                step: res.steps,
                pc,
                op: ins.op,
                regs: ins.regs.clone(),
                consts: ins.consts.clone(),
                imm: if ins.op.signature().imm == ImmKind::None { 0 } else { ins.imm },
                taken,
                slot,
                reads,
                writes,
            });
        }
        res.outputs.extend(out);
        res.steps += 1;
        if next > len {
            res.status = Err(Trap::Fault(format!("jump to {next} outside program")));
            break;
        }
        m.st.pc = next;
    }
    res.state = m.st;
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{Flavor, KeyContext, NumKind, Origin, Rel};
    use crate::isa::FusedOp;
    use crate::obfuscation::{IoEntry, IoSchedule, Offset};

    const A: Reg = Reg(10);
    const B: Reg = Reg(11);
    const C: Reg = Reg(12);

    fn key() -> KeyContext {
        KeyContext::new(7)
    }

    fn word(k: &KeyContext, x: u32) -> CtValue {
        CtValue::Word(k.encrypt(x, Origin::Constant))
    }

    fn input(k: &KeyContext, x: u32) -> CtValue {
        CtValue::Word(k.encrypt(x, Origin::Runtime))
    }

    fn object(code: Vec<Instruction>, inputs: &[Reg]) -> ObjectCode {
        let inputs = inputs
            .iter()
            .enumerate()
            .map(|(i, r)| IoEntry {
                name: format!("x{i}"),
                loc: IoLoc::Reg(*r),
                delta: Offset::zero(false),
                kind: NumKind::I32,
            })
            .collect();
        ObjectCode {
            instructions: code,
            entry: 0,
            schedule: IoSchedule {
                seed: 0,
                inputs,
                outputs: Vec::new(),
            },
        }
    }

    fn plain(k: &KeyContext, run: &VmRun, r: Reg) -> u32 {
        k.decrypt(&run.state.regs[&r]).unwrap()
    }

    #[test]
    fn nop_only() {
        let k = key();
        let run = run(&object(vec![Instruction::nop()], &[]), &k, &[], RunConfig::default());
        assert_eq!(run.status, Ok(()));
        assert!(run.outputs.is_empty());
        assert_eq!(run.trace.len(), 1);
    }

    #[test]
    fn add_with_zero_offsets() {
        let k = key();
        let code = vec![Instruction::new(Opcode::Add, vec![C, A, B], vec![word(&k, 0)], 0)];
        let r = run(&object(code, &[A, B]), &k, &[input(&k, 3), input(&k, 4)], RunConfig::default());
        assert_eq!(plain(&k, &r, C), 7);
    }

    #[test]
    fn mov_copies_bits() {
        let k = key();
        let code = vec![Instruction::new(Opcode::Mov, vec![B, A], vec![], 0)];
        let r = run(&object(code, &[A]), &k, &[input(&k, 99)], RunConfig::default());
        assert_eq!(r.state.regs[&A], r.state.regs[&B]);
        assert_eq!(r.trace[0].reads, r.trace[0].writes);
    }

    #[test]
    fn beq_taken_on_equal() {
        let k = key();
        let code = vec![
            Instruction::new(Opcode::Branch(Rel::Eq, Flavor::Signed), vec![A, B], vec![word(&k, 0)], 2),
            Instruction::new(Opcode::Li, vec![C], vec![word(&k, 1)], 0),
            Instruction::nop(),
        ];
        let o = object(code, &[A, B]);
        let r = run(&o, &k, &[input(&k, 5), input(&k, 5)], RunConfig::default());
        assert_eq!(r.trace[0].taken, Some(true));
        assert_eq!(r.trace.len(), 2);
        assert!(!r.state.regs.contains_key(&C));
        let r = run(&o, &k, &[input(&k, 5), input(&k, 6)], RunConfig::default());
        assert_eq!(r.trace[0].taken, Some(false));
        assert_eq!(r.trace.len(), 3);
    }

    #[test]
    fn divide_by_zero_traps() {
        let k = key();
        let z = word(&k, 0);
        let code = vec![
            Instruction::new(Opcode::Fused(FusedOp::Div), vec![C, A, B], vec![z, z, z], 0),
            Instruction::nop(),
        ];
        let r = run(&object(code, &[A, B]), &k, &[input(&k, 8), input(&k, 0)], RunConfig::default());
        assert_eq!(r.status, Err(Trap::Divide));
        assert_eq!(r.trace.len(), 0);
    }

    #[test]
    fn store_then_load() {
        let k = key();
        let z = word(&k, 0);
        let code = vec![
            Instruction::new(Opcode::Sw, vec![A, B], vec![z], 0),
            Instruction::new(Opcode::Sw, vec![A, B], vec![z], 0),
            Instruction::new(Opcode::Lw, vec![C, A], vec![z], 0),
        ];
        let r = run(&object(code, &[A, B]), &k, &[input(&k, 0x40), input(&k, 17)], RunConfig::default());
        let slots: Vec<_> = r.trace.iter().map(|e| e.slot).collect();
        assert_eq!(slots, [Some(0), Some(1), Some(1)]);
        assert_eq!(plain(&k, &r, C), 17);
        let code = vec![Instruction::new(Opcode::Lw, vec![C, A], vec![z], 0)];
        let r = run(&object(code, &[A]), &k, &[input(&k, 0x40)], RunConfig::default());
        assert!(matches!(r.status, Err(Trap::Fault(_))));
    }

    #[test]
    fn tlb_first_touch_order() {
        let k = key();
        let h = |x| k.addr_handle(&k.encrypt(x, Origin::Runtime)).unwrap();
        let mut t = Tlb::default();
        assert_eq!(t.translate(h(9), true), Ok(0));
        assert_eq!(t.translate(h(3), true), Ok(1));
        assert_eq!(t.translate(h(5), true), Ok(2));
        assert_eq!(t.translate(h(9), false), Ok(0));
        assert_eq!(t.translate(h(9), true), Ok(3));
        assert_eq!(t.translate(h(9), false), Ok(3));
        assert_eq!((t.next_free(), t.mapped()), (4, 3));
    }

    #[test]
    fn budget_stops_a_loop() {
        let k = key();
        let code = vec![Instruction::new(Opcode::B, vec![], vec![], 0)];
        let cfg = RunConfig { budget: 1000, trace: false };
        let r = run(&object(code, &[]), &k, &[], cfg);
        assert_eq!(r.status, Err(Trap::Budget(1000)));
        assert_eq!(r.steps, 1000);
    }

    #[test]
    fn no_decrypt_in_source() {
        let src = include_str!("vm.rs");
        let body = &src[..src.find("#[cfg(test)]").unwrap()];
        assert!(!body.contains("decrypt("));
        assert!(!body.contains("KeyContext"));
    }
}
