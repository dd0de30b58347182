//! Plaintext reference interpreter over the typed program.
//!
//! Arithmetic wraps, division truncates toward zero and traps on a zero
//! divisor, shift counts are taken modulo the operand width. Every
//! activation gets its own copy of its local variables, aggregates included.

use std::collections::HashMap;

use crate::cipher::{Flavor, NumKind, Rel};
use crate::frontend::typed::*;
use crate::frontend::types::size_words;
use crate::obfuscation::VarId;
use crate::value::{Outputs, RunOutcome, Trap, Value};

pub const DEFAULT_BUDGET: u64 = 10_000_000;
const MAX_DEPTH: usize = 4000;

/// Converts canonical bits of `from` into canonical bits of `to`.
pub fn cast(from: Basic, to: Basic, bits: u64) -> u64 {
    if to == Basic::Bool {
        return u64::from(truthy(from, bits));
    }
    enum N {
        I(i128),
        F(f64),
    }
    let n = match from {
        Basic::Float => N::F(f64::from(f32::from_bits(bits as u32))),
        Basic::Double => N::F(f64::from_bits(bits)),
        Basic::LLong => N::I(i128::from(bits as i64)),
        Basic::ULLong => N::I(i128::from(bits)),
        b if b.is_signed() => N::I(i128::from(bits as u32 as i32)),
        _ => N::I(i128::from(bits as u32)),
    };
    match (to, n) {
        (Basic::Float, N::I(i)) => u64::from((i as f32).to_bits()),
        (Basic::Float, N::F(x)) => u64::from((x as f32).to_bits()),
        (Basic::Double, N::I(i)) => (i as f64).to_bits(),
        (Basic::Double, N::F(x)) => x.to_bits(),
        (_, N::I(i)) => to.canonical(i as u64),
        (Basic::UInt | Basic::ULong, N::F(x)) => u64::from(x as u32),
        (Basic::LLong, N::F(x)) => x as i64 as u64,
        (Basic::ULLong, N::F(x)) => x as u64,
        // int, long and the narrow types go through int.
        (_, N::F(x)) => to.canonical(x as i32 as u32 as u64),
    }
}

fn truthy(b: Basic, bits: u64) -> bool {
    match b {
        Basic::Float => f32::from_bits(bits as u32) != 0.0,
        Basic::Double => f64::from_bits(bits) != 0.0,
        _ => bits != 0,
    }
}

fn kind_of(ty: &Ty) -> NumKind {
    ty.kind().unwrap_or(NumKind::I32)
}

fn arith(op: Arith, k: NumKind, a: u64, b: u64) -> Result<u64, Trap> {
    let (x, y) = (a as u32, b as u32);
    let w = |v: u32| Ok(u64::from(v));
    match k {
        NumKind::I32 => {
            let (x, y) = (x as i32, y as i32);
            if matches!(op, Arith::Div | Arith::Rem) && y == 0 {
                return Err(Trap::Divide);
            }
            w(match op {
                Arith::Add => x.wrapping_add(y),
                Arith::Sub => x.wrapping_sub(y),
                Arith::Mul => x.wrapping_mul(y),
                Arith::Div => x.wrapping_div(y),
                Arith::Rem => x.wrapping_rem(y),
                Arith::Shl => x.wrapping_shl(y as u32),
                Arith::Shr => x.wrapping_shr(y as u32),
                Arith::And => x & y,
                Arith::Or => x | y,
                Arith::Xor => x ^ y,
            } as u32)
        }
        NumKind::U32 => {
            if matches!(op, Arith::Div | Arith::Rem) && y == 0 {
                return Err(Trap::Divide);
            }
            w(match op {
                Arith::Add => x.wrapping_add(y),
                Arith::Sub => x.wrapping_sub(y),
                Arith::Mul => x.wrapping_mul(y),
                Arith::Div => x / y,
                Arith::Rem => x % y,
                Arith::Shl => x.wrapping_shl(y),
                Arith::Shr => x.wrapping_shr(y),
                Arith::And => x & y,
                Arith::Or => x | y,
                Arith::Xor => x ^ y,
            })
        }
        NumKind::I64 => {
            let (x, y) = (a as i64, b as i64);
            if matches!(op, Arith::Div | Arith::Rem) && y == 0 {
                return Err(Trap::Divide);
            }
            Ok(match op {
                Arith::Add => x.wrapping_add(y),
                Arith::Sub => x.wrapping_sub(y),
                Arith::Mul => x.wrapping_mul(y),
                Arith::Div => x.wrapping_div(y),
                Arith::Rem => x.wrapping_rem(y),
                Arith::Shl => x.wrapping_shl(y as u32),
                Arith::Shr => x.wrapping_shr(y as u32),
                Arith::And => x & y,
                Arith::Or => x | y,
                Arith::Xor => x ^ y,
            } as u64)
        }
        NumKind::U64 => {
            if matches!(op, Arith::Div | Arith::Rem) && b == 0 {
                return Err(Trap::Divide);
            }
            Ok(match op {
                Arith::Add => a.wrapping_add(b),
                Arith::Sub => a.wrapping_sub(b),
                Arith::Mul => a.wrapping_mul(b),
                Arith::Div => a / b,
                Arith::Rem => a % b,
                Arith::Shl => a.wrapping_shl(b as u32),
                Arith::Shr => a.wrapping_shr(b as u32),
                Arith::And => a & b,
                Arith::Or => a | b,
                Arith::Xor => a ^ b,
            })
        }
        NumKind::F32 => {
            let (x, y) = (f32::from_bits(x), f32::from_bits(y));
            w(match op {
                Arith::Add => x + y,
                Arith::Sub => x - y,
                Arith::Mul => x * y,
                Arith::Div => x / y,
                _ => unreachable!("integer operator on float"),
            }
            .to_bits())
        }
        NumKind::F64 => {
            let (x, y) = (f64::from_bits(a), f64::from_bits(b));
            Ok(match op {
                Arith::Add => x + y,
                Arith::Sub => x - y,
                Arith::Mul => x * y,
                Arith::Div => x / y,
                _ => unreachable!("integer operator on double"),
            }
            .to_bits())
        }
    }
}

fn compare(rel: Rel, flavor: Flavor, a: u64, b: u64) -> bool {
    use std::cmp::Ordering::*;
    let ord = match flavor {
        Flavor::Signed => Some((a as i32).cmp(&(b as i32))),
        Flavor::Unsigned => Some((a as u32).cmp(&(b as u32))),
        Flavor::Signed64 => Some((a as i64).cmp(&(b as i64))),
        Flavor::Unsigned64 => Some(a.cmp(&b)),
        Flavor::Float => f32::from_bits(a as u32).partial_cmp(&f32::from_bits(b as u32)),
        Flavor::Double => f64::from_bits(a).partial_cmp(&f64::from_bits(b)),
    };
    match (rel, ord) {
        (Rel::Ne, None) => true,
        (_, None) => false,
        (Rel::Eq, Some(o)) => o == Equal,
        (Rel::Ne, Some(o)) => o != Equal,
        (Rel::Lt, Some(o)) => o == Less,
        (Rel::Le, Some(o)) => o != Greater,
        (Rel::Gt, Some(o)) => o == Greater,
        (Rel::Ge, Some(o)) => o != Less,
        (r, _) => unreachable!("{r:?} never appears in source comparisons"),
    }
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return(u64),
    Goto(LabelId),
}

struct Frame {
    func: FuncId,
    vars: HashMap<VarId, u64>,
    /// Base addresses of aggregates declared in this activation.
    objs: HashMap<VarId, u32>,
    link: Option<usize>,
    top: u32,
    live: usize,
}

struct Machine<'p> {
    prog: &'p Program,
    globals: HashMap<VarId, u64>,
    global_objs: HashMap<VarId, u32>,
    mem: HashMap<u32, u32>,
    /// Live objects as `(base, words)`.
    live: Vec<(u32, u32)>,
    top: u32,
    frames: Vec<Frame>,
    out: Outputs,
    steps: u64,
    budget: u64,
}

/// Runs `main` on plain inputs (canonical bits of each parameter type).
pub fn interpret(prog: &Program, inputs: &[u64]) -> RunOutcome {
    interpret_with_budget(prog, inputs, DEFAULT_BUDGET)
}

pub fn interpret_with_budget(prog: &Program, inputs: &[u64], budget: u64) -> RunOutcome {
    let mut m = Machine {
        prog,
        globals: HashMap::new(),
        global_objs: HashMap::new(),
        mem: HashMap::new(),
        live: Vec::new(),
        top: 0x100,
        frames: Vec::new(),
        out: Outputs::default(),
        steps: 0,
        budget,
    };
    let status = m.run_main(inputs);
    RunOutcome {
        outputs: m.out,
        status,
    }
}

impl<'p> Machine<'p> {
    fn run_main(&mut self, inputs: &[u64]) -> Result<(), Trap> {
        let init = &self.prog.init;
        match self.block(init)? {
            Flow::Normal => {}
            _ => return Err(Trap::Fault("control flow escaped a global initialiser".into())),
        }
        let main = self.prog.main;
        let types = self.prog.input_types();
        if inputs.len() != types.len() {
            return Err(Trap::Fault(format!(
                "main takes {} inputs, {} given",
                types.len(),
                inputs.len()
            )));
        }
        let args = inputs
            .iter()
            .zip(&types)
            .map(|(v, t)| if t.is_float() { *v } else { t.canonical(*v) })
            .collect();
        let r = self.call(main, args)?;
        if let Some(b) = self.prog.return_type() {
            self.out.ret = Some(Value::new(b.kind(), r));
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<(), Trap> {
        self.steps += 1;
        if self.steps > self.budget {
            return Err(Trap::Budget(self.budget));
        }
        Ok(())
    }

    fn call(&mut self, f: FuncId, args: Vec<u64>) -> Result<u64, Trap> {
        if self.frames.len() >= MAX_DEPTH {
            return Err(Trap::Fault("call depth limit".into()));
        }
        let func = self.prog.func(f);
        let link = func.parent.map(|p| self.frame_of(p));
        let vars = func.params.iter().copied().zip(args).collect();
        self.frames.push(Frame {
            func: f,
            vars,
            objs: HashMap::new(),
            link,
            top: self.top,
            live: self.live.len(),
        });
        let flow = self.block(&func.body);
        let fr = self.frames.pop().unwrap();
        self.top = fr.top;
        self.live.truncate(fr.live);
        match flow? {
            Flow::Return(v) => Ok(v),
            Flow::Normal => Ok(0),
            _ => Err(Trap::Fault("stray control transfer".into())),
        }
    }

    /// Index of the innermost visible activation of `f`.
    fn frame_of(&self, f: FuncId) -> usize {
        let mut i = self.frames.len() - 1;
        loop {
            if self.frames[i].func == f {
                return i;
            }
            i = self.frames[i].link.expect("static chain reaches the declaring function");
        }
    }

    fn slot(&mut self, v: VarId) -> &mut u64 {
        match self.prog.var(v).func {
            None => self.globals.entry(v).or_insert(0),
            Some(f) => {
                let i = self.frame_of(f);
                self.frames[i].vars.entry(v).or_insert(0)
            }
        }
    }

    fn base_of(&self, v: VarId) -> u32 {
        match self.prog.var(v).func {
            None => self.global_objs[&v],
            Some(f) => self.frames[self.frame_of(f)].objs[&v],
        }
    }

    /// Allocates (or reuses, when a declaration runs again) the storage of
    /// an aggregate and zero-fills it.
    fn declare_object(&mut self, v: VarId) {
        let n = size_words(&self.prog.var(v).ty, &self.prog.aggs);
        let existing = match self.prog.var(v).func {
            None => self.global_objs.get(&v).copied(),
            Some(f) => {
                let i = self.frame_of(f);
                self.frames[i].objs.get(&v).copied()
            }
        };
        let base = existing.unwrap_or_else(|| {
            let b = self.top;
            self.top += n + 16;
            self.live.push((b, n));
            match self.prog.var(v).func {
                None => {
                    self.global_objs.insert(v, b);
                }
                Some(f) => {
                    let i = self.frame_of(f);
                    self.frames[i].objs.insert(v, b);
                }
            }
            b
        });
        for a in base..base + n {
            self.mem.insert(a, 0);
        }
    }

    fn address(&mut self, m: &MemPlace) -> Result<u32, Trap> {
        let base = match &m.addr {
            Some(a) => self.eval(a)? as u32,
            None => self.base_of(m.root),
        };
        let a = base.wrapping_add(m.disp);
        let words = m.ty.basic().map_or(1, |b| b.words());
        if self
            .live
            .iter()
            .any(|&(b, n)| a >= b && a.wrapping_add(words) <= b + n)
        {
            Ok(a)
        } else {
            Err(Trap::Fault(format!("address {a:#x} is outside every object")))
        }
    }

    fn load(&mut self, m: &MemPlace) -> Result<u64, Trap> {
        let a = self.address(m)?;
        let b = m.ty.basic().expect("scalar place");
        let bits = if b.is_wide() {
            (u64::from(self.mem[&a]) << 32) | u64::from(self.mem[&(a + 1)])
        } else {
            u64::from(self.mem[&a])
        };
        Ok(if m.canon { b.canonical(bits) } else { bits })
    }

    fn store(&mut self, m: &MemPlace, bits: u64) -> Result<(), Trap> {
        let a = self.address(m)?;
        if m.ty.is_wide() {
            self.mem.insert(a, (bits >> 32) as u32);
            self.mem.insert(a + 1, bits as u32);
        } else {
            self.mem.insert(a, bits as u32);
        }
        Ok(())
    }

    fn eval(&mut self, e: &Expr) -> Result<u64, Trap> {
        Ok(match &e.kind {
            ExprKind::Const(c) => *c,
            ExprKind::Var(v) => *self.slot(*v),
            ExprKind::Load(m) => self.load(m)?,
            ExprKind::Base(v) => u64::from(self.base_of(*v)),
            ExprKind::Neg(a) => {
                let x = self.eval(a)?;
                match kind_of(&e.ty) {
                    NumKind::F32 => u64::from((-f32::from_bits(x as u32)).to_bits()),
                    NumKind::F64 => (-f64::from_bits(x)).to_bits(),
                    k if k.is_wide() => x.wrapping_neg(),
                    _ => u64::from((x as u32).wrapping_neg()),
                }
            }
            ExprKind::BitNot(a) => {
                let x = self.eval(a)?;
                if e.ty.is_wide() {
                    !x
                } else {
                    u64::from(!(x as u32))
                }
            }
            ExprKind::Arith(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                arith(*op, kind_of(&e.ty), x, y)?
            }
            ExprKind::Cmp(rel, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                u64::from(compare(*rel, a.flavor(), x, y))
            }
            ExprKind::Not(a) => u64::from(!self.truth(a)?),
            ExprKind::LogAnd(a, b) => u64::from(self.truth(a)? && self.truth(b)?),
            ExprKind::LogOr(a, b) => u64::from(self.truth(a)? || self.truth(b)?),
            ExprKind::Cond(c, a, b) => {
                if self.truth(c)? {
                    self.eval(a)?
                } else {
                    self.eval(b)?
                }
            }
            ExprKind::Cast(a) => {
                let x = self.eval(a)?;
                match (a.basic(), e.basic()) {
                    (Some(f), Some(t)) => cast(f, t, x),
                    _ => x,
                }
            }
        })
    }

    fn truth(&mut self, e: &Expr) -> Result<bool, Trap> {
        let x = self.eval(e)?;
        Ok(truthy(e.basic().unwrap_or(Basic::Int), x))
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<Flow, Trap> {
        let mut i = 0;
        while i < stmts.len() {
            match self.stmt(&stmts[i])? {
                Flow::Normal => i += 1,
                Flow::Goto(l) => match stmts.iter().position(|s| *s == Stmt::Label(l)) {
                    Some(j) => i = j + 1,
                    None => return Ok(Flow::Goto(l)),
                },
                f => return Ok(f),
            }
        }
        Ok(Flow::Normal)
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Flow, Trap> {
        self.tick()?;
        match s {
            Stmt::Decl(v, init) => {
                let ty = &self.prog.var(*v).ty;
                if ty.is_scalar() {
                    let x = match init {
                        Some(e) => self.eval(e)?,
                        None => 0,
                    };
                    *self.slot(*v) = x;
                } else {
                    self.declare_object(*v);
                }
            }
            Stmt::Assign(lv, e) => {
                let x = self.eval(e)?;
                match lv {
                    LValue::Var(v) => *self.slot(*v) = x,
                    LValue::Mem(m) => self.store(m, x)?,
                }
            }
            Stmt::Call { dest, func, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let r = self.call(*func, vals)?;
                if let Some(d) = dest {
                    *self.slot(*d) = r;
                }
            }
            Stmt::Emit(e) => {
                let x = self.eval(e)?;
                self.out.emits.push(Value::new(kind_of(&e.ty), x));
            }
            Stmt::If(c, t, f) => {
                let branch = if self.truth(c)? { t } else { f };
                return self.block(branch);
            }
            Stmt::Loop(l) => return self.run_loop(l),
            Stmt::Break => return Ok(Flow::Break),
            Stmt::Continue => return Ok(Flow::Continue),
            Stmt::Return(e) => {
                let x = match e {
                    Some(e) => self.eval(e)?,
                    None => 0,
                };
                return Ok(Flow::Return(x));
            }
            Stmt::Block(b) => return self.block(b),
            Stmt::Goto(l) => return Ok(Flow::Goto(*l)),
            Stmt::LabelDecl(_) | Stmt::Label(_) | Stmt::FuncDecl(_) => {}
        }
        Ok(Flow::Normal)
    }

    fn run_loop(&mut self, l: &Loop) -> Result<Flow, Trap> {
        let mut first = true;
        loop {
            if l.test_first || !first {
                match self.block(&l.pre)? {
                    Flow::Normal => {}
                    f => return Ok(f),
                }
                if !self.truth(&l.cond)? {
                    return Ok(Flow::Normal);
                }
            }
            first = false;
            self.tick()?;
            match self.block(&l.body)? {
                Flow::Normal | Flow::Continue => {}
                Flow::Break => return Ok(Flow::Normal),
                f => return Ok(f),
            }
            match self.block(&l.step)? {
                Flow::Normal => {}
                f => return Ok(f),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_source;

    fn run(src: &str, inputs: &[u64]) -> RunOutcome {
        interpret(&compile_source(src).unwrap(), inputs)
    }

    fn ret(src: &str, inputs: &[u64]) -> u64 {
        run(src, inputs).outputs.ret.unwrap().bits
    }

    #[test]
    fn basics() {
        assert_eq!(ret("int main(int x) { return x + 1; }", &[41]), 42);
        assert_eq!(ret("int main() { return (short)70000; }", &[]), 4464);
        assert_eq!(ret("int main() { return -7 / 2; }", &[]) as u32 as i32, -3);
        assert_eq!(
            run("int main(int x) { return 1 / x; }", &[0]).status,
            Err(Trap::Divide)
        );
    }

    #[test]
    fn control_and_memory() {
        let src = "int fib(int n) { if (n < 2) return n; return fib(n - 1) + fib(n - 2); }
                   int main(int n) { int a[5]; int i; for (i = 0; i < 5; i++) a[i] = fib(n + i);
                   emit(a[4]); return a[0] + a[1]; }";
        let o = run(src, &[3]);
        assert_eq!(o.outputs.emits[0].bits, 13);
        assert_eq!(o.outputs.ret.unwrap().bits, 5);
    }

    #[test]
    fn goto_and_interior() {
        let src = "int main(int n) { int s = 0; __label__ L;
                   int add(int k) { s = s + k; return s; }
                   add(n); if (s < 10) goto L; add(100); L: return s; }";
        assert_eq!(ret(src, &[3]), 3);
        assert_eq!(ret(src, &[30]), 130);
        let back = "int main(int n) { int i = 0; __label__ top; top: i++; if (i < n) goto top; return i; }";
        assert_eq!(ret(back, &[7]), 7);
    }

    #[test]
    fn casts() {
        assert_eq!(cast(Basic::Double, Basic::Int, (-2.75f64).to_bits()) as u32 as i32, -2);
        assert_eq!(cast(Basic::Int, Basic::UChar, 0x1ff), 0xff);
        assert_eq!(cast(Basic::SChar, Basic::ULLong, 0xffff_ffff), u64::MAX);
        assert_eq!(cast(Basic::Float, Basic::Bool, u64::from((-0.0f32).to_bits())), 0);
        assert_eq!(cast(Basic::ULLong, Basic::Double, u64::MAX), 18446744073709551616f64.to_bits());
    }

    #[test]
    fn budget() {
        let o = interpret_with_budget(
            &compile_source("int main() { while (1) ; return 0; }").unwrap(),
            &[],
            1000,
        );
        assert_eq!(o.status, Err(Trap::Budget(1000)));
    }
}
