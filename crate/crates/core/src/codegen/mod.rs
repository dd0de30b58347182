//! The obfuscating code generator.
//!
//! Every location carries an offset from its nominal value. The scheme is
//! threaded through statements, and each arithmetic instruction folds the
//! offsets of its inputs and of its output into its encrypted constants.
//! Functions are compiled once per call point; a recursive call reuses the
//! active instance and the instance's epilogue dispatches on a link code.

mod expr;
mod memory;

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use thiserror::Error;

use crate::cipher::{CtValue, Flavor, KeyContext, Rel};
use crate::frontend::typed::*;
use crate::frontend::types::{size_words, word_classes};
use crate::frontend::Diagnostic;
use crate::isa::{ImmKind, Instruction, ObjectCode, Opcode, Reg};
use crate::obfuscation::{
    restore_code, snapshot, ConstSealer, IoEntry, IoLoc, IoSchedule, Loc, ObfError, Offset,
    OffsetDb, OffsetSource, SchemeRng, SchemeSnapshot, VarBinding, VarId,
};

pub use memory::{StormInfo, StormKind};

/// First scratch register; expression temporaries grow upward from here.
pub const SCRATCH: Reg = Reg(8);
/// First register handed to variables.
pub const VAR_REGS: u32 = 40_000;
pub const GLOBAL_BASE: u32 = 0x1000;
pub const STACK_BASE: u32 = 0x0100_0000;
/// Storms over more words than this are emitted as loops.
pub const UNROLL_LIMIT: usize = 64;
pub const DEFAULT_KEY: u64 = 0x00C0_FFEE_F00D;
const MAX_INSTANCES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub seed: u64,
    pub offset_source: OffsetSource,
    pub polarity: Polarity,
}

/// How source conditions choose their branch polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Truthteller or liar, one seeded coin per condition.
    #[default]
    Coin,
    /// Always the direct branch. Traces then depend on the seed only
    /// through constants.
    Truthteller,
    Liar,
}

impl CompileOptions {
    pub fn seed(seed: u64) -> Self {
        CompileOptions {
            seed,
            offset_source: OffsetSource::Uniform,
            polarity: Polarity::Coin,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompileStats {
    /// Control joins reconciled by come-to code.
    pub join_checks: u64,
    /// Joins whose scheme still differed after reconciliation.
    pub join_failures: u64,
    /// Compiled instances per function name.
    pub instances: BTreeMap<String, usize>,
    pub storms: Vec<StormInfo>,
    /// Program counts of branches compiled from source conditions.
    pub source_branch_pcs: Vec<usize>,
    pub offsets_drawn: u64,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub object: ObjectCode,
    pub stats: CompileStats,
    /// Word address of each global aggregate.
    pub layout: BTreeMap<String, u32>,
}

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("internal compiler error: {0}")]
    Internal(String),
    #[error("program needs more than {0} function instances")]
    TooManyInstances(usize),
    #[error(transparent)]
    Scheme(#[from] ObfError),
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{0}")]
    Frontend(#[from] Diagnostic),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

type R<T> = Result<T, CodegenError>;

fn internal<T>(m: impl Into<String>) -> R<T> {
    Err(CodegenError::Internal(m.into()))
}

/// Parses, checks and compiles C source.
pub fn compile(src: &str, key: &KeyContext, opts: &CompileOptions) -> Result<Compiled, CompileError> {
    let prog = crate::frontend::compile_source(src)?;
    Ok(compile_program(&prog, key, opts)?)
}

pub fn compile_program(prog: &Program, key: &KeyContext, opts: &CompileOptions) -> R<Compiled> {
    Gen::new(prog, key, opts).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct Label(u32);

enum Item {
    Ins(Instruction),
    /// Control transfer whose immediate is resolved at assembly.
    Fix {
        ins: Instruction,
        target: Label,
        source: bool,
    },
    Mark(Label),
    /// `sp += sign * frame(inst)`, known once the instance is complete.
    Frame { inst: usize, sign: i64 },
    /// Base register of a frame-allocated aggregate.
    FrameBase {
        inst: usize,
        reg: Reg,
        at: u32,
        delta: u32,
    },
}

struct Instance {
    func: FuncId,
    buf: usize,
    entry: Label,
    epilogue: Label,
    link: Reg,
    link_off: u32,
    /// Scheme on the locations shared with callers, at entry and at exit.
    shared: SchemeSnapshot,
    params: Vec<(VarId, Reg, Offset)>,
    ret_off: Option<Offset>,
    frame: u32,
    /// Continuation of each call, indexed by link code.
    sites: Vec<Label>,
    /// Top-level `main` has no caller to hand globals back to, so its exit
    /// scheme is whatever the first return leaves behind.
    lazy_exit: bool,
    exit: Option<SchemeSnapshot>,
}

/// Scheme captured where an interior function is declared.
struct FuncSnap {
    snap: SchemeSnapshot,
    decls: HashMap<FuncId, Rc<FuncSnap>>,
}

struct LoopCtx {
    brk: Label,
    brk_scheme: Option<SchemeSnapshot>,
    cont: Label,
    cont_scheme: Option<SchemeSnapshot>,
    domain: Vec<VarId>,
    exits: bool,
}

pub(crate) struct Ctx {
    buf: usize,
    inst: Option<usize>,
    db: OffsetDb,
    bind: VarBinding,
    reachable: bool,
    scopes: Vec<Vec<VarId>>,
    loops: Vec<LoopCtx>,
    labels: HashMap<LabelId, (Label, SchemeSnapshot)>,
    decls: HashMap<FuncId, Rc<FuncSnap>>,
}

impl Ctx {
    fn new(buf: usize, inst: Option<usize>) -> Self {
        Ctx {
            buf,
            inst,
            db: OffsetDb::new(),
            bind: VarBinding::new(),
            reachable: true,
            scopes: vec![Vec::new()],
            loops: Vec::new(),
            labels: HashMap::new(),
            decls: HashMap::new(),
        }
    }

    fn from_snapshot(buf: usize, inst: usize, snap: &SchemeSnapshot) -> Self {
        let mut c = Ctx::new(buf, Some(inst));
        let mut locs: BTreeMap<VarId, Vec<Loc>> = BTreeMap::new();
        for (v, l, o) in &snap.entries {
            locs.entry(*v).or_default().push(*l);
            c.db.set(*l, *o);
        }
        for (v, ls) in locs {
            c.bind.bind(v, ls);
        }
        c
    }

    /// The scheme restricted to `vars`.
    fn snap_on(&self, label: &str, vars: &[VarId]) -> SchemeSnapshot {
        let mut b = VarBinding::new();
        for v in vars {
            if let Some(l) = self.bind.get(*v) {
                b.bind(*v, l.to_vec());
            }
        }
        snapshot(label, &self.db, &b)
    }

    fn snap(&self, label: &str) -> SchemeSnapshot {
        snapshot(label, &self.db, &self.bind)
    }

    fn set_scheme(&mut self, s: &SchemeSnapshot) {
        for (_, l, o) in &s.entries {
            self.db.set(*l, *o);
        }
    }
}

struct Active {
    inst: usize,
    /// Registers private to the instance that were live when it called down.
    regs: Vec<Reg>,
}

pub(crate) struct Gen<'a> {
    prog: &'a Program,
    rng: SchemeRng,
    sealer: ConstSealer<'a>,
    seed: u64,
    polarity: Polarity,
    bufs: Vec<Vec<Item>>,
    insts: Vec<Instance>,
    active: Vec<Active>,
    next_label: u32,
    next_reg: u32,
    next_port: u32,
    next_global: u32,
    sp_off: u32,
    classes: HashMap<VarId, Rc<Vec<u32>>>,
    stats: CompileStats,
    emits: Vec<IoEntry>,
    layout: BTreeMap<String, u32>,
    end: Label,
}

fn width(ty: &Ty) -> u32 {
    if ty.is_wide() {
        2
    } else {
        1
    }
}

impl<'a> Gen<'a> {
    fn new(prog: &'a Program, key: &'a KeyContext, opts: &CompileOptions) -> Self {
        Gen {
            prog,
            rng: SchemeRng::with_source(opts.seed, opts.offset_source),
            sealer: ConstSealer::new(key, opts.seed),
            seed: opts.seed,
            polarity: opts.polarity,
            bufs: vec![Vec::new()],
            insts: Vec::new(),
            active: Vec::new(),
            next_label: 1,
            next_reg: VAR_REGS,
            next_port: 0,
            next_global: GLOBAL_BASE,
            sp_off: 0,
            classes: HashMap::new(),
            stats: CompileStats::default(),
            emits: Vec::new(),
            layout: BTreeMap::new(),
            end: Label(0),
        }
    }

    // ---- emission helpers ----

    fn label(&mut self) -> Label {
        self.next_label += 1;
        Label(self.next_label)
    }

    fn alloc(&mut self, words: u32) -> Reg {
        let r = Reg(self.next_reg);
        self.next_reg += words;
        r
    }

    fn fresh(&mut self, wide: bool) -> Offset {
        self.rng.fresh(wide)
    }

    fn seal(&mut self, o: Offset) -> CtValue {
        self.sealer.offset(o)
    }

    fn push(&mut self, ctx: &Ctx, item: Item) {
        self.bufs[ctx.buf].push(item);
    }

    fn emit(&mut self, ctx: &Ctx, op: Opcode, regs: Vec<Reg>, consts: Vec<Offset>) {
        let consts = consts.into_iter().map(|o| self.seal(o)).collect();
        self.push(ctx, Item::Ins(Instruction::new(op, regs, consts, 0)));
    }

    fn fix(&mut self, ctx: &Ctx, op: Opcode, regs: Vec<Reg>, consts: Vec<Offset>, target: Label, source: bool) {
        let consts = consts.into_iter().map(|o| self.seal(o)).collect();
        let ins = Instruction::new(op, regs, consts, 0);
        self.push(ctx, Item::Fix { ins, target, source });
    }

    fn mark(&mut self, ctx: &Ctx, l: Label) {
        self.push(ctx, Item::Mark(l));
    }

    fn jump(&mut self, ctx: &Ctx, target: Label) {
        self.fix(ctx, Opcode::B, vec![], vec![], target, false);
    }

    /// `dst <- src + k`, word or pair.
    fn addi(&mut self, ctx: &Ctx, dst: Reg, src: Reg, k: Offset) {
        let op = if k.is_wide() { Opcode::Addi2 } else { Opcode::Addi };
        self.emit(ctx, op, vec![dst, src], vec![k]);
    }

    /// Loads `nominal` under offset `delta`.
    fn li_at(&mut self, ctx: &Ctx, dst: Reg, nominal: u64, delta: Offset) {
        let op = if delta.is_wide() { Opcode::Li2 } else { Opcode::Li };
        let v = Offset::from_bits(delta.is_wide(), nominal).add(delta);
        self.emit(ctx, op, vec![dst], vec![v]);
    }

    fn li(&mut self, ctx: &Ctx, dst: Reg, nominal: u64, wide: bool) -> Offset {
        let d = self.fresh(wide);
        self.li_at(ctx, dst, nominal, d);
        d
    }

    fn mov(&mut self, ctx: &Ctx, dst: Reg, src: Reg, words: u32) {
        for i in 0..words {
            self.emit(ctx, Opcode::Mov, vec![dst.offset(i), src.offset(i)], vec![]);
        }
    }

    /// Conditional branch `a rel b` where the operands carry offsets `da`
    /// and `db`.
    #[allow(clippy::too_many_arguments)]
    fn branch_raw(
        &mut self,
        ctx: &Ctx,
        rel: Rel,
        flavor: Flavor,
        a: Reg,
        b: Reg,
        da: Offset,
        db: Offset,
        target: Label,
        source: bool,
    ) {
        let op = Opcode::Branch(rel, flavor);
        let consts = if op.signature().consts.len() == 1 {
            vec![da.sub(db)]
        } else {
            vec![da, db]
        };
        self.fix(ctx, op, vec![a, b], consts, target, source);
    }

    /// One-constant equality test `a == b + k` (or `!=`).
    fn branch_k(&mut self, ctx: &Ctx, rel: Rel, a: Reg, b: Reg, k: u32, target: Label) {
        self.fix(ctx, Opcode::Branch(rel, Flavor::Signed), vec![a, b], vec![Offset::Word(k)], target, false);
    }

    // ---- variables ----

    fn classes(&mut self, v: VarId) -> Rc<Vec<u32>> {
        let prog = self.prog;
        self.classes
            .entry(v)
            .or_insert_with(|| Rc::new(word_classes(&prog.var(v).ty, &prog.aggs)))
            .clone()
    }

    fn var_reg(&self, ctx: &Ctx, v: VarId) -> R<(Reg, Offset)> {
        match ctx.bind.get(v).and_then(|l| l.first()) {
            Some(Loc::Reg(r)) => match ctx.db.get(Loc::Reg(*r)) {
                Some(o) => Ok((*r, o)),
                None => internal(format!("no offset for {}", self.prog.var(v).name)),
            },
            _ => internal(format!("variable {} is not bound", self.prog.var(v).name)),
        }
    }

    fn declare(&mut self, ctx: &mut Ctx, v: VarId, locs: Vec<Loc>) {
        ctx.bind.bind(v, locs);
        ctx.scopes.last_mut().unwrap().push(v);
    }

    fn open_scope(&mut self, ctx: &mut Ctx) {
        ctx.scopes.push(Vec::new());
    }

    fn close_scope(&mut self, ctx: &mut Ctx) {
        for v in ctx.scopes.pop().unwrap_or_default() {
            if let Some(locs) = ctx.bind.get(v) {
                for l in locs.iter().copied() {
                    ctx.db.remove(l);
                }
            }
            ctx.bind.unbind(v);
        }
    }

    /// Brings the scheme back to `snap` on its domain ("come to").
    fn come_to(&mut self, ctx: &mut Ctx, snap: &SchemeSnapshot, scratch: Reg) -> R<()> {
        let r = restore_code(snap, &ctx.db, &ctx.bind, &mut self.sealer)?;
        for ins in r.code {
            self.push(ctx, Item::Ins(ins));
        }
        ctx.db = r.db;
        for adj in r.stripes {
            let Loc::Stripe { var, class } = adj.loc else {
                unreachable!()
            };
            self.storm(
                ctx,
                var,
                class,
                memory::StormOp::Rebase {
                    old: adj.from,
                    new: adj.to,
                },
                scratch,
            )?;
            ctx.db.set(adj.loc, adj.to);
        }
        self.stats.join_checks += 1;
        if snap.entries.iter().any(|(_, l, o)| ctx.db.get(*l) != Some(*o)) {
            self.stats.join_failures += 1;
        }
        Ok(())
    }

    /// Brings the shared locations to the instance's exit scheme.
    fn exit_join(&mut self, ctx: &mut Ctx, i: usize) -> R<()> {
        let inst = &self.insts[i];
        let target = match (&inst.exit, inst.lazy_exit) {
            (Some(s), _) => s.clone(),
            (None, false) => inst.shared.clone(),
            (None, true) => {
                let entries = inst
                    .shared
                    .entries
                    .iter()
                    .map(|(v, l, o)| (*v, *l, ctx.db.get(*l).unwrap_or(*o)))
                    .collect();
                let snap = SchemeSnapshot {
                    label: inst.shared.label.clone(),
                    entries,
                };
                self.insts[i].exit = Some(snap.clone());
                snap
            }
        };
        self.come_to(ctx, &target, SCRATCH)
    }

    // ---- program ----

    fn run(mut self) -> R<Compiled> {
        let prog = self.prog;
        let mut ctx = Ctx::new(0, None);
        self.end = Label(0);
        self.sp_off = self.rng.fresh_offset();
        self.li_at(&ctx, Reg::SP, u64::from(STACK_BASE), Offset::Word(self.sp_off));
        for s in &prog.init {
            self.stmt(&mut ctx, s)?;
        }
        let main = prog.main;
        let mut inputs = Vec::new();
        let mut params = Vec::new();
        for p in &prog.func(main).params {
            let ty = &prog.var(*p).ty;
            let r = self.alloc(width(ty));
            let d = self.fresh(ty.is_wide());
            params.push((*p, r, d));
            inputs.push(IoEntry {
                name: prog.var(*p).name.clone(),
                loc: IoLoc::Reg(r),
                delta: d,
                kind: ty.kind().expect("scalar input"),
            });
        }
        let shared = ctx.snap("main");
        let idx = self.new_instance(main, shared, params)?;
        let (link, link_off) = (self.insts[idx].link, self.insts[idx].link_off);
        self.li_at(&ctx, link, 0, Offset::Word(link_off));
        self.insts[idx].sites.push(self.end);
        self.insts[idx].lazy_exit = true;
        self.compile_instance(idx, HashMap::new())?;

        let mut outputs = std::mem::take(&mut self.emits);
        if let (Some(b), Some(off)) = (prog.return_type(), self.insts[idx].ret_off) {
            outputs.push(IoEntry {
                name: "return".into(),
                loc: IoLoc::Reg(Reg::RET),
                delta: off,
                kind: b.kind(),
            });
        }
        let schedule = IoSchedule {
            seed: self.seed,
            inputs,
            outputs,
        };
        let instructions = self.assemble()?;
        self.stats.offsets_drawn = self.rng.draws();
        let object = ObjectCode {
            instructions,
            entry: 0,
            schedule,
        };
        if let Err(e) = object.validate() {
            return internal(format!("invalid object: {e}"));
        }
        Ok(Compiled {
            object,
            stats: self.stats,
            layout: self.layout,
        })
    }

    fn new_instance(&mut self, func: FuncId, shared: SchemeSnapshot, params: Vec<(VarId, Reg, Offset)>) -> R<usize> {
        if self.insts.len() >= MAX_INSTANCES {
            return Err(CodegenError::TooManyInstances(MAX_INSTANCES));
        }
        let f = self.prog.func(func);
        *self.stats.instances.entry(f.name.clone()).or_insert(0) += 1;
        let ret_off = f.ret.kind().map(|k| self.fresh(k.is_wide()));
        let link = self.alloc(1);
        let link_off = self.rng.fresh_offset();
        let (entry, epilogue) = (self.label(), self.label());
        self.bufs.push(Vec::new());
        self.insts.push(Instance {
            func,
            buf: self.bufs.len() - 1,
            entry,
            epilogue,
            link,
            link_off,
            shared,
            params,
            ret_off,
            frame: 0,
            sites: Vec::new(),
            lazy_exit: false,
            exit: None,
        });
        Ok(self.insts.len() - 1)
    }

    fn compile_instance(&mut self, idx: usize, mut decls: HashMap<FuncId, Rc<FuncSnap>>) -> R<()> {
        let prog = self.prog;
        let inst = &self.insts[idx];
        let func = prog.func(inst.func);
        let mut ctx = Ctx::from_snapshot(inst.buf, idx, &inst.shared);
        for (v, r, d) in inst.params.clone() {
            ctx.bind.bind(v, vec![Loc::Reg(r)]);
            ctx.db.set(Loc::Reg(r), d);
        }
        if func.parent.is_some() {
            if let Some(me) = decls.get(&inst.func).cloned() {
                decls.extend(me.decls.iter().map(|(k, v)| (*k, v.clone())));
            }
        }
        ctx.decls = decls;
        let (entry, epilogue) = (inst.entry, inst.epilogue);
        self.mark(&ctx, entry);
        self.push(&ctx, Item::Frame { inst: idx, sign: 1 });
        self.active.push(Active {
            inst: idx,
            regs: Vec::new(),
        });
        self.block(&mut ctx, &func.body)?;
        if ctx.reachable {
            if let Some(off) = self.insts[idx].ret_off {
                let zero = Expr::new(ExprKind::Const(0), func.ret.clone());
                let d = self.expr(&mut ctx, &zero, SCRATCH)?;
                self.addi(&ctx, Reg::RET, SCRATCH, off.sub(d));
            }
            self.exit_join(&mut ctx, idx)?;
        }
        self.active.pop();
        self.mark(&ctx, epilogue);
        self.push(&ctx, Item::Frame { inst: idx, sign: -1 });
        let (link, link_off) = (self.insts[idx].link, self.insts[idx].link_off);
        let sites = self.insts[idx].sites.clone();
        for (code, site) in sites.iter().enumerate().take(sites.len().saturating_sub(1)) {
            let dt = self.li(&ctx, SCRATCH, code as u64, false);
            let k = Offset::Word(link_off).sub(dt);
            self.fix(&ctx, Opcode::Branch(Rel::Eq, Flavor::Signed), vec![link, SCRATCH], vec![k], *site, false);
        }
        match sites.last() {
            Some(last) => self.fix(&ctx, Opcode::J, vec![], vec![], *last, false),
            None => return internal("instance without call sites"),
        }
        Ok(())
    }

    /// Registers private to the instance of `ctx` that hold live values.
    fn private_regs(&self, ctx: &Ctx) -> Vec<Reg> {
        let Some(i) = ctx.inst else { return vec![] };
        let f = self.insts[i].func;
        let mut out = vec![self.insts[i].link];
        for v in ctx.bind.vars() {
            if self.prog.var(v).func != Some(f) {
                continue;
            }
            for l in ctx.bind.get(v).unwrap() {
                if let Loc::Reg(r) = l {
                    out.push(*r);
                    if ctx.db.get(*l).is_some_and(Offset::is_wide) {
                        out.push(r.next());
                    }
                }
            }
        }
        out
    }

    fn call(&mut self, ctx: &mut Ctx, dest: Option<VarId>, func: FuncId, args: &[Expr]) -> R<()> {
        let prog = self.prog;
        let f = prog.func(func);
        let mut arg_regs = Vec::new();
        let mut r = SCRATCH;
        for a in args {
            let d = self.expr(ctx, a, r)?;
            arg_regs.push((r, d));
            r = r.offset(width(&a.ty));
        }
        let interior = if f.parent.is_some() {
            match ctx.decls.get(&func) {
                Some(s) => Some(s.clone()),
                None => return internal(format!("interior function {} is not in scope", f.name)),
            }
        } else {
            None
        };
        let active = self.active.iter().position(|a| self.insts[a.inst].func == func);
        let (idx, code) = match active {
            Some(pos) => {
                let t = self.active[pos].inst;
                self.recursive_call(ctx, pos, &arg_regs)?;
                (t, self.insts[t].sites.len())
            }
            None => {
                let shared = match &interior {
                    Some(s) => s.snap.clone(),
                    None => {
                        let globals: Vec<VarId> = ctx
                            .bind
                            .vars()
                            .filter(|v| prog.var(*v).func.is_none())
                            .collect();
                        ctx.snap_on(&f.name, &globals)
                    }
                };
                let mut params = Vec::new();
                for (p, (ar, d)) in f.params.iter().zip(&arg_regs) {
                    let w = width(&prog.var(*p).ty);
                    let pr = self.alloc(w);
                    self.mov(ctx, pr, *ar, w);
                    params.push((*p, pr, *d));
                }
                if let Some(s) = &interior {
                    self.come_to(ctx, &s.snap, SCRATCH)?;
                }
                let idx = self.new_instance(func, shared, params)?;
                (idx, 0)
            }
        };
        let (link, link_off, entry) = (self.insts[idx].link, self.insts[idx].link_off, self.insts[idx].entry);
        self.li_at(ctx, link, code as u64, Offset::Word(link_off));
        self.fix(ctx, Opcode::Jal, vec![], vec![], entry, false);
        let site = self.label();
        self.insts[idx].sites.push(site);
        if active.is_none() {
            self.active.last_mut().unwrap().regs = self.private_regs(ctx);
            let mut decls = ctx.decls.clone();
            if let Some(s) = interior {
                decls.insert(func, s);
            }
            self.compile_instance(idx, decls)?;
        }
        self.mark(ctx, site);
        if let Some(pos) = active {
            self.recursive_return(ctx, pos)?;
        }
        let shared = self.insts[idx].shared.clone();
        ctx.set_scheme(&shared);
        if let (Some(d), Some(off)) = (dest, self.insts[idx].ret_off) {
            let w = width(&prog.var(d).ty);
            let reg = match ctx.bind.get(d) {
                Some(_) => self.var_reg(ctx, d)?.0,
                None => {
                    let r = self.alloc(w);
                    self.declare(ctx, d, vec![Loc::Reg(r)]);
                    r
                }
            };
            self.mov(ctx, reg, Reg::RET, w);
            ctx.db.set(Loc::Reg(reg), off);
        }
        Ok(())
    }

    fn spill_set(&self, ctx: &Ctx, pos: usize) -> Vec<Reg> {
        let mut regs = Vec::new();
        for a in &self.active[pos..self.active.len() - 1] {
            regs.extend(a.regs.iter().copied());
        }
        regs.extend(self.private_regs(ctx));
        let mut seen = std::collections::HashSet::new();
        regs.retain(|r| seen.insert(*r));
        regs
    }

    /// Saves every register the new activation may clobber and sets up
    /// the parameters and shared scheme of the active instance.
    fn recursive_call(&mut self, ctx: &mut Ctx, pos: usize, args: &[(Reg, Offset)]) -> R<()> {
        let t = self.active[pos].inst;
        let regs = self.spill_set(ctx, pos);
        let n = regs.len() as u32;
        for (j, r) in regs.iter().enumerate() {
            let k = (j as u32).wrapping_sub(self.sp_off);
            self.emit(ctx, Opcode::Sw, vec![Reg::SP, *r], vec![Offset::Word(k)]);
        }
        self.addi(ctx, Reg::SP, Reg::SP, Offset::Word(n));
        for ((_, pr, pd), (ar, ad)) in self.insts[t].params.clone().iter().zip(args) {
            self.addi(ctx, *pr, *ar, pd.sub(*ad));
        }
        let shared = self.insts[t].shared.clone();
        self.come_to(ctx, &shared, SCRATCH)?;
        Ok(())
    }

    fn recursive_return(&mut self, ctx: &mut Ctx, pos: usize) -> R<()> {
        let regs = self.spill_set(ctx, pos);
        let n = regs.len() as u32;
        self.addi(ctx, Reg::SP, Reg::SP, Offset::Word(n.wrapping_neg()));
        for (j, r) in regs.iter().enumerate() {
            let k = (j as u32).wrapping_sub(self.sp_off);
            self.emit(ctx, Opcode::Lw, vec![*r, Reg::SP], vec![Offset::Word(k)]);
        }
        Ok(())
    }

    // ---- statements ----

    fn block(&mut self, ctx: &mut Ctx, stmts: &[Stmt]) -> R<()> {
        self.open_scope(ctx);
        for s in stmts {
            self.stmt(ctx, s)?;
        }
        self.close_scope(ctx);
        Ok(())
    }

    fn stmt(&mut self, ctx: &mut Ctx, s: &Stmt) -> R<()> {
        let prog = self.prog;
        match s {
            Stmt::Decl(v, init) => {
                let ty = &prog.var(*v).ty;
                if ty.is_scalar() {
                    let w = width(ty);
                    let d = match init {
                        Some(e) => {
                            let de = self.expr(ctx, e, SCRATCH)?;
                            let d = self.fresh(ty.is_wide());
                            let r = self.alloc(w);
                            self.addi(ctx, r, SCRATCH, d.sub(de));
                            (r, d)
                        }
                        None => {
                            let r = self.alloc(w);
                            let d = self.li(ctx, r, 0, ty.is_wide());
                            (r, d)
                        }
                    };
                    self.declare(ctx, *v, vec![Loc::Reg(d.0)]);
                    ctx.db.set(Loc::Reg(d.0), d.1);
                } else {
                    self.declare_aggregate(ctx, *v)?;
                }
            }
            Stmt::Assign(LValue::Var(v), e) => {
                let de = self.expr(ctx, e, SCRATCH)?;
                let (r, _) = self.var_reg(ctx, *v)?;
                let d = self.fresh(e.ty.is_wide());
                self.addi(ctx, r, SCRATCH, d.sub(de));
                ctx.db.set(Loc::Reg(r), d);
            }
            Stmt::Assign(LValue::Mem(m), e) => self.assign_mem(ctx, m, e)?,
            Stmt::Call { dest, func, args } => self.call(ctx, *dest, *func, args)?,
            Stmt::Emit(e) => {
                let d = self.expr(ctx, e, SCRATCH)?;
                let port = self.next_port;
                self.next_port += 1;
                for i in 0..width(&e.ty) {
                    let ins = Instruction::new(Opcode::Out, vec![SCRATCH.offset(i)], vec![], i64::from(port));
                    self.push(ctx, Item::Ins(ins));
                }
                self.emits.push(IoEntry {
                    name: format!("emit{port}"),
                    loc: IoLoc::Port(port),
                    delta: d,
                    kind: e.ty.kind().expect("scalar emit"),
                });
            }
            Stmt::If(c, t, f) => self.if_stmt(ctx, c, t, f)?,
            Stmt::Loop(l) => self.loop_stmt(ctx, l)?,
            Stmt::Break => {
                let Some(lp) = ctx.loops.last() else {
                    return internal("break outside a loop");
                };
                let (target, scheme, domain) = (lp.brk, lp.brk_scheme.clone(), lp.domain.clone());
                if ctx.reachable {
                    match scheme {
                        Some(s) => self.come_to(ctx, &s, SCRATCH)?,
                        None => {
                            let s = ctx.snap_on("break", &domain);
                            ctx.loops.last_mut().unwrap().brk_scheme = Some(s);
                        }
                    }
                    ctx.loops.last_mut().unwrap().exits = true;
                }
                self.jump(ctx, target);
                ctx.reachable = false;
            }
            Stmt::Continue => {
                let Some(lp) = ctx.loops.last() else {
                    return internal("continue outside a loop");
                };
                let (target, scheme, domain) = (lp.cont, lp.cont_scheme.clone(), lp.domain.clone());
                if ctx.reachable {
                    match scheme {
                        Some(s) => self.come_to(ctx, &s, SCRATCH)?,
                        None => {
                            let s = ctx.snap_on("continue", &domain);
                            ctx.loops.last_mut().unwrap().cont_scheme = Some(s);
                        }
                    }
                }
                self.jump(ctx, target);
                ctx.reachable = false;
            }
            Stmt::Return(e) => {
                let Some(i) = ctx.inst else {
                    return internal("return outside a function");
                };
                if let (Some(e), Some(off)) = (e, self.insts[i].ret_off) {
                    let de = self.expr(ctx, e, SCRATCH)?;
                    self.addi(ctx, Reg::RET, SCRATCH, off.sub(de));
                }
                if ctx.reachable {
                    self.exit_join(ctx, i)?;
                }
                let ep = self.insts[i].epilogue;
                self.jump(ctx, ep);
                ctx.reachable = false;
            }
            Stmt::Block(b) => self.block(ctx, b)?,
            Stmt::LabelDecl(l) => {
                let snap = ctx.snap(&prog.labels[*l as usize].name);
                let lab = self.label();
                ctx.labels.insert(*l, (lab, snap));
            }
            Stmt::Goto(l) => {
                let Some((lab, snap)) = ctx.labels.get(l).cloned() else {
                    return internal("goto to an undeclared label");
                };
                if ctx.reachable {
                    self.come_to(ctx, &snap, SCRATCH)?;
                }
                self.jump(ctx, lab);
                ctx.reachable = false;
            }
            Stmt::Label(l) => {
                let Some((lab, snap)) = ctx.labels.get(l).cloned() else {
                    return internal("label without declaration");
                };
                if ctx.reachable {
                    self.come_to(ctx, &snap, SCRATCH)?;
                }
                self.mark(ctx, lab);
                ctx.set_scheme(&snap);
                ctx.reachable = true;
            }
            Stmt::FuncDecl(g) => {
                let snap = ctx.snap(&prog.func(*g).name);
                let fs = Rc::new(FuncSnap {
                    snap,
                    decls: ctx.decls.clone(),
                });
                ctx.decls.insert(*g, fs);
            }
        }
        Ok(())
    }

    fn if_stmt(&mut self, ctx: &mut Ctx, c: &Expr, t: &[Stmt], f: &[Stmt]) -> R<()> {
        let d0 = ctx.db.clone();
        let s0 = ctx.snap("if");
        let reach0 = ctx.reachable;
        let (l_else, l_end) = (self.label(), self.label());
        self.cond_jump(ctx, c, false, l_else, SCRATCH)?;
        self.block(ctx, t)?;
        let then_reach = ctx.reachable;
        if then_reach {
            self.come_to(ctx, &s0, SCRATCH)?;
            if !f.is_empty() {
                self.jump(ctx, l_end);
            }
        }
        self.mark(ctx, l_else);
        ctx.db = d0.clone();
        ctx.reachable = reach0;
        self.block(ctx, f)?;
        let else_reach = ctx.reachable;
        if else_reach && !f.is_empty() {
            self.come_to(ctx, &s0, SCRATCH)?;
        }
        self.mark(ctx, l_end);
        ctx.db = d0;
        ctx.reachable = then_reach || else_reach;
        Ok(())
    }

    fn loop_stmt(&mut self, ctx: &mut Ctx, l: &Loop) -> R<()> {
        let domain: Vec<VarId> = ctx.bind.vars().collect();
        let head_snap = ctx.snap("loop");
        let head_db = ctx.db.clone();
        let (head, l_cont, l_exit) = (self.label(), self.label(), self.label());
        let const_true = matches!(l.cond.kind, ExprKind::Const(c) if c != 0);
        self.mark(ctx, head);
        self.open_scope(ctx);
        ctx.loops.push(LoopCtx {
            brk: l_exit,
            brk_scheme: None,
            cont: l_cont,
            cont_scheme: None,
            domain: domain.clone(),
            exits: false,
        });
        if l.test_first {
            for s in &l.pre {
                self.stmt(ctx, s)?;
            }
            let exit = ctx.snap_on("exit", &domain);
            self.cond_jump(ctx, &l.cond, false, l_exit, SCRATCH)?;
            let lp = ctx.loops.last_mut().unwrap();
            lp.brk_scheme = Some(exit);
            lp.exits = !const_true;
            self.block(ctx, &l.body)?;
            self.reach_continue(ctx)?;
            self.mark(ctx, l_cont);
            for s in &l.step {
                self.stmt(ctx, s)?;
            }
            if ctx.reachable {
                self.come_to(ctx, &head_snap, SCRATCH)?;
            }
            self.jump(ctx, head);
        } else {
            self.block(ctx, &l.body)?;
            self.reach_continue(ctx)?;
            self.mark(ctx, l_cont);
            for s in &l.pre {
                self.stmt(ctx, s)?;
            }
            let fix = self.label();
            let cond_reach = ctx.reachable;
            self.cond_jump(ctx, &l.cond, false, fix, SCRATCH)?;
            let after_cond = ctx.db.clone();
            if ctx.reachable {
                self.come_to(ctx, &head_snap, SCRATCH)?;
            }
            self.jump(ctx, head);
            self.mark(ctx, fix);
            ctx.db = after_cond;
            if cond_reach && !const_true {
                let lp = ctx.loops.last().unwrap();
                match lp.brk_scheme.clone() {
                    Some(s) => self.come_to(ctx, &s, SCRATCH)?,
                    None => {
                        let s = ctx.snap_on("exit", &domain);
                        ctx.loops.last_mut().unwrap().brk_scheme = Some(s);
                    }
                }
                ctx.loops.last_mut().unwrap().exits = true;
            }
        }
        let lp = ctx.loops.pop().unwrap();
        self.close_scope(ctx);
        self.mark(ctx, l_exit);
        ctx.db = head_db;
        if let Some(s) = &lp.brk_scheme {
            ctx.set_scheme(s);
        }
        ctx.reachable = lp.exits;
        Ok(())
    }

    /// Fall-through into the continue point of the innermost loop.
    fn reach_continue(&mut self, ctx: &mut Ctx) -> R<()> {
        let lp = ctx.loops.last().unwrap();
        let (scheme, domain) = (lp.cont_scheme.clone(), lp.domain.clone());
        if ctx.reachable {
            match scheme {
                Some(s) => self.come_to(ctx, &s, SCRATCH)?,
                None => {
                    let s = ctx.snap_on("continue", &domain);
                    ctx.loops.last_mut().unwrap().cont_scheme = Some(s);
                }
            }
        }
        if let Some(s) = ctx.loops.last().unwrap().cont_scheme.clone() {
            ctx.set_scheme(&s);
            ctx.reachable = true;
        }
        Ok(())
    }

    fn declare_aggregate(&mut self, ctx: &mut Ctx, v: VarId) -> R<()> {
        let info = self.prog.var(v);
        let size = size_words(&info.ty, &self.prog.aggs);
        let b = self.alloc(1);
        let db = self.rng.fresh_offset();
        match (info.func, ctx.inst) {
            (None, _) => {
                let addr = self.next_global;
                self.next_global += size + 1;
                self.layout.insert(info.name.clone(), addr);
                self.li_at(ctx, b, u64::from(addr), Offset::Word(db));
            }
            (Some(_), Some(i)) => {
                let at = self.insts[i].frame;
                self.insts[i].frame += size;
                self.push(
                    ctx,
                    Item::FrameBase {
                        inst: i,
                        reg: b,
                        at,
                        delta: db,
                    },
                );
            }
            (Some(_), None) => return internal("local aggregate outside a function"),
        }
        let classes = self.classes(v);
        let n = classes.iter().max().map_or(0, |m| m + 1);
        let mut locs = vec![Loc::Reg(b)];
        locs.extend((0..n).map(|class| Loc::Stripe { var: v, class }));
        self.declare(ctx, v, locs);
        ctx.db.set(Loc::Reg(b), Offset::Word(db));
        for class in 0..n {
            let d = self.li(ctx, SCRATCH, 0, false);
            self.storm(ctx, v, class, memory::StormOp::Fill { reg: SCRATCH }, SCRATCH.next())?;
            ctx.db.set(Loc::Stripe { var: v, class }, d);
        }
        Ok(())
    }

    // ---- assembly ----

    fn assemble(&mut self) -> R<Vec<Instruction>> {
        let mut pos: HashMap<Label, usize> = HashMap::new();
        let mut pc = 0usize;
        for buf in &self.bufs {
            for it in buf {
                match it {
                    Item::Mark(l) => {
                        pos.insert(*l, pc);
                    }
                    _ => pc += 1,
                }
            }
        }
        pos.insert(self.end, pc);
        let bufs = std::mem::take(&mut self.bufs);
        let mut out = Vec::with_capacity(pc);
        for it in bufs.into_iter().flatten() {
            match it {
                Item::Mark(_) => {}
                Item::Ins(i) => out.push(i),
                Item::Fix { mut ins, target, source } => {
                    let Some(t) = pos.get(&target) else {
                        return internal("unresolved label");
                    };
                    let here = out.len();
                    ins.imm = match ins.op.signature().imm {
                        ImmKind::Relative => *t as i64 - here as i64,
                        _ => *t as i64,
                    };
                    if source {
                        self.stats.source_branch_pcs.push(here);
                    }
                    out.push(ins);
                }
                Item::Frame { inst, sign } => {
                    let f = self.insts[inst].frame;
                    let k = if sign < 0 { f.wrapping_neg() } else { f };
                    let c = self.seal(Offset::Word(k));
                    out.push(Instruction::new(Opcode::Addi, vec![Reg::SP, Reg::SP], vec![c], 0));
                }
                Item::FrameBase { inst, reg, at, delta } => {
                    let f = self.insts[inst].frame;
                    let k = at.wrapping_sub(f).wrapping_add(delta).wrapping_sub(self.sp_off);
                    let c = self.seal(Offset::Word(k));
                    out.push(Instruction::new(Opcode::Addi, vec![reg, Reg::SP], vec![c], 0));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
