//! Obfuscation schemes: the offset database `D`, variable bindings `L`,
//! label snapshots, the seeded offset generator and RALPH temporaries.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cipher::{mix64, CipherPair, CtValue, KeyContext, NumKind, Origin};
use crate::isa::{Instruction, Opcode, Reg};

/// Source variable identity, numbered in declaration order.
pub type VarId = u32;

/// Displacement of a location's runtime value from its nominal value.
/// 64-bit locations carry one offset per half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Offset {
    Word(u32),
    Pair(u32, u32),
}

impl Offset {
    pub fn zero(wide: bool) -> Offset {
        if wide {
            Offset::Pair(0, 0)
        } else {
            Offset::Word(0)
        }
    }

    pub fn is_wide(self) -> bool {
        matches!(self, Offset::Pair(..))
    }

    /// The offset as a 64-bit word (high half first for pairs).
    pub fn bits(self) -> u64 {
        match self {
            Offset::Word(w) => u64::from(w),
            Offset::Pair(h, l) => (u64::from(h) << 32) | u64::from(l),
        }
    }

    pub fn from_bits(wide: bool, bits: u64) -> Offset {
        if wide {
            Offset::Pair((bits >> 32) as u32, bits as u32)
        } else {
            Offset::Word(bits as u32)
        }
    }

    /// Half-wise sum.
    pub fn add(self, o: Offset) -> Offset {
        self.zip(o, u32::wrapping_add)
    }

    /// Half-wise difference `self - o`.
    pub fn sub(self, o: Offset) -> Offset {
        self.zip(o, u32::wrapping_sub)
    }

    pub fn neg(self) -> Offset {
        Offset::zero(self.is_wide()).sub(self)
    }

    fn zip(self, o: Offset, f: fn(u32, u32) -> u32) -> Offset {
        match (self, o) {
            (Offset::Word(a), Offset::Word(b)) => Offset::Word(f(a, b)),
            (Offset::Pair(a, b), Offset::Pair(c, d)) => Offset::Pair(f(a, c), f(b, d)),
            _ => panic!("offset width mismatch: {self:?} vs {o:?}"),
        }
    }

    /// Applies the offset to a nominal value.
    pub fn apply(self, nominal: u64) -> u64 {
        self.add(Offset::from_bits(self.is_wide(), nominal)).bits()
    }

    /// Removes the offset from a runtime value.
    pub fn remove(self, runtime: u64) -> u64 {
        Offset::from_bits(self.is_wide(), runtime).sub(self).bits()
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Offset::Word(w) => write!(f, "{w}"),
            Offset::Pair(h, l) => write!(f, "{h}:{l}"),
        }
    }
}

/// A location carrying an offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loc {
    /// A register, or the base of a register pair.
    Reg(Reg),
    /// One offset class of an aggregate: every word of `var` in `class`
    /// shares this entry regardless of the aggregate's length.
    Stripe { var: VarId, class: u32 },
}

/// The obfuscation scheme at a program point.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OffsetDb {
    map: BTreeMap<Loc, Offset>,
}

impl OffsetDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, l: Loc) -> Option<Offset> {
        self.map.get(&l).copied()
    }

    pub fn set(&mut self, l: Loc, o: Offset) {
        self.map.insert(l, o);
    }

    pub fn remove(&mut self, l: Loc) {
        self.map.remove(&l);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Loc, Offset)> + '_ {
        self.map.iter().map(|(l, o)| (*l, *o))
    }
}

/// `L : Var -> Loc`. A variable may own several locations (aggregates
/// have one per offset class).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarBinding {
    map: BTreeMap<VarId, Vec<Loc>>,
}

impl VarBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, v: VarId, locs: Vec<Loc>) {
        self.map.insert(v, locs);
    }

    pub fn unbind(&mut self, v: VarId) {
        self.map.remove(&v);
    }

    pub fn get(&self, v: VarId) -> Option<&[Loc]> {
        self.map.get(&v).map(Vec::as_slice)
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.map.keys().copied()
    }

    /// Finds the variable owning a location.
    pub fn owner(&self, l: Loc) -> Option<VarId> {
        self.map
            .iter()
            .find(|(_, locs)| locs.contains(&l))
            .map(|(v, _)| *v)
    }
}

/// A saved scheme restricted to the variables bound when it was taken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeSnapshot {
    pub label: String,
    /// `(variable, location, offset)` in declaration order.
    pub entries: Vec<(VarId, Loc, Offset)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObfError {
    #[error("variable {0} in snapshot '{1}' is no longer bound")]
    Unbound(VarId, String),
    #[error("no offset recorded for {0:?}")]
    NoOffset(Loc),
    #[error("malformed schedule line {0}: {1}")]
    Schedule(usize, String),
}

pub fn snapshot(label: &str, db: &OffsetDb, binding: &VarBinding) -> SchemeSnapshot {
    let mut entries = Vec::new();
    for v in binding.vars() {
        for l in binding.get(v).unwrap() {
            if let Some(o) = db.get(*l) {
                entries.push((v, *l, o));
            }
        }
    }
    SchemeSnapshot {
        label: label.to_string(),
        entries,
    }
}

/// One location whose offset must move from `from` to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adjust {
    pub var: VarId,
    pub loc: Loc,
    pub from: Offset,
    pub to: Offset,
}

impl Adjust {
    /// The constant to add at runtime.
    pub fn delta(&self) -> Offset {
        self.to.sub(self.from)
    }
}

/// The locations differing between `now` and the snapshot, in declaration
/// order.
pub fn restore_plan(
    snap: &SchemeSnapshot,
    now: &OffsetDb,
    binding: &VarBinding,
) -> Result<Vec<Adjust>, ObfError> {
    let mut out = Vec::new();
    for (v, l, target) in &snap.entries {
        match binding.get(*v) {
            Some(locs) if locs.contains(l) => {}
            _ => return Err(ObfError::Unbound(*v, snap.label.clone())),
        }
        let cur = now.get(*l).ok_or(ObfError::NoOffset(*l))?;
        if cur != *target {
            out.push(Adjust {
                var: *v,
                loc: *l,
                from: cur,
                to: *target,
            });
        }
    }
    Ok(out)
}

/// Result of [`restore_code`]. Register adjustments become `addi`/`addi2`
/// instructions; aggregate stripes need a rebasing storm, which only the
/// code generator can emit, so they are handed back.
#[derive(Debug, Clone)]
pub struct Restore {
    pub code: Vec<Instruction>,
    pub db: OffsetDb,
    pub stripes: Vec<Adjust>,
}

/// Emits the adds that bring every snapshot variable back to its snapshot
/// offset. Registers are adjusted in declaration order; the returned scheme
/// agrees with the snapshot on the register part of its domain.
pub fn restore_code(
    snap: &SchemeSnapshot,
    now: &OffsetDb,
    binding: &VarBinding,
    sealer: &mut ConstSealer<'_>,
) -> Result<Restore, ObfError> {
    let mut db = now.clone();
    let mut code = Vec::new();
    let mut stripes = Vec::new();
    for adj in restore_plan(snap, now, binding)? {
        match adj.loc {
            Loc::Reg(r) => {
                let op = if adj.to.is_wide() {
                    Opcode::Addi2
                } else {
                    Opcode::Addi
                };
                code.push(Instruction::new(
                    op,
                    vec![r, r],
                    vec![sealer.offset(adj.delta())],
                    0,
                ));
                db.set(adj.loc, adj.to);
            }
            Loc::Stripe { .. } => stripes.push(adj),
        }
    }
    Ok(Restore { code, db, stripes })
}

/// Where fresh offsets come from. `Constant` is a deliberately broken
/// source used to check that the statistics notice a degenerate compiler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetSource {
    #[default]
    Uniform,
    Constant(u32),
}

/// The compiler's single seeded random stream: offsets, polarity coins and
/// constant-bias blinding values all come from here.
#[derive(Debug, Clone)]
pub struct SchemeRng {
    rng: ChaCha8Rng,
    source: OffsetSource,
    draws: u64,
}

impl SchemeRng {
    pub fn new(seed: u64) -> Self {
        Self::with_source(seed, OffsetSource::Uniform)
    }

    pub fn with_source(seed: u64, source: OffsetSource) -> Self {
        SchemeRng {
            rng: ChaCha8Rng::seed_from_u64(seed),
            source,
            draws: 0,
        }
    }

    /// A fresh offset, uniform over all 2^32 words.
    pub fn fresh_offset(&mut self) -> u32 {
        self.draws += 1;
        let x = self.rng.gen::<u32>();
        match self.source {
            OffsetSource::Uniform => x,
            OffsetSource::Constant(c) => c,
        }
    }

    pub fn fresh(&mut self, wide: bool) -> Offset {
        if wide {
            let h = self.fresh_offset();
            Offset::Pair(h, self.fresh_offset())
        } else {
            Offset::Word(self.fresh_offset())
        }
    }

    /// A uniformly random word unaffected by the offset source.
    pub fn word(&mut self) -> u32 {
        self.rng.gen()
    }

    pub fn coin(&mut self) -> bool {
        self.rng.gen()
    }

    /// Number of offsets drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

/// Free-standing form of [`SchemeRng::fresh_offset`] for a given draw index.
pub fn fresh_offset(seed: u64, index: u64) -> u32 {
    let mut r = SchemeRng::new(seed);
    for _ in 0..index {
        r.fresh_offset();
    }
    r.fresh_offset()
}

/// Seals program constants with a deterministic nonce stream so that one
/// (program, seed) pair always produces the same object bytes.
pub struct ConstSealer<'k> {
    key: &'k KeyContext,
    stream: u64,
    counter: u64,
}

impl<'k> ConstSealer<'k> {
    pub fn new(key: &'k KeyContext, seed: u64) -> Self {
        ConstSealer {
            key,
            stream: mix64(seed ^ 0x5eed_c0de_0000_0001),
            counter: 0,
        }
    }

    fn nonce(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.stream ^ mix64(self.counter))
    }

    pub fn word(&mut self, x: u32) -> CtValue {
        let n = self.nonce();
        CtValue::Word(self.key.encrypt_with_nonce(x, Origin::Constant, n))
    }

    pub fn pair(&mut self, x: u64) -> CtValue {
        let n1 = self.nonce();
        let n2 = self.nonce();
        CtValue::Pair(CipherPair {
            hi: self
                .key
                .encrypt_with_nonce((x >> 32) as u32, Origin::Constant, n1),
            lo: self.key.encrypt_with_nonce(x as u32, Origin::Constant, n2),
        })
    }

    pub fn offset(&mut self, o: Offset) -> CtValue {
        match o {
            Offset::Word(w) => self.word(w),
            Offset::Pair(..) => self.pair(o.bits()),
        }
    }
}

/// RALPH: the successor temporary. Indices grow without bound; past the
/// special purpose register space the VM backs them with stack memory.
pub fn ralph_alloc(current: Reg) -> Reg {
    current.next()
}

/// Where an input or output lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoLoc {
    Reg(Reg),
    /// An `out` port in the emit stream.
    Port(u32),
}

impl fmt::Display for IoLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoLoc::Reg(r) => write!(f, "{r}"),
            IoLoc::Port(p) => write!(f, "p{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoEntry {
    pub name: String,
    pub loc: IoLoc,
    pub delta: Offset,
    pub kind: NumKind,
}

/// What the user needs to encrypt inputs and make sense of outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoSchedule {
    pub seed: u64,
    pub inputs: Vec<IoEntry>,
    pub outputs: Vec<IoEntry>,
}

fn kind_from_name(s: &str) -> Option<NumKind> {
    NumKind::ALL.into_iter().find(|k| k.name() == s)
}

impl IoSchedule {
    pub fn to_text(&self) -> String {
        let mut s = format!("seed {}\n", self.seed);
        for (tag, list) in [("in", &self.inputs), ("out", &self.outputs)] {
            for e in list {
                s.push_str(&format!(
                    "{tag} {} {} {} {}\n",
                    e.name,
                    e.loc,
                    e.delta,
                    e.kind.name()
                ));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<IoSchedule, ObfError> {
        let mut sched = IoSchedule::default();
        for (i, line) in text.lines().enumerate() {
            let err = |m: &str| ObfError::Schedule(i + 1, m.to_string());
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                ["seed", n] => sched.seed = n.parse().map_err(|_| err("bad seed"))?,
                [tag @ ("in" | "out"), name, loc, delta, rest @ ..] => {
                    let kind = match rest {
                        [] => NumKind::I32,
                        [k] => kind_from_name(k).ok_or_else(|| err("bad type"))?,
                        _ => return Err(err("too many fields")),
                    };
                    let loc = if let Some(n) = loc.strip_prefix('r') {
                        IoLoc::Reg(Reg(n.parse().map_err(|_| err("bad register"))?))
                    } else if let Some(n) = loc.strip_prefix('p') {
                        IoLoc::Port(n.parse().map_err(|_| err("bad port"))?)
                    } else {
                        return Err(err("bad location"));
                    };
                    let delta = match delta.split_once(':') {
                        Some((h, l)) => Offset::Pair(
                            h.parse().map_err(|_| err("bad offset"))?,
                            l.parse().map_err(|_| err("bad offset"))?,
                        ),
                        None => Offset::Word(delta.parse().map_err(|_| err("bad offset"))?),
                    };
                    if delta.is_wide() != kind.is_wide() {
                        return Err(err("offset width does not match type"));
                    }
                    let e = IoEntry {
                        name: name.to_string(),
                        loc,
                        delta,
                        kind,
                    };
                    if *tag == "in" {
                        sched.inputs.push(e);
                    } else {
                        sched.outputs.push(e);
                    }
                }
                _ => return Err(err("unrecognised line")),
            }
        }
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::SPR_BOUND;

    #[test]
    fn fresh_offset_is_deterministic_per_seed_and_index() {
        assert_eq!(fresh_offset(9, 3), fresh_offset(9, 3));
        let mut r = SchemeRng::new(9);
        let seq: Vec<u32> = (0..5).map(|_| r.fresh_offset()).collect();
        assert_eq!(seq[3], fresh_offset(9, 3));
        assert_ne!(fresh_offset(1, 0), fresh_offset(2, 0));
    }

    #[test]
    fn ralph_successor_never_goes_lower() {
        let mut r = Reg(40);
        for _ in 0..100 {
            let n = ralph_alloc(r);
            assert_eq!(n.0, r.0 + 1);
            r = n;
        }
        assert!(ralph_alloc(Reg(SPR_BOUND - 1)).is_stack_backed());
        assert!(!ralph_alloc(Reg(SPR_BOUND - 2)).is_stack_backed());
    }

    fn setup() -> (OffsetDb, VarBinding) {
        let mut db = OffsetDb::new();
        let mut b = VarBinding::new();
        for (v, r) in [(0u32, 40u32), (1, 41), (2, 42)] {
            b.bind(v, vec![Loc::Reg(Reg(r))]);
            db.set(Loc::Reg(Reg(r)), Offset::Word(100 + v));
        }
        (db, b)
    }

    #[test]
    fn restore_is_noop_on_equal_schemes() {
        let (db, b) = setup();
        let key = KeyContext::new(1);
        let mut s = ConstSealer::new(&key, 1);
        let snap = snapshot("L", &db, &b);
        let r = restore_code(&snap, &db, &b, &mut s).unwrap();
        assert!(r.code.is_empty());
        assert_eq!(r.db, db);
    }

    #[test]
    fn restore_emits_exact_difference_in_declaration_order() {
        let (db, b) = setup();
        let key = KeyContext::new(1);
        let mut s = ConstSealer::new(&key, 1);
        let snap = snapshot("L", &db, &b);
        let mut now = db.clone();
        now.set(Loc::Reg(Reg(42)), Offset::Word(102 + 7));
        now.set(Loc::Reg(Reg(40)), Offset::Word(100 + 5));
        let r = restore_code(&snap, &now, &b, &mut s).unwrap();
        assert_eq!(r.code.len(), 2);
        assert_eq!(r.code[0].regs, vec![Reg(40), Reg(40)]);
        assert_eq!(r.code[1].regs, vec![Reg(42), Reg(42)]);
        let k = key.decrypt_value(&r.code[0].consts[0]).unwrap() as u32;
        assert_eq!(k, 5u32.wrapping_neg());
        assert_eq!(r.db, db);
    }

    #[test]
    fn restore_of_unbound_variable_fails() {
        let (db, mut b) = setup();
        let key = KeyContext::new(1);
        let mut s = ConstSealer::new(&key, 1);
        let snap = snapshot("L", &db, &b);
        b.unbind(1);
        assert_eq!(
            restore_code(&snap, &db, &b, &mut s).unwrap_err(),
            ObfError::Unbound(1, "L".into())
        );
    }

    #[test]
    fn stripes_are_handed_back() {
        let (mut db, mut b) = setup();
        let stripe = Loc::Stripe { var: 3, class: 0 };
        b.bind(3, vec![stripe]);
        db.set(stripe, Offset::Word(1));
        let snap = snapshot("L", &db, &b);
        db.set(stripe, Offset::Word(2));
        let key = KeyContext::new(1);
        let mut s = ConstSealer::new(&key, 1);
        let r = restore_code(&snap, &db, &b, &mut s).unwrap();
        assert!(r.code.is_empty());
        assert_eq!(r.stripes.len(), 1);
        assert_eq!(r.stripes[0].delta(), Offset::Word(u32::MAX));
    }

    #[test]
    fn offset_pair_arithmetic_is_halfwise() {
        let a = Offset::Pair(1, u32::MAX);
        let b = Offset::Pair(0, 1);
        assert_eq!(a.add(b), Offset::Pair(1, 0));
        assert_eq!(a.add(b).sub(b), a);
        assert_eq!(Offset::Word(7).remove(Offset::Word(7).apply(35)), 35);
    }

    #[test]
    fn sealer_is_deterministic_and_constant_origin() {
        let key = KeyContext::new(5);
        let mut a = ConstSealer::new(&key, 77);
        let mut b = ConstSealer::new(&key, 77);
        let x = a.word(3);
        assert_eq!(x, b.word(3));
        assert_ne!(a.word(3), x);
        if let CtValue::Word(c) = x {
            assert_eq!(c.origin(), Origin::Constant);
        }
    }

    #[test]
    fn schedule_text_round_trip() {
        let s = IoSchedule {
            seed: 99,
            inputs: vec![IoEntry {
                name: "x".into(),
                loc: IoLoc::Reg(Reg(40)),
                delta: Offset::Word(12),
                kind: NumKind::I32,
            }],
            outputs: vec![
                IoEntry {
                    name: "return".into(),
                    loc: IoLoc::Reg(Reg(3)),
                    delta: Offset::Pair(1, 2),
                    kind: NumKind::F64,
                },
                IoEntry {
                    name: "emit".into(),
                    loc: IoLoc::Port(0),
                    delta: Offset::Word(5),
                    kind: NumKind::U32,
                },
            ],
        };
        assert_eq!(IoSchedule::from_text(&s.to_text()).unwrap(), s);
        assert!(IoSchedule::from_text("in x q1 3").is_err());
        let plain = IoSchedule::from_text("in x r40 3").unwrap();
        assert_eq!(plain.inputs[0].kind, NumKind::I32);
    }
}
