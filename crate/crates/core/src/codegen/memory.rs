//! Loads and write storms.
//!
//! Every word of an aggregate that belongs to one offset class (a stripe)
//! shares the stripe's offset, so writing any word moves the whole stripe
//! to a fresh offset: the written word gets the new value and every other
//! word of the stripe is re-based. Each word receives exactly one store.

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StormKind {
    Write,
    Rebase,
    Fill,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StormInfo {
    pub var: String,
    pub class: u32,
    /// Store instructions executed per storm.
    pub words: usize,
    pub looped: bool,
    pub kind: StormKind,
}

pub(super) enum StormOp {
    Write {
        /// `(word displacement from the place, register holding it)`
        targets: Vec<(u32, Reg)>,
        disp: u32,
        /// Address register and its offset for a computed address.
        dynamic: Option<(Reg, Offset)>,
        old: Offset,
        new: Offset,
    },
    Rebase {
        old: Offset,
        new: Offset,
    },
    Fill {
        reg: Reg,
    },
}

/// `positions = first + offs[j] + i * stride` for `i < count`.
struct Progression {
    first: u32,
    offs: Vec<u32>,
    stride: u32,
    count: u32,
}

fn progression(p: &[u32]) -> Option<Progression> {
    for k in 1..=p.len() / 2 {
        if !p.len().is_multiple_of(k) {
            continue;
        }
        let stride = p[k] - p[0];
        if p.iter().enumerate().all(|(i, x)| *x == p[i % k] + (i / k) as u32 * stride) {
            return Some(Progression {
                first: p[0],
                offs: p[..k].iter().map(|x| x - p[0]).collect(),
                stride,
                count: (p.len() / k) as u32,
            });
        }
    }
    None
}

impl Gen<'_> {
    fn base(&self, ctx: &Ctx, v: VarId) -> R<(Reg, u32)> {
        match self.var_reg(ctx, v)? {
            (r, Offset::Word(o)) => Ok((r, o)),
            _ => internal("pair base register"),
        }
    }

    fn stripe(&self, ctx: &Ctx, var: VarId, class: u32) -> R<Offset> {
        match ctx.db.get(Loc::Stripe { var, class }) {
            Some(o) => Ok(o),
            None => internal(format!("no stripe {class} for {}", self.prog.var(var).name)),
        }
    }

    fn lw(&mut self, ctx: &Ctx, dst: Reg, addr: Reg, k: u32) {
        self.emit(ctx, Opcode::Lw, vec![dst, addr], vec![Offset::Word(k)]);
    }

    fn sw(&mut self, ctx: &Ctx, addr: Reg, val: Reg, k: u32) {
        self.emit(ctx, Opcode::Sw, vec![addr, val], vec![Offset::Word(k)]);
    }

    pub(super) fn load(&mut self, ctx: &mut Ctx, m: &MemPlace, r: Reg) -> R<Offset> {
        let b = m.ty.basic();
        let wide = m.ty.is_wide();
        let classes = self.classes(m.root);
        let hi = self.stripe(ctx, m.root, classes[m.rep as usize])?;
        let cur = if wide {
            let lo = self.stripe(ctx, m.root, classes[m.rep as usize + 1])?;
            Offset::Pair(hi.bits() as u32, lo.bits() as u32)
        } else {
            hi
        };
        let (areg, aoff) = match &m.addr {
            None => self.base(ctx, m.root)?,
            Some(a) => match self.expr(ctx, a, r)? {
                Offset::Word(o) => (r, o),
                _ => return internal("pair address"),
            },
        };
        if wide {
            self.lw(ctx, r.next(), areg, (m.disp + 1).wrapping_sub(aoff));
        }
        self.lw(ctx, r, areg, m.disp.wrapping_sub(aoff));
        let d = self.fresh(wide);
        self.addi(ctx, r, r, d.sub(cur));
        match b {
            Some(b) if m.canon && (b.is_narrow() || b == Basic::Bool) => self.cast_reg(ctx, Basic::Int, b, r, d),
            _ => Ok(d),
        }
    }

    pub(super) fn assign_mem(&mut self, ctx: &mut Ctx, m: &MemPlace, e: &Expr) -> R<()> {
        let v = SCRATCH;
        let w = width(&m.ty);
        let dv = self.expr(ctx, e, v)?;
        let dynamic = match &m.addr {
            None => None,
            Some(a) => match self.expr(ctx, a, v.offset(w))? {
                Offset::Word(o) => Some((v.offset(w), Offset::Word(o))),
                _ => return internal("pair address"),
            },
        };
        let classes = self.classes(m.root);
        let mut words = vec![(0u32, classes[m.rep as usize])];
        if w == 2 {
            words.push((1, classes[m.rep as usize + 1]));
        }
        let mut new: Vec<(u32, u32)> = Vec::new();
        for (_, c) in &words {
            if !new.iter().any(|(x, _)| x == c) {
                let d = self.rng.fresh_offset();
                new.push((*c, d));
            }
        }
        let off_of = |c: u32| new.iter().find(|(x, _)| *x == c).unwrap().1;
        let target = if w == 2 {
            Offset::Pair(off_of(words[0].1), off_of(words[1].1))
        } else {
            Offset::Word(off_of(words[0].1))
        };
        self.addi(ctx, v, v, target.sub(dv));
        let scratch = v.offset(w + u32::from(dynamic.is_some()));
        for (c, d) in new.clone() {
            let targets = words
                .iter()
                .filter(|(_, x)| *x == c)
                .map(|(o, _)| (*o, v.offset(*o)))
                .collect();
            let old = self.stripe(ctx, m.root, c)?;
            self.storm(
                ctx,
                m.root,
                c,
                StormOp::Write {
                    targets,
                    disp: m.disp,
                    dynamic,
                    old,
                    new: Offset::Word(d),
                },
                scratch,
            )?;
            ctx.db.set(Loc::Stripe { var: m.root, class: c }, Offset::Word(d));
        }
        Ok(())
    }

    /// Emits one store to every word of `var`'s stripe `class`. Uses
    /// `scratch` and `scratch + 1`.
    pub(super) fn storm(&mut self, ctx: &mut Ctx, var: VarId, class: u32, op: StormOp, scratch: Reg) -> R<()> {
        let classes = self.classes(var);
        let positions: Vec<u32> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == class)
            .map(|(i, _)| i as u32)
            .collect();
        let (breg, boff) = self.base(ctx, var)?;
        let looped = if positions.len() > UNROLL_LIMIT {
            progression(&positions)
        } else {
            None
        };
        let kind = match op {
            StormOp::Write { .. } => StormKind::Write,
            StormOp::Rebase { .. } => StormKind::Rebase,
            StormOp::Fill { .. } => StormKind::Fill,
        };
        self.stats.storms.push(StormInfo {
            var: self.prog.var(var).name.clone(),
            class,
            words: positions.len(),
            looped: looped.is_some(),
            kind,
        });
        let tmp = scratch;
        match looped {
            None => {
                for p in positions {
                    let sel = match &op {
                        StormOp::Write {
                            targets,
                            disp,
                            dynamic: None,
                            ..
                        } => match targets.iter().find(|(o, _)| disp + o == p) {
                            Some((_, val)) => Select::Hit(*val),
                            None => Select::Miss,
                        },
                        StormOp::Write {
                            targets,
                            disp,
                            dynamic: Some((areg, da)),
                            ..
                        } => Select::Test(
                            targets
                                .iter()
                                .map(|(o, val)| {
                                    let k = (da.bits() as u32)
                                        .wrapping_sub(boff)
                                        .wrapping_add(p)
                                        .wrapping_sub(*disp)
                                        .wrapping_sub(*o);
                                    (*areg, breg, k, *val)
                                })
                                .collect(),
                        ),
                        _ => Select::Miss,
                    };
                    self.storm_word(ctx, &op, breg, p.wrapping_sub(boff), tmp, sel);
                }
            }
            Some(ap) => {
                let cur = scratch.next();
                let dc = self.rng.fresh_offset();
                self.addi(ctx, cur, breg, Offset::Word(ap.first.wrapping_add(dc).wrapping_sub(boff)));
                let top = self.label();
                self.mark(ctx, top);
                for f in &ap.offs {
                    let sel = match &op {
                        StormOp::Write {
                            targets,
                            disp,
                            dynamic,
                            ..
                        } => {
                            let (other, ooff) = match dynamic {
                                None => (breg, boff),
                                Some((areg, da)) => (*areg, da.bits() as u32),
                            };
                            let extra = *disp;
                            Select::Test(
                                targets
                                    .iter()
                                    .map(|(o, val)| {
                                        let k = dc
                                            .wrapping_sub(ooff)
                                            .wrapping_add(extra)
                                            .wrapping_add(*o)
                                            .wrapping_sub(*f);
                                        (cur, other, k, *val)
                                    })
                                    .collect(),
                            )
                        }
                        _ => Select::Miss,
                    };
                    self.storm_word(ctx, &op, cur, f.wrapping_sub(dc), tmp, sel);
                }
                self.addi(ctx, cur, cur, Offset::Word(ap.stride));
                let end = ap.first.wrapping_add(ap.count * ap.stride);
                let k = dc.wrapping_sub(boff).wrapping_add(end);
                self.branch_k(ctx, Rel::Ne, cur, breg, k, top);
            }
        }
        Ok(())
    }

    /// One store to the word at `addr + k`.
    fn storm_word(&mut self, ctx: &Ctx, op: &StormOp, addr: Reg, k: u32, tmp: Reg, sel: Select) {
        let (old, new) = match op {
            StormOp::Fill { reg } => {
                self.sw(ctx, addr, *reg, k);
                return;
            }
            StormOp::Rebase { old, new } | StormOp::Write { old, new, .. } => (*old, *new),
        };
        let tests = match sel {
            Select::Hit(val) => {
                self.sw(ctx, addr, val, k);
                return;
            }
            Select::Miss => Vec::new(),
            Select::Test(t) => t,
        };
        self.lw(ctx, tmp, addr, k);
        self.addi(ctx, tmp, tmp, new.sub(old));
        let end = self.label();
        let labels: Vec<Label> = tests.iter().map(|_| self.label()).collect();
        for ((a, b, kk, _), l) in tests.iter().zip(&labels) {
            self.branch_k(ctx, Rel::Eq, *a, *b, *kk, *l);
        }
        self.sw(ctx, addr, tmp, k);
        if tests.is_empty() {
            return;
        }
        self.jump(ctx, end);
        for (i, ((_, _, _, val), l)) in tests.iter().zip(&labels).enumerate() {
            self.mark(ctx, *l);
            self.sw(ctx, addr, *val, k);
            if i + 1 < tests.len() {
                self.jump(ctx, end);
            }
        }
        self.mark(ctx, end);
    }
}

/// How a storm decides whether a word is the one being written.
enum Select {
    /// Statically the written word.
    Hit(Reg),
    /// Statically not written.
    Miss,
    /// `(a, b, k, value)`: the word is written with `value` when `a == b + k`.
    Test(Vec<(Reg, Reg, u32, Reg)>),
}
