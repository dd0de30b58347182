//! Expressions, conditions and casts.
//!
//! `expr(e, r)` leaves `E[nominal + d]` in `r` (and `r + 1` for 64-bit
//! values) and returns `d`. It may clobber any register at or above `r`;
//! the second operand of a binary operator is computed above the first.

use crate::cipher::NumKind;
use crate::isa::FusedOp;

use super::*;

fn fused(op: Arith, k: NumKind) -> Option<FusedOp> {
    use Arith::*;
    use FusedOp as F;
    Some(match (k, op) {
        (NumKind::I32 | NumKind::U32, Mul) => F::Mul,
        (NumKind::I32, Div) => F::Div,
        (NumKind::U32, Div) => F::Divu,
        (NumKind::I32, Rem) => F::Rem,
        (NumKind::U32, Rem) => F::Remu,
        (NumKind::I32 | NumKind::U32, And) => F::And,
        (NumKind::I32 | NumKind::U32, Or) => F::Or,
        (NumKind::I32 | NumKind::U32, Xor) => F::Xor,
        (NumKind::I32 | NumKind::U32, Shl) => F::Sll,
        (NumKind::I32, Shr) => F::Sra,
        (NumKind::U32, Shr) => F::Srl,
        (NumKind::I64 | NumKind::U64, Add) => F::AddLl,
        (NumKind::I64 | NumKind::U64, Sub) => F::SubLl,
        (NumKind::I64 | NumKind::U64, Mul) => F::MulLl,
        (NumKind::I64, Div) => F::DivLl,
        (NumKind::U64, Div) => F::DivuLl,
        (NumKind::I64, Rem) => F::RemLl,
        (NumKind::U64, Rem) => F::RemuLl,
        (NumKind::I64 | NumKind::U64, And) => F::AndLl,
        (NumKind::I64 | NumKind::U64, Or) => F::OrLl,
        (NumKind::I64 | NumKind::U64, Xor) => F::XorLl,
        (NumKind::I64 | NumKind::U64, Shl) => F::SllLl,
        (NumKind::I64, Shr) => F::SraLl,
        (NumKind::U64, Shr) => F::SrlLl,
        (NumKind::F32, Add) => F::Addf,
        (NumKind::F32, Sub) => F::Subf,
        (NumKind::F32, Mul) => F::Mulf,
        (NumKind::F32, Div) => F::Divf,
        (NumKind::F64, Add) => F::AddD,
        (NumKind::F64, Sub) => F::SubD,
        (NumKind::F64, Mul) => F::MulD,
        (NumKind::F64, Div) => F::DivD,
        _ => return None,
    })
}

fn kind(ty: &Ty) -> NumKind {
    ty.kind().unwrap_or(NumKind::I32)
}

/// Whether every value of `from` is already a canonical value of `to`.
fn fits(from: Basic, to: Basic) -> bool {
    let range = |b: Basic| -> (i64, i64) {
        match b {
            Basic::Bool => (0, 1),
            Basic::SChar => (-128, 127),
            Basic::UChar => (0, 255),
            Basic::Short => (-32768, 32767),
            Basic::UShort => (0, 65535),
            _ => (i64::MIN, i64::MAX),
        }
    };
    if !(from.is_narrow() || from == Basic::Bool) {
        return false;
    }
    let (a, b) = range(from);
    let (c, d) = range(to);
    c <= a && b <= d
}

fn retype(a: NumKind, b: NumKind) -> bool {
    use NumKind::*;
    a == b || matches!((a, b), (I32, U32) | (U32, I32) | (I64, U64) | (U64, I64))
}

impl Gen<'_> {
    pub(super) fn expr(&mut self, ctx: &mut Ctx, e: &Expr, r: Reg) -> R<Offset> {
        let wide = e.ty.is_wide();
        match &e.kind {
            ExprKind::Const(c) => Ok(self.li(ctx, r, *c, wide)),
            ExprKind::Var(v) | ExprKind::Base(v) => {
                let (src, off) = self.var_reg(ctx, *v)?;
                let d = self.fresh(wide);
                self.addi(ctx, r, src, d.sub(off));
                Ok(d)
            }
            ExprKind::Load(m) => self.load(ctx, m, r),
            ExprKind::Neg(a) => {
                let da = self.expr(ctx, a, r)?;
                let w = width(&a.ty);
                let k = kind(&e.ty);
                let d = self.fresh(wide);
                match k {
                    NumKind::F32 | NumKind::F64 => {
                        let sign = if wide { 1u64 << 63 } else { 1u64 << 31 };
                        let dm = self.li(ctx, r.offset(w), sign, wide);
                        let op = if wide { FusedOp::XorLl } else { FusedOp::Xor };
                        self.emit(ctx, Opcode::Fused(op), vec![r, r, r.offset(w)], vec![da, dm, d]);
                    }
                    _ if wide => {
                        let dz = self.li(ctx, r.offset(w), 0, true);
                        self.emit(ctx, Opcode::Fused(FusedOp::SubLl), vec![r, r.offset(w), r], vec![dz, da, d]);
                    }
                    _ => {
                        let dz = self.li(ctx, r.offset(w), 0, false);
                        self.emit(ctx, Opcode::Sub, vec![r, r.offset(w), r], vec![d.sub(dz).add(da)]);
                    }
                }
                Ok(d)
            }
            ExprKind::BitNot(a) => {
                let da = self.expr(ctx, a, r)?;
                let w = width(&a.ty);
                let dm = self.li(ctx, r.offset(w), u64::MAX, wide);
                let d = self.fresh(wide);
                let op = if wide { FusedOp::XorLl } else { FusedOp::Xor };
                self.emit(ctx, Opcode::Fused(op), vec![r, r, r.offset(w)], vec![da, dm, d]);
                Ok(d)
            }
            ExprKind::Arith(op, a, b) => {
                let da = self.expr(ctx, a, r)?;
                let rb = r.offset(width(&a.ty));
                let db = self.expr(ctx, b, rb)?;
                let k = kind(&e.ty);
                let d = self.fresh(wide);
                match (k, op) {
                    (NumKind::I32 | NumKind::U32, Arith::Add) => {
                        self.emit(ctx, Opcode::Add, vec![r, r, rb], vec![d.sub(da).sub(db)]);
                    }
                    (NumKind::I32 | NumKind::U32, Arith::Sub) => {
                        self.emit(ctx, Opcode::Sub, vec![r, r, rb], vec![d.sub(da).add(db)]);
                    }
                    _ => match fused(*op, k) {
                        Some(f) => self.emit(ctx, Opcode::Fused(f), vec![r, r, rb], vec![da, db, d]),
                        None => return internal(format!("no instruction for {op:?} on {k:?}")),
                    },
                }
                Ok(d)
            }
            ExprKind::Cmp(..) | ExprKind::Not(_) | ExprKind::LogAnd(..) | ExprKind::LogOr(..) => {
                let f = self.label();
                let end = self.label();
                self.cond_jump(ctx, e, false, f, r)?;
                let d = self.fresh(false);
                self.li_at(ctx, r, 1, d);
                self.jump(ctx, end);
                self.mark(ctx, f);
                self.li_at(ctx, r, 0, d);
                self.mark(ctx, end);
                Ok(d)
            }
            ExprKind::Cond(c, a, b) => {
                let l_else = self.label();
                let end = self.label();
                self.cond_jump(ctx, c, false, l_else, r)?;
                let d = self.fresh(wide);
                let da = self.expr(ctx, a, r)?;
                self.addi(ctx, r, r, d.sub(da));
                self.jump(ctx, end);
                self.mark(ctx, l_else);
                let db = self.expr(ctx, b, r)?;
                self.addi(ctx, r, r, d.sub(db));
                self.mark(ctx, end);
                Ok(d)
            }
            ExprKind::Cast(a) => {
                let da = self.expr(ctx, a, r)?;
                match (a.basic(), e.basic()) {
                    (Some(from), Some(to)) => self.cast_reg(ctx, from, to, r, da),
                    _ => Ok(da),
                }
            }
        }
    }

    /// Converts the value of type `from` held in `r` under offset `d`.
    pub(super) fn cast_reg(&mut self, ctx: &mut Ctx, from: Basic, to: Basic, r: Reg, d: Offset) -> R<Offset> {
        let (fk, tk) = (from.kind(), to.kind());
        let w = from.words();
        if to == Basic::Bool {
            if from == Basic::Bool {
                return Ok(d);
            }
            let dz = self.li(ctx, r.offset(w), 0, fk.is_wide());
            let one = self.label();
            let end = self.label();
            self.branch_raw(ctx, Rel::Ne, from.flavor(), r, r.offset(w), d, dz, one, false);
            let dr = self.fresh(false);
            self.li_at(ctx, r, 0, dr);
            self.jump(ctx, end);
            self.mark(ctx, one);
            self.li_at(ctx, r, 1, dr);
            self.mark(ctx, end);
            return Ok(dr);
        }
        if to.is_narrow() {
            let mut d = d;
            if !matches!(fk, NumKind::I32 | NumKind::U32) {
                let d2 = self.fresh(false);
                self.emit(ctx, Opcode::Cvt(fk, NumKind::I32), vec![r, r], vec![d, d2]);
                d = d2;
            }
            if fits(from, to) {
                return Ok(d);
            }
            let s = 32 - to.bits();
            let ds = self.li(ctx, r.next(), 1u64 << s, false);
            let dm = self.fresh(false);
            self.emit(ctx, Opcode::Fused(FusedOp::Mul), vec![r, r, r.next()], vec![d, ds, dm]);
            let dd = self.fresh(false);
            let op = if to.is_signed() { FusedOp::Div } else { FusedOp::Divu };
            self.emit(ctx, Opcode::Fused(op), vec![r, r, r.next()], vec![dm, ds, dd]);
            return Ok(dd);
        }
        if retype(fk, tk) {
            return Ok(d);
        }
        let d2 = self.fresh(tk.is_wide());
        self.emit(ctx, Opcode::Cvt(fk, tk), vec![r, r], vec![d, d2]);
        Ok(d2)
    }

    /// Jumps to `target` exactly when the truth of `e` equals `sense`.
    /// Every source comparison flips a coin between a direct branch and
    /// the inverted branch around an unconditional jump.
    pub(super) fn cond_jump(&mut self, ctx: &mut Ctx, e: &Expr, sense: bool, target: Label, r: Reg) -> R<()> {
        match &e.kind {
            ExprKind::Not(a) => self.cond_jump(ctx, a, !sense, target, r),
            ExprKind::LogAnd(a, b) | ExprKind::LogOr(a, b) => {
                let and = matches!(e.kind, ExprKind::LogAnd(..));
                if and != sense {
                    // (a && b) false: either false. (a || b) true: either true.
                    self.cond_jump(ctx, a, sense, target, r)?;
                    self.cond_jump(ctx, b, sense, target, r)
                } else {
                    let skip = self.label();
                    self.cond_jump(ctx, a, !sense, skip, r)?;
                    self.cond_jump(ctx, b, sense, target, r)?;
                    self.mark(ctx, skip);
                    Ok(())
                }
            }
            ExprKind::Cond(c, a, b) => {
                let l_else = self.label();
                let end = self.label();
                self.cond_jump(ctx, c, false, l_else, r)?;
                self.cond_jump(ctx, a, sense, target, r)?;
                self.jump(ctx, end);
                self.mark(ctx, l_else);
                self.cond_jump(ctx, b, sense, target, r)?;
                self.mark(ctx, end);
                Ok(())
            }
            ExprKind::Const(c) => {
                let truth = match e.basic() {
                    Some(Basic::Float) => f32::from_bits(*c as u32) != 0.0,
                    Some(Basic::Double) => f64::from_bits(*c) != 0.0,
                    _ => *c != 0,
                };
                if truth == sense {
                    self.jump(ctx, target);
                }
                Ok(())
            }
            ExprKind::Cmp(rel, a, b) => {
                let da = self.expr(ctx, a, r)?;
                let rb = r.offset(width(&a.ty));
                let db = self.expr(ctx, b, rb)?;
                let flavor = a.flavor();
                let rel = if sense { *rel } else { rel.complement(flavor) };
                self.source_branch(ctx, rel, flavor, r, rb, da, db, target);
                Ok(())
            }
            _ => {
                let da = self.expr(ctx, e, r)?;
                let w = width(&e.ty);
                let dz = self.li(ctx, r.offset(w), 0, e.ty.is_wide());
                let rel = if sense { Rel::Ne } else { Rel::Eq };
                self.source_branch(ctx, rel, e.flavor(), r, r.offset(w), da, dz, target);
                Ok(())
            }
        }
    }

    /// Truthteller or liar form of a branch compiled from the source.
    #[allow(clippy::too_many_arguments)]
    fn source_branch(
        &mut self,
        ctx: &Ctx,
        rel: Rel,
        flavor: Flavor,
        a: Reg,
        b: Reg,
        da: Offset,
        db: Offset,
        target: Label,
    ) {
        let coin = self.rng.coin();
        let liar = match self.polarity {
            Polarity::Coin => coin,
            Polarity::Truthteller => false,
            Polarity::Liar => true,
        };
        if liar {
            let skip = self.label();
            self.branch_raw(ctx, rel.complement(flavor), flavor, a, b, da, db, skip, true);
            self.jump(ctx, target);
            self.mark(ctx, skip);
        } else {
            self.branch_raw(ctx, rel, flavor, a, b, da, db, target, true);
        }
    }
}
