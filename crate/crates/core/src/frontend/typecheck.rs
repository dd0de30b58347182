//! Name resolution, typing and desugaring into [`typed::Program`].

use std::collections::HashMap;

use super::ast::{self, BinOp, ExprKind as AK, Init, StmtKind, TypeName, UnOp};
use super::typed::*;
use super::types::{size_words, FieldDef};
use super::{Diagnostic, Pos};
use crate::cipher::Rel;
use crate::obfuscation::VarId;

type R<T> = Result<T, Diagnostic>;

#[derive(Debug, Clone, Copy)]
enum Sym {
    Var(VarId),
    Func(FuncId),
}

#[derive(Default)]
struct Scope {
    names: HashMap<String, Sym>,
    aggs: HashMap<String, AggId>,
    labels: HashMap<String, LabelId>,
    /// Function whose body this scope belongs to.
    func: Option<FuncId>,
}

struct FnCtx {
    id: FuncId,
    loops: u32,
    path: Vec<u32>,
    gotos: Vec<(LabelId, Vec<u32>, Pos)>,
}

struct Sig {
    params: Vec<Ty>,
    ret: Ty,
    defined: bool,
}

struct Checker {
    prog: Program,
    sigs: Vec<Sig>,
    scopes: Vec<Scope>,
    fns: Vec<FnCtx>,
    label_water: Vec<VarId>,
    label_path: Vec<Option<Vec<u32>>>,
    next_block: u32,
}

/// An addressable aggregate or aggregate element.
#[derive(Debug, Clone)]
struct Desig {
    root: VarId,
    addr: Option<Expr>,
    disp: u32,
    rep: u32,
    ty: Ty,
    union: bool,
}

fn err<T>(pos: Pos, msg: impl Into<String>) -> R<T> {
    Err(Diagnostic::new(pos, msg))
}

fn int_ty() -> Ty {
    Ty::Basic(Basic::Int)
}

/// Reinterprets a pointer as its integer address.
fn as_int(e: Expr) -> Expr {
    Expr::new(e.kind, int_ty())
}

fn is_const(e: &Expr) -> Option<i32> {
    match (&e.kind, &e.ty) {
        (ExprKind::Const(v), Ty::Basic(Basic::Int)) => Some(*v as u32 as i32),
        _ => None,
    }
}

pub fn typecheck(unit: &ast::Unit) -> R<Program> {
    let mut c = Checker {
        prog: Program {
            vars: Vec::new(),
            aggs: Vec::new(),
            funcs: Vec::new(),
            labels: Vec::new(),
            globals: Vec::new(),
            init: Vec::new(),
            main: 0,
        },
        sigs: Vec::new(),
        scopes: vec![Scope::default()],
        fns: Vec::new(),
        label_water: Vec::new(),
        label_path: Vec::new(),
        next_block: 1,
    };
    for item in &unit.items {
        match item {
            ast::Item::Agg(a) => c.agg_def(a)?,
            ast::Item::Global(ds) => {
                let mut init = std::mem::take(&mut c.prog.init);
                for d in ds {
                    c.decl(d, VarRole::Global, &mut init)?;
                }
                c.prog.init = init;
            }
            ast::Item::Func(f) => {
                c.func_def(f, None)?;
            }
        }
    }
    let main = match c.scopes[0].names.get("main") {
        Some(Sym::Func(f)) => *f,
        _ => return err(Pos::default(), "no main function"),
    };
    if !c.sigs[main as usize].defined {
        return err(Pos::default(), "main is declared but not defined");
    }
    for p in &c.prog.funcs[main as usize].params {
        if c.prog.vars[*p as usize].ty.basic().is_none() {
            return err(Pos::default(), "main parameters must have basic types");
        }
    }
    if c.prog.init.iter().any(|s| matches!(s, Stmt::Call { .. })) {
        return err(Pos::default(), "function call in a global initialiser");
    }
    c.prog.main = main;
    Ok(c.prog)
}

impl Checker {
    // ---- scopes and symbols ------------------------------------------

    fn push_scope(&mut self, func: Option<FuncId>) {
        let block = self.next_block;
        self.next_block += 1;
        if let Some(f) = self.fns.last_mut() {
            f.path.push(block);
        }
        self.scopes.push(Scope {
            func,

            ..Scope::default()
        });
    }

    fn pop_scope(&mut self) {
        self.scopes.pop();
        if let Some(f) = self.fns.last_mut() {
            f.path.pop();
        }
    }

    fn cur_func(&self) -> Option<FuncId> {
        self.fns.last().map(|f| f.id)
    }

    fn lookup(&self, name: &str) -> Option<Sym> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.names.get(name).copied())
    }

    fn lookup_var(&self, name: &str, pos: Pos) -> R<VarId> {
        match self.lookup(name) {
            Some(Sym::Var(v)) => Ok(v),
            Some(Sym::Func(_)) => err(pos, format!("'{name}' is a function")),
            None => err(pos, format!("undeclared identifier '{name}'")),
        }
    }

    fn lookup_agg(&self, name: &str) -> Option<AggId> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.aggs.get(name).copied())
    }

    fn new_var(&mut self, name: &str, ty: Ty, role: VarRole) -> VarId {
        let id = self.prog.vars.len() as VarId;
        self.prog.vars.push(VarInfo {
            name: name.to_string(),
            ty,
            role,
            func: self.cur_func(),
        });
        id
    }

    fn bind(&mut self, name: &str, sym: Sym, pos: Pos) -> R<()> {
        let scope = self.scopes.last_mut().unwrap();
        if let (Some(Sym::Var(_)), Sym::Var(_)) = (scope.names.get(name), sym) {
            return err(pos, format!("redeclaration of '{name}'"));
        }
        scope.names.insert(name.to_string(), sym);
        Ok(())
    }

    fn temp(&mut self, ty: Ty) -> VarId {
        let n = self.prog.vars.len();
        self.new_var(&format!("_t{n}"), ty, VarRole::Temp)
    }

    fn var_ty(&self, v: VarId) -> &Ty {
        &self.prog.vars[v as usize].ty
    }

    // ---- types -------------------------------------------------------

    fn base_ty(&self, t: &TypeName, pos: Pos) -> R<Ty> {
        Ok(match t {
            TypeName::Void => Ty::Void,
            TypeName::Basic(b) => Ty::Basic(*b),
            TypeName::Struct(n) | TypeName::Union(n) => {
                let want_union = matches!(t, TypeName::Union(_));
                match self.lookup_agg(n) {
                    Some(id) if self.prog.aggs[id as usize].is_union == want_union => Ty::Agg(id),
                    _ => return err(pos, format!("unknown aggregate type '{n}'")),
                }
            }
        })
    }

    fn with_dims(ty: Ty, dims: &[u32]) -> Ty {
        dims.iter()
            .rev()
            .fold(ty, |t, n| Ty::Array(Box::new(t), *n))
    }

    fn agg_def(&mut self, a: &ast::AggDef) -> R<()> {
        let mut fields = Vec::new();
        let mut off = 0;
        let mut size = 0;
        for f in &a.fields {
            let base = self.base_ty(&f.base, a.pos)?;
            if base == Ty::Void {
                return err(a.pos, "void field");
            }
            if fields.iter().any(|g: &FieldDef| g.name == f.name) {
                return err(a.pos, format!("duplicate field '{}'", f.name));
            }
            let ty = Self::with_dims(base, &f.dims);
            let s = size_words(&ty, &self.prog.aggs);
            fields.push(FieldDef {
                name: f.name.clone(),
                ty,
                offset: if a.is_union { 0 } else { off },
            });
            off += s;
            size = if a.is_union { size.max(s) } else { off };
        }
        if fields.is_empty() {
            return err(a.pos, "empty aggregate");
        }
        let id = self.prog.aggs.len() as AggId;
        self.prog.aggs.push(AggDef {
            name: a.name.clone(),
            is_union: a.is_union,
            fields,
            size,
        });
        let scope = self.scopes.last_mut().unwrap();
        if scope.aggs.insert(a.name.clone(), id).is_some() {
            return err(a.pos, format!("redefinition of '{}'", a.name));
        }
        Ok(())
    }

    fn decl_ty(&self, d: &ast::Decl) -> R<Ty> {
        let base = self.base_ty(&d.base, d.pos)?;
        if base == Ty::Void {
            return err(d.pos, "variable of type void");
        }
        if d.pointer {
            let Some(a) = &d.restrict else {
                return err(d.pos, "pointer used without restrict binding");
            };
            if !d.dims.is_empty() {
                return err(d.pos, "arrays of pointers are not supported");
            }
            let av = self.lookup_var(a, d.pos)?;
            match self.var_ty(av) {
                Ty::Array(elem, _) if **elem == base => Ok(Ty::Ptr {
                    elem: elem.clone(),
                    array: av,
                }),
                Ty::Array(..) => err(d.pos, format!("pointer type does not match elements of '{a}'")),
                _ => err(d.pos, format!("restrict target '{a}' is not an array")),
            }
        } else {
            if d.restrict.is_some() {
                return err(d.pos, "restrict on a non-pointer");
            }
            Ok(Self::with_dims(base, &d.dims))
        }
    }

    // ---- conversions ---------------------------------------------------

    fn convert(&self, e: Expr, to: &Ty, pos: Pos) -> R<Expr> {
        if &e.ty == to {
            return Ok(e);
        }
        match (&e.ty, to) {
            (Ty::Basic(_), Ty::Basic(_)) => Ok(Expr::new(ExprKind::Cast(Box::new(e)), to.clone())),
            (Ty::Ptr { .. }, Ty::Ptr { .. }) => err(pos, "pointer into a different restrict array"),
            _ => err(pos, "type mismatch"),
        }
    }

    fn basic_of(&self, e: &Expr, pos: Pos) -> R<Basic> {
        e.basic()
            .ok_or_else(|| Diagnostic::new(pos, "arithmetic on a non-arithmetic value"))
    }

    fn integer_of(&self, e: &Expr, pos: Pos) -> R<Basic> {
        let b = self.basic_of(e, pos)?;
        if b.is_float() {
            return err(pos, "integer operand required");
        }
        Ok(b)
    }

    fn promote(&self, e: Expr, pos: Pos) -> R<Expr> {
        let b = self.basic_of(&e, pos)?.promote();
        self.convert(e, &Ty::Basic(b), pos)
    }

    fn ptr_offset(&self, p: Expr, i: Expr, negate: bool, pos: Pos) -> R<Expr> {
        let Ty::Ptr { elem, .. } = &p.ty else {
            unreachable!()
        };
        self.integer_of(&i, pos)?;
        let s = size_words(elem, &self.prog.aggs);
        let i = self.convert(i, &int_ty(), pos)?;
        let scaled = if s == 1 {
            i
        } else {
            Expr::new(
                ExprKind::Arith(Arith::Mul, Box::new(i), Box::new(Expr::int(s as i32))),
                int_ty(),
            )
        };
        let op = if negate { Arith::Sub } else { Arith::Add };
        let ty = p.ty.clone();
        Ok(Expr::new(
            ExprKind::Arith(op, Box::new(as_int(p)), Box::new(scaled)),
            ty,
        ))
    }

    fn binary(&self, op: BinOp, l: Expr, r: Expr, pos: Pos) -> R<Expr> {
        let rel = match op {
            BinOp::Lt => Some(Rel::Lt),
            BinOp::Le => Some(Rel::Le),
            BinOp::Gt => Some(Rel::Gt),
            BinOp::Ge => Some(Rel::Ge),
            BinOp::Eq => Some(Rel::Eq),
            BinOp::Ne => Some(Rel::Ne),
            _ => None,
        };
        match (l.ty.is_ptr(), r.ty.is_ptr()) {
            (false, false) => {}
            (true, false) if matches!(op, BinOp::Add | BinOp::Sub) => {
                return self.ptr_offset(l, r, op == BinOp::Sub, pos)
            }
            (false, true) if op == BinOp::Add => return self.ptr_offset(r, l, false, pos),
            (true, true) if l.ty == r.ty => {
                if let Some(rel) = rel {
                    return Ok(Expr::new(
                        ExprKind::Cmp(rel, Box::new(as_int(l)), Box::new(as_int(r))),
                        int_ty(),
                    ));
                }
                if op == BinOp::Sub {
                    let Ty::Ptr { elem, .. } = &l.ty else { unreachable!() };
                    let s = size_words(elem, &self.prog.aggs) as i32;
                    let d = Expr::new(
                        ExprKind::Arith(Arith::Sub, Box::new(as_int(l)), Box::new(as_int(r))),
                        int_ty(),
                    );
                    return Ok(if s == 1 {
                        d
                    } else {
                        Expr::new(
                            ExprKind::Arith(Arith::Div, Box::new(d), Box::new(Expr::int(s))),
                            int_ty(),
                        )
                    });
                }
                return err(pos, format!("invalid pointer operation '{}'", op.symbol()));
            }
            _ => return err(pos, format!("invalid pointer operation '{}'", op.symbol())),
        }
        let (lb, rb) = (self.basic_of(&l, pos)?, self.basic_of(&r, pos)?);
        if let Some(rel) = rel {
            let c = Ty::Basic(Basic::common(lb, rb));
            let l = self.convert(l, &c, pos)?;
            let r = self.convert(r, &c, pos)?;
            return Ok(Expr::new(ExprKind::Cmp(rel, Box::new(l), Box::new(r)), int_ty()));
        }
        let arith = match op {
            BinOp::Add => Arith::Add,
            BinOp::Sub => Arith::Sub,
            BinOp::Mul => Arith::Mul,
            BinOp::Div => Arith::Div,
            BinOp::Rem => Arith::Rem,
            BinOp::Shl => Arith::Shl,
            BinOp::Shr => Arith::Shr,
            BinOp::And => Arith::And,
            BinOp::Or => Arith::Or,
            BinOp::Xor => Arith::Xor,
            _ => unreachable!("logical operators handled by caller"),
        };
        if matches!(
            arith,
            Arith::Rem | Arith::Shl | Arith::Shr | Arith::And | Arith::Or | Arith::Xor
        ) {
            self.integer_of(&l, pos)?;
            self.integer_of(&r, pos)?;
        }
        let ty = if matches!(arith, Arith::Shl | Arith::Shr) {
            Ty::Basic(lb.promote())
        } else {
            Ty::Basic(Basic::common(lb, rb))
        };
        let l = self.convert(l, &ty, pos)?;
        let r = if matches!(arith, Arith::Shl | Arith::Shr) {
            let r = self.promote(r, pos)?;
            self.convert(r, &ty, pos)?
        } else {
            self.convert(r, &ty, pos)?
        };
        Ok(Expr::new(ExprKind::Arith(arith, Box::new(l), Box::new(r)), ty))
    }

    fn truth(&self, e: Expr, pos: Pos) -> R<Expr> {
        if !e.ty.is_scalar() || e.ty.is_ptr() {
            return err(pos, "scalar condition required");
        }
        let zero = self.convert(Expr::int(0), &e.ty, pos)?;
        Ok(Expr::new(
            ExprKind::Cmp(Rel::Ne, Box::new(e), Box::new(zero)),
            int_ty(),
        ))
    }

    // ---- places --------------------------------------------------------

    fn read(&self, lv: &LValue) -> Expr {
        match lv {
            LValue::Var(v) => Expr::new(ExprKind::Var(*v), self.var_ty(*v).clone()),
            LValue::Mem(m) => Expr::new(ExprKind::Load(Box::new(m.clone())), m.ty.clone()),
        }
    }

    fn lv_ty(&self, lv: &LValue) -> Ty {
        match lv {
            LValue::Var(v) => self.var_ty(*v).clone(),
            LValue::Mem(m) => m.ty.clone(),
        }
    }

    fn ptr_desig(&self, p: Expr, pos: Pos) -> R<Desig> {
        match &p.ty {
            Ty::Ptr { elem, array } => Ok(Desig {
                root: *array,
                ty: (**elem).clone(),
                addr: Some(as_int(p.clone())),
                disp: 0,
                rep: 0,
                union: false,
            }),
            _ => err(pos, "dereference of a non-pointer"),
        }
    }

    /// Designator for an aggregate-valued expression, or the pointer value
    /// of a pointer-valued one.
    fn desig_or_ptr(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> R<Result<Desig, Expr>> {
        match &e.kind {
            AK::Ident(n) => {
                let v = self.lookup_var(n, e.pos)?;
                match self.var_ty(v) {
                    Ty::Array(..) | Ty::Agg(_) => Ok(Ok(Desig {
                        root: v,
                        addr: None,
                        disp: 0,
                        rep: 0,
                        ty: self.var_ty(v).clone(),
                        union: false,
                    })),
                    _ => Ok(Err(self.rvalue(e, out)?)),
                }
            }
            AK::Index(..) | AK::Member(..) | AK::Arrow(..) | AK::Deref(_) => {
                Ok(Ok(self.desig(e, out)?))
            }
            _ => Ok(Err(self.rvalue(e, out)?)),
        }
    }

    fn desig(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> R<Desig> {
        match &e.kind {
            AK::Ident(_) => match self.desig_or_ptr(e, out)? {
                Ok(d) => Ok(d),
                Err(_) => err(e.pos, "not an aggregate"),
            },
            AK::Index(a, i) => {
                let base = self.desig_or_ptr(a, out)?;
                let idx = self.rvalue(i, out)?;
                self.integer_of(&idx, i.pos)?;
                let idx = self.convert(idx, &int_ty(), i.pos)?;
                match base {
                    Err(p) => {
                        if !p.ty.is_ptr() {
                            return err(e.pos, "subscript of a non-array");
                        }
                        let q = self.ptr_offset(p, idx, false, e.pos)?;
                        self.ptr_desig(q, e.pos)
                    }
                    Ok(mut d) => {
                        let Ty::Array(elem, n) = d.ty.clone() else {
                            return err(e.pos, "subscript of a non-array");
                        };
                        let s = size_words(&elem, &self.prog.aggs);
                        if let Some(k) = is_const(&idx) {
                            if k < 0 || k as u32 >= n {
                                return err(i.pos, format!("index {k} out of bounds for length {n}"));
                            }
                            d.disp += k as u32 * s;
                        } else {
                            let base = d.addr.take().unwrap_or_else(|| {
                                Expr::new(ExprKind::Base(d.root), int_ty())
                            });
                            let scaled = if s == 1 {
                                idx
                            } else {
                                Expr::new(
                                    ExprKind::Arith(Arith::Mul, Box::new(idx), Box::new(Expr::int(s as i32))),
                                    int_ty(),
                                )
                            };
                            d.addr = Some(Expr::new(
                                ExprKind::Arith(Arith::Add, Box::new(base), Box::new(scaled)),
                                int_ty(),
                            ));
                        }
                        d.ty = *elem;
                        Ok(d)
                    }
                }
            }
            AK::Member(a, f) => {
                let d = self.desig(a, out)?;
                self.member(d, f, e.pos)
            }
            AK::Arrow(p, f) => {
                let pv = self.rvalue(p, out)?;
                let d = self.ptr_desig(pv, e.pos)?;
                self.member(d, f, e.pos)
            }
            AK::Deref(p) => {
                let pv = self.rvalue(p, out)?;
                self.ptr_desig(pv, e.pos)
            }
            _ => err(e.pos, "expression is not addressable"),
        }
    }

    fn member(&self, mut d: Desig, f: &str, pos: Pos) -> R<Desig> {
        let Ty::Agg(id) = d.ty else {
            return err(pos, format!("member '{f}' of a non-aggregate"));
        };
        let def = &self.prog.aggs[id as usize];
        let Some(field) = def.field(f) else {
            return err(pos, format!("no member named '{f}' in '{}'", def.name));
        };
        d.disp += field.offset;
        d.rep += field.offset;
        d.union |= def.is_union;
        d.ty = field.ty.clone();
        Ok(d)
    }

    fn mem_place(&self, d: Desig, pos: Pos) -> R<MemPlace> {
        match d.ty {
            Ty::Basic(b) => Ok(MemPlace {
                root: d.root,
                addr: d.addr,
                disp: d.disp,
                rep: d.rep,
                ty: d.ty,
                canon: d.union && b.is_narrow(),
            }),
            _ => err(pos, "aggregate used as a scalar"),
        }
    }

    fn lvalue(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> R<LValue> {
        if let AK::Ident(n) = &e.kind {
            let v = self.lookup_var(n, e.pos)?;
            if self.var_ty(v).is_scalar() {
                return Ok(LValue::Var(v));
            }
            return err(e.pos, "aggregates cannot be assigned");
        }
        let d = self.desig(e, out)?;
        Ok(LValue::Mem(self.mem_place(d, e.pos)?))
    }

    // ---- expressions ---------------------------------------------------

    fn literal_int(&self, value: u64, unsigned: bool, long: u8, decimal_like: bool) -> Expr {
        let fits_i32 = value <= i32::MAX as u64;
        let fits_u32 = value <= u32::MAX as u64;
        let fits_i64 = value <= i64::MAX as u64;
        let b = if unsigned {
            match long {
                2 => Basic::ULLong,
                1 if fits_u32 => Basic::ULong,
                0 if fits_u32 => Basic::UInt,
                _ => Basic::ULLong,
            }
        } else if long == 2 {
            if fits_i64 || decimal_like {
                Basic::LLong
            } else {
                Basic::ULLong
            }
        } else if fits_i32 {
            if long == 1 {
                Basic::Long
            } else {
                Basic::Int
            }
        } else if !decimal_like && fits_u32 {
            if long == 1 {
                Basic::ULong
            } else {
                Basic::UInt
            }
        } else if fits_i64 {
            Basic::LLong
        } else {
            Basic::ULLong
        };
        Expr::new(ExprKind::Const(b.canonical(value)), Ty::Basic(b))
    }

    fn rvalue(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> R<Expr> {
        let pos = e.pos;
        match &e.kind {
            AK::Int {
                value,
                unsigned,
                long,
            } => Ok(self.literal_int(*value, *unsigned, *long, false)),
            AK::Float { value, single } => Ok(if *single {
                Expr::new(
                    ExprKind::Const(u64::from((*value as f32).to_bits())),
                    Ty::Basic(Basic::Float),
                )
            } else {
                Expr::new(ExprKind::Const(value.to_bits()), Ty::Basic(Basic::Double))
            }),
            AK::Char(c) => Ok(Expr::int(*c as i32)),
            AK::Ident(n) => {
                let v = self.lookup_var(n, pos)?;
                match self.var_ty(v).clone() {
                    Ty::Array(elem, _) => Ok(Expr::new(
                        ExprKind::Base(v),
                        Ty::Ptr { elem, array: v },
                    )),
                    Ty::Agg(_) => err(pos, "aggregate used as a value"),
                    ty => Ok(Expr::new(ExprKind::Var(v), ty)),
                }
            }
            AK::Unary(op, a) => {
                let x = self.rvalue(a, out)?;
                match op {
                    UnOp::Plus => self.promote(x, pos),
                    UnOp::Neg => {
                        let x = self.promote(x, pos)?;
                        let ty = x.ty.clone();
                        Ok(Expr::new(ExprKind::Neg(Box::new(x)), ty))
                    }
                    UnOp::BitNot => {
                        self.integer_of(&x, pos)?;
                        let x = self.promote(x, pos)?;
                        let ty = x.ty.clone();
                        Ok(Expr::new(ExprKind::BitNot(Box::new(x)), ty))
                    }
                    UnOp::Not => {
                        if !x.ty.is_scalar() || x.ty.is_ptr() {
                            return err(pos, "scalar operand required");
                        }
                        Ok(Expr::new(ExprKind::Not(Box::new(x)), int_ty()))
                    }
                }
            }
            AK::Binary(op @ (BinOp::LogAnd | BinOp::LogOr), a, b) => {
                let l = self.rvalue(a, out)?;
                let mut rs = Vec::new();
                let r = self.rvalue(b, &mut rs)?;
                for x in [&l, &r] {
                    if !x.ty.is_scalar() || x.ty.is_ptr() {
                        return err(pos, "scalar operand required");
                    }
                }
                if rs.is_empty() {
                    let kind = if *op == BinOp::LogAnd {
                        ExprKind::LogAnd(Box::new(l), Box::new(r))
                    } else {
                        ExprKind::LogOr(Box::new(l), Box::new(r))
                    };
                    return Ok(Expr::new(kind, int_ty()));
                }
                let t = self.temp(int_ty());
                out.push(Stmt::Decl(t, Some(self.truth(l, pos)?)));
                let tv = Expr::new(ExprKind::Var(t), int_ty());
                rs.push(Stmt::Assign(LValue::Var(t), self.truth(r, pos)?));
                if *op == BinOp::LogAnd {
                    out.push(Stmt::If(tv.clone(), rs, vec![]));
                } else {
                    out.push(Stmt::If(tv.clone(), vec![], rs));
                }
                Ok(tv)
            }
            AK::Binary(op, a, b) => {
                let l = self.rvalue(a, out)?;
                let r = self.rvalue(b, out)?;
                self.binary(*op, l, r, pos)
            }
            AK::Assign(op, lhs, rhs) => {
                let lv = self.lvalue(lhs, out)?;
                self.assign(lv, *op, rhs, out, pos)
            }
            AK::IncDec { pre, inc, target } => {
                let lv = self.lvalue(target, out)?;
                let op = if *inc { BinOp::Add } else { BinOp::Sub };
                let ty = self.lv_ty(&lv);
                if *pre {
                    let v = self.binary(op, self.read(&lv), Expr::int(1), pos)?;
                    let v = self.convert(v, &ty, pos)?;
                    out.push(Stmt::Assign(lv.clone(), v));
                    Ok(self.read(&lv))
                } else {
                    let t = self.temp(ty.clone());
                    out.push(Stmt::Decl(t, Some(self.read(&lv))));
                    let tv = Expr::new(ExprKind::Var(t), ty.clone());
                    let v = self.binary(op, tv.clone(), Expr::int(1), pos)?;
                    let v = self.convert(v, &ty, pos)?;
                    out.push(Stmt::Assign(lv, v));
                    Ok(tv)
                }
            }
            AK::Cond(c, a, b) => {
                let c = self.rvalue(c, out)?;
                if !c.ty.is_scalar() || c.ty.is_ptr() {
                    return err(pos, "scalar condition required");
                }
                let (mut ra, mut rb) = (Vec::new(), Vec::new());
                let x = self.rvalue(a, &mut ra)?;
                let y = self.rvalue(b, &mut rb)?;
                let ty = match (&x.ty, &y.ty) {
                    (Ty::Basic(p), Ty::Basic(q)) => Ty::Basic(Basic::common(*p, *q)),
                    (p, q) if p == q => p.clone(),
                    _ => return err(pos, "mismatched conditional operand types"),
                };
                let x = self.convert(x, &ty, pos)?;
                let y = self.convert(y, &ty, pos)?;
                if ra.is_empty() && rb.is_empty() {
                    return Ok(Expr::new(
                        ExprKind::Cond(Box::new(c), Box::new(x), Box::new(y)),
                        ty,
                    ));
                }
                let t = self.temp(ty.clone());
                out.push(Stmt::Decl(t, None));
                ra.push(Stmt::Assign(LValue::Var(t), x));
                rb.push(Stmt::Assign(LValue::Var(t), y));
                out.push(Stmt::If(c, ra, rb));
                Ok(Expr::new(ExprKind::Var(t), ty))
            }
            AK::Cast(b, a) => {
                let x = self.rvalue(a, out)?;
                if x.ty.basic().is_none() {
                    return err(pos, "cast of a non-arithmetic value");
                }
                self.convert(x, &Ty::Basic(*b), pos)
            }
            AK::Call(name, args) => {
                if name == "emit" {
                    return err(pos, "emit has no value");
                }
                let (f, args) = self.call_args(name, args, out, pos)?;
                let ret = self.sigs[f as usize].ret.clone();
                if ret == Ty::Void {
                    return err(pos, "void value used");
                }
                let t = self.temp(ret.clone());
                out.push(Stmt::Call {
                    dest: Some(t),
                    func: f,
                    args,
                });
                Ok(Expr::new(ExprKind::Var(t), ret))
            }
            AK::Index(..) | AK::Member(..) | AK::Arrow(..) | AK::Deref(_) => {
                let d = self.desig(e, out)?;
                let m = self.mem_place(d, pos)?;
                let ty = m.ty.clone();
                Ok(Expr::new(ExprKind::Load(Box::new(m)), ty))
            }
            AK::AddrOf(inner) => match &inner.kind {
                AK::Index(a, i) => {
                    let p = self.rvalue(a, out)?;
                    if !p.ty.is_ptr() {
                        return err(pos, "address-of is only supported on array elements");
                    }
                    let i = self.rvalue(i, out)?;
                    self.ptr_offset(p, i, false, pos)
                }
                _ => err(pos, "address-of is only supported on array elements"),
            },
            AK::Comma(a, b) => {
                self.rvalue(a, out)?;
                self.rvalue(b, out)
            }
        }
    }

    fn assign(
        &mut self,
        lv: LValue,
        op: Option<BinOp>,
        rhs: &ast::Expr,
        out: &mut Vec<Stmt>,
        pos: Pos,
    ) -> R<Expr> {
        let r = self.rvalue(rhs, out)?;
        let ty = self.lv_ty(&lv);
        let v = match op {
            Some(op) => self.binary(op, self.read(&lv), r, pos)?,
            None => r,
        };
        let v = self.convert(v, &ty, pos)?;
        out.push(Stmt::Assign(lv.clone(), v));
        Ok(self.read(&lv))
    }

    fn call_args(
        &mut self,
        name: &str,
        args: &[ast::Expr],
        out: &mut Vec<Stmt>,
        pos: Pos,
    ) -> R<(FuncId, Vec<Expr>)> {
        let f = match self.lookup(name) {
            Some(Sym::Func(f)) => f,
            Some(Sym::Var(_)) => return err(pos, format!("'{name}' is not a function")),
            None => return err(pos, format!("undeclared function '{name}'")),
        };
        let params = self.sigs[f as usize].params.clone();
        if params.len() != args.len() {
            return err(
                pos,
                format!("'{name}' takes {} arguments, {} given", params.len(), args.len()),
            );
        }
        let mut vals = Vec::new();
        for (a, p) in args.iter().zip(&params) {
            let v = self.rvalue(a, out)?;
            vals.push(self.convert(v, p, a.pos)?);
        }
        Ok((f, vals))
    }

    // ---- declarations and statements ------------------------------------

    fn scalar_leaves(&self, ty: &Ty, base: u32, out: &mut Vec<(u32, Ty)>) {
        match ty {
            Ty::Array(e, n) => {
                let s = size_words(e, &self.prog.aggs);
                for i in 0..*n {
                    self.scalar_leaves(e, base + i * s, out);
                }
            }
            Ty::Agg(id) => {
                let def = &self.prog.aggs[*id as usize];
                let fields: Vec<FieldDef> = if def.is_union {
                    def.fields[..1].to_vec()
                } else {
                    def.fields.clone()
                };
                for f in fields {
                    self.scalar_leaves(&f.ty, base + f.offset, out);
                }
            }
            t => out.push((base, t.clone())),
        }
    }

    fn flatten<'a>(init: &'a Init, out: &mut Vec<&'a ast::Expr>) {
        match init {
            Init::Expr(e) => out.push(e),
            Init::List(items) => items.iter().for_each(|i| Self::flatten(i, out)),
        }
    }

    fn decl(&mut self, d: &ast::Decl, role: VarRole, out: &mut Vec<Stmt>) -> R<()> {
        let ty = self.decl_ty(d)?;
        if ty.is_scalar() {
            let init = match &d.init {
                None => None,
                Some(Init::Expr(e)) => {
                    let v = self.rvalue(e, out)?;
                    Some(self.convert(v, &ty, e.pos)?)
                }
                Some(Init::List(items)) => match items.as_slice() {
                    [Init::Expr(e)] => {
                        let v = self.rvalue(e, out)?;
                        Some(self.convert(v, &ty, e.pos)?)
                    }
                    _ => return err(d.pos, "braced initialiser for a scalar"),
                },
            };
            let v = self.new_var(&d.name, ty, role);
            self.bind(&d.name, Sym::Var(v), d.pos)?;
            if role == VarRole::Global {
                self.prog.globals.push(v);
            }
            out.push(Stmt::Decl(v, init));
            return Ok(());
        }
        let v = self.new_var(&d.name, ty.clone(), role);
        self.bind(&d.name, Sym::Var(v), d.pos)?;
        if role == VarRole::Global {
            self.prog.globals.push(v);
        }
        out.push(Stmt::Decl(v, None));
        if let Some(init) = &d.init {
            let mut leaves = Vec::new();
            self.scalar_leaves(&ty, 0, &mut leaves);
            let mut exprs = Vec::new();
            Self::flatten(init, &mut exprs);
            if exprs.len() > leaves.len() {
                return err(d.pos, "too many initialisers");
            }
            for ((disp, lty), e) in leaves.into_iter().zip(exprs) {
                let x = self.rvalue(e, out)?;
                let x = self.convert(x, &lty, e.pos)?;
                let place = MemPlace {
                    root: v,
                    addr: None,
                    disp,
                    rep: disp,
                    ty: lty,
                    canon: false,
                };
                out.push(Stmt::Assign(LValue::Mem(place), x));
            }
        }
        Ok(())
    }

    fn func_def(&mut self, f: &ast::FuncDef, parent: Option<FuncId>) -> R<FuncId> {
        let ret = self.base_ty(&f.ret, f.pos)?;
        if matches!(ret, Ty::Agg(_)) {
            return err(f.pos, "aggregate return types are not supported");
        }
        let mut ptys = Vec::new();
        for p in &f.params {
            if !p.dims.is_empty() {
                return err(p.pos, "array parameters are not supported; use a restrict pointer");
            }
            let t = self.decl_ty(p)?;
            if !t.is_scalar() {
                return err(p.pos, "aggregate parameters are not supported");
            }
            ptys.push(t);
        }
        let existing = match self.scopes.last().unwrap().names.get(&f.name) {
            Some(Sym::Func(id)) => Some(*id),
            Some(Sym::Var(_)) => return err(f.pos, format!("'{}' redeclared as a function", f.name)),
            None => None,
        };
        let id = match existing {
            Some(id) => {
                let s = &self.sigs[id as usize];
                if s.params != ptys || s.ret != ret {
                    return err(f.pos, format!("conflicting declaration of '{}'", f.name));
                }
                id
            }
            None => {
                let id = self.prog.funcs.len() as FuncId;
                self.prog.funcs.push(Func {
                    name: f.name.clone(),
                    params: vec![],
                    ret: ret.clone(),
                    body: vec![],
                    parent,
                });
                self.sigs.push(Sig {
                    params: ptys.clone(),
                    ret: ret.clone(),
                    defined: false,
                });
                self.bind(&f.name, Sym::Func(id), f.pos)?;
                id
            }
        };
        let Some(body) = &f.body else {
            return Ok(id);
        };
        if self.sigs[id as usize].defined {
            return err(f.pos, format!("redefinition of '{}'", f.name));
        }
        self.sigs[id as usize].defined = true;
        self.fns.push(FnCtx {
            id,
            loops: 0,
            path: vec![],
            gotos: vec![],
        });
        self.push_scope(Some(id));
        let mut params = Vec::new();
        for (p, t) in f.params.iter().zip(ptys) {
            let v = self.new_var(&p.name, t, VarRole::Param);
            self.bind(&p.name, Sym::Var(v), p.pos)?;
            params.push(v);
        }
        let mut out = Vec::new();
        for s in body {
            self.stmt(s, &mut out)?;
        }
        self.pop_scope();
        let ctx = self.fns.pop().unwrap();
        for (l, path, pos) in ctx.gotos {
            match &self.label_path[l as usize] {
                None => return err(pos, "goto to a label that is never defined"),
                Some(lp) if !path.starts_with(lp) => {
                    return err(pos, "goto into a nested block is not supported")
                }
                _ => {}
            }
        }
        let func = &mut self.prog.funcs[id as usize];
        func.params = params;
        func.body = out;
        Ok(id)
    }

    fn scoped(&mut self, s: &ast::Stmt) -> R<Vec<Stmt>> {
        self.push_scope(self.cur_func());
        let mut out = Vec::new();
        let r = self.stmt(s, &mut out);
        self.pop_scope();
        r.map(|_| out)
    }

    fn cond(&mut self, c: &ast::Expr, out: &mut Vec<Stmt>) -> R<Expr> {
        let e = self.rvalue(c, out)?;
        if !e.ty.is_scalar() || e.ty.is_ptr() {
            return err(c.pos, "scalar condition required");
        }
        Ok(e)
    }

    fn find_label(&self, name: &str, pos: Pos) -> R<LabelId> {
        let func = self.cur_func();
        for s in self.scopes.iter().rev() {
            if let Some(l) = s.labels.get(name) {
                return Ok(*l);
            }
            if s.func != func {
                break;
            }
        }
        err(pos, format!("label '{name}' must be declared with __label__ first"))
    }

    fn expr_stmt(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> R<()> {
        match &e.kind {
            AK::Call(name, args) if name == "emit" => {
                if args.len() != 1 {
                    return err(e.pos, "emit takes one argument");
                }
                let v = self.rvalue(&args[0], out)?;
                if v.ty.basic().is_none() {
                    return err(e.pos, "emit of a non-arithmetic value");
                }
                let v = self.promote(v, e.pos)?;
                out.push(Stmt::Emit(v));
            }
            AK::Call(name, args) => {
                let (f, args) = self.call_args(name, args, out, e.pos)?;
                out.push(Stmt::Call {
                    dest: None,
                    func: f,
                    args,
                });
            }
            AK::IncDec { inc, target, .. } => {
                let lv = self.lvalue(target, out)?;
                let op = if *inc { BinOp::Add } else { BinOp::Sub };
                let ty = self.lv_ty(&lv);
                let v = self.binary(op, self.read(&lv), Expr::int(1), e.pos)?;
                let v = self.convert(v, &ty, e.pos)?;
                out.push(Stmt::Assign(lv, v));
            }
            AK::Comma(a, b) => {
                self.expr_stmt(a, out)?;
                self.expr_stmt(b, out)?;
            }
            _ => {
                self.rvalue(e, out)?;
            }
        }
        Ok(())
    }

    fn stmt(&mut self, s: &ast::Stmt, out: &mut Vec<Stmt>) -> R<()> {
        let pos = s.pos;
        match &s.kind {
            StmtKind::Empty => {}
            StmtKind::Decl(ds) => {
                for d in ds {
                    self.decl(d, VarRole::Local, out)?;
                }
            }
            StmtKind::Agg(a) => self.agg_def(a)?,
            StmtKind::Func(f) => {
                let id = self.func_def(f, self.cur_func())?;
                out.push(Stmt::FuncDecl(id));
            }
            StmtKind::Expr(e) => self.expr_stmt(e, out)?,
            StmtKind::If(c, t, e) => {
                let c = self.cond(c, out)?;
                let tb = self.scoped(t)?;
                let eb = match e {
                    Some(e) => self.scoped(e)?,
                    None => vec![],
                };
                out.push(Stmt::If(c, tb, eb));
            }
            StmtKind::While(c, body) => {
                let mut pre = Vec::new();
                let cond = self.cond(c, &mut pre)?;
                let body = self.loop_body(body)?;
                out.push(Stmt::Loop(Box::new(Loop {
                    test_first: true,
                    pre,
                    cond,
                    body,
                    step: vec![],
                })));
            }
            StmtKind::DoWhile(body, c) => {
                let body = self.loop_body(body)?;
                let mut pre = Vec::new();
                let cond = self.cond(c, &mut pre)?;
                out.push(Stmt::Loop(Box::new(Loop {
                    test_first: false,
                    pre,
                    cond,
                    body,
                    step: vec![],
                })));
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                self.push_scope(self.cur_func());
                let r = (|| {
                    let mut inner = Vec::new();
                    if let Some(i) = init {
                        self.stmt(i, &mut inner)?;
                    }
                    let mut pre = Vec::new();
                    let cond = match cond {
                        Some(c) => self.cond(c, &mut pre)?,
                        None => Expr::int(1),
                    };
                    let mut st = Vec::new();
                    if let Some(e) = step {
                        self.expr_stmt(e, &mut st)?;
                    }
                    let body = self.loop_body(body)?;
                    inner.push(Stmt::Loop(Box::new(Loop {
                        test_first: true,
                        pre,
                        cond,
                        body,
                        step: st,
                    })));
                    Ok(inner)
                })();
                self.pop_scope();
                out.push(Stmt::Block(r?));
            }
            StmtKind::Block(b) => {
                self.push_scope(self.cur_func());
                let mut inner = Vec::new();
                let r = b.iter().try_for_each(|s| self.stmt(s, &mut inner));
                self.pop_scope();
                r?;
                out.push(Stmt::Block(inner));
            }
            StmtKind::Return(e) => {
                let Some(f) = self.cur_func() else {
                    return err(pos, "return outside a function");
                };
                let ret = self.sigs[f as usize].ret.clone();
                match (e, &ret) {
                    (None, Ty::Void) => out.push(Stmt::Return(None)),
                    (None, _) => return err(pos, "return without a value"),
                    (Some(_), Ty::Void) => return err(pos, "return with a value in a void function"),
                    (Some(e), _) => {
                        let v = self.rvalue(e, out)?;
                        out.push(Stmt::Return(Some(self.convert(v, &ret, e.pos)?)));
                    }
                }
            }
            StmtKind::Break | StmtKind::Continue => {
                if self.fns.last().map_or(0, |f| f.loops) == 0 {
                    return err(pos, "break or continue outside a loop");
                }
                out.push(if matches!(s.kind, StmtKind::Break) {
                    Stmt::Break
                } else {
                    Stmt::Continue
                });
            }
            StmtKind::LabelDecl(names) => {
                let Some(func) = self.cur_func() else {
                    return err(pos, "__label__ outside a function");
                };
                for n in names {
                    let id = self.prog.labels.len() as LabelId;
                    self.prog.labels.push(LabelInfo {
                        name: n.clone(),
                        func,
                    });
                    self.label_water.push(self.prog.vars.len() as VarId);
                    self.label_path.push(None);
                    let scope = self.scopes.last_mut().unwrap();
                    if scope.labels.insert(n.clone(), id).is_some() {
                        return err(pos, format!("label '{n}' declared twice"));
                    }
                    out.push(Stmt::LabelDecl(id));
                }
            }
            StmtKind::Label(n) => {
                let id = self.find_label(n, pos)?;
                if self.label_path[id as usize].is_some() {
                    return err(pos, format!("label '{n}' defined twice"));
                }
                let water = self.label_water[id as usize];
                for sc in &self.scopes {
                    for (name, sym) in &sc.names {
                        if let Sym::Var(v) = sym {
                            if *v >= water {
                                return err(
                                    pos,
                                    format!("'{name}' is declared after __label__ {n} but live at the label"),
                                );
                            }
                        }
                    }
                }
                self.label_path[id as usize] = Some(self.fns.last().unwrap().path.clone());
                out.push(Stmt::Label(id));
            }
            StmtKind::Goto(n) => {
                let id = self.find_label(n, pos)?;
                let ctx = self.fns.last_mut().unwrap();
                let path = ctx.path.clone();
                ctx.gotos.push((id, path, pos));
                out.push(Stmt::Goto(id));
            }
        }
        Ok(())
    }

    fn loop_body(&mut self, body: &ast::Stmt) -> R<Vec<Stmt>> {
        self.fns.last_mut().unwrap().loops += 1;
        let r = self.scoped(body);
        self.fns.last_mut().unwrap().loops -= 1;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::super::compile_source;
    use super::*;

    fn main_body(src: &str) -> Vec<Stmt> {
        let p = compile_source(src).unwrap();
        p.funcs[p.main as usize].body.clone()
    }

    fn msg(src: &str) -> String {
        compile_source(src).unwrap_err().message
    }

    #[test]
    fn shorts_are_promoted_to_int() {
        let b = main_body("int main(short a, short b) { return a + b; }");
        let Stmt::Return(Some(e)) = &b[0] else { panic!() };
        let ExprKind::Arith(Arith::Add, l, r) = &e.kind else { panic!("{e:?}") };
        assert_eq!(e.ty, Ty::Basic(Basic::Int));
        for x in [l, r] {
            assert!(matches!(x.kind, ExprKind::Cast(_)));
            assert_eq!(x.ty, Ty::Basic(Basic::Int));
        }
    }

    #[test]
    fn int_to_double_gets_implicit_cast() {
        let b = main_body("int main(int a) { double d; d = a; return 0; }");
        let Stmt::Assign(_, e) = &b[1] else { panic!("{b:?}") };
        assert_eq!(e.ty, Ty::Basic(Basic::Double));
        let ExprKind::Cast(inner) = &e.kind else { panic!() };
        assert_eq!(inner.ty, Ty::Basic(Basic::Int));
    }

    #[test]
    fn goto_needs_prior_label_declaration() {
        assert!(msg("int main() { goto L; __label__ L; L: return 0; }").contains("__label__"));
        assert!(compile_source("int main() { __label__ L; goto L; L: return 0; }").is_ok());
        assert!(msg("int main() { __label__ L; int x = 1; L: return x; }").contains("declared after"));
    }

    #[test]
    fn errors() {
        assert!(msg("int main() { return y; }").contains("undeclared"));
        assert!(msg("int main() { int A[3]; int *p; return 0; }").contains("restrict"));
        assert!(msg("int main() { float f; return f % 2; }").contains("integer"));
        assert!(msg("int f(int a) { return a; } int main() { return f(); }").contains("arguments"));
    }

    #[test]
    fn calls_are_hoisted_left_to_right() {
        let b = main_body(
            "int f(int x) { return x; } int g(int x) { return x; } \
             int main(int a) { return f(a) + g(a); }",
        );
        assert!(matches!(b[0], Stmt::Call { func: 0, .. }));
        assert!(matches!(b[1], Stmt::Call { func: 1, .. }));
        assert!(matches!(b[2], Stmt::Return(Some(_))));
    }

    #[test]
    fn short_circuit_with_effects_becomes_if() {
        let b = main_body("int f(int x) { return x; } int main(int a) { return a && f(a); }");
        assert!(matches!(b[0], Stmt::Decl(_, Some(_))));
        assert!(matches!(&b[1], Stmt::If(_, t, e) if !t.is_empty() && e.is_empty()));
    }

    #[test]
    fn array_places() {
        let b = main_body(
            "struct P { int x; double y; }; int main(int i) { struct P A[4]; A[2].y = 1.0; A[i].x = 3; return 0; }",
        );
        let Stmt::Assign(LValue::Mem(m), _) = &b[1] else { panic!() };
        assert!(m.addr.is_none());
        assert_eq!((m.disp, m.rep), (7, 1));
        let Stmt::Assign(LValue::Mem(m), _) = &b[2] else { panic!() };
        assert!(m.addr.is_some());
        assert_eq!((m.disp, m.rep), (0, 0));
    }

    #[test]
    fn no_narrow_arithmetic_after_typecheck() {
        fn check(e: &Expr) {
            if let ExprKind::Arith(_, l, r) = &e.kind {
                for x in [l, r] {
                    if let Some(b) = x.basic() {
                        assert!(!b.is_narrow(), "{e:?}");
                    }
                }
            }
        }
        let b = main_body(
            "int main(char a, unsigned short b) { _Bool c = a; return (a * b) ^ (c << a); }",
        );
        let Stmt::Return(Some(e)) = &b[1] else { panic!() };
        check(e);
    }
}
