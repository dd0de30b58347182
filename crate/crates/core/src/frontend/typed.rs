//! The type-annotated, desugared program shared by the code generator and
//! the plaintext oracle.
//!
//! Expressions here are side-effect free. Assignments, calls, increments and
//! short-circuit operators whose right side has effects have been hoisted
//! into statements, evaluated left to right. Integer promotions and the
//! usual arithmetic conversions are explicit [`ExprKind::Cast`] nodes.

use crate::cipher::{Flavor, Rel};
use crate::obfuscation::VarId;

pub use super::types::{AggDef, AggId, Basic, Ty};

pub type FuncId = u32;
pub type LabelId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    Global,
    Param,
    Local,
    /// Introduced by desugaring.
    Temp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarInfo {
    pub name: String,
    pub ty: Ty,
    pub role: VarRole,
    pub func: Option<FuncId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Func {
    pub name: String,
    pub params: Vec<VarId>,
    pub ret: Ty,
    pub body: Vec<Stmt>,
    /// Enclosing function of an interior function.
    pub parent: Option<FuncId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelInfo {
    pub name: String,
    pub func: FuncId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub vars: Vec<VarInfo>,
    pub aggs: Vec<AggDef>,
    pub funcs: Vec<Func>,
    pub labels: Vec<LabelInfo>,
    pub globals: Vec<VarId>,
    /// Global initialisers, run before `main`'s body.
    pub init: Vec<Stmt>,
    pub main: FuncId,
}

impl Program {
    pub fn var(&self, v: VarId) -> &VarInfo {
        &self.vars[v as usize]
    }

    pub fn func(&self, f: FuncId) -> &Func {
        &self.funcs[f as usize]
    }

    /// Types of `main`'s parameters, which are the program inputs.
    pub fn input_types(&self) -> Vec<Basic> {
        self.func(self.main)
            .params
            .iter()
            .map(|p| self.var(*p).ty.basic().expect("scalar main parameter"))
            .collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        self.func(self.main)
            .params
            .iter()
            .map(|p| self.var(*p).name.clone())
            .collect()
    }

    pub fn return_type(&self) -> Option<Basic> {
        self.func(self.main).ret.basic()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    And,
    Or,
    Xor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    /// Always a `Ty::Basic` or `Ty::Ptr`.
    pub ty: Ty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    /// Canonical bits of a value of `ty`.
    Const(u64),
    Var(VarId),
    Load(Box<MemPlace>),
    Neg(Box<Expr>),
    BitNot(Box<Expr>),
    /// Both operands already converted to the result type.
    Arith(Arith, Box<Expr>, Box<Expr>),
    /// Operands share a type; result is `int` 0 or 1.
    Cmp(Rel, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    LogAnd(Box<Expr>, Box<Expr>),
    LogOr(Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
    /// Conversion from the operand's type to `ty`.
    Cast(Box<Expr>),
    /// Word address of an aggregate variable.
    Base(VarId),
}

impl Expr {
    pub fn new(kind: ExprKind, ty: Ty) -> Self {
        Expr { kind, ty }
    }

    pub fn int(v: i32) -> Self {
        Expr::new(ExprKind::Const(u64::from(v as u32)), Ty::Basic(Basic::Int))
    }

    pub fn basic(&self) -> Option<Basic> {
        self.ty.basic()
    }

    /// Comparison flavour for operands of this expression's type.
    pub fn flavor(&self) -> Flavor {
        match &self.ty {
            Ty::Basic(b) => b.flavor(),
            _ => Flavor::Signed,
        }
    }
}

/// A scalar in memory: word address `addr + disp`, where `addr` defaults to
/// the base of `root`. `rep` is the word's representative position inside
/// `root` with dynamic indices taken as zero, which fixes its offset class.
#[derive(Debug, Clone, PartialEq)]
pub struct MemPlace {
    pub root: VarId,
    pub addr: Option<Expr>,
    pub disp: u32,
    pub rep: u32,
    pub ty: Ty,
    /// A narrow value read through a union may hold bits written as another
    /// type; reads canonicalise it.
    pub canon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(VarId),
    Mem(MemPlace),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    /// `while`/`for` test before the body; `do` tests after it.
    pub test_first: bool,
    /// Statements feeding the condition, run before every test.
    pub pre: Vec<Stmt>,
    pub cond: Expr,
    pub body: Vec<Stmt>,
    /// The `for` step; `continue` lands here.
    pub step: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    /// Scalars take the initialiser or zero; aggregates are zero-filled.
    Decl(VarId, Option<Expr>),
    Assign(LValue, Expr),
    Call {
        dest: Option<VarId>,
        func: FuncId,
        args: Vec<Expr>,
    },
    Emit(Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Loop(Box<Loop>),
    Break,
    Continue,
    Return(Option<Expr>),
    Block(Vec<Stmt>),
    LabelDecl(LabelId),
    Label(LabelId),
    Goto(LabelId),
    /// Declaration point of an interior function.
    FuncDecl(FuncId),
}
