//! Recursive-descent parser for the C subset.

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::types::Basic;
use super::{Diagnostic, Pos};

pub fn parse(src: &str) -> Result<Unit, Diagnostic> {
    let toks = lex(src)?;
    let mut p = Parser { toks, at: 0 };
    let mut items = Vec::new();
    while !p.is_eof() {
        items.push(p.item()?);
    }
    Ok(Unit { items })
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

const TYPE_WORDS: &[&str] = &[
    "void", "_Bool", "char", "short", "int", "long", "signed", "unsigned", "float", "double",
    "struct", "union",
];

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.at + n).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn is_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at < self.toks.len() - 1 {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::new(self.pos(), msg))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.unexpected(&format!("'{p}'"))
        }
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        match self.peek() {
            Tok::Str(_) => self.err("unsupported feature: string literal"),
            Tok::Punct("...") => self.err("unsupported feature: varargs"),
            t => self.err(format!("expected {wanted}, found {}", describe(t))),
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn starts_type(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str()) || s == "restrict" || s == "const")
    }

    /// Parses a type specifier list. Returns the type and, for
    /// `struct S { ... }`, the inline definition.
    fn type_name(&mut self) -> PResult<(TypeName, Option<AggDef>)> {
        while self.eat_word("const") {}
        let pos = self.pos();
        if self.is_word("struct") || self.is_word("union") {
            let is_union = self.is_word("union");
            self.advance();
            let name = self.ident()?;
            let def = if self.is_punct("{") {
                Some(self.agg_body(pos, is_union, name.clone())?)
            } else {
                None
            };
            let t = if is_union {
                TypeName::Union(name)
            } else {
                TypeName::Struct(name)
            };
            return Ok((t, def));
        }
        let mut words = Vec::new();
        while let Tok::Ident(s) = self.peek() {
            if ["void", "_Bool", "char", "short", "int", "long", "signed", "unsigned", "float", "double"]
                .contains(&s.as_str())
            {
                words.push(s.clone());
                self.advance();
            } else if s == "const" {
                self.advance();
            } else {
                break;
            }
        }
        if words.is_empty() {
            return self.unexpected("type");
        }
        let count = |w: &str| words.iter().filter(|x| *x == w).count();
        let unsigned = count("unsigned") > 0;
        let signed = count("signed") > 0;
        let bad = || Diagnostic::new(pos, format!("invalid type '{}'", words.join(" ")));
        if unsigned && signed || count("unsigned") > 1 || count("signed") > 1 {
            return Err(bad());
        }
        let core: Vec<&str> = words
            .iter()
            .map(String::as_str)
            .filter(|w| *w != "signed" && *w != "unsigned")
            .collect();
        let basic = match (core.as_slice(), unsigned) {
            (["void"], false) if !signed => return Ok((TypeName::Void, None)),
            (["_Bool"], false) if !signed => Basic::Bool,
            (["float"], false) if !signed => Basic::Float,
            (["double"], false) if !signed => Basic::Double,
            (["char"], false) => Basic::SChar,
            (["char"], true) => Basic::UChar,
            (["short"] | ["short", "int"], false) => Basic::Short,
            (["short"] | ["short", "int"], true) => Basic::UShort,
            (["int"] | [], false) => Basic::Int,
            (["int"] | [], true) => Basic::UInt,
            (["long"] | ["long", "int"], false) => Basic::Long,
            (["long"] | ["long", "int"], true) => Basic::ULong,
            (["long", "long"] | ["long", "long", "int"], false) => Basic::LLong,
            (["long", "long"] | ["long", "long", "int"], true) => Basic::ULLong,
            _ => return Err(bad()),
        };
        Ok((TypeName::Basic(basic), None))
    }

    fn agg_body(&mut self, pos: Pos, is_union: bool, name: String) -> PResult<AggDef> {
        self.expect("{")?;
        let mut fields = Vec::new();
        while !self.eat_punct("}") {
            let (base, inline) = self.type_name()?;
            if inline.is_some() {
                return self.err("nested aggregate definitions are not supported");
            }
            loop {
                if self.is_punct("*") {
                    return self.err("pointer fields are not supported");
                }
                let fname = self.ident()?;
                let dims = self.dims()?;
                fields.push(Field {
                    base: base.clone(),
                    name: fname,
                    dims,
                });
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect(";")?;
        }
        Ok(AggDef {
            pos,
            is_union,
            name,
            fields,
        })
    }

    fn dims(&mut self) -> PResult<Vec<u32>> {
        let mut dims = Vec::new();
        while self.eat_punct("[") {
            match self.advance() {
                Tok::Int { value, .. } if value > 0 && value < (1 << 20) => dims.push(value as u32),
                _ => return self.err("array dimension must be a positive integer literal"),
            }
            self.expect("]")?;
        }
        Ok(dims)
    }

    /// `[restrict A] type` prefix shared by declarations and parameters.
    fn decl_head(&mut self) -> PResult<(Option<String>, TypeName, Option<AggDef>)> {
        let restrict = if self.eat_word("restrict") {
            Some(self.ident()?)
        } else {
            None
        };
        let (base, def) = self.type_name()?;
        Ok((restrict, base, def))
    }

    fn declarator(
        &mut self,
        restrict: &Option<String>,
        base: &TypeName,
        with_init: bool,
    ) -> PResult<Decl> {
        let pos = self.pos();
        let pointer = self.eat_punct("*");
        if self.is_punct("*") {
            return self.err("pointers to pointers are not supported");
        }
        if self.is_punct("(") {
            return self.err("unsupported feature: function pointer");
        }
        let name = self.ident()?;
        let dims = self.dims()?;
        let init = if with_init && self.eat_punct("=") {
            Some(self.init()?)
        } else {
            None
        };
        Ok(Decl {
            pos,
            base: base.clone(),
            restrict: restrict.clone(),
            pointer,
            name,
            dims,
            init,
        })
    }

    fn init(&mut self) -> PResult<Init> {
        if self.eat_punct("{") {
            let mut items = Vec::new();
            while !self.eat_punct("}") {
                items.push(self.init()?);
                if !self.eat_punct(",") {
                    self.expect("}")?;
                    break;
                }
            }
            Ok(Init::List(items))
        } else {
            Ok(Init::Expr(self.assign_expr()?))
        }
    }

    fn item(&mut self) -> PResult<Item> {
        let pos = self.pos();
        let (restrict, base, def) = self.decl_head()?;
        if let Some(def) = def {
            if self.eat_punct(";") {
                return Ok(Item::Agg(def));
            }
            return self.err("declare variables separately from the aggregate definition");
        }
        if restrict.is_none() && !self.is_punct("*") {
            if let (Tok::Ident(_), Tok::Punct("(")) = (self.peek().clone(), self.peek_at(1)) {
                return Ok(Item::Func(self.func(pos, base)?));
            }
        }
        Ok(Item::Global(self.decl_list(restrict, base)?))
    }

    fn decl_list(&mut self, restrict: Option<String>, base: TypeName) -> PResult<Vec<Decl>> {
        let mut decls = vec![self.declarator(&restrict, &base, true)?];
        while self.eat_punct(",") {
            decls.push(self.declarator(&restrict, &base, true)?);
        }
        self.expect(";")?;
        Ok(decls)
    }

    fn func(&mut self, pos: Pos, ret: TypeName) -> PResult<FuncDef> {
        let name = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        let void_only = self.is_word("void") && matches!(self.peek_at(1), Tok::Punct(")"));
        if void_only {
            self.advance();
        }
        while !self.eat_punct(")") {
            if !params.is_empty() {
                self.expect(",")?;
            }
            if self.is_punct("...") {
                return self.err("unsupported feature: varargs");
            }
            let (restrict, base, def) = self.decl_head()?;
            if def.is_some() {
                return self.err("aggregate definition in parameter list");
            }
            params.push(self.declarator(&restrict, &base, false)?);
        }
        let body = if self.eat_punct(";") {
            None
        } else {
            Some(self.block()?)
        };
        Ok(FuncDef {
            pos,
            ret,
            name,
            params,
            body,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.eat_punct("}") {
            if self.is_eof() {
                return self.unexpected("'}'");
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        let kind = self.stmt_kind()?;
        Ok(Stmt { pos, kind })
    }

    fn stmt_kind(&mut self) -> PResult<StmtKind> {
        let pos = self.pos();
        if self.eat_punct(";") {
            return Ok(StmtKind::Empty);
        }
        if self.is_punct("{") {
            return Ok(StmtKind::Block(self.block()?));
        }
        if let Tok::Ident(w) = self.peek().clone() {
            match w.as_str() {
                "if" => {
                    self.advance();
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    let t = Box::new(self.stmt()?);
                    let e = if self.eat_word("else") {
                        Some(Box::new(self.stmt()?))
                    } else {
                        None
                    };
                    return Ok(StmtKind::If(c, t, e));
                }
                "while" => {
                    self.advance();
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    return Ok(StmtKind::While(c, Box::new(self.stmt()?)));
                }
                "do" => {
                    self.advance();
                    let body = Box::new(self.stmt()?);
                    if !self.eat_word("while") {
                        return self.unexpected("'while'");
                    }
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    self.expect(";")?;
                    return Ok(StmtKind::DoWhile(body, c));
                }
                "for" => {
                    self.advance();
                    self.expect("(")?;
                    let init = if self.eat_punct(";") {
                        None
                    } else if self.starts_type() {
                        let ipos = self.pos();
                        let (restrict, base, def) = self.decl_head()?;
                        if def.is_some() {
                            return self.err("aggregate definition in for");
                        }
                        let decls = self.decl_list(restrict, base)?;
                        Some(Box::new(Stmt {
                            pos: ipos,
                            kind: StmtKind::Decl(decls),
                        }))
                    } else {
                        let ipos = self.pos();
                        let e = self.expr()?;
                        self.expect(";")?;
                        Some(Box::new(Stmt {
                            pos: ipos,
                            kind: StmtKind::Expr(e),
                        }))
                    };
                    let cond = if self.is_punct(";") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect(";")?;
                    let step = if self.is_punct(")") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect(")")?;
                    let body = Box::new(self.stmt()?);
                    return Ok(StmtKind::For {
                        init,
                        cond,
                        step,
                        body,
                    });
                }
                "return" => {
                    self.advance();
                    let e = if self.is_punct(";") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect(";")?;
                    return Ok(StmtKind::Return(e));
                }
                "break" | "continue" => {
                    self.advance();
                    self.expect(";")?;
                    return Ok(if w == "break" {
                        StmtKind::Break
                    } else {
                        StmtKind::Continue
                    });
                }
                "goto" => {
                    self.advance();
                    let l = self.ident()?;
                    self.expect(";")?;
                    return Ok(StmtKind::Goto(l));
                }
                "__label__" => {
                    self.advance();
                    let mut names = vec![self.ident()?];
                    while self.eat_punct(",") {
                        names.push(self.ident()?);
                    }
                    self.expect(";")?;
                    return Ok(StmtKind::LabelDecl(names));
                }
                "switch" | "case" | "default" | "typedef" | "enum" | "sizeof" | "static"
                | "extern" | "volatile" => {
                    return self.err(format!("unsupported feature: {w}"));
                }
                _ => {}
            }
            if !is_keyword(&w) && matches!(self.peek_at(1), Tok::Punct(":")) {
                self.advance();
                self.advance();
                return Ok(StmtKind::Label(w));
            }
        }
        if self.starts_type() {
            let (restrict, base, def) = self.decl_head()?;
            if let Some(def) = def {
                self.expect(";")?;
                return Ok(StmtKind::Agg(def));
            }
            if restrict.is_none() && !self.is_punct("*") {
                if let (Tok::Ident(_), Tok::Punct("(")) = (self.peek().clone(), self.peek_at(1)) {
                    let f = self.func(pos, base)?;
                    if f.body.is_none() {
                        return Err(Diagnostic::new(pos, "interior function needs a body"));
                    }
                    return Ok(StmtKind::Func(f));
                }
            }
            return Ok(StmtKind::Decl(self.decl_list(restrict, base)?));
        }
        let e = self.expr()?;
        self.expect(";")?;
        Ok(StmtKind::Expr(e))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut e = self.assign_expr()?;
        while self.is_punct(",") {
            let pos = self.pos();
            self.advance();
            let r = self.assign_expr()?;
            e = Expr::new(pos, ExprKind::Comma(Box::new(e), Box::new(r)));
        }
        Ok(e)
    }

    fn assign_expr(&mut self) -> PResult<Expr> {
        let lhs = self.cond_expr()?;
        let pos = self.pos();
        let op = match self.peek() {
            Tok::Punct("=") => None,
            Tok::Punct(p) => match compound_op(p) {
                Some(op) => Some(op),
                None => return Ok(lhs),
            },
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.assign_expr()?;
        Ok(Expr::new(pos, ExprKind::Assign(op, Box::new(lhs), Box::new(rhs))))
    }

    fn cond_expr(&mut self) -> PResult<Expr> {
        let c = self.binary(1)?;
        if self.is_punct("?") {
            let pos = self.pos();
            self.advance();
            let a = self.expr()?;
            self.expect(":")?;
            let b = self.cond_expr()?;
            return Ok(Expr::new(pos, ExprKind::Cond(Box::new(c), Box::new(a), Box::new(b))));
        }
        Ok(c)
    }

    fn binary(&mut self, min: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => match binop(p) {
                    Some(op) if op.precedence() >= min => op,
                    _ => break,
                },
                _ => break,
            };
            let pos = self.pos();
            self.advance();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::new(pos, ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let un = |op| move |e: Expr| ExprKind::Unary(op, Box::new(e));
        let wrap: Option<Box<dyn Fn(Expr) -> ExprKind>> = match self.peek() {
            Tok::Punct("-") => Some(Box::new(un(UnOp::Neg))),
            Tok::Punct("+") => Some(Box::new(un(UnOp::Plus))),
            Tok::Punct("~") => Some(Box::new(un(UnOp::BitNot))),
            Tok::Punct("!") => Some(Box::new(un(UnOp::Not))),
            Tok::Punct("*") => Some(Box::new(|e: Expr| ExprKind::Deref(Box::new(e)))),
            Tok::Punct("&") => Some(Box::new(|e: Expr| ExprKind::AddrOf(Box::new(e)))),
            Tok::Punct(p @ ("++" | "--")) => {
                let inc = *p == "++";
                Some(Box::new(move |e: Expr| ExprKind::IncDec {
                    pre: true,
                    inc,
                    target: Box::new(e),
                }))
            }
            _ => None,
        };
        if let Some(w) = wrap {
            self.advance();
            let e = self.unary()?;
            return Ok(Expr::new(pos, w(e)));
        }
        if self.is_word("sizeof") {
            return self.err("unsupported feature: sizeof");
        }
        if self.is_punct("(") && matches!(self.peek_at(1), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str()))
        {
            self.advance();
            let (t, def) = self.type_name()?;
            if def.is_some() {
                return self.err("aggregate definition in cast");
            }
            self.expect(")")?;
            let e = self.unary()?;
            return match t {
                TypeName::Basic(b) => Ok(Expr::new(pos, ExprKind::Cast(b, Box::new(e)))),
                _ => Err(Diagnostic::new(pos, "casts are only supported between basic types")),
            };
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            let pos = self.pos();
            if self.eat_punct("[") {
                let i = self.expr()?;
                self.expect("]")?;
                e = Expr::new(pos, ExprKind::Index(Box::new(e), Box::new(i)));
            } else if self.eat_punct(".") {
                let f = self.ident()?;
                e = Expr::new(pos, ExprKind::Member(Box::new(e), f));
            } else if self.eat_punct("->") {
                let f = self.ident()?;
                e = Expr::new(pos, ExprKind::Arrow(Box::new(e), f));
            } else if self.is_punct("++") || self.is_punct("--") {
                let inc = self.is_punct("++");
                self.advance();
                e = Expr::new(
                    pos,
                    ExprKind::IncDec {
                        pre: false,
                        inc,
                        target: Box::new(e),
                    },
                );
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int {
                value,
                unsigned,
                long,
            } => {
                self.advance();
                Ok(Expr::new(
                    pos,
                    ExprKind::Int {
                        value,
                        unsigned,
                        long,
                    },
                ))
            }
            Tok::Float { value, single } => {
                self.advance();
                Ok(Expr::new(pos, ExprKind::Float { value, single }))
            }
            Tok::Char(c) => {
                self.advance();
                Ok(Expr::new(pos, ExprKind::Char(c)))
            }
            Tok::Punct("(") => {
                self.advance();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) if !is_keyword(&name) => {
                self.advance();
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    while !self.eat_punct(")") {
                        if !args.is_empty() {
                            self.expect(",")?;
                        }
                        args.push(self.assign_expr()?);
                    }
                    Ok(Expr::new(pos, ExprKind::Call(name, args)))
                } else {
                    Ok(Expr::new(pos, ExprKind::Ident(name)))
                }
            }
            _ => self.unexpected("expression"),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Int { value, .. } => format!("'{value}'"),
        Tok::Float { value, .. } => format!("'{value}'"),
        Tok::Char(_) => "character literal".into(),
        Tok::Str(_) => "string literal".into(),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of input".into(),
    }
}

pub(crate) fn is_keyword(s: &str) -> bool {
    TYPE_WORDS.contains(&s)
        || [
            "if", "else", "while", "do", "for", "return", "break", "continue", "goto",
            "__label__", "restrict", "const", "switch", "case", "default", "typedef", "enum",
            "sizeof", "static", "extern", "volatile",
        ]
        .contains(&s)
}

fn binop(p: &str) -> Option<BinOp> {
    Some(match p {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Rem,
        "<<" => BinOp::Shl,
        ">>" => BinOp::Shr,
        "&" => BinOp::And,
        "|" => BinOp::Or,
        "^" => BinOp::Xor,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "&&" => BinOp::LogAnd,
        "||" => BinOp::LogOr,
        _ => return None,
    })
}

fn compound_op(p: &str) -> Option<BinOp> {
    let op = p.strip_suffix('=')?;
    match op {
        "+" | "-" | "*" | "/" | "%" | "<<" | ">>" | "&" | "|" | "^" => binop(op),
        _ => None,
    }
}
