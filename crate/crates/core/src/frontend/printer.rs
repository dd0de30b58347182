//! Pretty-printer producing parseable source from a syntax tree.
//! Expressions are fully parenthesised.

use super::ast::*;

pub fn print_unit(u: &Unit) -> String {
    let mut p = Printer::default();
    for item in &u.items {
        match item {
            Item::Agg(a) => p.agg(a),
            Item::Global(ds) => p.decls(ds),
            Item::Func(f) => p.func(f),
        }
    }
    p.out
}

#[derive(Default)]
struct Printer {
    out: String,
    depth: usize,
}

fn type_name(t: &TypeName) -> String {
    match t {
        TypeName::Void => "void".into(),
        TypeName::Basic(b) => b.c_name().into(),
        TypeName::Struct(s) => format!("struct {s}"),
        TypeName::Union(s) => format!("union {s}"),
    }
}

fn dims(d: &[u32]) -> String {
    d.iter().map(|n| format!("[{n}]")).collect()
}

fn decl_text(d: &Decl) -> String {
    let mut s = String::new();
    if let Some(r) = &d.restrict {
        s.push_str(&format!("restrict {r} "));
    }
    s.push_str(&type_name(&d.base));
    s.push(' ');
    if d.pointer {
        s.push('*');
    }
    s.push_str(&d.name);
    s.push_str(&dims(&d.dims));
    if let Some(i) = &d.init {
        s.push_str(" = ");
        s.push_str(&init_text(i));
    }
    s
}

fn init_text(i: &Init) -> String {
    match i {
        Init::Expr(e) => expr(e),
        Init::List(items) => format!(
            "{{{}}}",
            items.iter().map(init_text).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn char_lit(c: i64) -> String {
    match c as u8 {
        b'\n' => "'\\n'".into(),
        b'\t' => "'\\t'".into(),
        b'\r' => "'\\r'".into(),
        0 => "'\\0'".into(),
        b'\\' => "'\\\\'".into(),
        b'\'' => "'\\''".into(),
        b => format!("'{}'", b as char),
    }
}

pub fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Int {
            value,
            unsigned,
            long,
        } => format!(
            "{value}{}{}",
            if *unsigned { "u" } else { "" },
            "l".repeat(*long as usize)
        ),
        ExprKind::Float { value, single } => {
            format!("{value:?}{}", if *single { "f" } else { "" })
        }
        ExprKind::Char(c) => char_lit(*c),
        ExprKind::Ident(s) => s.clone(),
        ExprKind::Unary(op, a) => {
            let o = match op {
                UnOp::Neg => "-",
                UnOp::Plus => "+",
                UnOp::BitNot => "~",
                UnOp::Not => "!",
            };
            format!("({o}{})", expr(a))
        }
        ExprKind::Binary(op, a, b) => format!("({} {} {})", expr(a), op.symbol(), expr(b)),
        ExprKind::Assign(op, a, b) => format!(
            "({} {}= {})",
            expr(a),
            op.map_or("", BinOp::symbol),
            expr(b)
        ),
        ExprKind::IncDec { pre, inc, target } => {
            let o = if *inc { "++" } else { "--" };
            if *pre {
                format!("({o}{})", expr(target))
            } else {
                format!("({}{o})", expr(target))
            }
        }
        ExprKind::Cond(c, a, b) => format!("({} ? {} : {})", expr(c), expr(a), expr(b)),
        ExprKind::Cast(t, a) => format!("(({}) {})", t.c_name(), expr(a)),
        ExprKind::Call(f, args) => format!(
            "{f}({})",
            args.iter().map(expr).collect::<Vec<_>>().join(", ")
        ),
        ExprKind::Index(a, i) => format!("{}[{}]", expr(a), expr(i)),
        ExprKind::Member(a, f) => format!("{}.{f}", expr(a)),
        ExprKind::Arrow(a, f) => format!("{}->{f}", expr(a)),
        ExprKind::Deref(a) => format!("(*{})", expr(a)),
        ExprKind::AddrOf(a) => format!("(&{})", expr(a)),
        ExprKind::Comma(a, b) => format!("({}, {})", expr(a), expr(b)),
    }
}

impl Printer {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push_str("    ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn agg(&mut self, a: &AggDef) {
        let kw = if a.is_union { "union" } else { "struct" };
        self.line(&format!("{kw} {} {{", a.name));
        self.depth += 1;
        for f in &a.fields {
            self.line(&format!("{} {}{};", type_name(&f.base), f.name, dims(&f.dims)));
        }
        self.depth -= 1;
        self.line("};");
    }

    fn decls(&mut self, ds: &[Decl]) {
        for d in ds {
            self.line(&format!("{};", decl_text(d)));
        }
    }

    fn func(&mut self, f: &FuncDef) {
        let params: Vec<String> = f.params.iter().map(decl_text).collect();
        let head = format!("{} {}({})", type_name(&f.ret), f.name, params.join(", "));
        match &f.body {
            None => self.line(&format!("{head};")),
            Some(body) => {
                self.line(&format!("{head} {{"));
                self.body(body);
                self.line("}");
            }
        }
    }

    fn body(&mut self, stmts: &[Stmt]) {
        self.depth += 1;
        for s in stmts {
            self.stmt(s);
        }
        self.depth -= 1;
    }

    fn clause(&mut self, head: &str, s: &Stmt) {
        match &s.kind {
            StmtKind::Block(b) => {
                self.line(&format!("{head} {{"));
                self.body(b);
                self.line("}");
            }
            _ => {
                self.line(head);
                self.body(std::slice::from_ref(s));
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Empty => self.line(";"),
            StmtKind::Decl(ds) => {
                let text: Vec<String> = ds.iter().map(decl_text).collect();
                // one declaration statement, several declarators
                let first = &ds[0];
                let mut head = String::new();
                if let Some(r) = &first.restrict {
                    head.push_str(&format!("restrict {r} "));
                }
                head.push_str(&type_name(&first.base));
                let rest: Vec<String> = text
                    .iter()
                    .map(|t| t[head.len() + 1..].to_string())
                    .collect();
                self.line(&format!("{head} {};", rest.join(", ")));
            }
            StmtKind::Agg(a) => self.agg(a),
            StmtKind::Func(f) => self.func(f),
            StmtKind::Expr(e) => self.line(&format!("{};", expr(e))),
            StmtKind::If(c, t, e) => {
                self.clause(&format!("if ({})", expr(c)), t);
                if let Some(e) = e {
                    self.clause("else", e);
                }
            }
            StmtKind::While(c, b) => self.clause(&format!("while ({})", expr(c)), b),
            StmtKind::DoWhile(b, c) => {
                self.clause("do", b);
                self.line(&format!("while ({});", expr(c)));
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                let init_s = match init.as_deref().map(|s| &s.kind) {
                    None => ";".to_string(),
                    Some(StmtKind::Expr(e)) => format!("{};", expr(e)),
                    Some(StmtKind::Decl(ds)) => {
                        let mut p = Printer::default();
                        p.stmt(&Stmt {
                            pos: s.pos,
                            kind: StmtKind::Decl(ds.clone()),
                        });
                        p.out.trim().to_string()
                    }
                    Some(_) => unreachable!("for initialiser"),
                };
                let head = format!(
                    "for ({init_s} {}; {})",
                    cond.as_ref().map(expr).unwrap_or_default(),
                    step.as_ref().map(expr).unwrap_or_default()
                );
                self.clause(&head, body);
            }
            StmtKind::Block(b) => {
                self.line("{");
                self.body(b);
                self.line("}");
            }
            StmtKind::Return(e) => match e {
                Some(e) => self.line(&format!("return {};", expr(e))),
                None => self.line("return;"),
            },
            StmtKind::Break => self.line("break;"),
            StmtKind::Continue => self.line("continue;"),
            StmtKind::Goto(l) => self.line(&format!("goto {l};")),
            StmtKind::Label(l) => self.line(&format!("{l}:")),
            StmtKind::LabelDecl(ls) => self.line(&format!("__label__ {};", ls.join(", "))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    #[test]
    fn round_trip_small() {
        let src = "struct P { int x; double y[2]; };\n\
                   int g = 3;\n\
                   int main(int a) { int A[4] = {1, 2}; restrict A int *p = A; \
                   __label__ L; for (int i = 0; i < 4; i++) { if (a) { p[i] += 'c'; } else A[i] = -1.5f; } \
                   L: do { a--; } while (a > 0 && !a); return (short) a ? g : 2ull; }";
        let u = parse(src).unwrap();
        let printed = print_unit(&u);
        assert_eq!(parse(&printed).unwrap(), u, "{printed}");
    }
}
