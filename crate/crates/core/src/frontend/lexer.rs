use super::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int { value: u64, unsigned: bool, long: u8 },
    Float { value: f64, single: bool },
    Char(i64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

// Longest first so that maximal munch falls out of a linear scan.
const PUNCTS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "&", "|", "^", "~", "!",
    "<", ">", "=", "?", ":", ";", ",", ".", "(", ")", "[", "]", "{", "}",
];

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    macro_rules! bump {
        ($n:expr) => {
            for _ in 0..$n {
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
        };
    }
    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos { line, col };
        if c.is_ascii_whitespace() {
            bump!(1);
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                bump!(1);
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(n) => bump!(n + 4),
                None => return Err(Diagnostic::new(pos, "unterminated comment")),
            }
            continue;
        }
        if c == b'#' {
            return Err(Diagnostic::new(pos, "unsupported feature: preprocessor"));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                bump!(1);
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let (tok, n) = number(&src[i..]).map_err(|m| Diagnostic::new(pos, m))?;
            bump!(n);
            out.push(Token { tok, pos });
            continue;
        }
        if c == b'\'' {
            let rest = &src[i + 1..];
            let (v, n) = char_body(rest).ok_or_else(|| Diagnostic::new(pos, "bad character literal"))?;
            if !rest[n..].starts_with('\'') {
                return Err(Diagnostic::new(pos, "bad character literal"));
            }
            bump!(n + 2);
            out.push(Token { tok: Tok::Char(v), pos });
            continue;
        }
        if c == b'"' {
            let end = src[i + 1..]
                .find('"')
                .ok_or_else(|| Diagnostic::new(pos, "unterminated string"))?;
            let s = src[i + 1..i + 1 + end].to_string();
            bump!(end + 2);
            out.push(Token { tok: Tok::Str(s), pos });
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                bump!(p.len());
                out.push(Token {
                    tok: Tok::Punct(p),
                    pos,
                });
            }
            None => {
                return Err(Diagnostic::new(
                    pos,
                    format!("unexpected character '{}'", src[i..].chars().next().unwrap()),
                ))
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

fn char_body(s: &str) -> Option<(i64, usize)> {
    let b = s.as_bytes();
    match *b.first()? {
        b'\\' => {
            let v = match *b.get(1)? {
                b'n' => b'\n',
                b't' => b'\t',
                b'r' => b'\r',
                b'0' => 0,
                b'\\' => b'\\',
                b'\'' => b'\'',
                b'"' => b'"',
                _ => return None,
            };
            Some((i64::from(v), 2))
        }
        c if c.is_ascii() && c != b'\'' => Some((i64::from(c), 1)),
        _ => None,
    }
}

fn number(s: &str) -> Result<(Tok, usize), String> {
    let b = s.as_bytes();
    let mut n = 0;
    let hex = s.starts_with("0x") || s.starts_with("0X");
    if hex {
        n = 2;
        while n < b.len() && b[n].is_ascii_hexdigit() {
            n += 1;
        }
    } else {
        while n < b.len() && b[n].is_ascii_digit() {
            n += 1;
        }
    }
    let mut is_float = false;
    if !hex && n < b.len() && b[n] == b'.' {
        is_float = true;
        n += 1;
        while n < b.len() && b[n].is_ascii_digit() {
            n += 1;
        }
    }
    if !hex && n < b.len() && (b[n] == b'e' || b[n] == b'E') {
        let mut m = n + 1;
        if m < b.len() && (b[m] == b'+' || b[m] == b'-') {
            m += 1;
        }
        if m < b.len() && b[m].is_ascii_digit() {
            is_float = true;
            while m < b.len() && b[m].is_ascii_digit() {
                m += 1;
            }
            n = m;
        }
    }
    let body = &s[..n];
    let mut end = n;
    while end < b.len() && b[end].is_ascii_alphanumeric() {
        end += 1;
    }
    let suffix = s[n..end].to_ascii_lowercase();
    if is_float {
        let value: f64 = body.parse().map_err(|_| format!("bad float literal '{body}'"))?;
        let single = match suffix.as_str() {
            "" => false,
            "f" => true,
            _ => return Err(format!("bad float suffix '{suffix}'")),
        };
        return Ok((Tok::Float { value, single }, end));
    }
    let value = if hex {
        u64::from_str_radix(&body[2..], 16)
    } else if body.len() > 1 && body.starts_with('0') {
        u64::from_str_radix(&body[1..], 8)
    } else {
        body.parse()
    }
    .map_err(|_| format!("bad integer literal '{body}'"))?;
    let unsigned = suffix.contains('u');
    let long = suffix.matches('l').count() as u8;
    if suffix.chars().any(|c| c != 'u' && c != 'l') || long > 2 || suffix.matches('u').count() > 1 {
        return Err(format!("bad integer suffix '{suffix}'"));
    }
    Ok((
        Tok::Int {
            value,
            unsigned,
            long,
        },
        end,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn literals_and_suffixes() {
        assert_eq!(
            toks("10u 7ll 0x1F 010 1.5f 2e3 'a'"),
            vec![
                Tok::Int { value: 10, unsigned: true, long: 0 },
                Tok::Int { value: 7, unsigned: false, long: 2 },
                Tok::Int { value: 31, unsigned: false, long: 0 },
                Tok::Int { value: 8, unsigned: false, long: 0 },
                Tok::Float { value: 1.5, single: true },
                Tok::Float { value: 2000.0, single: false },
                Tok::Char(97),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn maximal_munch() {
        assert_eq!(
            toks("a<<=b->c"),
            vec![
                Tok::Ident("a".into()),
                Tok::Punct("<<="),
                Tok::Ident("b".into()),
                Tok::Punct("->"),
                Tok::Ident("c".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_and_comments() {
        let t = lex("/* x */ int\n  // y\n  z").unwrap();
        assert_eq!((t[0].pos.line, t[0].pos.col), (1, 9));
        assert_eq!((t[1].pos.line, t[1].pos.col), (3, 3));
        assert!(lex("#include <x>").unwrap_err().message.contains("preprocessor"));
    }
}
