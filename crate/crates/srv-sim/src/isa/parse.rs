//! Line-oriented parser for the gadget DSL.
//!
//! ```text
//! array <name> <elem_size> <length> [linked <name> <byte_offset>]
//! init <name>[<idx>] = <int>
//! loop <trip_count>:
//!   <dst>[<index>] = <expr>
//! probe <name>[<idx>]
//! ```
//!
//! `#` starts a comment. Loop-body lines are indented. Index expressions are
//! `z`, an integer, or `name[index]`, optionally followed by `* <factor>` and
//! `+/- <int>`; `<factor>` is an integer or a parenthesized memory-free
//! expression. Value expressions use C-like precedence over
//! `+ - * ^ << >> && || == != <` plus `cond ? a : b`.

use crate::error::{Result, SimError};
use crate::isa::{
    ArrayDecl, BinOp, GadgetProgram, IndexExpr, IndexScale, InitWrite, LinkDecl, Probe, Statement,
    ValueExpr,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Assign,
    Plus,
    Minus,
    Star,
    Caret,
    Shl,
    Shr,
    AndAnd,
    OrOr,
    EqEq,
    NotEq,
    Lt,
    Question,
    Colon,
}

struct Lexer<'a> {
    line: usize,
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(line_no: usize, src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        match c {
            ' ' | '\t' => i += 1,
            '#' => break,
            '[' => {
                toks.push((Tok::LBracket, col));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, col));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, col));
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, col));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, col));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, col));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, col));
                i += 1;
            }
            '?' => {
                toks.push((Tok::Question, col));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, col));
                i += 1;
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'<') {
                    toks.push((Tok::Shl, col));
                    i += 2;
                } else {
                    toks.push((Tok::Lt, col));
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    toks.push((Tok::Shr, col));
                    i += 2;
                } else {
                    return Err(syntax(line_no, col, "unexpected '>'"));
                }
            }
            '&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    toks.push((Tok::AndAnd, col));
                    i += 2;
                } else {
                    return Err(syntax(line_no, col, "unexpected '&'"));
                }
            }
            '|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    toks.push((Tok::OrOr, col));
                    i += 2;
                } else {
                    return Err(syntax(line_no, col, "unexpected '|'"));
                }
            }
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::EqEq, col));
                    i += 2;
                } else {
                    toks.push((Tok::Assign, col));
                    i += 1;
                }
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::NotEq, col));
                    i += 2;
                } else {
                    return Err(syntax(line_no, col, "unexpected '!'"));
                }
            }
            _ if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let n: i64 = src[start..i]
                    .parse()
                    .map_err(|_| syntax(line_no, col, "integer literal out of range"))?;
                toks.push((Tok::Int(n), col));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), col));
            }
            _ => return Err(syntax(line_no, col, &format!("unexpected character '{c}'"))),
        }
    }
    Ok(toks)
}

fn syntax(line: usize, col: usize, msg: &str) -> SimError {
    SimError::Syntax { line, col, msg: msg.to_string() }
}

impl<'a> Lexer<'a> {
    fn new(line: usize, src: &'a str) -> Result<Self> {
        Ok(Lexer { line, src, toks: lex(line, src)?, pos: 0 })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.src.len() + 1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<()> {
        match self.next() {
            Some(ref t) if t == want => Ok(()),
            _ => Err(syntax(self.line, self.col().saturating_sub(1), &format!("expected {what}"))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(syntax(self.line, self.col().saturating_sub(1), &format!("expected {what}"))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i64> {
        let neg = matches!(self.peek(), Some(Tok::Minus));
        if neg {
            self.next();
        }
        match self.next() {
            Some(Tok::Int(n)) => Ok(if neg { -n } else { n }),
            _ => Err(syntax(self.line, self.col().saturating_sub(1), &format!("expected {what}"))),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(syntax(self.line, self.col(), "trailing tokens"))
        }
    }
}

// Precedence-climbing value-expression parser, lowest level first.
fn parse_value(lx: &mut Lexer) -> Result<ValueExpr> {
    parse_ternary(lx)
}

fn parse_ternary(lx: &mut Lexer) -> Result<ValueExpr> {
    let cond = parse_bin(lx, 0)?;
    if matches!(lx.peek(), Some(Tok::Question)) {
        lx.next();
        let then_val = parse_value(lx)?;
        lx.expect(&Tok::Colon, "':'")?;
        let else_val = parse_ternary(lx)?;
        Ok(ValueExpr::Select {
            cond: Box::new(cond),
            then_val: Box::new(then_val),
            else_val: Box::new(else_val),
        })
    } else {
        Ok(cond)
    }
}

const BIN_LEVELS: &[&[(Tok, BinOp)]] = &[
    &[(Tok::OrOr, BinOp::Or)],
    &[(Tok::AndAnd, BinOp::And)],
    &[(Tok::Caret, BinOp::Xor)],
    &[(Tok::EqEq, BinOp::Eq), (Tok::NotEq, BinOp::Ne)],
    &[(Tok::Lt, BinOp::Lt)],
    &[(Tok::Shl, BinOp::Shl), (Tok::Shr, BinOp::Shr)],
    &[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)],
    &[(Tok::Star, BinOp::Mul)],
];

fn parse_bin(lx: &mut Lexer, level: usize) -> Result<ValueExpr> {
    if level >= BIN_LEVELS.len() {
        return parse_primary(lx);
    }
    let mut lhs = parse_bin(lx, level + 1)?;
    loop {
        let mut matched = None;
        if let Some(tok) = lx.peek() {
            for (t, op) in BIN_LEVELS[level] {
                if t == tok {
                    matched = Some(*op);
                    break;
                }
            }
        }
        match matched {
            Some(op) => {
                lx.next();
                let rhs = parse_bin(lx, level + 1)?;
                lhs = ValueExpr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
            }
            None => return Ok(lhs),
        }
    }
}

fn parse_primary(lx: &mut Lexer) -> Result<ValueExpr> {
    match lx.next() {
        Some(Tok::Int(n)) => Ok(ValueExpr::Lit(n)),
        Some(Tok::Minus) => match lx.next() {
            Some(Tok::Int(n)) => Ok(ValueExpr::Lit(-n)),
            _ => Err(syntax(lx.line, lx.col(), "expected integer after '-'")),
        },
        Some(Tok::LParen) => {
            let e = parse_value(lx)?;
            lx.expect(&Tok::RParen, "')'")?;
            Ok(e)
        }
        Some(Tok::Ident(name)) => {
            if name == "z" {
                return Ok(ValueExpr::Induction);
            }
            lx.expect(&Tok::LBracket, "'[' after array name")?;
            let index = parse_index(lx)?;
            lx.expect(&Tok::RBracket, "']'")?;
            Ok(ValueExpr::Load { array: name, index })
        }
        _ => Err(syntax(lx.line, lx.col(), "expected expression")),
    }
}

fn parse_index(lx: &mut Lexer) -> Result<IndexExpr> {
    // base term
    enum Base {
        Induction,
        Constant(i64),
        Indirect(String, Box<IndexExpr>),
    }
    let base = match lx.next() {
        Some(Tok::Int(n)) => Base::Constant(n),
        Some(Tok::Minus) => match lx.next() {
            Some(Tok::Int(n)) => Base::Constant(-n),
            _ => return Err(syntax(lx.line, lx.col(), "expected integer after '-'")),
        },
        Some(Tok::Ident(name)) => {
            if name == "z" {
                Base::Induction
            } else {
                lx.expect(&Tok::LBracket, "'[' after array name")?;
                let inner = parse_index(lx)?;
                lx.expect(&Tok::RBracket, "']'")?;
                Base::Indirect(name, Box::new(inner))
            }
        }
        _ => return Err(syntax(lx.line, lx.col(), "expected index expression")),
    };

    let mut scale: Option<IndexScale> = None;
    if matches!(lx.peek(), Some(Tok::Star)) {
        lx.next();
        scale = Some(match lx.peek() {
            Some(Tok::Int(_)) | Some(Tok::Minus) => IndexScale::Const(lx.expect_int("scale factor")?),
            Some(Tok::LParen) => {
                lx.next();
                let e = parse_value(lx)?;
                lx.expect(&Tok::RParen, "')'")?;
                IndexScale::Expr(Box::new(e))
            }
            _ => return Err(syntax(lx.line, lx.col(), "expected scale factor")),
        });
    }

    let mut offset = 0i64;
    match lx.peek() {
        Some(Tok::Plus) => {
            lx.next();
            offset = lx.expect_int("index offset")?;
        }
        Some(Tok::Minus) => {
            lx.next();
            offset = -lx.expect_int("index offset")?;
        }
        _ => {}
    }

    match base {
        Base::Induction => match scale {
            None => Ok(IndexExpr::Induction { scale: 1, offset }),
            Some(IndexScale::Const(s)) => Ok(IndexExpr::Induction { scale: s, offset }),
            Some(IndexScale::Expr(_)) => Err(syntax(
                lx.line,
                lx.col(),
                "expression scale factors are only supported on indirect indices",
            )),
        },
        Base::Constant(c) => {
            let s = match scale {
                None => 1,
                Some(IndexScale::Const(s)) => s,
                Some(IndexScale::Expr(_)) => {
                    return Err(syntax(
                        lx.line,
                        lx.col(),
                        "expression scale factors are only supported on indirect indices",
                    ))
                }
            };
            Ok(IndexExpr::Constant(c * s + offset))
        }
        Base::Indirect(array, inner) => Ok(IndexExpr::Indirect {
            array,
            inner,
            scale: scale.unwrap_or(IndexScale::Const(1)),
            offset,
        }),
    }
}

/// Parses DSL source text into a validated [`GadgetProgram`].
pub fn parse_gadget(text: &str) -> Result<GadgetProgram> {
    let mut arrays = Vec::new();
    let mut prologue = Vec::new();
    let mut trip_count = None;
    let mut body = Vec::new();
    let mut epilogue = Vec::new();
    let mut in_loop = false;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let stripped = raw.split('#').next().unwrap_or("");
        if stripped.trim().is_empty() {
            continue;
        }
        let indented = stripped.starts_with(' ') || stripped.starts_with('\t');

        if indented {
            if !in_loop {
                return Err(syntax(line_no, 1, "indented statement outside loop"));
            }
            let mut lx = Lexer::new(line_no, stripped)?;
            let dst = lx.expect_ident("destination array name")?;
            lx.expect(&Tok::LBracket, "'['")?;
            let dst_index = parse_index(&mut lx)?;
            lx.expect(&Tok::RBracket, "']'")?;
            lx.expect(&Tok::Assign, "'='")?;
            let rhs = parse_value(&mut lx)?;
            lx.expect_end()?;
            body.push(Statement { dst_array: dst, dst_index, rhs });
            continue;
        }

        in_loop = false;
        let mut lx = Lexer::new(line_no, stripped)?;
        let kw = lx.expect_ident("directive")?;
        match kw.as_str() {
            "array" => {
                let name = lx.expect_ident("array name")?;
                let elem = lx.expect_int("element size")?;
                let len = lx.expect_int("length")?;
                let link = if matches!(lx.peek(), Some(Tok::Ident(k)) if k == "linked") {
                    lx.next();
                    let anchor = lx.expect_ident("anchor array name")?;
                    let off = lx.expect_int("link byte offset")?;
                    if off < 0 {
                        return Err(syntax(line_no, 1, "link offset must be non-negative"));
                    }
                    Some(LinkDecl { anchor, byte_offset: off as u64 })
                } else {
                    None
                };
                lx.expect_end()?;
                if elem <= 0 || len <= 0 {
                    return Err(syntax(line_no, 1, "element size and length must be positive"));
                }
                arrays.push(ArrayDecl {
                    name,
                    elem_size: elem as u8,
                    length: len as u64,
                    link,
                });
            }
            "init" => {
                let name = lx.expect_ident("array name")?;
                lx.expect(&Tok::LBracket, "'['")?;
                let idx = lx.expect_int("element index")?;
                lx.expect(&Tok::RBracket, "']'")?;
                lx.expect(&Tok::Assign, "'='")?;
                let value = lx.expect_int("value")?;
                lx.expect_end()?;
                if idx < 0 {
                    return Err(syntax(line_no, 1, "init index must be non-negative"));
                }
                prologue.push(InitWrite { array: name, index: idx as u64, value });
            }
            "loop" => {
                let n = lx.expect_int("trip count")?;
                lx.expect(&Tok::Colon, "':'")?;
                lx.expect_end()?;
                if trip_count.is_some() {
                    return Err(syntax(line_no, 1, "duplicate loop directive"));
                }
                if n <= 0 {
                    return Err(syntax(line_no, 1, "trip count must be >= 1"));
                }
                trip_count = Some(n as u64);
                in_loop = true;
            }
            "probe" => {
                let name = lx.expect_ident("array name")?;
                lx.expect(&Tok::LBracket, "'['")?;
                let idx = lx.expect_int("element index")?;
                lx.expect(&Tok::RBracket, "']'")?;
                lx.expect_end()?;
                if idx < 0 {
                    return Err(syntax(line_no, 1, "probe index must be non-negative"));
                }
                epilogue.push(Probe { array: name, index: idx as u64 });
            }
            other => return Err(syntax(line_no, 1, &format!("unknown directive '{other}'"))),
        }
    }

    let trip_count =
        trip_count.ok_or_else(|| SimError::Validation("program has no loop".into()))?;
    let program = GadgetProgram { arrays, prologue, trip_count, body, epilogue };
    program.validate()?;
    Ok(program)
}

fn fmt_index(idx: &IndexExpr) -> String {
    match idx {
        IndexExpr::Induction { scale, offset } => {
            let mut s = if *scale == 1 { "z".to_string() } else { format!("z * {scale}") };
            if *offset > 0 {
                s.push_str(&format!(" + {offset}"));
            } else if *offset < 0 {
                s.push_str(&format!(" - {}", -offset));
            }
            s
        }
        IndexExpr::Constant(c) => format!("{c}"),
        IndexExpr::Indirect { array, inner, scale, offset } => {
            let mut s = format!("{array}[{}]", fmt_index(inner));
            match scale {
                IndexScale::Const(1) => {}
                IndexScale::Const(k) => s.push_str(&format!(" * {k}")),
                IndexScale::Expr(e) => s.push_str(&format!(" * ({})", fmt_value(e))),
            }
            if *offset > 0 {
                s.push_str(&format!(" + {offset}"));
            } else if *offset < 0 {
                s.push_str(&format!(" - {}", -offset));
            }
            s
        }
    }
}

fn fmt_operand(e: &ValueExpr) -> String {
    match e {
        ValueExpr::Lit(_) | ValueExpr::Induction | ValueExpr::Load { .. } => fmt_value(e),
        _ => format!("({})", fmt_value(e)),
    }
}

fn fmt_value(e: &ValueExpr) -> String {
    match e {
        ValueExpr::Lit(n) => format!("{n}"),
        ValueExpr::Induction => "z".to_string(),
        ValueExpr::Load { array, index } => format!("{array}[{}]", fmt_index(index)),
        ValueExpr::Binary { op, lhs, rhs } => {
            format!("{} {} {}", fmt_operand(lhs), op.symbol(), fmt_operand(rhs))
        }
        ValueExpr::Select { cond, then_val, else_val } => format!(
            "{} ? {} : {}",
            fmt_operand(cond),
            fmt_operand(then_val),
            fmt_operand(else_val)
        ),
    }
}

/// Renders a program back to canonical DSL text. `parse_gadget` of the output
/// reproduces the program.
pub fn pretty_print(program: &GadgetProgram) -> String {
    let mut out = String::new();
    for a in &program.arrays {
        out.push_str(&format!("array {} {} {}", a.name, a.elem_size, a.length));
        if let Some(link) = &a.link {
            out.push_str(&format!(" linked {} {}", link.anchor, link.byte_offset));
        }
        out.push('\n');
    }
    for w in &program.prologue {
        out.push_str(&format!("init {}[{}] = {}\n", w.array, w.index, w.value));
    }
    out.push_str(&format!("loop {}:\n", program.trip_count));
    for s in &program.body {
        out.push_str(&format!(
            "  {}[{}] = {}\n",
            s.dst_array,
            fmt_index(&s.dst_index),
            fmt_value(&s.rhs)
        ));
    }
    for p in &program.epilogue {
        out.push_str(&format!("probe {}[{}]\n", p.array, p.index));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_SRC: &str = "\
array a 4 16
array x 4 16
init x[0] = 3
loop 16:
  a[x[z]] = a[z] + 2
";

    #[test]
    fn parses_single_statement_loop() {
        let p = parse_gadget(EXAMPLE_SRC).unwrap();
        assert_eq!(p.trip_count, 16);
        assert_eq!(p.body.len(), 1);
        assert_eq!(p.body[0].dst_array, "a");
        assert_eq!(
            p.body[0].dst_index,
            IndexExpr::Indirect {
                array: "x".into(),
                inner: Box::new(IndexExpr::induction()),
                scale: IndexScale::Const(1),
                offset: 0,
            }
        );
    }

    #[test]
    fn empty_loop_body_is_validation_error() {
        let src = "array a 4 16\nloop 16:\nprobe a[0]\n";
        let err = parse_gadget(src).unwrap_err();
        assert!(err.to_string().contains("loop has no statements"), "{err}");
    }

    #[test]
    fn syntax_error_carries_line_and_column() {
        let src = "array a 4 16\nloop 4:\n  a[z] = a[z] $ 1\n";
        match parse_gadget(src) {
            Err(SimError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_pretty_print() {
        let src = "\
array a 4 16
array x 4 16
array sv 1 256
array sec 1 42 linked sv 4096
array enc 1 16384
init x[1] = 0
init a[1] = 4096
loop 16:
  a[x[z]] = enc[sv[a[z]] * 64] + 1
  enc[z * 2 + 1] = (z == 15) ? (a[z] << 2) : 7
probe enc[0]
probe enc[64]
";
        let p1 = parse_gadget(src).unwrap();
        let printed = pretty_print(&p1);
        let p2 = parse_gadget(&printed).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn scale_expression_parses_on_indirect_index() {
        let src = "\
array a 4 256
array sv 1 256
array enc 1 65536
loop 256:
  a[z] = enc[sv[a[z]] * ((z == 255) << 8)]
";
        let p = parse_gadget(src).unwrap();
        let printed = pretty_print(&p);
        assert_eq!(parse_gadget(&printed).unwrap(), p);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let src = "# header\narray a 4 8\n\nloop 2:\n  a[z] = 1 # trailing\n";
        assert!(parse_gadget(src).is_ok());
    }
}
