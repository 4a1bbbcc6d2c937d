//! Reader for the `.sys` text format (grammar in `docs/sys-format.md`).

use std::collections::HashMap;

use super::{
    Channel, Coeff, ConstTerm, InitialSpec, InvariantSpec, Line, Offset, Process, SatStyle,
    SectorSpec, SourceLine, SpecError, Stmt, SystemSpec, Term, VecValue,
};
use crate::symmat::{Matrix, SymMatrix};

type Result<T> = std::result::Result<T, SpecError>;

/// One logical line (physical lines joined while brackets are open), with
/// the source position of every character.
#[derive(Debug, Clone)]
struct Logical {
    chars: Vec<char>,
    pos: Vec<(usize, usize)>,
}

impl Logical {
    fn line(&self) -> usize {
        self.pos.first().map_or(0, |p| p.0)
    }

    fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn perr(line: usize, col: usize, msg: impl Into<String>) -> SpecError {
    SpecError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(l: &Logical, from: usize) -> Result<Vec<Token>> {
    let cs = &l.chars;
    let mut out = Vec::new();
    let mut i = from;
    while i < cs.len() {
        let c = cs[i];
        let (line, col) = l.pos[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(cs[start..i].iter().collect()),
                line,
                col,
            });
        } else if c.is_ascii_digit() || (c == '.' && i + 1 < cs.len() && cs[i + 1].is_ascii_digit())
        {
            let start = i;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            if i < cs.len() && (cs[i] == 'e' || cs[i] == 'E') {
                let mut j = i + 1;
                if j < cs.len() && (cs[j] == '+' || cs[j] == '-') {
                    j += 1;
                }
                if j < cs.len() && cs[j].is_ascii_digit() {
                    i = j;
                    while i < cs.len() && cs[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = cs[start..i].iter().collect();
            let v: f64 = s
                .parse()
                .map_err(|_| perr(line, col, format!("malformed number `{s}`")))?;
            if i < cs.len() && (cs[i].is_ascii_alphabetic() || cs[i] == '_') {
                return Err(perr(line, col, format!("malformed number `{s}{}`", cs[i])));
            }
            out.push(Token {
                tok: Tok::Num(v),
                line,
                col,
            });
        } else if c == '-' && i + 1 < cs.len() && cs[i + 1] == '>' {
            out.push(Token {
                tok: Tok::Arrow,
                line,
                col,
            });
            i += 2;
        } else if "[](),;*+-=:".contains(c) {
            out.push(Token {
                tok: Tok::Sym(c),
                line,
                col,
            });
            i += 1;
        } else {
            return Err(perr(line, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

/// Splits the text into logical lines, dropping comments and blank lines.
fn logical_lines(text: &str) -> Result<Vec<Logical>> {
    let mut out = Vec::new();
    let mut cur: Option<(Logical, i64)> = None;
    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let body: Vec<char> = raw.chars().take_while(|&c| c != '#' && c != '%').collect();
        let depth: i64 = body
            .iter()
            .map(|&c| match c {
                '[' | '(' => 1,
                ']' | ')' => -1,
                _ => 0,
            })
            .sum();
        match cur.as_mut() {
            Some((l, d)) => {
                l.chars.push(' ');
                l.pos.push((ln, 0));
                for (ci, &c) in body.iter().enumerate() {
                    l.chars.push(c);
                    l.pos.push((ln, ci + 1));
                }
                *d += depth;
            }
            None => {
                if body.iter().all(|c| c.is_whitespace()) {
                    continue;
                }
                let l = Logical {
                    chars: body.clone(),
                    pos: (0..body.len()).map(|ci| (ln, ci + 1)).collect(),
                };
                cur = Some((l, depth));
            }
        }
        if let Some((_, d)) = &cur {
            if *d <= 0 {
                let (l, _) = cur.take().expect("checked above");
                out.push(l);
            }
        }
    }
    if let Some((l, _)) = cur {
        let (line, col) = l.pos[0];
        return Err(perr(line, col, "unclosed bracket"));
    }
    Ok(out)
}

#[derive(Debug)]
enum Header {
    Variables,
    Channels,
    Schedule,
    Process(String),
    Invariant,
    Initial,
    Sector,
}

fn header(l: &Logical) -> Option<Result<Header>> {
    let t = l.text();
    let trimmed = t.trim();
    if !trimmed.starts_with('[') || !trimmed.ends_with(']') {
        return None;
    }
    let inner = trimmed[1..trimmed.len() - 1].trim();
    if !inner
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic())
    {
        return None;
    }
    let mut words = inner.split_whitespace();
    let kind = words.next().unwrap_or("");
    let rest: Vec<&str> = words.collect();
    let line = l.line();
    let simple = |h: Header| {
        if rest.is_empty() {
            Ok(h)
        } else {
            Err(perr(line, 1, format!("section [{kind}] takes no name")))
        }
    };
    Some(match kind {
        "variables" => simple(Header::Variables),
        "channels" => simple(Header::Channels),
        "schedule" => simple(Header::Schedule),
        "invariant" => simple(Header::Invariant),
        "initial" => simple(Header::Initial),
        "sector" => simple(Header::Sector),
        "process" => match rest.as_slice() {
            [name] if is_ident(name) => Ok(Header::Process(name.to_string())),
            _ => Err(perr(line, 1, "expected `[process NAME]`")),
        },
        other => Err(perr(line, 1, format!("unknown section [{other}]"))),
    })
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Token cursor.
struct Cur<'a> {
    toks: &'a [Token],
    i: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cur<'a> {
    fn new(toks: &'a [Token], line: usize, end_col: usize) -> Self {
        Cur {
            toks,
            i: 0,
            line,
            end_col,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.i + k).map(|t| &t.tok)
    }

    fn at_end(&self) -> bool {
        self.i >= self.toks.len()
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.i) {
            Some(t) => (t.line, t.col),
            None => (
                self.toks.last().map_or(self.line, |t| t.line),
                self.toks.last().map_or(self.end_col, |t| t.col + 1),
            ),
        }
    }

    fn err(&self, msg: impl Into<String>) -> SpecError {
        let (line, col) = self.here();
        perr(line, col, msg)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|t| t.tok.clone());
        self.i += 1;
        t
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.i += 1;
                Ok(s)
            }
            _ => Err(self.err("expected a name")),
        }
    }

    fn signed_number(&mut self) -> Result<f64> {
        let neg = if self.eat_sym('-') {
            true
        } else {
            self.eat_sym('+');
            false
        };
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.i += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn integer(&mut self) -> Result<usize> {
        let (line, col) = self.here();
        let v = self.signed_number()?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e6 {
            return Err(perr(
                line,
                col,
                format!("expected a nonnegative integer, got {v}"),
            ));
        }
        Ok(v as usize)
    }

    /// `[a, b; c, d]` (commas optional) or a bare number.
    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        if !self.eat_sym('[') {
            let v = self.signed_number()?;
            return Ok(Matrix::from_rows(&[&[v]]).expect("1x1"));
        }
        let (line, _) = self.here();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
        loop {
            match self.peek() {
                Some(Tok::Sym(']')) => {
                    self.i += 1;
                    break;
                }
                Some(Tok::Sym(';')) => {
                    self.i += 1;
                    rows.push(Vec::new());
                }
                Some(Tok::Sym(',')) => {
                    self.i += 1;
                }
                Some(_) => {
                    let v = self.signed_number()?;
                    rows.last_mut().expect("nonempty").push(v);
                }
                None => return Err(self.err("unclosed matrix literal")),
            }
        }
        if rows.last().is_some_and(|r| r.is_empty()) && rows.len() > 1 {
            rows.pop();
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(SpecError::Shape {
                line,
                name: name.to_string(),
                msg: "empty matrix".into(),
            });
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(SpecError::Shape {
                line,
                name: name.to_string(),
                msg: format!("row {} has {} entries, row 1 has {cols}", i + 1, r.len()),
            });
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        Ok(Matrix::from_rows(&refs).expect("rectangular"))
    }

    fn finish(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing input"))
        }
    }
}

/// `key = value` split of a logical line.
fn key_value(l: &Logical) -> Result<(String, Vec<Token>)> {
    let toks = lex(l, 0)?;
    let line = l.line();
    match toks.as_slice() {
        [Token {
            tok: Tok::Ident(k), ..
        }, Token {
            tok: Tok::Sym('='), ..
        }, rest @ ..] => {
            if rest.is_empty() {
                let last = &toks[1];
                return Err(perr(
                    last.line,
                    last.col + 1,
                    format!("missing value for `{k}`"),
                ));
            }
            Ok((k.clone(), rest.to_vec()))
        }
        [t, ..] => Err(perr(t.line, t.col, "expected `name = value`")),
        [] => Err(perr(line, 1, "expected `name = value`")),
    }
}

fn name_list(toks: &[Token], line: usize) -> Result<Vec<String>> {
    let mut c = Cur::new(toks, line, 1);
    let mut out = vec![c.ident()?];
    while c.eat_sym(',') {
        out.push(c.ident()?);
    }
    c.finish()?;
    Ok(out)
}

#[derive(Default)]
struct Sections {
    variables: Option<Vec<Logical>>,
    channels: Option<Vec<Logical>>,
    schedule: Option<Vec<Logical>>,
    processes: Vec<(String, usize, Vec<Logical>)>,
    invariant: Option<(usize, Vec<Logical>)>,
    initial: Option<(usize, Vec<Logical>)>,
    sector: Option<(usize, Vec<Logical>)>,
}

/// Parses and resolves a system specification.
pub fn parse_spec(text: &str) -> Result<SystemSpec> {
    let lines = logical_lines(text)?;
    let mut sec = Sections::default();
    // Sections are collected first so that later ones may be declared in
    // any order relative to [variables].
    let mut order: Vec<(Header, usize, Vec<Logical>)> = Vec::new();
    for l in lines {
        if let Some(h) = header(&l) {
            order.push((h?, l.line(), Vec::new()));
            continue;
        }
        match order.last_mut() {
            Some((_, _, body)) => body.push(l),
            None => return Err(perr(l.line(), 1, "content before the first section header")),
        }
    }
    for (h, line, body) in order {
        let dup = |name: &str| perr(line, 1, format!("duplicate section [{name}]"));
        match h {
            Header::Variables => {
                if sec.variables.replace(body).is_some() {
                    return Err(dup("variables"));
                }
            }
            Header::Channels => {
                if sec.channels.replace(body).is_some() {
                    return Err(dup("channels"));
                }
            }
            Header::Schedule => {
                if sec.schedule.replace(body).is_some() {
                    return Err(dup("schedule"));
                }
            }
            Header::Process(name) => {
                if sec.processes.iter().any(|(n, _, _)| *n == name) {
                    return Err(dup(&format!("process {name}")));
                }
                sec.processes.push((name, line, body));
            }
            Header::Invariant => {
                if sec.invariant.replace((line, body)).is_some() {
                    return Err(dup("invariant"));
                }
            }
            Header::Initial => {
                if sec.initial.replace((line, body)).is_some() {
                    return Err(dup("initial"));
                }
            }
            Header::Sector => {
                if sec.sector.replace((line, body)).is_some() {
                    return Err(dup("sector"));
                }
            }
        }
    }

    let variables = parse_variables(sec.variables.as_deref().unwrap_or(&[]))?;
    let vars: HashMap<String, usize> = variables.iter().cloned().collect();

    if sec.processes.is_empty() {
        return Err(perr(1, 1, "no [process NAME] section"));
    }
    if sec.processes.len() > 2 {
        return Err(perr(
            sec.processes[2].1,
            1,
            "at most two processes are supported",
        ));
    }
    let process_names: Vec<String> = sec.processes.iter().map(|(n, _, _)| n.clone()).collect();

    let channels = parse_channels(
        sec.channels.as_deref().unwrap_or(&[]),
        &vars,
        &process_names,
    )?;
    let start = parse_schedule(sec.schedule.as_deref().unwrap_or(&[]), &process_names)?;

    let mut processes = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    for (name, line, body) in &sec.processes {
        let p = parse_process(name, *line, body, &vars, &channels)?;
        for l in &p.lines {
            if let Some(prev) = labels.insert(l.label.clone(), l.source_line.0) {
                return Err(SpecError::Invalid {
                    line: l.source_line.0,
                    msg: format!("label `{}` already used on line {prev}", l.label),
                });
            }
        }
        processes.push(p);
    }

    let invariant = match &sec.invariant {
        Some((line, body)) => Some(parse_invariant(*line, body, &variables, &process_names)?),
        None => None,
    };
    let initial = match &sec.initial {
        Some((line, body)) => Some(parse_initial(*line, body, &variables)?),
        None => None,
    };
    let sector = match &sec.sector {
        Some((line, body)) => Some(parse_sector(*line, body)?),
        None => None,
    };

    Ok(SystemSpec {
        variables,
        channels,
        start,
        processes,
        invariant,
        initial,
        sector,
    })
}

fn parse_variables(body: &[Logical]) -> Result<Vec<(String, usize)>> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for l in body {
        let (k, toks) = key_value(l)?;
        let mut c = Cur::new(&toks, l.line(), 1);
        let (line, col) = c.here();
        let d = c.integer()?;
        c.finish()?;
        if d == 0 {
            return Err(perr(
                line,
                col,
                format!("variable `{k}` must have dimension >= 1"),
            ));
        }
        if out.iter().any(|(n, _)| *n == k) {
            return Err(SpecError::Invalid {
                line: l.line(),
                msg: format!("variable `{k}` declared twice"),
            });
        }
        out.push((k, d));
    }
    Ok(out)
}

fn parse_channels(
    body: &[Logical],
    vars: &HashMap<String, usize>,
    procs: &[String],
) -> Result<Vec<Channel>> {
    let mut out: Vec<Channel> = Vec::new();
    for l in body {
        let (name, toks) = key_value(l)?;
        let line = l.line();
        if !vars.contains_key(&name) {
            return Err(SpecError::UnknownVariable { line, name });
        }
        let mut c = Cur::new(&toks, line, 1);
        let from = c.ident()?;
        if c.peek() != Some(&Tok::Arrow) {
            return Err(c.err("expected `->`"));
        }
        c.bump();
        let to = c.ident()?;
        c.finish()?;
        for p in [&from, &to] {
            if !procs.contains(p) {
                return Err(SpecError::Invalid {
                    line,
                    msg: format!("channel `{name}` names unknown process `{p}`"),
                });
            }
        }
        if from == to {
            return Err(SpecError::Invalid {
                line,
                msg: format!("channel `{name}` connects `{from}` to itself"),
            });
        }
        if out.iter().any(|ch| ch.name == name) {
            return Err(SpecError::Invalid {
                line,
                msg: format!("channel `{name}` declared twice"),
            });
        }
        out.push(Channel { name, from, to });
    }
    Ok(out)
}

fn parse_schedule(body: &[Logical], procs: &[String]) -> Result<Option<String>> {
    let mut start = None;
    for l in body {
        let (k, toks) = key_value(l)?;
        if k != "start" {
            return Err(perr(
                l.line(),
                1,
                format!("unknown key `{k}` in [schedule]"),
            ));
        }
        let names = name_list(&toks, l.line())?;
        match names.as_slice() {
            [p] if procs.contains(p) => start = Some(p.clone()),
            _ => {
                return Err(SpecError::Invalid {
                    line: l.line(),
                    msg: format!(
                        "`start` must name one declared process, got `{}`",
                        names.join(", ")
                    ),
                })
            }
        }
    }
    Ok(start)
}

/// Splits tokens at `;` outside brackets.
fn split_statements(toks: &[Token]) -> Vec<&[Token]> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, t) in toks.iter().enumerate() {
        match t.tok {
            Tok::Sym('[') | Tok::Sym('(') => depth += 1,
            Tok::Sym(']') | Tok::Sym(')') => depth -= 1,
            Tok::Sym(';') if depth == 0 => {
                out.push(&toks[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&toks[start..]);
    out.into_iter().filter(|s| !s.is_empty()).collect()
}

struct ProcessCtx<'a> {
    vars: &'a HashMap<String, usize>,
    channels: &'a [Channel],
    consts: HashMap<String, Matrix>,
}

fn parse_process(
    name: &str,
    header_line: usize,
    body: &[Logical],
    vars: &HashMap<String, usize>,
    channels: &[Channel],
) -> Result<Process> {
    let mut ctx = ProcessCtx {
        vars,
        channels,
        consts: HashMap::new(),
    };
    let mut lines = Vec::new();
    for l in body {
        let cs = &l.chars;
        let mut i = 0;
        while i < cs.len() && cs[i].is_whitespace() {
            i += 1;
        }
        let ls = i;
        while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
            i += 1;
        }
        let label: String = cs[ls..i].iter().collect();
        while i < cs.len() && cs[i].is_whitespace() {
            i += 1;
        }
        if label.is_empty() || i >= cs.len() || cs[i] != ':' {
            let (line, col) = l.pos[ls.min(cs.len().saturating_sub(1))];
            return Err(perr(line, col, "expected `LABEL: statement`"));
        }
        let toks = lex(l, i + 1)?;
        let line = l.line();
        let end_col = l.pos.last().map_or(1, |p| p.1 + 1);
        let parts = split_statements(&toks);
        if parts.is_empty() {
            return Err(perr(
                line,
                end_col,
                format!("line `{label}` has no statement"),
            ));
        }
        let mut stmts = Vec::new();
        for part in &parts {
            stmts.push(parse_stmt(part, line, end_col, &mut ctx)?);
        }
        if stmts.len() > 1
            && stmts.iter().any(|s| {
                matches!(
                    s,
                    Stmt::Send { .. } | Stmt::Receive { .. } | Stmt::While | Stmt::End
                )
            })
        {
            return Err(SpecError::Invalid {
                line,
                msg: format!("`{label}`: send, receive, while and end must be alone on their line"),
            });
        }
        lines.push(Line {
            label,
            stmts,
            source_line: SourceLine(line),
        });
    }
    check_loop_structure(name, header_line, &lines)?;
    Ok(Process {
        name: name.to_string(),
        lines,
    })
}

fn check_loop_structure(name: &str, header_line: usize, lines: &[Line]) -> Result<()> {
    let heads: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].is_while()).collect();
    let ends: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].is_end()).collect();
    let line_of = |i: usize| lines[i].source_line.0;
    match (heads.as_slice(), ends.as_slice()) {
        ([], []) => Ok(()),
        ([h], [e]) if h < e => {
            if *e + 1 != lines.len() {
                return Err(SpecError::Invalid {
                    line: line_of(e + 1),
                    msg: format!("process `{name}`: statements after `end` are unreachable"),
                });
            }
            if *e == h + 1 {
                return Err(SpecError::Invalid {
                    line: line_of(*h),
                    msg: format!("process `{name}`: loop body is empty"),
                });
            }
            Ok(())
        }
        ([_, second, ..], _) => Err(SpecError::Invalid {
            line: line_of(*second),
            msg: format!("process `{name}`: at most one loop is supported"),
        }),
        (_, [_, second, ..]) => Err(SpecError::Invalid {
            line: line_of(*second),
            msg: format!("process `{name}`: more than one `end`"),
        }),
        ([h], []) => Err(SpecError::Invalid {
            line: line_of(*h),
            msg: format!("process `{name}`: `while` without `end`"),
        }),
        ([], [e]) => Err(SpecError::Invalid {
            line: line_of(*e),
            msg: format!("process `{name}`: `end` without `while`"),
        }),
        _ => Err(SpecError::Invalid {
            line: header_line,
            msg: format!("process `{name}`: `end` before `while`"),
        }),
    }
}

enum Factor {
    Name(String),
    Literal(Matrix),
}

struct RawTerm {
    negated: bool,
    coeff: Option<Factor>,
    /// Variable multiplied by the coefficient; `None` for a constant term.
    source: Option<String>,
    line: usize,
    col: usize,
}

fn parse_stmt(toks: &[Token], line: usize, end_col: usize, ctx: &mut ProcessCtx) -> Result<Stmt> {
    let mut c = Cur::new(toks, line, end_col);
    let first = c.ident()?;
    match first.as_str() {
        "while" => {
            c.expect_sym('(')?;
            match c.bump() {
                Some(Tok::Num(1.0)) => {}
                Some(Tok::Ident(s)) if s == "true" => {}
                _ => {
                    return Err(perr(
                        line,
                        c.here().1,
                        "only `while (1)` loops are supported",
                    ))
                }
            }
            c.expect_sym(')')?;
            c.finish()?;
            return Ok(Stmt::While);
        }
        "end" if c.at_end() => return Ok(Stmt::End),
        "send" | "receive" if c.peek() == Some(&Tok::Sym('(')) => {
            c.expect_sym('(')?;
            let (cl, _) = c.here();
            let ch = c.ident()?;
            c.expect_sym(')')?;
            c.finish()?;
            if !ctx.channels.iter().any(|x| x.name == ch) {
                return Err(SpecError::UnknownChannel { line: cl, name: ch });
            }
            return Ok(if first == "send" {
                Stmt::Send { channel: ch }
            } else {
                Stmt::Receive { channel: ch }
            });
        }
        _ => {}
    }
    let target = first;
    c.expect_sym('=')?;
    let is_var = ctx.vars.contains_key(&target);

    // zeros(r, c)
    if c.peek() == Some(&Tok::Ident("zeros".into())) && c.peek_at(1) == Some(&Tok::Sym('(')) {
        c.bump();
        c.bump();
        let r = c.integer()?;
        c.expect_sym(',')?;
        let k = c.integer()?;
        c.expect_sym(')')?;
        c.finish()?;
        if r == 0 || k == 0 {
            return Err(SpecError::Shape {
                line,
                name: target,
                msg: "zeros needs positive dimensions".into(),
            });
        }
        if is_var {
            let d = ctx.vars[&target];
            if (r, k) != (d, 1) {
                return Err(SpecError::Shape {
                    line,
                    name: target,
                    msg: format!("zeros({r},{k}) does not match declared dimension {d}"),
                });
            }
            return Ok(Stmt::VecInit {
                target,
                value: VecValue::Zeros(r),
            });
        }
        let value = Matrix::zeros(r, k);
        return define_const(ctx, target, value, true, line);
    }

    // max(min(y, hi), lo) or sat(y, lo, hi)
    if let Some(Tok::Ident(f)) = c.peek() {
        if (f == "max" || f == "sat") && c.peek_at(1) == Some(&Tok::Sym('(')) {
            let style = if f == "max" {
                SatStyle::MaxMin
            } else {
                SatStyle::Sat
            };
            c.bump();
            c.bump();
            let (source, lo, hi) = if style == SatStyle::MaxMin {
                if c.ident()? != "min" {
                    return Err(c.err("expected `max(min(var, hi), lo)`"));
                }
                c.expect_sym('(')?;
                let s = c.ident()?;
                c.expect_sym(',')?;
                let hi = c.signed_number()?;
                c.expect_sym(')')?;
                c.expect_sym(',')?;
                let lo = c.signed_number()?;
                (s, lo, hi)
            } else {
                let s = c.ident()?;
                c.expect_sym(',')?;
                let lo = c.signed_number()?;
                c.expect_sym(',')?;
                let hi = c.signed_number()?;
                (s, lo, hi)
            };
            c.expect_sym(')')?;
            c.finish()?;
            for v in [&target, &source] {
                match ctx.vars.get(v) {
                    None => {
                        return Err(SpecError::UnknownVariable {
                            line,
                            name: v.clone(),
                        })
                    }
                    Some(&d) if d != 1 => {
                        return Err(SpecError::Shape {
                            line,
                            name: v.clone(),
                            msg: "saturation applies to scalar variables".into(),
                        })
                    }
                    _ => {}
                }
            }
            if !(lo < hi) {
                return Err(SpecError::Invalid {
                    line,
                    msg: format!("saturation bounds [{lo}, {hi}] are empty"),
                });
            }
            return Ok(Stmt::Saturate {
                target,
                source,
                lo,
                hi,
                style,
            });
        }
    }

    // Sum of terms.
    let mut raw = Vec::new();
    loop {
        let (tl, tc) = c.here();
        let negated = if raw.is_empty() {
            if c.eat_sym('-') {
                true
            } else {
                c.eat_sym('+');
                false
            }
        } else if c.eat_sym('-') {
            true
        } else if c.eat_sym('+') {
            false
        } else {
            return Err(c.err("expected `+`, `-` or end of statement"));
        };
        let factor = match c.peek() {
            Some(Tok::Ident(_)) => Factor::Name(c.ident()?),
            Some(Tok::Num(_)) | Some(Tok::Sym('[')) => Factor::Literal(c.matrix(&target)?),
            Some(Tok::Sym('-')) if matches!(c.peek_at(1), Some(Tok::Num(_))) => {
                Factor::Literal(c.matrix(&target)?)
            }
            _ => return Err(c.err("expected a name, a number or a matrix")),
        };
        let (coeff, source) = if c.eat_sym('*') {
            (Some(factor), Some(c.ident()?))
        } else {
            match factor {
                Factor::Name(n) if ctx.vars.contains_key(&n) => (None, Some(n)),
                f => (Some(f), None),
            }
        };
        raw.push(RawTerm {
            negated,
            coeff,
            source,
            line: tl,
            col: tc,
        });
        if c.at_end() {
            break;
        }
    }

    if !is_var {
        // Constant definition: a single (possibly negated) literal.
        return match raw.as_slice() {
            [RawTerm {
                negated,
                coeff: Some(Factor::Literal(m)),
                source: None,
                ..
            }] => {
                let value = if *negated { m.scale(-1.0) } else { m.clone() };
                define_const(ctx, target, value, false, line)
            }
            [RawTerm {
                coeff: Some(Factor::Name(n)),
                source: None,
                ..
            }] if !ctx.consts.contains_key(n) => Err(SpecError::UnknownVariable { line, name: target }),
            _ => Err(SpecError::Invalid {
                line,
                msg: format!("`{target}` is not a declared variable, and constants must be set from literals"),
            }),
        };
    }

    let tdim = ctx.vars[&target];
    let mut terms = Vec::new();
    let mut offset: Option<Offset> = None;
    for r in raw {
        match r.source {
            Some(src) => {
                let sdim = match ctx.vars.get(&src) {
                    Some(&d) => d,
                    None if ctx.consts.contains_key(&src) => {
                        return Err(SpecError::Invalid {
                            line: r.line,
                            msg: format!("`{src}` is a constant, not a variable"),
                        })
                    }
                    None => {
                        return Err(SpecError::UnknownVariable {
                            line: r.line,
                            name: src,
                        })
                    }
                };
                let (coeff, base, cname) = match r.coeff {
                    None => (Coeff::Identity, None, src.clone()),
                    Some(Factor::Literal(m)) => (
                        Coeff::Literal(m.clone()),
                        Some(m),
                        format!("coefficient of {src}"),
                    ),
                    Some(Factor::Name(n)) => match ctx.consts.get(&n) {
                        Some(m) => (Coeff::Named(n.clone()), Some(m.clone()), n),
                        None if ctx.vars.contains_key(&n) => {
                            return Err(SpecError::Invalid {
                                line: r.line,
                                msg: format!("product of variables `{n}*{src}` is not linear"),
                            })
                        }
                        None => {
                            return Err(SpecError::UnknownConstant {
                                line: r.line,
                                name: n,
                            })
                        }
                    },
                };
                let matrix = match base {
                    None => {
                        if sdim != tdim {
                            return Err(SpecError::Shape {
                                line: r.line,
                                name: src,
                                msg: format!(
                                    "dimension {sdim} assigned to `{target}` of dimension {tdim}"
                                ),
                            });
                        }
                        Matrix::identity(tdim)
                    }
                    Some(m) if m.shape() == (1, 1) && (tdim, sdim) != (1, 1) => {
                        if sdim != tdim {
                            return Err(SpecError::Shape {
                                line: r.line,
                                name: cname,
                                msg: format!(
                                    "scalar times dimension {sdim} assigned to dimension {tdim}"
                                ),
                            });
                        }
                        Matrix::identity(tdim).scale(m.get(0, 0))
                    }
                    Some(m) => {
                        if m.shape() != (tdim, sdim) {
                            return Err(SpecError::Shape {
                                line: r.line,
                                name: cname,
                                msg: format!(
                                    "is {}x{} but maps dimension {sdim} to dimension {tdim}",
                                    m.rows(),
                                    m.cols()
                                ),
                            });
                        }
                        m
                    }
                };
                let matrix = if r.negated {
                    matrix.scale(-1.0)
                } else {
                    matrix
                };
                terms.push(Term {
                    negated: r.negated,
                    coeff,
                    source: src,
                    matrix,
                });
            }
            None => {
                if offset.is_some() {
                    return Err(perr(r.line, r.col, "at most one constant term is allowed"));
                }
                let (value, m) = match r.coeff.expect("constant terms carry a factor") {
                    Factor::Literal(m) => (ConstTerm::Literal(m.clone()), m),
                    Factor::Name(n) => match ctx.consts.get(&n) {
                        Some(m) => (ConstTerm::Named(n.clone()), m.clone()),
                        None => {
                            return Err(SpecError::UnknownVariable {
                                line: r.line,
                                name: n,
                            })
                        }
                    },
                };
                if m.shape() != (tdim, 1) {
                    return Err(SpecError::Shape {
                        line: r.line,
                        name: target.clone(),
                        msg: format!(
                            "constant term is {}x{}, expected {tdim}x1",
                            m.rows(),
                            m.cols()
                        ),
                    });
                }
                let sign = if r.negated { -1.0 } else { 1.0 };
                offset = Some(Offset {
                    negated: r.negated,
                    value,
                    vector: m.as_slice().iter().map(|v| sign * v).collect(),
                });
            }
        }
    }
    if terms.is_empty() {
        let o = offset.expect("at least one term was parsed");
        return match o.value {
            ConstTerm::Literal(m) if !o.negated => Ok(Stmt::VecInit {
                target,
                value: VecValue::Literal(m),
            }),
            ConstTerm::Literal(m) => Ok(Stmt::VecInit {
                target,
                value: VecValue::Literal(m.scale(-1.0)),
            }),
            ConstTerm::Named(_) => Ok(Stmt::Assign {
                target,
                terms,
                offset: Some(o),
            }),
        };
    }
    Ok(Stmt::Assign {
        target,
        terms,
        offset,
    })
}

fn define_const(
    ctx: &mut ProcessCtx,
    name: String,
    value: Matrix,
    zeros: bool,
    line: usize,
) -> Result<Stmt> {
    if ctx.consts.contains_key(&name) {
        return Err(SpecError::Invalid {
            line,
            msg: format!("constant `{name}` is defined twice"),
        });
    }
    ctx.consts.insert(name.clone(), value.clone());
    Ok(Stmt::MatInit { name, value, zeros })
}

struct Keys {
    section: &'static str,
    line: usize,
    map: Vec<(String, usize, Vec<Token>)>,
}

impl Keys {
    fn collect(
        section: &'static str,
        line: usize,
        body: &[Logical],
        allowed: &[&str],
    ) -> Result<Keys> {
        let mut map: Vec<(String, usize, Vec<Token>)> = Vec::new();
        for l in body {
            let (k, toks) = key_value(l)?;
            if !allowed.contains(&k.as_str()) {
                return Err(perr(
                    l.line(),
                    1,
                    format!("unknown key `{k}` in [{section}]"),
                ));
            }
            if map.iter().any(|(n, _, _)| *n == k) {
                return Err(perr(
                    l.line(),
                    1,
                    format!("duplicate key `{k}` in [{section}]"),
                ));
            }
            map.push((k, l.line(), toks));
        }
        Ok(Keys { section, line, map })
    }

    fn get(&self, key: &str) -> Option<(usize, &[Token])> {
        self.map
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, l, t)| (*l, t.as_slice()))
    }

    fn require(&self, key: &str) -> Result<(usize, &[Token])> {
        self.get(key).ok_or_else(|| SpecError::Invalid {
            line: self.line,
            msg: format!("[{}] is missing `{key}`", self.section),
        })
    }

    fn number(&self, key: &str) -> Result<f64> {
        let (line, toks) = self.require(key)?;
        let mut c = Cur::new(toks, line, 1);
        let v = c.signed_number()?;
        c.finish()?;
        Ok(v)
    }

    fn names(&self, key: &str) -> Result<Option<(usize, Vec<String>)>> {
        match self.get(key) {
            Some((line, toks)) => Ok(Some((line, name_list(toks, line)?))),
            None => Ok(None),
        }
    }

    fn sym_matrix(&self, key: &str, dim: usize) -> Result<SymMatrix> {
        let (line, toks) = self.require(key)?;
        let mut c = Cur::new(toks, line, 1);
        let m = c.matrix(key)?;
        c.finish()?;
        if m.shape() != (dim, dim) {
            return Err(SpecError::Shape {
                line,
                name: key.to_string(),
                msg: format!("is {}x{}, expected {dim}x{dim}", m.rows(), m.cols()),
            });
        }
        Ok(SymMatrix::from_matrix(&m).expect("square"))
    }
}

fn resolve_vars(names: &[String], line: usize, variables: &[(String, usize)]) -> Result<usize> {
    let mut total = 0;
    for (i, n) in names.iter().enumerate() {
        match variables.iter().find(|(v, _)| v == n) {
            Some((_, d)) => total += d,
            None => {
                return Err(SpecError::UnknownVariable {
                    line,
                    name: n.clone(),
                })
            }
        }
        if names[..i].contains(n) {
            return Err(SpecError::Invalid {
                line,
                msg: format!("variable `{n}` listed twice"),
            });
        }
    }
    Ok(total)
}

fn parse_invariant(
    line: usize,
    body: &[Logical],
    variables: &[(String, usize)],
    procs: &[String],
) -> Result<InvariantSpec> {
    let keys = Keys::collect("invariant", line, body, &["vars", "process", "P"])?;
    let (vl, vars) = keys.names("vars")?.ok_or_else(|| SpecError::Invalid {
        line,
        msg: "[invariant] is missing `vars`".into(),
    })?;
    let dim = resolve_vars(&vars, vl, variables)?;
    let process = match keys.names("process")? {
        Some((pl, names)) => match names.as_slice() {
            [p] if procs.contains(p) => p.clone(),
            _ => {
                return Err(SpecError::Invalid {
                    line: pl,
                    msg: format!(
                        "`process` must name one declared process, got `{}`",
                        names.join(", ")
                    ),
                })
            }
        },
        None => procs[procs.len() - 1].clone(),
    };
    let p = keys.sym_matrix("P", dim)?;
    Ok(InvariantSpec { vars, process, p })
}

fn parse_initial(
    line: usize,
    body: &[Logical],
    variables: &[(String, usize)],
) -> Result<InitialSpec> {
    let keys = Keys::collect("initial", line, body, &["zero", "ellipsoid", "Q"])?;
    let zero = match keys.names("zero")? {
        Some((zl, z)) => {
            resolve_vars(&z, zl, variables)?;
            z
        }
        None => Vec::new(),
    };
    let (el, ellipsoid) = keys.names("ellipsoid")?.ok_or_else(|| SpecError::Invalid {
        line,
        msg: "[initial] is missing `ellipsoid`".into(),
    })?;
    let dim = resolve_vars(&ellipsoid, el, variables)?;
    if let Some(n) = zero.iter().find(|n| ellipsoid.contains(n)) {
        return Err(SpecError::Invalid {
            line: el,
            msg: format!("variable `{n}` is both zero and in the ellipsoid"),
        });
    }
    let q = keys.sym_matrix("Q", dim)?;
    Ok(InitialSpec { zero, ellipsoid, q })
}

fn parse_sector(line: usize, body: &[Logical]) -> Result<SectorSpec> {
    let keys = Keys::collect("sector", line, body, &["alpha", "beta", "lambda"])?;
    Ok(SectorSpec {
        alpha: keys.number("alpha")?,
        beta: keys.number("beta")?,
        lambda: keys.number("lambda")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::BENCHMARK_SYS;
    use crate::testdata;

    #[test]
    fn benchmark_parses_to_the_typed_matrices() {
        let s = parse_spec(BENCHMARK_SYS).unwrap();
        assert_eq!(s.processes.len(), 2);
        let ctrl = s.process("controller").unwrap();
        assert_eq!(ctrl.lines.len(), 12);
        let plant = s.process("plant").unwrap();
        assert_eq!(plant.lines.len(), 9);
        match &ctrl.lines[0].stmts[0] {
            Stmt::MatInit { name, value, .. } => {
                assert_eq!(name, "Ac");
                assert_eq!(value, &testdata::ac());
            }
            other => panic!("unexpected {other:?}"),
        }
        match &ctrl.lines[2].stmts[..] {
            [Stmt::MatInit { value: b, .. }, Stmt::MatInit { name, value: d, .. }] => {
                assert_eq!(b, &testdata::bc());
                assert_eq!(name, "Dc");
                assert_eq!(d.get(0, 0), testdata::DC);
            }
            other => panic!("unexpected {other:?}"),
        }
        match &ctrl.lines[7].stmts[0] {
            Stmt::Assign {
                target,
                terms,
                offset,
            } => {
                assert_eq!(target, "u");
                assert!(offset.is_none());
                assert_eq!(terms[0].matrix, testdata::cc());
                assert_eq!(terms[1].matrix.get(0, 0), testdata::DC);
            }
            other => panic!("unexpected {other:?}"),
        }
        match &plant.lines[7].stmts[0] {
            Stmt::Assign { terms, .. } => {
                assert_eq!(terms[0].matrix, testdata::ap());
                assert_eq!(terms[1].matrix, testdata::bp());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ctrl.lines[6].stmts[0],
            Stmt::Saturate { lo, hi, .. } if lo == -1.0 && hi == 1.0
        ));
        assert_eq!(s.invariant.as_ref().unwrap().p, testdata::p());
        assert_eq!(s.initial.as_ref().unwrap().q, testdata::q());
        assert_eq!(s.start.as_deref(), Some("plant"));
        assert_eq!(s.sector.as_ref().unwrap().alpha, 0.2);
    }

    #[test]
    fn emitted_text_is_a_fixed_point() {
        let s = parse_spec(BENCHMARK_SYS).unwrap();
        let text = s.to_string();
        let again = parse_spec(&text).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_string(), text);
    }

    const MINI: &str = "[variables]\nx = 1\n[process a]\n1a: x = 0.5*x\n";

    #[test]
    fn empty_process_body_is_accepted() {
        let s = parse_spec("[variables]\nx = 1\n[process a]\n").unwrap();
        assert!(s.processes[0].lines.is_empty());
        assert!(parse_spec(MINI).is_ok());
    }

    #[test]
    fn undeclared_channel_is_rejected() {
        let t = "[variables]\ny = 1\n[process a]\n1a: send(y)\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::UnknownChannel { line: 4, .. })
        ));
    }

    #[test]
    fn errors_carry_positions() {
        let t = "[variables]\nx = 1\n[process a]\n1a: x = 0.5*x $\n";
        match parse_spec(t) {
            Err(SpecError::Parse { line, col, .. }) => assert_eq!((line, col), (4, 15)),
            other => panic!("unexpected {other:?}"),
        }
        let t = "[variables]\nx = 2\n[process a]\n1a: K = [1, 2; 3]\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::Shape { line: 4, .. })
        ));
        let t = "[variables]\nx = 2\n[process a]\n1a: K = [1, 2]\n2a: x = K*x\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::Shape { line: 5, .. })
        ));
        let t = "[variables]\nx = 1\n[process a]\n1a: x = K*x\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::UnknownConstant { line: 4, .. })
        ));
        let t = "[variables]\nx = 1\n[process a]\n1a: x = 2*z\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::UnknownVariable { line: 4, .. })
        ));
        let t = "[variables]\nx = 1\n[process a]\n1a: x = x\n1a: x = x\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::Invalid { line: 5, .. })
        ));
        let t = "[variables]\nx = 1\n[bogus]\n";
        assert!(matches!(
            parse_spec(t),
            Err(SpecError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn statement_forms() {
        let t = "[variables]\nx = 2\ny = 1\nz = 1\n[process a]\n\
                 1a: K = [1 -2; 3 4]; k = -3\n\
                 2a: x = [1; 2]\n\
                 3a: z = sat(y, -2, 2)\n\
                 4a: x = -K*x + [0.5; 0.5]*y - [1; 1]\n\
                 5a: y = 2*z - y\n\
                 6a: x = k*x\n";
        let s = parse_spec(t).unwrap();
        let p = &s.processes[0];
        assert!(matches!(
            &p.lines[1].stmts[0],
            Stmt::VecInit {
                value: VecValue::Literal(_),
                ..
            }
        ));
        assert!(
            matches!(p.lines[2].stmts[0], Stmt::Saturate { lo, hi, style: SatStyle::Sat, .. } if lo == -2.0 && hi == 2.0)
        );
        match &p.lines[3].stmts[0] {
            Stmt::Assign { terms, offset, .. } => {
                assert_eq!(terms[0].matrix.get(0, 1), 2.0);
                assert_eq!(offset.as_ref().unwrap().vector, vec![-1.0, -1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        match &p.lines[5].stmts[0] {
            Stmt::Assign { terms, .. } => {
                assert_eq!(terms[0].matrix, Matrix::identity(2).scale(-3.0))
            }
            other => panic!("unexpected {other:?}"),
        }
        let again = parse_spec(&s.to_string()).unwrap();
        assert_eq!(again, s);
    }
}
