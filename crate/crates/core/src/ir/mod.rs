//! Program representation for a system of (at most two) communicating
//! processes, plus the loop invariant, initial set and sector data that go
//! with it.
//!
//! Each process is a flat list of labelled lines. A line holds one or more
//! statements; `send`, `receive`, `while (1)` and `end` stand alone. The
//! statement vocabulary is deliberately small: constant initialization,
//! vector initialization, linear assignments, a clamp, and rendezvous
//! communication. A channel is named after the variable it carries.

mod listing;
mod parse;
mod schedule;
mod validate;

use std::fmt;

use thiserror::Error;

use crate::symmat::{Matrix, SymMatrix};

pub use listing::{emit_listing, ListingAnnotation, ListingError};
pub use parse::parse_spec;
pub use schedule::{serialize_order, Event, Schedule};
pub use validate::{validate, Diagnostic};

/// The built-in benchmark: a lead-lag controller in feedback with a
/// discretized second-order plant.
pub const BENCHMARK_SYS: &str = include_str!("../../specs/benchmark.sys");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("line {line}: shape error in `{name}`: {msg}")]
    Shape {
        line: usize,
        name: String,
        msg: String,
    },
    #[error("line {line}: unknown variable `{name}`")]
    UnknownVariable { line: usize, name: String },
    #[error("line {line}: unknown channel `{name}`")]
    UnknownChannel { line: usize, name: String },
    #[error("line {line}: unknown constant `{name}`")]
    UnknownConstant { line: usize, name: String },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("deadlock: {}", blocked.join(", "))]
    Deadlock { blocked: Vec<String> },
}

/// Source line number, ignored by equality so that re-emitted specs compare
/// equal to the original.
#[derive(Debug, Clone, Copy, Default)]
pub struct SourceLine(pub usize);

impl PartialEq for SourceLine {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Coefficient of one term of a linear assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Coeff {
    /// Bare variable (`x`).
    Identity,
    /// Numeric literal (`0.5*x` or `[1, 2]*x`).
    Literal(Matrix),
    /// Constant initialized earlier in the process (`Ac*x`).
    Named(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub negated: bool,
    pub coeff: Coeff,
    pub source: String,
    /// Resolved coefficient, `dim(target) × dim(source)`, sign included.
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstTerm {
    Literal(Matrix),
    Named(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offset {
    pub negated: bool,
    pub value: ConstTerm,
    /// Resolved column vector with sign included.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatStyle {
    /// `max(min(y, hi), lo)`
    MaxMin,
    /// `sat(y, lo, hi)`
    Sat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VecValue {
    /// `zeros(rows,1)`
    Zeros(usize),
    Literal(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    /// Constant matrix (`Ac = [...]`, `Dc = -1280`, `K = zeros(2,2)`).
    MatInit {
        name: String,
        value: Matrix,
        zeros: bool,
    },
    /// Variable initialization (`xc = zeros(2,1)`).
    VecInit {
        target: String,
        value: VecValue,
    },
    /// `target = Σ coeff·source (+ offset)`.
    Assign {
        target: String,
        terms: Vec<Term>,
        offset: Option<Offset>,
    },
    /// `target = clamp(source, lo, hi)`.
    Saturate {
        target: String,
        source: String,
        lo: f64,
        hi: f64,
        style: SatStyle,
    },
    Send {
        channel: String,
    },
    Receive {
        channel: String,
    },
    While,
    End,
}

impl Stmt {
    /// Variables read by the statement.
    pub fn reads(&self) -> Vec<&str> {
        match self {
            Stmt::Assign { terms, .. } => terms.iter().map(|t| t.source.as_str()).collect(),
            Stmt::Saturate { source, .. } => vec![source.as_str()],
            _ => Vec::new(),
        }
    }

    /// Variable written by the statement, if any.
    pub fn writes(&self) -> Option<&str> {
        match self {
            Stmt::VecInit { target, .. }
            | Stmt::Assign { target, .. }
            | Stmt::Saturate { target, .. } => Some(target.as_str()),
            _ => None,
        }
    }

    pub fn is_communication(&self) -> bool {
        matches!(self, Stmt::Send { .. } | Stmt::Receive { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub stmts: Vec<Stmt>,
    pub source_line: SourceLine,
}

impl Line {
    pub fn is_while(&self) -> bool {
        matches!(self.stmts.as_slice(), [Stmt::While])
    }

    pub fn is_end(&self) -> bool {
        matches!(self.stmts.as_slice(), [Stmt::End])
    }

    /// The line's only statement when it is a send or a receive.
    pub fn communication(&self) -> Option<&Stmt> {
        match self.stmts.as_slice() {
            [s] if s.is_communication() => Some(s),
            _ => None,
        }
    }

    pub fn code(&self) -> String {
        self.stmts
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub name: String,
    pub lines: Vec<Line>,
}

impl Process {
    /// Index of the `while` line and of its `end` line.
    pub fn loop_bounds(&self) -> Option<(usize, usize)> {
        let head = self.lines.iter().position(Line::is_while)?;
        let end = self.lines.iter().position(Line::is_end)?;
        Some((head, end))
    }

    /// Variables mentioned by the process.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in self.lines.iter().flat_map(|l| &l.stmts) {
            let mut names = s.reads();
            names.extend(s.writes());
            if let Stmt::Send { channel } | Stmt::Receive { channel } = s {
                names.push(channel);
            }
            for n in names {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSpec {
    pub vars: Vec<String>,
    pub process: String,
    pub p: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub zero: Vec<String>,
    pub ellipsoid: Vec<String>,
    pub q: SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorSpec {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    /// Variables with their dimensions, in the canonical order used for
    /// every tuple of the analysis.
    pub variables: Vec<(String, usize)>,
    pub channels: Vec<Channel>,
    /// Process that runs first; defaults to the first declared one.
    pub start: Option<String>,
    pub processes: Vec<Process>,
    pub invariant: Option<InvariantSpec>,
    pub initial: Option<InitialSpec>,
    pub sector: Option<SectorSpec>,
}

impl SystemSpec {
    pub fn dim_of(&self, var: &str) -> Option<usize> {
        self.variables
            .iter()
            .find(|(n, _)| n == var)
            .map(|(_, d)| *d)
    }

    pub fn var_index(&self, var: &str) -> Option<usize> {
        self.variables.iter().position(|(n, _)| n == var)
    }

    pub fn process(&self, name: &str) -> Option<&Process> {
        self.processes.iter().find(|p| p.name == name)
    }

    pub fn process_index(&self, name: &str) -> Option<usize> {
        self.processes.iter().position(|p| p.name == name)
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn start_index(&self) -> usize {
        self.start
            .as_deref()
            .and_then(|s| self.process_index(s))
            .unwrap_or(0)
    }

    /// Finds a line by label: `(process index, line index)`.
    pub fn find_label(&self, label: &str) -> Option<(usize, usize)> {
        self.processes.iter().enumerate().find_map(|(pi, p)| {
            p.lines
                .iter()
                .position(|l| l.label == label)
                .map(|li| (pi, li))
        })
    }

    pub fn line(&self, process: usize, line: usize) -> &Line {
        &self.processes[process].lines[line]
    }

    pub fn with_lambda(&self, lambda: f64) -> SystemSpec {
        let mut s = self.clone();
        if let Some(sec) = s.sector.as_mut() {
            sec.lambda = lambda;
        }
        s
    }

    pub fn with_invariant_matrix(&self, p: SymMatrix) -> SystemSpec {
        let mut s = self.clone();
        if let Some(inv) = s.invariant.as_mut() {
            inv.p = p;
        }
        s
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

pub(crate) fn fmt_matrix(m: &Matrix) -> String {
    if m.shape() == (1, 1) {
        return fmt_num(m.get(0, 0));
    }
    let rows: Vec<String> = (0..m.rows())
        .map(|i| {
            m.row_slice(i)
                .iter()
                .map(|&v| fmt_num(v))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stmt::MatInit { name, value, zeros } => {
                if *zeros {
                    write!(f, "{name} = zeros({},{})", value.rows(), value.cols())
                } else {
                    write!(f, "{name} = {}", fmt_matrix(value))
                }
            }
            Stmt::VecInit { target, value } => match value {
                VecValue::Zeros(rows) => write!(f, "{target} = zeros({rows},1)"),
                VecValue::Literal(m) => write!(f, "{target} = {}", fmt_matrix(m)),
            },
            Stmt::Assign {
                target,
                terms,
                offset,
            } => {
                write!(f, "{target} = ")?;
                for (i, t) in terms.iter().enumerate() {
                    match (i, t.negated) {
                        (0, true) => write!(f, "-")?,
                        (0, false) => {}
                        (_, true) => write!(f, " - ")?,
                        (_, false) => write!(f, " + ")?,
                    }
                    match &t.coeff {
                        Coeff::Identity => write!(f, "{}", t.source)?,
                        Coeff::Literal(m) => write!(f, "{}*{}", fmt_matrix(m), t.source)?,
                        Coeff::Named(n) => write!(f, "{n}*{}", t.source)?,
                    }
                }
                if let Some(o) = offset {
                    let sign = match (terms.is_empty(), o.negated) {
                        (true, true) => "-",
                        (true, false) => "",
                        (false, true) => " - ",
                        (false, false) => " + ",
                    };
                    match &o.value {
                        ConstTerm::Literal(m) => write!(f, "{sign}{}", fmt_matrix(m))?,
                        ConstTerm::Named(n) => write!(f, "{sign}{n}")?,
                    }
                }
                Ok(())
            }
            Stmt::Saturate {
                target,
                source,
                lo,
                hi,
                style,
            } => match style {
                SatStyle::MaxMin => write!(
                    f,
                    "{target} = max(min({source},{}),{})",
                    fmt_num(*hi),
                    fmt_num(*lo)
                ),
                SatStyle::Sat => write!(
                    f,
                    "{target} = sat({source},{},{})",
                    fmt_num(*lo),
                    fmt_num(*hi)
                ),
            },
            Stmt::Send { channel } => write!(f, "send({channel})"),
            Stmt::Receive { channel } => write!(f, "receive({channel})"),
            Stmt::While => write!(f, "while (1)"),
            Stmt::End => write!(f, "end"),
        }
    }
}

fn fmt_block_matrix(f: &mut fmt::Formatter<'_>, key: &str, m: &Matrix) -> fmt::Result {
    let rows: Vec<String> = (0..m.rows())
        .map(|i| {
            m.row_slice(i)
                .iter()
                .map(|&v| fmt_num(v))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    let pad = " ".repeat(key.len() + 4);
    write!(f, "{key} = [")?;
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            write!(f, ";\n{pad}")?;
        }
        write!(f, "{r}")?;
    }
    writeln!(f, "]")
}

impl fmt::Display for SystemSpec {
    /// Emits the system in the same text format [`parse_spec`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[variables]")?;
        for (n, d) in &self.variables {
            writeln!(f, "{n} = {d}")?;
        }
        if !self.channels.is_empty() {
            writeln!(f, "\n[channels]")?;
            for c in &self.channels {
                writeln!(f, "{} = {} -> {}", c.name, c.from, c.to)?;
            }
        }
        if let Some(s) = &self.start {
            writeln!(f, "\n[schedule]\nstart = {s}")?;
        }
        for p in &self.processes {
            writeln!(f, "\n[process {}]", p.name)?;
            for l in &p.lines {
                writeln!(f, "{}: {}", l.label, l.code())?;
            }
        }
        if let Some(inv) = &self.invariant {
            writeln!(f, "\n[invariant]")?;
            writeln!(f, "vars = {}", inv.vars.join(", "))?;
            writeln!(f, "process = {}", inv.process)?;
            fmt_block_matrix(f, "P", inv.p.as_matrix())?;
        }
        if let Some(init) = &self.initial {
            writeln!(f, "\n[initial]")?;
            if !init.zero.is_empty() {
                writeln!(f, "zero = {}", init.zero.join(", "))?;
            }
            writeln!(f, "ellipsoid = {}", init.ellipsoid.join(", "))?;
            fmt_block_matrix(f, "Q", init.q.as_matrix())?;
        }
        if let Some(s) = &self.sector {
            writeln!(f, "\n[sector]")?;
            writeln!(f, "alpha = {}", fmt_num(s.alpha))?;
            writeln!(f, "beta = {}", fmt_num(s.beta))?;
            writeln!(f, "lambda = {}", fmt_num(s.lambda))?;
        }
        Ok(())
    }
}
