//! Semantic checks that go beyond parsing.

use std::collections::HashMap;
use std::fmt;

use super::{serialize_order, Stmt, SystemSpec};

/// A problem found in a parsed system, with the source line when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Diagnostic {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Runs every check and returns the problems found; empty means valid.
pub fn validate(spec: &SystemSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_channels(spec, &mut out);
    check_writers(spec, &mut out);
    check_saturations(spec, &mut out);
    check_invariant(spec, &mut out);
    check_initial(spec, &mut out);
    check_sector(spec, &mut out);
    match serialize_order(spec) {
        Ok(_) => check_aliasing(spec, &mut out),
        Err(e) => out.push(Diagnostic::global(e.to_string())),
    }
    out
}

fn check_channels(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let mut sent: Vec<&str> = Vec::new();
    let mut received: Vec<&str> = Vec::new();
    for p in &spec.processes {
        for l in &p.lines {
            let line = l.source_line.0;
            match l.communication() {
                Some(Stmt::Send { channel }) => {
                    sent.push(channel);
                    if let Some(c) = spec.channel(channel) {
                        if c.from != p.name {
                            out.push(Diagnostic::at(
                                line,
                                format!(
                                    "`{}` sends on `{channel}`, which runs from `{}`",
                                    p.name, c.from
                                ),
                            ));
                        }
                    }
                }
                Some(Stmt::Receive { channel }) => {
                    received.push(channel);
                    if let Some(c) = spec.channel(channel) {
                        if c.to != p.name {
                            out.push(Diagnostic::at(
                                line,
                                format!(
                                    "`{}` receives on `{channel}`, which runs to `{}`",
                                    p.name, c.to
                                ),
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    for c in &spec.channels {
        let s = sent.contains(&c.name.as_str());
        let r = received.contains(&c.name.as_str());
        if s != r {
            let missing = if s { "received" } else { "sent" };
            out.push(Diagnostic::global(format!(
                "channel `{}` is never {missing}",
                c.name
            )));
        }
    }
}

fn check_writers(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let mut writer: HashMap<&str, &str> = HashMap::new();
    for p in &spec.processes {
        for l in &p.lines {
            for s in &l.stmts {
                let Some(v) = s.writes() else { continue };
                match writer.get(v) {
                    Some(&q) if q != p.name => out.push(Diagnostic::at(
                        l.source_line.0,
                        format!("`{v}` is assigned by both `{q}` and `{}`", p.name),
                    )),
                    _ => {
                        writer.insert(v, &p.name);
                    }
                }
            }
        }
    }
}

fn check_saturations(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    for p in &spec.processes {
        for l in &p.lines {
            for s in &l.stmts {
                if let Stmt::Saturate {
                    target,
                    source,
                    lo,
                    hi,
                    ..
                } = s
                {
                    let line = l.source_line.0;
                    if target == source {
                        out.push(Diagnostic::at(
                            line,
                            format!("saturation of `{source}` overwrites its input"),
                        ));
                    }
                    if !(*lo < 0.0 && *hi > 0.0) {
                        out.push(Diagnostic::at(
                            line,
                            format!(
                                "saturation bounds [{lo}, {hi}] must contain 0 in their interior"
                            ),
                        ));
                    }
                    if spec.sector.is_none() {
                        out.push(Diagnostic::at(
                            line,
                            "saturation without a [sector] section",
                        ));
                    }
                }
            }
        }
    }
}

fn check_invariant(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let Some(inv) = &spec.invariant else { return };
    if inv.p.cholesky().is_err() {
        out.push(Diagnostic::global(
            "invariant matrix P is not positive definite",
        ));
    }
    match spec.process(&inv.process) {
        Some(p) if p.loop_bounds().is_none() => out.push(Diagnostic::global(format!(
            "invariant process `{}` has no loop",
            inv.process
        ))),
        _ => {}
    }
}

fn check_initial(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let Some(init) = &spec.initial else { return };
    if init.q.cholesky().is_err() {
        out.push(Diagnostic::global(
            "initial matrix Q is not positive definite",
        ));
    }
    if let Some(inv) = &spec.invariant {
        let mut a: Vec<&String> = init.zero.iter().chain(&init.ellipsoid).collect();
        let mut b: Vec<&String> = inv.vars.iter().collect();
        a.sort();
        b.sort();
        if a != b {
            out.push(Diagnostic::global(
                "initial `zero` and `ellipsoid` must together cover exactly the invariant variables",
            ));
        }
    }
}

fn check_sector(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let Some(s) = &spec.sector else { return };
    if !(s.alpha >= 0.0 && s.alpha <= s.beta && s.beta.is_finite()) {
        out.push(Diagnostic::global(format!(
            "sector needs 0 <= alpha <= beta, got alpha = {}, beta = {}",
            s.alpha, s.beta
        )));
    }
    if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
        out.push(Diagnostic::global(format!(
            "lambda must be nonnegative, got {}",
            s.lambda
        )));
    }
}

/// Checks that the single shared namespace is sound: whenever a process
/// reads a variable, the latest value of it anywhere in the system is the
/// one that process holds. Values are tracked as version numbers over the
/// prefix and two periods of the schedule.
fn check_aliasing(spec: &SystemSpec, out: &mut Vec<Diagnostic>) {
    let Ok(schedule) = serialize_order(spec) else {
        return;
    };
    let n = spec.processes.len();
    let mut next = 1u64;
    let mut global: HashMap<&str, u64> = spec
        .variables
        .iter()
        .map(|(v, _)| (v.as_str(), 0))
        .collect();
    let mut local: Vec<HashMap<&str, u64>> = vec![global.clone(); n];
    let mut buffers: HashMap<&str, u64> = HashMap::new();
    let mut reported: Vec<(String, String)> = Vec::new();
    for e in schedule.unrolled(2) {
        let p = e.process;
        let line = spec.line(p, e.line);
        for s in &line.stmts {
            let mut reads = s.reads();
            if let Stmt::Send { channel } = s {
                reads.push(channel);
            }
            for v in reads {
                if local[p].get(v) != global.get(v) {
                    let key = (line.label.clone(), v.to_string());
                    if !reported.contains(&key) {
                        out.push(Diagnostic::at(
                            line.source_line.0,
                            format!(
                                "`{}` reads `{v}` at {} after another process changed it",
                                spec.processes[p].name, line.label
                            ),
                        ));
                        reported.push(key);
                    }
                }
            }
            match s {
                Stmt::Send { channel } => {
                    buffers.insert(channel, local[p][channel.as_str()]);
                }
                Stmt::Receive { channel } => {
                    let t = buffers.remove(channel.as_str()).unwrap_or(0);
                    local[p].insert(channel, t);
                    global.insert(channel, t);
                }
                _ => {
                    if let Some(v) = s.writes() {
                        local[p].insert(v, next);
                        global.insert(v, next);
                        next += 1;
                    }
                }
            }
        }
    }
}
