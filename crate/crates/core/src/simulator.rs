//! Concrete execution of the communicating processes.
//!
//! Each process keeps its own copy of every variable; a receive copies the
//! buffered value of the matching send. The global view reported in traces
//! holds the most recently written value of each variable, which is what
//! the analyzer's annotations describe.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::analyzer::{AbstractState, Annotation};
use crate::ir::{serialize_order, SpecError, Stmt, SystemSpec, VecValue};
use crate::quadsets::MembershipTest;
use crate::symmat::{AlgebraError, SymMatrix};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("initial state has x'Qx = {value:.6} > 1 (use --force-initial to run anyway)")]
    InitialOutside { value: f64 },
    #[error("initial state has {got} components, expected {expected}")]
    InitialShape { got: usize, expected: usize },
    #[error("non-finite value at step {step}, line {label}")]
    Divergence { step: usize, label: String },
    #[error("line {label} reads `{var}` before it is set")]
    Uninitialized { label: String, var: String },
    #[error("{0}")]
    Unsupported(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
enum Op {
    Nop,
    Set {
        off: usize,
        vals: Vec<f64>,
    },
    Assign {
        off: usize,
        dim: usize,
        /// `(source offset, source dim, row-major coefficient)`.
        terms: Vec<(usize, usize, Vec<f64>)>,
        offset: Vec<f64>,
    },
    Sat {
        dst: usize,
        src: usize,
        lo: f64,
        hi: f64,
    },
    Send {
        chan: usize,
        off: usize,
        dim: usize,
    },
    Recv {
        chan: usize,
        off: usize,
        dim: usize,
    },
}

#[derive(Debug, Clone)]
struct CompiledEvent {
    process: usize,
    label: String,
    ops: Vec<Op>,
    /// Variables read, for error messages.
    reads: Vec<(usize, usize, String)>,
    anchor: bool,
}

/// A system compiled for repeated execution.
#[derive(Debug, Clone)]
pub struct Program {
    names: Vec<(String, usize, usize)>,
    total: usize,
    nproc: usize,
    nchan: usize,
    prefix: Vec<CompiledEvent>,
    period: Vec<CompiledEvent>,
    zero: Vec<usize>,
    ellipsoid: Vec<usize>,
    q: Option<SymMatrix>,
    inv_idx: Vec<usize>,
    p: Option<SymMatrix>,
}

/// One executed line, as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    /// Completed turns of the invariant process's loop.
    pub step: usize,
    /// Index into the schedule: prefix events first, then the period.
    pub event: usize,
    pub label: &'a str,
    /// Global view, in canonical order; NaN for unset variables.
    pub values: &'a [f64],
    /// The line closes a turn of the invariant process's loop.
    pub anchor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub line: String,
    pub values: Vec<f64>,
    /// `xᵀPx` over the invariant variables; NaN while any is unset.
    pub lyapunov: f64,
    pub anchor: bool,
}

impl Program {
    pub fn new(spec: &SystemSpec) -> Result<Program, SimError> {
        let schedule = serialize_order(spec)?;
        let mut names = Vec::new();
        let mut off = 0;
        for (n, d) in &spec.variables {
            names.push((n.clone(), off, *d));
            off += d;
        }
        let total = off;
        let range = |v: &str| -> (usize, usize) {
            let (_, o, d) = names
                .iter()
                .find(|(n, _, _)| n == v)
                .expect("resolved by the parser");
            (*o, *d)
        };
        let idx_of = |vars: &[String]| -> Vec<usize> {
            vars.iter()
                .flat_map(|v| {
                    let (o, d) = range(v);
                    o..o + d
                })
                .collect()
        };
        let anchor = spec.invariant.as_ref().and_then(|inv| {
            let pi = spec.process_index(&inv.process)?;
            Some((pi, spec.processes[pi].loop_bounds()?.1))
        });
        let compile = |e: &crate::ir::Event| -> CompiledEvent {
            let line = spec.line(e.process, e.line);
            let mut ops = Vec::new();
            let mut reads = Vec::new();
            for s in &line.stmts {
                for r in s.reads() {
                    let (o, d) = range(r);
                    reads.push((o, d, r.to_string()));
                }
                ops.push(match s {
                    Stmt::MatInit { .. } | Stmt::While | Stmt::End => Op::Nop,
                    Stmt::VecInit { target, value } => {
                        let (o, d) = range(target);
                        let vals = match value {
                            VecValue::Zeros(_) => vec![0.0; d],
                            VecValue::Literal(m) => m.as_slice().to_vec(),
                        };
                        Op::Set { off: o, vals }
                    }
                    Stmt::Assign {
                        target,
                        terms,
                        offset,
                    } => {
                        let (o, d) = range(target);
                        Op::Assign {
                            off: o,
                            dim: d,
                            terms: terms
                                .iter()
                                .map(|t| {
                                    let (so, sd) = range(&t.source);
                                    (so, sd, t.matrix.as_slice().to_vec())
                                })
                                .collect(),
                            offset: offset
                                .as_ref()
                                .map_or_else(|| vec![0.0; d], |o| o.vector.clone()),
                        }
                    }
                    Stmt::Saturate {
                        target,
                        source,
                        lo,
                        hi,
                        ..
                    } => Op::Sat {
                        dst: range(target).0,
                        src: range(source).0,
                        lo: *lo,
                        hi: *hi,
                    },
                    Stmt::Send { channel } | Stmt::Receive { channel } => {
                        let chan = spec
                            .channels
                            .iter()
                            .position(|c| &c.name == channel)
                            .expect("resolved");
                        let (o, d) = range(channel);
                        if matches!(s, Stmt::Send { .. }) {
                            Op::Send {
                                chan,
                                off: o,
                                dim: d,
                            }
                        } else {
                            Op::Recv {
                                chan,
                                off: o,
                                dim: d,
                            }
                        }
                    }
                });
            }
            CompiledEvent {
                process: e.process,
                label: line.label.clone(),
                ops,
                reads,
                anchor: anchor == Some((e.process, e.line)),
            }
        };
        let prefix: Vec<CompiledEvent> = schedule.prefix.iter().map(compile).collect();
        let mut period: Vec<CompiledEvent> = schedule.period.iter().map(compile).collect();
        let has_anchor = period.iter().any(|e| e.anchor);
        // Without an invariant loop, a step is one pass through the period.
        if !has_anchor {
            if let Some(last) = period.last_mut() {
                last.anchor = true;
            }
        }
        let (zero, ellipsoid, q) = match &spec.initial {
            Some(i) => (idx_of(&i.zero), idx_of(&i.ellipsoid), Some(i.q.clone())),
            None => (Vec::new(), Vec::new(), None),
        };
        let (inv_idx, p) = match &spec.invariant {
            Some(inv) => (idx_of(&inv.vars), Some(inv.p.clone())),
            None => (Vec::new(), None),
        };
        Ok(Program {
            names,
            total,
            nproc: spec.processes.len(),
            nchan: spec.channels.len(),
            prefix,
            period,

            zero,
            ellipsoid,
            q,
            inv_idx,
            p,
        })
    }

    /// Column names of a trace: one per scalar component.
    pub fn columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (n, _, d) in &self.names {
            if *d == 1 {
                out.push(n.clone());
            } else {
                out.extend((1..=*d).map(|i| format!("{n}_{i}")));
            }
        }
        out
    }

    pub fn state_dim(&self) -> usize {
        self.total
    }

    /// Dimension of the initial ellipsoid block.
    pub fn initial_dim(&self) -> usize {
        self.ellipsoid.len()
    }

    /// Labels of the schedule, prefix then period.
    pub fn event_labels(&self) -> Vec<&str> {
        self.prefix
            .iter()
            .chain(&self.period)
            .map(|e| e.label.as_str())
            .collect()
    }

    /// `xᵀPx` over the invariant variables of a global view.
    pub fn lyapunov(&self, values: &[f64]) -> f64 {
        let Some(p) = &self.p else { return f64::NAN };
        let n = self.inv_idx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let xi = values[self.inv_idx[i]];
            let mut row = 0.0;
            for j in 0..n {
                row += p.get(i, j) * values[self.inv_idx[j]];
            }
            acc += xi * row;
        }
        acc
    }

    /// `x0ᵀQx0`.
    pub fn initial_value(&self, x0: &[f64]) -> f64 {
        self.q.as_ref().map_or(0.0, |q| q.quad_form(x0))
    }

    /// Runs until `steps` turns of the invariant process's loop complete
    /// (or `steps` periods without an invariant), reporting every line.
    /// `steps = 0` reports only the initial state.
    pub fn run<F: FnMut(&StepView)>(
        &self,
        x0: &[f64],
        steps: usize,
        force: bool,
        mut observe: F,
    ) -> Result<(), SimError> {
        if x0.len() != self.ellipsoid.len() {
            return Err(SimError::InitialShape {
                got: x0.len(),
                expected: self.ellipsoid.len(),
            });
        }
        let v0 = self.initial_value(x0);
        if !force && v0 > 1.0 + 1e-9 {
            return Err(SimError::InitialOutside { value: v0 });
        }
        let mut global = vec![f64::NAN; self.total];
        for &i in &self.zero {
            global[i] = 0.0;
        }
        for (k, &i) in self.ellipsoid.iter().enumerate() {
            global[i] = x0[k];
        }
        let mut local = vec![global.clone(); self.nproc];
        let mut buffers: Vec<Vec<f64>> = vec![Vec::new(); self.nchan];
        let mut scratch = vec![0.0; self.total];
        observe(&StepView {
            step: 0,
            event: usize::MAX,
            label: "init",
            values: &global,
            anchor: false,
        });
        let mut step = 0;
        if steps == 0 {
            return Ok(());
        }
        let np = self.prefix.len();
        let mut exec = |idx: usize,
                        e: &CompiledEvent,
                        step: &mut usize,
                        global: &mut Vec<f64>|
         -> Result<(), SimError> {
            let store = &mut local[e.process];
            for (o, d, v) in &e.reads {
                if store[*o..*o + *d].iter().any(|x| x.is_nan()) {
                    return Err(SimError::Uninitialized {
                        label: e.label.clone(),
                        var: v.clone(),
                    });
                }
            }
            for op in &e.ops {
                let written: Option<(usize, usize)> = match op {
                    Op::Nop => None,
                    Op::Set { off, vals } => {
                        store[*off..*off + vals.len()].copy_from_slice(vals);
                        Some((*off, vals.len()))
                    }
                    Op::Assign {
                        off,
                        dim,
                        terms,
                        offset,
                    } => {
                        let out = &mut scratch[..*dim];
                        out.copy_from_slice(offset);
                        for (so, sd, m) in terms {
                            for (i, o) in out.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for j in 0..*sd {
                                    acc += m[i * sd + j] * store[so + j];
                                }
                                *o += acc;
                            }
                        }
                        store[*off..*off + *dim].copy_from_slice(out);
                        Some((*off, *dim))
                    }
                    Op::Sat { dst, src, lo, hi } => {
                        store[*dst] = store[*src].min(*hi).max(*lo);
                        Some((*dst, 1))
                    }
                    Op::Send { chan, off, dim } => {
                        buffers[*chan] = store[*off..*off + *dim].to_vec();
                        None
                    }
                    Op::Recv { chan, off, dim } => {
                        let v = std::mem::take(&mut buffers[*chan]);
                        store[*off..*off + *dim].copy_from_slice(&v);
                        Some((*off, *dim))
                    }
                };
                if let Some((o, d)) = written {
                    if store[o..o + d].iter().any(|x| !x.is_finite()) {
                        return Err(SimError::Divergence {
                            step: *step,
                            label: e.label.clone(),
                        });
                    }
                    global[o..o + d].copy_from_slice(&store[o..o + d]);
                }
            }
            if e.anchor {
                *step += 1;
            }
            observe(&StepView {
                step: *step,
                event: idx,
                label: &e.label,
                values: global,
                anchor: e.anchor,
            });
            Ok(())
        };
        for (i, e) in self.prefix.iter().enumerate() {
            exec(i, e, &mut step, &mut global)?;
            if step >= steps {
                return Ok(());
            }
        }
        if self.period.is_empty() {
            return Ok(());
        }
        loop {
            for (k, e) in self.period.iter().enumerate() {
                exec(np + k, e, &mut step, &mut global)?;
                if step >= steps {
                    return Ok(());
                }
            }
        }
    }
}

/// Collects the full trace of one run.
pub fn simulate(
    spec: &SystemSpec,
    x0: &[f64],
    steps: usize,
    force: bool,
) -> Result<Vec<TraceRecord>, SimError> {
    let program = Program::new(spec)?;
    let mut out = Vec::new();
    program.run(x0, steps, force, |v| {
        out.push(TraceRecord {
            step: v.step,
            line: v.label.to_string(),
            values: v.values.to_vec(),
            lyapunov: program.lyapunov(v.values),
            anchor: v.anchor,
        })
    })?;
    Ok(out)
}

/// `(step, V)` at the start and after every completed loop turn.
pub fn lyapunov_profile(trace: &[TraceRecord]) -> Vec<(usize, f64)> {
    trace
        .iter()
        .enumerate()
        .filter(|(i, r)| *i == 0 || r.anchor)
        .map(|(_, r)| (r.step, r.lyapunov))
        .collect()
}

/// A concrete state outside the annotated postcondition.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub line: String,
    /// Negative membership margin (see [`MembershipTest::margin`]).
    pub margin: f64,
}

#[derive(Debug, Clone)]
enum Post {
    Any,
    Never,
    Set {
        idx: Vec<usize>,
        test: MembershipTest,
    },
}

/// Postconditions compiled for fast membership queries.
#[derive(Debug, Clone)]
pub struct AnnotationChecker {
    posts: Vec<(String, Post)>,
}

impl AnnotationChecker {
    pub fn new(spec: &SystemSpec, annotations: &[Annotation], tol: f64) -> AnnotationChecker {
        let offsets: Vec<(String, usize)> = {
            let mut off = 0;
            spec.variables
                .iter()
                .map(|(n, d)| {
                    let o = off;
                    off += d;
                    (n.clone(), o)
                })
                .collect()
        };
        let posts = annotations
            .iter()
            .map(|a| {
                let post = match &a.post {
                    AbstractState::Top | AbstractState::False => Post::Any,
                    AbstractState::Bottom => Post::Never,
                    AbstractState::Region(q) => {
                        let mut idx = Vec::new();
                        for (n, d) in q.layout().vars() {
                            let o = offsets.iter().find(|(v, _)| v == n).expect("same spec").1;
                            idx.extend(o..o + d);
                        }
                        Post::Set {
                            idx,
                            test: q.membership_test(tol),
                        }
                    }
                };
                (a.label.clone(), post)
            })
            .collect();
        AnnotationChecker { posts }
    }

    fn find(&self, label: &str) -> Option<&Post> {
        self.posts.iter().find(|(l, _)| l == label).map(|(_, p)| p)
    }

    /// Membership margin of a global view at the line `label`; `None` when
    /// the line carries no constraint.
    pub fn margin(&self, label: &str, values: &[f64]) -> Option<f64> {
        margin_of(self.find(label)?, values)
    }

    /// Postcondition per schedule event of `program`, for use in a hot loop.
    pub fn bind<'a>(&'a self, program: &Program) -> BoundChecker<'a> {
        BoundChecker {
            posts: program
                .event_labels()
                .iter()
                .map(|l| self.find(l))
                .collect(),
        }
    }
}

fn margin_of(post: &Post, values: &[f64]) -> Option<f64> {
    match post {
        Post::Any => None,
        Post::Never => Some(f64::NEG_INFINITY),
        Post::Set { idx, test } => {
            let mut buf = [0.0f64; 32];
            let mut big;
            let x: &mut [f64] = if idx.len() <= 32 {
                &mut buf[..idx.len()]
            } else {
                big = vec![0.0; idx.len()];
                &mut big
            };
            for (k, &i) in idx.iter().enumerate() {
                x[k] = values[i];
            }
            Some(test.margin(x))
        }
    }
}

pub struct BoundChecker<'a> {
    posts: Vec<Option<&'a Post>>,
}

impl BoundChecker<'_> {
    pub fn margin(&self, view: &StepView) -> Option<f64> {
        let post = self.posts.get(view.event).copied().flatten()?;
        margin_of(post, view.values)
    }
}

/// Checks every record of a trace against the postcondition of its line.
pub fn check_annotations(
    spec: &SystemSpec,
    trace: &[TraceRecord],
    annotations: &[Annotation],
    tol: f64,
) -> Vec<Violation> {
    let checker = AnnotationChecker::new(spec, annotations, tol);
    trace
        .iter()
        .filter(|r| r.line != "init")
        .filter_map(|r| match checker.margin(&r.line, &r.values) {
            Some(m) if m < 0.0 || m.is_nan() => Some(Violation {
                step: r.step,
                line: r.line.clone(),
                margin: m,
            }),
            _ => None,
        })
        .collect()
}

/// Sample `i` of the initial ellipsoid `{x | xᵀQx ≤ 1}`: on the boundary
/// for even `i`, uniform in the interior for odd `i`.
pub fn sample_initial(q: &SymMatrix, seed: u64, i: u64) -> Result<Vec<f64>, SimError> {
    let n = q.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let mut z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = if i.is_multiple_of(2) {
        1.0
    } else {
        rng.random::<f64>().powf(1.0 / n as f64)
    };
    for v in z.iter_mut() {
        *v *= r / norm;
    }
    // Q = LLᵀ, x = L⁻ᵀz gives xᵀQx = |z|².
    let l = q.cholesky()?;
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for j in i + 1..n {
            s -= l.get(j, i) * x[j];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// Outcome of one sampled run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub sample: usize,
    pub initial: Vec<f64>,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    /// Largest `V(k+1) − V(k)` over consecutive loop turns.
    pub max_lyapunov_increase: f64,
    /// Largest `V − 1` at the end of a loop turn.
    pub max_invariant_excess: f64,
    pub error: Option<String>,
}

/// Aggregate of many runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub runs: Vec<RunStats>,
    /// Full traces of the first runs, if requested.
    pub traces: Vec<(usize, Vec<TraceRecord>)>,
}

impl Campaign {
    pub fn violations(&self) -> usize {
        self.runs.iter().map(|r| r.violations).sum()
    }

    pub fn errors(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn max_lyapunov_increase(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.max_lyapunov_increase)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_invariant_excess(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.max_invariant_excess)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Settings of a sampled campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig {
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    pub membership_tol: f64,
    /// Number of leading runs whose full trace is kept.
    pub keep_traces: usize,
    pub threads: usize,
}

/// Runs one sample, streaming checks without storing the trace unless
/// `keep` is set.
pub fn run_sample(
    program: &Program,
    checker: &BoundChecker,
    x0: Vec<f64>,
    sample: usize,
    steps: usize,
    force: bool,
    keep: bool,
) -> (RunStats, Option<Vec<TraceRecord>>) {
    let mut stats = RunStats {
        sample,
        initial: x0.clone(),
        violations: 0,
        first_violation: None,
        max_lyapunov_increase: f64::NEG_INFINITY,
        max_invariant_excess: f64::NEG_INFINITY,
        error: None,
    };
    let mut trace = keep.then(Vec::new);
    let mut last_v: Option<f64> = None;
    let result = program.run(&x0, steps, force, |v| {
        if v.event != usize::MAX {
            if let Some(m) = checker.margin(v) {
                if m < 0.0 || m.is_nan() {
                    stats.violations += 1;
                    if stats.first_violation.is_none() {
                        stats.first_violation = Some(Violation {
                            step: v.step,
                            line: v.label.to_string(),
                            margin: m,
                        });
                    }
                }
            }
        }
        let lyap = if v.event == usize::MAX || v.anchor {
            program.lyapunov(v.values)
        } else {
            f64::NAN
        };
        if v.event == usize::MAX || v.anchor {
            if let Some(prev) = last_v {
                stats.max_lyapunov_increase = stats.max_lyapunov_increase.max(lyap - prev);
            }
            stats.max_invariant_excess = stats.max_invariant_excess.max(lyap - 1.0);
            last_v = Some(lyap);
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRecord {
                step: v.step,
                line: v.label.to_string(),
                values: v.values.to_vec(),
                lyapunov: if lyap.is_nan() {
                    program.lyapunov(v.values)
                } else {
                    lyap
                },
                anchor: v.anchor,
            });
        }
    });
    if let Err(e) = result {
        stats.error = Some(e.to_string());
    }
    (stats, trace)
}

/// Runs `samples` initial states drawn from the initial ellipsoid, in
/// parallel; results are ordered by sample index and independent of the
/// thread count.
pub fn run_campaign(
    spec: &SystemSpec,
    annotations: &[Annotation],
    config: &CampaignConfig,
) -> Result<Campaign, SimError> {
    let program = Program::new(spec)?;
    let q = spec
        .initial
        .as_ref()
        .map(|i| i.q.clone())
        .ok_or_else(|| SimError::Unsupported("sampling needs an [initial] section".into()))?;
    let checker = AnnotationChecker::new(spec, annotations, config.membership_tol);
    let bound = checker.bind(&program);
    let initials: Vec<Vec<f64>> = (0..config.samples)
        .map(|i| sample_initial(&q, config.seed, i as u64))
        .collect::<Result<_, _>>()?;
    let threads = config.threads.max(1).min(config.samples.max(1));
    let chunk = config.samples.div_ceil(threads).max(1);
    let mut results: Vec<(RunStats, Option<Vec<TraceRecord>>)> = Vec::with_capacity(config.samples);
    std::thread::scope(|s| {
        let handles: Vec<_> = initials
            .chunks(chunk)
            .enumerate()
            .map(|(c, xs)| {
                let (program, bound) = (&program, &bound);
                s.spawn(move || {
                    xs.iter()
                        .enumerate()
                        .map(|(k, x0)| {
                            let i = c * chunk + k;
                            run_sample(
                                program,
                                bound,
                                x0.clone(),
                                i,
                                config.steps,
                                false,
                                i < config.keep_traces,
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            results.extend(h.join().expect("worker panicked"));
        }
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (stats, trace) in results {
        if let Some(t) = trace {
            traces.push((stats.sample, t));
        }
        runs.push(stats);
    }
    Ok(Campaign { runs, traces })
}

/// Writes traces as CSV: `sample, step, line, <variables>, V`.
pub fn write_trace_csv<W: Write>(
    out: W,
    program: &Program,
    traces: &[(usize, Vec<TraceRecord>)],
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string(), "step".into(), "line".into()];
    header.extend(program.columns());
    header.push("V".into());
    w.write_record(&header)?;
    for (sample, trace) in traces {
        for r in trace {
            let mut row = vec![sample.to_string(), r.step.to_string(), r.line.clone()];
            row.extend(r.values.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", r.lyapunov));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
