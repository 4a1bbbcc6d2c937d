//! Forward propagation of ellipsoidal sets through the serialized program.
//!
//! The candidate invariant `E_P` is checked, not computed: the walk starts
//! from it, runs one turn of the periodic schedule, and asks whether the set
//! reached at the end of the loop of the invariant process lies inside it.

use std::collections::HashMap;
use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use crate::absstab::{combine_lemma, ClosedLoopSpec, SectorBound, StabilityError};
use crate::ir::{
    serialize_order, Event, ListingAnnotation, Schedule, SpecError, Stmt, SystemSpec, VecValue,
};
use crate::quadsets::{containment_margin, gram_margin, Ellipsoid, QuadSet, SetError, VarLayout};
use crate::symmat::{Matrix, SymMatrix};
use crate::Tolerances;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("{0}")]
    Unsupported(String),
}

/// Failure of a single statement's transfer function.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error("sector does not hold for `{var}`: reach {reach:.6} exceeds {limit:.6}")]
    UnsoundSector { var: String, reach: f64, limit: f64 },
    #[error("combination of quadratic constraints fails: smallest eigenvalue {min_eig:.6e}")]
    LemmaInapplicable { min_eig: f64 },
    #[error("combination of quadratic constraints fails: {0}")]
    Lemma(String),
    #[error("set operation failed: {0}")]
    Set(String),
}

impl From<SetError> for TransferError {
    fn from(e: SetError) -> Self {
        TransferError::Set(e.to_string())
    }
}

/// Abstract value of the whole variable store. Variables absent from a
/// region's layout are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub enum AbstractState {
    /// Unreached.
    Bottom,
    /// Every variable unconstrained.
    Top,
    Region(QuadSet),
    /// Control never gets past this point (after an endless loop).
    False,
}

impl AbstractState {
    pub fn region(&self) -> Option<&QuadSet> {
        match self {
            AbstractState::Region(q) => Some(q),
            _ => None,
        }
    }

    pub fn tracks(&self, var: &str) -> bool {
        self.region().is_some_and(|q| q.layout().contains(var))
    }

    /// Drops `var` from the tracked tuple.
    pub fn release(&self, var: &str) -> Result<AbstractState, SetError> {
        match self {
            AbstractState::Region(q) if q.layout().contains(var) => {
                if q.layout().len() == 1 {
                    Ok(AbstractState::Top)
                } else {
                    Ok(AbstractState::Region(q.release(var)?))
                }
            }
            other => Ok(other.clone()),
        }
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractState::Bottom => write!(f, "⊥"),
            AbstractState::Top => write!(f, "true"),
            AbstractState::False => write!(f, "false"),
            AbstractState::Region(q) => write!(f, "{} ∈ G_{}", q.layout(), q.label()),
        }
    }
}

/// Everything a transfer function needs besides the statement.
#[derive(Debug, Clone)]
pub struct TransferCtx<'a> {
    /// Variables in canonical order.
    pub variables: &'a [(String, usize)],
    pub sector: Option<SectorBound>,
    pub lambda: f64,
    pub psd_tol: f64,
    pub contain_tol: f64,
    /// Variables whose `zeros` initialization is already part of the
    /// starting set.
    pub preset_zero: &'a [String],
}

impl TransferCtx<'_> {
    fn layout_of(&self, names: &[&str]) -> Result<VarLayout, SetError> {
        VarLayout::new(
            self.variables
                .iter()
                .filter(|(n, _)| names.contains(&n.as_str()))
                .cloned()
                .collect(),
        )
    }

    fn dim_of(&self, var: &str) -> usize {
        self.variables
            .iter()
            .find(|(n, _)| n == var)
            .map(|(_, d)| *d)
            .expect("variables are resolved by the parser")
    }
}

/// Matrix sending coordinates of `from` to those of `to`: identity on
/// shared variables, zero rows for variables only in `to`.
fn selection(from: &VarLayout, to: &VarLayout) -> Matrix {
    let mut m = Matrix::zeros(to.total_dim(), from.total_dim());
    for name in to.names() {
        if let (Some(r), Some(c)) = (to.range_of(name), from.range_of(name)) {
            for (i, j) in r.zip(c) {
                m.set(i, j, 1.0);
            }
        }
    }
    m
}

fn reorder(q: &QuadSet, layout: VarLayout) -> Result<QuadSet, SetError> {
    if *q.layout() == layout {
        return Ok(q.clone());
    }
    let m = selection(q.layout(), &layout);
    q.affine_image(&m, layout)
}

/// Applies one statement. Never releases dead variables; see [`analyze`].
pub fn transfer(
    state: &AbstractState,
    stmt: &Stmt,
    ctx: &TransferCtx,
) -> Result<AbstractState, TransferError> {
    match state {
        AbstractState::Bottom | AbstractState::False => return Ok(state.clone()),
        _ => {}
    }
    match stmt {
        Stmt::MatInit { .. }
        | Stmt::Send { .. }
        | Stmt::Receive { .. }
        | Stmt::While
        | Stmt::End => Ok(state.clone()),
        Stmt::VecInit { target, value } => match value {
            VecValue::Zeros(_) if state.tracks(target) && ctx.preset_zero.contains(target) => {
                Ok(state.clone())
            }
            VecValue::Zeros(_) => set_zero(state, target, ctx),
            VecValue::Literal(m) if m.is_zero() => set_zero(state, target, ctx),
            VecValue::Literal(_) => Ok(state.release(target)?),
        },
        Stmt::Assign {
            target,
            terms,
            offset,
        } => {
            let q = match state {
                AbstractState::Region(q) => q,
                _ => return Ok(state.release(target)?),
            };
            let has_offset = offset
                .as_ref()
                .is_some_and(|o| o.vector.iter().any(|&v| v != 0.0));
            if has_offset
                || terms.is_empty()
                || terms.iter().any(|t| !q.layout().contains(&t.source))
            {
                return Ok(state.release(target)?);
            }
            let mut names: Vec<&str> = q.layout().names().collect();
            if !names.contains(&target.as_str()) {
                names.push(target);
            }
            let out = ctx.layout_of(&names)?;
            let mut m = selection(q.layout(), &out);
            let rows = out.range_of(target).expect("target is in the layout");
            for r in rows.clone() {
                for c in 0..m.cols() {
                    m.set(r, c, 0.0);
                }
            }
            for t in terms {
                let cols = q.layout().range_of(&t.source).expect("checked above");
                for (i, r) in rows.clone().enumerate() {
                    for (j, c) in cols.clone().enumerate() {
                        m.set(r, c, m.get(r, c) + t.matrix.get(i, j));
                    }
                }
            }
            Ok(AbstractState::Region(q.affine_image(&m, out)?))
        }
        Stmt::Saturate {
            target,
            source,
            lo,
            hi,
            ..
        } => saturate(state, target, source, *lo, *hi, ctx),
    }
}

fn set_zero(
    state: &AbstractState,
    target: &str,
    ctx: &TransferCtx,
) -> Result<AbstractState, TransferError> {
    let d = ctx.dim_of(target);
    match state {
        AbstractState::Region(q) => {
            let mut names: Vec<&str> = q.layout().names().collect();
            if !names.contains(&target) {
                names.push(target);
            }
            let out = ctx.layout_of(&names)?;
            let mut m = selection(q.layout(), &out);
            for r in out.range_of(target).expect("present") {
                for c in 0..m.cols() {
                    m.set(r, c, 0.0);
                }
            }
            Ok(AbstractState::Region(q.affine_image(&m, out)?))
        }
        _ => {
            let layout = ctx.layout_of(&[target])?;
            Ok(AbstractState::Region(QuadSet::new(
                layout,
                SymMatrix::zeros(d),
                "0",
            )?))
        }
    }
}

/// Largest `|v|` over the tracked set; infinite when `v` is untracked.
pub fn reach(state: &AbstractState, var: &str) -> f64 {
    match state {
        AbstractState::Region(q) => match q.layout().range_of(var) {
            Some(r) if r.len() == 1 => q.gram().get(r.start, r.start).max(0.0).sqrt(),
            _ => f64::INFINITY,
        },
        AbstractState::Bottom | AbstractState::False => 0.0,
        AbstractState::Top => f64::INFINITY,
    }
}

/// Bound on `|y|` under which a clamp to `[lo, hi]` stays in the sector.
pub fn clamp_sector_limit(sector: &SectorBound, lo: f64, hi: f64) -> f64 {
    if !(sector.alpha() <= 1.0 && sector.beta() >= 1.0) {
        return 0.0;
    }
    let l = (-lo).min(hi);
    if sector.alpha() == 0.0 {
        f64::INFINITY
    } else {
        l / sector.alpha()
    }
}

fn saturate(
    state: &AbstractState,
    target: &str,
    source: &str,
    lo: f64,
    hi: f64,
    ctx: &TransferCtx,
) -> Result<AbstractState, TransferError> {
    let sector = ctx
        .sector
        .ok_or_else(|| TransferError::Lemma("no sector given".into()))?;
    let r = reach(state, source);
    let limit = clamp_sector_limit(&sector, lo, hi);
    if !(r <= limit + ctx.contain_tol) {
        return Err(TransferError::UnsoundSector {
            var: source.to_string(),
            reach: r,
            limit,
        });
    }
    let base = state.release(target)?;
    let q = match &base {
        AbstractState::Region(q) => q,
        _ => unreachable!("a finite reach implies a tracked source"),
    };
    let k = q.layout().total_dim();
    let y = q.layout().range_of(source).expect("tracked").start;
    let t = sector.embed(k + 1, y, k);
    let v = combine_lemma(q.gram(), &t, -ctx.lambda, ctx.psd_tol).map_err(|e| match e {
        StabilityError::LemmaInapplicable { min_eig } => {
            TransferError::LemmaInapplicable { min_eig }
        }
        other => TransferError::Lemma(other.to_string()),
    })?;
    let appended = QuadSet::new(q.layout().with(target, 1)?, v, q.label())?;
    let mut names: Vec<&str> = appended.layout().names().collect();
    names.sort_by_key(|n| ctx.variables.iter().position(|(v, _)| v == n));
    let out = ctx.layout_of(&names)?;
    Ok(AbstractState::Region(reorder(&appended, out)?))
}

/// Per-event liveness over the lasso `prefix · period^ω`.
#[derive(Debug, Clone)]
pub struct Liveness {
    /// Variables live before the first event.
    pub live_in_start: Vec<bool>,
    /// Live after each event of the prefix, then of the period.
    pub live_out: Vec<Vec<bool>>,
    /// Variables that go dead at each event.
    pub released: Vec<Vec<usize>>,
}

/// Zeroing a variable the initial set already fixes at zero is a no-op,
/// both for the transfer function and for liveness.
fn is_preset_zero(spec: &SystemSpec, s: &Stmt) -> bool {
    match s {
        Stmt::VecInit {
            target,
            value: VecValue::Zeros(_),
        } => spec
            .initial
            .as_ref()
            .is_some_and(|i| i.zero.contains(target)),
        _ => false,
    }
}

fn line_transfer_live(spec: &SystemSpec, e: &Event, live: &[bool]) -> Vec<bool> {
    let mut l = live.to_vec();
    for s in spec.line(e.process, e.line).stmts.iter().rev() {
        if is_preset_zero(spec, s) {
            continue;
        }
        if let Some(w) = s.writes() {
            l[spec.var_index(w).expect("resolved")] = false;
        }
        for r in s.reads() {
            l[spec.var_index(r).expect("resolved")] = true;
        }
    }
    l
}

fn line_defs(spec: &SystemSpec, e: &Event) -> Vec<usize> {
    spec.line(e.process, e.line)
        .stmts
        .iter()
        .filter(|s| !is_preset_zero(spec, s))
        .filter_map(|s| s.writes())
        .map(|w| spec.var_index(w).expect("resolved"))
        .collect()
}

/// Backward liveness over the schedule; sends and receives neither read nor
/// write, since both ends name the same variable.
pub fn liveness(spec: &SystemSpec, schedule: &Schedule) -> Liveness {
    let n = spec.variables.len();
    let events: Vec<&Event> = schedule.unrolled(1);
    let np = schedule.prefix.len();
    let mut live_in: Vec<Vec<bool>> = vec![vec![false; n]; events.len()];
    let mut live_out: Vec<Vec<bool>> = vec![vec![false; n]; events.len()];
    let period = events.len() - np;
    if period > 0 {
        loop {
            let mut changed = false;
            for i in (np..events.len()).rev() {
                let out = if i + 1 < events.len() {
                    live_in[i + 1].clone()
                } else {
                    live_in[np].clone()
                };
                let inn = line_transfer_live(spec, events[i], &out);
                if out != live_out[i] || inn != live_in[i] {
                    changed = true;
                    live_out[i] = out;
                    live_in[i] = inn;
                }
            }
            if !changed {
                break;
            }
        }
    }
    for i in (0..np).rev() {
        let out = if i + 1 < events.len() {
            live_in[i + 1].clone()
        } else {
            vec![false; n]
        };
        live_in[i] = line_transfer_live(spec, events[i], &out);
        live_out[i] = out;
    }
    let released = events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let defs = line_defs(spec, e);
            (0..n)
                .filter(|&v| (live_in[i][v] || defs.contains(&v)) && !live_out[i][v])
                .collect()
        })
        .collect();
    Liveness {
        live_in_start: live_in.first().cloned().unwrap_or_else(|| vec![false; n]),
        live_out,
        released,
    }
}

/// Labels after which variables go dead, in schedule order.
pub fn liveness_release_points(
    spec: &SystemSpec,
) -> Result<Vec<(String, Vec<String>)>, AnalysisError> {
    let schedule = serialize_order(spec)?;
    let live = liveness(spec, &schedule);
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (e, rel) in schedule.unrolled(1).into_iter().zip(&live.released) {
        if rel.is_empty() || out.iter().any(|(l, _)| *l == e.label) {
            continue;
        }
        out.push((
            e.label.clone(),
            rel.iter().map(|&v| spec.variables[v].0.clone()).collect(),
        ));
    }
    Ok(out)
}

/// Pre- and postcondition of one line.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub label: String,
    pub pre: AbstractState,
    pub post: AbstractState,
    /// The line is a receive the process had to wait on.
    pub waited: bool,
    pub unlocked_by: Option<String>,
}

/// One numeric check with its margin; passes when the margin is
/// nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub label: Option<String>,
    pub margin: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Inductive,
    NotInductive { failed: Vec<String> },
}

impl Verdict {
    pub fn is_inductive(&self) -> bool {
        matches!(self, Verdict::Inductive)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Inductive => write!(f, "INDUCTIVE"),
            Verdict::NotInductive { failed } => write!(f, "NOT-INDUCTIVE ({})", failed.join("; ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSet {
    pub name: String,
    pub set: QuadSet,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// One entry per executed line, in order of first execution.
    pub annotations: Vec<Annotation>,
    /// Distinct sets in order of first appearance, named `R, V, W, …`.
    pub sets: Vec<NamedSet>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub releases: Vec<(String, Vec<String>)>,
    /// `E_P` in Gram form over the canonical order.
    pub invariant: Option<QuadSet>,
    /// Set reaching the end of the invariant process's loop.
    pub loop_exit: Option<QuadSet>,
    pub lambda: Option<f64>,
}

const SET_NAMES: [&str; 6] = ["R", "V", "W", "X", "Y", "Z"];

fn same_set(a: &QuadSet, b: &QuadSet) -> bool {
    a.layout() == b.layout()
        && a.gram()
            .frobenius_distance(b.gram())
            .is_ok_and(|d| d <= 1e-12 * (1.0 + a.gram().frobenius_norm()))
}

impl Analysis {
    /// Display name of a state: `E_P`, a letter, `true`, `false` or `⊥`.
    pub fn state_name(&self, s: &AbstractState) -> String {
        match s {
            AbstractState::Region(q) => {
                if let Some(inv) = &self.invariant {
                    if same_set(q, inv) {
                        return format!("{} ∈ E_P", q.layout());
                    }
                }
                match self.sets.iter().find(|n| same_set(&n.set, q)) {
                    Some(n) => format!("{} ∈ G_{}", q.layout(), n.name),
                    None => s.to_string(),
                }
            }
            other => other.to_string(),
        }
    }

    pub fn set(&self, name: &str) -> Option<&QuadSet> {
        self.sets.iter().find(|n| n.name == name).map(|n| &n.set)
    }

    pub fn annotation(&self, label: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.label == label)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Annotations in the form the listing renderer takes.
    pub fn listing_annotations(&self) -> Vec<ListingAnnotation> {
        self.annotations
            .iter()
            .map(|a| ListingAnnotation {
                label: a.label.clone(),
                pre: if a.waited {
                    None
                } else {
                    Some(self.state_name(&a.pre))
                },
                post: self.state_name(&a.post),
                unlocked_by: a.unlocked_by.clone(),
            })
            .collect()
    }
}

/// `E_P` over the invariant variables, as declared.
pub fn invariant_ellipsoid(spec: &SystemSpec) -> Result<Option<Ellipsoid>, SetError> {
    let Some(inv) = &spec.invariant else {
        return Ok(None);
    };
    let layout = VarLayout::new(
        inv.vars
            .iter()
            .map(|v| (v.clone(), spec.dim_of(v).expect("resolved")))
            .collect(),
    )?;
    Ok(Some(Ellipsoid::new(layout, inv.p.clone(), "P")?))
}

/// Margins of the initial-set checks: `P⁻¹ − G₀` where `G₀` is the Gram
/// form of `{zero vars = 0, ellipsoid vars ∈ E_Q}`, and `Q − P_ee` with
/// `P_ee` the block of `P` on the ellipsoid variables.
pub fn initial_margins(spec: &SystemSpec) -> Result<Option<(f64, f64)>, AnalysisError> {
    let (Some(e), Some(init)) = (invariant_ellipsoid(spec)?, &spec.initial) else {
        return Ok(None);
    };
    let layout = e.layout().clone();
    let n = layout.total_dim();
    let qinv = init.q.inverse().map_err(SetError::from)?;
    let idx = layout
        .indices_of(
            &init
                .ellipsoid
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>(),
        )
        .map_err(|_| {
            AnalysisError::Unsupported(
                "initial ellipsoid variables must be invariant variables".into(),
            )
        })?;
    let mut g = Matrix::zeros(n, n);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            g.set(i, j, qinv.get(a, b));
        }
    }
    let g0 = QuadSet::new(
        layout,
        SymMatrix::from_matrix(&g).map_err(SetError::from)?,
        "0",
    )?;
    let embed = containment_margin(&e, &g0)?;
    let block = spec
        .invariant
        .as_ref()
        .expect("present")
        .p
        .principal_submatrix(&idx)
        .map_err(SetError::from)?;
    let diff = init.q.sub(&block).map_err(SetError::from)?;
    Ok(Some((embed, diff.min_eigenvalue())))
}

struct Walker<'a> {
    spec: &'a SystemSpec,
    ctx: TransferCtx<'a>,
    tol: Tolerances,
    invariant: Option<QuadSet>,
    ellipsoid: Option<Ellipsoid>,
    anchor: Option<(usize, usize)>,
    annotations: Vec<Annotation>,
    index: HashMap<String, usize>,
    checks: Vec<Check>,
    loop_exit: Option<QuadSet>,
    unstable: Vec<String>,
}

enum Merge {
    Same,
    Grew,
    Conflict,
}

impl Walker<'_> {
    fn merge(&self, old: &mut AbstractState, new: &AbstractState) -> Merge {
        use AbstractState::*;
        let contains = |outer: &AbstractState, inner: &AbstractState| -> bool {
            match (outer, inner) {
                (_, Bottom) | (Top, _) => true,
                (False, False) => true,
                (Region(a), Region(b)) => {
                    a.layout() == b.layout()
                        && gram_margin(a, b).is_ok_and(|m| m >= -self.tol.contain)
                }
                _ => false,
            }
        };
        if contains(old, new) {
            Merge::Same
        } else if contains(new, old) {
            *old = new.clone();
            Merge::Grew
        } else {
            Merge::Conflict
        }
    }

    fn record(&mut self, e: &Event, pre: AbstractState, post: AbstractState) -> bool {
        let fresh = Annotation {
            label: e.label.clone(),
            pre,
            post,
            waited: e.blocked && self.spec.line(e.process, e.line).communication().is_some(),
            unlocked_by: e.unlocked_by.clone(),
        };
        match self.index.get(&e.label) {
            None => {
                self.index.insert(e.label.clone(), self.annotations.len());
                self.annotations.push(fresh);
                true
            }
            Some(&i) => {
                let mut a = self.annotations[i].clone();
                let m1 = self.merge(&mut a.pre, &fresh.pre);
                let m2 = self.merge(&mut a.post, &fresh.post);
                a.waited |= fresh.waited;
                if fresh.unlocked_by.is_some() {
                    a.unlocked_by = fresh.unlocked_by;
                }
                self.annotations[i] = a;
                if (matches!(m1, Merge::Conflict) || matches!(m2, Merge::Conflict))
                    && !self.unstable.contains(&e.label)
                {
                    self.unstable.push(e.label.clone());
                }
                matches!(m1, Merge::Grew) || matches!(m2, Merge::Grew)
            }
        }
    }

    fn push_check(&mut self, name: String, label: Option<String>, margin: f64, detail: String) {
        let passed = margin >= 0.0;
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                if margin < c.margin || margin.is_nan() {
                    c.margin = margin;
                    c.passed = passed;
                    c.detail = detail;
                }
            }
            None => self.checks.push(Check {
                name,
                label,
                margin,
                passed,
                detail,
            }),
        }
    }

    fn reset_state(&self) -> AbstractState {
        match &self.invariant {
            Some(q) => AbstractState::Region(q.clone()),
            None => AbstractState::Top,
        }
    }

    fn step(
        &mut self,
        e: &Event,
        state: AbstractState,
        live_out: &[bool],
    ) -> Result<(AbstractState, bool), AnalysisError> {
        let line = self.spec.line(e.process, e.line);
        let mut pre = state;
        if self.anchor == Some((e.process, e.line)) {
            let ell = self.ellipsoid.clone().expect("anchor implies an invariant");
            let names: Vec<&str> = ell.layout().names().collect();
            let (margin, exit) = match &pre {
                AbstractState::Region(q) if names.iter().all(|n| q.layout().contains(n)) => {
                    let proj = q.project(&names, "Z")?;
                    (containment_margin(&ell, &proj)?, Some(proj))
                }
                AbstractState::Bottom | AbstractState::False => (0.0, None),
                _ => (f64::NEG_INFINITY, None),
            };
            if let Some(z) = exit {
                let canon = self.ctx.layout_of(&names)?;
                self.loop_exit = Some(reorder(&z, canon)?);
            }
            let margin = if margin >= -self.tol.contain {
                margin.max(0.0)
            } else {
                margin
            };
            self.push_check(
                "invariance".into(),
                Some(e.label.clone()),
                margin,
                "smallest eigenvalue of P^-1 - Z".into(),
            );
            pre = self.reset_state();
        }
        let mut post = pre.clone();
        let mut folds = false;
        for s in &line.stmts {
            let next = match transfer(&post, s, &self.ctx) {
                Ok(next) => next,
                Err(err) => {
                    let target = s.writes().expect("only writing statements fail");
                    let (name, margin) = match &err {
                        TransferError::UnsoundSector { reach, limit, .. } => {
                            ("sector", limit - reach)
                        }
                        TransferError::LemmaInapplicable { min_eig } => ("lemma", *min_eig),
                        _ => ("lemma", f64::NEG_INFINITY),
                    };
                    self.push_check(
                        format!("{name} at {}", e.label),
                        Some(e.label.clone()),
                        margin,
                        err.to_string(),
                    );
                    post.release(target)?
                }
            };
            if let Stmt::Saturate { source, lo, hi, .. } = s {
                if let Some(sector) = self.ctx.sector {
                    let limit = clamp_sector_limit(&sector, *lo, *hi);
                    let r = reach(&post, source);
                    self.push_check(
                        format!("sector at {}", e.label),
                        Some(e.label.clone()),
                        limit - r,
                        format!("bound {limit:.6} minus reach {r:.6} of `{source}`"),
                    );
                }
                if let AbstractState::Region(q) = &next {
                    let me = q.gram().min_eigenvalue();
                    self.push_check(
                        format!("lemma at {}", e.label),
                        Some(e.label.clone()),
                        if me >= -self.tol.psd { me.max(0.0) } else { me },
                        "smallest eigenvalue of V".into(),
                    );
                }
            }
            if matches!(s, Stmt::Assign { .. } | Stmt::VecInit { .. }) {
                folds = true;
            }
            post = next;
        }
        let mut after = post.clone();
        for (v, (name, _)) in self.spec.variables.iter().enumerate() {
            if !live_out[v] && after.tracks(name) {
                after = after.release(name)?;
            }
        }
        if folds {
            post = after.clone();
        }
        let shown_post = if line.is_end() {
            AbstractState::False
        } else {
            post
        };
        let grew = self.record(e, pre, shown_post);
        Ok((after, grew))
    }
}

/// Runs the forward analysis and all inductiveness checks.
pub fn analyze(spec: &SystemSpec, tol: &Tolerances) -> Result<Analysis, AnalysisError> {
    let schedule = serialize_order(spec)?;
    let live = liveness(spec, &schedule);
    let sector = match &spec.sector {
        Some(s) => Some(SectorBound::new(s.alpha, s.beta)?),
        None => None,
    };
    let preset_zero: Vec<String> = spec
        .initial
        .as_ref()
        .map(|i| i.zero.clone())
        .unwrap_or_default();
    let ctx = TransferCtx {
        variables: &spec.variables,
        sector,
        lambda: spec.sector.as_ref().map_or(0.0, |s| s.lambda),
        psd_tol: tol.psd,
        contain_tol: tol.contain,
        preset_zero: &preset_zero,
    };
    let ellipsoid = invariant_ellipsoid(spec)?;
    let invariant = match &ellipsoid {
        Some(e) => {
            let names: Vec<&str> = e.layout().names().collect();
            Some(reorder(
                &QuadSet::from_ellipsoid(e)?.with_label("P"),
                ctx.layout_of(&names)?,
            )?)
        }
        None => None,
    };
    let anchor = spec.invariant.as_ref().and_then(|inv| {
        let pi = spec.process_index(&inv.process)?;
        let (_, end) = spec.processes[pi].loop_bounds()?;
        Some((pi, end))
    });
    let mut w = Walker {
        spec,
        ctx,
        tol: *tol,
        invariant,
        ellipsoid,
        anchor,
        annotations: Vec::new(),
        index: HashMap::new(),
        checks: Vec::new(),
        loop_exit: None,
        unstable: Vec::new(),
    };

    if let Some((embed, block)) = initial_margins(spec)? {
        let m = if embed >= -tol.contain {
            embed.max(0.0)
        } else {
            embed
        };
        w.push_check(
            "initial embedding".into(),
            None,
            m,
            "smallest eigenvalue of P^-1 - G0".into(),
        );
        let m = if block >= -tol.contain {
            block.max(0.0)
        } else {
            block
        };
        w.push_check(
            "initial block".into(),
            None,
            m,
            "smallest eigenvalue of Q - P_block".into(),
        );
    }

    let mut state = w.reset_state();
    for (v, (name, _)) in spec.variables.iter().enumerate() {
        if !live.live_in_start[v] && state.tracks(name) {
            state = state.release(name)?;
        }
    }
    let np = schedule.prefix.len();
    for (i, e) in schedule.prefix.iter().enumerate() {
        state = w.step(e, state, &live.live_out[i])?.0;
    }
    let mut stable = schedule.period.is_empty();
    for pass in 0..3 {
        if schedule.period.is_empty() {
            break;
        }
        let mut grew = false;
        for (k, e) in schedule.period.iter().enumerate() {
            let (s, g) = w.step(e, state, &live.live_out[np + k])?;
            state = s;
            grew |= g;
        }
        if pass > 0 && !grew {
            stable = true;
            break;
        }
    }
    if !schedule.period.is_empty() {
        let detail = if w.unstable.is_empty() && stable {
            "annotations reproduce on every turn".to_string()
        } else {
            format!(
                "annotations change between turns at {}",
                w.unstable.join(", ")
            )
        };
        let ok = w.unstable.is_empty() && stable;
        w.push_check(
            "stability".into(),
            None,
            if ok { 0.0 } else { -1.0 },
            detail,
        );
    }

    let mut sets: Vec<NamedSet> = Vec::new();
    for a in &w.annotations {
        for s in [&a.pre, &a.post] {
            let AbstractState::Region(q) = s else {
                continue;
            };
            if w.invariant.as_ref().is_some_and(|inv| same_set(inv, q))
                || sets.iter().any(|n| same_set(&n.set, q))
            {
                continue;
            }
            let name = match SET_NAMES.get(sets.len()) {
                Some(n) => n.to_string(),
                None => format!("S{}", sets.len() - SET_NAMES.len() + 1),
            };
            sets.push(NamedSet {
                name: name.clone(),
                set: q.clone().with_label(name),
            });
        }
    }
    for a in w.annotations.iter_mut() {
        for s in [&mut a.pre, &mut a.post] {
            if let AbstractState::Region(q) = s {
                if let Some(n) = sets.iter().find(|n| same_set(&n.set, q)) {
                    *q = n.set.clone();
                } else if w.invariant.as_ref().is_some_and(|inv| same_set(inv, q)) {
                    *q = q.clone().with_label("P");
                }
            }
        }
    }

    let mut failed: Vec<String> = w
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.clone())
        .collect();
    if w.invariant.is_none() {
        failed.push("no invariant given".into());
    } else if w.check("invariance").is_none() {
        failed.push("invariant process never completes its loop".into());
    }
    let verdict = if failed.is_empty() {
        Verdict::Inductive
    } else {
        Verdict::NotInductive { failed }
    };
    Ok(Analysis {
        annotations: w.annotations,
        sets,
        checks: w.checks,
        verdict,
        releases: liveness_release_points(spec)?,
        invariant: w.invariant,
        loop_exit: w.loop_exit,
        lambda: spec.sector.as_ref().map(|s| s.lambda),
    })
}

impl Walker<'_> {
    fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Closed-loop model read off the code.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub model: ClosedLoopSpec,
    /// Clamp bound `min(−lo, hi)` of the saturation, if there is one.
    pub sat_limit: Option<f64>,
    pub sat_label: Option<String>,
}

/// Symbolically executes one turn of the invariant process's loop, starting
/// right after its `end`, to obtain `x⁺ = A x + B w`, `w = SAT(C x)` over
/// the invariant variables. Without a saturation, `B` and `C` are zero.
pub fn closed_loop(spec: &SystemSpec) -> Result<ClosedLoop, AnalysisError> {
    let inv = spec
        .invariant
        .as_ref()
        .ok_or_else(|| AnalysisError::Unsupported("no [invariant] section".into()))?;
    let schedule = serialize_order(spec)?;
    let pi = spec
        .process_index(&inv.process)
        .ok_or_else(|| AnalysisError::Unsupported(format!("unknown process `{}`", inv.process)))?;
    let (_, end) = spec.processes[pi].loop_bounds().ok_or_else(|| {
        AnalysisError::Unsupported(format!("process `{}` has no loop", inv.process))
    })?;
    let at = schedule
        .period
        .iter()
        .position(|e| e.process == pi && e.line == end)
        .ok_or_else(|| {
            AnalysisError::Unsupported("the loop end is not part of the periodic schedule".into())
        })?;
    let turn: Vec<&Event> = schedule.period[at + 1..]
        .iter()
        .chain(&schedule.period[..=at])
        .collect();

    let n: usize = inv
        .vars
        .iter()
        .map(|v| spec.dim_of(v).expect("resolved"))
        .sum();
    let mut expr: HashMap<&str, Matrix> = HashMap::new();
    let mut off = 0;
    for v in &inv.vars {
        let d = spec.dim_of(v).expect("resolved");
        let mut m = Matrix::zeros(d, n + 1);
        for i in 0..d {
            m.set(i, off + i, 1.0);
        }
        expr.insert(v, m);
        off += d;
    }
    let mut c_row: Option<Matrix> = None;
    let mut sat_limit = None;
    let mut sat_label = None;
    for e in turn {
        let line = spec.line(e.process, e.line);
        for s in &line.stmts {
            match s {
                Stmt::VecInit { target, value } => {
                    let d = spec.dim_of(target).expect("resolved");
                    match value {
                        VecValue::Literal(m) if !m.is_zero() => {
                            return Err(AnalysisError::Unsupported(format!(
                                "{}: nonzero constant in the loop is not linear",
                                line.label
                            )))
                        }
                        _ => expr.insert(target, Matrix::zeros(d, n + 1)),
                    };
                }
                Stmt::Assign {
                    target,
                    terms,
                    offset,
                } => {
                    if offset
                        .as_ref()
                        .is_some_and(|o| o.vector.iter().any(|&v| v != 0.0))
                    {
                        return Err(AnalysisError::Unsupported(format!(
                            "{}: constant offset in the loop is not linear",
                            line.label
                        )));
                    }
                    let d = spec.dim_of(target).expect("resolved");
                    let mut acc = Matrix::zeros(d, n + 1);
                    for t in terms {
                        let src = expr.get(t.source.as_str()).ok_or_else(|| {
                            AnalysisError::Unsupported(format!(
                                "{}: `{}` is read before it is set",
                                line.label, t.source
                            ))
                        })?;
                        acc = acc
                            .add(&t.matrix.matmul(src).map_err(SetError::from)?)
                            .map_err(SetError::from)?;
                    }
                    expr.insert(target, acc);
                }
                Stmt::Saturate {
                    target,
                    source,
                    lo,
                    hi,
                    ..
                } => {
                    if c_row.is_some() {
                        return Err(AnalysisError::Unsupported(
                            "more than one saturation in the loop".into(),
                        ));
                    }
                    let src = expr.get(source.as_str()).ok_or_else(|| {
                        AnalysisError::Unsupported(format!(
                            "{}: `{source}` is read before it is set",
                            line.label
                        ))
                    })?;
                    let c = src.select(&[0], &(0..n).collect::<Vec<_>>());
                    if src.get(0, n) != 0.0 {
                        return Err(AnalysisError::Unsupported(
                            "saturation input depends on its own output".into(),
                        ));
                    }
                    c_row = Some(c);
                    sat_limit = Some((-lo).min(*hi));
                    sat_label = Some(line.label.clone());
                    let mut w = Matrix::zeros(1, n + 1);
                    w.set(0, n, 1.0);
                    expr.insert(target, w);
                }
                _ => {}
            }
        }
    }
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, 1);
    let mut off = 0;
    for v in &inv.vars {
        let m = &expr[v.as_str()];
        for i in 0..m.rows() {
            for j in 0..n {
                a.set(off + i, j, m.get(i, j));
            }
            b.set(off + i, 0, m.get(i, n));
        }
        off += m.rows();
    }
    let c = c_row.unwrap_or_else(|| Matrix::zeros(1, n));
    let sector = match &spec.sector {
        Some(s) => SectorBound::new(s.alpha, s.beta)?,
        None => SectorBound::new(0.0, 0.0)?,
    };
    let lambda = spec.sector.as_ref().map_or(0.0, |s| s.lambda);
    Ok(ClosedLoop {
        model: ClosedLoopSpec::new(a, b, c, inv.p.clone(), lambda, sector)?,
        sat_limit,
        sat_label,
    })
}

fn fmt_matrix4(m: &Matrix, indent: &str) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        out.push_str(indent);
        let row: Vec<String> = m
            .row_slice(i)
            .iter()
            .map(|v| format!("{v:>11.4}"))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Plain-text report: named sets, checks with margins, verdict.
pub fn render_report(analysis: &Analysis) -> String {
    let mut out = String::new();
    if let Some(l) = analysis.lambda {
        out.push_str(&format!("lambda = {l}\n"));
    }
    if let Some(inv) = &analysis.invariant {
        out.push_str(&format!("\nE_P over {} (Gram form P^-1):\n", inv.layout()));
        out.push_str(&fmt_matrix4(inv.gram().as_matrix(), "  "));
    }
    for n in &analysis.sets {
        out.push_str(&format!("\n{} over {}:\n", n.name, n.set.layout()));
        out.push_str(&fmt_matrix4(n.set.gram().as_matrix(), "  "));
    }
    if !analysis.releases.is_empty() {
        out.push_str("\nreleases:\n");
        for (l, vs) in &analysis.releases {
            out.push_str(&format!("  after {l}: {}\n", vs.join(", ")));
        }
    }
    out.push_str("\nchecks:\n");
    for c in &analysis.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        out.push_str(&format!(
            "  {mark} {:<20} margin {:>12.4e}  {}\n",
            c.name, c.margin, c.detail
        ));
    }
    out.push_str(&format!("\nverdict: {}\n", analysis.verdict));
    out
}

fn matrix_json(m: &Matrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|i| Value::Array(m.row_slice(i).iter().map(|&v| json!(v)).collect()))
            .collect(),
    )
}

fn num_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

/// Machine-readable counterpart of [`render_report`].
pub fn report_json(analysis: &Analysis) -> Value {
    let sets: serde_json::Map<String, Value> = analysis
        .sets
        .iter()
        .map(|n| {
            (
                n.name.clone(),
                json!({
                    "vars": n.set.layout().names().collect::<Vec<_>>(),
                    "gram": matrix_json(n.set.gram().as_matrix()),
                }),
            )
        })
        .collect();
    let checks: Vec<Value> = analysis
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "label": c.label,
                "margin": num_json(c.margin),
                "passed": c.passed,
            })
        })
        .collect();
    let failed: Vec<String> = match &analysis.verdict {
        Verdict::Inductive => Vec::new(),
        Verdict::NotInductive { failed } => failed.clone(),
    };
    json!({
        "verdict": if analysis.verdict.is_inductive() { "INDUCTIVE" } else { "NOT-INDUCTIVE" },
        "failed": failed,
        "lambda": analysis.lambda,
        "checks": checks,
        "sets": sets,
        "annotations": analysis.annotations.iter().map(|a| json!({
            "label": a.label,
            "pre": if a.waited { Value::Null } else { json!(analysis.state_name(&a.pre)) },
            "post": analysis.state_name(&a.post),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absstab::{forward_chain, w_factored};
    use crate::ir::{emit_listing, parse_spec, BENCHMARK_SYS};
    use crate::symmat::congruence;
    use crate::testdata;
    use proptest::prelude::*;

    fn bench() -> SystemSpec {
        parse_spec(BENCHMARK_SYS).unwrap()
    }

    fn names(a: &Analysis) -> Vec<(String, String, String)> {
        a.listing_annotations()
            .into_iter()
            .map(|l| {
                let short = |s: &str| s.rsplit(' ').next().unwrap().to_string();
                (
                    l.label,
                    l.pre.as_deref().map_or("⋮".into(), short),
                    short(&l.post),
                )
            })
            .collect()
    }

    #[test]
    fn benchmark_is_inductive_with_named_sets() {
        let a = analyze(&bench(), &Tolerances::default()).unwrap();
        assert!(a.verdict.is_inductive(), "{}", render_report(&a));
        let got = names(&a);
        let find = |l: &str| got.iter().find(|g| g.0 == l).cloned().unwrap();
        let row =
            |l: &str, pre: &str, post: &str| (l.to_string(), pre.to_string(), post.to_string());
        for l in ["1p", "2p", "3p", "4p"] {
            assert_eq!(find(l), row(l, "E_P", "E_P"));
        }
        assert_eq!(find("5p"), row("5p", "E_P", "G_R"));
        assert_eq!(find("6p"), row("6p", "G_R", "G_R"));
        assert_eq!(find("7p"), row("7p", "⋮", "G_Y"));
        assert_eq!(find("8p"), row("8p", "G_Y", "G_Z"));
        assert_eq!(find("9p"), row("9p", "E_P", "false"));
        for l in ["1c", "2c", "3c", "4c", "5c", "6c"] {
            assert_eq!(find(l), row(l, "G_R", "G_R"));
        }
        assert_eq!(find("7c"), row("7c", "G_R", "G_V"));
        assert_eq!(find("8c"), row("8c", "G_W", "G_X"));
        assert_eq!(find("9c"), row("9c", "G_X", "G_Y"));
        assert_eq!(find("10c"), row("10c", "G_Y", "G_Y"));
        assert_eq!(find("11c"), row("11c", "⋮", "G_R"));
        assert_eq!(find("12c"), row("12c", "G_R", "false"));
        let layouts: Vec<String> = a
            .sets
            .iter()
            .map(|n| format!("{} {}", n.name, n.set.layout()))
            .collect();
        assert_eq!(
            layouts,
            [
                "R (xc, xp, y)",
                "V (xc, xp, y, yc)",
                "W (xc, xp, yc)",
                "X (xc, xp, u, yc)",
                "Y (xc, xp, u)",
                "Z (xc, xp)"
            ]
        );
        let listing = emit_listing(&bench(), &a.listing_annotations()).unwrap();
        assert!(listing.contains("7p[10c]: receive(u)"));
        assert!(listing.contains("11c[6p]: receive(y)"));
        assert!(listing.contains("5c: receive(y)"));
    }

    #[test]
    fn release_points_follow_last_reads() {
        let r = liveness_release_points(&bench()).unwrap();
        let mut r: Vec<(String, Vec<String>)> = r;
        r.sort();
        let want = [("7c", "y"), ("8p", "u"), ("9c", "yc")];
        assert_eq!(r.len(), 3, "{r:?}");
        for (got, (l, v)) in r.iter().zip(want) {
            assert_eq!(got.0, l);
            assert_eq!(got.1, vec![v.to_string()]);
        }
    }

    #[test]
    fn closed_loop_matches_hand_derived_matrices() {
        let cl = closed_loop(&bench()).unwrap();
        let d = |a: &Matrix, b: &Matrix| a.sub(b).unwrap().max_abs();
        assert!(d(&cl.model.a, &testdata::closed_a()) < 1e-15);
        assert!(d(&cl.model.b, &testdata::closed_b()) < 1e-15);
        assert!(d(&cl.model.c, &testdata::closed_c()) < 1e-15);
        assert_eq!(cl.sat_limit, Some(1.0));
        assert_eq!(cl.sat_label.as_deref(), Some("7c"));
    }

    #[test]
    fn loop_exit_equals_the_closed_form() {
        let spec = bench();
        let a = analyze(&spec, &Tolerances::default()).unwrap();
        let cl = closed_loop(&spec).unwrap().model;
        let ab = Matrix::hstack(&[&cl.a, &cl.b]).unwrap();
        let z = congruence(&ab, &w_factored(&cl).unwrap()).unwrap();
        let got = a.set("Z").unwrap().gram();
        assert!(got.frobenius_distance(&z).unwrap() <= 1e-8);
        let chain = forward_chain(&cl).unwrap();
        assert!(got.frobenius_distance(&chain.z).unwrap() <= 1e-8);
        let margin = a.check("invariance").unwrap().margin;
        assert!(margin >= 0.0);
    }

    #[test]
    fn shrunk_invariant_is_rejected_with_named_checks() {
        let spec = bench();
        let big = spec.with_invariant_matrix(testdata::p().scale(100.0));
        let a = analyze(&big, &Tolerances::default()).unwrap();
        match &a.verdict {
            Verdict::NotInductive { failed } => assert!(!failed.is_empty()),
            v => panic!("unexpected {v}"),
        }
        // Oracle: the set reached from 100·P, tested directly.
        let cl = closed_loop(&big).unwrap().model;
        let direct = crate::absstab::iff_row(&cl, 1e-9, 1e-8).unwrap();
        assert!(!direct.forward_holds);
        let zero = spec.with_lambda(0.0);
        let a = analyze(&zero, &Tolerances::default()).unwrap();
        assert!(!a.verdict.is_inductive());
        assert!(a.check("lemma at 7c").is_some_and(|c| !c.passed));
    }

    fn lyapunov_block(a: &Matrix) -> SymMatrix {
        // P = Σ (Aᵀ)^k A^k, truncated once the terms are negligible.
        let mut p = SymMatrix::identity(a.rows());
        let mut ak = a.clone();
        for _ in 0..2000 {
            let term = congruence(&ak.transpose(), &SymMatrix::identity(a.rows())).unwrap();
            if term.frobenius_norm() < 1e-16 {
                break;
            }
            p = p.add(&term).unwrap();
            ak = ak.matmul(a).unwrap();
        }
        p
    }

    #[test]
    fn decoupled_stable_loops_are_inductive() {
        let rot = |k: f64, t: f64| {
            Matrix::from_rows(&[&[k * t.cos(), -k * t.sin()], &[k * t.sin(), k * t.cos()]]).unwrap()
        };
        let (ac, ap) = (rot(0.8, 0.3), rot(0.9, 0.1));
        let pc = lyapunov_block(&ac);
        let pp = lyapunov_block(&ap);
        // Oracle: the discrete Lyapunov inequality holds blockwise.
        for (a, p) in [(&ac, &pc), (&ap, &pp)] {
            let d = congruence(&a.transpose(), p).unwrap().sub(p).unwrap();
            assert!(d.max_eigenvalue() < 0.0);
        }
        let mut pm = Matrix::zeros(4, 4);
        pm.set_block(0, 0, pc.as_matrix());
        pm.set_block(2, 2, pp.as_matrix());
        let mut text = BENCHMARK_SYS.replace("Bp = [0.00005; 0.01]", "Bp = [0; 0]");
        text = text.replace(
            "Ac = [0.4990, -0.0500; 0.0100, 1.0000]",
            &format!("Ac = {}", crate::ir::fmt_matrix(&ac)),
        );
        text = text.replace(
            "Ap = [1.0000, 0.0100; -0.0100, 1.0000]",
            &format!("Ap = {}", crate::ir::fmt_matrix(&ap)),
        );
        text = text.replace("Cp = [1, 0]", "Cp = [0, 0]");
        let spec = parse_spec(&text).unwrap();
        let mut spec = spec.with_invariant_matrix(SymMatrix::from_matrix(&pm).unwrap());
        spec.initial.as_mut().unwrap().q = pp.clone();
        // y ≡ 0, so the sector leaves only λ·yc² ≤ 1; a large λ pins yc.
        spec.sector.as_mut().unwrap().lambda = 1e8;
        let a = analyze(&spec, &Tolerances::default()).unwrap();
        assert!(a.verdict.is_inductive(), "{}", render_report(&a));
    }

    #[test]
    fn empty_program_has_no_annotations() {
        let spec = parse_spec("[variables]\nx = 1\n[process a]\n").unwrap();
        let a = analyze(&spec, &Tolerances::default()).unwrap();
        assert!(a.annotations.is_empty());
        assert!(!a.verdict.is_inductive());
        assert!(render_report(&a).contains("NOT-INDUCTIVE"));
    }

    #[test]
    fn transfer_rules() {
        let ctx_vars = vec![("a".to_string(), 1usize), ("b".to_string(), 1usize)];
        let ctx = TransferCtx {
            variables: &ctx_vars,
            sector: Some(SectorBound::new(0.5, 1.0).unwrap()),
            lambda: 1.0,
            psd_tol: 1e-9,
            contain_tol: 1e-8,
            preset_zero: &[],
        };
        let layout = VarLayout::from_pairs(&[("a", 1)]).unwrap();
        let s = AbstractState::Region(
            QuadSet::new(layout, SymMatrix::identity(1).scale(4.0), "R").unwrap(),
        );
        let spec = parse_spec(
            "[variables]\na = 1\nb = 1\n[process p]\n1p: b = 3*a\n2p: b = sat(a,-1,1)\n3p: K = 2\n",
        )
        .unwrap();
        let st = |i: usize| &spec.processes[0].lines[i].stmts[0];
        assert_eq!(
            transfer(&AbstractState::Bottom, st(0), &ctx).unwrap(),
            AbstractState::Bottom
        );
        assert_eq!(transfer(&s, st(2), &ctx).unwrap(), s);
        let t = transfer(&s, st(0), &ctx).unwrap();
        let g = t.region().unwrap().gram();
        assert!((g.get(1, 1) - 36.0).abs() < 1e-12 && (g.get(0, 1) - 12.0).abs() < 1e-12);
        // |a| ≤ 2 fits the sector (limit 1/0.5 = 2).
        assert!(transfer(&s, st(1), &ctx).is_ok());
        let wide = AbstractState::Region(
            QuadSet::new(
                VarLayout::from_pairs(&[("a", 1)]).unwrap(),
                SymMatrix::identity(1).scale(9.0),
                "R",
            )
            .unwrap(),
        );
        assert!(matches!(
            transfer(&wide, st(1), &ctx),
            Err(TransferError::UnsoundSector { .. })
        ));
        assert!(matches!(
            transfer(&AbstractState::Top, st(1), &ctx),
            Err(TransferError::UnsoundSector { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn enlarging_the_initial_set_never_helps(k in 0.2f64..1.0) {
            let spec = bench();
            let base = analyze(&spec, &Tolerances::default()).unwrap().verdict.is_inductive();
            let mut big = spec.clone();
            let init = big.initial.as_mut().unwrap();
            init.q = init.q.scale(k);
            let grown = analyze(&big, &Tolerances::default()).unwrap().verdict.is_inductive();
            prop_assert!(!grown || base);
            prop_assert!(!grown);
        }
    }
}
