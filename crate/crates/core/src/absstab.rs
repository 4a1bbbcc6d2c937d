//! Absolute-stability checks on the closed-loop model
//! `x⁺ = A x + B·SAT(C x)`.
//!
//! The saturation is replaced by the sector constraint
//! `(y_c − α y)(y_c − β y) ≤ 0` on `y = Cx`, `y_c = SAT(y)`, and the
//! quadratic Lyapunov decay condition becomes one matrix inequality in the
//! multiplier `λ ≥ 0` (the S-procedure). The same sector constraint is used
//! at code level through [`combine_lemma`], and [`verify_equivalence`]
//! checks that the code-level chain of sets and the matrix inequality are
//! the same condition.

use thiserror::Error;

use crate::quadsets::{Ellipsoid, SetError};
use crate::symmat::{congruence, is_nsd, schur_complement, AlgebraError, Matrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("invalid sector ({alpha}, {beta}): need 0 <= alpha <= beta")]
    InvalidSector { alpha: f64, beta: f64 },
    #[error("closed-loop shapes are inconsistent: {0}")]
    Shape(String),
    #[error("multiplier mu = {mu} must be negative")]
    NonNegativeMultiplier { mu: f64 },
    #[error("lemma pencil is singular (pivot {index})")]
    SingularPencil { index: usize },
    #[error("lemma inapplicable: V has min eigenvalue {min_eig:.3e}")]
    LemmaInapplicable { min_eig: f64 },
    #[error("{step}: {source}")]
    Step {
        step: &'static str,
        source: AlgebraError,
    },
}

pub type Result<T> = std::result::Result<T, StabilityError>;

fn step<T>(step: &'static str, r: std::result::Result<T, AlgebraError>) -> Result<T> {
    r.map_err(|source| StabilityError::Step { step, source })
}

/// Sector `(α, β)`: `(y_c − α y)(y_c − β y) ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorBound {
    alpha: f64,
    beta: f64,
}

impl SectorBound {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && 0.0 <= alpha && alpha <= beta) {
            return Err(StabilityError::InvalidSector { alpha, beta });
        }
        Ok(SectorBound { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(α+β)/2`.
    pub fn center(&self) -> f64 {
        0.5 * (self.alpha + self.beta)
    }

    /// `((α+β)/2)² − αβ`, the coefficient that appears in `P̃`.
    pub fn spread(&self) -> f64 {
        self.center().powi(2) - self.alpha * self.beta
    }

    /// `[[αβ, −(α+β)/2], [−(α+β)/2, 1]]` acting on `(y, y_c)`.
    pub fn block(&self) -> SymMatrix {
        let c = self.center();
        SymMatrix::from_rows(&[&[self.alpha * self.beta, -c], &[-c, 1.0]]).expect("2x2")
    }

    /// The block placed at coordinates `(y, y_c)` of an `n`-dimensional form.
    pub fn embed(&self, n: usize, y: usize, yc: usize) -> SymMatrix {
        assert!(y < n && yc < n && y != yc);
        let b = self.block();
        let mut m = Matrix::zeros(n, n);
        m.set(y, y, b.get(0, 0));
        m.set(y, yc, b.get(0, 1));
        m.set(yc, y, b.get(1, 0));
        m.set(yc, yc, b.get(1, 1));
        SymMatrix::from_matrix(&m).expect("square")
    }

    /// `(y_c − α y)(y_c − β y)`; nonpositive inside the sector.
    pub fn value(&self, y: f64, yc: f64) -> f64 {
        (yc - self.alpha * y) * (yc - self.beta * y)
    }
}

/// Closed-loop data `x⁺ = A x + B·SAT(C x)` with candidate `P` and multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub p: SymMatrix,
    pub lambda: f64,
    pub sector: SectorBound,
}

impl ClosedLoopSpec {
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        p: SymMatrix,
        lambda: f64,
        sector: SectorBound,
    ) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(StabilityError::Shape(format!(
                "A is {:?}, expected square",
                a.shape()
            )));
        }
        if b.shape() != (n, 1) {
            return Err(StabilityError::Shape(format!(
                "B is {:?}, expected ({n}, 1)",
                b.shape()
            )));
        }
        if c.shape() != (1, n) {
            return Err(StabilityError::Shape(format!(
                "C is {:?}, expected (1, {n})",
                c.shape()
            )));
        }
        if p.dim() != n {
            return Err(StabilityError::Shape(format!(
                "P is {}x{0}, expected {n}x{n}",
                p.dim()
            )));
        }
        Ok(ClosedLoopSpec {
            a,
            b,
            c,
            p,
            lambda,
            sector,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn with_lambda(&self, lambda: f64) -> ClosedLoopSpec {
        ClosedLoopSpec {
            lambda,
            ..self.clone()
        }
    }

    pub fn with_p(&self, p: SymMatrix) -> ClosedLoopSpec {
        ClosedLoopSpec { p, ..self.clone() }
    }

    fn ab(&self) -> Matrix {
        Matrix::hstack(&[&self.a, &self.b]).expect("row counts checked in new")
    }
}

/// `[[αβ CᵀC, −(α+β)/2 Cᵀ], [−(α+β)/2 C, 1]]` over `(x, y_c)`.
pub fn sector_matrix(c: &Matrix, sector: &SectorBound) -> Result<SymMatrix> {
    let n = c.cols();
    let mut nmat = Matrix::zeros(2, n + 1);
    nmat.set_block(0, 0, c);
    nmat.set(1, n, 1.0);
    Ok(congruence(&nmat.transpose(), &sector.block())?)
}

/// `[A B]ᵀ P [A B] − diag(P, 0) − λ·sector_matrix`.
pub fn sproc_matrix(spec: &ClosedLoopSpec) -> Result<SymMatrix> {
    let n = spec.dim();
    let ab = spec.ab();
    let decay = congruence(&ab.transpose(), &spec.p)?;
    let mut pd = Matrix::zeros(n + 1, n + 1);
    pd.set_block(0, 0, spec.p.as_matrix());
    let pd = SymMatrix::from_matrix(&pd)?;
    let sector = sector_matrix(&spec.c, &spec.sector)?;
    Ok(decay.sub(&pd)?.sub(&sector.scale(spec.lambda))?)
}

/// Largest eigenvalue of the S-procedure matrix.
pub fn sproc_max_eigenvalue(spec: &ClosedLoopSpec) -> Result<f64> {
    Ok(sproc_matrix(spec)?.max_eigenvalue())
}

/// The S-procedure inequality holds (`λ ≥ 0` and the matrix is NSD within `tol`).
pub fn check_sproc(spec: &ClosedLoopSpec, tol: f64) -> Result<bool> {
    if spec.lambda < 0.0 {
        return Ok(false);
    }
    Ok(is_nsd(&sproc_matrix(spec)?, tol))
}

/// Result of evaluating the combination formula without a validity check.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaOutcome {
    pub v: SymMatrix,
    pub min_eig: f64,
}

/// `V = (diag(I, 0) − μ·diag(U, I)·T)⁻¹ · diag(U, I)`.
///
/// `U` covers the leading `k` coordinates of `T`; the rest are the new
/// variables `w`.
pub fn lemma_matrix(u: &SymMatrix, t: &SymMatrix, mu: f64) -> Result<LemmaOutcome> {
    let k = u.dim();
    let n = t.dim();
    if n <= k {
        return Err(StabilityError::Shape(format!(
            "T has dimension {n}, must exceed U's dimension {k}"
        )));
    }
    let mut d = Matrix::identity(n);
    d.set_block(0, 0, u.as_matrix());
    let mut e = Matrix::zeros(n, n);
    e.set_block(0, 0, &Matrix::identity(k));
    let pencil = e.sub(&d.matmul(t.as_matrix())?.scale(mu))?;
    let raw = match pencil.solve(&d) {
        Ok(v) => v,
        Err(AlgebraError::Singular { index, .. }) => {
            return Err(StabilityError::SingularPencil { index })
        }
        Err(other) => return Err(other.into()),
    };
    let v = SymMatrix::from_matrix(&raw)?;
    let min_eig = v.min_eigenvalue();
    Ok(LemmaOutcome { v, min_eig })
}

/// Combines `[[1, zᵀ], [z, U]] ⪰ 0` and `[z; w]ᵀ T [z; w] ≤ 0` into
/// `[z; w] ∈ G_V`.
///
/// Valid when the pencil is invertible, `μ < 0` and `V ⪰ 0` (within
/// `psd_tol`). With `v = diag(U, I)·b` one checks `V·(pencil)ᵀb = v`
/// and `vᵀ(pencil)ᵀb = aᵀUa − μ·[z;w]ᵀT[z;w] ≤ 1`, which needs `μ ≤ 0`; `V`
/// may be singular, as it is whenever `U` is.
pub fn combine_lemma(u: &SymMatrix, t: &SymMatrix, mu: f64, psd_tol: f64) -> Result<SymMatrix> {
    let out = lemma_matrix(u, t, mu)?;
    if mu >= 0.0 || mu.is_nan() {
        return Err(StabilityError::NonNegativeMultiplier { mu });
    }
    if out.min_eig < -psd_tol {
        return Err(StabilityError::LemmaInapplicable {
            min_eig: out.min_eig,
        });
    }
    Ok(out.v)
}

/// Sets produced by running the code-level chain on the closed-loop model:
/// `R` (state plus `y = Cx`), `V` (after saturation), `W` (`y` released)
/// and `Z = [A B] W [A B]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardChain {
    pub r: SymMatrix,
    pub v: SymMatrix,
    pub v_min_eig: f64,
    pub w: SymMatrix,
    pub z: SymMatrix,
}

pub fn forward_chain(spec: &ClosedLoopSpec) -> Result<ForwardChain> {
    let n = spec.dim();
    let pinv = step("inverse of P", spec.p.inverse())?;
    let lift = Matrix::vstack(&[&Matrix::identity(n), &spec.c])?;
    let r = congruence(&lift, &pinv)?;
    let t = spec.sector.embed(n + 2, n, n + 1);
    let lemma = lemma_matrix(&r, &t, -spec.lambda)?;
    let keep: Vec<usize> = (0..n).chain([n + 1]).collect();
    let w = lemma.v.principal_submatrix(&keep)?;
    let z = congruence(&spec.ab(), &w)?;
    Ok(ForwardChain {
        r,
        v: lemma.v,
        v_min_eig: lemma.min_eig,
        w,
        z,
    })
}

/// `[[I, 0], [(α+β)/2·C, 1]]`.
fn factor_l(spec: &ClosedLoopSpec) -> Matrix {
    let n = spec.dim();
    let mut l = Matrix::identity(n + 1);
    l.set_block(n, 0, &spec.c.scale(spec.sector.center()));
    l
}

/// `P̃ = P − (((α+β)/2)² − αβ)·λ·CᵀC`.
pub fn p_tilde(spec: &ClosedLoopSpec) -> Result<SymMatrix> {
    let ctc = congruence(&spec.c.transpose(), &SymMatrix::identity(1))?;
    Ok(spec.p.sub(&ctc.scale(spec.sector.spread() * spec.lambda))?)
}

/// `W` from its closed form: the inverse of
/// `[[P + αβλCᵀC, −(α+β)/2·λCᵀ], [·, λ]]`.
pub fn w_closed_form(spec: &ClosedLoopSpec) -> Result<SymMatrix> {
    let n = spec.dim();
    let mut pd = Matrix::zeros(n + 1, n + 1);
    pd.set_block(0, 0, spec.p.as_matrix());
    let pd = SymMatrix::from_matrix(&pd)?;
    let winv = pd.add(&sector_matrix(&spec.c, &spec.sector)?.scale(spec.lambda))?;
    step("inverse of the closed-form W", winv.inverse())
}

/// `W = L·diag(P̃⁻¹, 1/λ)·Lᵀ`.
pub fn w_factored(spec: &ClosedLoopSpec) -> Result<SymMatrix> {
    let n = spec.dim();
    let pt_inv = step("inverse of P-tilde", p_tilde(spec)?.inverse())?;
    let mut d = Matrix::zeros(n + 1, n + 1);
    d.set_block(0, 0, pt_inv.as_matrix());
    d.set(n, n, 1.0 / spec.lambda);
    Ok(congruence(&factor_l(spec), &SymMatrix::from_matrix(&d)?)?)
}

/// One multiplier of the iff comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct IffRow {
    pub lambda: f64,
    pub lmi_max_eig: f64,
    pub lmi_holds: bool,
    /// Smallest eigenvalue of the lemma's `V` (`None` when the pencil is singular).
    pub lemma_min_eig: Option<f64>,
    /// Smallest eigenvalue of `P⁻¹ − Z`.
    pub containment_margin: Option<f64>,
    pub forward_holds: bool,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub lambda: f64,
    pub identity_tol: f64,
    pub w_closed_form_residual: f64,
    pub w_closed_form_ok: bool,
    pub factorization_residual: f64,
    pub factorization_ok: bool,
    pub iff_rows: Vec<IffRow>,
    pub iff_ok: bool,
    pub schur_first_residual: f64,
    pub schur_second_residual: f64,
    pub schur_ok: bool,
}

impl EquivalenceReport {
    pub fn all_ok(&self) -> bool {
        self.w_closed_form_ok && self.factorization_ok && self.iff_ok && self.schur_ok
    }
}

/// Evaluates both sides of the equivalence at one multiplier.
pub fn iff_row(spec: &ClosedLoopSpec, psd_tol: f64, contain_tol: f64) -> Result<IffRow> {
    let lmi_max_eig = sproc_max_eigenvalue(spec)?;
    let lmi_holds = spec.lambda >= 0.0 && lmi_max_eig <= psd_tol;
    let (lemma_min_eig, containment_margin) = match forward_chain(spec) {
        Ok(ch) => {
            let pinv = step("inverse of P", spec.p.inverse())?;
            let margin = pinv.sub(&ch.z)?.min_eigenvalue();
            (Some(ch.v_min_eig), Some(margin))
        }
        Err(StabilityError::SingularPencil { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    let forward_holds = spec.lambda > 0.0
        && lemma_min_eig.is_some_and(|m| m >= -psd_tol)
        && containment_margin.is_some_and(|m| m >= -contain_tol);
    Ok(IffRow {
        lambda: spec.lambda,
        lmi_max_eig,
        lmi_holds,
        lemma_min_eig,
        containment_margin,
        forward_holds,
        agree: forward_holds == lmi_holds,
    })
}

/// Checks that the code-level chain and the S-procedure inequality agree:
///
/// * (a) the forward `W` equals its closed form;
/// * (b) `W = L·diag(P̃⁻¹, 1/λ)·Lᵀ`;
/// * (c) containment of `G_Z` in `E_P` holds iff the inequality holds, at
///   `λ·{0.5, 1, 2}`;
/// * (d) the two Schur complements of
///   `[[−P⁻¹, [A B]L], [Lᵀ[A B]ᵀ, −diag(P̃, λ)]]` give `Z − P⁻¹` and,
///   after congruence by `L⁻ᵀ`, the S-procedure matrix.
///
/// Identities (a), (b), (d) are compared in Frobenius norm against
/// `identity_tol`.
pub fn verify_equivalence(
    spec: &ClosedLoopSpec,
    identity_tol: f64,
    psd_tol: f64,
    contain_tol: f64,
) -> Result<EquivalenceReport> {
    let n = spec.dim();
    let chain = forward_chain(spec)?;

    let w_closed = w_closed_form(spec)?;
    let w_closed_form_residual = chain.w.frobenius_distance(&w_closed)?;
    let w_fact = w_factored(spec)?;
    let factorization_residual = chain.w.frobenius_distance(&w_fact)?;

    let iff_rows = [0.5, 1.0, 2.0]
        .iter()
        .map(|k| iff_row(&spec.with_lambda(spec.lambda * k), psd_tol, contain_tol))
        .collect::<Result<Vec<_>>>()?;
    let iff_ok = iff_rows.iter().all(|r| r.agree);

    let pinv = step("inverse of P", spec.p.inverse())?;
    let pt = p_tilde(spec)?;
    let abl = step("[A B] L", spec.ab().matmul(&factor_l(spec)))?;
    let mut big = Matrix::zeros(2 * n + 1, 2 * n + 1);
    big.set_block(0, 0, &pinv.as_matrix().scale(-1.0));
    big.set_block(0, n, &abl);
    big.set_block(n, 0, &abl.transpose());
    big.set_block(n, n, &pt.as_matrix().scale(-1.0));
    big.set(2 * n, 2 * n, -spec.lambda);
    let big = SymMatrix::from_matrix(&big)?;

    let lower: Vec<usize> = (n..2 * n + 1).collect();
    let first = step("first Schur complement", schur_complement(&big, &lower))?;
    let z_minus_pinv = chain.z.sub(&pinv)?;
    let schur_first_residual = first.frobenius_distance(&z_minus_pinv)?;

    let upper: Vec<usize> = (0..n).collect();
    let second = step("second Schur complement", schur_complement(&big, &upper))?;
    let mut linv = Matrix::identity(n + 1);
    linv.set_block(n, 0, &spec.c.scale(-spec.sector.center()));
    let back = congruence(&linv.transpose(), &second)?;
    let schur_second_residual = back.frobenius_distance(&sproc_matrix(spec)?)?;

    Ok(EquivalenceReport {
        lambda: spec.lambda,
        identity_tol,
        w_closed_form_residual,
        w_closed_form_ok: w_closed_form_residual <= identity_tol,
        factorization_residual,
        factorization_ok: factorization_residual <= identity_tol,
        iff_rows,
        iff_ok,
        schur_first_residual,
        schur_second_residual,
        schur_ok: schur_first_residual <= identity_tol && schur_second_residual <= identity_tol,
    })
}

/// `max{|Cx| : x ∈ E} = sqrt(C·P⁻¹·Cᵀ)`.
pub fn sector_reach(e: &Ellipsoid, c: &Matrix) -> Result<f64> {
    let pinv = step("inverse of P", e.shape().inverse())?;
    let v = congruence(c, &pinv)?;
    Ok(v.get(0, 0).max(0.0).sqrt())
}

/// The sector holds for `SAT` clipping at `±sat_limit` whenever
/// `|y| ≤ sat_limit / α`, provided `α ≤ 1 ≤ β`. True iff every `y = Cx`
/// with `x ∈ E` is in that range.
pub fn sector_valid_on(
    e: &Ellipsoid,
    c: &Matrix,
    sector: &SectorBound,
    sat_limit: f64,
) -> Result<bool> {
    if c.rows() != 1 || c.cols() != e.shape().dim() {
        return Err(StabilityError::Shape(format!(
            "output map is {:?}, expected (1, {})",
            c.shape(),
            e.shape().dim()
        )));
    }
    if c.is_zero() {
        return Ok(true);
    }
    if !(sector.alpha() <= 1.0 && sector.beta() >= 1.0) {
        return Ok(false);
    }
    Ok(sector_reach(e, c)? <= sector_limit(sector, sat_limit))
}

/// `sat_limit / α` (infinite when `α = 0`).
pub fn sector_limit(sector: &SectorBound, sat_limit: f64) -> f64 {
    if sector.alpha() == 0.0 {
        f64::INFINITY
    } else {
        sat_limit / sector.alpha()
    }
}

/// Outcome of a scan over multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    /// Multiplier minimizing the largest eigenvalue.
    pub best_lambda: f64,
    pub best_max_eig: f64,
    /// Interval of multipliers with largest eigenvalue `≤ tol`, if any.
    pub feasible: Option<(f64, f64)>,
}

/// Heuristic search for `λ ∈ (lo, hi]`: a log-spaced grid followed by
/// golden-section refinement. The largest eigenvalue is convex in `λ`
/// (it is the largest eigenvalue of an affine family), so the refinement
/// converges to the global minimizer inside the bracketing grid cell.
pub fn search_lambda(spec: &ClosedLoopSpec, lo: f64, hi: f64, tol: f64) -> Result<LambdaSearch> {
    assert!(0.0 < lo && lo < hi);
    let f = |l: f64| sproc_max_eigenvalue(&spec.with_lambda(l));
    const GRID: usize = 400;
    let ratio = (hi / lo).ln();
    let grid: Vec<f64> = (0..=GRID)
        .map(|i| lo * (ratio * i as f64 / GRID as f64).exp())
        .collect();
    let vals = grid.iter().map(|&l| f(l)).collect::<Result<Vec<_>>>()?;
    let ib = (0..vals.len())
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .expect("grid is nonempty");
    let (mut a, mut b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(GRID)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..100 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
    }
    let (best_lambda, best_max_eig) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let (best_lambda, best_max_eig) = if vals[ib] < best_max_eig {
        (grid[ib], vals[ib])
    } else {
        (best_lambda, best_max_eig)
    };
    let feasible = if best_max_eig <= tol {
        let edge = |mut inside: f64, mut outside: f64| -> Result<f64> {
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if f(mid)? <= tol {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            Ok(inside)
        };
        let left = if f(lo)? <= tol {
            lo
        } else {
            edge(best_lambda, lo)?
        };
        let right = if f(hi)? <= tol {
            hi
        } else {
            edge(best_lambda, hi)?
        };
        Some((left, right))
    } else {
        None
    };
    Ok(LambdaSearch {
        best_lambda,
        best_max_eig,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadsets::{QuadSet, VarLayout};
    use crate::testdata;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sector() -> SectorBound {
        SectorBound::new(0.2, 1.0).unwrap()
    }

    fn benchmark(lambda: f64) -> ClosedLoopSpec {
        ClosedLoopSpec::new(
            testdata::closed_a(),
            testdata::closed_b(),
            testdata::closed_c(),
            testdata::p(),
            lambda,
            sector(),
        )
        .unwrap()
    }

    #[test]
    fn sector_block_values() {
        let b = sector().block();
        assert_eq!(
            b,
            SymMatrix::from_rows(&[&[0.2, -0.6], &[-0.6, 1.0]]).unwrap()
        );
        assert!((sector().spread() - 0.16).abs() < 1e-15);
        assert!(SectorBound::new(1.0, 0.5).is_err());
        assert!(SectorBound::new(-0.1, 0.5).is_err());
    }

    #[test]
    fn sproc_of_zero_system() {
        let p = testdata::p();
        let spec = ClosedLoopSpec::new(
            Matrix::zeros(4, 4),
            Matrix::zeros(4, 1),
            Matrix::zeros(1, 4),
            p.clone(),
            0.0,
            sector(),
        )
        .unwrap();
        let m = sproc_matrix(&spec).unwrap();
        let mut expect = Matrix::zeros(5, 5);
        expect.set_block(0, 0, &p.as_matrix().scale(-1.0));
        assert_eq!(m.as_matrix(), &expect);
        assert!(check_sproc(&spec.with_lambda(3.0), 1e-12).unwrap());
    }

    #[test]
    fn zero_multiplier_is_infeasible_because_btpb_is_positive() {
        let b = testdata::closed_b();
        let p = testdata::p();
        let mut btpb = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                btpb += b.get(i, 0) * p.get(i, j) * b.get(j, 0);
            }
        }
        assert!(btpb > 0.0);
        let spec = benchmark(0.0);
        let m = sproc_matrix(&spec).unwrap();
        assert!((m.get(4, 4) - btpb).abs() < 1e-12);
        assert!(!check_sproc(&spec, 1e-9).unwrap());
    }

    #[test]
    fn benchmark_inequality_feasibility_window() {
        assert!(check_sproc(&benchmark(testdata::FEASIBLE_LAMBDA), 1e-9).unwrap());
        assert!(!check_sproc(&benchmark(0.0595), 1e-9).unwrap());
        assert!(!check_sproc(&benchmark(0.0625), 1e-9).unwrap());
        assert!(sproc_max_eigenvalue(&benchmark(6.76)).unwrap() > 0.5);
        let s = search_lambda(&benchmark(1.0), 1e-4, 100.0, 0.0).unwrap();
        let (lo, hi) = s.feasible.unwrap();
        assert!((0.0600..0.0606).contains(&lo), "lo = {lo}");
        assert!((0.0614..0.0620).contains(&hi), "hi = {hi}");
        assert!(s.best_max_eig < 0.0);
    }

    #[test]
    fn negative_multiplier_never_checks() {
        assert!(!check_sproc(&benchmark(-1.0), 1e-9).unwrap());
    }

    #[test]
    fn lemma_scalar_example() {
        let v = combine_lemma(
            &SymMatrix::identity(1),
            &SymMatrix::diagonal(&[0.0, 1.0]),
            -1.0,
            1e-12,
        )
        .unwrap();
        assert!(v.frobenius_distance(&SymMatrix::identity(2)).unwrap() < 1e-15);
    }

    #[test]
    fn lemma_error_paths() {
        let u = SymMatrix::identity(2);
        assert!(matches!(
            combine_lemma(&u, &SymMatrix::zeros(3), -1.0, 1e-9),
            Err(StabilityError::SingularPencil { .. })
        ));
        let t = SymMatrix::diagonal(&[0.0, 0.0, 1.0]);
        assert!(matches!(
            combine_lemma(&u, &t, 1.0, 1e-9),
            Err(StabilityError::NonNegativeMultiplier { .. })
        ));
        let t = SymMatrix::diagonal(&[0.0, 0.0, -1.0]);
        assert!(matches!(
            combine_lemma(&u, &t, -1.0, 1e-9),
            Err(StabilityError::LemmaInapplicable { .. })
        ));
    }

    #[test]
    fn lemma_on_benchmark_is_psd_only_at_feasible_multiplier() {
        let ok = forward_chain(&benchmark(testdata::FEASIBLE_LAMBDA)).unwrap();
        assert!(ok.v_min_eig > -1e-9);
        let bad = forward_chain(&benchmark(6.76)).unwrap();
        assert!(bad.v_min_eig < -1e-3);
    }

    #[test]
    fn equivalence_on_benchmark() {
        let rep =
            verify_equivalence(&benchmark(testdata::FEASIBLE_LAMBDA), 1e-8, 1e-9, 1e-8).unwrap();
        assert!(rep.all_ok(), "{rep:#?}");
        let mid = &rep.iff_rows[1];
        assert!(mid.lmi_holds && mid.forward_holds);
        assert!(!rep.iff_rows[0].lmi_holds && !rep.iff_rows[2].lmi_holds);
    }

    #[test]
    fn equivalence_at_large_multiplier_both_sides_fail() {
        let rep = verify_equivalence(&benchmark(676.0), 1e-8, 1e-9, 1e-8).unwrap();
        assert!(
            rep.w_closed_form_ok && rep.factorization_ok && rep.schur_ok,
            "{rep:#?}"
        );
        for row in &rep.iff_rows {
            assert!(!row.lmi_holds && !row.forward_holds);
        }
        assert!(rep.iff_ok);
    }

    #[test]
    fn equivalence_with_zero_output() {
        let spec = benchmark(1.0);
        let spec = ClosedLoopSpec {
            c: Matrix::zeros(1, 4),
            ..spec
        };
        assert_eq!(p_tilde(&spec).unwrap(), spec.p);
        let w = w_closed_form(&spec).unwrap();
        let pinv = spec.p.inverse().unwrap();
        let mut expect = Matrix::zeros(5, 5);
        expect.set_block(0, 0, pinv.as_matrix());
        expect.set(4, 4, 1.0);
        assert!(w.as_matrix().sub(&expect).unwrap().frobenius_norm() < 1e-8);
        let rep = verify_equivalence(&spec, 1e-8, 1e-9, 1e-8).unwrap();
        assert!(
            rep.w_closed_form_ok && rep.factorization_ok && rep.schur_ok,
            "{rep:#?}"
        );
        assert!(rep.iff_ok);
    }

    #[test]
    fn sector_validity_examples() {
        let l1 = VarLayout::from_pairs(&[("x", 1)]).unwrap();
        let unit = Ellipsoid::new(l1, SymMatrix::identity(1), "I").unwrap();
        assert!(sector_valid_on(&unit, &Matrix::zeros(1, 1), &sector(), 1.0).unwrap());
        assert!(!sector_valid_on(&unit, &Matrix::row(&[10.0]), &sector(), 1.0).unwrap());
        let l = VarLayout::from_pairs(&[("xc", 2), ("xp", 2)]).unwrap();
        let e = Ellipsoid::new(l, testdata::p(), "P").unwrap();
        let c = testdata::closed_c();
        assert!(sector_valid_on(&e, &c, &sector(), 1.0).unwrap());
        let reach = sector_reach(&e, &c).unwrap();
        assert!((reach - 4.3767).abs() < 1e-3, "reach = {reach}");
    }

    #[test]
    fn sector_reach_agrees_with_boundary_sampling() {
        let l = VarLayout::from_pairs(&[("xc", 2), ("xp", 2)]).unwrap();
        let e = Ellipsoid::new(l, testdata::p(), "P").unwrap();
        let c = testdata::closed_c();
        let reach = sector_reach(&e, &c).unwrap();
        let lt = testdata::p().cholesky().unwrap().transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut best = 0.0f64;
        let s = sector();
        for _ in 0..10_000 {
            let mut u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            let x = lt.solve(&Matrix::column(&u)).unwrap();
            let y = x.get(2, 0);
            best = best.max(y.abs());
            let yc = y.clamp(-1.0, 1.0);
            assert!(s.value(y, yc) <= 1e-12);
        }
        assert!(best <= reach * (1.0 + 1e-12));
        assert!(best > 0.95 * reach);
    }

    #[test]
    fn lemma_sampling_soundness() {
        // 10 instances with PD V, 1000 samples satisfying both hypotheses each.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut instances = 0;
        let mut attempts = 0;
        while instances < 10 {
            attempts += 1;
            assert!(attempts < 10_000, "could not build lemma instances");
            let k = rng.random_range(1..=3usize);
            let f = Matrix::new(
                k,
                k,
                (0..k * k).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
            .unwrap();
            let u = SymMatrix::from_matrix(&f.matmul(&f.transpose()).unwrap()).unwrap();
            let n = k + 1;
            let mut traw = Matrix::new(
                n,
                n,
                (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            traw.set(k, k, traw.get(k, k).abs() + 0.5);
            let t = SymMatrix::from_matrix(&traw).unwrap();
            let mu = -rng.random_range(0.05..3.0);
            let Ok(out) = lemma_matrix(&u, &t, mu) else {
                continue;
            };
            if out.min_eig <= 1e-6 {
                continue;
            }
            let v = out.v;
            let set =
                QuadSet::new(VarLayout::from_pairs(&[("zw", n)]).unwrap(), v.clone(), "V").unwrap();
            let scale = 1.0 + v.frobenius_norm();
            let mut accepted = 0;
            let mut tries = 0;
            while accepted < 1000 && tries < 200_000 {
                tries += 1;
                let mut a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na > 1.0 {
                    a.iter_mut().for_each(|x| *x /= na);
                }
                let mut zw = f.mul_vec(&a).unwrap();
                zw.push(rng.random_range(-5.0..5.0));
                if t.quad_form(&zw) > 0.0 {
                    continue;
                }
                accepted += 1;
                assert!(set.member(&zw, 1e-9 * scale), "violation for {zw:?}");
            }
            if accepted == 1000 {
                instances += 1;
            }
        }
    }

    fn arb_loop() -> impl Strategy<Value = ClosedLoopSpec> {
        (
            prop::collection::vec(-1.0f64..1.0, 9),
            prop::collection::vec(-1.0f64..1.0, 3),
            prop::collection::vec(-1.0f64..1.0, 3),
            prop::collection::vec(-1.0f64..1.0, 9),
        )
            .prop_map(|(a, b, c, f)| {
                let f = Matrix::new(3, 3, f).unwrap();
                let p = SymMatrix::from_matrix(&f.matmul(&f.transpose()).unwrap())
                    .unwrap()
                    .add(&SymMatrix::identity(3))
                    .unwrap();
                ClosedLoopSpec::new(
                    Matrix::new(3, 3, a).unwrap(),
                    Matrix::column(&b),
                    Matrix::row(&c),
                    p,
                    1.0,
                    SectorBound::new(0.2, 1.0).unwrap(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn sproc_is_affine_in_lambda(spec in arb_loop(), l1 in 0.0f64..10.0, l2 in 0.0f64..10.0) {
            let m1 = sproc_matrix(&spec.with_lambda(l1)).unwrap();
            let m2 = sproc_matrix(&spec.with_lambda(l2)).unwrap();
            let t = sector_matrix(&spec.c, &spec.sector).unwrap();
            let diff = m1.sub(&m2).unwrap().add(&t.scale(l1 - l2)).unwrap();
            prop_assert!(diff.as_matrix().max_abs() <= 1e-12 * (1.0 + m1.frobenius_norm()));
        }

        #[test]
        fn closed_form_identities_hold_on_random_loops(spec in arb_loop(), lambda in 0.05f64..5.0) {
            let spec = spec.with_lambda(lambda);
            let rep = verify_equivalence(&spec, 1e-8, 1e-9, 1e-8);
            // Random systems may put P̃ or the pencil at singularity; skip those.
            if let Ok(rep) = rep {
                let scale = 1.0 + forward_chain(&spec).unwrap().w.frobenius_norm();
                prop_assert!(rep.w_closed_form_residual <= 1e-9 * scale);
                prop_assert!(rep.factorization_residual <= 1e-9 * scale);
            }
        }
    }
}
