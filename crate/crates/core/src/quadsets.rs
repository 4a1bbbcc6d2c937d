//! Quadratic sets over named tuples of program variables.
//!
//! An [`Ellipsoid`] `E_P = {x | xᵀPx ≤ 1}` is stored by its quadratic form
//! and is only used at the loop-invariant boundary. Everything the analyzer
//! propagates is a [`QuadSet`] in Gram form
//! `G_R = {x | [[1, xᵀ], [x, R]] ⪰ 0}`, i.e. the image of the unit ball
//! under `R^½`. Affine images, lifts and projections are then congruences
//! and principal submatrices of `R`, and rank-deficient `R` (a variable
//! pinned to zero, a duplicated coordinate) needs no special handling.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::symmat::{congruence, is_psd, AlgebraError, Matrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("layout {left} does not match {right}")]
    LayoutMismatch { left: String, right: String },
    #[error("matrix of dimension {matrix} does not fit layout {layout} (dimension {expected})")]
    DimensionMismatch {
        layout: String,
        expected: usize,
        matrix: usize,
    },
    #[error("shape matrix of `{0}` is not positive definite")]
    NotPositiveDefinite(String),
    #[error(
        "Gram matrix of `{label}` is not positive semidefinite (min eigenvalue {min_eig:.3e})"
    )]
    NotPsd { label: String, min_eig: f64 },
}

pub type Result<T> = std::result::Result<T, SetError>;

/// Ordered list of named variable blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarLayout {
    vars: Vec<(String, usize)>,
}

impl VarLayout {
    pub fn new(vars: Vec<(String, usize)>) -> Result<Self> {
        if vars.is_empty() {
            return Err(SetError::InvalidLayout("layout has no variables".into()));
        }
        for (i, (name, dim)) in vars.iter().enumerate() {
            if *dim == 0 {
                return Err(SetError::InvalidLayout(format!(
                    "variable `{name}` has dimension 0"
                )));
            }
            if vars[..i].iter().any(|(n, _)| n == name) {
                return Err(SetError::DuplicateVariable(name.clone()));
            }
        }
        Ok(VarLayout { vars })
    }

    pub fn from_pairs(pairs: &[(&str, usize)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(n, d)| (n.to_string(), d)).collect())
    }

    pub fn vars(&self) -> &[(String, usize)] {
        &self.vars
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.vars.iter().map(|(_, d)| d).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.iter().any(|(n, _)| n == name)
    }

    pub fn dim_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, d)| *d)
    }

    /// Coordinate range occupied by `name`.
    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        let mut off = 0;
        for (n, d) in &self.vars {
            if n == name {
                return Some(off..off + d);
            }
            off += d;
        }
        None
    }

    /// Layout with `name` appended.
    pub fn with(&self, name: &str, dim: usize) -> Result<VarLayout> {
        let mut vars = self.vars.clone();
        vars.push((name.to_string(), dim));
        VarLayout::new(vars)
    }

    /// Layout with `name` removed, plus the coordinates that survive.
    pub fn without(&self, name: &str) -> Result<(VarLayout, Vec<usize>)> {
        let range = self
            .range_of(name)
            .ok_or_else(|| SetError::UnknownVariable(name.to_string()))?;
        let vars: Vec<_> = self
            .vars
            .iter()
            .filter(|(n, _)| n != name)
            .cloned()
            .collect();
        let kept = (0..self.total_dim())
            .filter(|i| !range.contains(i))
            .collect();
        Ok((VarLayout::new(vars)?, kept))
    }

    /// Coordinates of the listed variables, in the listed order.
    pub fn indices_of(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for name in names {
            let r = self
                .range_of(name)
                .ok_or_else(|| SetError::UnknownVariable(name.to_string()))?;
            out.extend(r);
        }
        Ok(out)
    }
}

impl fmt::Display for VarLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, (n, _)) in self.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

fn check_dim(layout: &VarLayout, dim: usize) -> Result<()> {
    if layout.total_dim() != dim {
        return Err(SetError::DimensionMismatch {
            layout: layout.to_string(),
            expected: layout.total_dim(),
            matrix: dim,
        });
    }
    Ok(())
}

/// `{x | xᵀPx ≤ 1}` with `P` positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    layout: VarLayout,
    shape: SymMatrix,
    label: String,
}

impl Ellipsoid {
    pub fn new(layout: VarLayout, shape: SymMatrix, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        check_dim(&layout, shape.dim())?;
        if shape.cholesky().is_err() {
            return Err(SetError::NotPositiveDefinite(label));
        }
        Ok(Ellipsoid {
            layout,
            shape,
            label,
        })
    }

    pub fn layout(&self) -> &VarLayout {
        &self.layout
    }

    pub fn shape(&self) -> &SymMatrix {
        &self.shape
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `xᵀPx`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.shape.quad_form(x)
    }

    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        self.value(x) <= 1.0 + tol
    }
}

/// Gram-form set `G_R` over a variable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSet {
    layout: VarLayout,
    gram: SymMatrix,
    label: String,
}

impl QuadSet {
    /// Builds a set, rejecting Gram matrices that are not PSD up to
    /// roundoff (`1e-9` relative to their norm).
    pub fn new(layout: VarLayout, gram: SymMatrix, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        check_dim(&layout, gram.dim())?;
        let min_eig = gram.min_eigenvalue();
        if min_eig < -1e-9 * gram.frobenius_norm().max(1.0) {
            return Err(SetError::NotPsd { label, min_eig });
        }
        Ok(QuadSet {
            layout,
            gram,
            label,
        })
    }

    pub fn layout(&self) -> &VarLayout {
        &self.layout
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `G_{P⁻¹}`, the same set as `E_P` in Gram form.
    pub fn from_ellipsoid(e: &Ellipsoid) -> Result<QuadSet> {
        let gram = e.shape.inverse()?;
        QuadSet::new(e.layout.clone(), gram, e.label.clone())
    }

    /// Image of the set under `x ↦ Mx`, relabelled with `out_layout`.
    pub fn affine_image(&self, m: &Matrix, out_layout: VarLayout) -> Result<QuadSet> {
        check_dim(&self.layout, m.cols())?;
        check_dim(&out_layout, m.rows())?;
        let gram = congruence(m, &self.gram)?;
        QuadSet::new(out_layout, gram, self.label.clone())
    }

    /// Appends a new variable `name = C x`.
    pub fn lift_output(&self, c: &Matrix, name: &str) -> Result<QuadSet> {
        let n = self.layout.total_dim();
        check_dim(&self.layout, c.cols())?;
        let layout = self.layout.with(name, c.rows())?;
        let m = Matrix::vstack(&[&Matrix::identity(n), c])?;
        self.affine_image(&m, layout)
    }

    /// Projects out `name` (deletes its rows and columns of `R`).
    pub fn release(&self, name: &str) -> Result<QuadSet> {
        let (layout, kept) = self.layout.without(name)?;
        let gram = self.gram.principal_submatrix(&kept)?;
        Ok(QuadSet {
            layout,
            gram,
            label: self.label.clone(),
        })
    }

    /// Restricts the set to the listed variables, in the listed order.
    pub fn project(&self, names: &[&str], label: impl Into<String>) -> Result<QuadSet> {
        let idx = self.layout.indices_of(names)?;
        let layout = VarLayout::new(
            names
                .iter()
                .map(|n| (n.to_string(), self.layout.dim_of(n).expect("checked above")))
                .collect(),
        )?;
        let gram = self.gram.principal_submatrix(&idx)?;
        Ok(QuadSet {
            layout,
            gram,
            label: label.into(),
        })
    }

    /// Bordered-matrix membership: `[[1, xᵀ], [x, R]]` has smallest
    /// eigenvalue at least `-tol`.
    pub fn member(&self, x: &[f64], tol: f64) -> bool {
        let n = self.gram.dim();
        if x.len() != n {
            return false;
        }
        let mut b = Matrix::zeros(n + 1, n + 1);
        b.set(0, 0, 1.0);
        for i in 0..n {
            b.set(0, i + 1, x[i]);
            b.set(i + 1, 0, x[i]);
            for j in 0..n {
                b.set(i + 1, j + 1, self.gram.get(i, j));
            }
        }
        let b = SymMatrix::from_matrix(&b).expect("square by construction");
        is_psd(&b, tol)
    }

    pub fn membership_test(&self, tol: f64) -> MembershipTest {
        MembershipTest::new(&self.gram, tol)
    }
}

/// Smallest eigenvalue of `P⁻¹ − Z`; nonnegative iff `G_Z ⊆ E_P`.
pub fn containment_margin(outer: &Ellipsoid, inner: &QuadSet) -> Result<f64> {
    if outer.layout != inner.layout {
        return Err(SetError::LayoutMismatch {
            left: outer.layout.to_string(),
            right: inner.layout.to_string(),
        });
    }
    let pinv = outer.shape.inverse()?;
    Ok(pinv.sub(&inner.gram)?.min_eigenvalue())
}

/// `G_Z ⊆ E_P` tested as `P⁻¹ − Z ⪰ −tol·I`.
///
/// The test is exact for every PSD `Z`: the largest value of `xᵀPx` over
/// `G_Z` is the largest eigenvalue of `P^½ Z P^½`.
pub fn contains(outer: &Ellipsoid, inner: &QuadSet, tol: f64) -> Result<bool> {
    Ok(containment_margin(outer, inner)? >= -tol)
}

/// `G_inner ⊆ G_outer` tested as `R_outer − R_inner ⪰ −tol·I` (exact for
/// PSD Gram matrices).
pub fn gram_contains(outer: &QuadSet, inner: &QuadSet, tol: f64) -> Result<bool> {
    Ok(gram_margin(outer, inner)? >= -tol)
}

pub fn gram_margin(outer: &QuadSet, inner: &QuadSet) -> Result<f64> {
    if outer.layout != inner.layout {
        return Err(SetError::LayoutMismatch {
            left: outer.layout.to_string(),
            right: inner.layout.to_string(),
        });
    }
    Ok(outer.gram.sub(&inner.gram)?.min_eigenvalue())
}

/// Precompiled form of [`QuadSet::member`] for repeated queries.
///
/// By a Schur complement, the bordered matrix plus `tol·I` is PSD iff
/// `xᵀ(R + tol·I)⁻¹x ≤ 1 + tol`, so this agrees with `member` while
/// costing one triangular solve per query.
#[derive(Debug, Clone)]
pub struct MembershipTest {
    dim: usize,
    chol: Vec<f64>,
    tol: f64,
}

impl MembershipTest {
    pub fn new(gram: &SymMatrix, tol: f64) -> Self {
        let n = gram.dim();
        let shifted = gram
            .add(&SymMatrix::identity(n).scale(tol))
            .expect("same dimension");
        let l = shifted
            .cholesky()
            .expect("PSD matrix plus a positive shift is positive definite");
        MembershipTest {
            dim: n,
            chol: l.as_slice().to_vec(),
            tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `1 + tol − xᵀ(R + tol·I)⁻¹x`; the point is a member iff this is ≥ 0.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        debug_assert_eq!(x.len(), n);
        let mut acc = 0.0;
        let mut z = [0.0f64; 32];
        let mut zv;
        let z: &mut [f64] = if n <= 32 {
            &mut z[..n]
        } else {
            zv = vec![0.0; n];
            &mut zv
        };
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.chol[i * n + j] * z[j];
            }
            z[i] = s / self.chol[i * n + i];
            acc += z[i] * z[i];
        }
        1.0 + self.tol - acc
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.margin(x) >= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(pairs: &[(&str, usize)]) -> VarLayout {
        VarLayout::from_pairs(pairs).unwrap()
    }

    fn benchmark_p() -> SymMatrix {
        SymMatrix::from_rows(&[
            &[0.2205, 0.0188, -0.0750, 0.0177],
            &[0.0188, 0.4736, 0.0535, 0.0015],
            &[-0.0750, 0.0535, 0.1012, -0.0049],
            &[0.0177, 0.0015, -0.0049, 0.0015],
        ])
        .unwrap()
    }

    #[test]
    fn layout_rules() {
        assert!(VarLayout::from_pairs(&[("a", 1), ("a", 2)]).is_err());
        assert!(VarLayout::from_pairs(&[("a", 0)]).is_err());
        let l = layout(&[("xc", 2), ("xp", 2), ("y", 1)]);
        assert_eq!(l.total_dim(), 5);
        assert_eq!(l.range_of("xp"), Some(2..4));
        assert_eq!(l.to_string(), "(xc, xp, y)");
        let (l2, kept) = l.without("xp").unwrap();
        assert_eq!(l2.to_string(), "(xc, y)");
        assert_eq!(kept, vec![0, 1, 4]);
    }

    #[test]
    fn from_ellipsoid_cases() {
        let e = Ellipsoid::new(layout(&[("x", 2)]), SymMatrix::identity(2), "I").unwrap();
        assert_eq!(
            QuadSet::from_ellipsoid(&e).unwrap().gram(),
            &SymMatrix::identity(2)
        );
        let e = Ellipsoid::new(layout(&[("x", 1)]), SymMatrix::diagonal(&[4.0]), "d").unwrap();
        assert_eq!(
            QuadSet::from_ellipsoid(&e).unwrap().gram(),
            &SymMatrix::diagonal(&[0.25])
        );
    }

    #[test]
    fn from_ellipsoid_round_trip_on_benchmark() {
        let p = benchmark_p();
        let e = Ellipsoid::new(layout(&[("xc", 2), ("xp", 2)]), p.clone(), "P").unwrap();
        let g = QuadSet::from_ellipsoid(&e).unwrap();
        let back = g.gram().inverse().unwrap();
        assert!(back.frobenius_distance(&p).unwrap() < 1e-10);
        assert!(contains(&e, &g, 1e-12).unwrap());
        let prod = p.as_matrix().matmul(g.gram().as_matrix()).unwrap();
        assert!(prod.sub(&Matrix::identity(4)).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn lift_and_release_examples() {
        let g = QuadSet::new(layout(&[("x", 2)]), SymMatrix::diagonal(&[1.0, 2.0]), "R").unwrap();
        let zero = g.lift_output(&Matrix::zeros(1, 2), "z").unwrap();
        assert_eq!(zero.gram().get(2, 2), 0.0);
        assert_eq!(zero.gram().get(0, 2), 0.0);

        let dup = g.lift_output(&Matrix::row(&[1.0, 0.0]), "d").unwrap();
        for j in 0..3 {
            assert_eq!(dup.gram().get(0, j), dup.gram().get(2, j));
        }
        assert_eq!(dup.release("d").unwrap(), g);

        let three = QuadSet::new(
            layout(&[("a", 1), ("b", 1), ("c", 1)]),
            SymMatrix::diagonal(&[1.0, 2.0, 3.0]),
            "D",
        )
        .unwrap();
        let r = three.release("b").unwrap();
        assert_eq!(r.gram(), &SymMatrix::diagonal(&[1.0, 3.0]));
        assert!(matches!(
            three.release("q"),
            Err(SetError::UnknownVariable(_))
        ));
    }

    #[test]
    fn containment_examples() {
        let l = layout(&[("x", 2)]);
        let e = Ellipsoid::new(l.clone(), SymMatrix::identity(2), "I").unwrap();
        let g1 = QuadSet::new(l.clone(), SymMatrix::identity(2), "I").unwrap();
        let g4 = QuadSet::new(l, SymMatrix::identity(2).scale(4.0), "4I").unwrap();
        assert!(contains(&e, &g1, 1e-12).unwrap());
        assert!(!contains(&e, &g4, 1e-12).unwrap());
    }

    #[test]
    fn gram_containment_chain() {
        let l = layout(&[("x", 3)]);
        let sets: Vec<QuadSet> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&k| QuadSet::new(l.clone(), SymMatrix::identity(3).scale(k), "s").unwrap())
            .collect();
        for s in &sets {
            assert!(gram_contains(s, s, 0.0).unwrap());
        }
        assert!(gram_contains(&sets[1], &sets[0], 0.0).unwrap());
        assert!(gram_contains(&sets[2], &sets[1], 0.0).unwrap());
        assert!(gram_contains(&sets[2], &sets[0], 0.0).unwrap());
        assert!(!gram_contains(&sets[0], &sets[2], 1e-9).unwrap());
    }

    #[test]
    fn member_examples() {
        let g = QuadSet::new(layout(&[("x", 1)]), SymMatrix::identity(1), "I").unwrap();
        assert!(g.member(&[0.0], 0.0));
        assert!(!g.member(&[2.0], 1e-9));
        let pinned =
            QuadSet::new(layout(&[("x", 2)]), SymMatrix::diagonal(&[1.0, 0.0]), "p").unwrap();
        assert!(pinned.member(&[0.0, 0.0], 0.0));
        assert!(pinned.member(&[0.5, 0.0], 1e-12));
        assert!(!pinned.member(&[0.0, 0.1], 1e-9));
    }

    #[test]
    fn embedded_initial_boundary_points_are_members() {
        // Q equals the xp block of P; boundary points of E_Q embedded as (0, xp).
        let q = benchmark_p().principal_submatrix(&[2, 3]).unwrap();
        let e = Ellipsoid::new(layout(&[("xc", 2), ("xp", 2)]), benchmark_p(), "P").unwrap();
        let g = QuadSet::from_ellipsoid(&e).unwrap();
        let l = q.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            // xp = L⁻ᵀ u with |u| = 1 gives xpᵀ Q xp = 1.
            let u = [t.cos(), t.sin()];
            let lt = l.transpose();
            let xp = lt.solve(&Matrix::column(&u)).unwrap();
            let x = [0.0, 0.0, xp.get(0, 0), xp.get(1, 0)];
            assert!(g.member(&x, 1e-6));
        }
    }

    #[test]
    fn membership_test_matches_member_on_edges() {
        let g = QuadSet::new(layout(&[("x", 2)]), SymMatrix::diagonal(&[4.0, 0.0]), "g").unwrap();
        let t = g.membership_test(1e-9);
        for x in [[2.0, 0.0], [1.0, 0.0], [2.1, 0.0], [0.0, 1e-3], [0.0, 0.0]] {
            assert_eq!(t.contains(&x), g.member(&x, 1e-9), "x = {x:?}");
        }
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    fn flat(n: usize) -> VarLayout {
        VarLayout::new(vec![("v".to_string(), n)]).unwrap()
    }

    fn gram_of(f: &Matrix) -> SymMatrix {
        SymMatrix::from_matrix(&f.matmul(&f.transpose()).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn affine_image_is_functorial(
            (f, m1, m2) in (1usize..=5, 1usize..=5, 1usize..=5, 1usize..=5)
                .prop_flat_map(|(n, a, b, k)| (arb_matrix(n, k), arb_matrix(a, n), arb_matrix(b, a)))
        ) {
            let n = f.rows();
            let g = QuadSet::new(flat(n), gram_of(&f), "g").unwrap();
            let step = g.affine_image(&m1, flat(m1.rows())).unwrap()
                .affine_image(&m2, flat(m2.rows())).unwrap();
            let m21 = m2.matmul(&m1).unwrap();
            let direct = g.affine_image(&m21, flat(m21.rows())).unwrap();
            prop_assert!(step.gram().frobenius_distance(direct.gram()).unwrap() <= 1e-10);
        }

        #[test]
        fn release_undoes_lift(
            (f, c) in (1usize..=5, 1usize..=3).prop_flat_map(|(n, k)| (arb_matrix(n, n), arb_matrix(k, n)))
        ) {
            let n = f.rows();
            let g = QuadSet::new(flat(n), gram_of(&f), "g").unwrap();
            let back = g.lift_output(&c, "new").unwrap().release("new").unwrap();
            prop_assert!(back.gram().frobenius_distance(g.gram()).unwrap() <= 1e-12);
            prop_assert_eq!(back.layout(), g.layout());
        }

        #[test]
        fn affine_image_is_sound_on_samples(
            (f, m, seed) in (1usize..=4, 1usize..=4)
                .prop_flat_map(|(n, k)| (arb_matrix(n, n), arb_matrix(k, n), any::<u64>()))
        ) {
            let n = f.rows();
            let g = QuadSet::new(flat(n), gram_of(&f), "g").unwrap();
            let img = g.affine_image(&m, flat(m.rows())).unwrap();
            let scale = 1.0 + img.gram().frobenius_norm();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                // x = F u with |u| ≤ 1 lies in G_{FFᵀ}.
                let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    u.iter_mut().for_each(|v| *v /= norm);
                }
                let x = f.mul_vec(&u).unwrap();
                prop_assert!(g.member(&x, 1e-9 * scale));
                let mx = m.mul_vec(&x).unwrap();
                prop_assert!(img.member(&mx, 1e-9 * scale));
            }
        }

        #[test]
        fn membership_test_agrees_with_member(
            (f, x) in (1usize..=4).prop_flat_map(|n| (arb_matrix(n, n), prop::collection::vec(-3.0f64..3.0, n)))
        ) {
            let n = f.rows();
            let g = QuadSet::new(flat(n), gram_of(&f), "g").unwrap();
            let tol = 1e-6;
            let fast = g.membership_test(tol).margin(&x);
            // Skip points within roundoff of the boundary.
            prop_assume!(fast.abs() > 1e-7);
            prop_assert_eq!(fast >= 0.0, g.member(&x, tol));
        }
    }
}
