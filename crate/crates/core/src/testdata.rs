//! Hand-typed benchmark matrices for unit tests, kept independent of the
//! bundled system file and its parser.

use crate::symmat::{Matrix, SymMatrix};

pub fn ac() -> Matrix {
    Matrix::from_rows(&[&[0.4990, -0.0500], &[0.0100, 1.0000]]).unwrap()
}

pub fn bc() -> Matrix {
    Matrix::column(&[1.0, 0.0])
}

pub fn cc() -> Matrix {
    Matrix::row(&[564.48, 0.0])
}

pub const DC: f64 = -1280.0;

pub fn ap() -> Matrix {
    Matrix::from_rows(&[&[1.0, 0.01], &[-0.01, 1.0]]).unwrap()
}

pub fn bp() -> Matrix {
    Matrix::column(&[0.00005, 0.01])
}

pub fn cp() -> Matrix {
    Matrix::row(&[1.0, 0.0])
}

pub fn p() -> SymMatrix {
    SymMatrix::from_rows(&[
        &[0.2205, 0.0188, -0.0750, 0.0177],
        &[0.0188, 0.4736, 0.0535, 0.0015],
        &[-0.0750, 0.0535, 0.1012, -0.0049],
        &[0.0177, 0.0015, -0.0049, 0.0015],
    ])
    .unwrap()
}

pub fn q() -> SymMatrix {
    SymMatrix::from_rows(&[&[0.1012, -0.0049], &[-0.0049, 0.0015]]).unwrap()
}

/// Closed-loop `A = [[Ac, 0], [Bp·Cc, Ap]]` written out entry by entry.
pub fn closed_a() -> Matrix {
    let (ac, ap, bp, cc) = (ac(), ap(), bp(), cc());
    let mut a = Matrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            a.set(i, j, ac.get(i, j));
            a.set(i + 2, j, bp.get(i, 0) * cc.get(0, j));
            a.set(i + 2, j + 2, ap.get(i, j));
        }
    }
    a
}

/// Closed-loop `B = [Bc; Bp·Dc]`.
pub fn closed_b() -> Matrix {
    Matrix::column(&[1.0, 0.0, 0.00005 * DC, 0.01 * DC])
}

/// Closed-loop `C = [0, Cp]`.
pub fn closed_c() -> Matrix {
    Matrix::row(&[0.0, 0.0, 1.0, 0.0])
}

/// A multiplier at which the benchmark matrix inequality holds.
pub const FEASIBLE_LAMBDA: f64 = 0.0614;
