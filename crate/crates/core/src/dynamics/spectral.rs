//! Stability conditions for D1 and the step-size bound for D3.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::control::{lipschitz_constant, weighted_sensitivity, ControlCurve, ReactiveLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct D1Condition {
    /// `σ_max(Ā X)` over the controlled buses.
    pub sigma: f64,
    /// `sigma < 1`.
    pub sufficient: bool,
    /// `max ᾱ · max_i Σ_j X_ij`, an upper bound on `sigma`.
    pub row_sum_bound: f64,
    pub row_sum_holds: bool,
}

pub fn check_d1_condition(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> D1Condition {
    let sigma = lipschitz_constant(curves, limits, x);
    let (_, alpha, block) = weighted_sensitivity(curves, limits, x);
    let a_max = alpha.iter().copied().fold(0.0, f64::max);
    let row_max = block.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let row_sum_bound = a_max * row_max;
    D1Condition {
        sigma,
        sufficient: sigma < 1.0,
        row_sum_bound,
        row_sum_holds: row_sum_bound < 1.0,
    }
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `λ_max(Ā X)` on the controlled buses, via the similar symmetric matrix `X^½ Ā X^½`.
pub fn lambda_max_weighted(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> f64 {
    let (idx, alpha, block) = weighted_sensitivity(curves, limits, x);
    if idx.is_empty() {
        return 0.0;
    }
    let s = sym_sqrt(&block);
    let m = &s * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(alpha)) * &s;
    let m = 0.5 * (&m + m.transpose());
    SymmetricEigen::new(m).eigenvalues.max()
}

/// D3 converges for `0 < γ₃ < 2 / (1 + λ_max(Ā X))`.
pub fn d3_stepsize_bound(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> f64 {
    2.0 / (1.0 + lambda_max_weighted(curves, limits, x))
}

/// Largest homogeneous slope `α` with `α σ_max(X_SS) < 1` over the controlled set `S`.
pub fn critical_homogeneous_alpha(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> f64 {
    let (idx, _, block) = weighted_sensitivity(curves, limits, x);
    if idx.is_empty() {
        return f64::INFINITY;
    }
    1.0 / block.singular_values().max()
}
