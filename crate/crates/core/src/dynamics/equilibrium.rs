//! The common equilibrium `q*`, found by running D3 on the linear model with
//! a step size safely inside its convergence bound.

use serde::{Deserialize, Serialize};

use super::objective::{objective_f, variational_gap, ObjectiveBreakdown};
use super::spectral::d3_stepsize_bound;
use super::{step_d3, ControllerConfig};
use crate::error::{Error, Result};
use crate::network::SensitivityMatrices;
use crate::powerflow::{LinearPlant, Plant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub objective: ObjectiveBreakdown,
    /// `‖q - [f(v(q) - v_nom)]_Ω‖_∞`.
    pub fixed_point_residual: f64,
    /// Optimality certificate; non-negative up to round-off at the minimizer.
    pub variational_gap: f64,
    pub iterations: usize,
    pub gamma3: f64,
}

pub fn fixed_point_residual(
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    q: &[f64],
) -> Result<f64> {
    let v = LinearPlant::new(mats).voltages(q)?;
    let target = super::step_d1(cfg, q, &v);
    Ok(target
        .iter()
        .zip(q)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Solve for `q*` to fixed-point residual `tol`.
pub fn solve_equilibrium(
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumReport> {
    let gamma3 = 0.9 * d3_stepsize_bound(&cfg.curves, &cfg.limits, &mats.x);
    let plant = LinearPlant::new(mats);
    let mut q = cfg.project(&vec![0.0; cfg.n()]);
    for it in 0..=max_iter {
        let v = plant.voltages(&q)?;
        let target = super::step_d1(cfg, &q, &v);
        let res = target
            .iter()
            .zip(&q)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if res < tol {
            return Ok(EquilibriumReport {
                objective: objective_f(mats, cfg, &q),
                variational_gap: variational_gap(mats, cfg, &q),
                fixed_point_residual: res,
                iterations: it,
                gamma3,
                q,
                v,
            });
        }
        q = step_d3(cfg, &q, &v, gamma3);
    }
    Err(Error::NoConvergence(max_iter))
}

#[cfg(test)]
mod tests {
    use super::super::tests::scalar_case;
    use super::super::Controller;
    use super::*;

    #[test]
    fn scalar_equilibrium() {
        let (m, cfg) = scalar_case(1.05, 1.0, 0.04, Controller::D1);
        let eq = solve_equilibrium(&m, &cfg, 1e-13, 10_000).unwrap();
        assert!((eq.q[0] + 0.02).abs() < 1e-12);
        assert!((eq.v[0] - 1.04).abs() < 1e-12);
        assert!(eq.variational_gap > -1e-12);
        assert!(fixed_point_residual(&m, &cfg, &eq.q).unwrap() < 1e-13);
    }

    #[test]
    fn deadband_equilibrium_is_zero() {
        let (m, cfg) = scalar_case(1.015, 1.0, 0.04, Controller::D1);
        let eq = solve_equilibrium(&m, &cfg, 1e-13, 100).unwrap();
        assert_eq!(eq.q, vec![0.0]);
        assert_eq!(eq.iterations, 0);
    }
}
