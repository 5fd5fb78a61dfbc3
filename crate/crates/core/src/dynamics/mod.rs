//! Closed-loop Volt/VAR dynamics.
//!
//! * D1, non-incremental: `q(t+1) = [f(v(t) - v_nom)]_Ω`.
//! * D2, subgradient: `q(t+1) = [q(t) - γ₂ ∂F(q(t))]_Ω`.
//! * D3, pseudo-gradient: `q(t+1) = [(1 - γ₃) q(t) + γ₃ f(v(t) - v_nom)]_Ω`.
//!
//! All three share one equilibrium: the minimizer of `F` over `Ω`
//! (see [`objective`] and [`equilibrium`]).

pub mod equilibrium;
pub mod objective;
pub mod spectral;

use serde::{Deserialize, Serialize};

use crate::control::{ControlCurve, ReactiveLimits};
use crate::error::{Error, Result};
use crate::network::{Feeder, SensitivityMatrices};
use crate::powerflow::Plant;

pub use equilibrium::{fixed_point_residual, solve_equilibrium, EquilibriumReport};
pub use objective::{
    d2_regret_bound_check, d2_subgradient, gradient_bound, objective_f, subgradient, tradeoff_form,
    variational_gap, ObjectiveBreakdown, RegretAudit, RegretBound, TradeoffForm,
};
pub use spectral::{
    check_d1_condition, critical_homogeneous_alpha, d3_stepsize_bound, lambda_max_weighted,
    D1Condition,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Controller {
    D1,
    D2 { gamma2: f64 },
    D3 { gamma3: f64 },
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::D1 => "d1",
            Controller::D2 { .. } => "d2",
            Controller::D3 { .. } => "d3",
        }
    }
}

/// Controller choice plus per-bus curves, feasible sets and nominal voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub controller: Controller,
    pub curves: Vec<Option<ControlCurve>>,
    pub limits: Vec<ReactiveLimits>,
    pub v_nom: Vec<f64>,
}

impl ControllerConfig {
    pub fn new(
        controller: Controller,
        curves: Vec<Option<ControlCurve>>,
        limits: Vec<ReactiveLimits>,
        v_nom: Vec<f64>,
    ) -> Result<Self> {
        let n = curves.len();
        for len in [limits.len(), v_nom.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let step_ok = |g: f64| g.is_finite() && g > 0.0;
        match controller {
            Controller::D2 { gamma2 } if !step_ok(gamma2) => {
                return Err(Error::InvalidParameter(format!(
                    "gamma2 must be positive, got {gamma2}"
                )))
            }
            Controller::D3 { gamma3 } if !step_ok(gamma3) => {
                return Err(Error::InvalidParameter(format!(
                    "gamma3 must be positive, got {gamma3}"
                )))
            }
            _ => {}
        }
        if limits.iter().any(|l| !(l.min <= l.max)) {
            return Err(Error::InvalidParameter(
                "reactive limits with min > max".into(),
            ));
        }
        Ok(ControllerConfig {
            controller,
            curves,
            limits,
            v_nom,
        })
    }

    /// Curves and limits from the feeder's inverters; other buses are frozen at `q = 0`.
    pub fn from_feeder(feeder: &Feeder, controller: Controller) -> Result<Self> {
        let mut curves = Vec::with_capacity(feeder.n());
        let mut limits = Vec::with_capacity(feeder.n());
        for k in 0..feeder.n() {
            match feeder.inverter_at(k) {
                Some(site) => {
                    let curve = site.curve.clone().ok_or(Error::MissingCurve(site.bus))?;
                    curves.push(Some(curve));
                    limits.push(site.inverter.reactive_limits());
                }
                None => {
                    curves.push(None);
                    limits.push(ReactiveLimits::singleton(0.0));
                }
            }
        }
        ControllerConfig::new(controller, curves, limits, feeder.v_nom())
    }

    pub fn with_controller(&self, controller: Controller) -> Result<Self> {
        ControllerConfig::new(
            controller,
            self.curves.clone(),
            self.limits.clone(),
            self.v_nom.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    /// Unprojected control output `f_i(v_i - v_nom,i)`; zero without a curve.
    #[inline]
    fn target(&self, i: usize, v: f64) -> f64 {
        self.curves[i]
            .as_ref()
            .map_or(0.0, |c| c.eval(v - self.v_nom[i]))
    }

    pub fn project(&self, q: &[f64]) -> Vec<f64> {
        crate::control::project_box(q, &self.limits)
    }
}

pub fn step_d1(cfg: &ControllerConfig, q: &[f64], v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(q.len(), v.len());
    (0..q.len())
        .map(|i| cfg.limits[i].clamp(cfg.target(i, v[i])))
        .collect()
}

pub fn step_d2(cfg: &ControllerConfig, q: &[f64], v: &[f64], gamma2: f64) -> Vec<f64> {
    (0..q.len())
        .map(|i| {
            let g = cfg.curves[i]
                .as_ref()
                .map_or(0.0, |c| d2_subgradient(c, q[i], v[i] - cfg.v_nom[i]));
            cfg.limits[i].clamp(q[i] - gamma2 * g)
        })
        .collect()
}

pub fn step_d3(cfg: &ControllerConfig, q: &[f64], v: &[f64], gamma3: f64) -> Vec<f64> {
    (0..q.len())
        .map(|i| cfg.limits[i].clamp((1.0 - gamma3) * q[i] + gamma3 * cfg.target(i, v[i])))
        .collect()
}

/// One step of whichever controller `cfg` selects.
pub fn step(cfg: &ControllerConfig, q: &[f64], v: &[f64]) -> Vec<f64> {
    match cfg.controller {
        Controller::D1 => step_d1(cfg, q, v),
        Controller::D2 { gamma2 } => step_d2(cfg, q, v, gamma2),
        Controller::D3 { gamma3 } => step_d3(cfg, q, v, gamma3),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Converged once `‖q(t+1) - q(t)‖_∞` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Oscillation detector window length.
    pub window: usize,
    pub stop_on_oscillation: bool,
    /// Keep every `record_every`-th state (residuals and `F` are kept for every step).
    pub record_every: usize,
    /// Average the iterates from this step onward into `tail_mean_q` / `tail_mean_v`.
    pub average_from: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tol: 1e-6,
            max_iter: 10_000,
            window: 50,
            stop_on_oscillation: true,
            record_every: 1,
            average_from: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "step", rename_all = "snake_case")]
pub enum Verdict {
    /// Step at which the residual fell below tolerance.
    Converged(usize),
    /// Step at which the detector fired.
    Oscillating(usize),
    MaxIterations,
}

impl Verdict {
    pub fn is_converged(&self) -> bool {
        matches!(self, Verdict::Converged(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged(_) => "converged",
            Verdict::Oscillating(_) => "oscillating",
            Verdict::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Recorded states; always includes `t = 0` and the final state.
    pub states: Vec<State>,
    /// `residuals[t] = ‖q(t+1) - q(t)‖_∞`.
    pub residuals: Vec<f64>,
    /// `objective[t] = F(q(t))` on the linear model.
    pub objective: Vec<f64>,
    pub verdict: Verdict,
    pub tail_mean_q: Option<Vec<f64>>,
    pub tail_mean_v: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.residuals.len()
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }
}

/// Two-window test: the best residual of the latest window is no better than
/// the one before, and neither reached tolerance.
fn stalled(residuals: &[f64], window: usize, tol: f64) -> bool {
    let len = residuals.len();
    if window == 0 || len < 2 * window || !len.is_multiple_of(window) {
        return false;
    }
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let prev = min(&residuals[len - 2 * window..len - window]);
    let last = min(&residuals[len - window..]);
    last >= prev && prev >= tol && last >= tol
}

/// Iterate the configured controller against `plant` from `q0` (projected onto `Ω` first).
pub fn simulate(
    plant: &dyn Plant,
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    q0: &[f64],
    opts: &SimOptions,
) -> Result<Trajectory> {
    if q0.len() != cfg.n() {
        return Err(Error::DimensionMismatch {
            expected: cfg.n(),
            got: q0.len(),
        });
    }
    let stride = opts.record_every.max(1);
    let mut q = cfg.project(q0);
    let mut states = Vec::new();
    let mut residuals = Vec::new();
    let mut objective = Vec::new();
    let n = cfg.n();
    let (mut sum_q, mut sum_v, mut averaged) = (vec![0.0; n], vec![0.0; n], 0usize);
    let mut converged = None;
    let mut oscillating = None;

    let mut v = plant.voltages(&q)?;
    for t in 0..opts.max_iter {
        let next = step(cfg, &q, &v);
        let res = next
            .iter()
            .zip(&q)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        objective.push(objective::objective_f(mats, cfg, &q).total);
        residuals.push(res);
        if t % stride == 0 {
            states.push(State {
                t,
                q: q.clone(),
                v: v.clone(),
            });
        }
        if opts.average_from.is_some_and(|t0| t >= t0) {
            for i in 0..n {
                sum_q[i] += q[i];
                sum_v[i] += v[i];
            }
            averaged += 1;
        }
        q = next;
        v = plant.voltages(&q)?;
        if res < opts.tol {
            converged = Some(t + 1);
            break;
        }
        if oscillating.is_none() && stalled(&residuals, opts.window, opts.tol) {
            oscillating = Some(t + 1);
            if opts.stop_on_oscillation {
                break;
            }
        }
    }

    let t_final = residuals.len();
    if states.last().is_none_or(|s| s.t != t_final) {
        states.push(State { t: t_final, q, v });
    }
    let verdict = match (converged, oscillating) {
        (Some(t), _) => Verdict::Converged(t),
        (None, Some(t)) => Verdict::Oscillating(t),
        (None, None) => Verdict::MaxIterations,
    };
    let mean = |sum: Vec<f64>| {
        (averaged > 0).then(|| sum.into_iter().map(|s| s / averaged as f64).collect())
    };
    let tail_mean_q = mean(sum_q);
    let tail_mean_v = mean(sum_v);
    Ok(Trajectory {
        states,
        residuals,
        objective,
        verdict,
        tail_mean_q,
        tail_mean_v,
    })
}
