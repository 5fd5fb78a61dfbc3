//! The potential `F(q) = C(q) + ½ qᵀXq + qᵀΔṽ` minimized by every controller,
//! its subgradients and the D2 regret audit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControllerConfig, Trajectory};
use crate::control::ControlCurve;
use crate::network::SensitivityMatrices;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `Σ C_i(q_i)`.
    pub cost: f64,
    /// `½ qᵀXq`.
    pub quadratic: f64,
    /// `qᵀΔṽ` with `Δṽ = ṽ - v_nom`.
    pub linear: f64,
    pub total: f64,
}

fn delta_vtilde(mats: &SensitivityMatrices, cfg: &ControllerConfig) -> Vec<f64> {
    mats.vtilde
        .iter()
        .zip(&cfg.v_nom)
        .map(|(a, b)| a - b)
        .collect()
}

fn nonzero(q: &[f64]) -> Vec<usize> {
    (0..q.len()).filter(|&i| q[i] != 0.0).collect()
}

pub fn objective_f(
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    q: &[f64],
) -> ObjectiveBreakdown {
    let active = nonzero(q);
    let dv = delta_vtilde(mats, cfg);
    let mut cost = 0.0;
    let mut quadratic = 0.0;
    let mut linear = 0.0;
    for &i in &active {
        if let Some(c) = &cfg.curves[i] {
            cost += c.cost(q[i]);
        }
        linear += q[i] * dv[i];
        for &j in &active {
            quadratic += q[i] * mats.x[(i, j)] * q[j];
        }
    }
    quadratic *= 0.5;
    ObjectiveBreakdown {
        cost,
        quadratic,
        linear,
        total: cost + quadratic + linear,
    }
}

/// `F` rewritten as cost plus voltage deviation minus a `q`-independent constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffForm {
    pub cost: f64,
    /// `½ eᵀX⁻¹e` with `e = Xq + Δṽ`.
    pub deviation: f64,
    /// `-½ Δṽᵀ X⁻¹ Δṽ`.
    pub constant: f64,
}

impl TradeoffForm {
    pub fn total(&self) -> f64 {
        self.cost + self.deviation + self.constant
    }
}

pub fn tradeoff_form(
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    x_inv: &DMatrix<f64>,
    q: &[f64],
) -> TradeoffForm {
    let dv = DVector::from_vec(delta_vtilde(mats, cfg));
    let qv = DVector::from_column_slice(q);
    let e = &mats.x * &qv + &dv;
    let cost = q
        .iter()
        .zip(&cfg.curves)
        .filter_map(|(&qi, c)| c.as_ref().map(|c| if qi == 0.0 { 0.0 } else { c.cost(qi) }))
        .sum();
    TradeoffForm {
        cost,
        deviation: 0.5 * e.dot(&(x_inv * &e)),
        constant: -0.5 * dv.dot(&(x_inv * &dv)),
    }
}

/// Subgradient of `C_i(q) + (Xq + Δṽ)_i` used by D2, given the local error `e`.
///
/// Off the origin the cost is differentiable with `C'(q) = -f⁻¹(q)`. At
/// `q = 0` the selection depends on where `e` sits relative to the deadband
/// `[lo, hi]`: inside, `e` itself; above, `e - hi`; below, `e - lo`.
pub fn d2_subgradient(curve: &ControlCurve, q: f64, e: f64) -> f64 {
    if q != 0.0 {
        return -curve.inverse(q) + e;
    }
    let (lo, hi) = curve.deadband();
    if e > hi {
        e - hi
    } else if e < lo {
        e - lo
    } else {
        e
    }
}

fn voltage_error(mats: &SensitivityMatrices, cfg: &ControllerConfig, q: &[f64]) -> Vec<f64> {
    let active = nonzero(q);
    (0..q.len())
        .map(|i| {
            let xq: f64 = active.iter().map(|&j| mats.x[(i, j)] * q[j]).sum();
            xq + mats.vtilde[i] - cfg.v_nom[i]
        })
        .collect()
}

/// The D2 subgradient of `F` at `q`; zero on buses without a curve or with a
/// singleton box, since those coordinates never move.
pub fn subgradient(mats: &SensitivityMatrices, cfg: &ControllerConfig, q: &[f64]) -> Vec<f64> {
    let e = voltage_error(mats, cfg, q);
    (0..q.len())
        .map(|i| match &cfg.curves[i] {
            Some(c) if !cfg.limits[i].is_singleton() => d2_subgradient(c, q[i], e[i]),
            _ => 0.0,
        })
        .collect()
}

/// Worst first-order change of `F` from `q` towards any corner of `Ω`,
/// `min_c gᵀ(c - q)`, with the most favourable subgradient `g ∈ ∂F(q)`.
///
/// A non-negative value (up to round-off) certifies `q` as the minimizer.
/// The problem is separable, so each coordinate picks its own corner.
pub fn variational_gap(mats: &SensitivityMatrices, cfg: &ControllerConfig, q: &[f64]) -> f64 {
    let e = voltage_error(mats, cfg, q);
    let mut gap = 0.0;
    for i in 0..q.len() {
        let l = cfg.limits[i];
        if l.is_singleton() {
            continue;
        }
        let g = match &cfg.curves[i] {
            None => e[i],
            Some(c) if q[i] != 0.0 => -c.inverse(q[i]) + e[i],
            Some(c) => {
                let (a, b) = c.cost_subdifferential_at_zero();
                0.0f64.clamp(a + e[i], b + e[i])
            }
        };
        gap += (g * (l.min - q[i])).min(g * (l.max - q[i]));
    }
    gap
}

/// Empirical bound `G` on `‖∂F‖₂` over `Ω`: the maximum over the box-face
/// centres of the controlled coordinates and `samples` uniform draws, times 1.1.
pub fn gradient_bound(
    mats: &SensitivityMatrices,
    cfg: &ControllerConfig,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = cfg.n();
    let idx = crate::control::controlled_buses(&cfg.curves, &cfg.limits);
    let centre: Vec<f64> = cfg.limits.iter().map(|l| 0.5 * (l.min + l.max)).collect();
    let norm = |q: &[f64]| {
        subgradient(mats, cfg, q)
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    };
    let mut g = 0.0f64;
    for &i in &idx {
        for side in [cfg.limits[i].min, cfg.limits[i].max] {
            let mut q = centre.clone();
            q[i] = side;
            g = g.max(norm(&q));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = centre.clone();
    for _ in 0..samples {
        for &i in &idx {
            q[i] = rng.random_range(cfg.limits[i].min..=cfg.limits[i].max);
        }
        g = g.max(norm(&q));
    }
    debug_assert_eq!(q.len(), n);
    1.1 * g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretBound {
    /// `‖q(1) - q*‖² / t + γ₂² G²`.
    Stated,
    /// `‖q(1) - q*‖² / (2γ₂t) + γ₂ G² / 2`, the textbook projected-subgradient bound.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretAudit {
    pub bound: RegretBound,
    pub holds: bool,
    /// Horizon `t` (1-based) of the first violation.
    pub first_violation: Option<usize>,
    pub violations: usize,
    /// `min_t (bound_t - avg_regret_t)`; negative when the bound fails.
    pub worst_margin: f64,
    pub checked: usize,
}

/// Check `(1/t) Σ_{τ=1..t} (F(q(τ)) - F*) <= bound(t)` at every horizon of the trajectory.
pub fn d2_regret_bound_check(
    trajectory: &Trajectory,
    q_star: &[f64],
    f_star: f64,
    gamma2: f64,
    g: f64,
    bound: RegretBound,
) -> RegretAudit {
    let q1 = &trajectory.initial().q;
    let dist2: f64 = q1.iter().zip(q_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut running = 0.0;
    let mut first_violation = None;
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    for (k, f) in trajectory.objective.iter().enumerate() {
        let t = (k + 1) as f64;
        running += f - f_star;
        let rhs = match bound {
            RegretBound::Stated => dist2 / t + gamma2 * gamma2 * g * g,
            RegretBound::Standard => dist2 / (2.0 * gamma2 * t) + 0.5 * gamma2 * g * g,
        };
        let margin = rhs - running / t;
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            violations += 1;
            first_violation.get_or_insert(k + 1);
        }
    }
    RegretAudit {
        bound,
        holds: violations == 0,
        first_violation,
        violations,
        worst_margin,
        checked: trajectory.objective.len(),
    }
}
