//! Volt/VAR control curves, inverter capability sets and box projection.
//!
//! A control curve maps a local voltage error `e = v - v_nom` (p.u.) to a
//! reactive power command `u = f(e)` (p.u.). Every curve is non-increasing,
//! zero on a closed deadband `[lo, hi]` containing the origin, strictly
//! decreasing outside it, and has a bounded slope `alpha_bar`.
//!
//! Two shapes are supported:
//!
//! * [`ControlCurve::Droop`]: the piecewise-linear droop
//!   `f(e) = -alpha [e - d/2]^+ + alpha [-e - d/2]^+` with closed-form
//!   inverse and cost.
//! * [`ControlCurve::Table`]: a monotone piecewise-linear table, extrapolated
//!   linearly beyond its end points. Its inverse is computed by bisection, so
//!   it exercises the same code path a general nonlinear curve would.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::FeederError;

/// Absolute tolerance on the voltage error returned by bisection inverses.
pub const INVERSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControlCurve {
    /// `deadband` is the full width `d`; the curve is zero on `[-d/2, d/2]`.
    Droop {
        alpha: f64,
        deadband: f64,
    },
    Table(TableCurve),
}

impl ControlCurve {
    pub fn droop(alpha: f64, deadband: f64) -> Result<Self, FeederError> {
        let curve = ControlCurve::Droop { alpha, deadband };
        curve.validate()?;
        Ok(curve)
    }

    pub fn table(points: Vec<[f64; 2]>) -> Result<Self, FeederError> {
        Ok(ControlCurve::Table(TableCurve::new(points)?))
    }

    pub fn validate(&self) -> Result<(), FeederError> {
        match self {
            ControlCurve::Droop { alpha, deadband } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(FeederError::InvalidCurve(format!(
                        "droop slope must be positive, got {alpha}"
                    )));
                }
                if !(deadband.is_finite() && *deadband >= 0.0) {
                    return Err(FeederError::InvalidCurve(format!(
                        "droop deadband must be non-negative, got {deadband}"
                    )));
                }
                Ok(())
            }
            // Tables are validated at construction.
            ControlCurve::Table(_) => Ok(()),
        }
    }

    /// `u = f(e)`.
    pub fn eval(&self, e: f64) -> f64 {
        match self {
            ControlCurve::Droop { alpha, deadband } => {
                let half = deadband / 2.0;
                -alpha * (e - half).max(0.0) + alpha * (-e - half).max(0.0)
            }
            ControlCurve::Table(t) => t.eval(e),
        }
    }

    /// Generalized inverse with `f^{-1}(0) = 0`.
    pub fn inverse(&self, q: f64) -> f64 {
        if q == 0.0 {
            return 0.0;
        }
        match self {
            ControlCurve::Droop { alpha, deadband } => {
                let half = deadband / 2.0;
                if q < 0.0 {
                    -q / alpha + half
                } else {
                    -q / alpha - half
                }
            }
            ControlCurve::Table(t) => bisect_inverse(|e| t.eval(e), t.lo, t.hi, q),
        }
    }

    /// Reactive provisioning cost `C(q) = -∫_0^q f^{-1}(s) ds`.
    pub fn cost(&self, q: f64) -> f64 {
        match self {
            ControlCurve::Droop { alpha, deadband } => {
                q * q / (2.0 * alpha) + deadband / 2.0 * q.abs()
            }
            ControlCurve::Table(t) => {
                if q == 0.0 {
                    return 0.0;
                }
                // Integration by parts: ∫_0^q g = q g(q) + ∫_{g(q)}^{edge} f.
                let g = self.inverse(q);
                let edge = if q > 0.0 { t.lo } else { t.hi };
                -q * g - t.integral(g, edge)
            }
        }
    }

    /// Bounds `(lo, hi)` of the deadband in voltage error.
    pub fn deadband(&self) -> (f64, f64) {
        match self {
            ControlCurve::Droop { deadband, .. } => (-deadband / 2.0, deadband / 2.0),
            ControlCurve::Table(t) => (t.lo, t.hi),
        }
    }

    /// Upper bound on `|f'|`.
    pub fn alpha_bar(&self) -> f64 {
        match self {
            ControlCurve::Droop { alpha, .. } => *alpha,
            ControlCurve::Table(t) => t.alpha_bar,
        }
    }

    /// Subdifferential of the cost at `q = 0`, i.e. `[-hi, -lo]`.
    pub fn cost_subdifferential_at_zero(&self) -> (f64, f64) {
        let (lo, hi) = self.deadband();
        (-hi, -lo)
    }
}

/// Solve `f(e) = q` for a non-increasing `f` that is zero on `[lo, hi]`.
fn bisect_inverse(f: impl Fn(f64) -> f64, lo: f64, hi: f64, q: f64) -> f64 {
    // q > 0 lives left of the deadband, q < 0 right of it.
    let (mut a, mut b) = if q > 0.0 {
        let mut span = 1.0;
        while f(lo - span) < q {
            span *= 2.0;
        }
        (lo - span, lo)
    } else {
        let mut span = 1.0;
        while f(hi + span) > q {
            span *= 2.0;
        }
        (hi, hi + span)
    };
    for _ in 0..200 {
        if b - a <= INVERSE_TOL {
            break;
        }
        let mid = 0.5 * (a + b);
        if f(mid) > q {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TablePoints {
    points: Vec<[f64; 2]>,
}

/// Monotone piecewise-linear curve through `(v_err, q)` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TablePoints", into = "TablePoints")]
pub struct TableCurve {
    points: Vec<[f64; 2]>,
    lo: f64,
    hi: f64,
    alpha_bar: f64,
}

impl TryFrom<TablePoints> for TableCurve {
    type Error = FeederError;

    fn try_from(raw: TablePoints) -> Result<Self, Self::Error> {
        TableCurve::new(raw.points)
    }
}

impl From<TableCurve> for TablePoints {
    fn from(t: TableCurve) -> Self {
        TablePoints { points: t.points }
    }
}

impl TableCurve {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, FeederError> {
        let bad = |m: String| Err(FeederError::InvalidCurve(m));
        if points.len() < 2 {
            return bad("table needs at least two points".into());
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return bad("table contains a non-finite value".into());
        }
        let mut alpha_bar: f64 = 0.0;
        for w in points.windows(2) {
            let ([e0, q0], [e1, q1]) = (w[0], w[1]);
            if e1 <= e0 {
                return bad(format!(
                    "voltage errors must increase strictly ({e0} then {e1})"
                ));
            }
            if q1 > q0 {
                return bad(format!("curve increases between {e0} and {e1}"));
            }
            if q1 == q0 && q0 != 0.0 {
                return bad(format!("flat segment away from zero between {e0} and {e1}"));
            }
            alpha_bar = alpha_bar.max((q0 - q1) / (e1 - e0));
        }
        let first = points[0][1];
        let last = points[points.len() - 1][1];
        if !(first > 0.0 && last < 0.0) {
            return bad(
                "table must start with positive and end with negative reactive power".into(),
            );
        }

        // Deadband: the zero set of a non-increasing piecewise-linear map.
        let mut lo = f64::NAN;
        let mut hi = f64::NAN;
        for w in points.windows(2) {
            let ([e0, q0], [e1, q1]) = (w[0], w[1]);
            if lo.is_nan() && q0 > 0.0 && q1 <= 0.0 {
                lo = e0 + q0 / (q0 - q1) * (e1 - e0);
            }
            if q0 >= 0.0 && q1 < 0.0 {
                hi = e1 - q1 / (q1 - q0) * (e1 - e0);
            }
        }
        if !(lo <= 0.0 && hi >= 0.0) {
            return bad(format!("deadband [{lo}, {hi}] does not contain zero error"));
        }
        Ok(TableCurve {
            points,
            lo,
            hi,
            alpha_bar,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn segment_slope(&self, k: usize) -> f64 {
        let [e0, q0] = self.points[k];
        let [e1, q1] = self.points[k + 1];
        (q1 - q0) / (e1 - e0)
    }

    fn eval(&self, e: f64) -> f64 {
        let pts = &self.points;
        let last = pts.len() - 1;
        if e <= pts[0][0] {
            return pts[0][1] + self.segment_slope(0) * (e - pts[0][0]);
        }
        if e >= pts[last][0] {
            return pts[last][1] + self.segment_slope(last - 1) * (e - pts[last][0]);
        }
        let k = pts.partition_point(|p| p[0] <= e) - 1;
        pts[k][1] + self.segment_slope(k) * (e - pts[k][0])
    }

    /// Exact `∫_a^b f(e) de` (f is piecewise linear).
    fn integral(&self, a: f64, b: f64) -> f64 {
        if a > b {
            return -self.integral(b, a);
        }
        let mut cuts = vec![a];
        cuts.extend(self.points.iter().map(|p| p[0]).filter(|&e| e > a && e < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| 0.5 * (self.eval(w[0]) + self.eval(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

/// Inverter apparent power `s`, real output `p` and power-factor angle
/// limit `rho`, all in p.u. / radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inverter {
    pub s: f64,
    pub p: f64,
    pub rho: f64,
}

impl Inverter {
    pub fn new(s: f64, p: f64, rho: f64) -> Result<Self, String> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(format!("capacity must be non-negative, got {s}"));
        }
        if !(p >= 0.0 && p <= s) {
            return Err(format!("real output {p} outside [0, {s}]"));
        }
        if !(0.0..=FRAC_PI_2).contains(&rho) {
            return Err(format!("power-factor angle {rho} outside [0, pi/2]"));
        }
        Ok(Inverter { s, p, rho })
    }

    pub fn reactive_limits(&self) -> ReactiveLimits {
        let capacity = (self.s * self.s - self.p * self.p).max(0.0).sqrt();
        // tan(pi/2) is finite in floating point; treat the limit angle as unbounded.
        let pf = if self.rho >= FRAC_PI_2 {
            f64::INFINITY
        } else {
            self.p * self.rho.tan()
        };
        let q_max = pf.min(capacity);
        ReactiveLimits {
            min: -q_max,
            max: q_max,
        }
    }
}

/// Closed interval `Ω_i = [min, max]` of feasible reactive injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactiveLimits {
    pub min: f64,
    pub max: f64,
}

impl ReactiveLimits {
    pub fn singleton(q: f64) -> Self {
        ReactiveLimits { min: q, max: q }
    }

    pub fn is_singleton(&self) -> bool {
        self.min == self.max
    }

    #[inline]
    pub fn clamp(&self, q: f64) -> f64 {
        q.max(self.min).min(self.max)
    }
}

/// Limits for a bus: the inverter set, or the singleton `{fixed_q}` without one.
pub fn reactive_limits(inverter: Option<&Inverter>, fixed_q: f64) -> ReactiveLimits {
    match inverter {
        Some(inv) => inv.reactive_limits(),
        None => ReactiveLimits::singleton(fixed_q),
    }
}

/// Componentwise projection onto the box `Ω`.
pub fn project_box(q: &[f64], limits: &[ReactiveLimits]) -> Vec<f64> {
    assert_eq!(q.len(), limits.len(), "projection dimension mismatch");
    q.iter().zip(limits).map(|(&qi, l)| l.clamp(qi)).collect()
}

/// Buses that actually respond to voltage: a curve and a non-degenerate box.
pub fn controlled_buses(curves: &[Option<ControlCurve>], limits: &[ReactiveLimits]) -> Vec<usize> {
    curves
        .iter()
        .zip(limits)
        .enumerate()
        .filter(|(_, (c, l))| c.is_some() && !l.is_singleton())
        .map(|(i, _)| i)
        .collect()
}

/// `diag(alpha_bar) X` restricted to the controlled buses.
///
/// Buses with singleton `Ω_i` never move, so their rows and columns drop out
/// of every Lipschitz and stability estimate.
pub fn weighted_sensitivity(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> (Vec<usize>, Vec<f64>, DMatrix<f64>) {
    let idx = controlled_buses(curves, limits);
    let alpha: Vec<f64> = idx
        .iter()
        .map(|&i| curves[i].as_ref().map_or(0.0, ControlCurve::alpha_bar))
        .collect();
    let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| x[(idx[r], idx[c])]);
    (idx, alpha, block)
}

/// `M = σ_max(Ā X)`.
pub fn lipschitz_constant(
    curves: &[Option<ControlCurve>],
    limits: &[ReactiveLimits],
    x: &DMatrix<f64>,
) -> f64 {
    let (idx, alpha, block) = weighted_sensitivity(curves, limits, x);
    if idx.is_empty() {
        return 0.0;
    }
    let weighted = DMatrix::from_fn(idx.len(), idx.len(), |r, c| alpha[r] * block[(r, c)]);
    weighted.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn droop() -> ControlCurve {
        ControlCurve::droop(10.0, 0.04).unwrap()
    }

    #[test]
    fn droop_eval_examples() {
        let f = droop();
        assert_eq!(f.eval(0.01), 0.0);
        assert!((f.eval(0.05) + 0.3).abs() < 1e-12);
        assert!((f.eval(-0.05) - 0.3).abs() < 1e-12);
        // both branches agree at the deadband edge
        assert_eq!(f.eval(0.02), 0.0);
        assert_eq!(f.eval(-0.02), 0.0);
    }

    #[test]
    fn droop_inverse_examples() {
        let f = droop();
        assert_eq!(f.inverse(0.0), 0.0);
        assert!((f.inverse(-0.3) - 0.05).abs() < 1e-12);
        for e in [0.03, 0.1, -0.025, -0.4] {
            assert!((f.inverse(f.eval(e)) - e).abs() < 1e-12);
        }
        // discontinuity at q = 0
        assert!(f.inverse(1e-12) <= -0.02);
        assert!(f.inverse(-1e-12) >= 0.02);
    }

    #[test]
    fn droop_cost_examples() {
        let f = droop();
        assert_eq!(f.cost(0.0), 0.0);
        assert!((f.cost(0.5) - 0.0225).abs() < 1e-12);
    }

    /// Composite Simpson on each smooth piece of `-f^{-1}`.
    fn quadrature_cost(f: &ControlCurve, q: f64) -> f64 {
        let n = 2000;
        let h = q / n as f64;
        // open at 0: the inverse jumps there, so nudge the first node
        let g = |s: f64| {
            if s == 0.0 {
                -f.inverse(q.signum() * 1e-300)
            } else {
                -f.inverse(s)
            }
        };
        let mut acc = g(0.0) + g(q);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn cost_matches_quadrature_for_random_droops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let alpha = rng.random_range(0.5..50.0);
            let d = rng.random_range(0.0..0.1);
            let q = rng.random_range(-2.0..2.0);
            let f = ControlCurve::droop(alpha, d).unwrap();
            let exact = f.cost(q);
            let num = quadrature_cost(&f, q);
            assert!(
                (exact - num).abs() < 1e-9,
                "alpha={alpha} d={d} q={q}: {exact} vs {num}"
            );
        }
    }

    fn sample_table() -> ControlCurve {
        ControlCurve::table(vec![
            [-0.10, 0.8],
            [-0.05, 0.4],
            [-0.01, 0.0],
            [0.02, 0.0],
            [0.06, -0.2],
            [0.10, -0.7],
        ])
        .unwrap()
    }

    #[test]
    fn table_deadband_slope_and_inverse() {
        let f = sample_table();
        let (lo, hi) = f.deadband();
        assert!((lo + 0.01).abs() < 1e-15 && (hi - 0.02).abs() < 1e-15);
        assert!((f.alpha_bar() - 12.5).abs() < 1e-12);
        assert!((f.eval(-0.03) - 0.2).abs() < 1e-12);
        // extrapolation continues the end slopes
        assert!((f.eval(0.14) + 1.2).abs() < 1e-12);
        // piecewise-linear inverse computed by hand
        assert!((f.inverse(0.2) + 0.03).abs() < 1e-11);
        assert!((f.inverse(-0.45) - 0.08).abs() < 1e-11);
        assert!((f.inverse(1.2) + 0.15).abs() < 1e-11);
    }

    #[test]
    fn table_cost_matches_quadrature() {
        let f = sample_table();
        for q in [-1.0, -0.45, -0.1, 0.05, 0.2, 0.9] {
            let c = f.cost(q);
            let num = quadrature_cost(&f, q);
            assert!((c - num).abs() < 1e-8, "q={q}: {c} vs {num}");
        }
    }

    #[test]
    fn droop_as_table_agrees_with_closed_form() {
        let t =
            ControlCurve::table(vec![[-1.0, 9.8], [-0.02, 0.0], [0.02, 0.0], [1.0, -9.8]]).unwrap();
        let d = droop();
        for q in [-3.0, -0.2, 0.1, 2.5] {
            assert!((t.inverse(q) - d.inverse(q)).abs() < 1e-11);
            assert!((t.cost(q) - d.cost(q)).abs() < 1e-10);
        }
    }

    #[test]
    fn table_rejects_bad_shapes() {
        assert!(ControlCurve::table(vec![[0.0, 1.0]]).is_err());
        assert!(ControlCurve::table(vec![[-0.1, 0.5], [0.0, 0.6], [0.1, -0.5]]).is_err());
        assert!(ControlCurve::table(vec![[-0.1, 0.5], [0.0, 0.5], [0.1, -0.5]]).is_err());
        assert!(ControlCurve::table(vec![[0.1, 0.5], [0.0, 0.0], [0.2, -0.5]]).is_err());
        // zero crossing away from zero error
        assert!(ControlCurve::table(vec![[-0.1, 0.5], [0.05, 0.1], [0.1, -0.5]]).is_err());
        assert!(ControlCurve::droop(0.0, 0.04).is_err());
        assert!(ControlCurve::droop(1.0, -0.1).is_err());
    }

    #[test]
    fn curve_json_shapes() {
        let d: ControlCurve =
            serde_json::from_str(r#"{"type":"droop","alpha":5,"deadband":0.04}"#).unwrap();
        assert_eq!(
            d,
            ControlCurve::Droop {
                alpha: 5.0,
                deadband: 0.04
            }
        );
        let t: ControlCurve =
            serde_json::from_str(r#"{"type":"table","points":[[-0.1,1],[0,0],[0.1,-1]]}"#).unwrap();
        assert_eq!(t.deadband(), (0.0, 0.0));
        let bad = serde_json::from_str::<ControlCurve>(
            r#"{"type":"table","points":[[-0.1,1],[0,2],[0.1,-1]]}"#,
        );
        assert!(bad.is_err());
        let back: ControlCurve = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn reactive_limit_examples() {
        use std::f64::consts::FRAC_PI_4;
        let l = Inverter::new(1.0, 1.0, FRAC_PI_2)
            .unwrap()
            .reactive_limits();
        assert_eq!((l.min, l.max), (0.0, 0.0));
        let l = Inverter::new(1.0, 0.6, FRAC_PI_2)
            .unwrap()
            .reactive_limits();
        assert!((l.max - 0.8).abs() < 1e-12 && (l.min + 0.8).abs() < 1e-12);
        let l = Inverter::new(1.0, 0.5, FRAC_PI_4)
            .unwrap()
            .reactive_limits();
        assert!((l.max - 0.5).abs() < 1e-12 && (l.min + 0.5).abs() < 1e-12);
        let l = reactive_limits(None, 0.0);
        assert!(l.is_singleton());
        assert!(Inverter::new(1.0, 1.2, 0.0).is_err());
        assert!(Inverter::new(1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let lim = [ReactiveLimits {
            min: -0.3,
            max: 0.3,
        }; 2];
        assert_eq!(project_box(&[0.1, -0.2], &lim), vec![0.1, -0.2]);
        assert_eq!(project_box(&[1.0, -1.0], &lim), vec![0.3, -0.3]);
    }

    #[test]
    fn lipschitz_two_bus() {
        let x = DMatrix::from_element(1, 1, 0.5);
        let curves = [Some(ControlCurve::droop(3.0, 0.0).unwrap())];
        let lim = [ReactiveLimits {
            min: -1.0,
            max: 1.0,
        }];
        assert!((lipschitz_constant(&curves, &lim, &x) - 1.5).abs() < 1e-12);
        // a frozen bus contributes nothing
        let lim = [ReactiveLimits::singleton(0.0)];
        assert_eq!(lipschitz_constant(&curves, &lim, &x), 0.0);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
            w in prop::collection::vec(0.0f64..2.0, 6),
        ) {
            let lim: Vec<_> = w.iter().map(|&w| ReactiveLimits { min: -w, max: 0.5 * w }).collect();
            let pa = project_box(&a, &lim);
            let pb = project_box(&b, &lim);
            prop_assert_eq!(project_box(&pa, &lim), pa.clone());
            let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d(&pa, &pb) <= d(&a, &b) + 1e-15);
        }

        #[test]
        fn droop_is_non_increasing(alpha in 0.1f64..100.0, d in 0.0f64..0.2, e1 in -0.5f64..0.5, e2 in -0.5f64..0.5) {
            let f = ControlCurve::droop(alpha, d).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(f.eval(lo) >= f.eval(hi));
        }

        #[test]
        fn cost_is_convex(alpha in 0.1f64..100.0, d in 0.0f64..0.2, a in -2.0f64..2.0, b in -2.0f64..2.0, t in 0.0f64..1.0) {
            for f in [ControlCurve::droop(alpha, d).unwrap(), sample_table()] {
                let m = t * a + (1.0 - t) * b;
                prop_assert!(f.cost(m) <= t * f.cost(a) + (1.0 - t) * f.cost(b) + 1e-10);
            }
        }

        #[test]
        fn cost_derivative_is_minus_inverse(alpha in 0.5f64..50.0, d in 0.0f64..0.1, q in 0.01f64..2.0, neg in any::<bool>()) {
            let q = if neg { -q } else { q };
            let f = ControlCurve::droop(alpha, d).unwrap();
            let h = 1e-6;
            let fd = (f.cost(q + h) - f.cost(q - h)) / (2.0 * h);
            prop_assert!((fd + f.inverse(q)).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_grid_monotonicity_for_table() {
        let f = sample_table();
        let mut prev = f64::INFINITY;
        for k in 0..=4000 {
            let e = -0.2 + 0.4 * k as f64 / 4000.0;
            let u = f.eval(e);
            assert!(u <= prev + 1e-15);
            prev = u;
        }
    }
}
