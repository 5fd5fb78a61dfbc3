//! Bus voltages from reactive injections: the linear model `v = X q + ṽ`
//! and the full DistFlow recursion solved by backward/forward sweep.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Feeder, SensitivityMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Linear,
    Distflow,
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlantKind::Linear => "linear",
            PlantKind::Distflow => "distflow",
        })
    }
}

/// Voltages (magnitudes, p.u.) and per-line flows indexed by child position.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    pub v: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Squared current magnitudes; all zero for the linear model.
    pub ell: Vec<f64>,
    pub model: PlantKind,
    pub iterations: usize,
}

fn check_len(feeder: &Feeder, q: &[f64]) -> Result<()> {
    if q.len() != feeder.n() {
        return Err(Error::DimensionMismatch {
            expected: feeder.n(),
            got: q.len(),
        });
    }
    Ok(())
}

/// Lossless line flows: each line carries the net demand of the subtree below it.
pub fn lossless_flows(feeder: &Feeder, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = feeder.n();
    let pg = feeder.p_generation();
    let mut p = vec![0.0; n];
    let mut qf = vec![0.0; n];
    for &k in feeder.order().iter().rev() {
        let bus = &feeder.buses()[k];
        let mut pk = bus.p_load - pg[k];
        let mut qk = bus.q_load - q[k];
        for &c in feeder.children(k) {
            pk += p[c];
            qk += qf[c];
        }
        p[k] = pk;
        qf[k] = qk;
    }
    (p, qf)
}

pub fn linear_voltage(
    feeder: &Feeder,
    mats: &SensitivityMatrices,
    q: &[f64],
) -> Result<VoltageSolution> {
    check_len(feeder, q)?;
    if mats.n() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: mats.n(),
            got: q.len(),
        });
    }
    let v = &mats.x * DVector::from_column_slice(q) + &mats.vtilde;
    let (p_flow, q_flow) = lossless_flows(feeder, q);
    Ok(VoltageSolution {
        v: v.iter().copied().collect(),
        p_flow,
        q_flow,
        ell: vec![0.0; q.len()],
        model: PlantKind::Linear,
        iterations: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Stop when the ∞-norm voltage change between sweeps falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Drop every loss term (`ℓ ≡ 0`).
    pub lossless: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-8,
            max_iter: 100,
            lossless: false,
        }
    }
}

/// Backward/forward sweep for the DistFlow equations from a flat start.
pub fn distflow_sweep(feeder: &Feeder, q: &[f64], opts: &SweepOptions) -> Result<VoltageSolution> {
    check_len(feeder, q)?;
    let n = feeder.n();
    let lines = feeder.lines();
    let pg = feeder.p_generation();
    let v0_sq = feeder.v0() * feeder.v0();
    let mut u = vec![v0_sq; n];
    let mut v = vec![feeder.v0(); n];
    let mut ell = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut qf = vec![0.0; n];

    for it in 1..=opts.max_iter {
        // backward: flows from the leaves up
        for &k in feeder.order().iter().rev() {
            let bus = &feeder.buses()[k];
            let mut pk = bus.p_load - pg[k] + lines[k].r * ell[k];
            let mut qk = bus.q_load - q[k] + lines[k].x * ell[k];
            for &c in feeder.children(k) {
                pk += p[c];
                qk += qf[c];
            }
            p[k] = pk;
            qf[k] = qk;
        }
        // forward: squared voltages from the slack bus down, then currents
        let mut delta: f64 = 0.0;
        for &k in feeder.order() {
            let up = feeder.parent(k).map_or(v0_sq, |par| u[par]);
            let (r, x) = (lines[k].r, lines[k].x);
            let uk = up - 2.0 * (r * p[k] + x * qf[k]) + (r * r + x * x) * ell[k];
            if !(uk > 0.0) {
                return Err(Error::NegativeSquaredVoltage {
                    bus: feeder.buses()[k].id,
                    value: uk,
                });
            }
            u[k] = uk;
            let vk = uk.sqrt();
            delta = delta.max((vk - v[k]).abs());
            v[k] = vk;
        }
        if !opts.lossless {
            for &k in feeder.order() {
                let up = feeder.parent(k).map_or(v0_sq, |par| u[par]);
                ell[k] = (p[k] * p[k] + qf[k] * qf[k]) / up;
            }
        }
        if delta < opts.tol {
            return Ok(VoltageSolution {
                v,
                p_flow: p,
                q_flow: qf,
                ell,
                model: PlantKind::Distflow,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence(opts.max_iter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationError {
    /// `v_distflow - v_linear` per position.
    pub per_bus: Vec<f64>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn linearization_error(
    feeder: &Feeder,
    mats: &SensitivityMatrices,
    q: &[f64],
    opts: &SweepOptions,
) -> Result<LinearizationError> {
    let lin = linear_voltage(feeder, mats, q)?;
    let full = distflow_sweep(feeder, q, opts)?;
    let per_bus: Vec<f64> = full.v.iter().zip(&lin.v).map(|(a, b)| a - b).collect();
    let max_abs = per_bus.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let mean_abs = per_bus.iter().map(|e| e.abs()).sum::<f64>() / per_bus.len().max(1) as f64;
    Ok(LinearizationError {
        per_bus,
        max_abs,
        mean_abs,
    })
}

/// Maps a reactive injection vector to bus voltage magnitudes.
pub trait Plant: Sync {
    fn voltages(&self, q: &[f64]) -> Result<Vec<f64>>;
    fn kind(&self) -> PlantKind;
}

/// `v = X q + ṽ`, skipping zero injections (most buses carry no inverter).
pub struct LinearPlant<'a> {
    x: &'a DMatrix<f64>,
    vtilde: &'a DVector<f64>,
}

impl<'a> LinearPlant<'a> {
    pub fn new(mats: &'a SensitivityMatrices) -> Self {
        LinearPlant {
            x: &mats.x,
            vtilde: &mats.vtilde,
        }
    }
}

impl Plant for LinearPlant<'_> {
    fn voltages(&self, q: &[f64]) -> Result<Vec<f64>> {
        let n = self.vtilde.len();
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.len(),
            });
        }
        let mut v: Vec<f64> = self.vtilde.iter().copied().collect();
        for (j, &qj) in q.iter().enumerate() {
            if qj != 0.0 {
                for (vi, xij) in v.iter_mut().zip(self.x.column(j).iter()) {
                    *vi += xij * qj;
                }
            }
        }
        Ok(v)
    }

    fn kind(&self) -> PlantKind {
        PlantKind::Linear
    }
}

pub struct DistFlowPlant<'a> {
    feeder: &'a Feeder,
    opts: SweepOptions,
}

impl<'a> DistFlowPlant<'a> {
    pub fn new(feeder: &'a Feeder, opts: SweepOptions) -> Self {
        DistFlowPlant { feeder, opts }
    }
}

impl Plant for DistFlowPlant<'_> {
    fn voltages(&self, q: &[f64]) -> Result<Vec<f64>> {
        distflow_sweep(self.feeder, q, &self.opts).map(|s| s.v)
    }

    fn kind(&self) -> PlantKind {
        PlantKind::Distflow
    }
}
