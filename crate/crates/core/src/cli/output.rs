//! Trajectory CSV and metadata sidecar.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::{Controller, Trajectory, Verdict};
use crate::network::Bases;
use crate::powerflow::PlantKind;

/// `t,q_1..q_n,v_1..v_n,residual,F`; the last row has an empty residual when
/// the run stopped before another step was taken.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    let n = traj.initial().q.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q_{i}")));
    header.extend((1..=n).map(|i| format!("v_{i}")));
    header.push("residual".into());
    header.push("F".into());
    writeln!(w, "{}", header.join(","))?;
    for s in &traj.states {
        let mut row = Vec::with_capacity(2 * n + 3);
        row.push(s.t.to_string());
        row.extend(s.q.iter().map(f64::to_string));
        row.extend(s.v.iter().map(f64::to_string));
        row.push(
            traj.residuals
                .get(s.t)
                .map_or(String::new(), f64::to_string),
        );
        row.push(
            traj.objective
                .get(s.t)
                .map_or(String::new(), f64::to_string),
        );
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub feeder: String,
    pub feeder_sha256: String,
    /// Bus id of each CSV column index `1..n`.
    pub bus_ids: Vec<u32>,
    pub bases: Bases,
    pub units: &'static str,
    pub controller: Controller,
    pub plant: PlantKind,
    pub alpha: Option<f64>,
    pub deadband: f64,
    pub load_scale: f64,
    pub power_factor: f64,
    pub pv_output: f64,
    pub oversize: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub window: usize,
    pub verdict: Verdict,
    pub steps: usize,
    pub final_max_deviation: f64,
    pub notes: Vec<String>,
}

pub const DISTFLOW_NOTE: &str =
    "plant voltages come from a DistFlow backward/forward sweep on the \
radial branch-flow equations, standing in for a full AC power flow";
