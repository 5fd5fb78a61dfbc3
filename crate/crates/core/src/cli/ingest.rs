//! Feeder JSON files, unit conversion and the embedded SCE 42-bus circuit.
//!
//! A feeder file lists buses, lines and inverters either in physical units
//! (`"unit": "ohm"`: ohms, kW, kvar, kVA) or already in p.u. (`"unit": "pu"`).
//! Everything is converted to p.u. on load.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlCurve, Inverter};
use crate::error::{Error, FeederError, Result};
use crate::network::{Bases, Bus, Feeder, InverterSite, Line};

pub const BUILTIN_PREFIX: &str = "builtin:";
const SCE42: &str = include_str!("../../data/sce42.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Ohm,
    Pu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub v_nom: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_load: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_load: Option<f64>,
    /// Apparent load, split by the ingestion power factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_load: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_gen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterRecord {
    pub bus: u32,
    /// Nameplate real power; sets `p` and `s` through the ingestion options.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Power-factor angle limit in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<ControlCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub unit: Unit,
    #[serde(default)]
    pub slack: u32,
    #[serde(default = "one")]
    pub v0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<Bases>,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<Line>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inverters: Vec<InverterRecord>,
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// Scenario knobs applied while converting a file to a [`Feeder`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Splits apparent loads into `p = s·pf`, `q = s·√(1 - pf²)`.
    pub power_factor: f64,
    /// Multiplies every load.
    pub load_scale: f64,
    /// Inverter real output as a fraction of nameplate.
    pub pv_output: f64,
    /// Inverter apparent-power rating as a multiple of nameplate.
    pub oversize: f64,
    /// Default `tan ρ` for inverters without an explicit angle.
    pub tan_rho: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            power_factor: 0.9,
            load_scale: 1.0,
            pv_output: 1.0,
            oversize: 1.1,
            tan_rho: f64::INFINITY,
        }
    }
}

impl IngestOptions {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return bad("power factor", self.power_factor);
        }
        if !(self.load_scale >= 0.0 && self.load_scale.is_finite()) {
            return bad("load scale", self.load_scale);
        }
        if !(self.pv_output >= 0.0 && self.pv_output <= self.oversize) {
            return bad("pv output", self.pv_output);
        }
        if !(self.oversize > 0.0 && self.oversize.is_finite()) {
            return bad("oversize", self.oversize);
        }
        if !(self.tan_rho >= 0.0) {
            return bad("tan rho", self.tan_rho);
        }
        Ok(())
    }
}

pub fn parse_feeder_file(text: &str) -> Result<FeederFile> {
    Ok(serde_json::from_str(text)?)
}

/// Convert to a validated p.u. feeder.
pub fn build_feeder(file: &FeederFile, opts: &IngestOptions) -> Result<Feeder> {
    opts.validate()?;
    let (z, s) = match file.unit {
        Unit::Pu => (1.0, 1.0),
        Unit::Ohm => {
            let b = file.bases.ok_or_else(|| {
                Error::InvalidParameter("ohm-unit feeder files need \"bases\"".into())
            })?;
            (b.z_ohm, b.s_kva)
        }
    };
    let bases = file.bases.unwrap_or_default();
    let k = opts.load_scale;
    let q_share = (1.0 - opts.power_factor * opts.power_factor)
        .max(0.0)
        .sqrt();
    let mut buses = Vec::with_capacity(file.buses.len());
    for r in &file.buses {
        let (p, q) = match (r.s_load, r.p_load, r.q_load) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::InvalidParameter(format!(
                    "bus {}: give either s_load or p_load/q_load",
                    r.id
                )))
            }
            (Some(sl), None, None) => (sl * opts.power_factor, sl * q_share),
            (None, p, q) => (p.unwrap_or(0.0), q.unwrap_or(0.0)),
        };
        let mut bus = Bus::new(r.id).with_load(k * p / s, k * q / s);
        bus.v_nom = r.v_nom;
        bus.p_gen = r.p_gen.unwrap_or(0.0) / s;
        buses.push(bus);
    }
    let lines = file
        .lines
        .iter()
        .map(|l| Line::new(l.from, l.to, l.r / z, l.x / z))
        .collect();
    let default_rho = opts.tan_rho.atan().min(FRAC_PI_2);
    let mut inverters = Vec::with_capacity(file.inverters.len());
    for r in &file.inverters {
        let invalid = |reason: &str| FeederError::InvalidInverter {
            bus: r.bus,
            reason: reason.into(),
        };
        let (s_rating, p_out) = match (r.capacity, r.s, r.p) {
            (Some(c), s_opt, p_opt) => (
                s_opt.unwrap_or(opts.oversize * c),
                p_opt.unwrap_or(opts.pv_output * c),
            ),
            (None, Some(sr), Some(p)) => (sr, p),
            _ => return Err(invalid("needs either capacity or both s and p").into()),
        };
        let inverter = Inverter::new(s_rating / s, p_out / s, r.rho.unwrap_or(default_rho))
            .map_err(|reason| FeederError::InvalidInverter { bus: r.bus, reason })?;
        inverters.push(InverterSite {
            bus: r.bus,
            inverter,
            curve: r.curve.clone(),
        });
    }
    Ok(Feeder::build(
        buses, lines, inverters, bases, file.slack, file.v0,
    )?)
}

/// Raw file for `builtin:<name>` or a path.
pub fn read_feeder_file(source: &str) -> Result<FeederFile> {
    if let Some(name) = source.strip_prefix(BUILTIN_PREFIX) {
        return match name {
            "sce42" => parse_feeder_file(SCE42),
            other => Err(Error::InvalidParameter(format!(
                "unknown builtin feeder '{other}'"
            ))),
        };
    }
    parse_feeder_file(&std::fs::read_to_string(Path::new(source))?)
}

pub fn load_feeder(source: &str, opts: &IngestOptions) -> Result<Feeder> {
    build_feeder(&read_feeder_file(source)?, opts)
}

/// The feeder as a p.u. file; reloading it yields an identical [`Feeder`].
pub fn export_feeder(feeder: &Feeder, name: Option<String>) -> FeederFile {
    let record = |b: &Bus| BusRecord {
        id: b.id,
        v_nom: b.v_nom,
        p_load: (b.p_load != 0.0).then_some(b.p_load),
        q_load: (b.q_load != 0.0).then_some(b.q_load),
        s_load: None,
        p_gen: (b.p_gen != 0.0).then_some(b.p_gen),
    };
    let buses = std::iter::once(record(feeder.slack()))
        .chain(feeder.buses().iter().map(record))
        .collect();
    let inverters = feeder
        .inverters()
        .values()
        .map(|site| InverterRecord {
            bus: site.bus,
            capacity: None,
            s: Some(site.inverter.s),
            p: Some(site.inverter.p),
            rho: Some(site.inverter.rho),
            curve: site.curve.clone(),
        })
        .collect();
    FeederFile {
        name,
        notes: Vec::new(),
        unit: Unit::Pu,
        slack: feeder.slack_id(),
        v0: feeder.v0(),
        bases: Some(feeder.bases()),
        buses,
        lines: feeder.lines().to_vec(),
        inverters,
    }
}

/// SHA-256 of the canonical p.u. export, hex encoded.
pub fn feeder_hash(feeder: &Feeder) -> String {
    let json = serde_json::to_string(&export_feeder(feeder, None)).expect("feeder serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
