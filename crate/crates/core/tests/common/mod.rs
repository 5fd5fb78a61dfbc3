//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltvar::cli::{load_feeder, IngestOptions};
use voltvar::control::{ControlCurve, Inverter};
use voltvar::network::{Bases, Bus, Feeder, InverterSite, Line};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree with `2..=max_n` non-slack buses hanging off slack id 0.
/// `r, x ~ U(0.01, 1)`; every new bus attaches to a uniformly chosen earlier one.
pub fn random_tree(rng: &mut ChaCha8Rng, max_n: usize, degree_one_root: bool) -> Feeder {
    let n = rng.random_range(2..=max_n);
    let mut buses = vec![Bus::new(0)];
    let mut lines = Vec::with_capacity(n);
    for id in 1..=n as u32 {
        buses.push(
            Bus::new(id).with_load(rng.random_range(0.0..0.01), rng.random_range(0.0..0.005)),
        );
        let lo = if degree_one_root && id > 1 { 1 } else { 0 };
        let parent = rng.random_range(lo..id);
        lines.push(Line::new(
            parent,
            id,
            rng.random_range(0.01..1.0),
            rng.random_range(0.01..1.0),
        ));
    }
    Feeder::build(buses, lines, vec![], Bases::default(), 0, 1.0).unwrap()
}

/// Built-in 42-bus feeder with a homogeneous droop on every inverter.
pub fn sce42(load_scale: f64, alpha: f64, deadband: f64) -> Feeder {
    let opts = IngestOptions {
        load_scale,
        ..Default::default()
    };
    load_feeder("builtin:sce42", &opts)
        .unwrap()
        .with_curves(&ControlCurve::droop(alpha, deadband).unwrap())
}

/// Slack at `v0`, one line of reactance `x` to a bus with a wide-open inverter.
pub fn two_bus(x: f64, v0: f64, alpha: f64, deadband: f64) -> Feeder {
    let site = InverterSite {
        bus: 1,
        inverter: Inverter::new(10.0, 0.0, FRAC_PI_2).unwrap(),
        curve: Some(ControlCurve::droop(alpha, deadband).unwrap()),
    };
    Feeder::build(
        vec![Bus::new(0), Bus::new(1)],
        vec![Line::new(0, 1, 0.1, x)],
        vec![site],
        Bases::default(),
        0,
        v0,
    )
    .unwrap()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}
