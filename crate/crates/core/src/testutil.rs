//! Shared fixtures and brute-force oracles for unit tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Bases, Bus, Feeder, Line};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree with `2 <= n <= max_n` non-slack buses, slack id 0,
/// `r, x ~ U(0.01, 1)` and small random loads.
pub fn random_tree(rng: &mut ChaCha8Rng, max_n: usize, degree_one_root: bool) -> Feeder {
    let n = rng.random_range(2..=max_n);
    let mut buses = vec![Bus::new(0)];
    let mut lines = Vec::new();
    for id in 1..=n as u32 {
        buses
            .push(Bus::new(id).with_load(rng.random_range(0.0..0.05), rng.random_range(0.0..0.02)));
        let parent = if id == 1 {
            0
        } else if degree_one_root {
            rng.random_range(1..id)
        } else {
            rng.random_range(0..id)
        };
        let (r, x) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        // alternate the record direction so orientation is exercised
        if id % 2 == 0 {
            lines.push(Line::new(id, parent, r, x));
        } else {
            lines.push(Line::new(parent, id, r, x));
        }
    }
    Feeder::build(buses, lines, vec![], Bases::default(), 0, 1.0).unwrap()
}

/// `(R, X)` by explicitly listing each bus's root path and intersecting line sets.
pub fn path_intersection_oracle(f: &Feeder) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = f.n();
    let slack = f.slack_id();
    // each line as an unordered id pair
    let key = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
    let imp: std::collections::HashMap<(u32, u32), (f64, f64)> = f
        .lines()
        .iter()
        .map(|l| (key(l.from, l.to), (l.r, l.x)))
        .collect();
    let paths: Vec<Vec<(u32, u32)>> = (0..n)
        .map(|k| {
            let mut out = Vec::new();
            let mut id = f.buses()[k].id;
            while id != slack {
                let line = f.lines().iter().find(|l| l.to == id).unwrap();
                out.push(key(line.from, line.to));
                id = line.from;
            }
            out
        })
        .collect();
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            for e in &paths[i] {
                if paths[j].contains(e) {
                    r[(i, j)] += imp[e].0;
                    x[(i, j)] += imp[e].1;
                }
            }
        }
    }
    (r, x)
}

/// Same feeder with every load multiplied by `k`.
pub fn scale_loads(f: &Feeder, k: f64) -> Feeder {
    let buses = std::iter::once(f.slack().clone())
        .chain(f.buses().iter().map(|b| {
            let p = b.p_load * k;
            let q = b.q_load * k;
            b.clone().with_load(p, q)
        }))
        .collect();
    Feeder::build(
        buses,
        f.lines().to_vec(),
        vec![],
        f.bases(),
        f.slack_id(),
        f.v0(),
    )
    .unwrap()
}
