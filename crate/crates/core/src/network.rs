//! Radial feeder topology and the linearized (LinDistFlow) sensitivity model.
//!
//! Non-slack buses are addressed by *position* `0..n`, assigned in ascending
//! bus-id order. Every non-slack bus owns exactly one line, the one to its
//! parent, so lines share the same positions. All vectors in the crate
//! (`q`, `v`, flows) use this ordering.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{ControlCurve, Inverter};
use crate::error::{Error, FeederError, Result};

/// Per-unit system bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub v_kv: f64,
    pub s_kva: f64,
    pub z_ohm: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            v_kv: 1.0,
            s_kva: 1000.0,
            z_ohm: 1.0,
        }
    }
}

/// Bus record in p.u.: fixed load and non-inverter generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub v_nom: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub p_gen: f64,
}

impl Bus {
    pub fn new(id: u32) -> Self {
        Bus {
            id,
            v_nom: 1.0,
            p_load: 0.0,
            q_load: 0.0,
            p_gen: 0.0,
        }
    }

    pub fn with_load(mut self, p: f64, q: f64) -> Self {
        self.p_load = p;
        self.q_load = q;
        self
    }

    fn has_injection(&self) -> bool {
        self.p_load != 0.0 || self.q_load != 0.0 || self.p_gen != 0.0
    }
}

/// Line record in p.u.; after [`Feeder::build`] it is oriented parent → child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
}

impl Line {
    pub fn new(from: u32, to: u32, r: f64, x: f64) -> Self {
        Line { from, to, r, x }
    }
}

/// A controllable inverter and its Volt/VAR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterSite {
    pub bus: u32,
    #[serde(flatten)]
    pub inverter: Inverter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<ControlCurve>,
}

/// Validated radial feeder rooted at the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    slack: Bus,
    v0: f64,
    bases: Bases,
    /// Non-slack buses by position.
    buses: Vec<Bus>,
    /// `lines[k]` connects bus `k` to its parent.
    lines: Vec<Line>,
    /// Parent position, `None` for children of the slack bus.
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root_children: Vec<usize>,
    /// Breadth-first order from the slack bus.
    order: Vec<usize>,
    depth: Vec<usize>,
    /// `β(j)`: `j` and all of its descendants, sorted.
    descendants: Vec<Vec<usize>>,
    inverters: BTreeMap<u32, InverterSite>,
    position: BTreeMap<u32, usize>,
}

impl Feeder {
    /// Validate the records and orient the tree away from `slack`.
    pub fn build(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        inverters: Vec<InverterSite>,
        bases: Bases,
        slack: u32,
        v0: f64,
    ) -> std::result::Result<Feeder, FeederError> {
        let mut by_id: BTreeMap<u32, Bus> = BTreeMap::new();
        for b in buses {
            let id = b.id;
            if !(b.v_nom > 0.0) {
                return Err(FeederError::InvalidNominalVoltage(id));
            }
            if by_id.insert(id, b).is_some() {
                return Err(FeederError::DuplicateId(id));
            }
        }
        let slack_bus = by_id
            .remove(&slack)
            .ok_or(FeederError::MissingSlack(slack))?;
        if slack_bus.has_injection() {
            return Err(FeederError::SlackInjection(slack));
        }
        let position: BTreeMap<u32, usize> =
            by_id.keys().enumerate().map(|(k, &id)| (id, k)).collect();
        let buses: Vec<Bus> = by_id.into_values().collect();
        let n = buses.len();

        // adjacency over node indices, slack = n
        let node = |id: u32| {
            if id == slack {
                Some(n)
            } else {
                position.get(&id).copied()
            }
        };
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
        for (li, line) in lines.iter().enumerate() {
            let (a, b) = match (node(line.from), node(line.to)) {
                (Some(a), Some(b)) => (a, b),
                (None, _) => {
                    return Err(FeederError::UnknownBus {
                        from: line.from,
                        to: line.to,
                        missing: line.from,
                    })
                }
                (_, None) => {
                    return Err(FeederError::UnknownBus {
                        from: line.from,
                        to: line.to,
                        missing: line.to,
                    })
                }
            };
            if !(line.r > 0.0 && line.x > 0.0) || !line.r.is_finite() || !line.x.is_finite() {
                return Err(FeederError::NonPositiveImpedance {
                    from: line.from,
                    to: line.to,
                    r: line.r,
                    x: line.x,
                });
            }
            if a == b {
                return Err(FeederError::CycleDetected {
                    from: line.from,
                    to: line.to,
                });
            }
            adj[a].push((b, li));
            adj[b].push((a, li));
        }

        // Visit neighbours in position order so the result does not depend on line order.
        for a in &mut adj {
            a.sort_unstable();
        }
        // BFS from the slack bus; reaching a visited node through a new line is a cycle.
        let mut parent = vec![None; n];
        let mut parent_line = vec![usize::MAX; n];
        let mut visited = vec![false; n + 1];
        let mut depth = vec![0usize; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([n]);
        let mut via = vec![usize::MAX; n + 1];
        visited[n] = true;
        while let Some(u) = queue.pop_front() {
            for &(w, li) in &adj[u] {
                if li == via[u] {
                    continue;
                }
                if visited[w] {
                    let l = &lines[li];
                    return Err(FeederError::CycleDetected {
                        from: l.from,
                        to: l.to,
                    });
                }
                visited[w] = true;
                via[w] = li;
                parent[w] = (u != n).then_some(u);
                parent_line[w] = li;
                depth[w] = if u == n { 1 } else { depth[u] + 1 };
                order.push(w);
                queue.push_back(w);
            }
        }
        if let Some(k) = (0..n).find(|&k| !visited[k]) {
            return Err(FeederError::Disconnected(buses[k].id));
        }
        let oriented: Vec<Line> = (0..n)
            .map(|k| {
                let l = &lines[parent_line[k]];
                let from = parent[k].map_or(slack, |p| buses[p].id);
                Line::new(from, buses[k].id, l.r, l.x)
            })
            .collect();

        let mut children = vec![Vec::new(); n];
        let mut root_children = Vec::new();
        for &k in &order {
            match parent[k] {
                Some(p) => children[p].push(k),
                None => root_children.push(k),
            }
        }
        let mut descendants: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        for &k in order.iter().rev() {
            if let Some(p) = parent[k] {
                let sub = descendants[k].clone();
                descendants[p].extend(sub);
            }
        }
        for d in &mut descendants {
            d.sort_unstable();
        }

        let mut inv_map = BTreeMap::new();
        for site in inverters {
            if site.bus == slack {
                return Err(FeederError::SlackInjection(slack));
            }
            if !position.contains_key(&site.bus) {
                return Err(FeederError::InvalidInverter {
                    bus: site.bus,
                    reason: "bus does not exist".into(),
                });
            }
            Inverter::new(site.inverter.s, site.inverter.p, site.inverter.rho).map_err(
                |reason| FeederError::InvalidInverter {
                    bus: site.bus,
                    reason,
                },
            )?;
            if let Some(c) = &site.curve {
                c.validate()?;
            }
            if inv_map.insert(site.bus, site.clone()).is_some() {
                return Err(FeederError::InvalidInverter {
                    bus: site.bus,
                    reason: "more than one inverter".into(),
                });
            }
        }

        Ok(Feeder {
            slack: slack_bus,
            v0,
            bases,
            buses,
            lines: oriented,
            parent,
            children,
            root_children,
            order,
            depth,
            descendants,
            inverters: inv_map,
            position,
        })
    }

    /// Number of non-slack buses.
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> &Bus {
        &self.slack
    }

    pub fn slack_id(&self) -> u32 {
        self.slack.id
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn bases(&self) -> Bases {
        self.bases
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn root_children(&self) -> &[usize] {
        &self.root_children
    }

    /// Positions in breadth-first order (parents before children).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn depth(&self, k: usize) -> usize {
        self.depth[k]
    }

    /// `β(k)` as positions.
    pub fn descendants(&self, k: usize) -> &[usize] {
        &self.descendants[k]
    }

    pub fn position(&self, bus_id: u32) -> Option<usize> {
        self.position.get(&bus_id).copied()
    }

    pub fn bus_ids(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn inverters(&self) -> &BTreeMap<u32, InverterSite> {
        &self.inverters
    }

    pub fn inverter_at(&self, k: usize) -> Option<&InverterSite> {
        self.inverters.get(&self.buses[k].id)
    }

    /// Replace every inverter curve.
    pub fn with_curves(mut self, curve: &ControlCurve) -> Self {
        for site in self.inverters.values_mut() {
            site.curve = Some(curve.clone());
        }
        self
    }

    pub fn v_nom(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.v_nom).collect()
    }

    /// Total real generation per position: fixed generation plus inverter output.
    pub fn p_generation(&self) -> Vec<f64> {
        (0..self.n())
            .map(|k| self.buses[k].p_gen + self.inverter_at(k).map_or(0.0, |s| s.inverter.p))
            .collect()
    }

    pub fn p_load(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.p_load).collect()
    }

    pub fn q_load(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.q_load).collect()
    }

    /// Lowest common ancestor of two positions, `None` when only the slack is shared.
    fn common_ancestor(&self, mut a: usize, mut b: usize) -> Option<usize> {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a]?;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b]?;
        }
        while a != b {
            a = self.parent[a]?;
            b = self.parent[b]?;
        }
        Some(a)
    }
}

/// `R`, `X` and the constant `ṽ` of `v = X q + ṽ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrices {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub vtilde: DVector<f64>,
}

impl SensitivityMatrices {
    pub fn n(&self) -> usize {
        self.vtilde.len()
    }
}

/// Build `R_ij`, `X_ij` as the resistance/reactance of the shared part of the
/// root paths of `i` and `j`, and `ṽ = v0 + R (p_g - p_c) - X q_c`.
pub fn sensitivity_matrices(feeder: &Feeder) -> SensitivityMatrices {
    let n = feeder.n();
    // cumulative impedance from the slack bus
    let mut cum_r = vec![0.0; n];
    let mut cum_x = vec![0.0; n];
    for &k in feeder.order() {
        let (pr, px) = feeder
            .parent(k)
            .map_or((0.0, 0.0), |p| (cum_r[p], cum_x[p]));
        cum_r[k] = pr + feeder.lines[k].r;
        cum_x[k] = px + feeder.lines[k].x;
    }
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = cum_r[i];
        x[(i, i)] = cum_x[i];
        for j in 0..i {
            if let Some(a) = feeder.common_ancestor(i, j) {
                r[(i, j)] = cum_r[a];
                r[(j, i)] = cum_r[a];
                x[(i, j)] = cum_x[a];
                x[(j, i)] = cum_x[a];
            }
        }
    }
    let net_p = DVector::from_iterator(
        n,
        feeder
            .p_generation()
            .into_iter()
            .zip(feeder.p_load())
            .map(|(g, c)| g - c),
    );
    let qc = DVector::from_vec(feeder.q_load());
    let vtilde = DVector::from_element(n, feeder.v0()) + &r * net_p - &x * qc;
    SensitivityMatrices { r, x, vtilde }
}

/// Closed-form `X^{-1}`: the reactance-weighted Laplacian of the inverse tree
/// plus `1/x` on every bus attached to the slack bus.
///
/// Subtrees hanging off the slack bus decouple, so a slack bus of degree
/// `d > 1` yields a block-diagonal inverse, one block per subtree.
pub fn explicit_inverse_x(feeder: &Feeder) -> DMatrix<f64> {
    let n = feeder.n();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let w = 1.0 / feeder.lines[k].x;
        inv[(k, k)] += w;
        if let Some(p) = feeder.parent(k) {
            inv[(p, p)] += w;
            inv[(p, k)] -= w;
            inv[(k, p)] -= w;
        }
    }
    inv
}

/// Weighted Laplacian (weights `1/x`) of the tree below the slack bus.
pub fn inverse_tree_laplacian(feeder: &Feeder) -> DMatrix<f64> {
    let mut lap = explicit_inverse_x(feeder);
    for &k in feeder.root_children() {
        lap[(k, k)] -= 1.0 / feeder.lines[k].x;
    }
    lap
}

/// Split of `(v - v_nom)^T X^{-1} (v - v_nom)` into the head-bus term and
/// the neighbour-difference terms, evaluated at `v = X q + ṽ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationCost {
    /// `(v_1 - v_nom,1)^2 / x_01`.
    pub head: f64,
    /// `Σ_{(i,j)} (e_i - e_j)^2 / x_ij` over lines below the head bus.
    pub neighbors: f64,
}

impl DeviationCost {
    /// `½ (head + neighbors)`.
    pub fn half_sum(&self) -> f64 {
        0.5 * (self.head + self.neighbors)
    }
}

pub fn voltage_deviation_form(
    feeder: &Feeder,
    mats: &SensitivityMatrices,
    q: &[f64],
) -> Result<DeviationCost> {
    let n = feeder.n();
    if q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.len(),
        });
    }
    let roots = feeder.root_children();
    if roots.len() != 1 {
        return Err(Error::RootDegreeNotOne(roots.len()));
    }
    let v = &mats.x * DVector::from_column_slice(q) + &mats.vtilde;
    let e: Vec<f64> = (0..n).map(|k| v[k] - feeder.buses[k].v_nom).collect();
    let head_bus = roots[0];
    let head = e[head_bus].powi(2) / feeder.lines[head_bus].x;
    let neighbors = (0..n)
        .filter_map(|k| {
            feeder
                .parent(k)
                .map(|p| (e[p] - e[k]).powi(2) / feeder.lines[k].x)
        })
        .sum();
    Ok(DeviationCost { head, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{path_intersection_oracle, random_tree};

    fn two_bus() -> Feeder {
        Feeder::build(
            vec![Bus::new(0), Bus::new(1)],
            vec![Line::new(0, 1, 0.1, 0.5)],
            vec![],
            Bases::default(),
            0,
            1.0,
        )
        .unwrap()
    }

    fn path3(x: f64, y: f64, reversed: bool) -> Feeder {
        let l2 = if reversed {
            Line::new(2, 1, 0.2, y)
        } else {
            Line::new(1, 2, 0.2, y)
        };
        Feeder::build(
            vec![Bus::new(0), Bus::new(1), Bus::new(2)],
            vec![Line::new(0, 1, 0.1, x), l2],
            vec![],
            Bases::default(),
            0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn smallest_tree() {
        let f = two_bus();
        assert_eq!(f.n(), 1);
        assert_eq!(f.descendants(0), &[0]);
        let m = sensitivity_matrices(&f);
        assert_eq!(m.x[(0, 0)], 0.5);
        assert_eq!(m.r[(0, 0)], 0.1);
        assert_eq!(explicit_inverse_x(&f)[(0, 0)], 2.0);
    }

    #[test]
    fn orientation_is_derived() {
        let a = path3(0.3, 0.7, false);
        let b = path3(0.3, 0.7, true);
        assert_eq!(a, b);
        assert_eq!(b.lines()[1].from, 1);
        assert_eq!(b.lines()[1].to, 2);
        assert_eq!(b.descendants(0), &[0, 1]);
    }

    #[test]
    fn path_matrices_and_inverse() {
        let (x, y) = (0.3, 0.7);
        let f = path3(x, y, true);
        let m = sensitivity_matrices(&f);
        assert_eq!(m.x, DMatrix::from_row_slice(2, 2, &[x, x, x, x + y]));
        let inv = explicit_inverse_x(&f);
        let expect =
            DMatrix::from_row_slice(2, 2, &[1.0 / x + 1.0 / y, -1.0 / y, -1.0 / y, 1.0 / y]);
        assert!((inv - expect).abs().max() < 1e-14);
    }

    #[test]
    fn validation_errors() {
        let buses = || vec![Bus::new(0), Bus::new(1), Bus::new(2)];
        let b = Bases::default();
        let cyc = Feeder::build(
            buses(),
            vec![
                Line::new(0, 1, 0.1, 0.1),
                Line::new(1, 2, 0.1, 0.1),
                Line::new(2, 0, 0.1, 0.1),
            ],
            vec![],
            b,
            0,
            1.0,
        );
        assert!(matches!(cyc, Err(FeederError::CycleDetected { .. })));
        let disc = Feeder::build(buses(), vec![Line::new(0, 1, 0.1, 0.1)], vec![], b, 0, 1.0);
        assert_eq!(disc, Err(FeederError::Disconnected(2)));
        let imp = Feeder::build(
            buses(),
            vec![Line::new(0, 1, 0.1, 0.1), Line::new(1, 2, 0.1, 0.0)],
            vec![],
            b,
            0,
            1.0,
        );
        assert!(matches!(imp, Err(FeederError::NonPositiveImpedance { .. })));
        let dup = Feeder::build(
            vec![Bus::new(0), Bus::new(1), Bus::new(1)],
            vec![Line::new(0, 1, 0.1, 0.1)],
            vec![],
            b,
            0,
            1.0,
        );
        assert_eq!(dup, Err(FeederError::DuplicateId(1)));
        let unknown = Feeder::build(
            buses(),
            vec![Line::new(0, 1, 0.1, 0.1), Line::new(1, 7, 0.1, 0.1)],
            vec![],
            b,
            0,
            1.0,
        );
        assert!(matches!(
            unknown,
            Err(FeederError::UnknownBus { missing: 7, .. })
        ));
        let slack_load = Feeder::build(
            vec![Bus::new(0).with_load(0.1, 0.0), Bus::new(1)],
            vec![Line::new(0, 1, 0.1, 0.1)],
            vec![],
            b,
            0,
            1.0,
        );
        assert_eq!(slack_load, Err(FeederError::SlackInjection(0)));
        // cycle among non-slack buses that leaves one bus unreached
        let mut bs = buses();
        bs.push(Bus::new(3));
        let detached = Feeder::build(
            bs,
            vec![
                Line::new(0, 1, 0.1, 0.1),
                Line::new(2, 3, 0.1, 0.1),
                Line::new(3, 2, 0.2, 0.2),
            ],
            vec![],
            b,
            0,
            1.0,
        );
        assert!(detached.is_err());
    }

    #[test]
    fn x_matches_path_enumeration_on_random_trees() {
        let mut rng = crate::testutil::rng(3);
        for _ in 0..30 {
            let f = random_tree(&mut rng, 25, false);
            let m = sensitivity_matrices(&f);
            let (ro, xo) = path_intersection_oracle(&f);
            assert!((&m.x - xo).abs().max() < 1e-14);
            assert!((&m.r - ro).abs().max() < 1e-14);
        }
    }

    #[test]
    fn sensitivity_properties_on_random_trees() {
        let mut rng = crate::testutil::rng(5);
        for _ in 0..200 {
            let f = random_tree(&mut rng, 50, false);
            let m = sensitivity_matrices(&f);
            let n = f.n();
            assert_eq!(m.x, m.x.transpose());
            for i in 0..n {
                for j in 0..n {
                    assert!(m.x[(i, i)] >= m.x[(i, j)] && m.x[(i, j)] >= 0.0);
                }
            }
            assert!(m.x.clone().symmetric_eigenvalues().min() > 0.0);
            assert!(m.r.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn block_structure_when_slack_has_several_children() {
        let mut rng = crate::testutil::rng(9);
        for _ in 0..20 {
            let f = random_tree(&mut rng, 30, false);
            let m = sensitivity_matrices(&f);
            let inv = explicit_inverse_x(&f);
            for i in 0..f.n() {
                for j in 0..f.n() {
                    let mut a = i;
                    while let Some(p) = f.parent(a) {
                        a = p;
                    }
                    let mut b = j;
                    while let Some(p) = f.parent(b) {
                        b = p;
                    }
                    if a != b {
                        assert_eq!(m.x[(i, j)], 0.0);
                        assert_eq!(inv[(i, j)], 0.0);
                    }
                }
            }
            let prod = &m.x * &inv - DMatrix::identity(f.n(), f.n());
            assert!(prod.abs().max() < 1e-8);
        }
    }

    #[test]
    fn explicit_inverse_matches_lu() {
        let mut rng = crate::testutil::rng(21);
        for _ in 0..50 {
            let f = random_tree(&mut rng, 20, true);
            assert_eq!(f.root_children().len(), 1);
            let m = sensitivity_matrices(&f);
            let inv = explicit_inverse_x(&f);
            let lu = m.x.clone().lu().try_inverse().unwrap();
            assert!((&inv - &lu).abs().max() < 1e-8 * lu.abs().max().max(1.0));
            // the head-bus correction is a single diagonal entry
            let lap = inverse_tree_laplacian(&f);
            let head = f.root_children()[0];
            let mut corr = DMatrix::zeros(f.n(), f.n());
            corr[(head, head)] = 1.0 / f.lines()[head].x;
            assert!((lap + corr - inv).abs().max() < 1e-12);
        }
    }

    #[test]
    fn zero_injection_vtilde_is_v0() {
        let f = path3(0.3, 0.7, false);
        let m = sensitivity_matrices(&f);
        assert_eq!(m.vtilde, DVector::from_element(2, 1.0));
    }

    #[test]
    fn deviation_form_examples() {
        // v = v_nom -> zero
        let f = two_bus();
        let m = sensitivity_matrices(&f);
        let d = voltage_deviation_form(&f, &m, &[0.0]).unwrap();
        assert_eq!((d.head, d.neighbors), (0.0, 0.0));

        // v1 = 1.04 with x = 0.5: q = 0.08 lifts v from 1.0 by 0.04
        let d = voltage_deviation_form(&f, &m, &[0.08]).unwrap();
        assert!((d.head - 0.0032).abs() < 1e-12);
        assert_eq!(d.neighbors, 0.0);
        assert!((d.half_sum() - 0.5 * 0.04f64.powi(2) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_form_matches_quadratic_form() {
        let mut rng = crate::testutil::rng(33);
        for _ in 0..20 {
            let f = random_tree(&mut rng, 40, true);
            let m = sensitivity_matrices(&f);
            let q: Vec<f64> = (0..f.n())
                .map(|k| ((k * 7919) % 13) as f64 / 13.0 - 0.5)
                .collect();
            let d = voltage_deviation_form(&f, &m, &q).unwrap();
            let v = &m.x * DVector::from_column_slice(&q) + &m.vtilde;
            let e = v - DVector::from_vec(f.v_nom());
            let quad = 0.5 * (e.transpose() * explicit_inverse_x(&f) * &e)[(0, 0)];
            assert!((d.half_sum() - quad).abs() <= 1e-10 * quad.abs().max(1e-300));
        }
    }

    #[test]
    fn deviation_form_rejects_branching_root() {
        let f = Feeder::build(
            vec![Bus::new(0), Bus::new(1), Bus::new(2)],
            vec![Line::new(0, 1, 0.1, 0.1), Line::new(0, 2, 0.1, 0.1)],
            vec![],
            Bases::default(),
            0,
            1.0,
        )
        .unwrap();
        let m = sensitivity_matrices(&f);
        assert!(matches!(
            voltage_deviation_form(&f, &m, &[0.0, 0.0]),
            Err(Error::RootDegreeNotOne(2))
        ));
    }
}
