//! Device-level mixing matrices and their spectral quantities.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::rng::{self, Purpose};

const STOCHASTIC_TOL: f64 = 1e-12;
const GEOMETRIC_ATTEMPTS: usize = 64;

/// A nonnegative doubly stochastic `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "mixing matrix must be square and nonempty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if let Some(v) = w.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("mixing weight {v} is negative or non-finite")));
        }
        let deviation = stochastic_deviation(&w);
        if deviation > STOCHASTIC_TOL {
            return Err(Error::NotDoublyStochastic { deviation });
        }
        Ok(MixingMatrix { w })
    }

    /// `J_n`, the exact average.
    pub fn complete(n: usize) -> Self {
        MixingMatrix {
            w: DMatrix::from_element(n, n, 1.0 / n as f64),
        }
    }

    pub fn identity(n: usize) -> Self {
        MixingMatrix {
            w: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// `W * x` for an `n x d` block of device rows.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.w * x
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| g17(self.w[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("mixing csv is not square".into()));
        }
        MixingMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

fn stochastic_deviation(w: &DMatrix<f64>) -> f64 {
    let rows = w.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = w.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Identity,
    RingDirected,
    Exponential,
    Geometric { radius: f64, seed: u64 },
}

pub fn build_mixing(kind: &TopologyKind, n: usize) -> Result<MixingMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("device count must be positive".into()));
    }
    let w = match kind {
        TopologyKind::Complete => return Ok(MixingMatrix::complete(n)),
        TopologyKind::Identity => return Ok(MixingMatrix::identity(n)),
        TopologyKind::RingDirected => lazy_ring(n),
        TopologyKind::Exponential => metropolis(n, &exponential_edges(n)),
        TopologyKind::Geometric { radius, seed } => {
            if !(*radius > 0.0 && *radius <= 1.0) {
                return Err(Error::InvalidArgument(format!("geometric radius {radius} not in (0, 1]")));
            }
            let edges = (0..GEOMETRIC_ATTEMPTS as u64)
                .map(|attempt| geometric_edges(n, *radius, *seed, attempt))
                .find(|edges| is_connected(n, edges))
                .ok_or(Error::Disconnected {
                    attempts: GEOMETRIC_ATTEMPTS,
                })?;
            metropolis(n, &edges)
        }
    };
    MixingMatrix::new(w)
}

/// `W = (I + P) / 2` with `P` the cyclic shift `i -> i + 1`.
fn lazy_ring(n: usize) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::identity(1, 1);
    }
    let mut w = DMatrix::identity(n, n) * 0.5;
    for i in 0..n {
        w[(i, (i + 1) % n)] += 0.5;
    }
    w
}

fn exponential_edges(n: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut hop = 1;
        while hop < n {
            for j in [(i + hop) % n, (i + n - hop % n) % n] {
                if j != i {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
            hop *= 2;
        }
    }
    edges
}

fn geometric_edges(n: usize, radius: f64, seed: u64, attempt: u64) -> BTreeSet<(usize, usize)> {
    let mut rng = rng::stream(seed, attempt, Purpose::Aux);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            if dx * dx + dy * dy <= radius * radius {
                edges.insert((i, j));
            }
        }
    }
    edges
}

fn is_connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn metropolis(n: usize, edges: &BTreeSet<(usize, usize)>) -> DMatrix<f64> {
    let mut degree = vec![0usize; n];
    for &(a, b) in edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in edges {
        let weight = 1.0 / (1 + degree[a].max(degree[b])) as f64;
        w[(a, b)] = weight;
        w[(b, a)] = weight;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// `rho_W = ||W - J_n||_2^2`.
pub fn spectral_gap(w: &MixingMatrix) -> f64 {
    let n = w.n();
    let centered = w.matrix() - DMatrix::from_element(n, n, 1.0 / n as f64);
    let sigma = centered.singular_values().max();
    sigma * sigma
}

/// `rho_{r,W} = (1 - r) rho_W`.
pub fn expected_contraction(rho_w: f64, r: f64) -> Result<f64> {
    if !(rho_w >= 0.0) || !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "expected_contraction needs rho_W >= 0 and r in [0,1], got ({rho_w}, {r})"
        )));
    }
    Ok((1.0 - r) * rho_w)
}

/// Like [`expected_contraction`] but rejects results that do not contract.
pub fn require_contraction(rho_w: f64, r: f64) -> Result<f64> {
    let rho = expected_contraction(rho_w, r)?;
    if rho >= 1.0 {
        return Err(Error::NotContractive(rho));
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    #[default]
    Random,
    Periodic,
}

/// Draws `W_k` from `{W, J_n}`: global averaging with probability `r`
/// (random mode) or every `period` iterations starting at `k = 0`.
#[derive(Debug, Clone)]
pub struct MixingSchedule {
    base: MixingMatrix,
    global: MixingMatrix,
    r: f64,
    mode: ScheduleMode,
    period: Option<usize>,
}

impl MixingSchedule {
    pub fn fixed(base: MixingMatrix) -> Self {
        let n = base.n();
        MixingSchedule {
            base,
            global: MixingMatrix::complete(n),
            r: 0.0,
            mode: ScheduleMode::Random,
            period: None,
        }
    }

    pub fn new(base: MixingMatrix, r: f64, mode: ScheduleMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("global averaging probability {r} not in [0,1]")));
        }
        let period = match mode {
            ScheduleMode::Random => None,
            ScheduleMode::Periodic if r > 0.0 => Some(((1.0 / r).round() as usize).max(1)),
            ScheduleMode::Periodic => None,
        };
        let n = base.n();
        Ok(MixingSchedule {
            base,
            global: MixingMatrix::complete(n),
            r,
            mode,
            period,
        })
    }

    pub fn base(&self) -> &MixingMatrix {
        &self.base
    }

    pub fn global(&self) -> &MixingMatrix {
        &self.global
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    /// Whether iteration `k` averages globally.
    pub fn is_global(&self, seed: u64, k: usize) -> bool {
        match self.mode {
            ScheduleMode::Random => {
                self.r >= 1.0 || (self.r > 0.0 && rng::stream(seed, k as u64, Purpose::Topology).gen::<f64>() < self.r)
            }
            ScheduleMode::Periodic => self.period.is_some_and(|p| k % p == 0),
        }
    }

    pub fn draw(&self, seed: u64, k: usize) -> &MixingMatrix {
        if self.is_global(seed, k) {
            &self.global
        } else {
            &self.base
        }
    }

    pub fn rho_w(&self) -> f64 {
        spectral_gap(&self.base)
    }

    pub fn rho_rw(&self) -> f64 {
        (1.0 - self.r) * self.rho_w()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Largest eigenvalue of `(W-J)^T (W-J)` by power iteration.
    fn power_iteration_gap(w: &MixingMatrix) -> f64 {
        let n = w.n();
        let a = w.matrix() - DMatrix::from_element(n, n, 1.0 / n as f64);
        let ata = a.transpose() * &a;
        let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 0.37 - (i % 3) as f64 * 0.11);
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let next = &ata * &v;
            let norm = next.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let est = v.dot(&next) / v.dot(&v);
            v = next / norm;
            if (est - lambda).abs() < 1e-16 {
                lambda = est;
                break;
            }
            lambda = est;
        }
        lambda
    }

    #[test]
    fn complete_and_identity() {
        let j = build_mixing(&TopologyKind::Complete, 4).unwrap();
        assert!(j.matrix().iter().all(|v| *v == 0.25));
        assert_eq!(spectral_gap(&j), 0.0);
        let i = build_mixing(&TopologyKind::Identity, 3).unwrap();
        assert_eq!(i.matrix(), &DMatrix::<f64>::identity(3, 3));
        let i8 = MixingMatrix::identity(8);
        assert_abs_diff_eq!(spectral_gap(&i8), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lazy_ring_gap_matches_power_iteration_and_closed_form() {
        let w = build_mixing(&TopologyKind::RingDirected, 8).unwrap();
        let gap = spectral_gap(&w);
        assert_abs_diff_eq!(gap, power_iteration_gap(&w), epsilon = 1e-10);
        let unsquared = (std::f64::consts::PI / 8.0).cos();
        assert_abs_diff_eq!(gap.sqrt(), unsquared, epsilon = 1e-12);
        assert_abs_diff_eq!(gap, 0.853_553_390_593_273_7, epsilon = 1e-12);
    }

    #[test]
    fn constructions_are_doubly_stochastic_and_contract() {
        let kinds = [
            TopologyKind::RingDirected,
            TopologyKind::Exponential,
            TopologyKind::Geometric { radius: 0.4, seed: 3 },
        ];
        for kind in &kinds {
            for n in [2, 5, 8, 20] {
                let w = build_mixing(kind, n).unwrap();
                assert!(stochastic_deviation(w.matrix()) <= 1e-12);
                let gap = spectral_gap(&w);
                assert!(gap < 1.0, "{kind:?} n={n} gap={gap}");
                assert_abs_diff_eq!(gap, power_iteration_gap(&w), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn exponential_fifty_contracts_more_slowly_than_complete() {
        let w = build_mixing(&TopologyKind::Exponential, 50).unwrap();
        let gap = spectral_gap(&w);
        assert!(gap > 0.3 && gap < 1.0, "gap {gap}");
        let ring = spectral_gap(&build_mixing(&TopologyKind::RingDirected, 50).unwrap());
        assert!(gap < ring);
    }

    #[test]
    fn gap_is_permutation_invariant() {
        let w = build_mixing(&TopologyKind::Geometric { radius: 0.5, seed: 11 }, 9).unwrap();
        let perm = [4, 0, 8, 2, 6, 1, 3, 7, 5];
        let permuted = DMatrix::from_fn(9, 9, |i, j| w.get(perm[i], perm[j]));
        let permuted = MixingMatrix::new(permuted).unwrap();
        assert_abs_diff_eq!(spectral_gap(&w), spectral_gap(&permuted), epsilon = 1e-12);
    }

    #[test]
    fn disconnected_geometric_errors() {
        let err = build_mixing(&TopologyKind::Geometric { radius: 1e-6, seed: 1 }, 30).unwrap_err();
        assert!(matches!(err, Error::Disconnected { .. }));
    }

    #[test]
    fn rejects_non_stochastic() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.6, 0.6, 0.4, 0.4]);
        assert!(matches!(MixingMatrix::new(bad), Err(Error::NotDoublyStochastic { .. })));
    }

    #[test]
    fn contraction_arithmetic() {
        assert_eq!(expected_contraction(0.92, 0.0).unwrap(), 0.92);
        assert_eq!(expected_contraction(0.92, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(expected_contraction(0.92, 0.05).unwrap(), 0.874, epsilon = 1e-15);
        assert!(matches!(require_contraction(1.0, 0.0), Err(Error::NotContractive(_))));
        assert!(expected_contraction(0.5, 1.5).is_err());
    }

    #[test]
    fn random_schedule_frequency() {
        let r = 0.05;
        let sched = MixingSchedule::new(build_mixing(&TopologyKind::RingDirected, 4).unwrap(), r, ScheduleMode::Random).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|&k| sched.is_global(42, k)).count();
        let freq = hits as f64 / draws as f64;
        let tol = 3.0 * (r * (1.0 - r) / draws as f64).sqrt();
        assert!((freq - r).abs() <= tol, "freq {freq}");
    }

    #[test]
    fn periodic_schedule_starts_at_zero() {
        let sched = MixingSchedule::new(MixingMatrix::identity(3), 0.25, ScheduleMode::Periodic).unwrap();
        assert_eq!(sched.period(), Some(4));
        let hits: Vec<usize> = (0..10).filter(|&k| sched.is_global(0, k)).collect();
        assert_eq!(hits, vec![0, 4, 8]);
    }

    #[test]
    fn csv_round_trip() {
        let w = build_mixing(&TopologyKind::Exponential, 6).unwrap();
        let back = MixingMatrix::from_csv(&w.to_csv()).unwrap();
        assert_eq!(w, back);
    }
}
