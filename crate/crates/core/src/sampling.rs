//! Per-iteration random operators on the augmented sample graph.
//!
//! Samples are indexed globally as `i * m + j` (device `i`, local sample `j`).
//! `Gamma`, `R` and `S` are returned in CSR form; the Kronecker correction
//! `C = G (x) V` is kept factored because `V` is either `I_m` or `J_m`.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sparse::Csr;
use crate::topology::{MixingMatrix, MixingSchedule};

/// The samples selected on every device at one iteration (`Lambda_k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMask {
    n: usize,
    m: usize,
    b: usize,
    selected: Vec<Vec<usize>>,
}

impl SampleMask {
    pub fn from_indices(n: usize, m: usize, selected: Vec<Vec<usize>>) -> Result<Self> {
        if selected.len() != n {
            return Err(Error::Dimension(format!("mask has {} device blocks, expected {n}", selected.len())));
        }
        let b = selected.first().map_or(0, Vec::len);
        if b == 0 || b > m {
            return Err(Error::BatchOutOfRange { b, m });
        }
        let mut selected = selected;
        for block in &mut selected {
            block.sort_unstable();
            block.dedup();
            if block.len() != b || block.iter().any(|&j| j >= m) {
                return Err(Error::InvalidArgument(
                    "every device must select the same number of distinct in-range samples".into(),
                ));
            }
        }
        Ok(SampleMask { n, m, b, selected })
    }

    pub fn full(n: usize, m: usize) -> Self {
        SampleMask {
            n,
            m,
            b: m,
            selected: vec![(0..m).collect(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn samples(&self) -> usize {
        self.n * self.m
    }

    pub fn is_full(&self) -> bool {
        self.b == self.m
    }

    /// Local indices selected on device `i`, ascending.
    pub fn device(&self, i: usize) -> &[usize] {
        &self.selected[i]
    }

    /// Global row indices selected on device `i`.
    pub fn rows(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let base = i * self.m;
        self.selected[i].iter().map(move |j| base + j)
    }

    pub fn contains(&self, row: usize) -> bool {
        let (i, j) = (row / self.m, row % self.m);
        self.selected[i].binary_search(&j).is_ok()
    }

    /// The indicator vector `e_k` of length `M`.
    pub fn indicator(&self) -> Vec<u8> {
        let mut e = vec![0u8; self.samples()];
        for i in 0..self.n {
            for r in self.rows(i) {
                e[r] = 1;
            }
        }
        e
    }

    pub fn lambda(&self) -> Csr {
        let entries = (0..self.n).flat_map(|i| self.rows(i).map(|r| (r, r, 1.0))).collect();
        Csr::from_triplets(self.samples(), self.samples(), entries)
    }
}

/// Uniform without-replacement selection of `b` of `m` samples on each device.
pub fn draw_mask<R: Rng + ?Sized>(n: usize, m: usize, b: usize, rng: &mut R) -> Result<SampleMask> {
    if b == 0 || b > m {
        return Err(Error::BatchOutOfRange { b, m });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("device count must be positive".into()));
    }
    let selected = (0..n)
        .map(|_| {
            let mut idx = index::sample(rng, m, b).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    Ok(SampleMask { n, m, b, selected })
}

/// `V_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalMix {
    Identity,
    Average,
}

/// `G_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackingMix {
    Identity,
    SameAsMixing,
}

/// Everything random about step `k -> k+1`.
#[derive(Debug, Clone)]
pub struct IterationDraw {
    pub k: usize,
    pub mask: SampleMask,
    pub mask_next: SampleMask,
    pub mixing: MixingMatrix,
    pub global: bool,
    pub tracking: TrackingMix,
    pub local: LocalMix,
}

impl IterationDraw {
    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn m(&self) -> usize {
        self.mask.m()
    }

    pub fn b(&self) -> usize {
        self.mask.b()
    }

    pub fn samples(&self) -> usize {
        self.mask.samples()
    }

    pub fn tracking_matrix(&self) -> DMatrix<f64> {
        match self.tracking {
            TrackingMix::Identity => DMatrix::identity(self.n(), self.n()),
            TrackingMix::SameAsMixing => self.mixing.matrix().clone(),
        }
    }

    fn check(&self) {
        debug_assert_eq!(self.mask.n(), self.mask_next.n());
        debug_assert_eq!(self.mask.m(), self.mask_next.m());
        debug_assert_eq!(self.mixing.n(), self.mask.n());
    }
}

/// `Gamma_k = Lambda_{k+1} (W_k (x) 11^T) Lambda_k / b_k`.
pub fn build_gamma(draw: &IterationDraw) -> Csr {
    draw.check();
    let n = draw.n();
    let inv_b = 1.0 / draw.b() as f64;
    let mut entries = Vec::with_capacity(n * n * draw.b() * draw.mask_next.b());
    for i in 0..n {
        for src in 0..n {
            let w = draw.mixing.get(i, src);
            if w == 0.0 {
                continue;
            }
            for row in draw.mask_next.rows(i) {
                entries.extend(draw.mask.rows(src).map(|col| (row, col, w * inv_b)));
            }
        }
    }
    Csr::from_triplets(draw.samples(), draw.samples(), entries)
}

/// `R_k = I_M - Lambda_{k+1} + Gamma_k`.
pub fn build_row_mixing(draw: &IterationDraw, gamma: &Csr) -> Csr {
    let big_m = draw.samples();
    let keep = (0..big_m)
        .filter(|&r| !draw.mask_next.contains(r))
        .map(|r| (r, r, 1.0))
        .collect();
    Csr::from_triplets(big_m, big_m, keep).add(gamma)
}

/// `C_k = G_k (x) V_k`, stored factored.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub tracking: DMatrix<f64>,
    pub local: LocalMix,
    pub m: usize,
}

impl Correction {
    pub fn samples(&self) -> usize {
        self.tracking.nrows() * self.m
    }

    pub fn local_matrix(&self) -> DMatrix<f64> {
        match self.local {
            LocalMix::Identity => DMatrix::identity(self.m, self.m),
            LocalMix::Average => DMatrix::from_element(self.m, self.m, 1.0 / self.m as f64),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.tracking.kronecker(&self.local_matrix())
    }

    /// `C * y` without forming the `M x M` matrix.
    pub fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.tracking.nrows();
        let m = self.m;
        let d = y.ncols();
        assert_eq!(y.nrows(), n * m, "correction shape mismatch");
        let local = match self.local {
            LocalMix::Identity => y.clone(),
            LocalMix::Average => {
                let mut avg = DMatrix::zeros(n * m, d);
                for i in 0..n {
                    let mean = y.rows(i * m, m).row_mean();
                    for j in 0..m {
                        avg.row_mut(i * m + j).copy_from(&mean);
                    }
                }
                avg
            }
        };
        let mut out = DMatrix::zeros(n * m, d);
        for i in 0..n {
            for src in 0..n {
                let g = self.tracking[(i, src)];
                if g == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let add = local.row(src * m + j) * g;
                    let mut row = out.row_mut(i * m + j);
                    row += add;
                }
            }
        }
        out
    }
}

pub fn build_correction(draw: &IterationDraw) -> Correction {
    Correction {
        tracking: draw.tracking_matrix(),
        local: draw.local,
        m: draw.m(),
    }
}

/// `S_k = (I_n (x) 1_m^T) Lambda_k / b_k`.
pub fn build_projection(mask: &SampleMask) -> Csr {
    let inv_b = 1.0 / mask.b() as f64;
    let entries = (0..mask.n())
        .flat_map(|i| mask.rows(i).map(move |r| (i, r, inv_b)))
        .collect();
    Csr::from_triplets(mask.n(), mask.samples(), entries)
}

/// How `V_k` and the batch size `b_k` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LocalRule {
    /// `V_k = I_m`, `b_k = b`.
    Plain,
    /// `V_k = J_m`, `b_k = b`.
    Table,
    /// `V_k = J_m` with `b_k = m` w.p. `p`, otherwise `V_k = I_m` with `b_k = b`.
    Refresh { p: f64 },
    /// `V_k = J_m` always, `b_k = m` w.p. `p` and `b` otherwise.
    Switching { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationRecord {
    pub global: bool,
    pub local: LocalMix,
    pub b: usize,
}

/// The shared randomness protocol: every engine driven by the same plan and
/// seed sees identical draws.
#[derive(Debug, Clone)]
pub struct DrawPlan {
    pub m: usize,
    pub b: usize,
    pub schedule: MixingSchedule,
    pub local: LocalRule,
    pub tracking: TrackingMix,
    pub seed: u64,
}

impl DrawPlan {
    pub fn n(&self) -> usize {
        self.schedule.n()
    }

    pub fn record(&self, k: usize) -> IterationRecord {
        let coin = |p: f64| p >= 1.0 || (p > 0.0 && rng::stream(self.seed, k as u64, Purpose::VarianceReduction).gen::<f64>() < p);
        let (local, b) = match self.local {
            LocalRule::Plain => (LocalMix::Identity, self.b),
            LocalRule::Table => (LocalMix::Average, self.b),
            LocalRule::Refresh { p } => {
                if coin(p) {
                    (LocalMix::Average, self.m)
                } else {
                    (LocalMix::Identity, self.b)
                }
            }
            LocalRule::Switching { p } => (LocalMix::Average, if coin(p) { self.m } else { self.b }),
        };
        IterationRecord {
            global: self.schedule.is_global(self.seed, k),
            local,
            b,
        }
    }

    pub fn mask(&self, k: usize) -> SampleMask {
        let b = self.record(k).b;
        let mut rng = rng::stream(self.seed, k as u64, Purpose::Mask);
        draw_mask(self.n(), self.m, b, &mut rng).expect("plan batch size validated")
    }

    pub fn draw(&self, k: usize) -> IterationDraw {
        let rec = self.record(k);
        let mixing = if rec.global {
            self.schedule.global().clone()
        } else {
            self.schedule.base().clone()
        };
        IterationDraw {
            k,
            mask: self.mask(k),
            mask_next: self.mask(k + 1),
            mixing,
            global: rec.global,
            tracking: self.tracking,
            local: rec.local,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.b > self.m {
            return Err(Error::BatchOutOfRange { b: self.b, m: self.m });
        }
        if let LocalRule::Refresh { p } | LocalRule::Switching { p } = self.local {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("probability p = {p} not in [0,1]")));
            }
        }
        Ok(())
    }
}
