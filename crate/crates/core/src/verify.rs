//! Executable property suites shared by the acceptance tests and `spp verify`.
//!
//! Each suite returns a report with the measured quantities; the caller decides
//! pass or fail against its tolerance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{make_stepper, max_stepsize, Hyper, Preset, Stepper};
use crate::datasplit::{allocation_counts, allocation_hmax, LabelAllocation};
use crate::error::Result;
use crate::metrics::{predicted_rate, rate_fit, seed_average, IterationMetrics, LyapunovCoeffs, MetricsContext, Regime};
use crate::objectives::{FiniteSum, Logistic, Quadratic, CLASSES};
use crate::par::Exec;
use crate::reference::{init_state, AugmentedState};
use crate::sampling::{
    build_correction, build_gamma, build_projection, build_row_mixing, draw_mask, IterationDraw, LocalMix, TrackingMix,
};
use crate::sparse::Csr;
use crate::topology::{build_mixing, MixingMatrix, ScheduleMode, TopologyKind};

/// Random anchors in `[-2, 2]`, curvatures in `[0.5, 1.5]`, `mu_reg = 0.05`.
pub fn random_quadratic(n: usize, m: usize, d: usize, seed: u64) -> Quadratic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = (0..n)
        .map(|_| (0..m).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))).collect())
        .collect();
    let curvature = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
    Quadratic::with_curvature(anchors, curvature, 0.05).expect("valid random quadratic")
}

/// Random features in `[-1, 1]`, uniform labels, contiguous split.
pub fn random_logistic(total: usize, features: usize, n: usize, lambda: f64, seed: u64) -> Result<Logistic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(total, features, |_, _| rng.gen_range(-1.0..1.0));
    let labels = (0..total).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
    Logistic::contiguous(x, labels, lambda, n)
}

/// Anchors `(0,2), (4,6), (0,2), (4,6)`: `x* = 3`, `sigma* = 1`, `zeta* = 4`.
pub fn heterogeneous_toy() -> Quadratic {
    Quadratic::scalar(&[&[0.0, 2.0], &[4.0, 6.0], &[0.0, 2.0], &[4.0, 6.0]], 0.0).expect("valid toy")
}

/// Problem and stepper for `preset`; centralized presets get the pooled problem.
pub fn preset_setup(preset: Preset, problem: &Quadratic, base: &MixingMatrix, alpha: f64, b: usize, r: f64, p: f64) -> Result<(Quadratic, Stepper)> {
    let problem = if preset.is_centralized() { problem.pooled() } else { problem.clone() };
    let schedule = preset.schedule(base.clone(), r, ScheduleMode::Random)?;
    let p = preset.uses_p().then_some(p);
    let stepper = make_stepper(preset, schedule, &problem, alpha, Hyper { b, p })?;
    Ok((problem, stepper))
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow {
    pub preset: Preset,
    pub max_x_dev: f64,
    pub max_y_dev: f64,
    /// Largest deviation of the gradient table and delayed table, where the
    /// reduced engine keeps them.
    pub max_table_dev: Option<f64>,
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Steps both engines on shared draws and records the worst per-coordinate gap
/// between the reduced state and the projected reference state.
pub fn equivalence(preset: Preset, problem: &Quadratic, base: &MixingMatrix, iterations: usize, seed: u64) -> Result<EquivalenceRow> {
    let (problem, stepper) = preset_setup(preset, problem, base, 0.05, 2, 0.3, 0.3)?;
    let plan = stepper.plan(seed);
    let x0 = DVector::from_fn(problem.dim(), |c, _| 0.5 - c as f64 * 0.25);
    let mut reduced = stepper.init(&problem, &x0, seed)?;
    let mut reference = init_state(&problem, &x0, plan.mask(0))?;
    let mut row = EquivalenceRow {
        preset,
        max_x_dev: 0.0,
        max_y_dev: 0.0,
        max_table_dev: None,
    };
    let mut compare = |reduced: &crate::algorithms::DeviceState, reference: &AugmentedState| {
        let rv = reduced.view(&problem);
        let fv = reference.view();
        row.max_x_dev = row.max_x_dev.max(max_abs(&rv.xhat, &fv.xhat));
        row.max_y_dev = row.max_y_dev.max(max_abs(&rv.yhat, &fv.yhat));
        if let (Some(g), Some(dl)) = (&rv.grads, &rv.delayed) {
            let dev = max_abs(g, fv.grads.as_ref().expect("reference keeps grads"))
                .max(max_abs(dl, fv.delayed.as_ref().expect("reference keeps delayed grads")));
            row.max_table_dev = Some(row.max_table_dev.unwrap_or(0.0).max(dev));
        }
    };
    compare(&reduced, &reference);
    for k in 0..iterations {
        let draw = plan.draw(k);
        stepper.step(&problem, &mut reduced, &draw)?;
        reference.step(&problem, &draw, stepper.alpha())?;
        compare(&reduced, &reference);
    }
    Ok(row)
}

pub fn equivalence_all(iterations: usize, seed: u64, exec: Exec) -> Result<Vec<EquivalenceRow>> {
    let problem = random_quadratic(4, 6, 3, seed);
    let base = build_mixing(&TopologyKind::RingDirected, 4)?;
    exec.map(&Preset::ALL, |&p| equivalence(p, &problem, &base, iterations, seed))
        .into_iter()
        .collect()
}

/// Largest tracking violation along a reference run of every preset.
pub fn tracking_invariant(iterations: usize, seed: u64, exec: Exec) -> Result<Vec<(Preset, f64)>> {
    let problem = random_quadratic(4, 6, 3, seed ^ 0x5eed);
    let base = build_mixing(&TopologyKind::RingDirected, 4)?;
    exec.map(&Preset::ALL, |&preset| {
        let (problem, stepper) = preset_setup(preset, &problem, &base, 0.05, 2, 0.3, 0.3)?;
        let plan = stepper.plan(seed);
        let mut st = init_state(&problem, &DVector::from_element(problem.dim(), 1.0), plan.mask(0))?;
        let mut worst = st.tracking_violation();
        for k in 0..iterations {
            st.step(&problem, &plan.draw(k), stepper.alpha())?;
            worst = worst.max(st.tracking_violation());
        }
        Ok((preset, worst))
    })
    .into_iter()
    .collect()
}

/// A random doubly stochastic matrix: a convex combination of permutations.
pub fn random_doubly_stochastic<R: Rng>(n: usize, rng: &mut R) -> MixingMatrix {
    let terms = 3;
    let weights: Vec<f64> = (0..terms).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut w = DMatrix::zeros(n, n);
    for wt in weights {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, &j) in perm.iter().enumerate() {
            w[(i, j)] += wt / total;
        }
    }
    MixingMatrix::new(w).expect("convex combination of permutations is doubly stochastic")
}

/// A draw with random sizes, mixing matrix, correction and batch sizes.
pub fn random_draw<R: Rng>(rng: &mut R) -> IterationDraw {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=6);
    let (b0, b1) = (rng.gen_range(1..=m), rng.gen_range(1..=m));
    IterationDraw {
        k: 0,
        mask: draw_mask(n, m, b0, rng).expect("valid batch"),
        mask_next: draw_mask(n, m, b1, rng).expect("valid batch"),
        mixing: random_doubly_stochastic(n, rng),
        global: false,
        tracking: if rng.gen() { TrackingMix::SameAsMixing } else { TrackingMix::Identity },
        local: if rng.gen() { LocalMix::Average } else { LocalMix::Identity },
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MatrixLawReport {
    pub draws: usize,
    pub r_row_sum: f64,
    pub c_row_sum: f64,
    pub c_col_sum: f64,
    pub projection_r: f64,
    pub projection_gamma: f64,
    /// Draws where `Lambda (I - Lambda)` had a nonzero entry.
    pub lambda_failures: usize,
}

impl MatrixLawReport {
    fn merge(self, o: Self) -> Self {
        MatrixLawReport {
            draws: self.draws + o.draws,
            r_row_sum: self.r_row_sum.max(o.r_row_sum),
            c_row_sum: self.c_row_sum.max(o.c_row_sum),
            c_col_sum: self.c_col_sum.max(o.c_col_sum),
            projection_r: self.projection_r.max(o.projection_r),
            projection_gamma: self.projection_gamma.max(o.projection_gamma),
            lambda_failures: self.lambda_failures + o.lambda_failures,
        }
    }
}

fn check_draw(draw: &IterationDraw) -> MatrixLawReport {
    let gamma = build_gamma(draw);
    let r = build_row_mixing(draw, &gamma);
    let c = build_correction(draw).to_dense();
    let dev1 = |v: Vec<f64>| v.into_iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let s_next = build_projection(&draw.mask_next);
    let ws = draw.mixing.matrix() * build_projection(&draw.mask).to_dense();
    let inf_norm = |a: DMatrix<f64>| a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lam = draw.mask.lambda();
    let complement = Csr::identity(draw.samples()).add(&lam.scale(-1.0));
    MatrixLawReport {
        draws: 1,
        r_row_sum: dev1(r.row_sums()),
        c_row_sum: dev1(c.row_iter().map(|r| r.sum()).collect()),
        c_col_sum: dev1(c.column_iter().map(|c| c.sum()).collect()),
        projection_r: inf_norm(s_next.matmul(&r).to_dense() - &ws),
        projection_gamma: inf_norm(s_next.matmul(&gamma).to_dense() - &ws),
        lambda_failures: usize::from(lam.matmul(&complement).to_dense().iter().any(|&v| v != 0.0)),
    }
}

pub fn matrix_laws(draws: usize, seed: u64, exec: Exec) -> MatrixLawReport {
    let chunks = 64;
    exec.map_range(chunks, |chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let count = draws / chunks + usize::from(chunk < draws % chunks);
        (0..count).map(|_| check_draw(&random_draw(&mut rng))).fold(MatrixLawReport::default(), MatrixLawReport::merge)
    })
    .into_iter()
    .fold(MatrixLawReport::default(), MatrixLawReport::merge)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplingBoundReport {
    pub n: usize,
    pub m: usize,
    pub b: usize,
    pub draws: usize,
    pub top_eigenvalue: f64,
    pub std_err: f64,
    pub bound: f64,
}

/// Monte Carlo estimate of the top eigenvalue of `E[S^T S]`, with a standard
/// error from equal-size batch means.
pub fn sampling_bound(n: usize, m: usize, b: usize, draws: usize, batches: usize, seed: u64, exec: Exec) -> Result<SamplingBoundReport> {
    let big_m = n * m;
    let per = draws / batches;
    let sums: Vec<DMatrix<f64>> = exec
        .map_range(batches, |batch| -> Result<DMatrix<f64>> {
            let mut acc = DMatrix::zeros(big_m, big_m);
            let w = 1.0 / (b * b) as f64;
            for t in 0..per {
                let mut rng = crate::rng::stream(seed, (batch * per + t) as u64, crate::rng::Purpose::Mask);
                let mask = draw_mask(n, m, b, &mut rng)?;
                for i in 0..n {
                    for r in mask.rows(i) {
                        for c in mask.rows(i) {
                            acc[(r, c)] += w;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let top = |a: &DMatrix<f64>| a.clone().symmetric_eigen().eigenvalues.max();
    let total = sums.iter().fold(DMatrix::zeros(big_m, big_m), |a, s| a + s) / (per * batches) as f64;
    let batch_tops: Vec<f64> = sums.iter().map(|s| top(&(s / per as f64))).collect();
    let mean = batch_tops.iter().sum::<f64>() / batches as f64;
    let var = batch_tops.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(SamplingBoundReport {
        n,
        m,
        b,
        draws: per * batches,
        top_eigenvalue: top(&total),
        std_err: (var / batches as f64).sqrt(),
        bound: 1.0 / m as f64,
    })
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ObjectiveReport {
    pub pairs: usize,
    /// Largest `lhs - rhs` of the averaged smoothness inequality.
    pub worst_smoothness_excess: f64,
    /// Largest relative gap between analytic and central-difference gradients.
    pub worst_fd_rel: f64,
}

fn fd_rel(problem: &dyn FiniteSum, i: usize, j: usize, x: &DVector<f64>) -> f64 {
    let h = 1e-5;
    let g = problem.sample_grad(i, j, x);
    let fd = DVector::from_fn(x.len(), |c, _| {
        let (mut p, mut q) = (x.clone(), x.clone());
        p[c] += h;
        q[c] -= h;
        (problem.sample_value(i, j, &p) - problem.sample_value(i, j, &q)) / (2.0 * h)
    });
    (&g - &fd).norm() / g.norm().max(1e-6)
}

/// Averaged smoothness on random pairs and finite-difference gradient checks.
pub fn objective_properties(problem: &dyn FiniteSum, pairs: usize, fd_points: usize, scale: f64, seed: u64) -> ObjectiveReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, _) = problem.smoothness();
    let d = problem.dim();
    let (n, m) = (problem.n(), problem.m());
    let mut rep = ObjectiveReport {
        pairs,
        worst_smoothness_excess: f64::NEG_INFINITY,
        worst_fd_rel: 0.0,
    };
    for _ in 0..pairs {
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale));
        let y = DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale));
        for i in 0..n {
            let lhs = (0..m)
                .map(|j| (problem.sample_grad(i, j, &x) - problem.sample_grad(i, j, &y)).norm_squared())
                .sum::<f64>()
                / m as f64;
            let bregman = problem.device_value(i, &x) - problem.device_value(i, &y) - problem.device_grad(i, &y).dot(&(&x - &y));
            let rhs = 2.0 * l * bregman;
            rep.worst_smoothness_excess = rep.worst_smoothness_excess.max(lhs - rhs);
        }
    }
    for _ in 0..fd_points {
        let x = DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale));
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..m));
        rep.worst_fd_rel = rep.worst_fd_rel.max(fd_rel(problem, i, j, &x));
    }
    rep
}

/// Expected cyclic allocation for `n = 8`, `M = 50000`, `h = 20`, `m0 = 555`.
pub const TABLE_H20: [[usize; CLASSES]; 8] = [
    [555, 575, 595, 615, 635, 655, 675, 695, 625, 625],
    [575, 595, 615, 635, 655, 675, 695, 555, 625, 625],
    [595, 615, 635, 655, 675, 695, 555, 575, 625, 625],
    [615, 635, 655, 675, 695, 555, 575, 595, 625, 625],
    [635, 655, 675, 695, 555, 575, 595, 615, 625, 625],
    [655, 675, 695, 555, 575, 595, 615, 635, 625, 625],
    [675, 695, 555, 575, 595, 615, 635, 655, 625, 625],
    [695, 555, 575, 595, 615, 635, 655, 675, 625, 625],
];

/// Expected banded allocation for `n = 8`, `M = 50000`.
pub const TABLE_HMAX: [[usize; CLASSES]; 8] = [
    [1000, 0, 0, 0, 1000, 1000, 1000, 1000, 625, 625],
    [1000, 1000, 0, 0, 0, 1000, 1000, 1000, 625, 625],
    [1000, 1000, 1000, 0, 0, 0, 1000, 1000, 625, 625],
    [1000, 1000, 1000, 1000, 0, 0, 0, 1000, 625, 625],
    [1000, 1000, 1000, 1000, 1000, 0, 0, 0, 625, 625],
    [0, 1000, 1000, 1000, 1000, 1000, 0, 0, 625, 625],
    [0, 0, 1000, 1000, 1000, 1000, 1000, 0, 625, 625],
    [0, 0, 0, 1000, 1000, 1000, 1000, 1000, 625, 625],
];

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub h20_matches: bool,
    pub hmax_matches: bool,
    pub constraints_hold: bool,
}

pub fn split_tables() -> Result<SplitReport> {
    let h20 = allocation_counts(8, 50_000, 20, Some(555))?;
    let hmax = allocation_hmax(8, 50_000)?;
    let exact = |a: &LabelAllocation| {
        a.row_sums().iter().all(|&s| s == a.total / a.n()) && a.col_sums().iter().all(|&s| s == a.total / CLASSES)
    };
    Ok(SplitReport {
        h20_matches: h20.counts == TABLE_H20,
        hmax_matches: hmax.counts == TABLE_HMAX,
        constraints_hold: exact(&h20) && exact(&hmax),
    })
}

/// Seed-averaged metrics of one configuration.
pub fn seed_sweep(
    problem: &dyn FiniteSum,
    stepper: &Stepper,
    coeffs: LyapunovCoeffs,
    x0: &DVector<f64>,
    seeds: &[u64],
    iterations: usize,
    eval_every: usize,
    exec: Exec,
) -> Result<Vec<IterationMetrics>> {
    let x_star = problem.reference_optimum()?;
    let ctx = MetricsContext::new(problem, x_star, coeffs);
    let runs = exec
        .map(seeds, |&s| stepper.run(problem, x0, s, iterations, eval_every, &ctx).map(|t| t.metrics))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    seed_average(&runs)
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearRateReport {
    pub preset: Preset,
    pub alpha: f64,
    pub rho_rw: f64,
    pub predicted_rate: f64,
    /// Iterations the predicted rate needs to shrink `T` by the target factor.
    pub predicted_iterations: usize,
    /// First evaluated iteration with seed-averaged `T_k <= target * T_0`.
    pub reached_at: Option<usize>,
    pub budget: usize,
    pub fitted_rate: f64,
    pub r_squared: f64,
}

/// Runs `preset` at the capped step size until the seed-averaged Lyapunov
/// function falls by `target`, doubling the horizon up to `budget_factor` times
/// the predicted iteration count.
pub fn gt_linear_rate(preset: Preset, r: f64, seeds: &[u64], target: f64, budget_factor: usize, exec: Exec) -> Result<LinearRateReport> {
    let problem = heterogeneous_toy();
    let base = build_mixing(&TopologyKind::RingDirected, 4)?;
    let (problem, probe) = preset_setup(preset, &problem, &base, 1.0, 1, r, 1.0)?;
    let prm = probe.params();
    let (l, mu) = problem.smoothness();
    let regime = preset.regime();
    let alpha = max_stepsize(regime, l, prm.rho_rw)?;
    let stepper = probe.with_alpha(alpha);
    let coeffs = stepper.lyapunov(&problem, regime)?;
    let rate = predicted_rate(regime, alpha, mu, prm.rho_rw, prm.p, prm.q);
    let predicted_iterations = ((1.0 / target).ln() / (1.0 - rate)).ceil() as usize;
    let budget = budget_factor * predicted_iterations;
    let eval_every = (predicted_iterations / 400).max(1);
    let x0 = DVector::zeros(problem.dim());
    let mut horizon = predicted_iterations.min(budget);
    loop {
        let avg = seed_sweep(&problem, &stepper, coeffs, &x0, seeds, horizon, eval_every, exec)?;
        let series: Vec<(usize, f64)> = avg.iter().map(|m| (m.k, m.lyapunov.expect("GT presets measure every term"))).collect();
        let t0 = series[0].1;
        let reached_at = series.iter().find(|&&(_, t)| t <= target * t0).map(|&(k, _)| k);
        if reached_at.is_some() || horizon >= budget {
            let burn_in = predicted_iterations / 20;
            let fit = rate_fit(&series, burn_in, 1e3)?;
            return Ok(LinearRateReport {
                preset,
                alpha,
                rho_rw: prm.rho_rw,
                predicted_rate: rate,
                predicted_iterations,
                reached_at,
                budget,
                fitted_rate: fit.rate,
                r_squared: fit.r_squared,
            });
        }
        horizon = (horizon * 2).min(budget);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HeterogeneityReport {
    pub alpha: f64,
    pub iterations: usize,
    pub dsgd_opt_gap: f64,
    pub gt_saga_opt_gap: f64,
}

/// Final seed-averaged optimality gap of DSGD and GT-SAGA at a shared step size.
pub fn heterogeneity_contrast(alpha: f64, iterations: usize, seeds: &[u64], exec: Exec) -> Result<HeterogeneityReport> {
    let problem = heterogeneous_toy();
    let base = build_mixing(&TopologyKind::RingDirected, 4)?;
    let x0 = DVector::zeros(1);
    let mut finals = [0.0; 2];
    for (slot, preset) in [Preset::Dsgd, Preset::GtSaga].into_iter().enumerate() {
        let (problem, stepper) = preset_setup(preset, &problem, &base, alpha, 1, 0.0, 1.0)?;
        let coeffs = LyapunovCoeffs::opt_gap_only(preset.regime());
        let avg = seed_sweep(&problem, &stepper, coeffs, &x0, seeds, iterations, iterations, exec)?;
        finals[slot] = avg.last().expect("nonempty").opt_gap;
    }
    Ok(HeterogeneityReport {
        alpha,
        iterations,
        dsgd_opt_gap: finals[0],
        gt_saga_opt_gap: finals[1],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchScalingReport {
    pub preset: Preset,
    pub m: usize,
    pub b_small: usize,
    pub alpha: f64,
    pub iterations_small: Option<usize>,
    pub iterations_full: Option<usize>,
    pub measured_ratio: Option<f64>,
    pub predicted_ratio: f64,
}

/// Iterations for the seed-averaged `T` of a centralized VR preset to fall by
/// `target`, at batch `m/4` and at batch `m`.
pub fn batch_scaling(preset: Preset, m: usize, target: f64, seeds: &[u64], max_iterations: usize, exec: Exec) -> Result<BatchScalingReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let anchors = vec![(0..m).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0))).collect()];
    let problem = Quadratic::new(anchors, 0.0)?;
    let (l, mu) = problem.smoothness();
    let alpha = max_stepsize(Regime::VrOnly, l, 0.0)?;
    let x0 = DVector::from_element(2, 5.0);
    let single = MixingMatrix::identity(1);
    let b_small = m / 4;
    let mut counts = [None, None];
    for (slot, b) in [b_small, m].into_iter().enumerate() {
        let p = b as f64 / m as f64;
        let (problem, stepper) = preset_setup(preset, &problem, &single, alpha, b, 0.0, p)?;
        let coeffs = stepper.lyapunov(&problem, Regime::VrOnly)?;
        let avg = seed_sweep(&problem, &stepper, coeffs, &x0, seeds, max_iterations, 1, exec)?;
        let t0 = avg[0].lyapunov.expect("VR presets measure every term");
        counts[slot] = avg.iter().find(|r| r.lyapunov.expect("measured") <= target * t0).map(|r| r.k);
    }
    let kappa = 1.0 / (alpha * mu);
    let predicted_ratio = (m as f64 / b_small as f64 + kappa) / (1.0 + kappa);
    let measured_ratio = match counts {
        [Some(a), Some(b)] if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    };
    Ok(BatchScalingReport {
        preset,
        m,
        b_small,
        alpha,
        iterations_small: counts[0],
        iterations_full: counts[1],
        measured_ratio,
        predicted_ratio,
    })
}

/// Diagonal quadratic with log-uniform curvatures from 1 down to `1e-5` plus
/// one flat direction, heterogeneous anchors, and unit initial error along
/// every curved direction.
pub fn convex_problem() -> Result<(Quadratic, DVector<f64>)> {
    let curved = 40;
    let mut h: Vec<f64> = (0..curved).map(|c| 10f64.powf(-5.0 * c as f64 / (curved - 1) as f64)).collect();
    h.push(0.0);
    let d = h.len();
    let offsets = [-1.5, 0.5, 1.5, -0.5];
    let anchors = offsets
        .iter()
        .map(|&o| vec![DVector::from_fn(d, |c, _| o + 0.1 * c as f64), DVector::from_fn(d, |c, _| o - 0.2 + 0.1 * c as f64)])
        .collect();
    let problem = Quadratic::with_curvature(anchors, DVector::from_vec(h), 0.0)?;
    let x0 = problem.reference_optimum()? + DVector::from_element(d, 1.0);
    Ok((problem, x0))
}

#[derive(Debug, Clone, Serialize)]
pub struct SublinearReport {
    pub alpha: f64,
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
}

/// Log-log slope of `min_{k <= K} f_gap` for GT-SAGA on [`convex_problem`].
pub fn convex_slope(alpha: f64, k_min: usize, k_max: usize, seeds: &[u64], exec: Exec) -> Result<SublinearReport> {
    let (problem, x0) = convex_problem()?;
    let base = build_mixing(&TopologyKind::RingDirected, 4)?;
    let (problem, stepper) = preset_setup(Preset::GtSaga, &problem, &base, alpha, 1, 0.0, 1.0)?;
    let coeffs = LyapunovCoeffs::opt_gap_only(Regime::GtVrConvex);
    let avg = seed_sweep(&problem, &stepper, coeffs, &x0, seeds, k_max, 1, exec)?;
    let mut best = f64::INFINITY;
    let running: Vec<f64> = avg
        .iter()
        .map(|r| {
            best = best.min(r.f_gap);
            best
        })
        .collect();
    let grid = 21;
    let (lo, hi) = ((k_min as f64).ln(), (k_max as f64).ln());
    let points: Vec<(usize, f64)> = (0..grid)
        .map(|g| {
            let k = (lo + (hi - lo) * g as f64 / (grid - 1) as f64).exp().round() as usize;
            (k, running[k])
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / grid as f64, ys.iter().sum::<f64>() / grid as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(SublinearReport {
        alpha,
        points,
        slope: sxy / sxx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_constants() {
        let c = crate::objectives::problem_constants(&heterogeneous_toy()).unwrap();
        assert_eq!((c.x_star[0], c.sigma_star, c.zeta_star), (3.0, 1.0, 4.0));
    }

    #[test]
    fn small_suites_run() {
        let rows = equivalence_all(20, 1, Exec::Sequential).unwrap();
        assert!(rows.iter().all(|r| r.max_x_dev < 1e-9 && r.max_y_dev < 1e-9), "{rows:?}");
        let laws = matrix_laws(200, 2, Exec::Sequential);
        assert_eq!(laws.draws, 200);
        assert_eq!(laws.lambda_failures, 0);
        assert!(split_tables().unwrap().h20_matches);
    }
}
