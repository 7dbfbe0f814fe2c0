use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spp_core::datasplit::{allocation_counts, partition};
use spp_core::metrics::{rate_fit, Regime};
use spp_core::objectives::{heterogeneity_constants, FiniteSum, Quadratic, CLASSES};
use spp_core::par::Exec;
use spp_core::sampling::draw_mask;
use spp_core::topology::{build_mixing, spectral_gap, TopologyKind};
use spp_core::verify::{self, random_quadratic};
use spp_core::{max_stepsize, Preset};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_select_exactly_b_distinct_rows_per_device(n in 1usize..6, m in 1usize..9, seed: u64) {
        let b = 1 + (seed as usize) % m;
        let mask = draw_mask(n, m, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let e = mask.indicator();
        prop_assert_eq!(e.len(), n * m);
        for i in 0..n {
            prop_assert_eq!(e[i * m..(i + 1) * m].iter().map(|&v| v as usize).sum::<usize>(), b);
            prop_assert!(mask.rows(i).all(|r| r / m == i));
        }
    }

    #[test]
    fn oversized_batches_are_rejected(m in 1usize..9, extra in 1usize..4) {
        prop_assert!(draw_mask(2, m, m + extra, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn built_topologies_are_doubly_stochastic(n in 2usize..20, kind in 0usize..3) {
        let kind = [TopologyKind::RingDirected, TopologyKind::Exponential, TopologyKind::Complete][kind].clone();
        let w = build_mixing(&kind, n).unwrap();
        for (row, col) in w.matrix().row_iter().zip(w.matrix().column_iter()) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        // connected graphs contract strictly
        let rho = spectral_gap(&w);
        prop_assert!((0.0..1.0).contains(&rho), "rho_W = {}", rho);
    }

    #[test]
    fn step_caps_shrink_as_the_network_slows(l in 0.1f64..10.0, a in 0.0f64..0.99, b in 0.0f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for regime in [Regime::NonVr, Regime::VrOnly, Regime::GtVr] {
            let fast = max_stepsize(regime, l, lo).unwrap();
            let slow = max_stepsize(regime, l, hi).unwrap();
            prop_assert!(fast > 0.0 && slow <= fast);
            prop_assert!(fast.is_finite());
        }
    }

    #[test]
    fn cyclic_allocations_satisfy_both_constraints(n in 1usize..11, h in 0i64..6, scale in 1usize..30) {
        let total = 10 * n * 10 * scale;
        if let Ok(alloc) = allocation_counts(n, total, h, None) {
            prop_assert!(alloc.row_sums().iter().all(|&s| s == total / n));
            prop_assert!(alloc.col_sums().iter().all(|&s| s == total / CLASSES));
        }
    }

    #[test]
    fn partitions_realize_the_allocation(n in 1usize..6, seed: u64) {
        let total = 20 * n * CLASSES;
        let labels: Vec<u8> = (0..total + 37).map(|r| (r % CLASSES) as u8).collect();
        let alloc = allocation_counts(n, total, 1, None).unwrap();
        let parts = partition(&labels, &alloc, seed).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (dev, counts) in parts.iter().zip(&alloc.counts) {
            let mut got = [0usize; CLASSES];
            for &r in dev {
                got[labels[r] as usize] += 1;
                prop_assert!(seen.insert(r));
            }
            prop_assert_eq!(&got, counts);
        }
    }

    #[test]
    fn heterogeneity_is_invariant_to_relabeling_within_devices(seed: u64, shift in 1usize..6) {
        let q = random_quadratic(3, 6, 2, seed);
        let anchors: Vec<Vec<DVector<f64>>> = (0..3)
            .map(|i| (0..6).map(|j| q.anchor(i, (j + shift) % 6).clone()).collect())
            .collect();
        let p = Quadratic::with_curvature(anchors, q.curvature().clone(), q.mu_reg()).unwrap();
        let xs = q.reference_optimum().unwrap();
        let (s1, z1) = heterogeneity_constants(&q, &xs);
        let (s2, z2) = heterogeneity_constants(&p, &xs);
        prop_assert!((s1 - s2).abs() <= 1e-12 * (1.0 + s1));
        prop_assert!((z1 - z2).abs() <= 1e-12 * (1.0 + z1));
    }

    #[test]
    fn geometric_series_fit_recovers_the_ratio(rate in 0.3f64..0.99, len in 12usize..60) {
        let series: Vec<(usize, f64)> = (0..len).map(|k| (k, rate.powi(k as i32))).collect();
        let fit = rate_fit(&series, 0, 1e3).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }
}

#[test]
fn skewed_splits_raise_heterogeneity() {
    let mut last = -1.0;
    for h in [0, 1, 2, 3] {
        let alloc = allocation_counts(4, 400, h, None).unwrap();
        // one scalar sample per unit of allocation, valued at its class index
        let anchors: Vec<Vec<f64>> = alloc
            .counts
            .iter()
            .map(|row| row.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c as f64, k)).collect())
            .collect();
        let refs: Vec<&[f64]> = anchors.iter().map(Vec::as_slice).collect();
        let q = Quadratic::scalar(&refs, 0.0).unwrap();
        let (_, zeta) = heterogeneity_constants(&q, &q.reference_optimum().unwrap());
        assert!(zeta > last, "h = {h}: zeta {zeta} not above {last}");
        last = zeta;
    }
}

#[test]
fn execution_modes_give_identical_results() {
    let a = verify::matrix_laws(300, 4, Exec::Sequential);
    let b = verify::matrix_laws(300, 4, Exec::default());
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let x = verify::equivalence_all(15, 3, Exec::Sequential).unwrap();
    let y = verify::equivalence_all(15, 3, Exec::default()).unwrap();
    assert_eq!(format!("{x:?}"), format!("{y:?}"));
}

#[test]
fn reference_and_reduced_metrics_agree_term_by_term() {
    use spp_core::metrics::MetricsContext;
    use spp_core::reference;
    let q = random_quadratic(4, 6, 3, 8);
    let base = build_mixing(&TopologyKind::RingDirected, 4).unwrap();
    for preset in Preset::ALL {
        let (problem, stepper) = verify::preset_setup(preset, &q, &base, 0.05, 2, 0.3, 0.3).unwrap();
        let coeffs = stepper.lyapunov(&problem, preset.regime()).unwrap();
        let ctx = MetricsContext::new(&problem, problem.reference_optimum().unwrap(), coeffs);
        let x0 = DVector::from_element(3, 0.5);
        let reduced = stepper.run(&problem, &x0, 6, 60, 5, &ctx).unwrap();
        let (full, _) = reference::run(&problem, &stepper, &x0, 6, 60, 5, &ctx).unwrap();
        for (a, b) in reduced.metrics.iter().zip(&full.metrics) {
            for (s, t) in a.terms().iter().zip(b.terms()) {
                if let (Some(s), Some(t)) = (s, t) {
                    assert!((s - t).abs() <= 1e-9 * (1.0 + t.abs()), "{preset} k={}: {s} vs {t}", a.k);
                }
            }
            assert!((a.f_gap - b.f_gap).abs() <= 1e-9 * (1.0 + b.f_gap.abs()));
        }
    }
}

#[test]
fn gt_lyapunov_decays_monotonically_on_average() {
    let problem = verify::heterogeneous_toy();
    let base = build_mixing(&TopologyKind::RingDirected, 4).unwrap();
    let (problem, probe) = verify::preset_setup(Preset::GtSaga, &problem, &base, 1.0, 1, 0.0, 1.0).unwrap();
    let (l, _) = problem.smoothness();
    let stepper = probe.with_alpha(max_stepsize(Regime::GtVr, l, probe.params().rho_rw).unwrap());
    let coeffs = stepper.lyapunov(&problem, Regime::GtVr).unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    let avg = verify::seed_sweep(&problem, &stepper, coeffs, &DVector::zeros(1), &seeds, 4000, 200, Exec::default()).unwrap();
    let t: Vec<f64> = avg.iter().map(|m| m.lyapunov.unwrap()).collect();
    for w in t[1..].windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} rose to {}", w[0], w[1]);
    }
}
