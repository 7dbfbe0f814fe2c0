use std::fs;

use nalgebra::DMatrix;
use spp_core::dataset::Dataset;
use spp_core::experiment::{prepare, run_experiment, AlphaChoice, ExperimentConfig, SeedStatus};
use spp_core::metrics::read_csv;
use spp_core::par::Exec;
use spp_core::{max_stepsize, Error, Preset, Regime};

fn quadratic_config(out: &std::path::Path, alpha: &str) -> String {
    format!(
        r#"
algorithm = "GT-SAGA"
alpha = {alpha}
b = 2
K = 300
seeds = [1, 2]
eval_every = 10
output_dir = "{}"

[problem]
kind = "quadratic"
m = 6
d = 3
mu_reg = 0.1
seed = 4

[topology]
kind = "ring_directed"
n = 4
"#,
        out.display()
    )
}

/// 400 rows, 40 per class, features drawn around a class-dependent centre.
fn synthetic_dataset() -> Dataset {
    let rows = 400;
    let labels: Vec<u8> = (0..rows).map(|r| (r % 10) as u8).collect();
    let features = DMatrix::from_fn(rows, 5, |r, c| {
        let y = (r % 10) as f64;
        ((y + 1.0) * (c as f64 + 1.0)).sin() + 0.1 * ((r * 7 + c * 13) % 17) as f64 / 17.0
    });
    Dataset::new(features, labels).unwrap()
}

#[test]
fn runs_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let cfg = ExperimentConfig::parse(&quadratic_config(out, "0.05")).unwrap();
        let manifest = run_experiment(&cfg, false, Exec::default()).unwrap();
        assert_eq!(manifest.seeds.len(), 2);
        assert!(manifest.seeds.iter().all(|s| s.status == SeedStatus::Completed));
    }
    for seed in [1, 2] {
        let rel = format!("GT-SAGA/{seed}/trajectory.csv");
        let (x, y) = (fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap());
        assert_eq!(x, y, "{rel} differs");
        let rows = read_csv(std::str::from_utf8(&x).unwrap()).unwrap();
        assert_eq!(rows.first().unwrap().k, 0);
        assert_eq!(rows.last().unwrap().k, 300);
    }
}

#[test]
fn manifest_lists_every_emitted_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&quadratic_config(dir.path(), "0.05")).unwrap();
    let manifest = run_experiment(&cfg, false, Exec::Sequential).unwrap();
    let mut on_disk = Vec::new();
    for entry in walk(dir.path()) {
        let rel = entry.strip_prefix(dir.path()).unwrap().to_string_lossy().replace('\\', "/");
        if rel != "manifest.json" {
            on_disk.push(rel);
        }
    }
    on_disk.sort();
    let mut listed = manifest.files.clone();
    listed.sort();
    assert_eq!(listed, on_disk);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn resume_skips_completed_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&quadratic_config(dir.path(), "0.05")).unwrap();
    run_experiment(&cfg, false, Exec::Sequential).unwrap();
    fs::remove_file(dir.path().join("GT-SAGA/2/summary.json")).unwrap();
    let again = run_experiment(&cfg, true, Exec::Sequential).unwrap();
    let resumed: Vec<(u64, bool)> = again.seeds.iter().map(|s| (s.seed, s.resumed)).collect();
    assert_eq!(resumed, vec![(1, true), (2, false)]);
}

#[test]
fn auto_alpha_resolves_to_the_regime_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&quadratic_config(dir.path(), "\"auto\"")).unwrap();
    assert_eq!(cfg.alpha, AlphaChoice::Auto);
    let setup = prepare(&cfg).unwrap();
    let r = &setup.resolved;
    assert_eq!(r.alpha, max_stepsize(Regime::GtVr, r.l, r.rho_rw).unwrap());
    assert!((r.rho_w - 0.5).abs() < 1e-12);
}

#[test]
fn divergence_is_recorded_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&quadratic_config(dir.path(), "50.0").replace("K = 300", "K = 3000")).unwrap();
    let manifest = run_experiment(&cfg, false, Exec::Sequential).unwrap();
    assert!(manifest.seeds.iter().all(|s| s.status == SeedStatus::Diverged));
    let summary = fs::read_to_string(dir.path().join("GT-SAGA/1/summary.json")).unwrap();
    assert!(summary.contains("\"diverged_at\""));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let base = quadratic_config(dir.path(), "0.05");
    let field = |text: String| match ExperimentConfig::parse(&text) {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected a config error, got {other:?}"),
    };
    assert_eq!(field(base.replace("b = 2", "b = 0")), "b");
    assert_eq!(field(base.replace("b = 2", "b = 7")), "b");
    assert_eq!(field(base.replace("seeds = [1, 2]", "seeds = []")), "seeds");
    assert_eq!(field(base.replace("alpha = 0.05", "alpha = \"fast\"")), "alpha");
    assert_eq!(field(base.replace("m = 6", "m = \"six\"")), "problem");
    assert_eq!(field(base.replace("\"GT-SAGA\"", "\"GT-SVRG\"")), "algorithm");
}

#[test]
fn logistic_config_with_label_split_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset();
    fs::write(dir.path().join("train.bin"), data.to_binary()).unwrap();
    fs::write(dir.path().join("test.csv"), data.subset(&(0..100).collect::<Vec<_>>()).to_csv()).unwrap();
    let text = r#"
algorithm = "PGA-GT-SAGA"
alpha = 0.05
b = 25
K = 40
seeds = [3]
eval_every = 20
output_dir = "out"

[problem]
kind = "logistic"
dataset = "train.bin"
test_dataset = "test.csv"
lambda = 0.001

[split]
kind = "cyclic"
h = 1

[topology]
kind = "ring_directed"
n = 8
r = 0.05
"#;
    let path = dir.path().join("exp.toml");
    fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let manifest = run_experiment(&cfg, false, Exec::default()).unwrap();
    assert_eq!(manifest.config.algorithm, Preset::PgaGtSaga);
    assert_eq!(manifest.config.alpha, AlphaChoice::Fixed(0.05));
    assert_eq!((manifest.resolved.n, manifest.resolved.m), (8, 50));
    assert_eq!(manifest.allocation.as_ref().unwrap().h, Some(1));
    let acc = fs::read_to_string(dir.path().join("out/PGA-GT-SAGA/3/accuracy.csv")).unwrap();
    let lines: Vec<&str> = acc.lines().collect();
    assert_eq!(lines[0], "k,test_accuracy");
    assert_eq!(lines.len(), 1 + 3);
    for l in &lines[1..] {
        let a: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
}
