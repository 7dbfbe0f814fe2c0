//! Batch experiments: a TOML config in, per-seed trajectories and summaries
//! plus a manifest out.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! manifest.json
//! <preset>/<seed>/trajectory.csv
//! <preset>/<seed>/accuracy.csv      (logistic problems only)
//! <preset>/<seed>/summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{make_stepper, max_stepsize, Hyper, Preset, Stepper};
use crate::dataset::Dataset;
use crate::datasplit::{allocation_counts, allocation_hmax, partition, LabelAllocation};
use crate::error::{Error, Result};
use crate::metrics::{rate_fit, write_csv, IterationMetrics, LyapunovCoeffs, MetricsContext};
use crate::objectives::{eval_accuracy, heterogeneity_constants, FiniteSum, Logistic, Quadratic, CLASSES};
use crate::par::Exec;
use crate::topology::{build_mixing, ScheduleMode, TopologyKind};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub topology: TopologyConfig,
    pub algorithm: Preset,
    pub alpha: AlphaChoice,
    /// Samples drawn per device per iteration.
    pub b: usize,
    #[serde(rename = "K")]
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    /// Refresh probability for presets that use one; defaults to `b/m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random anchors in `[-2, 2]`, curvatures in `[0.5, 1.5]`.
    Quadratic {
        m: usize,
        d: usize,
        #[serde(default)]
        mu_reg: f64,
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        dataset: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_dataset: Option<PathBuf>,
        lambda: f64,
        /// Use only this many samples (`M`); defaults to the whole dataset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    #[default]
    Uniform,
    Cyclic {
        h: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m0: Option<i64>,
        #[serde(default)]
        seed: u64,
    },
    Hmax {
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    #[serde(flatten)]
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub mode: ScheduleMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaChoice {
    Auto,
    Fixed(f64),
}

impl Serialize for AlphaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaChoice::Auto => s.serialize_str("auto"),
            AlphaChoice::Fixed(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(AlphaChoice::Fixed(a)),
            Raw::Int(a) => Ok(AlphaChoice::Fixed(a as f64)),
            Raw::Word(w) if w == "auto" => Ok(AlphaChoice::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got \"{w}\""))),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "<root>".to_string(), |s| locate(text, s.start));
            Error::config(field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.output_dir);
        if let ProblemConfig::Logistic { dataset, test_dataset, .. } = &mut cfg.problem {
            rebase(dataset);
            if let Some(t) = test_dataset {
                rebase(t);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::config("b", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("K", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if let AlphaChoice::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("alpha", format!("{a} must be positive or \"auto\"")));
            }
        }
        if self.topology.n == 0 {
            return Err(Error::config("topology.n", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.topology.r) {
            return Err(Error::config("topology.r", format!("{} must lie in [0, 1]", self.topology.r)));
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config("p", format!("{p} must lie in (0, 1]")));
            }
        }
        match &self.problem {
            ProblemConfig::Quadratic { m, d, mu_reg, .. } => {
                if *m == 0 || *d == 0 {
                    return Err(Error::config("problem", "m and d must be at least 1"));
                }
                if *mu_reg < 0.0 {
                    return Err(Error::config("problem.mu_reg", "must be nonnegative"));
                }
                if self.split != SplitConfig::Uniform {
                    return Err(Error::config("split", "label splits apply to logistic problems only"));
                }
                if self.b > *m {
                    return Err(Error::config("b", format!("b = {} exceeds m = {m}", self.b)));
                }
            }
            ProblemConfig::Logistic { lambda, samples, .. } => {
                if !(*lambda > 0.0) {
                    return Err(Error::config("problem.lambda", "must be positive"));
                }
                if let Some(s) = samples {
                    let n = self.topology.n;
                    if s % (CLASSES * n) != 0 {
                        return Err(Error::config("problem.samples", format!("{s} must be a multiple of 10n = {}", CLASSES * n)));
                    }
                    if self.b > s / n {
                        return Err(Error::config("b", format!("b = {} exceeds m = {}", self.b, s / n)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dotted key path of the TOML entry whose line contains byte offset `at`.
fn locate(text: &str, at: usize) -> String {
    let at = at.min(text.len());
    let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    // errors inside tagged tables are reported at the table header
    let header_end = if line.trim_start().starts_with('[') { line_start + line.len() } else { line_start };
    let table = text[..header_end]
        .lines()
        .filter_map(|l| l.trim().strip_prefix('[').map(|t| t.trim_end_matches(']').trim().to_string()))
        .last();
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string());
    match (table, key) {
        (Some(t), Some(k)) => format!("{t}.{k}"),
        (Some(t), None) => t,
        (None, Some(k)) => k,
        (None, None) => "<root>".into(),
    }
}

/// The built problem with everything derived from the config.
pub struct Setup {
    pub problem: Box<dyn FiniteSum>,
    pub stepper: Stepper,
    pub coeffs: LyapunovCoeffs,
    pub x_star: DVector<f64>,
    /// Held-out evaluation rows (logistic only).
    pub test: Option<Dataset>,
    pub allocation: Option<LabelAllocation>,
    pub resolved: Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub alpha: f64,
    pub rho_w: f64,
    pub rho_rw: f64,
    pub l: f64,
    pub mu: f64,
    pub sigma_star: f64,
    pub zeta_star: f64,
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    /// Whether `T_k` carries every term of the preset's regime.
    pub full_lyapunov: bool,
}

fn random_quadratic(n: usize, m: usize, d: usize, mu_reg: f64, seed: u64) -> Result<Quadratic> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = (0..n)
        .map(|_| (0..m).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))).collect())
        .collect();
    let curvature = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
    Quadratic::with_curvature(anchors, curvature, mu_reg)
}

fn build_problem(cfg: &ExperimentConfig) -> Result<(Box<dyn FiniteSum>, Option<Dataset>, Option<LabelAllocation>)> {
    let n = cfg.topology.n;
    let centralized = cfg.algorithm.is_centralized();
    match &cfg.problem {
        ProblemConfig::Quadratic { m, d, mu_reg, seed } => {
            let q = random_quadratic(n, *m, *d, *mu_reg, *seed)?;
            let q = if centralized { q.pooled() } else { q };
            Ok((Box::new(q), None, None))
        }
        ProblemConfig::Logistic {
            dataset,
            test_dataset,
            lambda,
            samples,
        } => {
            let data = Dataset::load(dataset)?;
            let total = samples.unwrap_or(data.len() - data.len() % (CLASSES * n));
            if total == 0 || total > data.len() {
                return Err(Error::config(
                    "problem.samples",
                    format!("{total} samples requested, dataset holds {}", data.len()),
                ));
            }
            let (alloc, split_seed) = match &cfg.split {
                SplitConfig::Uniform => (allocation_counts(n, total, 0, None)?, 0),
                SplitConfig::Cyclic { h, m0, seed } => (allocation_counts(n, total, *h, *m0)?, *seed),
                SplitConfig::Hmax { seed } => (allocation_hmax(n, total)?, *seed),
            };
            let mut assignment = partition(&data.labels, &alloc, split_seed)?;
            if cfg.b > total / n {
                return Err(Error::config("b", format!("b = {} exceeds m = {}", cfg.b, total / n)));
            }
            if centralized {
                assignment = vec![assignment.concat()];
            }
            let test = test_dataset.as_deref().map(Dataset::load).transpose()?;
            if let Some(t) = &test {
                if t.dim() != data.dim() {
                    return Err(Error::config(
                        "problem.test_dataset",
                        format!("{} features, training set has {}", t.dim(), data.dim()),
                    ));
                }
            }
            let problem = Logistic::new(data.features, data.labels, *lambda, assignment)?;
            Ok((Box::new(problem), test, Some(alloc)))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let (problem, test, allocation) = build_problem(cfg)?;
    let base = build_mixing(&cfg.topology.kind, cfg.topology.n)?;
    let preset = cfg.algorithm;
    let schedule = preset.schedule(base, cfg.topology.r, cfg.topology.mode)?;
    let hyper = Hyper {
        b: cfg.b,
        p: if preset.uses_p() { cfg.p } else { None },
    };
    let probe = make_stepper(preset, schedule, problem.as_ref(), 1.0, hyper)?;
    let prm = probe.params();
    let (l, mu) = problem.smoothness();
    let alpha = match cfg.alpha {
        AlphaChoice::Fixed(a) => a,
        AlphaChoice::Auto => max_stepsize(preset.regime(), l, prm.rho_rw)?,
    };
    let stepper = probe.with_alpha(alpha);
    let (coeffs, full_lyapunov) = match stepper.lyapunov(problem.as_ref(), preset.regime()) {
        Ok(c) => (c, true),
        Err(_) => (LyapunovCoeffs::opt_gap_only(preset.regime()), false),
    };
    let x_star = problem.reference_optimum()?;
    let (sigma_star, zeta_star) = heterogeneity_constants(problem.as_ref(), &x_star);
    let resolved = Resolved {
        alpha,
        rho_w: prm.rho_w,
        rho_rw: prm.rho_rw,
        l,
        mu,
        sigma_star,
        zeta_star,
        n: problem.n(),
        m: problem.m(),
        dim: problem.dim(),
        full_lyapunov,
    };
    Ok(Setup {
        problem,
        stepper,
        coeffs,
        x_star,
        test,
        allocation,
        resolved,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub preset: Preset,
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<IterationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_accuracy: Option<f64>,
    /// Per-iteration contraction of `T_k`, when the series allows a fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_r_squared: Option<f64>,
    pub wall_time_secs: f64,
    pub alpha: f64,
    pub rho_w: f64,
    pub rho_rw: f64,
    pub sigma_star: f64,
    pub zeta_star: f64,
    /// Paths relative to `output_dir`.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub status: SeedStatus,
    /// True when `--resume` found the seed already finished.
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<LabelAllocation>,
    pub seeds: Vec<SeedEntry>,
    /// Every emitted file, relative to `output_dir`.
    pub files: Vec<String>,
}

fn seed_dir(preset: Preset, seed: u64) -> String {
    format!("{}/{seed}", preset.name())
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn accuracy_rows(traj: &Trajectory, test: &Dataset) -> Result<Vec<(usize, f64)>> {
    traj.checkpoints
        .iter()
        .map(|(k, x)| Ok((*k, eval_accuracy(&DVector::from_column_slice(x), &test.features, &test.labels)?)))
        .collect()
}

fn fit(metrics: &[IterationMetrics]) -> Option<(f64, f64)> {
    let series: Vec<(usize, f64)> = metrics.iter().map(|m| (m.k, m.lyapunov.unwrap_or(m.opt_gap))).collect();
    let burn_in = metrics.last().map_or(0, |m| m.k / 10);
    rate_fit(&series, burn_in, 1e3).ok().map(|f| (f.rate, f.r_squared))
}

fn run_seed(setup: &Setup, cfg: &ExperimentConfig, seed: u64) -> Result<SeedSummary> {
    let problem = setup.problem.as_ref();
    let ctx = MetricsContext::new(problem, setup.x_star.clone(), setup.coeffs);
    let x0 = DVector::zeros(problem.dim());
    let preset = cfg.algorithm;
    let dir = seed_dir(preset, seed);
    let r = &setup.resolved;
    let mut summary = SeedSummary {
        preset,
        seed,
        status: SeedStatus::Completed,
        diverged_at: None,
        final_metrics: None,
        final_test_accuracy: None,
        fitted_rate: None,
        fit_r_squared: None,
        wall_time_secs: 0.0,
        alpha: r.alpha,
        rho_w: r.rho_w,
        rho_rw: r.rho_rw,
        sigma_star: r.sigma_star,
        zeta_star: r.zeta_star,
        files: Vec::new(),
    };
    match setup.stepper.run(problem, &x0, seed, cfg.iterations, cfg.eval_every, &ctx) {
        Ok(traj) => {
            let mut csv = Vec::new();
            write_csv(&traj.metrics, &mut csv)?;
            let rel = format!("{dir}/trajectory.csv");
            write_file(&cfg.output_dir, &rel, &csv)?;
            summary.files.push(rel);
            if let Some(test) = &setup.test {
                let rows = accuracy_rows(&traj, test)?;
                let mut out = String::from("k,test_accuracy\n");
                for (k, a) in &rows {
                    out.push_str(&format!("{k},{}\n", crate::fmt::g17(*a)));
                }
                let rel = format!("{dir}/accuracy.csv");
                write_file(&cfg.output_dir, &rel, out.as_bytes())?;
                summary.files.push(rel);
                summary.final_test_accuracy = rows.last().map(|r| r.1);
            }
            if let Some((rate, r2)) = fit(&traj.metrics) {
                summary.fitted_rate = Some(rate);
                summary.fit_r_squared = Some(r2);
            }
            summary.final_metrics = Some(traj.last().clone());
            summary.wall_time_secs = traj.wall_time_secs;
        }
        Err(Error::Diverged { iteration }) => {
            summary.status = SeedStatus::Diverged;
            summary.diverged_at = Some(iteration);
        }
        Err(e) => return Err(e),
    }
    let rel = format!("{dir}/summary.json");
    summary.files.push(rel.clone());
    write_file(&cfg.output_dir, &rel, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// A finished seed from an earlier invocation: its summary parses and every
/// file it lists exists.
fn completed_seed(cfg: &ExperimentConfig, seed: u64) -> Option<SeedSummary> {
    let path = cfg.output_dir.join(seed_dir(cfg.algorithm, seed)).join("summary.json");
    let summary: SeedSummary = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    let whole = summary.seed == seed && summary.files.iter().all(|f| cfg.output_dir.join(f).is_file());
    whole.then_some(summary)
}

/// Runs every seed (concurrently under `exec`) and writes the manifest.
/// Divergent seeds are recorded and do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool, exec: Exec) -> Result<Manifest> {
    let setup = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let outcomes = exec.map(&cfg.seeds, |&seed| -> Result<(SeedSummary, bool)> {
        if resume {
            if let Some(done) = completed_seed(cfg, seed) {
                return Ok((done, true));
            }
        }
        run_seed(&setup, cfg, seed).map(|s| (s, false))
    });
    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut files = Vec::new();
    for outcome in outcomes {
        let (summary, resumed) = outcome?;
        files.extend(summary.files.iter().cloned());
        seeds.push(SeedEntry {
            seed: summary.seed,
            status: summary.status,
            resumed,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        resolved: setup.resolved.clone(),
        allocation: setup.allocation.clone(),
        seeds,
        files,
    };
    fs::write(cfg.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
