use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spp_core::dataset::Dataset;
use spp_core::datasplit::{allocation_counts, allocation_hmax, partition};
use spp_core::experiment::{run_experiment, ExperimentConfig, SeedStatus};
use spp_core::par::Exec;
use spp_core::verify;

#[derive(Parser)]
#[command(name = "spp", version, about = "Sample-wise push-pull experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Skip seeds whose outputs are already complete.
        #[arg(long)]
        resume: bool,
    },
    /// Run the equivalence and property suites.
    Verify {
        /// Smaller draw counts, for a fast smoke check.
        #[arg(long)]
        quick: bool,
    },
    /// Print a label allocation for a dataset and optionally write the shards.
    Split {
        /// Per-step class skew of the cyclic split.
        #[arg(long, required_unless_present = "hmax")]
        h: Option<i64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        m0: Option<i64>,
        /// Banded split with three missing classes per device (n = 8).
        #[arg(long, conflicts_with = "h")]
        hmax: bool,
        /// Use this many samples; defaults to the largest feasible count.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for per-device CSV shards.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `SPP_THREADS` caps how many seeds run at once.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SPP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().with_context(|| format!("SPP_THREADS=`{raw}` is not a count"))?;
    if threads == 0 {
        bail!("SPP_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(config: PathBuf, resume: bool) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let manifest = run_experiment(&cfg, resume, Exec::default())?;
    let mut diverged = 0;
    for s in &manifest.seeds {
        let note = if s.resumed { " (resumed)" } else { "" };
        println!("{} seed {}: {:?}{note}", cfg.algorithm, s.seed, s.status);
        diverged += usize::from(s.status == SeedStatus::Diverged);
    }
    println!(
        "alpha = {:.6e}, rho_W = {:.6}, rho_rW = {:.6}; {} files under {}",
        manifest.resolved.alpha,
        manifest.resolved.rho_w,
        manifest.resolved.rho_rw,
        manifest.files.len() + 1,
        cfg.output_dir.display()
    );
    Ok(if diverged > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn verify(quick: bool) -> Result<ExitCode> {
    let exec = Exec::default();
    let scale = if quick { 10 } else { 1 };
    let mut failures = 0;
    let mut line = |ok: bool, text: String| {
        println!("{} {text}", if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    };

    let rows = verify::equivalence_all(200 / scale, 2024, exec)?;
    let worst = rows.iter().map(|r| r.max_x_dev.max(r.max_y_dev)).fold(0.0, f64::max);
    line(worst < 1e-9, format!("reference/reduced equivalence: max deviation {worst:.3e}"));

    let laws = verify::matrix_laws(10_000 / scale, 7, exec);
    let worst = [laws.r_row_sum, laws.c_row_sum, laws.c_col_sum, laws.projection_r].into_iter().fold(0.0, f64::max);
    line(
        worst <= 1e-12 && laws.lambda_failures == 0,
        format!("matrix laws over {} draws: max residual {worst:.3e}", laws.draws),
    );

    for (n, m, b) in [(2, 4, 2), (3, 6, 1), (1, 8, 4)] {
        let r = verify::sampling_bound(n, m, b, 100_000 / scale, 100, 11, exec)?;
        line(
            r.top_eigenvalue <= r.bound + 3.0 * r.std_err,
            format!("sampling bound ({n},{m},{b}): {:.5} vs 1/m = {:.5}", r.top_eigenvalue, r.bound),
        );
    }

    let viol = verify::tracking_invariant(500 / scale, 5, exec)?;
    let worst = viol.iter().map(|v| v.1).fold(0.0, f64::max);
    line(worst <= 1e-9, format!("tracking invariant: max violation {worst:.3e}"));

    let split = verify::split_tables()?;
    line(
        split.h20_matches && split.hmax_matches && split.constraints_hold,
        "label allocation tables".into(),
    );

    let quad = verify::random_quadratic(4, 6, 3, 3);
    let logi = verify::random_logistic(120, 5, 4, 1e-3, 3)?;
    for (name, p) in [("quadratic", &quad as &dyn spp_core::FiniteSum), ("logistic", &logi)] {
        let r = verify::objective_properties(p, 1000 / scale, 50 / scale, 2.0, 9);
        line(
            r.worst_smoothness_excess <= 1e-9 && r.worst_fd_rel <= 1e-6,
            format!("{name} objective: smoothness excess {:.2e}, gradient fd {:.2e}", r.worst_smoothness_excess, r.worst_fd_rel),
        );
    }
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[allow(clippy::too_many_arguments)]
fn split(
    h: Option<i64>,
    n: usize,
    dataset: PathBuf,
    m0: Option<i64>,
    hmax: bool,
    samples: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let data = Dataset::load(&dataset)?;
    // the banded split also needs M divisible by 50
    let unit = if hmax { 400 } else { 10 * n };
    let total = samples.unwrap_or(data.len() - data.len() % unit);
    if total > data.len() {
        bail!("{total} samples requested, {} holds {}", dataset.display(), data.len());
    }
    let alloc = match h {
        Some(h) => allocation_counts(n, total, h, m0)?,
        None => allocation_hmax(n, total)?,
    };
    print!("{}", alloc.to_csv());
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        for (i, rows) in partition(&data.labels, &alloc, seed)?.iter().enumerate() {
            let path = dir.join(format!("device_{}.csv", i + 1));
            std::fs::write(&path, data.subset(rows).to_csv()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::Run { config, resume } => run(config, resume),
        Command::Verify { quick } => verify(quick),
        Command::Split {
            h,
            n,
            dataset,
            m0,
            hmax,
            samples,
            seed,
            out,
        } => split(h, n, dataset, m0, hmax, samples, seed, out).map(|()| ExitCode::SUCCESS),
    }
}
