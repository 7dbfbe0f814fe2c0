//! Lyapunov terms, coefficients and empirical rate fits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::objectives::FiniteSum;

/// Which theorem's step-size cap and coefficient block applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NonVr,
    VrOnly,
    GtVr,
    NonVrConvex,
    VrOnlyConvex,
    GtVrConvex,
}

impl Regime {
    pub fn convex(self) -> Self {
        match self {
            Regime::NonVr | Regime::NonVrConvex => Regime::NonVrConvex,
            Regime::VrOnly | Regime::VrOnlyConvex => Regime::VrOnlyConvex,
            Regime::GtVr | Regime::GtVrConvex => Regime::GtVrConvex,
        }
    }

    pub fn is_convex(self) -> bool {
        self == self.convex()
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "non_vr" => Regime::NonVr,
            "vr_only" => Regime::VrOnly,
            "gt_vr" => Regime::GtVr,
            "non_vr_convex" => Regime::NonVrConvex,
            "vr_only_convex" => Regime::VrOnlyConvex,
            "gt_vr_convex" => Regime::GtVrConvex,
            other => return Err(Error::Parse(format!("unknown regime `{other}`"))),
        })
    }
}

/// Inputs shared by the coefficient formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub alpha: f64,
    pub l: f64,
    pub n: usize,
    pub big_m: usize,
    pub rho_rw: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCoeffs {
    pub regime: Regime,
    /// `c0..c4` weighting optimal gap, consensus, delayed VR, VR and GT errors.
    pub c: [f64; 5],
}

impl LyapunovCoeffs {
    /// Plain optimality gap, used when no rate bound applies.
    pub fn opt_gap_only(regime: Regime) -> Self {
        LyapunovCoeffs {
            regime,
            c: [1.0, 0.0, 0.0, 0.0, 0.0],
        }
    }
}

/// Coefficient blocks of the strongly convex and convex theorems.
///
/// The GT consensus weight `(1-rho)/(n rho (1+rho))` is set to 0 when `rho = 0`
/// (no consensus error can arise then).
pub fn lyapunov_coeffs(regime: Regime, prm: &LyapunovParams) -> Result<LyapunovCoeffs> {
    let LyapunovParams {
        alpha,
        l,
        n,
        big_m,
        rho_rw: rho,
        r,
        p,
        q,
    } = *prm;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho_rW = {rho} must lie in [0, 1)")));
    }
    if !(alpha > 0.0 && l > 0.0) || n == 0 || big_m == 0 {
        return Err(Error::InvalidArgument("alpha, L, n and M must be positive".into()));
    }
    let (nf, mf) = (n as f64, big_m as f64);
    let c = match regime {
        Regime::NonVr => [1.0, (1.0 - r) * 8.0 * alpha * l * (4.0 * alpha * l + 1.0) / (nf * (1.0 - rho)), 0.0, 0.0, 0.0],
        Regime::NonVrConvex => [1.0, (1.0 - r) * 8.0 * l * (4.0 * alpha * l + 1.0) / (nf * (1.0 - rho)), 0.0, 0.0, 0.0],
        Regime::VrOnly | Regime::VrOnlyConvex => {
            if !(p > 0.0 && q > 0.0) {
                return Err(Error::InvalidArgument(format!("{regime:?} needs p > 0 and q > 0, got p = {p}, q = {q}")));
            }
            let a2 = alpha * alpha;
            [1.0, 20.0 * l * alpha / (nf * (1.0 - rho)), 5.0 * a2 / (mf * p), 16.0 * a2 / (mf * q), 0.0]
        }
        Regime::GtVr | Regime::GtVrConvex => {
            if !(q > 0.0) {
                return Err(Error::InvalidArgument(format!("{regime:?} needs q > 0, got {q}")));
            }
            let a2 = alpha * alpha;
            let c1 = if rho == 0.0 { 0.0 } else { (1.0 - rho) / (nf * rho * (1.0 + rho)) };
            [
                1.0,
                c1,
                0.0,
                20.0 * a2 / (mf * q * (1.0 - rho).powi(2)),
                8.0 * a2 / (nf * (1.0 - rho)),
            ]
        }
    };
    Ok(LyapunovCoeffs { regime, c })
}

/// Contraction factor the strongly convex theorems guarantee per iteration.
pub fn predicted_rate(regime: Regime, alpha: f64, mu: f64, rho_rw: f64, p: f64, q: f64) -> f64 {
    let net = (1.0 - rho_rw) / 8.0;
    let vr = match regime {
        Regime::VrOnly | Regime::VrOnlyConvex => p * q / 2.0,
        Regime::GtVr | Regime::GtVrConvex => q / 2.0,
        _ => f64::INFINITY,
    };
    1.0 - (alpha * mu).min(net).min(vr)
}

/// What an engine exposes for measurement at iteration `k`.
#[derive(Debug, Clone)]
pub struct StateView {
    pub k: usize,
    /// `n x d` device iterates.
    pub xhat: DMatrix<f64>,
    /// `n x d` device gradient estimates.
    pub yhat: DMatrix<f64>,
    /// `M x d` per-sample gradients at the current augmented iterate.
    pub grads: Option<DMatrix<f64>>,
    /// `M x d` per-sample gradients at the last variance-reduction point.
    pub delayed: Option<DMatrix<f64>>,
}

impl StateView {
    pub fn xbar(&self) -> DVector<f64> {
        self.xhat.row_mean().transpose()
    }
}

/// Problem quantities measured against at every evaluation.
#[derive(Debug, Clone)]
pub struct MetricsContext {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub grad_star: DMatrix<f64>,
    pub coeffs: LyapunovCoeffs,
}

impl MetricsContext {
    pub fn new(problem: &dyn FiniteSum, x_star: DVector<f64>, coeffs: LyapunovCoeffs) -> Self {
        let grad_star = sample_grads_at(problem, &x_star);
        MetricsContext {
            f_star: problem.value(&x_star),
            x_star,
            grad_star,
            coeffs,
        }
    }
}

/// `grad F(1 x)`: every sample's gradient at the same point.
pub fn sample_grads_at(problem: &dyn FiniteSum, x: &DVector<f64>) -> DMatrix<f64> {
    let (m, d) = (problem.m(), problem.dim());
    let mut out = DMatrix::zeros(problem.samples(), d);
    for i in 0..problem.n() {
        for j in 0..m {
            out.set_row(i * m + j, &problem.sample_grad(i, j, x).transpose());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub k: usize,
    pub f_gap: f64,
    pub opt_gap: f64,
    pub consensus_err: f64,
    pub vr_err: Option<f64>,
    pub delayed_vr_err: Option<f64>,
    pub gt_err: f64,
    pub lyapunov: Option<f64>,
}

impl IterationMetrics {
    /// Lyapunov terms in coefficient order; `None` where unavailable.
    pub fn terms(&self) -> [Option<f64>; 5] {
        [
            Some(self.opt_gap),
            Some(self.consensus_err),
            self.delayed_vr_err,
            self.vr_err,
            Some(self.gt_err),
        ]
    }
}

fn spread(rows: &DMatrix<f64>) -> f64 {
    let mean = rows.row_mean();
    rows.row_iter().map(|r| (r - &mean).norm_squared()).sum()
}

/// `sum_i c_i term_i`, or `None` if a weighted term is unavailable.
pub fn lyapunov_value(coeffs: &LyapunovCoeffs, terms: &[Option<f64>; 5]) -> Option<f64> {
    coeffs.c.iter().zip(terms).try_fold(0.0, |acc, (&c, t)| match (c, t) {
        (0.0, _) => Some(acc),
        (_, Some(v)) => Some(acc + c * v),
        (_, None) => None,
    })
}

pub fn measure(view: &StateView, problem: &dyn FiniteSum, ctx: &MetricsContext) -> IterationMetrics {
    let xbar = view.xbar();
    let gap = |g: &DMatrix<f64>| (g - &ctx.grad_star).norm_squared();
    let mut out = IterationMetrics {
        k: view.k,
        f_gap: problem.value(&xbar) - ctx.f_star,
        opt_gap: (&xbar - &ctx.x_star).norm_squared(),
        consensus_err: spread(&view.xhat),
        vr_err: view.grads.as_ref().map(gap),
        delayed_vr_err: view.delayed.as_ref().map(gap),
        gt_err: spread(&view.yhat),
        lyapunov: None,
    };
    out.lyapunov = lyapunov_value(&ctx.coeffs, &out.terms());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `log T_k` against `k`.
///
/// Points with `k < burn_in` and values at or below `floor_factor * eps * T_0`
/// are excluded; the first point of the series defines `T_0`.
pub fn rate_fit(series: &[(usize, f64)], burn_in: usize, floor_factor: f64) -> Result<RateFit> {
    if series.len() < 10 {
        return Err(Error::DegenerateSeries(format!("{} points, need at least 10", series.len())));
    }
    let t0 = series[0].1;
    if !(t0 > 0.0) {
        return Err(Error::DegenerateSeries("T_0 must be positive".into()));
    }
    let floor = floor_factor * f64::EPSILON * t0;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(k, t)| k >= burn_in && t > floor && t.is_finite())
        .map(|&(k, t)| (k as f64, t.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateSeries("fewer than two points above the numerical floor".into()));
    }
    let np = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / np, pts.iter().map(|p| p.1).sum::<f64>() / np);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateSeries("all retained points share one iteration".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        rate: slope.exp(),
        r_squared,
        points: pts.len(),
    })
}

/// Pointwise mean over seeds. All runs must share the same `k` grid; an optional
/// field is averaged only when every run reports it.
pub fn seed_average(runs: &[Vec<IterationMetrics>]) -> Result<Vec<IterationMetrics>> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to average".into()))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::Dimension("runs have different lengths".into()));
    }
    let s = runs.len() as f64;
    let mean = |f: &dyn Fn(&IterationMetrics) -> f64, idx: usize| runs.iter().map(|r| f(&r[idx])).sum::<f64>() / s;
    let mean_opt = |f: &dyn Fn(&IterationMetrics) -> Option<f64>, idx: usize| -> Option<f64> {
        runs.iter().map(|r| f(&r[idx])).sum::<Option<f64>>().map(|v| v / s)
    };
    first
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            if runs.iter().any(|r| r[idx].k != row.k) {
                return Err(Error::Dimension("runs sample different iterations".into()));
            }
            Ok(IterationMetrics {
                k: row.k,
                f_gap: mean(&|m| m.f_gap, idx),
                opt_gap: mean(&|m| m.opt_gap, idx),
                consensus_err: mean(&|m| m.consensus_err, idx),
                vr_err: mean_opt(&|m| m.vr_err, idx),
                delayed_vr_err: mean_opt(&|m| m.delayed_vr_err, idx),
                gt_err: mean(&|m| m.gt_err, idx),
                lyapunov: mean_opt(&|m| m.lyapunov, idx),
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "k,f_gap,opt_gap,consensus_err,vr_err,delayed_vr_err,gt_err,lyapunov";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), g17)
}

pub fn write_csv<W: Write>(rows: &[IterationMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            g17(r.f_gap),
            g17(r.opt_gap),
            g17(r.consensus_err),
            cell(r.vr_err),
            cell(r.delayed_vr_err),
            g17(r.gt_err),
            cell(r.lyapunov)
        )?;
    }
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<IterationMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse("trajectory CSV header mismatch".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let opt = |s: &str| -> Result<Option<f64>> { if s == "nan" { Ok(None) } else { num(s).map(Some) } };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Parse(format!("expected 8 fields, got {}", f.len())));
            }
            Ok(IterationMetrics {
                k: f[0].parse().map_err(|e| Error::Parse(format!("k `{}`: {e}", f[0])))?,
                f_gap: num(f[1])?,
                opt_gap: num(f[2])?,
                consensus_err: num(f[3])?,
                vr_err: opt(f[4])?,
                delayed_vr_err: opt(f[5])?,
                gt_err: num(f[6])?,
                lyapunov: opt(f[7])?,
            })
        })
        .collect()
}
