//! Device-level (reduced) implementations of the recovered algorithms.
//!
//! The reduced state has `n` rows instead of `M`. Every preset is driven by the
//! same [`DrawPlan`] as the augmented reference engine, and its iterates equal
//! the projected reference iterates `S_k X_k`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{lyapunov_coeffs, sample_grads_at, LyapunovCoeffs, LyapunovParams, Regime, StateView};
use crate::objectives::FiniteSum;
use crate::sampling::{DrawPlan, IterationDraw, LocalMix, LocalRule, SampleMask, TrackingMix};
use crate::topology::{MixingMatrix, MixingSchedule, ScheduleMode};
use crate::trajectory::{drive, Engine, Trajectory};
use crate::metrics::MetricsContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "SAGA")]
    Saga,
    #[serde(rename = "L-SVRG")]
    LSvrg,
    #[serde(rename = "SARAH")]
    Sarah,
    #[serde(rename = "Local-SGD")]
    LocalSgd,
    #[serde(rename = "DSGD")]
    Dsgd,
    #[serde(rename = "Gossip-PGA")]
    GossipPga,
    #[serde(rename = "Local-SAGA")]
    LocalSaga,
    #[serde(rename = "Local-SVRG")]
    LocalSvrg,
    #[serde(rename = "D-SAGA")]
    DSaga,
    #[serde(rename = "PGA-SAGA")]
    PgaSaga,
    #[serde(rename = "GT-SAGA")]
    GtSaga,
    #[serde(rename = "PGA-GT-SAGA")]
    PgaGtSaga,
}

impl Preset {
    pub const ALL: [Preset; 12] = [
        Preset::Saga,
        Preset::LSvrg,
        Preset::Sarah,
        Preset::LocalSgd,
        Preset::Dsgd,
        Preset::GossipPga,
        Preset::LocalSaga,
        Preset::LocalSvrg,
        Preset::DSaga,
        Preset::PgaSaga,
        Preset::GtSaga,
        Preset::PgaGtSaga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Saga => "SAGA",
            Preset::LSvrg => "L-SVRG",
            Preset::Sarah => "SARAH",
            Preset::LocalSgd => "Local-SGD",
            Preset::Dsgd => "DSGD",
            Preset::GossipPga => "Gossip-PGA",
            Preset::LocalSaga => "Local-SAGA",
            Preset::LocalSvrg => "Local-SVRG",
            Preset::DSaga => "D-SAGA",
            Preset::PgaSaga => "PGA-SAGA",
            Preset::GtSaga => "GT-SAGA",
            Preset::PgaGtSaga => "PGA-GT-SAGA",
        }
    }

    pub fn row(self) -> PresetRow {
        registry()
            .into_iter()
            .find(|r| r.preset == self)
            .expect("every preset has a registry row")
    }

    pub fn regime(self) -> Regime {
        match self {
            Preset::LocalSgd | Preset::Dsgd | Preset::GossipPga => Regime::NonVr,
            Preset::GtSaga | Preset::PgaGtSaga => Regime::GtVr,
            _ => Regime::VrOnly,
        }
    }

    /// The mixing schedule this preset runs on, given a base graph.
    ///
    /// Centralized presets ignore `base` and run on one device; `{I_n, J_n}`
    /// presets replace `base` by `I_n`; fixed-`W` presets ignore `r`.
    pub fn schedule(self, base: MixingMatrix, r: f64, mode: ScheduleMode) -> Result<MixingSchedule> {
        match self.row().w {
            WChoice::One => Ok(MixingSchedule::fixed(MixingMatrix::identity(1))),
            WChoice::Fixed => Ok(MixingSchedule::fixed(base)),
            WChoice::LocalOrGlobal => MixingSchedule::new(MixingMatrix::identity(base.n()), r, mode),
            WChoice::GossipOrGlobal => MixingSchedule::new(base, r, mode),
        }
    }

    pub fn is_centralized(self) -> bool {
        self.row().w == WChoice::One
    }

    /// Whether this preset uses the refresh probability `p`.
    pub fn uses_p(self) -> bool {
        matches!(self, Preset::LSvrg | Preset::LocalSvrg | Preset::Sarah)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WChoice {
    /// Scalar 1: a single device.
    One,
    Fixed,
    LocalOrGlobal,
    GossipOrGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VChoice {
    I,
    J,
    IOrJ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GChoice {
    One,
    I,
    W,
}

/// Symbolic entry of the `(rho, r, p, q)` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Zero,
    One,
    RhoW,
    R,
    P,
    BOverM,
    /// `p + (1 - p) b/m`, the expected batch fraction of SARAH.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetRow {
    pub preset: Preset,
    pub w: WChoice,
    pub v: VChoice,
    pub g: GChoice,
    pub params: [Param; 4],
}

/// One row per preset: `name | W_k | V_k | G_k | rho, r, p, q`.
const REGISTRY: &str = "\
SAGA        | 1     | J     | 1 | 0, 1, 1, b/m
L-SVRG      | 1     | {I,J} | 1 | 0, 1, p, 1
SARAH       | 1     | J     | 1 | 0, 1, 1, p+(1-p)b/m
Local-SGD   | {I,J} | I     | I | 1, r, 0, 0
DSGD        | W     | I     | I | rho, 0, 0, 0
Gossip-PGA  | {W,J} | I     | I | rho, r, 0, 0
Local-SAGA  | {I,J} | J     | I | 1, r, 1, b/m
Local-SVRG  | {I,J} | {I,J} | I | 1, r, p, 1
D-SAGA      | W     | J     | I | rho, 0, 1, b/m
PGA-SAGA    | {W,J} | J     | I | rho, r, 1, b/m
GT-SAGA     | W     | J     | W | rho, 0, 1, b/m
PGA-GT-SAGA | {W,J} | J     | W | rho, r, p, b/m
";

fn parse_row(line: &str) -> Result<PresetRow> {
    let cols: Vec<&str> = line.split('|').map(str::trim).collect();
    let bad = |what: &str| Error::Parse(format!("registry line `{line}`: bad {what}"));
    if cols.len() != 5 {
        return Err(bad("column count"));
    }
    let w = match cols[1] {
        "1" => WChoice::One,
        "W" => WChoice::Fixed,
        "{I,J}" => WChoice::LocalOrGlobal,
        "{W,J}" => WChoice::GossipOrGlobal,
        _ => return Err(bad("W")),
    };
    let v = match cols[2] {
        "I" => VChoice::I,
        "J" => VChoice::J,
        "{I,J}" => VChoice::IOrJ,
        _ => return Err(bad("V")),
    };
    let g = match cols[3] {
        "1" => GChoice::One,
        "I" => GChoice::I,
        "W" => GChoice::W,
        _ => return Err(bad("G")),
    };
    let params: Vec<Param> = cols[4]
        .split(',')
        .map(|p| match p.trim() {
            "0" => Ok(Param::Zero),
            "1" => Ok(Param::One),
            "rho" => Ok(Param::RhoW),
            "r" => Ok(Param::R),
            "p" => Ok(Param::P),
            "b/m" => Ok(Param::BOverM),
            "p+(1-p)b/m" => Ok(Param::Mixed),
            _ => Err(bad("parameter")),
        })
        .collect::<Result<_>>()?;
    Ok(PresetRow {
        preset: cols[0].parse()?,
        w,
        v,
        g,
        params: params.try_into().map_err(|_| bad("parameter count"))?,
    })
}

pub fn registry() -> Vec<PresetRow> {
    REGISTRY
        .lines()
        .map(|l| parse_row(l).expect("compiled registry parses"))
        .collect()
}

/// The explicit step-size caps of each regime. Terms whose denominator
/// vanishes at `rho = 0` count as `+inf`.
pub fn max_stepsize(regime: Regime, l: f64, rho: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("L = {l} must be positive")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho_rW = {rho} must lie in [0, 1)")));
    }
    let gap = 1.0 - rho;
    let div = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    let s1 = (rho * (1.0 + rho)).sqrt();
    let s2 = (2.0 * rho * (1.0 + rho)).sqrt();
    let caps = match regime {
        Regime::NonVr => [1.0 / (5.0 * l), div(gap, 4.0 * l * s1), div(gap, 12.0 * l * s2)],
        Regime::VrOnly => [1.0 / (64.0 * l), gap / (40.0 * l), div(gap, 16.0 * l * s1)],
        Regime::GtVr => [1.0 / (8.0 * l), div(gap, 4.0 * l * s2), gap * gap / (528.0 * l)],
        Regime::NonVrConvex => [1.0 / (5.0 * l), div(gap, 24.0 * l * s1), f64::INFINITY],
        Regime::VrOnlyConvex => [1.0 / (64.0 * l), gap / (40.0 * l), div(gap, 32.0 * l * s1)],
        Regime::GtVrConvex => [1.0 / (8.0 * l), div(gap, 4.0 * l * s2), gap * gap / (1056.0 * l)],
    };
    Ok(caps.into_iter().fold(f64::INFINITY, f64::min))
}

/// Batch size and refresh probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub b: usize,
    /// Defaults to `b/m` for presets that use it.
    pub p: Option<f64>,
}

/// Numeric `(rho_W, rho_rW, r, p, q)` of a configured preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub rho_w: f64,
    pub rho_rw: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Memory {
    None,
    Table,
    Snapshot,
}

/// An immutable, validated algorithm configuration.
#[derive(Debug, Clone)]
pub struct Stepper {
    preset: Preset,
    schedule: MixingSchedule,
    m: usize,
    b: usize,
    p: f64,
    alpha: f64,
    local: LocalRule,
    tracking: TrackingMix,
    memory: Memory,
}

fn is_identity(w: &MixingMatrix) -> bool {
    let n = w.n();
    (w.matrix() - DMatrix::<f64>::identity(n, n)).abs().max() == 0.0
}

pub fn make_stepper(preset: Preset, schedule: MixingSchedule, problem: &dyn FiniteSum, alpha: f64, hyper: Hyper) -> Result<Stepper> {
    let incompatible = |reason: String| Error::IncompatiblePreset {
        preset: preset.name().into(),
        reason,
    };
    let (n, m, b) = (problem.n(), problem.m(), hyper.b);
    if schedule.n() != n {
        return Err(Error::Dimension(format!("topology has {} devices, problem has {n}", schedule.n())));
    }
    if b == 0 || b > m {
        return Err(Error::BatchOutOfRange { b, m });
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size {alpha} must be finite and nonnegative")));
    }
    let row = preset.row();
    match row.w {
        WChoice::One if n != 1 => return Err(incompatible(format!("runs on a single device, got n = {n}"))),
        WChoice::Fixed if schedule.r() != 0.0 => {
            return Err(incompatible(format!("needs a fixed W, got global averaging with r = {}", schedule.r())))
        }
        WChoice::LocalOrGlobal if !is_identity(schedule.base()) => {
            return Err(incompatible("alternates I_n and J_n; the topology base must be identity".into()))
        }
        WChoice::LocalOrGlobal | WChoice::GossipOrGlobal if schedule.r() == 0.0 && n > 1 => {
            return Err(incompatible("needs a positive global averaging probability r".into()))
        }
        _ => {}
    }
    let p = hyper.p.unwrap_or(b as f64 / m as f64);
    if preset.uses_p() && !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("refresh probability p = {p} not in (0, 1]")));
    }
    let (local, memory) = match (row.v, preset) {
        (VChoice::I, _) => (LocalRule::Plain, Memory::None),
        (VChoice::J, Preset::Sarah) => (LocalRule::Switching { p }, Memory::Table),
        (VChoice::J, _) => (LocalRule::Table, Memory::Table),
        (VChoice::IOrJ, _) => (LocalRule::Refresh { p }, Memory::Snapshot),
    };
    let tracking = match row.g {
        GChoice::W => TrackingMix::SameAsMixing,
        GChoice::One | GChoice::I => TrackingMix::Identity,
    };
    let stepper = Stepper {
        preset,
        schedule,
        m,
        b,
        p,
        alpha,
        local,
        tracking,
        memory,
    };
    let rho = stepper.params().rho_rw;
    if rho >= 1.0 {
        return Err(Error::NotContractive(rho));
    }
    Ok(stepper)
}

impl Stepper {
    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn schedule(&self) -> &MixingSchedule {
        &self.schedule
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Stepper { alpha, ..self.clone() }
    }

    pub fn plan(&self, seed: u64) -> DrawPlan {
        DrawPlan {
            m: self.m,
            b: self.b,
            schedule: self.schedule.clone(),
            local: self.local,
            tracking: self.tracking,
            seed,
        }
    }

    pub fn params(&self) -> ResolvedParams {
        let rho_w = if self.schedule.n() == 1 { 0.0 } else { self.schedule.rho_w() };
        let r = self.schedule.r();
        let bm = self.b as f64 / self.m as f64;
        let resolve = |prm: Param| match prm {
            Param::Zero => 0.0,
            Param::One => 1.0,
            Param::RhoW => rho_w,
            Param::R => r,
            Param::P => self.p,
            Param::BOverM => bm,
            Param::Mixed => self.p + (1.0 - self.p) * bm,
        };
        let [_, _, p, q] = self.preset.row().params.map(resolve);
        let rho_rw = if self.schedule.n() == 1 { 0.0 } else { self.schedule.rho_rw() };
        ResolvedParams { rho_w, rho_rw, r, p, q }
    }

    pub fn lyapunov(&self, problem: &dyn FiniteSum, regime: Regime) -> Result<LyapunovCoeffs> {
        let prm = self.params();
        let (l, _) = problem.smoothness();
        lyapunov_coeffs(
            regime,
            &LyapunovParams {
                alpha: self.alpha,
                l,
                n: problem.n(),
                big_m: problem.samples(),
                rho_rw: prm.rho_rw,
                r: prm.r,
                p: prm.p,
                q: prm.q,
            },
        )
    }

    pub fn init(&self, problem: &dyn FiniteSum, x0: &DVector<f64>, seed: u64) -> Result<DeviceState> {
        let (n, m, d) = (problem.n(), problem.m(), problem.dim());
        if x0.len() != d {
            return Err(Error::Dimension(format!("x0 has length {}, problem dimension is {d}", x0.len())));
        }
        let mask = self.plan(seed).mask(0);
        let xhat = DMatrix::from_fn(n, d, |_, c| x0[c]);
        let yhat = minibatch_grads(problem, &xhat, &mask);
        let (table, device_avg) = if self.memory == Memory::None {
            (None, None)
        } else {
            let table = sample_grads_at(problem, x0);
            let avg = device_means(&table, n, m);
            (Some(table), Some(avg))
        };
        let tracker = (self.tracking == TrackingMix::SameAsMixing).then(|| device_avg.clone().expect("GT presets keep a table"));
        let snapshot = (self.memory == Memory::Snapshot).then(|| Snapshot {
            points: xhat.clone(),
            avg: device_avg.clone().expect("snapshot presets keep a table"),
            active: false,
        });
        Ok(DeviceState {
            xhat,
            yhat,
            table,
            device_avg,
            tracker,
            snapshot,
            t_last_refresh: None,
            overwritten: Vec::new(),
            k: 0,
        })
    }

    /// One reduced iteration `k -> k+1`.
    pub fn step(&self, problem: &dyn FiniteSum, state: &mut DeviceState, draw: &IterationDraw) -> Result<()> {
        let (n, d) = (problem.n(), problem.dim());
        let m = problem.m();
        let w = draw.mixing.matrix();
        let x_next = w * (&state.xhat - &state.yhat * self.alpha);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: state.k + 1 });
        }
        let next = &draw.mask_next;
        let inv_b = 1.0 / next.b() as f64;
        let mut y_next = DMatrix::zeros(n, d);
        let mut fresh: Vec<(usize, DVector<f64>)> = Vec::with_capacity(n * next.b());
        for i in 0..n {
            let x_i = x_next.row(i).transpose();
            for j in next.device(i) {
                fresh.push((i * m + j, problem.sample_grad(i, *j, &x_i)));
            }
        }
        match self.memory {
            Memory::None => {
                for (row, g) in &fresh {
                    let mut yr = y_next.row_mut(row / m);
                    yr += g.transpose() * inv_b;
                }
            }
            Memory::Table => {
                let table = state.table.as_mut().expect("table presets keep a table");
                let avg = state.device_avg.as_mut().expect("table presets keep device means");
                let base = match &state.tracker {
                    Some(z) => draw.tracking_matrix() * z,
                    None => avg.clone(),
                };
                y_next.copy_from(&base);
                let avg_old = avg.clone();
                state.overwritten.clear();
                for (row, g) in fresh {
                    let i = row / m;
                    let old = table.row(row).transpose();
                    let diff = &g - &old;
                    let mut yr = y_next.row_mut(i);
                    yr += diff.transpose() * inv_b;
                    let mut ar = avg.row_mut(i);
                    ar += diff.transpose() / m as f64;
                    table.set_row(row, &g.transpose());
                    state.overwritten.push((row, old));
                }
                if let Some(z) = state.tracker.as_mut() {
                    *z = draw.tracking_matrix() * &*z + &*avg - avg_old;
                }
            }
            Memory::Snapshot => {
                let table = state.table.as_mut().expect("snapshot presets keep a table");
                let avg = state.device_avg.as_mut().expect("snapshot presets keep device means");
                let snap = state.snapshot.as_mut().expect("snapshot presets keep a snapshot");
                if draw.local == LocalMix::Average {
                    snap.points.copy_from(&state.xhat);
                    snap.avg.copy_from(avg);
                    snap.active = true;
                    state.t_last_refresh = Some(state.k);
                }
                for (row, g) in fresh {
                    let i = row / m;
                    let mut yr = y_next.row_mut(i);
                    if snap.active {
                        let at_snap = problem.sample_grad(i, row % m, &snap.points.row(i).transpose());
                        yr += (&g - at_snap).transpose() * inv_b;
                    } else {
                        yr += g.transpose() * inv_b;
                    }
                    let diff = &g - table.row(row).transpose();
                    let mut ar = avg.row_mut(i);
                    ar += diff.transpose() / m as f64;
                    table.set_row(row, &g.transpose());
                }
                if snap.active {
                    y_next += &snap.avg;
                }
            }
        }
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: state.k + 1 });
        }
        state.xhat = x_next;
        state.yhat = y_next;
        state.k += 1;
        Ok(())
    }

    pub fn run(
        &self,
        problem: &dyn FiniteSum,
        x0: &DVector<f64>,
        seed: u64,
        iterations: usize,
        eval_every: usize,
        ctx: &MetricsContext,
    ) -> Result<Trajectory> {
        let mut engine = ReducedEngine {
            stepper: self,
            state: self.init(problem, x0, seed)?,
        };
        drive(&mut engine, problem, &self.plan(seed), iterations, eval_every, ctx)
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Device iterates at the last full refresh.
    pub points: DMatrix<f64>,
    /// Device-mean gradients at those points.
    pub avg: DMatrix<f64>,
    /// False until the first refresh; before it the estimator is the plain
    /// minibatch gradient.
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub xhat: DMatrix<f64>,
    pub yhat: DMatrix<f64>,
    /// `M x d` gradients of every sample at the point it was last evaluated.
    pub table: Option<DMatrix<f64>>,
    /// Per-device mean of `table`.
    pub device_avg: Option<DMatrix<f64>>,
    /// Device-mean gradient tracker for GT presets.
    pub tracker: Option<DMatrix<f64>>,
    pub snapshot: Option<Snapshot>,
    pub t_last_refresh: Option<usize>,
    /// Table rows replaced by the last step, with their previous values.
    overwritten: Vec<(usize, DVector<f64>)>,
    pub k: usize,
}

impl DeviceState {
    pub fn view(&self, problem: &dyn FiniteSum) -> StateView {
        let delayed = match (&self.snapshot, &self.table) {
            (Some(snap), _) => {
                let m = problem.m();
                let mut out = DMatrix::zeros(problem.samples(), problem.dim());
                for i in 0..problem.n() {
                    let x = snap.points.row(i).transpose();
                    for j in 0..m {
                        out.set_row(i * m + j, &problem.sample_grad(i, j, &x).transpose());
                    }
                }
                Some(out)
            }
            (None, Some(table)) => {
                let mut prev = table.clone();
                for (row, old) in &self.overwritten {
                    prev.set_row(*row, &old.transpose());
                }
                Some(prev)
            }
            (None, None) => None,
        };
        StateView {
            k: self.k,
            xhat: self.xhat.clone(),
            yhat: self.yhat.clone(),
            grads: self.table.clone(),
            delayed,
        }
    }
}

struct ReducedEngine<'a> {
    stepper: &'a Stepper,
    state: DeviceState,
}

impl Engine for ReducedEngine<'_> {
    fn advance(&mut self, problem: &dyn FiniteSum, draw: &IterationDraw) -> Result<()> {
        self.stepper.step(problem, &mut self.state, draw)
    }

    fn view(&self, problem: &dyn FiniteSum) -> StateView {
        self.state.view(problem)
    }
}

/// Row `i` is the mean gradient over the samples `mask` selects on device `i`.
pub fn minibatch_grads(problem: &dyn FiniteSum, xhat: &DMatrix<f64>, mask: &SampleMask) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(xhat.nrows(), xhat.ncols());
    let inv_b = 1.0 / mask.b() as f64;
    for i in 0..xhat.nrows() {
        let x = xhat.row(i).transpose();
        let mut row = out.row_mut(i);
        for &j in mask.device(i) {
            row += problem.sample_grad(i, j, &x).transpose() * inv_b;
        }
    }
    out
}

/// `(I_n (x) 1^T/m) G` for an `M x d` matrix.
pub fn device_means(g: &DMatrix<f64>, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, g.ncols(), |i, c| g.view((i * m, c), (m, 1)).sum() / m as f64)
}
