//! The literal augmented recursion over all `M` sample nodes:
//!
//! `X_{k+1} = R_k X_k - alpha Gamma_k Y_k`,
//! `Y_{k+1} = C_k Y_k + grad F(X_{k+1}) - grad F(X_k)`.
//!
//! This engine is the oracle the reduced algorithms are checked against.

use nalgebra::{DMatrix, DVector};

use crate::algorithms::Stepper;
use crate::error::{Error, Result};
use crate::metrics::{sample_grads_at, MetricsContext, StateView};
use crate::objectives::FiniteSum;
use crate::sampling::{build_correction, build_gamma, build_projection, build_row_mixing, IterationDraw, LocalMix, SampleMask};
use crate::trajectory::{drive, Engine, Trajectory};

#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `grad F(X_k)`, updated only where `X` changed.
    pub grad_cache: DMatrix<f64>,
    /// `grad F(X_t)` for the last `t` with `V_t = J_m`; `grad F(X_0)` before any.
    pub delayed: DMatrix<f64>,
    /// `Lambda_k`.
    pub mask: SampleMask,
    pub k: usize,
}

/// Every row of `X` set to `x0`, `Y = grad F(X_0)`.
pub fn init_state(problem: &dyn FiniteSum, x0: &DVector<f64>, mask0: SampleMask) -> Result<AugmentedState> {
    if x0.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, problem dimension is {}",
            x0.len(),
            problem.dim()
        )));
    }
    if mask0.n() != problem.n() || mask0.m() != problem.m() {
        return Err(Error::Dimension("initial mask does not match the problem".into()));
    }
    let x = DMatrix::from_fn(problem.samples(), problem.dim(), |_, c| x0[c]);
    let grads = sample_grads_at(problem, x0);
    Ok(AugmentedState {
        x,
        y: grads.clone(),
        grad_cache: grads.clone(),
        delayed: grads,
        mask: mask0,
        k: 0,
    })
}

impl AugmentedState {
    pub fn step(&mut self, problem: &dyn FiniteSum, draw: &IterationDraw, alpha: f64) -> Result<()> {
        if draw.mask != self.mask {
            return Err(Error::InvalidArgument(format!("draw {} does not start from the state's mask", draw.k)));
        }
        let gamma = build_gamma(draw);
        let r = build_row_mixing(draw, &gamma);
        let x_next = r.mul_dense(&self.x) - gamma.mul_dense(&self.y) * alpha;
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: self.k + 1 });
        }
        let m = problem.m();
        let mut grad_next = self.grad_cache.clone();
        for i in 0..problem.n() {
            for row in draw.mask_next.rows(i) {
                let g = problem.sample_grad(i, row % m, &x_next.row(row).transpose());
                grad_next.set_row(row, &g.transpose());
            }
        }
        let y_next = build_correction(draw).apply(&self.y) + &grad_next - &self.grad_cache;
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: self.k + 1 });
        }
        if draw.local == LocalMix::Average {
            self.delayed = std::mem::replace(&mut self.grad_cache, grad_next);
        } else {
            self.grad_cache = grad_next;
        }
        self.x = x_next;
        self.y = y_next;
        self.mask = draw.mask_next.clone();
        self.k += 1;
        Ok(())
    }

    /// `X_hat_k = S_k X_k`.
    pub fn xhat(&self) -> DMatrix<f64> {
        build_projection(&self.mask).mul_dense(&self.x)
    }

    pub fn yhat(&self) -> DMatrix<f64> {
        build_projection(&self.mask).mul_dense(&self.y)
    }

    /// Relative violation of `mean(Y_k) = mean(grad F(X_k))`.
    pub fn tracking_violation(&self) -> f64 {
        let diff = (self.y.row_mean() - self.grad_cache.row_mean()).abs().max();
        diff / (1.0 + self.grad_cache.abs().max())
    }

    pub fn view(&self) -> StateView {
        StateView {
            k: self.k,
            xhat: self.xhat(),
            yhat: self.yhat(),
            grads: Some(self.grad_cache.clone()),
            delayed: Some(self.delayed.clone()),
        }
    }
}

pub struct ReferenceEngine {
    pub state: AugmentedState,
    pub alpha: f64,
    /// Largest tracking violation seen so far.
    pub max_violation: f64,
}

impl Engine for ReferenceEngine {
    fn advance(&mut self, problem: &dyn FiniteSum, draw: &IterationDraw) -> Result<()> {
        self.state.step(problem, draw, self.alpha)?;
        self.max_violation = self.max_violation.max(self.state.tracking_violation());
        Ok(())
    }

    fn view(&self, _problem: &dyn FiniteSum) -> StateView {
        self.state.view()
    }
}

/// Runs the augmented recursion with the draws `stepper` would consume for
/// `seed`. Returns the trajectory and the largest tracking violation.
pub fn run(
    problem: &dyn FiniteSum,
    stepper: &Stepper,
    x0: &DVector<f64>,
    seed: u64,
    iterations: usize,
    eval_every: usize,
    ctx: &MetricsContext,
) -> Result<(Trajectory, f64)> {
    let plan = stepper.plan(seed);
    let state = init_state(problem, x0, plan.mask(0))?;
    let mut engine = ReferenceEngine {
        max_violation: state.tracking_violation(),
        state,
        alpha: stepper.alpha(),
    };
    let traj = drive(&mut engine, problem, &plan, iterations, eval_every, ctx)?;
    Ok((traj, engine.max_violation))
}
