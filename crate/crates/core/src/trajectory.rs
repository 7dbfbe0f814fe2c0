//! Driving an engine through a draw plan and recording metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{measure, IterationMetrics, MetricsContext, StateView};
use crate::objectives::FiniteSum;
use crate::sampling::{DrawPlan, IterationDraw};

/// A state that can take one step and be observed.
pub trait Engine {
    fn advance(&mut self, problem: &dyn FiniteSum, draw: &IterationDraw) -> Result<()>;
    fn view(&self, problem: &dyn FiniteSum) -> StateView;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub metrics: Vec<IterationMetrics>,
    /// `(k, x_bar_k)` at every evaluation point.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
    pub wall_time_secs: f64,
}

impl Trajectory {
    pub fn last(&self) -> &IterationMetrics {
        self.metrics.last().expect("trajectories hold at least the initial point")
    }

    pub fn lyapunov_series(&self) -> Option<Vec<(usize, f64)>> {
        self.metrics.iter().map(|m| m.lyapunov.map(|t| (m.k, t))).collect()
    }
}

/// Runs `iterations` steps, measuring at `k = 0`, every `eval_every` steps and
/// at the end.
pub fn drive<E: Engine>(
    engine: &mut E,
    problem: &dyn FiniteSum,
    plan: &DrawPlan,
    iterations: usize,
    eval_every: usize,
    ctx: &MetricsContext,
) -> Result<Trajectory> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iteration count K must be at least 1".into()));
    }
    if eval_every == 0 {
        return Err(Error::InvalidArgument("eval_every must be at least 1".into()));
    }
    let start = Instant::now();
    let mut traj = Trajectory {
        metrics: Vec::with_capacity(iterations / eval_every + 2),
        checkpoints: Vec::new(),
        wall_time_secs: 0.0,
    };
    let record = |engine: &E, traj: &mut Trajectory| {
        let view = engine.view(problem);
        traj.checkpoints.push((view.k, view.xbar().iter().copied().collect()));
        traj.metrics.push(measure(&view, problem, ctx));
    };
    record(engine, &mut traj);
    for k in 0..iterations {
        engine.advance(problem, &plan.draw(k))?;
        if (k + 1) % eval_every == 0 || k + 1 == iterations {
            record(engine, &mut traj);
        }
    }
    traj.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(traj)
}
