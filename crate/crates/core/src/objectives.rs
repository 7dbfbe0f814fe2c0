//! Finite-sum objectives `f(x) = (1/n) sum_i (1/m) sum_j f_ij(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample oracle over `n` devices with `m` samples each.
///
/// Samples are addressed by `(device, local index)`; the global row used by the
/// augmented state is `i * m + j`.
pub trait FiniteSum: Send + Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn dim(&self) -> usize;

    fn sample_value(&self, i: usize, j: usize, x: &DVector<f64>) -> f64;
    fn sample_grad(&self, i: usize, j: usize, x: &DVector<f64>) -> DVector<f64>;

    /// `(L, mu)`.
    fn smoothness(&self) -> (f64, f64);

    fn reference_optimum(&self) -> Result<DVector<f64>>;

    fn metadata(&self) -> ProblemMeta;

    fn samples(&self) -> usize {
        self.n() * self.m()
    }

    fn device_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        (0..self.m()).map(|j| self.sample_value(i, j, x)).sum::<f64>() / self.m() as f64
    }

    fn device_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for j in 0..self.m() {
            g += self.sample_grad(i, j, x);
        }
        g / self.m() as f64
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.n()).map(|i| self.device_value(i, x)).sum::<f64>() / self.n() as f64
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.n() {
            g += self.device_grad(i, x);
        }
        g / self.n() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemMeta {
    Quadratic { mu_reg: f64, min_curvature: f64, max_curvature: f64 },
    Logistic { lambda: f64, features: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l: f64,
    pub mu: f64,
    pub sigma_star: f64,
    pub zeta_star: f64,
    pub x_star: Vec<f64>,
}

/// Exact left-hand sides of the sampling-variance and heterogeneity bounds at `x_star`.
pub fn heterogeneity_constants(problem: &dyn FiniteSum, x_star: &DVector<f64>) -> (f64, f64) {
    let (n, m) = (problem.n(), problem.m());
    let mut sigma = 0.0;
    let mut zeta = 0.0;
    for i in 0..n {
        let grads: Vec<DVector<f64>> = (0..m).map(|j| problem.sample_grad(i, j, x_star)).collect();
        let mean = grads.iter().fold(DVector::zeros(problem.dim()), |acc, g| acc + g) / m as f64;
        sigma += grads.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>();
        zeta += mean.norm_squared();
    }
    (sigma / (n * m) as f64, zeta / n as f64)
}

pub fn problem_constants(problem: &dyn FiniteSum) -> Result<ProblemConstants> {
    let (l, mu) = problem.smoothness();
    let x_star = problem.reference_optimum()?;
    let (sigma_star, zeta_star) = heterogeneity_constants(problem, &x_star);
    Ok(ProblemConstants {
        l,
        mu,
        sigma_star,
        zeta_star,
        x_star: x_star.iter().copied().collect(),
    })
}

/// `f_ij(x) = 1/2 (x - a_ij)^T H (x - a_ij) + mu_reg/2 ||x||^2` with diagonal `H`.
///
/// With `H = I` this is the isotropic anchor problem. A zero diagonal entry makes
/// the problem merely convex along that coordinate.
#[derive(Debug, Clone)]
pub struct Quadratic {
    n: usize,
    m: usize,
    anchors: Vec<DVector<f64>>,
    curvature: DVector<f64>,
    mu_reg: f64,
}

impl Quadratic {
    /// `anchors[i][j]` is `a_ij`.
    pub fn new(anchors: Vec<Vec<DVector<f64>>>, mu_reg: f64) -> Result<Self> {
        let d = anchors
            .first()
            .and_then(|dev| dev.first())
            .map(DVector::len)
            .ok_or_else(|| Error::Dimension("quadratic needs at least one anchor".into()))?;
        Self::with_curvature(anchors, DVector::from_element(d, 1.0), mu_reg)
    }

    pub fn with_curvature(anchors: Vec<Vec<DVector<f64>>>, curvature: DVector<f64>, mu_reg: f64) -> Result<Self> {
        if !(mu_reg >= 0.0 && mu_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu_reg = {mu_reg} must be finite and nonnegative")));
        }
        if curvature.iter().any(|&h| !(h >= 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument("curvatures must be finite and nonnegative".into()));
        }
        let n = anchors.len();
        let m = anchors.first().map_or(0, Vec::len);
        if n == 0 || m == 0 {
            return Err(Error::Dimension("quadratic needs n, m >= 1".into()));
        }
        let d = curvature.len();
        let mut flat = Vec::with_capacity(n * m);
        for dev in anchors {
            if dev.len() != m {
                return Err(Error::Dimension("every device needs the same number of anchors".into()));
            }
            for a in dev {
                if a.len() != d {
                    return Err(Error::Dimension(format!("anchor has dimension {}, expected {d}", a.len())));
                }
                flat.push(a);
            }
        }
        Ok(Quadratic {
            n,
            m,
            anchors: flat,
            curvature,
            mu_reg,
        })
    }

    /// Scalar anchors, one list per device.
    pub fn scalar(anchors: &[&[f64]], mu_reg: f64) -> Result<Self> {
        let nested = anchors
            .iter()
            .map(|dev| dev.iter().map(|&a| DVector::from_element(1, a)).collect())
            .collect();
        Self::new(nested, mu_reg)
    }

    /// The same samples on a single device.
    pub fn pooled(&self) -> Self {
        Quadratic {
            n: 1,
            m: self.n * self.m,
            anchors: self.anchors.clone(),
            curvature: self.curvature.clone(),
            mu_reg: self.mu_reg,
        }
    }

    pub fn anchor(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.anchors[i * self.m + j]
    }

    pub fn curvature(&self) -> &DVector<f64> {
        &self.curvature
    }

    pub fn mu_reg(&self) -> f64 {
        self.mu_reg
    }

    fn anchor_mean(&self) -> DVector<f64> {
        self.anchors.iter().fold(DVector::zeros(self.dim()), |acc, a| acc + a) / self.anchors.len() as f64
    }
}

impl FiniteSum for Quadratic {
    fn n(&self) -> usize {
        self.n
    }

    fn m(&self) -> usize {
        self.m
    }

    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn sample_value(&self, i: usize, j: usize, x: &DVector<f64>) -> f64 {
        let diff = x - self.anchor(i, j);
        0.5 * diff.component_mul(&diff).dot(&self.curvature) + 0.5 * self.mu_reg * x.norm_squared()
    }

    fn sample_grad(&self, i: usize, j: usize, x: &DVector<f64>) -> DVector<f64> {
        (x - self.anchor(i, j)).component_mul(&self.curvature) + x * self.mu_reg
    }

    fn smoothness(&self) -> (f64, f64) {
        let hi = self.curvature.max();
        let lo = self.curvature.min();
        (hi + self.mu_reg, lo + self.mu_reg)
    }

    /// Closed form; coordinates with zero total curvature are set to 0.
    fn reference_optimum(&self) -> Result<DVector<f64>> {
        let mean = self.anchor_mean();
        Ok(DVector::from_fn(self.dim(), |c, _| {
            let total = self.curvature[c] + self.mu_reg;
            if total == 0.0 {
                0.0
            } else {
                self.curvature[c] * mean[c] / total
            }
        }))
    }

    fn metadata(&self) -> ProblemMeta {
        ProblemMeta::Quadratic {
            mu_reg: self.mu_reg,
            min_curvature: self.curvature.min(),
            max_curvature: self.curvature.max(),
        }
    }
}

pub const CLASSES: usize = 10;

/// Ten independent binary logistic channels sharing one feature vector.
///
/// The parameter is laid out class-major: block `c` holds the `d_feat` weights of
/// channel `c`. Per-sample loss is
/// `sum_c log(1 + exp(-phi_c x_c^T theta)) + lambda/2 ||x||^2` with `phi_c = +1`
/// for the true class and `-1` otherwise.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: DMatrix<f64>,
    labels: Vec<u8>,
    assignment: Vec<Vec<usize>>,
    lambda: f64,
    max_sq_norm: f64,
}

impl Logistic {
    /// `assignment[i]` lists the rows of `features` held by device `i`.
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>, lambda: f64, assignment: Vec<Vec<usize>>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
        }
        if labels.len() != features.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= CLASSES) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{CLASSES}")));
        }
        let m = assignment.first().map_or(0, Vec::len);
        if assignment.is_empty() || m == 0 || assignment.iter().any(|dev| dev.len() != m) {
            return Err(Error::Dimension("assignment must give every device the same positive count".into()));
        }
        let mut seen = vec![false; features.nrows()];
        for &row in assignment.iter().flatten() {
            if row >= seen.len() || std::mem::replace(&mut seen[row], true) {
                return Err(Error::Dimension(format!("assignment row {row} out of range or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dimension("assignment must cover every sample".into()));
        }
        let max_sq_norm = features.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        Ok(Logistic {
            features,
            labels,
            assignment,
            lambda,
            max_sq_norm,
        })
    }

    /// Contiguous split of all rows into `n` equal devices.
    pub fn contiguous(features: DMatrix<f64>, labels: Vec<u8>, lambda: f64, n: usize) -> Result<Self> {
        let total = features.nrows();
        if n == 0 || total % n != 0 {
            return Err(Error::Dimension(format!("{total} samples do not split evenly over {n} devices")));
        }
        let m = total / n;
        let assignment = (0..n).map(|i| (i * m..(i + 1) * m).collect()).collect();
        Self::new(features, labels, lambda, assignment)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn row(&self, i: usize, j: usize) -> usize {
        self.assignment[i][j]
    }

    fn margins(&self, row: usize, x: &DVector<f64>) -> [f64; CLASSES] {
        let df = self.feature_dim();
        let theta = self.features.row(row);
        let mut z = [0.0; CLASSES];
        for (c, zc) in z.iter_mut().enumerate() {
            let block = x.rows(c * df, df);
            let score: f64 = theta.iter().zip(block.iter()).map(|(a, b)| a * b).sum();
            let phi = if self.labels[row] as usize == c { 1.0 } else { -1.0 };
            *zc = phi * score;
        }
        z
    }
}

/// `log(1 + exp(-z))`, stable for large `|z|`.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))`, the derivative magnitude of `softplus_neg`.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl FiniteSum for Logistic {
    fn n(&self) -> usize {
        self.assignment.len()
    }

    fn m(&self) -> usize {
        self.assignment[0].len()
    }

    fn dim(&self) -> usize {
        CLASSES * self.feature_dim()
    }

    fn sample_value(&self, i: usize, j: usize, x: &DVector<f64>) -> f64 {
        let row = self.row(i, j);
        let loss: f64 = self.margins(row, x).iter().map(|&z| softplus_neg(z)).sum();
        loss + 0.5 * self.lambda * x.norm_squared()
    }

    fn sample_grad(&self, i: usize, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let row = self.row(i, j);
        let df = self.feature_dim();
        let theta = self.features.row(row);
        let z = self.margins(row, x);
        let mut g = x * self.lambda;
        for (c, &zc) in z.iter().enumerate() {
            let phi = if self.labels[row] as usize == c { 1.0 } else { -1.0 };
            let coef = -phi * sigmoid_neg(zc);
            for (k, t) in theta.iter().enumerate() {
                g[c * df + k] += coef * t;
            }
        }
        g
    }

    /// `L = lambda + (10/4) max ||theta||^2`, `mu = lambda`.
    fn smoothness(&self) -> (f64, f64) {
        (self.lambda + self.max_sq_norm * CLASSES as f64 / 4.0, self.lambda)
    }

    /// Full-batch gradient descent with Armijo backtracking to `||grad|| <= 1e-10`.
    fn reference_optimum(&self) -> Result<DVector<f64>> {
        minimize_gd(self, 1e-10, 200_000)
    }

    fn metadata(&self) -> ProblemMeta {
        ProblemMeta::Logistic {
            lambda: self.lambda,
            features: self.feature_dim(),
            classes: CLASSES,
        }
    }
}

/// Deterministic full-batch gradient descent with backtracking line search.
///
/// Trial steps use the Barzilai-Borwein length, then halve until the Armijo
/// condition holds, so every accepted step decreases `f`.
pub fn minimize_gd(problem: &dyn FiniteSum, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let (l, _) = problem.smoothness();
    let mut x = DVector::zeros(problem.dim());
    let mut fx = problem.value(&x);
    let mut g = problem.grad(&x);
    let mut step = 1.0 / l;
    for _ in 0..max_iter {
        let gnorm2 = g.norm_squared();
        if gnorm2.sqrt() <= tol {
            return Ok(x);
        }
        let mut t = step;
        let (x_new, f_new) = loop {
            let cand = &x - &g * t;
            let fc = problem.value(&cand);
            if fc <= fx - 1e-4 * t * gnorm2 || t < 1e-20 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        let g_new = problem.grad(&x_new);
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        step = if sy > 0.0 { s.norm_squared() / sy } else { 1.0 / l };
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        grad_norm: g.norm(),
    })
}

/// Fraction of rows whose argmax channel score matches the label; ties go to the
/// lowest class index.
pub fn eval_accuracy(model: &DVector<f64>, features: &DMatrix<f64>, labels: &[u8]) -> Result<f64> {
    let df = features.ncols();
    if model.len() != CLASSES * df || labels.len() != features.nrows() {
        return Err(Error::Dimension(format!(
            "model length {} for {} features x {CLASSES} classes, {} labels for {} rows",
            model.len(),
            df,
            labels.len(),
            features.nrows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Dimension("empty test set".into()));
    }
    let correct = features
        .row_iter()
        .zip(labels)
        .filter(|(theta, &y)| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..CLASSES {
                let score: f64 = theta.iter().zip(model.rows(c * df, df).iter()).map(|(a, b)| a * b).sum();
                if score > best.1 {
                    best = (c, score);
                }
            }
            best.0 == y as usize
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Quadratic {
        Quadratic::scalar(&[&[0.0, 2.0], &[4.0, 6.0]], 0.0).unwrap()
    }

    fn random_logistic(seed: u64, total: usize, df: usize, n: usize) -> Logistic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = DMatrix::from_fn(total, df, |_, _| rng.gen_range(-1.0..1.0));
        let labels = (0..total).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
        Logistic::contiguous(features, labels, 0.01, n).unwrap()
    }

    fn fd_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |k, _| {
            let mut p = x.clone();
            let mut q = x.clone();
            p[k] += h;
            q[k] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
    }

    #[test]
    fn toy_constants() {
        let q = toy();
        let c = problem_constants(&q).unwrap();
        assert_eq!(c.x_star, vec![3.0]);
        assert_abs_diff_eq!(c.sigma_star, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.zeta_star, 4.0, epsilon = 1e-14);
        assert_eq!((c.l, c.mu), (1.0, 1.0));
    }

    #[test]
    fn zero_anchors_and_regularized_optimum() {
        let q = Quadratic::scalar(&[&[0.0, 0.0]], 0.0).unwrap();
        let c = problem_constants(&q).unwrap();
        assert_eq!((c.x_star[0], c.sigma_star, c.zeta_star), (0.0, 0.0, 0.0));
        let q = Quadratic::scalar(&[&[0.0, 2.0], &[4.0, 6.0]], 1.0).unwrap();
        assert_eq!(q.reference_optimum().unwrap()[0], 1.5);
        assert_eq!(q.smoothness(), (2.0, 2.0));
    }

    #[test]
    fn heterogeneity_scales_quadratically() {
        let base = toy();
        let scaled = Quadratic::scalar(&[&[0.0, 6.0], &[12.0, 18.0]], 0.0).unwrap();
        let (_, z1) = heterogeneity_constants(&base, &base.reference_optimum().unwrap());
        let (_, z3) = heterogeneity_constants(&scaled, &scaled.reference_optimum().unwrap());
        assert_abs_diff_eq!(z3, 9.0 * z1, epsilon = 1e-12);
    }

    #[test]
    fn single_sample_devices_have_no_sampling_variance() {
        let q = Quadratic::scalar(&[&[1.0], &[5.0]], 0.0).unwrap();
        let (s, z) = heterogeneity_constants(&q, &q.reference_optimum().unwrap());
        assert_eq!(s, 0.0);
        assert_abs_diff_eq!(z, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn value_is_mean_of_samples() {
        let q = toy();
        let x = DVector::from_element(1, 1.0);
        let direct = (0.5 * (1.0 + 1.0 + 9.0 + 25.0)) / 4.0;
        assert_abs_diff_eq!(q.value(&x), direct, epsilon = 1e-14);
    }

    #[test]
    fn quadratic_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let anchors = (0..2)
            .map(|_| (0..3).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0))).collect())
            .collect();
        let h = DVector::from_vec(vec![1.0, 0.5, 1e-3, 0.0]);
        let q = Quadratic::with_curvature(anchors, h, 0.1).unwrap();
        for _ in 0..5 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let g = q.sample_grad(1, 2, &x);
            let fd = fd_grad(|y| q.sample_value(1, 2, y), &x, 1e-5);
            assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1.0));
        }
        assert!(q.grad(&q.reference_optimum().unwrap()).norm() <= 1e-12);
    }

    #[test]
    fn logistic_at_zero() {
        let lg = random_logistic(1, 8, 3, 2);
        let x = DVector::zeros(lg.dim());
        assert_abs_diff_eq!(lg.sample_value(0, 0, &x), CLASSES as f64 * 2f64.ln(), epsilon = 1e-14);
        let zero = Logistic::contiguous(DMatrix::zeros(4, 3), vec![0, 1, 2, 3], 0.001, 2).unwrap();
        assert_eq!(zero.smoothness(), (0.001, 0.001));
    }

    #[test]
    fn logistic_gradient_matches_fd() {
        let lg = random_logistic(3, 12, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let x = DVector::from_fn(lg.dim(), |_, _| rng.gen_range(-1.0..1.0));
            for (i, j) in [(0, 0), (2, 3), (1, 2)] {
                let g = lg.sample_grad(i, j, &x);
                let fd = fd_grad(|y| lg.sample_value(i, j, y), &x, 1e-5);
                assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1.0), "{}", (&g - &fd).norm());
            }
        }
    }

    #[test]
    fn logistic_l_bounds_hessian() {
        let lg = random_logistic(5, 20, 3, 2);
        let (l, _) = lg.smoothness();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = lg.dim();
        for _ in 0..5 {
            let x = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let h = 1e-5;
            let hess = DMatrix::from_fn(d, d, |_, _| 0.0);
            let mut hess = hess;
            for k in 0..d {
                let mut p = x.clone();
                let mut q = x.clone();
                p[k] += h;
                q[k] -= h;
                let col = (lg.grad(&p) - lg.grad(&q)) / (2.0 * h);
                hess.set_column(k, &col);
            }
            let sym = (&hess + hess.transpose()) * 0.5;
            let top = sym.symmetric_eigen().eigenvalues.max();
            assert!(top <= l + 1e-6, "top {top} > L {l}");
        }
    }

    #[test]
    fn logistic_reference_optimum_is_stationary() {
        let lg = random_logistic(7, 40, 5, 4);
        let x = lg.reference_optimum().unwrap();
        assert!(lg.grad(&x).norm() <= 1e-10);
    }

    #[test]
    fn accuracy_rules() {
        let features = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 2.0]);
        let zero = DVector::zeros(CLASSES);
        assert_eq!(eval_accuracy(&zero, &features, &[0, 1, 0]).unwrap(), 2.0 / 3.0);
        let mut model = DVector::zeros(CLASSES);
        model[3] = 1.0;
        model[7] = -1.0;
        let acc = eval_accuracy(&model, &features, &[3, 7, 3]).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(eval_accuracy(&(model * 5.0), &features, &[3, 7, 3]).unwrap(), acc);
        assert!(eval_accuracy(&DVector::zeros(3), &features, &[0, 0, 0]).is_err());
    }

    #[test]
    fn separable_toy_trains_to_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let total = 20;
        let labels: Vec<u8> = (0..total).map(|r| (r % 2) as u8).collect();
        let features = DMatrix::from_fn(total, 2, |r, c| {
            let sign = if labels[r] == 0 { 1.0 } else { -1.0 };
            if c == 0 {
                sign * rng.gen_range(1.0..2.0)
            } else {
                1.0
            }
        });
        let lg = Logistic::contiguous(features.clone(), labels.clone(), 0.01, 2).unwrap();
        let x = lg.reference_optimum().unwrap();
        assert_eq!(eval_accuracy(&x, &features, &labels).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_assignment() {
        let f = DMatrix::zeros(4, 2);
        assert!(Logistic::new(f.clone(), vec![0; 4], 0.1, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Logistic::new(f.clone(), vec![0; 4], 0.0, vec![vec![0, 1], vec![2, 3]]).is_err());
        assert!(Logistic::new(f, vec![0, 0, 0, 11], 0.1, vec![vec![0, 1], vec![2, 3]]).is_err());
    }
}
