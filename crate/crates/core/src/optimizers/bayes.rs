//! Gaussian-process surrogate with expected-improvement acquisition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{snap_to_centers, Ctx, Engine};
use crate::error::SurrogateError;
use crate::exec;

/// Hyperparameters of the Matérn 5/2 kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpParams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        Self { length_scale: 0.2, signal_variance: 1.0, noise: 1e-6 }
    }
}

impl GpParams {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let s = 5f64.sqrt() * r / self.length_scale;
        self.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoaConfig {
    pub initial_points: usize,
    pub candidates: usize,
    pub gp: GpParams,
    /// Re-select the length scale by marginal likelihood every this many
    /// observations; 0 disables.
    pub refit_every: usize,
    pub length_scale_grid: Vec<f64>,
}

impl Default for BoaConfig {
    fn default() -> Self {
        Self {
            initial_points: 10,
            candidates: 2048,
            gp: GpParams::default(),
            refit_every: 0,
            length_scale_grid: vec![0.05, 0.1, 0.2, 0.4, 0.8],
        }
    }
}

const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    params: GpParams,
    x: Vec<Vec<f64>>,
    mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    centered: DVector<f64>,
}

impl GaussianProcess {
    /// Fits the posterior; the prior mean is the sample mean of `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: GpParams) -> Result<Self, SurrogateError> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(SurrogateError(format!("need matching non-empty data (x: {n}, y: {})", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError("observations must be finite".into()));
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        let base = DMatrix::from_fn(n, n, |i, j| params.kernel(&x[i], &x[j]));
        let mut jitter = 0.0;
        let chol = loop {
            let mut k = base.clone();
            for i in 0..n {
                k[(i, i)] += params.noise + jitter;
            }
            if let Some(c) = Cholesky::new(k) {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > MAX_JITTER {
                return Err(SurrogateError(format!("covariance not positive definite with {n} points")));
            }
        };
        let centered = DVector::from_iterator(n, y.iter().map(|v| v - mean));
        let alpha = chol.solve(&centered);
        Ok(Self { params, x: x.to_vec(), mean, chol, alpha, centered })
    }

    pub fn params(&self) -> GpParams {
        self.params
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.params.kernel(xi, p)));
        let mu = self.mean + ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("cholesky factor has a nonzero diagonal");
        let var = (self.params.kernel(p, p) - v.dot(&v)).max(0.0);
        (mu, var.sqrt())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x.len() as f64;
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.centered.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let d = mu - best;
    if sigma < 1e-12 {
        return d.max(0.0);
    }
    let z = d / sigma;
    (d * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

/// Fits a GP to `(x, y)` and returns the index and value of the candidate
/// with the largest expected improvement (first on ties).
pub fn boa_propose(
    x: &[Vec<f64>],
    y: &[f64],
    candidates: &[Vec<f64>],
    params: GpParams,
) -> Result<(usize, f64), SurrogateError> {
    if candidates.is_empty() {
        return Err(SurrogateError("no candidates".into()));
    }
    let gp = GaussianProcess::fit(x, y, params)?;
    let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scores = exec::par_map(candidates, |c| {
        let (mu, sigma) = gp.predict(c);
        expected_improvement(mu, sigma, best)
    });
    let mut arg = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[arg] {
            arg = i;
        }
    }
    Ok((arg, scores[arg]))
}

/// Picks the grid length scale with the highest marginal likelihood.
fn refit_length_scale(x: &[Vec<f64>], y: &[f64], base: GpParams, grid: &[f64]) -> GpParams {
    let mut best = (base, f64::NEG_INFINITY);
    for &l in grid {
        let p = GpParams { length_scale: l, ..base };
        if let Ok(gp) = GaussianProcess::fit(x, y, p) {
            let lml = gp.log_marginal_likelihood();
            if lml > best.1 {
                best = (p, lml);
            }
        }
    }
    best.0
}

#[derive(Debug)]
pub(crate) struct Bayesian {
    cfg: BoaConfig,
    params: GpParams,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    proposed: Vec<f64>,
}

impl Bayesian {
    pub(crate) fn new(cfg: BoaConfig) -> Self {
        Self { params: cfg.gp, cfg, x: Vec::new(), y: Vec::new(), proposed: Vec::new() }
    }

    fn random_center(ctx: &mut Ctx<'_>) -> Vec<f64> {
        let idx = ctx.space.random_indices(ctx.rng);
        ctx.space.encode_indices(&idx)
    }
}

impl Engine for Bayesian {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>> {
        let next = if self.x.len() < self.cfg.initial_points.max(1) {
            Self::random_center(ctx)
        } else {
            let k = ctx.space.k();
            let candidates: Vec<Vec<f64>> = (0..self.cfg.candidates.max(1))
                .map(|_| {
                    let u: Vec<f64> = (0..k).map(|_| ctx.rng.random::<f64>()).collect();
                    snap_to_centers(ctx.space, &u)
                })
                .filter(|c| !self.x.contains(c))
                .collect();
            if candidates.is_empty() {
                Self::random_center(ctx)
            } else {
                match boa_propose(&self.x, &self.y, &candidates, self.params) {
                    Ok((i, _)) => candidates[i].clone(),
                    Err(e) => {
                        log::warn!("surrogate fit failed, sampling at random: {e}");
                        Self::random_center(ctx)
                    }
                }
            }
        };
        self.proposed = next.clone();
        vec![next]
    }

    fn observe(&mut self, values: &[f64], _ctx: &mut Ctx<'_>) {
        let p = std::mem::take(&mut self.proposed);
        let v = values[0];
        if !v.is_finite() || self.x.contains(&p) {
            return;
        }
        self.x.push(p);
        self.y.push(v);
        let n = self.x.len();
        if self.cfg.refit_every > 0 && n >= self.cfg.initial_points && n.is_multiple_of(self.cfg.refit_every) {
            self.params = refit_length_scale(&self.x, &self.y, self.cfg.gp, &self.cfg.length_scale_grid);
        }
    }
}
