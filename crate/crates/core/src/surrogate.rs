//! Gaussian-process surrogate with a constant mean and a Gaussian
//! (squared-exponential) covariance.
//!
//! The covariance between inputs `u` and `v` is
//! `sigma2 * exp(-sum_k (u_k - v_k)^2 / (2 l_k^2))`, plus `nugget` on the
//! diagonal of the training covariance. The mean `mu` and the process variance
//! `sigma2` are profiled out of the likelihood in closed form, so only the
//! lengthscales are optimized numerically (multi-start projected BFGS on
//! `log l`).

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::euclidean;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
/// Floor for the profiled process variance (constant training energies).
const MIN_SIGMA2: f64 = 1e-300;
/// Largest nugget ratio tried before giving up on a factorization.
const MAX_NUGGET_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub mu: f64,
    pub sigma2: f64,
    pub lengthscales: Vec<f64>,
    /// Absolute nugget added to the training-covariance diagonal.
    pub nugget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpOptions {
    /// Number of multi-start local searches.
    pub starts: usize,
    /// BFGS iteration cap per start.
    pub max_iters: usize,
    /// Seed for the random starts.
    pub seed: u64,
    /// Nugget as a fraction of the process variance.
    pub nugget_ratio: f64,
    /// One shared lengthscale instead of one per dimension.
    pub isotropic: bool,
    pub lengthscale_bounds: (f64, f64),
    /// Extra starting lengthscales, tried before the random starts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iters: 100,
            seed: 0,
            nugget_ratio: 1e-8,
            isotropic: false,
            lengthscale_bounds: (1e-6, 1e6),
            warm_start: None,
        }
    }
}

/// The profiled log marginal likelihood as a function of log-lengthscales.
#[derive(Debug, Clone)]
pub struct LikelihoodSurface<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    nugget_ratio: f64,
    isotropic: bool,
}

/// Everything the likelihood evaluation produces at one parameter point.
struct Factorized {
    chol: Cholesky<f64, Dyn>,
    mu: f64,
    sigma2: f64,
    /// `A^{-1} (y - mu 1)` in correlation units.
    alpha: DVector<f64>,
    loglik: f64,
}

impl<'a> LikelihoodSurface<'a> {
    pub fn new(x: &'a [Vec<f64>], y: &'a [f64], nugget_ratio: f64, isotropic: bool) -> Self {
        Self {
            x,
            y,
            nugget_ratio,
            isotropic,
        }
    }

    fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// Number of free parameters (1 when isotropic).
    pub fn n_params(&self) -> usize {
        if self.isotropic {
            1
        } else {
            self.dim()
        }
    }

    fn inv_sq(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.dim();
        (0..p)
            .map(|k| {
                let l = if self.isotropic { theta[0] } else { theta[k] }.exp();
                1.0 / (l * l)
            })
            .collect()
    }

    fn correlation(&self, inv_sq: &[f64]) -> DMatrix<f64> {
        let m = self.x.len();
        let mut a = DMatrix::zeros(m, m);
        for u in 0..m {
            a[(u, u)] = 1.0 + self.nugget_ratio;
            for v in 0..u {
                let r = corr(&self.x[u], &self.x[v], inv_sq);
                a[(u, v)] = r;
                a[(v, u)] = r;
            }
        }
        a
    }

    fn factorize(&self, theta: &[f64]) -> Option<(Factorized, DMatrix<f64>)> {
        let inv_sq = self.inv_sq(theta);
        let a = self.correlation(&inv_sq);
        let chol = Cholesky::new(a.clone())?;
        let m = self.y.len();
        let ones = DVector::from_element(m, 1.0);
        let y = DVector::from_column_slice(self.y);
        let ainv_1 = chol.solve(&ones);
        let ainv_y = chol.solve(&y);
        let mu = ones.dot(&ainv_y) / ones.dot(&ainv_1);
        let alpha = &ainv_y - &ainv_1 * mu;
        let resid = &y - &ones * mu;
        let sigma2 = (resid.dot(&alpha) / m as f64).max(MIN_SIGMA2);
        let log_det: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let loglik = -0.5 * (m as f64) * (sigma2.ln() + LOG_2PI + 1.0) - 0.5 * log_det;
        if !loglik.is_finite() {
            return None;
        }
        Some((
            Factorized {
                chol,
                mu,
                sigma2,
                alpha,
                loglik,
            },
            a,
        ))
    }

    /// Profiled log marginal likelihood at `theta = log(lengthscales)`.
    pub fn value(&self, theta: &[f64]) -> Option<f64> {
        self.factorize(theta).map(|(f, _)| f.loglik)
    }

    /// Value and analytic gradient with respect to `theta`.
    pub fn value_and_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (f, a) = self.factorize(theta)?;
        Some((f.loglik, self.gradient(theta, &f, &a)))
    }

    fn gradient(&self, theta: &[f64], f: &Factorized, a: &DMatrix<f64>) -> Vec<f64> {
        let m = self.x.len();
        let p = self.dim();
        let inv_sq = self.inv_sq(theta);
        let ainv = spd_inverse(f.chol.l_dirty());
        let mut grad_dims = vec![0.0; p];
        // dA/dtheta_k = R_uv * d_k^2 / l_k^2 off the diagonal; the trace and
        // quadratic terms fold into one weighted sum over pairs.
        for v in 0..m {
            let (ainv_v, a_v) = (ainv.column(v), a.column(v));
            let av = f.alpha[v] / f.sigma2;
            let xv = &self.x[v];
            for u in v + 1..m {
                let w = (f.alpha[u] * av - ainv_v[u]) * a_v[u];
                if w == 0.0 {
                    continue;
                }
                for ((g, (a, b)), s) in grad_dims
                    .iter_mut()
                    .zip(self.x[u].iter().zip(xv))
                    .zip(&inv_sq)
                {
                    let d = a - b;
                    *g += w * d * d * s;
                }
            }
        }
        // factor 1/2 cancels against the symmetric double count
        if self.isotropic {
            vec![grad_dims.iter().sum()]
        } else {
            grad_dims
        }
    }
}

/// `(L L^T)^{-1}` from the lower Cholesky factor: invert `L` column by
/// column, then one product.
fn spd_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    let mut linv = DMatrix::<f64>::zeros(n, n);
    for (j, x) in linv.as_mut_slice().chunks_exact_mut(n).enumerate() {
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / ls[k * n + k];
            x[k] = xk;
            if xk != 0.0 {
                let lk = &ls[k * n + k + 1..(k + 1) * n];
                for (xi, li) in x[k + 1..].iter_mut().zip(lk) {
                    *xi -= xk * li;
                }
            }
        }
    }
    linv.transpose() * &linv
}

#[inline]
fn corr(u: &[f64], v: &[f64], inv_sq: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), w) in u.iter().zip(v).zip(inv_sq) {
        let d = a - b;
        s += d * d * w;
    }
    (-0.5 * s).exp()
}

/// A fitted Gaussian-process surrogate. Immutable; safe to share for
/// concurrent prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    hyper: GpHyperparams,
    inv_sq: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `C^{-1}(S;S) (e - mu 1)` scaled to correlation units.
    weights: DVector<f64>,
    loglik: f64,
    options: GpOptions,
}

/// Audit record for a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpSummary {
    pub hyperparams: GpHyperparams,
    pub n_train: usize,
    pub training_ids: Vec<usize>,
    pub log_marginal_likelihood: f64,
    pub nugget_ratio: f64,
}

impl GpModel {
    /// Builds a model with fixed hyperparameters (no likelihood search).
    pub fn with_hyperparams(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyperparams) -> Result<Self> {
        validate_training(&x, &y)?;
        if hyper.lengthscales.len() != x[0].len() {
            return Err(Error::DimensionMismatch {
                expected: x[0].len(),
                got: hyper.lengthscales.len(),
            });
        }
        let inv_sq: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let ratio = hyper.nugget / hyper.sigma2;
        let surface = LikelihoodSurface::new(&x, &y, ratio, false);
        let a = surface.correlation(&inv_sq);
        let chol = Cholesky::new(a).ok_or_else(|| not_pd(&x, ratio))?;
        let yv = DVector::from_column_slice(&y);
        let weights = chol.solve(&yv.add_scalar(-hyper.mu));
        let resid = yv.add_scalar(-hyper.mu);
        let m = y.len() as f64;
        let log_det: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let loglik = -0.5
            * (m * (hyper.sigma2.ln() + LOG_2PI) + log_det + resid.dot(&weights) / hyper.sigma2);
        Ok(Self {
            x,
            y,
            hyper,
            inv_sq,
            chol,
            weights,
            loglik,
            options: GpOptions {
                nugget_ratio: ratio,
                ..GpOptions::default()
            },
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn options(&self) -> &GpOptions {
        &self.options
    }

    pub fn log_likelihood(&self) -> f64 {
        self.loglik
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.inv_sq.len()
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn train_outputs(&self) -> &[f64] {
        &self.y
    }

    /// Posterior mean and standard deviation at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dim(), "prediction input dimension");
        let r = DVector::from_iterator(
            self.y.len(),
            self.x.iter().map(|s| corr(x, s, &self.inv_sq)),
        );
        let mean = self.hyper.mu + r.dot(&self.weights);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a positive diagonal");
        let s2 = self.hyper.sigma2 * (1.0 - v.norm_squared());
        (mean, s2.max(0.0).sqrt())
    }

    pub fn predict_batch<X: AsRef<[f64]> + Sync>(&self, xs: &[X]) -> Vec<(f64, f64)> {
        xs.par_iter().map(|x| self.predict(x.as_ref())).collect()
    }

    /// Full refit on the training data plus the new rows, with this model's
    /// fitting options. Identical to [`gp_fit`] on the union.
    pub fn refit(&self, new_x: &[Vec<f64>], new_y: &[f64]) -> Result<GpModel> {
        let mut x = self.x.clone();
        let mut y = self.y.clone();
        x.extend_from_slice(new_x);
        y.extend_from_slice(new_y);
        gp_fit(x, y, &self.options)
    }

    pub fn summary(&self, training_ids: Vec<usize>) -> GpSummary {
        GpSummary {
            hyperparams: self.hyper.clone(),
            n_train: self.y.len(),
            training_ids,
            log_marginal_likelihood: self.loglik,
            nugget_ratio: self.hyper.nugget / self.hyper.sigma2,
        }
    }
}

/// A fitted model that returns a posterior mean and standard deviation.
pub trait Surrogate: Sync {
    fn predict(&self, x: &[f64]) -> (f64, f64);
}

impl Surrogate for GpModel {
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        GpModel::predict(self, x)
    }
}

/// Builds surrogates from training data. `previous` is the model being
/// replaced, when there is one.
pub trait SurrogateFitter: Sync {
    type Model: Surrogate;
    fn fit(&self, x: &[Vec<f64>], y: &[f64], previous: Option<&Self::Model>)
        -> Result<Self::Model>;
}

/// Gaussian-process fitter. Refits add the previous optimum as a warm start
/// and use the cheaper refit budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpFitter {
    pub options: GpOptions,
    pub refit_starts: usize,
    pub refit_max_iters: usize,
}

impl Default for GpFitter {
    fn default() -> Self {
        Self {
            options: GpOptions::default(),
            refit_starts: 1,
            refit_max_iters: 50,
        }
    }
}

impl GpFitter {
    pub fn refit_options(&self, previous: &GpModel) -> GpOptions {
        GpOptions {
            starts: self.refit_starts,
            max_iters: self.refit_max_iters,
            warm_start: Some(previous.hyperparams().lengthscales.clone()),
            ..self.options.clone()
        }
    }
}

impl SurrogateFitter for GpFitter {
    type Model = GpModel;

    fn fit(&self, x: &[Vec<f64>], y: &[f64], previous: Option<&GpModel>) -> Result<GpModel> {
        let opts = match previous {
            Some(prev) => self.refit_options(prev),
            None => self.options.clone(),
        };
        gp_fit(x.to_vec(), y.to_vec(), &opts)
    }
}

fn validate_training(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "surrogate needs at least 2 training points, got {}",
            x.len()
        )));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let p = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    if let Some((index, &energy)) = y.iter().enumerate().find(|(_, e)| !e.is_finite()) {
        return Err(Error::NonFiniteEnergy { index, energy });
    }
    Ok(())
}

fn not_pd(x: &[Vec<f64>], nugget: f64) -> Error {
    let (mut i, mut j, mut best) = (0, 1, f64::INFINITY);
    for u in 0..x.len() {
        for v in 0..u {
            let d = euclidean(&x[u], &x[v]);
            if d < best {
                (i, j, best) = (v, u, d);
            }
        }
    }
    Error::NotPositiveDefinite {
        nugget,
        i,
        j,
        distance: best,
    }
}

/// Per-dimension median absolute pairwise difference; the centre of the
/// random starting lengthscales.
fn median_pair_scale(x: &[Vec<f64>], isotropic: bool) -> Vec<f64> {
    let m = x.len();
    let p = x[0].len();
    // subsample pairs deterministically for large training sets
    let stride = (m * (m - 1) / 2 / 20_000).max(1);
    let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); if isotropic { 1 } else { p }];
    let mut count = 0usize;
    for u in 0..m {
        for v in 0..u {
            count += 1;
            if !count.is_multiple_of(stride) {
                continue;
            }
            if isotropic {
                per_dim[0].push(euclidean(&x[u], &x[v]) / (p as f64).sqrt());
            } else {
                for k in 0..p {
                    per_dim[k].push((x[u][k] - x[v][k]).abs());
                }
            }
        }
    }
    per_dim
        .into_iter()
        .map(|mut d| {
            d.sort_by(f64::total_cmp);
            let med = d[d.len() / 2];
            if med > 0.0 {
                med
            } else {
                1.0
            }
        })
        .collect()
}

/// Fits hyperparameters by maximizing the profiled log marginal likelihood.
///
/// On a failed factorization the nugget ratio is raised by decades up to
/// `1e-4`; past that the error names the closest pair of training inputs.
pub fn gp_fit(x: Vec<Vec<f64>>, y: Vec<f64>, options: &GpOptions) -> Result<GpModel> {
    validate_training(&x, &y)?;
    let mut ratio = options.nugget_ratio;
    loop {
        match fit_at_nugget(&x, &y, options, ratio) {
            Some((theta, fac)) => {
                if ratio > options.nugget_ratio {
                    log::info!("surrogate fit needed nugget ratio {ratio:e}");
                }
                return Ok(assemble(x, y, options, ratio, &theta, fac));
            }
            None if ratio * 10.0 <= MAX_NUGGET_RATIO * (1.0 + 1e-9) => {
                debug!("nugget ratio {ratio:e} failed; escalating");
                ratio = if ratio > 0.0 { ratio * 10.0 } else { 1e-8 };
            }
            None => return Err(not_pd(&x, ratio)),
        }
    }
}

fn assemble(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    options: &GpOptions,
    ratio: f64,
    theta: &[f64],
    fac: Factorized,
) -> GpModel {
    let p = x[0].len();
    let lengthscales: Vec<f64> = (0..p)
        .map(|k| {
            if options.isotropic {
                theta[0]
            } else {
                theta[k]
            }
            .exp()
        })
        .collect();
    let inv_sq = lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    GpModel {
        x,
        y,
        hyper: GpHyperparams {
            mu: fac.mu,
            sigma2: fac.sigma2,
            lengthscales,
            nugget: ratio * fac.sigma2,
        },
        inv_sq,
        chol: fac.chol,
        weights: fac.alpha,
        loglik: fac.loglik,
        options: GpOptions {
            nugget_ratio: options.nugget_ratio,
            ..options.clone()
        },
    }
}

fn fit_at_nugget(
    x: &[Vec<f64>],
    y: &[f64],
    options: &GpOptions,
    ratio: f64,
) -> Option<(Vec<f64>, Factorized)> {
    let surface = LikelihoodSurface::new(x, y, ratio, options.isotropic);
    let n = surface.n_params();
    let (lo, hi) = (
        options.lengthscale_bounds.0.ln(),
        options.lengthscale_bounds.1.ln(),
    );
    let centre: Vec<f64> = median_pair_scale(x, options.isotropic)
        .into_iter()
        .map(|s| s.ln().clamp(lo, hi))
        .collect();

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &options.warm_start {
        let w: Vec<f64> = if options.isotropic {
            vec![w.iter().map(|l| l.ln()).sum::<f64>() / w.len() as f64]
        } else {
            w.iter().map(|l| l.ln()).collect()
        };
        if w.len() == n {
            starts.push(w.into_iter().map(|t| t.clamp(lo, hi)).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for s in 0..options.starts {
        if s == 0 {
            starts.push(centre.clone());
        } else {
            starts.push(
                centre
                    .iter()
                    .map(|c| {
                        (c + rng.random_range(-1.0..1.0) * std::f64::consts::LN_10).clamp(lo, hi)
                    })
                    .collect(),
            );
        }
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        if let Some((theta, val)) = maximize_bounded(&surface, start, lo, hi, options.max_iters) {
            if best.as_ref().is_none_or(|(_, b)| val > *b) {
                best = Some((theta, val));
            }
        }
    }
    let (theta, _) = best?;
    let (fac, _) = surface.factorize(&theta)?;
    Some((theta, fac))
}

/// Projected BFGS ascent on a box. Returns the best point and value, or
/// `None` if the start cannot be evaluated.
fn maximize_bounded(
    surface: &LikelihoodSurface<'_>,
    start: Vec<f64>,
    lo: f64,
    hi: f64,
    max_iters: usize,
) -> Option<(Vec<f64>, f64)> {
    let n = start.len();
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|t| t.clamp(lo, hi)).collect() };
    let mut x = clamp(start);
    let (mut f, mut g) = surface.value_and_grad(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;

    for _ in 0..max_iters {
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (&h * &gv).iter().copied().collect();
        for k in 0..n {
            if (x[k] <= lo && d[k] < 0.0) || (x[k] >= hi && d[k] > 0.0) {
                d[k] = 0.0;
            }
        }
        if d.iter().all(|v| *v == 0.0) {
            break;
        }
        // keep the first step modest in log-lengthscale units
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut step = if fresh { (1.0 / dn).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let trial = clamp(x.iter().zip(&d).map(|(a, b)| a + step * b).collect());
            let moved: f64 = trial
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((t, a), gk)| (t - a) * gk)
                .sum();
            if let Some((fac, a)) = surface.factorize(&trial) {
                let ft = fac.loglik;
                if ft >= f + 1e-4 * moved && ft.is_finite() {
                    let gt = surface.gradient(&trial, &fac, &a);
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        // BFGS on the minimization of -f
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(n, g.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        let converged = (fnew - f).abs() <= 1e-10 * (1.0 + f.abs());
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
            fresh = false;
        }
        x = xn;
        f = fnew;
        g = gn;
        if converged {
            break;
        }
    }
    Some((x, f))
}
