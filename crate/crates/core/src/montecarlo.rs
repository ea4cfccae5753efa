//! Finite-sample Monte Carlo for the generalized ridge and PCR estimators.
//!
//! Covariances are diagonal (`U = I`). Writing `a = d_x/d_w`, `b = d_w d_β`
//! and `X_w = Z diag(√a)/√n`, the conditional risk given the design is
//!
//! ```text
//! var  = σ² (1 + tr[diag(a) (A+λ)⁻² A] / n)
//! bias = tr[diag(a) (I - (A+λ)⁻¹A) diag(b) (I - (A+λ)⁻¹A)] / n
//! ```
//!
//! with `A = X_wᵀX_w`. Both are evaluated in the eigenbasis of `A`
//! restricted to its range, so one decomposition per replicate serves an
//! entire `λ` grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectra::{apportion, JointSpectrum, Recipe, WeightedSpectrum};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Diagonal covariance ensemble of dimension `p` with `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEnsemble {
    pub n: usize,
    pub p: usize,
    pub d_x: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub d_w: Vec<f64>,
}

impl MatrixEnsemble {
    pub fn new(n: usize, d_x: Vec<f64>, d_beta: Vec<f64>, d_w: Vec<f64>) -> Result<Self> {
        let p = d_x.len();
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument("n and p must be positive".into()));
        }
        if d_beta.len() != p || d_w.len() != p {
            return Err(Error::InvalidArgument(format!(
                "diagonals must have equal length (d_x {p}, d_beta {}, d_w {})",
                d_beta.len(),
                d_w.len()
            )));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&d_x) || !positive(&d_w) || !d_beta.iter().all(|x| x.is_finite() && *x >= 0.0)
        {
            return Err(Error::InvalidArgument(
                "d_x and d_w must be positive, d_beta nonnegative".into(),
            ));
        }
        Ok(MatrixEnsemble {
            n,
            p,
            d_x,
            d_beta,
            d_w,
        })
    }

    /// Standard ridge: `Σ_w = I`.
    pub fn unweighted(n: usize, d_x: Vec<f64>, d_beta: Vec<f64>) -> Result<Self> {
        let p = d_x.len();
        Self::new(n, d_x, d_beta, vec![1.0; p])
    }

    /// Finite diagonals realizing a joint spectrum with `Σ_w = I`; atom
    /// multiplicities follow the weights by largest remainder.
    pub fn from_spectrum(spectrum: &JointSpectrum, n: usize, p: usize) -> Result<Self> {
        let atoms = spectrum.atoms();
        let counts = apportion(&atoms.iter().map(|a| a.weight).collect::<Vec<_>>(), p);
        let mut d_x = Vec::with_capacity(p);
        let mut d_beta = Vec::with_capacity(p);
        for (a, c) in atoms.iter().zip(counts) {
            d_x.extend(std::iter::repeat(a.h).take(c));
            d_beta.extend(std::iter::repeat(a.g).take(c));
        }
        Self::unweighted(n, d_x, d_beta)
    }

    /// Finite diagonals for an `(s, v, r)` law: `d_x = s`, `d_β = v`,
    /// `d_w = s / r`.
    pub fn from_weighted(spectrum: &WeightedSpectrum, n: usize, p: usize) -> Result<Self> {
        let atoms = spectrum.atoms();
        let counts = apportion(&atoms.iter().map(|a| a.weight).collect::<Vec<_>>(), p);
        let (mut d_x, mut d_beta, mut d_w) = (Vec::new(), Vec::new(), Vec::new());
        for (a, c) in atoms.iter().zip(counts) {
            d_x.extend(std::iter::repeat(a.s).take(c));
            d_beta.extend(std::iter::repeat(a.v).take(c));
            d_w.extend(std::iter::repeat(a.s / a.r).take(c));
        }
        Self::new(n, d_x, d_beta, d_w)
    }

    pub fn gamma(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    /// `d_{x/w} = d_x / d_w`.
    pub fn d_x_over_w(&self) -> Vec<f64> {
        self.d_x.iter().zip(&self.d_w).map(|(x, w)| x / w).collect()
    }

    /// `d_{wβ} = d_w d_β`.
    pub fn d_w_beta(&self) -> Vec<f64> {
        self.d_w
            .iter()
            .zip(&self.d_beta)
            .map(|(w, b)| w * b)
            .collect()
    }

    /// `σ² + tr(Σ_x Σ_β)/n`, the risk of the zero estimator.
    pub fn null_risk(&self, sigma2: f64) -> f64 {
        sigma2
            + self
                .d_x
                .iter()
                .zip(&self.d_beta)
                .map(|(x, b)| x * b)
                .sum::<f64>()
                / self.n as f64
    }

    /// Design `X` with rows `Σ_x^{1/2} z / √n`.
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let scale: Vec<f64> = self
            .d_x
            .iter()
            .map(|d| (d / self.n as f64).sqrt())
            .collect();
        let mut x = DMatrix::<f64>::zeros(self.n, self.p);
        for j in 0..self.p {
            for i in 0..self.n {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, j)] = z * scale[j];
            }
        }
        x
    }
}

/// Produces the ensemble used by one replicate.
pub trait EnsembleSource: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<MatrixEnsemble>;
}

impl EnsembleSource for MatrixEnsemble {
    fn draw(&self, _rng: &mut ChaCha8Rng) -> Result<MatrixEnsemble> {
        Ok(self.clone())
    }
}

/// Per-coordinate `d_w` as a function of `(d_x, d_β)`.
pub type WeightFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Draws `(d_x, d_β)` from a recipe afresh for every replicate.
#[derive(Clone)]
pub struct RecipeEnsemble {
    pub recipe: Recipe,
    pub n: usize,
    pub p: usize,
    /// `None` means `Σ_w = I`.
    pub weight: Option<WeightFn>,
}

impl RecipeEnsemble {
    pub fn new(recipe: Recipe, n: usize, p: usize) -> Self {
        RecipeEnsemble {
            recipe,
            n,
            p,
            weight: None,
        }
    }

    pub fn with_weight(mut self, weight: WeightFn) -> Self {
        self.weight = Some(weight);
        self
    }
}

impl std::fmt::Debug for RecipeEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecipeEnsemble")
            .field("recipe", &self.recipe)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("weighted", &self.weight.is_some())
            .finish()
    }
}

impl EnsembleSource for RecipeEnsemble {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<MatrixEnsemble> {
        let (d_x, d_beta) = self.recipe.finite_design(self.p, rng)?;
        let d_w = match &self.weight {
            Some(w) => d_x.iter().zip(&d_beta).map(|(&x, &b)| w(x, b)).collect(),
            None => vec![1.0; self.p],
        };
        MatrixEnsemble::new(self.n, d_x, d_beta, d_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// `β ~ N(0, Σ_β)`.
    GaussianBeta,
    /// `β_i = √d_{β,i}`.
    FixedBeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloConfig {
    pub replicates: usize,
    pub master_seed: u64,
    pub prior: Prior,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            replicates: 50,
            master_seed: 0,
            prior: Prior::GaussianBeta,
        }
    }
}

impl MonteCarloConfig {
    /// RNG for one replicate, a pure function of the seed and index.
    pub fn replicate_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Eigen-decomposition of `A = X_wᵀX_w` on its range, with the `λ`-free
/// matrices of the trace formula precomputed.
#[derive(Debug, Clone)]
pub struct SampledDesign {
    n: usize,
    /// Nonzero eigenvalues `s_k²` of `A`.
    s2: Vec<f64>,
    /// `V` (p × k): eigenvectors of `A` for `s2`.
    v: DMatrix<f64>,
    /// `Vᵀ diag(a) V`.
    b_mat: DMatrix<f64>,
    /// `Vᵀ diag(b) V`.
    a_mat: DMatrix<f64>,
    /// `(Vᵀ diag(a∘b) V)_kk`.
    e: Vec<f64>,
    sum_ab: f64,
    a: Vec<f64>,
}

/// Eigenpairs of `MᵀM` for an `n × p` matrix `M`, restricted to its range:
/// returns `(s², V)` with `V` orthonormal `p × k`.
fn range_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, p) = m.shape();
    let (vals, vecs, left) = if n <= p {
        let eig = SymmetricEigen::new(m * m.transpose());
        (eig.eigenvalues, eig.eigenvectors, true)
    } else {
        let eig = SymmetricEigen::new(m.transpose() * m);
        (eig.eigenvalues, eig.eigenvectors, false)
    };
    let max = vals.iter().cloned().fold(0.0, f64::max);
    // singular-value cutoff, widened to the Gram matrix's own roundoff level
    let cut = (RANK_CUTOFF * RANK_CUTOFF).max(n.min(p) as f64 * f64::EPSILON) * max;
    let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > cut).collect();
    let s2: Vec<f64> = keep.iter().map(|&k| vals[k]).collect();
    let mut v = DMatrix::<f64>::zeros(p, keep.len());
    if left {
        // V = Mᵀ U diag(1/s)
        let u = vecs.select_columns(&keep);
        let mut mu = m.transpose() * u;
        for (c, &s2k) in s2.iter().enumerate() {
            let inv = 1.0 / s2k.sqrt();
            mu.column_mut(c).scale_mut(inv);
        }
        v = mu;
    } else {
        for (c, &k) in keep.iter().enumerate() {
            v.set_column(c, &vecs.column(k));
        }
    }
    (s2, v)
}

/// `Vᵀ diag(d) V`.
fn sandwich(v: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut dv = v.clone();
    for (i, &di) in d.iter().enumerate() {
        dv.row_mut(i).scale_mut(di);
    }
    v.transpose() * dv
}

impl SampledDesign {
    /// Decomposes a raw design `X` (rows `Σ_x^{1/2} z/√n`) for ensemble `ens`.
    pub fn from_x(ens: &MatrixEnsemble, x: &DMatrix<f64>) -> Result<Self> {
        if x.shape() != (ens.n, ens.p) {
            return Err(Error::InvalidArgument(format!(
                "design is {:?}, expected ({}, {})",
                x.shape(),
                ens.n,
                ens.p
            )));
        }
        let mut xw = x.clone();
        for (j, w) in ens.d_w.iter().enumerate() {
            xw.column_mut(j).scale_mut(1.0 / w.sqrt());
        }
        let a = ens.d_x_over_w();
        let b = ens.d_w_beta();
        let (s2, v) = range_eigen(&xw);
        let b_mat = sandwich(&v, &a);
        let a_mat = sandwich(&v, &b);
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let e = (0..v.ncols())
            .map(|k| v.column(k).iter().zip(&ab).map(|(vk, w)| vk * vk * w).sum())
            .collect();
        Ok(SampledDesign {
            n: ens.n,
            s2,
            v,
            b_mat,
            a_mat,
            e,
            sum_ab: ab.iter().sum(),
            a,
        })
    }

    pub fn sample<R: Rng + ?Sized>(ens: &MatrixEnsemble, rng: &mut R) -> Result<Self> {
        Self::from_x(ens, &ens.sample_x(rng))
    }

    /// Smallest nonzero eigenvalue of `X_wᵀX_w`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.s2.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.s2.iter().cloned().fold(0.0, f64::max)
    }

    pub fn rank(&self) -> usize {
        self.s2.len()
    }

    /// `(variance, bias)` of the conditional risk at `λ`.
    pub fn conditional_risk(&self, lambda: f64, sigma2: f64) -> Result<(f64, f64)> {
        let smax = self.max_eigenvalue();
        if self.min_eigenvalue() + lambda <= RANK_CUTOFF * smax {
            return Err(Error::Conditioning(format!(
                "lambda = {lambda} is below the sample spectrum edge {}",
                -self.min_eigenvalue()
            )));
        }
        let n = self.n as f64;
        let k = self.s2.len();
        let c: Vec<f64> = self.s2.iter().map(|s| s / (s + lambda)).collect();
        let mut var_tr = 0.0;
        for j in 0..k {
            let s = self.s2[j];
            var_tr += s / (s + lambda).powi(2) * self.b_mat[(j, j)];
        }
        let mut cross = 0.0;
        for l in 0..k {
            let col: f64 = c
                .iter()
                .enumerate()
                .map(|(j, cj)| cj * self.a_mat[(j, l)] * self.b_mat[(j, l)])
                .sum();
            cross += c[l] * col;
        }
        let ce: f64 = c.iter().zip(&self.e).map(|(c, e)| c * e).sum();
        let variance = sigma2 * (1.0 + var_tr / n);
        let bias = ((self.sum_ab - 2.0 * ce + cross) / n).max(0.0);
        Ok((variance, bias))
    }

    /// `θ̂ = (A+λ)⁻¹ X_wᵀ y` in whitened coordinates, given `X_wᵀ y`.
    fn solve_whitened(&self, xty: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let mut coef = self.v.transpose() * xty;
        for (k, c) in coef.iter_mut().enumerate() {
            *c /= self.s2[k] + lambda;
        }
        &self.v * coef
    }
}

/// `(variance, bias)` of the conditional risk for a raw design `X`.
pub fn conditional_risk(
    ens: &MatrixEnsemble,
    lambda: f64,
    sigma2: f64,
    x: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    SampledDesign::from_x(ens, x)?.conditional_risk(lambda, sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McPoint {
    /// Grid coordinate (`λ` or `θ`).
    pub x: f64,
    pub mean: f64,
    pub se: f64,
    /// Replicates kept.
    pub kept: usize,
    /// Replicates dropped for conditioning.
    pub dropped: usize,
}

fn reduce(x: f64, values: impl Iterator<Item = Option<f64>>) -> McPoint {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for v in values {
        match v {
            Some(v) => kept.push(v),
            None => dropped += 1,
        }
    }
    let k = kept.len();
    let mean = if k > 0 {
        kept.iter().sum::<f64>() / k as f64
    } else {
        f64::NAN
    };
    let se = if k > 1 {
        let ss: f64 = kept.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (k - 1) as f64 / k as f64).sqrt()
    } else {
        f64::NAN
    };
    McPoint {
        x,
        mean,
        se,
        kept: k,
        dropped,
    }
}

/// Runs `f` on every replicate in parallel and returns results in index order.
fn per_replicate<T: Send, F>(cfg: &MonteCarloConfig, f: F) -> Result<Vec<T>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument(
            "replicates must be at least 1".into(),
        ));
    }
    (0..cfg.replicates)
        .into_par_iter()
        .map(|i| f(&mut cfg.replicate_rng(i)))
        .collect()
}

fn transpose_reduce(grid: &[f64], per_rep: Vec<Vec<Option<f64>>>) -> Vec<McPoint> {
    grid.iter()
        .enumerate()
        .map(|(j, &x)| reduce(x, per_rep.iter().map(|r| r[j])))
        .collect()
}

/// Replicate mean and standard error of the conditional (trace-formula) risk
/// on a `λ` grid. Replicates below the sample edge are dropped per point.
pub fn conditional_risk_curve<S: EnsembleSource>(
    source: &S,
    lambdas: &[f64],
    sigma2: f64,
    cfg: &MonteCarloConfig,
) -> Result<Vec<McPoint>> {
    let per_rep = per_replicate(cfg, |rng| {
        let ens = source.draw(rng)?;
        let design = SampledDesign::sample(&ens, rng)?;
        Ok(lambdas
            .iter()
            .map(|&l| design.conditional_risk(l, sigma2).ok().map(|(v, b)| v + b))
            .collect::<Vec<_>>())
    })?;
    Ok(transpose_reduce(lambdas, per_rep))
}

/// Smallest nonzero eigenvalue of `X_wᵀX_w` for each replicate.
pub fn min_eigenvalues<S: EnsembleSource>(source: &S, cfg: &MonteCarloConfig) -> Result<Vec<f64>> {
    per_replicate(cfg, |rng| {
        let ens = source.draw(rng)?;
        Ok(SampledDesign::sample(&ens, rng)?.min_eigenvalue())
    })
}

/// Samples `θ = Σ_w^{1/2} β` under the prior.
fn draw_theta<R: Rng + ?Sized>(ens: &MatrixEnsemble, prior: Prior, rng: &mut R) -> DVector<f64> {
    let b = ens.d_w_beta();
    DVector::from_iterator(
        ens.p,
        b.iter().map(|&bi| match prior {
            Prior::GaussianBeta => bi.sqrt() * rng.sample::<f64, _>(StandardNormal),
            Prior::FixedBeta => bi.sqrt(),
        }),
    )
}

/// One end-to-end draw: samples `β`, `ε`, fits the estimator and returns its
/// exact test risk for each `λ`.
fn empirical_draw<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    x: &DMatrix<f64>,
    design: &SampledDesign,
    lambdas: &[f64],
    sigma2: f64,
    prior: Prior,
    rng: &mut R,
) -> Vec<Option<f64>> {
    let theta = draw_theta(ens, prior, rng);
    let noise = DVector::from_iterator(
        ens.n,
        (0..ens.n).map(|_| sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)),
    );
    let mut xw = x.clone();
    for (j, w) in ens.d_w.iter().enumerate() {
        xw.column_mut(j).scale_mut(1.0 / w.sqrt());
    }
    let y = &xw * &theta + noise;
    let xty = xw.transpose() * y;
    let n = ens.n as f64;
    lambdas
        .iter()
        .map(|&l| {
            design.conditional_risk(l, sigma2).ok()?;
            let est = design.solve_whitened(&xty, l);
            let err: f64 = design
                .a
                .iter()
                .zip(theta.iter().zip(est.iter()))
                .map(|(a, (t, e))| a * (t - e).powi(2))
                .sum();
            Some(sigma2 + err / n)
        })
        .collect()
}

/// End-to-end risk of `β̂_λ = (XᵀX + λΣ_w)† Xᵀ y` with `β` and `ε` sampled.
pub fn estimator_risk_empirical<S: EnsembleSource>(
    source: &S,
    lambdas: &[f64],
    sigma2: f64,
    cfg: &MonteCarloConfig,
) -> Result<Vec<McPoint>> {
    let per_rep = per_replicate(cfg, |rng| {
        let ens = source.draw(rng)?;
        let x = ens.sample_x(rng);
        let design = SampledDesign::from_x(&ens, &x)?;
        Ok(empirical_draw(
            &ens, &x, &design, lambdas, sigma2, cfg.prior, rng,
        ))
    })?;
    Ok(transpose_reduce(lambdas, per_rep))
}

/// Average of the end-to-end risk over `draws` samples of `(β, ε)` for one
/// fixed design, with its standard error.
pub fn empirical_risk_fixed_design<R: Rng + ?Sized>(
    ens: &MatrixEnsemble,
    x: &DMatrix<f64>,
    lambda: f64,
    sigma2: f64,
    draws: usize,
    rng: &mut R,
) -> Result<McPoint> {
    let design = SampledDesign::from_x(ens, x)?;
    design.conditional_risk(lambda, sigma2)?;
    let values: Vec<Option<f64>> = (0..draws)
        .map(|_| empirical_draw(ens, x, &design, &[lambda], sigma2, Prior::GaussianBeta, rng)[0])
        .collect();
    Ok(reduce(lambda, values.into_iter()))
}

/// Indices of the top `⌈θp⌉` entries of `d_x`, ties broken by index.
pub fn pcr_support(d_x: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    let k = (theta * d_x.len() as f64 - 1e-9).ceil() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument("ceil(theta p) is zero".into()));
    }
    let mut idx: Vec<usize> = (0..d_x.len()).collect();
    idx.sort_by(|&i, &j| d_x[j].total_cmp(&d_x[i]).then(i.cmp(&j)));
    idx.truncate(k);
    Ok(idx)
}

/// Conditional risk of PCR on the top `⌈θp⌉` coordinates for a raw design.
pub fn pcr_conditional_risk(
    ens: &MatrixEnsemble,
    theta: f64,
    sigma2: f64,
    x: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let support = pcr_support(&ens.d_x, theta)?;
    let xs = x.select_columns(&support);
    let (s2, v) = range_eigen(&xs);
    // pinv(X_S) = V diag(1/s²) Vᵀ X_Sᵀ
    let mut vs = v.clone();
    for (c, s) in s2.iter().enumerate() {
        vs.column_mut(c).scale_mut(1.0 / s);
    }
    let pinv = &vs * (v.transpose() * xs.transpose());
    let q = &pinv * x;
    let n = ens.n as f64;
    let (a, b) = (&ens.d_x, &ens.d_beta);
    let mut in_support = vec![false; ens.p];
    for &i in &support {
        in_support[i] = true;
    }
    let mut bias: f64 = (0..ens.p)
        .filter(|&i| !in_support[i])
        .map(|i| a[i] * b[i])
        .sum();
    let mut var_tr = 0.0;
    for (j, &sj) in support.iter().enumerate() {
        let mut row = 0.0;
        for l in 0..ens.p {
            let delta = if l == sj { 1.0 } else { 0.0 };
            row += b[l] * (delta - q[(j, l)]).powi(2);
        }
        bias += a[sj] * row;
        var_tr += a[sj] * pinv.row(j).norm_squared();
    }
    Ok((sigma2 * (1.0 + var_tr / n), bias / n))
}

/// Replicate mean of the PCR conditional risk on a `θ` grid (`Σ_w = I`).
pub fn pcr_risk_curve<S: EnsembleSource>(
    source: &S,
    thetas: &[f64],
    sigma2: f64,
    cfg: &MonteCarloConfig,
) -> Result<Vec<McPoint>> {
    let per_rep = per_replicate(cfg, |rng| {
        let ens = source.draw(rng)?;
        let x = ens.sample_x(rng);
        thetas
            .iter()
            .map(|&t| pcr_conditional_risk(&ens, t, sigma2, &x).map(|(v, b)| Some(v + b)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(transpose_reduce(thetas, per_rep))
}

pub fn pcr_estimator_risk<S: EnsembleSource>(
    source: &S,
    theta: f64,
    sigma2: f64,
    cfg: &MonteCarloConfig,
) -> Result<McPoint> {
    Ok(pcr_risk_curve(source, &[theta], sigma2, cfg)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, p: usize) -> MatrixEnsemble {
        let d_x: Vec<f64> = (0..p).map(|i| 1.0 + (i % 3) as f64).collect();
        let d_b: Vec<f64> = (0..p).map(|i| 0.5 + (i % 4) as f64).collect();
        let d_w: Vec<f64> = (0..p).map(|i| 0.7 + 0.2 * (i % 2) as f64).collect();
        MatrixEnsemble::new(n, d_x, d_b, d_w).unwrap()
    }

    /// Conditional risk written with explicit inverses.
    fn dense_oracle(
        ens: &MatrixEnsemble,
        x: &DMatrix<f64>,
        lambda: f64,
        sigma2: f64,
    ) -> (f64, f64) {
        let p = ens.p;
        let n = ens.n as f64;
        let mut xw = x.clone();
        for j in 0..p {
            xw.column_mut(j).scale_mut(1.0 / ens.d_w[j].sqrt());
        }
        let a = xw.transpose() * &xw;
        let reg = &a + DMatrix::<f64>::identity(p, p) * lambda;
        let inv = reg.clone().try_inverse().unwrap();
        let sx = DMatrix::from_diagonal(&DVector::from_vec(ens.d_x_over_w()));
        let sb = DMatrix::from_diagonal(&DVector::from_vec(ens.d_w_beta()));
        let var = sigma2 * (1.0 + (&sx * (&inv - &inv * &inv * lambda)).trace() / n);
        let bias = lambda * lambda * (&sx * &inv * &sb * &inv).trace() / n;
        (var, bias)
    }

    #[test]
    fn trace_formula_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, p) in [(8, 12), (12, 8), (10, 10)] {
            let ens = small(n, p);
            let x = ens.sample_x(&mut rng);
            for lambda in [0.05, 0.7, 3.0] {
                let (v, b) = conditional_risk(&ens, lambda, 0.4, &x).unwrap();
                let (ov, ob) = dense_oracle(&ens, &x, lambda, 0.4);
                assert!((v - ov).abs() < 1e-10 * ov, "{n} {p} var {v} {ov}");
                assert!(
                    (b - ob).abs() < 1e-10 * ob.max(1e-3),
                    "{n} {p} bias {b} {ob}"
                );
            }
        }
    }

    #[test]
    fn limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens = small(20, 10);
        let x = ens.sample_x(&mut rng);
        let (v, b) = conditional_risk(&ens, 0.0, 0.0, &x).unwrap();
        assert!(v + b < 1e-10);
        let (v, b) = conditional_risk(&ens, 1e8, 0.3, &x).unwrap();
        let null = ens.null_risk(0.3);
        assert!((v + b - null).abs() < 1e-4 * null);
    }

    #[test]
    fn negative_lambda_beyond_edge_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = small(10, 20);
        let design = SampledDesign::sample(&ens, &mut rng).unwrap();
        let edge = design.min_eigenvalue();
        assert!(design.conditional_risk(-0.5 * edge, 0.1).is_ok());
        assert!(matches!(
            design.conditional_risk(-1.01 * edge, 0.1),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn whitened_solution_matches_direct_generalized_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, p) in [(8, 12), (15, 6)] {
            let ens = small(n, p);
            let x = ens.sample_x(&mut rng);
            let design = SampledDesign::from_x(&ens, &x).unwrap();
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lambda = 0.3;
            // β̂ = (XᵀX + λΣ_w)⁻¹ Xᵀ y, then θ̂ = Σ_w^{1/2} β̂
            let sw = DMatrix::from_diagonal(&DVector::from_vec(ens.d_w.clone()));
            let direct =
                (x.transpose() * &x + sw * lambda).try_inverse().unwrap() * x.transpose() * &y;
            let mut xw = x.clone();
            for j in 0..p {
                xw.column_mut(j).scale_mut(1.0 / ens.d_w[j].sqrt());
            }
            let theta = design.solve_whitened(&(xw.transpose() * &y), lambda);
            for j in 0..p {
                assert!((theta[j] / ens.d_w[j].sqrt() - direct[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn trace_formula_is_expectation_of_end_to_end_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ens = small(8, 12);
        let x = ens.sample_x(&mut rng);
        let lambda = 0.2;
        let (v, b) = conditional_risk(&ens, lambda, 0.5, &x).unwrap();
        let emp = empirical_risk_fixed_design(&ens, &x, lambda, 0.5, 100_000, &mut rng).unwrap();
        assert!(
            (emp.mean - (v + b)).abs() < 3.0 * emp.se,
            "{} vs {}",
            emp.mean,
            v + b
        );
    }

    #[test]
    fn deterministic_across_runs() {
        let ens = small(10, 15);
        let cfg = MonteCarloConfig {
            replicates: 6,
            master_seed: 9,
            prior: Prior::GaussianBeta,
        };
        let a = conditional_risk_curve(&ens, &[0.1, 1.0], 0.2, &cfg).unwrap();
        let b = conditional_risk_curve(&ens, &[0.1, 1.0], 0.2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = conditional_risk_curve(
            &ens,
            &[0.1, 1.0],
            0.2,
            &MonteCarloConfig {
                master_seed: 10,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pcr_support_order() {
        assert_eq!(pcr_support(&[1.0, 3.0, 3.0, 2.0], 0.5).unwrap(), vec![1, 2]);
        assert_eq!(
            pcr_support(&[1.0, 3.0, 3.0, 2.0], 0.6).unwrap(),
            vec![1, 2, 3]
        );
        assert!(pcr_support(&[1.0], 0.0).is_err());
    }

    #[test]
    fn pcr_full_equals_ridgeless() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (n, p) in [(8, 12), (12, 8)] {
            let ens = MatrixEnsemble::unweighted(
                n,
                (0..p).map(|i| 1.0 + i as f64 * 0.1).collect(),
                (0..p).map(|i| 2.0 - i as f64 * 0.05).collect(),
            )
            .unwrap();
            let x = ens.sample_x(&mut rng);
            let (pv, pb) = pcr_conditional_risk(&ens, 1.0, 0.3, &x).unwrap();
            let (rv, rb) = conditional_risk(&ens, 0.0, 0.3, &x).unwrap();
            assert!(
                (pv - rv).abs() < 1e-8 && (pb - rb).abs() < 1e-8,
                "{pv} {rv} {pb} {rb}"
            );
        }
    }

    #[test]
    fn pcr_dense_oracle() {
        // drop half the coordinates; compare with an explicit least-squares fit
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ens = MatrixEnsemble::unweighted(
            10,
            vec![4.0, 1.0, 3.0, 2.0, 5.0, 0.5],
            vec![1.0, 2.0, 1.5, 0.5, 1.0, 3.0],
        )
        .unwrap();
        let x = ens.sample_x(&mut rng);
        let (v, b) = pcr_conditional_risk(&ens, 0.5, 0.2, &x).unwrap();
        let support = [4usize, 0, 2];
        let xs = x.select_columns(&support);
        let pinv = (xs.transpose() * &xs).try_inverse().unwrap() * xs.transpose();
        let q = &pinv * &x;
        let mut bias = 0.0;
        let mut var = 0.0;
        for i in 0..6 {
            if !support.contains(&i) {
                bias += ens.d_x[i] * ens.d_beta[i];
            }
        }
        for (j, &sj) in support.iter().enumerate() {
            for l in 0..6 {
                let d = if l == sj { 1.0 } else { 0.0 };
                bias += ens.d_x[sj] * ens.d_beta[l] * (d - q[(j, l)]).powi(2);
            }
            var += ens.d_x[sj] * pinv.row(j).norm_squared();
        }
        assert!((b - bias / 10.0).abs() < 1e-10);
        assert!((v - 0.2 * (1.0 + var / 10.0)).abs() < 1e-10);
    }
}
