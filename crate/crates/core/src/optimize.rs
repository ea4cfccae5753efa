//! Optimal ridge parameter, its sign, and optimal weighting.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::{weighted_risk, RiskCalculator, RiskEvaluation};
use crate::spectra::{JointSpectrum, ModelSpec, WeightedSpectrum};
use crate::stieltjes::{SolverConfig, StieltjesSolver};

/// Points in the derivative scan of [`lambda_opt_search`].
pub const SEARCH_GRID: usize = 512;
/// `λ_max = LAMBDA_MAX_FACTOR · (σ² + γ E[gh])`.
pub const LAMBDA_MAX_FACTOR: f64 = 100.0;
/// Fraction of `c0_effective` kept clear of the edge on the negative side.
pub const EDGE_MARGIN: f64 = 1e-3;
/// Tolerance for grouping equal eigenvalues and detecting constant `E[g|h]`.
pub const GROUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    DerivativeRoot,
    GoldenSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignClass {
    Negative,
    Zero,
    Positive,
    Indeterminate,
}

impl SignClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SignClass::Negative => "negative",
            SignClass::Zero => "zero",
            SignClass::Positive => "positive",
            SignClass::Indeterminate => "indeterminate",
        }
    }

    fn of(lambda: f64) -> Self {
        if lambda.abs() <= 1e-10 {
            SignClass::Zero
        } else if lambda < 0.0 {
            SignClass::Negative
        } else {
            SignClass::Positive
        }
    }
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::DerivativeRoot => "derivative_root",
            Method::GoldenSection => "golden_section",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaOptResult {
    pub lambda_opt: f64,
    pub risk_at_opt: f64,
    pub method: Method,
    pub sign_class: SignClass,
    /// Search interval `(lo, hi)`.
    pub domain: (f64, f64),
}

fn lambda_max(model: &ModelSpec) -> f64 {
    LAMBDA_MAX_FACTOR * (model.sigma2 + model.gamma * model.spectrum.mean_gh())
}

/// Search interval for `λ_opt`: nonnegative for `γ < 1`, reaching toward the
/// edge for `γ > 1`, rejected at `γ = 1`.
pub fn regime_guard(model: &ModelSpec, cfg: &SolverConfig) -> Result<(f64, f64)> {
    let hi = lambda_max(model);
    if !(hi > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate model: sigma2 and E[gh] are both zero".into(),
        ));
    }
    let gamma = model.gamma;
    if gamma == 1.0 {
        Err(Error::Regime(
            "gamma = 1 is the interpolation boundary; no admissible search domain".into(),
        ))
    } else if gamma < 1.0 {
        Ok((0.0, hi))
    } else {
        let c0 = StieltjesSolver::new(model, *cfg)?.c0_effective();
        Ok((-c0 + EDGE_MARGIN * c0, hi))
    }
}

/// `true` when every atom shares one value of `key` within [`GROUP_TOL`].
fn constant_by<F: Fn(&crate::spectra::Atom) -> f64>(
    spectrum: &JointSpectrum,
    key: F,
) -> Option<f64> {
    let first = key(&spectrum.atoms()[0]);
    spectrum
        .atoms()
        .iter()
        .all(|a| (key(a) - first).abs() <= GROUP_TOL * first.abs().max(1.0))
        .then_some(first)
}

/// Shape of `h ↦ E[g|h]` over the support of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionalShape {
    Constant,
    Increasing,
    Decreasing,
    NonMonotone,
}

pub fn conditional_shape(spectrum: &JointSpectrum) -> ConditionalShape {
    let groups = spectrum.conditional_g_means(GROUP_TOL);
    let scale = groups.iter().map(|g| g.1.abs()).fold(1.0, f64::max);
    let (mut up, mut down) = (false, false);
    for w in groups.windows(2) {
        let d = w[1].1 - w[0].1;
        if d > GROUP_TOL * scale {
            up = true;
        } else if d < -GROUP_TOL * scale {
            down = true;
        }
    }
    let flat = groups
        .windows(2)
        .all(|w| (w[1].1 - w[0].1).abs() <= GROUP_TOL * scale);
    match (up, down) {
        _ if flat => ConditionalShape::Constant,
        (true, false) if strictly(&groups, |d| d > 0.0) => ConditionalShape::Increasing,
        (false, true) if strictly(&groups, |d| d < 0.0) => ConditionalShape::Decreasing,
        _ => ConditionalShape::NonMonotone,
    }
}

fn strictly(groups: &[(f64, f64, f64)], ok: impl Fn(f64) -> bool) -> bool {
    groups.windows(2).all(|w| ok(w[1].1 - w[0].1))
}

/// Closed-form `λ_opt` when `h` is a point mass, `g` is a point mass, or
/// `E[g|h]` is constant; `None` otherwise.
pub fn lambda_opt_closed_form(model: &ModelSpec) -> Result<Option<LambdaOptResult>> {
    let spectrum = &model.spectrum;
    let sigma2 = model.sigma2;
    let lambda = if let Some(c) = constant_by(spectrum, |a| a.h) {
        // c / ξ with ξ = E[gh]/σ²
        if sigma2 == 0.0 {
            0.0
        } else {
            c * sigma2 / spectrum.mean_gh()
        }
    } else if let Some(c) = constant_by(spectrum, |a| a.g) {
        sigma2 / c
    } else if conditional_shape(spectrum) == ConditionalShape::Constant {
        sigma2 / spectrum.mean_g()
    } else {
        return Ok(None);
    };
    if !lambda.is_finite() {
        return Ok(None);
    }
    let risk = RiskCalculator::new(model, SolverConfig::default())?.risk(lambda)?;
    Ok(Some(LambdaOptResult {
        lambda_opt: lambda,
        risk_at_opt: risk.total,
        method: Method::ClosedForm,
        sign_class: SignClass::of(lambda),
        domain: (lambda, lambda),
    }))
}

/// Scan grid: linear on the negative side, zero, geometric on the positive side.
fn search_grid(lo: f64, hi: f64) -> Vec<f64> {
    let mut grid = Vec::with_capacity(SEARCH_GRID);
    let n_neg = if lo < 0.0 { SEARCH_GRID / 4 } else { 0 };
    for i in 0..n_neg {
        grid.push(lo * (1.0 - i as f64 / n_neg as f64));
    }
    grid.push(lo.max(0.0));
    let n_pos = SEARCH_GRID - grid.len();
    let floor = hi * 1e-8;
    let ratio = (hi / floor).powf(1.0 / (n_pos - 1) as f64);
    for i in 0..n_pos {
        grid.push(floor * ratio.powi(i as i32));
    }
    grid
}

fn refine_root<F: Fn(f64) -> Result<f64>>(slope: &F, mut a: f64, mut b: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b || b - a <= 1e-14 * mid.abs().max(1e-3) {
            break;
        }
        if slope(mid)? < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn golden_section<F: Fn(f64) -> Result<f64>>(f: &F, mut a: f64, mut b: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if b - a <= 1e-12 * c.abs().max(1e-3) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Global minimizer of the asymptotic risk over the regime-guarded domain.
///
/// Scans the derivative on a fixed grid, refines every descending-to-ascending
/// sign change by bisection, and takes the candidate (roots and endpoints)
/// with the smallest risk. Falls back to golden-section search on the risk
/// when the derivative never changes sign.
pub fn lambda_opt_search(model: &ModelSpec, cfg: &SolverConfig) -> Result<LambdaOptResult> {
    let domain = regime_guard(model, cfg)?;
    let (lo, hi) = domain;
    let calc = RiskCalculator::new(model, *cfg)?;
    let slope = |l: f64| calc.derivative(l).map(|d| d.slope());
    let risk = |l: f64| calc.risk(l).map(|r| r.total);

    let grid = search_grid(lo, hi);
    let slopes: Vec<Option<f64>> = grid.par_iter().map(|&l| slope(l).ok()).collect();
    if slopes.iter().all(Option::is_none) {
        return Err(Error::Solver(
            "risk derivative failed on every grid point".into(),
        ));
    }

    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (&l, s) in grid.iter().zip(&slopes) {
        let Some(s) = *s else {
            prev = None;
            continue;
        };
        if s == 0.0 {
            roots.push(l);
        } else if let Some((pl, ps)) = prev {
            if ps < 0.0 && s > 0.0 {
                roots.push(refine_root(&slope, pl, l)?);
            }
        }
        prev = Some((l, s));
    }

    if roots.is_empty() {
        let lambda = golden_section(&risk, lo, hi)?;
        let r = risk(lambda)?;
        return Ok(LambdaOptResult {
            lambda_opt: lambda,
            risk_at_opt: r,
            method: Method::GoldenSection,
            sign_class: SignClass::of(lambda),
            domain,
        });
    }

    let mut candidates: Vec<(f64, f64, Method)> = Vec::new();
    for &l in &roots {
        candidates.push((l, risk(l)?, Method::DerivativeRoot));
    }
    for l in [lo, hi] {
        if let Ok(r) = risk(l) {
            candidates.push((l, r, Method::GoldenSection));
        }
    }
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best = candidates[0];
    let tie = candidates.iter().skip(1).any(|c| {
        (c.1 - best.1).abs() <= 1e-12 * best.1.abs().max(1e-300)
            && SignClass::of(c.0) != SignClass::of(best.0)
    });
    Ok(LambdaOptResult {
        lambda_opt: best.0,
        risk_at_opt: best.1,
        method: if best.2 == Method::DerivativeRoot {
            Method::DerivativeRoot
        } else {
            Method::GoldenSection
        },
        sign_class: if tie {
            SignClass::Indeterminate
        } else {
            SignClass::of(best.0)
        },
        domain,
    })
}

/// Closed form when one applies, otherwise the numeric search.
pub fn lambda_opt(model: &ModelSpec, cfg: &SolverConfig) -> Result<LambdaOptResult> {
    match lambda_opt_closed_form(model)? {
        Some(r) => Ok(r),
        None => lambda_opt_search(model, cfg),
    }
}

/// Sign of `λ_opt` predicted from the shape of `E[g|h]` alone.
pub fn classify_sign(model: &ModelSpec) -> SignClass {
    let noiseless = model.sigma2 == 0.0;
    if model.gamma < 1.0 {
        return if noiseless {
            SignClass::Zero
        } else {
            SignClass::Positive
        };
    }
    match (conditional_shape(&model.spectrum), noiseless) {
        (ConditionalShape::Constant, true) => SignClass::Zero,
        (ConditionalShape::Constant, false) => SignClass::Positive,
        (ConditionalShape::Increasing, true) => SignClass::Negative,
        (ConditionalShape::Decreasing, _) => SignClass::Positive,
        _ => SignClass::Indeterminate,
    }
}

/// Two-point law `(1, 1)` w.p. `1-q` and `(h1, g1)` w.p. `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointSpec {
    pub q: f64,
    pub h1: f64,
    pub g1: f64,
    pub gamma: f64,
}

impl TwoPointSpec {
    pub fn new(q: f64, h1: f64, g1: f64, gamma: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0 && h1 > 1.0 && g1 > 1.0 && gamma > 1.0)
            || !(h1.is_finite() && g1.is_finite() && gamma.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "need q in (0,1), h1 > 1, g1 > 1, gamma > 1; got q={q}, h1={h1}, g1={g1}, gamma={gamma}"
            )));
        }
        Ok(TwoPointSpec { q, h1, g1, gamma })
    }

    pub fn spectrum(&self) -> Result<JointSpectrum> {
        JointSpectrum::from_triples(&[[1.0, 1.0, 1.0 - self.q], [self.h1, self.g1, self.q]])
    }

    pub fn model(&self, sigma2: f64) -> Result<ModelSpec> {
        ModelSpec::new(self.gamma, sigma2, self.spectrum()?)
    }

    /// Noise level below which `λ_opt < 0` is guaranteed.
    pub fn negative_ridge_threshold(&self) -> f64 {
        let TwoPointSpec { q, h1, g1, gamma } = *self;
        let gb = gamma - 1.0;
        let gq = gamma * q - 1.0;
        let first = if gq > 0.0 {
            gq.powi(3) * gb.powi(3) * (1.0 - q)
                / ((1.0 - q) * gamma * gamma * (gb.powi(3) * q * q + gq.powi(3) * h1 * h1))
        } else {
            f64::NEG_INFINITY
        };
        let second = gamma * q * (1.0 - q) * gb.powi(3)
            / ((1.0 - q) * (h1 + gb).powi(3) + q * h1 * h1 * gamma.powi(3));
        (h1 - 1.0) * (g1 - 1.0) * h1 * first.max(second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub lambda_opt: f64,
    pub risk_at_opt: f64,
}

/// Optimally tuned risk along a `γ` grid for an isotropic prior `g ≡ c`, with
/// the prior scaled as `E[ββ'] = (c/p) I`: `λ_opt = γσ²/c` and
/// `R = σ²/(λ_opt m(-λ_opt))`.
pub fn monotonicity_sweep(
    spectrum: &JointSpectrum,
    sigma2: f64,
    gamma_grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    let c = constant_by(spectrum, |a| a.g)
        .ok_or_else(|| Error::InvalidArgument("monotonicity sweep needs a point-mass g".into()))?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("g must be positive".into()));
    }
    let cfg = SolverConfig::default();
    gamma_grid
        .par_iter()
        .map(|&gamma| {
            if sigma2 == 0.0 {
                if gamma <= 1.0 {
                    return Ok(SweepPoint {
                        gamma,
                        lambda_opt: 0.0,
                        risk_at_opt: 0.0,
                    });
                }
                let scaled = JointSpectrum::from_triples(
                    &spectrum
                        .atoms()
                        .iter()
                        .map(|a| [a.h, c / gamma, a.weight])
                        .collect::<Vec<_>>(),
                )?;
                let model = ModelSpec::new(gamma, 0.0, scaled)?;
                let r = RiskCalculator::new(&model, cfg)?.risk(0.0)?;
                return Ok(SweepPoint {
                    gamma,
                    lambda_opt: 0.0,
                    risk_at_opt: r.total,
                });
            }
            let lambda = gamma * sigma2 / c;
            let model = ModelSpec::new(gamma, sigma2, spectrum.clone())?;
            let m = StieltjesSolver::new(&model, cfg)?.solve(lambda)?.m;
            Ok(SweepPoint {
                gamma,
                lambda_opt: lambda,
                risk_at_opt: sigma2 / (lambda * m),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingMode {
    RidgelessBias,
    RidgelessVariance,
    OptimalLambda,
    SOnlyOptimal,
}

impl WeightingMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ridgeless_bias" => WeightingMode::RidgelessBias,
            "ridgeless_variance" => WeightingMode::RidgelessVariance,
            "optimal_lambda" => WeightingMode::OptimalLambda,
            "s_only_optimal" => WeightingMode::SOnlyOptimal,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown weighting mode `{s}`"
                )))
            }
        })
    }
}

/// Per-atom `r` values of the optimal weighting for `mode`.
pub fn select_weighting(wspec: &WeightedSpectrum, mode: WeightingMode) -> Vec<f64> {
    match mode {
        WeightingMode::RidgelessBias | WeightingMode::OptimalLambda => {
            wspec.atoms().iter().map(|a| a.s * a.v).collect()
        }
        WeightingMode::RidgelessVariance => vec![1.0; wspec.atoms().len()],
        WeightingMode::SOnlyOptimal => wspec
            .conditional_v_means(GROUP_TOL)
            .into_iter()
            .zip(wspec.atoms())
            .map(|(ev, a)| ev * a.s)
            .collect(),
    }
}

/// `min_λ R(r, λ)` for a weighted spectrum.
pub fn optimal_weighted_risk(
    wspec: &WeightedSpectrum,
    gamma: f64,
    sigma2: f64,
    cfg: &SolverConfig,
) -> Result<LambdaOptResult> {
    let model = ModelSpec::new(gamma, sigma2, wspec.project()?)?;
    lambda_opt(&model, cfg)
}

/// Ridgeless (`λ = 0`) weighted risk.
pub fn ridgeless_weighted_risk(
    wspec: &WeightedSpectrum,
    gamma: f64,
    sigma2: f64,
) -> Result<RiskEvaluation> {
    weighted_risk(wspec, gamma, sigma2, 0.0)
}
