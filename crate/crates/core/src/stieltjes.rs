//! Fixed-point equations for `m(-λ)`, its derivatives, the admissible edge,
//! the truncated transform used by PCR and the companion transform `s(-λ)`.

use crate::error::{Error, Result};
use crate::spectra::{JointSpectrum, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance on `m` (and absolute tolerance on the residual).
    pub tol: f64,
    pub max_iter: usize,
    /// Growth factor when expanding an upper bracket.
    pub expansion: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 200,
            expansion: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesSolution {
    pub lambda: f64,
    /// `m(-λ)`.
    pub m: f64,
    /// `m'(-λ)`.
    pub m_prime: f64,
    /// `|λ - (1/m - γ E[h/(1+hm)])|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeInfo {
    pub m_edge: f64,
    /// `-λ(m_edge)`: the solution exists exactly for `λ > -c0_effective`.
    pub c0_effective: f64,
    /// `(√γ - 1)² c_l`.
    pub c0_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanionSolution {
    pub lambda: f64,
    /// `s(-λ)`.
    pub s: f64,
    /// `(1-γ)/λ + γ s(-λ)`, defined for `λ ≠ 0`.
    pub m_from_s: Option<f64>,
    pub residual: f64,
}

/// `λ(m) = 1/m - γ E[h/(1+hm)]`.
pub fn lambda_of_m(model: &ModelSpec, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "m must be positive, got {m}"
        )));
    }
    Ok(lambda_of_m_raw(model.gamma, &model.spectrum, m))
}

fn lambda_of_m_raw(gamma: f64, spectrum: &JointSpectrum, m: f64) -> f64 {
    1.0 / m - gamma * spectrum.sum(|h, _| h / (1.0 + h * m))
}

/// `γ E[ζ²/(1+ζ)²]` with `ζ = hm`.
fn zeta_sq_moment(gamma: f64, spectrum: &JointSpectrum, m: f64) -> f64 {
    gamma
        * spectrum.sum(|h, _| {
            let z = h * m;
            let r = z / (1.0 + z);
            r * r
        })
}

/// Bisection for a sign change of `f` on `(lo, hi)` with `f(lo) > 0 > f(hi)`.
/// Stops at relative width `tol` with `|f| <= tol`, or at machine resolution.
fn bisect_decreasing<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    cfg: &SolverConfig,
    what: &str,
) -> Result<f64> {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..cfg.max_iter {
        mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let v = f(mid);
        if v.is_nan() {
            return Err(Error::Solver(format!("{what}: NaN at {mid}")));
        }
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            return Ok(mid);
        }
        if hi - lo <= cfg.tol * hi && v.abs() <= cfg.tol {
            return Ok(0.5 * (lo + hi));
        }
    }
    if hi - lo <= cfg.tol * hi {
        Ok(mid)
    } else {
        Err(Error::Solver(format!(
            "{what}: no convergence after {} iterations, bracket [{lo}, {hi}]",
            cfg.max_iter
        )))
    }
}

/// Doubles `hi` until `f(hi) < 0`.
fn expand_upper<F: Fn(f64) -> f64>(
    f: &F,
    start: f64,
    cfg: &SolverConfig,
    what: &str,
) -> Result<f64> {
    let mut hi = start;
    for _ in 0..cfg.max_iter {
        if f(hi) < 0.0 {
            return Ok(hi);
        }
        hi *= cfg.expansion;
        if !hi.is_finite() {
            break;
        }
    }
    Err(Error::Solver(format!(
        "{what}: could not bracket a root above {start}"
    )))
}

/// Solver bound to one model, caching the edge of the principal branch.
#[derive(Debug, Clone)]
pub struct StieltjesSolver<'a> {
    model: &'a ModelSpec,
    cfg: SolverConfig,
    edge: Option<EdgeInfo>,
}

impl<'a> StieltjesSolver<'a> {
    pub fn new(model: &'a ModelSpec, cfg: SolverConfig) -> Result<Self> {
        let edge = if model.gamma > 1.0 {
            Some(find_edge(model, &cfg)?)
        } else {
            None
        };
        Ok(StieltjesSolver { model, cfg, edge })
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn edge(&self) -> Option<EdgeInfo> {
        self.edge
    }

    /// `c0_effective` for `γ > 1`, zero otherwise.
    pub fn c0_effective(&self) -> f64 {
        self.edge.map_or(0.0, |e| e.c0_effective)
    }

    pub fn solve(&self, lambda: f64) -> Result<StieltjesSolution> {
        if !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite, got {lambda}"
            )));
        }
        let gamma = self.model.gamma;
        let spectrum = &self.model.spectrum;
        let f = |m: f64| lambda_of_m_raw(gamma, spectrum, m) - lambda;
        let m = match self.edge {
            Some(edge) => {
                if lambda <= -edge.c0_effective {
                    return Err(Error::Domain {
                        lambda,
                        c0_effective: edge.c0_effective,
                    });
                }
                bisect_decreasing(f, 0.0, edge.m_edge, &self.cfg, "solve_m")?
            }
            None => {
                if lambda <= 0.0 {
                    return Err(Error::Regime(format!(
                        "m(-lambda) does not exist for gamma = {gamma} <= 1 and lambda = {lambda} <= 0; \
                         use the companion transform"
                    )));
                }
                let hi = expand_upper(&f, 1.0 / lambda, &self.cfg, "solve_m")?;
                bisect_decreasing(f, 0.0, hi, &self.cfg, "solve_m")?
            }
        };
        let inv = 1.0 / (m * m) - gamma * spectrum.sum(|h, _| (h / (1.0 + h * m)).powi(2));
        let m_prime = 1.0 / inv;
        if !(m_prime.is_finite() && m_prime > 0.0) {
            return Err(Error::Solver(format!(
                "m' = {m_prime} is not finite and positive at lambda = {lambda} (too close to the edge)"
            )));
        }
        Ok(StieltjesSolution {
            lambda,
            m,
            m_prime,
            residual: f(m).abs(),
        })
    }
}

/// Root `m_edge` of `γ E[(hm)²/(1+hm)²] = 1` and the resulting edge.
pub fn find_edge(model: &ModelSpec, cfg: &SolverConfig) -> Result<EdgeInfo> {
    let gamma = model.gamma;
    if gamma <= 1.0 {
        return Err(Error::Regime(format!(
            "the edge exists only for gamma > 1, got {gamma}"
        )));
    }
    let spectrum = &model.spectrum;
    let live: f64 = spectrum
        .atoms()
        .iter()
        .filter(|a| a.h > 0.0)
        .map(|a| a.weight)
        .sum();
    if gamma * live <= 1.0 {
        return Err(Error::Regime(format!(
            "gamma times the nonzero mass is {} <= 1",
            gamma * live
        )));
    }
    // decreasing in m: 1 - γE[ζ²/(1+ζ)²]
    let phi = |m: f64| 1.0 - zeta_sq_moment(gamma, spectrum, m);
    let start = 1.0 / spectrum.c_upper().max(f64::MIN_POSITIVE);
    let hi = expand_upper(&phi, start, cfg, "find_edge")?;
    let m_edge = bisect_decreasing(phi, 0.0, hi, cfg, "find_edge")?;
    Ok(EdgeInfo {
        m_edge,
        c0_effective: -lambda_of_m_raw(gamma, spectrum, m_edge),
        c0_bound: (gamma.sqrt() - 1.0).powi(2) * spectrum.c_lower(),
    })
}

/// `m(-λ)` and `m'(-λ)` on the principal branch.
pub fn solve_m(model: &ModelSpec, lambda: f64, cfg: &SolverConfig) -> Result<StieltjesSolution> {
    StieltjesSolver::new(model, *cfg)?.solve(lambda)
}

/// The fixed point at `z = 0` over the top-`θ` truncated spectrum.
pub fn solve_m_theta(
    model: &ModelSpec,
    theta: f64,
    cfg: &SolverConfig,
) -> Result<StieltjesSolution> {
    let truncated = truncated_model(model, theta)?;
    solve_m(&truncated, 0.0, cfg)
}

pub(crate) fn truncated_model(model: &ModelSpec, theta: f64) -> Result<ModelSpec> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    if theta * model.gamma <= 1.0 {
        return Err(Error::Regime(format!(
            "theta * gamma = {} <= 1: the truncated fixed point has no solution; \
             use the underparameterized PCR branch",
            theta * model.gamma
        )));
    }
    ModelSpec::new(
        model.gamma,
        model.sigma2,
        model.spectrum.truncate_top(theta)?,
    )
}

/// `m''(-λ) = 2(1 - γE[ζ³/(1+ζ)³]) / (1 - γE[ζ²/(1+ζ)²]) · m'²/m`.
pub fn m_second_derivative(model: &ModelSpec, sol: &StieltjesSolution) -> f64 {
    let (gamma, m) = (model.gamma, sol.m);
    let r = |h: f64| h * m / (1.0 + h * m);
    let num = 1.0 - gamma * model.spectrum.sum(|h, _| r(h).powi(3));
    let den = 1.0 - gamma * model.spectrum.sum(|h, _| r(h).powi(2));
    2.0 * num / den * sol.m_prime * sol.m_prime / m
}

/// `s(-λ) = E[1/(h(1-γ+γλs) + λ)]` on the principal branch.
pub fn solve_companion(
    model: &ModelSpec,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<CompanionSolution> {
    let gamma = model.gamma;
    let spectrum = &model.spectrum;
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite, got {lambda}"
        )));
    }
    let expect = |s: f64| {
        let t = 1.0 - gamma + gamma * lambda * s;
        spectrum.sum(|h, _| 1.0 / (h * t + lambda))
    };
    // increasing on the principal branch for λ > 0
    let big_f = |s: f64| s - expect(s);

    let s = if lambda > 0.0 {
        let lo = ((gamma - 1.0) / (gamma * lambda)).max(0.0);
        let hi = 1.0 / lambda;
        bisect_decreasing(|s| -big_f(s), lo, hi, cfg, "solve_companion")?
    } else if gamma < 1.0 {
        if lambda == 0.0 {
            spectrum.sum(|h, _| 1.0 / h) / (1.0 - gamma)
        } else {
            companion_negative(model, lambda, cfg)?
        }
    } else {
        return Err(Error::Regime(format!(
            "the companion transform is evaluated at lambda <= 0 only for gamma < 1 (gamma = {gamma})"
        )));
    };
    Ok(CompanionSolution {
        lambda,
        s,
        m_from_s: (lambda != 0.0).then(|| (1.0 - gamma) / lambda + gamma * s),
        residual: big_f(s).abs(),
    })
}

/// Negative `λ` with `γ < 1`. `F(s) = s - E[..]` is concave on `(0, s_pole)`;
/// the principal root is the smaller of its two roots.
fn companion_negative(model: &ModelSpec, lambda: f64, cfg: &SolverConfig) -> Result<f64> {
    match companion_negative_root(model, lambda, cfg)? {
        Some(s) => Ok(s),
        None => Err(Error::Domain {
            lambda,
            c0_effective: companion_edge(model, cfg)?,
        }),
    }
}

fn companion_negative_root(
    model: &ModelSpec,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<Option<f64>> {
    let gamma = model.gamma;
    let spectrum = &model.spectrum;
    let c_l = spectrum.c_lower();
    if lambda <= -c_l * (1.0 - gamma) {
        return Ok(None);
    }
    let t = |s: f64| 1.0 - gamma + gamma * lambda * s;
    let big_f = |s: f64| s - spectrum.sum(|h, _| 1.0 / (h * t(s) + lambda));
    let f_prime = |s: f64| {
        let ts = t(s);
        1.0 + gamma * lambda * spectrum.sum(|h, _| h / (h * ts + lambda).powi(2))
    };
    let s_pole = (1.0 - gamma + lambda / c_l) / (-gamma * lambda);
    if f_prime(0.0) <= 0.0 {
        return Ok(None);
    }
    let s_star = bisect_decreasing(f_prime, 0.0, s_pole, cfg, "companion maximum")?;
    if big_f(s_star) < 0.0 {
        return Ok(None);
    }
    let s = bisect_decreasing(|s| -big_f(s), 0.0, s_star, cfg, "solve_companion")?;
    Ok(Some(s))
}

/// Largest `c` such that the companion transform exists on `(-c, 0]` for `γ < 1`.
pub fn companion_edge(model: &ModelSpec, cfg: &SolverConfig) -> Result<f64> {
    let gamma = model.gamma;
    if gamma >= 1.0 {
        return Err(Error::Regime(format!(
            "the companion edge is defined for gamma < 1, got {gamma}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = model.spectrum.c_lower() * (1.0 - gamma);
    for _ in 0..cfg.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= cfg.tol * hi {
            break;
        }
        if companion_negative_root(model, -mid, cfg)?.is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
