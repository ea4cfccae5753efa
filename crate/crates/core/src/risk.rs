//! Asymptotic prediction risk, its derivative, PCR risk and weighted risk.
//!
//! For `γ >= 1` everything is written in terms of `m = m(-λ)` and
//! `ζ = h m`. For `γ < 1` the transform `m` blows up at `λ = 0`, so the same
//! quantities are written through `t = λ m = 1 - γ + γ λ s(-λ)` with
//! `ζ/(1+ζ) = ht/(λ+ht)`, which stays finite on both sides of zero.

use crate::error::{Error, Result};
use crate::spectra::{JointSpectrum, ModelSpec, WeightedSpectrum};
use crate::stieltjes::{solve_companion, truncated_model, SolverConfig, StieltjesSolver};

#[derive(Debug, Clone, PartialEq)]
pub struct RiskEvaluation {
    pub lambda: f64,
    pub total: f64,
    pub bias: f64,
    pub variance: f64,
    /// `m(-λ)`; absent where it does not exist (`γ < 1`, `λ <= 0`).
    pub m: Option<f64>,
    pub m_prime: Option<f64>,
    /// `ζ_i = h_i m(-λ)`, in atom order; empty when `m` is absent.
    pub zeta_atoms: Vec<f64>,
}

/// `R'(λ) = prefactor · (part3 + part4)`.
///
/// For `γ >= 1`: `part3 = -σ² E[ζ²/(1+ζ)³]/D`,
/// `part4 = E[ghζ/(1+ζ)³] - γ E[ζ²/(1+ζ)³] E[gh/(1+ζ)²]/D`,
/// `prefactor = 2γ m'²/m³` with `D = 1 - γE[ζ²/(1+ζ)²]`.
///
/// For `γ < 1` both parts are divided by `λ` and the prefactor multiplied by
/// `λ`, which keeps all three finite through `λ = 0`. The product, and hence
/// the sign of the slope, is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeParts {
    pub part3: f64,
    pub part4: f64,
    pub prefactor: f64,
}

impl DerivativeParts {
    pub fn slope(&self) -> f64 {
        self.prefactor * (self.part3 + self.part4)
    }
}

/// Risk and derivative evaluator for one model, caching the spectral edge.
#[derive(Debug, Clone)]
pub struct RiskCalculator<'a> {
    solver: StieltjesSolver<'a>,
}

/// Moments of `ρ_i = ζ_i/(1+ζ_i)` and `κ_i = 1/(1+ζ_i)` needed below.
struct Moments {
    den: f64,
    /// `E[gh κ²]`
    ghk2: f64,
    /// `E[ρ² κ]`
    r2k: f64,
    /// `E[gh ρ κ²]`
    ghrk2: f64,
}

fn moments(spectrum: &JointSpectrum, gamma: f64, rho: impl Fn(f64) -> f64) -> Moments {
    let mut den = 0.0;
    let mut ghk2 = 0.0;
    let mut r2k = 0.0;
    let mut ghrk2 = 0.0;
    for a in spectrum.atoms() {
        let r = rho(a.h);
        let k = 1.0 - r;
        let gh = a.g * a.h;
        den += a.weight * r * r;
        ghk2 += a.weight * gh * k * k;
        r2k += a.weight * r * r * k;
        ghrk2 += a.weight * gh * r * k * k;
    }
    Moments {
        den: 1.0 - gamma * den,
        ghk2,
        r2k,
        ghrk2,
    }
}

impl<'a> RiskCalculator<'a> {
    pub fn new(model: &'a ModelSpec, cfg: SolverConfig) -> Result<Self> {
        Ok(RiskCalculator {
            solver: StieltjesSolver::new(model, cfg)?,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        self.solver.model()
    }

    pub fn solver(&self) -> &StieltjesSolver<'a> {
        &self.solver
    }

    fn underparameterized(&self) -> bool {
        self.model().gamma < 1.0
    }

    /// `t = λ m(-λ)` through the companion transform.
    fn t_of(&self, lambda: f64) -> Result<f64> {
        let model = self.model();
        let c = solve_companion(model, lambda, self.solver.config())?;
        Ok(1.0 - model.gamma + model.gamma * lambda * c.s)
    }

    pub fn risk(&self, lambda: f64) -> Result<RiskEvaluation> {
        let model = self.model();
        let (gamma, sigma2) = (model.gamma, model.sigma2);
        if self.underparameterized() {
            let t = self.t_of(lambda)?;
            let mo = moments(&model.spectrum, gamma, |h| h * t / (lambda + h * t));
            if !(mo.den > 0.0) {
                return Err(Error::Solver(format!(
                    "degenerate denominator {} at lambda = {lambda}",
                    mo.den
                )));
            }
            let bias = gamma * mo.ghk2 / mo.den;
            let variance = sigma2 / mo.den;
            let (m, m_prime, zeta_atoms) = if lambda > 0.0 {
                let m = t / lambda;
                (
                    Some(m),
                    Some(m * m / mo.den),
                    model.spectrum.atoms().iter().map(|a| a.h * m).collect(),
                )
            } else {
                (None, None, Vec::new())
            };
            return finish(lambda, bias, variance, m, m_prime, zeta_atoms);
        }
        let sol = self.solver.solve(lambda)?;
        let scale = sol.m_prime / (sol.m * sol.m);
        let spectrum = &model.spectrum;
        let gh_term = spectrum.expect(|h, g| g * h / (h * sol.m + 1.0).powi(2))?;
        finish(
            lambda,
            scale * gamma * gh_term,
            scale * sigma2,
            Some(sol.m),
            Some(sol.m_prime),
            spectrum.atoms().iter().map(|a| a.h * sol.m).collect(),
        )
    }

    pub fn derivative(&self, lambda: f64) -> Result<DerivativeParts> {
        let model = self.model();
        let (gamma, sigma2) = (model.gamma, model.sigma2);
        if self.underparameterized() {
            let t = self.t_of(lambda)?;
            let mo = moments(&model.spectrum, gamma, |h| h * t / (lambda + h * t));
            if !(mo.den > 0.0) {
                return Err(Error::Solver(format!(
                    "degenerate denominator {} at lambda = {lambda}",
                    mo.den
                )));
            }
            // a = E[(ht)²/(λ+ht)³], b = E[g h² t/(λ+ht)³], c = E[gh/(λ+ht)²]
            let sp = &model.spectrum;
            let a = sp.sum(|h, _| (h * t).powi(2) / (lambda + h * t).powi(3));
            let b = sp.sum(|h, g| g * h * h * t / (lambda + h * t).powi(3));
            let c = sp.sum(|h, g| g * h / (lambda + h * t).powi(2));
            let parts = DerivativeParts {
                part3: -sigma2 * a / mo.den,
                part4: lambda * b - gamma * lambda * lambda * a * c / mo.den,
                prefactor: 2.0 * gamma * t / (mo.den * mo.den),
            };
            return check_parts(parts, lambda);
        }
        let sol = self.solver.solve(lambda)?;
        let m = sol.m;
        let mo = moments(&model.spectrum, gamma, |h| h * m / (1.0 + h * m));
        if !(mo.den > 0.0) {
            return Err(Error::Solver(format!(
                "degenerate denominator {} at lambda = {lambda}",
                mo.den
            )));
        }
        let parts = DerivativeParts {
            part3: -sigma2 * mo.r2k / mo.den,
            part4: mo.ghrk2 - gamma * mo.r2k * mo.ghk2 / mo.den,
            prefactor: 2.0 * gamma * sol.m_prime * sol.m_prime / (m * m * m),
        };
        check_parts(parts, lambda)
    }
}

fn check_parts(parts: DerivativeParts, lambda: f64) -> Result<DerivativeParts> {
    if parts.part3.is_finite() && parts.part4.is_finite() && parts.prefactor.is_finite() {
        Ok(parts)
    } else {
        Err(Error::Solver(format!(
            "non-finite derivative parts at lambda = {lambda}: {parts:?}"
        )))
    }
}

fn finish(
    lambda: f64,
    bias: f64,
    variance: f64,
    m: Option<f64>,
    m_prime: Option<f64>,
    zeta_atoms: Vec<f64>,
) -> Result<RiskEvaluation> {
    let total = bias + variance;
    if !(total.is_finite() && bias >= 0.0 && variance >= 0.0) {
        return Err(Error::Solver(format!(
            "invalid risk at lambda = {lambda}: bias {bias}, variance {variance}"
        )));
    }
    Ok(RiskEvaluation {
        lambda,
        total,
        bias,
        variance,
        m,
        m_prime,
        zeta_atoms,
    })
}

pub fn asymptotic_risk(model: &ModelSpec, lambda: f64) -> Result<RiskEvaluation> {
    asymptotic_risk_with(model, lambda, &SolverConfig::default())
}

pub fn asymptotic_risk_with(
    model: &ModelSpec,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<RiskEvaluation> {
    RiskCalculator::new(model, *cfg)?.risk(lambda)
}

pub fn risk_derivative(model: &ModelSpec, lambda: f64) -> Result<DerivativeParts> {
    RiskCalculator::new(model, SolverConfig::default())?.derivative(lambda)
}

/// `(σ² + γE[gh/(1+ζ)²]) / (1 - γE[ζ²/(1+ζ)²])`, which equals the risk by the
/// identities linking `m'` and `λ m` to moments of `ζ`.
pub fn alternative_form_total(model: &ModelSpec, m: f64) -> f64 {
    let mo = moments(&model.spectrum, model.gamma, |h| h * m / (1.0 + h * m));
    (model.sigma2 + model.gamma * mo.ghk2) / mo.den
}

/// Risk of PCR keeping the top `θ` fraction of principal directions.
pub fn pcr_risk(model: &ModelSpec, theta: f64) -> Result<RiskEvaluation> {
    pcr_risk_with(model, theta, &SolverConfig::default())
}

pub fn pcr_risk_with(model: &ModelSpec, theta: f64, cfg: &SolverConfig) -> Result<RiskEvaluation> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    let gamma = model.gamma;
    if (theta * gamma - 1.0).abs() < 10.0 * cfg.tol {
        return Err(Error::Regime(format!(
            "theta * gamma = {} is at the interpolation threshold where the PCR risk diverges",
            theta * gamma
        )));
    }
    let split = model.spectrum.split_top(theta)?;
    let dropped_gh: f64 = split.dropped.iter().map(|a| a.weight * a.g * a.h).sum();
    if theta * gamma < 1.0 {
        let scale = 1.0 / (1.0 - theta * gamma);
        return finish(
            0.0,
            scale * gamma * dropped_gh,
            scale * model.sigma2,
            None,
            None,
            Vec::new(),
        );
    }
    let truncated = truncated_model(model, theta)?;
    let sol = StieltjesSolver::new(&truncated, *cfg)?.solve(0.0)?;
    let m = sol.m;
    let kept: f64 = split
        .kept
        .iter()
        .map(|a| a.weight * a.g * a.h / (a.h * m + 1.0).powi(2))
        .sum();
    let scale = sol.m_prime / (m * m);
    finish(
        0.0,
        scale * gamma * (kept + dropped_gh),
        scale * model.sigma2,
        Some(m),
        Some(sol.m_prime),
        truncated.spectrum.atoms().iter().map(|a| a.h * m).collect(),
    )
}

/// The upper-branch PCR risk written with the truncated `h_θ` inside every
/// atom, `(m'/m²)(γE[g h /(h_θ m+1)²] + σ²)`, for cross-checking the split form.
pub fn pcr_risk_display_form(model: &ModelSpec, theta: f64) -> Result<f64> {
    let truncated = truncated_model(model, theta)?;
    let sol = StieltjesSolver::new(&truncated, SolverConfig::default())?.solve(0.0)?;
    let split = model.spectrum.split_top(theta)?;
    let m = sol.m;
    // pair the original h with its truncated counterpart
    let mut acc = 0.0;
    for a in &split.kept {
        acc += a.weight * a.g * a.h / (a.h * m + 1.0).powi(2);
    }
    for a in &split.dropped {
        let h_theta = 0.0;
        acc += a.weight * a.g * a.h / (h_theta * m + 1.0).powi(2);
    }
    Ok(sol.m_prime / (m * m) * (model.gamma * acc + model.sigma2))
}

/// Risk of the weighted estimator with ratio law `r`, via the projection
/// `(h, g) = (r, s v / r)`.
pub fn weighted_risk(
    wspec: &WeightedSpectrum,
    gamma: f64,
    sigma2: f64,
    lambda: f64,
) -> Result<RiskEvaluation> {
    let model = ModelSpec::new(gamma, sigma2, wspec.project()?)?;
    asymptotic_risk(&model, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPath {
    pub alpha: f64,
    /// `α s_i v_i + (1-α) r_i`.
    pub r_alpha_atoms: Vec<f64>,
    /// `s_i v_i m_α(-λ)`; empty when `m_α` is absent.
    pub psi_atoms: Vec<f64>,
}

/// Interpolates `r` toward `s v`.
pub fn alpha_path(wspec: &WeightedSpectrum, alpha: f64) -> Result<WeightedSpectrum> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    wspec.with_r(
        &wspec
            .atoms()
            .iter()
            .map(|a| alpha * a.s * a.v + (1.0 - alpha) * a.r)
            .collect::<Vec<_>>(),
    )
}

pub fn alpha_path_risk(
    wspec: &WeightedSpectrum,
    gamma: f64,
    sigma2: f64,
    alpha: f64,
    lambda: f64,
) -> Result<(RiskEvaluation, AlphaPath)> {
    let path = alpha_path(wspec, alpha)?;
    let eval = weighted_risk(&path, gamma, sigma2, lambda)?;
    let psi_atoms = match eval.m {
        Some(m) => path.atoms().iter().map(|a| a.s * a.v * m).collect(),
        None => Vec::new(),
    };
    Ok((
        eval,
        AlphaPath {
            alpha,
            r_alpha_atoms: path.r_values(),
            psi_atoms,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{Atom, JointSpectrum, WeightedAtom};

    fn model(gamma: f64, sigma2: f64, atoms: &[[f64; 3]]) -> ModelSpec {
        ModelSpec::new(gamma, sigma2, JointSpectrum::from_triples(atoms).unwrap()).unwrap()
    }

    #[test]
    fn isotropic_examples() {
        let m = model(2.0, 0.0, &[[1.0, 1.0, 1.0]]);
        let r = asymptotic_risk(&m, 0.0).unwrap();
        assert!((r.total - 1.0).abs() < 1e-10);
        let m = model(2.0, 0.25, &[[1.0, 1.0, 1.0]]);
        let r = asymptotic_risk(&m, 0.0).unwrap();
        assert!((r.total - 1.5).abs() < 1e-10);
        assert!((r.variance - 0.5).abs() < 1e-10);
        assert!((r.total - r.bias - r.variance).abs() < 1e-12);
        let r = asymptotic_risk(&m, 1e6).unwrap();
        assert!((r.total - m.null_risk()).abs() < 1e-3 * m.null_risk());
    }

    /// Isotropic risk from the quadratic root, written out independently.
    fn iso_oracle(gamma: f64, sigma2: f64, lambda: f64) -> f64 {
        let b = lambda + gamma - 1.0;
        let m = if lambda == 0.0 {
            1.0 / (gamma - 1.0)
        } else {
            (-b + (b * b + 4.0 * lambda).sqrt()) / (2.0 * lambda)
        };
        let mp = 1.0 / (1.0 / (m * m) - gamma / (1.0 + m).powi(2));
        mp / (m * m) * (gamma / (1.0 + m).powi(2) + sigma2)
    }

    #[test]
    fn matches_isotropic_oracle() {
        for gamma in [1.5, 3.0] {
            for lambda in [0.0, 0.2, 2.0] {
                let r = asymptotic_risk(&model(gamma, 0.4, &[[1.0, 1.0, 1.0]]), lambda).unwrap();
                let o = iso_oracle(gamma, 0.4, lambda);
                assert!((r.total - o).abs() < 1e-9 * o);
            }
        }
    }

    #[test]
    fn underparameterized_route() {
        // ridgeless with γ < 1: σ²/(1-γ)
        let m = model(0.5, 0.3, &[[1.0, 1.0, 0.5], [4.0, 2.0, 0.5]]);
        let r = asymptotic_risk(&m, 0.0).unwrap();
        assert!((r.total - 0.6).abs() < 1e-12);
        assert_eq!(r.bias, 0.0);
        // agrees with the m route at positive λ
        for lambda in [0.1, 1.0] {
            let r = asymptotic_risk(&m, lambda).unwrap();
            let mm = r.m.unwrap();
            let mp =
                1.0 / (1.0 / (mm * mm) - 0.5 * m.spectrum.sum(|h, _| (h / (1.0 + h * mm)).powi(2)));
            let direct = mp / (mm * mm)
                * (0.5 * m.spectrum.sum(|h, g| g * h / (h * mm + 1.0).powi(2)) + 0.3);
            assert!((r.total - direct).abs() < 1e-9 * direct);
        }
        // continuous through zero
        let a = asymptotic_risk(&m, -1e-7).unwrap().total;
        let b = asymptotic_risk(&m, 1e-7).unwrap().total;
        assert!((a - b).abs() < 1e-5);
    }

    fn fd_slope(m: &ModelSpec, lambda: f64) -> f64 {
        let e = 1e-5;
        (asymptotic_risk(m, lambda + e).unwrap().total
            - asymptotic_risk(m, lambda - e).unwrap().total)
            / (2.0 * e)
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cases = [
            model(2.0, 0.3, &[[1.0, 1.0, 0.75], [5.0, 5.0, 0.25]]),
            model(3.0, 0.0, &[[1.0, 5.0, 0.75], [5.0, 1.0, 0.25]]),
            model(0.5, 0.3, &[[1.0, 1.0, 0.5], [4.0, 2.0, 0.5]]),
            model(0.7, 0.0, &[[1.0, 3.0, 0.5], [2.0, 1.0, 0.5]]),
        ];
        for m in &cases {
            for lambda in [-0.02, 0.0, 0.3, 2.0] {
                let d = risk_derivative(m, lambda).unwrap().slope();
                let fd = fd_slope(m, lambda);
                assert!(
                    (d - fd).abs() <= 1e-4 * fd.abs() + 1e-6,
                    "gamma {} lambda {lambda}: {d} vs {fd}",
                    m.gamma
                );
            }
        }
    }

    #[test]
    fn derivative_signs() {
        let m = model(2.0, 0.2, &[[1.0, 1.0, 0.75], [5.0, 5.0, 0.25]]);
        for lambda in [-0.05, 0.0, 0.5, 3.0] {
            assert!(risk_derivative(&m, lambda).unwrap().part3 < 0.0);
        }
        let m = model(2.0, 0.0, &[[1.0, 1.0, 0.75], [5.0, 5.0, 0.25]]);
        assert!(risk_derivative(&m, 0.0).unwrap().part4 > 0.0);
        // isotropic noiseless: minimum at 0
        let m = model(2.0, 0.0, &[[1.0, 1.0, 1.0]]);
        assert!(risk_derivative(&m, 0.0).unwrap().slope().abs() < 1e-10);
    }

    #[test]
    fn alternative_form() {
        let m = model(
            2.5,
            0.7,
            &[[1.0, 2.0, 0.3], [2.0, 0.5, 0.3], [6.0, 1.0, 0.4]],
        );
        for lambda in [-0.1, 0.0, 1.0] {
            let r = asymptotic_risk(&m, lambda).unwrap();
            let alt = alternative_form_total(&m, r.m.unwrap());
            assert!((r.total - alt).abs() < 1e-10 * alt);
        }
    }

    #[test]
    fn pcr_lower_branch_example() {
        let m = model(1.0, 0.0, &[[1.0, 1.0, 0.5], [3.0, 1.0, 0.5]]);
        let r = pcr_risk(&m, 0.5).unwrap();
        assert!((r.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcr_full_model_equals_ridgeless() {
        let m = model(2.0, 0.3, &[[1.0, 1.0, 0.5], [3.0, 2.0, 0.5]]);
        let p = pcr_risk(&m, 1.0).unwrap();
        let r = asymptotic_risk(&m, 0.0).unwrap();
        assert!((p.total - r.total).abs() < 1e-12);
    }

    #[test]
    fn pcr_split_equals_display() {
        let m = model(
            3.0,
            0.2,
            &[[1.0, 3.0, 0.25], [2.0, 2.0, 0.25], [4.0, 1.0, 0.5]],
        );
        for theta in [0.4, 0.6, 0.9] {
            let a = pcr_risk(&m, theta).unwrap().total;
            let b = pcr_risk_display_form(&m, theta).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn pcr_threshold() {
        let m = model(2.0, 0.1, &[[1.0, 1.0, 1.0]]);
        assert!(matches!(pcr_risk(&m, 0.5), Err(Error::Regime(_))));
        let full = pcr_risk(&m, 1.0).unwrap().total;
        assert!(pcr_risk(&m, 0.5005).unwrap().total > 10.0 * full);
        assert!(pcr_risk(&m, 0.4995).unwrap().total > 10.0 * full);
    }

    fn wspec() -> WeightedSpectrum {
        WeightedSpectrum::new(vec![
            WeightedAtom::new(1.0, 1.0, 1.0, 0.25),
            WeightedAtom::new(2.0, 1.0, 2.0, 0.25),
            WeightedAtom::new(3.0, 1.0, 3.0, 0.25),
            WeightedAtom::new(4.0, 5.0, 4.0, 0.25),
        ])
        .unwrap()
    }

    #[test]
    fn weighted_reduces_to_standard() {
        let w = wspec();
        let a = weighted_risk(&w, 2.0, 0.3, 0.5).unwrap();
        let m = ModelSpec::new(2.0, 0.3, w.signal_spectrum().unwrap()).unwrap();
        let b = asymptotic_risk(&m, 0.5).unwrap();
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn weighted_unit_r_variance() {
        let w = wspec().map_r(|_, _| 1.0).unwrap();
        let r = weighted_risk(&w, 3.0, 0.6, 0.0).unwrap();
        assert!((r.variance - 0.6 * 3.0 / 2.0).abs() < 1e-10);
    }

    #[test]
    fn alpha_endpoints() {
        let w = wspec();
        let (e0, p0) = alpha_path_risk(&w, 2.0, 0.1, 0.0, 0.2).unwrap();
        assert_eq!(e0.total, weighted_risk(&w, 2.0, 0.1, 0.2).unwrap().total);
        assert_eq!(p0.r_alpha_atoms, w.r_values());
        let (e1, p1) = alpha_path_risk(&w, 2.0, 0.1, 1.0, 0.2).unwrap();
        let sv = w.map_r(|s, v| s * v).unwrap();
        assert_eq!(p1.r_alpha_atoms, sv.r_values());
        assert_eq!(e1.total, weighted_risk(&sv, 2.0, 0.1, 0.2).unwrap().total);
        assert_eq!(p1.psi_atoms.len(), 4);
        assert!(alpha_path_risk(&w, 2.0, 0.1, 1.5, 0.2).is_err());
    }

    #[test]
    fn zeta_cache() {
        let m = model(2.0, 0.0, &[[1.0, 1.0, 0.5], [2.0, 1.0, 0.5]]);
        let r = asymptotic_risk(&m, 0.5).unwrap();
        let mm = r.m.unwrap();
        let expect: Vec<f64> = m.spectrum.atoms().iter().map(|a: &Atom| a.h * mm).collect();
        assert_eq!(r.zeta_atoms, expect);
    }
}
