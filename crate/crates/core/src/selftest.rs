//! Quick invariant suite run by `ridgelab selftest`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::montecarlo::{conditional_risk, MatrixEnsemble};
use crate::optimize::{lambda_opt, TwoPointSpec};
use crate::risk::{asymptotic_risk, pcr_risk, risk_derivative};
use crate::spectra::{JointSpectrum, ModelSpec, Recipe};
use crate::stieltjes::{find_edge, solve_m, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn isotropic(gamma: f64, sigma2: f64) -> Result<ModelSpec> {
    ModelSpec::new(gamma, sigma2, JointSpectrum::point_mass(1.0, 1.0)?)
}

pub fn run_all() -> Vec<Check> {
    let cfg = SolverConfig::default();
    vec![
        check("isotropic_fixed_point", || {
            let mut worst: f64 = 0.0;
            for gamma in [0.5, 1.5, 2.0, 4.0] {
                for lambda in [0.25, 1.0, 5.0] {
                    let m = solve_m(&isotropic(gamma, 0.0)?, lambda, &cfg)?.m;
                    let b = lambda + gamma - 1.0;
                    let root = (-b + (b * b + 4.0 * lambda).sqrt()) / (2.0 * lambda);
                    worst = worst.max((m - root).abs());
                }
            }
            Ok((worst < 1e-10, format!("max |m - root| = {worst:e}")))
        }),
        check("isotropic_edge", || {
            let e = find_edge(&isotropic(2.0, 0.0)?, &cfg)?;
            let exact = (2f64.sqrt() - 1.0).powi(2);
            Ok((
                (e.c0_effective - exact).abs() < 1e-9,
                format!("c0 = {}", e.c0_effective),
            ))
        }),
        check("derivative_matches_difference", || {
            let model = ModelSpec::new(
                2.0,
                0.3,
                JointSpectrum::from_triples(&[[1.0, 1.0, 0.75], [5.0, 5.0, 0.25]])?,
            )?;
            let eps = 1e-5;
            let fd = (asymptotic_risk(&model, 0.5 + eps)?.total
                - asymptotic_risk(&model, 0.5 - eps)?.total)
                / (2.0 * eps);
            let d = risk_derivative(&model, 0.5)?.slope();
            Ok(((d - fd).abs() < 1e-6, format!("slope {d}, difference {fd}")))
        }),
        check("closed_form_isotropic_optimum", || {
            let o = lambda_opt(&isotropic(2.0, 0.5)?, &cfg)?;
            Ok((
                (o.lambda_opt - 0.5).abs() < 1e-9,
                format!("lambda_opt = {}", o.lambda_opt),
            ))
        }),
        check("negative_ridge_aligned_noiseless", || {
            let o = lambda_opt(&TwoPointSpec::new(0.25, 5.0, 5.0, 2.0)?.model(0.0)?, &cfg)?;
            Ok((
                o.lambda_opt < -1e-3,
                format!("lambda_opt = {}", o.lambda_opt),
            ))
        }),
        check("pcr_full_equals_ridgeless", || {
            let model = ModelSpec::new(2.0, 0.2, Recipe::parse("dc-dc")?.joint_spectrum()?)?;
            let a = pcr_risk(&model, 1.0)?.total;
            let b = asymptotic_risk(&model, 0.0)?.total;
            Ok(((a - b).abs() < 1e-9 * b, format!("pcr {a}, ridgeless {b}")))
        }),
        check("finite_sample_null_limit", || {
            let ens = MatrixEnsemble::unweighted(20, vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4])?;
            let x = ens.sample_x(&mut ChaCha8Rng::seed_from_u64(0));
            let (v, b) = conditional_risk(&ens, 1e8, 0.1, &x)?;
            let null = ens.null_risk(0.1);
            Ok((
                (v + b - null).abs() < 1e-4 * null,
                format!("{} vs {null}", v + b),
            ))
        }),
        check("finite_sample_interpolation", || {
            let ens = MatrixEnsemble::unweighted(30, vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.0; 5])?;
            let x = ens.sample_x(&mut ChaCha8Rng::seed_from_u64(1));
            let (v, b) = conditional_risk(&ens, 0.0, 0.0, &x)?;
            Ok((v + b < 1e-10, format!("risk {}", v + b)))
        }),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
