use ridgelab::montecarlo::{
    conditional_risk_curve, estimator_risk_empirical, min_eigenvalues, pcr_risk_curve,
    MonteCarloConfig, Prior, RecipeEnsemble,
};
use ridgelab::optimize::lambda_opt;
use ridgelab::risk::{asymptotic_risk, pcr_risk};
use ridgelab::spectra::{Coupling, ModelSpec, Recipe};
use ridgelab::stieltjes::{SolverConfig, StieltjesSolver};

fn cfg(replicates: usize, seed: u64) -> MonteCarloConfig {
    MonteCarloConfig {
        replicates,
        master_seed: seed,
        prior: Prior::GaussianBeta,
    }
}

fn model(recipe: Recipe, gamma: f64, sigma2: f64) -> ModelSpec {
    ModelSpec::new(gamma, sigma2, recipe.joint_spectrum().unwrap()).unwrap()
}

fn mean_rel_err(recipe: Recipe, n: usize, lambdas: &[f64], replicates: usize) -> f64 {
    let m = model(recipe, 2.0, 0.2);
    let pts = conditional_risk_curve(
        &RecipeEnsemble::new(recipe, n, 2 * n),
        lambdas,
        0.2,
        &cfg(replicates, 11),
    )
    .unwrap();
    pts.iter()
        .map(|p| {
            let theory = asymptotic_risk(&m, p.x).unwrap().total;
            (p.mean - theory).abs() / theory
        })
        .sum::<f64>()
        / pts.len() as f64
}

#[test]
fn error_shrinks_with_dimension() {
    let recipe = Recipe::parse("dc-dc").unwrap();
    let lambdas = [0.05, 0.3, 1.0, 2.5];
    let e150 = mean_rel_err(recipe, 150, &lambdas, 16);
    let e300 = mean_rel_err(recipe, 300, &lambdas, 8);
    let e600 = mean_rel_err(recipe, 600, &lambdas, 4);
    assert!(e600 < e150, "{e150} {e300} {e600}");
    assert!(e300 < 0.03 && e600 < 0.02, "{e150} {e300} {e600}");
}

#[test]
fn negative_optimum_is_safe_in_finite_samples() {
    let recipe = Recipe::parse("dc-dc")
        .unwrap()
        .with_coupling(Coupling::Aligned);
    let m = model(recipe, 2.0, 0.0);
    let opt = lambda_opt(&m, &SolverConfig::default()).unwrap();
    assert!(opt.lambda_opt < 0.0);
    let source = RecipeEnsemble::new(recipe, 300, 600);
    let eig = min_eigenvalues(&source, &cfg(40, 3)).unwrap();
    let c0 = StieltjesSolver::new(&m, SolverConfig::default())
        .unwrap()
        .c0_effective();
    let deepest = eig.iter().filter(|&&e| e > 0.9 * c0).count();
    assert!(
        deepest as f64 >= 0.95 * eig.len() as f64,
        "{deepest} of {}",
        eig.len()
    );
    let safe = eig.iter().filter(|&&e| e + opt.lambda_opt > 0.0).count();
    let pts = conditional_risk_curve(&source, &[opt.lambda_opt], 0.0, &cfg(40, 3)).unwrap();
    assert_eq!(pts[0].dropped, eig.len() - safe);
    let rel = (pts[0].mean - opt.risk_at_opt).abs() / opt.risk_at_opt;
    assert!(rel < 0.05, "mc {} theory {}", pts[0].mean, opt.risk_at_opt);
}

#[test]
fn end_to_end_matches_trace_formula() {
    let recipe = Recipe::parse("ct-ct").unwrap();
    let source = RecipeEnsemble::new(recipe, 100, 200);
    let lambdas = [0.1, 0.5, 1.5];
    let c = cfg(50, 21);
    let trace = conditional_risk_curve(&source, &lambdas, 0.5, &c).unwrap();
    let emp = estimator_risk_empirical(&source, &lambdas, 0.5, &c).unwrap();
    for (t, e) in trace.iter().zip(&emp) {
        assert!(
            (t.mean - e.mean).abs() <= 3.0 * e.se,
            "lambda {}: {} vs {} (se {})",
            t.x,
            t.mean,
            e.mean,
            e.se
        );
    }
}

#[test]
fn pcr_curve_tracks_theory() {
    let recipe = Recipe::parse("ct-ct")
        .unwrap()
        .with_coupling(Coupling::Misaligned);
    let m = model(recipe, 2.0, 0.1);
    let thetas = [0.3, 0.5, 0.6, 0.75, 0.9, 1.0];
    let pts = pcr_risk_curve(
        &RecipeEnsemble::new(recipe, 200, 400),
        &thetas,
        0.1,
        &cfg(6, 5),
    )
    .unwrap();
    // spike at θγ = 1
    assert!(pts[1].mean > 5.0 * pts[0].mean && pts[1].mean > 5.0 * pts[2].mean);
    for w in pts[2..].windows(2) {
        assert!(w[1].mean < w[0].mean, "{} -> {}", w[0].mean, w[1].mean);
    }
    for p in pts.iter().filter(|p| p.x != 0.5) {
        let theory = pcr_risk(&m, p.x).unwrap().total;
        assert!(
            (p.mean - theory).abs() / theory < 0.1,
            "theta {}: {} vs {theory}",
            p.x,
            p.mean
        );
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let source = RecipeEnsemble::new(Recipe::parse("dc-ct").unwrap(), 40, 60);
    let lambdas = [0.0, 0.2, 1.0];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| conditional_risk_curve(&source, &lambdas, 0.3, &cfg(12, 9)).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }
}
