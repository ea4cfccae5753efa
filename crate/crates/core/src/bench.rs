//! Sweep scenarios and built-in figure reproductions.

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::format::{Cell, Table};
use crate::montecarlo::{
    conditional_risk_curve, pcr_risk_curve, EnsembleSource, MatrixEnsemble, McPoint,
    MonteCarloConfig, Prior, RecipeEnsemble,
};
use crate::optimize::{classify_sign, lambda_opt, GROUP_TOL};
use crate::risk::{asymptotic_risk, pcr_risk, RiskEvaluation};
use crate::spectra::{
    parse_spectrum_json, parse_spectrum_spec, Coupling, JointSpectrum, Law, LawDescriptor,
    ModelSpec, Recipe, RecipeKind, SpectrumSource, WeightedSpectrum, DEFAULT_ATOMS,
};
use crate::stieltjes::SolverConfig;

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Parses `a:b:n` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let num = |t: &str| -> Result<f64> {
        let x: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad grid value {t:?}")))?;
        if !x.is_finite() {
            return Err(Error::Parse(format!("non-finite grid value {t:?}")));
        }
        Ok(x)
    };
    if s.is_empty() {
        return Err(Error::Parse("empty grid".into()));
    }
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("expected a:b:n, got {s:?}")));
        }
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad grid count {:?}", parts[2])))?;
        if n == 0 || n > 1_000_000 {
            return Err(Error::Parse(format!(
                "grid count must be in 1..=1000000, got {n}"
            )));
        }
        if n == 1 && a != b {
            return Err(Error::Parse("a one-point grid needs a == b".into()));
        }
        return Ok(linspace(a, b, n));
    }
    s.split(',').map(num).collect()
}

/// Label noise given either directly or as an SNR `ξ = E[gh]/σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Sigma2(f64),
    Snr(f64),
}

impl Noise {
    pub fn sigma2(self, mean_gh: f64) -> Result<f64> {
        match self {
            Noise::Sigma2(s) if s.is_finite() && s >= 0.0 => Ok(s),
            Noise::Snr(x) if x.is_finite() && x > 0.0 => Ok(mean_gh / x),
            Noise::Sigma2(s) => Err(Error::InvalidArgument(format!(
                "sigma2 must be finite and nonnegative, got {s}"
            ))),
            Noise::Snr(x) => Err(Error::InvalidArgument(format!(
                "snr must be positive, got {x}"
            ))),
        }
    }

    pub fn from_options(sigma2: Option<f64>, snr: Option<f64>) -> Result<Self> {
        match (sigma2, snr) {
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "give at most one of sigma2 and snr".into(),
            )),
            (_, Some(x)) => Ok(Noise::Snr(x)),
            (s, None) => Ok(Noise::Sigma2(s.unwrap_or(0.0))),
        }
    }

    pub fn label(self) -> String {
        match self {
            Noise::Sigma2(0.0) => "noiseless".into(),
            Noise::Sigma2(s) => format!("sigma2={}", crate::format::fmt_float(s)),
            Noise::Snr(x) => format!("snr={}", crate::format::fmt_float(x)),
        }
    }
}

/// A spectrum argument read into both of its views.
#[derive(Debug, Clone)]
pub struct ResolvedSpectrum {
    pub joint: JointSpectrum,
    pub weighted: WeightedSpectrum,
    pub recipe: Option<Recipe>,
}

/// Resolves a spectrum argument, reading a file if it names one. `alpha`
/// overrides the exponent of `fig4-twopoint`.
pub fn resolve_spectrum(arg: &str, n_atoms: usize, alpha: Option<f64>) -> Result<ResolvedSpectrum> {
    let input = match parse_spectrum_spec(arg, n_atoms)? {
        SpectrumSource::Inline(i) => i,
        SpectrumSource::File(path) => {
            let text =
                std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
            parse_spectrum_json(&text)?
        }
        SpectrumSource::Recipe(mut r) => {
            if let Some(a) = alpha {
                r = r.with_alpha(a);
            }
            return Ok(ResolvedSpectrum {
                joint: r.joint_spectrum()?,
                weighted: r.weighted_spectrum()?,
                recipe: Some(r),
            });
        }
    };
    Ok(ResolvedSpectrum {
        joint: input.joint()?,
        weighted: input.weighted()?,
        recipe: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub n: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl McSettings {
    fn config(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            replicates: self.replicates,
            master_seed: self.seed,
            prior: Prior::GaussianBeta,
        }
    }

    fn p(&self, gamma: f64) -> Result<usize> {
        let p = (gamma * self.n as f64).round();
        if self.n == 0 || !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "n = {} and gamma = {gamma} give no features",
                self.n
            )));
        }
        Ok(p as usize)
    }
}

/// Finite-sample designs for Monte Carlo columns.
#[derive(Debug, Clone)]
pub enum DesignSource {
    /// Fresh draws from a recipe each replicate.
    Recipe(RecipeEnsemble),
    /// One fixed set of diagonals.
    Fixed(MatrixEnsemble),
}

impl DesignSource {
    pub fn new(spec: &ResolvedSpectrum, n: usize, p: usize) -> Result<Self> {
        match spec.recipe {
            Some(r) => Ok(DesignSource::Recipe(RecipeEnsemble::new(r, n, p))),
            None => Ok(DesignSource::Fixed(MatrixEnsemble::from_weighted(
                &spec.weighted,
                n,
                p,
            )?)),
        }
    }
}

impl EnsembleSource for DesignSource {
    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Result<MatrixEnsemble> {
        match self {
            DesignSource::Recipe(r) => r.draw(rng),
            DesignSource::Fixed(e) => e.draw(rng),
        }
    }
}

fn status(r: &Result<impl Sized>) -> Cell {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => e.kind().into(),
    }
}

fn nan() -> Cell {
    Cell::Num(f64::NAN)
}

fn eval_cells(r: &Result<RiskEvaluation>, signal: f64) -> Vec<Cell> {
    match r {
        Ok(e) => vec![
            e.total.into(),
            e.bias.into(),
            e.variance.into(),
            (e.total / signal).into(),
            status(r),
        ],
        Err(_) => vec![nan(), nan(), nan(), nan(), status(r)],
    }
}

const EVAL_COLUMNS: [&str; 5] = ["risk", "bias", "variance", "normalized_risk", "status"];
const MC_COLUMNS: [&str; 4] = ["mc_mean", "mc_se", "rel_err", "dropped_replicates"];

fn mc_cells(point: &McPoint, theory: f64) -> Vec<Cell> {
    vec![
        point.mean.into(),
        point.se.into(),
        ((point.mean - theory).abs() / theory).into(),
        point.dropped.into(),
    ]
}

/// One curve of a sweep.
pub struct Series {
    pub label: String,
    pub model: ModelSpec,
    pub design: Option<DesignSource>,
}

fn curve_table(
    axis: &str,
    series: &[Series],
    grid: &[f64],
    mc: Option<McSettings>,
    eval: impl Fn(&ModelSpec, f64) -> Result<RiskEvaluation> + Sync,
    simulate: impl Fn(&DesignSource, &[f64], f64, &MonteCarloConfig) -> Result<Vec<McPoint>>,
) -> Result<Table> {
    let mut cols = vec!["series", axis];
    cols.extend(EVAL_COLUMNS);
    if mc.is_some() {
        cols.extend(MC_COLUMNS);
    }
    let mut table = Table::new(cols);
    for s in series {
        let signal = s.model.null_risk() - s.model.sigma2;
        let evals: Vec<Result<RiskEvaluation>> =
            grid.par_iter().map(|&x| eval(&s.model, x)).collect();
        let sim = match (mc, &s.design) {
            (Some(cfg), Some(d)) => Some(simulate(d, grid, s.model.sigma2, &cfg.config())?),
            _ => None,
        };
        for (i, (&x, r)) in grid.iter().zip(&evals).enumerate() {
            let mut row = vec![Cell::from(s.label.as_str()), x.into()];
            row.extend(eval_cells(r, signal));
            if mc.is_some() {
                match &sim {
                    Some(points) => {
                        let theory = r.as_ref().map_or(f64::NAN, |e| e.total);
                        row.extend(mc_cells(&points[i], theory));
                    }
                    None => row.extend([nan(), nan(), nan(), Cell::Int(0)]),
                }
            }
            table.push(row);
        }
    }
    Ok(table)
}

/// Risk against `λ`; Monte Carlo columns when `mc` is set.
pub fn lambda_table(series: &[Series], grid: &[f64], mc: Option<McSettings>) -> Result<Table> {
    curve_table(
        "lambda",
        series,
        grid,
        mc,
        asymptotic_risk,
        |d, g, s2, c| conditional_risk_curve(d, g, s2, c),
    )
}

/// PCR risk against `θ`.
pub fn theta_table(series: &[Series], grid: &[f64], mc: Option<McSettings>) -> Result<Table> {
    curve_table("theta", series, grid, mc, pcr_risk, |d, g, s2, c| {
        pcr_risk_curve(d, g, s2, c)
    })
}

/// Risk at a fixed `λ` against `γ`.
pub fn gamma_fixed_lambda_table(
    series: &[(String, JointSpectrum, Noise)],
    gammas: &[f64],
    lambda: f64,
) -> Result<Table> {
    let mut cols = vec!["series", "gamma"];
    cols.extend(EVAL_COLUMNS);
    let mut table = Table::new(cols);
    for (label, spec, noise) in series {
        let sigma2 = noise.sigma2(spec.mean_gh())?;
        let rows: Vec<Vec<Cell>> = gammas
            .par_iter()
            .map(|&g| {
                let r = ModelSpec::new(g, sigma2, spec.clone())
                    .and_then(|m| asymptotic_risk(&m, lambda));
                let mut row = vec![Cell::from(label.as_str()), g.into()];
                row.extend(eval_cells(&r, g * spec.mean_gh()));
                row
            })
            .collect();
        rows.into_iter().for_each(|r| table.push(r));
    }
    Ok(table)
}

const OPT_COLUMNS: [&str; 10] = [
    "sigma2",
    "lambda_opt",
    "risk_at_opt",
    "normalized_opt",
    "ridgeless_risk",
    "normalized_ridgeless",
    "sign",
    "predicted_sign",
    "method",
    "status",
];

fn opt_cells(model: Result<ModelSpec>, cfg: &SolverConfig) -> Vec<Cell> {
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            let mut row = vec![nan(); 6];
            row.extend([
                Cell::from(""),
                Cell::from(""),
                Cell::from(""),
                e.kind().into(),
            ]);
            return row;
        }
    };
    let signal = model.null_risk() - model.sigma2;
    let ridgeless = asymptotic_risk(&model, 0.0).map_or(f64::NAN, |e| e.total);
    let predicted = classify_sign(&model).as_str();
    match lambda_opt(&model, cfg) {
        Ok(o) => vec![
            model.sigma2.into(),
            o.lambda_opt.into(),
            o.risk_at_opt.into(),
            (o.risk_at_opt / signal).into(),
            ridgeless.into(),
            (ridgeless / signal).into(),
            o.sign_class.as_str().into(),
            predicted.into(),
            o.method.as_str().into(),
            "ok".into(),
        ],
        Err(e) => vec![
            model.sigma2.into(),
            nan(),
            nan(),
            nan(),
            ridgeless.into(),
            (ridgeless / signal).into(),
            "".into(),
            predicted.into(),
            "".into(),
            e.kind().into(),
        ],
    }
}

/// `λ_opt`, the optimal risk and the ridgeless risk against `γ`.
pub fn gamma_table(series: &[(String, JointSpectrum, Noise)], gammas: &[f64]) -> Result<Table> {
    let cfg = SolverConfig::default();
    let mut cols = vec!["series", "gamma"];
    cols.extend(OPT_COLUMNS);
    let mut table = Table::new(cols);
    for (label, spec, noise) in series {
        let sigma2 = noise.sigma2(spec.mean_gh())?;
        let rows: Vec<Vec<Cell>> = gammas
            .par_iter()
            .map(|&g| {
                let mut row = vec![Cell::from(label.as_str()), g.into()];
                row.extend(opt_cells(ModelSpec::new(g, sigma2, spec.clone()), &cfg));
                row
            })
            .collect();
        rows.into_iter().for_each(|r| table.push(r));
    }
    Ok(table)
}

/// A weighting matrix `Σ_w` expressed through `r = s / d_w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule {
    /// `Σ_w = I`.
    Identity,
    /// `Σ_w = Σ_x^k`.
    SigmaXPower(f64),
    /// `Σ_w = Σ_β^k`.
    SigmaBetaPower(f64),
    /// `Σ_w = f_v(Σ_x)^{-1}` with `f_v(s) = E[v | s]`.
    SOnly,
}

impl WeightRule {
    pub fn name(&self) -> String {
        let f = crate::format::fmt_float;
        match *self {
            WeightRule::Identity => "identity".into(),
            WeightRule::SigmaXPower(1.0) => "sigma_x".into(),
            WeightRule::SigmaXPower(-1.0) => "sigma_x_inv".into(),
            WeightRule::SigmaBetaPower(1.0) => "sigma_beta".into(),
            WeightRule::SigmaBetaPower(-1.0) => "sigma_beta_inv".into(),
            WeightRule::SigmaXPower(k) => format!("sigma_x^{}", f(k)),
            WeightRule::SigmaBetaPower(k) => format!("sigma_beta^{}", f(k)),
            WeightRule::SOnly => "s_only".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let power = |t: &str| -> Result<f64> {
            t.parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| Error::Parse(format!("bad exponent in weighting {s:?}")))
        };
        Ok(match s {
            "identity" => WeightRule::Identity,
            "sigma_x" => WeightRule::SigmaXPower(1.0),
            "sigma_x_inv" => WeightRule::SigmaXPower(-1.0),
            "sigma_beta" => WeightRule::SigmaBetaPower(1.0),
            "sigma_beta_inv" => WeightRule::SigmaBetaPower(-1.0),
            "s_only" => WeightRule::SOnly,
            _ => {
                if let Some(k) = s.strip_prefix("sigma_x^") {
                    WeightRule::SigmaXPower(power(k)?)
                } else if let Some(k) = s.strip_prefix("sigma_beta^") {
                    WeightRule::SigmaBetaPower(power(k)?)
                } else {
                    return Err(Error::Parse(format!("unknown weighting {s:?}")));
                }
            }
        })
    }

    pub fn apply(&self, w: &WeightedSpectrum) -> Result<WeightedSpectrum> {
        match *self {
            WeightRule::Identity => w.map_r(|s, _| s),
            WeightRule::SigmaXPower(k) => w.map_r(|s, _| s.powf(1.0 - k)),
            WeightRule::SigmaBetaPower(k) => w.map_r(|s, v| s / v.powf(k)),
            WeightRule::SOnly => {
                let means = w.conditional_v_means(GROUP_TOL);
                let r: Vec<f64> = w.atoms().iter().zip(means).map(|(a, m)| a.s * m).collect();
                w.with_r(&r)
            }
        }
    }
}

/// Optimally tuned and ridgeless weighted risk against `γ` per weighting.
pub fn weighting_table(
    series: &[(String, WeightedSpectrum, Noise)],
    rules: &[WeightRule],
    gammas: &[f64],
) -> Result<Table> {
    let cfg = SolverConfig::default();
    let mut cols = vec!["series", "weighting", "gamma"];
    cols.extend(OPT_COLUMNS);
    let mut table = Table::new(cols);
    for (label, wspec, noise) in series {
        let signal_mean = wspec.project()?.mean_gh();
        let sigma2 = noise.sigma2(signal_mean)?;
        for rule in rules {
            let projected = rule.apply(wspec)?.project()?;
            let rows: Vec<Vec<Cell>> = gammas
                .par_iter()
                .map(|&g| {
                    let mut row = vec![
                        Cell::from(label.as_str()),
                        Cell::from(rule.name()),
                        g.into(),
                    ];
                    row.extend(opt_cells(
                        ModelSpec::new(g, sigma2, projected.clone()),
                        &cfg,
                    ));
                    row
                })
                .collect();
            rows.into_iter().for_each(|r| table.push(r));
        }
    }
    Ok(table)
}

/// Optimally tuned risk along `r_α = α s v + (1-α) r` at fixed `γ`.
pub fn alpha_table(
    label: &str,
    wspec: &WeightedSpectrum,
    gamma: f64,
    sigma2: f64,
    alphas: &[f64],
) -> Result<Table> {
    let cfg = SolverConfig::default();
    let mut cols = vec!["series", "alpha"];
    cols.extend(OPT_COLUMNS);
    let mut table = Table::new(cols);
    let rows: Vec<Vec<Cell>> = alphas
        .par_iter()
        .map(|&a| {
            let model = crate::risk::alpha_path(wspec, a)
                .and_then(|p| p.project())
                .and_then(|h| ModelSpec::new(gamma, sigma2, h));
            let mut row = vec![Cell::from(label), a.into()];
            row.extend(opt_cells(model, &cfg));
            row
        })
        .collect();
    rows.into_iter().for_each(|r| table.push(r));
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Lambda,
    Gamma,
    Theta,
    Alpha,
    Weighting,
}

/// A user-defined sweep, read from JSON.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Anything accepted by a `--spectrum` argument.
    pub spectrum: String,
    pub gamma: Option<f64>,
    pub sigma2: Option<f64>,
    pub snr: Option<f64>,
    pub sweep: Sweep,
    /// Values along the sweep axis (`a:b:n` or a comma list); for the
    /// `weighting` sweep these are `γ` values.
    pub grid: String,
    /// Weightings for the `weighting` sweep.
    pub weightings: Option<Vec<String>>,
    /// Exponent for `fig4-twopoint`.
    pub alpha: Option<f64>,
    pub n_atoms: Option<usize>,
    pub mc: Option<McSettings>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    fn need_gamma(&self) -> Result<f64> {
        self.gamma
            .ok_or_else(|| Error::InvalidArgument(format!("{:?} sweep needs gamma", self.sweep)))
    }

    pub fn run(&self) -> Result<Table> {
        let grid = parse_grid(&self.grid)?;
        let noise = Noise::from_options(self.sigma2, self.snr)?;
        let spec = resolve_spectrum(
            &self.spectrum,
            self.n_atoms.unwrap_or(DEFAULT_ATOMS),
            self.alpha,
        )?;
        let label = self.name.clone();
        let series = |gamma: f64, mc: Option<McSettings>| -> Result<Vec<Series>> {
            let sigma2 = noise.sigma2(spec.joint.mean_gh())?;
            let design = match mc {
                Some(m) => Some(DesignSource::new(&spec, m.n, m.p(gamma)?)?),
                None => None,
            };
            Ok(vec![Series {
                label: label.clone(),
                model: ModelSpec::new(gamma, sigma2, spec.joint.clone())?,
                design,
            }])
        };
        match self.sweep {
            Sweep::Lambda => lambda_table(&series(self.need_gamma()?, self.mc)?, &grid, self.mc),
            Sweep::Theta => {
                if spec.recipe.is_none() && spec.weighted.atoms().iter().any(|a| a.r != a.s) {
                    return Err(Error::InvalidArgument("PCR sweeps need Sigma_w = I".into()));
                }
                theta_table(&series(self.need_gamma()?, self.mc)?, &grid, self.mc)
            }
            Sweep::Gamma => gamma_table(&[(label, spec.joint, noise)], &grid),
            Sweep::Alpha => {
                let sigma2 = noise.sigma2(spec.joint.mean_gh())?;
                alpha_table(&label, &spec.weighted, self.need_gamma()?, sigma2, &grid)
            }
            Sweep::Weighting => {
                let rules = match &self.weightings {
                    Some(names) => names
                        .iter()
                        .map(|n| WeightRule::parse(n))
                        .collect::<Result<Vec<_>>>()?,
                    None => FIG5_LEFT_RULES.to_vec(),
                };
                weighting_table(&[(label, spec.weighted, noise)], &rules, &grid)
            }
        }
    }
}

pub const REPRODUCE_KEYS: [&str; 16] = [
    "fig2a",
    "fig2b",
    "fig2c",
    "fig2-noisy-a",
    "fig2-noisy-b",
    "fig2-noisy-c",
    "fig4-left",
    "fig4-right",
    "fig5-left",
    "fig5-right",
    "fig6-left",
    "fig6-right",
    "fig7-ridgeless",
    "fig7-pcr",
    "sign-uniform",
    "sign-twopoint",
];

const FIG2_RECIPES: [RecipeKind; 4] = [
    RecipeKind::DcDc,
    RecipeKind::DcCt,
    RecipeKind::CtCt,
    RecipeKind::CtDc,
];

const FIG5_LEFT_RULES: [WeightRule; 5] = [
    WeightRule::SigmaXPower(1.0),
    WeightRule::SigmaBetaPower(1.0),
    WeightRule::Identity,
    WeightRule::SigmaXPower(-1.0),
    WeightRule::SigmaBetaPower(-1.0),
];

/// Default fixed SNR for the noisy variants.
pub const DEFAULT_SNR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceOptions {
    /// Monte Carlo columns for the `fig2*` and `fig7-pcr` keys.
    pub mc: Option<McSettings>,
    pub n_atoms: usize,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            mc: None,
            n_atoms: DEFAULT_ATOMS,
        }
    }
}

/// `γ` grid for the tuned-risk figures; steps over the interpolation point.
pub fn gamma_grid() -> Vec<f64> {
    linspace(0.1, 3.9, 20)
}

/// The `λ` grid of the risk-curve figures.
pub fn fig2_lambda_grid() -> Vec<f64> {
    linspace(-0.15, 3.0, 25)
}

/// Series for the risk-curve figures: the four marginal recipes under one
/// coupling at `γ = 2`.
pub fn fig2_series(
    coupling: Coupling,
    noise: Noise,
    opts: &ReproduceOptions,
) -> Result<Vec<Series>> {
    let gamma = 2.0;
    FIG2_RECIPES
        .iter()
        .map(|&kind| {
            let recipe = Recipe::new(kind)
                .with_coupling(coupling)
                .with_atoms(opts.n_atoms);
            let joint = recipe.joint_spectrum()?;
            let sigma2 = noise.sigma2(joint.mean_gh())?;
            let design = match opts.mc {
                Some(m) => Some(DesignSource::Recipe(RecipeEnsemble::new(
                    recipe,
                    m.n,
                    m.p(gamma)?,
                ))),
                None => None,
            };
            Ok(Series {
                label: recipe.key(),
                model: ModelSpec::new(gamma, sigma2, joint)?,
                design,
            })
        })
        .collect()
}

fn power_spectrum(h: &JointSpectrum, alpha: f64) -> Result<JointSpectrum> {
    JointSpectrum::new(
        h.atoms()
            .iter()
            .map(|a| crate::spectra::Atom::new(a.h, a.h.powf(alpha), a.weight))
            .collect(),
    )
}

fn noises() -> [Noise; 2] {
    [Noise::Sigma2(0.0), Noise::Snr(DEFAULT_SNR)]
}

fn sign_table(base: &JointSpectrum, alphas: &[f64], gammas: &[f64]) -> Result<Table> {
    let mut series = Vec::new();
    for &a in alphas {
        for noise in noises() {
            series.push((
                format!("alpha={},{}", crate::format::fmt_float(a), noise.label()),
                power_spectrum(base, a)?,
                noise,
            ));
        }
    }
    gamma_table(&series, gammas)
}

/// Builds the table for a figure key.
pub fn reproduce(key: &str, opts: &ReproduceOptions) -> Result<Table> {
    let n = opts.n_atoms;
    let two_point = JointSpectrum::from_triples(&[[1.0, 1.0, 0.75], [5.0, 1.0, 0.25]])?;
    match key {
        "fig2a" | "fig2b" | "fig2c" | "fig2-noisy-a" | "fig2-noisy-b" | "fig2-noisy-c" => {
            let coupling = match key.chars().last() {
                Some('a') => Coupling::Aligned,
                Some('b') => Coupling::Misaligned,
                _ => Coupling::Independent,
            };
            let noise = if key.starts_with("fig2-noisy") {
                Noise::Snr(DEFAULT_SNR)
            } else {
                Noise::Sigma2(0.0)
            };
            lambda_table(
                &fig2_series(coupling, noise, opts)?,
                &fig2_lambda_grid(),
                opts.mc,
            )
        }
        "fig4-left" => sign_table(&two_point, &[-1.0, -0.5, 0.0, 0.5, 1.0], &gamma_grid()),
        "fig4-right" => {
            let series: Vec<_> = [0.5, 1.0, 1.5, 2.0]
                .iter()
                .map(|&a| {
                    Ok((
                        format!("alpha={}", crate::format::fmt_float(a)),
                        power_spectrum(&two_point, a)?,
                        Noise::Sigma2(0.0),
                    ))
                })
                .collect::<Result<_>>()?;
            gamma_table(&series, &gamma_grid())
        }
        "fig5-left" | "fig5-right" | "fig6-left" | "fig6-right" => {
            let recipe = Recipe::parse(key)?.with_atoms(n);
            let wspec = recipe.weighted_spectrum()?;
            let rules: Vec<WeightRule> = match key {
                "fig5-left" => FIG5_LEFT_RULES.to_vec(),
                "fig5-right" => [-2.0, -1.5, -1.0, -0.5, 0.0]
                    .into_iter()
                    .map(WeightRule::SigmaBetaPower)
                    .collect(),
                _ => vec![
                    WeightRule::Identity,
                    WeightRule::SigmaBetaPower(-1.0),
                    WeightRule::SOnly,
                    WeightRule::SigmaXPower(1.0),
                    WeightRule::SigmaXPower(-1.0),
                ],
            };
            let series: Vec<_> = noises()
                .into_iter()
                .map(|noise| (noise.label(), wspec.clone(), noise))
                .collect();
            weighting_table(&series, &rules, &gamma_grid())
        }
        "fig7-ridgeless" => {
            let series: Vec<_> = ["fig7-aligned", "fig7-misaligned", "fig7-other"]
                .iter()
                .map(|k| {
                    Ok((
                        k.to_string(),
                        Recipe::parse(k)?.joint_spectrum()?,
                        Noise::Snr(50.0),
                    ))
                })
                .collect::<Result<_>>()?;
            gamma_fixed_lambda_table(&series, &linspace(0.15, 5.05, 50), 0.0)
        }
        "fig7-pcr" => {
            let gamma = 5.0;
            let series = ["fig7-aligned", "fig7-misaligned", "fig7-other"]
                .iter()
                .map(|k| {
                    let recipe = Recipe::parse(k)?;
                    let joint = recipe.joint_spectrum()?;
                    let sigma2 = Noise::Snr(50.0).sigma2(joint.mean_gh())?;
                    let design = match opts.mc {
                        Some(m) => Some(DesignSource::Recipe(RecipeEnsemble::new(
                            recipe,
                            m.n,
                            m.p(gamma)?,
                        ))),
                        None => None,
                    };
                    Ok(Series {
                        label: k.to_string(),
                        model: ModelSpec::new(gamma, sigma2, joint)?,
                        design,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut thetas = linspace(0.01, 0.99, 50);
            thetas.push(1.0);
            theta_table(&series, &thetas, opts.mc)
        }
        "sign-uniform" => {
            let base = crate::spectra::discretize(
                &LawDescriptor::Marginal {
                    h: Law::uniform(1.0, 3.0)?,
                    g: 1.0,
                },
                n,
            )?;
            sign_table(&base, &[-1.0, -0.5, 0.5, 1.0], &linspace(1.1, 4.0, 30))
        }
        "sign-twopoint" => {
            let base = JointSpectrum::from_triples(&[[1.0, 1.0, 0.5], [3.0, 1.0, 0.5]])?;
            sign_table(&base, &[-1.0, -0.5, 0.5, 1.0], &linspace(1.1, 4.0, 30))
        }
        _ => Err(Error::UnknownRecipe(key.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("1, 2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        let g = parse_grid("-0.15:3:25").unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!((g[0], g[24]), (-0.15, 3.0));
        for bad in [
            "", "1:2", "1:2:0", "a,b", "0:1:x", "1:2:1", "nan", "1,,2", "0:1:-1",
        ] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn noise_modes() {
        assert_eq!(Noise::Snr(5.0).sigma2(10.0).unwrap(), 2.0);
        assert!(Noise::Snr(0.0).sigma2(1.0).is_err());
        assert!(Noise::from_options(Some(1.0), Some(1.0)).is_err());
        assert_eq!(Noise::from_options(None, None).unwrap(), Noise::Sigma2(0.0));
    }

    #[test]
    fn weight_rules_round_trip() {
        for r in [
            WeightRule::Identity,
            WeightRule::SigmaXPower(1.0),
            WeightRule::SigmaXPower(-1.0),
            WeightRule::SigmaXPower(0.5),
            WeightRule::SigmaBetaPower(-1.5),
            WeightRule::SOnly,
        ] {
            assert_eq!(WeightRule::parse(&r.name()).unwrap(), r);
        }
        assert!(WeightRule::parse("sigma_x^z").is_err());
    }

    #[test]
    fn weight_rule_values() {
        let w = Recipe::parse("fig5-left")
            .unwrap()
            .weighted_spectrum()
            .unwrap();
        let r = WeightRule::SigmaBetaPower(-1.0).apply(&w).unwrap();
        for a in r.atoms() {
            assert!((a.r - a.s * a.v).abs() < 1e-15);
        }
        let r = WeightRule::SigmaXPower(1.0).apply(&w).unwrap();
        assert!(r.atoms().iter().all(|a| a.r == 1.0));
    }

    #[test]
    fn scenario_parsing() {
        let s = Scenario::from_json(
            r#"{"name":"t","spectrum":"pointmass:1","gamma":2,"sweep":"lambda","grid":"0:1:3"}"#,
        )
        .unwrap();
        let t = s.run().unwrap();
        assert_eq!(t.rows.len(), 3);
        // isotropic ridgeless bias (1 - 1/γ) γ E[gh] = 1
        let risk = t.column("risk").unwrap();
        assert!((risk[0] - 1.0).abs() < 1e-10);
        assert!(Scenario::from_json(
            r#"{"name":"t","spectrum":"x","sweep":"lambda","grid":"1","typo":1}"#
        )
        .is_err());
        assert!(Scenario::from_json(
            r#"{"name":"t","spectrum":"pointmass:1","sweep":"sideways","grid":"1"}"#
        )
        .is_err());
    }

    #[test]
    fn domain_is_reported_not_fatal() {
        let s = Scenario::from_json(
            r#"{"name":"t","spectrum":"pointmass:1","gamma":2,"sweep":"lambda","grid":"-0.5,0.5"}"#,
        )
        .unwrap();
        let t = s.run().unwrap();
        let j = t.column_index("status").unwrap();
        assert_eq!(t.rows[0][j], Cell::from("domain"));
        assert_eq!(t.rows[1][j], Cell::from("ok"));
    }

    #[test]
    fn unknown_key() {
        assert!(matches!(
            reproduce("fig9", &ReproduceOptions::default()),
            Err(Error::UnknownRecipe(_))
        ));
    }
}
