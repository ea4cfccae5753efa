use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ridgelab::bench::{
    parse_grid, reproduce, resolve_spectrum, weighting_table, DesignSource, McSettings, Noise,
    ReproduceOptions, Scenario, WeightRule, REPRODUCE_KEYS,
};
use ridgelab::format::{Cell, OutputFormat, Table};
use ridgelab::montecarlo::{conditional_risk_curve, MonteCarloConfig, Prior};
use ridgelab::optimize::lambda_opt;
use ridgelab::risk::{asymptotic_risk, pcr_risk};
use ridgelab::spectra::{ModelSpec, DEFAULT_ATOMS};
use ridgelab::stieltjes::{SolverConfig, StieltjesSolver};
use ridgelab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ridgelab",
    version,
    about = "Asymptotic and finite-sample risk of generalized ridge regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Model {
    /// Aspect ratio p/n.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Label noise variance.
    #[arg(long, conflicts_with = "snr")]
    sigma2: Option<f64>,
    /// Signal-to-noise ratio E[gh]/sigma2.
    #[arg(long)]
    snr: Option<f64>,
    /// pointmass:h[:g], uniform:a:b[:g], a recipe name, inline JSON or a file.
    #[arg(long, alias = "recipe", default_value = "pointmass:1")]
    spectrum: String,
    /// Exponent for fig4-twopoint (Sigma_beta = Sigma_x^alpha).
    #[arg(long)]
    alpha: Option<f64>,
    /// Atoms used to discretize continuous laws.
    #[arg(long, default_value_t = DEFAULT_ATOMS)]
    atoms: usize,
}

#[derive(Args, Clone)]
struct Output {
    /// Write to this path instead of stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Args, Clone)]
struct Sim {
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fixed point for m(-lambda).
    SolveM {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Asymptotic risk over a lambda grid.
    RiskCurve {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value = "0:3:31", allow_hyphen_values = true)]
        lambda_grid: String,
        #[command(flatten)]
        output: Output,
    },
    /// Optimal ridge parameter.
    LambdaOpt {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        output: Output,
    },
    /// PCR risk over a theta grid.
    PcrCurve {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value = "0.05:1:20")]
        theta_grid: String,
        #[command(flatten)]
        output: Output,
    },
    /// Optimally tuned risk under candidate weighting matrices.
    WeightCompare {
        #[command(flatten)]
        model: Model,
        /// Comma-separated: identity, sigma_x, sigma_beta, sigma_x_inv,
        /// sigma_beta_inv, s_only, sigma_x^k, sigma_beta^k.
        #[arg(
            long,
            default_value = "sigma_x,sigma_beta,identity,sigma_x_inv,sigma_beta_inv,s_only"
        )]
        weightings: String,
        #[command(flatten)]
        output: Output,
    },
    /// Monte Carlo risk against theory over a lambda grid.
    Simulate {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value = "0:3:13", allow_hyphen_values = true)]
        lambda_grid: String,
        #[command(flatten)]
        sim: Sim,
        #[command(flatten)]
        output: Output,
    },
    /// Rebuild the data behind a figure.
    Reproduce {
        /// One of the built-in figure keys.
        key: String,
        /// Add Monte Carlo columns where the figure has them.
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ATOMS)]
        atoms: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Run a JSON scenario file.
    Run {
        scenario: String,
        #[command(flatten)]
        output: Output,
    },
    /// Run the invariant suite.
    Selftest,
}

impl Model {
    fn build(&self) -> Result<(ModelSpec, ridgelab::bench::ResolvedSpectrum, Noise)> {
        let spec = resolve_spectrum(&self.spectrum, self.atoms, self.alpha)?;
        let noise = Noise::from_options(self.sigma2, self.snr)?;
        let sigma2 = noise.sigma2(spec.joint.mean_gh())?;
        let model = ModelSpec::new(self.gamma, sigma2, spec.joint.clone())?;
        Ok((model, spec, noise))
    }
}

fn emit(table: &Table, output: &Output) -> Result<()> {
    let format: OutputFormat = output.format.parse()?;
    let text = table.render(format);
    match &output.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{path}: {e}"))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::Io(e.to_string()))
        }
    }
}

fn solve_m_table(model: &ModelSpec, lambda: f64) -> Result<Table> {
    let solver = StieltjesSolver::new(model, SolverConfig::default())?;
    let sol = solver.solve(lambda)?;
    let mut t = Table::new(["lambda", "m", "m_prime", "residual", "c0_effective"]);
    t.push(vec![
        sol.lambda.into(),
        sol.m.into(),
        sol.m_prime.into(),
        sol.residual.into(),
        solver.c0_effective().into(),
    ]);
    Ok(t)
}

fn curve(model: &ModelSpec, grid: &[f64], axis: &str, pcr: bool) -> Table {
    let mut t = Table::new([
        axis,
        "risk",
        "bias",
        "variance",
        "normalized_risk",
        "status",
    ]);
    let signal = model.null_risk() - model.sigma2;
    for &x in grid {
        let r = if pcr {
            pcr_risk(model, x)
        } else {
            asymptotic_risk(model, x)
        };
        let mut row = vec![Cell::from(x)];
        match r {
            Ok(e) => row.extend([
                e.total.into(),
                e.bias.into(),
                e.variance.into(),
                (e.total / signal).into(),
                "ok".into(),
            ]),
            Err(e) => {
                row.extend([
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                ]);
                row.push(e.kind().into());
            }
        }
        t.push(row);
    }
    t
}

fn lambda_opt_table(model: &ModelSpec) -> Result<Table> {
    let o = lambda_opt(model, &SolverConfig::default())?;
    let mut t = Table::new([
        "lambda_opt",
        "risk_at_opt",
        "method",
        "sign_class",
        "domain_lo",
        "domain_hi",
    ]);
    t.push(vec![
        o.lambda_opt.into(),
        o.risk_at_opt.into(),
        o.method.as_str().into(),
        o.sign_class.as_str().into(),
        o.domain.0.into(),
        o.domain.1.into(),
    ]);
    Ok(t)
}

fn simulate_table(m: &Model, grid: &[f64], sim: &Sim) -> Result<Table> {
    let (model, spec, _) = m.build()?;
    let p = (model.gamma * sim.n as f64).round() as usize;
    if sim.n == 0 || p == 0 {
        return Err(Error::InvalidArgument(
            "n and gamma * n must be positive".into(),
        ));
    }
    let source = DesignSource::new(&spec, sim.n, p)?;
    let cfg = MonteCarloConfig {
        replicates: sim.replicates,
        master_seed: sim.seed,
        prior: Prior::GaussianBeta,
    };
    let points = conditional_risk_curve(&source, grid, model.sigma2, &cfg)?;
    let mut t = Table::new([
        "lambda",
        "mc_mean",
        "mc_se",
        "theory",
        "rel_err",
        "dropped_replicates",
    ]);
    for pt in points {
        let theory = asymptotic_risk(&model, pt.x).map_or(f64::NAN, |e| e.total);
        t.push(vec![
            pt.x.into(),
            pt.mean.into(),
            pt.se.into(),
            theory.into(),
            ((pt.mean - theory).abs() / theory).into(),
            pt.dropped.into(),
        ]);
    }
    Ok(t)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SolveM {
            model,
            lambda,
            output,
        } => emit(&solve_m_table(&model.build()?.0, lambda)?, &output),
        Command::RiskCurve {
            model,
            lambda_grid,
            output,
        } => {
            let grid = parse_grid(&lambda_grid)?;
            emit(&curve(&model.build()?.0, &grid, "lambda", false), &output)
        }
        Command::LambdaOpt { model, output } => {
            emit(&lambda_opt_table(&model.build()?.0)?, &output)
        }
        Command::PcrCurve {
            model,
            theta_grid,
            output,
        } => {
            let grid = parse_grid(&theta_grid)?;
            emit(&curve(&model.build()?.0, &grid, "theta", true), &output)
        }
        Command::WeightCompare {
            model,
            weightings,
            output,
        } => {
            let (m, spec, noise) = model.build()?;
            let rules = weightings
                .split(',')
                .map(|w| WeightRule::parse(w.trim()))
                .collect::<Result<Vec<_>>>()?;
            let label = noise.label();
            emit(
                &weighting_table(&[(label, spec.weighted, noise)], &rules, &[m.gamma])?,
                &output,
            )
        }
        Command::Simulate {
            model,
            lambda_grid,
            sim,
            output,
        } => emit(
            &simulate_table(&model, &parse_grid(&lambda_grid)?, &sim)?,
            &output,
        ),
        Command::Reproduce {
            key,
            replicates,
            n,
            seed,
            atoms,
            output,
        } => {
            if !REPRODUCE_KEYS.contains(&key.as_str()) {
                return Err(Error::UnknownRecipe(format!(
                    "{key} (known: {})",
                    REPRODUCE_KEYS.join(", ")
                )));
            }
            let opts = ReproduceOptions {
                mc: replicates.map(|r| McSettings {
                    n,
                    replicates: r,
                    seed,
                }),
                n_atoms: atoms,
            };
            emit(&reproduce(&key, &opts)?, &output)
        }
        Command::Run { scenario, output } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Error::Io(format!("{scenario}: {e}")))?;
            emit(&Scenario::from_json(&text)?.run()?, &output)
        }
        Command::Selftest => {
            let checks = ridgelab::selftest::run_all();
            let mut failed = 0;
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} ({})", c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Solver(format!("{failed} selftest check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
