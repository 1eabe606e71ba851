//! Batch front-end: a TOML run configuration plus a few command-line overrides.
//!
//! Every command writes `effective_config.toml` into the output directory. Fed
//! back through `--config`, that file reproduces the run byte for byte.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureset::FeatureSet;
use crate::risk::CompositeRisk;
use crate::scenario::{Measure, Partition, RandomVector, ScenarioSpace};
use crate::solver::{lambda_from_tilde, write_trace_csv, PerspectiveTemplate, SolverConfig, StepSchedule};
use crate::sparsity::{sparse_ce_demo, write_sparsity_csv, SparsityRow, DEFAULT_ZERO_TOL};
use crate::validate;
use crate::valuation::{table_report, write_figure_csv, write_report_csv, GbmParams, TableReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Value the call at a single risk-aversion weight.
    Price,
    /// Value the call over a list of weights and write the table and figure data.
    Sweep,
    /// Sparsity probabilities before and after `ℓ¹`-ball conditioning.
    SparseDemo,
    /// Run the oracle-equivalence and invariant self-checks.
    Validate,
}

#[derive(Debug, Parser)]
#[command(name = "rcond", version, about = "Risk-averse conditional expectations and valuation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `command`.
    #[arg(long, value_enum)]
    pub command: Option<Command>,
}

/// Run configuration. Keys carry their units; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub initial_price: f64,
    /// Real-world drift; defaults to `rate_per_year`.
    pub drift_per_year: Option<f64>,
    pub volatility_per_sqrt_year: f64,
    pub rate_per_year: f64,
    pub maturity_years: f64,
    pub strike: f64,
    pub n_paths: usize,

    /// Risk-aversion weights as `λ̃ = 2λ/(1-λ)`. Exclusive with `lambda`.
    pub lambda_tilde: Option<Vec<f64>>,
    /// Raw weights in `[0, 1)`.
    pub lambda: Option<Vec<f64>>,
    pub feature_set: FeatureSet,
    /// Measure under which the risk of the pricing error is evaluated.
    pub risk_base_measure: Measure,

    pub solver_max_iter: usize,
    pub solver_tol: f64,
    pub solver_alpha: f64,
    pub solver_gamma0: Option<f64>,
    /// Switches to a geometric step schedule with this ratio.
    pub solver_step_ratio: Option<f64>,

    pub sparse_dim: usize,
    pub sparse_scenarios: usize,
    pub sparse_radii: Vec<f64>,
    pub sparse_levels: Vec<usize>,

    pub validate_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GbmParams::reference();
        let s = SolverConfig::default();
        Self {
            command: None,
            seed: g.seed,
            out_dir: PathBuf::from("out"),
            initial_price: g.x0,
            drift_per_year: None,
            volatility_per_sqrt_year: g.sigma,
            rate_per_year: g.r,
            maturity_years: g.maturity,
            strike: g.strike,
            n_paths: g.n_paths,
            lambda_tilde: None,
            lambda: None,
            feature_set: FeatureSet::FullSpace,
            risk_base_measure: Measure::Q,
            solver_max_iter: s.max_iter,
            solver_tol: s.tol,
            solver_alpha: s.alpha,
            solver_gamma0: None,
            solver_step_ratio: None,
            sparse_dim: 6,
            sparse_scenarios: 400,
            sparse_radii: vec![0.5, 1.0, 2.0, 4.0],
            sparse_levels: vec![1, 2, 3],
            validate_instances: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies command-line overrides and fills defaults that depend on other keys.
    pub fn resolve(mut self, cli: &Cli) -> Result<Self> {
        if let Some(seed) = cli.seed {
            self.seed = seed;
        }
        if let Some(out) = &cli.out {
            self.out_dir = out.clone();
        }
        if let Some(c) = cli.command {
            self.command = Some(c);
        }
        self.drift_per_year.get_or_insert(self.rate_per_year);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_none() {
            return Err(Error::Config("no command given (set `command` or pass --command)".into()));
        }
        self.gbm().validate()?;
        self.solver().validate()?;
        self.feature_set.validate().map_err(|e| Error::Config(format!("feature_set: {e}")))?;
        if self.lambda.is_some() && self.lambda_tilde.is_some() {
            return Err(Error::Config("`lambda` and `lambda_tilde` are mutually exclusive".into()));
        }
        self.lambda_tildes()?;
        if self.sparse_dim < 2 || self.sparse_scenarios == 0 {
            return Err(Error::Config("sparse_dim must be at least 2 and sparse_scenarios positive".into()));
        }
        if let Some(&d) = self.sparse_levels.iter().find(|&&d| d >= self.sparse_dim) {
            return Err(Error::Config(format!("sparse level {d} must be below sparse_dim {}", self.sparse_dim)));
        }
        if let Some(r) = self.sparse_radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("sparse radius must be positive, got {r}")));
        }
        Ok(())
    }

    pub fn gbm(&self) -> GbmParams {
        GbmParams {
            x0: self.initial_price,
            mu: self.drift_per_year.unwrap_or(self.rate_per_year),
            sigma: self.volatility_per_sqrt_year,
            r: self.rate_per_year,
            maturity: self.maturity_years,
            strike: self.strike,
            n_paths: self.n_paths,
            seed: self.seed,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            gamma0: self.solver_gamma0,
            schedule: match self.solver_step_ratio {
                Some(ratio) => StepSchedule::Geometric { ratio },
                None => StepSchedule::Constant,
            },
            alpha: self.solver_alpha,
            max_iter: self.solver_max_iter,
            tol: self.solver_tol,
            ..SolverConfig::default()
        }
    }

    /// The configured weights as `λ̃` values, ascending. Defaults to `[0.1, 0.5, 1]`.
    pub fn lambda_tildes(&self) -> Result<Vec<f64>> {
        let values = match (&self.lambda_tilde, &self.lambda) {
            (Some(t), None) => {
                if let Some(bad) = t.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!("lambda_tilde must be finite and non-negative, got {bad}")));
                }
                t.clone()
            }
            (None, Some(l)) => l
                .iter()
                .map(|&l| crate::solver::lambda_tilde(l).map_err(|e| Error::Config(format!("lambda: {e}"))))
                .collect::<Result<_>>()?,
            (None, None) => vec![0.1, 0.5, 1.0],
            (Some(_), Some(_)) => return Err(Error::Config("`lambda` and `lambda_tilde` are mutually exclusive".into())),
        };
        if values.is_empty() {
            return Err(Error::Config("the weight list is empty".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("weights must be sorted ascending".into()));
        }
        Ok(values)
    }

    fn template(&self) -> PerspectiveTemplate {
        PerspectiveTemplate {
            composite: CompositeRisk::quadratic(self.risk_base_measure),
            phi: self.feature_set,
            conditioning_measure: Measure::Q,
        }
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Domain(format!("{}: {e}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| io_err(&path, e))
}

/// Parses arguments, runs the configured command and returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match run(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command. Returns `EXIT_FAILURE` (without an error) when the
/// command completed but some of its points or checks failed.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(cli)?;
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    create(&dir, "effective_config.toml")?
        .write_all(cfg.to_toml()?.as_bytes())
        .map_err(|e| io_err(&dir, e))?;
    let out = |e: io::Error| io_err(&dir, e);
    match cfg.command.expect("validated") {
        Command::Price => {
            let lts = cfg.lambda_tildes()?;
            if lts.len() != 1 {
                return Err(Error::Config(format!("price takes exactly one weight, got {}", lts.len())));
            }
            let report = table_report(&cfg.gbm(), &lts, &cfg.template(), &cfg.solver())?;
            if let Some((_, e)) = report.failures.first() {
                return Err(e.clone());
            }
            write_report_csv(&report.rows, create(&dir, "price.csv")?).map_err(|e| io_err(&dir, e))?;
            let row = &report.rows[0];
            writeln!(
                stdout,
                "lambda_tilde={} value_ra={} value_rn={} bsm={} mc_se={}",
                row.lambda_tilde, row.option_value_ra, row.option_value_rn, report.bsm_value, row.mc_std_error
            )
            .map_err(out)?;
            write_price_trace(&cfg, &lts, &dir)?;
            Ok(EXIT_OK)
        }
        Command::Sweep => {
            let report = table_report(&cfg.gbm(), &cfg.lambda_tildes()?, &cfg.template(), &cfg.solver())?;
            write_report_csv(&report.rows, create(&dir, "table.csv")?).map_err(|e| io_err(&dir, e))?;
            write_figure_csv(&report, create(&dir, "figure1.csv")?).map_err(|e| io_err(&dir, e))?;
            print_sweep(&report, stdout).map_err(out)?;
            Ok(if report.failures.is_empty() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::SparseDemo => {
            let rows = sparse_rows(&cfg)?;
            write_sparsity_csv(&rows, create(&dir, "sparsity.csv")?).map_err(|e| io_err(&dir, e))?;
            for r in &rows {
                writeln!(stdout, "sigma={} d={} before={} after={}", r.radius, r.d, r.before, r.after).map_err(out)?;
            }
            Ok(EXIT_OK)
        }
        Command::Validate => {
            let summary = validate::run_all(cfg.seed, cfg.validate_instances)?;
            let text = summary.render();
            create(&dir, "validation.txt")?.write_all(text.as_bytes()).map_err(out)?;
            stdout.write_all(text.as_bytes()).map_err(out)?;
            Ok(if summary.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn write_price_trace(cfg: &RunConfig, lts: &[f64], dir: &Path) -> Result<()> {
    let (_, x_t) = crate::valuation::simulate_gbm_terminal(&cfg.gbm(), crate::valuation::MeasureMode::Q)?;
    let payoff = crate::valuation::vanilla_payoff(&x_t, cfg.strike, cfg.rate_per_year, cfg.maturity_years)?;
    let p = cfg.template().instantiate(Partition::trivial(payoff.n_scenarios()), lambda_from_tilde(lts[0])?)?;
    let r = crate::solver::fbs_solve(&payoff, &p, &cfg.solver())?;
    write_trace_csv(&r.trace, create(dir, "trace.csv")?).map_err(|e| io_err(dir, e))
}

fn print_sweep(report: &TableReport, w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "bsm_value={}", report.bsm_value)?;
    for r in &report.rows {
        writeln!(
            w,
            "lambda_tilde={} value_ra={} ratio_value={} ratio_est={} ratio_misprice={}",
            r.lambda_tilde, r.option_value_ra, r.ratio_value, r.ratio_estimator, r.ratio_mispricing
        )?;
    }
    for (lt, e) in &report.failures {
        writeln!(w, "lambda_tilde={lt} failed: {e}")?;
    }
    Ok(())
}

/// Draws a Gaussian ensemble in `R^sparse_dim`, measurable with respect to a
/// partition into cells of two scenarios, and conditions it on each radius.
fn sparse_rows(cfg: &RunConfig) -> Result<Vec<SparsityRow>> {
    let n = cfg.sparse_scenarios;
    let dim = cfg.sparse_dim;
    let labels: Vec<usize> = (0..n).map(|i| i / 2).collect();
    let partition = Partition::new(labels)?;
    let space = Arc::new(ScenarioSpace::uniform(n).with_partition(partition.clone())?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell_rows: Vec<Vec<f64>> = (0..partition.n_cells())
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let values: Vec<f64> = (0..n).flat_map(|i| cell_rows[partition.label(i)].clone()).collect();
    let x = RandomVector::new(space, dim, values)?;
    let mut rows = Vec::new();
    for &radius in &cfg.sparse_radii {
        for &d in &cfg.sparse_levels {
            let demo = sparse_ce_demo(&x, radius, &partition, Measure::P, d, DEFAULT_ZERO_TOL)?;
            rows.push(SparsityRow { radius, d, before: demo.before, after: demo.after });
        }
    }
    Ok(rows)
}
