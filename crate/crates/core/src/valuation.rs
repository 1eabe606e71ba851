//! Black-Scholes scenario generation and risk-averse valuation of vanilla calls.

use std::io;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scenario::{cond_expectation, mean, Measure, Partition, RandomVector, ScenarioSpace};
use crate::solver::{
    fbs_solve, fbs_solve_from, lambda_from_tilde, PerspectiveTemplate, RiskPerspective, SolveResult, SolverConfig,
};

/// Geometric Brownian motion and call contract parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub x0: f64,
    /// Drift under the objective measure, per year.
    pub mu: f64,
    /// Volatility per square-root year.
    pub sigma: f64,
    pub r: f64,
    /// Maturity in years.
    pub maturity: f64,
    pub strike: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl GbmParams {
    /// `T = 10`, `r = 1.75%`, `K = 0.2`, `X₀ = 1`, `σ = 0.1`, `μ = r`, 10⁴ paths.
    pub fn reference() -> Self {
        Self { x0: 1.0, mu: 0.0175, sigma: 0.1, r: 0.0175, maturity: 10.0, strike: 0.2, n_paths: 10_000, seed: 7 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("x0", self.x0), ("sigma", self.sigma), ("maturity", self.maturity), ("strike", self.strike)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("rate must be non-negative, got {}", self.r)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("drift must be finite".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        Ok(())
    }
}

/// Measure under which paths are drawn with equal weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureMode {
    P,
    Q,
}

/// Terminal prices `X_T = X₀ exp((drift - σ²/2) T + σ W_T)`.
///
/// Paths are equally weighted under the sampling measure; the other measure is
/// attached as the exact terminal likelihood-ratio reweighting of the same draws.
pub fn simulate_gbm_terminal(params: &GbmParams, mode: MeasureMode) -> Result<(Arc<ScenarioSpace>, RandomVector)> {
    params.validate()?;
    let n = params.n_paths;
    let t = params.maturity;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w: Vec<f64> = (0..n).map(|_| t.sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let drift = match mode {
        MeasureMode::P => params.mu,
        MeasureMode::Q => params.r,
    };
    let values = w
        .iter()
        .map(|wi| params.x0 * ((drift - 0.5 * params.sigma * params.sigma) * t + params.sigma * wi).exp())
        .collect();
    let uniform = vec![1.0 / n as f64; n];
    // market price of risk; dQ/dP = exp(-θ W^P_T - θ² T / 2)
    let theta = (params.mu - params.r) / params.sigma;
    let other = if theta == 0.0 {
        uniform.clone()
    } else {
        let sign = match mode {
            MeasureMode::P => -1.0,
            MeasureMode::Q => 1.0,
        };
        let logs: Vec<f64> = w.iter().map(|wi| sign * theta * wi - 0.5 * theta * theta * t).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| (l - top).exp()).collect()
    };
    let (wp, wq) = match mode {
        MeasureMode::P => (uniform, other),
        MeasureMode::Q => (other, uniform),
    };
    let space = Arc::new(ScenarioSpace::new(wp, Some(wq), Partition::trivial(n))?);
    let x = RandomVector::scalar(space.clone(), values)?;
    Ok((space, x))
}

/// Discounted call payoff `e^{-rT} max(X_T - K, 0)`.
pub fn vanilla_payoff(x_t: &RandomVector, strike: f64, r: f64, maturity: f64) -> Result<RandomVector> {
    x_t.ensure_scalar()?;
    let discount = (-r * maturity).exp();
    Ok(x_t.map(|x| discount * (x - strike).max(0.0)))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes-Merton European call value.
pub fn bsm_closed_form(params: &GbmParams) -> f64 {
    let GbmParams { x0, sigma, r, maturity: t, strike: k, .. } = *params;
    let vol = sigma * t.sqrt();
    let d1 = ((x0 / k).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    x0 * normal_cdf(d1) - k * (-r * t).exp() * normal_cdf(d2)
}

/// `E_Q[payoff | G]`.
pub fn risk_neutral_value(payoff: &RandomVector, partition: &Partition) -> Result<RandomVector> {
    cond_expectation(payoff, partition, Measure::Q)
}

/// Risk-averse value: the conditioning of the payoff onto the perspective's information.
pub fn risk_averse_value(payoff: &RandomVector, perspective: &RiskPerspective, config: &SolverConfig) -> Result<SolveResult> {
    fbs_solve(payoff, perspective, config)
}

/// `ρ(U(payoff - Z))`.
pub fn mispricing_risk(payoff: &RandomVector, z: &RandomVector, perspective: &RiskPerspective) -> Result<f64> {
    payoff.ensure_compatible(z)?;
    perspective.composite().evaluate(&(payoff - z))
}

/// Risk of the estimator itself, `ρ(Z)` under the base measure.
pub fn estimator_risk(z: &RandomVector, perspective: &RiskPerspective) -> Result<f64> {
    perspective.composite().risk.evaluate(z, perspective.base_measure())
}

/// Monte-Carlo standard error of `E_mu[payoff]` for a weighted sample.
pub fn mc_std_error(payoff: &RandomVector, mu: Measure) -> Result<f64> {
    let m = mean(payoff, mu)?;
    let w = payoff.space().weights(mu)?;
    let var: f64 = payoff.values().iter().zip(w).map(|(x, wi)| wi * wi * (x - m).powi(2)).sum();
    // unbiased correction for equal weights
    let n = payoff.n_scenarios() as f64;
    Ok((var * n / (n - 1.0)).sqrt())
}

/// One row of the valuation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValuationReport {
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub option_value_ra: f64,
    pub option_value_rn: f64,
    pub ratio_value: f64,
    pub estimator_risk_ra: f64,
    pub estimator_risk_rn: f64,
    pub ratio_estimator: f64,
    pub mispricing_risk_ra: f64,
    pub mispricing_risk_rn: f64,
    pub ratio_mispricing: f64,
    #[serde(rename = "M_lambda")]
    pub m_lambda: f64,
    pub mc_std_error: f64,
}

impl ValuationReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "lambda",
        "lambda_tilde",
        "value_ra",
        "value_rn",
        "ratio_value",
        "risk_est_ra",
        "risk_est_rn",
        "ratio_est",
        "misprice_ra",
        "misprice_rn",
        "ratio_misprice",
        "M_lambda",
        "mc_se",
    ];

    fn csv_record(&self) -> Vec<String> {
        [
            self.lambda,
            self.lambda_tilde,
            self.option_value_ra,
            self.option_value_rn,
            self.ratio_value,
            self.estimator_risk_ra,
            self.estimator_risk_rn,
            self.ratio_estimator,
            self.mispricing_risk_ra,
            self.mispricing_risk_rn,
            self.ratio_mispricing,
            self.m_lambda,
            self.mc_std_error,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect()
    }
}

/// Reports for a λ̃ sweep on one simulated ensemble, plus any per-point failures.
#[derive(Debug, Clone)]
pub struct TableReport {
    pub bsm_value: f64,
    pub rows: Vec<ValuationReport>,
    pub failures: Vec<(f64, Error)>,
}

impl TableReport {
    /// `(λ̃, risk-averse value)` pairs.
    pub fn figure(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.lambda_tilde, r.option_value_ra)).collect()
    }
}

/// Simulates the ensemble under `Q`, prices the call risk-neutrally and
/// risk-aversely at every `λ̃` (ascending, warm-started) and assembles the
/// table rows.
pub fn table_report(
    params: &GbmParams,
    lambda_tildes: &[f64],
    template: &PerspectiveTemplate,
    config: &SolverConfig,
) -> Result<TableReport> {
    if lambda_tildes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("lambda_tilde values must be sorted ascending".into()));
    }
    let lambdas = lambda_tildes.iter().map(|&t| lambda_from_tilde(t)).collect::<Result<Vec<_>>>()?;
    let (_, x_t) = simulate_gbm_terminal(params, MeasureMode::Q)?;
    let payoff = vanilla_payoff(&x_t, params.strike, params.r, params.maturity)?;
    let trivial = Partition::trivial(payoff.n_scenarios());
    let base = template.instantiate(trivial.clone(), 0.0)?;
    let rn = risk_neutral_value(&payoff, &trivial)?;
    let value_rn = rn.values()[0];
    let est_rn = estimator_risk(&rn, &base)?;
    let mis_rn = mispricing_risk(&payoff, &rn, &base)?;
    let se = mc_std_error(&payoff, Measure::Q)?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut warm: Option<RandomVector> = None;
    for (&lambda, &lt) in lambdas.iter().zip(lambda_tildes) {
        let solved = base.with_lambda(lambda).and_then(|p| {
            let r = match &warm {
                Some(start) => fbs_solve_from(&payoff, &p, config, start.clone()),
                None => risk_averse_value(&payoff, &p, config),
            }?;
            Ok((p, r))
        });
        let (p, r) = match solved {
            Ok(v) => v,
            Err(e) => {
                failures.push((lt, e));
                continue;
            }
        };
        let value_ra = r.z_star.values()[0];
        let est_ra = estimator_risk(&r.z_star, &p)?;
        let mis_ra = mispricing_risk(&payoff, &r.z_star, &p)?;
        rows.push(ValuationReport {
            lambda,
            lambda_tilde: lt,
            option_value_ra: value_ra,
            option_value_rn: value_rn,
            ratio_value: value_ra / value_rn,
            estimator_risk_ra: est_ra,
            estimator_risk_rn: est_rn,
            ratio_estimator: est_ra / est_rn,
            mispricing_risk_ra: mis_ra,
            mispricing_risk_rn: mis_rn,
            ratio_mispricing: mis_ra / mis_rn,
            m_lambda: r.m_lambda,
            mc_std_error: se,
        });
        warm = Some(r.z_star);
    }
    Ok(TableReport { bsm_value: bsm_closed_form(params), rows, failures })
}

pub fn write_report_csv<W: io::Write>(rows: &[ValuationReport], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(ValuationReport::CSV_HEADER)?;
    for row in rows {
        wtr.write_record(row.csv_record())?;
    }
    wtr.flush()?;
    Ok(())
}

/// `(lambda_tilde, value_ra)` plot data.
pub fn write_figure_csv<W: io::Write>(report: &TableReport, out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["lambda_tilde", "value_ra"])?;
    for (lt, v) in report.figure() {
        wtr.write_record([lt.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
