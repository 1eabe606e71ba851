//! Warm-started sweeps over the risk-aversion weight.

use std::io;

use super::{fbs_solve, fbs_solve_from, lambda_tilde, RiskPerspective, SolveResult, SolverConfig};
use crate::error::{Error, Result};
use crate::scenario::RandomVector;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub outcome: Result<SolveResult>,
}

impl SweepRow {
    pub fn result(&self) -> Option<&SolveResult> {
        self.outcome.as_ref().ok()
    }
}

/// Solves once per `λ` (ascending, in `[0, 1)`), each solve starting from the
/// previous solution. Per-point failures are recorded and the sweep continues.
pub fn lambda_sweep(
    x: &RandomVector,
    template: &RiskPerspective,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    for &l in lambdas {
        lambda_tilde(l)?;
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("sweep lambdas must be sorted ascending".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut warm: Option<RandomVector> = None;
    for &lambda in lambdas {
        let outcome = template.with_lambda(lambda).and_then(|p| match &warm {
            Some(start) if lambda > 0.0 => fbs_solve_from(x, &p, config, start.clone()),
            _ => fbs_solve(x, &p, config),
        });
        if let Ok(r) = &outcome {
            warm = Some(r.z_star.clone());
        }
        rows.push(SweepRow { lambda, lambda_tilde: 2.0 * lambda / (1.0 - lambda), outcome });
    }
    Ok(rows)
}

/// Writes `(lambda, lambda_tilde, objective, M_lambda, risk)` rows; failed
/// points carry their error message in a trailing `error` column.
pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["lambda", "lambda_tilde", "objective", "M_lambda", "risk", "error"])?;
    for row in rows {
        let mut rec = vec![format!("{:e}", row.lambda), format!("{:e}", row.lambda_tilde)];
        match &row.outcome {
            Ok(r) => {
                rec.extend([format!("{:e}", r.objective), format!("{:e}", r.m_lambda), format!("{:e}", r.risk)]);
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend([String::new(), String::new(), String::new(), e.to_string()]);
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub final_result: SolveResult,
    pub trajectory: Vec<SweepRow>,
}

/// Approximates the penalized sublinear-expectation problem
/// `min ρ^U(X - Z)` (ties broken by smallest `E‖X - Z‖²`) by the sweep
/// `λ_n = n / (2 + n)`, `n = 1..=n_max`, for which `λ̃_n = n`.
pub fn sublinear_limit_solve(
    x: &RandomVector,
    template: &RiskPerspective,
    n_max: usize,
    config: &SolverConfig,
) -> Result<LimitSolution> {
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    template.composite().probe_lower_bound(x, template.partition())?;
    let lambdas: Vec<f64> = (1..=n_max).map(|n| n as f64 / (2.0 + n as f64)).collect();
    let trajectory = lambda_sweep(x, template, &lambdas, config)?;
    let final_result = match &trajectory.last().expect("n_max >= 1").outcome {
        Ok(r) => r.clone(),
        Err(e) => return Err(e.clone()),
    };
    Ok(LimitSolution { final_result, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featureset::FeatureSet;
    use crate::risk::CompositeRisk;
    use crate::scenario::{Measure, Partition, ScenarioSpace};
    use std::sync::Arc;

    fn setup() -> (RandomVector, RiskPerspective) {
        let s = Arc::new(ScenarioSpace::uniform(5));
        let x = RandomVector::scalar(s, vec![0.0, 0.1, 0.2, 0.4, 1.3]).unwrap();
        let p = RiskPerspective::new(Partition::trivial(5), CompositeRisk::quadratic(Measure::Q), FeatureSet::FullSpace, 0.0, Measure::Q)
            .unwrap();
        (x, p)
    }

    #[test]
    fn unsorted_rejected() {
        let (x, p) = setup();
        assert!(lambda_sweep(&x, &p, &[0.5, 0.1], &SolverConfig::default()).is_err());
        assert!(lambda_sweep(&x, &p, &[0.1, 1.0], &SolverConfig::default()).is_err());
    }

    #[test]
    fn single_step_limit_is_one_third() {
        let (x, p) = setup();
        let sol = sublinear_limit_solve(&x, &p, 1, &SolverConfig::default()).unwrap();
        assert_eq!(sol.trajectory.len(), 1);
        assert!((sol.trajectory[0].lambda - 1.0 / 3.0).abs() < 1e-15);
        assert!((sol.trajectory[0].lambda_tilde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_starts_classical_and_risk_decreases() {
        let (x, p) = setup();
        let rows = lambda_sweep(&x, &p, &[0.0, 0.2, 0.4, 0.6, 0.8, 0.95], &SolverConfig::default()).unwrap();
        let z0 = rows[0].result().unwrap().z_star.values()[0];
        assert!((z0 - 0.4).abs() < 1e-15);
        let risks: Vec<f64> = rows.iter().map(|r| r.result().unwrap().risk).collect();
        for w in risks.windows(2) {
            assert!(w[1] <= w[0] + 1e-7);
        }
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
    }
}
