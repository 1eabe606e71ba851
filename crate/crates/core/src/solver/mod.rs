//! Risk-averse conditioning by proximal forward-backward splitting.
//!
//! For a risk perspective `(G, ρ, U, Φ, λ)` the conditioned estimate of `X`
//! minimizes
//!
//! ```text
//! (1 - λ) E‖X - Z‖² + λ ρ(U(X - Z))      over Z ∈ L²(G) ∩ Φ.
//! ```
//!
//! The smooth part is handled by an explicit gradient step and the
//! constraint by the `Φ`-relative conditional expectation, which is the
//! proximal map of the indicator of `L²(G) ∩ Φ`.

mod oracle;
mod sweep;

pub use oracle::{brute_force_oracle, golden_section, GridSpec};
pub use sweep::{lambda_sweep, sublinear_limit_solve, write_sweep_csv, LimitSolution, SweepRow};

use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureset::{phi_relative_cond_exp, FeatureSet};
use crate::risk::CompositeRisk;
use crate::scenario::{cond_expectation, l2_distance, l2_norm, Measure, Partition, RandomVector, ScenarioSpace};

/// `λ̃ = 2λ / (1 - λ)`.
pub fn lambda_tilde(lambda: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    Ok(2.0 * lambda / (1.0 - lambda))
}

/// Inverse of [`lambda_tilde`]: `λ = λ̃ / (λ̃ + 2)`.
pub fn lambda_from_tilde(lambda_tilde: f64) -> Result<f64> {
    if !(lambda_tilde >= 0.0 && lambda_tilde.is_finite()) {
        return Err(Error::Domain(format!("lambda_tilde must be finite and >= 0, got {lambda_tilde}")));
    }
    Ok(lambda_tilde / (lambda_tilde + 2.0))
}

/// The quintuple defining a conditioning problem, with the measures used
/// for the risk term (`composite.base_measure`) and for the squared error
/// and projections (`conditioning_measure`).
#[derive(Debug, Clone)]
pub struct RiskPerspective {
    partition: Partition,
    composite: CompositeRisk,
    phi: FeatureSet,
    lambda: f64,
    conditioning_measure: Measure,
}

impl RiskPerspective {
    pub fn new(
        partition: Partition,
        composite: CompositeRisk,
        phi: FeatureSet,
        lambda: f64,
        conditioning_measure: Measure,
    ) -> Result<Self> {
        lambda_tilde(lambda)?;
        phi.validate()?;
        // Feasibility probe: the intersection must admit a point.
        let probe_space = std::sync::Arc::new(ScenarioSpace::uniform(partition.len()).with_partition(partition.clone())?);
        let probe = RandomVector::constant(probe_space, &[1.0]);
        let z = phi_relative_cond_exp(&probe, &phi, &partition, Measure::P)
            .map_err(|e| Error::Config(format!("L²(G) ∩ Φ looks empty: {e}")))?;
        if phi.violation(&z, Measure::P)? > 1e-6 {
            return Err(Error::Config("L²(G) ∩ Φ looks empty".into()));
        }
        Ok(Self { partition, composite, phi, lambda, conditioning_measure })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        lambda_tilde(lambda)?;
        Ok(Self { lambda, ..self.clone() })
    }

    pub fn with_lambda_tilde(&self, lambda_tilde: f64) -> Result<Self> {
        self.with_lambda(lambda_from_tilde(lambda_tilde)?)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn composite(&self) -> &CompositeRisk {
        &self.composite
    }

    pub fn phi(&self) -> &FeatureSet {
        &self.phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_tilde(&self) -> f64 {
        2.0 * self.lambda / (1.0 - self.lambda)
    }

    pub fn base_measure(&self) -> Measure {
        self.composite.base_measure
    }

    pub fn conditioning_measure(&self) -> Measure {
        self.conditioning_measure
    }

    /// `Φ`-relative conditional expectation under the conditioning measure.
    pub fn project(&self, v: &RandomVector) -> Result<RandomVector> {
        phi_relative_cond_exp(v, &self.phi, &self.partition, self.conditioning_measure)
    }

    /// Implied constraint level `((1 - λ) / 2λ) ρ^U(X - Z)`; infinite at `λ = 0`.
    pub fn m_lambda(&self, risk: f64) -> f64 {
        if self.lambda == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - self.lambda) / (2.0 * self.lambda) * risk
        }
    }
}

/// A risk perspective without its information partition and weight, for
/// instantiating on ensembles generated later.
#[derive(Debug, Clone)]
pub struct PerspectiveTemplate {
    pub composite: CompositeRisk,
    pub phi: FeatureSet,
    pub conditioning_measure: Measure,
}

impl PerspectiveTemplate {
    /// `ρ₂` with the quadratic loss, no feature constraint, everything under `Q`.
    pub fn quadratic_q() -> Self {
        Self { composite: CompositeRisk::quadratic(Measure::Q), phi: FeatureSet::FullSpace, conditioning_measure: Measure::Q }
    }

    pub fn instantiate(&self, partition: Partition, lambda: f64) -> Result<RiskPerspective> {
        RiskPerspective::new(partition, self.composite.clone(), self.phi, lambda, self.conditioning_measure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `γ_n = γ_0`, with step halving whenever a step would raise the objective.
    Constant,
    /// `γ_n = γ_0 · ratio^n`, applied as given.
    Geometric { ratio: f64 },
}

/// Deterministic summable perturbations `(A_n, B_n)` of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorSequences {
    Zero,
    /// `A_n = B_n = scale · decay^n` on every coordinate.
    Decaying { scale: f64, decay: f64 },
}

impl ErrorSequences {
    fn at(&self, n: usize) -> f64 {
        match *self {
            ErrorSequences::Zero => 0.0,
            ErrorSequences::Decaying { scale, decay } => scale * decay.powi(n.min(i32::MAX as usize) as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Base step; `None` uses the estimated `β`.
    pub gamma0: Option<f64>,
    pub schedule: StepSchedule,
    /// Relaxation in `(0, 1]`.
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub errors: ErrorSequences,
    /// Seed for the Lipschitz sampling probe.
    pub probe_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma0: None,
            schedule: StepSchedule::Constant,
            alpha: 1.0,
            max_iter: 10_000,
            tol: 1e-10,
            errors: ErrorSequences::Zero,
            probe_seed: 0x5eed,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("relaxation alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma0 must be positive, got {g}")));
            }
        }
        if let StepSchedule::Geometric { ratio } = self.schedule {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::Config(format!("geometric ratio must be positive, got {ratio}")));
            }
        }
        if let ErrorSequences::Decaying { scale, decay } = self.errors {
            if !(scale.is_finite() && (0.0..1.0).contains(&decay)) {
                return Err(Error::Config("error sequences must be square-summable (decay in [0, 1))".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
}

pub fn write_trace_csv<W: io::Write>(trace: &[TraceRow], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["iteration", "objective", "residual"])?;
    for row in trace {
        wtr.write_record([row.iteration.to_string(), format!("{:e}", row.objective), format!("{:e}", row.residual)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z_star: RandomVector,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    /// `ρ^U(X - Z*)`.
    pub risk: f64,
    pub m_lambda: f64,
    /// Constant step actually used (after any halving).
    pub step: f64,
    pub trace: Vec<TraceRow>,
}

/// Objective value with feasibility flags for the candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub measurable: bool,
    pub in_feature_set: bool,
}

const FEASIBILITY_TOL: f64 = 1e-8;

/// `(1 - λ) E‖X - Z‖² + λ ρ^U(X - Z)`.
pub fn objective(x: &RandomVector, z: &RandomVector, perspective: &RiskPerspective) -> Result<ObjectiveValue> {
    let value = objective_value(x, z, perspective)?;
    Ok(ObjectiveValue {
        value,
        measurable: z.is_measurable(perspective.partition(), FEASIBILITY_TOL),
        in_feature_set: perspective.phi().contains(z, perspective.conditioning_measure(), FEASIBILITY_TOL)?,
    })
}

pub fn objective_value(x: &RandomVector, z: &RandomVector, perspective: &RiskPerspective) -> Result<f64> {
    x.ensure_compatible(z)?;
    let err = x - z;
    let sq = l2_norm(&err, perspective.conditioning_measure())?.powi(2);
    let lambda = perspective.lambda();
    if lambda == 0.0 {
        return Ok(sq);
    }
    Ok((1.0 - lambda) * sq + lambda * perspective.composite().evaluate(&err)?)
}

/// Gradient of the smooth objective in `L²(conditioning measure)`.
fn objective_gradient(x: &RandomVector, z: &RandomVector, perspective: &RiskPerspective) -> Result<RandomVector> {
    let err = x - z;
    let lambda = perspective.lambda();
    let mut g = &err * (-2.0 * (1.0 - lambda));
    if lambda > 0.0 {
        let mut risk_grad = perspective.composite().gradient(&err)?;
        let (base, cond) = (perspective.base_measure(), perspective.conditioning_measure());
        if base != cond {
            let density = RandomVector::scalar(x.space().clone(), x.space().density(base, cond)?)?;
            risk_grad = risk_grad.scale_rows(&density);
        }
        g = g.axpy(-lambda, &risk_grad);
    }
    Ok(g)
}

/// Largest sampled difference quotient `‖P_G(∇f(a) - ∇f(b))‖ / ‖a - b‖`
/// over random `G`-measurable pairs near `center`.
pub fn estimate_lipschitz(
    gradient: &dyn Fn(&RandomVector) -> Result<RandomVector>,
    center: &RandomVector,
    partition: &Partition,
    mu: Measure,
    scale: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_direction = |rng: &mut ChaCha8Rng| -> Result<RandomVector> {
        let raw: Vec<f64> = (0..center.values().len()).map(|_| StandardNormal.sample(rng)).collect();
        let h = cond_expectation(&RandomVector::new(center.space().clone(), center.dim(), raw)?, partition, mu)?;
        let n = l2_norm(&h, mu)?;
        Ok(if n > 0.0 { &h * (scale / n) } else { h })
    };
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let a = center + &random_direction(&mut rng)?;
        let b = center + &random_direction(&mut rng)?;
        let dist = l2_distance(&a, &b, mu)?;
        if dist == 0.0 {
            continue;
        }
        let diff = &gradient(&a)? - &gradient(&b)?;
        let projected = cond_expectation(&diff, partition, mu)?;
        best = best.max(l2_norm(&projected, mu)? / dist);
    }
    Ok(best)
}

/// Result of the generic forward-backward engine.
#[derive(Debug, Clone)]
pub(crate) struct EngineRun {
    pub point: RandomVector,
    pub iterations: usize,
    pub residual: f64,
    pub value: f64,
    pub step: f64,
    pub trace: Vec<TraceRow>,
}

/// `min f(Z) + ι_C(Z)` for smooth `f` and a convex set `C` given by its projection.
pub(crate) struct ProximalProblem<'a> {
    pub value: &'a dyn Fn(&RandomVector) -> Result<f64>,
    pub gradient: &'a dyn Fn(&RandomVector) -> Result<RandomVector>,
    pub project: &'a dyn Fn(&RandomVector) -> Result<RandomVector>,
    pub measure: Measure,
}

const MAX_HALVINGS: usize = 60;

impl ProximalProblem<'_> {
    /// Runs the iteration from `start` (assumed feasible). With no `gamma0`
    /// the step is `1 / L` for a sampled local Lipschitz estimate `L`.
    pub fn solve(&self, start: RandomVector, config: &SolverConfig) -> Result<EngineRun> {
        config.validate()?;
        let step0 = match config.gamma0 {
            Some(g) => g,
            None => {
                let lip = self.lipschitz(&start, config.probe_seed)?;
                if lip > 0.0 {
                    1.0 / lip
                } else {
                    1.0
                }
            }
        };
        self.iterate(start, step0, config)
    }

    fn lipschitz(&self, start: &RandomVector, seed: u64) -> Result<f64> {
        // sample along directions that survive the projection's linear part
        let partition = Partition::discrete(start.n_scenarios());
        let scale = 1e-2 * (1.0 + l2_norm(start, self.measure)?);
        estimate_lipschitz(self.gradient, start, &partition, self.measure, scale, 100, seed)
    }

    pub fn iterate(&self, start: RandomVector, step0: f64, config: &SolverConfig) -> Result<EngineRun> {
        let mut z = start;
        let mut value = (self.value)(&z)?;
        let mut step = step0;
        let mut trace = vec![TraceRow { iteration: 0, objective: value, residual: f64::NAN, step }];
        let mut residual = f64::INFINITY;
        for n in 0..config.max_iter {
            let gamma = match config.schedule {
                StepSchedule::Constant => step,
                StepSchedule::Geometric { ratio } => step0 * ratio.powi(n.min(i32::MAX as usize) as i32),
            };
            let (a_n, b_n) = (config.errors.at(n), config.errors.at(n));
            let mut g = (self.gradient)(&z)?;
            if b_n != 0.0 {
                g = g.map(|v| v + b_n);
            }
            let (next, next_value, used) = match config.schedule {
                StepSchedule::Constant => {
                    let mut gamma = gamma;
                    let mut halvings = 0;
                    loop {
                        let cand = self.relaxed_step(&z, &g, gamma, a_n, config.alpha)?;
                        let cand_value = (self.value)(&cand)?;
                        if cand_value <= value + 1e-13 * (1.0 + value.abs()) || halvings == MAX_HALVINGS {
                            break (cand, cand_value, gamma);
                        }
                        gamma *= 0.5;
                        halvings += 1;
                    }
                }
                StepSchedule::Geometric { .. } => {
                    let cand = self.relaxed_step(&z, &g, gamma, a_n, config.alpha)?;
                    let v = (self.value)(&cand)?;
                    (cand, v, gamma)
                }
            };
            if matches!(config.schedule, StepSchedule::Constant) {
                step = used;
            }
            residual = l2_distance(&next, &z, self.measure)?;
            z = next;
            value = next_value;
            trace.push(TraceRow { iteration: n + 1, objective: value, residual, step: used });
            if !value.is_finite() {
                return Err(Error::NonConvergence { iterations: n + 1, residual });
            }
            if residual < config.tol {
                return Ok(EngineRun { point: z, iterations: n + 1, residual, value, step, trace });
            }
        }
        Err(Error::NonConvergence { iterations: config.max_iter, residual })
    }

    fn relaxed_step(&self, z: &RandomVector, g: &RandomVector, gamma: f64, a_n: f64, alpha: f64) -> Result<RandomVector> {
        let mut p = (self.project)(&z.axpy(-gamma, g))?;
        if a_n != 0.0 {
            p = p.map(|v| v + a_n);
        }
        Ok(z.axpy(alpha, &(&p - z)))
    }
}

/// Solves the conditioning problem starting from the `Φ`-relative
/// conditional expectation of `X`.
pub fn fbs_solve(x: &RandomVector, perspective: &RiskPerspective, config: &SolverConfig) -> Result<SolveResult> {
    let z0 = perspective.project(x)?;
    if perspective.lambda() == 0.0 {
        return finish(x, perspective, z0, 1, 0.0, f64::NAN, Vec::new());
    }
    fbs_solve_from(x, perspective, config, z0)
}

/// As [`fbs_solve`] with an explicit (feasible) starting point.
pub fn fbs_solve_from(
    x: &RandomVector,
    perspective: &RiskPerspective,
    config: &SolverConfig,
    start: RandomVector,
) -> Result<SolveResult> {
    x.ensure_compatible(&start)?;
    if perspective.partition().len() != x.n_scenarios() {
        return Err(Error::Shape("perspective partition does not match the scenario count".into()));
    }
    if perspective.lambda() == 0.0 {
        let z0 = perspective.project(x)?;
        return finish(x, perspective, z0, 1, 0.0, f64::NAN, Vec::new());
    }
    config.validate()?;
    let value = |z: &RandomVector| objective_value(x, z, perspective);
    let gradient = |z: &RandomVector| objective_gradient(x, z, perspective);
    let project = |v: &RandomVector| perspective.project(v);
    let problem = ProximalProblem {
        value: &value,
        gradient: &gradient,
        project: &project,
        measure: perspective.conditioning_measure(),
    };
    let mu = perspective.conditioning_measure();
    let scale = 1e-2 * (1.0 + l2_norm(&(x - &start), mu)?);
    let lip = estimate_lipschitz(&gradient, &start, perspective.partition(), mu, scale, 100, config.probe_seed)?;
    // β: inverse of the sampled Lipschitz constant of the smooth part.
    let beta = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let step0 = match (config.gamma0, config.schedule) {
        (Some(g), StepSchedule::Constant) if g >= 2.0 * beta => {
            return Err(Error::Config(format!(
                "gamma0 = {g} violates the step bound 2β = {:.6e}",
                2.0 * beta
            )))
        }
        (Some(g), _) => g,
        (None, _) => beta,
    };
    let run = problem.iterate(start, step0, config)?;
    finish(x, perspective, run.point, run.iterations, run.residual, run.step, run.trace)
}

fn finish(
    x: &RandomVector,
    perspective: &RiskPerspective,
    z: RandomVector,
    iterations: usize,
    residual: f64,
    step: f64,
    trace: Vec<TraceRow>,
) -> Result<SolveResult> {
    let risk = perspective.composite().evaluate(&(x - &z))?;
    let objective = objective_value(x, &z, perspective)?;
    Ok(SolveResult {
        m_lambda: perspective.m_lambda(risk),
        z_star: z,
        iterations,
        residual,
        objective,
        risk,
        step,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{expectation, ScenarioSpace};
    use rand::Rng;
    use std::sync::Arc;

    fn perspective(n: usize, lambda: f64) -> RiskPerspective {
        RiskPerspective::new(
            Partition::trivial(n),
            CompositeRisk::quadratic(Measure::Q),
            FeatureSet::FullSpace,
            lambda,
            Measure::Q,
        )
        .unwrap()
    }

    #[test]
    fn reparameterization() {
        assert_eq!(lambda_tilde(0.0).unwrap(), 0.0);
        assert_eq!(lambda_tilde(0.5).unwrap(), 2.0);
        for n in 1..50 {
            let l = n as f64 / (2.0 + n as f64);
            assert!((lambda_tilde(l).unwrap() - n as f64).abs() < 1e-12);
            assert!((lambda_from_tilde(lambda_tilde(l).unwrap()).unwrap() - l).abs() < 1e-14);
        }
        assert!(lambda_tilde(1.0).is_err());
        assert!(lambda_tilde(-0.1).is_err());
        assert!(lambda_from_tilde(-1.0).is_err());
    }

    #[test]
    fn lambda_outside_unit_interval_rejected() {
        let r = RiskPerspective::new(
            Partition::trivial(2),
            CompositeRisk::quadratic(Measure::Q),
            FeatureSet::FullSpace,
            1.0,
            Measure::Q,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn objective_at_x_is_lambda_times_risk_of_zero() {
        let s = Arc::new(ScenarioSpace::uniform(3).with_partition(Partition::discrete(3)).unwrap());
        let x = RandomVector::scalar(s, vec![0.3, -0.1, 0.7]).unwrap();
        let p = RiskPerspective::new(
            Partition::discrete(3),
            CompositeRisk::quadratic(Measure::Q),
            FeatureSet::FullSpace,
            0.4,
            Measure::Q,
        )
        .unwrap();
        let o = objective(&x, &x, &p).unwrap();
        assert!((o.value - 0.4 * -0.5).abs() < 1e-15);
        assert!(o.measurable && o.in_feature_set);
    }

    #[test]
    fn classical_case_returns_mean() {
        let s = Arc::new(ScenarioSpace::uniform(4));
        let x = RandomVector::scalar(s, vec![1.0, 2.0, 4.0, 9.0]).unwrap();
        let r = fbs_solve(&x, &perspective(4, 0.0), &SolverConfig::default()).unwrap();
        assert!(r.iterations <= 2);
        assert!(r.z_star.values().iter().all(|&v| v == 4.0));
        assert!(r.m_lambda.is_infinite());
    }

    #[test]
    fn trivial_partition_matches_closed_form() {
        // For constant Z = c the objective is a quadratic in c with minimizer
        // c = m + 2λ m3 / (1 - λ + λ(4 s2 + 1)), m3 and s2 the central moments.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = Arc::new(ScenarioSpace::uniform(64));
        let x = RandomVector::scalar(s, (0..64).map(|_| rng.random_range(0.0f64..1.0).powi(3)).collect()).unwrap();
        let lambda = 0.5;
        let r = fbs_solve(&x, &perspective(64, lambda), &SolverConfig::default()).unwrap();
        let m = expectation(&x, Measure::Q).unwrap()[0];
        let s2 = x.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 64.0;
        let m3 = x.values().iter().map(|v| (v - m).powi(3)).sum::<f64>() / 64.0;
        let c = m + 2.0 * lambda * m3 / (1.0 - lambda + lambda * (4.0 * s2 + 1.0));
        assert!((r.z_star.values()[0] - c).abs() < 1e-8, "{} vs {c}", r.z_star.values()[0]);
        assert!((2.0 * lambda * r.m_lambda / (1.0 - lambda) - r.risk).abs() < 1e-15);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Arc::new(ScenarioSpace::uniform(30).with_partition(Partition::new((0..30).map(|i| i % 3).collect()).unwrap()).unwrap());
        let x = RandomVector::new(s, 2, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = RiskPerspective::new(
            x.space().partition().clone(),
            CompositeRisk::quadratic(Measure::Q),
            FeatureSet::variance_ball(0.3).unwrap(),
            0.7,
            Measure::Q,
        )
        .unwrap();
        let r = fbs_solve(&x, &p, &SolverConfig::default()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
        let o = objective(&x, &r.z_star, &p).unwrap();
        assert!(o.measurable && o.in_feature_set);
    }

    #[test]
    fn oversized_step_rejected() {
        let s = Arc::new(ScenarioSpace::uniform(8));
        let x = RandomVector::scalar(s, (0..8).map(|i| i as f64 / 8.0).collect()).unwrap();
        let cfg = SolverConfig { gamma0: Some(1e6), ..Default::default() };
        assert!(matches!(fbs_solve(&x, &perspective(8, 0.5), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn iteration_cap_reported() {
        let s = Arc::new(ScenarioSpace::uniform(8));
        let x = RandomVector::scalar(s, (0..8).map(|i| (i as f64 / 8.0).powi(2)).collect()).unwrap();
        let cfg = SolverConfig { max_iter: 1, tol: 1e-300, ..Default::default() };
        assert!(matches!(
            fbs_solve(&x, &perspective(8, 0.5), &cfg),
            Err(Error::NonConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn decaying_errors_still_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Arc::new(ScenarioSpace::uniform(20));
        let x = RandomVector::scalar(s, (0..20).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let p = perspective(20, 0.3);
        let clean = fbs_solve(&x, &p, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig { errors: ErrorSequences::Decaying { scale: 1e-3, decay: 0.5 }, ..Default::default() };
        let noisy = fbs_solve(&x, &p, &cfg).unwrap();
        assert!((clean.objective - noisy.objective).abs() < 1e-9);
    }

    #[test]
    fn geometric_schedule_runs() {
        let s = Arc::new(ScenarioSpace::uniform(10));
        let x = RandomVector::scalar(s, (0..10).map(|i| (i as f64 / 10.0).sqrt()).collect()).unwrap();
        let p = perspective(10, 0.3);
        let cfg = SolverConfig { schedule: StepSchedule::Geometric { ratio: 0.999 }, gamma0: Some(0.2), ..Default::default() };
        let r = fbs_solve(&x, &p, &cfg).unwrap();
        let reference = fbs_solve(&x, &p, &SolverConfig::default()).unwrap();
        assert!((r.objective - reference.objective).abs() < 1e-8);
    }

    #[test]
    fn trace_csv_has_header() {
        let mut buf = Vec::new();
        write_trace_csv(&[TraceRow { iteration: 1, objective: 0.5, residual: 1e-3, step: 0.1 }], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,residual\n1,5e-1,1e-3"));
    }
}
