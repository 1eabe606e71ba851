//! Self-check suites run by the `validate` command.
//!
//! Each suite draws its instances from a seeded generator, so a run is fully
//! reproducible from the seed.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::featureset::{dykstra_project, project_l1_ball, project_variance_ball, FeatureSet};
use crate::risk::{rho2_evaluate, rho2_gradient, CompositeRisk};
use crate::scenario::{inner, l2_distance, Measure, Partition, RandomVector, ScenarioSpace};
use crate::solver::{brute_force_oracle, fbs_solve, objective_value, GridSpec, RiskPerspective, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub checks: usize,
    pub failures: usize,
    /// Largest observed discrepancy, in the suite's own units.
    pub worst: f64,
}

impl SuiteOutcome {
    fn new(name: &'static str) -> Self {
        Self { name, checks: 0, failures: 0, worst: 0.0 }
    }

    fn record(&mut self, discrepancy: f64, tolerance: f64) {
        self.checks += 1;
        self.worst = self.worst.max(discrepancy);
        if discrepancy.is_nan() || discrepancy > tolerance {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub seed: u64,
    pub suites: Vec<SuiteOutcome>,
}

impl ValidationSummary {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteOutcome::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for suite in &self.suites {
            let _ = writeln!(
                s,
                "{:<22} {} checks={} failures={} worst={:.3e}",
                suite.name,
                if suite.passed() { "PASS" } else { "FAIL" },
                suite.checks,
                suite.failures,
                suite.worst
            );
        }
        let passed = self.suites.iter().filter(|s| s.passed()).count();
        let _ = writeln!(s, "suites passed: {passed}/{}", self.suites.len());
        s
    }
}

/// Runs every suite with `instances` random oracle instances.
pub fn run_all(seed: u64, instances: usize) -> Result<ValidationSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites = vec![
        oracle_equivalence(&mut rng, instances)?,
        gradient_checks(&mut rng, 20)?,
        risk_axioms(&mut rng, 1000)?,
        projections(&mut rng, 100)?,
    ];
    Ok(ValidationSummary { seed, suites })
}

fn random_space(rng: &mut ChaCha8Rng, n: usize, cells: usize) -> Result<Arc<ScenarioSpace>> {
    let wp: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let wq: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % cells).collect();
    labels.sort_unstable();
    Ok(Arc::new(ScenarioSpace::new(wp, Some(wq), Partition::new(labels)?)?))
}

/// FBS versus the brute-force oracle in objective value.
pub fn oracle_equivalence(rng: &mut ChaCha8Rng, instances: usize) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("oracle_equivalence");
    let lambdas = [0.0, 0.25, 0.5, 0.9];
    for k in 0..instances {
        let n = rng.random_range(2..=256);
        let cells = if n >= 2 && k % 2 == 1 { 2 } else { 1 };
        let space = random_space(rng, n, cells)?;
        let x = RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
        let p = RiskPerspective::new(
            space.partition().clone(),
            CompositeRisk::quadratic(Measure::Q),
            FeatureSet::FullSpace,
            lambdas[k % lambdas.len()],
            Measure::Q,
        )?;
        let fbs = fbs_solve(&x, &p, &SolverConfig::default())?;
        let oracle = brute_force_oracle(&x, &p, &GridSpec::default())?;
        let gap = (fbs.objective - objective_value(&x, &oracle, &p)?).abs();
        out.record(gap, 1e-4);
    }
    Ok(out)
}

fn central_difference(f: impl Fn(f64) -> Result<f64>, eps: f64) -> Result<f64> {
    Ok((f(eps)? - f(-eps)?) / (2.0 * eps))
}

/// Analytic gradients against central differences (`ε = 1e-6`).
pub fn gradient_checks(rng: &mut ChaCha8Rng, points: usize) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("gradients");
    let cr = CompositeRisk::quadratic(Measure::P);
    for _ in 0..points {
        let n = rng.random_range(3..40);
        let space = random_space(rng, n, 1)?;
        let z = RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let h = RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let fd = central_difference(|t| rho2_evaluate(&z.axpy(t, &h), Measure::P), 1e-6)?;
        let an = inner(&rho2_gradient(&z, Measure::P)?, &h, Measure::P)?;
        out.record((fd - an).abs() / an.abs().max(1e-6), 1e-5);

        let d = rng.random_range(1..4);
        let y = RandomVector::new(space.clone(), d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let h = RandomVector::new(space, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let fd = central_difference(|t| cr.evaluate(&y.axpy(t, &h)), 1e-6)?;
        let an = inner(&cr.gradient(&y)?, &h, Measure::P)?;
        out.record((fd - an).abs() / an.abs().max(1e-6), 1e-5);
    }
    Ok(out)
}

/// Cash invariance, convexity and monotonicity of `ρ₂`.
///
/// Monotonicity is checked in the direction compatible with cash invariance
/// (`Z ≤ W ⇒ ρ(W) ≤ ρ(Z)`) on ensembles whose oscillation is below 1/2,
/// where the quadratic hull is monotone.
pub fn risk_axioms(rng: &mut ChaCha8Rng, ensembles: usize) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("risk_axioms");
    for _ in 0..ensembles {
        let n = rng.random_range(2..30);
        let space = random_space(rng, n, 1)?;
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Result<RandomVector> {
            RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        };
        let z = draw(rng, -2.0, 2.0)?;
        let w = draw(rng, -2.0, 2.0)?;
        let k = rng.random_range(-5.0..5.0);
        let rz = rho2_evaluate(&z, Measure::P)?;
        let shifted = rho2_evaluate(&z.map(|v| v + k), Measure::P)?;
        out.record((shifted - (rz - k)).abs(), 1e-10);

        let a = rng.random_range(0.0..1.0);
        let mix = rho2_evaluate(&(&(&z * a) + &(&w * (1.0 - a))), Measure::P)?;
        let chord = a * rz + (1.0 - a) * rho2_evaluate(&w, Measure::P)?;
        out.record((mix - chord).max(0.0), 1e-10);

        let base = rng.random_range(-1.0..1.0);
        let lo = draw(rng, base, base + 0.25)?;
        let bump = draw(rng, 0.0, 0.25)?;
        let hi = &lo + &bump;
        let excess = rho2_evaluate(&hi, Measure::P)? - rho2_evaluate(&lo, Measure::P)?;
        out.record(excess.max(0.0), 1e-10);
    }
    Ok(out)
}

/// Optimality of the ball projections and feasibility of Dykstra output.
pub fn projections(rng: &mut ChaCha8Rng, cases: usize) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("projections");
    let single = Arc::new(ScenarioSpace::uniform(1));
    const GRID: usize = 801;
    for _ in 0..cases {
        // l1 ball in the plane against a grid over the ball
        let radius = rng.random_range(0.2..2.0);
        let point = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let x = RandomVector::new(single.clone(), 2, point.to_vec())?;
        let p = project_l1_ball(&x, radius);
        let dist = |q: [f64; 2]| ((q[0] - point[0]).powi(2) + (q[1] - point[1]).powi(2)).sqrt();
        let proj = dist([p.get(0, 0), p.get(0, 1)]);
        let h = 2.0 * radius / (GRID - 1) as f64;
        let mut best = f64::INFINITY;
        for i in 0..GRID {
            for j in 0..GRID {
                let q = [-radius + h * i as f64, -radius + h * j as f64];
                if q[0].abs() + q[1].abs() <= radius {
                    best = best.min(dist(q));
                }
            }
        }
        out.record((proj - best).max(0.0), h);

        // variance ball against random interior probes
        let n = rng.random_range(2..20);
        let space = random_space(rng, n, 1)?;
        let x = RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())?;
        let radius = rng.random_range(0.1..1.0);
        let p = project_variance_ball(&x, radius, Measure::P)?;
        let d = l2_distance(&x, &p, Measure::P)?;
        for _ in 0..10 {
            let y = RandomVector::scalar(space.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            let y = project_variance_ball(&y, radius, Measure::P)?;
            out.record((d - l2_distance(&x, &y, Measure::P)?).max(0.0), 1e-10);
        }

        // Dykstra feasibility
        let cells = rng.random_range(1..=3).min(n);
        let space = random_space(rng, n, cells)?;
        let x = RandomVector::new(space.clone(), 2, (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let phi = if rng.random_bool(0.5) { FeatureSet::L1Ball { radius: 0.7 } } else { FeatureSet::VarianceBall { radius: 0.7 } };
        let z = dykstra_project(&x, &phi, space.partition(), Measure::P, 1e-10, 100_000)?;
        let measurable = if z.is_measurable(space.partition(), 1e-8) { 0.0 } else { 1.0 };
        out.record(measurable + phi.violation(&z, Measure::P)?, 1e-8);
    }
    Ok(out)
}
