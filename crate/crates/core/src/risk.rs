//! Convex risk measures, utility operators and their composites.
//!
//! The quadratic risk measure `ρ₂` is the cash-additive hull of the
//! second-moment functional:
//!
//! ```text
//! ρ₂(Z) = E[(E[Z] + 1/2 - Z)²] - (E[Z] + 1/2) - 1/4
//! ```
//!
//! Composed with the quadratic loss `U(Y) = -‖Y‖²` it yields the mispricing
//! functional `Y ↦ ρ₂(-‖Y‖²)` that drives risk-averse conditioning.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scenario::{l2_distance, mean, Measure, Partition, RandomVector};
use crate::solver::{self, ProximalProblem};

/// A convex risk measure on scalar random variables.
pub trait RiskMeasure: fmt::Debug + Send + Sync {
    fn evaluate(&self, z: &RandomVector, mu: Measure) -> Result<f64>;

    /// Gâteaux derivative as an element of `L²(mu)`.
    fn gradient(&self, z: &RandomVector, mu: Measure) -> Result<RandomVector>;

    fn name(&self) -> &'static str;
}

/// The quadratic risk measure `ρ₂`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Quadratic;

impl RiskMeasure for Quadratic {
    fn evaluate(&self, z: &RandomVector, mu: Measure) -> Result<f64> {
        rho2_evaluate(z, mu)
    }

    fn gradient(&self, z: &RandomVector, mu: Measure) -> Result<RandomVector> {
        rho2_gradient(z, mu)
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }
}

/// Cash level `V_Z = E[Z] + 1/2` minimizing the hull's inner problem.
pub fn rho2_vz(z: &RandomVector, mu: Measure) -> Result<f64> {
    Ok(mean(z, mu)? + 0.5)
}

pub fn rho2_evaluate(z: &RandomVector, mu: Measure) -> Result<f64> {
    let v = rho2_vz(z, mu)?;
    let w = z.space().weights(mu)?;
    let spread: f64 = z.values().iter().zip(w).map(|(zi, wi)| wi * (v - zi).powi(2)).sum();
    Ok(spread - v - 0.25)
}

/// `∇ρ₂(Z) = 2 (Z - V_Z)`, the Riesz representer in `L²(mu)`.
///
/// Its `mu`-mean is `-1` for every `Z`.
pub fn rho2_gradient(z: &RandomVector, mu: Measure) -> Result<RandomVector> {
    let v = rho2_vz(z, mu)?;
    Ok(z.map(|zi| 2.0 * (zi - v)))
}

/// Maps an estimation error `Y` to a scalar utility random variable.
pub trait UtilityOperator: fmt::Debug + Send + Sync {
    fn map(&self, y: &RandomVector) -> Result<RandomVector>;

    /// Chain rule: given the gradient `g` of a functional at `U(Y)`, returns
    /// the gradient of `Y ↦ functional(U(Y))` at `Y`.
    fn pullback(&self, _y: &RandomVector, _outer: &RandomVector) -> Result<RandomVector> {
        Err(Error::Capability(format!("utility {} is not differentiable", self.name())))
    }

    fn name(&self) -> &'static str;
}

/// `U(Y)(ω) = -‖Y(ω)‖²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuadraticLoss;

impl UtilityOperator for QuadraticLoss {
    fn map(&self, y: &RandomVector) -> Result<RandomVector> {
        Ok(y.squared_norms().map(|v| -v))
    }

    fn pullback(&self, y: &RandomVector, outer: &RandomVector) -> Result<RandomVector> {
        outer.ensure_scalar()?;
        Ok(y.scale_rows(&outer.map(|g| -2.0 * g)))
    }

    fn name(&self) -> &'static str {
        "quadratic-loss"
    }
}

/// `U(Y) = Y` on scalar errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Identity;

impl UtilityOperator for Identity {
    fn map(&self, y: &RandomVector) -> Result<RandomVector> {
        y.ensure_scalar()?;
        Ok(y.clone())
    }

    fn pullback(&self, y: &RandomVector, outer: &RandomVector) -> Result<RandomVector> {
        y.ensure_scalar()?;
        Ok(outer.clone())
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// `ρ ∘ U`, evaluated under a fixed base measure.
#[derive(Debug, Clone)]
pub struct CompositeRisk {
    pub risk: Arc<dyn RiskMeasure>,
    pub utility: Arc<dyn UtilityOperator>,
    pub base_measure: Measure,
}

impl CompositeRisk {
    pub fn new(risk: Arc<dyn RiskMeasure>, utility: Arc<dyn UtilityOperator>, base_measure: Measure) -> Self {
        Self { risk, utility, base_measure }
    }

    /// `ρ₂ ∘ (-‖·‖²)`.
    pub fn quadratic(base_measure: Measure) -> Self {
        Self::new(Arc::new(Quadratic), Arc::new(QuadraticLoss), base_measure)
    }

    pub fn evaluate(&self, y: &RandomVector) -> Result<f64> {
        composite_evaluate(self, y)
    }

    pub fn gradient(&self, y: &RandomVector) -> Result<RandomVector> {
        composite_gradient(self, y)
    }

    /// Coarse check that `Z ↦ ρ^U(X - Z)` is bounded below over shifts of `X`
    /// by cell-constant vectors. Probes each cell and coordinate on a grid
    /// and fails if the smallest value sits on the edge of the grid or is
    /// not finite. Returns the smallest probed value.
    pub fn probe_lower_bound(&self, x: &RandomVector, partition: &Partition) -> Result<f64> {
        const STEPS: usize = 40;
        let radius = 10.0 * (1.0 + x.max_abs());
        let mut best = self.evaluate(x)?;
        for cell in 0..partition.n_cells() {
            for coord in 0..x.dim() {
                let mut values = Vec::with_capacity(STEPS + 1);
                for k in 0..=STEPS {
                    let t = -radius + 2.0 * radius * k as f64 / STEPS as f64;
                    let shifted = x.map_rows(x.dim(), |i, row, out| {
                        out.copy_from_slice(row);
                        if partition.label(i) == cell {
                            out[coord] -= t;
                        }
                    });
                    values.push(self.evaluate(&shifted)?);
                }
                let (arg, min) = values
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
                if !min.is_finite() || arg == 0 || arg == STEPS {
                    return Err(Error::Domain(format!(
                        "composite risk does not look bounded below along cell {cell}, coordinate {coord}"
                    )));
                }
                best = best.min(min);
            }
        }
        Ok(best)
    }
}

pub fn composite_evaluate(cr: &CompositeRisk, y: &RandomVector) -> Result<f64> {
    cr.risk.evaluate(&cr.utility.map(y)?, cr.base_measure)
}

/// Gradient of `Y ↦ ρ(U(Y))` in `L²(base_measure)`, by the chain rule.
///
/// For `ρ₂` with the quadratic loss this is
/// `4 Y(ω) (‖Y(ω)‖² - E‖Y‖² + 1/2)`.
pub fn composite_gradient(cr: &CompositeRisk, y: &RandomVector) -> Result<RandomVector> {
    let u = cr.utility.map(y)?;
    let outer = cr.risk.gradient(&u, cr.base_measure)?;
    cr.utility.pullback(y, &outer)
}

/// Result of evaluating the Moreau-envelope extension of a risk measure.
#[derive(Debug, Clone)]
pub struct MoreauExtension {
    pub value: f64,
    pub prox: RandomVector,
    /// `(X - prox) / η`.
    pub gradient: RandomVector,
    pub iterations: usize,
}

/// Regularized extension `ρ_{+:η}(X) = ρ(R_η(X)) + E[(X - R_η(X))²] / (2η)`,
/// where `R_η(X)` minimizes `E[(X - Z)²]/2 + η ρ(Z)` over `G`-measurable `Z`.
pub fn moreau_extension(
    rho: &dyn RiskMeasure,
    eta: f64,
    x: &RandomVector,
    partition: &Partition,
    mu: Measure,
) -> Result<MoreauExtension> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("Moreau parameter must be positive, got {eta}")));
    }
    x.ensure_scalar()?;
    let value = |z: &RandomVector| -> Result<f64> {
        let d = l2_distance(x, z, mu)?;
        Ok(0.5 * d * d + eta * rho.evaluate(z, mu)?)
    };
    let gradient = |z: &RandomVector| -> Result<RandomVector> { Ok((z - x).axpy(eta, &rho.gradient(z, mu)?)) };
    let project = |v: &RandomVector| crate::scenario::cond_expectation(v, partition, mu);
    let problem = ProximalProblem { value: &value, gradient: &gradient, project: &project, measure: mu };
    let start = project(x)?;
    let config = solver::SolverConfig { tol: 1e-13, max_iter: 100_000, ..Default::default() };
    let run = problem.solve(start, &config)?;
    let prox = run.point;
    // the engine minimized η times the extension
    let value = run.value / eta;
    let gradient = &(x - &prox) * (1.0 / eta);
    Ok(MoreauExtension { value, prox, gradient, iterations: run.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{inner, ScenarioSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Arc<ScenarioSpace> {
        Arc::new(ScenarioSpace::uniform(n))
    }

    fn scalar(space: &Arc<ScenarioSpace>, v: Vec<f64>) -> RandomVector {
        RandomVector::scalar(space.clone(), v).unwrap()
    }

    #[test]
    fn rho2_constant_cases() {
        let s = uniform(5);
        let zero = RandomVector::zeros(s.clone(), 1);
        assert!((rho2_evaluate(&zero, Measure::P).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(rho2_vz(&zero, Measure::P).unwrap(), 0.5);
        for k in [-2.0, 0.3, 4.0] {
            let c = RandomVector::constant(s.clone(), &[k]);
            assert!((rho2_evaluate(&c, Measure::P).unwrap() - (-k - 0.5)).abs() < 1e-12);
        }
        let half = RandomVector::constant(s, &[-0.5]);
        assert_eq!(rho2_vz(&half, Measure::Q).unwrap(), 0.0);
    }

    #[test]
    fn rho2_monotone_only_for_small_oscillation() {
        let s = uniform(2);
        let rho = |v: Vec<f64>| rho2_evaluate(&scalar(&s, v), Measure::P).unwrap();
        // pointwise larger, cheaper: the direction compatible with cash invariance
        assert!(rho(vec![1.0, 1.25]) < rho(vec![0.0, 0.25]));
        // a wide spread breaks it: (0, 3) dominates (0, 0) yet carries more risk
        assert!((rho(vec![0.0, 0.0]) + 0.5).abs() < 1e-15);
        assert!((rho(vec![0.0, 3.0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rho2_two_point() {
        let s = uniform(2);
        let z = scalar(&s, vec![1.0, -1.0]);
        assert!((rho2_evaluate(&z, Measure::P).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(rho2_vz(&z, Measure::P).unwrap(), 0.5);
    }

    #[test]
    fn rho2_gradient_mean() {
        let s = uniform(7);
        let zero = RandomVector::zeros(s.clone(), 1);
        let g = rho2_gradient(&zero, Measure::P).unwrap();
        assert!(g.values().iter().all(|&v| v == -1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z = scalar(&s, (0..7).map(|_| rng.random_range(-3.0..3.0)).collect());
            let m = mean(&rho2_gradient(&z, Measure::P).unwrap(), Measure::P).unwrap();
            assert!((m + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_constant_cases() {
        let s = uniform(4);
        let cr = CompositeRisk::quadratic(Measure::Q);
        assert!((cr.evaluate(&RandomVector::zeros(s.clone(), 1)).unwrap() + 0.5).abs() < 1e-15);
        for c in [-1.5, 0.25, 2.0] {
            let y = RandomVector::constant(s.clone(), &[c]);
            assert!((cr.evaluate(&y).unwrap() - (c * c - 0.5)).abs() < 1e-12);
            let g = cr.gradient(&y).unwrap();
            assert!(g.values().iter().all(|v| (v - 2.0 * c).abs() < 1e-12));
        }
        let g0 = cr.gradient(&RandomVector::zeros(s, 2)).unwrap();
        assert!(g0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composite_closed_form() {
        let s = uniform(3);
        let y = RandomVector::new(s, 2, vec![1.0, 0.0, 0.0, 2.0, -1.0, 1.0]).unwrap();
        let cr = CompositeRisk::quadratic(Measure::P);
        let g = cr.gradient(&y).unwrap();
        let sq = [1.0, 4.0, 2.0];
        let m = 7.0 / 3.0;
        for (i, sqi) in sq.iter().enumerate() {
            for d in 0..2 {
                let expect = 4.0 * y.get(i, d) * (sqi - m + 0.5);
                assert!((g.get(i, d) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_error_never_lowers_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cr = CompositeRisk::quadratic(Measure::P);
        for _ in 0..200 {
            let n = rng.random_range(2..12);
            let s = uniform(n);
            let y = RandomVector::new(s, 2, (0..2 * n).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
            let t = rng.random_range(1.0..3.0);
            assert!(cr.evaluate(&(&y * t)).unwrap() >= cr.evaluate(&y).unwrap() - 1e-12);
        }
    }

    #[test]
    fn identity_utility_matches_rho() {
        let s = uniform(3);
        let z = scalar(&s, vec![0.1, -0.4, 0.9]);
        let cr = CompositeRisk::new(Arc::new(Quadratic), Arc::new(Identity), Measure::P);
        assert_eq!(cr.evaluate(&z).unwrap(), rho2_evaluate(&z, Measure::P).unwrap());
        assert_eq!(cr.gradient(&z).unwrap(), rho2_gradient(&z, Measure::P).unwrap());
    }

    #[derive(Debug)]
    struct Opaque;
    impl UtilityOperator for Opaque {
        fn map(&self, y: &RandomVector) -> Result<RandomVector> {
            Ok(y.squared_norms())
        }
        fn name(&self) -> &'static str {
            "opaque"
        }
    }

    #[test]
    fn non_differentiable_utility_rejected() {
        let cr = CompositeRisk::new(Arc::new(Quadratic), Arc::new(Opaque), Measure::P);
        let y = RandomVector::zeros(uniform(2), 1);
        assert!(matches!(cr.gradient(&y), Err(Error::Capability(_))));
    }

    #[test]
    fn lower_bound_probe() {
        let s = uniform(6);
        let x = scalar(&s, vec![0.1, 0.5, -0.2, 0.3, 0.9, 0.0]);
        let cr = CompositeRisk::quadratic(Measure::P);
        let lb = cr.probe_lower_bound(&x, &Partition::trivial(6)).unwrap();
        assert!(lb <= cr.evaluate(&x).unwrap());
        let unbounded = CompositeRisk::new(Arc::new(Quadratic), Arc::new(Identity), Measure::P);
        assert!(unbounded.probe_lower_bound(&x, &Partition::trivial(6)).is_err());
    }

    #[test]
    fn moreau_zero_input_matches_scalar_grid() {
        let s = uniform(4);
        let x = RandomVector::zeros(s, 1);
        let eta = 0.3;
        let ext = moreau_extension(&Quadratic, eta, &x, &Partition::discrete(4), Measure::P).unwrap();
        // constant z: z²/2 + η(-z - 1/2)
        let f = |z: f64| 0.5 * z * z + eta * (-z - 0.5);
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for k in 0..=2_000_000 {
            let z = -1.0 + 2.0 * k as f64 / 2_000_000.0;
            if f(z) < best {
                best = f(z);
                arg = z;
            }
        }
        for v in ext.prox.values() {
            assert!((v - arg).abs() < 1e-6, "{v} vs {arg}");
        }
    }

    #[test]
    fn moreau_below_every_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = uniform(6);
        let g = Partition::new(vec![0, 0, 1, 1, 2, 2]).unwrap();
        let x = scalar(&s, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
        let eta = 0.7;
        let ext = moreau_extension(&Quadratic, eta, &x, &g, Measure::P).unwrap();
        for _ in 0..200 {
            let cells: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = scalar(&s, (0..6).map(|i| cells[g.label(i)]).collect());
            let d = l2_distance(&x, &y, Measure::P).unwrap();
            let bound = rho2_evaluate(&y, Measure::P).unwrap() + d * d / (2.0 * eta);
            assert!(ext.value <= bound + 1e-10);
        }
        let rn = inner(&ext.gradient, &ext.gradient, Measure::P).unwrap();
        assert!(rn.is_finite());
    }

    #[test]
    fn moreau_rejects_bad_eta() {
        let x = RandomVector::zeros(uniform(2), 1);
        assert!(matches!(
            moreau_extension(&Quadratic, 0.0, &x, &Partition::trivial(2), Measure::P),
            Err(Error::Domain(_))
        ));
    }
}
