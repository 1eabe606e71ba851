//! Feature sets and the feature-relative conditional expectation.
//!
//! A feature set is a closed convex set of admissible estimators. The
//! feature-relative conditional expectation of `X` is its `L²` projection
//! onto the intersection of the feature set with the `G`-measurable vectors,
//! computed by Dykstra's alternating projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{cond_expectation, l2_distance, l2_norm, Measure, Partition, RandomVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSet {
    /// No constraint.
    FullSpace,
    /// `{Z : E‖Z‖² ≤ radius²}`.
    VarianceBall { radius: f64 },
    /// `{Z : ‖Z(ω)‖₁ ≤ radius for every scenario}`.
    L1Ball { radius: f64 },
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("ball radius must be positive and finite, got {radius}")))
    }
}

impl FeatureSet {
    pub fn variance_ball(radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(Self::VarianceBall { radius })
    }

    pub fn l1_ball(radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(Self::L1Ball { radius })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureSet::FullSpace => Ok(()),
            FeatureSet::VarianceBall { radius } | FeatureSet::L1Ball { radius } => check_radius(radius),
        }
    }

    /// Metric projection in `L²(mu)`.
    pub fn project(&self, x: &RandomVector, mu: Measure) -> Result<RandomVector> {
        match *self {
            FeatureSet::FullSpace => Ok(x.clone()),
            FeatureSet::VarianceBall { radius } => project_variance_ball(x, radius, mu),
            FeatureSet::L1Ball { radius } => Ok(project_l1_ball(x, radius)),
        }
    }

    /// How far `x` sits outside the set; zero inside.
    pub fn violation(&self, x: &RandomVector, mu: Measure) -> Result<f64> {
        Ok(match *self {
            FeatureSet::FullSpace => 0.0,
            FeatureSet::VarianceBall { radius } => (l2_norm(x, mu)? - radius).max(0.0),
            FeatureSet::L1Ball { radius } => x
                .rows()
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() - radius)
                .fold(0.0, f64::max),
        })
    }

    pub fn contains(&self, x: &RandomVector, mu: Measure, tol: f64) -> Result<bool> {
        Ok(self.violation(x, mu)? <= tol)
    }

    pub fn is_full_space(&self) -> bool {
        matches!(self, FeatureSet::FullSpace)
    }
}

/// `min{1, Σ / ‖X‖} · X`.
pub fn project_variance_ball(x: &RandomVector, radius: f64, mu: Measure) -> Result<RandomVector> {
    check_radius(radius)?;
    let norm = l2_norm(x, mu)?;
    if norm <= radius {
        return Ok(x.clone());
    }
    Ok(x * (radius / norm))
}

/// Scenario-wise Euclidean projection onto the `ℓ¹` ball of radius `Σ`.
///
/// Outside the ball the result is the soft threshold
/// `sgn(x_n) (|x_n| - θ)_+` with `θ` chosen so the output has `ℓ¹` norm `Σ`.
/// Zero coordinates stay exactly zero.
pub fn project_l1_ball(x: &RandomVector, radius: f64) -> RandomVector {
    assert!(radius > 0.0, "l1 radius must be positive");
    let mut scratch = Vec::with_capacity(x.dim());
    x.map_rows(x.dim(), |_, row, out| project_l1_row(row, radius, &mut scratch, out))
}

/// Soft-threshold level `θ` for one row, or `None` when the row is inside the ball.
pub fn l1_threshold(row: &[f64], radius: f64) -> Option<f64> {
    let mut scratch = Vec::with_capacity(row.len());
    threshold(row, radius, &mut scratch)
}

fn threshold(row: &[f64], radius: f64, sorted: &mut Vec<f64>) -> Option<f64> {
    let l1: f64 = row.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return None;
    }
    sorted.clear();
    sorted.extend(row.iter().map(|v| v.abs()));
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - radius) / (j + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    Some(theta)
}

fn project_l1_row(row: &[f64], radius: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
    match threshold(row, radius, scratch) {
        None => out.copy_from_slice(row),
        Some(theta) => {
            for (o, &v) in out.iter_mut().zip(row) {
                let shrunk = (v.abs() - theta).max(0.0);
                *o = if v == 0.0 || shrunk == 0.0 { 0.0 } else { shrunk.copysign(v) };
            }
        }
    }
}

/// Iterates of Dykstra's method for `L²(G) ∩ Φ`.
#[derive(Debug, Clone)]
pub struct DykstraState {
    pub x_bar: RandomVector,
    pub y_bar: RandomVector,
    pub p: RandomVector,
    pub q: RandomVector,
    pub iteration: usize,
    /// `L²` change of `x_bar` over the last sweep.
    pub residual: f64,
}

impl DykstraState {
    pub fn new(x: &RandomVector) -> Self {
        let zero = RandomVector::zeros(x.space().clone(), x.dim());
        Self {
            x_bar: x.clone(),
            y_bar: zero.clone(),
            p: zero.clone(),
            q: zero,
            iteration: 0,
            residual: f64::INFINITY,
        }
    }

    /// One sweep: project onto `Φ`, then onto `L²(G)`, updating both corrections.
    pub fn sweep(&mut self, phi: &FeatureSet, partition: &Partition, mu: Measure) -> Result<()> {
        let shifted = &self.x_bar + &self.p;
        self.y_bar = phi.project(&shifted, mu)?;
        self.p = &shifted - &self.y_bar;
        let shifted = &self.y_bar + &self.q;
        let next = cond_expectation(&shifted, partition, mu)?;
        self.q = &shifted - &next;
        self.residual = l2_distance(&next, &self.x_bar, mu)?;
        self.x_bar = next;
        self.iteration += 1;
        Ok(())
    }
}

/// Dykstra projection onto `L²(G) ∩ Φ`.
///
/// Stops once a sweep moves `x_bar` by less than `tol` in `L²(mu)` and
/// `x_bar` lies within `tol` of `Φ`. The result is exactly `G`-measurable.
pub fn dykstra_project(
    x: &RandomVector,
    phi: &FeatureSet,
    partition: &Partition,
    mu: Measure,
    tol: f64,
    max_iter: usize,
) -> Result<RandomVector> {
    Ok(dykstra_run(x, phi, partition, mu, tol, max_iter)?.x_bar)
}

/// As [`dykstra_project`], returning the final state.
pub fn dykstra_run(
    x: &RandomVector,
    phi: &FeatureSet,
    partition: &Partition,
    mu: Measure,
    tol: f64,
    max_iter: usize,
) -> Result<DykstraState> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    phi.validate()?;
    let mut state = DykstraState::new(x);
    if phi.is_full_space() {
        // One set is the whole space: a single projection onto L²(G) is exact.
        state.sweep(phi, partition, mu)?;
        state.residual = 0.0;
        return Ok(state);
    }
    while state.iteration < max_iter {
        state.sweep(phi, partition, mu)?;
        if state.residual < tol && phi.violation(&state.x_bar, mu)? < tol {
            return Ok(state);
        }
    }
    Err(Error::NonConvergence { iterations: state.iteration, residual: state.residual })
}

/// Projection of `X` onto `L²(G) ∩ Φ` with library-default tolerance.
pub fn phi_relative_cond_exp(
    x: &RandomVector,
    phi: &FeatureSet,
    partition: &Partition,
    mu: Measure,
) -> Result<RandomVector> {
    dykstra_project(x, phi, partition, mu, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{expectation, ScenarioSpace};
    use std::sync::Arc;

    fn uniform(n: usize) -> Arc<ScenarioSpace> {
        Arc::new(ScenarioSpace::uniform(n))
    }

    fn single(values: &[f64]) -> RandomVector {
        RandomVector::new(uniform(1), values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn variance_ball_interior_and_scaling() {
        let s = uniform(3);
        let x = RandomVector::scalar(s.clone(), vec![0.1, -0.2, 0.3]).unwrap();
        assert_eq!(project_variance_ball(&x, 1.0, Measure::P).unwrap(), x);
        let two = RandomVector::constant(s, &[2.0]);
        let p = project_variance_ball(&two, 1.0, Measure::P).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let zero = RandomVector::zeros(uniform(2), 1);
        assert_eq!(project_variance_ball(&zero, 1.0, Measure::P).unwrap(), zero);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(project_l1_ball(&single(&[3.0, 1.0]), 2.0).values(), &[2.0, 0.0]);
        assert_eq!(project_l1_ball(&single(&[2.0, 2.0]), 2.0).values(), &[1.0, 1.0]);
        assert_eq!(project_l1_ball(&single(&[0.5, -0.5]), 2.0).values(), &[0.5, -0.5]);
        assert_eq!(project_l1_ball(&single(&[-3.0, 0.0, 1.0]), 2.0).values(), &[-2.0, 0.0, 0.0]);
        assert_eq!(l1_threshold(&[3.0, 1.0], 2.0), Some(1.0));
        assert_eq!(l1_threshold(&[0.5, 1.0], 2.0), None);
    }

    #[test]
    fn zero_radius_rejected() {
        assert!(FeatureSet::variance_ball(0.0).is_err());
        assert!(FeatureSet::l1_ball(-1.0).is_err());
    }

    #[test]
    fn dykstra_full_space_is_cond_expectation() {
        let s = uniform(4);
        let x = RandomVector::scalar(s, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let g = Partition::new(vec![0, 0, 1, 1]).unwrap();
        let st = dykstra_run(&x, &FeatureSet::FullSpace, &g, Measure::P, 1e-9, 10).unwrap();
        assert_eq!(st.iteration, 1);
        assert_eq!(st.x_bar, cond_expectation(&x, &g, Measure::P).unwrap());
    }

    #[test]
    fn dykstra_fixed_point() {
        let s = uniform(4);
        let x = RandomVector::scalar(s, vec![0.2, 0.2, -0.1, -0.1]).unwrap();
        let g = Partition::new(vec![0, 0, 1, 1]).unwrap();
        let phi = FeatureSet::variance_ball(1.0).unwrap();
        let st = dykstra_run(&x, &phi, &g, Measure::P, 1e-9, 10).unwrap();
        assert_eq!(st.iteration, 1);
        assert_eq!(st.residual, 0.0);
        assert_eq!(st.x_bar, x);
    }

    #[test]
    fn dykstra_trivial_partition_clamps_mean() {
        let s = uniform(5);
        let x = RandomVector::new(s, 2, vec![3.0, 1.0, 2.0, 2.5, 4.0, 0.0, 1.0, 1.0, 2.5, 3.0]).unwrap();
        let radius = 1.5;
        let phi = FeatureSet::variance_ball(radius).unwrap();
        let out = phi_relative_cond_exp(&x, &phi, &Partition::trivial(5), Measure::P).unwrap();
        let m = expectation(&x, Measure::P).unwrap();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = (radius / norm).min(1.0);
        for row in out.rows() {
            for (v, mi) in row.iter().zip(&m) {
                assert!((v - scale * mi).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dykstra_rejects_nonpositive_tol() {
        let x = RandomVector::zeros(uniform(2), 1);
        let r = dykstra_project(&x, &FeatureSet::FullSpace, &Partition::trivial(2), Measure::P, 0.0, 5);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn dykstra_reports_non_convergence() {
        let s = uniform(4);
        let x = RandomVector::new(s, 2, vec![3.0, 1.0, -2.0, 2.5, 4.0, 0.0, 1.0, -1.0]).unwrap();
        let phi = FeatureSet::l1_ball(0.5).unwrap();
        let g = Partition::new(vec![0, 1, 0, 1]).unwrap();
        match dykstra_project(&x, &phi, &g, Measure::P, 1e-15, 1) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual >= 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
