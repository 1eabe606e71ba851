//! Probably-sparse random vectors and the sparsifying effect of `ℓ¹`-ball
//! feature sets on conditional expectations.

use std::io;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::featureset::{phi_relative_cond_exp, FeatureSet};
use crate::scenario::{Measure, Partition, RandomVector};

pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Membership parameters for the space of random vectors in `R^dim` with at
/// most `d` nonzero coordinates with probability at least `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityProfile {
    pub d: usize,
    pub epsilon: f64,
    pub dim: usize,
}

impl SparsityProfile {
    pub fn new(d: usize, epsilon: f64, dim: usize) -> Result<Self> {
        if d > dim {
            return Err(Error::Domain(format!("sparsity level {d} exceeds dimension {dim}")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Domain(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self { d, epsilon, dim })
    }

    pub fn contains(&self, x: &RandomVector, mu: Measure, zero_tol: f64) -> Result<bool> {
        if x.dim() != self.dim {
            return Err(Error::Shape(format!("profile dimension {} vs vector dimension {}", self.dim, x.dim())));
        }
        Ok(sparsity_probability(x, self.d, mu, zero_tol)? >= self.epsilon)
    }
}

/// Number of coordinates with magnitude above `zero_tol`.
pub fn l0_count(x: &[f64], zero_tol: f64) -> usize {
    x.iter().filter(|v| v.abs() > zero_tol).count()
}

/// `mu(‖X‖₀ ≤ d)`: the largest `ε` for which `X` is `ε`-probably `d`-sparse.
pub fn sparsity_probability(x: &RandomVector, d: usize, mu: Measure, zero_tol: f64) -> Result<f64> {
    let w = x.space().weights(mu)?;
    Ok(x.rows().zip(w).filter(|(row, _)| l0_count(row, zero_tol) <= d).fold(0.0, |acc, (_, wi)| acc + wi))
}

#[derive(Debug, Clone)]
pub struct SparseDemo {
    pub before: f64,
    pub after: f64,
    pub conditioned: RandomVector,
}

/// Conditions a `G`-measurable `X` on the `ℓ¹`-ball feature set of radius
/// `radius` and reports the sparsity probability at level `d` before and after.
pub fn sparse_ce_demo(
    x: &RandomVector,
    radius: f64,
    partition: &Partition,
    mu: Measure,
    d: usize,
    zero_tol: f64,
) -> Result<SparseDemo> {
    if d >= x.dim() {
        return Err(Error::Domain(format!("sparsity level {d} must be below the dimension {}", x.dim())));
    }
    if !x.is_measurable(partition, 0.0) {
        return Err(Error::Domain("input must be measurable with respect to the partition".into()));
    }
    let phi = FeatureSet::l1_ball(radius)?;
    let conditioned = phi_relative_cond_exp(x, &phi, partition, mu)?;
    Ok(SparseDemo {
        before: sparsity_probability(x, d, mu, zero_tol)?,
        after: sparsity_probability(&conditioned, d, mu, zero_tol)?,
        conditioned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityRow {
    pub radius: f64,
    pub d: usize,
    pub before: f64,
    pub after: f64,
}

pub fn write_sparsity_csv<W: io::Write>(rows: &[SparsityRow], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["sigma", "d", "before", "after"])?;
    for r in rows {
        wtr.write_record([r.radius.to_string(), r.d.to_string(), r.before.to_string(), r.after.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
