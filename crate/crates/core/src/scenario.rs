//! Finite probability spaces.
//!
//! A [`ScenarioSpace`] is a weighted scenario set carrying the objective
//! weights `P`, optional risk-neutral weights `Q` (a reweighting of the same
//! scenarios) and a default [`Partition`] describing the information set.
//! A [`RandomVector`] is an `N x D` matrix of values over such a space.
//! Conditional expectation onto a partition is the cell-wise weighted mean,
//! which is exactly the `L²` projection onto cell-constant vectors.

use std::fmt;
use std::io;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of a normalized weight vector from unit mass.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Selects which weight vector of the ambient space an expectation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Objective measure.
    P,
    /// Risk-neutral measure.
    Q,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::P => f.write_str("P"),
            Measure::Q => f.write_str("Q"),
        }
    }
}

/// A partition of `0..n` into non-empty cells labelled `0..n_cells`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    n_cells: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invariant("partition over an empty scenario set".into()));
        }
        let n_cells = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_cells];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!(
                "partition cell {empty} is empty (labels must cover 0..{n_cells})"
            )));
        }
        Ok(Self { labels, n_cells })
    }

    /// The one-cell partition (time-zero information).
    pub fn trivial(n: usize) -> Self {
        assert!(n > 0, "partition over an empty scenario set");
        Self { labels: vec![0; n], n_cells: 1 }
    }

    /// One cell per scenario (full information).
    pub fn discrete(n: usize) -> Self {
        assert!(n > 0, "partition over an empty scenario set");
        Self { labels: (0..n).collect(), n_cells: n }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, scenario: usize) -> usize {
        self.labels[scenario]
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.n_cells == 1
    }

    pub fn is_discrete(&self) -> bool {
        self.n_cells == self.labels.len()
    }

    /// True when every cell of `self` lies inside a single cell of `coarse`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        if self.len() != coarse.len() {
            return false;
        }
        let mut parent = vec![usize::MAX; self.n_cells];
        for (fine, &c) in self.labels.iter().zip(&coarse.labels) {
            match parent[*fine] {
                usize::MAX => parent[*fine] = c,
                p if p != c => return false,
                _ => {}
            }
        }
        true
    }

    /// Scenario indices grouped by cell.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.n_cells];
        for (i, &l) in self.labels.iter().enumerate() {
            cells[l].push(i);
        }
        cells
    }
}

/// Finite weighted sample space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpace {
    weights_p: Vec<f64>,
    weights_q: Option<Vec<f64>>,
    partition: Partition,
}

fn normalized(name: &str, w: Vec<f64>) -> Result<Vec<f64>> {
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Invariant(format!("{name}[{i}] = {v} is not strictly positive")));
    }
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.into_iter().map(|v| v / total).collect();
    let check: f64 = w.iter().sum();
    if (check - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Invariant(format!("{name} sums to {check} after normalization")));
    }
    Ok(w)
}

impl ScenarioSpace {
    /// Builds a space; weight vectors are normalized to unit mass.
    pub fn new(weights_p: Vec<f64>, weights_q: Option<Vec<f64>>, partition: Partition) -> Result<Self> {
        let n = weights_p.len();
        if n == 0 {
            return Err(Error::Invariant("scenario space needs at least one scenario".into()));
        }
        if partition.len() != n {
            return Err(Error::Invariant(format!(
                "partition covers {} scenarios, space has {n}",
                partition.len()
            )));
        }
        let weights_p = normalized("weights_p", weights_p)?;
        let weights_q = match weights_q {
            Some(q) if q.len() != n => {
                return Err(Error::Invariant(format!("weights_q has {} entries, expected {n}", q.len())))
            }
            Some(q) => Some(normalized("weights_q", q)?),
            None => None,
        };
        Ok(Self { weights_p, weights_q, partition })
    }

    /// `n` equally likely scenarios, `Q = P`, trivial information.
    pub fn uniform(n: usize) -> Self {
        let w = vec![1.0 / n as f64; n];
        Self { weights_p: w.clone(), weights_q: Some(w), partition: Partition::trivial(n) }
    }

    pub fn with_partition(mut self, partition: Partition) -> Result<Self> {
        if partition.len() != self.n_scenarios() {
            return Err(Error::Invariant("partition length differs from scenario count".into()));
        }
        self.partition = partition;
        Ok(self)
    }

    pub fn n_scenarios(&self) -> usize {
        self.weights_p.len()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights_p(&self) -> &[f64] {
        &self.weights_p
    }

    pub fn weights_q(&self) -> Option<&[f64]> {
        self.weights_q.as_deref()
    }

    pub fn weights(&self, mu: Measure) -> Result<&[f64]> {
        match mu {
            Measure::P => Ok(&self.weights_p),
            Measure::Q => self
                .weights_q
                .as_deref()
                .ok_or_else(|| Error::Config("measure Q requested but the space carries no Q weights".into())),
        }
    }

    /// Scenario-wise density `d(num)/d(den)`.
    pub fn density(&self, num: Measure, den: Measure) -> Result<Vec<f64>> {
        let a = self.weights(num)?;
        let b = self.weights(den)?;
        Ok(a.iter().zip(b).map(|(x, y)| x / y).collect())
    }
}

/// An `N x D` value matrix over a shared scenario space, stored row-major.
#[derive(Debug, Clone)]
pub struct RandomVector {
    space: Arc<ScenarioSpace>,
    dim: usize,
    values: Vec<f64>,
}

impl PartialEq for RandomVector {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.values == other.values && same_space(&self.space, &other.space)
    }
}

fn same_space(a: &Arc<ScenarioSpace>, b: &Arc<ScenarioSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl RandomVector {
    pub fn new(space: Arc<ScenarioSpace>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invariant("random vector dimension must be positive".into()));
        }
        if values.len() != space.n_scenarios() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} scenarios x {dim} dims",
                values.len(),
                space.n_scenarios()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("entry {i} is not finite")));
        }
        Ok(Self { space, dim, values })
    }

    /// Scalar (`D = 1`) random variable.
    pub fn scalar(space: Arc<ScenarioSpace>, values: Vec<f64>) -> Result<Self> {
        Self::new(space, 1, values)
    }

    pub fn constant(space: Arc<ScenarioSpace>, value: &[f64]) -> Self {
        let n = space.n_scenarios();
        let values = value.iter().copied().cycle().take(n * value.len()).collect();
        Self { space, dim: value.len(), values }
    }

    pub fn zeros(space: Arc<ScenarioSpace>, dim: usize) -> Self {
        let n = space.n_scenarios();
        Self { space, dim, values: vec![0.0; n * dim] }
    }

    pub fn space(&self) -> &Arc<ScenarioSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_scenarios(&self) -> usize {
        self.space.n_scenarios()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn get(&self, scenario: usize, coord: usize) -> f64 {
        self.values[scenario * self.dim + coord]
    }

    /// New vector on the same space built from `values` (no finiteness check).
    pub(crate) fn with_values(&self, dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.n_scenarios() * dim);
        Self { space: Arc::clone(&self.space), dim, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.dim, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Applies `f` to each scenario row, producing a vector of dimension `out_dim`.
    pub fn map_rows(&self, out_dim: usize, mut f: impl FnMut(usize, &[f64], &mut [f64])) -> Self {
        let mut out = vec![0.0; self.n_scenarios() * out_dim];
        for (i, (row, dst)) in self.rows().zip(out.chunks_exact_mut(out_dim)).enumerate() {
            f(i, row, dst);
        }
        self.with_values(out_dim, out)
    }

    pub fn ensure_compatible(&self, other: &RandomVector) -> Result<()> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::Shape("random vectors live on different scenario spaces".into()));
        }
        if self.dim != other.dim {
            return Err(Error::Shape(format!("dimension {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn ensure_scalar(&self) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::Shape(format!("expected a scalar random variable, got dimension {}", self.dim)));
        }
        Ok(())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &RandomVector) -> Self {
        self.zip_with(other, |x, y| x + a * y)
    }

    fn zip_with(&self, other: &RandomVector, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(
            self.ensure_compatible(other).is_ok(),
            "arithmetic on incompatible random vectors"
        );
        let values = self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect();
        self.with_values(self.dim, values)
    }

    /// Scenario-wise squared Euclidean norm, as a scalar random variable.
    pub fn squared_norms(&self) -> Self {
        self.map_rows(1, |_, row, out| out[0] = row.iter().map(|v| v * v).sum())
    }

    /// Multiplies every row by the matching entry of a scalar random variable.
    pub fn scale_rows(&self, factors: &RandomVector) -> Self {
        assert_eq!(factors.dim, 1, "row factors must be scalar");
        assert!(same_space(&self.space, &factors.space), "row factors on another space");
        self.map_rows(self.dim, |i, row, out| {
            let f = factors.values[i];
            for (o, v) in out.iter_mut().zip(row) {
                *o = f * v;
            }
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when the vector is constant on every cell of `partition` up to `tol`.
    pub fn is_measurable(&self, partition: &Partition, tol: f64) -> bool {
        if partition.len() != self.n_scenarios() {
            return false;
        }
        let mut reference: Vec<Option<usize>> = vec![None; partition.n_cells()];
        for (i, &c) in partition.labels().iter().enumerate() {
            match reference[c] {
                None => reference[c] = Some(i),
                Some(j) => {
                    if self.row(i).iter().zip(self.row(j)).any(|(a, b)| (a - b).abs() > tol) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

impl Add for &RandomVector {
    type Output = RandomVector;
    fn add(self, rhs: &RandomVector) -> RandomVector {
        self.zip_with(rhs, |x, y| x + y)
    }
}

impl Sub for &RandomVector {
    type Output = RandomVector;
    fn sub(self, rhs: &RandomVector) -> RandomVector {
        self.zip_with(rhs, |x, y| x - y)
    }
}

impl Mul<f64> for &RandomVector {
    type Output = RandomVector;
    fn mul(self, rhs: f64) -> RandomVector {
        self.map(|v| v * rhs)
    }
}

impl Neg for &RandomVector {
    type Output = RandomVector;
    fn neg(self) -> RandomVector {
        self.map(|v| -v)
    }
}

/// `E_mu[X]`, one entry per coordinate.
pub fn expectation(x: &RandomVector, mu: Measure) -> Result<Vec<f64>> {
    let w = x.space.weights(mu)?;
    let mut out = vec![0.0; x.dim];
    for (row, wi) in x.rows().zip(w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += wi * v;
        }
    }
    Ok(out)
}

/// Scalar expectation; errors unless `D = 1`.
pub fn mean(x: &RandomVector, mu: Measure) -> Result<f64> {
    x.ensure_scalar()?;
    Ok(expectation(x, mu)?[0])
}

/// Conditional expectation onto the partition: the `mu`-weighted average of each cell.
pub fn cond_expectation(x: &RandomVector, partition: &Partition, mu: Measure) -> Result<RandomVector> {
    let n = x.n_scenarios();
    if partition.len() != n {
        return Err(Error::Shape(format!(
            "partition covers {} scenarios, random vector has {n}",
            partition.len()
        )));
    }
    let w = x.space.weights(mu)?;
    let d = x.dim;
    let mut sums = vec![0.0; partition.n_cells() * d];
    let mut mass = vec![0.0; partition.n_cells()];
    for ((row, &c), wi) in x.rows().zip(partition.labels()).zip(w) {
        mass[c] += wi;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
            *s += wi * v;
        }
    }
    for (c, m) in mass.iter().enumerate() {
        for s in &mut sums[c * d..(c + 1) * d] {
            *s /= m;
        }
    }
    let mut out = Vec::with_capacity(n * d);
    for &c in partition.labels() {
        out.extend_from_slice(&sums[c * d..(c + 1) * d]);
    }
    Ok(x.with_values(d, out))
}

/// The `L²(mu)` pairing `E_mu[<X, Y>]`.
pub fn inner(x: &RandomVector, y: &RandomVector, mu: Measure) -> Result<f64> {
    x.ensure_compatible(y)?;
    let w = x.space.weights(mu)?;
    Ok(x
        .rows()
        .zip(y.rows())
        .zip(w)
        .map(|((a, b), wi)| wi * a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
        .sum())
}

pub fn l2_norm(x: &RandomVector, mu: Measure) -> Result<f64> {
    Ok(inner(x, x, mu)?.max(0.0).sqrt())
}

/// `L²(mu)` distance between two vectors.
pub fn l2_distance(x: &RandomVector, y: &RandomVector, mu: Measure) -> Result<f64> {
    x.ensure_compatible(y)?;
    l2_norm(&(x - y), mu)
}

/// Writes an ensemble as CSV: `weight_p, weight_q, cell, v0..v{D-1}`.
pub fn write_csv<W: io::Write>(x: &RandomVector, out: W) -> csv::Result<()> {
    let space = x.space();
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["weight_p".to_string(), "weight_q".into(), "cell".into()];
    header.extend((0..x.dim()).map(|d| format!("v{d}")));
    wtr.write_record(&header)?;
    for (i, row) in x.rows().enumerate() {
        let mut rec = vec![
            format!("{:e}", space.weights_p()[i]),
            space.weights_q().map(|q| format!("{:e}", q[i])).unwrap_or_default(),
            space.partition().label(i).to_string(),
        ];
        rec.extend(row.iter().map(|v| format!("{v:e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an ensemble written by [`write_csv`]. An empty `weight_q` column means no `Q`.
pub fn read_csv<R: io::Read>(input: R) -> Result<RandomVector> {
    let mut rdr = csv::Reader::from_reader(input);
    let parse_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let headers = rdr.headers().map_err(parse_err)?.clone();
    if headers.len() < 4 || &headers[0] != "weight_p" || &headers[1] != "weight_q" || &headers[2] != "cell" {
        return Err(Error::Config("expected header weight_p,weight_q,cell,v0,...".into()));
    }
    let dim = headers.len() - 3;
    let (mut wp, mut wq, mut cells, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut has_q = true;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(parse_err)?;
        let field = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("row {}, column {}: {e}", line + 1, &headers[k])))
        };
        wp.push(field(0)?);
        if rec[1].trim().is_empty() {
            has_q = false;
        } else {
            wq.push(field(1)?);
        }
        cells.push(
            rec[2]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("row {}, column cell: {e}", line + 1)))?,
        );
        for k in 3..3 + dim {
            values.push(field(k)?);
        }
    }
    let q = if has_q && wq.len() == wp.len() { Some(wq) } else { None };
    let space = ScenarioSpace::new(wp, q, Partition::new(cells)?)?;
    RandomVector::new(Arc::new(space), dim, values)
}
