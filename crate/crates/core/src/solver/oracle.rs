//! Exhaustive reference minimizers for small instances.

use super::{objective_value, RiskPerspective};
use crate::error::{Error, Result};
use crate::scenario::RandomVector;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
/// Returns `(x_min, f_min)`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Grid settings for [`brute_force_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Grid points per parameter when there is a single parameter.
    pub points_per_dim: usize,
    /// Cap on total grid points when there are several parameters.
    pub budget: usize,
    /// Final bracket width of the golden-section refinement.
    pub refine_tol: f64,
    /// Weight of the exact penalty on feature-set violation.
    pub penalty: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points_per_dim: 2001, budget: 40_401, refine_tol: 1e-10, penalty: 1e4 }
    }
}

/// Largest number of free parameters (cells × dimension) the oracle accepts.
pub const MAX_PARAMETERS: usize = 4;

/// Minimizes the conditioning objective over cell-constant vectors by a dense
/// grid followed by nested golden-section refinement around the best grid point.
///
/// Feature-set constraints enter through an exact penalty. Ties on the grid go
/// to the smallest grid index.
pub fn brute_force_oracle(x: &RandomVector, perspective: &RiskPerspective, grid: &GridSpec) -> Result<RandomVector> {
    let partition = perspective.partition();
    let dim = x.dim();
    let k = partition.n_cells() * dim;
    if k > MAX_PARAMETERS {
        return Err(Error::Domain(format!(
            "oracle handles at most {MAX_PARAMETERS} parameters, instance has {k}"
        )));
    }
    if partition.len() != x.n_scenarios() {
        return Err(Error::Shape("perspective partition does not match the scenario count".into()));
    }
    let mu = perspective.conditioning_measure();
    let build = |params: &[f64]| -> RandomVector {
        x.map_rows(dim, |i, _, out| {
            let c = partition.label(i);
            out.copy_from_slice(&params[c * dim..(c + 1) * dim]);
        })
    };
    let eval = |params: &[f64]| -> f64 {
        let z = build(params);
        let penalty = perspective.phi().violation(&z, mu).unwrap_or(f64::INFINITY);
        match objective_value(x, &z, perspective) {
            Ok(v) => v + grid.penalty * penalty,
            Err(_) => f64::INFINITY,
        }
    };

    let bounds: Vec<(f64, f64)> = (0..k)
        .map(|p| {
            let coord = p % dim;
            let (lo, hi) = x
                .rows()
                .map(|r| r[coord])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            (lo - 1.0, hi + 1.0)
        })
        .collect();
    let points = if k == 1 {
        grid.points_per_dim
    } else {
        ((grid.budget as f64).powf(1.0 / k as f64).floor() as usize).min(grid.points_per_dim)
    }
    .max(3);
    let steps: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / (points - 1) as f64).collect();

    let mut index = vec![0usize; k];
    let mut params: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut best = (f64::INFINITY, params.clone());
    'grid: loop {
        for p in 0..k {
            params[p] = bounds[p].0 + steps[p] * index[p] as f64;
        }
        let v = eval(&params);
        if v < best.0 {
            best = (v, params.clone());
        }
        // odometer, last parameter fastest
        let mut p = k;
        loop {
            if p == 0 {
                break 'grid;
            }
            p -= 1;
            index[p] += 1;
            if index[p] < points {
                break;
            }
            index[p] = 0;
        }
    }

    let window: Vec<(f64, f64)> = (0..k).map(|p| (best.1[p] - 2.0 * steps[p], best.1[p] + 2.0 * steps[p])).collect();
    let mut work = best.1.clone();
    nested_golden(&eval, &window, 0, &mut work, grid.refine_tol);
    let refined = if eval(&work) <= best.0 { work } else { best.1 };
    Ok(build(&refined))
}

/// Minimizes over `params[depth..]` with earlier parameters held fixed;
/// leaves the minimizer in `params` and returns the minimum.
fn nested_golden(f: &dyn Fn(&[f64]) -> f64, window: &[(f64, f64)], depth: usize, params: &mut Vec<f64>, tol: f64) -> f64 {
    if depth == window.len() {
        return f(params);
    }
    let (lo, hi) = window[depth];
    let (arg, _) = golden_section(
        |t| {
            params[depth] = t;
            nested_golden(f, window, depth + 1, params, tol)
        },
        lo,
        hi,
        tol,
    );
    params[depth] = arg;
    nested_golden(f, window, depth + 1, params, tol)
}
