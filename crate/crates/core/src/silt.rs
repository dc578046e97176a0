//! Approximating self-intersection local times `T_{eps,k,delta}`, their exact
//! first and second moments, Rosen centering and the L2-Cauchy diagnostic.
//!
//! Every functional here is integrated with the same [`SimplexRule`], so the
//! moment formulas are the exact expectations of the path functional computed
//! on the same lattice.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridContext;
use crate::operator::OperatorMatrix;
use crate::process::{NodeCovariance, PathSample};
use crate::scalar::{CompensatedSum, Real};
use crate::simplex::SimplexRule;

/// Largest `k` whose second moment runs without the `expensive` flag.
pub const CHEAP_SECOND_MOMENT_K: usize = 3;

/// `f_eps(z) = exp(-|z|^2 / (2 eps)) / (2 pi eps)`
pub fn gaussian_kernel(z: (f64, f64), eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(planar_kernel(z.0 * z.0 + z.1 * z.1, eps))
}

/// One-coordinate density `exp(-z^2 / (2 eps)) / sqrt(2 pi eps)`; the planar
/// kernel is the product of two of these.
pub fn coordinate_kernel(z: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok((-z * z / (2.0 * eps)).exp() / (2.0 * PI * eps).sqrt())
}

#[inline]
fn planar_kernel(r2: f64, eps: f64) -> f64 {
    (-r2 / (2.0 * eps)).exp() / (2.0 * PI * eps)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveEps(eps))
    }
}

/// Quadrature lattice shared by every estimator on the grid `ctx`.
pub fn silt_rule(ctx: GridContext, k: usize, delta: f64) -> Result<SimplexRule> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if !(delta * ctx.n() as f64 >= 2.0 - 1e-9) {
        return Err(Error::InvalidInput(format!(
            "delta = {delta} is below two cells (2/n = {})",
            2.0 / ctx.n() as f64
        )));
    }
    SimplexRule::on_grid(k, ctx, delta)
}

/// `T_{eps,k,delta}` of one planar path.
pub fn approx_silt<T: Real>(path: &PathSample<T>, eps: f64, k: usize, delta: f64) -> Result<f64> {
    check_eps(eps)?;
    let rule = silt_rule(path.ctx, k, delta)?;
    Ok(approx_silt_with_rule(path, eps, &rule))
}

/// [`approx_silt`] on a prebuilt rule (for batches of paths).
pub fn approx_silt_with_rule<T: Real>(path: &PathSample<T>, eps: f64, rule: &SimplexRule) -> f64 {
    let x1: Vec<f64> = path.coord1.iter().map(|v| v.as_f64()).collect();
    let x2: Vec<f64> = path.coord2.iter().map(|v| v.as_f64()).collect();
    let (value, _) = rule.integrate(|nodes| {
        let r2: f64 = nodes
            .windows(2)
            .map(|w| {
                let (d1, d2) = (x1[w[1]] - x1[w[0]], x2[w[1]] - x2[w[0]]);
                d1 * d1 + d2 * d2
            })
            .sum::<f64>();
        // the product of Gaussians is one Gaussian in the summed radii
        let m = (nodes.len() - 1) as i32;
        Some((-r2 / (2.0 * eps)).exp() / (2.0 * PI * eps).powi(m))
    });
    value
}

/// `E prod_i f_eps(dx_i) = (2 pi)^{-m} det(C + eps I)^{-1}` for the planar
/// process whose per-coordinate increment covariance is `C` (`m x m`).
pub fn planar_kernel_expectation(c: &[f64], m: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let mut a = c.to_vec();
    for i in 0..m {
        a[i * m + i] += eps;
    }
    let det =
        spd_det(&mut a, m).ok_or_else(|| Error::Numerical("smoothed covariance is not positive definite".into()))?;
    Ok(1.0 / ((2.0 * PI).powi(m as i32) * det))
}

/// One-coordinate building block `(2 pi)^{-m/2} det(C + eps I)^{-1/2}`.
pub fn coordinate_kernel_expectation(c: &[f64], m: usize, eps: f64) -> Result<f64> {
    Ok(planar_kernel_expectation(c, m, eps)?.sqrt())
}

/// Determinant of a small symmetric positive definite row-major matrix via
/// Cholesky; `None` when a pivot is not positive.
pub(crate) fn spd_det(a: &mut [f64], m: usize) -> Option<f64> {
    let mut det = 1.0;
    for j in 0..m {
        let mut d = a[j * m + j];
        for p in 0..j {
            d -= a[j * m + p] * a[j * m + p];
        }
        if !(d > 0.0) {
            return None;
        }
        let l = d.sqrt();
        a[j * m + j] = l;
        det *= d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for p in 0..j {
                s -= a[i * m + p] * a[j * m + p];
            }
            a[i * m + j] = s / l;
        }
    }
    Some(det)
}

/// Node covariance converted once to `f64` for hot quadrature loops.
pub(crate) struct CovTable {
    stride: usize,
    c: Vec<f64>,
}

impl CovTable {
    pub(crate) fn new<T: Real>(op: &OperatorMatrix<T>) -> Self {
        let cov = NodeCovariance::from_operator(op);
        let n1 = op.ctx().n() + 1;
        let mut c = Vec::with_capacity(n1 * n1);
        for i in 0..n1 {
            for j in 0..n1 {
                c.push(cov.node(i, j).as_f64());
            }
        }
        Self { stride: n1, c }
    }

    #[inline]
    pub(crate) fn node(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.stride + j]
    }

    /// `<g_b - g_a, g_d - g_c>`
    #[inline]
    pub(crate) fn increment(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.node(b, d) - self.node(b, c) - self.node(a, d) + self.node(a, c)
    }

    /// Gram of the consecutive increments of `nodes` into `out` (row-major).
    #[inline]
    pub(crate) fn fill(&self, nodes: &[usize], out: &mut [f64]) {
        let m = nodes.len() - 1;
        for i in 0..m {
            for j in i..m {
                let v = self.increment(nodes[i], nodes[i + 1], nodes[j], nodes[j + 1]);
                out[i * m + j] = v;
                out[j * m + i] = v;
            }
        }
    }
}

/// `E T_{eps,k,delta}` by quadrature of `(2 pi)^{-(k-1)} det(C_inc + eps I)^{-1}`.
pub fn expected_silt<T: Real>(op: &OperatorMatrix<T>, eps: f64, k: usize, delta: f64) -> Result<f64> {
    check_eps(eps)?;
    let rule = silt_rule(op.ctx(), k, delta)?;
    let table = CovTable::new(op);
    Ok(expected_silt_with(&table, &rule, eps))
}

fn expected_silt_with(table: &CovTable, rule: &SimplexRule, eps: f64) -> f64 {
    let m = rule.k() - 1;
    let norm = (2.0 * PI).powi(m as i32);
    let (value, _) = rule.integrate(|nodes| {
        let mut buf = [0.0f64; 144];
        let a = &mut buf[..m * m];
        table.fill(nodes, a);
        for i in 0..m {
            a[i * m + i] += eps;
        }
        spd_det(a, m).map(|d| 1.0 / (norm * d))
    });
    value
}

/// `E T_{eps1} T_{eps2}` by quadrature over pairs of tuples of
/// `(2 pi)^{-(2k-2)} det(C_ts + diag(eps1 I, eps2 I))^{-1}`.
///
/// `k > 3` requires `expensive = true`.
pub fn second_moment<T: Real>(
    op: &OperatorMatrix<T>,
    eps1: f64,
    eps2: f64,
    k: usize,
    delta: f64,
    expensive: bool,
) -> Result<f64> {
    check_eps(eps1)?;
    check_eps(eps2)?;
    if k > CHEAP_SECOND_MOMENT_K && !expensive {
        return Err(Error::ExpensiveMoment { k });
    }
    let rule = silt_rule(op.ctx(), k, delta)?;
    let table = CovTable::new(op);
    Ok(second_moment_with(&table, &rule, eps1, eps2))
}

fn second_moment_with(table: &CovTable, rule: &SimplexRule, eps1: f64, eps2: f64) -> f64 {
    let m = rule.k() - 1;
    let dim = 2 * m;
    let norm = (2.0 * PI).powi(dim as i32);
    let len = rule.len();
    const CHUNK: usize = 64;
    let outer: Vec<usize> = (0..len).collect();
    let partials: Vec<CompensatedSum<f64>> = outer
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = CompensatedSum::new();
            let mut buf = [0.0f64; 576];
            let mut nodes = [0usize; 26];
            for &p in chunk {
                let tp = rule.point(p);
                let wp = rule.weight(p);
                let mut inner = CompensatedSum::new();
                for q in 0..len {
                    let tq = rule.point(q);
                    let k1 = tp.len();
                    nodes[..k1].copy_from_slice(tp);
                    nodes[k1..2 * k1].copy_from_slice(tq);
                    let a = &mut buf[..dim * dim];
                    for i in 0..dim {
                        let (ia, ib) = interval(&nodes, k1, i);
                        for j in i..dim {
                            let (ja, jb) = interval(&nodes, k1, j);
                            let v = table.increment(ia, ib, ja, jb);
                            a[i * dim + j] = v;
                            a[j * dim + i] = v;
                        }
                        a[i * dim + i] += if i < m { eps1 } else { eps2 };
                    }
                    if let Some(d) = spd_det(a, dim) {
                        inner.add(rule.weight(q) / (norm * d));
                    }
                }
                acc.add(wp * inner.value());
            }
            acc
        })
        .collect();
    let mut total = CompensatedSum::new();
    for p in &partials {
        total.merge(p);
    }
    total.value()
}

/// Endpoints of increment `i` of the concatenated tuple pair.
#[inline]
fn interval(nodes: &[usize], k: usize, i: usize) -> (usize, usize) {
    let m = k - 1;
    if i < m {
        (nodes[i], nodes[i + 1])
    } else {
        let j = i - m;
        (nodes[k + j], nodes[k + j + 1])
    }
}

/// Subtracts the compensated sample mean; the output sums to zero up to the
/// last rounding of each entry.
pub fn rosen_center(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot center an empty sample".into()));
    }
    let mean = values.iter().copied().collect::<CompensatedSum<f64>>().value() / values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    // remove the residual left by rounding in one more compensated pass
    let resid = centered.iter().copied().collect::<CompensatedSum<f64>>().value() / values.len() as f64;
    Ok(centered.into_iter().map(|v| v - resid).collect())
}

/// One row of a moment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub eps1: f64,
    pub eps2: f64,
    pub moment: f64,
    /// `m(e1,e1) - 2 m(e1,e2) + m(e2,e2)` for consecutive ladder pairs.
    pub cauchy_increment: Option<f64>,
}

/// Cross moments `E T_{eps_i} T_{eps_j}` along an epsilon ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub epsilons: Vec<f64>,
    pub first_moments: Vec<f64>,
    /// Symmetric `len x len` matrix, row-major.
    pub cross_moments: Vec<Vec<f64>>,
    /// `E (T_{eps_i} - T_{eps_{i+1}})^2`.
    pub cauchy_increments: Vec<f64>,
    pub k: usize,
    pub delta_requested: f64,
    pub delta_effective: f64,
    pub grid_n: usize,
    pub quadrature_points: usize,
    pub operator: String,
}

impl MomentTable {
    pub fn rows(&self) -> Vec<MomentRow> {
        let len = self.epsilons.len();
        let mut rows = Vec::with_capacity(len * len);
        for i in 0..len {
            for j in 0..len {
                rows.push(MomentRow {
                    eps1: self.epsilons[i],
                    eps2: self.epsilons[j],
                    moment: self.cross_moments[i][j],
                    cauchy_increment: (j == i + 1).then(|| self.cauchy_increments[i]),
                });
            }
        }
        rows
    }

    /// CSV with columns `eps1,eps2,moment,cauchy_increment` (empty increment
    /// off the consecutive pairs).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(["eps1", "eps2", "moment", "cauchy_increment"])
            .map_err(io)?;
        for r in self.rows() {
            w.write_record([
                r.eps1.to_string(),
                r.eps2.to_string(),
                r.moment.to_string(),
                r.cauchy_increment.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("json: {e}")))
    }

    /// Increments are nonnegative (within `tol`) and strictly decreasing.
    pub fn is_convergent(&self, tol: f64) -> bool {
        self.cauchy_increments.iter().all(|&v| v >= -tol) && self.cauchy_increments.windows(2).all(|w| w[1] < w[0])
    }
}

/// Fills the cross-moment matrix along a ladder and reports the L2-Cauchy
/// increments of consecutive pairs.
pub fn cauchy_diagnostic<T: Real>(
    op: &OperatorMatrix<T>,
    eps_ladder: &[f64],
    k: usize,
    delta: f64,
    expensive: bool,
) -> Result<MomentTable> {
    if eps_ladder.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "epsilon ladder needs at least 3 entries, got {}",
            eps_ladder.len()
        )));
    }
    for &e in eps_ladder {
        check_eps(e)?;
    }
    if eps_ladder.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidInput("epsilon ladder must be nonincreasing".into()));
    }
    if k > CHEAP_SECOND_MOMENT_K && !expensive {
        return Err(Error::ExpensiveMoment { k });
    }
    let rule = silt_rule(op.ctx(), k, delta)?;
    let table = CovTable::new(op);
    let len = eps_ladder.len();
    let mut cross = vec![vec![0.0; len]; len];
    for i in 0..len {
        for j in i..len {
            let v = if eps_ladder[i] == eps_ladder[j] && i != j {
                cross[i][i]
            } else {
                second_moment_with(&table, &rule, eps_ladder[i], eps_ladder[j])
            };
            cross[i][j] = v;
            cross[j][i] = v;
        }
    }
    let first_moments = eps_ladder
        .iter()
        .map(|&e| expected_silt_with(&table, &rule, e))
        .collect();
    let cauchy_increments = (0..len - 1)
        .map(|i| cross[i][i] - 2.0 * cross[i][i + 1] + cross[i + 1][i + 1])
        .collect();
    Ok(MomentTable {
        epsilons: eps_ladder.to_vec(),
        first_moments,
        cross_moments: cross,
        cauchy_increments,
        k,
        delta_requested: delta,
        delta_effective: rule.delta_effective(),
        grid_n: op.ctx().n(),
        quadrature_points: rule.len(),
        operator: op.spec().kind_name().to_string(),
    })
}

/// Sample mean and standard error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<CompensatedSum<f64>>().value() / n;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum<f64>>()
        .value()
        / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
