//! Fourier–Wiener transform integrands of the formal SILT, their regularized
//! forms, lattice quadrature over (delta-separated) simplices, and local scans
//! near kernel-induced singularities.
//!
//! Pointwise functions work on grid functions directly; quadrature uses the
//! node covariance table and the node pairings `<h, A 1_[0, j/n]>`, so that a
//! tuple costs `O(k^3)` instead of `O(n k)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    gram_det, orthonormalize, projection_norm_sq, subset_projection_terms, GridContext, GridFunction, DEFAULT_ORTHO_TOL,
};
use crate::operator::{kernel_indicator_nodes, OperatorMatrix, DEFAULT_INDICATOR_TOL};
use crate::scalar::Real;
use crate::silt::CovTable;
use crate::simplex::{snap_gap, SimplexPoint, SimplexRule};

/// Relative pivot below which a tuple's increments count as dependent in
/// quadrature (a singular hit).
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-12;

/// Mesh strides of the refinement levels, coarsest first.
pub const LEVEL_STRIDES: [usize; 3] = [4, 2, 1];

/// Test directions of the transform.
#[derive(Clone, Debug)]
pub struct FwtProbe<T: Real> {
    pub h1: GridFunction<T>,
    pub h2: GridFunction<T>,
    pub label: String,
}

impl<T: Real> FwtProbe<T> {
    pub fn new(h1: GridFunction<T>, h2: GridFunction<T>, label: impl Into<String>) -> Result<Self> {
        h1.ctx().check(&h2.ctx())?;
        if !(h1.norm().is_finite() && h2.norm().is_finite()) {
            return Err(Error::InvalidInput("probe directions must have finite norm".into()));
        }
        Ok(Self {
            h1,
            h2,
            label: label.into(),
        })
    }

    pub fn zero(ctx: GridContext) -> Self {
        Self {
            h1: GridFunction::zeros(ctx),
            h2: GridFunction::zeros(ctx),
            label: "zero".into(),
        }
    }
}

/// Which integrand a quadrature report integrates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FwtMode {
    /// Subset-alternating regularized integrand over the full simplex.
    Thm1FullSimplex,
    /// Compensated `k = 2` integrand over the full simplex.
    Thm2K2,
    /// Unregularized integrand over the delta-separated simplex.
    Eq3Delta { delta: f64 },
}

impl FwtMode {
    pub fn name(&self) -> &'static str {
        match self {
            FwtMode::Thm1FullSimplex => "thm1_full_simplex",
            FwtMode::Thm2K2 => "thm2_k2",
            FwtMode::Eq3Delta { .. } => "eq3_delta",
        }
    }
}

/// One refinement level of a quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    /// Mesh of the level (`grid_n / stride`).
    pub n: usize,
    pub value: f64,
    pub singular_hits: usize,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub value: f64,
    pub levels: Vec<LevelValue>,
    /// `|value(last) - value(second to last)|`.
    pub error_estimate: f64,
    /// Excluded tuples at the finest level.
    pub singular_hits: usize,
    pub integrand: String,
    pub k: usize,
    pub delta_requested: f64,
    pub delta_effective: f64,
    /// Whether the `(2 pi)^{-(k-1)}` factor is applied.
    pub two_pi_factor: bool,
    /// `"positive"` for `1 - exp(..)` brackets, `"negative"` for `exp(..) - 1`,
    /// `"none"` for unregularized integrands.
    pub sign_convention: String,
    pub operator: String,
}

impl QuadratureReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("json: {e}")))
    }

    /// `error_estimate / |value|`, or the absolute estimate at zero.
    pub fn relative_change(&self) -> f64 {
        if self.value == 0.0 {
            self.error_estimate
        } else {
            self.error_estimate / self.value.abs()
        }
    }
}

fn increment_images<T: Real>(op: &OperatorMatrix<T>, times: &SimplexPoint) -> Result<Vec<GridFunction<T>>> {
    op.ctx().check(&times.ctx())?;
    let nodes = times.nodes();
    if let Some(w) = nodes.windows(2).find(|w| w[0] == w[1]) {
        let t = times.ctx().time(w[0]);
        return Err(Error::DegenerateInterval { t1: t, t2: t });
    }
    Ok(nodes.windows(2).map(|w| op.apply_indicator(w[0], w[1])).collect())
}

/// Determinant of the increment Gram, rejecting singular tuples. Besides the
/// relative eigenvalue clamp, an increment whose image is negligible against
/// `sigma_max^2 |t_{i+1} - t_i|` is singular on its own.
fn nonsingular_gram<T: Real>(op: &OperatorMatrix<T>, times: &SimplexPoint, incs: &[GridFunction<T>]) -> Result<T> {
    let ctx = op.ctx();
    let scale = op.sigma_max().as_f64().powi(2);
    for (w, e) in times.nodes().windows(2).zip(incs) {
        let floor = SINGULAR_PIVOT_RTOL * scale * ctx.time(w[1] - w[0]);
        let e2 = e.norm_sq().as_f64();
        if !(e2 > floor) {
            return Err(Error::SingularGram { det: e2 });
        }
    }
    let g = gram_det(incs)?;
    if g.is_singular() {
        return Err(Error::SingularGram { det: g.det.as_f64() });
    }
    Ok(g.det)
}

/// `(2 pi)^{-(k-1)} G^{-1} exp(-(|P h1|^2 + |P h2|^2) / 2)` with `P` the
/// projection onto the span of the increment images.
pub fn fwt_integrand<T: Real>(op: &OperatorMatrix<T>, times: &SimplexPoint, probe: &FwtProbe<T>) -> Result<T> {
    let incs = increment_images(op, times)?;
    let g = nonsingular_gram(op, times, &incs)?;
    let frame = orthonormalize(&incs, T::lit(DEFAULT_ORTHO_TOL))?;
    let p1 = projection_norm_sq(&frame, &probe.h1)?;
    let p2 = projection_norm_sq(&frame, &probe.h2)?;
    let norm = T::lit((2.0 * PI).powi(incs.len() as i32));
    Ok((-(p1 + p2) * T::lit(0.5)).exp() / (norm * g))
}

/// `G^{-1} sum_M (-1)^{|M|} exp(-|P_M h|^2 / 2)` over subsets of increments.
pub fn regularized_integrand_thm1<T: Real>(
    op: &OperatorMatrix<T>,
    times: &SimplexPoint,
    h: &GridFunction<T>,
) -> Result<T> {
    let incs = increment_images(op, times)?;
    let g = nonsingular_gram(op, times, &incs)?;
    let terms = subset_projection_terms(&incs, h)?;
    Ok(terms.alternating_sum() / g)
}

/// `|A 1_[t1,t2]|^{-2} (exp(-|P_{t1 t2} h|^2 / 2) - 1)`.
pub fn thm2_integrand<T: Real>(op: &OperatorMatrix<T>, t1: f64, t2: f64, h: &GridFunction<T>) -> Result<T> {
    let ctx = op.ctx();
    ctx.check(&h.ctx())?;
    let (j1, j2) = (ctx.snap(t1), ctx.snap(t2));
    if j1 >= j2 {
        return Err(Error::DegenerateInterval { t1, t2 });
    }
    let e = op.apply_indicator(j1, j2);
    let len = T::lit(ctx.time(j2 - j1));
    let e2 = e.norm_sq();
    if e2 <= T::lit(DEFAULT_INDICATOR_TOL * DEFAULT_INDICATOR_TOL) * len {
        return Err(Error::KernelIndicator {
            t1: ctx.time(j1),
            t2: ctx.time(j2),
        });
    }
    let c = h.inner(&e);
    Ok((-(c * c / e2) * T::lit(0.5)).exp_m1() / e2)
}

/// Precomputed node tables for fast tuple evaluation.
struct TupleEvaluator {
    cov: CovTable,
    /// `<h, A 1_[0, j/n]>` per probe direction.
    pairings: Vec<Vec<f64>>,
    /// Floor scale: a pivot of `1_[a, b]` is compared against
    /// `sigma_max^2 (b - a) / n`, the largest value `|A 1_[a, b]|^2` can
    /// take, so an increment lying in the kernel counts as singular even
    /// when it is the only one in the tuple.
    pivot_scale: f64,
}

/// Cholesky data of one tuple.
struct TupleGram {
    det: f64,
    /// Squared coefficients of the probe directions along the Gram–Schmidt
    /// basis of the increments, per direction.
    coeff_sq: [[f64; 12]; 2],
    m: usize,
}

impl TupleEvaluator {
    fn new<T: Real>(op: &OperatorMatrix<T>, hs: &[&GridFunction<T>]) -> Result<Self> {
        let n = op.ctx().n();
        let g = op.node_images();
        let mut pairings = Vec::with_capacity(hs.len());
        for h in hs {
            op.ctx().check(&h.ctx())?;
            let p = g.tr_mul(h.values()) / T::of_usize(n);
            pairings.push(p.iter().map(|v| v.as_f64()).collect());
        }
        Ok(Self {
            cov: CovTable::new(op),
            pairings,
            pivot_scale: op.sigma_max().as_f64().powi(2) / n as f64,
        })
    }

    /// `None` for singular tuples.
    fn eval(&self, nodes: &[usize]) -> Option<TupleGram> {
        let m = nodes.len() - 1;
        let mut a = [0.0f64; 144];
        let a = &mut a[..m * m];
        self.cov.fill(nodes, a);
        let mut det = 1.0;
        for j in 0..m {
            let diag = a[j * m + j];
            let mut d = diag;
            for p in 0..j {
                d -= a[j * m + p] * a[j * m + p];
            }
            let len = (nodes[j + 1] - nodes[j]) as f64;
            let floor = SINGULAR_PIVOT_RTOL * diag.max(self.pivot_scale * len);
            if !(d > floor) || !(diag > 1e-300) {
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
        let mut coeff_sq = [[0.0f64; 12]; 2];
        for (slot, beta) in self.pairings.iter().enumerate() {
            let mut c = [0.0f64; 12];
            for i in 0..m {
                let mut s = beta[nodes[i + 1]] - beta[nodes[i]];
                for p in 0..i {
                    s -= a[i * m + p] * c[p];
                }
                c[i] = s / a[i * m + i];
                coeff_sq[slot][i] = c[i] * c[i];
            }
        }
        Some(TupleGram { det, coeff_sq, m })
    }
}

fn level_rules(k: usize, n: usize, delta: f64) -> Result<Vec<SimplexRule>> {
    let strides: Vec<usize> = LEVEL_STRIDES
        .iter()
        .copied()
        .filter(|&s| n.is_multiple_of(s) && n / s >= 2)
        .collect();
    let coarsest = n / strides[0];
    let gap0 = snap_gap(delta, coarsest);
    strides
        .iter()
        .map(|&s| SimplexRule::new(k, n, s, gap0 * (strides[0] / s)))
        .collect()
}

fn run_levels<F>(rules: &[SimplexRule], f: F) -> (Vec<LevelValue>, f64, f64)
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let levels: Vec<LevelValue> = rules
        .iter()
        .map(|r| {
            let (value, hits) = r.integrate(&f);
            LevelValue {
                n: r.mesh(),
                value,
                singular_hits: hits,
                points: r.len(),
            }
        })
        .collect();
    let last = levels.len() - 1;
    let value = levels[last].value;
    let err = if last > 0 {
        (levels[last].value - levels[last - 1].value).abs()
    } else {
        f64::NAN
    };
    (levels, value, err)
}

/// `int_{Delta_k^delta} G^{-1}` over refinement levels of the operator grid.
pub fn theorem3_integral<T: Real>(op: &OperatorMatrix<T>, k: usize, delta: f64) -> Result<QuadratureReport> {
    if !op.satisfies_conditions() {
        return Err(Error::ConditionsViolated(format!(
            "{} has sigma_min on the kernel complement {:e}",
            op.spec().kind_name(),
            op.sigma_min_complement().as_f64()
        )));
    }
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    let rules = level_rules(k, op.ctx().n(), delta)?;
    let ev = TupleEvaluator::new::<T>(op, &[])?;
    let (levels, value, err) = run_levels(&rules, |nodes| ev.eval(nodes).map(|g| 1.0 / g.det));
    Ok(report(
        op,
        levels,
        value,
        err,
        "inverse_gram",
        k,
        delta,
        &rules,
        false,
        "none",
    ))
}

#[allow(clippy::too_many_arguments)]
fn report<T: Real>(
    op: &OperatorMatrix<T>,
    levels: Vec<LevelValue>,
    value: f64,
    error_estimate: f64,
    integrand: &str,
    k: usize,
    delta: f64,
    rules: &[SimplexRule],
    two_pi_factor: bool,
    sign: &str,
) -> QuadratureReport {
    let singular_hits = levels.last().map_or(0, |l| l.singular_hits);
    QuadratureReport {
        value,
        levels,
        error_estimate,
        singular_hits,
        integrand: integrand.into(),
        k,
        delta_requested: delta,
        delta_effective: rules.last().map_or(0.0, |r| r.delta_effective()),
        two_pi_factor,
        sign_convention: sign.into(),
        operator: op.spec().kind_name().into(),
    }
}

/// Quadrature of the selected transform integrand with direction `h`
/// (the second direction of the unregularized form is zero).
pub fn regularized_fwt_quadrature<T: Real>(
    op: &OperatorMatrix<T>,
    k: usize,
    h: &GridFunction<T>,
    mode: FwtMode,
) -> Result<QuadratureReport> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    let n = op.ctx().n();
    match mode {
        FwtMode::Thm1FullSimplex => {
            let rules = level_rules(k, n, 0.0)?;
            let ev = TupleEvaluator::new(op, &[h])?;
            let (levels, value, err) = run_levels(&rules, |nodes| {
                ev.eval(nodes).map(|g| {
                    let prod: f64 = g.coeff_sq[0][..g.m].iter().map(|c| -(-0.5 * c).exp_m1()).product();
                    prod / g.det
                })
            });
            Ok(report(
                op,
                levels,
                value,
                err,
                mode.name(),
                k,
                0.0,
                &rules,
                false,
                "positive",
            ))
        }
        FwtMode::Thm2K2 => {
            if k != 2 {
                return Err(Error::InvalidInput(format!(
                    "the compensated integrand needs k = 2, got {k}"
                )));
            }
            if !op.spec().is_identity_plus_compact() {
                return Err(Error::UnsupportedSpec(format!(
                    "{} is not of the form I + S",
                    op.spec().kind_name()
                )));
            }
            let rules = level_rules(2, n, 0.0)?;
            let ev = TupleEvaluator::new(op, &[h])?;
            let floor = DEFAULT_INDICATOR_TOL * DEFAULT_INDICATOR_TOL;
            let (levels, value, err) = run_levels(&rules, |nodes| {
                let len = (nodes[1] - nodes[0]) as f64 / n as f64;
                ev.eval(nodes)
                    .filter(|g| g.det > floor * len)
                    .map(|g| (-0.5 * g.coeff_sq[0][0]).exp_m1() / g.det)
            });
            Ok(report(
                op,
                levels,
                value,
                err,
                mode.name(),
                2,
                0.0,
                &rules,
                false,
                "negative",
            ))
        }
        FwtMode::Eq3Delta { delta } => {
            let rules = level_rules(k, n, delta)?;
            let ev = TupleEvaluator::new(op, &[h])?;
            let norm = (2.0 * PI).powi(k as i32 - 1);
            let (levels, value, err) = run_levels(&rules, |nodes| {
                ev.eval(nodes).map(|g| {
                    let p: f64 = g.coeff_sq[0][..g.m].iter().sum();
                    (-0.5 * p).exp() / (norm * g.det)
                })
            });
            Ok(report(
                op,
                levels,
                value,
                err,
                mode.name(),
                k,
                delta,
                &rules,
                true,
                "none",
            ))
        }
    }
}

/// Node pairs on the boundary of the `l_inf` box of half-width `r` (in nodes)
/// around `(a, b)`, clipped to the grid, with `j1 < j2`.
fn box_boundary(n: usize, a: usize, b: usize, r: usize) -> Vec<(usize, usize)> {
    let lo = |c: usize| c.saturating_sub(r);
    let hi = |c: usize| (c + r).min(n);
    let mut out = Vec::new();
    for j1 in lo(a)..=hi(a) {
        for j2 in lo(b)..=hi(b) {
            let d = j1.abs_diff(a).max(j2.abs_diff(b));
            if d == r && j1 < j2 {
                out.push((j1, j2));
            }
        }
    }
    out
}

/// `|1_[j1,j2] - 1_[a,b]|^2` in cells.
fn symmetric_difference_cells(j1: usize, j2: usize, a: usize, b: usize) -> usize {
    let overlap = j2.min(b).saturating_sub(j1.max(a));
    (j2 - j1) + (b - a) - 2 * overlap
}

fn scan_setup(ctx: GridContext, t0: (f64, f64), radii: &[f64]) -> Result<(usize, usize, Vec<usize>)> {
    let (a, b) = (ctx.snap(t0.0), ctx.snap(t0.1));
    if a >= b {
        return Err(Error::DegenerateInterval { t1: t0.0, t2: t0.1 });
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("radii must be a nonempty decreasing list".into()));
    }
    let n = ctx.n() as f64;
    let mut half_widths = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r * n >= 2.0 - 1e-9) {
            return Err(Error::InvalidInput(format!("radius {r} is below two cells")));
        }
        half_widths.push((r * n).round() as usize);
    }
    Ok((a, b, half_widths))
}

/// For each radius, the largest `|<h, d / |d|>|` with
/// `d = 1_[t1,t2] - 1_[t0]` over the box boundary around `t0`.
pub fn lemma2_weak_convergence_scan<T: Real>(h: &GridFunction<T>, t0: (f64, f64), radii: &[f64]) -> Result<Vec<f64>> {
    let ctx = h.ctx();
    let n = ctx.n();
    let (a, b, half_widths) = scan_setup(ctx, t0, radii)?;
    // prefix[j] = <h, 1_[0, j/n]>
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + h.values()[i].as_f64() / n as f64;
    }
    let base = prefix[b] - prefix[a];
    half_widths
        .iter()
        .map(|&r| {
            box_boundary(n, a, b, r)
                .par_iter()
                .map(|&(j1, j2)| {
                    let cells = symmetric_difference_cells(j1, j2, a, b);
                    if cells == 0 {
                        return Err(Error::DegenerateDifference {
                            t1: ctx.time(j1),
                            t2: ctx.time(j2),
                        });
                    }
                    let dn = (cells as f64 / n as f64).sqrt();
                    Ok(((prefix[j2] - prefix[j1] - base) / dn).abs())
                })
                .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
        })
        .collect()
}

/// Extremes of a ratio over one box boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBounds {
    pub radius: f64,
    pub min: f64,
    pub max: f64,
}

impl RatioBounds {
    /// `max(|min - 1|, |max - 1|)`
    pub fn deviation(&self) -> f64 {
        (self.min - 1.0).abs().max((self.max - 1.0).abs())
    }
}

/// For each radius, min and max of `|A 1_[t1,t2]|^2 / |1_[t1,t2] - 1_[t0]|^2`
/// over the box boundary around a kernel indicator `t0`.
pub fn lemma3_ratio_scan<T: Real>(op: &OperatorMatrix<T>, t0: (f64, f64), radii: &[f64]) -> Result<Vec<RatioBounds>> {
    let ctx = op.ctx();
    let n = ctx.n();
    let (a, b, half_widths) = scan_setup(ctx, t0, radii)?;
    if !kernel_indicator_nodes(op, DEFAULT_INDICATOR_TOL).contains(&(a, b)) {
        return Err(Error::NotAKernelIndicator { t1: t0.0, t2: t0.1 });
    }
    let cov = CovTable::new(op);
    radii
        .iter()
        .zip(&half_widths)
        .map(|(&radius, &r)| {
            let pts = box_boundary(n, a, b, r);
            let ratios: Vec<f64> = pts
                .par_iter()
                .map(|&(j1, j2)| {
                    let cells = symmetric_difference_cells(j1, j2, a, b);
                    cov.increment(j1, j2, j1, j2) / (cells as f64 / n as f64)
                })
                .collect();
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(RatioBounds { radius, min, max })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_indicator;
    use crate::operator::{build_operator, OperatorSpec, Profile};
    use approx::assert_relative_eq;

    fn ctx(n: usize) -> GridContext {
        GridContext::new(n).unwrap()
    }

    fn wiener(n: usize) -> OperatorMatrix<f64> {
        build_operator(&OperatorSpec::Identity, ctx(n)).unwrap()
    }

    fn bridge(n: usize, b: f64) -> OperatorMatrix<f64> {
        let spec = OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Indicator { a: 0.0, b }],
        };
        build_operator(&spec, ctx(n)).unwrap()
    }

    fn point(n: usize, times: &[f64]) -> SimplexPoint {
        SimplexPoint::from_times(ctx(n), times, 0.0).unwrap()
    }

    #[test]
    fn fwt_integrand_examples() {
        let w = wiener(16);
        let zero = FwtProbe::zero(ctx(16));
        let v = fwt_integrand(&w, &point(16, &[0.25, 0.75]), &zero).unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * PI * 0.5), max_relative = 1e-12);
        let v3 = fwt_integrand(&w, &point(16, &[0.0, 0.25, 0.75]), &zero).unwrap();
        assert_relative_eq!(v3, 1.0 / ((2.0 * PI).powi(2) * 0.25 * 0.5), max_relative = 1e-12);
        let ones = make_indicator::<f64>(ctx(16), 0.0, 1.0).unwrap();
        let probe = FwtProbe::new(ones, GridFunction::zeros(ctx(16)), "ones").unwrap();
        let v = fwt_integrand(&w, &point(16, &[0.25, 0.75]), &probe).unwrap();
        assert_relative_eq!(v, (-0.25f64).exp() / (2.0 * PI * 0.5), max_relative = 1e-12);
        let b = bridge(16, 1.0);
        assert!(matches!(
            fwt_integrand(&b, &point(16, &[0.0, 1.0]), &zero),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn subset_alternating_examples() {
        let w = wiener(32);
        let p = point(32, &[0.1, 0.3, 0.6, 0.9]);
        let zero = GridFunction::zeros(ctx(32));
        assert_eq!(regularized_integrand_thm1(&w, &p, &zero).unwrap(), 0.0);
        // orthogonal to every increment: supported on [0, 0.1)
        let h = make_indicator::<f64>(ctx(32), 0.0, 0.09375).unwrap();
        assert_eq!(regularized_integrand_thm1(&w, &p, &h).unwrap(), 0.0);
        let h = GridFunction::from_midpoints(ctx(32), |t| (3.0 * t).cos());
        let p2 = point(32, &[0.25, 0.625]);
        let a = regularized_integrand_thm1(&w, &p2, &h).unwrap();
        let b = thm2_integrand(&w, 0.25, 0.625, &h).unwrap();
        assert_relative_eq!(a, -b, max_relative = 1e-12);
    }

    #[test]
    fn compensated_k2_examples() {
        let w = wiener(32);
        let h = GridFunction::from_midpoints(ctx(32), |t| 1.0 + t * t);
        let e = make_indicator::<f64>(ctx(32), 0.25, 0.5).unwrap();
        let c = h.inner(&e);
        let expect = ((-0.5 * c * c / 0.25).exp() - 1.0) / 0.25;
        assert_relative_eq!(thm2_integrand(&w, 0.25, 0.5, &h).unwrap(), expect, max_relative = 1e-12);
        assert!(thm2_integrand(&w, 0.25, 0.5, &h).unwrap() <= 0.0);
        assert_eq!(
            thm2_integrand(&w, 0.25, 0.5, &GridFunction::zeros(ctx(32))).unwrap(),
            0.0
        );
        let b = bridge(32, 0.5);
        assert!(matches!(
            thm2_integrand(&b, 0.0, 0.5, &h),
            Err(Error::KernelIndicator { .. })
        ));
    }

    #[test]
    fn fast_tuple_path_matches_pointwise() {
        let spec = OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Indicator { a: 0.0, b: 0.5 }, Profile::Sinusoid { m: 1 }],
        };
        let op = build_operator::<f64>(&spec, ctx(32)).unwrap();
        let h = GridFunction::from_midpoints(ctx(32), |t| (5.0 * t).sin() + 0.3);
        let ev = TupleEvaluator::new(&op, &[&h]).unwrap();
        let nodes = [2usize, 9, 17, 30];
        let p = SimplexPoint::from_nodes(ctx(32), nodes.to_vec(), 0.0).unwrap();
        let g = ev.eval(&nodes).unwrap();
        let slow = regularized_integrand_thm1(&op, &p, &h).unwrap();
        let prod: f64 = g.coeff_sq[0][..3].iter().map(|c| 1.0 - (-0.5 * c).exp()).product();
        assert_relative_eq!(prod / g.det, slow, max_relative = 1e-9);
        let probe = FwtProbe::new(h.clone(), GridFunction::zeros(ctx(32)), "h").unwrap();
        let slow = fwt_integrand(&op, &p, &probe).unwrap();
        let s: f64 = g.coeff_sq[0][..3].iter().sum();
        assert_relative_eq!(
            (-0.5 * s).exp() / ((2.0 * PI).powi(3) * g.det),
            slow,
            max_relative = 1e-9
        );
    }

    #[test]
    fn wiener_inverse_gram_closed_form() {
        let r = theorem3_integral(&wiener(320), 2, 0.1).unwrap();
        let exact = -(0.1f64).ln() - 0.9;
        assert!((r.value / exact - 1.0).abs() < 1e-3, "{} vs {exact}", r.value);
        assert_eq!(r.levels.len(), 3);
        assert_eq!(r.singular_hits, 0);
        assert!(r
            .levels
            .windows(2)
            .all(|w| (w[1].value - exact).abs() < (w[0].value - exact).abs()));
    }

    #[test]
    fn conditions_are_checked() {
        let op = build_operator::<f64>(
            &OperatorSpec::CustomMatrix {
                rows: vec![vec![0.0; 8]; 8],
                invertible: false,
            },
            ctx(8),
        )
        .unwrap();
        assert!(matches!(
            theorem3_integral(&op, 2, 0.25),
            Err(Error::ConditionsViolated(_))
        ));
    }

    #[test]
    fn quadrature_modes_are_consistent() {
        let n = 32;
        let b = bridge(n, 1.0);
        let zero = GridFunction::zeros(ctx(n));
        let t3 = theorem3_integral(&b, 2, 0.1).unwrap();
        let e3 = regularized_fwt_quadrature(&b, 2, &zero, FwtMode::Eq3Delta { delta: 0.1 }).unwrap();
        assert_relative_eq!(e3.value, t3.value / (2.0 * PI), max_relative = 1e-12);
        let r1 = regularized_fwt_quadrature(&b, 3, &zero, FwtMode::Thm1FullSimplex).unwrap();
        assert_eq!(r1.value, 0.0);
        assert!(r1.singular_hits > 0);
        let w = wiener(n);
        let ones = make_indicator::<f64>(ctx(n), 0.0, 1.0).unwrap();
        let a = regularized_fwt_quadrature(&w, 2, &ones, FwtMode::Thm1FullSimplex).unwrap();
        let c = regularized_fwt_quadrature(&w, 2, &ones, FwtMode::Thm2K2).unwrap();
        assert_relative_eq!(a.value, -c.value, max_relative = 1e-12);
        let fbm = build_operator::<f64>(&OperatorSpec::FbmVolterra { alpha: 0.75 }, ctx(n)).unwrap();
        assert!(matches!(
            regularized_fwt_quadrature(&fbm, 2, &ones, FwtMode::Thm2K2),
            Err(Error::UnsupportedSpec(_))
        ));
    }

    #[test]
    fn weak_convergence_scan_examples() {
        let c = ctx(128);
        let zero = GridFunction::<f64>::zeros(c);
        let v = lemma2_weak_convergence_scan(&zero, (0.25, 0.75), &[0.2, 0.1]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        // h equal to one normalized difference attains 1
        let d = make_indicator::<f64>(c, 0.25 - 0.125, 0.75)
            .unwrap()
            .sub(&make_indicator(c, 0.25, 0.75).unwrap());
        let h = d.scaled(1.0 / d.norm());
        let v = lemma2_weak_convergence_scan(&h, (0.25, 0.75), &[0.125]).unwrap();
        assert_relative_eq!(v[0], 1.0, max_relative = 1e-12);
        assert!(lemma2_weak_convergence_scan(&zero, (0.25, 0.75), &[0.001]).is_err());
    }

    #[test]
    fn projector_ratio_matches_direct_formula() {
        let n = 64;
        let b = bridge(n, 0.5);
        let r = lemma3_ratio_scan(&b, (0.0, 0.5), &[0.25]).unwrap();
        let u = make_indicator::<f64>(ctx(n), 0.0, 0.5).unwrap();
        let u = u.scaled(1.0 / u.norm());
        let base = make_indicator::<f64>(ctx(n), 0.0, 0.5).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (j1, j2) in box_boundary(n, 0, 32, 16) {
            let d = GridFunction::indicator_nodes(ctx(n), j1, j2).sub(&base);
            let pd = u.inner(&d);
            let ratio = 1.0 - pd * pd / d.norm_sq();
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        assert_relative_eq!(r[0].min, lo, max_relative = 1e-10);
        assert_relative_eq!(r[0].max, hi, max_relative = 1e-10);
        assert!(matches!(
            lemma3_ratio_scan(&wiener(n), (0.0, 0.5), &[0.25]),
            Err(Error::NotAKernelIndicator { .. })
        ));
    }

    #[test]
    fn box_boundary_counts() {
        // interior box: 8r points
        assert_eq!(box_boundary(100, 30, 70, 5).len(), 40);
        assert!(box_boundary(100, 0, 50, 5).iter().all(|&(a, _)| a <= 5));
    }
}
