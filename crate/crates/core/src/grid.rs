//! Finite-dimensional model of `L2([0,1])`.
//!
//! A grid with `n` uniform cells carries step functions that are constant on
//! each cell `[(i-1)/n, i/n)`. The inner product carries the `1/n` cell
//! weight, so the squared norm of an interval indicator equals the interval
//! length exactly whenever the endpoints are grid nodes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::operator::OperatorMatrix;
use crate::scalar::Real;

/// Default relative drop tolerance for Gram–Schmidt.
pub const DEFAULT_ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridContext {
    n: usize,
}

impl GridContext {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells, got {n}")));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nearest grid node index for a time in `[0,1]`.
    pub fn snap(&self, t: f64) -> usize {
        let j = (t.clamp(0.0, 1.0) * self.n as f64).round();
        j as usize
    }

    #[inline]
    pub fn time(&self, node: usize) -> f64 {
        node as f64 / self.n as f64
    }

    /// Midpoint of cell `i` (0-based).
    #[inline]
    pub fn midpoint(&self, cell: usize) -> f64 {
        (cell as f64 + 0.5) / self.n as f64
    }

    pub fn check(&self, other: &GridContext) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }
}

/// Step function on a grid: one value per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<T: Real> {
    ctx: GridContext,
    values: DVector<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(ctx: GridContext, values: DVector<T>) -> Result<Self> {
        if values.len() != ctx.n() {
            return Err(Error::InvalidInput(format!(
                "grid function needs {} values, got {}",
                ctx.n(),
                values.len()
            )));
        }
        Ok(Self { ctx, values })
    }

    pub(crate) fn from_vector(ctx: GridContext, values: DVector<T>) -> Self {
        debug_assert_eq!(values.len(), ctx.n());
        Self { ctx, values }
    }

    pub fn from_slice(ctx: GridContext, values: &[T]) -> Result<Self> {
        Self::new(ctx, DVector::from_column_slice(values))
    }

    pub fn zeros(ctx: GridContext) -> Self {
        Self::from_vector(ctx, DVector::zeros(ctx.n()))
    }

    pub fn constant(ctx: GridContext, c: T) -> Self {
        Self::from_vector(ctx, DVector::from_element(ctx.n(), c))
    }

    /// Samples `f` at the cell midpoints.
    pub fn from_midpoints(ctx: GridContext, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vector(ctx, DVector::from_fn(ctx.n(), |i, _| T::lit(f(ctx.midpoint(i)))))
    }

    /// Indicator of `[j1/n, j2/n]` for node indices `j1 < j2`.
    pub fn indicator_nodes(ctx: GridContext, j1: usize, j2: usize) -> Self {
        assert!(j1 < j2 && j2 <= ctx.n(), "bad node pair ({j1}, {j2})");
        Self::from_vector(
            ctx,
            DVector::from_fn(ctx.n(), |i, _| if i >= j1 && i < j2 { T::one() } else { T::zero() }),
        )
    }

    #[inline]
    pub fn ctx(&self) -> GridContext {
        self.ctx
    }

    #[inline]
    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn into_values(self) -> DVector<T> {
        self.values
    }

    /// `<f, g> = (1/n) sum_i f_i g_i`. Panics if the grids differ.
    pub fn inner(&self, other: &Self) -> T {
        assert_eq!(self.ctx, other.ctx, "grid mismatch");
        self.values.dot(&other.values) / T::of_usize(self.ctx.n())
    }

    pub fn norm_sq(&self) -> T {
        self.inner(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self::from_vector(self.ctx, &self.values * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.ctx, other.ctx, "grid mismatch");
        Self::from_vector(self.ctx, &self.values + &other.values)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.ctx, other.ctx, "grid mismatch");
        Self::from_vector(self.ctx, &self.values - &other.values)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: T, other: &Self) {
        assert_eq!(self.ctx, other.ctx, "grid mismatch");
        self.values.axpy(c, &other.values, T::one());
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Indicator of `[t1, t2]` after snapping both ends to the nearest node.
pub fn make_indicator<T: Real>(ctx: GridContext, t1: f64, t2: f64) -> Result<GridFunction<T>> {
    if !(t1 < t2) || !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) {
        return Err(Error::DegenerateInterval { t1, t2 });
    }
    let (j1, j2) = (ctx.snap(t1), ctx.snap(t2));
    if j1 >= j2 {
        return Err(Error::DegenerateInterval { t1, t2 });
    }
    Ok(GridFunction::indicator_nodes(ctx, j1, j2))
}

/// Determinant of a Gram matrix together with its logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramDet<T> {
    pub det: T,
    /// `-inf` when some eigenvalue fell below the clamping tolerance.
    pub log_det: T,
}

impl<T: Real> GramDet<T> {
    pub fn is_singular(&self) -> bool {
        self.det <= T::zero() || !self.log_det.is_finite()
    }
}

fn check_shared<T: Real>(fs: &[GridFunction<T>]) -> Result<GridContext> {
    let first = fs
        .first()
        .ok_or_else(|| Error::InvalidInput("empty list of grid functions".into()))?;
    for f in &fs[1..] {
        first.ctx.check(&f.ctx)?;
    }
    Ok(first.ctx)
}

pub fn gram_matrix<T: Real>(fs: &[GridFunction<T>]) -> DMatrix<T> {
    let m = fs.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = fs[i].inner(&fs[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Determinant of a symmetric positive semidefinite matrix through its
/// eigenvalues. Negative eigenvalues are clamped to zero; eigenvalues at or
/// below `rtol * lambda_max` make the result singular (`det = 0`,
/// `log_det = -inf`).
pub fn psd_det<T: Real>(m: &DMatrix<T>, rtol: T) -> GramDet<T> {
    let dim = m.nrows();
    match dim {
        0 => GramDet {
            det: T::one(),
            log_det: T::zero(),
        },
        1 => det_from_eigenvalues(&[m[(0, 0)]], rtol),
        2 => {
            let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let (hi, lo) = sym2_eigenvalues(a, b, c);
            det_from_eigenvalues(&[hi, lo], rtol)
        }
        _ => {
            let eig = SymmetricEigen::new(m.clone());
            det_from_eigenvalues(eig.eigenvalues.as_slice(), rtol)
        }
    }
}

/// Eigenvalues `(max, min)` of `[[a, b], [b, c]]`.
#[inline]
pub(crate) fn sym2_eigenvalues<T: Real>(a: T, b: T, c: T) -> (T, T) {
    let half = T::lit(0.5);
    let mean = (a + c) * half;
    let r = ((a - c) * half).hypot(b);
    let hi = mean + r;
    if hi <= T::zero() {
        return (hi, mean - r);
    }
    // product form avoids cancellation in the small eigenvalue
    (hi, (a * c - b * b) / hi)
}

pub(crate) fn det_from_eigenvalues<T: Real>(eigs: &[T], rtol: T) -> GramDet<T> {
    let lmax = eigs.iter().fold(T::zero(), |m, &l| m.max(l));
    let floor = rtol * lmax;
    let mut det = T::one();
    let mut log_det = T::zero();
    for &l in eigs {
        if l <= floor || l <= T::zero() {
            return GramDet {
                det: T::zero(),
                log_det: T::lit(f64::NEG_INFINITY),
            };
        }
        det *= l;
        log_det += l.ln();
    }
    GramDet { det, log_det }
}

/// Gram determinant `G(f_1, ..., f_m)`.
pub fn gram_det<T: Real>(fs: &[GridFunction<T>]) -> Result<GramDet<T>> {
    check_shared(fs)?;
    Ok(psd_det(&gram_matrix(fs), T::gram_rtol()))
}

/// Orthonormal family produced by Gram–Schmidt.
#[derive(Clone, Debug)]
pub struct OrthonormalFrame<T: Real> {
    ctx: GridContext,
    members: Vec<GridFunction<T>>,
    /// Input positions of the surviving members.
    source_ranks: Vec<usize>,
    /// Input positions dropped as (numerically) dependent.
    dropped: Vec<usize>,
}

impl<T: Real> OrthonormalFrame<T> {
    pub fn empty(ctx: GridContext) -> Self {
        Self {
            ctx,
            members: Vec::new(),
            source_ranks: Vec::new(),
            dropped: Vec::new(),
        }
    }

    /// Wraps functions the caller guarantees to be orthonormal.
    pub(crate) fn from_orthonormal(ctx: GridContext, members: Vec<GridFunction<T>>) -> Self {
        let source_ranks = (0..members.len()).collect();
        Self {
            ctx,
            members,
            source_ranks,
            dropped: Vec::new(),
        }
    }

    pub fn ctx(&self) -> GridContext {
        self.ctx
    }
    pub fn members(&self) -> &[GridFunction<T>] {
        &self.members
    }
    pub fn source_ranks(&self) -> &[usize] {
        &self.source_ranks
    }
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Orthogonal projection onto the span of the frame.
    pub fn project(&self, h: &GridFunction<T>) -> GridFunction<T> {
        let mut p = GridFunction::zeros(self.ctx);
        for e in &self.members {
            p.axpy(h.inner(e), e);
        }
        p
    }

    /// `h - P h`
    pub fn residual(&self, h: &GridFunction<T>) -> GridFunction<T> {
        let mut r = h.clone();
        for e in &self.members {
            let c = r.inner(e);
            r.axpy(-c, e);
        }
        r
    }

    /// Largest deviation of the frame's Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> T {
        let g = gram_matrix(&self.members);
        let m = self.members.len();
        let mut worst = T::zero();
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Gram–Schmidt in input order with one re-orthogonalization pass. A vector
/// whose residual norm is at most `tol` times its own norm is dropped.
pub fn orthonormalize<T: Real>(fs: &[GridFunction<T>], tol: T) -> Result<OrthonormalFrame<T>> {
    if fs.is_empty() {
        return Err(Error::InvalidInput("empty list of grid functions".into()));
    }
    let ctx = check_shared(fs)?;
    let mut frame = OrthonormalFrame::empty(ctx);
    for (idx, f) in fs.iter().enumerate() {
        let own = f.norm();
        let mut r = frame.residual(f);
        r = frame.residual(&r);
        let rn = r.norm();
        if rn <= tol * own || rn == T::zero() {
            frame.dropped.push(idx);
            continue;
        }
        frame.members.push(r.scaled(T::one() / rn));
        frame.source_ranks.push(idx);
    }
    Ok(frame)
}

/// `||P h||^2 = sum_m <h, e_m>^2` for the frame members `e_m`.
pub fn projection_norm_sq<T: Real>(frame: &OrthonormalFrame<T>, h: &GridFunction<T>) -> Result<T> {
    frame.ctx.check(&h.ctx)?;
    Ok(frame
        .members
        .iter()
        .map(|e| {
            let c = h.inner(e);
            c * c
        })
        .fold(T::zero(), |a, b| a + b))
}

/// `||P_M h||^2` for every subset `M` of the increment indices, where `P_M`
/// projects onto the span of the orthonormalized increments indexed by `M`.
#[derive(Clone, Debug)]
pub struct SubsetTerms<T> {
    len: usize,
    values: Vec<T>,
}

impl<T: Real> SubsetTerms<T> {
    /// Number of increments (`k - 1`).
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    /// Value for the subset encoded as a bit mask (bit `i` is increment `i + 1`).
    pub fn by_mask(&self, mask: usize) -> T {
        self.values[mask]
    }
    /// Value for a subset of 1-based increment indices.
    pub fn get(&self, subset: &[usize]) -> T {
        let mask = subset.iter().fold(0usize, |m, &i| {
            assert!(i >= 1 && i <= self.len, "index {i} out of range");
            m | (1 << (i - 1))
        });
        self.values[mask]
    }
    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.values.iter().copied().enumerate()
    }

    /// `sum_M (-1)^{|M|} exp(-||P_M h||^2 / 2)`
    pub fn alternating_sum(&self) -> T {
        let half = T::lit(0.5);
        self.iter()
            .map(|(mask, v)| {
                let term = (-(v * half)).exp();
                if mask.count_ones() % 2 == 0 {
                    term
                } else {
                    -term
                }
            })
            .fold(T::zero(), |a, b| a + b)
    }
}

pub fn subset_projection_terms<T: Real>(increments: &[GridFunction<T>], h: &GridFunction<T>) -> Result<SubsetTerms<T>> {
    let frame = orthonormalize(increments, T::lit(DEFAULT_ORTHO_TOL))?;
    if let Some(&index) = frame.dropped.first() {
        return Err(Error::DependentIncrements { index });
    }
    frame.ctx.check(&h.ctx)?;
    let len = increments.len();
    if len > 24 {
        return Err(Error::InvalidInput(format!("{len} increments give too many subsets")));
    }
    let coeff_sq: Vec<T> = frame
        .members
        .iter()
        .map(|e| {
            let c = h.inner(e);
            c * c
        })
        .collect();
    let values = (0..(1usize << len))
        .map(|mask| {
            (0..len)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| coeff_sq[i])
                .fold(T::zero(), |a, b| a + b)
        })
        .collect();
    Ok(SubsetTerms { len, values })
}

/// `||v - P v||` with `P` the projection onto `span(fs)`.
pub fn distance_to_span<T: Real>(v: &GridFunction<T>, fs: &[GridFunction<T>]) -> Result<T> {
    if fs.is_empty() {
        return Ok(v.norm());
    }
    let frame = orthonormalize(fs, T::lit(DEFAULT_ORTHO_TOL))?;
    frame.ctx.check(&v.ctx)?;
    let r = frame.residual(v);
    Ok(frame.residual(&r).norm())
}

/// `|G((I-P)g_1..(I-P)g_k) - G(g_1..g_k, e_1..e_m)| / max(1, |rhs|)` where `P`
/// projects onto the span of the orthonormal `basis`.
pub fn complement_gram_identity_residual<T: Real>(gs: &[GridFunction<T>], basis: &OrthonormalFrame<T>) -> Result<T> {
    let ctx = check_shared(gs)?;
    ctx.check(&basis.ctx)?;
    let projected: Vec<_> = gs.iter().map(|g| basis.residual(g)).collect();
    let lhs = gram_matrix(&projected).determinant();
    let mut all = gs.to_vec();
    all.extend(basis.members.iter().cloned());
    let rhs = gram_matrix(&all).determinant();
    Ok((lhs - rhs).abs() / T::one().max(rhs.abs()))
}

/// `G(Bq_1..Bq_k) - sigma_min(B)^{2k} G(q_1..q_k)`.
pub fn gram_lower_bound_margin<T: Real>(b: &OperatorMatrix<T>, qs: &[GridFunction<T>]) -> Result<T> {
    let ctx = check_shared(qs)?;
    ctx.check(&b.ctx())?;
    let sigma_min = b.sigma_min();
    let tol = T::lit(1e-8) * b.sigma_max().max(T::one() * T::default_epsilon());
    if sigma_min <= tol {
        return Err(Error::SingularOperator {
            sigma_min: sigma_min.as_f64(),
        });
    }
    let images: Vec<_> = qs.iter().map(|q| b.apply(q)).collect();
    let lhs = gram_matrix(&images).determinant();
    let rhs = gram_matrix(qs).determinant();
    let c = sigma_min.powi(2 * qs.len() as i32);
    Ok(lhs - c * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ctx(n: usize) -> GridContext {
        GridContext::new(n).unwrap()
    }

    fn ind(n: usize, a: f64, b: f64) -> GridFunction<f64> {
        make_indicator(ctx(n), a, b).unwrap()
    }

    #[test]
    fn grid_needs_two_cells() {
        assert!(GridContext::new(1).is_err());
        assert!(GridContext::new(2).is_ok());
    }

    #[test]
    fn indicator_examples() {
        let f = ind(4, 0.25, 0.75);
        assert_eq!(f.values().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(f.norm_sq(), 0.5);
        let full = ind(4, 0.0, 1.0);
        assert!(full.values().iter().all(|&v| v == 1.0));
        let err = make_indicator::<f64>(ctx(4), 0.30, 0.32).unwrap_err();
        assert!(matches!(err, Error::DegenerateInterval { .. }));
    }

    #[test]
    fn gram_det_examples() {
        let g = gram_det(&[ind(8, 0.0, 0.5)]).unwrap();
        assert_eq!(g.det, 0.5);
        let g = gram_det(&[ind(8, 0.0, 0.25), ind(8, 0.5, 1.0)]).unwrap();
        assert_relative_eq!(g.det, 0.125, max_relative = 1e-14);
        // 0.5 * 1 - 0.5^2
        let g = gram_det(&[ind(8, 0.0, 0.5), ind(8, 0.0, 1.0)]).unwrap();
        assert_relative_eq!(g.det, 0.25, max_relative = 1e-14);
        assert_relative_eq!(g.log_det, 0.25f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn gram_det_of_dependent_family_is_zero() {
        let f = ind(8, 0.0, 1.0);
        let g = gram_det(&[f.clone(), f.scaled(2.0)]).unwrap();
        assert_eq!(g.det, 0.0);
        assert!(g.log_det.is_infinite() && g.log_det < 0.0);
        assert!(g.is_singular());
    }

    #[test]
    fn gram_det_rejects_mixed_grids() {
        let err = gram_det(&[ind(4, 0.0, 0.5), ind(8, 0.0, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::GridMismatch { .. }));
    }

    #[test]
    fn gram_det_f32() {
        let c = ctx(4);
        let a = make_indicator::<f32>(c, 0.0, 0.5).unwrap();
        let b = make_indicator::<f32>(c, 0.0, 1.0).unwrap();
        let g = gram_det(&[a, b]).unwrap();
        assert!((g.det - 0.25f32).abs() < 1e-6);
    }

    #[test]
    fn orthonormalize_examples() {
        let f = orthonormalize(&[ind(8, 0.0, 0.5), ind(8, 0.5, 1.0)], 1e-10).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.orthonormality_defect() < 1e-14);

        let one = ind(8, 0.0, 1.0);
        let f = orthonormalize(&[one.clone(), one.scaled(2.0)], 1e-10).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.dropped(), &[1]);
        assert_eq!(f.source_ranks(), &[0]);

        // explicit Gram–Schmidt: residual of 1 after removing 1_[0,1/2] is 1_[1/2,1]
        let f = orthonormalize(&[ind(8, 0.0, 0.5), ind(8, 0.0, 1.0)], 1e-10).unwrap();
        assert_eq!(f.len(), 2);
        let expected = ind(8, 0.5, 1.0).scaled(2f64.sqrt());
        for (a, b) in f.members()[1].values().iter().zip(expected.values().iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn projection_examples() {
        let h = ind(8, 0.25, 0.75).scaled(3.0);
        let frame = orthonormalize(std::slice::from_ref(&h), 1e-10).unwrap();
        assert_relative_eq!(
            projection_norm_sq(&frame, &h).unwrap(),
            h.norm_sq(),
            max_relative = 1e-14
        );

        let frame = orthonormalize(&[ind(8, 0.0, 0.25), ind(8, 0.25, 0.5)], 1e-10).unwrap();
        assert_eq!(projection_norm_sq(&frame, &ind(8, 0.5, 1.0)).unwrap(), 0.0);

        let frame = orthonormalize(&[ind(8, 0.0, 1.0)], 1e-10).unwrap();
        assert_relative_eq!(
            projection_norm_sq(&frame, &ind(8, 0.0, 0.5)).unwrap(),
            0.25,
            max_relative = 1e-14
        );
    }

    #[test]
    fn subset_terms_examples() {
        let n = 6;
        let incs = [ind(n, 0.0, 1.0 / 3.0), ind(n, 1.0 / 3.0, 2.0 / 3.0)];
        let h = ind(n, 0.0, 2.0 / 3.0);
        let t = subset_projection_terms(&incs, &h).unwrap();
        assert_eq!(t.get(&[]), 0.0);
        assert_relative_eq!(t.get(&[1]), 1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(t.get(&[2]), 1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(t.get(&[1, 2]), 2.0 / 3.0, max_relative = 1e-14);

        // k = 2: the empty subset contributes exp(0) = 1
        let t = subset_projection_terms(&incs[..1], &h).unwrap();
        assert_eq!(t.by_mask(0), 0.0);

        let orth = ind(n, 2.0 / 3.0, 1.0);
        let t = subset_projection_terms(&incs, &orth).unwrap();
        assert!(t.iter().all(|(_, v)| v == 0.0));
        assert_eq!(t.alternating_sum(), 0.0);
    }

    #[test]
    fn subset_terms_reject_dependent_increments() {
        let a = ind(8, 0.0, 0.5);
        let err = subset_projection_terms(&[a.clone(), a.scaled(-1.0)], &a).unwrap_err();
        assert_eq!(err, Error::DependentIncrements { index: 1 });
    }

    #[test]
    fn distance_examples() {
        let v = ind(8, 0.0, 0.5);
        assert!(distance_to_span(&v, &[v.clone(), ind(8, 0.5, 1.0)]).unwrap() < 1e-15);
        let d = distance_to_span(&ind(8, 0.5, 1.0), &[ind(8, 0.0, 0.5)]).unwrap();
        assert_relative_eq!(d, 0.5f64.sqrt(), max_relative = 1e-14);
        let d = distance_to_span(&ind(8, 0.0, 1.0), &[ind(8, 0.0, 0.5)]).unwrap();
        assert_relative_eq!(d, 0.5f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn complement_identity_trivial_cases() {
        let c = ctx(8);
        let gs = [ind(8, 0.0, 0.5), ind(8, 0.25, 1.0)];
        let empty = OrthonormalFrame::empty(c);
        assert_eq!(complement_gram_identity_residual(&gs, &empty).unwrap(), 0.0);
        let basis = orthonormalize(&[ind(8, 0.5, 1.0)], 1e-10).unwrap();
        let r = complement_gram_identity_residual(&[ind(8, 0.0, 0.25), ind(8, 0.25, 0.5)], &basis).unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn sym2_eigenvalues_are_accurate() {
        let (hi, lo) = sym2_eigenvalues(2.0f64, 1.0, 2.0);
        assert_relative_eq!(hi, 3.0, max_relative = 1e-15);
        assert_relative_eq!(lo, 1.0, max_relative = 1e-15);
    }
}
