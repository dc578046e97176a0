//! Generating operators `A` realized on the grid, their numeric kernels and
//! the interval indicators they annihilate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{orthonormalize, GridContext, GridFunction, OrthonormalFrame, DEFAULT_ORTHO_TOL};
use crate::scalar::Real;

/// Singular values below this fraction of `sigma_max` span the kernel.
pub const KERNEL_RTOL: f64 = 1e-8;

/// Default threshold on `||A 1_[t1,t2]|| / ||1_[t1,t2]||` for kernel indicators.
pub const DEFAULT_INDICATOR_TOL: f64 = 1e-6;

/// A function on `[0,1]` described declaratively. Used both for projector
/// directions and for Fourier–Wiener probe directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant {
        value: f64,
    },
    /// Indicator of `[a, b]`, endpoints snapped to the grid.
    Indicator {
        a: f64,
        b: f64,
    },
    /// `sin(2 pi m t)` sampled at cell midpoints.
    Sinusoid {
        m: u32,
    },
}

impl Profile {
    pub fn grid_function<T: Real>(&self, ctx: GridContext) -> Result<GridFunction<T>> {
        match *self {
            Profile::Zero => Ok(GridFunction::zeros(ctx)),
            Profile::Constant { value } => Ok(GridFunction::constant(ctx, T::lit(value))),
            Profile::Indicator { a, b } => crate::grid::make_indicator(ctx, a, b),
            Profile::Sinusoid { m } => Ok(GridFunction::from_midpoints(ctx, move |t| {
                (2.0 * std::f64::consts::PI * m as f64 * t).sin()
            })),
        }
    }

    /// Whether the continuum function is a step function.
    pub fn is_step(&self) -> bool {
        !matches!(self, Profile::Sinusoid { m } if *m > 0)
    }

    pub fn label(&self) -> String {
        match self {
            Profile::Zero => "zero".into(),
            Profile::Constant { value } => format!("constant({value})"),
            Profile::Indicator { a, b } => format!("indicator({a},{b})"),
            Profile::Sinusoid { m } => format!("sinusoid({m})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothKernel {
    /// `exp(-(s - t)^2 / (2 length^2))`
    Gaussian { length: f64 },
    /// `min(s, t)`
    Min,
}

impl SmoothKernel {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            SmoothKernel::Gaussian { length } => (-(s - t).powi(2) / (2.0 * length * length)).exp(),
            SmoothKernel::Min => s.min(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    /// Planar Wiener process.
    Identity,
    /// `I - P` with `P` the orthogonal projection onto the span of `directions`.
    ProjectorComplement { directions: Vec<Profile> },
    /// `I + scale * S` with `S` the integral operator of a smooth kernel.
    CompactPerturbation { kernel: SmoothKernel, scale: f64 },
    /// Fractional Brownian motion with Hurst parameter `alpha` in `(1/2, 1)`.
    FbmVolterra { alpha: f64 },
    /// Explicit matrix in the cell basis. `invertible` is a caller claim
    /// checked by the verification suites.
    CustomMatrix {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        invertible: bool,
    },
}

impl OperatorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OperatorSpec::Identity => "identity",
            OperatorSpec::ProjectorComplement { .. } => "projector_complement",
            OperatorSpec::CompactPerturbation { .. } => "compact_perturbation",
            OperatorSpec::FbmVolterra { .. } => "fbm_volterra",
            OperatorSpec::CustomMatrix { .. } => "custom_matrix",
        }
    }

    /// Whether the operator has the form `I + S` with `S` compact.
    pub fn is_identity_plus_compact(&self) -> bool {
        matches!(
            self,
            OperatorSpec::Identity
                | OperatorSpec::ProjectorComplement { .. }
                | OperatorSpec::CompactPerturbation { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorSpec::FbmVolterra { alpha } if !(*alpha > 0.5 && *alpha < 1.0) => Err(Error::InvalidSpec(format!(
                "Hurst parameter must lie in (1/2, 1), got {alpha}"
            ))),
            OperatorSpec::ProjectorComplement { directions } => {
                if directions.is_empty() {
                    return Err(Error::InvalidSpec("projector needs at least one direction".into()));
                }
                if directions
                    .iter()
                    .any(|d| matches!(d, Profile::Zero | Profile::Constant { value: 0.0 }))
                {
                    return Err(Error::InvalidSpec("zero projector direction".into()));
                }
                Ok(())
            }
            OperatorSpec::CompactPerturbation {
                kernel: SmoothKernel::Gaussian { length },
                ..
            } if !(*length > 0.0) => Err(Error::InvalidSpec(format!(
                "kernel length must be positive, got {length}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Grid realization of a generating operator.
#[derive(Clone, Debug)]
pub struct OperatorMatrix<T: Real> {
    ctx: GridContext,
    spec: OperatorSpec,
    matrix: DMatrix<T>,
    /// Descending.
    singular_values: Vec<T>,
    kernel_frame: OrthonormalFrame<T>,
    sigma_min_complement: T,
}

impl<T: Real> OperatorMatrix<T> {
    pub fn ctx(&self) -> GridContext {
        self.ctx
    }
    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }
    pub fn singular_values(&self) -> &[T] {
        &self.singular_values
    }
    pub fn kernel_frame(&self) -> &OrthonormalFrame<T> {
        &self.kernel_frame
    }
    /// Smallest singular value above the kernel threshold; zero when the
    /// whole space is annihilated.
    pub fn sigma_min_complement(&self) -> T {
        self.sigma_min_complement
    }
    pub fn sigma_max(&self) -> T {
        self.singular_values.first().copied().unwrap_or_else(T::zero)
    }
    pub fn sigma_min(&self) -> T {
        self.singular_values.last().copied().unwrap_or_else(T::zero)
    }

    /// Finite kernel with an invertible restriction to its complement.
    pub fn satisfies_conditions(&self) -> bool {
        self.kernel_frame.len() < self.ctx.n() && self.sigma_min_complement > T::zero()
    }

    /// Claimed or numerically established invertibility on the whole space.
    pub fn declared_invertible(&self) -> bool {
        match &self.spec {
            OperatorSpec::CustomMatrix { invertible, .. } => *invertible,
            _ => self.kernel_frame.is_empty(),
        }
    }

    pub fn apply(&self, f: &GridFunction<T>) -> GridFunction<T> {
        assert_eq!(f.ctx(), self.ctx, "grid mismatch");
        GridFunction::from_vector(self.ctx, &self.matrix * f.values())
    }

    /// Images `g_j = A 1_[0, j/n]` for every node `j = 0..=n`, as the columns
    /// of an `n x (n+1)` matrix.
    pub fn node_images(&self) -> DMatrix<T> {
        let n = self.ctx.n();
        let mut g = DMatrix::zeros(n, n + 1);
        for j in 0..n {
            let next = g.column(j) + self.matrix.column(j);
            g.set_column(j + 1, &next);
        }
        g
    }

    /// `A 1_[j1/n, j2/n]`
    pub fn apply_indicator(&self, j1: usize, j2: usize) -> GridFunction<T> {
        let mut v = nalgebra::DVector::zeros(self.ctx.n());
        for c in j1..j2 {
            v += self.matrix.column(c);
        }
        GridFunction::from_vector(self.ctx, v)
    }
}

pub fn build_operator<T: Real>(spec: &OperatorSpec, ctx: GridContext) -> Result<OperatorMatrix<T>> {
    spec.validate()?;
    let n = ctx.n();
    let nt = T::of_usize(n);
    let matrix = match spec {
        OperatorSpec::Identity => DMatrix::identity(n, n),
        OperatorSpec::ProjectorComplement { directions } => {
            let fs = directions
                .iter()
                .map(|d| d.grid_function::<T>(ctx))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::InvalidSpec(format!("projector direction: {e}")))?;
            if let Some(i) = fs.iter().position(|f| f.is_zero()) {
                return Err(Error::InvalidSpec(format!(
                    "projector direction {i} is zero on the grid"
                )));
            }
            let frame = orthonormalize(&fs, T::lit(DEFAULT_ORTHO_TOL))?;
            let mut m = DMatrix::identity(n, n);
            for u in frame.members() {
                // P f = <f,u> u  =>  u u^T / n in the cell basis
                m -= u.values() * u.values().transpose() / nt;
            }
            m
        }
        OperatorSpec::CompactPerturbation { kernel, scale } => {
            let s = T::lit(*scale) / nt;
            let mut m = DMatrix::identity(n, n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += s * T::lit(kernel.eval(ctx.midpoint(i), ctx.midpoint(j)));
                }
            }
            m
        }
        OperatorSpec::FbmVolterra { alpha } => fbm_matrix(*alpha, ctx)?,
        OperatorSpec::CustomMatrix { rows, .. } => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidSpec(format!("custom matrix must be {n} x {n}")));
            }
            DMatrix::from_fn(n, n, |i, j| T::lit(rows[i][j]))
        }
    };
    from_matrix(spec.clone(), ctx, matrix)
}

/// Symmetric square root `M` of `n * Cov`, where `Cov` is the exact covariance
/// of fractional Brownian increments over the cells. Then
/// `<M 1_[0,s], M 1_[0,t]> = (s^{2a} + t^{2a} - |t - s|^{2a}) / 2` on nodes.
fn fbm_matrix<T: Real>(alpha: f64, ctx: GridContext) -> Result<DMatrix<T>> {
    let n = ctx.n();
    let two_h = 2.0 * alpha;
    let scale = (n as f64).powf(-two_h);
    let autocov = |lag: usize| -> f64 {
        let k = lag as f64;
        let up = (k + 1.0).powf(two_h);
        let down = if lag == 0 { 1.0 } else { (k - 1.0).powf(two_h) };
        0.5 * (up + down - 2.0 * k.powf(two_h)) * scale
    };
    let cov = DMatrix::from_fn(n, n, |i, j| T::lit(n as f64 * autocov(i.abs_diff(j))));
    let eig = SymmetricEigen::new(cov);
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |m, &l| m.max(l));
    if let Some(&worst) = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l < T::zero())
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        if -worst > T::lit(1e-10) * lmax {
            return Err(Error::Numerical(format!(
                "fBM increment covariance has eigenvalue {worst} < 0"
            )));
        }
    }
    let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

fn from_matrix<T: Real>(spec: OperatorSpec, ctx: GridContext, matrix: DMatrix<T>) -> Result<OperatorMatrix<T>> {
    let n = ctx.n();
    let svd = matrix
        .clone()
        .try_svd(false, true, T::default_epsilon(), 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD returned no right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let singular_values: Vec<T> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = singular_values[0];
    let threshold = T::lit(KERNEL_RTOL) * sigma_max;
    let sqrt_n = T::of_usize(n).sqrt();
    let mut kernel = Vec::new();
    let mut sigma_min_complement = T::zero();
    for (&idx, &s) in order.iter().zip(&singular_values) {
        if s <= threshold {
            // unit in the Euclidean norm => sqrt(n) for the weighted norm
            let row = v_t.row(idx).transpose() * sqrt_n;
            kernel.push(GridFunction::from_vector(ctx, row));
        } else {
            sigma_min_complement = s;
        }
    }
    Ok(OperatorMatrix {
        ctx,
        spec,
        matrix,
        singular_values,
        kernel_frame: OrthonormalFrame::from_orthonormal(ctx, kernel),
        sigma_min_complement,
    })
}

/// Node pairs `(j1, j2)` whose indicator is annihilated by `A` up to `tol`
/// relative to the indicator norm.
pub fn kernel_indicator_nodes<T: Real>(op: &OperatorMatrix<T>, tol: f64) -> Vec<(usize, usize)> {
    let n = op.ctx.n();
    if op.kernel_frame.is_empty() {
        return Vec::new();
    }
    let g = op.node_images();
    let cov = g.transpose() * &g / T::of_usize(n);
    // covariance differences lose ~1e-8 in norm to cancellation; screen loosely
    let screen = (tol * tol).max(1e-10);
    let nf = n as f64;
    let mut out = Vec::new();
    for j1 in 0..n {
        for j2 in (j1 + 1)..=n {
            let len = (j2 - j1) as f64 / nf;
            let nsq = (cov[(j2, j2)] - cov[(j1, j2)] - cov[(j2, j1)] + cov[(j1, j1)]).as_f64();
            if nsq / len < screen {
                let img = op.apply_indicator(j1, j2);
                if img.norm().as_f64() / len.sqrt() < tol {
                    out.push((j1, j2));
                }
            }
        }
    }
    out
}

/// Time pairs `(t1, t2)` of the discrete set of kernel indicators; sorted.
pub fn kernel_indicators<T: Real>(op: &OperatorMatrix<T>, tol: f64) -> Vec<(f64, f64)> {
    kernel_indicator_nodes(op, tol)
        .into_iter()
        .map(|(a, b)| (op.ctx.time(a), op.ctx.time(b)))
        .collect()
}

/// Declared kernel basis split into step and non-step parts.
#[derive(Clone, Debug)]
pub struct KernelSplit<T: Real> {
    /// Orthonormal basis of the step functions in the kernel.
    pub step_part: Vec<GridFunction<T>>,
    /// Sorted jump times of the declared step directions (including support
    /// ends at 0 or 1).
    pub jump_nodes: Vec<f64>,
    /// Orthonormal, orthogonal to `step_part`.
    pub smooth_part: Vec<GridFunction<T>>,
}

pub fn declared_kernel_split<T: Real>(spec: &OperatorSpec, ctx: GridContext) -> Result<KernelSplit<T>> {
    let OperatorSpec::ProjectorComplement { directions } = spec else {
        return Err(Error::UnsupportedSpec(spec.kind_name().into()));
    };
    spec.validate()?;
    let mut steps = Vec::new();
    let mut smooth = Vec::new();
    for d in directions {
        let f = d.grid_function::<T>(ctx)?;
        if d.is_step() {
            steps.push(f);
        } else {
            smooth.push(f);
        }
    }
    let tol = T::lit(DEFAULT_ORTHO_TOL);
    let n = ctx.n();
    let mut jumps = std::collections::BTreeSet::new();
    for f in &steps {
        let v = f.values();
        for j in 0..=n {
            let left = if j == 0 { T::zero() } else { v[j - 1] };
            let right = if j == n { T::zero() } else { v[j] };
            if left != right {
                jumps.insert(j);
            }
        }
    }
    let step_part = if steps.is_empty() {
        Vec::new()
    } else {
        orthonormalize(&steps, tol)?.members().to_vec()
    };
    let smooth_part = if smooth.is_empty() {
        Vec::new()
    } else {
        let mut all = step_part.clone();
        all.extend(smooth);
        let frame = orthonormalize(&all, tol)?;
        frame
            .members()
            .iter()
            .zip(frame.source_ranks())
            .filter(|(_, &r)| r >= step_part.len())
            .map(|(f, _)| f.clone())
            .collect()
    };
    Ok(KernelSplit {
        step_part,
        jump_nodes: jumps.into_iter().map(|j| ctx.time(j)).collect(),
        smooth_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ctx(n: usize) -> GridContext {
        GridContext::new(n).unwrap()
    }

    fn bridge(a: f64, b: f64) -> OperatorSpec {
        OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Indicator { a, b }],
        }
    }

    #[test]
    fn identity_has_trivial_kernel() {
        let op = build_operator::<f64>(&OperatorSpec::Identity, ctx(16)).unwrap();
        assert_eq!(op.matrix(), &DMatrix::identity(16, 16));
        assert!(op.kernel_frame().is_empty());
        assert!(kernel_indicators(&op, 1e-6).is_empty());
        assert!(op.satisfies_conditions());
    }

    #[test]
    fn brownian_bridge_kills_the_full_indicator() {
        let op = build_operator::<f64>(&bridge(0.0, 1.0), ctx(16)).unwrap();
        assert_eq!(op.kernel_frame().len(), 1);
        let e = &op.kernel_frame().members()[0];
        assert_relative_eq!(e.norm(), 1.0, max_relative = 1e-12);
        assert!(e.values().iter().all(|v| (v.abs() - 1.0).abs() < 1e-10));
        let one = GridFunction::constant(ctx(16), 1.0);
        assert!(op.apply(&one).max_abs() < 1e-14);
        assert_eq!(kernel_indicators(&op, 1e-6), vec![(0.0, 1.0)]);
    }

    #[test]
    fn two_half_projectors_kill_three_indicators() {
        let spec = OperatorSpec::ProjectorComplement {
            directions: vec![
                Profile::Indicator { a: 0.0, b: 0.5 },
                Profile::Indicator { a: 0.5, b: 1.0 },
            ],
        };
        let op = build_operator::<f64>(&spec, ctx(16)).unwrap();
        assert_eq!(kernel_indicators(&op, 1e-6), vec![(0.0, 0.5), (0.0, 1.0), (0.5, 1.0)]);
        // direct application agrees
        for (j1, j2) in [(0, 8), (8, 16), (0, 16)] {
            assert!(op.apply_indicator(j1, j2).max_abs() < 1e-14);
        }
        assert!(op.apply_indicator(0, 4).norm() > 0.1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let c = ctx(8);
        for alpha in [0.5, 0.3, 1.0] {
            let err = build_operator::<f64>(&OperatorSpec::FbmVolterra { alpha }, c).unwrap_err();
            assert!(matches!(err, Error::InvalidSpec(_)));
        }
        let zero = OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Zero],
        };
        assert!(matches!(build_operator::<f64>(&zero, c), Err(Error::InvalidSpec(_))));
        let wrong = OperatorSpec::CustomMatrix {
            rows: vec![vec![1.0; 3]; 3],
            invertible: true,
        };
        assert!(matches!(build_operator::<f64>(&wrong, c), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn fbm_norms_follow_self_similarity() {
        let n = 64;
        let alpha = 0.75;
        let op = build_operator::<f64>(&OperatorSpec::FbmVolterra { alpha }, ctx(n)).unwrap();
        let g = op.node_images();
        for j in [16, 32, 48, 64] {
            let t = j as f64 / n as f64;
            let nsq = g.column(j).norm_squared() / n as f64;
            assert_relative_eq!(nsq, t.powf(2.0 * alpha), max_relative = 1e-9);
        }
        assert!(op.kernel_frame().is_empty());
    }

    #[test]
    fn small_compact_perturbation_is_invertible() {
        let c = ctx(32);
        let kernel = SmoothKernel::Gaussian { length: 0.2 };
        let s = build_operator::<f64>(
            &OperatorSpec::CompactPerturbation {
                kernel: kernel.clone(),
                scale: 1.0,
            },
            c,
        )
        .unwrap();
        let s_norm = (s.matrix() - DMatrix::<f64>::identity(32, 32)).norm(); // Frobenius >= operator norm
        let op = build_operator::<f64>(
            &OperatorSpec::CompactPerturbation {
                kernel,
                scale: 0.9 / s_norm,
            },
            c,
        )
        .unwrap();
        assert!(op.kernel_frame().is_empty());
        assert!(op.sigma_min() > 0.05);
    }

    #[test]
    fn kernel_split_examples() {
        let c = ctx(32);
        let split = declared_kernel_split::<f64>(&bridge(0.0, 1.0), c).unwrap();
        assert_eq!(split.step_part.len(), 1);
        assert_eq!(split.jump_nodes, vec![0.0, 1.0]);
        assert!(split.smooth_part.is_empty());

        let sin = OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Sinusoid { m: 1 }],
        };
        let split = declared_kernel_split::<f64>(&sin, c).unwrap();
        assert!(split.step_part.is_empty());
        assert_eq!(split.smooth_part.len(), 1);

        let both = OperatorSpec::ProjectorComplement {
            directions: vec![Profile::Indicator { a: 0.0, b: 0.5 }, Profile::Sinusoid { m: 1 }],
        };
        let split = declared_kernel_split::<f64>(&both, c).unwrap();
        assert_eq!(split.jump_nodes, vec![0.0, 0.5]);
        let f = &split.step_part[0];
        let e = &split.smooth_part[0];
        assert!(f.inner(e).abs() < 1e-14);
        assert_relative_eq!(e.norm(), 1.0, max_relative = 1e-12);
        // Gram–Schmidt oracle: sin minus its projection on the normalized indicator
        let s: GridFunction<f64> = Profile::Sinusoid { m: 1 }.grid_function(c).unwrap();
        let u = GridFunction::indicator_nodes(c, 0, 16).scaled(2f64.sqrt());
        let mut r = s.clone();
        r.axpy(-s.inner(&u), &u);
        let r = r.scaled(1.0 / r.norm());
        for (a, b) in e.values().iter().zip(r.values().iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }

        let err = declared_kernel_split::<f64>(&OperatorSpec::Identity, c).unwrap_err();
        assert!(matches!(err, Error::UnsupportedSpec(_)));
    }
}
