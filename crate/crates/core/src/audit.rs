//! Randomized property suites over the grid algebra and kernel audits of a
//! configured operator. Every suite is deterministic given its seed.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    complement_gram_identity_residual, distance_to_span, gram_det, gram_lower_bound_margin, gram_matrix,
    orthonormalize, projection_norm_sq, GridContext, GridFunction, OrthonormalFrame, DEFAULT_ORTHO_TOL,
};
use crate::operator::{build_operator, declared_kernel_split, OperatorMatrix, OperatorSpec, KERNEL_RTOL};

/// Residual bound of the complement Gram identity.
pub const COMPLEMENT_IDENTITY_TOL: f64 = 1e-10;
/// Lowest accepted Gram lower-bound margin.
pub const LOWER_BOUND_TOL: f64 = -1e-10;
/// Positive floor for the smooth-kernel distances.
pub const SMOOTH_DISTANCE_FLOOR: f64 = 1e-6;
/// Positive floor for the step-kernel Gram ratios.
pub const STEP_RATIO_FLOOR: f64 = 1e-8;

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    /// `false` when the configured operator gives the suite nothing to check.
    pub applicable: bool,
    pub passed: bool,
    pub instances: usize,
    pub failures: usize,
    /// Name of the worst-case statistic.
    pub statistic: String,
    /// Worst value observed (max residual or min margin/distance).
    pub worst: f64,
    pub threshold: f64,
    pub note: String,
}

impl SuiteResult {
    fn not_applicable(name: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            applicable: false,
            passed: true,
            instances: 0,
            failures: 0,
            statistic: String::new(),
            worst: 0.0,
            threshold: 0.0,
            note: note.into(),
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_function(ctx: GridContext, rng: &mut ChaCha8Rng) -> GridFunction<f64> {
    let v = DVector::from_fn(ctx.n(), |_, _| StandardNormal.sample(rng));
    GridFunction::new(ctx, v).expect("length matches")
}

fn random_functions(ctx: GridContext, count: usize, rng: &mut ChaCha8Rng) -> Vec<GridFunction<f64>> {
    (0..count).map(|_| random_function(ctx, rng)).collect()
}

/// Strictly increasing node tuple in the delta-simplex with `gap` cells of
/// separation.
fn random_tuple(n: usize, k: usize, gap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = n - (k - 1) * gap;
    let mut s: Vec<usize> = (0..k).map(|_| rng.random_range(0..=m)).collect();
    s.sort_unstable();
    s.iter().enumerate().map(|(i, &v)| v + i * gap).collect()
}

fn increment_indicators(ctx: GridContext, nodes: &[usize]) -> Vec<GridFunction<f64>> {
    nodes
        .windows(2)
        .map(|w| GridFunction::indicator_nodes(ctx, w[0], w[1]))
        .collect()
}

/// `G((I-P)g) = G(g, e)` on random instances with `n <= 64`, `k <= 4`, `m <= 3`.
pub fn complement_identity_suite(seed: u64, instances: usize) -> SuiteResult {
    let mut rng = rng_for(seed, 4);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..instances {
        let n = rng.random_range(8..=64);
        let k = rng.random_range(1..=4);
        let m = rng.random_range(0..=3);
        let ctx = GridContext::new(n).expect("n >= 8");
        let gs = random_functions(ctx, k, &mut rng);
        let basis = if m == 0 {
            OrthonormalFrame::empty(ctx)
        } else {
            orthonormalize(&random_functions(ctx, m, &mut rng), DEFAULT_ORTHO_TOL).expect("shared grid")
        };
        let r = complement_gram_identity_residual(&gs, &basis).unwrap_or(f64::INFINITY);
        if !(r < COMPLEMENT_IDENTITY_TOL) {
            failures += 1;
        }
        worst = worst.max(r);
    }
    SuiteResult {
        name: "complement_gram_identity".into(),
        applicable: true,
        passed: failures == 0,
        instances,
        failures,
        statistic: "max_relative_residual".into(),
        worst,
        threshold: COMPLEMENT_IDENTITY_TOL,
        note: String::new(),
    }
}

/// Random well-conditioned `2 I + N(0,1) / (2 sqrt n)` matrix.
fn random_invertible(n: usize, rng: &mut ChaCha8Rng) -> OperatorSpec {
    let scale = 0.5 / (n as f64).sqrt();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale + if i == j { 2.0 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    OperatorSpec::CustomMatrix { rows, invertible: true }
}

fn margin_check(op: &OperatorMatrix<f64>, qs: &[GridFunction<f64>]) -> f64 {
    gram_lower_bound_margin(op, qs).unwrap_or(f64::NEG_INFINITY)
}

/// `G(Bq) >= sigma_min(B)^{2k} G(q)` on random invertible instances, exact
/// equality for `B = cI`, and on the configured operator when it claims to be
/// invertible.
pub fn gram_lower_bound_suite(
    seed: u64,
    instances: usize,
    configured: Option<&OperatorMatrix<f64>>,
) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, 5);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    let mut total = 0;
    let mut record = |m: f64, failures: &mut usize| {
        if !(m >= LOWER_BOUND_TOL) {
            *failures += 1;
        }
        worst = worst.min(m);
    };
    for _ in 0..instances {
        let n = rng.random_range(4..=24);
        let k = rng.random_range(1..=4);
        let ctx = GridContext::new(n)?;
        let b = build_operator::<f64>(&random_invertible(n, &mut rng), ctx)?;
        let qs = random_functions(ctx, k, &mut rng);
        record(margin_check(&b, &qs), &mut failures);
        total += 1;
    }
    // scalar multiples of the identity attain the bound exactly
    let mut scalar_exact = true;
    for (n, k, c) in [(8usize, 3usize, 2.0f64), (16, 2, 0.5), (12, 4, 3.0)] {
        let ctx = GridContext::new(n)?;
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { c } else { 0.0 }).collect())
            .collect();
        let b = build_operator::<f64>(&OperatorSpec::CustomMatrix { rows, invertible: true }, ctx)?;
        let qs = random_functions(ctx, k, &mut rng);
        let m = margin_check(&b, &qs);
        let scale = gram_det(&qs)?.det * c.powi(2 * k as i32);
        if !(m.abs() <= 1e-12 * scale.max(1.0)) {
            scalar_exact = false;
            failures += 1;
        }
        total += 1;
    }
    let mut note = format!("scalar multiples exact: {scalar_exact}");
    if let Some(op) = configured {
        if op.declared_invertible() {
            for _ in 0..100 {
                let k = rng.random_range(1..=4.min(op.ctx().n()));
                let qs = random_functions(op.ctx(), k, &mut rng);
                record(margin_check(op, &qs), &mut failures);
                total += 1;
            }
            note.push_str(&format!("; configured {} included", op.spec().kind_name()));
        } else {
            note.push_str(&format!(
                "; configured {} has a kernel, not included",
                op.spec().kind_name()
            ));
        }
    }
    Ok(SuiteResult {
        name: "gram_lower_bound".into(),
        applicable: true,
        passed: failures == 0,
        instances: total,
        failures,
        statistic: "min_margin".into(),
        worst,
        threshold: LOWER_BOUND_TOL,
        note,
    })
}

/// Distances of each declared smooth kernel direction to the span of tuple
/// increment indicators, the step kernel part and the earlier smooth
/// directions stay above a positive floor.
pub fn smooth_kernel_distance_audit(
    spec: &OperatorSpec,
    ctx: GridContext,
    k: usize,
    gap: usize,
    seed: u64,
    tuples: usize,
) -> Result<SuiteResult> {
    const NAME: &str = "smooth_kernel_distance";
    let split = match declared_kernel_split::<f64>(spec, ctx) {
        Ok(s) => s,
        Err(Error::UnsupportedSpec(kind)) => {
            return Ok(SuiteResult::not_applicable(NAME, format!("{kind} declares no kernel")))
        }
        Err(e) => return Err(e),
    };
    if split.smooth_part.is_empty() {
        return Ok(SuiteResult::not_applicable(NAME, "no smooth kernel directions"));
    }
    check_tuple_room(ctx, k, gap)?;
    let mut rng = rng_for(seed, 7);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..tuples {
        let nodes = random_tuple(ctx.n(), k, gap, &mut rng);
        let mut span = increment_indicators(ctx, &nodes);
        span.extend(split.step_part.iter().cloned());
        for e in &split.smooth_part {
            let r = distance_to_span(e, &span)?;
            if !(r > SMOOTH_DISTANCE_FLOOR) {
                failures += 1;
            }
            worst = worst.min(r);
            span.push(e.clone());
        }
    }
    Ok(SuiteResult {
        name: NAME.into(),
        applicable: true,
        passed: failures == 0,
        instances: tuples * split.smooth_part.len(),
        failures,
        statistic: "min_distance".into(),
        worst,
        threshold: SMOOTH_DISTANCE_FLOOR,
        note: String::new(),
    })
}

/// `G(increments, step part) / G(increments, jump-interval indicators)` stays
/// above a positive floor on random tuples; tuples where the denominator is
/// singular are counted and skipped.
pub fn step_kernel_ratio_audit(
    spec: &OperatorSpec,
    ctx: GridContext,
    k: usize,
    gap: usize,
    seed: u64,
    tuples: usize,
) -> Result<SuiteResult> {
    const NAME: &str = "step_kernel_gram_ratio";
    let split = match declared_kernel_split::<f64>(spec, ctx) {
        Ok(s) => s,
        Err(Error::UnsupportedSpec(kind)) => {
            return Ok(SuiteResult::not_applicable(NAME, format!("{kind} declares no kernel")))
        }
        Err(e) => return Err(e),
    };
    if split.step_part.is_empty() {
        return Ok(SuiteResult::not_applicable(NAME, "no step kernel directions"));
    }
    check_tuple_room(ctx, k, gap)?;
    let jumps: Vec<usize> = split.jump_nodes.iter().map(|&t| ctx.snap(t)).collect();
    let jump_intervals: Vec<_> = jumps
        .windows(2)
        .map(|w| GridFunction::indicator_nodes(ctx, w[0], w[1]))
        .collect();
    let mut rng = rng_for(seed, 8);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    let mut skipped = 0;
    for _ in 0..tuples {
        let nodes = random_tuple(ctx.n(), k, gap, &mut rng);
        let incs = increment_indicators(ctx, &nodes);
        let mut num = incs.clone();
        num.extend(split.step_part.iter().cloned());
        let mut den = incs;
        den.extend(jump_intervals.iter().cloned());
        let d = gram_det(&den)?;
        if d.is_singular() {
            skipped += 1;
            continue;
        }
        let ratio = gram_det(&num)?.det / d.det;
        if !(ratio > STEP_RATIO_FLOOR) {
            failures += 1;
        }
        worst = worst.min(ratio);
    }
    Ok(SuiteResult {
        name: NAME.into(),
        applicable: true,
        passed: failures == 0,
        instances: tuples - skipped,
        failures,
        statistic: "min_ratio".into(),
        worst,
        threshold: STEP_RATIO_FLOOR,
        note: format!("{skipped} tuples with dependent jump intervals skipped"),
    })
}

fn check_tuple_room(ctx: GridContext, k: usize, gap: usize) -> Result<()> {
    if k < 2 || gap == 0 || (k - 1) * gap > ctx.n() {
        return Err(Error::EmptySimplex {
            k,
            delta: gap as f64 / ctx.n() as f64,
            n: ctx.n(),
        });
    }
    Ok(())
}

/// Kernel members are annihilated and the operator is bounded below by
/// `sigma_min_complement` on random vectors orthogonal to the kernel.
pub fn kernel_complement_witness(op: &OperatorMatrix<f64>, seed: u64, samples: usize) -> SuiteResult {
    let mut rng = rng_for(seed, 2);
    let frame = op.kernel_frame();
    let scale = op.sigma_max().max(1.0);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for e in frame.members() {
        let r = op.apply(e).norm();
        if !(r < KERNEL_RTOL * scale) {
            failures += 1;
        }
    }
    let s = op.sigma_min_complement();
    for _ in 0..samples {
        let v = frame.residual(&random_function(op.ctx(), &mut rng));
        let av = op.apply(&v).norm();
        let slack = av - s * v.norm();
        if !(slack >= -1e-10 * scale * v.norm()) {
            failures += 1;
        }
        worst = worst.min(slack);
    }
    SuiteResult {
        name: "kernel_complement_bound".into(),
        applicable: true,
        passed: failures == 0 && op.satisfies_conditions(),
        instances: frame.len() + samples,
        failures,
        statistic: "min_slack".into(),
        worst,
        threshold: 0.0,
        note: format!("kernel dimension {}, sigma_min on complement {:e}", frame.len(), s),
    }
}

/// Permutation invariance, Hadamard's bound, projection bounds and the
/// single-vector projection formula on random families.
pub fn gram_property_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, 1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..instances {
        let n = rng.random_range(4..=32);
        let k = rng.random_range(1..=4);
        let ctx = GridContext::new(n)?;
        let fs = random_functions(ctx, k, &mut rng);
        let g = gram_det(&fs)?.det;
        let mut rev = fs.clone();
        rev.reverse();
        let perm = (gram_det(&rev)?.det - g).abs() / g.abs().max(1e-300);
        let hadamard: f64 = fs.iter().map(|f| f.norm_sq()).product();
        let frame = orthonormalize(&fs, DEFAULT_ORTHO_TOL)?;
        let h = random_function(ctx, &mut rng);
        let p = projection_norm_sq(&frame, &h)?;
        let single = orthonormalize(&fs[..1], DEFAULT_ORTHO_TOL)?;
        let c = h.inner(&fs[0]);
        // Measured against ‖h‖², which bounds both sides; a relative error
        // against c²/‖f‖² is meaningless when h is nearly orthogonal to f.
        let eq6 = (projection_norm_sq(&single, &h)? - c * c / fs[0].norm_sq()).abs() / h.norm_sq().max(1e-300);
        let lu = gram_matrix(&fs).determinant();
        let lu_gap = (lu - g).abs() / g.abs().max(1e-300);
        let ok = perm < 1e-10
            && g <= hadamard * (1.0 + 1e-12)
            && p >= 0.0
            && p <= h.norm_sq() * (1.0 + 1e-12)
            && eq6 < 1e-12
            && lu_gap < 1e-8;
        if !ok {
            failures += 1;
        }
        worst = worst.max(perm).max(eq6);
    }
    Ok(SuiteResult {
        name: "gram_properties".into(),
        applicable: true,
        passed: failures == 0,
        instances,
        failures,
        statistic: "max_relative_defect".into(),
        worst,
        threshold: 1e-10,
        note: String::new(),
    })
}
