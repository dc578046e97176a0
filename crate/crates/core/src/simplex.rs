//! Ordered time tuples and node-lattice quadrature over (delta-separated)
//! simplices.
//!
//! The region `{0 <= t_1, t_{i+1} - t_i >= delta, t_k <= 1}` becomes the
//! order simplex `{0 <= s_1 <= ... <= s_k <= m}` after removing the gaps
//! (`s_i = t_i - (i-1) delta`). The rule integrates the piecewise-linear
//! interpolant on the Kuhn triangulation of that lattice exactly, which gives
//! every lattice point a weight determined by the constraints active there.
//! Constants are integrated exactly and smooth integrands to second order.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridContext;
use crate::scalar::CompensatedSum;

/// Ordered tuple `t_1 <= ... <= t_k` of grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint {
    ctx: GridContext,
    nodes: Vec<usize>,
    delta: f64,
}

impl SimplexPoint {
    pub fn from_nodes(ctx: GridContext, nodes: Vec<usize>, delta: f64) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput(format!("need k >= 2 times, got {}", nodes.len())));
        }
        if nodes.windows(2).any(|w| w[0] > w[1]) || *nodes.last().unwrap() > ctx.n() {
            return Err(Error::InvalidInput(format!(
                "nodes {nodes:?} are not ordered within the grid"
            )));
        }
        if !(delta >= 0.0) {
            return Err(Error::InvalidInput(format!("delta must be nonnegative, got {delta}")));
        }
        Ok(Self { ctx, nodes, delta })
    }

    /// Snaps each time to the nearest node.
    pub fn from_times(ctx: GridContext, times: &[f64], delta: f64) -> Result<Self> {
        Self::from_nodes(ctx, times.iter().map(|&t| ctx.snap(t)).collect(), delta)
    }

    pub fn ctx(&self) -> GridContext {
        self.ctx
    }
    pub fn k(&self) -> usize {
        self.nodes.len()
    }
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|&j| self.ctx.time(j)).collect()
    }

    pub fn is_strict(&self) -> bool {
        self.nodes.windows(2).all(|w| w[0] < w[1])
    }

    /// Membership in the delta-separated simplex.
    pub fn in_delta_simplex(&self) -> bool {
        let n = self.ctx.n() as f64;
        self.nodes
            .windows(2)
            .all(|w| (w[1] - w[0]) as f64 / n >= self.delta - 1e-12)
    }

    pub fn min_gap(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| self.ctx.time(w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `vol(Delta_k^delta) = (1 - (k-1) delta)^k / k!`
pub fn simplex_volume(k: usize, delta: f64) -> f64 {
    let side = (1.0 - (k as f64 - 1.0) * delta).max(0.0);
    side.powi(k as i32) / factorial(k)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Number of mesh steps closest to `delta`.
pub fn snap_gap(delta: f64, mesh: usize) -> usize {
    (delta * mesh as f64).round().max(0.0) as usize
}

/// Weighted node lattice on a delta-separated simplex.
#[derive(Clone, Debug)]
pub struct SimplexRule {
    k: usize,
    fine_n: usize,
    stride: usize,
    gap: usize,
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl SimplexRule {
    /// Lattice with mesh `fine_n / stride` whose points are expressed as
    /// fine-grid node indices. `gap_mesh` is the minimal separation in mesh
    /// steps.
    pub fn new(k: usize, fine_n: usize, stride: usize, gap_mesh: usize) -> Result<Self> {
        if !(1..=12).contains(&k) {
            return Err(Error::InvalidInput(format!("unsupported simplex dimension {k}")));
        }
        if stride == 0 || !fine_n.is_multiple_of(stride) {
            return Err(Error::InvalidInput(format!("stride {stride} does not divide {fine_n}")));
        }
        let mesh = fine_n / stride;
        let used = (k - 1) * gap_mesh;
        if used >= mesh {
            return Err(Error::EmptySimplex {
                k,
                delta: gap_mesh as f64 / mesh as f64,
                n: mesh,
            });
        }
        let m = mesh - used;
        let h = 1.0 / mesh as f64;
        let hk = h.powi(k as i32);
        let mut cache: HashMap<u32, f64> = HashMap::new();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut s = vec![0usize; k];
        loop {
            let mask = active_mask(&s, m);
            let w = *cache.entry(mask).or_insert_with(|| kuhn_weight(k, mask));
            weights.push(w * hk);
            nodes.extend(s.iter().enumerate().map(|(i, &si)| (si + i * gap_mesh) * stride));
            if !next_nondecreasing(&mut s, m) {
                break;
            }
        }
        Ok(Self {
            k,
            fine_n,
            stride,
            gap: gap_mesh,
            nodes,
            weights,
        })
    }

    /// Single-level rule on the grid itself, `delta` snapped to the grid.
    pub fn on_grid(k: usize, ctx: GridContext, delta: f64) -> Result<Self> {
        let n = ctx.n();
        let gap = snap_gap(delta, n);
        Self::new(k, n, 1, gap).map_err(|e| match e {
            Error::EmptySimplex { .. } => Error::EmptySimplex { k, delta, n },
            other => other,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn mesh(&self) -> usize {
        self.fine_n / self.stride
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    /// Gap actually used, as a time.
    pub fn delta_effective(&self) -> f64 {
        self.gap as f64 / self.mesh() as f64
    }
    pub fn gap_nodes(&self) -> usize {
        self.gap * self.stride
    }
    #[inline]
    pub fn point(&self, i: usize) -> &[usize] {
        &self.nodes[i * self.k..(i + 1) * self.k]
    }
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
    pub fn volume(&self) -> f64 {
        self.weights.iter().copied().collect::<CompensatedSum<f64>>().value()
    }

    /// `sum_i w_i f(t_i)` over the points where `f` returns a value, plus the
    /// number of points where it returned `None`. Deterministic for any
    /// thread count: fixed chunks are reduced in order.
    pub fn integrate<F>(&self, f: F) -> (f64, usize)
    where
        F: Fn(&[usize]) -> Option<f64> + Sync,
    {
        const CHUNK: usize = 4096;
        let idx: Vec<usize> = (0..self.len()).collect();
        let partials: Vec<(CompensatedSum<f64>, usize)> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = CompensatedSum::new();
                let mut skipped = 0;
                for &i in chunk {
                    match f(self.point(i)) {
                        Some(v) => acc.add(self.weights[i] * v),
                        None => skipped += 1,
                    }
                }
                (acc, skipped)
            })
            .collect();
        let mut total = CompensatedSum::new();
        let mut skipped = 0;
        for (p, s) in &partials {
            total.merge(p);
            skipped += s;
        }
        (total.value(), skipped)
    }
}

/// Bit 0: `s_1 = 0`; bit `i` (1..k-1): `s_i = s_{i+1}`; bit `k`: `s_k = m`.
fn active_mask(s: &[usize], m: usize) -> u32 {
    let k = s.len();
    let mut mask = u32::from(s[0] == 0);
    for i in 0..k - 1 {
        if s[i] == s[i + 1] {
            mask |= 1 << (i + 1);
        }
    }
    if s[k - 1] == m {
        mask |= 1 << k;
    }
    mask
}

fn next_nondecreasing(s: &mut [usize], m: usize) -> bool {
    let k = s.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if s[i] < m {
            let v = s[i] + 1;
            for x in &mut s[i..] {
                *x = v;
            }
            return true;
        }
    }
    false
}

/// Weight (in units of `h^k`) of a lattice point with the given active
/// constraints: the number of Kuhn simplices of the order simplex incident to
/// it, divided by `k! (k + 1)`. Only active constraints matter because the
/// incident simplices move each coordinate by at most one step.
fn kuhn_weight(k: usize, mask: u32) -> f64 {
    // representative point with slack 2 on every inactive constraint
    let mut rep = Vec::with_capacity(k);
    let mut cur: i64 = if mask & 1 != 0 { 0 } else { 2 };
    rep.push(cur);
    for i in 1..k {
        if mask & (1 << i) == 0 {
            cur += 2;
        }
        rep.push(cur);
    }
    let m = if mask & (1 << k) != 0 { cur } else { cur + 2 };
    let inside = |p: &[i64]| p[0] >= 0 && p[k - 1] <= m && p.windows(2).all(|w| w[0] <= w[1]);

    let mut perm: Vec<usize> = (0..k).collect();
    let mut count = 0usize;
    let mut p = vec![0i64; k];
    loop {
        for j in 0..=k {
            p.copy_from_slice(&rep);
            for &axis in &perm[..j] {
                p[axis] -= 1;
            }
            let mut ok = inside(&p);
            for &axis in &perm {
                if !ok {
                    break;
                }
                p[axis] += 1;
                ok = inside(&p);
            }
            if ok {
                count += 1;
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    count as f64 / (factorial(k) * (k as f64 + 1.0))
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interior_weight_is_one() {
        for k in 1..=4 {
            assert_relative_eq!(kuhn_weight(k, 0), 1.0, max_relative = 1e-15);
        }
        // 1D trapezoid ends
        assert_relative_eq!(kuhn_weight(1, 0b01), 0.5);
        assert_relative_eq!(kuhn_weight(1, 0b10), 0.5);
    }

    #[test]
    fn weights_sum_to_volume() {
        for k in 1..=4 {
            for gap in [0, 1, 3] {
                let rule = SimplexRule::new(k, 40, 1, gap).unwrap();
                let delta = gap as f64 / 40.0;
                assert_relative_eq!(rule.volume(), simplex_volume(k, delta), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lattice_size_matches_binomial() {
        // C(m + k, k) points for side m
        let rule = SimplexRule::new(3, 10, 1, 0).unwrap();
        assert_eq!(rule.len(), 286);
        let rule = SimplexRule::new(2, 20, 2, 1).unwrap();
        // mesh 10, m = 9
        assert_eq!(rule.len(), 55);
        assert!(rule.point(0).iter().all(|j| j % 2 == 0));
        assert_eq!(rule.delta_effective(), 0.1);
    }

    #[test]
    fn linear_integrands_are_exact() {
        // integral of t_1 + t_2 over {0 <= t1 <= t2 <= 1} is 1/2
        let rule = SimplexRule::new(2, 17, 1, 0).unwrap();
        let (v, skipped) = rule.integrate(|p| Some((p[0] + p[1]) as f64 / 17.0));
        assert_eq!(skipped, 0);
        assert_relative_eq!(v, 0.5, max_relative = 1e-13);
    }

    #[test]
    fn smooth_integrand_converges_at_second_order() {
        // int_{0<=t1<=t2<=1} exp(t2 - t1) = e - 2
        let exact = std::f64::consts::E - 2.0;
        let err = |n: usize| {
            let rule = SimplexRule::new(2, n, 1, 0).unwrap();
            let (v, _) = rule.integrate(|p| Some(((p[1] as f64 - p[0] as f64) / n as f64).exp()));
            (v - exact).abs()
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn empty_simplex_is_an_error() {
        assert!(matches!(SimplexRule::new(3, 10, 1, 5), Err(Error::EmptySimplex { .. })));
        let ctx = GridContext::new(10).unwrap();
        assert!(matches!(
            SimplexRule::on_grid(2, ctx, 1.0),
            Err(Error::EmptySimplex { .. })
        ));
    }

    #[test]
    fn simplex_point_membership() {
        let ctx = GridContext::new(10).unwrap();
        let p = SimplexPoint::from_times(ctx, &[0.0, 0.3, 0.5], 0.2).unwrap();
        assert!(p.in_delta_simplex());
        assert!(p.is_strict());
        let p = SimplexPoint::from_times(ctx, &[0.0, 0.3, 0.4], 0.2).unwrap();
        assert!(!p.in_delta_simplex());
        assert!(SimplexPoint::from_times(ctx, &[0.5, 0.3], 0.0).is_err());
    }

    #[test]
    fn integration_is_thread_count_independent() {
        let rule = SimplexRule::new(3, 48, 1, 2).unwrap();
        let f = |p: &[usize]| Some(1.0 / (1.0 + (p[0] * 7 + p[1] * 3 + p[2]) as f64).sqrt());
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| rule.integrate(f));
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| rule.integrate(f));
        assert_eq!(a.0.to_bits(), b.0.to_bits());
    }
}
