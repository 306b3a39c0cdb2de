//! Betti numbers of intersections of quadrics on spheres, computed from the
//! inertia-index function on the circle of covector directions.
//!
//! The central object is a piecewise-constant [`IndexProfile`] on the circle
//! (or on an open arc in the analytic case, where the index diverges at the
//! ends).  Sublevel sets of the profile are unions of closed arcs, and the
//! reduced Betti numbers come from relative ranks of consecutive sublevels.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CarnotError;
use crate::par;
use crate::structure::{CarnotStructure, Covector, VerticalPoint};
use crate::Result;

use std::f64::consts::PI;

/// Bisection resolution for breakpoint angles.
pub const BREAKPOINT_TOL: f64 = 1e-10;
/// Eigenvalues of a pencil below this (relative) magnitude count as zero.
const EIG_ZERO_TOL: f64 = 1e-9;
/// Clipping distance from the singular ends of the admissible arc.
const END_CLIP: f64 = 1e-6;
/// Tolerance for arc end-point comparisons.
const ARC_TOL: f64 = 1e-9;
/// Intervals narrower than this are round-off slivers, not profile features.
const SLIVER_WIDTH: f64 = 1e-7;

/// Sentinel for an infinite index value (boundary of the admissible region).
pub const INDEX_INFINITE: u64 = u64::MAX;

/// Where a profile lives.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ProfileDomain {
    /// The whole covector circle (finite-dimensional pencils).
    Circle,
    /// An open arc `(start, end)` in unnormalized angle coordinates.
    Arc { start: f64, end: f64 },
}

/// Piecewise-constant inertia index.
///
/// On an arc domain `values` has one more entry than `breakpoints` and the
/// outermost values may be [`INDEX_INFINITE`].  On the circle the k-th value
/// lives between `breakpoints[k]` and the cyclically next breakpoint; a
/// breakpoint-free circle profile stores a single constant value.
/// Values at the breakpoints themselves are not represented.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexProfile {
    pub domain: ProfileDomain,
    pub breakpoints: Vec<f64>,
    pub values: Vec<u64>,
    /// An eigenvalue of the pencil stayed pinned at zero over an interval.
    pub degenerate: bool,
    /// Ambient dimension for finite pencils (drives the `j <= N-3` guard).
    pub dim: Option<usize>,
}

impl IndexProfile {
    /// Open intervals of constancy as `(left, right, value)`.
    pub fn intervals(&self) -> Vec<(f64, f64, u64)> {
        match self.domain {
            ProfileDomain::Arc { start, end } => {
                let mut pts = vec![start];
                pts.extend_from_slice(&self.breakpoints);
                pts.push(end);
                (0..self.values.len())
                    .map(|k| (pts[k], pts[k + 1], self.values[k]))
                    .collect()
            }
            ProfileDomain::Circle => {
                let b = self.breakpoints.len();
                if b == 0 {
                    return vec![(0.0, 2.0 * PI, self.values[0])];
                }
                (0..b)
                    .map(|k| {
                        let left = self.breakpoints[k];
                        let right = if k + 1 == b {
                            self.breakpoints[0] + 2.0 * PI
                        } else {
                            self.breakpoints[k + 1]
                        };
                        (left, right, self.values[k])
                    })
                    .collect()
            }
        }
    }

    /// Profile value at an interior non-breakpoint angle, if any.
    pub fn value_at(&self, theta: f64) -> Option<u64> {
        let period = 2.0 * PI;
        for (a, b, v) in self.intervals() {
            for shift in [-period, 0.0, period] {
                let t = theta + shift;
                if t > a + BREAKPOINT_TOL && t < b - BREAKPOINT_TOL {
                    return (v != INDEX_INFINITE).then_some(v);
                }
            }
        }
        None
    }

    /// Largest finite value attained.
    pub fn max_finite(&self) -> Option<u64> {
        self.values.iter().copied().filter(|&v| v != INDEX_INFINITE).max()
    }

    /// Smallest finite value attained.
    pub fn min_finite(&self) -> Option<u64> {
        self.values.iter().copied().filter(|&v| v != INDEX_INFINITE).min()
    }
}

/// Disjoint union of closed arcs on the circle (or the full circle).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ArcSet {
    /// Closed arcs `[a, b]`, sorted by left end point, pairwise disjoint.
    pub arcs: Vec<(f64, f64)>,
    pub full: bool,
}

impl ArcSet {
    pub fn empty() -> Self {
        ArcSet { arcs: Vec::new(), full: false }
    }

    pub fn full_circle() -> Self {
        ArcSet { arcs: Vec::new(), full: true }
    }

    pub fn is_empty(&self) -> bool {
        !self.full && self.arcs.is_empty()
    }

    pub fn components(&self) -> usize {
        if self.full {
            1
        } else {
            self.arcs.len()
        }
    }

    /// Whether `self` is contained in `other` (up to a small tolerance).
    pub fn subset_of(&self, other: &ArcSet) -> bool {
        if other.full {
            return true;
        }
        if self.full {
            return false;
        }
        self.arcs
            .iter()
            .all(|b| other.arcs.iter().any(|a| arc_contains(a, b)))
    }
}

/// whether the closed arc `inner` sits inside `outer`, allowing a whole-turn
/// shift between the two coordinate choices.
fn arc_contains(outer: &(f64, f64), inner: &(f64, f64)) -> bool {
    let period = 2.0 * PI;
    [-period, 0.0, period].iter().any(|s| {
        inner.0 + s >= outer.0 - ARC_TOL && inner.1 + s <= outer.1 + ARC_TOL
    })
}

/// Reduced Betti table of the quadric intersection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BettiTable {
    /// Degree -> reduced rank, finitely supported.
    pub reduced: BTreeMap<usize, usize>,
    /// `1 + sum of reduced ranks`; zero when the set is empty.
    pub total: u64,
    /// Finite case only: degrees beyond `N-3` were cut off.
    pub truncated: bool,
    /// The intersection is empty.
    pub empty: bool,
}

/// Number of eigenvalues of the symmetric matrix `m` below `-tol`.
fn negative_count(m: &DMatrix<f64>, tol: f64) -> usize {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .filter(|&&e| e < -tol)
        .count()
}

/// Smallest absolute eigenvalue (degeneracy probe).
fn min_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, e| acc.min(e.abs()))
}

/// Inertia index of the pencil `cos(theta) q1 + sin(theta) q2` over the
/// circle, by eigenvalue counting on a grid with bisection refinement of the
/// transition angles.
pub fn index_profile_finite(
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    grid: usize,
) -> Result<IndexProfile> {
    let n = q1.nrows();
    if n < 3 || !q1.is_square() || q2.nrows() != n || !q2.is_square() {
        return Err(CarnotError::BadDimensions(
            "pencil forms must be square, same size, N >= 3".into(),
        ));
    }
    let scale = q1.norm().max(q2.norm()).max(1.0);
    let tol = EIG_ZERO_TOL * scale;
    let pencil = |t: f64| q1 * t.cos() + q2 * t.sin();
    let value = |t: f64| negative_count(&pencil(t), tol) as u64;

    let grid = grid.max(64);
    let two_pi = 2.0 * PI;
    let samples: Vec<u64> =
        par::map_indexed(grid, |k| value(two_pi * k as f64 / grid as f64));

    let mut breakpoints = Vec::new();
    for k in 0..grid {
        let a = two_pi * k as f64 / grid as f64;
        let b = two_pi * (k + 1) as f64 / grid as f64;
        let (va, vb) = (samples[k], samples[(k + 1) % grid]);
        refine_changes(a, b, va, vb, &value, &mut breakpoints);
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Collapse sliver intervals (degenerate pencil angles produce a pair of
    // transitions a few round-off widths apart).
    let mut merged: Vec<f64> = Vec::new();
    for t in breakpoints {
        match merged.last_mut() {
            Some(last) if t - *last < SLIVER_WIDTH => {
                *last = 0.5 * (*last + t);
            }
            _ => merged.push(t),
        }
    }
    if merged.len() > 1 {
        let (first, last) = (merged[0], *merged.last().unwrap());
        if first + two_pi - last < SLIVER_WIDTH {
            merged[0] = 0.5 * (first + last - two_pi);
            merged.pop();
        }
    }
    let breakpoints = merged;

    let (values, degenerate) = if breakpoints.is_empty() {
        let v = value(0.123);
        (vec![v], min_abs_eigenvalue(&pencil(0.123)) < tol)
    } else {
        let b = breakpoints.len();
        let mut vals = Vec::with_capacity(b);
        let mut degenerate = false;
        for k in 0..b {
            let right = if k + 1 == b {
                breakpoints[0] + two_pi
            } else {
                breakpoints[k + 1]
            };
            let mid = 0.5 * (breakpoints[k] + right);
            vals.push(value(mid));
            if min_abs_eigenvalue(&pencil(mid)) < tol {
                degenerate = true;
            }
        }
        (vals, degenerate)
    };

    Ok(IndexProfile {
        domain: ProfileDomain::Circle,
        breakpoints,
        values,
        degenerate,
        dim: Some(n),
    })
}

/// Recursively isolates every value change of `value` inside `(a, b)` and
/// appends the bisected transition angles.
fn refine_changes<F: Fn(f64) -> u64>(
    a: f64,
    b: f64,
    va: u64,
    vb: u64,
    value: &F,
    out: &mut Vec<f64>,
) {
    if va == vb && b - a < 1e-4 {
        return;
    }
    if b - a < BREAKPOINT_TOL {
        if va != vb {
            out.push(0.5 * (a + b));
        }
        return;
    }
    let m = 0.5 * (a + b);
    let vm = value(m);
    if vm == va && vm == vb {
        if b - a < 1e-4 {
            return;
        }
        refine_changes(a, m, va, vm, value, out);
        refine_changes(m, b, vm, vb, value, out);
        return;
    }
    refine_changes(a, m, va, vm, value, out);
    refine_changes(m, b, vm, vb, value, out);
}

/// Analytic inertia index of the energy-`s` path space over the admissible
/// half-circle of Lagrange multiplier directions.
///
/// On the half-circle where the multiplier pairs negatively with `p` the
/// index is `2 sum_i floor(s alpha_i(omega) / |<omega, p>|)`; it diverges at
/// the ends of the arc.  Breakpoints are resolved by bisection; the diverging
/// tails are clipped once they exceed every interior value by a margin, which
/// does not affect any Betti computation (the clipped sublevel arcs stay
/// nested single arcs).
pub fn index_profile_analytic(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
) -> Result<IndexProfile> {
    if p.norm() == 0.0 {
        return Err(CarnotError::ZeroTarget);
    }
    if s <= 0.0 {
        return Err(CarnotError::BadDimensions("energy bound must be positive".into()));
    }
    match structure.corank() {
        1 => index_profile_l1(structure, p, s),
        2 => index_profile_l2(structure, p, s),
        l => Err(CarnotError::DimensionMismatch {
            what: "corank",
            expected: 2,
            got: l,
        }),
    }
}

/// Corank-one case: the admissible set is the single direction opposing `p`,
/// and the profile is constant.  It is encoded on a nominal arc with
/// diverging ends so that the Betti extraction below applies verbatim.
fn index_profile_l1(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
) -> Result<IndexProfile> {
    let z = p.0[0].abs();
    let omega = Covector::from_slice(&[-p.0[0].signum()]);
    let sp = structure.skew_spectrum(&omega)?;
    let v: u64 = sp
        .alphas
        .iter()
        .map(|a| 2 * (s * a / z).floor() as u64)
        .sum();
    Ok(IndexProfile {
        domain: ProfileDomain::Arc { start: 0.0, end: PI },
        breakpoints: vec![0.25 * PI, 0.75 * PI],
        values: vec![INDEX_INFINITE, v, INDEX_INFINITE],
        degenerate: false,
        dim: None,
    })
}

fn index_profile_l2(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
) -> Result<IndexProfile> {
    let theta_p = p.0[1].atan2(p.0[0]);
    let start = theta_p + 0.5 * PI;
    let end = theta_p + 1.5 * PI;
    let m = structure.horizontal_rank() / 2;
    // Scaled eigenvalue curves s alpha_i / |<omega, p>|, sorted descending
    // and zero-padded where the spectrum degenerates.
    let curves = |t: f64| -> Vec<f64> {
        let omega = Covector::from_slice(&[t.cos(), t.sin()]);
        let z = omega.pair(p).abs();
        let sp = structure.skew_spectrum(&omega).expect("spectrum on the circle");
        let mut xs: Vec<f64> = sp.alphas.iter().map(|a| s * a / z).collect();
        xs.resize(m, 0.0);
        xs
    };
    let value_of = |xs: &[f64]| -> i64 { xs.iter().map(|&x| 2 * (x.floor() as i64)).sum() };
    let value = |t: f64| value_of(&curves(t));

    // Sample density scaled with the expected number of integer crossings.
    let probe = value(0.5 * (start + end));
    let grid = (4096usize).max(64 * (probe as usize + 2)).min(1 << 20);
    let lo = start + END_CLIP;
    let hi = end - END_CLIP;
    let step = (hi - lo) / grid as f64;
    let samples: Vec<Vec<f64>> = par::map_indexed(grid + 1, |k| curves(lo + step * k as f64));

    // Monotone tails: every curve falls away from the left end and rises into
    // the right end, so the index is monotone there and contributes nothing
    // but the diverging sentinel.  The first sample where any curve turns
    // around bounds the interior window.
    let rises = |a: &[f64], b: &[f64]| -> bool {
        a.iter().zip(b).any(|(&x, &y)| y > x + 1e-9 * (1.0 + x.abs()))
    };
    let mut il = 0;
    while il + 1 <= grid && !rises(&samples[il], &samples[il + 1]) {
        il += 1;
    }
    let mut ir = grid;
    while ir >= 1 && !rises(&samples[ir], &samples[ir - 1]) {
        ir -= 1;
    }
    let (wl, wr) = if il <= ir { (il, ir) } else { (ir, il) };
    let wl = wl.saturating_sub(2);
    let wr = (wr + 2).min(grid);
    let t_lo = lo + step * wl as f64;
    let t_hi = lo + step * wr as f64;

    // Integer crossings of each curve inside the window, with direction.
    let mut events: Vec<(f64, i8)> = Vec::new();
    for k in wl..wr {
        let (a, b) = (lo + step * k as f64, lo + step * (k + 1) as f64);
        for i in 0..m {
            let (xa, xb) = (samples[k][i], samples[k + 1][i]);
            let (fa, fb) = (xa.floor() as i64, xb.floor() as i64);
            if fa == fb {
                continue;
            }
            let dir: i8 = if fb > fa { 1 } else { -1 };
            let (nlo, nhi) = if fb > fa { (fa + 1, fb) } else { (fb + 1, fa) };
            for n in nlo.max(1)..=nhi {
                let g = |t: f64| curves(t)[i] - n as f64;
                events.push((bisect_root(a, b, &g), dir));
            }
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Walk the events left to right.  A cluster pairing a falling crossing
    // with a rising one is a dip of zero width (the index drops only at the
    // cluster angle itself); it is rendered as a sliver interval so the
    // sublevel arcs see it.
    const COINCIDENT: f64 = 1e-9;
    let mut breakpoints = vec![t_lo];
    let mut values = vec![INDEX_INFINITE];
    let first_probe = events.first().map_or(0.5 * (t_lo + t_hi), |e| 0.5 * (t_lo + e.0));
    let mut v = value(first_probe);
    values.push(v as u64);
    let mut k = 0;
    while k < events.len() {
        let mut kk = k + 1;
        while kk < events.len() && events[kk].0 - events[kk - 1].0 < COINCIDENT {
            kk += 1;
        }
        let cluster = &events[k..kk];
        let t = cluster.iter().map(|e| e.0).sum::<f64>() / cluster.len() as f64;
        let ups = cluster.iter().filter(|e| e.1 > 0).count() as i64;
        let downs = cluster.len() as i64 - ups;
        let v_right = v + 2 * (ups - downs);
        let v_point = v - 2 * downs;
        if v_point < v.min(v_right) {
            let gap_l = t - *breakpoints.last().unwrap();
            let gap_r = events.get(kk).map_or(t_hi - t, |e| e.0 - t);
            let w = (0.25 * gap_l.min(gap_r)).min(1e-7).max(2.0 * COINCIDENT);
            breakpoints.push(t - w);
            values.push(v_point as u64);
            breakpoints.push(t + w);
            values.push(v_right as u64);
        } else if v_right != v {
            breakpoints.push(t);
            values.push(v_right as u64);
        }
        v = v_right;
        k = kk;
    }
    breakpoints.push(t_hi);
    values.push(INDEX_INFINITE);

    let end_probe = events.last().map_or(0.5 * (t_lo + t_hi), |e| 0.5 * (e.0 + t_hi));
    if value(end_probe) != v {
        return Err(CarnotError::ConsistencyFailure(format!(
            "index walk drift: {} vs {} at angle {end_probe}",
            v,
            value(end_probe)
        )));
    }

    Ok(IndexProfile {
        domain: ProfileDomain::Arc { start, end },
        breakpoints,
        values,
        degenerate: false,
        dim: None,
    })
}

/// Bisection for a sign change of `g` on `[a, b]`.
fn bisect_root<F: Fn(f64) -> f64>(mut a: f64, b: f64, g: &F) -> f64 {
    let mut b = b;
    let mut ga = g(a);
    if ga == 0.0 {
        return a;
    }
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Closed sublevel set `{ index <= j }` as a union of closed arcs.
pub fn sublevel_arcs(profile: &IndexProfile, j: u64) -> ArcSet {
    let intervals = profile.intervals();
    let selected: Vec<(f64, f64)> = intervals
        .iter()
        .filter(|&&(_, _, v)| v <= j)
        .map(|&(a, b, _)| (a, b))
        .collect();
    if selected.is_empty() {
        return ArcSet::empty();
    }
    // Merge intervals sharing a breakpoint.
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for (a, b) in selected {
        match arcs.last_mut() {
            Some(last) if (a - last.1).abs() < ARC_TOL => last.1 = b,
            _ => arcs.push((a, b)),
        }
    }
    if let ProfileDomain::Circle = profile.domain {
        if arcs.len() == 1 && (arcs[0].1 - arcs[0].0 - 2.0 * PI).abs() < ARC_TOL {
            return ArcSet::full_circle();
        }
        // Cyclic merge of the first and last arc across the wrap point.
        if arcs.len() > 1 {
            let first = arcs[0];
            let last = *arcs.last().unwrap();
            if (first.0 + 2.0 * PI - last.1).abs() < ARC_TOL {
                if arcs.len() == intervals.len()
                    || ((last.1 - first.0) - 2.0 * PI).abs() < ARC_TOL && arcs.len() == 2
                {
                    // fully covered circle
                    let covered: f64 = arcs.iter().map(|(a, b)| b - a).sum();
                    if (covered - 2.0 * PI).abs() < ARC_TOL {
                        return ArcSet::full_circle();
                    }
                }
                arcs[0] = (last.0 - 2.0 * PI, first.1);
                arcs.pop();
                arcs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            }
        }
    }
    ArcSet { arcs, full: false }
}

/// Ranks of the relative homology of the pair of arc sets `(A, B)`, `B` a
/// subset of `A`, by the combinatorial rule for one-complexes on the circle.
pub fn relative_betti(a: &ArcSet, b: &ArcSet) -> Result<(usize, usize)> {
    if !b.subset_of(a) {
        return Err(CarnotError::NotNested);
    }
    if a.full {
        if b.full {
            return Ok((0, 0));
        }
        return if b.is_empty() {
            Ok((1, 1))
        } else {
            Ok((0, b.arcs.len()))
        };
    }
    let mut b0 = 0;
    let mut b1 = 0;
    for alpha in &a.arcs {
        let inside = b
            .arcs
            .iter()
            .filter(|beta| arc_contains(alpha, beta))
            .count();
        if inside == 0 {
            b0 += 1;
        } else {
            b1 += inside - 1;
        }
    }
    Ok((b0, b1))
}

/// Reduced Betti table from an index profile.
///
/// The reduced rank in degree `j` is the relative `b0` of `(P_{j+1}, P_j)`
/// plus the relative `b1` of `(P_{j+2}, P_{j+1})`, with `P_j` the closed
/// sublevel arcs; the total adds one leading class.  A finite pencil whose
/// profile shows two complementary half-circle values `v` and `N - v` (a
/// single nondegenerate quadric) is a product of two spheres and is tabled
/// directly.
pub fn betti_from_profile(profile: &IndexProfile) -> Result<BettiTable> {
    let Some(vmax) = profile.max_finite() else {
        return Ok(BettiTable {
            reduced: BTreeMap::new(),
            total: 0,
            truncated: false,
            empty: true,
        });
    };

    // Single-quadric product-of-spheres shortcut.
    if let (ProfileDomain::Circle, Some(n)) = (&profile.domain, profile.dim) {
        if profile.values.len() == 2 {
            let (v, w) = (profile.values[0], profile.values[1]);
            if v + w == n as u64 && v >= 1 && w >= 1 {
                let (lo, hi) = (v.min(w) as usize, v.max(w) as usize);
                let mut reduced = BTreeMap::new();
                *reduced.entry(lo - 1).or_insert(0) += 1;
                *reduced.entry(n - 1 - lo).or_insert(0) += 1;
                *reduced.entry(n - 2).or_insert(0) += 1;
                let total = 1 + reduced.values().sum::<usize>() as u64;
                debug_assert_eq!(total, 4);
                let _ = hi;
                return Ok(BettiTable { reduced, total, truncated: false, empty: false });
            }
        }
    }

    // Finite-case degree guard.
    let (jmax, truncated) = match profile.dim {
        Some(n) => {
            let guard = n.saturating_sub(3) as u64;
            (vmax.min(guard), vmax > guard)
        }
        None => (vmax, false),
    };

    let sub = |j: i64| -> ArcSet {
        if j < 0 {
            ArcSet::empty()
        } else {
            sublevel_arcs(profile, j as u64)
        }
    };

    let mut reduced = BTreeMap::new();
    for j in 0..=jmax as i64 {
        let pj = sub(j);
        let pj1 = sub(j + 1);
        let pj2 = sub(j + 2);
        let births = relative_betti(&pj1, &pj)?.0;
        let merges = relative_betti(&pj2, &pj1)?.1;
        let tilde = births + merges;
        if tilde > 0 {
            reduced.insert(j as usize, tilde);
        }
    }
    let total = 1 + reduced.values().sum::<usize>() as u64;
    Ok(BettiTable { reduced, total, truncated, empty: false })
}

/// Total Betti number from the count of interior local maxima of an analytic
/// profile.
///
/// With `mu` strict local maxima of the step function in the interior of the
/// admissible arc, the total is `2 mu + 2 - b0(P_0) - b1(P_1, P_0)`: every
/// interior maximum contributes a merge and a companion class, level-zero
/// components are absorbed into the leading class, and a merge already
/// happening at level one removes its companion.  The corank-one constant
/// profile (total 2, a sphere) calibrates the boundary convention.
pub fn total_betti_via_maxima(profile: &IndexProfile) -> Result<u64> {
    if !matches!(profile.domain, ProfileDomain::Arc { .. }) {
        return Err(CarnotError::BadDimensions(
            "maxima formula applies to analytic arc profiles".into(),
        ));
    }
    if profile.max_finite().is_none() {
        return Ok(0);
    }
    // Merge consecutive equal values before scanning for maxima.
    let mut runs: Vec<u64> = Vec::new();
    for &v in &profile.values {
        if runs.last() != Some(&v) {
            runs.push(v);
        }
    }
    let mut mu = 0u64;
    for k in 0..runs.len() {
        if runs[k] == INDEX_INFINITE {
            continue;
        }
        let left_smaller = k > 0 && runs[k - 1] < runs[k];
        let right_smaller = k + 1 < runs.len() && runs[k + 1] < runs[k];
        if left_smaller && right_smaller {
            mu += 1;
        }
    }
    let p0 = sublevel_arcs(profile, 0);
    let p1 = sublevel_arcs(profile, 1);
    let b0 = relative_betti(&p0, &ArcSet::empty())?.0;
    let b1 = relative_betti(&p1, &p0)?.1;
    Ok(2 * mu + 2 - b0 as u64 - b1 as u64)
}

/// Brute-force homology oracles used by the test suites.
#[doc(hidden)]
pub mod oracle {
    use super::*;

    /// Relative homology ranks of the pair over GF(2) on a subdivided circle.
    pub fn simplicial_relative(a: &ArcSet, b: &ArcSet) -> (usize, usize) {
        let n = 1440usize;
        let two_pi = 2.0 * PI;
        let norm = |t: f64| ((t % two_pi) + two_pi) % two_pi;
        let mut cuts: Vec<f64> = (0..n).map(|k| two_pi * k as f64 / n as f64).collect();
        for set in [a, b] {
            for &(x, y) in &set.arcs {
                cuts.push(norm(x));
                cuts.push(norm(y));
            }
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        let m = cuts.len();
        let inside = |set: &ArcSet, t: f64| -> bool {
            if set.full {
                return true;
            }
            set.arcs.iter().any(|&(x, y)| {
                [-two_pi, 0.0, two_pi]
                    .iter()
                    .any(|s| t + s >= x - 1e-9 && t + s <= y + 1e-9)
            })
        };
        // Vertex and edge membership (closed sets; edges by midpoint).
        let vin_a: Vec<bool> = cuts.iter().map(|&t| inside(a, t)).collect();
        let vin_b: Vec<bool> = cuts.iter().map(|&t| inside(b, t)).collect();
        let mut ein_a = vec![false; m];
        let mut ein_b = vec![false; m];
        for k in 0..m {
            let t0 = cuts[k];
            let t1 = if k + 1 == m { cuts[0] + two_pi } else { cuts[k + 1] };
            let mid = 0.5 * (t0 + t1);
            ein_a[k] = inside(a, norm(mid));
            ein_b[k] = inside(b, norm(mid));
        }
        // Relative chain complex: cells of A not in B.
        let verts: Vec<usize> = (0..m).filter(|&k| vin_a[k] && !vin_b[k]).collect();
        let edges: Vec<usize> = (0..m).filter(|&k| ein_a[k] && !ein_b[k]).collect();
        let vidx: std::collections::HashMap<usize, usize> =
            verts.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        // Boundary matrix over GF(2) as bitset rows (one row per edge).
        let words = verts.len().div_ceil(64);
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(edges.len());
        for &e in &edges {
            let mut row = vec![0u64; words.max(1)];
            for v in [e, (e + 1) % m] {
                if let Some(&i) = vidx.get(&v) {
                    row[i / 64] ^= 1 << (i % 64);
                }
            }
            rows.push(row);
        }
        let rank = gf2_rank(&mut rows);
        let b0 = verts.len() - rank;
        let b1 = edges.len() - rank;
        (b0, b1)
    }

    fn gf2_rank(rows: &mut [Vec<u64>]) -> usize {
        let mut rank = 0;
        let words = rows.first().map_or(0, |r| r.len());
        for col in 0..words * 64 {
            let (w, bit) = (col / 64, col % 64);
            let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][w] >> bit & 1 == 1)
            else {
                continue;
            };
            rows.swap(rank, pivot);
            for r in 0..rows.len() {
                if r != rank && rows[r][w] >> bit & 1 == 1 {
                    let (head, tail) = rows.split_at_mut(rank.max(r));
                    let (src, dst) = if r < rank {
                        (&tail[0], &mut head[r])
                    } else {
                        (&head[rank], &mut tail[0])
                    };
                    for k in 0..words {
                        dst[k] ^= src[k];
                    }
                }
            }
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rank
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::oracle::simplicial_relative;
    use crate::structure::CarnotStructure;
    use nalgebra::DVector;

    fn arcset(arcs: &[(f64, f64)]) -> ArcSet {
        ArcSet { arcs: arcs.to_vec(), full: false }
    }


    #[test]
    fn relative_betti_matches_spec_examples() {
        let full = ArcSet::full_circle();
        let one = arcset(&[(0.5, 1.5)]);
        assert_eq!(relative_betti(&full, &one).unwrap(), (0, 1));
        let two_sub = arcset(&[(0.6, 0.8), (1.0, 1.2)]);
        assert_eq!(relative_betti(&one, &two_sub).unwrap(), (0, 1));
        let two = arcset(&[(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(relative_betti(&two, &ArcSet::empty()).unwrap(), (2, 0));
    }

    #[test]
    fn relative_betti_matches_simplicial_oracle() {
        let cases: Vec<(ArcSet, ArcSet)> = vec![
            (ArcSet::full_circle(), ArcSet::empty()),
            (ArcSet::full_circle(), arcset(&[(0.5, 1.5)])),
            (ArcSet::full_circle(), arcset(&[(0.5, 1.0), (2.0, 2.5), (4.0, 5.0)])),
            (arcset(&[(0.5, 1.5)]), ArcSet::empty()),
            (arcset(&[(0.5, 1.5)]), arcset(&[(0.6, 0.8), (1.0, 1.2)])),
            (
                arcset(&[(0.0, 1.0), (2.0, 3.0), (4.0, 5.0)]),
                arcset(&[(0.1, 0.3), (0.5, 0.9), (2.2, 2.8)]),
            ),
            (
                arcset(&[(0.0, 2.0), (3.0, 6.0)]),
                arcset(&[(0.2, 0.4), (0.8, 1.0), (1.4, 1.8), (3.5, 4.0), (4.5, 5.5)]),
            ),
        ];
        for (a, b) in &cases {
            let rule = relative_betti(a, b).unwrap();
            let oracle = simplicial_relative(a, b);
            assert_eq!(rule, oracle, "A={a:?} B={b:?}");
        }
    }

    #[test]
    fn relative_betti_rejects_non_nested() {
        let a = arcset(&[(0.0, 1.0)]);
        let b = arcset(&[(2.0, 3.0)]);
        match relative_betti(&a, &b) {
            Err(CarnotError::NotNested) => {}
            other => panic!("expected NotNested, got {other:?}"),
        }
    }

    #[test]
    fn finite_profile_identity_form() {
        let q1 = DMatrix::<f64>::identity(4, 4);
        let q2 = DMatrix::<f64>::zeros(4, 4);
        let profile = index_profile_finite(&q1, &q2, 256).unwrap();
        // index 0 near theta = 0, index 4 near theta = pi
        assert_eq!(profile.value_at(0.1), Some(0));
        assert_eq!(profile.value_at(PI), Some(4));
        assert_eq!(profile.breakpoints.len(), 2);
    }

    #[test]
    fn finite_profile_random_pair_eigencount_oracle() {
        use rand::Rng;
        let mut rng = crate::sampling::rng(11);
        let mut sym = || {
            let m = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            (&m + m.transpose()) * 0.5
        };
        let q1 = sym();
        let q2 = sym();
        let profile = index_profile_finite(&q1, &q2, 512).unwrap();
        for k in 0..10 {
            let t = 0.61 + k as f64 * 0.55;
            let expect = negative_count(&(&q1 * t.cos() + &q2 * t.sin()), 1e-9);
            if let Some(v) = profile.value_at(t) {
                assert_eq!(v, expect as u64, "theta = {t}");
            }
        }
    }

    #[test]
    fn sublevel_nesting() {
        let q1 = DMatrix::<f64>::from_diagonal(&DVector::from_row_slice(&[
            1.0, 1.0, -1.0, -1.0, 0.5,
        ]));
        let q2 = DMatrix::<f64>::from_fn(5, 5, |i, j| {
            if i == j { 0.0 } else { 0.3 / (1.0 + (i + j) as f64) }
        });
        let profile = index_profile_finite(&q1, &q2, 256).unwrap();
        let vmax = profile.max_finite().unwrap();
        for j in 0..vmax {
            let pj = sublevel_arcs(&profile, j);
            let pj1 = sublevel_arcs(&profile, j + 1);
            assert!(pj.subset_of(&pj1), "P_{j} not nested in P_{}", j + 1);
        }
    }

    #[test]
    fn heisenberg_analytic_profile_total_two() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[1.0]);
        for energy in [1.5, 3.7, 10.2] {
            let profile = index_profile_analytic(&s, &p, energy).unwrap();
            let v = 2 * (energy as u64);
            assert_eq!(profile.max_finite(), Some(v));
            let table = betti_from_profile(&profile).unwrap();
            assert_eq!(table.total, 2, "s = {energy}");
            assert_eq!(table.reduced.get(&(v as usize - 1)), Some(&1));
            assert_eq!(total_betti_via_maxima(&profile).unwrap(), 2);
        }
    }

    #[test]
    fn product_of_spheres_all_signatures() {
        for n in 3..=12usize {
            for v in 1..n {
                let diag: Vec<f64> = (0..n).map(|k| if k < v { 1.0 } else { -1.0 }).collect();
                let q1 = DMatrix::from_diagonal(&DVector::from_row_slice(&diag));
                let q2 = DMatrix::zeros(n, n);
                let profile = index_profile_finite(&q1, &q2, 256).unwrap();
                let table = betti_from_profile(&profile).unwrap();
                assert_eq!(table.total, 4, "N={n} v={v}");
                let lo = v.min(n - v);
                assert_eq!(table.reduced.get(&(lo - 1)).copied().unwrap_or(0) >= 1, true);
                assert!(table.reduced.contains_key(&(n - 2)));
            }
        }
    }

    #[test]
    fn maxima_formula_agrees_with_sublevel_formula() {
        // Synthetic step profiles on an arc, sentinel-bounded.
        let mk = |vals: &[u64]| {
            let n = vals.len();
            let step = 1.0 / (n as f64 + 1.0);
            IndexProfile {
                domain: ProfileDomain::Arc { start: 0.0, end: 1.0 },
                breakpoints: (1..=n + 1).map(|k| k as f64 * step).collect(),
                values: std::iter::once(INDEX_INFINITE)
                    .chain(vals.iter().copied())
                    .chain(std::iter::once(INDEX_INFINITE))
                    .collect(),
                degenerate: false,
                dim: None,
            }
        };
        let cases: Vec<Vec<u64>> = vec![
            vec![3],
            vec![0],
            vec![0, 1, 0],
            vec![3, 4, 3],
            vec![2, 5, 1, 4, 2],
            vec![6, 2, 6, 2, 6],
            vec![1, 0, 2, 0, 1, 3],
            vec![4, 4, 4],
            vec![0, 3, 0, 3, 0],
        ];
        for vals in &cases {
            let p = mk(vals);
            let table = betti_from_profile(&p).unwrap();
            let maxima = total_betti_via_maxima(&p).unwrap();
            assert_eq!(table.total, maxima, "profile {vals:?}");
        }
    }

    #[test]
    fn analytic_profile_matches_truncated_pencil() {
        use crate::operator::pencil_form_matrix;
        let (structure, _) = crate::sampling::random_commuting_structure(
            4,
            2,
            &mut crate::sampling::rng(5),
        );
        let p = VerticalPoint::from_slice(&[0.3, 1.1]);
        let s = 4.0;
        let profile = index_profile_analytic(&structure, &p, s).unwrap();
        let order = 2 * (profile.max_finite().unwrap() as usize + 4);
        for k in 0..40 {
            let theta = match profile.domain {
                ProfileDomain::Arc { start, end } => {
                    start + (end - start) * (0.05 + 0.9 * k as f64 / 39.0)
                }
                _ => unreachable!(),
            };
            let Some(v) = profile.value_at(theta) else { continue };
            let pencil = pencil_form_matrix(&structure, &p, s, 0, order) * theta.cos()
                + pencil_form_matrix(&structure, &p, s, 1, order) * theta.sin();
            let count = negative_count(&pencil, 1e-10) as u64;
            assert_eq!(v, count, "theta = {theta}");
        }
    }
}
