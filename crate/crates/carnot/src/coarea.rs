//! The topological coarea constant for corank-two structures.
//!
//! For a vertical target `p` the eigenvalue curves `lambda_j(omega) =
//! alpha_j(omega) / |<omega, p>|` control the growth of the Betti numbers of
//! the path spaces: the total Betti number at energy `s` grows like
//! `tau(p) s`, where `tau(p)` integrates the excess variation
//! `sum_j |lambda_j'| - |sum_j lambda_j'|` over the covector circle.  The
//! curves are counted with multiplicity two throughout, matching the index
//! profile convention.

use serde::{Deserialize, Serialize};

use crate::error::CarnotError;
use crate::structure::{CarnotStructure, Covector, VerticalPoint};
use crate::topology::{betti_from_profile, index_profile_analytic};
use crate::Result;

use std::f64::consts::PI;

/// Commutator norm above which a pair does not count as commuting.
pub const COMMUTING_TOL: f64 = 1e-10;
/// Distance kept from the singular angles where `<omega, p>` vanishes.
const SINGULAR_CLIP: f64 = 1e-6;
/// Quadrature tolerance.
const QUAD_TOL: f64 = 1e-6;
/// Central-difference step, relative to the half-circle length.
const DIFF_STEP: f64 = 1e-5;

/// The eigenvalue curves of a structure relative to a target, with the
/// multiplicity-two convention applied once here.
pub struct LambdaCurves<'a> {
    structure: &'a CarnotStructure,
    p: &'a VerticalPoint,
    /// Number of single-counted curves (invariant planes at a generic angle).
    planes: usize,
    /// The two angles where `<omega(t), p>` vanishes.
    pub singular_angles: (f64, f64),
}

impl<'a> LambdaCurves<'a> {
    pub fn new(structure: &'a CarnotStructure, p: &'a VerticalPoint) -> Result<Self> {
        if structure.corank() != 2 {
            return Err(CarnotError::DimensionMismatch {
                what: "corank",
                expected: 2,
                got: structure.corank(),
            });
        }
        if p.len() != 2 || p.norm() == 0.0 {
            return Err(CarnotError::ZeroTarget);
        }
        let theta_p = p.0[1].atan2(p.0[0]);
        let probe = Covector::from_slice(&[
            (theta_p + 0.37).cos(),
            (theta_p + 0.37).sin(),
        ]);
        let planes = structure.skew_spectrum(&probe)?.alphas.len();
        Ok(LambdaCurves {
            structure,
            p,
            planes,
            singular_angles: (theta_p - 0.5 * PI, theta_p + 0.5 * PI),
        })
    }

    /// Single-counted curve values at `t`, sorted decreasing and padded with
    /// zeros where a plane momentarily degenerates.
    fn single(&self, t: f64) -> Vec<f64> {
        let omega = Covector::from_slice(&[t.cos(), t.sin()]);
        let z = omega.pair(self.p).abs();
        let sp = self
            .structure
            .skew_spectrum(&omega)
            .unwrap_or_else(|e| panic!("spectrum at angle {t}: {e}"));
        let mut out: Vec<f64> = sp.alphas.iter().map(|a| a / z).collect();
        out.resize(self.planes, 0.0);
        out
    }

    /// Curve values at `t` with the multiplicity-two doubling.
    pub fn values(&self, t: f64) -> Vec<f64> {
        let single = self.single(t);
        let mut out = Vec::with_capacity(2 * single.len());
        for v in single {
            out.push(v);
            out.push(v);
        }
        out
    }

    /// Central-difference derivatives of the single-counted sorted curves.
    fn derivatives(&self, t: f64, h: f64) -> Vec<f64> {
        let lo = self.single(t - h);
        let hi = self.single(t + h);
        lo.iter().zip(&hi).map(|(a, b)| (b - a) / (2.0 * h)).collect()
    }

    /// Excess-variation integrand at `t` with the default difference step,
    /// for plot dumps.
    pub fn integrand_at(&self, t: f64) -> f64 {
        self.integrand(t, DIFF_STEP * PI)
    }

    /// Excess-variation integrand, doubled for multiplicity two.  The
    /// difference step shrinks near the piece ends `a`, `b` so the stencil
    /// never straddles a kink of the sorted curves.
    fn integrand_in(&self, t: f64, h: f64, a: f64, b: f64) -> f64 {
        let h = h.min(0.45 * (t - a)).min(0.45 * (b - t)).max(1e-10);
        self.integrand(t, h)
    }

    /// Excess-variation integrand, doubled for multiplicity two.
    fn integrand(&self, t: f64, h: f64) -> f64 {
        let d = self.derivatives(t, h);
        let total: f64 = d.iter().sum();
        let absolute: f64 = d.iter().map(|v| v.abs()).sum();
        (2.0 * (absolute - total.abs())).max(0.0)
    }
}

/// Eigenvalue tuples of a commuting pair and their determinants against `p`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommutingData {
    /// Single-counted tuples `v_j = (<X, A_1 Y>, <X, A_2 Y>)` per common
    /// invariant plane; each stands for a doubled curve.
    pub v: Vec<[f64; 2]>,
    /// `det [[p1, v1], [p2, v2]]` per plane.
    pub m: Vec<f64>,
}

/// Common-plane data of a commuting corank-two structure.
pub fn commuting_data(structure: &CarnotStructure, p: &VerticalPoint) -> Result<CommutingData> {
    if structure.corank() != 2 {
        return Err(CarnotError::DimensionMismatch {
            what: "corank",
            expected: 2,
            got: structure.corank(),
        });
    }
    let a1 = structure.matrix(0);
    let a2 = structure.matrix(1);
    let scale = a1.norm().max(a2.norm()).max(1.0);
    let defect = (a1 * a2 - a2 * a1).norm();
    if defect > COMMUTING_TOL * scale * scale {
        return Err(CarnotError::NotCommuting { defect });
    }
    // A generic combination has the common invariant planes as its canonical
    // planes; the irrational ratio avoids accidental degeneracy.
    let phi = 0.618_033_988_749_894_9;
    let sp = crate::structure::skew_spectrum(&(a1 + a2 * phi))?;
    let mut v = Vec::new();
    let mut m = Vec::new();
    for (x, y) in &sp.frames {
        let v1 = x.dot(&(a1 * y));
        let v2 = x.dot(&(a2 * y));
        // The plane must be invariant for both matrices.
        let r1 = (a1 * x + y * v1).norm();
        let r2 = (a2 * x + y * v2).norm();
        if r1.max(r2) > 1e-8 * scale {
            return Err(CarnotError::NotCommuting { defect: r1.max(r2) });
        }
        v.push([v1, v2]);
        m.push(p.0[0] * v2 - p.0[1] * v1);
    }
    Ok(CommutingData { v, m })
}

/// Numerical coarea constant.
///
/// Integrates the excess variation of the curves over one period between the
/// singular angles, subdividing at curve crossings, interior curve zeros and
/// derivative sign changes so that each piece is smooth, then applying
/// adaptive Simpson quadrature.  Near the singular ends all derivatives share
/// their sign and the integrand vanishes; the ends are clipped at 1e-6 after
/// checking that the integrand is indeed negligible there.
pub fn tau_numeric(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    refine: usize,
) -> Result<f64> {
    let curves = LambdaCurves::new(structure, p)?;
    let refine = refine.max(512);
    let (lo, hi) = (
        curves.singular_angles.0 + SINGULAR_CLIP,
        curves.singular_angles.1 - SINGULAR_CLIP,
    );
    let len = hi - lo;
    let h = DIFF_STEP * len;

    // --- event angles: crossings, zeros, derivative sign changes ---------
    let mut events = vec![lo, hi];
    let grid: Vec<f64> = (0..=refine)
        .map(|k| lo + len * k as f64 / refine as f64)
        .collect();
    let singles: Vec<Vec<f64>> = grid.iter().map(|&t| curves.single(t)).collect();
    let n_curves = curves.planes;

    // Crossings of adjacent sorted curves and zeros of the smallest one show
    // up as dips of a nonnegative gap function.
    let curves_ref = &curves;
    let mut gaps: Vec<Box<dyn Fn(f64) -> f64 + '_>> = Vec::new();
    for i in 0..n_curves {
        if i + 1 < n_curves {
            gaps.push(Box::new(move |t| {
                let s = curves_ref.single(t);
                s[i] - s[i + 1]
            }));
        }
    }
    gaps.push(Box::new(|t| *curves_ref.single(t).last().unwrap()));
    for (gi, gap) in gaps.iter().enumerate() {
        for k in 1..refine {
            let g0 = gap_from_samples(&singles, gi, k - 1, n_curves);
            let g1 = gap_from_samples(&singles, gi, k, n_curves);
            let g2 = gap_from_samples(&singles, gi, k + 1, n_curves);
            if g1 <= g0 && g1 <= g2 && g1 < 1e-2 {
                let t = ternary_min(grid[k - 1], grid[k + 1], gap);
                if gap(t) < 1e-7 {
                    events.push(t);
                }
            }
        }
    }

    // Derivative sign changes per sorted curve.
    for i in 0..n_curves {
        let deriv = |t: f64| curves.derivatives(t, h)[i];
        let mut prev = deriv(grid[0] + h);
        for k in 1..refine {
            let cur = deriv(grid[k]);
            if prev != 0.0 && cur != 0.0 && (prev > 0.0) != (cur > 0.0) {
                events.push(bisect_sign(grid[k - 1].max(lo + h), grid[k], &deriv));
            }
            prev = cur;
        }
    }

    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup_by(|a, b| (*a - *b).abs() < 1e-8);

    // --- end check: the integrand must vanish at the clipped ends --------
    let f = |t: f64| curves.integrand(t, h.min(0.45 * SINGULAR_CLIP));
    let end_scale: f64 = curves
        .derivatives(lo, 0.45 * SINGULAR_CLIP)
        .iter()
        .map(|v| v.abs())
        .sum();
    let end_tol = 1e-3_f64.max(1e-10 * end_scale);
    if f(lo) > end_tol || f(hi) > end_tol {
        return Err(CarnotError::ConsistencyFailure(format!(
            "integrand does not vanish at the singular ends: {:.3e} / {:.3e}",
            f(lo),
            f(hi)
        )));
    }

    // --- adaptive quadrature on each smooth piece -------------------------
    let mut tau = 0.0;
    for w in events.windows(2) {
        let (a, b) = (w[0] + 1e-9, w[1] - 1e-9);
        if b <= a {
            continue;
        }
        let g = |t: f64| curves.integrand_in(t, h, a - 5e-10, b + 5e-10);
        tau += adaptive_simpson(&g, a, b, QUAD_TOL * (b - a) / len)?;
    }
    Ok(tau.max(0.0))
}

fn gap_from_samples(singles: &[Vec<f64>], gap_index: usize, k: usize, n: usize) -> f64 {
    let s = &singles[k];
    if gap_index + 1 < n {
        s[gap_index] - s[gap_index + 1]
    } else {
        *s.last().unwrap()
    }
}

fn ternary_min<F: Fn(f64) -> f64>(mut a: f64, mut b: f64, f: &F) -> f64 {
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

fn bisect_sign<F: Fn(f64) -> f64>(mut a: f64, mut b: f64, f: &F) -> f64 {
    let fa = f(a);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, len: f64) -> f64 {
        len / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = left + right - whole;
        // The integrand comes from central differences and carries an
        // absolute noise floor; refining below it cannot help.
        if err.abs() < 15.0 * tol.max(1e-13) || err.abs() < 1e-10 {
            return Ok(left + right + err / 15.0);
        }
        if depth == 0 {
            if err.abs() < 1e-6 {
                return Ok(left + right + err / 15.0);
            }
            return Err(CarnotError::NoConvergence {
                iterations: 0,
                residual: err.abs(),
            });
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 28)
}

/// Closed-form coarea constant for a commuting pair.
///
/// On the half-circle where `<omega(t), p>` is positive the integrand is
/// `(sum_j |m_j| - |sum_j sgn(<omega(t), v_j>) m_j|) / <omega(t), p>^2` with
/// a piecewise-constant numerator; each subinterval integrates to a
/// difference of `tan(t - theta_p) / |p|^2`.  The subintervals touching the
/// singular ends have zero numerator, so the improper ends drop out.
pub fn tau_commuting(structure: &CarnotStructure, p: &VerticalPoint) -> Result<f64> {
    let data = commuting_data(structure, p)?;
    let theta_p = p.0[1].atan2(p.0[0]);
    let (lo, hi) = (theta_p - 0.5 * PI, theta_p + 0.5 * PI);

    // Sign-change angles of <omega(t), v_j> inside the half circle.
    let mut cuts = vec![lo, hi];
    for vj in &data.v {
        let base = vj[1].atan2(vj[0]) + 0.5 * PI;
        for k in -2..=2 {
            let t = base + k as f64 * PI;
            if t > lo + 1e-12 && t < hi - 1e-12 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let abs_sum: f64 = data.m.iter().map(|m| m.abs()).sum();
    let pn2 = p.norm() * p.norm();
    let mut tau = 0.0;
    for (k, w) in cuts.windows(2).enumerate() {
        let mid = 0.5 * (w[0] + w[1]);
        let omega = [mid.cos(), mid.sin()];
        let signed: f64 = data
            .v
            .iter()
            .zip(&data.m)
            .map(|(v, m)| (omega[0] * v[0] + omega[1] * v[1]).signum() * m)
            .sum();
        let numerator = abs_sum - signed.abs();
        let boundary = k == 0 || k + 2 == cuts.len();
        if boundary {
            if numerator.abs() > 1e-9 * abs_sum.max(1.0) {
                return Err(CarnotError::ConsistencyFailure(format!(
                    "nonzero integrand {numerator:.3e} on a singular end interval"
                )));
            }
            continue;
        }
        tau += numerator * ((w[1] - theta_p).tan() - (w[0] - theta_p).tan()) / pn2;
    }
    // Multiplicity-two doubling.
    Ok(2.0 * tau)
}

/// Result of the asymptotic-slope consistency check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub slope: f64,
    pub tau: f64,
    pub rel_err: f64,
    /// `(s, total Betti)` rows behind the fit.
    pub rows: Vec<(f64, u64)>,
}

/// Verifies `b(Omega_p^s) / s -> tau(p)` on a list of energies.
///
/// Computes the total Betti number through the analytic index profile at
/// every `s`, fits a least-squares line through the larger half of the
/// points, and compares the slope with [`tau_numeric`].
pub fn slope_check(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s_list: &[f64],
) -> Result<SlopeCheck> {
    if structure.corank() != 2 {
        return Err(CarnotError::DimensionMismatch {
            what: "corank",
            expected: 2,
            got: structure.corank(),
        });
    }
    if s_list.len() < 5 {
        return Err(CarnotError::BadDimensions(
            "slope check needs at least five energies".into(),
        ));
    }
    let mut sorted = s_list.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let totals: Vec<u64> = crate::par::map_slice(&sorted, |&s| {
        let profile = index_profile_analytic(structure, p, s)?;
        Ok(betti_from_profile(&profile)?.total)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(f64, u64)> = sorted.iter().copied().zip(totals).collect();

    let half = &rows[rows.len() / 2..];
    let n = half.len() as f64;
    let sx: f64 = half.iter().map(|r| r.0).sum();
    let sy: f64 = half.iter().map(|r| r.1 as f64).sum();
    let sxx: f64 = half.iter().map(|r| r.0 * r.0).sum();
    let sxy: f64 = half.iter().map(|r| r.0 * r.1 as f64).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    let tau = tau_numeric(structure, p, 1024)?;
    let rel_err = (slope - tau).abs() / tau.abs().max(1e-30);
    Ok(SlopeCheck { slope, tau, rel_err, rows })
}
