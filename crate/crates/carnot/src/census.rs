//! Enumeration of the critical manifolds of the energy on a vertical fiber.
//!
//! A normal geodesic through the origin with end point in the vertical layer
//! corresponds to a covector `omega` for which some eigenvalue `alpha_i(omega)`
//! is a positive integer, together with an initial velocity supported on the
//! resonant planes whose end point hits the target.  Each solution comes in
//! an `nu`-torus of reparametrizations, `nu` being the number of independent
//! resonances.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::endpoint::{endpoint_quadratic, project_exponential, ExponentialControl};
use crate::error::CarnotError;
use crate::operator::{embed_control, q_form_matrix};
use crate::par;
use crate::structure::{CarnotStructure, Covector, SkewSpectrum, VerticalPoint};
use crate::Result;

use std::f64::consts::PI;

/// An eigenvalue within this of a positive integer counts as a resonance.
pub const INTEGER_TOL: f64 = 1e-9;
/// Covectors closer than this are merged into one critical manifold.
pub const MERGE_TOL: f64 = 1e-8;
/// Residual allowed on `q(sample) - p`.
pub const SAMPLE_TOL: f64 = 1e-7;
/// Minimum number of circle samples for the corank-two scan.
pub const MIN_GRID: usize = 256;

/// A connected critical manifold of the restricted energy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalManifold {
    pub omega: Covector,
    /// Resonant pairs `(plane, wave number)`.
    pub resonances: Vec<(usize, usize)>,
    /// Torus rank: number of independent resonances.
    pub nu: usize,
    /// Critical value of the energy, `omega(p)`.
    pub energy: f64,
    /// Morse-Bott index (even: each non-resonant unstable plane counts twice).
    pub index: usize,
    /// A control on the manifold with end point `(0, p)`.
    pub sample: ExponentialControl,
    /// Set when the target sits on the boundary of the reachable cone.
    pub boundary: bool,
}

/// The census of critical manifolds with energy in `(0, s]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CensusReport {
    pub manifolds: Vec<CriticalManifold>,
    pub s_max: f64,
    /// Empirical cone constant `max |omega| / omega(p)`.
    pub cone_constant: f64,
    pub counts_by_nu: BTreeMap<usize, usize>,
}

impl CensusReport {
    pub fn len(&self) -> usize {
        self.manifolds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifolds.is_empty()
    }

    /// Largest resonant wave number in the census.
    pub fn max_wave(&self) -> usize {
        self.manifolds
            .iter()
            .flat_map(|m| m.resonances.iter().map(|r| r.1))
            .max()
            .unwrap_or(0)
    }
}

/// Morse-Bott index of the critical manifolds with multiplier `omega`:
/// `2 sum_i #{k >= 1 : alpha_i(omega)/k > 1 + tol}`.
pub fn manifold_index(structure: &CarnotStructure, omega: &Covector) -> Result<usize> {
    let sp = structure.skew_spectrum(omega)?;
    let resonant = sp.alphas.iter().any(|&a| {
        let n = a.round();
        n >= 1.0 && (a - n).abs() <= INTEGER_TOL * n.max(1.0)
    });
    if !resonant {
        return Err(CarnotError::NotAMultiplier { tol: INTEGER_TOL });
    }
    let mut index = 0usize;
    for &a in &sp.alphas {
        // Count k with a/k > 1 + tol, i.e. k < a / (1 + tol).
        let count = (a / (1.0 + INTEGER_TOL)).ceil() as isize - 1;
        index += 2 * count.max(0) as usize;
    }
    Ok(index)
}

fn sort_manifolds(manifolds: &mut [CriticalManifold]) {
    manifolds.sort_by(|a, b| {
        a.energy
            .partial_cmp(&b.energy)
            .unwrap()
            .then_with(|| {
                a.omega
                    .0
                    .iter()
                    .zip(b.omega.0.iter())
                    .map(|(x, y)| x.partial_cmp(y).unwrap())
                    .find(|o| *o != std::cmp::Ordering::Equal)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

fn finalize(
    mut manifolds: Vec<CriticalManifold>,
    s: f64,
) -> CensusReport {
    sort_manifolds(&mut manifolds);
    let cone_constant = manifolds
        .iter()
        .map(|m| m.omega.0.norm() / m.energy)
        .fold(0.0, f64::max);
    let mut counts_by_nu = BTreeMap::new();
    for m in &manifolds {
        *counts_by_nu.entry(m.nu).or_insert(0usize) += 1;
    }
    CensusReport {
        manifolds,
        s_max: s,
        cone_constant,
        counts_by_nu,
    }
}

/// Truncation order large enough to project the sample of `m`: it must cover
/// the full spectrum of `omega A`, not just the resonant waves.
fn truncation_for(structure: &CarnotStructure, m: &CriticalManifold) -> Result<usize> {
    let sp = structure.skew_spectrum(&m.omega)?;
    let waves = m.resonances.iter().map(|r| r.1).max().unwrap_or(1);
    Ok(waves.max(sp.max_alpha().ceil() as usize) + 1)
}

/// Validates that the sample control of a manifold actually reaches `p`.
fn check_sample(
    structure: &CarnotStructure,
    m: &CriticalManifold,
    p: &VerticalPoint,
) -> Result<()> {
    let order = truncation_for(structure, m)?;
    let proj = project_exponential(structure, &m.sample, order)?;
    let ep = endpoint_quadratic(structure, &proj.control)?;
    let err = (&ep.vertical.0 - &p.0).norm();
    if err > SAMPLE_TOL * p.norm().max(1.0) {
        return Err(CarnotError::ConsistencyFailure(format!(
            "census sample misses the target by {err:.3e}"
        )));
    }
    Ok(())
}

/// Census for corank one: multipliers are `omega = sign(p) n / beta_i`.
pub fn enumerate_l1(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
) -> Result<CensusReport> {
    if structure.corank() != 1 {
        return Err(CarnotError::DimensionMismatch {
            what: "corank",
            expected: 1,
            got: structure.corank(),
        });
    }
    if p.len() != 1 {
        return Err(CarnotError::DimensionMismatch {
            what: "vertical point length",
            expected: 1,
            got: p.len(),
        });
    }
    let pv = p.0[0];
    if pv == 0.0 {
        return Err(CarnotError::ZeroTarget);
    }
    let sign = pv.signum();
    let sp = structure.skew_spectrum(&Covector::from_slice(&[1.0]))?;

    // Candidate multipliers n / beta_i, grouped when they coincide.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &beta) in sp.alphas.iter().enumerate() {
        let mut n = 1usize;
        loop {
            let energy = n as f64 * pv.abs() / beta;
            if energy > s * (1.0 + 1e-12) {
                break;
            }
            candidates.push((n as f64 / beta, i, n));
            n += 1;
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut manifolds: Vec<CriticalManifold> = Vec::new();
    let mut idx = 0;
    while idx < candidates.len() {
        let mut group = vec![candidates[idx]];
        let mut j = idx + 1;
        while j < candidates.len() && (candidates[j].0 - candidates[idx].0).abs() <= MERGE_TOL {
            group.push(candidates[j]);
            j += 1;
        }
        idx = j;

        let omega_val = sign * group[0].0;
        let omega = Covector::from_slice(&[omega_val]);
        let energy = omega_val * pv;
        let resonances: Vec<(usize, usize)> = group.iter().map(|g| (g.1, g.2)).collect();
        let nu = resonances.len();
        let index = manifold_index(structure, &omega)?;
        // Sample on the first resonant plane: J = pi |u0|^2 = energy.
        let (x, _) = &sp.frames[resonances[0].0];
        let u0 = x * (energy / PI).sqrt();
        let m = CriticalManifold {
            omega,
            resonances,
            nu,
            energy,
            index,
            sample: ExponentialControl {
                omega: Covector::from_slice(&[omega_val]),
                u0,
            },
            boundary: false,
        };
        check_sample(structure, &m, p)?;
        manifolds.push(m);
    }
    Ok(finalize(manifolds, s))
}

/// Spectral data sampled along the circle of unit covectors.
struct CircleSample {
    theta: f64,
    spectrum: SkewSpectrum,
    /// Per plane, the vector `(<X, A_1 Y>, <X, A_2 Y>)`; the end point of a
    /// unit control on a resonant plane with wave number `n` is
    /// `(pi/n) alpha(omega_hat) / alpha(omega) * h`, i.e. `(pi/n) h` once
    /// `alpha = n`.
    rays: Vec<[f64; 2]>,
    omega_p: f64,
}

fn sample_circle(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    theta: f64,
) -> Result<CircleSample> {
    let w = Covector::from_slice(&[theta.cos(), theta.sin()]);
    let spectrum = structure.skew_spectrum(&w)?;
    let rays = spectrum
        .frames
        .iter()
        .map(|(x, y)| {
            [
                x.dot(&(structure.matrix(0) * y)),
                x.dot(&(structure.matrix(1) * y)),
            ]
        })
        .collect();
    Ok(CircleSample {
        theta,
        spectrum,
        rays,
        omega_p: w.pair(p),
    })
}

fn cross2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Solves `c1 a + c2 b = p` for a 2x2 system; None when near-singular.
fn solve_cone(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> Option<(f64, f64)> {
    let det = cross2(a, b);
    let scale = (a[0].hypot(a[1]) * b[0].hypot(b[1])).max(1e-300);
    if det.abs() < 1e-10 * scale {
        return None;
    }
    let c1 = cross2(p, b) / det;
    let c2 = cross2(a, p) / det;
    Some((c1, c2))
}

fn bisect<F: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, f: &F) -> f64 {
    let mut flo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ternary_min<F: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, f: &F) -> f64 {
    for _ in 0..120 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

/// One detection pass of the corank-two census at a given grid size.
fn detect_l2(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
    grid: usize,
) -> Result<Vec<CriticalManifold>> {
    let two_pi = 2.0 * PI;
    let samples: Vec<CircleSample> = par::map_indexed(grid, |j| {
        sample_circle(structure, p, two_pi * j as f64 / grid as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n_planes = samples[0].spectrum.alphas.len();
    if samples.iter().any(|c| c.spectrum.alphas.len() != n_planes) {
        return Err(CarnotError::NonGenericTarget(
            "number of invariant planes changes along the circle".into(),
        ));
    }
    let pv = [p.0[0], p.0[1]];
    let pn = p.norm();

    // Planes can momentarily dip below the kernel cut at isolated angles;
    // missing entries read as zero there.
    let alpha_at = |t: f64, i: usize| -> f64 {
        let w = Covector::from_slice(&[t.cos(), t.sin()]);
        structure
            .skew_spectrum(&w)
            .unwrap()
            .alphas
            .get(i)
            .copied()
            .unwrap_or(0.0)
    };

    // Candidates as (omega, plane, wave); merged afterwards.
    let mut raw: Vec<(DVector<f64>, usize, usize, bool)> = Vec::new();

    // --- single resonances: p parallel to a half-line direction ---------
    for i in 0..n_planes {
        for j in 0..grid {
            let a = &samples[j];
            let b = &samples[(j + 1) % grid];
            let fa = cross2(&a.rays[i], &pv);
            let fb = cross2(&b.rays[i], &pv);
            if fa == 0.0 || (fa > 0.0) != (fb > 0.0) {
                let f = |t: f64| {
                    let c = sample_circle(structure, p, t).unwrap();
                    c.rays.get(i).map_or(0.0, |h| cross2(h, &pv))
                };
                let t1 = if j + 1 == grid { two_pi } else { b.theta };
                let root = if fa == 0.0 { a.theta } else { bisect(a.theta, t1, &f) };
                let c = sample_circle(structure, p, root)?;
                let Some(&h) = c.rays.get(i) else { continue };
                let hn = h[0].hypot(h[1]);
                // Reject spurious roots from sorted-label swaps and the
                // antipodal half-line.
                if hn < 1e-12 * pn
                    || cross2(&h, &pv).abs() > 1e-8 * hn * pn
                    || dot2(&h, &pv) <= 0.0
                {
                    continue;
                }
                let alpha = c.spectrum.alphas[i];
                let mut n = 1usize;
                loop {
                    // q(sqrt(c) X_i) = c (pi/n) h = p  =>  energy = pi c.
                    let coeff = n as f64 * pn / (PI * hn);
                    let energy = PI * coeff;
                    if energy > s * (1.0 + 1e-12) {
                        break;
                    }
                    let r = n as f64 / alpha;
                    let omega = DVector::from_row_slice(&[r * root.cos(), r * root.sin()]);
                    raw.push((omega, i, n, false));
                    n += 1;
                }
            }
        }
    }

    // --- double resonances: rational ratios of two eigenvalue curves ----
    for i in 0..n_planes {
        for jpl in (i + 1)..n_planes {
            for g in 0..grid {
                let a = &samples[g];
                let b = &samples[(g + 1) % grid];
                let t1 = if g + 1 == grid { two_pi } else { b.theta };
                // Prune intervals pointing far from the reachable cone: the
                // target must be expressible with nonnegative coefficients.
                let near_cone = [a, b].iter().any(|c| {
                    c.omega_p > 0.0
                        && match solve_cone(&c.rays[i], &c.rays[jpl], &pv) {
                            Some((c1, c2)) => {
                                let norm = c1.abs().max(c2.abs()).max(1e-300);
                                c1 / norm > -0.5 && c2 / norm > -0.5
                            }
                            None => true,
                        }
                });
                if !near_cone {
                    continue;
                }
                let (ai0, aj0) = (a.spectrum.alphas[i], a.spectrum.alphas[jpl]);
                let (ai1, aj1) = (b.spectrum.alphas[i], b.spectrum.alphas[jpl]);
                let wp = a.omega_p.max(b.omega_p);
                if wp <= 0.0 {
                    continue;
                }
                // energy = n <omega_hat, p> / alpha_i <= s bounds the waves.
                let nmax = (s * (ai0 / a.omega_p.max(1e-9)).max(ai1 / b.omega_p.max(1e-9))).ceil()
                    as usize
                    + 1;
                let (rlo, rhi) = {
                    let r0 = ai0 / aj0;
                    let r1 = ai1 / aj1;
                    let lo = r0.min(r1);
                    let hi = r0.max(r1);
                    let margin = 0.5 * (hi - lo) + 1e-9;
                    (lo - margin, hi + margin)
                };
                for m in 1..=nmax {
                    let lo_n = ((rlo * m as f64).floor().max(1.0)) as usize;
                    let hi_n = (rhi * m as f64).ceil() as usize;
                    for n in lo_n..=hi_n.min(nmax) {
                        if n < m {
                            continue;
                        }
                        let gfun = |t: f64| m as f64 * alpha_at(t, i) - n as f64 * alpha_at(t, jpl);
                        let g0 = m as f64 * ai0 - n as f64 * aj0;
                        let g1 = m as f64 * ai1 - n as f64 * aj1;
                        if g0 != 0.0 && (g0 > 0.0) == (g1 > 0.0) {
                            continue;
                        }
                        let root = bisect(a.theta, t1, &gfun);
                        let c = sample_circle(structure, p, root)?;
                        if c.spectrum.alphas.len() <= jpl {
                            continue;
                        }
                        let (av, bv) = (c.spectrum.alphas[i], c.spectrum.alphas[jpl]);
                        if (m as f64 * av - n as f64 * bv).abs() > 1e-8 * (n as f64) {
                            continue;
                        }
                        let r = n as f64 / av;
                        let energy = r * c.omega_p;
                        if energy <= 0.0 || energy > s * (1.0 + 1e-12) {
                            continue;
                        }
                        // Exact end points of unit controls on the planes.
                        let qi = [PI / n as f64 * c.rays[i][0], PI / n as f64 * c.rays[i][1]];
                        let qj = [PI / m as f64 * c.rays[jpl][0], PI / m as f64 * c.rays[jpl][1]];
                        if let Some((c1, c2)) = solve_cone(&qi, &qj, &pv) {
                            let tol = 1e-9 * (c1.abs() + c2.abs()).max(1.0);
                            if c1 >= -tol && c2 >= -tol {
                                let omega =
                                    DVector::from_row_slice(&[r * root.cos(), r * root.sin()]);
                                let boundary = c1 <= tol || c2 <= tol;
                                raw.push((omega.clone(), i, n, boundary));
                                raw.push((omega, jpl, m, boundary));
                            }
                        }
                    }
                }
            }
        }
    }

    // --- coinciding eigenvalue curves (touch points of sorted labels) ---
    for i in 0..n_planes.saturating_sub(1) {
        let j = i + 1;
        for g in 0..grid {
            let a = &samples[g];
            let b = &samples[(g + 1) % grid];
            let t1 = if g + 1 == grid { two_pi } else { b.theta };
            let gap0 = a.spectrum.alphas[i] - a.spectrum.alphas[j];
            let gap1 = b.spectrum.alphas[i] - b.spectrum.alphas[j];
            let width = two_pi / grid as f64;
            // Only dips that can plausibly reach zero inside the interval.
            if gap0.min(gap1) > 4.0 * width * 10.0 {
                continue;
            }
            // The minimum may sit at an interval end (in particular exactly
            // on a grid point); duplicates from adjacent intervals are
            // collapsed later by the multiplier merge.
            let gfun = |t: f64| alpha_at(t, i) - alpha_at(t, j);
            let tc = [ternary_min(a.theta, t1, &gfun), a.theta, t1]
                .into_iter()
                .min_by(|x, y| gfun(*x).partial_cmp(&gfun(*y)).unwrap())
                .unwrap();
            if gfun(tc) > 1e-10 {
                continue;
            }
            let c = sample_circle(structure, p, tc)?;
            if c.omega_p <= 0.0 || c.spectrum.alphas.len() <= j {
                continue;
            }
            let aval = 0.5 * (c.spectrum.alphas[i] + c.spectrum.alphas[j]);
            // The two frames span a common 4-dimensional eigenspace; rays
            // computed from arbitrary frames can mix the true planes, so
            // split the eigenspace by diagonalizing the first form on it.
            let rays = split_degenerate_rays(structure, &c.spectrum, i, j)?;
            let mut n = 1usize;
            loop {
                let r = n as f64 / aval;
                let energy = r * c.omega_p;
                if energy > s * (1.0 + 1e-12) {
                    break;
                }
                let qi = [PI / n as f64 * rays.0[0], PI / n as f64 * rays.0[1]];
                let qj = [PI / n as f64 * rays.1[0], PI / n as f64 * rays.1[1]];
                if let Some((c1, c2)) = solve_cone(&qi, &qj, &pv) {
                    let tol = 1e-9 * (c1.abs() + c2.abs()).max(1.0);
                    if c1 >= -tol && c2 >= -tol {
                        let omega = DVector::from_row_slice(&[r * tc.cos(), r * tc.sin()]);
                        raw.push((omega.clone(), i, n, true));
                        raw.push((omega, j, n, true));
                    }
                }
                n += 1;
            }
        }
    }

    Ok(assemble_l2(structure, p, s, raw)?)
}

/// End-point rays of the two true invariant planes inside a degenerate
/// (touching) eigenspace, obtained by diagonalizing `sym(-A_1 omega A)`
/// restricted to the common eigenspace.
fn split_degenerate_rays(
    structure: &CarnotStructure,
    sp: &SkewSpectrum,
    i: usize,
    j: usize,
) -> Result<([f64; 2], [f64; 2])> {
    let d = sp.frames[i].0.len();
    let basis = [
        sp.frames[i].0.clone(),
        sp.frames[i].1.clone(),
        sp.frames[j].0.clone(),
        sp.frames[j].1.clone(),
    ];
    let wa = sp.reassemble(d);
    let forms: Vec<DMatrix<f64>> = (0..2)
        .map(|k| {
            let b = structure.matrix(k) * &wa;
            let sym = -(&b + b.transpose()) * 0.5;
            DMatrix::from_fn(4, 4, |r, c| basis[r].dot(&(&sym * &basis[c])))
        })
        .collect();
    let eig = forms[0].clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    // Expect two eigenvalues of multiplicity two: {c, c, c', c'}.
    let e: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    if (e[0] - e[1]).abs() > 1e-6 * (1.0 + e[0].abs()) || (e[2] - e[3]).abs() > 1e-6 * (1.0 + e[3].abs())
    {
        return Err(CarnotError::NonGenericTarget(
            "degenerate eigenspace does not split into two planes".into(),
        ));
    }
    let value = |cols: [usize; 2], form: &DMatrix<f64>| -> f64 {
        let v = eig.eigenvectors.column(order[cols[0]]);
        (form * v).dot(&v)
    };
    let ray_a = [e[0], value([0, 1], &forms[1])];
    let ray_b = [e[2], value([2, 3], &forms[1])];
    Ok((ray_a, ray_b))
}

/// Merges raw detections into manifolds, computes indices and samples.
fn assemble_l2(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
    raw: Vec<(DVector<f64>, usize, usize, bool)>,
) -> Result<Vec<CriticalManifold>> {
    let pv = [p.0[0], p.0[1]];
    let mut groups: Vec<(DVector<f64>, Vec<(usize, usize)>, bool)> = Vec::new();
    for (omega, plane, wave, boundary) in raw {
        match groups
            .iter_mut()
            .find(|(w, _, _)| (w - &omega).norm() <= MERGE_TOL * omega.norm().max(1.0))
        {
            Some((_, res, b)) => {
                if !res.contains(&(plane, wave)) {
                    res.push((plane, wave));
                }
                *b = *b || boundary;
            }
            None => groups.push((omega, vec![(plane, wave)], boundary)),
        }
    }

    let mut manifolds = Vec::new();
    for (omega_vec, mut resonances, boundary) in groups {
        resonances.sort();
        let omega = Covector(omega_vec.clone());
        let energy = omega_vec[0] * pv[0] + omega_vec[1] * pv[1];
        let nu = resonances.len();
        let index = manifold_index(structure, &omega)?;
        let sample = build_sample(structure, &omega, &resonances, p)?;
        let m = CriticalManifold {
            omega,
            resonances,
            nu,
            energy,
            index,
            sample,
            boundary,
        };
        check_sample(structure, &m, p)?;
        manifolds.push(m);
    }
    let _ = s;
    Ok(manifolds)
}

/// Initial velocity on the resonant planes whose end point is `p`.
fn build_sample(
    structure: &CarnotStructure,
    omega: &Covector,
    resonances: &[(usize, usize)],
    p: &VerticalPoint,
) -> Result<ExponentialControl> {
    let sp = structure.skew_spectrum(omega)?;
    let pv = [p.0[0], p.0[1]];
    // End point of a unit control on each resonant plane.
    let rays: Vec<[f64; 2]> = resonances
        .iter()
        .map(|&(i, n)| {
            let (x, y) = &sp.frames[i];
            let h = [
                x.dot(&(structure.matrix(0) * y)),
                x.dot(&(structure.matrix(1) * y)),
            ];
            let alpha = sp.alphas[i];
            // q(unit) = (pi / n^2) alpha h
            [
                PI / (n * n) as f64 * alpha * h[0],
                PI / (n * n) as f64 * alpha * h[1],
            ]
        })
        .collect();
    let u0 = match resonances.len() {
        1 => {
            let h = rays[0];
            let hn = h[0].hypot(h[1]);
            let c = (pv[0].hypot(pv[1])) / hn;
            let (x, _) = &sp.frames[resonances[0].0];
            x * c.sqrt()
        }
        _ => {
            // Use the first two resonances (the generic case); coefficients
            // solve c1 q1 + c2 q2 = p.
            let (c1, c2) = solve_cone(&rays[0], &rays[1], &pv).ok_or_else(|| {
                CarnotError::NonGenericTarget("resonant rays are collinear".into())
            })?;
            if c1 < -1e-9 || c2 < -1e-9 {
                return Err(CarnotError::ConsistencyFailure(format!(
                    "cone coefficients negative: {c1:.3e}, {c2:.3e}"
                )));
            }
            // In a degenerate (touching) eigenspace the stored frames can mix
            // the true planes; fall back to a small least-squares polish.
            let (xa, _) = &sp.frames[resonances[0].0];
            let (xb, _) = &sp.frames[resonances[1].0];
            xa * c1.max(0.0).sqrt() + xb * c2.max(0.0).sqrt()
        }
    };
    Ok(ExponentialControl {
        omega: omega.clone(),
        u0,
    })
}

/// Census for corank two via a circle scan.  The detection is run once at
/// `grid` and once at `2 grid`; differing results raise `GridTooCoarse`.
pub fn enumerate_l2(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
    grid: usize,
) -> Result<CensusReport> {
    if structure.corank() != 2 {
        return Err(CarnotError::DimensionMismatch {
            what: "corank",
            expected: 2,
            got: structure.corank(),
        });
    }
    if p.len() != 2 {
        return Err(CarnotError::DimensionMismatch {
            what: "vertical point length",
            expected: 2,
            got: p.len(),
        });
    }
    if p.norm() == 0.0 {
        return Err(CarnotError::ZeroTarget);
    }
    let grid = grid.max(MIN_GRID);
    let mut coarse = detect_l2(structure, p, s, grid)?;
    let mut fine = detect_l2(structure, p, s, 2 * grid)?;
    sort_manifolds(&mut coarse);
    sort_manifolds(&mut fine);
    if coarse.len() != fine.len() {
        return Err(CarnotError::GridTooCoarse(format!(
            "{} manifolds at grid {grid}, {} at grid {}",
            coarse.len(),
            fine.len(),
            2 * grid
        )));
    }
    for (a, b) in coarse.iter().zip(fine.iter()) {
        if (&a.omega.0 - &b.omega.0).norm() > 1e-6 * a.omega.0.norm().max(1.0) {
            return Err(CarnotError::GridTooCoarse(
                "multipliers moved under grid refinement".into(),
            ));
        }
    }
    Ok(finalize(fine, s))
}

/// Census dispatch on the corank.
pub fn enumerate(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
    grid: usize,
) -> Result<CensusReport> {
    match structure.corank() {
        1 => enumerate_l1(structure, p, s),
        2 => enumerate_l2(structure, p, s, grid),
        l => Err(CarnotError::BadDimensions(format!(
            "census implemented for corank 1 and 2, got {l}"
        ))),
    }
}

/// Coefficients of the Morse-Bott polynomial
/// `sum_C (1+t)^{nu(C)} t^{index(C)}`.
pub fn morse_bott_polynomial(report: &CensusReport) -> Vec<u64> {
    let mut coeffs: Vec<u64> = Vec::new();
    for m in &report.manifolds {
        // (1 + t)^nu
        let mut binom = vec![1u64];
        for _ in 0..m.nu {
            let mut next = vec![0u64; binom.len() + 1];
            for (i, &c) in binom.iter().enumerate() {
                next[i] += c;
                next[i + 1] += c;
            }
            binom = next;
        }
        let top = m.index + binom.len();
        if coeffs.len() < top {
            coeffs.resize(top, 0);
        }
        for (i, &c) in binom.iter().enumerate() {
            coeffs[m.index + i] += c;
        }
    }
    coeffs
}

/// Total Betti number bound `sum_C 2^{nu(C)}`, the Morse-Bott polynomial at 1.
pub fn morse_bott_total(report: &CensusReport) -> u64 {
    morse_bott_polynomial(report).iter().sum()
}

/// Verifies that the differential of the vertical restriction on the resonant
/// subspace `E(omega)` has rank `min(l, nu)` at the sample, with the torus
/// directions in its kernel.
pub fn torus_rank_check(structure: &CarnotStructure, m: &CriticalManifold) -> Result<()> {
    let l = structure.corank();
    let order = truncation_for(structure, m)?;
    let sp = structure.skew_spectrum(&m.omega)?;
    let proj = project_exponential(structure, &m.sample, order)?;
    let u = embed_control(&proj.control, order);

    // Basis of E(omega) in T^order coordinates: the Fourier embeddings of the
    // frame vectors of each resonant plane.
    let d = structure.horizontal_rank();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for &(i, n) in &m.resonances {
        let (x, y) = &sp.frames[i];
        for v in [x, y] {
            let e = ExponentialControl {
                omega: m.omega.clone(),
                u0: v.clone(),
            };
            let pc = project_exponential(structure, &e, order)?;
            basis.push(embed_control(&pc.control, order));
        }
        let _ = n;
    }
    let q_mats: Vec<DMatrix<f64>> = (0..l).map(|i| q_form_matrix(structure, i, order)).collect();
    let mut dq = DMatrix::zeros(basis.len(), l);
    for (a, w) in basis.iter().enumerate() {
        for (i, qm) in q_mats.iter().enumerate() {
            dq[(a, i)] = 2.0 * (qm * w).dot(&u);
        }
    }
    let svd = dq.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&v| v > 1e-8 * smax.max(1.0))
        .count();
    let expected = l.min(m.nu);
    if rank != expected {
        return Err(CarnotError::RankMismatch(format!(
            "dq rank {rank} on E(omega), expected {expected} (nu = {})",
            m.nu
        )));
    }
    let _ = d;
    Ok(())
}

/// Row of the growth table: census size at one energy level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthRow {
    pub s: f64,
    pub count: usize,
    pub max_wave: usize,
    pub cone_constant: f64,
}

/// Counts of critical manifolds across energy levels with a log-log slope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthDiagnostics {
    pub rows: Vec<GrowthRow>,
    /// Least-squares exponent of `count ~ s^e`; None with under two points.
    pub exponent: Option<f64>,
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Runs the census over a list of energy levels and fits the growth
/// exponent of the count.
pub fn growth_diagnostics(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s_values: &[f64],
    grid: usize,
) -> Result<GrowthDiagnostics> {
    let mut rows = Vec::new();
    for &s in s_values {
        let report = enumerate(structure, p, s, grid)?;
        rows.push(GrowthRow {
            s,
            count: report.len(),
            max_wave: report.max_wave(),
            cone_constant: report.cone_constant,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.count > 0)
        .map(|r| (r.s.ln(), (r.count as f64).ln()))
        .collect();
    Ok(GrowthDiagnostics {
        rows,
        exponent: ls_slope(&pts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::CarnotStructure;

    fn commuting_example() -> CarnotStructure {
        let mut a1 = DMatrix::zeros(4, 4);
        a1[(0, 1)] = 1.0;
        a1[(1, 0)] = -1.0;
        a1[(2, 3)] = 2.0;
        a1[(3, 2)] = -2.0;
        let mut a2 = DMatrix::zeros(4, 4);
        a2[(0, 1)] = 2.0;
        a2[(1, 0)] = -2.0;
        a2[(2, 3)] = 1.0;
        a2[(3, 2)] = -1.0;
        CarnotStructure::new(vec![a1, a2]).unwrap()
    }

    #[test]
    fn heisenberg_census_basic() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[PI]);
        let report = enumerate_l1(&s, &p, 10.0).unwrap();
        assert_eq!(report.len(), 3);
        let energies: Vec<f64> = report.manifolds.iter().map(|m| m.energy).collect();
        for (e, n) in energies.iter().zip(1..) {
            assert!((e - PI * n as f64).abs() < 1e-12);
        }
        let indices: Vec<usize> = report.manifolds.iter().map(|m| m.index).collect();
        assert_eq!(indices, vec![0, 2, 4]);
        assert!(report.manifolds.iter().all(|m| m.nu == 1));
    }

    #[test]
    fn heisenberg_census_below_first_energy_is_empty() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[PI]);
        let report = enumerate_l1(&s, &p, 3.0).unwrap();
        assert!(report.is_empty());
    }

    #[test]
    fn census_scaling_in_p() {
        // Doubling p halves omega but doubles every energy: the set of
        // multipliers is unchanged, counts shift with s.
        let s = CarnotStructure::heisenberg();
        let r1 = enumerate_l1(&s, &VerticalPoint::from_slice(&[PI]), 10.0).unwrap();
        let r2 = enumerate_l1(&s, &VerticalPoint::from_slice(&[2.0 * PI]), 20.0).unwrap();
        assert_eq!(r1.len(), r2.len());
        for (a, b) in r1.manifolds.iter().zip(r2.manifolds.iter()) {
            assert!((a.omega.0[0] - b.omega.0[0]).abs() < 1e-12);
            assert!((2.0 * a.energy - b.energy).abs() < 1e-12);
        }
    }

    #[test]
    fn index_examples() {
        let s = CarnotStructure::heisenberg();
        assert_eq!(manifold_index(&s, &Covector::from_slice(&[1.0])).unwrap(), 0);
        assert_eq!(manifold_index(&s, &Covector::from_slice(&[3.0])).unwrap(), 4);
        match manifold_index(&s, &Covector::from_slice(&[2.5])) {
            Err(CarnotError::NotAMultiplier { .. }) => {}
            other => panic!("expected NotAMultiplier, got {other:?}"),
        }
    }

    #[test]
    fn morse_bott_polynomial_heisenberg() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[PI]);
        let report = enumerate_l1(&s, &p, 10.0).unwrap();
        let poly = morse_bott_polynomial(&report);
        // (1+t)(1 + t^2 + t^4) = 1 + t + t^2 + t^3 + t^4 + t^5
        assert_eq!(poly, vec![1, 1, 1, 1, 1, 1]);
        assert_eq!(morse_bott_total(&report), 6);
    }

    #[test]
    fn commuting_census_matches_lattice_oracle() {
        // Multipliers solve <omega, v1> = n, <omega, v2> = -m (n, m >= 1)
        // with v1 = (1,2), v2 = (2,1), p = (0,1); the energy is (2n + m)/3.
        let s = commuting_example();
        let p = VerticalPoint::from_slice(&[0.0, 1.0]);
        let smax = 5.0;
        let report = enumerate_l2(&s, &p, smax, 256).unwrap();

        let mut expected: Vec<(f64, f64)> = Vec::new();
        for n in 1..=40i64 {
            for m in 1..=40i64 {
                let e = (2 * n + m) as f64 / 3.0;
                if e <= smax + 1e-12 {
                    expected.push((-((n + 2 * m) as f64) / 3.0, e));
                }
            }
        }
        assert_eq!(report.len(), expected.len(), "census size");
        for (w1, e) in &expected {
            let hit = report.manifolds.iter().find(|m| {
                (m.energy - e).abs() < 1e-8 && (m.omega.0[0] - w1).abs() < 1e-8
            });
            assert!(hit.is_some(), "missing multiplier ({w1}, energy {e})");
        }
        for m in &report.manifolds {
            assert_eq!(m.nu, 2);
            assert!((m.energy - m.omega.pair(&p)).abs() < 1e-9);
        }
    }

    #[test]
    fn torus_rank_on_heisenberg_census() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[PI]);
        let report = enumerate_l1(&s, &p, 10.0).unwrap();
        for m in &report.manifolds {
            torus_rank_check(&s, m).unwrap();
        }
    }

    #[test]
    fn growth_exponent_heisenberg_is_linear() {
        let s = CarnotStructure::heisenberg();
        let p = VerticalPoint::from_slice(&[PI]);
        let svals: Vec<f64> = (1..=6).map(|k| PI * (1 << k) as f64).collect();
        let g = growth_diagnostics(&s, &p, &svals, 256).unwrap();
        let e = g.exponent.unwrap();
        assert!((e - 1.0).abs() < 0.1, "exponent {e}");
    }
}
