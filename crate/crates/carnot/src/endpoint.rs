//! The end-point map of horizontal loops and its exponential controls.
//!
//! Controls live on `[0, 2pi]` and are stored by Fourier coefficients with
//! respect to the orthonormal basis `1/sqrt(2pi)`, `cos(kt)/sqrt(pi)`,
//! `sin(kt)/sqrt(pi)`.  The energy convention is `J(u) = |u|_{L^2}^2 / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CarnotError;
use crate::structure::{CarnotStructure, Covector, SkewSpectrum, VerticalPoint};
use crate::Result;

use std::f64::consts::PI;

/// An eigenvalue within this of an integer counts as resonant.
pub const RESONANCE_TOL: f64 = 1e-9;
/// Self-consistency tolerance of the shooting map (vertical component along
/// `omega` against the closed-form identity).
pub const SHOOT_CONSISTENCY_TOL: f64 = 1e-7;
/// Initial number of quadrature nodes for the vertical shooting integral.
pub const SHOOT_BASE_NODES: usize = 2048;
/// Quadrature nodes used by the general-mean end-point evaluation.
pub const QUADRATIC_NODES: usize = 4096;

/// A trigonometric-polynomial control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Control {
    /// Coefficient of the constant basis function `1/sqrt(2pi)`.
    pub mean: DVector<f64>,
    /// Coefficients `(U_k, V_k)` of `cos(kt)/sqrt(pi)`, `sin(kt)/sqrt(pi)`,
    /// for `k = 1..=L`.
    pub coeffs: Vec<(DVector<f64>, DVector<f64>)>,
}

impl Control {
    pub fn zero(d: usize, order: usize) -> Self {
        Control {
            mean: DVector::zeros(d),
            coeffs: (0..order)
                .map(|_| (DVector::zeros(d), DVector::zeros(d)))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Truncation order `L`.
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero_mean(&self) -> bool {
        self.mean.iter().all(|&v| v == 0.0)
    }

    /// Value `u(t)`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut v = &self.mean / (2.0 * PI).sqrt();
        let c = 1.0 / PI.sqrt();
        for (k, (u, w)) in self.coeffs.iter().enumerate() {
            let kt = (k + 1) as f64 * t;
            v += u * (kt.cos() * c) + w * (kt.sin() * c);
        }
        v
    }

    /// Primitive `U(t) = int_0^t u`.
    pub fn primitive(&self, t: f64) -> DVector<f64> {
        let mut v = &self.mean * (t / (2.0 * PI).sqrt());
        let c = 1.0 / PI.sqrt();
        for (k, (u, w)) in self.coeffs.iter().enumerate() {
            let kf = (k + 1) as f64;
            let kt = kf * t;
            v += u * (kt.sin() / kf * c) + w * ((1.0 - kt.cos()) / kf * c);
        }
        v
    }

    /// `J(u) = |u|_{L^2}^2 / 2`, a finite sum of squared coefficients.
    pub fn energy(&self) -> f64 {
        let mut s = self.mean.norm_squared();
        for (u, w) in &self.coeffs {
            s += u.norm_squared() + w.norm_squared();
        }
        0.5 * s
    }
}

/// Value of the end-point map: displacement in the horizontal layer plus the
/// vertical point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndPoint {
    pub horizontal: DVector<f64>,
    pub vertical: VerticalPoint,
}

/// A candidate geodesic in shooting coordinates: covector and initial
/// velocity, the control being `u(t) = exp(-t omega A) u0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentialControl {
    pub omega: Covector,
    pub u0: DVector<f64>,
}

fn check_control(structure: &CarnotStructure, u: &Control) -> Result<()> {
    if u.dim() != structure.horizontal_rank() {
        return Err(CarnotError::DimensionMismatch {
            what: "control dimension",
            expected: structure.horizontal_rank(),
            got: u.dim(),
        });
    }
    Ok(())
}

/// Composite Simpson quadrature of a vector-valued integrand over
/// `[0, 2pi]` with `n` (even) subintervals.
fn simpson<F>(n: usize, dim: usize, f: F) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = 2.0 * PI / n as f64;
    let mut acc = f(0.0) + f(2.0 * PI);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(i as f64 * h) * w;
    }
    let _ = dim;
    acc * (h / 3.0)
}

/// Evaluates the end-point map from the Fourier coefficients.
///
/// For zero-mean controls the horizontal displacement vanishes and the
/// vertical components reduce to `q_i(u) = sum_k <U_k, A_i V_k> / k`; with a
/// nonzero mean the full formula
/// `F(u) = (int_0^{2pi} u, (1/2) int_0^{2pi} <int_0^t u, A u(t)> dt)`
/// is integrated by quadrature using the closed-form primitive.
pub fn endpoint_quadratic(structure: &CarnotStructure, u: &Control) -> Result<EndPoint> {
    check_control(structure, u)?;
    let d = structure.horizontal_rank();
    let l = structure.corank();
    if u.is_zero_mean() {
        let mut vertical = DVector::zeros(l);
        for (i, a) in structure.matrices().iter().enumerate() {
            let mut s = 0.0;
            for (k, (uk, vk)) in u.coeffs.iter().enumerate() {
                s += uk.dot(&(a * vk)) / (k + 1) as f64;
            }
            vertical[i] = s;
        }
        return Ok(EndPoint {
            horizontal: DVector::zeros(d),
            vertical: VerticalPoint(vertical),
        });
    }
    let horizontal = &u.mean * (2.0 * PI).sqrt();
    let nodes = QUADRATIC_NODES.max(64 * u.order().max(1));
    let vertical = simpson(nodes, l, |t| {
        let ut = u.eval(t);
        let primitive = u.primitive(t);
        DVector::from_fn(l, |i, _| 0.5 * primitive.dot(&(structure.matrix(i) * &ut)))
    });
    Ok(EndPoint {
        horizontal,
        vertical: VerticalPoint(vertical),
    })
}

/// Integrates the horizontal lift `xdot = u`, `ydot_i = <x, A_i u>/2` with a
/// fixed-step fourth-order Runge-Kutta scheme.  This is the independent
/// oracle against which the algebraic evaluations are checked.
pub fn endpoint_ode(structure: &CarnotStructure, u: &Control, steps: usize) -> Result<EndPoint> {
    check_control(structure, u)?;
    let steps = steps.max(64);
    let d = structure.horizontal_rank();
    let l = structure.corank();
    let h = 2.0 * PI / steps as f64;

    let deriv = |t: f64, x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let ut = u.eval(t);
        let ydot = DVector::from_fn(l, |i, _| 0.5 * x.dot(&(structure.matrix(i) * &ut)));
        (ut, ydot)
    };

    let mut x = DVector::zeros(d);
    let mut y = DVector::zeros(l);
    for i in 0..steps {
        let t = i as f64 * h;
        let (k1x, k1y) = deriv(t, &x);
        let (k2x, k2y) = deriv(t + 0.5 * h, &(&x + &k1x * (0.5 * h)));
        let (k3x, k3y) = deriv(t + 0.5 * h, &(&x + &k2x * (0.5 * h)));
        let (k4x, k4y) = deriv(t + h, &(&x + &k3x * h));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        y += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (h / 6.0);
    }
    Ok(EndPoint {
        horizontal: x,
        vertical: VerticalPoint(y),
    })
}

/// A control obtained by Fourier-projecting an exponential curve, together
/// with the `L^2` mass left outside the truncation.
#[derive(Clone, Debug)]
pub struct ProjectedControl {
    pub control: Control,
    /// `L^2` mass of `exp(-t omega A) u0` not captured by the truncation.
    pub tail: f64,
}

/// Expands `u(t) = exp(-t omega A) u0` in the Fourier basis up to order `L`.
///
/// Components of `u0` on invariant planes with an integer eigenvalue embed
/// exactly (`U_k = sqrt(pi) v`, `V_k = -sqrt(pi) (omega A / k) v`); the other
/// components are projected with closed-form trigonometric integrals and
/// their unaccounted mass is reported in `tail`.  The kernel component goes
/// to the constant term.
pub fn project_exponential(
    structure: &CarnotStructure,
    e: &ExponentialControl,
    order: usize,
) -> Result<ProjectedControl> {
    let d = structure.horizontal_rank();
    if e.u0.len() != d {
        return Err(CarnotError::DimensionMismatch {
            what: "initial velocity dimension",
            expected: d,
            got: e.u0.len(),
        });
    }
    let sp = structure.skew_spectrum(&e.omega)?;
    let needed = sp.max_alpha().ceil() as usize + 1;
    if order < needed {
        return Err(CarnotError::TruncationTooSmall { order, needed });
    }
    let mut control = Control::zero(d, order);
    control.mean = sp.kernel_component(&e.u0) * (2.0 * PI).sqrt();

    for (i, alpha) in sp.alphas.iter().enumerate() {
        let (a, b) = sp.plane_component(i, &e.u0);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let (x, y) = &sp.frames[i];
        let v = x * a + y * b; // plane component of u0
        let w = x * b - y * a; // (omega A / alpha) v
        let k_near = alpha.round();
        if k_near >= 1.0 && (alpha - k_near).abs() <= RESONANCE_TOL && (k_near as usize) <= order {
            let k = k_near as usize;
            control.coeffs[k - 1].0 += &v * PI.sqrt();
            control.coeffs[k - 1].1 -= &w * PI.sqrt();
        } else {
            // Closed-form pairings of cos(alpha t), sin(alpha t) against the
            // integer harmonics on [0, 2pi].
            let s2 = (2.0 * PI * alpha).sin();
            let g = 1.0 - (2.0 * PI * alpha).cos();
            control.mean += (&v * (s2 / alpha) - &w * (g / alpha)) / (2.0 * PI).sqrt();
            for k in 1..=order {
                let kf = k as f64;
                let dm = alpha - kf;
                let dp = alpha + kf;
                let ccc = 0.5 * s2 * (1.0 / dm + 1.0 / dp);
                let csn = 0.5 * g * (1.0 / dp - 1.0 / dm);
                let scs = 0.5 * g * (1.0 / dp + 1.0 / dm);
                let ssn = 0.5 * s2 * (1.0 / dm - 1.0 / dp);
                control.coeffs[k - 1].0 += (&v * ccc - &w * scs) / PI.sqrt();
                control.coeffs[k - 1].1 += (&v * csn - &w * ssn) / PI.sqrt();
            }
        }
    }
    let total = 2.0 * PI * e.u0.norm_squared();
    let captured = 2.0 * control.energy();
    Ok(ProjectedControl {
        control,
        tail: (total - captured).max(0.0),
    })
}

/// Shooting map: end point of the exponential control `(omega, u0)`.
pub struct ShootOutcome {
    pub endpoint: EndPoint,
    /// Quadrature nodes that met the consistency check.
    pub nodes: usize,
}

fn shoot_vertical(
    structure: &CarnotStructure,
    sp: &SkewSpectrum,
    u0: &DVector<f64>,
    nodes: usize,
) -> DVector<f64> {
    let l = structure.corank();
    let comps: Vec<(f64, f64, f64)> = sp
        .alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let (a, b) = sp.plane_component(i, u0);
            (alpha, a, b)
        })
        .collect();
    let kernel = sp.kernel_component(u0);
    let d = u0.len();

    // vertical_i = (1/2) int <G(t)^T u0, A_i exp(-t omega A) u0> dt with
    // G(t) = int_0^t exp(tau omega A) dtau, both assembled per plane.
    simpson(nodes, l, |t| {
        let mut et = kernel.clone();
        let mut gt = &kernel * t;
        for (pi, &(alpha, a, b)) in comps.iter().enumerate() {
            let (x, y) = &sp.frames[pi];
            let (c, s) = ((alpha * t).cos(), (alpha * t).sin());
            // exp(-t omega A) u0 on the plane: (a, b) rotates forward.
            et += x * (a * c - b * s) + y * (a * s + b * c);
            // G(t)^T u0 = (s/alpha) P u0 - ((c-1)/alpha) S u0 with
            // S u0 = aY - bX.
            gt += (x * a + y * b) * (s / alpha) - (y * a - x * b) * ((c - 1.0) / alpha);
        }
        let _ = d;
        DVector::from_fn(l, |i, _| 0.5 * gt.dot(&(structure.matrix(i) * &et)))
    })
}

/// Evaluates the shooting map with an internal self-check: the component of
/// the vertical part along `omega` must satisfy
/// `omega(q) = pi |u0|^2 - <u0, p_Delta>/2`.  The quadrature is refined until
/// the identity holds to [`SHOOT_CONSISTENCY_TOL`].
pub fn shoot(structure: &CarnotStructure, e: &ExponentialControl) -> Result<ShootOutcome> {
    let d = structure.horizontal_rank();
    if e.u0.len() != d {
        return Err(CarnotError::DimensionMismatch {
            what: "initial velocity dimension",
            expected: d,
            got: e.u0.len(),
        });
    }
    let sp = structure.skew_spectrum(&e.omega)?;

    // Horizontal displacement, closed form per invariant plane.
    let mut horizontal = sp.kernel_component(&e.u0) * (2.0 * PI);
    for (i, &alpha) in sp.alphas.iter().enumerate() {
        let (a, b) = sp.plane_component(i, &e.u0);
        let (x, y) = &sp.frames[i];
        let (c2, s2) = ((2.0 * PI * alpha).cos(), (2.0 * PI * alpha).sin());
        // int_0^{2pi} of the rotated components.
        let ia = (a * s2 + b * (c2 - 1.0)) / alpha;
        let ib = (-a * (c2 - 1.0) + b * s2) / alpha;
        horizontal += x * ia + y * ib;
    }

    let target = PI * e.u0.norm_squared() - 0.5 * e.u0.dot(&horizontal);
    let scale = (PI * e.u0.norm_squared()).abs().max(1.0);
    let mut nodes = SHOOT_BASE_NODES;
    loop {
        let vertical = shoot_vertical(structure, &sp, &e.u0, nodes);
        let along = e.omega.0.dot(&vertical);
        if (along - target).abs() <= SHOOT_CONSISTENCY_TOL * scale {
            return Ok(ShootOutcome {
                endpoint: EndPoint {
                    horizontal,
                    vertical: VerticalPoint(vertical),
                },
                nodes,
            });
        }
        nodes *= 2;
        if nodes > 1 << 17 {
            return Err(CarnotError::ConsistencyFailure(format!(
                "shooting identity off by {:.3e} at {} nodes",
                (along - target).abs(),
                nodes / 2
            )));
        }
    }
}

/// A geodesic found by the shooting solver.
#[derive(Clone, Debug)]
pub struct SolvedGeodesic {
    pub omega: Covector,
    pub u0: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn shoot_residual(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let l = structure.corank();
    let d = structure.horizontal_rank();
    let omega = Covector(z.rows(0, l).into());
    let u0: DVector<f64> = z.rows(l, d).into();
    let sp = structure.skew_spectrum(&omega)?;
    let out = {
        // During Newton iterations use a fixed moderate quadrature; the final
        // answer is validated by the full shoot() afterwards.
        let mut horizontal = sp.kernel_component(&u0) * (2.0 * PI);
        for (i, &alpha) in sp.alphas.iter().enumerate() {
            let (a, b) = sp.plane_component(i, &u0);
            let (x, y) = &sp.frames[i];
            let (c2, s2) = ((2.0 * PI * alpha).cos(), (2.0 * PI * alpha).sin());
            let ia = (a * s2 + b * (c2 - 1.0)) / alpha;
            let ib = (-a * (c2 - 1.0) + b * s2) / alpha;
            horizontal += x * ia + y * ib;
        }
        let vertical = shoot_vertical(structure, &sp, &u0, SHOOT_BASE_NODES);
        EndPoint {
            horizontal,
            vertical: VerticalPoint(vertical),
        }
    };
    let mut r = DVector::zeros(d + l);
    for i in 0..d {
        r[i] = out.horizontal[i];
    }
    for i in 0..l {
        r[d + i] = out.vertical.0[i] - p.0[i];
    }
    Ok(r)
}

/// Damped Newton iteration on the shooting map, searching `(omega, u0)` with
/// end point `(0, p)`.  The Jacobian is taken by forward differences.
pub fn solve_endpoint(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    omega0: &Covector,
    u0: &DVector<f64>,
    tol: f64,
) -> Result<SolvedGeodesic> {
    let l = structure.corank();
    let d = structure.horizontal_rank();
    if p.norm() == 0.0 {
        return Err(CarnotError::ZeroTarget);
    }
    if p.len() != l {
        return Err(CarnotError::DimensionMismatch {
            what: "vertical target length",
            expected: l,
            got: p.len(),
        });
    }
    let n = d + l;
    let mut z = DVector::zeros(n);
    for i in 0..l {
        z[i] = omega0.0[i];
    }
    for i in 0..d {
        z[l + i] = u0[i];
    }

    let mut r = shoot_residual(structure, p, &z)?;
    let max_iter = 200;
    for it in 0..max_iter {
        let rn = r.norm();
        if rn <= tol {
            return Ok(SolvedGeodesic {
                omega: Covector(z.rows(0, l).into()),
                u0: z.rows(l, d).into(),
                residual: rn,
                iterations: it,
            });
        }
        // Forward-difference Jacobian.
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * z[j].abs().max(1.0);
            let mut zj = z.clone();
            zj[j] += h;
            let rj = shoot_residual(structure, p, &zj)?;
            for i in 0..n {
                jac[(i, j)] = (rj[i] - r[i]) / h;
            }
        }
        let step = jac
            .clone()
            .lu()
            .solve(&(-&r))
            .unwrap_or_else(|| {
                jac.svd(true, true)
                    .solve(&(-&r), 1e-12)
                    .expect("svd solve")
            });
        // Backtracking line search on the residual norm.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let zt = &z + &step * lambda;
            if let Ok(rt) = shoot_residual(structure, p, &zt) {
                if rt.norm() < rn {
                    z = zt;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(CarnotError::NoConvergence {
                iterations: it,
                residual: rn,
            });
        }
    }
    Err(CarnotError::NoConvergence {
        iterations: max_iter,
        residual: r.norm(),
    })
}

/// Multistart wrapper around [`solve_endpoint`]; distinct solutions are
/// deduplicated when `(omega, u0)` agree within `1e-6`.
pub fn solve_endpoint_multistart(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    starts: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<SolvedGeodesic>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = structure.horizontal_rank();
    let l = structure.corank();
    let scale = (p.norm().max(1.0) / PI).sqrt();
    let mut found: Vec<SolvedGeodesic> = Vec::new();
    for _ in 0..starts {
        let omega0 = Covector(DVector::from_fn(l, |_, _| rng.gen::<f64>() * 4.0 - 2.0));
        let u0 = DVector::from_fn(d, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * scale);
        if let Ok(sol) = solve_endpoint(structure, p, &omega0, &u0, tol) {
            let dup = found.iter().any(|s| {
                (&s.omega.0 - &sol.omega.0).norm() <= 1e-6 && (&s.u0 - &sol.u0).norm() <= 1e-6
            });
            if !dup {
                found.push(sol);
            }
        }
    }
    found.sort_by(|a, b| {
        a.omega
            .0
            .iter()
            .zip(b.omega.0.iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap())
            .find(|o| *o != std::cmp::Ordering::Equal)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found)
}

/// The unit-circle control of the Heisenberg group: one loop, energy `pi`,
/// end point `(0, 0, pi)`.
pub fn heisenberg_circle() -> Control {
    let sqrt_pi = PI.sqrt();
    Control {
        mean: DVector::zeros(2),
        coeffs: vec![(
            DVector::from_row_slice(&[sqrt_pi, 0.0]),
            DVector::from_row_slice(&[0.0, sqrt_pi]),
        )],
    }
}
