//! Step-two structures and the canonical form of skew-symmetric matrices.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CarnotError;
use crate::Result;

/// Entries of `A + A^T` below this are zeroed by symmetrization.
pub const SKEW_TOL: f64 = 1e-12;
/// Smallest singular value of the stacked matrices must exceed this.
pub const INDEPENDENCE_TOL: f64 = 1e-10;
/// Eigenvalues of `omega A` below this (relative to scale) belong to the
/// kernel.  The planes are recovered from `M^T M`, whose spectral noise floor
/// is about `eps |M|^2`, so singular values of `M` are trustworthy only down
/// to roughly `sqrt(eps) |M|`.
pub const KERNEL_TOL: f64 = 1e-7;
/// Residual allowed when reassembling a matrix from its canonical frames.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Spectral gaps below this are flagged by the genericity scan.
pub const GAP_TOL: f64 = 1e-6;
/// Smallest positive eigenvalue below this is flagged by the genericity scan.
pub const MIN_ALPHA_TOL: f64 = 1e-6;
/// Two eigenvalue curves within this of the same integer count as a collision.
pub const INTEGER_COLLISION_TOL: f64 = 1e-6;

/// A covector on the vertical layer, i.e. coefficients `omega_1..omega_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covector(pub DVector<f64>);

/// A point of the vertical layer `R^l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalPoint(pub DVector<f64>);

impl Covector {
    pub fn from_slice(v: &[f64]) -> Self {
        Covector(DVector::from_row_slice(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    /// Pairing `<omega, p>`.
    pub fn pair(&self, p: &VerticalPoint) -> f64 {
        self.0.dot(&p.0)
    }
}

impl VerticalPoint {
    pub fn from_slice(v: &[f64]) -> Self {
        VerticalPoint(DVector::from_row_slice(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// A step-two structure: `l` independent skew-symmetric matrices on `R^d`.
#[derive(Clone, Debug)]
pub struct CarnotStructure {
    d: usize,
    l: usize,
    matrices: Vec<DMatrix<f64>>,
}

impl CarnotStructure {
    /// Validates and builds a structure.
    ///
    /// Matrices with a skew-symmetry defect below [`SKEW_TOL`] are replaced by
    /// `(A - A^T)/2`; larger defects are rejected.  Linear independence is
    /// checked through the smallest singular value of the `l x d^2` stacking.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(CarnotError::BadDimensions("no matrices given".into()));
        }
        let d = matrices[0].nrows();
        if d < 2 {
            return Err(CarnotError::BadDimensions(format!(
                "horizontal rank {d} too small"
            )));
        }
        let l = matrices.len();
        if l > d * (d - 1) / 2 {
            return Err(CarnotError::BadDimensions(format!(
                "corank {l} exceeds dim so({d}) = {}",
                d * (d - 1) / 2
            )));
        }
        let mut cleaned = Vec::with_capacity(l);
        for (index, a) in matrices.into_iter().enumerate() {
            if a.nrows() != d || a.ncols() != d {
                return Err(CarnotError::BadDimensions(format!(
                    "matrix {index} is {}x{}, expected {d}x{d}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            let defect = (&a + a.transpose()).norm();
            if defect > SKEW_TOL * a.norm().max(1.0) {
                return Err(CarnotError::NotSkew { index, defect });
            }
            cleaned.push((&a - a.transpose()) * 0.5);
        }
        // Stack each matrix as a row of an l x d^2 matrix and look at the
        // smallest singular value.
        let mut stack = DMatrix::zeros(l, d * d);
        for (i, a) in cleaned.iter().enumerate() {
            for (j, v) in a.iter().enumerate() {
                stack[(i, j)] = *v;
            }
        }
        let svd = stack.svd(false, false);
        let sigma = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(sigma > INDEPENDENCE_TOL) {
            return Err(CarnotError::DependentSpan { sigma });
        }
        Ok(CarnotStructure {
            d,
            l,
            matrices: cleaned,
        })
    }

    pub fn horizontal_rank(&self) -> usize {
        self.d
    }

    pub fn corank(&self) -> usize {
        self.l
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    /// The contraction `omega A = sum_i omega_i A_i`.
    pub fn omega_matrix(&self, omega: &Covector) -> Result<DMatrix<f64>> {
        if omega.len() != self.l {
            return Err(CarnotError::DimensionMismatch {
                what: "covector length",
                expected: self.l,
                got: omega.len(),
            });
        }
        let mut m = DMatrix::zeros(self.d, self.d);
        for (i, a) in self.matrices.iter().enumerate() {
            m += a * omega.0[i];
        }
        Ok(m)
    }

    /// Canonical form of `omega A`.
    pub fn skew_spectrum(&self, omega: &Covector) -> Result<SkewSpectrum> {
        skew_spectrum(&self.omega_matrix(omega)?)
    }

    /// The three-dimensional Heisenberg structure (`d = 2`, `l = 1`).
    pub fn heisenberg() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        CarnotStructure::new(vec![a]).expect("heisenberg structure is valid")
    }
}

/// Canonical form of a skew-symmetric matrix `M`:
/// `M = sum_i alpha_i (X_i Y_i^T - Y_i X_i^T)` with orthonormal frames,
/// `M X_i = -alpha_i Y_i`, `M Y_i = alpha_i X_i`, `alpha_i > 0` descending.
#[derive(Clone, Debug)]
pub struct SkewSpectrum {
    /// Positive singular values, one per invariant plane, descending.
    pub alphas: Vec<f64>,
    /// Orthonormal frames `(X_i, Y_i)` of the invariant planes.
    pub frames: Vec<(DVector<f64>, DVector<f64>)>,
    /// Orthonormal basis of the kernel.
    pub kernel: Vec<DVector<f64>>,
}

impl SkewSpectrum {
    pub fn dim(&self) -> usize {
        2 * self.alphas.len() + self.kernel.len()
    }

    /// Largest eigenvalue, 0 for the zero matrix.
    pub fn max_alpha(&self) -> f64 {
        self.alphas.first().copied().unwrap_or(0.0)
    }

    /// Smallest positive eigenvalue, +inf when there is none.
    pub fn min_alpha(&self) -> f64 {
        self.alphas.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Smallest gap between distinct eigenvalues, +inf with fewer than two planes.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for w in self.alphas.windows(2) {
            gap = gap.min(w[0] - w[1]);
        }
        gap
    }

    /// Rebuilds the matrix from frames and eigenvalues.
    pub fn reassemble(&self, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for (alpha, (x, y)) in self.alphas.iter().zip(&self.frames) {
            m += (x * y.transpose() - y * x.transpose()) * *alpha;
        }
        m
    }

    /// Orthogonal projector on the invariant plane `i`.
    pub fn plane_projector(&self, i: usize) -> DMatrix<f64> {
        let (x, y) = &self.frames[i];
        x * x.transpose() + y * y.transpose()
    }

    /// Component of `v` on the invariant plane `i` as `(a, b)` with
    /// `v_plane = a X_i + b Y_i`.
    pub fn plane_component(&self, i: usize, v: &DVector<f64>) -> (f64, f64) {
        let (x, y) = &self.frames[i];
        (x.dot(v), y.dot(v))
    }

    /// Component of `v` on the kernel.
    pub fn kernel_component(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = v.len();
        let mut k = DVector::zeros(d);
        for b in &self.kernel {
            k += b * b.dot(v);
        }
        k
    }

    /// `exp(t M)` reassembled from the spectral data.
    pub fn exp(&self, t: f64, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for (alpha, (x, y)) in self.alphas.iter().zip(&self.frames) {
            let p = x * x.transpose() + y * y.transpose();
            let s = y * x.transpose() - x * y.transpose();
            m += p * (alpha * t).cos() - s * (alpha * t).sin();
        }
        for b in &self.kernel {
            m += b * b.transpose();
        }
        m
    }

    /// `int_0^t exp(tau M) dtau` reassembled from the spectral data.
    pub fn exp_integral(&self, t: f64, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for (alpha, (x, y)) in self.alphas.iter().zip(&self.frames) {
            let p = x * x.transpose() + y * y.transpose();
            let s = y * x.transpose() - x * y.transpose();
            m += p * ((alpha * t).sin() / alpha) - s * (((alpha * t).cos() - 1.0) / alpha);
        }
        for b in &self.kernel {
            m += b * b.transpose() * t;
        }
        m
    }
}

/// Orients `x` so that its first coordinate of significant size is positive.
fn orient(x: &mut DVector<f64>) {
    let tol = 1e-8 * x.norm();
    for v in x.iter() {
        if v.abs() > tol {
            if *v < 0.0 {
                *x *= -1.0;
            }
            return;
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Slower than the built-in tridiagonal solver but gives orthonormal
/// eigenvectors with small residuals even for clustered eigenvalues, which
/// the canonical-form pairing depends on.
fn jacobi_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(1e-300);
    for _ in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() < 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (aip, aiq) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let (api, aqi) = (a[(p, i)], a[(q, i)]);
                    a[(p, i)] = c * api - s * aqi;
                    a[(q, i)] = s * api + c * aqi;
                }
                for i in 0..n {
                    let (vip, viq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }
    (DVector::from_fn(n, |i, _| a[(i, i)]), v)
}

/// Computes the canonical form of a skew-symmetric matrix.
///
/// Eigenvalues come from the symmetric positive matrix `K = -M^2`, whose
/// eigenspaces are the invariant planes.  Nearly coincident eigenvalues are
/// first grouped into clusters (the cluster subspace is well conditioned even
/// when the individual eigenvectors are not) and each cluster is split by
/// re-diagonalizing the restriction of `K`; clusters tighter than the
/// splitting accuracy are treated as exactly degenerate, where any
/// orthonormal pairing `X, Y = -M X / alpha` is canonical.  The frame
/// orientation is fixed by making the first significant coordinate of each
/// `X_i` positive.
pub fn skew_spectrum(m: &DMatrix<f64>) -> Result<SkewSpectrum> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(CarnotError::BadDimensions(format!(
            "matrix is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.norm();
    let defect = (m + m.transpose()).norm();
    if defect > SKEW_TOL.max(1e-10 * scale.max(1.0)) {
        return Err(CarnotError::NotSkew { index: 0, defect });
    }
    let kernel_cut = KERNEL_TOL * scale.max(1.0);
    let mut planes: Vec<(f64, DVector<f64>, DVector<f64>)> = Vec::new();
    let mut kernel: Vec<DVector<f64>> = Vec::new();
    if scale <= SKEW_TOL {
        for j in 0..d {
            let mut v = DVector::zeros(d);
            v[j] = 1.0;
            kernel.push(v);
        }
    } else {
        let k = -(m * m);
        let (eigenvalues, eigenvectors) = jacobi_eigen(&k);
        // Indices sorted by decreasing eigenvalue of K = -M^2.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
        let alpha_of = |mu: f64| mu.max(0.0).sqrt();
        // Cluster by gaps between the alpha values.
        let cluster_tol = 1e-6 * scale.max(1.0);
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for &idx in &order {
            let a = alpha_of(eigenvalues[idx]);
            match clusters.last_mut() {
                Some(c)
                    if (alpha_of(eigenvalues[*c.last().unwrap()]) - a).abs()
                        < cluster_tol =>
                {
                    c.push(idx)
                }
                _ => clusters.push(vec![idx]),
            }
        }
        for cluster in clusters {
            let c = cluster.len();
            let mut basis = DMatrix::zeros(d, c);
            for (j, &idx) in cluster.iter().enumerate() {
                basis.set_column(j, &eigenvectors.column(idx));
            }
            // Refined eigenvalues of K on the cluster subspace.
            let restricted = basis.transpose() * &k * &basis;
            let (sub_values, sub_vectors) = jacobi_eigen(&restricted);
            let mut sub_order: Vec<usize> = (0..c).collect();
            sub_order.sort_by(|&a, &b| {
                sub_values[b].partial_cmp(&sub_values[a]).unwrap()
            });
            let refined: Vec<(f64, DVector<f64>)> = sub_order
                .iter()
                .map(|&j| {
                    let v: DVector<f64> = &basis * sub_vectors.column(j);
                    (alpha_of(sub_values[j]), v)
                })
                .collect();
            // Degenerate groups inside the refined cluster share one alpha;
            // below this width the split is round-off.
            let degen_tol = 1e-8 * scale.max(1.0);
            // Chosen frame vectors of the whole cluster: a candidate already
            // spanned by them is a duplicate direction, whichever group it
            // lands in when a gap sits right at the tolerance.
            let mut chosen: Vec<DVector<f64>> = Vec::new();
            let mut g = 0;
            while g < c {
                let mut h = g + 1;
                while h < c && refined[h - 1].0 - refined[h].0 < degen_tol {
                    h += 1;
                }
                let group: Vec<&(f64, DVector<f64>)> = refined[g..h].iter().collect();
                let alpha = group.iter().map(|p| p.0).sum::<f64>() / group.len() as f64;
                if alpha <= kernel_cut {
                    for p in &group {
                        let mut v = p.1.clone();
                        orient(&mut v);
                        kernel.push(v);
                    }
                } else {
                    // Pair an orthonormal frame inside the group: X from the
                    // unused directions, Y = -M X / alpha.
                    for p in &group {
                        let mut x = p.1.clone();
                        for w in &chosen {
                            let c = w.dot(&x);
                            x -= w * c;
                        }
                        let n = x.norm();
                        if n < 0.5 {
                            continue; // direction already spanned by a frame
                        }
                        x /= n;
                        let mut y = -(m * &x) / alpha;
                        for w in &chosen {
                            let c = w.dot(&y);
                            y -= w * c;
                        }
                        let cx = x.dot(&y);
                        y -= &x * cx;
                        y /= y.norm();
                        let tol = 1e-8;
                        for v in x.iter() {
                            if v.abs() > tol {
                                if *v < 0.0 {
                                    x = -x;
                                    y = -y;
                                }
                                break;
                            }
                        }
                        chosen.push(x.clone());
                        chosen.push(y.clone());
                        planes.push((alpha, x, y));
                    }
                }
                g = h;
            }
        }
    }
    planes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let spectrum = SkewSpectrum {
        alphas: planes.iter().map(|p| p.0).collect(),
        frames: planes.into_iter().map(|p| (p.1, p.2)).collect(),
        kernel,
    };
    // Planes below the kernel cut are deliberately dropped; each contributes
    // at most sqrt(2) * KERNEL_TOL to the reassembly residual.
    let allowed = RECONSTRUCTION_TOL.max(2.0 * d as f64 * KERNEL_TOL);
    let residual = (m - spectrum.reassemble(d)).norm();
    if residual > allowed * scale.max(1.0) {
        return Err(CarnotError::ConsistencyFailure(format!(
            "canonical form residual {residual:.3e}"
        )));
    }
    Ok(spectrum)
}

/// Verdict of a genericity scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Warn,
}

/// Warn-only diagnostics about eigenvalue crossings and rank drops of
/// `omega A` over the unit sphere of covectors.
#[derive(Clone, Debug)]
pub struct GenericityReport {
    pub min_gap: f64,
    pub min_alpha: f64,
    /// Covectors at which two eigenvalue curves sit on the same integer.
    pub integer_collisions: Vec<Covector>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

fn probe_covectors(l: usize, samples: usize) -> Vec<Covector> {
    match l {
        1 => vec![Covector::from_slice(&[1.0]), Covector::from_slice(&[-1.0])],
        2 => (0..samples)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / samples as f64;
                Covector::from_slice(&[t.cos(), t.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x6361726e);
            (0..samples)
                .map(|_| {
                    let v: DVector<f64> = DVector::from_fn(l, |_, _| {
                        use rand::Rng;
                        let u1: f64 = rng.gen::<f64>().max(1e-12);
                        let u2: f64 = rng.gen();
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    });
                    let n = v.norm();
                    Covector(v / n)
                })
                .collect()
        }
    }
}

/// Scans the unit sphere of covectors for small spectral gaps, near rank
/// drops, and simultaneous integer crossings.  Warnings never fail a build;
/// they signal that the census near the flagged covectors may need finer
/// grids.
pub fn genericity_scan(
    structure: &CarnotStructure,
    _p: &VerticalPoint,
    samples: usize,
) -> Result<GenericityReport> {
    let samples = samples.max(16);
    let probes = probe_covectors(structure.corank(), samples);
    let spectra: Vec<SkewSpectrum> = probes
        .iter()
        .map(|w| structure.skew_spectrum(w))
        .collect::<Result<_>>()?;

    let mut min_gap = f64::INFINITY;
    let mut min_alpha = f64::INFINITY;
    let mut collisions: Vec<Covector> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    for (w, sp) in probes.iter().zip(&spectra) {
        min_gap = min_gap.min(sp.min_gap());
        min_alpha = min_alpha.min(sp.min_alpha());
        // Direct collision test at the probe.
        let n_planes = sp.alphas.len();
        for i in 0..n_planes {
            for j in (i + 1)..n_planes {
                let ni = sp.alphas[i].round();
                if ni >= 1.0
                    && (sp.alphas[i] - ni).abs() <= INTEGER_COLLISION_TOL
                    && (sp.alphas[j] - ni).abs() <= INTEGER_COLLISION_TOL
                {
                    collisions.push(w.clone());
                }
            }
        }
    }

    // On a circle of covectors, refine crossings of adjacent eigenvalue
    // curves by bisection; a crossing drives the true minimal gap to zero.
    if structure.corank() == 2 {
        let angle = |j: usize| 2.0 * std::f64::consts::PI * j as f64 / samples as f64;
        let gap_fn = |t: f64, i: usize| -> f64 {
            let w = Covector::from_slice(&[t.cos(), t.sin()]);
            let sp = structure.skew_spectrum(&w).unwrap();
            if i + 1 < sp.alphas.len() {
                sp.alphas[i] - sp.alphas[i + 1]
            } else {
                f64::INFINITY
            }
        };
        let n_planes = spectra[0].alphas.len();
        for j in 0..samples {
            let (t0, t1) = (angle(j), angle(j + 1));
            for i in 0..n_planes.saturating_sub(1) {
                let g0 = spectra[j].alphas[i] - spectra[j].alphas[i + 1];
                let g1 = spectra[(j + 1) % samples].alphas[i] - spectra[(j + 1) % samples].alphas[i + 1];
                // Sorted curves keep the gap nonnegative; a crossing shows up
                // as a local dip toward zero.
                if g0.min(g1) < 10.0 * GAP_TOL.max(1e-3) {
                    // Ternary search for the minimum of the gap.
                    let (mut a, mut b) = (t0, t1);
                    for _ in 0..200 {
                        let m1 = a + (b - a) / 3.0;
                        let m2 = b - (b - a) / 3.0;
                        if gap_fn(m1, i) < gap_fn(m2, i) {
                            b = m2;
                        } else {
                            a = m1;
                        }
                    }
                    let t = 0.5 * (a + b);
                    let w = Covector::from_slice(&[t.cos(), t.sin()]);
                    let sp = structure.skew_spectrum(&w)?;
                    let g = sp.alphas[i] - sp.alphas[i + 1];
                    if g < min_gap {
                        min_gap = g;
                    }
                    if g <= GAP_TOL {
                        warnings.push(format!(
                            "eigenvalue crossing near theta = {t:.6} (gap {g:.3e})"
                        ));
                        let v = sp.alphas[i];
                        let n = v.round();
                        if n >= 1.0 && (v - n).abs() <= INTEGER_COLLISION_TOL {
                            collisions.push(w);
                        }
                    }
                }
            }
        }
    }

    if min_gap <= GAP_TOL {
        warnings.push(format!("minimal spectral gap {min_gap:.3e}"));
    }
    if min_alpha <= MIN_ALPHA_TOL {
        warnings.push(format!("near rank drop: smallest eigenvalue {min_alpha:.3e}"));
    }
    for c in &collisions {
        warnings.push(format!(
            "two eigenvalue curves meet an integer at omega = {:?}",
            c.0.as_slice()
        ));
    }

    let verdict = if min_gap > GAP_TOL && min_alpha > MIN_ALPHA_TOL && collisions.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Warn
    };
    Ok(GenericityReport {
        min_gap,
        min_alpha,
        integer_collisions: collisions,
        warnings,
        verdict,
    })
}
