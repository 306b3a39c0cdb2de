//! Randomized invariants of the core pipeline: spectral scaling, end-point
//! homogeneity, frame reconstruction, and profile/Betti consistency.

use carnot::endpoint::endpoint_quadratic;
use carnot::sampling::{
    random_commuting_structure, random_structure, random_zero_mean_control, rng,
};
use carnot::topology::{
    betti_from_profile, index_profile_analytic, sublevel_arcs, total_betti_via_maxima,
};
use carnot::{Covector, VerticalPoint};
use proptest::prelude::*;

const ALPHA_TOL: f64 = 1e-9;

fn unit_omega(l: usize, raw: &[f64]) -> Covector {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    Covector::from_slice(&raw.iter().take(l).map(|x| x / norm).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_scales_linearly_in_omega(seed in 0u64..1 << 48, c in -4.0f64..4.0) {
        prop_assume!(c.abs() > 1e-3);
        let mut r = rng(seed);
        let structure = random_structure(4, 2, &mut r);
        let omega = unit_omega(2, &[0.8, -0.6]);
        let scaled = Covector::from_slice(&[0.8 * c, -0.6 * c]);
        let a = structure.skew_spectrum(&omega).unwrap();
        let b = structure.skew_spectrum(&scaled).unwrap();
        prop_assert_eq!(a.alphas.len(), b.alphas.len());
        for (x, y) in a.alphas.iter().zip(&b.alphas) {
            prop_assert!((x * c.abs() - y).abs() < ALPHA_TOL * (1.0 + c.abs()));
        }
    }

    #[test]
    fn spectrum_is_even_in_omega(seed in 0u64..1 << 48) {
        let mut r = rng(seed);
        let structure = random_structure(6, 2, &mut r);
        let omega = unit_omega(2, &[0.3, 1.1]);
        let neg = Covector::from_slice(&[-0.3 / (0.3f64.hypot(1.1)), -1.1 / (0.3f64.hypot(1.1))]);
        let a = structure.skew_spectrum(&omega).unwrap();
        let b = structure.skew_spectrum(&neg).unwrap();
        prop_assert_eq!(a.alphas.len(), b.alphas.len());
        for (x, y) in a.alphas.iter().zip(&b.alphas) {
            prop_assert!((x - y).abs() < ALPHA_TOL);
        }
    }

    #[test]
    fn spectrum_frobenius_identity(seed in 0u64..1 << 48, d in 3usize..7) {
        let mut r = rng(seed);
        let l = 2usize.min(d * (d - 1) / 2);
        let structure = random_structure(d, l, &mut r);
        let omega = unit_omega(l, &[1.3, -0.4]);
        let m = structure.omega_matrix(&omega).unwrap();
        let sp = structure.skew_spectrum(&omega).unwrap();
        let frob2: f64 = m.norm().powi(2);
        let sum2: f64 = 2.0 * sp.alphas.iter().map(|a| a * a).sum::<f64>();
        prop_assert!((frob2 - sum2).abs() < 1e-8 * (1.0 + frob2));
    }

    #[test]
    fn spectrum_reconstructs_matrix(seed in 0u64..1 << 48, d in 3usize..8) {
        let mut r = rng(seed);
        let structure = random_structure(d, 1, &mut r);
        let omega = Covector::from_slice(&[1.0]);
        let m = structure.omega_matrix(&omega).unwrap();
        let sp = structure.skew_spectrum(&omega).unwrap();
        prop_assert!((sp.reassemble(d) - &m).norm() < 1e-7 * (1.0 + m.norm()));
        for (x, y) in &sp.frames {
            prop_assert!((x.norm() - 1.0).abs() < 1e-9);
            prop_assert!((y.norm() - 1.0).abs() < 1e-9);
            prop_assert!(x.dot(y).abs() < 1e-9);
        }
    }

    #[test]
    fn endpoint_is_quadratic_in_the_control(seed in 0u64..1 << 48, c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let structure = random_structure(4, 2, &mut r);
        let u = random_zero_mean_control(4, 4, &mut r);
        let mut cu = u.clone();
        for (a, b) in &mut cu.coeffs {
            *a *= c;
            *b *= c;
        }
        let e1 = endpoint_quadratic(&structure, &u).unwrap();
        let e2 = endpoint_quadratic(&structure, &cu).unwrap();
        let scale = 1.0 + e1.vertical.norm() * c * c;
        for i in 0..e1.vertical.len() {
            prop_assert!((e1.vertical.0[i] * c * c - e2.vertical.0[i]).abs() < 1e-9 * scale);
        }
        prop_assert!((u.energy() * c * c - cu.energy()).abs() < 1e-9 * (1.0 + cu.energy()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn profile_sublevels_nest_and_totals_agree(seed in 0u64..1 << 48, s in 4.0f64..40.0) {
        let mut r = rng(seed);
        let (structure, _) = random_commuting_structure(4, 2, &mut r);
        let p = VerticalPoint::from_slice(&[0.3, 1.0]);
        let profile = index_profile_analytic(&structure, &p, s).unwrap();
        let table = betti_from_profile(&profile).unwrap();
        let maxima = total_betti_via_maxima(&profile).unwrap();
        prop_assert_eq!(table.total, maxima);
        if let Some(vmax) = profile.max_finite() {
            let mut prev = sublevel_arcs(&profile, 0);
            for j in 1..=vmax.min(64) {
                let next = sublevel_arcs(&profile, j);
                prop_assert!(prev.subset_of(&next));
                prev = next;
            }
        }
    }
}
