//! File formats and CSV emitters.
//!
//! All input files are JSON documents with an explicit `schema` field so
//! fixtures stay round-trippable.  All numeric CSV output is printed with 12
//! significant digits and deterministic row order, so identical inputs give
//! byte-identical results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::census::CensusReport;
use crate::coarea::LambdaCurves;
use crate::endpoint::Control;
use crate::error::CarnotError;
use crate::structure::{CarnotStructure, SkewSpectrum, VerticalPoint};
use crate::topology::{BettiTable, IndexProfile, INDEX_INFINITE};
use crate::Result;

pub const STRUCTURE_SCHEMA: &str = "carnot-structure/1";
pub const CONTROL_SCHEMA: &str = "carnot-control/1";
pub const FORMS_SCHEMA: &str = "carnot-forms/1";

/// Formats one number with 12 significant digits.
pub fn fmt(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0" so reruns and algebraically equal paths agree.
        return "0.00000000000e0".to_string();
    }
    format!("{x:.11e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// structure files

#[derive(Serialize, Deserialize)]
struct StructureFile {
    schema: String,
    d: usize,
    l: usize,
    /// Row-major `d*d` entries per matrix.
    matrices: Vec<Vec<f64>>,
}

pub fn structure_from_json(text: &str) -> Result<CarnotStructure> {
    let file: StructureFile =
        serde_json::from_str(text).map_err(|e| CarnotError::Parse(e.to_string()))?;
    if file.schema != STRUCTURE_SCHEMA {
        return Err(CarnotError::Parse(format!(
            "expected schema {STRUCTURE_SCHEMA:?}, got {:?}",
            file.schema
        )));
    }
    if file.matrices.len() != file.l {
        return Err(CarnotError::Parse(format!(
            "l = {} but {} matrices given",
            file.l,
            file.matrices.len()
        )));
    }
    let mats = file
        .matrices
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            if rows.len() != file.d * file.d {
                return Err(CarnotError::Parse(format!(
                    "matrix {i} has {} entries, expected {}",
                    rows.len(),
                    file.d * file.d
                )));
            }
            Ok(DMatrix::from_row_slice(file.d, file.d, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    CarnotStructure::new(mats)
}

pub fn structure_to_json(structure: &CarnotStructure) -> String {
    let file = StructureFile {
        schema: STRUCTURE_SCHEMA.to_string(),
        d: structure.horizontal_rank(),
        l: structure.corank(),
        matrices: structure
            .matrices()
            .iter()
            .map(|m| m.transpose().as_slice().to_vec())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("structure serialization")
}

pub fn read_structure(path: &std::path::Path) -> Result<CarnotStructure> {
    structure_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// control files

#[derive(Serialize, Deserialize)]
struct ControlFile {
    schema: String,
    d: usize,
    /// Fourier truncation order.
    order: usize,
    mean: Vec<f64>,
    /// `[U_k, V_k]` pairs, one per wave number `k = 1..order`.
    coeffs: Vec<[Vec<f64>; 2]>,
}

pub fn control_from_json(text: &str) -> Result<Control> {
    let file: ControlFile =
        serde_json::from_str(text).map_err(|e| CarnotError::Parse(e.to_string()))?;
    if file.schema != CONTROL_SCHEMA {
        return Err(CarnotError::Parse(format!(
            "expected schema {CONTROL_SCHEMA:?}, got {:?}",
            file.schema
        )));
    }
    if file.mean.len() != file.d || file.coeffs.len() != file.order {
        return Err(CarnotError::Parse(
            "control dimensions do not match d / order".into(),
        ));
    }
    let mut c = Control::zero(file.d, file.order);
    c.mean = DVector::from_column_slice(&file.mean);
    for (k, pair) in file.coeffs.iter().enumerate() {
        if pair[0].len() != file.d || pair[1].len() != file.d {
            return Err(CarnotError::Parse(format!(
                "coefficient pair {k} has wrong dimension"
            )));
        }
        c.coeffs[k] = (
            DVector::from_column_slice(&pair[0]),
            DVector::from_column_slice(&pair[1]),
        );
    }
    Ok(c)
}

pub fn control_to_json(control: &Control) -> String {
    let file = ControlFile {
        schema: CONTROL_SCHEMA.to_string(),
        d: control.dim(),
        order: control.order(),
        mean: control.mean.as_slice().to_vec(),
        coeffs: control
            .coeffs
            .iter()
            .map(|(u, v)| [u.as_slice().to_vec(), v.as_slice().to_vec()])
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("control serialization")
}

// ---------------------------------------------------------------------------
// quadratic-form files (finite-dimensional pencil input)

#[derive(Serialize, Deserialize)]
struct FormsFile {
    schema: String,
    n: usize,
    /// Row-major `n*n` entries per symmetric form.
    forms: Vec<Vec<f64>>,
}

pub fn forms_from_json(text: &str) -> Result<Vec<DMatrix<f64>>> {
    let file: FormsFile =
        serde_json::from_str(text).map_err(|e| CarnotError::Parse(e.to_string()))?;
    if file.schema != FORMS_SCHEMA {
        return Err(CarnotError::Parse(format!(
            "expected schema {FORMS_SCHEMA:?}, got {:?}",
            file.schema
        )));
    }
    file.forms
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            if rows.len() != file.n * file.n {
                return Err(CarnotError::Parse(format!(
                    "form {i} has {} entries, expected {}",
                    rows.len(),
                    file.n * file.n
                )));
            }
            let m = DMatrix::from_row_slice(file.n, file.n, rows);
            if (&m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
                return Err(CarnotError::Parse(format!("form {i} is not symmetric")));
            }
            Ok(m)
        })
        .collect()
}

pub fn forms_to_json(forms: &[DMatrix<f64>]) -> String {
    let n = forms.first().map_or(0, |m| m.nrows());
    let file = FormsFile {
        schema: FORMS_SCHEMA.to_string(),
        n,
        forms: forms
            .iter()
            .map(|m| m.transpose().as_slice().to_vec())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("forms serialization")
}

// ---------------------------------------------------------------------------
// CSV emitters

/// Census rows: `omega_1..omega_l,nu,energy,index,resonances,betti_of_torus`.
/// Resonances are semicolon-joined `i:n` pairs.
pub fn census_csv(report: &CensusReport, l: usize) -> String {
    let mut out = String::new();
    for i in 1..=l {
        out.push_str(&format!("omega_{i},"));
    }
    out.push_str("nu,energy,index,resonances,betti_of_torus\n");
    for m in &report.manifolds {
        out.push_str(&join(m.omega.0.iter().copied()));
        let resonances = m
            .resonances
            .iter()
            .map(|(i, n)| format!("{i}:{n}"))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            m.nu,
            fmt(m.energy),
            m.index,
            resonances,
            1u64 << m.nu
        ));
    }
    out
}

/// Profile rows: `theta_start,theta_end,index`; infinite pieces print `inf`.
pub fn profile_csv(profile: &IndexProfile) -> String {
    let mut out = String::from("theta_start,theta_end,index\n");
    for (a, b, v) in profile.intervals() {
        let val = if v == INDEX_INFINITE {
            "inf".to_string()
        } else {
            v.to_string()
        };
        out.push_str(&format!("{},{},{}\n", fmt(a), fmt(b), val));
    }
    out
}

/// Betti rows: `j,b_j` over the nonzero reduced classes.
pub fn betti_csv(table: &BettiTable) -> String {
    let mut out = String::from("j,b_j\n");
    for (j, b) in &table.reduced {
        out.push_str(&format!("{j},{b}\n"));
    }
    out
}

/// Spectrum rows: `plane,alpha` followed by `kernel,<dim>`.
pub fn spectrum_csv(spectrum: &SkewSpectrum) -> String {
    let mut out = String::from("plane,alpha\n");
    for (i, a) in spectrum.alphas.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt(*a)));
    }
    out.push_str(&format!("kernel,{}\n", spectrum.kernel.len()));
    out
}

/// Trajectory rows `t,x_1..x_d,y_1..y_l` on `steps + 1` uniform times.
///
/// The horizontal path is the primitive of the control; the vertical
/// coordinates integrate `y_i' = x^T A_i u / 2` by Simpson on each step.
pub fn trajectory_csv(structure: &CarnotStructure, u: &Control, steps: usize) -> String {
    let d = structure.horizontal_rank();
    let l = structure.corank();
    let mut out = String::from("t");
    for i in 1..=d {
        out.push_str(&format!(",x_{i}"));
    }
    for i in 1..=l {
        out.push_str(&format!(",y_{i}"));
    }
    out.push('\n');
    let rate = |i: usize, t: f64| {
        let x = u.primitive(t);
        0.5 * x.dot(&(structure.matrix(i) * u.eval(t)))
    };
    let mut y = vec![0.0_f64; l];
    let h = 2.0 * std::f64::consts::PI / steps as f64;
    for k in 0..=steps {
        let t = k as f64 * h;
        out.push_str(&fmt(t));
        for v in u.primitive(t).iter() {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        for yi in &y {
            out.push(',');
            out.push_str(&fmt(*yi));
        }
        out.push('\n');
        if k < steps {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += h / 6.0
                    * (rate(i, t) + 4.0 * rate(i, t + 0.5 * h) + rate(i, t + h));
            }
        }
    }
    out
}

/// Coarea integrand rows `theta,lambda_1..lambda_d,integrand` on a uniform
/// grid strictly between the singular angles.
pub fn lambda_csv(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    grid: usize,
) -> Result<String> {
    let curves = LambdaCurves::new(structure, p)?;
    let d = structure.horizontal_rank();
    let mut out = String::from("theta");
    for i in 1..=d {
        out.push_str(&format!(",lambda_{i}"));
    }
    out.push_str(",integrand\n");
    let (lo, hi) = curves.singular_angles;
    let (lo, hi) = (lo + 1e-6, hi - 1e-6);
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        let mut vals = curves.values(t);
        vals.resize(d, 0.0);
        out.push_str(&fmt(t));
        for v in vals {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push(',');
        out.push_str(&fmt(curves.integrand_at(t)));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_structure, random_zero_mean_control, rng};

    #[test]
    fn structure_roundtrip() {
        let mut r = rng(3);
        let s = random_structure(5, 2, &mut r);
        let text = structure_to_json(&s);
        let back = structure_from_json(&text).unwrap();
        for (a, b) in s.matrices().iter().zip(back.matrices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn control_roundtrip() {
        let mut r = rng(4);
        let c = random_zero_mean_control(3, 4, &mut r);
        let back = control_from_json(&control_to_json(&c)).unwrap();
        assert_eq!(c.mean, back.mean);
        assert_eq!(c.coeffs, back.coeffs);
    }

    #[test]
    fn forms_roundtrip_and_symmetry_check() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        let back = forms_from_json(&forms_to_json(&[q.clone()])).unwrap();
        assert_eq!(back[0], q);
        let bad = r#"{"schema":"carnot-forms/1","n":2,"forms":[[1,2,3,4]]}"#;
        assert!(forms_from_json(bad).is_err());
    }

    #[test]
    fn schema_mismatch_rejected() {
        let bad = r#"{"schema":"carnot-structure/2","d":2,"l":1,"matrices":[[0,1,-1,0]]}"#;
        assert!(matches!(
            structure_from_json(bad),
            Err(CarnotError::Parse(_))
        ));
    }

    #[test]
    fn heisenberg_trajectory_endpoint_matches_csv_tail() {
        let s = CarnotStructure::heisenberg();
        let u = crate::endpoint::heisenberg_circle();
        let csv = trajectory_csv(&s, &u, 256);
        let last = csv.lines().last().unwrap();
        let cols: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
        // Final point (0, 0, pi).
        assert!(cols[1].abs() < 1e-9 && cols[2].abs() < 1e-9);
        assert!((cols[3] - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn formatting_is_twelve_digits_and_stable() {
        assert_eq!(fmt(std::f64::consts::PI), "3.14159265359e0");
        assert_eq!(fmt(0.0), "0.00000000000e0");
        assert_eq!(fmt(-0.0), "0.00000000000e0");
    }
}
