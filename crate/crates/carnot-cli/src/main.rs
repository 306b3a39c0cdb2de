//! Batch front door for the carnot library.
//!
//! Subcommands parse a structure (or forms) file, run one library pipeline
//! and emit CSV on stdout or into `--out`.  All numbers print with 12
//! significant digits and fixed row orders, so identical invocations produce
//! byte-identical output.  `CARNOT_THREADS` caps the worker thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carnot::census::{enumerate, morse_bott_polynomial};
use carnot::coarea::{tau_commuting, tau_numeric};
use carnot::endpoint::{shoot, solve_endpoint_multistart, ExponentialControl};
use carnot::io;
use carnot::structure::genericity_scan;
use carnot::topology::{
    betti_from_profile, index_profile_analytic, index_profile_finite, total_betti_via_maxima,
};
use carnot::{CarnotError, Covector, VerticalPoint};

#[derive(Parser)]
#[command(name = "carnot", version, about = "Step-two Carnot group geodesics and loop-space topology")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scan grid size.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    /// Integer-resonance tolerance.
    #[arg(long = "tol-integer", default_value_t = 1e-9)]
    tol_integer: f64,
    /// Seed for randomized sweeps.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a structure file and run the genericity scan.
    Validate {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Canonical-form spectrum of `omega A`.
    Spectrum {
        file: PathBuf,
        /// Covector, comma-separated, length l.
        #[arg(long, value_delimiter = ',', required = true)]
        omega: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Critical-manifold census below energy s.
    Census {
        file: PathBuf,
        /// Vertical target, comma-separated, length l.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long)]
        s: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Index profile and Betti table of the sublevel set at energy s.
    Betti {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long)]
        s: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Coarea constant of a corank-two target, with the integrand dump.
    Tau {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// End point of the exponential control (omega, u0).
    Shoot {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        omega: Vec<f64>,
        /// Initial velocity, comma-separated, length d.
        #[arg(long, value_delimiter = ',', required = true)]
        u0: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Multistart shooting solver for a vertical target.
    Solve {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Energy cap for reported solutions.
        #[arg(long)]
        smax: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Index profile and Betti numbers of an explicit pair of quadrics.
    Quadric {
        /// Forms file with two symmetric N x N matrices.
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let (common, result) = run(&cli.cmd);
    match result {
        Ok(text) => match emit(common, &text) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// `CARNOT_THREADS` caps the rayon pool; unset or invalid means default.
fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("CARNOT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn exit_code(e: &CarnotError) -> u8 {
    match e {
        CarnotError::NoConvergence { .. }
        | CarnotError::GridTooCoarse(_)
        | CarnotError::TruncationTooSmall { .. }
        | CarnotError::ConsistencyFailure(_) => 3,
        _ => 2,
    }
}

fn emit(common: &Common, text: &str) -> std::io::Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: &Cmd) -> (&Common, Result<String, CarnotError>) {
    match cmd {
        Cmd::Validate { file, common } => (common, cmd_validate(file, common)),
        Cmd::Spectrum { file, omega, common } => (common, cmd_spectrum(file, omega)),
        Cmd::Census { file, p, s, common } => (common, cmd_census(file, p, *s, common)),
        Cmd::Betti { file, p, s, common } => (common, cmd_betti(file, p, *s, common)),
        Cmd::Tau { file, p, common } => (common, cmd_tau(file, p, common)),
        Cmd::Shoot { file, omega, u0, common } => (common, cmd_shoot(file, omega, u0)),
        Cmd::Solve { file, p, smax, common } => (common, cmd_solve(file, p, *smax, common)),
        Cmd::Quadric { file, common } => (common, cmd_quadric(file, common)),
    }
}

fn cmd_validate(file: &PathBuf, common: &Common) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let p = VerticalPoint::from_slice(&vec![1.0; structure.corank()]);
    let report = genericity_scan(&structure, &p, common.grid)?;
    let mut out = String::new();
    out.push_str(&format!(
        "d,{}\nl,{}\nverdict,{:?}\nmin_gap,{}\nmin_alpha,{}\ninteger_collisions,{}\n",
        structure.horizontal_rank(),
        structure.corank(),
        report.verdict,
        io::fmt(report.min_gap),
        io::fmt(report.min_alpha),
        report.integer_collisions.len()
    ));
    for w in &report.warnings {
        out.push_str(&format!("warning,{w}\n"));
    }
    Ok(out)
}

fn cmd_spectrum(file: &PathBuf, omega: &[f64]) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let sp = structure.skew_spectrum(&Covector::from_slice(omega))?;
    Ok(io::spectrum_csv(&sp))
}

fn cmd_census(file: &PathBuf, p: &[f64], s: f64, common: &Common) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let p = VerticalPoint::from_slice(p);
    let report = enumerate(&structure, &p, s, common.grid)?;
    let mut out = io::census_csv(&report, structure.corank());
    let poly = morse_bott_polynomial(&report)
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(";");
    out.push_str(&format!("# morse_bott_polynomial,{poly}\n"));
    Ok(out)
}

fn cmd_betti(file: &PathBuf, p: &[f64], s: f64, _common: &Common) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let p = VerticalPoint::from_slice(p);
    let profile = index_profile_analytic(&structure, &p, s)?;
    let table = betti_from_profile(&profile)?;
    let mut out = io::profile_csv(&profile);
    out.push_str(&io::betti_csv(&table));
    out.push_str(&format!("# total_sublevel,{}\n", table.total));
    out.push_str(&format!(
        "# total_maxima,{}\n",
        total_betti_via_maxima(&profile)?
    ));
    Ok(out)
}

fn cmd_tau(file: &PathBuf, p: &[f64], common: &Common) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let p = VerticalPoint::from_slice(p);
    let tau = tau_numeric(&structure, &p, common.grid)?;
    let mut out = format!("# tau,{}\n", io::fmt(tau));
    match tau_commuting(&structure, &p) {
        Ok(exact) => out.push_str(&format!("# tau_commuting,{}\n", io::fmt(exact))),
        Err(CarnotError::NotCommuting { .. }) => {}
        Err(e) => return Err(e),
    }
    out.push_str(&io::lambda_csv(&structure, &p, common.grid)?);
    Ok(out)
}

fn cmd_shoot(file: &PathBuf, omega: &[f64], u0: &[f64]) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let e = ExponentialControl {
        omega: Covector::from_slice(omega),
        u0: nalgebra::DVector::from_column_slice(u0),
    };
    let outcome = shoot(&structure, &e)?;
    let d = structure.horizontal_rank();
    let l = structure.corank();
    let mut out = String::new();
    for i in 1..=d {
        out.push_str(&format!("x_{i},"));
    }
    for i in 1..=l {
        out.push_str(&format!("y_{i}{}", if i < l { "," } else { "\n" }));
    }
    let row: Vec<String> = outcome
        .endpoint
        .horizontal
        .iter()
        .chain(outcome.endpoint.vertical.0.iter())
        .map(|v| io::fmt(*v))
        .collect();
    out.push_str(&row.join(","));
    out.push('\n');
    Ok(out)
}

fn cmd_solve(
    file: &PathBuf,
    p: &[f64],
    smax: Option<f64>,
    common: &Common,
) -> Result<String, CarnotError> {
    let structure = io::read_structure(file)?;
    let p = VerticalPoint::from_slice(p);
    let solutions = solve_endpoint_multistart(&structure, &p, 64, common.seed, 1e-7)?;
    let d = structure.horizontal_rank();
    let l = structure.corank();
    let mut out = String::new();
    for i in 1..=l {
        out.push_str(&format!("omega_{i},"));
    }
    for i in 1..=d {
        out.push_str(&format!("u0_{i},"));
    }
    out.push_str("energy,residual,iterations\n");
    for sol in &solutions {
        let energy = 0.5 * sol.u0.norm_squared() * 2.0 * std::f64::consts::PI;
        if smax.is_some_and(|cap| energy > cap) {
            continue;
        }
        let row: Vec<String> = sol
            .omega
            .0
            .iter()
            .chain(sol.u0.iter())
            .map(|v| io::fmt(*v))
            .collect();
        out.push_str(&row.join(","));
        out.push_str(&format!(
            ",{},{},{}\n",
            io::fmt(energy),
            io::fmt(sol.residual),
            sol.iterations
        ));
    }
    Ok(out)
}

fn cmd_quadric(file: &PathBuf, common: &Common) -> Result<String, CarnotError> {
    let forms = io::forms_from_json(&std::fs::read_to_string(file)?)?;
    if forms.len() != 2 {
        return Err(CarnotError::Parse(format!(
            "quadric needs exactly two forms, got {}",
            forms.len()
        )));
    }
    let profile = index_profile_finite(&forms[0], &forms[1], common.grid)?;
    let table = betti_from_profile(&profile)?;
    let mut out = io::profile_csv(&profile);
    out.push_str(&io::betti_csv(&table));
    out.push_str(&format!("# total_sublevel,{}\n", table.total));
    Ok(out)
}
