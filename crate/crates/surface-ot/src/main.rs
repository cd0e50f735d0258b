//! Command-line front end: configure a run, generate meshes, self-check the
//! discretization, or reproduce the translating-bump benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use surface_ot::app::{
    self, format_demo_table, format_diagnostics, parse_config_file, MeshSpec,
};
use surface_ot::mesh::compute_geometry;
use surface_ot::solver::SolverConfig;

#[derive(Parser)]
#[command(
    name = "surface-ot",
    version,
    about = "Geodesic interpolation between densities on a triangulated surface"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a transport problem described by a key=value config file.
    Solve {
        /// Path to the configuration file.
        config: PathBuf,
    },
    /// Reproduce the translating-bump benchmark on an n×n grid, reporting
    /// path errors against the exact solution as the residual decreases.
    DemoGaussian {
        /// Grid resolution (vertices per side minus one).
        #[arg(long, default_value_t = 96)]
        n: usize,
        /// Number of time steps.
        #[arg(long, default_value_t = 31)]
        steps: usize,
        /// Target residual.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Overrelaxation factor in (0, 2).
        #[arg(long, default_value_t = 1.9)]
        tau: f64,
        /// Congestion penalty (0 disables).
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        /// Iteration budget.
        #[arg(long, default_value_t = 50_000)]
        max_iterations: usize,
        /// Where to write the demo report (omit to skip writing).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Validate a mesh and self-check the discrete operators on it.
    Diagnose {
        /// Mesh file path, or a generator spec: `grid <n>` /
        /// `icosphere <subdivisions> <radius>`.
        #[arg(required = true, num_args = 1..=3)]
        mesh: Vec<String>,
    },
    /// Generate a mesh and write it in OFF format.
    GenMesh {
        /// Generator spec (`grid <n>` or `icosphere <subdivisions> <radius>`)
        /// followed by the output path.
        #[arg(required = true, num_args = 2..=4)]
        args: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, app::AppError> {
    match cli.cmd {
        Cmd::Solve { config } => {
            let cfg = parse_config_file(&config)?;
            let artifacts = app::run(&cfg)?;
            let r = &artifacts.report;
            println!(
                "{:?} after {} iterations ({:.1}s): residual {:.3e}",
                r.outcome.reason,
                r.outcome.iterations,
                r.outcome.elapsed_seconds,
                r.outcome.residuals.eta_max
            );
            println!(
                "transport value {:.6}, distance {:.6}, density range [{:.3e}, {:.3e}], \
                 worst slice-mass deviation {:.3e}",
                r.solution.cost,
                r.solution.w2_distance,
                r.solution.density_min,
                r.solution.density_max,
                r.solution.mass_deviation_max
            );
            println!("report: {}", artifacts.report_path.display());
            Ok(if artifacts.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::DemoGaussian {
            n,
            steps,
            tol,
            tau,
            theta,
            max_iterations,
            output_dir,
        } => {
            let cfg = SolverConfig {
                tol,
                relaxation: tau,
                congestion: theta,
                max_iterations,
                ..Default::default()
            };
            println!("translating bump on a {n}×{n} grid, {steps} time steps, target {tol:.1e}");
            let report = app::run_gaussian_demo(n, steps, cfg)?;
            print!("{}", format_demo_table(&report));
            if let Some(dir) = output_dir {
                let path = app::export_demo(&report, &dir)?;
                println!("report: {}", path.display());
            }
            Ok(
                if report.outcome.reason == surface_ot::solver::StopReason::Converged {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                },
            )
        }
        Cmd::Diagnose { mesh } => {
            let words: Vec<&str> = mesh.iter().map(String::as_str).collect();
            let spec = MeshSpec::parse(&words).map_err(|msg| app::AppError::Config {
                line: 0,
                msg,
            })?;
            let mesh = spec.build()?;
            let geom = compute_geometry(&mesh)?;
            let mut report = app::run_diagnostics(&mesh, &geom)?;
            report.mesh.source = spec.describe();
            print!("{}", format_diagnostics(&report));
            Ok(if report.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::GenMesh { args } => {
            let (spec_words, out) = args.split_at(args.len() - 1);
            let words: Vec<&str> = spec_words.iter().map(String::as_str).collect();
            let spec = MeshSpec::parse(&words).map_err(|msg| app::AppError::Config {
                line: 0,
                msg,
            })?;
            if matches!(spec, MeshSpec::File(_)) {
                return Err(app::AppError::Config {
                    line: 0,
                    msg: "gen-mesh needs a generator spec: `grid <n>` or \
                          `icosphere <subdivisions> <radius>`"
                        .to_string(),
                });
            }
            let mesh = spec.build()?;
            let out = PathBuf::from(&out[0]);
            app::write_off(&out, &mesh)?;
            println!(
                "wrote {} ({} vertices, {} faces)",
                out.display(),
                mesh.vertex_count(),
                mesh.face_count()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
