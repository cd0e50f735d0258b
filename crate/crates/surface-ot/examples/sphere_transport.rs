//! Mass transport between antipodal bumps on a sphere.
//!
//! Two Gaussian bumps sit at the north and south poles of a unit icosphere.
//! The solver finds the geodesic interpolation: the density flows along the
//! meridians, splitting symmetrically around the sphere. The example checks
//! mass conservation per time slice and the symmetry of the problem (swapping
//! the endpoints must give the same transport value), then writes viewer
//! frames for inspection.
//!
//! Run with: `cargo run --release --example sphere_transport`

use surface_ot::app::gaussian_bump;
use surface_ot::discretization::{normalize_density, DensityPair, TimeGrid};
use surface_ot::mesh::{compute_geometry, generate_icosphere};
use surface_ot::solver::{solve, Problem, SolverConfig, StopReason};

fn main() {
    let mesh = generate_icosphere(2, 1.0).expect("icosphere generation");
    let geom = compute_geometry(&mesh).expect("geometry");
    let grid = TimeGrid::new(15).expect("time grid");
    println!(
        "unit sphere: {} vertices, {} faces, area {:.4} (exact 4π ≈ {:.4})",
        mesh.vertex_count(),
        mesh.face_count(),
        geom.total_area,
        4.0 * std::f64::consts::PI
    );

    let north = gaussian_bump(&mesh, [0.0, 0.0, 1.0], 0.35);
    let south = gaussian_bump(&mesh, [0.0, 0.0, -1.0], 0.35);
    let mu0 = normalize_density(&north, &geom, 0.0).expect("normalize");
    let mu1 = normalize_density(&south, &geom, 0.0).expect("normalize");

    let cfg = SolverConfig {
        tol: 1e-3,
        ..Default::default()
    };
    let prob = Problem::new(mesh.clone(), geom.clone(), DensityPair { mu0: mu0.clone(), mu1: mu1.clone() }, grid);
    let (outcome, sol) = solve(&prob, cfg.clone()).expect("solver");
    assert_eq!(outcome.reason, StopReason::Converged, "solver did not converge");
    println!(
        "north → south: {} iterations, transport value {:.5}, distance {:.5}",
        outcome.iterations, sol.cost, sol.w2_distance
    );
    let worst_mass = sol
        .mass_per_slice
        .iter()
        .map(|m| (m - 1.0).abs())
        .fold(0.0, f64::max);
    println!("worst slice-mass deviation: {worst_mass:.2e}");

    // The reversed problem must cost the same (the geodesic is symmetric).
    let back = Problem::new(mesh, geom, DensityPair { mu0: mu1, mu1: mu0 }, grid);
    let (outcome_b, sol_b) = solve(&back, cfg).expect("solver (reversed)");
    assert_eq!(outcome_b.reason, StopReason::Converged);
    println!(
        "south → north: {} iterations, transport value {:.5}",
        outcome_b.iterations, sol_b.cost
    );
    println!(
        "endpoint-swap asymmetry: {:.2e} (relative)",
        (sol.cost - sol_b.cost).abs() / sol.cost
    );

    let dir = std::env::temp_dir().join("sphere_transport_frames");
    std::fs::create_dir_all(&dir).expect("output dir");
    surface_ot::app::export_vtk_frames(&dir, &prob.mesh, &sol, grid).expect("viewer frames");
    println!("viewer frames written to {}", dir.display());
}
