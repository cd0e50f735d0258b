//! Mesh generation, validation, and OFF round-tripping.
//!
//! Builds the two generator families (flat unit-square grids and icospheres),
//! validates their combinatorics, writes them to OFF files, and reads them
//! back. Also shows what the validator reports on a healthy mesh: boundary
//! edges for the grid, a closed surface for the sphere.
//!
//! Run with: `cargo run --release --example generate_meshes`

use surface_ot::app::write_off;
use surface_ot::mesh::{
    compute_geometry, generate_grid_mesh, generate_icosphere, load_mesh_auto, validate_mesh,
};

fn main() {
    let dir = std::env::temp_dir().join("surface_ot_meshes");
    std::fs::create_dir_all(&dir).expect("output dir");

    for n in [4, 16, 64] {
        let mesh = generate_grid_mesh(n).expect("grid");
        let diag = validate_mesh(&mesh).expect("validation");
        let geom = compute_geometry(&mesh).expect("geometry");
        let path = dir.join(format!("grid_{n}.off"));
        write_off(&path, &mesh).expect("write");
        println!(
            "grid {n:>3}: {:>5} vertices, {:>5} faces, area {:.3}, {} boundary edges -> {}",
            diag.vertices,
            diag.faces,
            geom.total_area,
            diag.boundary_edges,
            path.display()
        );
    }

    for s in [0, 2, 3] {
        let mesh = generate_icosphere(s, 1.0).expect("icosphere");
        let diag = validate_mesh(&mesh).expect("validation");
        let geom = compute_geometry(&mesh).expect("geometry");
        let path = dir.join(format!("icosphere_{s}.off"));
        write_off(&path, &mesh).expect("write");
        println!(
            "icosphere {s}: {:>5} vertices, {:>5} faces, area {:.4} (4π ≈ {:.4}), closed: {} -> {}",
            diag.vertices,
            diag.faces,
            geom.total_area,
            4.0 * std::f64::consts::PI,
            diag.boundary_edges == 0,
            path.display()
        );
    }

    // Round-trip: what we wrote is what we read.
    let mesh = generate_icosphere(1, 2.5).expect("icosphere");
    let path = dir.join("roundtrip.off");
    write_off(&path, &mesh).expect("write");
    let back = load_mesh_auto(&path).expect("read");
    assert_eq!(back.faces, mesh.faces);
    assert_eq!(back.vertex_count(), mesh.vertex_count());
    let worst = back
        .vertices
        .iter()
        .zip(&mesh.vertices)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
        .fold(0.0f64, f64::max);
    println!("OFF round-trip: {} vertices, worst coordinate deviation {worst:.1e}", back.vertex_count());
}
