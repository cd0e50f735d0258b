//! Triangle meshes: loading, generation, validation, and the per-face
//! geometry (areas, hat-function gradients, vertex stars) the solver needs.
//!
//! Meshes are plain vertex/face soups. Faces must be triangles; the solver
//! additionally requires the mesh to be vertex-connected and edge-manifold,
//! which [`validate_mesh`] checks. Boundary edges are allowed (open meshes
//! get natural no-flux behavior from the finite-element discretization).

use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

/// Ratio `area / longest_edge²` below which a face counts as degenerate.
const DEGENERATE_AREA_RATIO: f64 = 1e-14;

/// Inscribed-circle-diameter to longest-edge ratio below which a face gets a
/// quality warning.
const NEEDLE_QUALITY_RATIO: f64 = 1e-6;

/// Largest supported icosphere subdivision level (level 7 is ~164k vertices).
const MAX_SUBDIVISIONS: u32 = 7;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("mesh must have at least one vertex and one face")]
    Empty,
    #[error("face {face} references vertex {vertex}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        vertex: usize,
        count: usize,
    },
    #[error("face {face} lists the same vertex twice")]
    RepeatedVertex { face: usize },
    #[error("face {face} is degenerate: area {area:.3e} vs. longest edge {edge:.3e}")]
    DegenerateFace { face: usize, area: f64, edge: f64 },
    #[error("mesh is not vertex-connected ({components} components)")]
    Disconnected { components: usize },
    #[error("edge ({a}, {b}) is shared by {count} faces; an edge may border at most 2")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("grid resolution must be at least 1")]
    GridTooSmall,
    #[error("icosphere subdivision level {0} exceeds the supported maximum of {MAX_SUBDIVISIONS}")]
    TooManySubdivisions(u32),
    #[error("sphere radius must be positive, got {0}")]
    NonPositiveRadius(f64),
}

/// An indexed triangle mesh embedded in 3-space.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Checks that every face index is in range and no face repeats a vertex.
    pub fn check_indices(&self) -> Result<(), MeshError> {
        if self.vertices.is_empty() || self.faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= self.vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        vertex: v,
                        count: self.vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::RepeatedVertex { face: fi });
            }
        }
        Ok(())
    }
}

/// Supported mesh file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

/// Loads a triangle mesh, inferring the format from the file extension.
pub fn load_mesh_auto(path: &Path) -> Result<TriMesh, MeshError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let format = match ext.as_deref() {
        Some("off") => MeshFormat::Off,
        Some("obj") => MeshFormat::Obj,
        _ => {
            return Err(MeshError::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: "cannot infer mesh format; expected a .off or .obj extension".into(),
            })
        }
    };
    load_mesh(path, format)
}

/// Loads a triangle mesh from an ASCII OFF or Wavefront OBJ file.
///
/// Non-triangular faces are rejected. OBJ records other than `v` and `f` are
/// skipped. Every face index is validated against the vertex count.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.display().to_string();
    let mesh = match format {
        MeshFormat::Off => parse_off(&text, &name)?,
        MeshFormat::Obj => parse_obj(&text, &name)?,
    };
    mesh.check_indices()?;
    Ok(mesh)
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_off(text: &str, path: &str) -> Result<TriMesh, MeshError> {
    // Lines of interest, with original line numbers; comments and blanks skipped.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first_no, first) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    // The counts may share the header line ("OFF 8 6 12") or follow it.
    let mut header_rest = match first.strip_prefix("OFF") {
        Some(rest) => rest.trim(),
        None => return Err(parse_err(path, first_no, "missing OFF header")),
    };
    let counts_line;
    let (counts_no, counts) = if header_rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, first_no, "missing vertex/face counts"))?
    } else {
        counts_line = header_rest.to_string();
        header_rest = "";
        let _ = header_rest;
        (first_no, counts_line.as_str())
    };
    let nums: Vec<&str> = counts.split_whitespace().collect();
    if nums.len() < 2 {
        return Err(parse_err(path, counts_no, "expected vertex and face counts"));
    }
    let nv: usize = nums[0]
        .parse()
        .map_err(|_| parse_err(path, counts_no, format!("bad vertex count {:?}", nums[0])))?;
    let nf: usize = nums[1]
        .parse()
        .map_err(|_| parse_err(path, counts_no, format!("bad face count {:?}", nums[1])))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_no, format!("expected {nv} vertex lines")))?;
        let mut it = line.split_whitespace();
        let mut v = [0.0; 3];
        for coord in &mut v {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, no, "vertex line needs 3 coordinates"))?;
            *coord = tok
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad coordinate {tok:?}")))?;
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_no, format!("expected {nf} face lines")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let k: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(path, no, format!("bad face arity {:?}", toks[0])))?;
        if k != 3 {
            return Err(parse_err(path, no, format!("non-triangular face with {k} vertices")));
        }
        if toks.len() < 4 {
            return Err(parse_err(path, no, "face line needs 3 vertex indices"));
        }
        let mut f = [0usize; 3];
        for (slot, tok) in f.iter_mut().zip(&toks[1..4]) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad vertex index {tok:?}")))?;
        }
        faces.push(f);
    }

    Ok(TriMesh { vertices, faces })
}

fn parse_obj(text: &str, path: &str) -> Result<TriMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next().unwrap() {
            "v" => {
                let mut v = [0.0; 3];
                for coord in &mut v {
                    let tok = it
                        .next()
                        .ok_or_else(|| parse_err(path, no, "vertex record needs 3 coordinates"))?;
                    *coord = tok
                        .parse()
                        .map_err(|_| parse_err(path, no, format!("bad coordinate {tok:?}")))?;
                }
            	vertices.push(v);
            }
            "f" => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(parse_err(
                        path,
                        no,
                        format!("non-triangular face with {} vertices", refs.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (slot, r) in f.iter_mut().zip(&refs) {
                    // `f v`, `f v/vt`, `f v/vt/vn`, `f v//vn` all start with the
                    // vertex index.
                    let tok = r.split('/').next().unwrap_or("");
                    let idx: i64 = tok
                        .parse()
                        .map_err(|_| parse_err(path, no, format!("bad vertex reference {r:?}")))?;
                    if idx < 1 {
                        return Err(parse_err(
                            path,
                            no,
                            format!("vertex reference {idx} must be positive (1-based)"),
                        ));
                    }
                    *slot = (idx - 1) as usize;
                }
                faces.push(f);
            }
            // Normals, texture coordinates, groups, materials: irrelevant here.
            _ => {}
        }
    }
    Ok(TriMesh { vertices, faces })
}

/// Generates a regular triangulation of the unit square `[0,1]²` (in the
/// z = 0 plane) with `n × n` cells, each split into two triangles.
pub fn generate_grid_mesh(n: usize) -> Result<TriMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::GridTooSmall);
    }
    let step = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for iy in 0..=n {
        for ix in 0..=n {
            vertices.push([ix as f64 * step, iy as f64 * step, 0.0]);
        }
    }
    let at = |ix: usize, iy: usize| iy * (n + 1) + ix;
    let mut faces = Vec::with_capacity(2 * n * n);
    for iy in 0..n {
        for ix in 0..n {
            let (a, b, c, d) = (at(ix, iy), at(ix + 1, iy), at(ix + 1, iy + 1), at(ix, iy + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Ok(TriMesh { vertices, faces })
}

/// Generates an icosphere: a regular icosahedron subdivided `subdivisions`
/// times, all vertices projected onto the sphere of the given radius.
pub fn generate_icosphere(subdivisions: u32, radius: f64) -> Result<TriMesh, MeshError> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(MeshError::TooManySubdivisions(subdivisions));
    }
    if !(radius > 0.0) {
        return Err(MeshError::NonPositiveRadius(radius));
    }
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let project = |p: [f64; 3]| {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let s = radius / norm;
        [p[0] * s, p[1] * s, p[2] * s]
    };
    let mut vertices: Vec<[f64; 3]> = raw.iter().map(|&p| project(p)).collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    vertices.push(project([
                        (pa[0] + pb[0]) / 2.0,
                        (pa[1] + pb[1]) / 2.0,
                        (pa[2] + pb[2]) / 2.0,
                    ]));
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }

    Ok(TriMesh { vertices, faces })
}

/// Per-face and per-vertex geometric quantities derived from a mesh.
#[derive(Debug, Clone)]
pub struct MeshGeometry {
    /// Triangle areas `|f|`.
    pub face_area: Vec<f64>,
    /// Lumped vertex areas `|v| = (1/3) Σ_{f ∋ v} |f|`.
    pub vertex_area: Vec<f64>,
    /// `hat_grad[f][i]`: gradient of the hat function of the i-th vertex of
    /// face `f`. Constant per face, tangent to it.
    pub hat_grad: Vec<[[f64; 3]; 3]>,
    /// `star[v]`: the faces incident to `v`, as `(face, local index of v)`.
    pub star: Vec<Vec<(u32, u8)>>,
    /// Sum of all face areas.
    pub total_area: f64,
}

impl MeshGeometry {
    /// Largest number of faces incident to a single vertex.
    pub fn max_star_len(&self) -> usize {
        self.star.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Computes areas and hat-function gradients for every face.
///
/// The gradient of the hat function `h_i` (the piecewise-linear basis function
/// that is 1 at the face's i-th vertex and 0 at the other two) is obtained
/// from the edge matrix `J = (v₂−v₁, v₃−v₁)` through the normal equations:
/// the tangential gradients are `J (JᵀJ)⁻¹ M` with `M = [[-1,1,0],[-1,0,1]]`.
/// Fails on degenerate (near-zero-area) faces.
pub fn compute_geometry(mesh: &TriMesh) -> Result<MeshGeometry, MeshError> {
    mesh.check_indices()?;
    let nv = mesh.vertex_count();
    let nf = mesh.face_count();
    let mut face_area = Vec::with_capacity(nf);
    let mut hat_grad = Vec::with_capacity(nf);
    let mut vertex_area = vec![0.0; nv];
    let mut star: Vec<Vec<(u32, u8)>> = vec![Vec::new(); nv];
    let mut total_area = 0.0;

    for (fi, f) in mesh.faces.iter().enumerate() {
        let [p1, p2, p3] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let e1 = sub(p2, p1);
        let e2 = sub(p3, p1);
        // Gram matrix of the edge basis.
        let a = dot(e1, e1);
        let b = dot(e1, e2);
        let c = dot(e2, e2);
        let det = a * c - b * b;
        let area = det.max(0.0).sqrt() / 2.0;
        let longest = a.max(c).max(dot(sub(p3, p2), sub(p3, p2))).sqrt();
        if !(area > DEGENERATE_AREA_RATIO * longest * longest) {
            return Err(MeshError::DegenerateFace {
                face: fi,
                area,
                edge: longest,
            });
        }

        // Solve (JᵀJ) x = rhs for the two columns of M, with partial pivoting
        // on the 2×2 Gram system, then map back through J.
        let solve2 = |r0: f64, r1: f64| -> [f64; 2] {
            if a.abs() >= b.abs() {
                // Eliminate with the (a, b) row first.
                let l = b / a;
                let s = c - l * b;
                let y = (r1 - l * r0) / s;
                [(r0 - b * y) / a, y]
            } else {
                let l = a / b;
                let s = b - l * c;
                let y = (r0 - l * r1) / s;
                [(r1 - c * y) / b, y]
            }
        };
        // Columns of M for vertices 2 and 3; vertex 1 is minus their sum.
        let g2c = solve2(1.0, 0.0);
        let g3c = solve2(0.0, 1.0);
        let g2 = axpy2(g2c, e1, e2);
        let g3 = axpy2(g3c, e1, e2);
        let g1 = [-g2[0] - g3[0], -g2[1] - g3[1], -g2[2] - g3[2]];
        hat_grad.push([g1, g2, g3]);

        face_area.push(area);
        total_area += area;
        for (local, &v) in f.iter().enumerate() {
            vertex_area[v] += area / 3.0;
            star[v].push((fi as u32, local as u8));
        }
    }

    Ok(MeshGeometry {
        face_area,
        vertex_area,
        hat_grad,
        star,
        total_area,
    })
}

/// Combinatorial health report for a mesh. Produced by [`validate_mesh`].
#[derive(Debug)]
pub struct MeshDiagnostics {
    pub vertices: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub duplicate_faces: usize,
    /// Smallest inscribed-circle-diameter to longest-edge ratio over all faces.
    pub min_quality: f64,
    pub warnings: Vec<String>,
}

/// Checks the combinatorial requirements of the discretization.
///
/// Fails if the mesh is empty, has invalid indices, is not vertex-connected,
/// or has an edge shared by more than two faces. Duplicate faces, boundary
/// edges, and needle-thin triangles are reported in the diagnostics instead.
pub fn validate_mesh(mesh: &TriMesh) -> Result<MeshDiagnostics, MeshError> {
    mesh.check_indices()?;
    let nv = mesh.vertex_count();

    // Edge usage counts, with a deterministic re-scan for the error report.
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    for f in &mesh.faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let count = edge_count[&key];
            if count > 2 {
                return Err(MeshError::NonManifoldEdge {
                    a: key.0,
                    b: key.1,
                    count: count as usize,
                });
            }
        }
    }
    let boundary_edges = edge_count.values().filter(|&&c| c == 1).count();

    // Vertex connectivity over triangle edges.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for &(a, b) in edge_count.keys() {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; nv];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                stack.push(w);
            }
        }
    }
    if reached != nv {
        // Count full components for the report.
        let mut components = 1;
        for v in 0..nv {
            if !seen[v] {
                components += 1;
                seen[v] = true;
                stack.push(v);
                while let Some(u) = stack.pop() {
                    for &w in &adj[u] {
                        if !seen[w] {
                            seen[w] = true;
                            stack.push(w);
                        }
                    }
                }
            }
        }
        return Err(MeshError::Disconnected { components });
    }

    // Duplicate faces (same vertex set, any order).
    let mut face_sets: HashMap<[usize; 3], u32> = HashMap::new();
    for f in &mesh.faces {
        let mut key = *f;
        key.sort_unstable();
        *face_sets.entry(key).or_insert(0) += 1;
    }
    let duplicate_faces = face_sets.values().filter(|&&c| c > 1).count();

    // Triangle quality: inscribed-circle diameter over longest edge.
    let mut min_quality = f64::INFINITY;
    let mut warnings = Vec::new();
    if duplicate_faces > 0 {
        warnings.push(format!("{duplicate_faces} duplicated face(s)"));
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        let [p1, p2, p3] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let l1 = norm(sub(p2, p1));
        let l2 = norm(sub(p3, p2));
        let l3 = norm(sub(p1, p3));
        let s = (l1 + l2 + l3) / 2.0;
        let area2 = (s * (s - l1) * (s - l2) * (s - l3)).max(0.0);
        let area = area2.sqrt();
        let longest = l1.max(l2).max(l3);
        // Inradius r = area / s; quality = 2r / longest edge.
        let quality = if s > 0.0 && longest > 0.0 {
            2.0 * area / (s * longest)
        } else {
            0.0
        };
        if quality < min_quality {
            min_quality = quality;
        }
        if quality < NEEDLE_QUALITY_RATIO {
            warnings.push(format!(
                "face {fi} is needle-thin (quality ratio {quality:.2e})"
            ));
        }
    }

    Ok(MeshDiagnostics {
        vertices: nv,
        faces: mesh.face_count(),
        boundary_edges,
        duplicate_faces,
        min_quality,
        warnings,
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy2(c: [f64; 2], e1: [f64; 3], e2: [f64; 3]) -> [f64; 3] {
    [
        c[0] * e1[0] + c[1] * e2[0],
        c[0] * e1[1] + c[1] * e2[1],
        c[0] * e1[2] + c[1] * e2[2],
    ]
}
