//! Space-time discretization: the staggered time grid, discrete field shapes,
//! the differential and interpolation operators that connect them, weighted
//! inner products, and the boundary cost vector.
//!
//! Time is discretized on `[0,1]` with `N` steps. Scalar potentials and the
//! boundary cost live at the `N+1` *centered* times `j/N`; densities and the
//! time-derivative live at the `N` *staggered* times `(j+1/2)/N`. Spatially,
//! scalars are piecewise linear over vertices (hat functions) while momenta
//! are constant 3-vectors per face. The four combinations give the four field
//! shapes below. All layouts are flat `Vec<f64>`, time-slice major.

use crate::mesh::MeshGeometry;
use crate::mesh::TriMesh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscretizationError {
    #[error("time step count must be at least 1")]
    TooFewTimeSteps,
    #[error("density has {got} values but the mesh has {expected} vertices")]
    WrongLength { expected: usize, got: usize },
    #[error("density contains a non-finite value at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error("density has non-positive total mass {mass:.3e} after clamping and flooring")]
    NonPositiveMass { mass: f64 },
}

/// The uniform time grid on `[0,1]` with `N` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    n: usize,
}

impl TimeGrid {
    pub fn new(n: usize) -> Result<Self, DiscretizationError> {
        if n < 1 {
            return Err(DiscretizationError::TooFewTimeSteps);
        }
        Ok(TimeGrid { n })
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.n
    }

    /// Number of centered time points, `N + 1`.
    pub fn centered_len(&self) -> usize {
        self.n + 1
    }

    /// Number of staggered time points, `N`.
    pub fn staggered_len(&self) -> usize {
        self.n
    }

    /// Centered time `j/N`.
    pub fn centered_time(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    /// Staggered time `(s + 1/2)/N` for internal slice index `s`.
    pub fn staggered_time(&self, s: usize) -> f64 {
        (s as f64 + 0.5) / self.n as f64
    }
}

macro_rules! vertex_field {
    ($(#[$doc:meta])* $name:ident, $len:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub data: Vec<f64>,
            nv: usize,
        }

        impl $name {
            pub fn zeros(grid: TimeGrid, nv: usize) -> Self {
                Self { data: vec![0.0; grid.$len() * nv], nv }
            }

            pub fn from_data(data: Vec<f64>, nv: usize) -> Self {
                assert_eq!(data.len() % nv, 0, "field length must be a multiple of the vertex count");
                Self { data, nv }
            }

            pub fn vertex_count(&self) -> usize {
                self.nv
            }

            pub fn slices(&self) -> usize {
                self.data.len() / self.nv
            }

            pub fn slice(&self, k: usize) -> &[f64] {
                &self.data[k * self.nv..(k + 1) * self.nv]
            }

            pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
                &mut self.data[k * self.nv..(k + 1) * self.nv]
            }

            pub fn at(&self, k: usize, v: usize) -> f64 {
                self.data[k * self.nv + v]
            }

            pub fn at_mut(&mut self, k: usize, v: usize) -> &mut f64 {
                &mut self.data[k * self.nv + v]
            }
        }
    };
}

macro_rules! face_vec_field {
    ($(#[$doc:meta])* $name:ident, $len:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub data: Vec<f64>,
            nf: usize,
        }

        impl $name {
            pub fn zeros(grid: TimeGrid, nf: usize) -> Self {
                Self { data: vec![0.0; grid.$len() * nf * 3], nf }
            }

            pub fn from_data(data: Vec<f64>, nf: usize) -> Self {
                assert_eq!(data.len() % (nf * 3), 0, "field length must be a multiple of 3·faces");
                Self { data, nf }
            }

            pub fn face_count(&self) -> usize {
                self.nf
            }

            pub fn slices(&self) -> usize {
                self.data.len() / (self.nf * 3)
            }

            /// All components of time slice `k`, laid out `[f0x f0y f0z f1x ...]`.
            pub fn slice(&self, k: usize) -> &[f64] {
                &self.data[k * self.nf * 3..(k + 1) * self.nf * 3]
            }

            pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
                &mut self.data[k * self.nf * 3..(k + 1) * self.nf * 3]
            }

            pub fn at(&self, k: usize, f: usize) -> [f64; 3] {
                let base = (k * self.nf + f) * 3;
                [self.data[base], self.data[base + 1], self.data[base + 2]]
            }
        }
    };
}

vertex_field! {
    /// Scalar per vertex at each of the `N+1` centered times (potentials, cost).
    CenteredVertexField, centered_len
}
vertex_field! {
    /// Scalar per vertex at each of the `N` staggered times (densities).
    StaggeredVertexField, staggered_len
}
face_vec_field! {
    /// 3-vector per face at each of the `N+1` centered times (momenta).
    CenteredFaceVecField, centered_len
}
face_vec_field! {
    /// 3-vector per face at each of the `N` staggered times (momentum copies).
    StaggeredFaceVecField, staggered_len
}

/// Access shared by the two vertex-field shapes, for inner products.
pub trait VertexField {
    fn nv(&self) -> usize;
    fn values(&self) -> &[f64];
}

impl VertexField for CenteredVertexField {
    fn nv(&self) -> usize {
        self.nv
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl VertexField for StaggeredVertexField {
    fn nv(&self) -> usize {
        self.nv
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Access shared by the two face-field shapes, for inner products.
pub trait FaceVecField {
    fn nf(&self) -> usize;
    fn values(&self) -> &[f64];
}

impl FaceVecField for CenteredFaceVecField {
    fn nf(&self) -> usize {
        self.nf
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl FaceVecField for StaggeredFaceVecField {
    fn nf(&self) -> usize {
        self.nf
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// The two boundary densities, normalized to unit discrete mass.
#[derive(Debug, Clone)]
pub struct DensityPair {
    /// Density at t = 0, one value per vertex.
    pub mu0: Vec<f64>,
    /// Density at t = 1, one value per vertex.
    pub mu1: Vec<f64>,
}

/// Diagonal weights of the space-time inner products.
///
/// Every one of the four weighted products uses the same per-slice diagonal —
/// lumped vertex areas for vertex fields, face areas for face fields — scaled
/// by the time step `1/N`; only the number of slices differs between the
/// centered and staggered variants. `wv[v] = |v|/N`, `wf[f] = |f|/N`.
#[derive(Debug, Clone)]
pub struct Weights {
    pub wv: Vec<f64>,
    pub wf: Vec<f64>,
}

impl Weights {
    pub fn new(geom: &MeshGeometry, grid: TimeGrid) -> Self {
        let inv_n = 1.0 / grid.steps() as f64;
        Weights {
            wv: geom.vertex_area.iter().map(|a| a * inv_n).collect(),
            wf: geom.face_area.iter().map(|a| a * inv_n).collect(),
        }
    }

    /// All-ones weights, turning the weighted products into Euclidean ones.
    /// Intended for operator tests.
    pub fn unit(nv: usize, nf: usize) -> Self {
        Weights {
            wv: vec![1.0; nv],
            wf: vec![1.0; nf],
        }
    }
}

/// Weighted space-time inner product of two vertex fields of the same shape:
/// `(1/N) Σ_k Σ_v |v| a_{k,v} b_{k,v}`.
pub fn inner_tv<F: VertexField>(a: &F, b: &F, w: &Weights) -> f64 {
    let (da, db) = (a.values(), b.values());
    assert_eq!(da.len(), db.len(), "vertex fields must have the same shape");
    let nv = a.nv();
    assert_eq!(nv, w.wv.len(), "weights sized for a different mesh");
    let mut total = 0.0;
    for (ka, kb) in da.chunks_exact(nv).zip(db.chunks_exact(nv)) {
        let mut s = 0.0;
        for v in 0..nv {
            s += w.wv[v] * ka[v] * kb[v];
        }
        total += s;
    }
    total
}

/// Weighted space-time inner product of two face vector fields of the same
/// shape: `(1/N) Σ_k Σ_f |f| a_{k,f}ᵀ b_{k,f}`.
pub fn inner_tt<F: FaceVecField>(a: &F, b: &F, w: &Weights) -> f64 {
    let (da, db) = (a.values(), b.values());
    assert_eq!(da.len(), db.len(), "face fields must have the same shape");
    let nf = a.nf();
    assert_eq!(nf, w.wf.len(), "weights sized for a different mesh");
    let mut total = 0.0;
    for (ka, kb) in da.chunks_exact(nf * 3).zip(db.chunks_exact(nf * 3)) {
        let mut s = 0.0;
        for f in 0..nf {
            let base = f * 3;
            s += w.wf[f]
                * (ka[base] * kb[base] + ka[base + 1] * kb[base + 1] + ka[base + 2] * kb[base + 2]);
        }
        total += s;
    }
    total
}

/// `√⟨a,a⟩` in the weighted vertex product.
pub fn norm_tv<F: VertexField>(a: &F, w: &Weights) -> f64 {
    inner_tv(a, a, w).sqrt()
}

/// `√⟨a,a⟩` in the weighted face product.
pub fn norm_tt<F: FaceVecField>(a: &F, w: &Weights) -> f64 {
    inner_tt(a, a, w).sqrt()
}

/// Clamps negatives to zero, adds a uniform `mass_floor`, and rescales so the
/// lumped mass `Σ_v |v| μ_v` is exactly 1.
pub fn normalize_density(
    raw: &[f64],
    geom: &MeshGeometry,
    mass_floor: f64,
) -> Result<Vec<f64>, DiscretizationError> {
    if raw.len() != geom.vertex_area.len() {
        return Err(DiscretizationError::WrongLength {
            expected: geom.vertex_area.len(),
            got: raw.len(),
        });
    }
    if let Some(vertex) = raw.iter().position(|x| !x.is_finite()) {
        return Err(DiscretizationError::NonFinite { vertex });
    }
    let mut out: Vec<f64> = raw.iter().map(|&x| x.max(0.0) + mass_floor).collect();
    let mass: f64 = out
        .iter()
        .zip(&geom.vertex_area)
        .map(|(x, a)| x * a)
        .sum();
    if !(mass > 0.0) {
        return Err(DiscretizationError::NonPositiveMass { mass });
    }
    for x in &mut out {
        *x /= mass;
    }
    Ok(out)
}

/// Builds the boundary cost vector: `c_{0,v} = N μ0_v`, `c_{N,v} = -N μ1_v`,
/// zero at interior times. Pairing a potential against it in the weighted
/// vertex product gives `Σ_v |v| (φ_{0,v} μ0_v − φ_{N,v} μ1_v)`.
pub fn build_cost(densities: &DensityPair, grid: TimeGrid, nv: usize) -> CenteredVertexField {
    assert_eq!(densities.mu0.len(), nv);
    assert_eq!(densities.mu1.len(), nv);
    let n = grid.steps() as f64;
    let mut c = CenteredVertexField::zeros(grid, nv);
    for v in 0..nv {
        c.data[v] = n * densities.mu0[v];
    }
    let last = grid.steps() * nv;
    for v in 0..nv {
        c.data[last + v] = -n * densities.mu1[v];
    }
    c
}

/// Per-face spatial gradient of one vertex-value slice:
/// `out_f = Σ_{v ∈ f} vals_v ∇h_v`.
pub fn grad_slice(vals: &[f64], mesh: &TriMesh, geom: &MeshGeometry, out: &mut [f64]) {
    let nf = mesh.face_count();
    assert_eq!(out.len(), nf * 3);
    for (fi, f) in mesh.faces.iter().enumerate() {
        let g = &geom.hat_grad[fi];
        let mut acc = [0.0; 3];
        for (local, &v) in f.iter().enumerate() {
            let x = vals[v];
            acc[0] += x * g[local][0];
            acc[1] += x * g[local][1];
            acc[2] += x * g[local][2];
        }
        out[fi * 3] = acc[0];
        out[fi * 3 + 1] = acc[1];
        out[fi * 3 + 2] = acc[2];
    }
}

/// Euclidean transpose of [`grad_slice`]:
/// `out_v = Σ_{f ∋ v} ∇h_v · y_f` (accumulated into `out`).
pub fn grad_transpose_slice_accum(y: &[f64], mesh: &TriMesh, geom: &MeshGeometry, out: &mut [f64]) {
    for (fi, f) in mesh.faces.iter().enumerate() {
        let g = &geom.hat_grad[fi];
        let base = fi * 3;
        for (local, &v) in f.iter().enumerate() {
            out[v] +=
                g[local][0] * y[base] + g[local][1] * y[base + 1] + g[local][2] * y[base + 2];
        }
    }
}

/// The space-time derivative operator: from a centered potential, the time
/// difference `N(φ_{k+1} − φ_k)` at staggered times and the spatial gradient
/// per face at centered times.
pub fn apply_grad(
    phi: &CenteredVertexField,
    mesh: &TriMesh,
    geom: &MeshGeometry,
    grid: TimeGrid,
) -> (StaggeredVertexField, CenteredFaceVecField) {
    let mut a = StaggeredVertexField::zeros(grid, phi.vertex_count());
    let mut b = CenteredFaceVecField::zeros(grid, mesh.face_count());
    apply_grad_into(phi, mesh, geom, grid, &mut a, &mut b);
    (a, b)
}

pub fn apply_grad_into(
    phi: &CenteredVertexField,
    mesh: &TriMesh,
    geom: &MeshGeometry,
    grid: TimeGrid,
    a: &mut StaggeredVertexField,
    b: &mut CenteredFaceVecField,
) {
    let nv = phi.vertex_count();
    let n = grid.steps() as f64;
    for s in 0..grid.staggered_len() {
        let (cur, next) = (phi.slice(s), phi.slice(s + 1));
        let out = a.slice_mut(s);
        for v in 0..nv {
            out[v] = n * (next[v] - cur[v]);
        }
    }
    for j in 0..grid.centered_len() {
        grad_slice(phi.slice(j), mesh, geom, b.slice_mut(j));
    }
}

/// Euclidean transpose of [`apply_grad`], mapping a staggered vertex field and
/// a centered face field back to a centered vertex field.
pub fn apply_grad_transpose(
    a: &StaggeredVertexField,
    b: &CenteredFaceVecField,
    mesh: &TriMesh,
    geom: &MeshGeometry,
    grid: TimeGrid,
) -> CenteredVertexField {
    let mut out = CenteredVertexField::zeros(grid, a.vertex_count());
    apply_grad_transpose_into(a, b, mesh, geom, grid, &mut out);
    out
}

pub fn apply_grad_transpose_into(
    a: &StaggeredVertexField,
    b: &CenteredFaceVecField,
    mesh: &TriMesh,
    geom: &MeshGeometry,
    grid: TimeGrid,
    out: &mut CenteredVertexField,
) {
    let nv = a.vertex_count();
    let n = grid.steps() as f64;
    out.data.fill(0.0);
    for j in 0..grid.centered_len() {
        // Time part: ψ_s contributes −N at slice s and +N at slice s+1.
        {
            let dst = out.slice_mut(j);
            if j < grid.staggered_len() {
                let psi = a.slice(j);
                for v in 0..nv {
                    dst[v] -= n * psi[v];
                }
            }
            if j > 0 {
                let psi = a.slice(j - 1);
                for v in 0..nv {
                    dst[v] += n * psi[v];
                }
            }
        }
        grad_transpose_slice_accum(b.slice(j), mesh, geom, out.slice_mut(j));
    }
}

/// Time interpolation from centered to staggered values (two-point average).
pub fn time_interp(phi: &CenteredVertexField, grid: TimeGrid) -> StaggeredVertexField {
    let nv = phi.vertex_count();
    let mut out = StaggeredVertexField::zeros(grid, nv);
    for s in 0..grid.staggered_len() {
        let (cur, next) = (phi.slice(s), phi.slice(s + 1));
        let dst = out.slice_mut(s);
        for v in 0..nv {
            dst[v] = 0.5 * (cur[v] + next[v]);
        }
    }
    out
}

/// Adjoint of [`time_interp`] in the weighted products (the weights coincide,
/// so this is also the Euclidean transpose): interior centered times average
/// the two neighboring staggered values, the boundary times take half of the
/// single neighbor.
pub fn time_interp_adjoint(psi: &StaggeredVertexField, grid: TimeGrid) -> CenteredVertexField {
    let nv = psi.vertex_count();
    let mut out = CenteredVertexField::zeros(grid, nv);
    for j in 0..grid.centered_len() {
        let dst = out.slice_mut(j);
        if j < grid.staggered_len() {
            let src = psi.slice(j);
            for v in 0..nv {
                dst[v] += 0.5 * src[v];
            }
        }
        if j > 0 {
            let src = psi.slice(j - 1);
            for v in 0..nv {
                dst[v] += 0.5 * src[v];
            }
        }
    }
    out
}

/// Spatial interpolation of one vertex-value slice to per-face scalars (the
/// three-vertex average).
pub fn space_interp_slice(vals: &[f64], mesh: &TriMesh, out: &mut [f64]) {
    for (fi, f) in mesh.faces.iter().enumerate() {
        out[fi] = (vals[f[0]] + vals[f[1]] + vals[f[2]]) / 3.0;
    }
}

/// Adjoint of [`space_interp_slice`] in the area-weighted products:
/// `out_v = (1/(3|v|)) Σ_{f ∋ v} |f| y_f`.
pub fn space_interp_adjoint_slice(y: &[f64], geom: &MeshGeometry, out: &mut [f64]) {
    for (v, star) in geom.star.iter().enumerate() {
        let mut acc = 0.0;
        for &(f, _) in star {
            acc += geom.face_area[f as usize] * y[f as usize];
        }
        out[v] = acc / (3.0 * geom.vertex_area[v]);
    }
}

/// The quadratic transport-cone constraint value per staggered time and
/// vertex: `A + ½ ℒ_t ℒ_s*(‖B‖²)`. Nonpositive entries mean the constraint
/// holds there.
pub fn cone_constraint_value(
    a: &StaggeredVertexField,
    b: &CenteredFaceVecField,
    geom: &MeshGeometry,
    grid: TimeGrid,
) -> StaggeredVertexField {
    let nv = a.vertex_count();
    let nf = b.face_count();
    // ‖B‖² per centered time and face, pushed to vertices slice by slice.
    let mut sq = vec![0.0; nf];
    let mut lifted = CenteredVertexField::zeros(grid, nv);
    for j in 0..grid.centered_len() {
        let bs = b.slice(j);
        for f in 0..nf {
            let base = f * 3;
            sq[f] = bs[base] * bs[base] + bs[base + 1] * bs[base + 1] + bs[base + 2] * bs[base + 2];
        }
        space_interp_adjoint_slice(&sq, geom, lifted.slice_mut(j));
    }
    let averaged = time_interp(&lifted, grid);
    let mut out = a.clone();
    for (o, l) in out.data.iter_mut().zip(&averaged.data) {
        *o += 0.5 * l;
    }
    out
}

/// Compressed sparse row matrix, symmetric pattern stored in full.
#[derive(Debug, Clone)]
pub struct SparseCsr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseCsr {
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.indptr[row]..self.indptr[row + 1] {
                acc += self.values[idx] * x[self.indices[idx]];
            }
            *o = acc;
        }
    }
}

/// Assembles the area-weighted stiffness matrix
/// `L_{uv} = Σ_{f ∋ u,v} |f| ∇h_u · ∇h_v`.
///
/// Symmetric positive semidefinite; on a connected mesh its kernel is exactly
/// the constants.
pub fn assemble_stiffness(mesh: &TriMesh, geom: &MeshGeometry) -> SparseCsr {
    let nv = mesh.vertex_count();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.face_count() * 9);
    for (fi, f) in mesh.faces.iter().enumerate() {
        let g = &geom.hat_grad[fi];
        let area = geom.face_area[fi];
        for i in 0..3 {
            for j in 0..3 {
                let val = area
                    * (g[i][0] * g[j][0] + g[i][1] * g[j][1] + g[i][2] * g[j][2]);
                triplets.push((f[i], f[j], val));
            }
        }
    }
    triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut indptr = Vec::with_capacity(nv + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    let mut row = 0;
    for (r, c, v) in triplets {
        while row < r {
            indptr.push(indices.len());
            row += 1;
        }
        if indices.len() > indptr[row] && *indices.last().unwrap() == c {
            *values.last_mut().unwrap() += v;
        } else {
            indices.push(c);
            values.push(v);
        }
    }
    while row < nv {
        indptr.push(indices.len());
        row += 1;
    }
    debug_assert_eq!(indptr.len(), nv + 1);

    SparseCsr {
        n: nv,
        indptr,
        indices,
        values,
    }
}
