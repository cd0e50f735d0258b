//! The conic reformulation: duplicated momentum samples, the decoupled
//! variable `z`, and the per-vertex second-order cones.
//!
//! The transport constraint couples, at each staggered time and vertex, the
//! density slope `A` with the momenta `B` on every incident face at the two
//! neighboring centered times. Duplicating each momentum sample once per
//! incident vertex (three copies per time side, six blocks total) and adding
//! the affine shift `d` makes the constraint a disjoint union of standard
//! second-order cones: one per (staggered time, vertex), tied together only
//! through the linear copy map. Projection onto the cones then splits into
//! independent closed-form projections.
//!
//! Layout: `z` stores one contiguous chunk per staggered time,
//! `[z₁ | z₂¹ … z₂⁶ | z₃]` with `z₁, z₃` per vertex and each `z₂` block a
//! per-face 3-vector. For a density slope `A` and momentum `B`,
//! `z = (1 − A; (√3/3)·B copies; 1 + A)`, where blocks 1–3 sample `B` at the
//! earlier centered time and blocks 4–6 at the later one.

use crate::discretization::{
    CenteredFaceVecField, StaggeredVertexField, TimeGrid, Weights,
};
use crate::mesh::MeshGeometry;

/// `√3 / 3`, the scaling carried by every momentum copy.
pub const COPY_SCALE: f64 = 0.577_350_269_189_625_8;

/// A vector in the decoupled space: per staggered time, scalars `z₁, z₃` per
/// vertex and six per-face 3-vector blocks `z₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledVec {
    pub data: Vec<f64>,
    nv: usize,
    nf: usize,
    n: usize,
}

impl DecoupledVec {
    pub fn zeros(grid: TimeGrid, nv: usize, nf: usize) -> Self {
        let chunk = 2 * nv + 18 * nf;
        DecoupledVec {
            data: vec![0.0; grid.staggered_len() * chunk],
            nv,
            nf,
            n: grid.staggered_len(),
        }
    }

    /// The affine shift `d`: ones in `z₁` and `z₃`, zeros in the copy blocks.
    pub fn shift_d(grid: TimeGrid, nv: usize, nf: usize) -> Self {
        let mut d = Self::zeros(grid, nv, nf);
        for k in 0..d.n {
            d.z1_mut(k).fill(1.0);
            d.z3_mut(k).fill(1.0);
        }
        d
    }

    pub fn vertex_count(&self) -> usize {
        self.nv
    }

    pub fn face_count(&self) -> usize {
        self.nf
    }

    /// Number of staggered time slices.
    pub fn slices(&self) -> usize {
        self.n
    }

    /// Length of one time chunk, `2·nv + 18·nf`.
    pub fn chunk_len(&self) -> usize {
        2 * self.nv + 18 * self.nf
    }

    pub fn z1(&self, k: usize) -> &[f64] {
        let base = k * self.chunk_len();
        &self.data[base..base + self.nv]
    }

    pub fn z1_mut(&mut self, k: usize) -> &mut [f64] {
        let base = k * self.chunk_len();
        &mut self.data[base..base + self.nv]
    }

    /// Copy block `b ∈ 0..6` at slice `k`, laid out like a face-vector slice.
    pub fn z2(&self, k: usize, b: usize) -> &[f64] {
        debug_assert!(b < 6);
        let base = k * self.chunk_len() + self.nv + b * 3 * self.nf;
        &self.data[base..base + 3 * self.nf]
    }

    pub fn z2_mut(&mut self, k: usize, b: usize) -> &mut [f64] {
        debug_assert!(b < 6);
        let base = k * self.chunk_len() + self.nv + b * 3 * self.nf;
        &mut self.data[base..base + 3 * self.nf]
    }

    pub fn z3(&self, k: usize) -> &[f64] {
        let base = k * self.chunk_len() + self.nv + 18 * self.nf;
        &self.data[base..base + self.nv]
    }

    pub fn z3_mut(&mut self, k: usize) -> &mut [f64] {
        let base = k * self.chunk_len() + self.nv + 18 * self.nf;
        &mut self.data[base..base + self.nv]
    }
}

/// Weighted norm on the decoupled space: vertex-area weights on `z₁`/`z₃`,
/// face-area weights on every copy block, all scaled by the time step.
pub fn norm_z(x: &DecoupledVec, w: &Weights) -> f64 {
    let mut total = 0.0;
    for k in 0..x.slices() {
        let mut s = 0.0;
        for (v, &z) in x.z1(k).iter().enumerate() {
            s += w.wv[v] * z * z;
        }
        for b in 0..6 {
            let blk = x.z2(k, b);
            for f in 0..x.face_count() {
                let base = f * 3;
                s += w.wf[f]
                    * (blk[base] * blk[base]
                        + blk[base + 1] * blk[base + 1]
                        + blk[base + 2] * blk[base + 2]);
            }
        }
        for (v, &z) in x.z3(k).iter().enumerate() {
            s += w.wv[v] * z * z;
        }
        total += s;
    }
    total.sqrt()
}

/// Applies the copy-and-shift map: `z = (1 − A; √3/3 · B copies; 1 + A)`.
///
/// Blocks 1–3 carry `B` at the earlier centered time of each staggered slice,
/// blocks 4–6 at the later one; the three blocks per side are identical in
/// value and differ only in which cone gathers them.
pub fn apply_copy(
    a: &StaggeredVertexField,
    b: &CenteredFaceVecField,
    grid: TimeGrid,
) -> DecoupledVec {
    let mut z = DecoupledVec::zeros(grid, a.vertex_count(), b.face_count());
    apply_copy_into(a, b, &mut z);
    z
}

pub fn apply_copy_into(a: &StaggeredVertexField, b: &CenteredFaceVecField, z: &mut DecoupledVec) {
    let nv = a.vertex_count();
    debug_assert_eq!(z.vertex_count(), nv);
    debug_assert_eq!(z.face_count(), b.face_count());
    for k in 0..z.slices() {
        {
            let (z1, av) = (z.z1_mut(k), a.slice(k));
            for v in 0..nv {
                z1[v] = 1.0 - av[v];
            }
        }
        for side in 0..2 {
            let src = b.slice(k + side);
            for blk in 0..3 {
                let dst = z.z2_mut(k, side * 3 + blk);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = COPY_SCALE * s;
                }
            }
        }
        {
            let (z3, av) = (z.z3_mut(k), a.slice(k));
            for v in 0..nv {
                z3[v] = 1.0 + av[v];
            }
        }
    }
}

/// Adjoint of the linear part of [`apply_copy`] against the weighted
/// decoupled product: returns `ℱᵀℬᵀ(W_z ζ)` as plain (Euclidean) components
/// over the density-slope and momentum spaces.
pub fn apply_copy_adjoint(
    zeta: &DecoupledVec,
    w: &Weights,
    grid: TimeGrid,
) -> (StaggeredVertexField, CenteredFaceVecField) {
    let (nv, nf) = (zeta.vertex_count(), zeta.face_count());
    let mut a = StaggeredVertexField::zeros(grid, nv);
    let mut b = CenteredFaceVecField::zeros(grid, nf);
    apply_copy_adjoint_into(zeta, w, &mut a, &mut b);
    (a, b)
}

pub fn apply_copy_adjoint_into(
    zeta: &DecoupledVec,
    w: &Weights,
    a: &mut StaggeredVertexField,
    b: &mut CenteredFaceVecField,
) {
    let (nv, nf) = (zeta.vertex_count(), zeta.face_count());
    let n = zeta.slices();
    // Slope part: −W ζ₁ + W ζ₃ per staggered slice.
    for k in 0..n {
        let (z1, z3) = (zeta.z1(k), zeta.z3(k));
        let dst = a.slice_mut(k);
        for v in 0..nv {
            dst[v] = w.wv[v] * (z3[v] - z1[v]);
        }
    }
    // Momentum part: each copy block contributes back to the centered time it
    // sampled, with the same √3/3 factor and the face weight.
    b.data.fill(0.0);
    for k in 0..n {
        for side in 0..2 {
            let j = k + side; // centered time this side sampled
            let dst = b.slice_mut(j);
            for blk in 0..3 {
                let src = zeta.z2(k, side * 3 + blk);
                for f in 0..nf {
                    let wf = COPY_SCALE * w.wf[f];
                    let base = f * 3;
                    dst[base] += wf * src[base];
                    dst[base + 1] += wf * src[base + 1];
                    dst[base + 2] += wf * src[base + 2];
                }
            }
        }
    }
}

/// Diagonal of the q-subproblem coefficient operator,
/// `Diag(W_{st,V}, W_{c,T}) + ℱᵀℬᵀ W_z ℬℱ`, materialized per coordinate.
///
/// The slope block is `3·wv[v]` at every staggered time. The momentum block is
/// `m_j · wf[f]` with `m_j = 2` at the two boundary centered times (sampled by
/// one staggered slice) and `3` in the interior (sampled by two).
#[derive(Debug, Clone)]
pub struct QCoeffDiag {
    /// Per staggered (time, vertex), aligned with `StaggeredVertexField`.
    pub a: Vec<f64>,
    /// Per centered (time, face, component), aligned with `CenteredFaceVecField`.
    pub b: Vec<f64>,
}

pub fn qcoeff_diagonal(w: &Weights, grid: TimeGrid) -> QCoeffDiag {
    let (nv, nf) = (w.wv.len(), w.wf.len());
    let mut a = Vec::with_capacity(grid.staggered_len() * nv);
    for _ in 0..grid.staggered_len() {
        a.extend(w.wv.iter().map(|&x| 3.0 * x));
    }
    let mut b = Vec::with_capacity(grid.centered_len() * nf * 3);
    for j in 0..grid.centered_len() {
        let m = if j == 0 || j == grid.steps() { 2.0 } else { 3.0 };
        for f in 0..nf {
            let val = m * w.wf[f];
            b.extend_from_slice(&[val, val, val]);
        }
    }
    QCoeffDiag { a, b }
}

/// Precomputed gather indices and scales for the per-(time, vertex) cones.
///
/// Within one time chunk, the cone of vertex `v` gathers its `z₁` entry
/// (scale 1, the cone head), then for each incident face one 3-vector from
/// the copy block matching `v`'s local index on that face — scale
/// `√(|f|/|v|)` — for both time sides, and finally its `z₃` entry (scale 1).
/// The gathered coordinates tile the chunk exactly: the map is a permutation
/// followed by a positive diagonal.
#[derive(Debug, Clone)]
pub struct ConeLayout {
    nv: usize,
    nf: usize,
    n: usize,
    /// Chunk-local source offset for each gathered position, a permutation of
    /// `0..chunk_len`.
    pub src: Vec<u32>,
    /// Diagonal scale for each gathered position.
    pub scale: Vec<f64>,
    /// Prefix offsets of each vertex's cone within a chunk (`nv + 1` entries).
    pub cone_start: Vec<u32>,
}

impl ConeLayout {
    pub fn new(geom: &MeshGeometry, grid: TimeGrid) -> Self {
        let nv = geom.vertex_area.len();
        let nf = geom.face_area.len();
        let chunk = 2 * nv + 18 * nf;
        let mut src = Vec::with_capacity(chunk);
        let mut scale = Vec::with_capacity(chunk);
        let mut cone_start = Vec::with_capacity(nv + 1);
        for (v, star) in geom.star.iter().enumerate() {
            cone_start.push(src.len() as u32);
            src.push(v as u32);
            scale.push(1.0);
            for side in 0..2usize {
                for &(f, local) in star {
                    let f = f as usize;
                    let s = (geom.face_area[f] / geom.vertex_area[v]).sqrt();
                    let block = side * 3 + local as usize;
                    let base = (nv + block * 3 * nf + f * 3) as u32;
                    for c in 0..3 {
                        src.push(base + c);
                        scale.push(s);
                    }
                }
            }
            src.push((nv + 18 * nf + v) as u32);
            scale.push(1.0);
        }
        cone_start.push(src.len() as u32);
        assert_eq!(src.len(), chunk, "cones must tile the chunk exactly");
        // Permutation check: every chunk coordinate gathered exactly once.
        let mut seen = vec![false; chunk];
        for &s in &src {
            assert!(!seen[s as usize], "coordinate {s} gathered twice");
            seen[s as usize] = true;
        }

        ConeLayout {
            nv,
            nf,
            n: grid.staggered_len(),
            src,
            scale,
            cone_start,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.nv
    }

    pub fn face_count(&self) -> usize {
        self.nf
    }

    pub fn slices(&self) -> usize {
        self.n
    }

    pub fn chunk_len(&self) -> usize {
        2 * self.nv + 18 * self.nf
    }

    /// Dimension of the cone of vertex `v` (time-independent).
    pub fn cone_dim(&self, v: usize) -> usize {
        (self.cone_start[v + 1] - self.cone_start[v]) as usize
    }

    /// Range of the cone of `(slice k, vertex v)` in a gathered vector.
    pub fn cone_range(&self, k: usize, v: usize) -> std::ops::Range<usize> {
        let base = k * self.chunk_len();
        base + self.cone_start[v] as usize..base + self.cone_start[v + 1] as usize
    }

    /// Applies the scaled permutation: per-cone vectors, concatenated.
    pub fn gather(&self, z: &DecoupledVec) -> Vec<f64> {
        debug_assert_eq!(z.vertex_count(), self.nv);
        debug_assert_eq!(z.face_count(), self.nf);
        let chunk = self.chunk_len();
        let mut out = vec![0.0; z.data.len()];
        for k in 0..z.slices() {
            let zc = &z.data[k * chunk..(k + 1) * chunk];
            let oc = &mut out[k * chunk..(k + 1) * chunk];
            for e in 0..chunk {
                oc[e] = zc[self.src[e] as usize] * self.scale[e];
            }
        }
        out
    }

    /// Inverse of [`gather`].
    pub fn scatter(&self, y: &[f64], grid: TimeGrid) -> DecoupledVec {
        let mut z = DecoupledVec::zeros(grid, self.nv, self.nf);
        assert_eq!(y.len(), z.data.len());
        let chunk = self.chunk_len();
        for k in 0..self.n {
            let yc = &y[k * chunk..(k + 1) * chunk];
            let zc = &mut z.data[k * chunk..(k + 1) * chunk];
            for e in 0..chunk {
                zc[self.src[e] as usize] = yc[e] / self.scale[e];
            }
        }
        z
    }

    /// Projects every per-(time, vertex) cone of `x` in place, with the
    /// gather scaling applied on the fly.
    ///
    /// Equivalent to gather → [`soc_project`] per cone → scatter, but without
    /// materializing the gathered vector: the untouched branches keep their
    /// coordinates bit-identical, and the contracting branch multiplies
    /// coordinates by the contraction factor directly (the gather and scatter
    /// scales cancel).
    pub fn project_all(&self, x: &mut DecoupledVec) {
        let chunk = self.chunk_len();
        for k in 0..self.n {
            let zc = &mut x.data[k * chunk..(k + 1) * chunk];
            for v in 0..self.nv {
                let lo = self.cone_start[v] as usize;
                let hi = self.cone_start[v + 1] as usize;
                let head_idx = self.src[lo] as usize;
                let head = zc[head_idx];
                let mut tail2 = 0.0;
                for e in lo + 1..hi {
                    let y = zc[self.src[e] as usize] * self.scale[e];
                    tail2 += y * y;
                }
                let tail = tail2.sqrt();
                if tail <= head {
                    // Already in the cone.
                } else if tail <= -head {
                    // In the polar cone: project to the origin.
                    for e in lo..hi {
                        zc[self.src[e] as usize] = 0.0;
                    }
                } else {
                    let t = 0.5 * (head + tail);
                    let c = t / tail;
                    zc[head_idx] = t;
                    for e in lo + 1..hi {
                        zc[self.src[e] as usize] *= c;
                    }
                }
            }
        }
    }

    /// Whether each per-(time, vertex) cone constraint holds for the decoupled
    /// image of `(A, B)`, i.e. head ≥ ‖tail‖ with the gather scaling.
    pub fn cone_feasibility(
        &self,
        a: &StaggeredVertexField,
        b: &CenteredFaceVecField,
        grid: TimeGrid,
    ) -> Vec<bool> {
        let z = apply_copy(a, b, grid);
        let chunk = self.chunk_len();
        let mut out = Vec::with_capacity(self.n * self.nv);
        for k in 0..self.n {
            let zc = &z.data[k * chunk..(k + 1) * chunk];
            for v in 0..self.nv {
                let lo = self.cone_start[v] as usize;
                let hi = self.cone_start[v + 1] as usize;
                let head = zc[self.src[lo] as usize];
                let mut tail2 = 0.0;
                for e in lo + 1..hi {
                    let y = zc[self.src[e] as usize] * self.scale[e];
                    tail2 += y * y;
                }
                out.push(head >= 0.0 && tail2.sqrt() <= head);
            }
        }
        out
    }
}

/// Projects one vector onto the second-order cone `{(y₀, ȳ) : ‖ȳ‖ ≤ y₀}`
/// in place. The first entry is the cone head.
pub fn soc_project(y: &mut [f64]) {
    let (head, tail) = y.split_first_mut().expect("cone vector cannot be empty");
    let tail_norm = tail.iter().map(|x| x * x).sum::<f64>().sqrt();
    if tail_norm <= *head {
        // Inside: unchanged.
    } else if tail_norm <= -*head {
        // Inside the polar cone: the projection is the origin.
        *head = 0.0;
        tail.fill(0.0);
    } else {
        let t = 0.5 * (*head + tail_norm);
        let c = t / tail_norm;
        *head = t;
        for x in tail {
            *x *= c;
        }
    }
}
