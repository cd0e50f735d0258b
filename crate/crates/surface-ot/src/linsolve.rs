//! Direct linear algebra for the gradient step: the space-time Laplace
//! operator is block-diagonalized by a discrete cosine transform in time,
//! leaving one sparse SPD solve per time mode. Those are handled by an
//! envelope (skyline) Cholesky factorization under a reverse Cuthill–McKee
//! ordering, factored once and reused every iteration.

use crate::discretization::{CenteredVertexField, SparseCsr, TimeGrid};
use crate::mesh::MeshGeometry;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinSolveError {
    /// The matrix lost positive definiteness during factorization; with a
    /// valid mesh this indicates a degenerate geometry upstream.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
}

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
/// Returns `perm` with `perm[new] = old`. Deterministic: ties break by index.
pub fn rcm_order(adj: &SparseCsr) -> Vec<usize> {
    let n = adj.n;
    let degree = |v: usize| adj.indptr[v + 1] - adj.indptr[v];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    let mut nbrs: Vec<usize> = Vec::new();
    loop {
        // Seed each component from a minimum-degree vertex.
        let seed = match (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v))
        {
            Some(v) => v,
            None => break,
        };
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            for idx in adj.indptr[v]..adj.indptr[v + 1] {
                let u = adj.indices[idx] as usize;
                if !visited[u] {
                    visited[u] = true;
                    nbrs.push(u);
                }
            }
            nbrs.sort_by_key(|&u| (degree(u), u));
            queue.extend(nbrs.iter().copied());
        }
    }
    order.reverse();
    order
}

/// Symmetric envelope storage: row `i` holds columns `start[i]..=i`
/// contiguously. After [`factor_in_place`](Skyline::factor_in_place) the
/// values are the Cholesky factor `L` in the same envelope.
#[derive(Debug, Clone)]
pub struct Skyline {
    n: usize,
    start: Vec<u32>,
    rowptr: Vec<usize>,
    vals: Vec<f64>,
}

impl Skyline {
    /// Empty envelope with the given first-column profile.
    pub fn from_profile(start: Vec<u32>) -> Self {
        let n = start.len();
        let mut rowptr = Vec::with_capacity(n + 1);
        rowptr.push(0);
        for (i, &s) in start.iter().enumerate() {
            debug_assert!(s as usize <= i);
            rowptr.push(rowptr[i] + (i - s as usize) + 1);
        }
        let vals = vec![0.0; rowptr[n]];
        Skyline {
            n,
            start,
            rowptr,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.start[i] as usize <= j && j <= i);
        self.rowptr[i] + (j - self.start[i] as usize)
    }

    /// Adds `v` at `(i, j)` with `j ≤ i` inside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.vals[at] += v;
    }

    pub fn reset(&mut self) {
        self.vals.fill(0.0);
    }

    /// Forces `x[i] = rhs[i]` by replacing row and column `i` with the
    /// identity inside the envelope. Used to ground a singular system.
    pub fn pin(&mut self, i: usize) {
        let (lo, hi) = (self.rowptr[i], self.rowptr[i + 1]);
        self.vals[lo..hi].fill(0.0);
        self.vals[hi - 1] = 1.0;
        for r in i + 1..self.n {
            if (self.start[r] as usize) <= i {
                let at = self.idx(r, i);
                self.vals[at] = 0.0;
            }
        }
    }

    /// In-place `L·Lᵀ` factorization within the envelope.
    pub fn factor_in_place(&mut self) -> Result<(), LinSolveError> {
        for i in 0..self.n {
            let si = self.start[i] as usize;
            for j in si..i {
                let sj = self.start[j] as usize;
                let lo = si.max(sj);
                let mut s = self.vals[self.idx(i, j)];
                let ri = self.rowptr[i] + (lo - si);
                let rj = self.rowptr[j] + (lo - sj);
                for k in 0..j - lo {
                    s -= self.vals[ri + k] * self.vals[rj + k];
                }
                self.vals[self.rowptr[i] + (j - si)] = s / self.vals[self.rowptr[j + 1] - 1];
            }
            let mut s = self.vals[self.rowptr[i + 1] - 1];
            for k in self.rowptr[i]..self.rowptr[i + 1] - 1 {
                s -= self.vals[k] * self.vals[k];
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(LinSolveError::NotPositiveDefinite { row: i, pivot: s });
            }
            self.vals[self.rowptr[i + 1] - 1] = s.sqrt();
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place (call only after factoring).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        // Forward: L y = b.
        for i in 0..self.n {
            let si = self.start[i] as usize;
            let row = &self.vals[self.rowptr[i]..self.rowptr[i + 1]];
            let mut s = b[i];
            for (k, &l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * b[si + k];
            }
            b[i] = s / row[row.len() - 1];
        }
        // Backward: Lᵀ x = y, row-oriented saxpy form.
        for i in (0..self.n).rev() {
            let si = self.start[i] as usize;
            let row = &self.vals[self.rowptr[i]..self.rowptr[i + 1]];
            let xi = b[i] / row[row.len() - 1];
            b[i] = xi;
            for (k, &l) in row[..row.len() - 1].iter().enumerate() {
                b[si + k] -= l * xi;
            }
        }
    }
}

/// Time eigenvalues of the second-difference operator with the staggered
/// boundary closure: `4N² sin²(jπ / (2(N+1)))` for mode `j`.
pub fn time_eigenvalues(n_steps: usize) -> Vec<f64> {
    let np1 = n_steps + 1;
    let nn = (n_steps * n_steps) as f64;
    (0..np1)
        .map(|j| {
            let s = (j as f64 * std::f64::consts::PI / (2.0 * np1 as f64)).sin();
            4.0 * nn * s * s
        })
        .collect()
}

/// Orthonormal DCT-II basis: entry `[k][j] = c_j cos((2k+1)jπ / (2(N+1)))`,
/// row-major over `k`, diagonalizing the time operator.
pub fn time_basis(n_steps: usize) -> Vec<f64> {
    let np1 = n_steps + 1;
    let mut q = vec![0.0; np1 * np1];
    let c0 = (1.0 / np1 as f64).sqrt();
    let cj = (2.0 / np1 as f64).sqrt();
    for k in 0..np1 {
        for j in 0..np1 {
            let c = if j == 0 { c0 } else { cj };
            q[k * np1 + j] =
                c * ((2 * k + 1) as f64 * j as f64 * std::f64::consts::PI / (2.0 * np1 as f64))
                    .cos();
        }
    }
    q
}

/// Factored solver for the space-time Poisson operator
/// `φ ↦ (1/N)(Mₜ ⊗ W_V + I ⊗ L) φ` on centered vertex fields, where `Mₜ` is
/// the time second difference, `W_V` the vertex-area diagonal and `L` the
/// stiffness matrix.
///
/// The operator has a one-dimensional kernel (global constants). Solves
/// subtract the incompatible component of the right-hand side, ground the
/// zero mode at one vertex, and return the solution with weighted mean zero,
/// along with the magnitude of the discarded component.
pub struct PhiSolver {
    nv: usize,
    n_steps: usize,
    basis: Vec<f64>,
    factors: Vec<Skyline>,
    /// `perm[new] = old` RCM ordering shared by all mode factors.
    perm: Vec<usize>,
    /// RCM position of the vertex grounding the zero mode.
    pinned: usize,
    stiffness: SparseCsr,
    vertex_area: Vec<f64>,
    total_area: f64,
    mode_rhs: Vec<f64>,
    work: Vec<f64>,
}

impl PhiSolver {
    pub fn new(
        geom: &MeshGeometry,
        stiffness: &SparseCsr,
        grid: TimeGrid,
    ) -> Result<Self, LinSolveError> {
        let nv = stiffness.n;
        let n_steps = grid.steps();
        let perm = rcm_order(stiffness);
        let mut perm_inv = vec![0usize; nv];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }
        // Envelope profile of the permuted stiffness pattern.
        let mut start: Vec<u32> = (0..nv as u32).collect();
        for (new, &old) in perm.iter().enumerate() {
            for idx in stiffness.indptr[old]..stiffness.indptr[old + 1] {
                let nj = perm_inv[stiffness.indices[idx] as usize];
                if nj < new {
                    start[new] = start[new].min(nj as u32);
                }
            }
        }
        let template = Skyline::from_profile(start);
        let lambda = time_eigenvalues(n_steps);
        let pinned = perm_inv[0];
        let mut factors = Vec::with_capacity(lambda.len());
        for (j, &lam) in lambda.iter().enumerate() {
            let mut m = template.clone();
            for (new, &old) in perm.iter().enumerate() {
                for idx in stiffness.indptr[old]..stiffness.indptr[old + 1] {
                    let nj = perm_inv[stiffness.indices[idx] as usize];
                    if nj <= new {
                        m.add(new, nj, stiffness.values[idx]);
                    }
                }
                m.add(new, new, lam * geom.vertex_area[old]);
            }
            if j == 0 {
                m.pin(pinned);
            }
            m.factor_in_place()?;
            factors.push(m);
        }
        Ok(PhiSolver {
            nv,
            n_steps,
            basis: time_basis(n_steps),
            factors,
            perm,
            pinned,
            stiffness: stiffness.clone(),
            vertex_area: geom.vertex_area.clone(),
            total_area: geom.total_area,
            mode_rhs: vec![0.0; (n_steps + 1) * nv],
            work: vec![0.0; nv],
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.nv
    }

    /// Applies the forward operator (for residual checks and tests).
    pub fn apply(&self, phi: &CenteredVertexField) -> CenteredVertexField {
        let np1 = self.n_steps + 1;
        let nn = (self.n_steps * self.n_steps) as f64;
        let inv_n = 1.0 / self.n_steps as f64;
        let mut out = CenteredVertexField::zeros(TimeGrid::new(self.n_steps).unwrap(), self.nv);
        for k in 0..np1 {
            // Time second difference with one-sided ends.
            let cur = phi.slice(k);
            let prev = if k > 0 { Some(phi.slice(k - 1)) } else { None };
            let next = if k + 1 < np1 { Some(phi.slice(k + 1)) } else { None };
            let dst = out.slice_mut(k);
            for v in 0..self.nv {
                let mut t = match (prev, next) {
                    (Some(p), Some(nx)) => 2.0 * cur[v] - p[v] - nx[v],
                    (Some(p), None) => cur[v] - p[v],
                    (None, Some(nx)) => cur[v] - nx[v],
                    (None, None) => unreachable!("grid has at least two slices"),
                };
                t *= nn * self.vertex_area[v];
                dst[v] = t * inv_n;
            }
            let mut lphi = vec![0.0; self.nv];
            self.stiffness.mul_vec(cur, &mut lphi);
            for v in 0..self.nv {
                dst[v] += lphi[v] * inv_n;
            }
        }
        out
    }

    /// Solves the operator against `rhs`, writing a weighted-mean-zero
    /// solution into `out`. Returns the magnitude of the constant component
    /// removed from the right-hand side to make it compatible.
    pub fn solve_into(&mut self, rhs: &CenteredVertexField, out: &mut CenteredVertexField) -> f64 {
        let np1 = self.n_steps + 1;
        let nv = self.nv;
        debug_assert_eq!(rhs.vertex_count(), nv);
        // Forward time transform, folding in the 1/N normalization of the
        // operator (solve N·(rhs) against Mₜ⊗W_V + I⊗L).
        let nf64 = self.n_steps as f64;
        self.mode_rhs.fill(0.0);
        for j in 0..np1 {
            let dst = &mut self.mode_rhs[j * nv..(j + 1) * nv];
            for k in 0..np1 {
                let coeff = self.basis[k * np1 + j] * nf64;
                let src = rhs.slice(k);
                for v in 0..nv {
                    dst[v] += coeff * src[v];
                }
            }
        }
        // The zero mode sees the bare stiffness matrix: remove the component
        // outside its range (constants) and report how much was discarded.
        let sum: f64 = self.mode_rhs[..nv].iter().sum();
        let discarded = sum.abs() / (nv as f64).sqrt();
        let mean = sum / nv as f64;
        for x in &mut self.mode_rhs[..nv] {
            *x -= mean;
        }
        // Per-mode grounded solves in the RCM ordering.
        for j in 0..np1 {
            let rhs_j = &mut self.mode_rhs[j * nv..(j + 1) * nv];
            for (new, &old) in self.perm.iter().enumerate() {
                self.work[new] = rhs_j[old];
            }
            if j == 0 {
                // The grounded row demands a zero right-hand side; with a
                // compatible rhs the dropped equation is linearly dependent.
                self.work[self.pinned] = 0.0;
            }
            self.factors[j].solve_in_place(&mut self.work);
            for (new, &old) in self.perm.iter().enumerate() {
                rhs_j[old] = self.work[new];
            }
        }
        // Inverse time transform.
        for k in 0..np1 {
            let dst = out.slice_mut(k);
            dst.fill(0.0);
            for j in 0..np1 {
                let coeff = self.basis[k * np1 + j];
                let src = &self.mode_rhs[j * nv..(j + 1) * nv];
                for v in 0..nv {
                    dst[v] += coeff * src[v];
                }
            }
        }
        // Normalize the kernel component: weighted mean zero.
        let mut mean = 0.0;
        for k in 0..np1 {
            let s = out.slice(k);
            for v in 0..nv {
                mean += self.vertex_area[v] * s[v];
            }
        }
        mean /= np1 as f64 * self.total_area;
        for x in &mut out.data {
            *x -= mean;
        }
        discarded
    }

    pub fn solve(&mut self, rhs: &CenteredVertexField) -> (CenteredVertexField, f64) {
        let mut out = CenteredVertexField::zeros(TimeGrid::new(self.n_steps).unwrap(), self.nv);
        let discarded = self.solve_into(rhs, &mut out);
        (out, discarded)
    }
}
