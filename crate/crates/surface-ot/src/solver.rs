//! The inexact augmented Lagrangian solver for the conic reformulation of
//! dynamic optimal transport.
//!
//! One iteration sweeps four blocks in order: the space-time potential `φ`
//! (a factored Poisson solve), the decoupled cone variable `z` (closed-form
//! projections), the flux pair `q = (A, B)` (a diagonal solve, optionally
//! joint with the congestion slack), and a relaxed ascent step on the
//! multipliers `(α, β)`. The multiplier `α₁` converges to the transported
//! density and `α₂` to its momentum.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::discretization::{
    apply_grad_into, apply_grad_transpose_into, build_cost, cone_constraint_value, inner_tt,
    inner_tv, norm_tt, norm_tv, space_interp_slice, time_interp_adjoint, CenteredFaceVecField,
    CenteredVertexField, DensityPair, SparseCsr, StaggeredVertexField, TimeGrid, Weights,
};
use crate::discretization::assemble_stiffness;
use crate::linsolve::{LinSolveError, PhiSolver};
use crate::mesh::{MeshGeometry, TriMesh};
use crate::socp::{
    apply_copy_adjoint_into, apply_copy_into, norm_z, ConeLayout, DecoupledVec, COPY_SCALE,
};

const SIGMA_MIN: f64 = 1e-6;
const SIGMA_MAX: f64 = 1e6;
const SIGMA_GROWTH: f64 = 2.0;
const SIGMA_RATIO_TRIGGER: f64 = 5.0;
const DIVERGENCE_CEILING: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("relaxation parameter must lie strictly between 0 and 2, got {0}")]
    InvalidRelaxation(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("congestion parameter must be nonnegative, got {0}")]
    InvalidCongestion(f64),
    #[error("initial penalty must be positive and finite, got {0}")]
    InvalidPenalty(f64),
    #[error("residual check interval must be at least 1")]
    InvalidCheckInterval,
    #[error("iteration budget must be at least 1")]
    InvalidIterationBudget,
    #[error(transparent)]
    Factorization(#[from] LinSolveError),
    #[error("starting state does not match the problem: {0}")]
    ShapeMismatch(String),
}

/// A fully assembled transport problem: mesh, geometry, time grid, both end
/// densities (normalized to unit mass) and everything derived from them.
pub struct Problem {
    pub mesh: TriMesh,
    pub geom: MeshGeometry,
    pub grid: TimeGrid,
    pub weights: Weights,
    pub layout: ConeLayout,
    pub stiffness: SparseCsr,
    pub densities: DensityPair,
    /// Linear objective: the end densities pinned at the time boundaries.
    pub cost: CenteredVertexField,
    /// Mean face area, the absolute floor in every relative residual.
    pub resid_scale: f64,
    /// Norm of the cone shift in the decoupled space, `√(2·area)`.
    pub shift_norm: f64,
    cost_norm: f64,
}

impl Problem {
    /// `densities` must already be normalized to unit mass against `geom`.
    pub fn new(mesh: TriMesh, geom: MeshGeometry, densities: DensityPair, grid: TimeGrid) -> Self {
        let weights = Weights::new(&geom, grid);
        let layout = ConeLayout::new(&geom, grid);
        let stiffness = assemble_stiffness(&mesh, &geom);
        let cost = build_cost(&densities, grid, mesh.vertex_count());
        let resid_scale = geom.total_area / mesh.face_count() as f64;
        let shift_norm = (2.0 * geom.total_area).sqrt();
        let cost_norm = norm_tv(&cost, &weights);
        Problem {
            mesh,
            geom,
            grid,
            weights,
            layout,
            stiffness,
            densities,
            cost,
            resid_scale,
            shift_norm,
            cost_norm,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }
}

/// Solver parameters. Defaults follow the reference configuration; all runs
/// are deterministic for fixed parameters.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    /// Stop when the largest relative optimality residual drops below this.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_seconds: f64,
    /// Multiplier step length τ ∈ (0, 2).
    pub relaxation: f64,
    /// Initial penalty σ.
    pub sigma0: f64,
    /// Congestion strength θ; zero disables the congestion term entirely.
    pub congestion: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// The penalty is rebalanced at multiples of this iteration count.
    pub sigma_update_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-4,
            max_iterations: 50_000,
            max_seconds: 36_000.0,
            relaxation: 1.9,
            sigma0: 1.0,
            congestion: 0.0,
            check_every: 10,
            sigma_update_every: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(SolverError::InvalidRelaxation(self.relaxation));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SolverError::InvalidTolerance(self.tol));
        }
        if !(self.congestion >= 0.0 && self.congestion.is_finite()) {
            return Err(SolverError::InvalidCongestion(self.congestion));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(SolverError::InvalidPenalty(self.sigma0));
        }
        if self.check_every == 0 || self.sigma_update_every == 0 {
            return Err(SolverError::InvalidCheckInterval);
        }
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidIterationBudget);
        }
        Ok(())
    }
}

/// The full iterate. `e` is present exactly when congestion is enabled.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub phi: CenteredVertexField,
    pub a: StaggeredVertexField,
    pub b: CenteredFaceVecField,
    pub e: Option<StaggeredVertexField>,
    pub z: DecoupledVec,
    pub alpha1: StaggeredVertexField,
    pub alpha2: CenteredFaceVecField,
    pub beta: DecoupledVec,
    pub sigma: f64,
}

impl SolverState {
    pub fn cold(prob: &Problem, cfg: &SolverConfig) -> Self {
        let (nv, nf, grid) = (prob.vertex_count(), prob.face_count(), prob.grid);
        SolverState {
            phi: CenteredVertexField::zeros(grid, nv),
            a: StaggeredVertexField::zeros(grid, nv),
            b: CenteredFaceVecField::zeros(grid, nf),
            e: (cfg.congestion > 0.0).then(|| StaggeredVertexField::zeros(grid, nv)),
            z: DecoupledVec::zeros(grid, nv, nf),
            alpha1: StaggeredVertexField::zeros(grid, nv),
            alpha2: CenteredFaceVecField::zeros(grid, nf),
            beta: DecoupledVec::zeros(grid, nv, nf),
            sigma: cfg.sigma0,
        }
    }
}

/// Relative optimality residuals. All are normalized by problem scale; the
/// stopping criterion is `eta_max`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    /// Continuity: how far the potential gradient is from the flux.
    pub eta_d: f64,
    /// Stationarity: how far the multipliers are from annihilating the cost.
    pub eta_p: f64,
    /// Density positivity and its complementarity with the cone constraint.
    pub eta_proj: f64,
    /// Momentum consistency: `α₂` against the density-weighted flux.
    pub eta_s: f64,
    /// Congestion slack consistency (present only with congestion).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_e: Option<f64>,
    /// The stopping quantity: the largest of the above.
    pub eta_max: f64,
    /// Primal residual of the conic form (drives penalty rebalancing).
    pub eta_p_soc: f64,
    /// Dual residual of the conic form.
    pub eta_d_soc: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub sigma: f64,
    #[serde(flatten)]
    pub residuals: Residuals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationLimit,
    TimeLimit,
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub iterations: usize,
    pub elapsed_seconds: f64,
    pub residuals: Residuals,
    pub sigma_final: f64,
    /// Largest kernel-incompatible component removed by the potential solves;
    /// stays at rounding level for consistently assembled problems.
    pub max_discarded: f64,
    pub history: Vec<HistoryEntry>,
}

/// The transported solution read off the converged multipliers.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Density at the staggered times (the interpolating path).
    pub density: StaggeredVertexField,
    /// Momentum at the centered times.
    pub momentum: CenteredFaceVecField,
    pub phi: CenteredVertexField,
    /// Optimal transport value: half the squared geodesic distance.
    pub cost: f64,
    /// `√(2·cost)`: the geodesic (Wasserstein-2) distance.
    pub w2_distance: f64,
    /// Integral of the density at each staggered time (should stay ≈ 1).
    pub mass_per_slice: Vec<f64>,
    pub density_min: f64,
    pub density_max: f64,
}

pub struct IalmSolver<'a> {
    prob: &'a Problem,
    pub cfg: SolverConfig,
    pub state: SolverState,
    phi_solver: PhiSolver,
    /// Largest incompatibility discarded by the potential solves so far.
    pub max_discarded: f64,
    // Reused work buffers.
    ta: StaggeredVertexField,
    tb: CenteredFaceVecField,
    rhs: CenteredVertexField,
    ga: StaggeredVertexField,
    gb: CenteredFaceVecField,
    zwork: DecoupledVec,
    face_vals: Vec<f64>,
    unit_w: Weights,
}

impl<'a> IalmSolver<'a> {
    pub fn new(prob: &'a Problem, cfg: SolverConfig) -> Result<Self, SolverError> {
        let state = SolverState::cold(prob, &cfg);
        Self::with_state(prob, cfg, state)
    }

    /// Starts from a caller-provided iterate (warm start).
    pub fn with_state(
        prob: &'a Problem,
        cfg: SolverConfig,
        state: SolverState,
    ) -> Result<Self, SolverError> {
        cfg.validate()?;
        let (nv, nf, grid) = (prob.vertex_count(), prob.face_count(), prob.grid);
        let shape_err = |what: &str| Err(SolverError::ShapeMismatch(what.to_string()));
        if state.phi.vertex_count() != nv || state.phi.slices() != grid.centered_len() {
            return shape_err("potential field");
        }
        if state.a.vertex_count() != nv
            || state.a.slices() != grid.staggered_len()
            || state.alpha1.vertex_count() != nv
            || state.alpha1.slices() != grid.staggered_len()
        {
            return shape_err("staggered vertex fields");
        }
        if state.b.face_count() != nf
            || state.b.slices() != grid.centered_len()
            || state.alpha2.face_count() != nf
            || state.alpha2.slices() != grid.centered_len()
        {
            return shape_err("momentum fields");
        }
        if state.z.vertex_count() != nv
            || state.z.face_count() != nf
            || state.z.slices() != grid.staggered_len()
            || state.beta.data.len() != state.z.data.len()
        {
            return shape_err("decoupled fields");
        }
        match &state.e {
            Some(e) if cfg.congestion <= 0.0 => {
                let _ = e;
                return shape_err("slack present without congestion");
            }
            None if cfg.congestion > 0.0 => return shape_err("slack missing with congestion"),
            Some(e) if e.vertex_count() != nv || e.slices() != grid.staggered_len() => {
                return shape_err("slack field")
            }
            _ => {}
        }
        if !(state.sigma > 0.0 && state.sigma.is_finite()) {
            return Err(SolverError::InvalidPenalty(state.sigma));
        }
        let phi_solver = PhiSolver::new(&prob.geom, &prob.stiffness, grid)?;
        Ok(IalmSolver {
            prob,
            cfg,
            state,
            phi_solver,
            max_discarded: 0.0,
            ta: StaggeredVertexField::zeros(grid, nv),
            tb: CenteredFaceVecField::zeros(grid, nf),
            rhs: CenteredVertexField::zeros(grid, nv),
            ga: StaggeredVertexField::zeros(grid, nv),
            gb: CenteredFaceVecField::zeros(grid, nf),
            zwork: DecoupledVec::zeros(grid, nv, nf),
            face_vals: vec![0.0; nf],
            unit_w: Weights::unit(nv, nf),
        })
    }

    pub fn problem(&self) -> &Problem {
        self.prob
    }

    /// One full iteration sweep.
    pub fn step(&mut self) {
        let p = self.prob;
        let nv = p.vertex_count();
        let nf = p.face_count();
        let n_st = p.grid.staggered_len();
        let n_ct = p.grid.centered_len();
        let theta = self.cfg.congestion;
        let relaxation = self.cfg.relaxation;
        let SolverState {
            phi,
            a,
            b,
            e,
            z,
            alpha1,
            alpha2,
            beta,
            sigma,
        } = &mut self.state;
        let sigma = *sigma;
        let inv_sigma = 1.0 / sigma;

        // --- Potential block: a weighted Poisson solve in space-time. ---
        for k in 0..n_st {
            let (av, al) = (a.slice(k), alpha1.slice(k));
            let dst = self.ta.slice_mut(k);
            match e.as_ref() {
                Some(e) => {
                    let es = e.slice(k);
                    for v in 0..nv {
                        dst[v] = p.weights.wv[v] * (av[v] + es[v] - al[v] * inv_sigma);
                    }
                }
                None => {
                    for v in 0..nv {
                        dst[v] = p.weights.wv[v] * (av[v] - al[v] * inv_sigma);
                    }
                }
            }
        }
        for j in 0..n_ct {
            let (bv, al) = (b.slice(j), alpha2.slice(j));
            let dst = self.tb.slice_mut(j);
            for f in 0..nf {
                let w = p.weights.wf[f];
                for c in 0..3 {
                    dst[f * 3 + c] = w * (bv[f * 3 + c] - al[f * 3 + c] * inv_sigma);
                }
            }
        }
        apply_grad_transpose_into(&self.ta, &self.tb, &p.mesh, &p.geom, p.grid, &mut self.rhs);
        for j in 0..n_ct {
            let cs = p.cost.slice(j);
            let dst = self.rhs.slice_mut(j);
            for v in 0..nv {
                dst[v] -= p.weights.wv[v] * cs[v] * inv_sigma;
            }
        }
        let discarded = self.phi_solver.solve_into(&self.rhs, phi);
        if discarded > self.max_discarded {
            self.max_discarded = discarded;
        }
        apply_grad_into(phi, &p.mesh, &p.geom, p.grid, &mut self.ga, &mut self.gb);

        // --- Cone block: project the shifted copy of the previous flux. ---
        apply_copy_into(a, b, z);
        for (zv, bv) in z.data.iter_mut().zip(&beta.data) {
            *zv -= bv * inv_sigma;
        }
        p.layout.project_all(z);

        // --- Flux block: diagonal solve against the new potential and cones. ---
        if let Some(e) = e.as_mut() {
            // Joint 2×2 solve for (A, e) per entry; the slack carries a
            // 1/(2θ)·‖e‖² objective term.
            let det = 3.0 * sigma / theta + 2.0 * sigma * sigma;
            let kappa = 1.0 / theta + sigma;
            for k in 0..n_st {
                let (z1, z3) = (z.z1(k), z.z3(k));
                let (b1, b3) = (beta.z1(k), beta.z3(k));
                let (gav, al) = (self.ga.slice(k), alpha1.slice(k));
                let adst = a.slice_mut(k);
                let edst = e.slice_mut(k);
                for v in 0..nv {
                    let r1 = al[v] + sigma * gav[v] - b1[v] + b3[v] + sigma * (z3[v] - z1[v]);
                    let r2 = al[v] + sigma * gav[v];
                    adst[v] = (kappa * r1 - sigma * r2) / det;
                    edst[v] = (3.0 * sigma * r2 - sigma * r1) / det;
                }
            }
        } else {
            for k in 0..n_st {
                let (z1, z3) = (z.z1(k), z.z3(k));
                let (b1, b3) = (beta.z1(k), beta.z3(k));
                let (gav, al) = (self.ga.slice(k), alpha1.slice(k));
                let adst = a.slice_mut(k);
                for v in 0..nv {
                    adst[v] = (gav[v] + al[v] * inv_sigma - z1[v] - b1[v] * inv_sigma
                        + z3[v]
                        + b3[v] * inv_sigma)
                        / 3.0;
                }
            }
        }
        for j in 0..n_ct {
            let m = if j == 0 || j == p.grid.steps() { 2.0 } else { 3.0 };
            let (gbv, al) = (self.gb.slice(j), alpha2.slice(j));
            let dst = b.slice_mut(j);
            for i in 0..3 * nf {
                dst[i] = gbv[i] + al[i] * inv_sigma;
            }
            if j < n_st {
                for blk in 0..3 {
                    let (zz, bb) = (z.z2(j, blk), beta.z2(j, blk));
                    for i in 0..3 * nf {
                        dst[i] += COPY_SCALE * (zz[i] + bb[i] * inv_sigma);
                    }
                }
            }
            if j > 0 {
                for blk in 3..6 {
                    let (zz, bb) = (z.z2(j - 1, blk), beta.z2(j - 1, blk));
                    for i in 0..3 * nf {
                        dst[i] += COPY_SCALE * (zz[i] + bb[i] * inv_sigma);
                    }
                }
            }
            for x in dst.iter_mut() {
                *x /= m;
            }
        }

        // --- Multiplier ascent with relaxation. ---
        let tstep = relaxation * sigma;
        for k in 0..n_st {
            let (gav, av) = (self.ga.slice(k), a.slice(k));
            let dst = alpha1.slice_mut(k);
            match e.as_ref() {
                Some(e) => {
                    let es = e.slice(k);
                    for v in 0..nv {
                        dst[v] += tstep * (gav[v] - es[v] - av[v]);
                    }
                }
                None => {
                    for v in 0..nv {
                        dst[v] += tstep * (gav[v] - av[v]);
                    }
                }
            }
        }
        for j in 0..n_ct {
            let (gbv, bv) = (self.gb.slice(j), b.slice(j));
            let dst = alpha2.slice_mut(j);
            for i in 0..3 * nf {
                dst[i] += tstep * (gbv[i] - bv[i]);
            }
        }
        for k in 0..n_st {
            {
                let (z1, av) = (z.z1(k), a.slice(k));
                let dst = beta.z1_mut(k);
                for v in 0..nv {
                    dst[v] += tstep * (z1[v] - 1.0 + av[v]);
                }
            }
            {
                let (z3, av) = (z.z3(k), a.slice(k));
                let dst = beta.z3_mut(k);
                for v in 0..nv {
                    dst[v] += tstep * (z3[v] - 1.0 - av[v]);
                }
            }
            for side in 0..2 {
                let bs = b.slice(k + side);
                for blk in 0..3 {
                    let block = side * 3 + blk;
                    let zz = z.z2(k, block);
                    let dst = beta.z2_mut(k, block);
                    for i in 0..3 * nf {
                        dst[i] += tstep * (zz[i] - COPY_SCALE * bs[i]);
                    }
                }
            }
        }
    }

    /// Evaluates all optimality residuals at the current iterate.
    pub fn residuals(&mut self) -> Residuals {
        let p = self.prob;
        let w = &p.weights;
        let nv = p.vertex_count();
        let nf = p.face_count();
        let n_st = p.grid.staggered_len();
        let n_ct = p.grid.centered_len();
        let floor = p.resid_scale;
        let st = &self.state;
        apply_grad_into(&st.phi, &p.mesh, &p.geom, p.grid, &mut self.ga, &mut self.gb);

        // Continuity: ‖∇φ − q − (e; 0)‖ relative to its pieces.
        let mut num2 = 0.0;
        let mut grad2 = 0.0;
        for k in 0..n_st {
            let (gav, av) = (self.ga.slice(k), st.a.slice(k));
            match st.e.as_ref() {
                Some(e) => {
                    let es = e.slice(k);
                    for v in 0..nv {
                        let g = gav[v] - es[v];
                        num2 += w.wv[v] * (g - av[v]) * (g - av[v]);
                        grad2 += w.wv[v] * g * g;
                    }
                }
                None => {
                    for v in 0..nv {
                        let r = gav[v] - av[v];
                        num2 += w.wv[v] * r * r;
                        grad2 += w.wv[v] * gav[v] * gav[v];
                    }
                }
            }
        }
        for j in 0..n_ct {
            let (gbv, bv) = (self.gb.slice(j), st.b.slice(j));
            for f in 0..nf {
                for c in 0..3 {
                    let i = f * 3 + c;
                    let r = gbv[i] - bv[i];
                    num2 += w.wf[f] * r * r;
                    grad2 += w.wf[f] * gbv[i] * gbv[i];
                }
            }
        }
        let q_norm =
            (inner_tv(&st.a, &st.a, w) + inner_tt(&st.b, &st.b, w)).sqrt();
        let eta_d = num2.sqrt() / (floor + grad2.sqrt() + q_norm);

        // Stationarity: c + W⁻¹∇ᵀ(W α) should vanish.
        for k in 0..n_st {
            let al = st.alpha1.slice(k);
            let dst = self.ta.slice_mut(k);
            for v in 0..nv {
                dst[v] = w.wv[v] * al[v];
            }
        }
        for j in 0..n_ct {
            let al = st.alpha2.slice(j);
            let dst = self.tb.slice_mut(j);
            for f in 0..nf {
                for c in 0..3 {
                    dst[f * 3 + c] = w.wf[f] * al[f * 3 + c];
                }
            }
        }
        apply_grad_transpose_into(&self.ta, &self.tb, &p.mesh, &p.geom, p.grid, &mut self.rhs);
        let mut num2 = 0.0;
        for j in 0..n_ct {
            let (cs, us) = (p.cost.slice(j), self.rhs.slice(j));
            for v in 0..nv {
                let r = cs[v] + us[v] / w.wv[v];
                num2 += w.wv[v] * r * r;
            }
        }
        let eta_p = num2.sqrt() / (floor + p.cost_norm);

        // Density positivity + complementarity with the transport cone.
        let gap = cone_constraint_value(&st.a, &st.b, &p.geom, p.grid);
        let mut num2 = 0.0;
        for k in 0..n_st {
            let (al, gs) = (st.alpha1.slice(k), gap.slice(k));
            for v in 0..nv {
                let r = al[v] - (al[v] + gs[v]).max(0.0);
                num2 += w.wv[v] * r * r;
            }
        }
        let eta_proj = num2.sqrt()
            / (floor + norm_tv(&st.alpha1, w) + norm_tv(&gap, w));

        // Momentum consistency: α₂ against the density-weighted flux.
        let avg_density = time_interp_adjoint(&st.alpha1, p.grid);
        let mut num2 = 0.0;
        let mut h2 = 0.0;
        for j in 0..n_ct {
            space_interp_slice(avg_density.slice(j), &p.mesh, &mut self.face_vals);
            let (al, bv) = (st.alpha2.slice(j), st.b.slice(j));
            for f in 0..nf {
                for c in 0..3 {
                    let i = f * 3 + c;
                    let h = self.face_vals[f] * bv[i];
                    let r = al[i] - h;
                    num2 += w.wf[f] * r * r;
                    h2 += w.wf[f] * h * h;
                }
            }
        }
        let eta_s = num2.sqrt() / (floor + norm_tt(&st.alpha2, w) + h2.sqrt());

        // Congestion slack: e/θ must match the density multiplier.
        let eta_e = st.e.as_ref().map(|e| {
            let inv_theta = 1.0 / self.cfg.congestion;
            let mut num2 = 0.0;
            let mut s2 = 0.0;
            for k in 0..n_st {
                let (es, al) = (e.slice(k), st.alpha1.slice(k));
                for v in 0..nv {
                    let s = es[v] * inv_theta;
                    num2 += w.wv[v] * (s - al[v]) * (s - al[v]);
                    s2 += w.wv[v] * s * s;
                }
            }
            num2.sqrt() / (floor + s2.sqrt() + norm_tv(&st.alpha1, w))
        });

        let mut eta_max = eta_d.max(eta_p).max(eta_proj).max(eta_s);
        if let Some(ee) = eta_e {
            eta_max = eta_max.max(ee);
        }

        // Conic-form primal residual: the copy constraint violation.
        apply_copy_into(&st.a, &st.b, &mut self.zwork);
        for (zw, zv) in self.zwork.data.iter_mut().zip(&st.z.data) {
            *zw = zv - *zw;
        }
        let eta_copy = norm_z(&self.zwork, w) / (floor + p.shift_norm);
        let eta_p_soc = eta_d.max(eta_copy);

        // Conic-form dual residual: β must reproduce the flux multipliers.
        apply_copy_adjoint_into(&st.beta, &self.unit_w, &mut self.ta, &mut self.tb);
        let mut num2 = 0.0;
        let mut tilde2 = 0.0;
        for k in 0..n_st {
            let (al, tv) = (st.alpha1.slice(k), self.ta.slice(k));
            for v in 0..nv {
                let tilde = -tv[v];
                num2 += w.wv[v] * (al[v] - tilde) * (al[v] - tilde);
                tilde2 += w.wv[v] * tilde * tilde;
            }
        }
        for j in 0..n_ct {
            let (al, tv) = (st.alpha2.slice(j), self.tb.slice(j));
            for f in 0..nf {
                for c in 0..3 {
                    let i = f * 3 + c;
                    let tilde = -tv[i];
                    num2 += w.wf[f] * (al[i] - tilde) * (al[i] - tilde);
                    tilde2 += w.wf[f] * tilde * tilde;
                }
            }
        }
        let alpha_norm =
            (inner_tv(&st.alpha1, &st.alpha1, w) + inner_tt(&st.alpha2, &st.alpha2, w)).sqrt();
        let eta_dual_copy = num2.sqrt() / (floor + alpha_norm + tilde2.sqrt());
        let eta_d_soc = eta_p.max(eta_dual_copy);

        Residuals {
            eta_d,
            eta_p,
            eta_proj,
            eta_s,
            eta_e,
            eta_max,
            eta_p_soc,
            eta_d_soc,
        }
    }

    /// Doubles or halves the penalty when the conic primal/dual residuals are
    /// out of balance; keeps it within fixed bounds. [`run`](Self::run) calls
    /// this every `sigma_update_every` iterations; custom driver loops should
    /// do the same.
    pub fn adapt_sigma(&mut self, r: &Residuals) {
        let ratio = r.eta_p_soc / r.eta_d_soc;
        if ratio > SIGMA_RATIO_TRIGGER {
            self.state.sigma = (self.state.sigma * SIGMA_GROWTH).min(SIGMA_MAX);
        } else if ratio < 1.0 / SIGMA_RATIO_TRIGGER {
            self.state.sigma = (self.state.sigma / SIGMA_GROWTH).max(SIGMA_MIN);
        }
    }

    /// Runs the iteration to convergence or a budget limit.
    pub fn run(&mut self) -> RunOutcome {
        let start = Instant::now();
        let mut history = Vec::new();
        let mut reason = StopReason::IterationLimit;
        let mut last: Option<Residuals> = None;
        let mut iterations = 0;
        while iterations < self.cfg.max_iterations {
            iterations += 1;
            self.step();
            let timed_out = start.elapsed().as_secs_f64() > self.cfg.max_seconds;
            let is_check = iterations % self.cfg.check_every == 0
                || iterations == self.cfg.max_iterations
                || timed_out;
            if !is_check {
                continue;
            }
            let res = self.residuals();
            history.push(HistoryEntry {
                iteration: iterations,
                sigma: self.state.sigma,
                residuals: res,
            });
            last = Some(res);
            if res.eta_max <= self.cfg.tol {
                reason = StopReason::Converged;
                break;
            }
            if !res.eta_max.is_finite() || res.eta_max > DIVERGENCE_CEILING {
                reason = StopReason::Diverged;
                break;
            }
            if timed_out {
                reason = StopReason::TimeLimit;
                break;
            }
            if iterations % self.cfg.sigma_update_every == 0 {
                self.adapt_sigma(&res);
            }
        }
        let residuals = last.unwrap_or_else(|| self.residuals());
        RunOutcome {
            reason,
            iterations,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            residuals,
            sigma_final: self.state.sigma,
            max_discarded: self.max_discarded,
            history,
        }
    }

    /// Reads the transported solution off the current multipliers.
    pub fn extract_solution(&self) -> Solution {
        let p = self.prob;
        let cost = -inner_tv(&self.state.phi, &p.cost, &p.weights);
        let mass_per_slice = (0..p.grid.staggered_len())
            .map(|k| {
                self.state
                    .alpha1
                    .slice(k)
                    .iter()
                    .zip(&p.geom.vertex_area)
                    .map(|(d, a)| d * a)
                    .sum()
            })
            .collect();
        let density_min = self.state.alpha1.data.iter().copied().fold(f64::INFINITY, f64::min);
        let density_max = self
            .state
            .alpha1
            .data
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Solution {
            density: self.state.alpha1.clone(),
            momentum: self.state.alpha2.clone(),
            phi: self.state.phi.clone(),
            cost,
            w2_distance: (2.0 * cost).max(0.0).sqrt(),
            mass_per_slice,
            density_min,
            density_max,
        }
    }
}

/// Convenience wrapper: cold start, run, extract.
pub fn solve(prob: &Problem, cfg: SolverConfig) -> Result<(RunOutcome, Solution), SolverError> {
    let mut solver = IalmSolver::new(prob, cfg)?;
    let outcome = solver.run();
    Ok((outcome, solver.extract_solution()))
}

/// The stationary iterate for equal end densities: zero potential and flux,
/// the density multiplier pinned at the common density, and the cone
/// multiplier split antisymmetrically. Useful as an analytic fixed point.
pub fn stationary_state(prob: &Problem, cfg: &SolverConfig) -> SolverState {
    let mut state = SolverState::cold(prob, cfg);
    let mu = &prob.densities.mu0;
    let n_st = prob.grid.staggered_len();
    for k in 0..n_st {
        state.alpha1.slice_mut(k).copy_from_slice(mu);
        for (z, m) in state.z.z1_mut(k).iter_mut().zip(mu) {
            *z = 1.0;
            let _ = m;
        }
        state.z.z3_mut(k).fill(1.0);
        for (bz, m) in state.beta.z1_mut(k).iter_mut().zip(mu) {
            *bz = 0.5 * m;
        }
        for (bz, m) in state.beta.z3_mut(k).iter_mut().zip(mu) {
            *bz = -0.5 * m;
        }
    }
    state
}
