//! Wasserstein geodesics between densities on triangulated surfaces.
//!
//! This crate computes the dynamic-optimal-transport interpolation between two
//! probability densities living on the vertices of a triangle mesh. The
//! kinetic-energy formulation is discretized on a staggered time grid with
//! piecewise-linear spatial elements, recast as a second-order cone program,
//! and solved with an inexact semi-proximal augmented Lagrangian method whose
//! subproblems all have closed forms or reusable sparse factorizations.

pub mod app;
pub mod discretization;
pub mod linsolve;
pub mod mesh;
pub mod socp;
pub mod solver;
