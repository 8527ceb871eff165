//! Arbitrary-order virtual element discretization of elliptic
//! advection–diffusion–reaction equations on parametrized surfaces.
//!
//! The library works entirely on planar charts: a surface is described by a
//! parametrization over a reference domain, the PDE is rewritten with the
//! metric of the parametrization folded into its coefficients, and a
//! polygonal virtual element scheme of order 1 through 4 discretizes the
//! resulting variable-coefficient problem. Modules:
//!
//! * [`chart`] — parametrizations, orthogonalized tangent frames, diagonal
//!   metric tensors and their derivatives, chart-form PDE coefficients;
//! * [`quad`] — scaled monomial bases and quadrature on segments, triangles,
//!   and star-shaped polygons;
//! * [`mesh`] — polygonal meshes: validation, JSON exchange, regularity
//!   reports, triangular and centroidal-polygonal mesh generators;
//! * [`vem`] — per-cell virtual element operators: projectors, consistency,
//!   stabilization, advection, reaction, and load terms;
//! * [`assembly`] — global degree-of-freedom numbering, parallel assembly,
//!   Dirichlet elimination, sparse direct solve, two-chart solves;
//! * [`mms`] — manufactured solutions, error norms, and convergence rates.

pub mod assembly;
pub mod chart;
pub mod error;
pub mod mesh;
pub mod mms;
pub mod quad;
pub mod vem;

pub use error::{Error, Result};
