//! Structured bilinear finite elements: meshes, assembly, solves and norms.

pub mod assembly;
pub mod element;
pub mod mesh;
pub mod norm;
pub mod solve;
pub mod sparse;

pub use assembly::{
    assemble_mass, assemble_stiffness, assemble_stiffness_masked, assemble_weighted_mass,
    boundary_load, boundary_weights, source_load,
};
pub use mesh::{BoundaryEdge, Mesh, Side};
pub use norm::{caccioppoli_check, norm, CaccioppoliReport, NormKind};
pub use solve::{
    harmonic_extension, solve_dirichlet, solve_neumann, DirichletSolver, NeumannSolver, Trace,
};
pub use sparse::{Cholesky, CsrMatrix, TripletBuilder};
