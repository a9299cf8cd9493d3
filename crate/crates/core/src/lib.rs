pub mod error;
pub mod fem;
pub mod geometry;
pub mod gfem;
pub mod homog;
pub mod microstructure;
pub mod localspace;
pub mod spectral;
