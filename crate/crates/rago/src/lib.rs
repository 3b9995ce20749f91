pub mod classical;
pub mod config;
pub mod eval;
pub mod nn;
pub mod so3;
pub mod solver;
pub mod synth;
pub mod viewgraph;

// Links the system BLAS used by ndarray matrix products.
extern crate blas_src;
