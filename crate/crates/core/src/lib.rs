//! Entropic Gromov-Wasserstein alignment of feature sets, plus the
//! post-generation chain for synthesized video frames: face retrieval by
//! landmark orientation, blending, residual refinement of body parts,
//! pasting and mask fusion.

pub mod compositing;
pub mod config;
pub mod error;
pub mod facegeom;
pub mod gromov;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod sinkhorn;
pub mod types;

pub use error::{Error, Result};
pub use gromov::{gw_solve, gw_solve_costs, GWResult};
pub use sinkhorn::{sinkhorn_solve, SinkhornSolution};
pub use types::{
    Coupling, DiscreteDistribution, Epsilon, FeatureBatch, IntraCostMatrix, Mask, RasterImage, ResidualImage,
    SolverConfig,
};
