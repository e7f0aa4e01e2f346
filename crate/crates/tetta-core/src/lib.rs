//! Reconstruction of a textured 3D mesh from a single reference view.
//!
//! The pipeline optimizes three things jointly at test time:
//!
//! * a deformable tetrahedral grid carrying a signed distance field and
//!   per-vertex PBR materials ([`grid`], [`marching`]),
//! * a virtual camera with spherical extrinsics ([`camera`]),
//! * and the rendered appearance against a reference image plus a pluggable
//!   multi-view noise predictor queried through score distillation ([`sds`]).
//!
//! Everything is CPU-side and deterministic for fixed seeds. The companion
//! `tetta-cli` crate owns file formats and the command line.

pub mod camera;
pub mod env;
pub mod grid;
pub mod image;
pub mod losses;
pub mod marching;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod sdf;
pub mod sds;
pub mod shading;
pub mod shapes;
pub mod tta;

pub use crate::image::{Image, Mask};
pub use crate::math::{Aabb, Vec3};

/// Errors surfaced by the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad user-supplied configuration (resolutions, bounds, ranges).
    #[error("configuration error: {0}")]
    Config(String),
    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A view-bank query fell outside the bank's angular tolerance.
    #[error("view bank lookup failed: {0}")]
    Lookup(String),
    /// The noise predictor failed or returned malformed output.
    #[error("predictor error: {0}")]
    Predictor(String),
    /// Optimization produced a non-finite loss; carries a diagnostic snapshot.
    #[error("non-finite loss at iteration {iter}: {snapshot}")]
    NonFinite { iter: usize, snapshot: String },
}

pub type Result<T> = std::result::Result<T, Error>;
