//! Scene-adaptive sparse window transformer for event-camera streams.
//!
//! The crate turns raw polarity events into voxel tokens, scores every window
//! and token against the per-bin event sparsity of the scene, co-selects the
//! important ones, and runs masked sparse window self-attention plus a sparse
//! MLP on the survivors only. Dropped positions pass through untouched, so a
//! layer's compute scales with scene activity instead of sensor resolution.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`events`]: event parsing, synthesis, voxelization, sparsity vectors
//! - [`tensorkit`]: dense primitives and window/grid partitioning
//! - [`scoring`]: sparsity-controlled token scores and STP weighting
//! - [`selection`]: score intensification, thresholds, window/token filters
//! - [`sparse_attention`]: pad/pack, masked attention, sparse MLP, scatter
//! - [`backbone`]: layers, blocks, and the four-stage hierarchy
//! - [`flopsmeter`]: analytic FLOPs and attention-FLOPs accounting

pub mod backbone;
pub mod error;
pub mod events;
pub mod flopsmeter;
pub mod scoring;
pub mod selection;
pub mod sparse_attention;
pub mod tensorkit;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

/// Scalar type for all numeric work. Defaults to `f64`; the `f32` feature
/// switches the whole crate to single precision for benchmarking.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Name of the compiled numeric mode, matching the `SAST_NUMERIC` values.
pub fn numeric_mode() -> &'static str {
    if cfg!(feature = "f32") {
        "f32"
    } else {
        "f64"
    }
}
