//! Mesh segmentation driven by the Shape Diameter Function.
//!
//! The crate computes a per-face thickness field either by ray casting
//! ([`shdf`]) or with a trained message-passing network ([`emd`]) over a
//! Poisson-disk sample graph ([`sampler`]), then partitions faces with a
//! Gaussian mixture followed by an alpha-expansion graph cut
//! ([`partition`]). [`pipeline`] ties the stages together with caching,
//! refinement and parameter search; [`dataset`] builds synthetic training
//! data.

pub mod dataset;
pub mod emd;
pub mod error;
pub mod mesh;
pub mod partition;
pub mod pipeline;
pub mod sampler;
pub mod shapes;
pub mod shdf;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
pub use mesh::{Adjacency, Mesh, Vec3};
