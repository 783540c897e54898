//! Photo-geometric rendering and iterative single-image shape refinement.
//!
//! An image is explained by a depth map, an albedo, a viewpoint and a
//! Lambertian lighting. Starting from a convex prior shape, the pipeline
//! renders pseudo samples under random views and lights, snaps them onto an
//! image manifold through a [`manifold::ManifoldProjector`], and refines depth,
//! albedo and the per-sample views and lights against the projected samples.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the
//! command-line front end and a thread-pool executor live in the `photogeo`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod exec;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod priors;
pub mod reconstruction;
pub mod renderer;
pub mod sampling;
pub mod scenes;
pub mod shading;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthMap, NormalMap, Pose, ViewBounds, Viewpoint};
pub use grid::{Grid, Image, Mask, Rgb};
pub use shading::{Lighting, LightingOffset, LightingParams};
