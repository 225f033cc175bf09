//! Facial reflectance maps from a fitted mesh and a low-resolution texture.
//!
//! The crate covers the whole data path: super-resolution, de-lighting,
//! specular albedo and normal inference, diffuse normals, normal
//! integration into displacement, and physically based relighting. The
//! translation steps ship as analytic reference operators; trained models
//! plug in as external processes speaking a framed raster protocol.

pub mod assets;
pub mod color;
pub mod displacement;
pub mod mesh;
pub mod metrics;
pub mod operators;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod shading;
