//! Layered coding, rendering, alignment and streaming simulation for
//! Gaussian-splat volumetric video.

pub mod gaussian_model;
pub mod image;
pub mod renderer;
pub mod svq;
pub mod tiling_lod;
pub mod metrics;
pub mod prpa;
pub mod restore;
pub mod viewport_fov;
pub mod adaptation;
pub mod sim;
