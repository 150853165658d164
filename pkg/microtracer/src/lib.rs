//! A small, correct CPU path tracer producing noisy shots, high-spp
//! references, feature buffers and per-sample path descriptors in the
//! shared container format.

pub mod container;
pub mod furnace;
pub mod render;
pub mod rng;
pub mod scene;
pub mod trace;
pub mod vec3;
