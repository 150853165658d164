//! The furnace check: a closed cavity whose walls both emit and reflect.
//!
//! Each wall has reflectance rho and emits (1 - rho) * level, so full
//! transport would return exactly `level` from every direction. A tracer
//! truncated at 6 vertices instead returns
//!     sum_{i=0..5} rho^i * (1 - rho) * level = (1 - rho^6) * level,
//! and with cosine-sampled lambertian walls every single sample lands on
//! that value (zero variance), because the throughput factor at each bounce
//! is exactly rho. Any miscounted bounce, double-counted emission or wrong
//! BSDF normalization shows up as a bias the breakdown pinpoints.

use crate::render::trace_pixel_samples;
use crate::scene::{Camera, Material, Scene, Sphere};
use crate::trace::MAX_VERTICES;
use crate::vec3::v3;

/// Closed cavity around the camera built from an emissive-reflective sphere.
pub fn furnace_scene(rho: f64, level: f64) -> Scene {
    Scene {
        camera: Camera {
            position: v3(0.0, 0.0, 0.0),
            look_at: v3(0.0, 0.0, -1.0),
            up: v3(0.0, 1.0, 0.0),
            fov_deg: 60.0,
        },
        spheres: vec![Sphere {
            center: v3(0.0, 0.0, 0.0),
            radius: 10.0,
            material: Material::FurnaceWall { rho, level },
        }],
        quads: vec![],
        boxes: vec![],
        emitters: vec![],
        environment: None,
    }
}

/// Closed-form value of the truncated estimator.
pub fn furnace_expected(rho: f64, level: f64) -> f64 {
    (1.0 - rho.powi(MAX_VERTICES as i32)) * level
}

pub fn expected_by_bounce(rho: f64, level: f64) -> [f64; MAX_VERTICES] {
    let mut out = [0.0; MAX_VERTICES];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = rho.powi(i as i32) * (1.0 - rho) * level;
    }
    out
}

pub struct FurnaceReport {
    pub rho: f64,
    pub level: f64,
    pub spp: usize,
    pub resolution: usize,
    pub expected: f64,
    pub measured: f64,
    pub rel_error: f64,
    pub band_3sigma: f64, // 3 sigma of the estimator mean
    pub by_bounce: [f64; MAX_VERTICES],
    pub by_bounce_expected: [f64; MAX_VERTICES],
    pub passed: bool,
}

/// Render the cavity and compare against the closed form.
pub fn furnace_check(rho: f64, level: f64, spp: usize, resolution: usize, tolerance: f64) -> FurnaceReport {
    let scene = furnace_scene(rho, level);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut bounce_sums = [0.0f64; MAX_VERTICES];
    let mut n = 0u64;
    for y in 0..resolution {
        for x in 0..resolution {
            for rec in trace_pixel_samples(&scene, resolution, resolution, x, y, spp, 0) {
                let v = rec.radiance.mean();
                sum += v;
                sum_sq += v * v;
                for i in 0..MAX_VERTICES {
                    bounce_sums[i] += rec.by_vertex[i].mean();
                }
                n += 1;
            }
        }
    }
    let nf = n as f64;
    let measured = sum / nf;
    let var = (sum_sq / nf - measured * measured).max(0.0);
    let band = 3.0 * (var / nf).sqrt();
    let expected = furnace_expected(rho, level);
    let rel = (measured - expected).abs() / expected.abs().max(1e-12);
    let mut by_bounce = [0.0; MAX_VERTICES];
    for i in 0..MAX_VERTICES {
        by_bounce[i] = bounce_sums[i] / nf;
    }
    FurnaceReport {
        rho,
        level,
        spp,
        resolution,
        expected,
        measured,
        rel_error: rel,
        band_3sigma: band,
        by_bounce,
        by_bounce_expected: expected_by_bounce(rho, level),
        passed: rel <= tolerance,
    }
}
