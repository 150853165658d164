//! Shot rendering: turns a scene into per-pixel branch radiances, feature
//! buffers and per-sample path descriptors.
//!
//! One pass over samples serves both outputs: sample index s contributes to
//! the reference always and to the noisy side while s < spp, so rendering
//! with ref_spp == spp makes reference and noisy bitwise equal. Rows are
//! traced in parallel; every pixel's accumulation happens sequentially
//! inside its row with counter-keyed RNG streams, so the result does not
//! depend on the number of worker threads.

use rayon::prelude::*;

use crate::rng::PathRng;
use crate::scene::{Camera, Scene};
use crate::trace::{trace_sample, PathRecord, Ray, MAX_VERTICES, SCATTER_VERTICES};
use crate::vec3::Vec3;

pub const GBUFFER_CHANNELS: usize = 24;
pub const DESCRIPTOR_CHANNELS: usize = 36;

/// A rendered shot, still in planar f32 buffers (channels-last, row-major).
pub struct ShotData {
    pub width: usize,
    pub height: usize,
    pub spp: usize,
    pub ref_spp: usize,
    pub seed: u64,
    pub scene_id: String,
    pub depth_scale: f64,
    pub noisy_diffuse: Vec<f32>,      // H*W*3
    pub noisy_specular: Vec<f32>,     // H*W*3
    pub reference_diffuse: Vec<f32>,  // H*W*3
    pub reference_specular: Vec<f32>, // H*W*3
    pub gbuffer_diffuse: Vec<f32>,    // H*W*24
    pub gbuffer_specular: Vec<f32>,   // H*W*24
    pub descriptors: Vec<f32>,        // H*W*spp*36
}

// ---------------------------------------------------------------------
// Camera rays

/// Ray through pixel (x, y) with a uniform sub-pixel jitter drawn from `rng`
/// (always exactly two variates, drawn before any tracing).
pub fn camera_ray(
    cam: &Camera,
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    rng: &mut PathRng,
) -> Ray {
    let jx = rng.next_f64();
    let jy = rng.next_f64();
    let forward = (cam.look_at - cam.position).normalized();
    let right = forward.cross(cam.up).normalized();
    let true_up = right.cross(forward);
    let half_h = (cam.fov_deg.to_radians() * 0.5).tan();
    let half_w = half_h * width as f64 / height as f64;
    let ndc_x = 2.0 * (x as f64 + jx) / width as f64 - 1.0;
    let ndc_y = 1.0 - 2.0 * (y as f64 + jy) / height as f64;
    let dir = (forward + right * (ndc_x * half_w) + true_up * (ndc_y * half_h)).normalized();
    Ray { origin: cam.position, dir }
}

/// Trace all noisy samples of one pixel; test hook for estimator checks.
pub fn trace_pixel_samples(
    scene: &Scene,
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    spp: usize,
    seed: u64,
) -> Vec<PathRecord> {
    let pixel = (y * width + x) as u64;
    (0..spp)
        .map(|s| {
            let mut rng = PathRng::keyed(seed, pixel, s as u64);
            let ray = camera_ray(&scene.camera, width, height, x, y, &mut rng);
            trace_sample(scene, ray, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------
// Per-pixel accumulation

#[derive(Clone, Copy, Default)]
struct FeatAgg {
    n: u64,
    albedo_sum: Vec3,
    albedo_sq: Vec3,
    normal_sum: Vec3,
    normal_sq: Vec3,
    depth_sum: f64,
    depth_sq: f64,
}

impl FeatAgg {
    fn add(&mut self, albedo: Vec3, normal: Vec3, depth: f64) {
        self.n += 1;
        self.albedo_sum += albedo;
        self.albedo_sq += albedo * albedo;
        self.normal_sum += normal;
        self.normal_sq += normal * normal;
        self.depth_sum += depth;
        self.depth_sq += depth * depth;
    }
}

/// Population mean and variance summaries for one feature group.
struct FeatStats {
    albedo: Vec3,
    albedo_var: f64, // mean over rgb of per-channel variance
    normal: Vec3,
    normal_var: f64,
    depth: f64,
    depth_var: f64,
}

impl FeatAgg {
    fn stats(&self) -> FeatStats {
        if self.n == 0 {
            return FeatStats {
                albedo: Vec3::ZERO,
                albedo_var: 0.0,
                normal: Vec3::ZERO,
                normal_var: 0.0,
                depth: 0.0,
                depth_var: 0.0,
            };
        }
        let n = self.n as f64;
        let var3 = |sum: Vec3, sq: Vec3| {
            let mut acc = 0.0;
            for i in 0..3 {
                let m = sum.axis(i) / n;
                acc += (sq.axis(i) / n - m * m).max(0.0);
            }
            acc / 3.0
        };
        let dm = self.depth_sum / n;
        FeatStats {
            albedo: self.albedo_sum / n,
            albedo_var: var3(self.albedo_sum, self.albedo_sq),
            normal: self.normal_sum / n,
            normal_var: var3(self.normal_sum, self.normal_sq),
            depth: dm,
            depth_var: (self.depth_sq / n - dm * dm).max(0.0),
        }
    }
}

#[derive(Clone, Copy, Default)]
struct PixelAgg {
    noisy_d: Vec3,
    noisy_s: Vec3,
    ref_d: Vec3,
    ref_s: Vec3,
    feat_d: FeatAgg,
    feat_s: FeatAgg,
    feat_any: FeatAgg,
}

struct RowData {
    pixels: Vec<PixelAgg>,
    desc: Vec<f32>, // W * spp * 36
}

fn write_descriptor(out: &mut [f32], rec: &PathRecord) {
    debug_assert_eq!(out.len(), DESCRIPTOR_CHANNELS);
    for i in 0..3 {
        out[i] = rec.undivided.axis(i) as f32;
        out[3 + i] = rec.energy.axis(i) as f32;
    }
    // pdf stays strictly positive through the f32 cast
    out[6] = (rec.pdf as f32).max(1e-30);
    for v in 0..MAX_VERTICES {
        for c in 0..3 {
            out[7 + v * 3 + c] = rec.atten[v][c] as f32;
        }
        out[25 + v] = rec.tags[v] as f32;
    }
    for v in 0..SCATTER_VERTICES {
        out[31 + v] = rec.rough[v] as f32;
    }
}

fn render_row(
    scene: &Scene,
    width: usize,
    height: usize,
    spp: usize,
    total_spp: usize,
    seed: u64,
    y: usize,
) -> RowData {
    let mut pixels = vec![PixelAgg::default(); width];
    let mut desc = vec![0.0f32; width * spp * DESCRIPTOR_CHANNELS];
    for x in 0..width {
        let agg = &mut pixels[x];
        let pixel = (y * width + x) as u64;
        for s in 0..total_spp {
            let mut rng = PathRng::keyed(seed, pixel, s as u64);
            let ray = camera_ray(&scene.camera, width, height, x, y, &mut rng);
            let rec = trace_sample(scene, ray, &mut rng);
            if rec.specular_branch {
                agg.ref_s += rec.radiance;
            } else {
                agg.ref_d += rec.radiance;
            }
            if s < spp {
                if rec.specular_branch {
                    agg.noisy_s += rec.radiance;
                } else {
                    agg.noisy_d += rec.radiance;
                }
                if let Some(f) = rec.feat {
                    let branch = if rec.specular_branch {
                        &mut agg.feat_s
                    } else {
                        &mut agg.feat_d
                    };
                    branch.add(f.albedo, f.normal, f.depth);
                    agg.feat_any.add(f.albedo, f.normal, f.depth);
                }
                let base = (x * spp + s) * DESCRIPTOR_CHANNELS;
                write_descriptor(&mut desc[base..base + DESCRIPTOR_CHANNELS], &rec);
            }
        }
    }
    RowData { pixels, desc }
}

// ---------------------------------------------------------------------
// Feature images and derivatives

/// Central differences with one-sided edges, matching the convention of the
/// consumer's gradient channels: interior (f[i+1]-f[i-1])/2, edge f[1]-f[0].
fn gradient_1d(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = values[1] - values[0];
    out[n - 1] = values[n - 1] - values[n - 2];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) * 0.5;
    }
    out
}

/// Screen-space x and y derivatives of a scalar image (row-major H*W).
fn gradients_2d(img: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ddx = vec![0.0; width * height];
    let mut ddy = vec![0.0; width * height];
    for y in 0..height {
        let row: Vec<f64> = (0..width).map(|x| img[y * width + x]).collect();
        let g = gradient_1d(&row);
        for x in 0..width {
            ddx[y * width + x] = g[x];
        }
    }
    for x in 0..width {
        let col: Vec<f64> = (0..height).map(|y| img[y * width + x]).collect();
        let g = gradient_1d(&col);
        for y in 0..height {
            ddy[y * width + x] = g[y];
        }
    }
    (ddx, ddy)
}

/// 24-channel layout: albedo(3) ddx(3) ddy(3) var(1), normal likewise,
/// depth(1) ddx(1) ddy(1) var(1).
fn assemble_gbuffer(stats: &[FeatStats], width: usize, height: usize, depth_scale: f64) -> Vec<f32> {
    let npix = width * height;
    let mut gb = vec![0.0f32; npix * GBUFFER_CHANNELS];

    // albedo and normal share the vector treatment; var sits at base + 9
    type CompOf = fn(&FeatStats, usize) -> f64;
    type VarOf = fn(&FeatStats) -> f64;
    let blocks: [(usize, CompOf, VarOf); 2] = [
        (0, |s, i| s.albedo.axis(i), |s| s.albedo_var),
        (10, |s, i| s.normal.axis(i), |s| s.normal_var),
    ];
    for (base, comp_of, var_of) in blocks {
        for comp in 0..3 {
            let img: Vec<f64> = stats.iter().map(|s| comp_of(s, comp)).collect();
            let (ddx, ddy) = gradients_2d(&img, width, height);
            for p in 0..npix {
                gb[p * GBUFFER_CHANNELS + base + comp] = img[p] as f32;
                gb[p * GBUFFER_CHANNELS + base + 3 + comp] = ddx[p] as f32;
                gb[p * GBUFFER_CHANNELS + base + 6 + comp] = ddy[p] as f32;
            }
        }
        for p in 0..npix {
            gb[p * GBUFFER_CHANNELS + base + 9] = var_of(&stats[p]) as f32;
        }
    }

    // depth is normalized into [0, 1] before differentiation
    let depth: Vec<f64> = stats.iter().map(|s| (s.depth / depth_scale).clamp(0.0, 1.0)).collect();
    let (ddx, ddy) = gradients_2d(&depth, width, height);
    for p in 0..npix {
        gb[p * GBUFFER_CHANNELS + 20] = depth[p] as f32;
        gb[p * GBUFFER_CHANNELS + 21] = ddx[p] as f32;
        gb[p * GBUFFER_CHANNELS + 22] = ddy[p] as f32;
        gb[p * GBUFFER_CHANNELS + 23] = (stats[p].depth_var / (depth_scale * depth_scale)) as f32;
    }
    gb
}

// ---------------------------------------------------------------------
// The full shot

pub fn render_shot(
    scene: &Scene,
    width: usize,
    height: usize,
    spp: usize,
    ref_spp: usize,
    seed: u64,
    scene_id: &str,
) -> ShotData {
    assert!(spp >= 1, "spp must be >= 1");
    assert!(ref_spp >= spp, "ref_spp must be >= spp");
    let total_spp = ref_spp;
    let rows: Vec<RowData> = (0..height)
        .into_par_iter()
        .map(|y| render_row(scene, width, height, spp, total_spp, seed, y))
        .collect();

    let npix = width * height;
    let mut noisy_d = vec![0.0f32; npix * 3];
    let mut noisy_s = vec![0.0f32; npix * 3];
    let mut ref_d = vec![0.0f32; npix * 3];
    let mut ref_s = vec![0.0f32; npix * 3];
    let mut descriptors = Vec::with_capacity(npix * spp * DESCRIPTOR_CHANNELS);
    let mut stats_d = Vec::with_capacity(npix);
    let mut stats_s = Vec::with_capacity(npix);

    for (y, row) in rows.iter().enumerate() {
        descriptors.extend_from_slice(&row.desc);
        for (x, agg) in row.pixels.iter().enumerate() {
            let p = y * width + x;
            for i in 0..3 {
                noisy_d[p * 3 + i] = (agg.noisy_d.axis(i) / spp as f64) as f32;
                noisy_s[p * 3 + i] = (agg.noisy_s.axis(i) / spp as f64) as f32;
                ref_d[p * 3 + i] = (agg.ref_d.axis(i) / ref_spp as f64) as f32;
                ref_s[p * 3 + i] = (agg.ref_s.axis(i) / ref_spp as f64) as f32;
            }
            // a branch with no surface samples borrows the pixel's pooled
            // features so its buffers stay meaningful rather than zero
            let pick = |own: &FeatAgg| if own.n > 0 { own.stats() } else { agg.feat_any.stats() };
            stats_d.push(pick(&agg.feat_d));
            stats_s.push(pick(&agg.feat_s));
        }
    }

    let mut depth_scale = 0.0f64;
    for s in stats_d.iter().chain(stats_s.iter()) {
        depth_scale = depth_scale.max(s.depth);
    }
    if depth_scale <= 0.0 {
        depth_scale = 1.0;
    }

    let gbuffer_diffuse = assemble_gbuffer(&stats_d, width, height, depth_scale);
    let gbuffer_specular = assemble_gbuffer(&stats_s, width, height, depth_scale);

    ShotData {
        width,
        height,
        spp,
        ref_spp,
        seed,
        scene_id: scene_id.to_string(),
        depth_scale,
        noisy_diffuse: noisy_d,
        noisy_specular: noisy_s,
        reference_diffuse: ref_d,
        reference_specular: ref_s,
        gbuffer_diffuse,
        gbuffer_specular,
        descriptors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::parse_scene;

    const FLOOR_SCENE: &str = "\
camera 0 1 3  0 0 -1  0 1 0  50
quad y -0.5 -8 8 -8 8 lambertian 0.6 0.5 0.4
emit y 3 -1 1 -1 1  4 4 4
env 0.2 0.2 0.2
";

    #[test]
    fn gradient_matches_convention() {
        let g = gradient_1d(&[1.0, 2.0, 4.0, 8.0]);
        assert_eq!(g, vec![1.0, 1.5, 3.0, 4.0]);
        assert_eq!(gradient_1d(&[5.0]), vec![0.0]);
    }

    #[test]
    fn ref_equals_noisy_when_spp_matches() {
        let scene = parse_scene(FLOOR_SCENE).unwrap();
        let shot = render_shot(&scene, 8, 6, 4, 4, 11, "t");
        assert_eq!(shot.noisy_diffuse, shot.reference_diffuse);
        assert_eq!(shot.noisy_specular, shot.reference_specular);
    }

    #[test]
    fn depth_stays_in_unit_range() {
        let scene = parse_scene(FLOOR_SCENE).unwrap();
        let shot = render_shot(&scene, 8, 6, 2, 4, 0, "t");
        for gb in [&shot.gbuffer_diffuse, &shot.gbuffer_specular] {
            for p in 0..8 * 6 {
                let d = gb[p * GBUFFER_CHANNELS + 20];
                assert!((0.0..=1.0).contains(&d), "depth {d} out of range");
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_bytes() {
        let scene = parse_scene(FLOOR_SCENE).unwrap();
        let render = || render_shot(&scene, 10, 8, 2, 3, 5, "t");
        let one =
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| render());
        let eight =
            rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap().install(|| render());
        assert_eq!(one.noisy_diffuse, eight.noisy_diffuse);
        assert_eq!(one.noisy_specular, eight.noisy_specular);
        assert_eq!(one.reference_diffuse, eight.reference_diffuse);
        assert_eq!(one.gbuffer_diffuse, eight.gbuffer_diffuse);
        assert_eq!(one.gbuffer_specular, eight.gbuffer_specular);
        assert_eq!(one.descriptors, eight.descriptors);
        assert_eq!(one.depth_scale, eight.depth_scale);
    }
}
