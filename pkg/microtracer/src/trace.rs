//! The path integrator: unidirectional tracing with next-event estimation,
//! hard-capped at 6 path vertices (5 scattering events).
//!
//! Emission accounting: pure emitter quads are sampled by NEE at every
//! diffuse or glossy vertex, so radiance from a direct emitter hit is only
//! collected when the previous vertex was specular (or the camera), so each
//! light path of up to 6 vertices is counted exactly once. Environment
//! light and furnace walls are never NEE-sampled and therefore always
//! collect on hit. No Russian roulette: the truncation depth is part of
//! the estimator's definition.

use crate::rng::PathRng;
use crate::scene::{BoxPrim, Emitter, Material, Rect, Scene, Sphere};
use crate::vec3::{basis, v3, Vec3};

pub const MAX_VERTICES: usize = 6;
pub const SCATTER_VERTICES: usize = MAX_VERTICES - 1;

pub const TAG_NONE: u8 = 0;
pub const TAG_DIFFUSE: u8 = 1;
pub const TAG_GLOSSY: u8 = 2;
pub const TAG_SPEC_REFLECT: u8 = 3;
pub const TAG_SPEC_TRANSMIT: u8 = 4;

const T_MIN: f64 = 1e-7;
const OFFSET: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3, // unit
}

/// First-non-specular-vertex features, the G-buffer's raw material.
#[derive(Debug, Clone, Copy)]
pub struct Feat {
    pub albedo: Vec3,
    pub normal: Vec3,
    pub depth: f64, // cumulative ray distance from the camera
}

/// Everything one sample produces.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub radiance: Vec3,
    pub undivided: Vec3, // radiance * pdf, the identity the container promises
    pub energy: Vec3,    // radiance of the light behind the largest contribution
    pub pdf: f64,        // product of direction-sampling densities, > 0
    pub atten: [[f64; 3]; MAX_VERTICES], // per-vertex throughput factor, rgb
    pub tags: [u8; MAX_VERTICES],
    pub rough: [f64; SCATTER_VERTICES],
    /// Radiance collected while processing each vertex (emitter hits and
    /// NEE alike); slot MAX_VERTICES is escape-to-environment. Sums to
    /// `radiance`; the furnace check reads its per-bounce breakdown here.
    pub by_vertex: [Vec3; MAX_VERTICES + 1],
    pub specular_branch: bool,
    pub feat: Option<Feat>,
}

impl PathRecord {
    fn new() -> Self {
        PathRecord {
            radiance: Vec3::ZERO,
            undivided: Vec3::ZERO,
            energy: Vec3::ZERO,
            pdf: 1.0,
            atten: [[0.0; 3]; MAX_VERTICES],
            tags: [TAG_NONE; MAX_VERTICES],
            rough: [0.0; SCATTER_VERTICES],
            by_vertex: [Vec3::ZERO; MAX_VERTICES + 1],
            specular_branch: true, // paths with no non-specular vertex
            feat: None,
        }
    }
}

// ---------------------------------------------------------------------
// Intersections

#[derive(Debug, Clone, Copy)]
enum Surface {
    Sphere(usize),
    Quad(usize),
    Box(usize),
    Emitter(usize),
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    surface: Surface,
}

fn hit_sphere(s: &Sphere, ray: &Ray, t_max: f64) -> Option<f64> {
    let oc = ray.origin - s.center;
    let b = oc.dot(ray.dir);
    let c = oc.dot(oc) - s.radius * s.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [-b - sq, -b + sq] {
        if t > T_MIN && t < t_max {
            return Some(t);
        }
    }
    None
}

fn hit_rect(r: &Rect, ray: &Ray, t_max: f64) -> Option<f64> {
    let ai = r.axis.index();
    let d = ray.dir.axis(ai);
    if d.abs() < 1e-12 {
        return None;
    }
    let t = (r.k - ray.origin.axis(ai)) / d;
    if t <= T_MIN || t >= t_max {
        return None;
    }
    let p = ray.origin + ray.dir * t;
    let (ui, vi) = r.axis.others();
    let (u, v) = (p.axis(ui), p.axis(vi));
    if u < r.u0 || u > r.u1 || v < r.v0 || v > r.v1 {
        return None;
    }
    Some(t)
}

/// Slab test returning distance and the outward face normal, handling rays
/// that start inside the box (they hit the exit face from within).
fn hit_box(b: &BoxPrim, ray: &Ray, t_max: f64) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis_near = 0usize;
    let mut axis_far = 0usize;
    for i in 0..3 {
        let inv = 1.0 / ray.dir.axis(i);
        let mut n = (b.min.axis(i) - ray.origin.axis(i)) * inv;
        let mut f = (b.max.axis(i) - ray.origin.axis(i)) * inv;
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        if n > t_near {
            t_near = n;
            axis_near = i;
        }
        if f < t_far {
            t_far = f;
            axis_far = i;
        }
    }
    if t_near > t_far {
        return None;
    }
    let outward = |axis: usize, along_ray: bool| {
        let mut n = [0.0; 3];
        let sign = if ray.dir.axis(axis) >= 0.0 { 1.0 } else { -1.0 };
        n[axis] = if along_ray { sign } else { -sign };
        v3(n[0], n[1], n[2])
    };
    if t_near > T_MIN && t_near < t_max {
        return Some((t_near, outward(axis_near, false)));
    }
    if t_far > T_MIN && t_far < t_max {
        return Some((t_far, outward(axis_far, true)));
    }
    None
}

fn intersect(scene: &Scene, ray: &Ray, t_max: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut closest = t_max;
    for (i, s) in scene.spheres.iter().enumerate() {
        if let Some(t) = hit_sphere(s, ray, closest) {
            closest = t;
            best = Some(Hit { t, surface: Surface::Sphere(i) });
        }
    }
    for (i, q) in scene.quads.iter().enumerate() {
        if let Some(t) = hit_rect(&q.rect, ray, closest) {
            closest = t;
            best = Some(Hit { t, surface: Surface::Quad(i) });
        }
    }
    for (i, b) in scene.boxes.iter().enumerate() {
        if let Some((t, _)) = hit_box(b, ray, closest) {
            closest = t;
            best = Some(Hit { t, surface: Surface::Box(i) });
        }
    }
    for (i, e) in scene.emitters.iter().enumerate() {
        if let Some(t) = hit_rect(&e.rect, ray, closest) {
            closest = t;
            best = Some(Hit { t, surface: Surface::Emitter(i) });
        }
    }
    best
}

fn occluded(scene: &Scene, from: Vec3, to: Vec3) -> bool {
    let delta = to - from;
    let dist = delta.length();
    let ray = Ray { origin: from, dir: delta / dist };
    intersect(scene, &ray, dist - 1e-6).is_some()
}

/// Outward geometric normal at the hit (for closed shapes it points out of
/// the volume; for rects it is the declared axis direction).
fn outward_normal(scene: &Scene, hit: &Hit, ray: &Ray) -> Vec3 {
    let p = ray.origin + ray.dir * hit.t;
    match hit.surface {
        Surface::Sphere(i) => (p - scene.spheres[i].center).normalized(),
        Surface::Quad(i) => scene.quads[i].rect.axis.normal(),
        Surface::Emitter(i) => scene.emitters[i].rect.axis.normal(),
        Surface::Box(i) => {
            hit_box(&scene.boxes[i], ray, hit.t * (1.0 + 1e-9) + 1e-9).map(|(_, n)| n).unwrap()
        }
    }
}

// ---------------------------------------------------------------------
// Sampling lobes

fn cosine_sample(n: Vec3, rng: &mut PathRng) -> (Vec3, f64) {
    let u1 = rng.next_f64();
    let u2 = rng.next_f64();
    let r = u1.sqrt();
    let z = (1.0 - u1).sqrt(); // > 0 since u1 < 1
    let phi = 2.0 * std::f64::consts::PI * u2;
    let (u, v) = basis(n);
    let dir = u * (r * phi.cos()) + v * (r * phi.sin()) + n * z;
    (dir, z / std::f64::consts::PI)
}

fn reflect(d: Vec3, n: Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

fn phong_exponent(roughness: f64) -> f64 {
    (2.0 / (roughness * roughness) - 2.0).max(0.0)
}

fn schlick(cos_i: f64, eta: f64) -> f64 {
    let r0 = ((1.0 - eta) / (1.0 + eta)).powi(2);
    r0 + (1.0 - r0) * (1.0 - cos_i).powi(5)
}

// ---------------------------------------------------------------------
// Next-event estimation

/// Sample one emitter quad uniformly (by index, then by area) and return the
/// estimated contribution `f * G * area * n_emitters * L` together with the
/// radiance of the light that was sampled. Draws exactly three variates.
fn nee(
    scene: &Scene,
    point: Vec3,
    normal: Vec3,
    eval_bsdf: &dyn Fn(Vec3) -> Vec3,
    rng: &mut PathRng,
) -> (Vec3, Option<Vec3>) {
    let pick_u = rng.next_f64();
    let su = rng.next_f64();
    let sv = rng.next_f64();
    if scene.emitters.is_empty() {
        return (Vec3::ZERO, None);
    }
    let n = scene.emitters.len();
    let pick = ((pick_u * n as f64) as usize).min(n - 1);
    let em: &Emitter = &scene.emitters[pick];
    let y = em.rect.point(su, sv);
    let delta = y - point;
    let dist2 = delta.dot(delta);
    if dist2 < 1e-12 {
        return (Vec3::ZERO, None);
    }
    let dist = dist2.sqrt();
    let wl = delta / dist;
    let cos_x = normal.dot(wl);
    let cos_y = em.rect.axis.normal().dot(wl).abs(); // emitters shine from both faces
    if cos_x <= 0.0 || cos_y <= 1e-12 {
        return (Vec3::ZERO, None);
    }
    let origin = point + normal * OFFSET;
    if occluded(scene, origin, y) {
        return (Vec3::ZERO, None);
    }
    let f = eval_bsdf(wl);
    let weight = (n as f64) * em.rect.area() * cos_x * cos_y / dist2;
    (f * weight * em.radiance, Some(em.radiance))
}

// ---------------------------------------------------------------------
// The integrator

/// Lobe the material scatters with, resolved before any sampling so the
/// branch and feature bookkeeping cannot depend on random draws.
enum Lobe {
    Diffuse { albedo: Vec3, nee_ok: bool },
    Glossy { albedo: Vec3, roughness: f64 },
    Mirror,
    Dielectric { ior: f64 },
}

fn classify(material: Material) -> Lobe {
    match material {
        Material::Lambertian { albedo } => Lobe::Diffuse { albedo, nee_ok: true },
        Material::FurnaceWall { rho, .. } => {
            Lobe::Diffuse { albedo: Vec3::splat(rho), nee_ok: false }
        }
        Material::Glossy { albedo, roughness } => Lobe::Glossy { albedo, roughness },
        Material::Mirror => Lobe::Mirror,
        Material::Dielectric { ior } => Lobe::Dielectric { ior },
    }
}

struct EnergyTrack {
    best: f64,
    source: Vec3,
}

impl EnergyTrack {
    fn offer(&mut self, contribution: Vec3, source: Vec3) {
        let score = contribution.mean();
        if score > self.best {
            self.best = score;
            self.source = source;
        }
    }
}

pub fn trace_sample(scene: &Scene, camera_ray: Ray, rng: &mut PathRng) -> PathRecord {
    let mut rec = PathRecord::new();
    let mut ray = camera_ray;
    let mut throughput = Vec3::ONE;
    let mut pdf = 1.0f64;
    let mut depth_total = 0.0f64;
    let mut emitter_hits_count = true; // camera and post-specular rays do
    let mut energy = EnergyTrack { best: 0.0, source: Vec3::ZERO };

    for vertex in 0..MAX_VERTICES {
        let hit = match intersect(scene, &ray, f64::INFINITY) {
            Some(h) => h,
            None => {
                if let Some(env) = scene.environment {
                    // the environment is not NEE-sampled: always collect
                    let c = throughput * env;
                    rec.radiance += c;
                    rec.by_vertex[MAX_VERTICES] += c;
                    energy.offer(c, env);
                }
                break;
            }
        };
        let point = ray.origin + ray.dir * hit.t;
        let raw = outward_normal(scene, &hit, &ray);
        let entering = raw.dot(ray.dir) < 0.0;
        let normal = if entering { raw } else { -raw };
        depth_total += hit.t;

        let material = match hit.surface {
            Surface::Emitter(i) => {
                if emitter_hits_count {
                    let c = throughput * scene.emitters[i].radiance;
                    rec.radiance += c;
                    rec.by_vertex[vertex] += c;
                    energy.offer(c, scene.emitters[i].radiance);
                }
                break; // pure emitters terminate paths
            }
            Surface::Sphere(i) => scene.spheres[i].material,
            Surface::Quad(i) => scene.quads[i].material,
            Surface::Box(i) => scene.boxes[i].material,
        };

        if let Material::FurnaceWall { rho, level } = material {
            // emissive-reflective wall, never NEE-sampled: always collect
            let emitted = Vec3::splat((1.0 - rho) * level);
            let c = throughput * emitted;
            rec.radiance += c;
            rec.by_vertex[vertex] += c;
            energy.offer(c, emitted);
        }

        let lobe = classify(material);
        if rec.feat.is_none() {
            match lobe {
                Lobe::Diffuse { albedo, .. } => {
                    rec.feat = Some(Feat { albedo, normal, depth: depth_total });
                    rec.specular_branch = false;
                }
                Lobe::Glossy { albedo, .. } => {
                    rec.feat = Some(Feat { albedo, normal, depth: depth_total });
                    rec.specular_branch = true;
                }
                Lobe::Mirror | Lobe::Dielectric { .. } => {}
            }
        }

        if vertex == SCATTER_VERTICES {
            break; // terminal vertex: collects emission, never scatters
        }

        match lobe {
            Lobe::Diffuse { albedo, nee_ok } => {
                if nee_ok {
                    let f = move |_wl: Vec3| albedo / std::f64::consts::PI;
                    let (c, src) = nee(scene, point, normal, &f, rng);
                    if let Some(s) = src {
                        let contrib = throughput * c;
                        rec.radiance += contrib;
                        rec.by_vertex[vertex] += contrib;
                        energy.offer(contrib, s);
                    }
                }
                let (wi, p_dir) = cosine_sample(normal, rng);
                let factor = albedo; // (a/pi) * cos / (cos/pi)
                rec.tags[vertex] = TAG_DIFFUSE;
                rec.rough[vertex] = 1.0;
                rec.atten[vertex] = [factor.x, factor.y, factor.z];
                throughput *= factor;
                pdf *= p_dir.max(1e-12);
                ray = Ray { origin: point + normal * OFFSET, dir: wi };
                emitter_hits_count = false;
            }
            Lobe::Glossy { albedo, roughness } => {
                let exp_n = phong_exponent(roughness);
                let mirror_dir = reflect(ray.dir, normal);
                let f = move |wl: Vec3| {
                    let ca = wl.dot(mirror_dir).max(0.0);
                    albedo * ((exp_n + 2.0) / (2.0 * std::f64::consts::PI) * ca.powf(exp_n))
                };
                let (c, src) = nee(scene, point, normal, &f, rng);
                if let Some(s) = src {
                    let contrib = throughput * c;
                    rec.radiance += contrib;
                    rec.by_vertex[vertex] += contrib;
                    energy.offer(contrib, s);
                }
                let u1 = rng.next_f64();
                let u2 = rng.next_f64();
                let cos_a = u1.powf(1.0 / (exp_n + 1.0));
                let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
                let phi = 2.0 * std::f64::consts::PI * u2;
                let (bu, bv) = basis(mirror_dir);
                let wi = bu * (sin_a * phi.cos()) + bv * (sin_a * phi.sin()) + mirror_dir * cos_a;
                rec.tags[vertex] = TAG_GLOSSY;
                rec.rough[vertex] = roughness;
                let p_dir = (exp_n + 1.0) / (2.0 * std::f64::consts::PI) * cos_a.powf(exp_n);
                pdf *= p_dir.max(1e-12);
                let cos_i = wi.dot(normal);
                if cos_i <= 0.0 {
                    // sampled below the horizon: the path carries nothing on
                    rec.atten[vertex] = [0.0; 3];
                    break;
                }
                let factor = albedo * ((exp_n + 2.0) / (exp_n + 1.0) * cos_i);
                rec.atten[vertex] = [factor.x, factor.y, factor.z];
                throughput *= factor;
                ray = Ray { origin: point + normal * OFFSET, dir: wi };
                emitter_hits_count = false;
            }
            Lobe::Mirror => {
                let wi = reflect(ray.dir, normal);
                rec.tags[vertex] = TAG_SPEC_REFLECT;
                rec.rough[vertex] = 0.0;
                rec.atten[vertex] = [1.0; 3];
                ray = Ray { origin: point + normal * OFFSET, dir: wi };
                emitter_hits_count = true;
            }
            Lobe::Dielectric { ior } => {
                let eta = if entering { 1.0 / ior } else { ior };
                let cos_i = (-ray.dir).dot(normal).clamp(0.0, 1.0);
                let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
                let reflect_prob = if sin2_t >= 1.0 { 1.0 } else { schlick(cos_i, eta) };
                let u = rng.next_f64();
                if u < reflect_prob {
                    let wi = reflect(ray.dir, normal);
                    rec.tags[vertex] = TAG_SPEC_REFLECT;
                    ray = Ray { origin: point + normal * OFFSET, dir: wi };
                } else {
                    let cos_t = (1.0 - sin2_t).sqrt();
                    let wi = (ray.dir * eta + normal * (eta * cos_i - cos_t)).normalized();
                    rec.tags[vertex] = TAG_SPEC_TRANSMIT;
                    ray = Ray { origin: point - normal * OFFSET, dir: wi };
                }
                rec.rough[vertex] = 0.0;
                rec.atten[vertex] = [1.0; 3];
                emitter_hits_count = true;
            }
        }
    }

    rec.pdf = pdf.max(1e-30);
    rec.undivided = rec.radiance * rec.pdf;
    rec.energy = energy.source;
    rec
}
