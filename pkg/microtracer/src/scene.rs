//! Scene description: types, the line-oriented text grammar, and its
//! round-trip printer.
//!
//! One declaration per line; `#` starts a comment. The grammar:
//!
//! ```text
//! camera PX PY PZ  LX LY LZ  UX UY UZ  FOV_DEG
//! env R G B
//! sphere CX CY CZ RADIUS <material>
//! quad AXIS K U0 U1 V0 V1 <material>
//! box X0 X1 Y0 Y1 Z0 Z1 <material>
//! emit AXIS K U0 U1 V0 V1 R G B
//! <material> := lambertian R G B | glossy R G B ROUGHNESS | mirror | dielectric IOR
//! ```
//!
//! A quad is an axis-aligned rectangle: AXIS names the fixed coordinate, K
//! its value, and (U, V) span the remaining two axes in x-y-z order. `emit`
//! quads are pure emitters: they radiate from both faces and terminate any
//! path that lands on them.

use std::fmt::Write as _;

use crate::vec3::{v3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two free axes, in x-y-z order.
    pub fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn normal(self) -> Vec3 {
        match self {
            Axis::X => v3(1.0, 0.0, 0.0),
            Axis::Y => v3(0.0, 1.0, 0.0),
            Axis::Z => v3(0.0, 0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Material {
    Lambertian { albedo: Vec3 },
    Glossy { albedo: Vec3, roughness: f64 },
    Mirror,
    Dielectric { ior: f64 },
    /// Emissive-reflective cavity wall used by the furnace check: emits
    /// (1 - rho) * level and reflects diffusely with albedo rho. Not part
    /// of the text grammar; constructed programmatically.
    FurnaceWall { rho: f64, level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub axis: Axis,
    pub k: f64,
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.u1 - self.u0) * (self.v1 - self.v0)
    }

    pub fn point(&self, su: f64, sv: f64) -> Vec3 {
        let (ui, vi) = self.axis.others();
        let mut p = [0.0; 3];
        p[self.axis.index()] = self.k;
        p[ui] = self.u0 + su * (self.u1 - self.u0);
        p[vi] = self.v0 + sv * (self.v1 - self.v0);
        v3(p[0], p[1], p[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quad {
    pub rect: Rect,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrim {
    pub min: Vec3,
    pub max: Vec3,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emitter {
    pub rect: Rect,
    pub radiance: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub spheres: Vec<Sphere>,
    pub quads: Vec<Quad>,
    pub boxes: Vec<BoxPrim>,
    pub emitters: Vec<Emitter>,
    pub environment: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize, // 1-based; 0 means a whole-scene problem
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

struct Tokens<'a> {
    line: usize,
    items: std::slice::Iter<'a, &'a str>,
}

impl<'a> Tokens<'a> {
    fn next_f64(&mut self, what: &str) -> Result<f64, ParseError> {
        let tok = self
            .items
            .next()
            .ok_or_else(|| err(self.line, format!("missing {what}")))?;
        tok.parse::<f64>()
            .map_err(|_| err(self.line, format!("bad {what} '{tok}'")))
    }

    fn next_vec3(&mut self, what: &str) -> Result<Vec3, ParseError> {
        Ok(v3(
            self.next_f64(&format!("{what}.x"))?,
            self.next_f64(&format!("{what}.y"))?,
            self.next_f64(&format!("{what}.z"))?,
        ))
    }

    fn next_axis(&mut self) -> Result<Axis, ParseError> {
        match self.items.next() {
            Some(&"x") => Ok(Axis::X),
            Some(&"y") => Ok(Axis::Y),
            Some(&"z") => Ok(Axis::Z),
            Some(other) => Err(err(self.line, format!("bad axis '{other}'"))),
            None => Err(err(self.line, "missing axis")),
        }
    }

    fn done(&mut self) -> Result<(), ParseError> {
        match self.items.next() {
            Some(extra) => Err(err(self.line, format!("unexpected token '{extra}'"))),
            None => Ok(()),
        }
    }
}

fn check_albedo(line: usize, a: Vec3) -> Result<(), ParseError> {
    if a.min_component() < 0.0 || a.max_component() > 1.0 {
        return Err(err(line, format!("albedo out of [0,1]: {} {} {}", a.x, a.y, a.z)));
    }
    Ok(())
}

fn parse_material(t: &mut Tokens) -> Result<Material, ParseError> {
    let line = t.line;
    match t.items.next() {
        Some(&"lambertian") => {
            let albedo = t.next_vec3("albedo")?;
            check_albedo(line, albedo)?;
            Ok(Material::Lambertian { albedo })
        }
        Some(&"glossy") => {
            let albedo = t.next_vec3("albedo")?;
            check_albedo(line, albedo)?;
            let roughness = t.next_f64("roughness")?;
            if !(roughness > 0.0 && roughness <= 1.0) {
                return Err(err(line, format!("roughness must be in (0,1], got {roughness}")));
            }
            Ok(Material::Glossy { albedo, roughness })
        }
        Some(&"mirror") => Ok(Material::Mirror),
        Some(&"dielectric") => {
            let ior = t.next_f64("ior")?;
            if ior < 1.0 {
                return Err(err(line, format!("ior must be >= 1, got {ior}")));
            }
            Ok(Material::Dielectric { ior })
        }
        Some(other) => Err(err(line, format!("unknown material '{other}'"))),
        None => Err(err(line, "missing material")),
    }
}

fn parse_rect(t: &mut Tokens) -> Result<Rect, ParseError> {
    let line = t.line;
    let axis = t.next_axis()?;
    let k = t.next_f64("plane coordinate")?;
    let u0 = t.next_f64("u0")?;
    let u1 = t.next_f64("u1")?;
    let v0 = t.next_f64("v0")?;
    let v1 = t.next_f64("v1")?;
    if u0 >= u1 || v0 >= v1 {
        return Err(err(line, "rectangle extents must satisfy u0 < u1 and v0 < v1"));
    }
    Ok(Rect { axis, k, u0, u1, v0, v1 })
}

pub fn parse_scene(text: &str) -> Result<Scene, ParseError> {
    let mut camera = None;
    let mut spheres = Vec::new();
    let mut quads = Vec::new();
    let mut boxes = Vec::new();
    let mut emitters = Vec::new();
    let mut environment = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let items: Vec<&str> = body.split_whitespace().collect();
        let mut t = Tokens { line, items: items[1..].iter() };
        match items[0] {
            "camera" => {
                if camera.is_some() {
                    return Err(err(line, "duplicate camera"));
                }
                let position = t.next_vec3("position")?;
                let look_at = t.next_vec3("look_at")?;
                let up = t.next_vec3("up")?;
                let fov_deg = t.next_f64("fov")?;
                t.done()?;
                if !(fov_deg > 0.0 && fov_deg < 180.0) {
                    return Err(err(line, format!("fov must be in (0,180), got {fov_deg}")));
                }
                if (look_at - position).length() == 0.0 {
                    return Err(err(line, "camera position equals look_at"));
                }
                camera = Some(Camera { position, look_at, up, fov_deg });
            }
            "env" => {
                if environment.is_some() {
                    return Err(err(line, "duplicate env"));
                }
                let radiance = t.next_vec3("radiance")?;
                t.done()?;
                if radiance.min_component() < 0.0 {
                    return Err(err(line, "negative environment radiance"));
                }
                environment = Some(radiance);
            }
            "sphere" => {
                let center = t.next_vec3("center")?;
                let radius = t.next_f64("radius")?;
                if radius <= 0.0 {
                    return Err(err(line, format!("sphere radius must be > 0, got {radius}")));
                }
                let material = parse_material(&mut t)?;
                t.done()?;
                spheres.push(Sphere { center, radius, material });
            }
            "quad" => {
                let rect = parse_rect(&mut t)?;
                let material = parse_material(&mut t)?;
                t.done()?;
                quads.push(Quad { rect, material });
            }
            "box" => {
                let x0 = t.next_f64("x0")?;
                let x1 = t.next_f64("x1")?;
                let y0 = t.next_f64("y0")?;
                let y1 = t.next_f64("y1")?;
                let z0 = t.next_f64("z0")?;
                let z1 = t.next_f64("z1")?;
                if x0 >= x1 || y0 >= y1 || z0 >= z1 {
                    return Err(err(line, "box extents must be min < max on every axis"));
                }
                let material = parse_material(&mut t)?;
                t.done()?;
                boxes.push(BoxPrim { min: v3(x0, y0, z0), max: v3(x1, y1, z1), material });
            }
            "emit" => {
                let rect = parse_rect(&mut t)?;
                let radiance = t.next_vec3("radiance")?;
                t.done()?;
                if radiance.min_component() < 0.0 {
                    return Err(err(line, "negative emitter radiance"));
                }
                emitters.push(Emitter { rect, radiance });
            }
            other => return Err(err(line, format!("unknown declaration '{other}'"))),
        }
    }

    let camera = camera.ok_or_else(|| err(0, "scene has no camera"))?;
    if emitters.is_empty() && environment.is_none() {
        return Err(err(0, "scene needs at least one emitter or an environment"));
    }
    Ok(Scene { camera, spheres, quads, boxes, emitters, environment })
}

fn write_material(out: &mut String, m: &Material) {
    match m {
        Material::Lambertian { albedo } => {
            let _ = write!(out, "lambertian {} {} {}", albedo.x, albedo.y, albedo.z);
        }
        Material::Glossy { albedo, roughness } => {
            let _ = write!(out, "glossy {} {} {} {}", albedo.x, albedo.y, albedo.z, roughness);
        }
        Material::Mirror => out.push_str("mirror"),
        Material::Dielectric { ior } => {
            let _ = write!(out, "dielectric {ior}");
        }
        Material::FurnaceWall { .. } => {
            // not representable in the grammar by design
            unreachable!("furnace walls are never printed")
        }
    }
}

fn write_rect(out: &mut String, r: &Rect) {
    let _ = write!(out, "{} {} {} {} {} {}", r.axis.name(), r.k, r.u0, r.u1, r.v0, r.v1);
}

/// Canonical text form; parse(print(scene)) reproduces the scene exactly
/// (f64 formatting is shortest-round-trip).
pub fn print_scene(scene: &Scene) -> String {
    let mut out = String::new();
    let c = &scene.camera;
    let _ = writeln!(
        out,
        "camera {} {} {} {} {} {} {} {} {} {}",
        c.position.x, c.position.y, c.position.z,
        c.look_at.x, c.look_at.y, c.look_at.z,
        c.up.x, c.up.y, c.up.z, c.fov_deg
    );
    if let Some(e) = scene.environment {
        let _ = writeln!(out, "env {} {} {}", e.x, e.y, e.z);
    }
    for s in &scene.spheres {
        let _ = write!(out, "sphere {} {} {} {} ", s.center.x, s.center.y, s.center.z, s.radius);
        write_material(&mut out, &s.material);
        out.push('\n');
    }
    for q in &scene.quads {
        out.push_str("quad ");
        write_rect(&mut out, &q.rect);
        out.push(' ');
        write_material(&mut out, &q.material);
        out.push('\n');
    }
    for b in &scene.boxes {
        let _ = write!(
            out,
            "box {} {} {} {} {} {} ",
            b.min.x, b.max.x, b.min.y, b.max.y, b.min.z, b.max.z
        );
        write_material(&mut out, &b.material);
        out.push('\n');
    }
    for e in &scene.emitters {
        out.push_str("emit ");
        write_rect(&mut out, &e.rect);
        let _ = writeln!(out, " {} {} {}", e.radiance.x, e.radiance.y, e.radiance.z);
    }
    out
}
