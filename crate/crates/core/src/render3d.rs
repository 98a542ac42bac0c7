//! Sphere-traced rendering of a 3D level set, shadow rays, and analytic
//! target shapes.
//!
//! Renders are single-channel radiance. Camera space has `x` along
//! `right`, `y` along `up` and `z` along `forward`, so visible points have
//! positive depth `z`. Pixel rows count downward from the top of the image.

use crate::error::{Error, Result};
use crate::grid::{reinitialize, LevelSetGrid};
use crate::image::ImageBuffer;
use crate::math::{add, axpy, cross, dot, norm, normalize, scale, sub, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Pinhole camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Builds an orthonormal frame from a view direction and an up hint.
    pub fn new(position: Vec3, forward: Vec3, up_hint: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("fov_y must lie in (0, pi), got {fov_y}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("camera resolution must be positive".into()));
        }
        let forward = normalize(forward).ok_or_else(|| Error::InvalidInput("zero view direction".into()))?;
        let right = normalize(cross(forward, up_hint))
            .filter(|r| norm(*r) > 0.5)
            .ok_or_else(|| Error::InvalidInput("up hint is parallel to the view direction".into()))?;
        let up = cross(right, forward);
        Ok(Self { position, right, up, forward, fov_y, width, height })
    }

    pub fn look_at(position: Vec3, target: Vec3, up_hint: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(position, sub(target, position), up_hint, fov_y, width, height)
    }

    /// Size of one pixel on the image plane at unit depth.
    pub fn pixel_size(&self) -> f64 {
        2.0 * (0.5 * self.fov_y).tan() / self.height as f64
    }

    /// Unit ray direction through continuous pixel coordinates (`u` right,
    /// `v` down, pixel centers at half-integers).
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        let ps = self.pixel_size();
        let sx = (u - 0.5 * self.width as f64) * ps;
        let sy = (0.5 * self.height as f64 - v) * ps;
        let d = axpy(axpy(self.forward, sx, self.right), sy, self.up);
        scale(d, 1.0 / norm(d))
    }

    pub fn pixel_dir(&self, x: usize, y: usize) -> Vec3 {
        self.ray_dir(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// World point to camera coordinates `(right, up, forward)`.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.position);
        [dot(d, self.right), dot(d, self.up), dot(d, self.forward)]
    }

    /// Continuous pixel coordinates of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        let ps = self.pixel_size();
        Some([
            c[0] / c[2] / ps + 0.5 * self.width as f64,
            0.5 * self.height as f64 - c[1] / c[2] / ps,
        ])
    }

    /// `px py pz fx fy fz ux uy uz fov_y width height`
    pub fn to_line(&self) -> String {
        let p = self.position;
        let f = self.forward;
        let u = self.up;
        format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            p[0], p[1], p[2], f[0], f[1], f[2], u[0], u[1], u[2], self.fov_y, self.width, self.height
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 12 {
            return Err(Error::Format(format!("camera line needs 12 fields, got {}", t.len())));
        }
        let f = |i: usize| t[i].parse::<f64>().map_err(|_| Error::Format(format!("bad camera field {}", t[i])));
        let n = |i: usize| t[i].parse::<usize>().map_err(|_| Error::Format(format!("bad resolution {}", t[i])));
        Self::new([f(0)?, f(1)?, f(2)?], [f(3)?, f(4)?, f(5)?], [f(6)?, f(7)?, f(8)?], f(9)?, n(10)?, n(11)?)
    }
}

/// One camera per non-empty line; `#` starts a comment.
pub fn read_cameras<R: BufRead>(r: R) -> Result<Vec<Camera>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push(Camera::parse_line(body)?);
        }
    }
    Ok(out)
}

pub fn write_cameras<W: Write>(cams: &[Camera], mut w: W) -> Result<()> {
    for c in cams {
        writeln!(w, "{}", c.to_line())?;
    }
    Ok(())
}

/// Surface shading of level-set hits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shading {
    Constant { albedo: f64 },
    /// Directional light; `light_dir` points from the surface toward the light.
    Lambert { light_dir: Vec3, albedo: f64, ambient: f64 },
    /// Directional light along each camera's view rays.
    Headlight { albedo: f64, ambient: f64 },
}

impl Shading {
    pub fn radiance(&self, normal: Vec3, view_dir: Vec3) -> f64 {
        match *self {
            Shading::Constant { albedo } => albedo,
            Shading::Lambert { light_dir, albedo, ambient } => ambient + albedo * dot(normal, light_dir).max(0.0),
            Shading::Headlight { albedo, ambient } => ambient + albedo * (-dot(normal, view_dir)).max(0.0),
        }
    }
}

/// Analytic plane that receives light and shadows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: f64,
    pub ambient: f64,
}

/// A reference image and the camera it was taken with.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub reference: ImageBuffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel3D {
    pub shading: Shading,
    pub background: f64,
    pub views: Vec<View>,
    pub point_light: Option<Vec3>,
    pub receiver: Option<Receiver>,
}

impl SceneModel3D {
    pub fn new(shading: Shading, background: f64, views: Vec<View>) -> Result<Self> {
        if let Shading::Lambert { light_dir, .. } = shading {
            if (norm(light_dir) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput("light direction must be unit length".into()));
            }
        }
        for (i, v) in views.iter().enumerate() {
            if v.reference.width() != v.camera.width || v.reference.height() != v.camera.height {
                return Err(Error::DimensionMismatch(format!("reference {i} does not match its camera")));
            }
            if v.reference.channels() != 1 {
                return Err(Error::InvalidInput(format!("reference {i} must be single channel")));
            }
        }
        Ok(Self { shading, background, views, point_light: None, receiver: None })
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    /// Unit normal toward `phi > 0`.
    pub normal: Vec3,
    /// Camera-space depth along `forward`.
    pub depth: f64,
    /// Normal dotted with the unit view ray.
    pub ndotv: f64,
}

const MAX_STEPS: usize = 4096;

/// Ray parameter interval inside an axis-aligned box.
pub fn clip_aabb(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Sphere tracing of an implicit function along `origin + t dir` for
/// `t in [t0, t1]`. Steps by `0.9 f` (never less than `min_step`) and
/// bisects once the sign flips. Returns the first `t` with `|f| <= tol`.
pub fn march(
    f: &impl Fn(Vec3) -> f64,
    origin: Vec3,
    dir: Vec3,
    t0: f64,
    t1: f64,
    tol: f64,
    min_step: f64,
) -> Option<f64> {
    let at = |t: f64| f(axpy(origin, t, dir));
    let mut t = t0;
    let mut v = at(t);
    if v <= tol {
        return Some(t);
    }
    for _ in 0..MAX_STEPS {
        let tn = t + (0.9 * v).max(min_step);
        if tn > t1 {
            // last chance at the far end of the interval
            let ve = at(t1);
            if ve > tol {
                return None;
            }
            return Some(bisect(&at, t, t1, tol));
        }
        let vn = at(tn);
        if vn <= tol {
            if vn >= -tol {
                return Some(tn);
            }
            return Some(bisect(&at, t, tn, tol));
        }
        t = tn;
        v = vn;
    }
    None
}

fn bisect(at: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let vm = at(m);
        if vm.abs() <= tol {
            return m;
        }
        if vm > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn grid_box(g: &LevelSetGrid) -> (Vec3, Vec3) {
    g.bounds()
}

/// First level-set crossing along a ray, as a ray parameter.
pub fn trace_ray(g: &LevelSetGrid, origin: Vec3, dir: Vec3) -> Option<f64> {
    let (lo, hi) = grid_box(g);
    let (t0, t1) = clip_aabb(origin, dir, lo, hi)?;
    let h = g.spacing();
    march(&|p| g.sample(p), origin, dir, t0, t1, 1e-3 * h, 1e-2 * h)
}

fn make_hit(g: &LevelSetGrid, cam: &Camera, dir: Vec3, point: Vec3) -> Hit {
    let normal = normalize(g.sample_gradient(point)).unwrap_or(scale(dir, -1.0));
    Hit { point, normal, depth: dot(sub(point, cam.position), cam.forward), ndotv: dot(normal, dir) }
}

/// Primary visibility through one pixel center.
pub fn trace(g: &LevelSetGrid, cam: &Camera, x: usize, y: usize) -> Option<Hit> {
    let dir = cam.pixel_dir(x, y);
    let t = trace_ray(g, cam.position, dir)?;
    Some(make_hit(g, cam, dir, axpy(cam.position, t, dir)))
}

/// Result of a shadow query between two points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadowHit {
    pub occluded: bool,
    pub occluder: Option<Vec3>,
}

fn segment_offset(g: &LevelSetGrid, len: f64) -> f64 {
    (0.5 * g.spacing()).min(0.25 * len)
}

/// First surface crossing on the segment `from -> to`, ignoring a short
/// offset at both ends.
pub fn shadow_ray(g: &LevelSetGrid, from: Vec3, to: Vec3) -> ShadowHit {
    let d = sub(to, from);
    let len = norm(d);
    let none = ShadowHit { occluded: false, occluder: None };
    if len < 1e-12 {
        return none;
    }
    let dir = scale(d, 1.0 / len);
    let off = segment_offset(g, len);
    let (lo, hi) = grid_box(g);
    let Some((a, b)) = clip_aabb(from, dir, lo, hi) else { return none };
    let (t0, t1) = (a.max(off), b.min(len - off));
    if t0 > t1 {
        return none;
    }
    let h = g.spacing();
    match march(&|p| g.sample(p), from, dir, t0, t1, 1e-3 * h, 1e-2 * h) {
        Some(t) => ShadowHit { occluded: true, occluder: Some(axpy(from, t, dir)) },
        None => none,
    }
}

/// Every zero crossing (entries and exits) on the segment `from -> to`.
pub fn segment_crossings(g: &LevelSetGrid, from: Vec3, to: Vec3) -> Vec<Vec3> {
    let d = sub(to, from);
    let len = norm(d);
    if len < 1e-12 {
        return Vec::new();
    }
    let dir = scale(d, 1.0 / len);
    let off = segment_offset(g, len);
    let (lo, hi) = grid_box(g);
    let Some((a, b)) = clip_aabb(from, dir, lo, hi) else { return Vec::new() };
    let (mut t, t1) = (a.max(off), b.min(len - off));
    let h = g.spacing();
    let (tol, min_step) = (1e-3 * h, 1e-2 * h);
    let mut out = Vec::new();
    let mut inside = g.sample(axpy(from, t, dir)) <= 0.0;
    while t < t1 && out.len() < 64 {
        let found = if inside {
            march(&|p| -g.sample(p), from, dir, t, t1, tol, min_step)
        } else {
            march(&|p| g.sample(p), from, dir, t, t1, tol, min_step)
        };
        let Some(tc) = found else { break };
        if !(out.is_empty() && tc <= t + tol && inside) {
            out.push(axpy(from, tc, dir));
        }
        inside = !inside;
        t = tc + 4.0 * tol.max(min_step);
    }
    out
}

/// Per-pixel outputs of a render pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub radiance: ImageBuffer,
    /// The ray hit the level set (not the receiver plane).
    pub hit: Vec<bool>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub point: Vec<Vec3>,
    pub ndotv: Vec<f64>,
    /// The ray hit the receiver plane.
    pub receiver: Vec<bool>,
    /// Radiance with every shadow ray unblocked; equals `radiance` away from
    /// receiver pixels.
    pub unshadowed: Vec<f64>,
}

impl RenderBuffers {
    pub fn hit_count(&self) -> usize {
        self.hit.iter().filter(|&&b| b).count()
    }
}

fn receiver_shade(rcv: &Receiver, p: Vec3, light: Option<Vec3>, lit: bool) -> f64 {
    let direct = match light {
        Some(l) => normalize(sub(l, p)).map_or(0.0, |d| dot(rcv.normal, d).max(0.0)),
        None => 1.0,
    };
    rcv.ambient + rcv.albedo * direct * if lit { 1.0 } else { 0.0 }
}

pub fn render(g: &LevelSetGrid, cam: &Camera, scene: &SceneModel3D) -> RenderBuffers {
    let (w, h) = (cam.width, cam.height);
    struct Px {
        rad: f64,
        hit: Option<Hit>,
        receiver: Option<Vec3>,
        unshadowed: f64,
    }
    let px: Vec<Px> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let dir = cam.pixel_dir(x, y);
            let t_grid = trace_ray(g, cam.position, dir);
            let t_plane = scene.receiver.as_ref().and_then(|r| {
                let den = dot(r.normal, dir);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = dot(r.normal, sub(r.point, cam.position)) / den;
                (t > 0.0).then_some(t)
            });
            match (t_grid, t_plane) {
                (Some(tg), tp) if tp.map_or(true, |tp| tg <= tp) => {
                    let hit = make_hit(g, cam, dir, axpy(cam.position, tg, dir));
                    let rad = scene.shading.radiance(hit.normal, dir);
                    Px { rad, hit: Some(hit), receiver: None, unshadowed: rad }
                }
                (_, Some(tp)) => {
                    let r = scene.receiver.as_ref().expect("plane hit implies receiver");
                    let p = axpy(cam.position, tp, dir);
                    let lit = scene.point_light.map_or(true, |l| !shadow_ray(g, p, l).occluded);
                    Px {
                        rad: receiver_shade(r, p, scene.point_light, lit),
                        hit: None,
                        receiver: Some(p),
                        unshadowed: receiver_shade(r, p, scene.point_light, true),
                    }
                }
                _ => Px { rad: scene.background, hit: None, receiver: None, unshadowed: scene.background },
            }
        })
        .collect();
    let radiance = ImageBuffer::scalar(w, h, px.iter().map(|p| p.rad).collect()).expect("finite radiance");
    RenderBuffers {
        width: w,
        height: h,
        radiance,
        hit: px.iter().map(|p| p.hit.is_some()).collect(),
        depth: px.iter().map(|p| p.hit.map_or(0.0, |h| h.depth)).collect(),
        normal: px.iter().map(|p| p.hit.map_or([0.0; 3], |h| h.normal)).collect(),
        point: px.iter().map(|p| p.hit.map(|h| h.point).or(p.receiver).unwrap_or([0.0; 3])).collect(),
        ndotv: px.iter().map(|p| p.hit.map_or(0.0, |h| h.ndotv)).collect(),
        receiver: px.iter().map(|p| p.receiver.is_some()).collect(),
        unshadowed: px.iter().map(|p| p.unshadowed).collect(),
    }
}

/// Analytic shapes used as reconstruction targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetShape {
    Sphere { radius: f64 },
    /// Ring in the xy-plane around the z axis.
    Torus { major: f64, minor: f64 },
    /// Sphere with three orthogonal cylindrical holes through its center.
    Holeball { radius: f64, hole_radius: f64 },
    /// Axis-aligned box centered at the origin.
    Box { half: Vec3 },
}

impl TargetShape {
    /// Signed distance (exact except along the holeball's hole rims).
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            TargetShape::Sphere { radius } => norm(p) - radius,
            TargetShape::Torus { major, minor } => {
                let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (q * q + p[2] * p[2]).sqrt() - minor
            }
            TargetShape::Holeball { radius, hole_radius } => {
                let cyl = |a: f64, b: f64| (a * a + b * b).sqrt() - hole_radius;
                (norm(p) - radius)
                    .max(-cyl(p[1], p[2]))
                    .max(-cyl(p[0], p[2]))
                    .max(-cyl(p[0], p[1]))
            }
            TargetShape::Box { half } => {
                let q = [p[0].abs() - half[0], p[1].abs() - half[1], p[2].abs() - half[2]];
                let outside = norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }
}

/// The shape sampled on an `n^3` grid over `[-half, half]^3`. CSG shapes are
/// re-distanced afterwards.
pub fn make_target(shape: &TargetShape, n: usize, half: f64) -> Result<LevelSetGrid> {
    let g = LevelSetGrid::cube(n, half, |p| shape.sdf(p))?;
    Ok(match shape {
        TargetShape::Holeball { .. } => reinitialize(&g, n / 2),
        _ => g,
    })
}

/// Reference images of a target seen from each camera.
pub fn render_references(target: &LevelSetGrid, cams: &[Camera], shading: &Shading, background: f64) -> Result<SceneModel3D> {
    let probe = SceneModel3D::new(shading.clone(), background, Vec::new())?;
    let views = cams
        .iter()
        .map(|c| View { camera: c.clone(), reference: render(target, c, &probe).radiance })
        .collect();
    SceneModel3D::new(shading.clone(), background, views)
}

/// Offset a point along the camera's right/up axes; used to aim probes.
pub fn offset_in_view(cam: &Camera, p: Vec3, dx: f64, dy: f64) -> Vec3 {
    add(axpy(p, dx, cam.right), scale(cam.up, dy))
}
