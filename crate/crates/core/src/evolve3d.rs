//! Shape and topological derivatives of the multi-view image functional,
//! their transfer to the grid, and the 3D evolution loop.
//!
//! The functional of one view is `I = sum_px g(px) * ps^2`, with `g` the
//! per-pixel error of the rendered radiance and `ps` the pixel size at unit
//! depth, so `I` approximates an integral over the image plane at depth 1.
//! Fields are speed oriented as in 2D: positive speed carves material away.
//! Camera-space points `x` have their origin at the camera and `z` along the
//! view direction.

use crate::error::{Error, Result};
pub use crate::evolve2d::descent_fraction;
use crate::evolve2d::{advance, richardson_limit};
use crate::grid::{curvature, extract_mesh, mean_curvature_at, reinitialize_banded, LevelSetGrid, Mollifier, TriMesh};
use crate::image::ImageBuffer;
use crate::math::{axpy, dot, norm, normalize, sub, Vec3};
use crate::render3d::{clip_aabb, march, render, segment_crossings, Camera, RenderBuffers, SceneModel3D};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::io::Write;

/// Per-pixel errors of one rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewResiduals {
    pub width: usize,
    pub height: usize,
    /// Current error `(L_hat - L)^2` at every pixel.
    pub g: Vec<f64>,
    /// Error if the level set were absent along the pixel's ray: background
    /// radiance at hits and misses, unshadowed radiance on the receiver.
    pub g_bg: Vec<f64>,
    /// Signed error `L_hat - L`.
    pub signed: Vec<f64>,
}

impl ViewResiduals {
    /// `sum g * ps^2`.
    pub fn functional(&self, cam: &Camera) -> f64 {
        let ps = cam.pixel_size();
        self.g.iter().sum::<f64>() * ps * ps
    }
}

pub fn residuals3d(buf: &RenderBuffers, reference: &ImageBuffer, background: f64) -> Result<ViewResiduals> {
    if reference.width() != buf.width || reference.height() != buf.height || reference.channels() != 1 {
        return Err(Error::DimensionMismatch("reference does not match the render".into()));
    }
    let n = buf.width * buf.height;
    let mut g = Vec::with_capacity(n);
    let mut g_bg = Vec::with_capacity(n);
    let mut signed = Vec::with_capacity(n);
    for i in 0..n {
        let l = reference.data()[i];
        let lh = buf.radiance.data()[i];
        let alt = if buf.receiver[i] { buf.unshadowed[i] } else { background };
        g.push((lh - l) * (lh - l));
        g_bg.push((alt - l) * (alt - l));
        signed.push(lh - l);
    }
    Ok(ViewResiduals { width: buf.width, height: buf.height, g, g_bg, signed })
}

/// Which residual the shading term differentiates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadingResidual {
    #[default]
    Squared,
    Signed,
}

/// Curvature used by the topological derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdCurvature {
    /// Mean curvature of the current grid at each hit.
    Local,
    /// A fixed value.
    Constant(f64),
    /// Median mean curvature over the visible hits of the first iteration.
    #[default]
    InitialMedian,
}

fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = y * w + x - 1;
    }
    if x + 1 < w {
        out[1] = y * w + x + 1;
    }
    if y > 0 {
        out[2] = (y - 1) * w + x;
    }
    if y + 1 < h {
        out[3] = (y + 1) * w + x;
    }
    out.into_iter().filter(|&i| i != usize::MAX)
}

/// `-grad g . x / x_z^3` at hits, with `grad g` from screen-space central
/// differences of `field` scaled to world units by the pixel footprint at
/// the hit's depth. Zero next to misses and depth jumps over 5%.
pub fn shading_term(buf: &RenderBuffers, field: &[f64], cam: &Camera) -> Vec<f64> {
    let (w, h) = (buf.width, buf.height);
    let ps = cam.pixel_size();
    let mut out = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let i = y * w + x;
            if !buf.hit[i] {
                continue;
            }
            let d = buf.depth[i];
            let smooth = [i - 1, i + 1, i - w, i + w]
                .iter()
                .all(|&j| buf.hit[j] && (buf.depth[j] - d).abs() <= 0.05 * d);
            if !smooth {
                continue;
            }
            let foot = d * ps;
            let gx = (field[i + 1] - field[i - 1]) / (2.0 * foot);
            // rows grow downward, camera y grows upward
            let gy = (field[i - w] - field[i + w]) / (2.0 * foot);
            let c = cam.to_camera(buf.point[i]);
            out[i] = -(gx * c[0] + gy * c[1]) / c[2].powi(3);
        }
    }
    out
}

/// Pixels within this many steps of the silhouette inherit its contour
/// difference.
const CONTOUR_REACH: usize = 3;

/// Error difference across the silhouette, carried to hits near it.
///
/// At a hit with a missed 4-neighbor the value averages the hit's own
/// `g - g_bg` with, over missed neighbors, the error that neighbor would have
/// if it showed the hit's radiance minus its current error. Positive values
/// mean the silhouette should retreat.
pub fn contour_difference(buf: &RenderBuffers, res: &ViewResiduals, reference: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (buf.width, buf.height);
    let mut val = vec![0.0; w * h];
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !buf.hit[i] {
                continue;
            }
            let lh = buf.radiance.data()[i];
            let (mut s, mut k) = (0.0, 0usize);
            for j in neighbors4(x, y, w, h) {
                if !buf.hit[j] {
                    let l = reference.data()[j];
                    s += (lh - l) * (lh - l) - res.g[j];
                    k += 1;
                }
            }
            if k > 0 {
                val[i] = 0.5 * ((res.g[i] - res.g_bg[i]) + s / k as f64);
                dist[i] = 0;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        if dist[i] >= CONTOUR_REACH {
            continue;
        }
        let (x, y) = (i % w, i / w);
        for j in neighbors4(x, y, w, h) {
            if buf.hit[j] && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                val[j] = val[i];
                queue.push_back(j);
            }
        }
    }
    val
}

/// Silhouette term: contour difference times `kappa |x|^2 / x_z^3` times a
/// mollified Dirac of `n . view` with half-width `sil_eps`; `kappa` is the
/// grid's mean curvature at the hit.
pub fn visibility_term(
    buf: &RenderBuffers,
    res: &ViewResiduals,
    reference: &ImageBuffer,
    cam: &Camera,
    g: &LevelSetGrid,
    sil_eps: f64,
) -> Result<Vec<f64>> {
    if !(sil_eps > 0.0) {
        return Err(Error::InvalidInput("sil_eps must be positive".into()));
    }
    let m = Mollifier::new(sil_eps);
    let diff = contour_difference(buf, res, reference);
    Ok((0..diff.len())
        .map(|i| {
            if !buf.hit[i] || diff[i] == 0.0 {
                return 0.0;
            }
            let dl = m.delta(buf.ndotv[i]);
            if dl == 0.0 {
                return 0.0;
            }
            let c = cam.to_camera(buf.point[i]);
            diff[i] * mean_curvature_at(g, buf.point[i]) * dot(c, c) / c[2].powi(3) * dl
        })
        .collect())
}

/// Conic-carve topological derivative `(g - g_bg) kappa |y|^2 / y_z^3` at
/// every hit; `kappa[i]` is the curvature to use at pixel `i`.
pub fn topological_derivative_3d(buf: &RenderBuffers, res: &ViewResiduals, cam: &Camera, kappa: &[f64]) -> Vec<f64> {
    (0..buf.hit.len())
        .map(|i| {
            if !buf.hit[i] {
                return 0.0;
            }
            let y = cam.to_camera(buf.point[i]);
            (res.g[i] - res.g_bg[i]) * kappa[i] * dot(y, y) / y[2].powi(3)
        })
        .collect()
}

/// Mean curvature at each hit (0 elsewhere).
pub fn hit_curvatures(buf: &RenderBuffers, g: &LevelSetGrid) -> Vec<f64> {
    (0..buf.hit.len())
        .map(|i| if buf.hit[i] { mean_curvature_at(g, buf.point[i]) } else { 0.0 })
        .collect()
}

/// Topological derivative of the shading functional for a carve at the
/// occluder point `x_prime` on the segment from the shading point `x` to the
/// light. The frame's `z` axis runs from `x` toward the light.
pub fn secondary_td(x: Vec3, x_prime: Vec3, light: Vec3, g: f64, g_bg: f64, kappa: f64) -> Result<f64> {
    let axis = normalize(sub(light, x)).ok_or_else(|| Error::InvalidInput("light at the shading point".into()))?;
    let d = sub(x_prime, x);
    let dz = dot(d, axis);
    if dz.abs() < 1e-6 {
        return Err(Error::InvalidInput("grazing secondary ray".into()));
    }
    Ok((g - g_bg) * kappa * dot(d, d) / dz.powi(3))
}

/// Derivative terms at one visible surface point of one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSampleDeriv {
    pub point: Vec3,
    pub shading_term: f64,
    pub visibility_term: f64,
    pub td: f64,
    pub view_id: usize,
}

impl SurfaceSampleDeriv {
    pub fn speed(&self, lambda_sd: f64, lambda_td: f64) -> f64 {
        lambda_sd * (self.shading_term + self.visibility_term) + lambda_td * self.td
    }
}

/// Normal speed on grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedGrid3D {
    pub values: Vec<f64>,
    /// Accumulated splat weight per node.
    pub weight: Vec<f64>,
}

impl SpeedGrid3D {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Trilinearly splat sample speeds onto the grid, then give every node with
/// `|phi| <= band_cells * h` the weighted average found at its projection
/// onto the zero level. Other nodes get zero speed.
pub fn splat_and_extend(
    samples: &[SurfaceSampleDeriv],
    g: &LevelSetGrid,
    lambda_sd: f64,
    lambda_td: f64,
    band_cells: f64,
) -> Result<SpeedGrid3D> {
    if g.ndim() != 3 {
        return Err(Error::InvalidGrid("speed splatting needs a 3D grid".into()));
    }
    let n = g.len();
    let mut sum = vec![0.0; n];
    let mut weight = vec![0.0; n];
    // sequential, so the result does not depend on the thread count
    for s in samples {
        let v = s.speed(lambda_sd, lambda_td);
        if !v.is_finite() || s.point.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("surface sample".into()));
        }
        for (i, w) in g.stencil(s.point) {
            sum[i] += w * v;
            weight[i] += w;
        }
    }
    let band = band_cells * g.spacing();
    let values = (0..n)
        .map(|i| {
            let phi = g.values()[i];
            if phi.abs() > band {
                return 0.0;
            }
            let p = g.position(g.node(i));
            let q = match normalize(g.sample_gradient(p)) {
                Some(nrm) => axpy(p, -phi, nrm),
                None => p,
            };
            let (mut s, mut wt) = (0.0, 0.0);
            for (j, w) in g.stencil(q) {
                s += w * sum[j];
                wt += w * weight[j];
            }
            if wt > 1e-12 {
                s / wt
            } else {
                0.0
            }
        })
        .collect();
    Ok(SpeedGrid3D { values, weight })
}

/// Adds the feature-size filter to `speed` on band nodes: `lambda h` times
/// the part of the curvature above `threshold / h`. Features resolved by the
/// grid are left alone; thin fins and single-node islands shrink. Concave
/// creases are not touched, so the filter never fills a carved pit.
/// Returns the largest stable time step for the added diffusion.
pub fn add_feature_filter(g: &LevelSetGrid, speed: &mut SpeedGrid3D, lambda: f64, threshold: f64, band_cells: f64) -> f64 {
    if lambda == 0.0 {
        return f64::INFINITY;
    }
    let h = g.spacing();
    let band = band_cells * h;
    let kt = threshold / h;
    let extra: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if g.values()[i].abs() > band {
                return 0.0;
            }
            let k = curvature(g, g.node(i));
            // one cell of radius is as sharp as the grid resolves
            lambda * h * (k.min(1.0 / h) - kt).max(0.0)
        })
        .collect();
    for (s, e) in speed.values.iter_mut().zip(extra) {
        *s += e;
    }
    // explicit diffusion with coefficient lambda h in three dimensions
    h / (6.0 * lambda)
}

/// One explicit step of `phi_t = speed |grad phi|` at CFL number `dt_cfl`.
pub fn step3d(g: &LevelSetGrid, speed: &SpeedGrid3D, dt_cfl: f64) -> Result<(LevelSetGrid, f64)> {
    step3d_capped(g, speed, dt_cfl, f64::INFINITY)
}

/// `step3d` with an upper bound on the time step.
pub fn step3d_capped(g: &LevelSetGrid, speed: &SpeedGrid3D, dt_cfl: f64, dt_max: f64) -> Result<(LevelSetGrid, f64)> {
    if speed.values.len() != g.len() {
        return Err(Error::DimensionMismatch("speed grid and level set differ".into()));
    }
    if speed.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("speed grid".into()));
    }
    let vmax = speed.max_abs();
    if vmax == 0.0 {
        return Ok((g.clone(), 0.0));
    }
    let dt = (dt_cfl * g.spacing() / vmax).min(dt_max);
    Ok((advance(g, &speed.values, dt), dt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evolution3DConfig {
    pub dt_cfl: f64,
    pub max_iters: usize,
    pub reinit_every: usize,
    pub reinit_iters: usize,
    pub reinit_band: usize,
    /// Weight of the shading and silhouette terms.
    pub lambda_sd: f64,
    /// Weight of the topological derivative.
    pub lambda_td: f64,
    /// Half-width of the silhouette Dirac in `n . view` units.
    pub sil_eps: f64,
    /// Half-width, in cells, of the band that receives extended speeds.
    pub extension_band: f64,
    pub td_curvature: TdCurvature,
    pub shading_residual: ShadingResidual,
    /// The run ends when the lowest I of the last `stop_window` iterations
    /// improves on the earlier best by less than this fraction; 0 disables
    /// the test.
    pub stop_tol: f64,
    pub stop_window: usize,
    /// Compute genus and chamfer every this many iterations (and at the end).
    pub metrics_every: usize,
    /// Weight of the feature-size filter: curvature flow acting only where
    /// `curvature * h` exceeds `smooth_threshold`. 0 disables it.
    pub lambda_smooth: f64,
    pub smooth_threshold: f64,
}

impl Default for Evolution3DConfig {
    fn default() -> Self {
        Self {
            dt_cfl: 0.25,
            max_iters: 200,
            reinit_every: 5,
            reinit_iters: 5,
            reinit_band: 4,
            lambda_sd: 1.0,
            lambda_td: 0.5,
            sil_eps: 0.1,
            extension_band: 3.0,
            td_curvature: TdCurvature::InitialMedian,
            shading_residual: ShadingResidual::Squared,
            stop_tol: 0.0,
            stop_window: 10,
            metrics_every: 1,
            lambda_smooth: 0.0,
            smooth_threshold: 0.35,
        }
    }
}

impl Evolution3DConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.dt_cfl > 0.0 && self.dt_cfl <= 1.0) {
            return bad("dt_cfl must lie in (0, 1]");
        }
        if !(self.lambda_sd >= 0.0 && self.lambda_td >= 0.0) {
            return bad("lambda weights must be non-negative");
        }
        if !(self.sil_eps > 0.0) {
            return bad("sil_eps must be positive");
        }
        if !(self.extension_band >= 1.0) {
            return bad("extension_band must be at least one cell");
        }
        if !(self.lambda_smooth >= 0.0 && self.smooth_threshold >= 0.0) {
            return bad("smoothing parameters must be non-negative");
        }
        if !(self.stop_tol >= 0.0) || self.metrics_every == 0 {
            return bad("stop_tol must be non-negative and metrics_every positive");
        }
        if let TdCurvature::Constant(k) = self.td_curvature {
            if !k.is_finite() {
                return bad("constant curvature must be finite");
            }
        }
        Ok(())
    }
}

/// Per-view evaluation at the current shape.
pub struct ViewEval {
    pub buffers: RenderBuffers,
    pub residuals: ViewResiduals,
    pub value: f64,
}

pub fn evaluate_views(g: &LevelSetGrid, scene: &SceneModel3D) -> Result<Vec<ViewEval>> {
    scene
        .views
        .iter()
        .map(|v| {
            let buffers = render(g, &v.camera, scene);
            let residuals = residuals3d(&buffers, &v.reference, scene.background)?;
            let value = residuals.functional(&v.camera);
            Ok(ViewEval { buffers, residuals, value })
        })
        .collect()
}

/// Median mean curvature over the visible hits of all views.
pub fn median_visible_curvature(g: &LevelSetGrid, evals: &[ViewEval]) -> f64 {
    let mut ks: Vec<f64> = evals
        .iter()
        .flat_map(|e| hit_curvatures(&e.buffers, g).into_iter().zip(&e.buffers.hit).filter(|(_, &h)| h).map(|(k, _)| k))
        .collect();
    if ks.is_empty() {
        return 0.0;
    }
    ks.sort_by(f64::total_cmp);
    ks[ks.len() / 2]
}

/// Derivative samples of every view. The topological derivative is kept
/// one-sided (carving only), as nothing in 3D nucleates new material.
pub fn collect_samples(
    g: &LevelSetGrid,
    scene: &SceneModel3D,
    evals: &[ViewEval],
    cfg: &Evolution3DConfig,
    kappa_td: Option<f64>,
) -> Result<Vec<SurfaceSampleDeriv>> {
    let mut out = Vec::new();
    for (k, (e, v)) in evals.iter().zip(&scene.views).enumerate() {
        let buf = &e.buffers;
        let field = match cfg.shading_residual {
            ShadingResidual::Squared => &e.residuals.g,
            ShadingResidual::Signed => &e.residuals.signed,
        };
        let shading = if cfg.lambda_sd > 0.0 { shading_term(buf, field, &v.camera) } else { vec![0.0; field.len()] };
        let vis = if cfg.lambda_sd > 0.0 {
            visibility_term(buf, &e.residuals, &v.reference, &v.camera, g, cfg.sil_eps)?
        } else {
            vec![0.0; field.len()]
        };
        let td = if cfg.lambda_td > 0.0 {
            let kappa = match kappa_td {
                Some(c) => buf.hit.iter().map(|&h| if h { c } else { 0.0 }).collect(),
                None => hit_curvatures(buf, g),
            };
            topological_derivative_3d(buf, &e.residuals, &v.camera, &kappa)
        } else {
            vec![0.0; field.len()]
        };
        for i in (0..buf.hit.len()).filter(|&i| buf.hit[i]) {
            out.push(SurfaceSampleDeriv {
                point: buf.point[i],
                shading_term: shading[i],
                visibility_term: vis[i],
                td: td[i].max(0.0),
                view_id: k,
            });
        }
    }
    Ok(out)
}

/// Symmetric mean nearest-neighbor distance between two point sets.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    0.5 * (mean_nearest(a, b) + mean_nearest(b, a))
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let (lo, hi) = to.iter().fold(([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]), |(mut lo, mut hi), p| {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        (lo, hi)
    });
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
    let cell = extent / (to.len() as f64).cbrt().max(1.0);
    let key = |p: Vec3| -> [i64; 3] { std::array::from_fn(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in to.iter().enumerate() {
        buckets.entry(key(*p)).or_default().push(i);
    }
    let total: f64 = from
        .iter()
        .map(|&p| {
            let k = key(p);
            let mut best = f64::INFINITY;
            let mut r = 0i64;
            // grow the search shell until it cannot hold anything closer
            loop {
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(ids) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                                for &j in ids {
                                    best = best.min(norm(sub(p, to[j])));
                                }
                            }
                        }
                    }
                }
                if best <= r as f64 * cell || r > 4096 {
                    break;
                }
                r += 1;
            }
            best
        })
        .sum();
    total / from.len() as f64
}

/// One row of the 3D optimization history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow3D {
    pub iter: usize,
    pub value: f64,
    pub genus: Option<i64>,
    pub chamfer: Option<f64>,
    pub dt: f64,
    pub after_reinit: bool,
}

pub fn write_history3d_csv<W: Write>(rows: &[HistoryRow3D], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,I,genus,chamfer,dt")?;
    for r in rows {
        let genus = r.genus.map_or(String::new(), |g| g.to_string());
        let chamfer = r.chamfer.map_or(String::new(), |c| format!("{c:.6e}"));
        writeln!(w, "{},{:.9e},{},{},{:.6e}", r.iter, r.value, genus, chamfer, r.dt)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Optimization3D {
    pub grid: LevelSetGrid,
    pub history: Vec<HistoryRow3D>,
    /// Curvature the topological derivative used, when fixed.
    pub kappa_td: Option<f64>,
    /// Stopped on the plateau rule rather than the iteration cap.
    pub converged: bool,
}

impl Optimization3D {
    pub fn final_mesh(&self) -> TriMesh {
        extract_mesh(&self.grid)
    }

    /// Fraction of steps, excluding those straddling a reinitialization,
    /// that did not increase I.
    pub fn descent_fraction(&self) -> f64 {
        descent_fraction(self.history.iter().map(|r| (r.value, r.after_reinit, r.dt)))
    }
}

/// Called with the iteration index and grid after each evaluation.
pub type Observer3D<'a> = &'a mut dyn FnMut(usize, &LevelSetGrid);

/// render -> residuals -> per-view terms -> splat and extend -> step, with
/// banded reinitialization after motion.
pub fn optimize3d(
    init: &LevelSetGrid,
    scene: &SceneModel3D,
    cfg: &Evolution3DConfig,
    target_points: Option<&[Vec3]>,
    mut observer: Option<Observer3D<'_>>,
) -> Result<Optimization3D> {
    cfg.validate()?;
    if init.ndim() != 3 {
        return Err(Error::InvalidGrid("3D optimization needs a 3D grid".into()));
    }
    if scene.views.is_empty() {
        return Err(Error::InvalidInput("no views".into()));
    }
    let mut g = init.clone();
    let mut history = Vec::new();
    let mut kappa_td = None;
    let mut dt = 0.0;
    let mut after_reinit = false;
    let mut moved_since_reinit = 0usize;
    let mut converged = false;
    for it in 0..=cfg.max_iters {
        let evals = evaluate_views(&g, scene)?;
        let value: f64 = evals.iter().map(|e| e.value).sum();
        if it == 0 {
            kappa_td = match cfg.td_curvature {
                TdCurvature::Local => None,
                TdCurvature::Constant(k) => Some(k),
                TdCurvature::InitialMedian => Some(median_visible_curvature(&g, &evals)),
            };
        }
        // plateau: the best value of the last window, this one included,
        // against the best before it
        let stop = cfg.stop_tol > 0.0 && it >= cfg.stop_window && {
            let split = history.len() + 1 - cfg.stop_window;
            let best = |rows: &[HistoryRow3D]| rows.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
            let before = best(&history[..split]);
            before - best(&history[split..]).min(value) <= cfg.stop_tol * before.abs()
        };
        let last = it == cfg.max_iters || stop;
        let (genus, chamfer) = if it % cfg.metrics_every == 0 || last {
            let mesh = extract_mesh(&g);
            (Some(mesh.genus()), target_points.map(|t| chamfer_distance(&mesh.vertices, t)))
        } else {
            (None, None)
        };
        history.push(HistoryRow3D { iter: it, value, genus, chamfer, dt, after_reinit });
        if let Some(obs) = observer.as_mut() {
            obs(it, &g);
        }
        if last {
            converged = stop;
            break;
        }
        let samples = collect_samples(&g, scene, &evals, cfg, kappa_td)?;
        let mut speed = splat_and_extend(&samples, &g, cfg.lambda_sd, cfg.lambda_td, cfg.extension_band)?;
        let dt_max = add_feature_filter(&g, &mut speed, cfg.lambda_smooth, cfg.smooth_threshold, cfg.extension_band);
        let (next, used) = step3d_capped(&g, &speed, cfg.dt_cfl, dt_max)?;
        g = next;
        dt = used;
        if used > 0.0 {
            moved_since_reinit += 1;
        }
        after_reinit = false;
        if cfg.reinit_every > 0 && (it + 1) % cfg.reinit_every == 0 && moved_since_reinit > 0 {
            g = reinitialize_banded(&g, cfg.reinit_iters, cfg.reinit_band);
            after_reinit = true;
            moved_since_reinit = 0;
        }
    }
    Ok(Optimization3D { grid: g, history, kappa_td, converged })
}

/// Carve-oracle estimates of the topological derivative at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub eps: Vec<f64>,
    /// `(I(carved) - I) / (pi eps^2)` per radius.
    pub estimates: Vec<f64>,
    /// Richardson extrapolation of the estimates to `eps -> 0`.
    pub limit: f64,
}

/// Level set with a cone removed: the cone has its apex at the camera and
/// passes through the disk of radius `eps` centered at `y` with normal `n`.
/// The cone function is constant along rays from the apex.
pub fn carved_field(g: &LevelSetGrid, apex: Vec3, y: Vec3, n: Vec3, eps: f64) -> impl Fn(Vec3) -> f64 + '_ {
    let plane_d = dot(n, sub(y, apex));
    move |p: Vec3| {
        let phi = g.sample(p);
        let d = sub(p, apex);
        let den = dot(n, d);
        if den.abs() < 1e-12 || plane_d / den <= 0.0 {
            return phi;
        }
        let q = axpy(apex, plane_d / den, d);
        let cone = norm(sub(q, y)) - eps;
        phi.max(-cone)
    }
}

fn trace_field(f: &impl Fn(Vec3) -> f64, g: &LevelSetGrid, origin: Vec3, dir: Vec3) -> Option<Vec3> {
    let (lo, hi) = g.bounds();
    let (t0, t1) = clip_aabb(origin, dir, lo, hi)?;
    let h = g.spacing();
    march(f, origin, dir, t0, t1, 1e-3 * h, 1e-2 * h).map(|t| axpy(origin, t, dir))
}

fn shade_at(g: &LevelSetGrid, scene: &SceneModel3D, p: Option<Vec3>, dir: Vec3) -> f64 {
    match p {
        Some(p) => {
            let n = normalize(g.sample_gradient(p)).unwrap_or([-dir[0], -dir[1], -dir[2]]);
            scene.shading.radiance(n, dir)
        }
        None => scene.background,
    }
}

/// Pixel box (inclusive) covering the projection of the `eps`-disk, dilated.
fn disk_pixel_box(cam: &Camera, y: Vec3, n: Vec3, eps: f64, dilate: f64) -> Option<[usize; 4]> {
    let a = normalize(if n[0].abs() < 0.9 { crate::math::cross(n, [1.0, 0.0, 0.0]) } else { crate::math::cross(n, [0.0, 1.0, 0.0]) })?;
    let b = crate::math::cross(n, a);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..128 {
        let t = k as f64 / 128.0 * std::f64::consts::TAU;
        let p = axpy(axpy(y, eps * t.cos(), a), eps * t.sin(), b);
        let uv = cam.project(p)?;
        x0 = x0.min(uv[0]);
        x1 = x1.max(uv[0]);
        y0 = y0.min(uv[1]);
        y1 = y1.max(uv[1]);
    }
    let clampx = |v: f64| v.clamp(0.0, cam.width as f64 - 1.0) as usize;
    let clampy = |v: f64| v.clamp(0.0, cam.height as f64 - 1.0) as usize;
    Some([clampx(x0 - dilate), clampy(y0 - dilate), clampx(x1 + dilate), clampy(y1 + dilate)])
}

fn check_probe(g: &LevelSetGrid, cam: &Camera, y: Vec3) -> Result<Vec3> {
    let dir = normalize(sub(y, cam.position)).ok_or_else(|| Error::InvalidInput("probe at the camera".into()))?;
    let hit = trace_field(&|p| g.sample(p), g, cam.position, dir);
    match hit {
        Some(p) if norm(sub(p, y)) <= 2.0 * g.spacing() => {}
        _ => return Err(Error::InvalidInput("probe point is not visible".into())),
    }
    normalize(g.sample_gradient(y)).ok_or_else(|| Error::InvalidInput("degenerate normal at probe".into()))
}

/// Render of the carved shape at one sample per pixel.
pub fn render_carved(g: &LevelSetGrid, cam: &Camera, scene: &SceneModel3D, y: Vec3, eps: f64) -> Result<ImageBuffer> {
    let n = check_probe(g, cam, y)?;
    let f = carved_field(g, cam.position, y, n, eps);
    let data = (0..cam.width * cam.height)
        .map(|i| {
            let dir = cam.pixel_dir(i % cam.width, i / cam.width);
            shade_at(g, scene, trace_field(&f, g, cam.position, dir), dir)
        })
        .collect();
    ImageBuffer::scalar(cam.width, cam.height, data)
}

/// Brute-force topological derivative at the visible point `y`: carve the
/// camera-apex cone through an `eps`-disk for each radius, measure the change
/// of the view's functional with `supersample^2` rays per pixel over the
/// disk's footprint, divide by `pi eps^2`, and extrapolate. The estimates
/// have the sign of `dI`, so they approximate minus the speed-oriented
/// topological derivative.
pub fn td_numeric_oracle(
    g: &LevelSetGrid,
    cam: &Camera,
    scene: &SceneModel3D,
    reference: &ImageBuffer,
    y: Vec3,
    eps_list: &[f64],
    supersample: usize,
) -> Result<OracleResult> {
    if eps_list.len() < 2 || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("radii must be at least two and decreasing".into()));
    }
    if reference.width() != cam.width || reference.height() != cam.height || reference.channels() != 1 {
        return Err(Error::DimensionMismatch("reference does not match the camera".into()));
    }
    let n = check_probe(g, cam, y)?;
    let s = supersample.max(1);
    let ps = cam.pixel_size();
    let base = |p: Vec3| g.sample(p);
    let mut estimates = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !g.contains(sub(y, [eps; 3]), 0.0) || !g.contains(axpy(y, 1.0, [eps; 3]), 0.0) {
            return Err(Error::InvalidInput("carve disk leaves the grid".into()));
        }
        let carved = carved_field(g, cam.position, y, n, eps);
        let [x0, y0, x1, y1] =
            disk_pixel_box(cam, y, n, eps, 2.0).ok_or_else(|| Error::InvalidInput("disk behind the camera".into()))?;
        let mut d_i = 0.0;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let l = reference.data()[py * cam.width + px];
                for sy in 0..s {
                    for sx in 0..s {
                        let u = px as f64 + (sx as f64 + 0.5) / s as f64;
                        let v = py as f64 + (sy as f64 + 0.5) / s as f64;
                        let dir = cam.ray_dir(u, v);
                        let before = shade_at(g, scene, trace_field(&base, g, cam.position, dir), dir);
                        let after = shade_at(g, scene, trace_field(&carved, g, cam.position, dir), dir);
                        d_i += (after - l).powi(2) - (before - l).powi(2);
                    }
                }
            }
        }
        d_i *= ps * ps / (s * s) as f64;
        estimates.push(d_i / (std::f64::consts::PI * eps * eps));
    }
    let limit = richardson_limit(eps_list, &estimates, 2);
    Ok(OracleResult { eps: eps_list.to_vec(), estimates, limit })
}

/// Share of probed silhouette hits where a finite-difference `x . grad(n . x)`
/// agrees with `kappa |x|^2` within `tol`, and the number of probes.
pub fn silhouette_identity_probe(g: &LevelSetGrid, cam: &Camera, band: f64, tol: f64) -> (f64, usize) {
    let scene = SceneModel3D::new(crate::render3d::Shading::Constant { albedo: 1.0 }, 0.0, Vec::new())
        .expect("valid probe scene");
    let buf = render(g, cam, &scene);
    let h = g.spacing();
    let ndotx = |p: Vec3| -> f64 {
        let n = normalize(g.sample_gradient(p)).unwrap_or([0.0; 3]);
        dot(n, sub(p, cam.position))
    };
    let (mut ok, mut total) = (0usize, 0usize);
    for i in (0..buf.hit.len()).filter(|&i| buf.hit[i] && buf.ndotv[i].abs() < band) {
        let p = buf.point[i];
        let x = sub(p, cam.position);
        let grad: Vec3 = std::array::from_fn(|a| {
            let mut e = [0.0; 3];
            e[a] = 0.5 * h;
            (ndotx(axpy(p, 1.0, e)) - ndotx(sub(p, e))) / h
        });
        let lhs = dot(x, grad);
        let rhs = mean_curvature_at(g, p) * dot(x, x);
        total += 1;
        if rhs != 0.0 && ((lhs - rhs) / rhs).abs() <= tol {
            ok += 1;
        }
    }
    (if total == 0 { 0.0 } else { ok as f64 / total as f64 }, total)
}

/// Shadow-driven samples: for receiver pixels, carve along the segment to
/// the point light at every surface crossing.
pub fn shadow_samples(
    g: &LevelSetGrid,
    buf: &RenderBuffers,
    res: &ViewResiduals,
    light: Vec3,
    kappa: f64,
) -> Result<Vec<SurfaceSampleDeriv>> {
    let mut out = Vec::new();
    for i in (0..buf.hit.len()).filter(|&i| buf.receiver[i] && res.g[i] > res.g_bg[i]) {
        let x = buf.point[i];
        for xp in segment_crossings(g, x, light) {
            let td = match secondary_td(x, xp, light, res.g[i], res.g_bg[i], kappa) {
                Ok(v) => v,
                Err(_) => continue,
            };
            out.push(SurfaceSampleDeriv { point: xp, shading_term: 0.0, visibility_term: 0.0, td: td.max(0.0), view_id: 0 });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ShadowRun {
    pub grid: LevelSetGrid,
    /// Summed error over the initially shadowed receiver pixels, per step
    /// (index 0 is the initialization).
    pub region_error: Vec<f64>,
    pub values: Vec<f64>,
}

/// Evolve an occluder so the shadows it casts match the reference, using
/// only the secondary-visibility topological derivative.
pub fn optimize_shadow(init: &LevelSetGrid, scene: &SceneModel3D, cfg: &Evolution3DConfig, steps: usize) -> Result<ShadowRun> {
    cfg.validate()?;
    let light = scene.point_light.ok_or_else(|| Error::InvalidInput("shadow run needs a point light".into()))?;
    if scene.receiver.is_none() || scene.views.is_empty() {
        return Err(Error::InvalidInput("shadow run needs a receiver and a view".into()));
    }
    let mut g = init.clone();
    let first = evaluate_views(&g, scene)?;
    let region: Vec<Vec<bool>> = first
        .iter()
        .map(|e| (0..e.buffers.hit.len()).map(|i| e.buffers.receiver[i] && e.buffers.radiance.data()[i] < e.buffers.unshadowed[i]).collect())
        .collect();
    let kappa = match cfg.td_curvature {
        TdCurvature::Constant(k) => k,
        _ => {
            // the occluder is not in view; use its curvature at the shadow-ray crossings
            let mut ks: Vec<f64> = Vec::new();
            for e in &first {
                for i in (0..e.buffers.hit.len()).filter(|&i| e.buffers.receiver[i]) {
                    if let Some(p) = segment_crossings(&g, e.buffers.point[i], light).first() {
                        ks.push(mean_curvature_at(&g, *p));
                    }
                }
            }
            ks.sort_by(f64::total_cmp);
            ks.get(ks.len() / 2).copied().unwrap_or(1.0)
        }
    };
    let region_err = |evals: &[ViewEval]| -> f64 {
        evals
            .iter()
            .zip(&region)
            .map(|(e, r)| (0..r.len()).filter(|&i| r[i]).map(|i| e.residuals.g[i]).sum::<f64>())
            .sum()
    };
    let mut region_error = vec![region_err(&first)];
    let mut values = vec![first.iter().map(|e| e.value).sum()];
    let mut evals = first;
    for it in 0..steps {
        let mut samples = Vec::new();
        for e in &evals {
            samples.extend(shadow_samples(&g, &e.buffers, &e.residuals, light, kappa)?);
        }
        let mut speed = splat_and_extend(&samples, &g, 0.0, 1.0, cfg.extension_band)?;
        let dt_max = add_feature_filter(&g, &mut speed, cfg.lambda_smooth, cfg.smooth_threshold, cfg.extension_band);
        let (next, _) = step3d_capped(&g, &speed, cfg.dt_cfl, dt_max)?;
        g = next;
        if cfg.reinit_every > 0 && (it + 1) % cfg.reinit_every == 0 {
            g = reinitialize_banded(&g, cfg.reinit_iters, cfg.reinit_band);
        }
        evals = evaluate_views(&g, scene)?;
        region_error.push(region_err(&evals));
        values.push(evals.iter().map(|e| e.value).sum());
    }
    Ok(ShadowRun { grid: g, region_error, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render3d::{make_target, render_references, Shading, TargetShape, View};

    fn cam_z(res: usize, dist: f64) -> Camera {
        Camera::look_at([0.0, 0.0, -dist], [0.0; 3], [0.0, 1.0, 0.0], 0.8, res, res).unwrap()
    }

    fn flat_reference(cam: &Camera, v: f64) -> ImageBuffer {
        ImageBuffer::filled(cam.width, cam.height, &[v])
    }

    fn sphere(n: usize, r: f64) -> LevelSetGrid {
        make_target(&TargetShape::Sphere { radius: r }, n, 1.0).unwrap()
    }

    #[test]
    fn shading_term_on_a_ramp() {
        // fronto-parallel wall at depth 2 (plane z = 0 seen from z = -2)
        let g = LevelSetGrid::cube(24, 1.0, |p| -p[2]).unwrap();
        let cam = cam_z(32, 2.0);
        let scene = SceneModel3D::new(Shading::Constant { albedo: 0.5 }, 0.0, Vec::new()).unwrap();
        let buf = render(&g, &cam, &scene);
        let slope = 0.01;
        let field: Vec<f64> = (0..32 * 32).map(|i| slope * (i % 32) as f64).collect();
        let term = shading_term(&buf, &field, &cam);
        let foot = 2.0 * cam.pixel_size();
        let mut checked = 0;
        for i in 0..term.len() {
            let (x, y) = (i % 32, i / 32);
            if x == 0 || y == 0 || x == 31 || y == 31 || !buf.hit[i] {
                assert_eq!(term[i], 0.0);
                continue;
            }
            let c = cam.to_camera(buf.point[i]);
            let want = -(slope / foot) * c[0] / c[2].powi(3);
            assert!((term[i] - want).abs() <= 0.05 * want.abs() + 1e-12, "{} vs {want}", term[i]);
            checked += 1;
        }
        assert!(checked > 800);
        let flat = shading_term(&buf, &vec![0.3; 32 * 32], &cam);
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shading_term_zero_next_to_silhouette() {
        let g = sphere(32, 0.5);
        let cam = cam_z(48, 3.0);
        let scene = SceneModel3D::new(Shading::Constant { albedo: 0.5 }, 0.0, Vec::new()).unwrap();
        let buf = render(&g, &cam, &scene);
        let field: Vec<f64> = (0..48 * 48).map(|i| (i % 48) as f64).collect();
        let term = shading_term(&buf, &field, &cam);
        for y in 1..47 {
            for x in 1..47 {
                let i = y * 48 + x;
                if buf.hit[i] && [i - 1, i + 1, i - 48, i + 48].iter().any(|&j| !buf.hit[j]) {
                    assert_eq!(term[i], 0.0);
                }
            }
        }
    }

    fn sphere_scene(albedo: f64, bg: f64, res: usize) -> (LevelSetGrid, Camera, SceneModel3D, RenderBuffers, ViewResiduals, ImageBuffer) {
        let g = sphere(48, 0.5);
        let cam = cam_z(res, 2.5);
        let reference = flat_reference(&cam, bg);
        let scene = SceneModel3D::new(
            Shading::Constant { albedo },
            bg,
            vec![View { camera: cam.clone(), reference: reference.clone() }],
        )
        .unwrap();
        let buf = render(&g, &cam, &scene);
        let res = residuals3d(&buf, &reference, bg).unwrap();
        (g, cam, scene, buf, res, reference)
    }

    #[test]
    fn visibility_term_support_and_sign() {
        let (g, cam, _, buf, res, reference) = sphere_scene(0.2, 1.0, 96);
        let vis = visibility_term(&buf, &res, &reference, &cam, &g, 0.5).unwrap();
        let c = 0.64;
        let mut checked = 0;
        for i in 0..vis.len() {
            if !buf.hit[i] {
                assert_eq!(vis[i], 0.0);
                continue;
            }
            if buf.ndotv[i].abs() >= 0.5 {
                assert_eq!(vis[i], 0.0, "interior hit");
                continue;
            }
            let ring = contour_difference(&buf, &res, &reference)[i] != 0.0;
            if !ring {
                continue;
            }
            // hand evaluation with the exact sphere normal
            let p = buf.point[i];
            let n = normalize(p).unwrap();
            let dir = cam.ray_dir((i % 96) as f64 + 0.5, (i / 96) as f64 + 0.5);
            let x = cam.to_camera(p);
            let want = c * 2.0 * dot(x, x) / x[2].powi(3) * Mollifier::new(0.5).delta(dot(n, dir));
            assert!(vis[i] > 0.0, "silhouette should retreat toward the background");
            if buf.ndotv[i].abs() > 0.4 {
                // the Dirac's tail is too steep for a pointwise comparison
                continue;
            }
            assert!((vis[i] - want).abs() <= 0.25 * want, "{} vs {want}", vis[i]);
            checked += 1;
        }
        assert!(checked > 20, "{checked}");
        // equal errors on both sides
        let (g, cam, _, buf, res, reference) = sphere_scene(1.0, 1.0, 48);
        let vis = visibility_term(&buf, &res, &reference, &cam, &g, 0.5).unwrap();
        assert!(vis.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn td_vanishes_on_flat_walls_and_equal_errors() {
        let g = LevelSetGrid::cube(24, 1.0, |p| p[2]).unwrap();
        let cam = cam_z(24, 2.0);
        let reference = flat_reference(&cam, 1.0);
        let scene = SceneModel3D::new(Shading::Constant { albedo: 0.2 }, 1.0, Vec::new()).unwrap();
        let buf = render(&g, &cam, &scene);
        let res = residuals3d(&buf, &reference, 1.0).unwrap();
        let td = topological_derivative_3d(&buf, &res, &cam, &hit_curvatures(&buf, &g));
        assert!(td.iter().all(|v| v.abs() < 1e-9));
        let (g, cam, _, buf, res, _) = sphere_scene(1.0, 1.0, 32);
        let td = topological_derivative_3d(&buf, &res, &cam, &hit_curvatures(&buf, &g));
        assert!(td.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn td_covers_the_visible_surface() {
        let (g, cam, _, buf, res, _) = sphere_scene(0.2, 1.0, 48);
        let td = topological_derivative_3d(&buf, &res, &cam, &hit_curvatures(&buf, &g));
        let interior = (0..td.len()).filter(|&i| buf.hit[i] && buf.ndotv[i] < -0.5).collect::<Vec<_>>();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|&i| td[i] > 0.0));
    }

    #[test]
    fn secondary_td_formula() {
        let l = [0.0, 0.0, 3.0];
        assert_eq!(secondary_td([0.0; 3], [0.0, 0.0, 1.0], l, 0.5, 0.5, 2.0).unwrap(), 0.0);
        assert_eq!(secondary_td([0.0; 3], [0.0, 0.0, 1.0], l, 0.9, 0.5, 0.0).unwrap(), 0.0);
        let v = secondary_td([0.0; 3], [0.0, 0.0, 2.0], l, 0.9, 0.1, 2.0).unwrap();
        assert!((v - 0.8 * 2.0 / 2.0).abs() < 1e-12);
        assert!(secondary_td([0.0; 3], [1.0, 0.0, 0.0], l, 0.9, 0.1, 2.0).is_err());
    }

    fn sample_at(p: Vec3, td: f64) -> SurfaceSampleDeriv {
        SurfaceSampleDeriv { point: p, shading_term: 0.0, visibility_term: 0.0, td, view_id: 0 }
    }

    #[test]
    fn splat_partition_of_unity_and_empty() {
        let g = LevelSetGrid::cube(17, 1.0, |p| p[0] - 0.03).unwrap();
        let empty = splat_and_extend(&[], &g, 1.0, 1.0, 3.0).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));
        let s = splat_and_extend(&[sample_at([0.03, 0.11, -0.2], 2.0)], &g, 1.0, 1.0, 3.0).unwrap();
        let touched: Vec<f64> = s.weight.iter().copied().filter(|&w| w > 0.0).collect();
        assert_eq!(touched.len(), 8);
        assert!((touched.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // extension copies the sample value to band nodes projecting near it
        let i = g.index([8, 7, 6]);
        assert!(g.values()[i].abs() <= 3.0 * g.spacing());
        assert!(s.values.iter().any(|&v| (v - 2.0).abs() < 1e-9));
        assert!(s.values.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn view_count_monotone_weights_and_symmetry() {
        let g = sphere(32, 0.5);
        let a = Camera::look_at([0.0, 0.0, -2.5], [0.0; 3], [0.0, 1.0, 0.0], 0.8, 48, 48).unwrap();
        let b = Camera::look_at([0.0, 0.0, 2.5], [0.0; 3], [0.0, 1.0, 0.0], 0.8, 48, 48).unwrap();
        let mk = |cams: &[&Camera]| {
            let views = cams.iter().map(|c| View { camera: (*c).clone(), reference: flat_reference(c, 1.0) }).collect();
            SceneModel3D::new(Shading::Constant { albedo: 0.2 }, 1.0, views).unwrap()
        };
        let cfg = Evolution3DConfig { lambda_sd: 0.0, lambda_td: 1.0, ..Default::default() };
        let s1 = mk(&[&a]);
        let e1 = evaluate_views(&g, &s1).unwrap();
        let sp1 = splat_and_extend(&collect_samples(&g, &s1, &e1, &cfg, None).unwrap(), &g, 0.0, 1.0, 3.0).unwrap();
        let s2 = mk(&[&a, &b]);
        let e2 = evaluate_views(&g, &s2).unwrap();
        let sp2 = splat_and_extend(&collect_samples(&g, &s2, &e2, &cfg, None).unwrap(), &g, 0.0, 1.0, 3.0).unwrap();
        assert!(sp1.weight.iter().zip(&sp2.weight).all(|(w1, w2)| w2 >= w1));
        // reflection z -> -z swaps the two views
        let [nx, ny, nz] = g.shape();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let u = sp2.values[g.index([i, j, k])];
                    let v = sp2.values[g.index([i, j, nz - 1 - k])];
                    num += (u - v).abs();
                    den += u.abs();
                }
            }
        }
        assert!(den > 0.0);
        assert!(num / den < 0.05, "asymmetry {}", num / den);
    }

    #[test]
    fn step3d_zero_and_nonfinite() {
        let g = sphere(16, 0.5);
        let zero = SpeedGrid3D { values: vec![0.0; g.len()], weight: vec![0.0; g.len()] };
        let (same, dt) = step3d(&g, &zero, 0.25).unwrap();
        assert_eq!(dt, 0.0);
        assert_eq!(same.values(), g.values());
        let mut bad = zero.clone();
        bad.values[3] = f64::NAN;
        assert!(step3d(&g, &bad, 0.25).is_err());
    }

    #[test]
    fn fixed_point_when_target_matches() {
        let g = sphere(24, 0.5);
        let cams: Vec<Camera> = (0..4)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_2;
                Camera::look_at([2.5 * a.cos(), 0.3, 2.5 * a.sin()], [0.0; 3], [0.0, 1.0, 0.0], 0.8, 24, 24).unwrap()
            })
            .collect();
        let shading = Shading::Lambert { light_dir: normalize([0.3, 0.8, -0.5]).unwrap(), albedo: 0.7, ambient: 0.1 };
        let scene = render_references(&g, &cams, &shading, 1.0).unwrap();
        let cfg = Evolution3DConfig { max_iters: 50, metrics_every: 25, ..Default::default() };
        let run = optimize3d(&g, &scene, &cfg, None, None).unwrap();
        let i0 = run.history[0].value;
        assert!(run.history.iter().all(|r| (r.value - i0).abs() <= 1e-6 * i0.max(1e-300)));
        let h = g.spacing();
        let band: Vec<usize> = (0..g.len()).filter(|&i| g.values()[i].abs() < 2.0 * h).collect();
        let drift = band.iter().map(|&i| (run.grid.values()[i] - g.values()[i]).abs()).sum::<f64>() / band.len() as f64;
        assert!(drift < 0.1 * h);
    }

    #[test]
    fn oracle_equal_errors_and_carve_footprint() {
        let (g, cam, scene, buf, _, _) = sphere_scene(1.0, 1.0, 64);
        let center = buf.point[32 * 64 + 32];
        let h = g.spacing();
        let r = td_numeric_oracle(&g, &cam, &scene, &flat_reference(&cam, 1.0), center, &[4.0 * h, 3.0 * h], 2).unwrap();
        assert!(r.limit.abs() < 1e-3);
        // carved render differs only near the projected disk
        let (g, cam, scene, buf, _, _) = sphere_scene(0.2, 1.0, 64);
        let eps = 3.0 * h;
        let carved = render_carved(&g, &cam, &scene, center, eps).unwrap();
        let nrm = normalize(g.sample_gradient(center)).unwrap();
        let [x0, y0, x1, y1] = disk_pixel_box(&cam, center, nrm, eps, 2.0).unwrap();
        let mut changed = 0;
        for i in 0..carved.pixel_count() {
            if carved.data()[i] != buf.radiance.data()[i] {
                changed += 1;
                let (x, y) = (i % 64, i / 64);
                assert!(x >= x0 && x <= x1 && y >= y0 && y <= y1);
            }
        }
        assert!(changed > 0);
        assert!(td_numeric_oracle(&g, &cam, &scene, &flat_reference(&cam, 1.0), [0.0, 0.0, 0.9], &[2.0 * h, h], 1).is_err());
    }

    #[test]
    fn chamfer_of_identical_and_shifted_sets() {
        let a: Vec<Vec3> = (0..50).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        assert_eq!(chamfer_distance(&a, &a), 0.0);
        let b: Vec<Vec3> = a.iter().map(|p| [p[0], 0.2, 0.0]).collect();
        assert!((chamfer_distance(&a, &b) - 0.2).abs() < 1e-12);
        assert!(chamfer_distance(&a, &[]).is_infinite());
    }

    #[test]
    fn descent_fraction_skips_reinit_rows() {
        let rows = [(3.0, false, 0.0), (2.0, false, 0.1), (2.5, true, 0.1), (2.4, false, 0.1), (2.6, false, 0.1)];
        assert!((descent_fraction(rows.into_iter()) - 2.0 / 3.0).abs() < 1e-12);
    }
}
