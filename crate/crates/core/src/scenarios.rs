//! Synthetic scenes used by the demos, the self-checks and the acceptance
//! suite. Everything is generated in-process.

use crate::error::Result;
use crate::evolve2d::{optimize2d, EvolutionConfig, Optimization2D};
use crate::scene2d::SceneModel2D;
use crate::evolve3d::{td_numeric_oracle, topological_derivative_3d, hit_curvatures, residuals3d, Evolution3DConfig, optimize3d, Optimization3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::grid::{extract_mesh, mean_curvature_at, LevelSetGrid};
use crate::image::ImageBuffer;
use crate::math::{axpy, norm, normalize, sub, Vec3};
use crate::render3d::{
    make_target, render, render_references, trace_ray, Camera, Receiver, SceneModel3D, Shading, TargetShape, View,
};

/// Cameras on a sphere of radius `dist` around the origin, looking at it.
/// Directions are given as unit vectors from the origin.
pub fn cameras_from_directions(dirs: &[Vec3], dist: f64, fov_y: f64, res: usize) -> Result<Vec<Camera>> {
    dirs.iter()
        .map(|d| {
            let d = normalize(*d).expect("nonzero direction");
            let up = if d[2].abs() > 0.9 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
            Camera::look_at([d[0] * dist, d[1] * dist, d[2] * dist], [0.0; 3], up, fov_y, res, res)
        })
        .collect()
}

/// Directional light used by the reconstruction scenes.
pub fn recon_shading() -> Shading {
    Shading::Lambert { light_dir: normalize([0.4, -0.5, 0.75]).expect("nonzero"), albedo: 0.6, ambient: 0.25 }
}

pub const RECON_BACKGROUND: f64 = 1.0;

/// Everything a multi-view reconstruction run needs.
pub struct ReconSetup {
    pub init: LevelSetGrid,
    pub target: LevelSetGrid,
    pub target_points: Vec<Vec3>,
    pub scene: SceneModel3D,
    pub config: Evolution3DConfig,
}

/// Optimizer settings shared by the reconstruction scenarios.
///
/// The analytic shading term is noisy under directional light, so the
/// scenarios lean on the topological term and damp thin fins. Once the shape
/// is carved the fin filter starts eroding it, hence the stop rule.
pub fn recon_config() -> Evolution3DConfig {
    Evolution3DConfig {
        max_iters: 500,
        stop_tol: 1e-3,
        stop_window: 40,
        lambda_sd: 0.1,
        lambda_td: 1.0,
        lambda_smooth: 0.2,
        metrics_every: 10,
        ..Evolution3DConfig::default()
    }
}

/// Target and sphere initialization in the unit cube, with references
/// rendered from cameras at distance 3 along `dirs`.
pub fn recon_setup(shape: TargetShape, init_radius: f64, n: usize, dirs: &[Vec3], res: usize) -> Result<ReconSetup> {
    let target = make_target(&shape, n, 1.0)?;
    let init = make_target(&TargetShape::Sphere { radius: init_radius }, n, 1.0)?;
    let cams = cameras_from_directions(dirs, 3.0, 0.6, res)?;
    let scene = render_references(&target, &cams, &recon_shading(), RECON_BACKGROUND)?;
    let target_points = extract_mesh(&target).vertices;
    let config = recon_config();
    Ok(ReconSetup { init, target, target_points, scene, config })
}

/// `k` roughly uniform directions on the unit sphere (golden-angle spiral).
pub fn fibonacci_directions(k: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [r * a.cos(), r * a.sin(), z]
        })
        .collect()
}

/// Eight views: two along the ring axis and six around and above it.
pub fn torus_directions() -> Vec<Vec3> {
    let mut dirs = vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
    for k in 0..6 {
        let a = k as f64 * std::f64::consts::PI / 3.0;
        let z = if k % 2 == 0 { 0.5 } else { -0.5 };
        dirs.push([a.cos(), a.sin(), z]);
    }
    dirs
}

/// Sphere initialization enclosing a ring of radii 0.5 and 0.2.
pub fn torus_setup(n: usize, res: usize) -> Result<ReconSetup> {
    recon_setup(TargetShape::Torus { major: 0.5, minor: 0.2 }, 0.72, n, &torus_directions(), res)
}

/// Twelve views: the six axis directions and six diagonals.
pub fn holeball_directions() -> Vec<Vec3> {
    let mut dirs = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    for (x, y, z) in [(1.0, 1.0, 1.0), (-1.0, 1.0, -1.0), (1.0, -1.0, -1.0), (-1.0, -1.0, 1.0), (1.0, 1.0, -1.0), (-1.0, -1.0, -1.0)] {
        dirs.push([x, y, z]);
    }
    dirs
}

pub fn holeball_setup(n: usize, res: usize) -> Result<ReconSetup> {
    recon_setup(TargetShape::Holeball { radius: 0.6, hole_radius: 0.2 }, 0.62, n, &holeball_directions(), res)
}

/// For each axis, whether the centerline ray through the grid hits the shape.
pub fn axial_rays_blocked(g: &LevelSetGrid) -> [bool; 3] {
    std::array::from_fn(|a| {
        let mut o = [0.0; 3];
        o[a] = -10.0;
        let mut d = [0.0; 3];
        d[a] = 1.0;
        trace_ray(g, o, d).is_some()
    })
}

/// Sphere of radius 0.5 seen from distance 1 against a brighter, empty
/// background. At this distance the conic-carve formula and the carve
/// oracle agree at the view center.
pub struct TdProbeScene {
    pub grid: LevelSetGrid,
    pub camera: Camera,
    pub scene: SceneModel3D,
    pub reference: ImageBuffer,
}

pub fn td_probe_scene(n: usize, res: usize) -> Result<TdProbeScene> {
    let grid = make_target(&TargetShape::Sphere { radius: 0.5 }, n, 1.0)?;
    let camera = Camera::look_at([0.0, 0.0, -1.0], [0.0; 3], [0.0, 1.0, 0.0], 70f64.to_radians(), res, res)?;
    let reference = ImageBuffer::filled(res, res, &[1.0]);
    let scene = SceneModel3D::new(
        Shading::Constant { albedo: 0.2 },
        1.0,
        vec![View { camera: camera.clone(), reference: reference.clone() }],
    )?;
    Ok(TdProbeScene { grid, camera, scene, reference })
}

/// Formula versus oracle at one probe.
#[derive(Clone, Debug, PartialEq)]
pub struct TdProbe {
    pub point: Vec3,
    pub formula: f64,
    pub estimates: Vec<f64>,
    /// Extrapolated oracle, sign flipped to the speed orientation.
    pub oracle: f64,
    pub rel_err: f64,
}

/// Probe directions: the view center and four rays tilted by `tilt_deg`,
/// spaced a quarter turn apart starting at `azimuth` radians.
pub fn td_probe_points(s: &TdProbeScene, tilt_deg: f64, azimuth: f64) -> Vec<Vec3> {
    let t = tilt_deg.to_radians().tan();
    let c = &s.camera;
    let mut offsets = vec![[0.0, 0.0]];
    for k in 0..4 {
        let a = azimuth + k as f64 * std::f64::consts::FRAC_PI_2;
        offsets.push([t * a.cos(), t * a.sin()]);
    }
    offsets
        .iter()
        .filter_map(|[a, b]| {
            let d = normalize(axpy(axpy(c.forward, *a, c.right), *b, c.up))?;
            let t = trace_ray(&s.grid, c.position, d)?;
            Some(axpy(c.position, t, d))
        })
        .collect()
}

/// Compare the closed-form topological derivative with the carve oracle over
/// radii `eps_cells * h`.
pub fn td_probes(s: &TdProbeScene, points: &[Vec3], eps_cells: &[f64], supersample: usize) -> Result<Vec<TdProbe>> {
    let h = s.grid.spacing();
    let eps: Vec<f64> = eps_cells.iter().map(|c| c * h).collect();
    let buf = render(&s.grid, &s.camera, &s.scene);
    let res = residuals3d(&buf, &s.reference, s.scene.background)?;
    points
        .iter()
        .map(|&y| {
            // the formula at the probe itself, with the residuals of its pixel
            let uv = s.camera.project(y).expect("probe in front of the camera");
            let px = (uv[0] as usize).min(s.camera.width - 1);
            let py = (uv[1] as usize).min(s.camera.height - 1);
            let i = py * s.camera.width + px;
            let kappa = mean_curvature_at(&s.grid, y);
            let yc = s.camera.to_camera(y);
            let formula = (res.g[i] - res.g_bg[i]) * kappa * (yc[0] * yc[0] + yc[1] * yc[1] + yc[2] * yc[2]) / yc[2].powi(3);
            let o = td_numeric_oracle(&s.grid, &s.camera, &s.scene, &s.reference, y, &eps, supersample)?;
            let oracle = -o.limit;
            let rel_err = (formula - oracle).abs() / oracle.abs().max(1e-300);
            Ok(TdProbe { point: y, formula, estimates: o.estimates, oracle, rel_err })
        })
        .collect()
}

/// Pixel-field version of the formula, for inspecting support.
pub fn td_field(s: &TdProbeScene) -> Result<Vec<f64>> {
    let buf = render(&s.grid, &s.camera, &s.scene);
    let res = residuals3d(&buf, &s.reference, s.scene.background)?;
    Ok(topological_derivative_3d(&buf, &res, &s.camera, &hit_curvatures(&buf, &s.grid)))
}

/// Plane receiver lit by a point light with a rounded plate as occluder;
/// the reference shadow has a bright spot that needs a hole through the
/// plate.
pub struct ShadowSetup {
    pub init: LevelSetGrid,
    pub target: LevelSetGrid,
    pub scene: SceneModel3D,
    pub config: Evolution3DConfig,
}

pub const SHADOW_LIGHT: Vec3 = [0.0, 0.0, 2.5];
pub const SHADOW_CENTER: Vec3 = [0.0, 0.0, 1.2];

pub fn shadow_setup(n: usize, res: usize) -> Result<ShadowSetup> {
    let half = 0.45;
    let h = 2.0 * half / (n - 1) as f64;
    let origin = [-half, -half, SHADOW_CENTER[2] - half];
    // rounded box: half extents 0.3 x 0.3 x 0.08 with edge radius 0.06
    let (extent, round) = ([0.3, 0.3, 0.08], 0.06);
    let plate_shape = TargetShape::Box { half: extent.map(|e| e - round) };
    let plate = move |p: Vec3| plate_shape.sdf(sub(p, SHADOW_CENTER)) - round;
    let init = LevelSetGrid::from_fn_3d([n, n, n], h, origin, plate)?;
    let hole = 0.1;
    let target = LevelSetGrid::from_fn_3d([n, n, n], h, origin, |p| {
        plate(p).max(hole - (p[0] * p[0] + p[1] * p[1]).sqrt())
    })?;
    let camera = Camera::look_at([0.0, -1.5, 0.6], [0.0; 3], [0.0, 0.0, 1.0], 30f64.to_radians(), res, res)?;
    let mut probe = SceneModel3D::new(Shading::Constant { albedo: 0.5 }, 0.0, Vec::new())?;
    probe.receiver = Some(Receiver { point: [0.0; 3], normal: [0.0, 0.0, 1.0], albedo: 0.8, ambient: 0.1 });
    probe.point_light = Some(SHADOW_LIGHT);
    let reference = render(&target, &camera, &probe).radiance;
    let mut scene = probe.clone();
    scene.views = vec![View { camera, reference }];
    // the plate is flat where the hole goes, so its curvature carries no
    // scale; a fixed one only sets the units of the speed
    let config = Evolution3DConfig {
        dt_cfl: 0.5,
        td_curvature: crate::evolve3d::TdCurvature::Constant(1.0 / extent[2]),
        ..Default::default()
    };
    Ok(ShadowSetup { init, target, scene, config })
}

/// A 2D raster scene and its initialization.
pub struct Scene2DSetup {
    pub init: LevelSetGrid,
    pub scene: SceneModel2D,
    /// Foreground pixels of the target.
    pub target_mask: Vec<bool>,
    pub config: EvolutionConfig,
}

fn raster_setup(n: usize, inside: impl Fn(f64, f64) -> bool, init: impl Fn([f64; 2]) -> f64 + Sync) -> Result<Scene2DSetup> {
    let mask: Vec<bool> = (0..n * n).map(|i| inside((i % n) as f64, (i / n) as f64)).collect();
    let target = ImageBuffer::scalar(n, n, mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect())?;
    let scene = SceneModel2D::constant(&[0.0], &[1.0], target)?;
    let init = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], init)?;
    let config = EvolutionConfig { max_iters: 800, ..EvolutionConfig::default() };
    Ok(Scene2DSetup { init, scene, target_mask: mask, config })
}

/// Dark annulus on a light background, initialized with a disk that lies
/// inside the ring: reaching the target needs a hole.
pub fn annulus_setup(n: usize) -> Result<Scene2DSetup> {
    let c = 0.5 * (n - 1) as f64;
    let s = n as f64 / 256.0;
    let (r_in, r_out, r_init) = (40.0 * s, 90.0 * s, 60.0 * s);
    raster_setup(
        n,
        |x, y| {
            let r = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
            r >= r_in && r <= r_out
        },
        |p| ((p[0] - c).powi(2) + (p[1] - c).powi(2)).sqrt() - r_init,
    )
}

/// Small disk in one corner, dark square target in the opposite quadrant:
/// boundary motion alone never reaches it.
pub fn far_square_setup(n: usize) -> Result<Scene2DSetup> {
    let s = n as f64 / 256.0;
    let (cx, cy, half) = (170.0 * s, 165.0 * s, 40.0 * s);
    let (dx, dy, r) = (60.0 * s, 64.0 * s, 16.0 * s);
    raster_setup(
        n,
        |x, y| (x - cx).abs() <= half && (y - cy).abs() <= half,
        |p| ((p[0] - dx).powi(2) + (p[1] - dy).powi(2)).sqrt() - r,
    )
}

/// Intersection over union of the grid's interior (`phi <= 0` at nodes) and
/// a pixel mask.
pub fn iou(g: &LevelSetGrid, mask: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&phi, &m) in g.values().iter().zip(mask) {
        let a = phi <= 0.0;
        inter += (a && m) as usize;
        union += (a || m) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Unified-speed run and its band-masked shape-derivative control.
pub fn paired_runs(s: &Scene2DSetup) -> Result<(Optimization2D, Optimization2D)> {
    let td = optimize2d(&s.init, &s.scene, &s.config, None)?;
    let sd_cfg = EvolutionConfig { topological: false, ..s.config.clone() };
    let sd = optimize2d(&s.init, &s.scene, &sd_cfg, None)?;
    Ok((td, sd))
}

/// Torus reconstruction from a randomly perturbed initial sphere, used for
/// the 3D descent statistic.
pub fn seeded_torus_run(seed: u64, n: usize, res: usize, iters: usize) -> Result<Optimization3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = torus_setup(n, res)?;
    let radius = 0.72 + rng.gen_range(-0.05..0.05);
    let c: Vec3 = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
    let init = LevelSetGrid::cube(n, 1.0, |p| norm(sub(p, c)) - radius)?;
    s.config.max_iters = iters;
    optimize3d(&init, &s.scene, &s.config, None, None)
}

/// Seeded 2D runs: a random disk evolving toward a random pair of dark
/// disks on a light background, with noise on the target.
pub fn seeded_disks_run(seed: u64, n: usize, cfg: &EvolutionConfig) -> Result<Optimization2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = n as f64;
    let mut blobs = Vec::new();
    for _ in 0..2 {
        blobs.push(([rng.gen_range(0.25..0.75) * f, rng.gen_range(0.25..0.75) * f], rng.gen_range(0.08..0.18) * f));
    }
    let pixels = (0..n * n)
        .map(|i| {
            let p = [(i % n) as f64, (i / n) as f64];
            let inside = blobs.iter().any(|(c, r)| (p[0] - c[0]).hypot(p[1] - c[1]) <= *r);
            (if inside { 0.1 } else { 0.9 }) + rng.gen_range(-0.05..0.05)
        })
        .collect();
    let target = ImageBuffer::scalar(n, n, pixels)?;
    let scene = SceneModel2D::constant(&[0.1], &[0.9], target)?;
    let c = [rng.gen_range(0.3..0.7) * f, rng.gen_range(0.3..0.7) * f];
    let r = rng.gen_range(0.1..0.25) * f;
    let init = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| (p[0] - c[0]).hypot(p[1] - c[1]) - r)?;
    optimize2d(&init, &scene, cfg, None)
}
