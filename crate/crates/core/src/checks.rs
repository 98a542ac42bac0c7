//! Derivative-versus-oracle self checks: analytic derivatives compared with
//! brute-force perturbations, plus curvature and numerics probes. Every
//! suite is driven by a seed and prints the same report for the same seed.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evolve2d::{carve_estimate, gateaux_derivative, richardson_limit, topological_derivative, Nucleation};
use crate::evolve3d::silhouette_identity_probe;
use crate::grid::{curvature_at, mean_curvature_at, reinitialize, LevelSetGrid, Mollifier};
use crate::image::ImageBuffer;
use crate::render3d::{make_target, Camera, TargetShape};
use crate::scenarios::{td_probe_points, td_probe_scene, td_probes};
use crate::scene2d::{functional_from_residuals, residuals, ResidualFields, SceneModel2D};

/// Suite names accepted by [`run_checks`].
pub const SUITES: [&str; 5] = ["gateaux2d", "carve2d", "td3d", "curvature", "numerics"];

/// One measured check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    /// Pass when `measured <= tolerance`, or `>=` for `at_least` rows.
    pub tolerance: f64,
    pub at_least: bool,
}

impl CheckRow {
    fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), measured, tolerance, at_least: false }
    }

    fn at_least(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), measured, tolerance, at_least: true }
    }

    pub fn pass(&self) -> bool {
        if self.at_least {
            self.measured >= self.tolerance
        } else {
            self.measured <= self.tolerance
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(CheckRow::pass)
    }

    /// Fixed-width table, one row per check, then a summary line.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:<28} {:>11} {:>13} result", "suite", "check", "measured", "tolerance");
        for r in &self.rows {
            let op = if r.at_least { ">=" } else { "<=" };
            let verdict = if r.pass() { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{:<10} {:<28} {:>11.3e} {} {:>10.3e} {}", r.suite, r.name, r.measured, op, r.tolerance, verdict);
        }
        let failed = self.rows.iter().filter(|r| !r.pass()).count();
        let _ = writeln!(s, "{} checks, {} failed", self.rows.len(), failed);
        s
    }
}

/// Runs every suite, or only the named one.
pub fn run_checks(seed: u64, only: Option<&str>) -> Result<CheckReport> {
    if let Some(name) = only {
        if !SUITES.contains(&name) {
            return Err(Error::InvalidInput(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", "))));
        }
    }
    let mut rows = Vec::new();
    for suite in SUITES.iter().filter(|s| only.map_or(true, |o| o == **s)) {
        rows.extend(match *suite {
            "gateaux2d" => gateaux2d(seed, 128, 20)?,
            "carve2d" => carve2d(seed, 128, 10)?,
            "td3d" => td3d(seed)?,
            "curvature" => curvature(seed)?,
            _ => numerics(seed)?,
        });
    }
    Ok(CheckReport { rows })
}

/// Smooth random field on an `n x n` pixel grid: a few low-frequency waves.
fn smooth_field(rng: &mut ChaCha8Rng, n: usize, waves: usize) -> impl Fn([f64; 2]) -> f64 {
    let f = n as f64;
    let terms: Vec<(f64, f64, f64, f64)> = (0..waves)
        .map(|_| {
            let a = rng.gen_range(-1.0..1.0);
            let kx = rng.gen_range(-3.0..3.0) * 2.0 * PI / f;
            let ky = rng.gen_range(-3.0..3.0) * 2.0 * PI / f;
            (a, kx, ky, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    move |p| terms.iter().map(|(a, kx, ky, ph)| a * (kx * p[0] + ky * p[1] + ph).sin()).sum()
}

/// Random blob shape and residuals from a smooth random target.
fn random_scene_2d(rng: &mut ChaCha8Rng, n: usize) -> Result<(LevelSetGrid, ResidualFields)> {
    let f = n as f64;
    let texture = smooth_field(rng, n, 4);
    let pixels = (0..n * n)
        .map(|i| 0.5 + 0.2 * texture([(i % n) as f64, (i / n) as f64]))
        .collect();
    let target = ImageBuffer::scalar(n, n, pixels)?;
    let scene = SceneModel2D::constant(&[rng.gen_range(0.0..0.4)], &[rng.gen_range(0.6..1.0)], target)?;
    let c = [rng.gen_range(0.4..0.6) * f, rng.gen_range(0.4..0.6) * f];
    let r = rng.gen_range(0.2..0.3) * f;
    let wobble = rng.gen_range(0.02..0.08) * f;
    let lobes = rng.gen_range(2..6) as f64;
    let g = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| {
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        dx.hypot(dy) - r - wobble * (lobes * dy.atan2(dx)).cos()
    })?;
    Ok((g, residuals(&scene)))
}

/// Analytic directional derivative against a central difference of I along
/// `phi +- s psi`, for random smooth `psi`.
pub fn gateaux2d(seed: u64, n: usize, count: usize) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, res) = random_scene_2d(&mut rng, n)?;
    let m = Mollifier::new(1.5 * g.spacing());
    let s = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let field = smooth_field(&mut rng, n, 3);
        let offset = rng.gen_range(-1.0..1.0);
        let psi: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.position(g.node(i));
                offset + field([p[0], p[1]])
            })
            .collect();
        let shifted = |sign: f64| -> Result<f64> {
            let v = g.values().iter().zip(&psi).map(|(a, b)| a + sign * s * b).collect();
            Ok(functional_from_residuals(&g.with_values(v)?, &res, &m))
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * s);
        let analytic = gateaux_derivative(&res, &g, &m, &psi)?;
        worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-300));
    }
    Ok(vec![CheckRow::at_most("gateaux2d", format!("max rel err, {count} directions"), worst, 1e-2)])
}

/// Closed-form 2D topological derivative against carve estimates
/// extrapolated over radii 4h, 3h, 2h at random off-band probes. Probes where
/// the formula is below 5% of its range are skipped as relative error is
/// meaningless there.
pub fn carve2d(seed: u64, n: usize, probes: usize) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2d);
    let (g, res) = random_scene_2d(&mut rng, n)?;
    let h = g.spacing();
    let m = Mollifier::new(1.5 * h);
    let td = topological_derivative(&res, &g, &m)?;
    let scale = td.max_abs();
    let radii = [4.0 * h, 3.0 * h, 2.0 * h];
    let margin = 4.0 * h + m.eps_h + 2.0 * h;
    let (mut worst, mut found, mut tries): (f64, usize, usize) = (0.0, 0, 0);
    while found < probes && tries < 100_000 {
        tries += 1;
        let node = [rng.gen_range(6..n - 6), rng.gen_range(6..n - 6), 0];
        let i = g.index(node);
        let phi = g.values()[i];
        if phi.abs() < margin || td.values[i].abs() < 0.05 * scale {
            continue;
        }
        let kind = if phi < 0.0 { Nucleation::Hole } else { Nucleation::Phase };
        let p = g.position(node);
        let est = radii
            .iter()
            .map(|&r| carve_estimate(&g, &res, &m, [p[0], p[1]], r, kind))
            .collect::<Result<Vec<_>>>()?;
        let limit = richardson_limit(&radii, &est, 2);
        worst = worst.max((limit - td.values[i]).abs() / td.values[i].abs());
        found += 1;
    }
    Ok(vec![
        CheckRow::at_least("carve2d", "probes", found as f64, probes as f64),
        CheckRow::at_most("carve2d", "max rel err", worst, 0.1),
    ])
}

/// 3D closed-form topological derivative against the camera-cone carve
/// oracle on a sphere seen against a brighter background.
pub fn td3d(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3d);
    let s = td_probe_scene(64, 128)?;
    let tilt = rng.gen_range(5.0..9.0);
    let azimuth = rng.gen_range(0.0..PI / 2.0);
    let points = td_probe_points(&s, tilt, azimuth);
    let probes = td_probes(&s, &points, &[4.0, 3.0, 2.0], 4)?;
    let worst = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(vec![
        CheckRow::at_least("td3d", "visible probes", probes.len() as f64, 5.0),
        CheckRow::at_most("td3d", "max rel err", worst, 0.15),
    ])
}

/// Curvature of analytic circle and sphere distance fields at random points
/// on their zero sets, and the silhouette identity on a sphere.
pub fn curvature(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
    let n = 128;
    let r2 = rng.gen_range(20.0..40.0);
    let c2 = [63.5 + rng.gen_range(-2.0..2.0), 63.5 + rng.gen_range(-2.0..2.0)];
    let circle = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| (p[0] - c2[0]).hypot(p[1] - c2[1]) - r2)?;
    let mut worst_circle: f64 = 0.0;
    for _ in 0..64 {
        let a = rng.gen_range(0.0..2.0 * PI);
        let k = curvature_at(&circle, [c2[0] + r2 * a.cos(), c2[1] + r2 * a.sin(), 0.0]);
        worst_circle = worst_circle.max((k * r2 - 1.0).abs());
    }

    let r3 = rng.gen_range(0.4..0.7);
    let sphere = make_target(&TargetShape::Sphere { radius: r3 }, 64, 1.0)?;
    let mut worst_sphere: f64 = 0.0;
    for _ in 0..64 {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let a = rng.gen_range(0.0..2.0 * PI);
        let q = (1.0 - z * z).sqrt();
        let k = mean_curvature_at(&sphere, [r3 * q * a.cos(), r3 * q * a.sin(), r3 * z]);
        worst_sphere = worst_sphere.max((k * r3 - 1.0).abs());
    }

    let probe_sphere = make_target(&TargetShape::Sphere { radius: 0.5 }, 64, 1.0)?;
    let cam = Camera::look_at([0.0, 0.0, -2.5], [0.0; 3], [0.0, 1.0, 0.0], 0.6, 128, 128)?;
    let (fraction, count) = silhouette_identity_probe(&probe_sphere, &cam, 0.15, 0.1);
    Ok(vec![
        CheckRow::at_most("curvature", "circle max rel err", worst_circle, 0.05),
        CheckRow::at_most("curvature", "sphere max rel err", worst_sphere, 0.05),
        CheckRow::at_least("curvature", "silhouette probes", count as f64, 20.0),
        CheckRow::at_least("curvature", "silhouette identity share", fraction, 0.9),
    ])
}

/// Reinitialization drift of the zero set and unit mass of the mollified
/// Dirac under grid quadrature.
pub fn numerics(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let n = 96;
    let c = [47.5 + rng.gen_range(-3.0..3.0), 47.5 + rng.gen_range(-3.0..3.0)];
    let (ra, rb) = (rng.gen_range(25.0..35.0), rng.gen_range(15.0..25.0));
    // zero set is an ellipse, the field far from a distance function
    let g = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| {
        let (x, y) = ((p[0] - c[0]) / ra, (p[1] - c[1]) / rb);
        3.0 * (x * x + y * y - 1.0)
    })?;
    let re = reinitialize(&g, 40);
    let mut drift: f64 = 0.0;
    for k in 0..256 {
        let a = k as f64 * 2.0 * PI / 256.0;
        drift = drift.max(re.sample([c[0] + ra * a.cos(), c[1] + rb * a.sin(), 0.0]).abs());
    }

    // midpoint quadrature of the continuous Dirac at random widths, and the
    // node sums a 1.5-cell band sees at random sub-cell offsets
    let mut mass_err: f64 = 0.0;
    for _ in 0..16 {
        let m = Mollifier::new(rng.gen_range(0.5..3.0));
        let steps = 20_000;
        let dt = 2.0 * m.eps_h / steps as f64;
        let mass: f64 = (0..steps).map(|i| m.delta(-m.eps_h + (i as f64 + 0.5) * dt) * dt).sum();
        mass_err = mass_err.max((mass - 1.0).abs());
    }
    let band = Mollifier::new(1.5);
    let mut grid_err: f64 = 0.0;
    for _ in 0..16 {
        let offset = rng.gen_range(0.0..1.0);
        let mass: f64 = (-4..=4).map(|i| band.delta(i as f64 + offset)).sum();
        grid_err = grid_err.max((mass - 1.0).abs());
    }
    Ok(vec![
        CheckRow::at_most("numerics", "reinit zero-set drift / h", drift / g.spacing(), 0.5),
        CheckRow::at_most("numerics", "dirac mass error", mass_err, 1e-3),
        CheckRow::at_most("numerics", "dirac node-sum error", grid_err, 1e-3),
    ])
}
