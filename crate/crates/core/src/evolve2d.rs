//! Shape and topological derivatives of the 2D image functional, the level
//! set update they drive, and the optimization loop.
//!
//! Every field here is speed oriented: with `phi_t = speed * |grad phi|` and
//! `phi <= 0` inside, a positive speed pushes a point toward the background.
//! For the two-phase functional the shape derivative on the curve and the
//! topological derivative off it share the closed form `g_F - g_B`, so a
//! single field drives boundary motion, hole nucleation (interior points with
//! positive speed) and phase nucleation (exterior points with negative speed).

use crate::error::{Error, Result};
use crate::grid::{
    count_topology, extract_contours, grad_norm_upwind, gradient_central, reinitialize_banded,
    LevelSetGrid, Mollifier,
};
use crate::scene2d::{
    fit_colors, functional_from_residuals, residuals, ColorModel, ResidualFields, SceneModel2D,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Where a derivative field is meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    /// Inside the mollifier band around the curve.
    OnCurve,
    /// Outside the band.
    OffCurve,
    Everywhere,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeField2D {
    pub values: Vec<f64>,
    pub domain: DomainTag,
}

impl DerivativeField2D {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// CFL number: the fastest node moves `dt_cfl * h` per step.
    pub dt_cfl: f64,
    pub max_iters: usize,
    /// Banded reinitialization cadence; 0 disables.
    pub reinit_every: usize,
    pub reinit_iters: usize,
    /// Half-width, in cells, of the band reinitialization touches.
    pub reinit_band: usize,
    /// Mollifier half-width in cells.
    pub eps_h: f64,
    /// Relative decrease of I over `stop_window` iterations that counts as a
    /// plateau.
    pub stop_tol: f64,
    pub stop_window: usize,
    /// Constant-color refit cadence; 0 disables.
    pub color_refit_every: usize,
    /// Apply the speed off the curve as well. Disabling restricts the update
    /// to the mollifier band (shape derivative only).
    pub topological: bool,
    /// Values are clamped to `[-phi_cap, phi_cap]` cells after each step.
    pub phi_cap: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt_cfl: 0.5,
            max_iters: 500,
            reinit_every: 10,
            reinit_iters: 5,
            reinit_band: 4,
            eps_h: 1.5,
            stop_tol: 1e-4,
            stop_window: 10,
            color_refit_every: 0,
            topological: true,
            phi_cap: 8.0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_cfl > 0.0 && self.dt_cfl <= 1.0) {
            return Err(Error::InvalidInput(format!("dt_cfl must lie in (0, 1], got {}", self.dt_cfl)));
        }
        if !(self.eps_h > 0.0 && self.eps_h.is_finite()) {
            return Err(Error::InvalidInput(format!("eps_h must be positive, got {}", self.eps_h)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput("stop_tol must be nonnegative".into()));
        }
        if !(self.phi_cap > self.eps_h) {
            return Err(Error::InvalidInput("phi_cap must exceed eps_h".into()));
        }
        if self.stop_window == 0 {
            return Err(Error::InvalidInput("stop_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mollifier(&self, spacing: f64) -> Mollifier {
        Mollifier::from_cells(self.eps_h, spacing)
    }
}

fn check_dims(res: &ResidualFields, g: &LevelSetGrid) -> Result<()> {
    if g.ndim() != 2 || res.width != g.dims()[0] || res.height != g.dims()[1] {
        return Err(Error::DimensionMismatch(format!(
            "residuals {}x{} vs grid {:?}",
            res.width,
            res.height,
            g.dims()
        )));
    }
    Ok(())
}

/// `g_F - g_B` inside the band `|phi| <= eps_h`, zero elsewhere.
pub fn shape_derivative(res: &ResidualFields, g: &LevelSetGrid, m: &Mollifier) -> Result<DerivativeField2D> {
    check_dims(res, g)?;
    let values = g
        .values()
        .iter()
        .zip(res.g_fg.iter().zip(&res.g_bg))
        .map(|(&phi, (f, b))| if m.in_band(phi) { f - b } else { 0.0 })
        .collect();
    Ok(DerivativeField2D { values, domain: DomainTag::OnCurve })
}

/// `g_F - g_B` outside the band: hole nucleation where phi < 0, phase
/// nucleation where phi > 0.
pub fn topological_derivative(
    res: &ResidualFields,
    g: &LevelSetGrid,
    m: &Mollifier,
) -> Result<DerivativeField2D> {
    check_dims(res, g)?;
    let values = g
        .values()
        .iter()
        .zip(res.g_fg.iter().zip(&res.g_bg))
        .map(|(&phi, (f, b))| if m.in_band(phi) { 0.0 } else { f - b })
        .collect();
    Ok(DerivativeField2D { values, domain: DomainTag::OffCurve })
}

/// `g_F - g_B` at every node.
pub fn unified_speed(res: &ResidualFields) -> DerivativeField2D {
    let values = res.g_fg.iter().zip(&res.g_bg).map(|(f, b)| f - b).collect();
    DerivativeField2D { values, domain: DomainTag::Everywhere }
}

/// One explicit Euler step of `phi_t = speed * |grad phi|`.
///
/// Returns the new grid and the time step used. Nodes whose upwind gradient
/// vanishes (flat plateaus left by clamping, or a constant initial field) move
/// as if `|grad phi| = 1`, so nucleation is not blocked by a flat region.
pub fn step(g: &LevelSetGrid, speed: &DerivativeField2D, cfg: &EvolutionConfig) -> Result<(LevelSetGrid, f64)> {
    if speed.values.len() != g.len() {
        return Err(Error::DimensionMismatch("speed field and grid differ".into()));
    }
    if speed.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("speed field".into()));
    }
    let vmax = speed.max_abs();
    if vmax == 0.0 {
        return Ok((g.clone(), 0.0));
    }
    let dt = cfg.dt_cfl * g.spacing() / vmax;
    Ok((advance(g, &speed.values, dt), dt))
}

pub(crate) fn advance(g: &LevelSetGrid, speed: &[f64], dt: f64) -> LevelSetGrid {
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let s = speed[i];
            let phi = g.values()[i];
            if s == 0.0 {
                return phi;
            }
            let mut gn = grad_norm_upwind(g, g.node(i), s.signum());
            if gn < crate::grid::DEGENERATE_GRADIENT {
                gn = 1.0;
            }
            phi + dt * s * gn
        })
        .collect();
    g.with_values(values).expect("finite update")
}

/// Step with the speed rescaled per pixel by `dL/dI`, the chain-rule factor
/// of an outer loss built on top of the image functional.
pub fn step_with_loss_hook(
    g: &LevelSetGrid,
    res: &ResidualFields,
    cfg: &EvolutionConfig,
    dl_di: &[f64],
) -> Result<(LevelSetGrid, f64)> {
    check_dims(res, g)?;
    if dl_di.len() != g.len() || dl_di.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("dL/dI must be finite and match the grid".into()));
    }
    let mut speed = unified_speed(res);
    for (s, w) in speed.values.iter_mut().zip(dl_di) {
        *s *= w;
    }
    step(g, &speed, cfg)
}

/// Analytic directional derivative of I along `phi + s psi`:
/// `<g_F - g_B, v>` with `v = -psi / |grad phi|` and surface measure
/// `delta(phi) |grad phi|`, which reduces to `sum (g_B - g_F) psi delta h^2`.
pub fn gateaux_derivative(res: &ResidualFields, g: &LevelSetGrid, m: &Mollifier, psi: &[f64]) -> Result<f64> {
    check_dims(res, g)?;
    if psi.len() != g.len() {
        return Err(Error::DimensionMismatch("perturbation and grid differ".into()));
    }
    let area = g.spacing() * g.spacing();
    let s: f64 = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let d = m.delta(g.values()[i]);
            if d == 0.0 {
                return 0.0;
            }
            let gr = gradient_central(g, g.node(i));
            let norm = (gr[0] * gr[0] + gr[1] * gr[1]).sqrt();
            if norm < crate::grid::DEGENERATE_GRADIENT {
                // v is undefined; the measure-weighted product is still -psi * delta
                return -(res.g_fg[i] - res.g_bg[i]) * psi[i] * d;
            }
            let v = -psi[i] / norm;
            (res.g_fg[i] - res.g_bg[i]) * v * d * norm
        })
        .sum();
    Ok(s * area)
}

/// Kind of infinitesimal perturbation probed by the carve oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nucleation {
    /// Remove a small disk from the interior.
    Hole,
    /// Add a small disk in the exterior.
    Phase,
}

/// Brute-force carve estimate of the topological derivative at `x` for one
/// radius: composite the perturbed shape, measure the change of I, and divide
/// by the mollified area that changed phase. The result is speed oriented
/// (comparable to `g_F - g_B`), so the hole estimate is `-dI / area` and the
/// phase estimate is `+dI / area`.
pub fn carve_estimate(
    g: &LevelSetGrid,
    res: &ResidualFields,
    m: &Mollifier,
    x: [f64; 2],
    radius: f64,
    kind: Nucleation,
) -> Result<f64> {
    check_dims(res, g)?;
    let perturbed: Vec<f64> = (0..g.len())
        .map(|i| {
            let p = g.position(g.node(i));
            let r = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
            let phi = g.values()[i];
            match kind {
                Nucleation::Hole => phi.max(radius - r),
                Nucleation::Phase => phi.min(r - radius),
            }
        })
        .collect();
    let area = g.spacing() * g.spacing();
    let mut d_area = 0.0;
    for (a, b) in g.values().iter().zip(&perturbed) {
        d_area += (m.heaviside(*b) - m.heaviside(*a)) * area;
    }
    if d_area.abs() < 1e-12 {
        return Err(Error::InvalidInput("perturbation changed no area".into()));
    }
    let hat = g.with_values(perturbed)?;
    let di = functional_from_residuals(&hat, res, m) - functional_from_residuals(g, res, m);
    // d_area > 0 for a hole (H rises), < 0 for a phase
    Ok(match kind {
        Nucleation::Hole => -di / d_area,
        Nucleation::Phase => di / -d_area,
    })
}

/// Least-squares fit of `a + c r^order` to `(r, value)` pairs; returns `a`,
/// the extrapolated limit as `r -> 0`.
pub fn richardson_limit(radii: &[f64], values: &[f64], order: i32) -> f64 {
    assert_eq!(radii.len(), values.len());
    assert!(radii.len() >= 2);
    let n = radii.len() as f64;
    let xs: Vec<f64> = radii.iter().map(|r| r.powi(order)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    my - slope * mx
}

/// One row of the optimization history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow2D {
    pub iter: usize,
    pub value: f64,
    pub components: usize,
    pub holes: usize,
    pub dt: f64,
    /// A reinitialization ran right before this row's evaluation.
    pub after_reinit: bool,
}

pub fn write_history_csv<W: Write>(rows: &[HistoryRow2D], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,I,components,holes,dt")?;
    for r in rows {
        writeln!(w, "{},{:.9e},{},{},{:.6e}", r.iter, r.value, r.components, r.holes, r.dt)?;
    }
    Ok(())
}

/// Per-pixel `dL/dI` from an outer loss; receives the current grid and scene
/// (with refit colors) and their residuals.
pub type LossHook<'a> = &'a (dyn Fn(&LevelSetGrid, &SceneModel2D, &ResidualFields) -> Vec<f64> + Sync);

#[derive(Clone, Debug)]
pub struct Optimization2D {
    pub grid: LevelSetGrid,
    pub scene: SceneModel2D,
    pub history: Vec<HistoryRow2D>,
    /// Stopped on the plateau rule rather than the iteration cap.
    pub converged: bool,
}

impl Optimization2D {
    /// Fraction of steps, excluding those straddling a reinitialization,
    /// that did not increase I.
    pub fn descent_fraction(&self) -> f64 {
        descent_fraction(self.history.iter().map(|r| (r.value, r.after_reinit, r.dt)))
    }
}

/// `(value, after_reinit, dt)` rows -> share of non-increasing steps. Rows
/// after a zero step are skipped since nothing moved.
pub fn descent_fraction(rows: impl Iterator<Item = (f64, bool, f64)>) -> f64 {
    let rows: Vec<_> = rows.collect();
    let (mut good, mut total) = (0usize, 0usize);
    for w in rows.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if cur.1 || cur.2 == 0.0 {
            continue;
        }
        total += 1;
        if cur.0 <= prev.0 * (1.0 + 1e-12) {
            good += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        good as f64 / total as f64
    }
}

/// Nodes off the band whose speed points toward the zero level: a pending
/// nucleation that a plateau in I must not hide.
fn pending_nucleation(g: &LevelSetGrid, speed: &DerivativeField2D, m: &Mollifier) -> bool {
    let cutoff = 1e-3 * speed.max_abs();
    g.values().iter().zip(&speed.values).any(|(&phi, &s)| {
        s.abs() > cutoff && !m.in_band(phi) && ((phi < 0.0 && s > 0.0) || (phi > 0.0 && s < 0.0))
    })
}

fn refit(g: &LevelSetGrid, scene: &mut SceneModel2D, m: &Mollifier) -> Result<()> {
    if let (ColorModel::Constant(f), ColorModel::Constant(b)) = (&scene.fg, &scene.bg) {
        let fit = fit_colors(g, &scene.target, m, f, b)?;
        scene.fg = ColorModel::Constant(fit.fg);
        scene.bg = ColorModel::Constant(fit.bg);
    }
    Ok(())
}

/// residuals -> unified speed -> step, with optional color refits, banded
/// reinitialization and magnitude clamping. Stops at `max_iters` or when I
/// plateaus with no nucleation pending.
pub fn optimize2d(
    init: &LevelSetGrid,
    scene: &SceneModel2D,
    cfg: &EvolutionConfig,
    hook: Option<LossHook<'_>>,
) -> Result<Optimization2D> {
    optimize2d_observed(init, scene, cfg, hook, None)
}

/// Called with the iteration index, grid and current scene at each
/// evaluation, before the step.
pub type Observer2D<'a> = &'a mut dyn FnMut(usize, &LevelSetGrid, &SceneModel2D);

/// [`optimize2d`] with a per-iteration observer, e.g. for writing frames.
pub fn optimize2d_observed(
    init: &LevelSetGrid,
    scene: &SceneModel2D,
    cfg: &EvolutionConfig,
    hook: Option<LossHook<'_>>,
    mut observer: Option<Observer2D<'_>>,
) -> Result<Optimization2D> {
    cfg.validate()?;
    let h = init.spacing();
    let m = cfg.mollifier(h);
    let mut g = init.clone();
    g.clamp_magnitude(cfg.phi_cap * h);
    let mut scene = scene.clone();
    let mut history: Vec<HistoryRow2D> = Vec::new();
    let mut dt = 0.0;
    let mut after_reinit = false;
    let mut converged = false;
    for it in 0..=cfg.max_iters {
        if cfg.color_refit_every > 0 && it % cfg.color_refit_every == 0 {
            refit(&g, &mut scene, &m)?;
        }
        let res = residuals(&scene);
        let value = functional_from_residuals(&g, &res, &m);
        let (components, holes) = count_topology(&extract_contours(&g));
        history.push(HistoryRow2D { iter: it, value, components, holes, dt, after_reinit });
        if let Some(obs) = observer.as_mut() {
            obs(it, &g, &scene);
        }
        if it == cfg.max_iters {
            break;
        }
        let mut speed = if cfg.topological {
            unified_speed(&res)
        } else {
            shape_derivative(&res, &g, &m)?
        };
        if let Some(hook) = hook {
            let w = hook(&g, &scene, &res);
            if w.len() != speed.values.len() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("loss hook returned a bad field".into()));
            }
            for (s, w) in speed.values.iter_mut().zip(w) {
                *s *= w;
            }
        }
        if it >= cfg.stop_window {
            let before = history[it - cfg.stop_window].value;
            let plateau = before - value <= cfg.stop_tol * before.abs();
            if plateau && !(cfg.topological && pending_nucleation(&g, &speed, &m)) {
                converged = true;
                break;
            }
        }
        let (next, used) = step(&g, &speed, cfg)?;
        g = next;
        dt = used;
        g.clamp_magnitude(cfg.phi_cap * h);
        after_reinit = false;
        if cfg.reinit_every > 0 && (it + 1) % cfg.reinit_every == 0 {
            g = reinitialize_banded(&g, cfg.reinit_iters, cfg.reinit_band);
            g.clamp_magnitude(cfg.phi_cap * h);
            after_reinit = true;
        }
    }
    Ok(Optimization2D { grid: g, scene, history, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBuffer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk(p: [f64; 2], c: [f64; 2], r: f64) -> f64 {
        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - r
    }

    fn res_const(n: usize, f: f64, b: f64) -> ResidualFields {
        ResidualFields { g_fg: vec![f; n * n], g_bg: vec![b; n * n], width: n, height: n }
    }

    fn disk_grid(n: usize, r: f64) -> LevelSetGrid {
        let c = (n as f64 - 1.0) / 2.0;
        LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| disk(p, [c, c], r)).unwrap()
    }

    #[test]
    fn fields_split_on_the_band() {
        let g = disk_grid(24, 8.0);
        let m = Mollifier::new(1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = ResidualFields {
            g_fg: (0..576).map(|_| rng.gen()).collect(),
            g_bg: (0..576).map(|_| rng.gen()).collect(),
            width: 24,
            height: 24,
        };
        let sd = shape_derivative(&res, &g, &m).unwrap();
        let td = topological_derivative(&res, &g, &m).unwrap();
        let u = unified_speed(&res);
        for i in 0..g.len() {
            assert_eq!(sd.values[i] + td.values[i], u.values[i]);
            assert!(sd.values[i] == 0.0 || td.values[i] == 0.0);
            if !m.in_band(g.values()[i]) {
                assert_eq!(sd.values[i], 0.0);
            }
        }
        let eq = res_const(24, 0.3, 0.3);
        assert!(unified_speed(&eq).values.iter().all(|&v| v == 0.0));
        assert!(shape_derivative(&eq, &g, &m).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_contract_examples() {
        let g = disk_grid(24, 8.0);
        let m = Mollifier::new(1.5);
        // boundary node that should become foreground
        let i = (0..g.len()).find(|&i| g.values()[i].abs() < 0.5).unwrap();
        let r = res_const(24, 0.0, 0.25);
        assert_eq!(shape_derivative(&r, &g, &m).unwrap().values[i], -0.25);
        // interior node whose target matches the background: hole wants to open
        let c = g.index([12, 12, 0]);
        let r = res_const(24, 0.25, 0.0);
        assert_eq!(topological_derivative(&r, &g, &m).unwrap().values[c], 0.25);
        let (next, _) = step(&g, &unified_speed(&r), &EvolutionConfig::default()).unwrap();
        assert!(next.values()[c] > g.values()[c]);
        assert!(unified_speed(&res_const(4, 1.0, 0.0)).values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_speed_and_hooks() {
        let g = disk_grid(16, 5.0);
        let cfg = EvolutionConfig::default();
        let zero = DerivativeField2D { values: vec![0.0; g.len()], domain: DomainTag::Everywhere };
        assert_eq!(step(&g, &zero, &cfg).unwrap().0, g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let res = ResidualFields {
            g_fg: (0..256).map(|_| rng.gen()).collect(),
            g_bg: (0..256).map(|_| rng.gen()).collect(),
            width: 16,
            height: 16,
        };
        let plain = step(&g, &unified_speed(&res), &cfg).unwrap().0;
        let hooked = step_with_loss_hook(&g, &res, &cfg, &vec![1.0; 256]).unwrap().0;
        assert_eq!(plain.values(), hooked.values());
        let frozen = step_with_loss_hook(&g, &res, &cfg, &vec![0.0; 256]).unwrap().0;
        assert_eq!(frozen, g);
        let mut bad = unified_speed(&res);
        bad.values[3] = f64::NAN;
        assert!(step(&g, &bad, &cfg).is_err());
    }

    #[test]
    fn flat_field_can_nucleate() {
        let g = LevelSetGrid::from_fn_2d(8, 8, 1.0, [0.0, 0.0], |_| 4.0).unwrap();
        let mut v = vec![0.0; 64];
        v[27] = -1.0;
        let (next, dt) = step(&g, &DerivativeField2D { values: v, domain: DomainTag::Everywhere }, &EvolutionConfig::default())
            .unwrap();
        assert_eq!(dt, 0.5);
        assert_eq!(next.values()[27], 3.5);
    }

    #[test]
    fn carve_oracle_recovers_constant_difference() {
        let g = disk_grid(40, 15.0);
        let m = Mollifier::new(1.5);
        let res = res_const(40, 0.4, 0.1);
        let c = [19.5, 19.5];
        let hole = carve_estimate(&g, &res, &m, c, 3.0, Nucleation::Hole).unwrap();
        assert!((hole - 0.3).abs() < 1e-12);
        let phase = carve_estimate(&g, &res, &m, [4.0, 4.0], 2.0, Nucleation::Phase).unwrap();
        assert!((phase - 0.3).abs() < 1e-12);
    }

    #[test]
    fn richardson_removes_quadratic_error() {
        let r = [4.0, 3.0, 2.0];
        let v: Vec<f64> = r.iter().map(|x| 1.5 + 0.02 * x * x).collect();
        assert!((richardson_limit(&r, &v, 2) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn optimize_stops_at_a_fixed_point() {
        // sharp mollifier and values away from the band: composite is exact
        let n = 32;
        let g = LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |p| {
            let d = (p[0] - 15.5).abs().max((p[1] - 15.5).abs()) - 8.0;
            d
        })
        .unwrap();
        let cfg = EvolutionConfig { eps_h: 0.4, ..Default::default() };
        let m = cfg.mollifier(1.0);
        let probe = SceneModel2D::constant(&[0.2], &[0.9], ImageBuffer::filled(n, n, &[0.0])).unwrap();
        let target = crate::scene2d::composite(&g, &probe, &m).unwrap();
        let scene = SceneModel2D { target, ..probe };
        let out = optimize2d(&g, &scene, &cfg, None).unwrap();
        assert!(out.converged);
        assert!(out.history.len() <= 11);
        let i0 = out.history[0].value;
        assert!(out.history.last().unwrap().value <= 1e-6 * i0 + 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(EvolutionConfig::default().validate().is_ok());
        assert!(EvolutionConfig { dt_cfl: 1.5, ..Default::default() }.validate().is_err());
        assert!(EvolutionConfig { dt_cfl: 0.0, ..Default::default() }.validate().is_err());
    }
}
