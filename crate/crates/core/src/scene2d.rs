//! Two-phase compositing against a raster target and the per-pixel error
//! fields the derivatives are built from.
//!
//! The image plane coincides with the grid: pixel `(x, y)` samples phi at
//! node `(x, y)` and has area `h^2`.

use crate::error::{Error, Result};
use crate::grid::{LevelSetGrid, Mollifier};
use crate::image::ImageBuffer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Squared,
    Absolute,
}

impl LossKind {
    /// Channel-mean error between two colors.
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = match self {
            LossKind::Squared => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            LossKind::Absolute => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        };
        s / a.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColorModel {
    Constant(Vec<f64>),
    PerPixel(ImageBuffer),
}

impl ColorModel {
    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        match self {
            ColorModel::Constant(c) => c,
            ColorModel::PerPixel(img) => img.at(i),
        }
    }

    fn channels(&self) -> usize {
        match self {
            ColorModel::Constant(c) => c.len(),
            ColorModel::PerPixel(img) => img.channels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel2D {
    pub fg: ColorModel,
    pub bg: ColorModel,
    pub target: ImageBuffer,
    pub loss: LossKind,
}

impl SceneModel2D {
    pub fn new(fg: ColorModel, bg: ColorModel, target: ImageBuffer, loss: LossKind) -> Result<Self> {
        for (name, c) in [("foreground", &fg), ("background", &bg)] {
            if c.channels() != target.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} color has {} channels, target has {}",
                    c.channels(),
                    target.channels()
                )));
            }
            match c {
                ColorModel::Constant(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::NonFinite(format!("{name} color")));
                }
                ColorModel::PerPixel(img) if !img.same_shape(&target) => {
                    return Err(Error::DimensionMismatch(format!("{name} color image")));
                }
                _ => {}
            }
        }
        Ok(Self { fg, bg, target, loss })
    }

    /// Constant-color scene.
    pub fn constant(fg: &[f64], bg: &[f64], target: ImageBuffer) -> Result<Self> {
        Self::new(
            ColorModel::Constant(fg.to_vec()),
            ColorModel::Constant(bg.to_vec()),
            target,
            LossKind::Squared,
        )
    }

    fn check_grid(&self, g: &LevelSetGrid) -> Result<()> {
        if g.ndim() != 2
            || g.dims()[0] != self.target.width()
            || g.dims()[1] != self.target.height()
        {
            return Err(Error::DimensionMismatch(format!(
                "grid {:?} vs target {}x{}",
                g.dims(),
                self.target.width(),
                self.target.height()
            )));
        }
        Ok(())
    }
}

/// Per-pixel errors of the foreground and background hypotheses.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFields {
    pub g_fg: Vec<f64>,
    pub g_bg: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl ResidualFields {
    pub fn fg_image(&self) -> ImageBuffer {
        ImageBuffer::scalar(self.width, self.height, self.g_fg.clone()).expect("finite residuals")
    }

    pub fn bg_image(&self) -> ImageBuffer {
        ImageBuffer::scalar(self.width, self.height, self.g_bg.clone()).expect("finite residuals")
    }

    /// Multiply both fields by a positive constant.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            g_fg: self.g_fg.iter().map(|v| v * alpha).collect(),
            g_bg: self.g_bg.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }
}

/// `c_F (1 - H(phi)) + c_B H(phi)` per pixel.
pub fn composite(g: &LevelSetGrid, scene: &SceneModel2D, m: &Mollifier) -> Result<ImageBuffer> {
    scene.check_grid(g)?;
    let ch = scene.target.channels();
    let data: Vec<f64> = g
        .values()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, &phi)| {
            let hv = m.heaviside(phi);
            let (f, b) = (scene.fg.at(i), scene.bg.at(i));
            (0..ch).map(move |c| {
                if hv == 0.0 {
                    f[c]
                } else if hv == 1.0 {
                    b[c]
                } else {
                    f[c] * (1.0 - hv) + b[c] * hv
                }
            })
        })
        .collect();
    ImageBuffer::new(scene.target.width(), scene.target.height(), ch, data)
}

pub fn residuals(scene: &SceneModel2D) -> ResidualFields {
    let t = &scene.target;
    let (g_fg, g_bg): (Vec<f64>, Vec<f64>) = (0..t.pixel_count())
        .into_par_iter()
        .map(|i| {
            let px = t.at(i);
            (scene.loss.eval(scene.fg.at(i), px), scene.loss.eval(scene.bg.at(i), px))
        })
        .unzip();
    ResidualFields { g_fg, g_bg, width: t.width(), height: t.height() }
}

/// `sum_u [g_F (1 - H) + g_B H] h^2` for precomputed residuals.
pub fn functional_from_residuals(g: &LevelSetGrid, res: &ResidualFields, m: &Mollifier) -> f64 {
    let area = g.spacing() * g.spacing();
    let s: f64 = g
        .values()
        .par_iter()
        .zip(res.g_fg.par_iter().zip(&res.g_bg))
        .map(|(&phi, (&f, &b))| {
            let hv = m.heaviside(phi);
            f * (1.0 - hv) + b * hv
        })
        .sum();
    s * area
}

pub fn functional_value(g: &LevelSetGrid, scene: &SceneModel2D, m: &Mollifier) -> Result<f64> {
    scene.check_grid(g)?;
    Ok(functional_from_residuals(g, &residuals(scene), m))
}

/// Outcome of a color refit; a region with no weight keeps its old color.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorFit {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
    pub fg_empty: bool,
    pub bg_empty: bool,
}

/// Weighted target means under `1 - H(phi)` (foreground) and `H(phi)`
/// (background): the minimizing constant colors of the squared functional
/// for a fixed curve.
pub fn fit_colors(
    g: &LevelSetGrid,
    target: &ImageBuffer,
    m: &Mollifier,
    prev_fg: &[f64],
    prev_bg: &[f64],
) -> Result<ColorFit> {
    if g.ndim() != 2 || g.len() != target.pixel_count() {
        return Err(Error::DimensionMismatch("grid and target differ".into()));
    }
    let ch = target.channels();
    let mut sf = vec![0.0; ch];
    let mut sb = vec![0.0; ch];
    let (mut wf, mut wb) = (0.0, 0.0);
    for (i, &phi) in g.values().iter().enumerate() {
        let hv = m.heaviside(phi);
        let px = target.at(i);
        wf += 1.0 - hv;
        wb += hv;
        for c in 0..ch {
            sf[c] += (1.0 - hv) * px[c];
            sb[c] += hv * px[c];
        }
    }
    const MIN_WEIGHT: f64 = 1e-9;
    let fg_empty = wf <= MIN_WEIGHT;
    let bg_empty = wb <= MIN_WEIGHT;
    let fg = if fg_empty { prev_fg.to_vec() } else { sf.iter().map(|s| s / wf).collect() };
    let bg = if bg_empty { prev_bg.to_vec() } else { sb.iter().map(|s| s / wb).collect() };
    Ok(ColorFit { fg, bg, fg_empty, bg_empty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(n: usize, phi: f64) -> LevelSetGrid {
        LevelSetGrid::from_fn_2d(n, n, 1.0, [0.0, 0.0], |_| phi).unwrap()
    }

    fn gray_scene(n: usize, fg: f64, bg: f64, t: f64) -> SceneModel2D {
        SceneModel2D::constant(&[fg], &[bg], ImageBuffer::filled(n, n, &[t])).unwrap()
    }

    #[test]
    fn deep_phases_composite_to_pure_colors() {
        let m = Mollifier::new(1.5);
        let s = SceneModel2D::constant(&[0.2, 0.3, 0.4], &[0.9, 0.8, 0.7], ImageBuffer::filled(6, 6, &[0.0; 3]))
            .unwrap();
        let inside = composite(&flat(6, -15.0), &s, &m).unwrap();
        assert!(inside.data().chunks(3).all(|p| p == [0.2, 0.3, 0.4]));
        let outside = composite(&flat(6, 15.0), &s, &m).unwrap();
        assert!(outside.data().chunks(3).all(|p| p == [0.9, 0.8, 0.7]));
    }

    #[test]
    fn half_plane_crosses_at_one_half() {
        let m = Mollifier::new(1.5);
        let g = LevelSetGrid::from_fn_2d(16, 4, 1.0, [0.0, 0.0], |p| p[0] - 8.0).unwrap();
        let s = SceneModel2D::constant(&[0.0], &[1.0], ImageBuffer::filled(16, 4, &[0.0])).unwrap();
        let img = composite(&g, &s, &m).unwrap();
        assert_eq!(img.pixel(8, 2)[0], 0.5);
        assert_eq!(img.pixel(0, 2)[0], 0.0);
        assert_eq!(img.pixel(15, 2)[0], 1.0);
        let row: Vec<f64> = (0..16).map(|x| img.pixel(x, 1)[0]).collect();
        assert!(row.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn residual_arithmetic() {
        let r = residuals(&gray_scene(4, 0.0, 1.0, 0.5));
        assert!(r.g_fg.iter().chain(&r.g_bg).all(|&v| v == 0.25));
        let r = residuals(&gray_scene(4, 0.3, 1.0, 0.3));
        assert!(r.g_fg.iter().all(|&v| v == 0.0));
        let rgb = SceneModel2D::constant(&[1.0, 0.0, 0.0], &[0.0; 3], ImageBuffer::filled(2, 2, &[1.0, 0.0, 0.0]))
            .unwrap();
        let r = residuals(&rgb);
        assert_eq!(r.g_fg[0], 0.0);
        assert!((r.g_bg[0] - 1.0 / 3.0).abs() < 1e-15);
        let abs = SceneModel2D { loss: LossKind::Absolute, ..gray_scene(2, 0.0, 1.0, 0.25) };
        let r = residuals(&abs);
        assert_eq!((r.g_fg[0], r.g_bg[0]), (0.25, 0.75));
    }

    #[test]
    fn functional_arithmetic() {
        let m = Mollifier::new(1.5);
        let s = gray_scene(64, 0.0, 1.0, 0.5);
        assert_eq!(functional_value(&flat(64, -20.0), &s, &m).unwrap(), 1024.0);
        // a target that is exactly the composite of exact colors
        let g = LevelSetGrid::from_fn_2d(16, 16, 1.0, [0.0, 0.0], |p| {
            if p[0] < 8.0 { -5.0 } else { 5.0 }
        })
        .unwrap();
        let s = gray_scene(16, 0.1, 0.8, 0.0);
        let target = composite(&g, &s, &m).unwrap();
        let s = SceneModel2D { target, ..s };
        assert_eq!(functional_value(&g, &s, &m).unwrap(), 0.0);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let m = Mollifier::new(1.5);
        let s = gray_scene(8, 0.0, 1.0, 0.5);
        assert!(composite(&flat(9, 1.0), &s, &m).is_err());
        assert!(SceneModel2D::constant(&[0.0, 0.0, 0.0], &[1.0], ImageBuffer::filled(4, 4, &[0.0])).is_err());
    }

    #[test]
    fn fit_colors_cases() {
        let m = Mollifier::new(1.5);
        let disk = LevelSetGrid::from_fn_2d(32, 32, 1.0, [0.0, 0.0], |p| {
            ((p[0] - 16.0).powi(2) + (p[1] - 16.0).powi(2)).sqrt() - 8.0
        })
        .unwrap();
        let t = ImageBuffer::filled(32, 32, &[0.7]);
        let f = fit_colors(&disk, &t, &m, &[0.0], &[0.0]).unwrap();
        assert!((f.fg[0] - 0.7).abs() < 1e-12 && (f.bg[0] - 0.7).abs() < 1e-12);

        let red_on_blue = ImageBuffer::from_fn(32, 32, 3, |x, y| {
            if disk.at([x, y, 0]) <= 0.0 { vec![1.0, 0.0, 0.0] } else { vec![0.0, 0.0, 1.0] }
        });
        let f = fit_colors(&disk, &red_on_blue, &m, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(f.fg[0] > 0.9 && f.fg[2] < 0.1, "{:?}", f.fg);
        assert!(f.bg[2] > 0.9 && f.bg[0] < 0.1, "{:?}", f.bg);

        let ramp = ImageBuffer::from_fn(8, 8, 1, |x, _| vec![x as f64 / 7.0]);
        let f = fit_colors(&flat(8, 9.0), &ramp, &m, &[0.33], &[0.0]).unwrap();
        assert!(f.fg_empty && !f.bg_empty);
        assert_eq!(f.fg, vec![0.33]);
        assert!((f.bg[0] - 0.5).abs() < 1e-12);
    }

    fn random_problem(seed: u64, n: usize) -> (LevelSetGrid, SceneModel2D) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = LevelSetGrid::new(&[n, n], 1.0, &[0.0, 0.0], vals).unwrap();
        let t: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        let s = SceneModel2D::constant(
            &[rng.gen::<f64>()],
            &[rng.gen::<f64>()],
            ImageBuffer::scalar(n, n, t).unwrap(),
        )
        .unwrap();
        (g, s)
    }

    /// Independent evaluation straight from the definitions.
    fn direct_functional(g: &LevelSetGrid, s: &SceneModel2D, eps: f64) -> f64 {
        let (cf, cb) = match (&s.fg, &s.bg) {
            (ColorModel::Constant(a), ColorModel::Constant(b)) => (a[0], b[0]),
            _ => unreachable!(),
        };
        let mut total = 0.0;
        for y in 0..s.target.height() {
            for x in 0..s.target.width() {
                let t = s.target.pixel(x, y)[0];
                let phi = g.at([x, y, 0]);
                let hv = if phi < -eps {
                    0.0
                } else if phi > eps {
                    1.0
                } else {
                    0.5 + 0.5 * phi / eps + (std::f64::consts::PI * phi / eps).sin() / (2.0 * std::f64::consts::PI)
                };
                total += (cf - t).powi(2) * (1.0 - hv) + (cb - t).powi(2) * hv;
            }
        }
        total * g.spacing() * g.spacing()
    }

    #[test]
    fn functional_matches_direct_sum() {
        for seed in 0..5 {
            let (g, s) = random_problem(seed, 12);
            let a = functional_value(&g, &s, &Mollifier::new(1.5)).unwrap();
            let b = direct_functional(&g, &s, 1.5);
            assert!((a - b).abs() < 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn optimal_colors_beat_grid_search() {
        let m = Mollifier::new(1.5);
        for seed in 0..4 {
            let (g, s) = random_problem(100 + seed, 8);
            let f = fit_colors(&g, &s.target, &m, &[0.0], &[0.0]).unwrap();
            let best = functional_value(&g, &SceneModel2D::constant(&f.fg, &f.bg, s.target.clone()).unwrap(), &m)
                .unwrap();
            for i in 0..=10 {
                for j in 0..=10 {
                    let (a, b) = (i as f64 / 10.0, j as f64 / 10.0);
                    let other = SceneModel2D::constant(&[a], &[b], s.target.clone()).unwrap();
                    assert!(best <= functional_value(&g, &other, &m).unwrap() + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn moving_a_pixel_toward_its_better_phase_lowers_the_functional(
            seed in 0u64..1000, x in 1usize..11, y in 1usize..11,
        ) {
            let m = Mollifier::new(1.5);
            let (g, s) = random_problem(seed, 12);
            let r = residuals(&s);
            let i = g.index([x, y, 0]);
            // step phi toward the phase with the smaller error
            let dir = if r.g_fg[i] > r.g_bg[i] { 0.3 } else { -0.3 };
            let mut v = g.values().to_vec();
            v[i] += dir;
            let moved = g.with_values(v).unwrap();
            prop_assert!(functional_value(&moved, &s, &m).unwrap() <= functional_value(&g, &s, &m).unwrap() + 1e-15);
        }

        #[test]
        fn composite_is_monotone_in_phi(a in -3.0f64..3.0, d in 0.0f64..2.0) {
            let m = Mollifier::new(1.5);
            let s = gray_scene(4, 0.2, 0.9, 0.0);
            let lo = composite(&flat(4, a), &s, &m).unwrap();
            let hi = composite(&flat(4, a + d), &s, &m).unwrap();
            prop_assert!(hi.data()[0] >= lo.data()[0]);
        }
    }
}
