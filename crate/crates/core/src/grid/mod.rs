//! Dense uniform level-set grids and the numerics that operate on them.

mod contour;
mod fd;
mod io;
mod mesh;
mod mollifier;
mod reinit;

pub use contour::{count_topology, extract_contours, Contour, ContourSet};
pub use fd::{
    curvature, curvature_at, gradient_central, grad_norm_upwind, mean_curvature_at,
    DEGENERATE_GRADIENT,
};
pub use io::{read_grid, write_grid};
pub use mesh::{extract_mesh, TriMesh};
pub use mollifier::Mollifier;
pub use reinit::{interface_band, reinitialize, reinitialize_banded};

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Node index; the third component is always 0 for 2D grids.
pub type Node = [usize; 3];

/// Scalar level-set function sampled on an axis-aligned uniform grid.
///
/// Values are stored with x varying fastest, then y, then z. A 2D grid keeps
/// `dims[2] == 1` internally. `phi <= 0` marks the interior.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetGrid {
    ndim: usize,
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    values: Vec<f64>,
}

impl LevelSetGrid {
    pub fn new(dims: &[usize], spacing: f64, origin: &[f64], values: Vec<f64>) -> Result<Self> {
        let ndim = dims.len();
        if ndim != 2 && ndim != 3 {
            return Err(Error::InvalidGrid(format!("expected 2 or 3 axes, got {ndim}")));
        }
        if origin.len() != ndim {
            return Err(Error::InvalidGrid("origin length must match axis count".into()));
        }
        if dims.iter().any(|&d| d < 4) {
            return Err(Error::InvalidGrid(format!("every axis needs >= 4 nodes, got {dims:?}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        let mut d = [1usize; 3];
        let mut o = [0.0; 3];
        d[..ndim].copy_from_slice(dims);
        o[..ndim].copy_from_slice(origin);
        let len: usize = d.iter().product();
        if values.len() != len {
            return Err(Error::InvalidGrid(format!(
                "expected {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Self { ndim, dims: d, spacing, origin: o, values })
    }

    pub fn from_fn_2d(
        nx: usize,
        ny: usize,
        spacing: f64,
        origin: [f64; 2],
        f: impl Fn([f64; 2]) -> f64 + Sync,
    ) -> Result<Self> {
        let values = (0..nx * ny)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % nx, i / nx);
                f([origin[0] + x as f64 * spacing, origin[1] + y as f64 * spacing])
            })
            .collect();
        Self::new(&[nx, ny], spacing, &origin, values)
    }

    pub fn from_fn_3d(
        dims: [usize; 3],
        spacing: f64,
        origin: [f64; 3],
        f: impl Fn([f64; 3]) -> f64 + Sync,
    ) -> Result<Self> {
        let [nx, ny, nz] = dims;
        let values = (0..nx * ny * nz)
            .into_par_iter()
            .map(|i| {
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                f([
                    origin[0] + x as f64 * spacing,
                    origin[1] + y as f64 * spacing,
                    origin[2] + z as f64 * spacing,
                ])
            })
            .collect();
        Self::new(&dims, spacing, &origin, values)
    }

    /// A cubic 3D grid with `n` nodes per axis covering `[-half, half]^3`.
    pub fn cube(n: usize, half: f64, f: impl Fn([f64; 3]) -> f64 + Sync) -> Result<Self> {
        let h = 2.0 * half / (n as f64 - 1.0);
        Self::from_fn_3d([n, n, n], h, [-half, -half, -half], f)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Extents of the active axes.
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    /// Extents padded to three axes.
    pub fn shape(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values; callers must keep them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Self { values, ..self.clone() })
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.ndim == other.ndim
            && self.dims == other.dims
            && self.spacing == other.spacing
            && self.origin == other.origin
    }

    #[inline]
    pub fn index(&self, n: Node) -> usize {
        n[0] + self.dims[0] * (n[1] + self.dims[1] * n[2])
    }

    #[inline]
    pub fn node(&self, index: usize) -> Node {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    #[inline]
    pub fn at(&self, n: Node) -> f64 {
        self.values[self.index(n)]
    }

    /// World position of a node.
    #[inline]
    pub fn position(&self, n: Node) -> [f64; 3] {
        [
            self.origin[0] + n[0] as f64 * self.spacing,
            self.origin[1] + n[1] as f64 * self.spacing,
            self.origin[2] + n[2] as f64 * self.spacing,
        ]
    }

    /// World-space corners of the node lattice.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut hi = self.origin;
        for (a, h) in hi.iter_mut().enumerate().take(self.ndim) {
            *h += (self.dims[a] - 1) as f64 * self.spacing;
        }
        (self.origin, hi)
    }

    /// Continuous grid coordinates of a world point, clamped to the lattice.
    #[inline]
    fn locate(&self, p: [f64; 3]) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.ndim {
            let n = self.dims[a];
            let u = ((p[a] - self.origin[a]) / self.spacing).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        (base, frac)
    }

    /// Multilinear interpolation of phi; points outside the lattice are clamped.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let (b, f) = self.locate(p);
        if self.ndim == 2 {
            let i = self.index(b);
            let nx = self.dims[0];
            let v = &self.values;
            let a = v[i] * (1.0 - f[0]) + v[i + 1] * f[0];
            let c = v[i + nx] * (1.0 - f[0]) + v[i + nx + 1] * f[0];
            return a * (1.0 - f[1]) + c * f[1];
        }
        let i = self.index(b);
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let v = &self.values;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(v[i], v[i + sx], f[0]);
        let c10 = lerp(v[i + sy], v[i + sy + sx], f[0]);
        let c01 = lerp(v[i + sz], v[i + sz + sx], f[0]);
        let c11 = lerp(v[i + sz + sy], v[i + sz + sy + sx], f[0]);
        lerp(lerp(c00, c10, f[1]), lerp(c01, c11, f[1]), f[2])
    }

    /// Gradient of phi at a world point, blending central-difference node
    /// gradients multilinearly. Continuous across cells, unlike the gradient of
    /// the interpolant itself.
    pub fn sample_gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let (b, f) = self.locate(p);
        let mut g = [0.0; 3];
        let corners = if self.ndim == 2 { 4 } else { 8 };
        for c in 0..corners {
            let off = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            let mut n = b;
            for a in 0..self.ndim {
                n[a] += off[a];
                w *= if off[a] == 1 { f[a] } else { 1.0 - f[a] };
            }
            if w == 0.0 {
                continue;
            }
            let gn = gradient_central(self, n);
            for a in 0..3 {
                g[a] += w * gn[a];
            }
        }
        g
    }

    /// Multilinear weights of the cell containing `p`: (node index, weight).
    pub fn stencil(&self, p: [f64; 3]) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (b, f) = self.locate(p);
        let corners = if self.ndim == 2 { 4 } else { 8 };
        (0..corners).map(move |c| {
            let off = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            let mut n = b;
            for a in 0..self.ndim {
                n[a] += off[a];
                w *= if off[a] == 1 { f[a] } else { 1.0 - f[a] };
            }
            (self.index(n), w)
        })
    }

    /// Whether a world point lies inside the lattice box (with optional margin).
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let (lo, hi) = self.bounds();
        (0..self.ndim).all(|a| p[a] >= lo[a] + margin && p[a] <= hi[a] - margin)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Clamp every value into `[-cap, cap]`; zero set and sign are untouched.
    pub fn clamp_magnitude(&mut self, cap: f64) {
        for v in &mut self.values {
            *v = v.clamp(-cap, cap);
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Signed distance to a circle (2D) or sphere (3D) centered at `c`.
pub fn ball_sdf(p: [f64; 3], c: [f64; 3], r: f64) -> f64 {
    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - r
}
