//! Finite-difference operators on level-set grids.

use super::{LevelSetGrid, Node};

/// Below this gradient magnitude a node is treated as flat.
pub const DEGENERATE_GRADIENT: f64 = 1e-6;

#[inline]
fn shifted(g: &LevelSetGrid, n: Node, axis: usize, delta: isize) -> Option<f64> {
    let d = g.shape()[axis] as isize;
    let i = n[axis] as isize + delta;
    if i < 0 || i >= d {
        return None;
    }
    let mut m = n;
    m[axis] = i as usize;
    Some(g.at(m))
}

#[inline]
fn clamped(g: &LevelSetGrid, n: Node, off: [isize; 3]) -> f64 {
    let dims = g.shape();
    let mut m = n;
    for a in 0..g.ndim() {
        m[a] = (n[a] as isize + off[a]).clamp(0, dims[a] as isize - 1) as usize;
    }
    g.at(m)
}

/// Backward and forward one-sided differences along an axis. A missing side
/// at the lattice boundary copies the other one.
#[inline]
fn one_sided(g: &LevelSetGrid, n: Node, axis: usize) -> (f64, f64) {
    let h = g.spacing();
    let c = g.at(n);
    let back = shifted(g, n, axis, -1).map(|v| (c - v) / h);
    let fwd = shifted(g, n, axis, 1).map(|v| (v - c) / h);
    match (back, fwd) {
        (Some(b), Some(f)) => (b, f),
        (Some(b), None) => (b, b),
        (None, Some(f)) => (f, f),
        (None, None) => (0.0, 0.0),
    }
}

/// Central-difference gradient; one-sided at the lattice boundary.
pub fn gradient_central(g: &LevelSetGrid, n: Node) -> [f64; 3] {
    let mut out = [0.0; 3];
    let h = g.spacing();
    for (a, o) in out.iter_mut().enumerate().take(g.ndim()) {
        *o = match (shifted(g, n, a, -1), shifted(g, n, a, 1)) {
            (Some(b), Some(f)) => (f - b) / (2.0 * h),
            (Some(b), None) => (g.at(n) - b) / h,
            (None, Some(f)) => (f - g.at(n)) / h,
            (None, None) => 0.0,
        };
    }
    out
}

/// Godunov upwind approximation of `|grad phi|` for the update
/// `phi_t = s |grad phi|` where `s` has sign `speed_sign`.
///
/// A positive sign raises phi, so information arrives from the side where
/// phi is larger; a zero sign falls back to central differences.
pub fn grad_norm_upwind(g: &LevelSetGrid, n: Node, speed_sign: f64) -> f64 {
    if speed_sign == 0.0 {
        let c = gradient_central(g, n);
        return (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    }
    let mut s = 0.0;
    for a in 0..g.ndim() {
        let (dm, dp) = one_sided(g, n, a);
        s += if speed_sign > 0.0 {
            dm.min(0.0).powi(2).max(dp.max(0.0).powi(2))
        } else {
            dm.max(0.0).powi(2).max(dp.min(0.0).powi(2))
        };
    }
    s.sqrt()
}

/// `div(grad phi / |grad phi|)`: the sum of principal curvatures, positive on
/// convex interiors. Returns 0 where the gradient is degenerate.
pub fn curvature(g: &LevelSetGrid, n: Node) -> f64 {
    let h = g.spacing();
    let c = g.at(n);
    let d = |off: [isize; 3]| clamped(g, n, off);
    let fx = (d([1, 0, 0]) - d([-1, 0, 0])) / (2.0 * h);
    let fy = (d([0, 1, 0]) - d([0, -1, 0])) / (2.0 * h);
    let fxx = (d([1, 0, 0]) - 2.0 * c + d([-1, 0, 0])) / (h * h);
    let fyy = (d([0, 1, 0]) - 2.0 * c + d([0, -1, 0])) / (h * h);
    let fxy = (d([1, 1, 0]) - d([1, -1, 0]) - d([-1, 1, 0]) + d([-1, -1, 0])) / (4.0 * h * h);
    if g.ndim() == 2 {
        let norm2 = fx * fx + fy * fy;
        if norm2.sqrt() < DEGENERATE_GRADIENT {
            return 0.0;
        }
        return (fxx * fy * fy - 2.0 * fx * fy * fxy + fyy * fx * fx) / norm2.powf(1.5);
    }
    let fz = (d([0, 0, 1]) - d([0, 0, -1])) / (2.0 * h);
    let fzz = (d([0, 0, 1]) - 2.0 * c + d([0, 0, -1])) / (h * h);
    let fxz = (d([1, 0, 1]) - d([1, 0, -1]) - d([-1, 0, 1]) + d([-1, 0, -1])) / (4.0 * h * h);
    let fyz = (d([0, 1, 1]) - d([0, 1, -1]) - d([0, -1, 1]) + d([0, -1, -1])) / (4.0 * h * h);
    let norm2 = fx * fx + fy * fy + fz * fz;
    if norm2.sqrt() < DEGENERATE_GRADIENT {
        return 0.0;
    }
    let num = (fyy + fzz) * fx * fx + (fxx + fzz) * fy * fy + (fxx + fyy) * fz * fz
        - 2.0 * (fx * fy * fxy + fx * fz * fxz + fy * fz * fyz);
    num / norm2.powf(1.5)
}

/// Curvature at a world point, blended from the surrounding nodes.
pub fn curvature_at(g: &LevelSetGrid, p: [f64; 3]) -> f64 {
    g.stencil(p)
        .filter(|&(_, w)| w > 0.0)
        .map(|(i, w)| w * curvature(g, g.node(i)))
        .sum()
}

/// Mean curvature (average of principal curvatures) at a world point.
pub fn mean_curvature_at(g: &LevelSetGrid, p: [f64; 3]) -> f64 {
    curvature_at(g, p) / (g.ndim() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ball_sdf;

    fn affine(a: f64, b: f64) -> LevelSetGrid {
        LevelSetGrid::from_fn_2d(12, 10, 0.5, [-2.0, -1.0], |p| a * p[0] + b * p[1]).unwrap()
    }

    #[test]
    fn central_gradient_is_exact_on_affine() {
        let g = affine(3.0, 2.0);
        for n in [[0, 0, 0], [5, 4, 0], [11, 9, 0], [3, 9, 0]] {
            let gr = gradient_central(&g, n);
            assert!((gr[0] - 3.0).abs() < 1e-10 && (gr[1] - 2.0).abs() < 1e-10);
        }
        let g = affine(1.0, 0.0);
        assert_eq!(gradient_central(&g, [4, 4, 0])[..2], [1.0, 0.0]);
        let c = affine(0.0, 0.0);
        assert_eq!(gradient_central(&c, [4, 4, 0]), [0.0; 3]);
    }

    #[test]
    fn upwind_norm_agrees_with_central_on_affine() {
        let g = affine(3.0, 2.0);
        let want = 13f64.sqrt();
        for s in [-1.0, 0.0, 1.0] {
            for n in [[1, 1, 0], [6, 5, 0], [0, 9, 0]] {
                assert!((grad_norm_upwind(&g, n, s) - want).abs() < 1e-10);
            }
        }
        let x = affine(1.0, 0.0);
        assert!((grad_norm_upwind(&x, [5, 5, 0], 1.0) - 1.0).abs() < 1e-12);
        assert!((grad_norm_upwind(&x, [5, 5, 0], -1.0) - 1.0).abs() < 1e-12);
        assert_eq!(grad_norm_upwind(&affine(0.0, 0.0), [5, 5, 0], 1.0), 0.0);
    }

    #[test]
    fn upwind_norm_at_kink() {
        // phi = |x| with the kink on node 4
        let g = LevelSetGrid::from_fn_2d(9, 6, 1.0, [-4.0, 0.0], |p| p[0].abs()).unwrap();
        assert!((grad_norm_upwind(&g, [4, 2, 0], 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(grad_norm_upwind(&g, [4, 2, 0], -1.0), 0.0);
    }

    #[test]
    fn curvature_of_line_and_circle() {
        let line = LevelSetGrid::from_fn_2d(20, 20, 0.1, [0.0, 0.0], |p| {
            (p[0] * 0.6 + p[1] * 0.8) - 1.0
        })
        .unwrap();
        assert!(curvature(&line, [10, 10, 0]).abs() < 1e-6);

        let h = 0.05;
        let circle = LevelSetGrid::from_fn_2d(61, 61, h, [-1.5, -1.5], |p| {
            ball_sdf([p[0], p[1], 0.0], [0.0; 3], 1.0)
        })
        .unwrap();
        let k = curvature(&circle, [50, 30, 0]);
        assert!((k - 1.0).abs() < 0.05, "kappa = {k}");
    }

    #[test]
    fn curvature_of_sphere_sums_principal_curvatures() {
        let r = 0.5;
        let g = LevelSetGrid::cube(41, 1.0, |p| ball_sdf(p, [0.0; 3], r)).unwrap();
        // node (30, 20, 20) sits at x = 0.5 on the surface
        let k = curvature(&g, [30, 20, 20]);
        assert!((k - 2.0 / r).abs() < 0.05 * 2.0 / r, "kappa = {k}");
    }

    #[test]
    fn flat_region_has_zero_curvature() {
        let g = LevelSetGrid::from_fn_2d(8, 8, 1.0, [0.0, 0.0], |_| 2.0).unwrap();
        assert_eq!(curvature(&g, [3, 3, 0]), 0.0);
    }
}
