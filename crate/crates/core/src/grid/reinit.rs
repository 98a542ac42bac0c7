//! Restores the signed-distance property by relaxing
//! `phi_t = sign(phi0) (1 - |grad phi|)` with the Russo-Smereka subcell fix
//! on nodes adjacent to the zero crossing.

use super::fd::grad_norm_upwind;
use super::LevelSetGrid;
use rayon::prelude::*;

fn strict_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-node flag: the node is zero or has an axis neighbor of opposite sign.
fn interface_nodes(g: &LevelSetGrid) -> Vec<bool> {
    let dims = g.shape();
    let v = g.values();
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let a = v[i];
            if a == 0.0 {
                return true;
            }
            let n = g.node(i);
            for ax in 0..g.ndim() {
                for d in [-1isize, 1] {
                    let k = n[ax] as isize + d;
                    if k < 0 || k >= dims[ax] as isize {
                        continue;
                    }
                    let mut m = n;
                    m[ax] = k as usize;
                    if a * g.at(m) < 0.0 {
                        return true;
                    }
                }
            }
            false
        })
        .collect()
}

/// Nodes within `cells` (Chebyshev distance) of a zero crossing.
pub fn interface_band(g: &LevelSetGrid, cells: usize) -> Vec<bool> {
    let mut mask = interface_nodes(g);
    let dims = g.shape();
    let stride = [1, dims[0], dims[0] * dims[1]];
    for ax in 0..g.ndim() {
        let n = dims[ax];
        let mut out = vec![false; mask.len()];
        // every line along `ax` starts at an index whose `ax` coordinate is 0
        for start in 0..mask.len() {
            if g.node(start)[ax] != 0 {
                continue;
            }
            let mut prefix = vec![0usize; n + 1];
            for k in 0..n {
                prefix[k + 1] = prefix[k] + mask[start + k * stride[ax]] as usize;
            }
            for k in 0..n {
                let lo = k.saturating_sub(cells);
                let hi = (k + cells + 1).min(n);
                out[start + k * stride[ax]] = prefix[hi] > prefix[lo];
            }
        }
        mask = out;
    }
    mask
}

/// Subcell distance estimate for interface nodes.
fn subcell_distance(g: &LevelSetGrid, i: usize) -> f64 {
    let dims = g.shape();
    let n = g.node(i);
    let c = g.at(n);
    let mut s = 0.0;
    for ax in 0..g.ndim() {
        let get = |d: isize| {
            let k = n[ax] as isize + d;
            (k >= 0 && k < dims[ax] as isize).then(|| {
                let mut m = n;
                m[ax] = k as usize;
                g.at(m)
            })
        };
        let (b, f) = (get(-1), get(1));
        let mut d: f64 = 0.0;
        if let Some(b) = b {
            d = d.max((c - b).abs());
        }
        if let Some(f) = f {
            d = d.max((f - c).abs());
        }
        if let (Some(b), Some(f)) = (b, f) {
            d = d.max(0.5 * (f - b).abs());
        }
        s += d * d;
    }
    let denom = s.sqrt().max(1e-12 * g.spacing());
    g.spacing() * c / denom
}

fn relax(g: &LevelSetGrid, iters: usize, active: Option<&[bool]>) -> LevelSetGrid {
    let phi0 = g.clone();
    let h = g.spacing();
    let dt = 0.9 * h / g.ndim() as f64;
    let iface = interface_nodes(&phi0);
    let sub: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| if iface[i] { subcell_distance(&phi0, i) } else { 0.0 })
        .collect();
    let idx: Vec<usize> = match active {
        Some(m) => (0..g.len()).filter(|&i| m[i]).collect(),
        None => (0..g.len()).collect(),
    };
    let mut cur = g.clone();
    for _ in 0..iters {
        let updates: Vec<f64> = idx
            .par_iter()
            .map(|&i| {
                let s = strict_sign(phi0.values()[i]);
                let p = cur.values()[i];
                if s == 0.0 {
                    return p;
                }
                if iface[i] {
                    p - dt / h * (s * p.abs() - sub[i])
                } else {
                    let gn = grad_norm_upwind(&cur, cur.node(i), -s);
                    p - dt * s * (gn - 1.0)
                }
            })
            .collect();
        let vals = cur.values_mut();
        for (&i, u) in idx.iter().zip(updates) {
            vals[i] = u;
        }
    }
    cur
}

/// Full-grid reinitialization.
pub fn reinitialize(g: &LevelSetGrid, iters: usize) -> LevelSetGrid {
    relax(g, iters, None)
}

/// Reinitialization restricted to nodes within `band_cells` of the current
/// zero crossing; everything farther away is left untouched, so interior
/// plateaus that are still rising toward a nucleation event keep their values.
pub fn reinitialize_banded(g: &LevelSetGrid, iters: usize, band_cells: usize) -> LevelSetGrid {
    let mask = interface_band(g, band_cells);
    relax(g, iters, Some(&mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ball_sdf, extract_contours, gradient_central};

    fn circle(h: f64, r: f64, scale: f64) -> LevelSetGrid {
        let n = (2.0 * (r + 6.0 * h) / h) as usize + 1;
        let o = -(n as f64 - 1.0) * h / 2.0;
        LevelSetGrid::from_fn_2d(n, n, h, [o, o], |p| scale * ball_sdf([p[0], p[1], 0.0], [0.0; 3], r))
            .unwrap()
    }

    fn band_gradient_range(g: &LevelSetGrid, band: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..g.len() {
            let n = g.node(i);
            if n[0] == 0 || n[1] == 0 || n[0] + 1 == g.dims()[0] || n[1] + 1 == g.dims()[1] {
                continue;
            }
            if g.values()[i].abs() <= band {
                let gr = gradient_central(g, n);
                let m = (gr[0] * gr[0] + gr[1] * gr[1]).sqrt();
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        (lo, hi)
    }

    #[test]
    fn exact_line_sdf_is_a_fixed_point() {
        let h = 0.1;
        let g = LevelSetGrid::from_fn_2d(30, 30, h, [0.0, 0.0], |p| 0.6 * p[0] + 0.8 * p[1] - 1.3)
            .unwrap();
        let r = reinitialize(&g, 20);
        let drift = g
            .values()
            .iter()
            .zip(r.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-3 * h, "drift {drift}");
    }

    #[test]
    fn restores_unit_gradient_after_scaling() {
        let h = 1.0;
        let g = circle(h, 12.0, 5.0);
        let r = reinitialize(&g, 60);
        let (lo, hi) = band_gradient_range(&r, 3.0 * h);
        assert!(lo >= 0.8 && hi <= 1.2, "gradient range [{lo}, {hi}]");
        let before = extract_contours(&g);
        let after = extract_contours(&r);
        assert_eq!(before.loops.len(), 1);
        assert_eq!(after.loops.len(), 1);
        // every vertex of the new contour stays near the exact circle
        for p in &after.loops[0].points {
            let d = (p[0] * p[0] + p[1] * p[1]).sqrt() - 12.0;
            assert!(d.abs() < 0.5 * h, "displacement {d}");
        }
    }

    #[test]
    fn empty_shape_stays_empty() {
        let g = LevelSetGrid::from_fn_2d(10, 10, 1.0, [0.0, 0.0], |p| 1.0 + 0.3 * p[0]).unwrap();
        let r = reinitialize(&g, 10);
        assert!(r.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn band_mask_covers_interface_only() {
        let g = circle(1.0, 10.0, 1.0);
        let m = interface_band(&g, 2);
        for (i, &on) in m.iter().enumerate() {
            let v = g.values()[i];
            if v.abs() < 0.5 {
                assert!(on);
            }
            if v.abs() > 3.5 {
                assert!(!on);
            }
        }
    }

    #[test]
    fn banded_leaves_far_nodes_untouched() {
        let g = circle(1.0, 10.0, 3.0);
        let r = reinitialize_banded(&g, 10, 3);
        let center = g.index([g.dims()[0] / 2, g.dims()[1] / 2, 0]);
        assert_eq!(g.values()[center], r.values()[center]);
    }
}
