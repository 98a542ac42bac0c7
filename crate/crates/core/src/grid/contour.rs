//! Marching squares on the zero level of a 2D grid.
//!
//! The lattice is surrounded by a virtual ring of exterior nodes one cell
//! out, so shapes touching the grid edge still produce closed loops. Loops
//! keep the interior on their left: outer boundaries run counterclockwise
//! (y up) and hole boundaries clockwise.

use super::LevelSetGrid;
use std::collections::HashMap;

/// One closed polyline; the closing edge from the last to the first point is
/// implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    /// Counterclockwise winding, i.e. the loop encloses interior.
    pub ccw: bool,
}

impl Contour {
    pub fn from_points(points: Vec<[f64; 2]>) -> Self {
        let mut c = Contour { points, ccw: false };
        c.ccw = c.signed_area() > 0.0;
        c
    }

    /// Shoelace area, positive for counterclockwise loops.
    pub fn signed_area(&self) -> f64 {
        let p = &self.points;
        let n = p.len();
        let mut s = 0.0;
        for i in 0..n {
            let (a, b) = (p[i], p[(i + 1) % n]);
            s += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * s
    }

    pub fn perimeter(&self) -> f64 {
        let p = &self.points;
        let n = p.len();
        (0..n)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % n]);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .sum()
    }

    /// Even-odd ray-crossing test.
    pub fn contains(&self, q: [f64; 2]) -> bool {
        let p = &self.points;
        let n = p.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (p[i], p[j]);
            if (a[1] > q[1]) != (b[1] > q[1]) {
                let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if q[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContourSet {
    pub loops: Vec<Contour>,
}

impl ContourSet {
    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    /// Even-odd membership over all loops.
    pub fn contains(&self, q: [f64; 2]) -> bool {
        self.loops.iter().filter(|l| l.contains(q)).count() % 2 == 1
    }

    /// Nesting depth of each loop: how many other loops enclose it.
    pub fn depths(&self) -> Vec<usize> {
        self.loops
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let probe = l.points[0];
                self.loops
                    .iter()
                    .enumerate()
                    .filter(|&(j, o)| j != i && o.contains(probe))
                    .count()
            })
            .collect()
    }

    /// Net enclosed area (holes subtract).
    pub fn area(&self) -> f64 {
        self.loops.iter().map(|l| l.signed_area()).sum()
    }
}

/// `(components, holes)`: loops at even nesting depth bound solid components,
/// loops at odd depth bound holes.
pub fn count_topology(cs: &ContourSet) -> (usize, usize) {
    let d = cs.depths();
    let comps = d.iter().filter(|&&k| k % 2 == 0).count();
    (comps, d.len() - comps)
}

pub fn extract_contours(g: &LevelSetGrid) -> ContourSet {
    assert_eq!(g.ndim(), 2, "extract_contours needs a 2D grid");
    let (nx, ny) = (g.dims()[0], g.dims()[1]);
    let h = g.spacing();
    let o = g.origin();
    let pw = nx + 2;
    let ph = ny + 2;
    let pad = h;
    let val = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i == pw - 1 || j == ph - 1 {
            pad
        } else {
            g.at([i - 1, j - 1, 0])
        }
    };
    let pos = |i: usize, j: usize| [o[0] + (i as f64 - 1.0) * h, o[1] + (j as f64 - 1.0) * h];
    let inside = |v: f64| v <= 0.0;

    // edge key: 2 * node index + (0 horizontal, 1 vertical)
    let mut points: HashMap<usize, [f64; 2]> = HashMap::new();
    let mut crossing = |a: (usize, usize), b: (usize, usize), key: usize| -> usize {
        points.entry(key).or_insert_with(|| {
            let (va, vb) = (val(a.0, a.1), val(b.0, b.1));
            let t = va / (va - vb);
            let (pa, pb) = (pos(a.0, a.1), pos(b.0, b.1));
            [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
        });
        key
    };

    let mut next: HashMap<usize, usize> = HashMap::new();
    for j in 0..ph - 1 {
        for i in 0..pw - 1 {
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v = c.map(|(x, y)| val(x, y));
            let ins = v.map(inside);
            if ins.iter().all(|&b| b) || ins.iter().all(|&b| !b) {
                continue;
            }
            let keys = [
                2 * (j * pw + i),
                2 * (j * pw + i + 1) + 1,
                2 * ((j + 1) * pw + i),
                2 * (j * pw + i) + 1,
            ];
            // walk the corners counterclockwise; an exit edge goes inside to
            // outside and starts a segment, an entry edge ends one
            let mut exits = Vec::with_capacity(2);
            let mut entries = Vec::with_capacity(2);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if ins[a] == ins[b] {
                    continue;
                }
                let k = crossing(c[a], c[b], keys[e]);
                if ins[a] {
                    exits.push((e, k));
                } else {
                    entries.push((e, k));
                }
            }
            if exits.len() == 1 {
                next.insert(exits[0].1, entries[0].1);
                continue;
            }
            let center_inside = inside(0.25 * v.iter().sum::<f64>());
            for &(e, k) in &exits {
                let pick = if center_inside {
                    entries.iter().find(|&&(f, _)| f == (e + 1) % 4)
                } else {
                    entries.iter().find(|&&(f, _)| f == (e + 3) % 4)
                };
                next.insert(k, pick.expect("saddle entries alternate").1);
            }
        }
    }

    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = std::collections::HashSet::new();
    let mut loops = Vec::new();
    for s in starts {
        if used.contains(&s) {
            continue;
        }
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut k = s;
        loop {
            used.insert(k);
            let p = points[&k];
            if pts.last().map_or(true, |q| dist2(*q, p) > 1e-24) {
                pts.push(p);
            }
            k = next[&k];
            if k == s {
                break;
            }
        }
        if pts.len() > 1 && dist2(pts[0], *pts.last().unwrap()) <= 1e-24 {
            pts.pop();
        }
        if pts.len() >= 3 {
            loops.push(Contour::from_points(pts));
        }
    }
    ContourSet { loops }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}
