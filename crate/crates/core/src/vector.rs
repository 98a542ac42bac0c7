//! Polyline vector export of a converged 2D level set.
//!
//! All loops go into a single path filled with the even-odd rule, which
//! reproduces the level set's inside/outside parity without building a
//! nesting tree. World coordinates are written unchanged, so with the default
//! unit spacing one SVG user unit is one pixel.

use crate::error::Result;
use crate::grid::{extract_contours, Contour, ContourSet, LevelSetGrid};
use crate::image::ImageBuffer;
use std::fmt::Write as _;
use std::io::Write;

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn douglas_peucker(pts: &[[f64; 2]], tol: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut best, mut idx) = (-1.0, lo);
    for i in lo + 1..hi {
        let d = seg_dist(pts[i], pts[lo], pts[hi]);
        if d > best {
            best = d;
            idx = i;
        }
    }
    if best > tol {
        keep[idx] = true;
        douglas_peucker(pts, tol, keep, lo, idx);
        douglas_peucker(pts, tol, keep, idx, hi);
    }
}

/// Douglas-Peucker on a closed loop. The loop is split at its first vertex and
/// the vertex farthest from it, both of which are kept. Loops never drop below
/// three vertices.
pub fn simplify_loop(c: &Contour, tol: f64) -> Contour {
    let n = c.points.len();
    if tol <= 0.0 || n <= 3 {
        return c.clone();
    }
    let p0 = c.points[0];
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (c.points[a][0] - p0[0]).powi(2) + (c.points[a][1] - p0[1]).powi(2);
            let db = (c.points[b][0] - p0[0]).powi(2) + (c.points[b][1] - p0[1]).powi(2);
            da.total_cmp(&db)
        })
        .expect("loop has vertices");
    let mut ring = c.points.clone();
    ring.push(p0);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    douglas_peucker(&ring, tol, &mut keep, 0, far);
    douglas_peucker(&ring, tol, &mut keep, far, n);
    let mut pts: Vec<[f64; 2]> = (0..n).filter(|&i| keep[i]).map(|i| ring[i]).collect();
    if pts.len() < 3 {
        // degenerate sliver: keep the two anchors plus the farthest other vertex
        let extra = (1..n)
            .filter(|&i| i != far)
            .max_by(|&a, &b| {
                seg_dist(ring[a], p0, ring[far]).total_cmp(&seg_dist(ring[b], p0, ring[far]))
            })
            .expect("loop has more than three vertices");
        let mut idx = vec![0, far, extra];
        idx.sort_unstable();
        pts = idx.into_iter().map(|i| ring[i]).collect();
    }
    Contour { points: pts, ccw: c.ccw }
}

pub fn simplify(cs: &ContourSet, tol: f64) -> ContourSet {
    ContourSet { loops: cs.loops.iter().map(|c| simplify_loop(c, tol)).collect() }
}

/// A single even-odd filled shape over a solid background.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDocument {
    /// Canvas origin and extent in world units.
    pub origin: [f64; 2],
    pub size: [f64; 2],
    pub background: [f64; 3],
    pub fill: [f64; 3],
    pub loops: Vec<Contour>,
}

fn rgb(c: &[f64]) -> [f64; 3] {
    match c.len() {
        1 => [c[0]; 3],
        _ => [c[0], c[1], c[2]],
    }
    .map(|v| v.clamp(0.0, 1.0))
}

/// Canvas = lattice box extended by half a cell, so each node sits at the
/// center of its pixel.
pub fn build_document(g: &LevelSetGrid, fg: &[f64], bg: &[f64], tol: f64) -> VectorDocument {
    let h = g.spacing();
    let o = g.origin();
    let cs = simplify(&extract_contours(g), tol);
    let mut loops = cs.loops;
    loops.sort_by(|a, b| {
        let (la, _) = a.bbox();
        let (lb, _) = b.bbox();
        la[0]
            .total_cmp(&lb[0])
            .then(la[1].total_cmp(&lb[1]))
            .then(a.signed_area().abs().total_cmp(&b.signed_area().abs()))
    });
    VectorDocument {
        origin: [o[0] - 0.5 * h, o[1] - 0.5 * h],
        size: [g.dims()[0] as f64 * h, g.dims()[1] as f64 * h],
        background: rgb(bg),
        fill: rgb(fg),
        loops,
    }
}

fn hex(c: [f64; 3]) -> String {
    let b = c.map(|v| (v * 255.0).round() as u8);
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}

/// Path data `M x y L ... Z` per loop, three decimals.
pub fn path_data(loops: &[Contour]) -> String {
    let mut d = String::new();
    for (k, l) in loops.iter().enumerate() {
        if k > 0 {
            d.push(' ');
        }
        for (i, p) in l.points.iter().enumerate() {
            let cmd = if i == 0 { "M" } else { " L" };
            let _ = write!(d, "{cmd}{:.3} {:.3}", p[0], p[1]);
        }
        d.push_str(" Z");
    }
    d
}

pub fn write_svg<W: Write>(doc: &VectorDocument, mut w: W) -> std::io::Result<()> {
    let [x, y] = doc.origin;
    let [sw, sh] = doc.size;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{sw:.3}" height="{sh:.3}" viewBox="{x:.3} {y:.3} {sw:.3} {sh:.3}">"#
    )?;
    writeln!(
        w,
        r#"  <rect x="{x:.3}" y="{y:.3}" width="{sw:.3}" height="{sh:.3}" fill="{}"/>"#,
        hex(doc.background)
    )?;
    if !doc.loops.is_empty() {
        writeln!(
            w,
            r#"  <path fill="{}" fill-rule="evenodd" d="{}"/>"#,
            hex(doc.fill),
            path_data(&doc.loops)
        )?;
    }
    writeln!(w, "</svg>")
}

/// Point-sampled rendering of the document at node positions: each pixel
/// takes the fill color when its center is inside an odd number of loops.
pub fn rasterize(doc: &VectorDocument, g: &LevelSetGrid, channels: usize) -> ImageBuffer {
    let cs = ContourSet { loops: doc.loops.clone() };
    let (w, h) = (g.dims()[0], g.dims()[1]);
    ImageBuffer::from_fn(w, h, channels, |x, y| {
        let p = g.position([x, y, 0]);
        let c = if cs.contains([p[0], p[1]]) { doc.fill } else { doc.background };
        if channels == 1 { vec![c[0]] } else { c.to_vec() }
    })
}

pub fn svg_bytes(doc: &VectorDocument) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_svg(doc, &mut buf)?;
    Ok(buf)
}
