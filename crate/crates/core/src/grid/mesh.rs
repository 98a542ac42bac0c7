//! Zero-isosurface extraction by marching tetrahedra.
//!
//! Each cube is split into six tetrahedra sharing the main diagonal, which
//! gives a crack-free, unambiguous triangulation. As in the 2D extractor the
//! lattice is padded with a ring of exterior nodes, so surfaces clipped by the
//! grid boundary are still closed.

use super::LevelSetGrid;
use std::collections::HashMap;
use std::io::Write;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit normals pointing toward `phi > 0`.
    pub normals: Vec<[f64; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                0.5 * norm(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F` over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_counts().values().all(|&c| c == 2)
    }

    /// Triangle index lists of the connected components.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind((0..self.vertices.len()).collect());
        for t in &self.triangles {
            uf.union(t[0], t[1]);
            uf.union(t[0], t[2]);
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            groups.entry(uf.find(t[0])).or_default().push(i);
        }
        let mut out: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
        out.sort_by_key(|(root, _)| *root);
        out.into_iter().map(|(_, g)| g).collect()
    }

    /// Total genus: the sum over closed components of `(2 - chi) / 2`.
    pub fn genus(&self) -> i64 {
        self.components()
            .into_iter()
            .map(|tris| {
                let part = TriMesh {
                    vertices: self.vertices.clone(),
                    triangles: tris.iter().map(|&i| self.triangles[i]).collect(),
                    normals: Vec::new(),
                };
                ((2 - part.euler_characteristic()) / 2).max(0)
            })
            .sum()
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2])?;
        }
        for n in &self.normals {
            writeln!(w, "vn {:.6} {:.6} {:.6}", n[0], n[1], n[2])?;
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        }
        Ok(())
    }
}

// Kuhn split: each tetrahedron walks from corner 0 to corner 7 adding one
// axis at a time. Corners are encoded as bit masks x=1, y=2, z=4.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

#[derive(Clone, Copy, Hash, PartialEq, Eq)]
enum VertexKey {
    Node(usize),
    Edge(usize, usize),
}

pub fn extract_mesh(g: &LevelSetGrid) -> TriMesh {
    assert_eq!(g.ndim(), 3, "extract_mesh needs a 3D grid");
    let d = g.shape();
    let pd = [d[0] + 2, d[1] + 2, d[2] + 2];
    let h = g.spacing();
    let o = g.origin();
    let val = |n: [usize; 3]| -> f64 {
        if (0..3).any(|a| n[a] == 0 || n[a] == pd[a] - 1) {
            h
        } else {
            g.at([n[0] - 1, n[1] - 1, n[2] - 1])
        }
    };
    let pos = |n: [usize; 3]| {
        [
            o[0] + (n[0] as f64 - 1.0) * h,
            o[1] + (n[1] as f64 - 1.0) * h,
            o[2] + (n[2] as f64 - 1.0) * h,
        ]
    };
    let pid = |n: [usize; 3]| n[0] + pd[0] * (n[1] + pd[1] * n[2]);

    let mut mesh = TriMesh::default();
    let mut lookup: HashMap<VertexKey, usize> = HashMap::new();
    let mut vertex = |mesh: &mut TriMesh, a: [usize; 3], b: [usize; 3]| -> usize {
        let (va, vb) = (val(a), val(b));
        let key = if va == 0.0 {
            VertexKey::Node(pid(a))
        } else {
            let (x, y) = (pid(a), pid(b));
            VertexKey::Edge(x.min(y), x.max(y))
        };
        *lookup.entry(key).or_insert_with(|| {
            let t = va / (va - vb);
            let (pa, pb) = (pos(a), pos(b));
            mesh.vertices.push([
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ]);
            mesh.vertices.len() - 1
        })
    };

    for z in 0..pd[2] - 1 {
        for y in 0..pd[1] - 1 {
            for x in 0..pd[0] - 1 {
                let corner = |m: usize| [x + (m & 1), y + ((m >> 1) & 1), z + ((m >> 2) & 1)];
                let cv: [f64; 8] = std::array::from_fn(|m| val(corner(m)));
                let inside_count = cv.iter().filter(|&&v| v <= 0.0).count();
                if inside_count == 0 || inside_count == 8 {
                    continue;
                }
                for tet in TETS {
                    let ins: Vec<usize> = tet.iter().copied().filter(|&m| cv[m] <= 0.0).collect();
                    let outs: Vec<usize> = tet.iter().copied().filter(|&m| cv[m] > 0.0).collect();
                    if ins.is_empty() || outs.is_empty() {
                        continue;
                    }
                    let centroid = |ms: &[usize]| {
                        let mut c = [0.0; 3];
                        for &m in ms {
                            let p = pos(corner(m));
                            for a in 0..3 {
                                c[a] += p[a] / ms.len() as f64;
                            }
                        }
                        c
                    };
                    let outward = sub(centroid(&outs), centroid(&ins));
                    let emit = |mesh: &mut TriMesh, tri: [usize; 3]| {
                        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
                        let n = cross(sub(b, a), sub(c, a));
                        if dot(n, outward) < 0.0 {
                            mesh.triangles.push([tri[0], tri[2], tri[1]]);
                        } else {
                            mesh.triangles.push(tri);
                        }
                    };
                    let mut e = |mesh: &mut TriMesh, i: usize, o: usize| vertex(mesh, corner(i), corner(o));
                    match (ins.len(), outs.len()) {
                        (1, 3) => {
                            let t = [e(&mut mesh, ins[0], outs[0]), e(&mut mesh, ins[0], outs[1]), e(&mut mesh, ins[0], outs[2])];
                            emit(&mut mesh, t);
                        }
                        (3, 1) => {
                            let t = [e(&mut mesh, ins[0], outs[0]), e(&mut mesh, ins[1], outs[0]), e(&mut mesh, ins[2], outs[0])];
                            emit(&mut mesh, t);
                        }
                        _ => {
                            // quad a-c, a-d, b-d, b-c
                            let p = [
                                e(&mut mesh, ins[0], outs[0]),
                                e(&mut mesh, ins[0], outs[1]),
                                e(&mut mesh, ins[1], outs[1]),
                                e(&mut mesh, ins[1], outs[0]),
                            ];
                            emit(&mut mesh, [p[0], p[1], p[2]]);
                            emit(&mut mesh, [p[0], p[2], p[3]]);
                        }
                    }
                }
            }
        }
    }

    // drop triangles collapsed by shared node vertices
    mesh.triangles.retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
    mesh.normals = mesh
        .vertices
        .iter()
        .map(|&p| {
            let gr = g.sample_gradient(p);
            let l = norm(gr);
            if l > super::fd::DEGENERATE_GRADIENT {
                [gr[0] / l, gr[1] / l, gr[2] / l]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
        .collect();
    // flat spots fall back to the area-weighted face normal
    let mut face_acc = vec![[0.0; 3]; mesh.vertices.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        let n = cross(sub(b, a), sub(c, a));
        for &i in t {
            for k in 0..3 {
                face_acc[i][k] += n[k];
            }
        }
    }
    for (n, f) in mesh.normals.iter_mut().zip(face_acc) {
        if *n == [0.0; 3] {
            let l = norm(f);
            *n = if l > 0.0 { [f[0] / l, f[1] / l, f[2] / l] } else { [0.0, 0.0, 1.0] };
        }
    }
    mesh
}
