//! Triangle meshes: topology, barycentric area weights, OBJ I/O, midpoint
//! subdivision and patch extraction.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {tri} references vertex {index} but the mesh has {n} vertices")]
    IndexOutOfRange { tri: usize, index: usize, n: usize },
    #[error("triangle {0} repeats a vertex")]
    RepeatedVertex(usize),
    #[error("non-manifold edge ({0}, {1}) is shared by {2} triangles")]
    NonManifoldEdge(usize, usize, usize),
    #[error("positions ({0}) and rest positions ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("pin mask has length {0}, mesh has {1} vertices")]
    PinMaskLength(usize, usize),
    #[error("triangle {0} has zero rest area")]
    DegenerateTriangle(usize),
    #[error("seed vertex {0} out of range")]
    InvalidSeed(usize),
    #[error("patch is empty")]
    EmptyPatch,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {0}: only triangular faces are supported")]
    NonTriangularFace(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// An interior edge with its two adjacent triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    /// Index into [`Mesh::edges`].
    pub edge: usize,
    /// Opposite vertex in each adjacent triangle, in triangle-index order.
    pub opposite: [usize; 2],
    pub triangles: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Current configuration (cm).
    pub positions: Vec<[f64; 3]>,
    rest_positions: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    dihedrals: Vec<Dihedral>,
    pinned: Vec<bool>,
}

/// Derives the sorted unique edge list and the dihedral elements of a
/// triangle soup. Edges are `(min, max)` pairs sorted lexicographically.
pub fn build_topology(triangles: &[[usize; 3]], n: usize) -> Result<(Vec<[usize; 2]>, Vec<Dihedral>)> {
    // (r, s, triangle, opposite)
    let mut sides = Vec::with_capacity(triangles.len() * 3);
    for (t, tri) in triangles.iter().enumerate() {
        for &i in tri {
            if i >= n {
                return Err(MeshError::IndexOutOfRange { tri: t, index: i, n });
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(MeshError::RepeatedVertex(t));
        }
        for k in 0..3 {
            let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            sides.push((a.min(b), a.max(b), t, c));
        }
    }
    sides.sort_unstable();

    let mut edges = Vec::new();
    let mut dihedrals = Vec::new();
    let mut i = 0;
    while i < sides.len() {
        let (r, s, _, _) = sides[i];
        let mut j = i;
        while j < sides.len() && sides[j].0 == r && sides[j].1 == s {
            j += 1;
        }
        let count = j - i;
        if count > 2 {
            return Err(MeshError::NonManifoldEdge(r, s, count));
        }
        if count == 2 {
            dihedrals.push(Dihedral {
                edge: edges.len(),
                opposite: [sides[i].3, sides[i + 1].3],
                triangles: [sides[i].2, sides[i + 1].2],
            });
        }
        edges.push([r, s]);
        i = j;
    }
    Ok((edges, dihedrals))
}

impl Mesh {
    pub fn new(positions: Vec<[f64; 3]>, rest_positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if positions.len() != rest_positions.len() {
            return Err(MeshError::LengthMismatch(positions.len(), rest_positions.len()));
        }
        let (edges, dihedrals) = build_topology(&triangles, positions.len())?;
        let pinned = vec![false; positions.len()];
        Ok(Mesh { positions, rest_positions, triangles, edges, dihedrals, pinned })
    }

    /// Mesh whose rest state equals its current state.
    pub fn from_positions(positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::new(positions.clone(), positions, triangles)
    }

    /// Regular grid of `nx × ny` quads in the z = 0 plane, each split along
    /// the same diagonal. Vertex `(i, j)` has index `j * (nx + 1) + i`.
    pub fn grid(nx: usize, ny: usize, spacing: f64) -> Self {
        let mut positions = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                positions.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::from_positions(positions, triangles).expect("grid topology is manifold")
    }

    pub fn with_pinned(mut self, pinned: Vec<bool>) -> Result<Self> {
        self.set_pinned(pinned)?;
        Ok(self)
    }

    pub fn set_pinned(&mut self, pinned: Vec<bool>) -> Result<()> {
        if pinned.len() != self.num_vertices() {
            return Err(MeshError::PinMaskLength(pinned.len(), self.num_vertices()));
        }
        self.pinned = pinned;
        Ok(())
    }

    pub fn set_rest_positions(&mut self, rest: Vec<[f64; 3]>) -> Result<()> {
        if rest.len() != self.num_vertices() {
            return Err(MeshError::LengthMismatch(self.num_vertices(), rest.len()));
        }
        self.rest_positions = rest;
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn rest_positions(&self) -> &[[f64; 3]] {
        &self.rest_positions
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn dihedrals(&self) -> &[Dihedral] {
        &self.dihedrals
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&[a.min(b), a.max(b)]).ok()
    }

    /// Neighbor lists derived from the edge list, each sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for &[r, s] in &self.edges {
            adj[r].push(s);
            adj[s].push(r);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Vertices lying on an edge with a single incident triangle.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut count = vec![0u8; self.edges.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let e = self.edge_index(tri[k], tri[(k + 1) % 3]).expect("triangle side is an edge");
                count[e] += 1;
            }
        }
        let mut mask = vec![false; self.num_vertices()];
        for (e, &[r, s]) in self.edges.iter().enumerate() {
            if count[e] == 1 {
                mask[r] = true;
                mask[s] = true;
            }
        }
        mask
    }

    /// For every vertex, the sorted set of vertices within `d` edge hops
    /// (including itself).
    pub fn ring_neighborhoods(&self, d: usize) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let n = self.num_vertices();
        let mut stamp = vec![usize::MAX; n];
        let mut out = Vec::with_capacity(n);
        for v in 0..n {
            let mut ring = vec![v];
            stamp[v] = v;
            let mut frontier = vec![v];
            for _ in 0..d {
                let mut next = Vec::new();
                for &u in &frontier {
                    for &w in &adj[u] {
                        if stamp[w] != v {
                            stamp[w] = v;
                            ring.push(w);
                            next.push(w);
                        }
                    }
                }
                frontier = next;
            }
            ring.sort_unstable();
            out.push(ring);
        }
        out
    }

    pub fn rest_edge_lengths(&self) -> Vec<f64> {
        self.edges.iter().map(|&[r, s]| dist(self.rest_positions[r], self.rest_positions[s])).collect()
    }

    pub fn mean_rest_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.rest_edge_lengths().iter().sum::<f64>() / self.edges.len() as f64
    }

    /// Sum of rest triangle areas.
    pub fn rest_area(&self) -> f64 {
        self.triangles.iter().map(|t| triangle_area(&self.rest_positions, t)).sum()
    }

    /// Sum of current triangle areas.
    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| triangle_area(&self.positions, t)).sum()
    }

    /// Translates both the current and the rest state.
    pub fn translate(&mut self, t: [f64; 3]) {
        for p in self.positions.iter_mut().chain(self.rest_positions.iter_mut()) {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

fn triangle_area(points: &[[f64; 3]], t: &[usize; 3]) -> f64 {
    0.5 * norm(cross(sub(points[t[1]], points[t[0]]), sub(points[t[2]], points[t[0]])))
}

/// Barycentric area weights of the rest configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeights {
    /// a_v (cm²)
    pub vertex_area: Vec<f64>,
    /// a_e (cm²), indexed like [`Mesh::edges`]
    pub edge_area: Vec<f64>,
    /// A (cm²)
    pub total_area: f64,
}

/// Each rest triangle gives a third of its area to each of its vertices and
/// a third to each of its edges.
pub fn compute_area_weights(mesh: &Mesh) -> Result<AreaWeights> {
    let mut vertex_area = vec![0.0; mesh.num_vertices()];
    let mut edge_area = vec![0.0; mesh.edges.len()];
    let mut total_area = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = triangle_area(&mesh.rest_positions, tri);
        // `!(area > 0)` also catches NaN
        if !(area > 0.0) {
            return Err(MeshError::DegenerateTriangle(t));
        }
        total_area += area;
        let third = area / 3.0;
        for k in 0..3 {
            vertex_area[tri[k]] += third;
            let e = mesh.edge_index(tri[k], tri[(k + 1) % 3]).expect("triangle side is an edge");
            edge_area[e] += third;
        }
    }
    Ok(AreaWeights { vertex_area, edge_area, total_area })
}

/// Splits every triangle into four through its edge midpoints, `levels`
/// times. Midpoints interpolate both configurations linearly and are pinned
/// only when both edge endpoints are.
pub fn subdivide_midpoint(mesh: &Mesh, levels: usize) -> Result<Mesh> {
    let mut current = mesh.clone();
    for _ in 0..levels {
        current = subdivide_once(&current)?;
    }
    Ok(current)
}

fn subdivide_once(mesh: &Mesh) -> Result<Mesh> {
    let n = mesh.num_vertices();
    let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    let mut positions = mesh.positions.clone();
    let mut rest = mesh.rest_positions.clone();
    let mut pinned = mesh.pinned.clone();
    for &[r, s] in &mesh.edges {
        positions.push(mid(mesh.positions[r], mesh.positions[s]));
        rest.push(mid(mesh.rest_positions[r], mesh.rest_positions[s]));
        pinned.push(mesh.pinned[r] && mesh.pinned[s]);
    }
    let m = |a: usize, b: usize| n + mesh.edge_index(a, b).expect("triangle side is an edge");
    let mut triangles = Vec::with_capacity(mesh.triangles.len() * 4);
    for &[a, b, c] in &mesh.triangles {
        let (ab, bc, ca) = (m(a, b), m(b, c), m(c, a));
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    Mesh::new(positions, rest, triangles)?.with_pinned(pinned)
}

/// A sub-mesh together with the source index of each of its vertices.
#[derive(Debug, Clone)]
pub struct Patch {
    pub mesh: Mesh,
    pub source_vertices: Vec<usize>,
}

/// Sub-mesh of all triangles whose three vertices lie within `rings` edge
/// hops of `seed`. Vertices on the patch's topological boundary are pinned.
pub fn extract_patch(mesh: &Mesh, seed: usize, rings: usize) -> Result<Patch> {
    let n = mesh.num_vertices();
    if seed >= n {
        return Err(MeshError::InvalidSeed(seed));
    }
    let adj = mesh.adjacency();
    let mut hops = vec![usize::MAX; n];
    hops[seed] = 0;
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        if hops[u] == rings {
            continue;
        }
        for &w in &adj[u] {
            if hops[w] == usize::MAX {
                hops[w] = hops[u] + 1;
                queue.push_back(w);
            }
        }
    }
    let kept: Vec<[usize; 3]> =
        mesh.triangles.iter().copied().filter(|t| t.iter().all(|&v| hops[v] <= rings)).collect();
    if kept.is_empty() {
        return Err(MeshError::EmptyPatch);
    }
    let mut used = vec![false; n];
    for t in &kept {
        for &v in t {
            used[v] = true;
        }
    }
    let source_vertices: Vec<usize> = (0..n).filter(|&v| used[v]).collect();
    let mut remap = vec![usize::MAX; n];
    for (new, &old) in source_vertices.iter().enumerate() {
        remap[old] = new;
    }
    let triangles = kept.iter().map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]]).collect();
    let positions = source_vertices.iter().map(|&v| mesh.positions[v]).collect();
    let rest = source_vertices.iter().map(|&v| mesh.rest_positions[v]).collect();
    let mut sub = Mesh::new(positions, rest, triangles)?;
    let boundary = sub.boundary_mask();
    sub.set_pinned(boundary)?;
    Ok(Patch { mesh: sub, source_vertices })
}

/// Parses ASCII OBJ text into positions and triangles. Only `v` and `f`
/// records are interpreted; texture/normal indices in faces are ignored.
pub fn parse_obj(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let parse_err = |msg: String| MeshError::Parse { line: line_no, msg };
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let tok = tokens.next().ok_or_else(|| parse_err("vertex needs 3 coordinates".into()))?;
                    *c = tok.parse().map_err(|_| parse_err(format!("bad coordinate '{tok}'")))?;
                }
                positions.push(p);
            }
            Some("f") => {
                let corners: Vec<&str> = tokens.collect();
                if corners.len() != 3 {
                    if corners.len() > 3 {
                        return Err(MeshError::NonTriangularFace(line_no));
                    }
                    return Err(parse_err("face needs 3 vertices".into()));
                }
                let mut tri = [0usize; 3];
                for (slot, corner) in tri.iter_mut().zip(&corners) {
                    let idx = corner.split('/').next().unwrap_or("");
                    let k: i64 = idx.parse().map_err(|_| parse_err(format!("bad face index '{corner}'")))?;
                    let resolved = match k {
                        k if k > 0 => k - 1,
                        k if k < 0 => positions.len() as i64 + k,
                        _ => -1,
                    };
                    if resolved < 0 {
                        return Err(parse_err(format!("face index {k} out of range")));
                    }
                    *slot = resolved as usize;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    Ok((positions, triangles))
}

/// Loads an OBJ; the rest state is the loaded geometry.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let (positions, triangles) = parse_obj(&fs::read_to_string(path)?)?;
    Mesh::from_positions(positions, triangles)
}

/// Loads a mesh and takes the rest state from a companion OBJ with the same
/// topology.
pub fn load_obj_with_rest(path: impl AsRef<Path>, rest_path: impl AsRef<Path>) -> Result<Mesh> {
    let mut mesh = load_obj(path)?;
    let (rest, rest_tris) = parse_obj(&fs::read_to_string(rest_path)?)?;
    if rest_tris != mesh.triangles {
        return Err(MeshError::Parse { line: 0, msg: "rest OBJ topology differs from mesh".into() });
    }
    mesh.set_rest_positions(rest)?;
    Ok(mesh)
}

fn obj_string(points: &[[f64; 3]], triangles: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(points.len() * 40 + triangles.len() * 20);
    for p in points {
        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
    }
    for t in triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

/// Writes the current positions as OBJ. Coordinates use the shortest
/// representation that round-trips exactly.
pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, obj_string(&mesh.positions, &mesh.triangles))?;
    Ok(())
}

pub fn save_rest_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, obj_string(&mesh.rest_positions, &mesh.triangles))?;
    Ok(())
}

/// Reads a pin list: one zero-based vertex index per line, `#` comments.
pub fn load_pins(path: impl AsRef<Path>, n: usize) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    let mut mask = vec![false; n];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let idx: usize = line
            .parse()
            .map_err(|_| MeshError::Parse { line: i + 1, msg: format!("bad vertex index '{line}'") })?;
        if idx >= n {
            return Err(MeshError::Parse { line: i + 1, msg: format!("vertex {idx} out of range") });
        }
        mask[idx] = true;
    }
    Ok(mask)
}

pub fn save_pins(mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (i, _) in mask.iter().enumerate().filter(|(_, &p)| p) {
        let _ = writeln!(out, "{i}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn brute_force_edges(triangles: &[[usize; 3]]) -> BTreeSet<[usize; 2]> {
        let mut set = BTreeSet::new();
        for t in triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if t[a] < t[b] {
                        set.insert([t[a], t[b]]);
                    }
                }
            }
        }
        set
    }

    #[test]
    fn single_triangle_topology() {
        let (edges, dihedrals) = build_topology(&[[0, 1, 2]], 3).unwrap();
        assert_eq!(edges, vec![[0, 1], [0, 2], [1, 2]]);
        assert!(dihedrals.is_empty());
    }

    #[test]
    fn two_triangle_dihedral() {
        let (edges, dihedrals) = build_topology(&[[0, 1, 2], [1, 3, 2]], 4).unwrap();
        assert_eq!(edges.len(), 5);
        assert_eq!(dihedrals.len(), 1);
        let d = dihedrals[0];
        assert_eq!(edges[d.edge], [1, 2]);
        assert_eq!(d.opposite, [0, 3]);
        assert_eq!(d.triangles, [0, 1]);
    }

    #[test]
    fn grid_edge_count_matches_brute_force() {
        for q in 1..8 {
            let mesh = Mesh::grid(q, q, 1.0);
            assert_eq!(mesh.triangles().len(), 2 * q * q);
            assert_eq!(mesh.edges().len(), 3 * q * q + 2 * q);
            let brute: Vec<[usize; 2]> = brute_force_edges(mesh.triangles()).into_iter().collect();
            assert_eq!(mesh.edges(), &brute[..]);
        }
    }

    #[test]
    fn topology_is_deterministic() {
        let tris = Mesh::grid(4, 3, 1.0).triangles().to_vec();
        assert_eq!(build_topology(&tris, 20).unwrap(), build_topology(&tris, 20).unwrap());
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let err = build_topology(&[[0, 1, 2], [0, 1, 3], [0, 1, 4]], 5).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge(0, 1, 3)));
    }

    #[test]
    fn bad_indices_rejected() {
        assert!(matches!(build_topology(&[[0, 1, 5]], 3), Err(MeshError::IndexOutOfRange { .. })));
        assert!(matches!(build_topology(&[[0, 1, 1]], 3), Err(MeshError::RepeatedVertex(0))));
    }

    #[test]
    fn equilateral_weights() {
        let h = 3f64.sqrt() / 2.0;
        let mesh = Mesh::from_positions(vec![[0., 0., 0.], [1., 0., 0.], [0.5, h, 0.]], vec![[0, 1, 2]]).unwrap();
        let w = compute_area_weights(&mesh).unwrap();
        let a = 3f64.sqrt() / 4.0;
        assert!((w.total_area - a).abs() < 1e-15);
        for v in w.vertex_area.iter().chain(&w.edge_area) {
            assert!((v - a / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn right_triangle_weights() {
        let mesh = Mesh::from_positions(vec![[0., 0., 0.], [1., 0., 0.], [0., 1., 0.]], vec![[0, 1, 2]]).unwrap();
        let w = compute_area_weights(&mesh).unwrap();
        assert_eq!(w.total_area, 0.5);
        for v in w.vertex_area.iter().chain(&w.edge_area) {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_weights_sum_to_area() {
        let mut mesh = Mesh::grid(4, 4, 0.7);
        for (i, p) in mesh.rest_positions.iter_mut().enumerate() {
            p[2] = 0.1 * (i as f64).sin();
        }
        let w = compute_area_weights(&mesh).unwrap();
        let direct: f64 = mesh.triangles().iter().map(|t| triangle_area(mesh.rest_positions(), t)).sum();
        let sv: f64 = w.vertex_area.iter().sum();
        let se: f64 = w.edge_area.iter().sum();
        assert!((w.total_area - direct).abs() <= 1e-12 * direct);
        assert!((sv - direct).abs() <= 1e-10 * direct);
        assert!((se - direct).abs() <= 1e-10 * direct);
        assert!(w.vertex_area.iter().chain(&w.edge_area).all(|&a| a >= 0.0));
    }

    #[test]
    fn zero_area_triangle_named() {
        let mesh = Mesh::from_positions(vec![[0., 0., 0.], [1., 0., 0.], [2., 0., 0.]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(compute_area_weights(&mesh), Err(MeshError::DegenerateTriangle(0))));
    }

    #[test]
    fn subdivision_counts() {
        let mesh = Mesh::from_positions(vec![[0., 0., 0.], [1., 0., 0.], [0., 1., 0.]], vec![[0, 1, 2]]).unwrap();
        assert_eq!(subdivide_midpoint(&mesh, 0).unwrap(), mesh);
        let once = subdivide_midpoint(&mesh, 1).unwrap();
        assert_eq!((once.num_vertices(), once.triangles().len(), once.edges().len()), (6, 4, 9));
        let grid = Mesh::grid(3, 2, 1.0);
        let twice = subdivide_midpoint(&grid, 2).unwrap();
        assert_eq!(twice.triangles().len(), 16 * grid.triangles().len());
        assert!((twice.rest_area() - grid.rest_area()).abs() <= 1e-12 * grid.rest_area());
    }

    #[test]
    fn subdivision_pins_and_interpolation() {
        let mesh = Mesh::grid(1, 1, 2.0).with_pinned(vec![true, true, false, false]).unwrap();
        let fine = subdivide_midpoint(&mesh, 1).unwrap();
        let e01 = mesh.edge_index(0, 1).unwrap();
        let e02 = mesh.edge_index(0, 2).unwrap();
        assert!(fine.pinned()[4 + e01]);
        assert!(!fine.pinned()[4 + e02]);
        assert_eq!(fine.positions[4 + e01], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn obj_parse_variants() {
        let (p, t) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!((p.len(), t), (3, vec![[0, 1, 2]]));
        let (_, t) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2/1/1 3//1\n").unwrap();
        assert_eq!(t, vec![[0, 1, 2]]);
        let (_, t) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(t, vec![[0, 1, 2]]);
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n"),
            Err(MeshError::NonTriangularFace(5))
        ));
        assert!(matches!(parse_obj("v 0 0\n"), Err(MeshError::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("# c\nv 0 0 x\n"), Err(MeshError::Parse { line: 2, .. })));
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mesh = Mesh::grid(3, 2, 0.3);
        mesh.positions[4][2] = 0.123456789012345;
        let path = dir.path().join("m.obj");
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.positions, mesh.positions);
        let pins = dir.path().join("p.txt");
        let mask = vec![true, false, false, true, false, false, false, false, false, false, false, true];
        save_pins(&mask, &pins).unwrap();
        assert_eq!(load_pins(&pins, 12).unwrap(), mask);
    }

    #[test]
    fn patch_of_single_triangle_is_all_pinned() {
        let mesh = Mesh::from_positions(vec![[0., 0., 0.], [1., 0., 0.], [0., 1., 0.]], vec![[0, 1, 2]]).unwrap();
        let patch = extract_patch(&mesh, 0, 1).unwrap();
        assert_eq!(patch.mesh.triangles().len(), 1);
        assert_eq!(patch.mesh.pinned(), &[true, true, true]);
    }

    #[test]
    fn closed_mesh_patch_has_no_pins() {
        // tetrahedron
        let mesh = Mesh::from_positions(
            vec![[0., 0., 0.], [1., 0., 0.], [0., 1., 0.], [0., 0., 1.]],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        )
        .unwrap();
        let patch = extract_patch(&mesh, 0, 3).unwrap();
        assert_eq!(patch.mesh.triangles().len(), 4);
        assert!(patch.mesh.pinned().iter().all(|p| !p));
    }

    #[test]
    fn grid_patch_boundary_matches_brute_force() {
        let mesh = Mesh::grid(6, 6, 1.0);
        let patch = extract_patch(&mesh, 24, 2).unwrap();
        let m = &patch.mesh;
        // a boundary edge appears in exactly one triangle
        let mut expected = vec![false; m.num_vertices()];
        for &[r, s] in m.edges() {
            let count = m.triangles().iter().filter(|t| t.contains(&r) && t.contains(&s)).count();
            if count == 1 {
                expected[r] = true;
                expected[s] = true;
            }
        }
        assert_eq!(m.pinned(), &expected[..]);
        assert!(expected.iter().any(|&b| b) && expected.iter().any(|&b| !b));
    }

    #[test]
    fn ring_neighborhoods_on_grid() {
        let mesh = Mesh::grid(4, 4, 1.0);
        let rings = mesh.ring_neighborhoods(1);
        // interior vertex of a diagonal-split grid has six neighbors
        assert_eq!(rings[12].len(), 7);
        let r2 = mesh.ring_neighborhoods(2);
        assert!(r2[12].len() > 7);
    }
}
