//! Signed distance colliders (negative inside) and the collider file format.
//!
//! A collider file is TOML with one `[[shape]]` table per shape:
//!
//! ```toml
//! [[shape]]
//! type = "sphere"
//! center = [0.0, 0.0, -10.0]
//! radius = 9.5
//!
//! [[shape]]
//! type = "grid"
//! path = "body.sdfgrid"   # relative to the collider file
//! ```
//!
//! Grid files are binary, all fields little-endian: the 8-byte magic
//! `SDFGRID1`, origin as three `f64`, spacing as one `f64`, dims as three
//! `u64`, then `nx*ny*nz` `f64` values in row-major order (the z index varies
//! fastest: `value[(i*ny + j)*nz + k]` sits at `origin + spacing*(i, j, k)`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::mesh::{cross, norm, sub};

const GRID_MAGIC: &[u8; 8] = b"SDFGRID1";

#[derive(Debug, Error)]
pub enum ColliderError {
    #[error("invalid collider: {0}")]
    Invalid(String),
    #[error("collider file {path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular grid of signed distance samples, trilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdfCollider {
    Sphere { center: [f64; 3], radius: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    /// `distance = normal · p - offset` with a unit normal.
    Plane { normal: [f64; 3], offset: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Torus { center: [f64; 3], axis: [f64; 3], major: f64, minor: f64 },
    Grid(SdfGrid),
    Union(Vec<SdfCollider>),
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

/// Some unit vector orthogonal to `a`.
fn orthogonal(a: [f64; 3]) -> [f64; 3] {
    let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    unit(cross(a, helper))
}

impl SdfGrid {
    fn sample(&self, i: usize, j: usize, k: usize) -> f64 {
        let [_, ny, nz] = self.dims;
        self.values[(i * ny + j) * nz + k]
    }

    fn extent_max(&self) -> [f64; 3] {
        let d = self.dims;
        [
            self.origin[0] + self.spacing * (d[0] - 1) as f64,
            self.origin[1] + self.spacing * (d[1] - 1) as f64,
            self.origin[2] + self.spacing * (d[2] - 1) as f64,
        ]
    }

    /// Trilinear interpolation inside the grid box; outside it, the value at
    /// the nearest box point plus the distance to that point.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let hi = self.extent_max();
        let mut q = p;
        for a in 0..3 {
            q[a] = q[a].clamp(self.origin[a], hi[a]);
        }
        let outside = norm(sub(p, q));
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (q[a] - self.origin[a]) / self.spacing;
            let cells = self.dims[a] - 1;
            let i = (t.floor() as usize).min(cells.saturating_sub(1));
            base[a] = i;
            frac[a] = if cells == 0 { 0.0 } else { t - i as f64 };
        }
        let step = |a: usize| usize::from(self.dims[a] > 1);
        let mut value = 0.0;
        for (di, wi) in [(0, 1.0 - frac[0]), (step(0), frac[0])] {
            for (dj, wj) in [(0, 1.0 - frac[1]), (step(1), frac[1])] {
                for (dk, wk) in [(0, 1.0 - frac[2]), (step(2), frac[2])] {
                    value += wi * wj * wk * self.sample(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
        value + outside
    }

    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-4 * self.spacing;
        let mut g = [0.0; 3];
        for a in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            g[a] = (self.distance(pp) - self.distance(pm)) / (2.0 * h);
        }
        g
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.values.len());
        buf.extend_from_slice(GRID_MAGIC);
        for v in self.origin {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.spacing.to_le_bytes());
        for d in self.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ColliderError> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let bad = |msg: &str| ColliderError::File { path: path.to_path_buf(), msg: msg.to_string() };
        if bytes.len() < 64 || &bytes[..8] != GRID_MAGIC {
            return Err(bad("not an SDF grid file"));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let u = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()) as usize;
        let origin = [f(8), f(16), f(24)];
        let spacing = f(32);
        let dims = [u(40), u(48), u(56)];
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| bad("dims overflow"))?;
        if bytes.len() != 64 + 8 * count {
            return Err(bad("value count does not match dims"));
        }
        let values = (0..count).map(|i| f(64 + 8 * i)).collect();
        let grid = SdfGrid { origin, spacing, dims, values };
        SdfCollider::Grid(grid.clone()).validate().map_err(|e| bad(&e.to_string()))?;
        Ok(grid)
    }
}

impl SdfCollider {
    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        SdfCollider::Sphere { center, radius }
    }

    pub fn plane(normal: [f64; 3], offset: f64) -> Self {
        SdfCollider::Plane { normal: unit(normal), offset }
    }

    pub fn validate(&self) -> Result<(), ColliderError> {
        let invalid = |m: &str| Err(ColliderError::Invalid(m.to_string()));
        match self {
            SdfCollider::Sphere { radius, .. } | SdfCollider::Capsule { radius, .. } if !(*radius > 0.0) => {
                invalid("radius must be positive")
            }
            SdfCollider::Plane { normal, .. } if !((norm(*normal) - 1.0).abs() < 1e-9) => {
                invalid("plane normal must be unit length")
            }
            SdfCollider::Box { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                invalid("box half extents must be positive")
            }
            SdfCollider::Torus { axis, major, minor, .. }
                if !(norm(*axis) > 0.0) || !(*major > 0.0) || !(*minor > 0.0) =>
            {
                invalid("torus needs a nonzero axis and positive radii")
            }
            SdfCollider::Grid(g) => {
                if g.dims.iter().any(|&d| d == 0) || g.values.len() != g.dims.iter().product::<usize>() {
                    return invalid("grid dims do not match values");
                }
                if !(g.spacing > 0.0) {
                    return invalid("grid spacing must be positive");
                }
                if g.values.iter().chain(&g.origin).any(|v| !v.is_finite()) {
                    return invalid("grid values must be finite");
                }
                Ok(())
            }
            SdfCollider::Union(parts) => {
                if parts.is_empty() {
                    return invalid("union must not be empty");
                }
                parts.iter().try_for_each(|p| p.validate())
            }
            _ => Ok(()),
        }
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        self.query(p).0
    }

    /// Signed distance and its gradient at `p`.
    pub fn query(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        match self {
            SdfCollider::Sphere { center, radius } => {
                let d = sub(p, *center);
                let n = norm(d);
                let g = if n > 0.0 { scale(d, 1.0 / n) } else { [0.0, 0.0, 1.0] };
                (n - radius, g)
            }
            SdfCollider::Capsule { a, b, radius } => {
                let ab = sub(*b, *a);
                let len2 = dot(ab, ab);
                let t = if len2 > 0.0 { (dot(sub(p, *a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let closest = add(*a, scale(ab, t));
                let d = sub(p, closest);
                let n = norm(d);
                let g = if n > 0.0 {
                    scale(d, 1.0 / n)
                } else if len2 > 0.0 {
                    orthogonal(ab)
                } else {
                    [0.0, 0.0, 1.0]
                };
                (n - radius, g)
            }
            SdfCollider::Plane { normal, offset } => (dot(*normal, p) - offset, *normal),
            SdfCollider::Box { center, half_extents } => {
                let d = sub(p, *center);
                let q = [d[0].abs() - half_extents[0], d[1].abs() - half_extents[1], d[2].abs() - half_extents[2]];
                let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                let out_len = norm(outside);
                if out_len > 0.0 {
                    let g = [
                        sign(d[0]) * outside[0] / out_len,
                        sign(d[1]) * outside[1] / out_len,
                        sign(d[2]) * outside[2] / out_len,
                    ];
                    (out_len, g)
                } else {
                    let axis = (0..3).fold(0, |best, a| if q[a] > q[best] { a } else { best });
                    let mut g = [0.0; 3];
                    g[axis] = sign(d[axis]);
                    (q[axis], g)
                }
            }
            SdfCollider::Torus { center, axis, major, minor } => {
                let a = unit(*axis);
                let d = sub(p, *center);
                let h = dot(d, a);
                let radial = sub(d, scale(a, h));
                let rho = norm(radial);
                let r_hat = if rho > 0.0 { scale(radial, 1.0 / rho) } else { orthogonal(a) };
                let q = [rho - major, h];
                let qn = (q[0] * q[0] + q[1] * q[1]).sqrt();
                let g = if qn > 0.0 { add(scale(r_hat, q[0] / qn), scale(a, q[1] / qn)) } else { r_hat };
                (qn - minor, g)
            }
            SdfCollider::Grid(grid) => (grid.distance(p), grid.gradient(p)),
            SdfCollider::Union(parts) => {
                let mut best = (f64::INFINITY, [0.0; 3]);
                for part in parts {
                    let q = part.query(p);
                    if q.0 < best.0 {
                        best = q;
                    }
                }
                best
            }
        }
    }

    /// The same collider moved by `t`.
    pub fn translated(&self, t: [f64; 3]) -> Self {
        match self {
            SdfCollider::Sphere { center, radius } => SdfCollider::Sphere { center: add(*center, t), radius: *radius },
            SdfCollider::Capsule { a, b, radius } => {
                SdfCollider::Capsule { a: add(*a, t), b: add(*b, t), radius: *radius }
            }
            SdfCollider::Plane { normal, offset } => SdfCollider::Plane { normal: *normal, offset: offset + dot(*normal, t) },
            SdfCollider::Box { center, half_extents } => {
                SdfCollider::Box { center: add(*center, t), half_extents: *half_extents }
            }
            SdfCollider::Torus { center, axis, major, minor } => {
                SdfCollider::Torus { center: add(*center, t), axis: *axis, major: *major, minor: *minor }
            }
            SdfCollider::Grid(g) => SdfCollider::Grid(SdfGrid { origin: add(g.origin, t), ..g.clone() }),
            SdfCollider::Union(parts) => SdfCollider::Union(parts.iter().map(|p| p.translated(t)).collect()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColliderFile {
    shape: Vec<ShapeSpec>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ShapeSpec {
    Sphere { center: [f64; 3], radius: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    Plane { normal: [f64; 3], offset: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Torus { center: [f64; 3], axis: [f64; 3], major: f64, minor: f64 },
    Grid { path: PathBuf },
}

/// Reads a collider file. Several shapes form a union.
pub fn load_colliders(path: impl AsRef<Path>) -> Result<SdfCollider, ColliderError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let file: ColliderFile =
        toml::from_str(&text).map_err(|e| ColliderError::File { path: path.to_path_buf(), msg: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut shapes = Vec::with_capacity(file.shape.len());
    for spec in file.shape {
        let shape = match spec {
            ShapeSpec::Sphere { center, radius } => SdfCollider::Sphere { center, radius },
            ShapeSpec::Capsule { a, b, radius } => SdfCollider::Capsule { a, b, radius },
            ShapeSpec::Plane { normal, offset } => {
                if !(norm(normal) > 0.0) {
                    return Err(ColliderError::Invalid("plane normal must be nonzero".into()));
                }
                SdfCollider::plane(normal, offset)
            }
            ShapeSpec::Box { center, half_extents } => SdfCollider::Box { center, half_extents },
            ShapeSpec::Torus { center, axis, major, minor } => SdfCollider::Torus { center, axis, major, minor },
            ShapeSpec::Grid { path: grid_path } => SdfCollider::Grid(SdfGrid::read(base.join(grid_path))?),
        };
        shapes.push(shape);
    }
    let collider = if shapes.len() == 1 { shapes.pop().unwrap() } else { SdfCollider::Union(shapes) };
    collider.validate()?;
    Ok(collider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(c: &SdfCollider, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for a in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            g[a] = (c.distance(pp) - c.distance(pm)) / (2.0 * h);
        }
        g
    }

    fn shapes() -> Vec<SdfCollider> {
        vec![
            SdfCollider::sphere([0.1, -0.2, 0.3], 0.8),
            SdfCollider::Capsule { a: [-0.5, 0.0, 0.0], b: [0.5, 0.2, 0.1], radius: 0.3 },
            SdfCollider::plane([0.0, 1.0, 1.0], 0.2),
            SdfCollider::Box { center: [0.0, 0.0, 0.0], half_extents: [0.5, 0.3, 0.7] },
            SdfCollider::Torus { center: [0.0, 0.0, 0.0], axis: [0.0, 0.0, 1.0], major: 0.8, minor: 0.25 },
        ]
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for shape in shapes() {
            for _ in 0..200 {
                let p = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
                let (_, g) = shape.query(p);
                let fd = fd_gradient(&shape, p);
                let err = norm(sub(g, fd));
                // box interiors have gradient kinks on medial planes
                if err > 1e-5 {
                    assert!(matches!(shape, SdfCollider::Box { .. }), "{shape:?} at {p:?}: {g:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn sphere_sign_convention() {
        let s = SdfCollider::sphere([0.0; 3], 1.0);
        assert_eq!(s.distance([0.0, 0.0, 0.5]), -0.5);
        assert_eq!(s.distance([0.0, 2.0, 0.0]), 1.0);
        assert_eq!(s.query([0.0, 0.0, 0.5]).1, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn grid_reproduces_linear_field() {
        // f(p) = p.z - 0.3 is reproduced exactly by trilinear interpolation
        let dims = [4, 5, 6];
        let (origin, spacing) = ([-1.0, -1.0, -1.0], 0.5);
        let mut values = Vec::new();
        for _i in 0..dims[0] {
            for _j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push(origin[2] + spacing * k as f64 - 0.3);
                }
            }
        }
        let grid = SdfCollider::Grid(SdfGrid { origin, spacing, dims, values });
        grid.validate().unwrap();
        let (d, g) = grid.query([0.2, 0.4, 0.1]);
        assert!((d - (-0.2)).abs() < 1e-12);
        assert!((g[2] - 1.0).abs() < 1e-6 && g[0].abs() < 1e-6);
    }

    #[test]
    fn union_takes_minimum() {
        let u = SdfCollider::Union(vec![SdfCollider::sphere([0.0; 3], 1.0), SdfCollider::sphere([3.0, 0.0, 0.0], 1.0)]);
        assert_eq!(u.distance([2.5, 0.0, 0.0]), -0.5);
        assert!(SdfCollider::Union(vec![]).validate().is_err());
    }

    #[test]
    fn translation_moves_field() {
        let t = [0.3, -1.0, 2.0];
        for shape in shapes() {
            let moved = shape.translated(t);
            let p = [0.2, 0.1, -0.4];
            assert!((shape.distance(p) - moved.distance(add(p, t))).abs() < 1e-12);
        }
    }

    #[test]
    fn collider_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SdfGrid { origin: [0.0; 3], spacing: 1.0, dims: [2, 2, 2], values: vec![-1., 0., 1., 2., 3., 4., 5., 6.] };
        grid.write(dir.path().join("g.sdfgrid")).unwrap();
        assert_eq!(SdfGrid::read(dir.path().join("g.sdfgrid")).unwrap(), grid);
        let file = dir.path().join("colliders.toml");
        fs::write(
            &file,
            "[[shape]]\ntype = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\n\n[[shape]]\ntype = \"grid\"\npath = \"g.sdfgrid\"\n",
        )
        .unwrap();
        match load_colliders(&file).unwrap() {
            SdfCollider::Union(parts) => {
                assert_eq!(parts.len(), 2);
                assert_eq!(parts[1], SdfCollider::Grid(grid));
            }
            other => panic!("expected union, got {other:?}"),
        }
        fs::write(&file, "[[shape]]\ntype = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\ncolor = 3\n").unwrap();
        assert!(load_colliders(&file).is_err());
        fs::write(&file, "[[shape]]\ntype = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = -1.0\n").unwrap();
        assert!(load_colliders(&file).is_err());
    }
}
