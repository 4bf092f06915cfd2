//! Triangle meshes: loading, canonical normalization, procedural test
//! shapes, and surface sampling.

use crate::error::{Error, Result};
use crate::geom::{aabb, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::DegenerateGeometry(
                "mesh has no vertices or no faces".into(),
            ));
        }
        for t in &triangles {
            for &v in t {
                if v as usize >= vertices.len() {
                    return Err(Error::DegenerateGeometry(format!(
                        "face index {v} out of range"
                    )));
                }
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn aabb(&self) -> Result<(Vec3, Vec3)> {
        aabb(&self.vertices)
    }

    /// Loads a mesh from `.obj` or `.ply`, deciding by extension.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => Self::load_obj(path),
            Some("ply") => crate::ply::read_mesh(path),
            _ => Err(Error::InvalidConfig(format!(
                "unsupported mesh extension in {}",
                path.display()
            ))),
        }
    }

    /// Minimal OBJ reader: `v` and `f` records, `f` entries may carry
    /// `/texture/normal` suffixes, polygons are fan-triangulated.
    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let mut next = || -> Result<f64> {
                        tok.next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::Parse {
                                path: path.display().to_string(),
                                line: lineno + 1,
                                reason: "bad vertex".into(),
                            })
                    };
                    vertices.push(Vec3::new(next()?, next()?, next()?));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|t| {
                            t.split('/')
                                .next()
                                .and_then(|s| s.parse::<usize>().ok())
                                .filter(|&v| v >= 1 && v <= vertices.len())
                                .ok_or_else(|| Error::Parse {
                                    path: path.display().to_string(),
                                    line: lineno + 1,
                                    reason: "bad face index".into(),
                                })
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            reason: "face needs at least 3 vertices".into(),
                        });
                    }
                    for i in 1..idx.len() - 1 {
                        triangles.push([
                            (idx[0] - 1) as u32,
                            (idx[i] - 1) as u32,
                            (idx[i + 1] - 1) as u32,
                        ]);
                    }
                }
                _ => {}
            }
        }
        TriangleMesh::new(vertices, triangles)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Normalizes into the canonical object frame: the tightest axis-aligned
    /// box becomes `[-1, 1]^3` (per axis), and the box half-extents in
    /// meters become the object's scale.
    pub fn canonicalized(&self) -> Result<CanonicalMesh> {
        let (lo, hi) = self.aabb()?;
        let center = (lo + hi) * 0.5;
        let half = (hi - lo) * 0.5;
        if !(half.x > 1e-9 && half.y > 1e-9 && half.z > 1e-9) {
            return Err(Error::DegenerateGeometry(format!(
                "mesh is flat (half extents {:.3e}, {:.3e}, {:.3e})",
                half.x, half.y, half.z
            )));
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| (v - center).component_div(&half))
            .collect();
        Ok(CanonicalMesh {
            vertices,
            triangles: self.triangles.clone(),
            half_extents: half,
        })
    }

    /// Axis-aligned box with the given half extents, centered at the origin.
    pub fn box_mesh(half: Vec3) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            vertices.push(Vec3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            ));
        }
        // Two triangles per face, indices into the corner numbering above.
        let triangles = vec![
            [0, 2, 6], [0, 6, 4], // x = -h
            [1, 5, 7], [1, 7, 3], // x = +h
            [0, 4, 5], [0, 5, 1], // y = -h
            [2, 3, 7], [2, 7, 6], // y = +h
            [0, 1, 3], [0, 3, 2], // z = -h
            [4, 6, 7], [4, 7, 5], // z = +h
        ];
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    /// Closed cylinder around the +y axis.
    pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> Self {
        let s = segments.max(3);
        let mut vertices = Vec::with_capacity(2 * s + 2);
        for ring in 0..2 {
            let y = if ring == 0 { -half_height } else { half_height };
            for i in 0..s {
                let a = 2.0 * std::f64::consts::PI * i as f64 / s as f64;
                vertices.push(Vec3::new(radius * a.cos(), y, radius * a.sin()));
            }
        }
        let bottom_center = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, -half_height, 0.0));
        let top_center = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, half_height, 0.0));
        let mut triangles = Vec::with_capacity(4 * s);
        for i in 0..s as u32 {
            let j = (i + 1) % s as u32;
            let (b0, b1) = (i, j);
            let (t0, t1) = (s as u32 + i, s as u32 + j);
            triangles.push([b0, b1, t1]);
            triangles.push([b0, t1, t0]);
            triangles.push([bottom_center, b1, b0]);
            triangles.push([top_center, t0, t1]);
        }
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    /// UV sphere.
    pub fn sphere(radius: f64, rings: usize, segments: usize) -> Self {
        let (rings, segments) = (rings.max(3), segments.max(3));
        let mut vertices = Vec::new();
        vertices.push(Vec3::new(0.0, -radius, 0.0));
        for r in 1..rings {
            let phi = std::f64::consts::PI * r as f64 / rings as f64 - std::f64::consts::FRAC_PI_2;
            for s in 0..segments {
                let theta = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    radius * phi.cos() * theta.cos(),
                    radius * phi.sin(),
                    radius * phi.cos() * theta.sin(),
                ));
            }
        }
        let top = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, radius, 0.0));
        let mut triangles = Vec::new();
        let ring_start = |r: usize| 1 + (r - 1) * segments;
        for s in 0..segments as u32 {
            let next = (s + 1) % segments as u32;
            triangles.push([0, ring_start(1) as u32 + next, ring_start(1) as u32 + s]);
            triangles.push([top, ring_start(rings - 1) as u32 + s, ring_start(rings - 1) as u32 + next]);
        }
        for r in 1..rings - 1 {
            let a = ring_start(r) as u32;
            let b = ring_start(r + 1) as u32;
            for s in 0..segments as u32 {
                let next = (s + 1) % segments as u32;
                triangles.push([a + s, a + next, b + next]);
                triangles.push([a + s, b + next, b + s]);
            }
        }
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    /// Two overlapping boxes forming an L; no proper rotational symmetry,
    /// which makes it a good orientation probe.
    pub fn l_shape(size: f64) -> Self {
        let arm = |half: Vec3, offset: Vec3| -> (Vec<Vec3>, Vec<[u32; 3]>) {
            let b = TriangleMesh::box_mesh(half);
            (
                b.vertices.iter().map(|v| v + offset).collect(),
                b.triangles,
            )
        };
        let (mut vertices, mut triangles) = arm(
            Vec3::new(0.2 * size, 0.5 * size, 0.175 * size),
            Vec3::new(-0.3 * size, 0.0, 0.0),
        );
        let (v2, t2) = arm(
            Vec3::new(0.5 * size, 0.2 * size, 0.175 * size),
            Vec3::new(0.0, -0.3 * size, 0.0),
        );
        let base = vertices.len() as u32;
        vertices.extend(v2);
        triangles.extend(t2.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    /// Area-weighted uniform surface samples; deterministic for a seed.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
            let ti = cumulative.partition_point(|&c| c < pick).min(self.triangles.len() - 1);
            let t = &self.triangles[ti];
            let (a, b, c) = (
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            );
            let r1: f64 = rng.gen::<f64>();
            let r2: f64 = rng.gen::<f64>();
            let sq = r1.sqrt();
            out.push(a * (1.0 - sq) + b * (sq * (1.0 - r2)) + c * (sq * r2));
        }
        out
    }
}

/// A mesh in the canonical object frame: vertices fill `[-1, 1]^3` (each
/// axis touches its bounds) and `half_extents` carries the metric size.
#[derive(Clone, Debug)]
pub struct CanonicalMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub half_extents: Vec3,
}

impl CanonicalMesh {
    /// Canonical-frame surface samples (for distance metrics).
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<Vec3> {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        }
        .sample_surface(n, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_fills_the_unit_box() {
        let mesh = TriangleMesh::box_mesh(Vec3::new(0.1, 0.2, 0.05));
        let canon = mesh.canonicalized().unwrap();
        let (lo, hi) = aabb(&canon.vertices).unwrap();
        assert!((lo - Vec3::new(-1.0, -1.0, -1.0)).norm() < 1e-12);
        assert!((hi - Vec3::new(1.0, 1.0, 1.0)).norm() < 1e-12);
        assert!((canon.half_extents - Vec3::new(0.1, 0.2, 0.05)).norm() < 1e-12);
    }

    #[test]
    fn flat_meshes_are_rejected() {
        let mesh = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            mesh.canonicalized(),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn obj_roundtrip() {
        let mesh = TriangleMesh::l_shape(0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.obj");
        mesh.save_obj(&path).unwrap();
        let back = TriangleMesh::load(&path).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() == 0.0);
        }
    }

    #[test]
    fn surface_samples_lie_on_the_surface() {
        let mesh = TriangleMesh::sphere(0.5, 16, 24);
        for p in mesh.sample_surface(500, 7) {
            // Chordal facets keep samples slightly inside the sphere.
            assert!(p.norm() <= 0.5 + 1e-9 && p.norm() > 0.4);
        }
        let samples_a = mesh.sample_surface(100, 9);
        let samples_b = mesh.sample_surface(100, 9);
        assert_eq!(samples_a, samples_b);
    }
}
