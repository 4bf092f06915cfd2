//! Point clouds, grid-accelerated neighbor queries, and normal estimation.

use crate::error::{Error, Result};
use crate::geom::{aabb, Rotation, UnitVec3, Vec3};
use nalgebra as na;
use std::collections::HashMap;

/// A cloud of camera-frame points with optional per-point unit normals.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<UnitVec3>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        PointCloud {
            positions,
            normals: None,
        }
    }

    pub fn with_normals(positions: Vec<Vec3>, normals: Vec<UnitVec3>) -> Self {
        assert_eq!(positions.len(), normals.len());
        PointCloud {
            positions,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn aabb(&self) -> Result<(Vec3, Vec3)> {
        aabb(&self.positions)
    }

    /// Applies a rigid transform to positions and normals alike.
    pub fn transformed_rigid(&self, r: &Rotation, t: &Vec3) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|p| r.apply(p) + t).collect(),
            normals: self.normals.as_ref().map(|ns| {
                ns.iter()
                    .map(|n| UnitVec3::new_unchecked(r.apply(n)))
                    .collect()
            }),
        }
    }
}

/// Uniform hash grid over a point set for k-nearest and radius queries.
///
/// Queries only ever iterate over lexicographically ordered cell ranges and
/// insertion-ordered buckets, so results are deterministic for a given
/// input ordering.
pub struct NeighborGrid<'a> {
    points: &'a [Vec3],
    cells: HashMap<(i32, i32, i32), Vec<u32>>,
    origin: Vec3,
    cell: f64,
    max_shell: i32,
}

impl<'a> NeighborGrid<'a> {
    /// Builds a grid whose cell size targets roughly `per_cell` points per
    /// occupied cell for uniformly spread inputs.
    pub fn build(points: &'a [Vec3], per_cell: usize) -> Result<Self> {
        let (lo, hi) = aabb(points)?;
        let extent = hi - lo;
        let diag = extent.norm().max(1e-9);
        let n = points.len().max(1) as f64;
        let cell = (diag * (per_cell.max(1) as f64 / n).cbrt()).max(1e-9);
        let mut cells: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, &lo, cell)).or_default().push(i as u32);
        }
        let max_shell = (extent.max() / cell).ceil() as i32 + 1;
        Ok(NeighborGrid {
            points,
            cells,
            origin: lo,
            cell,
            max_shell,
        })
    }

    fn key_of(p: &Vec3, origin: &Vec3, cell: f64) -> (i32, i32, i32) {
        (
            ((p.x - origin.x) / cell).floor() as i32,
            ((p.y - origin.y) / cell).floor() as i32,
            ((p.z - origin.z) / cell).floor() as i32,
        )
    }

    /// Indices of the `k` nearest points to `query` (the query point itself
    /// included when it is part of the set), ordered by distance with index
    /// as the tie-breaker.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<u32> {
        let center = Self::key_of(query, &self.origin, self.cell);
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(k * 2);
        let mut shell = 0i32;
        loop {
            self.visit_shell(center, shell, |idx| {
                let d2 = (self.points[idx as usize] - query).norm_squared();
                found.push((d2, idx));
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                let kth = found[k - 1].0.sqrt();
                // Every point beyond the visited shells is at least
                // `shell * cell` away; stop once that bound clears the
                // current k-th best.
                if kth <= shell as f64 * self.cell || shell > self.max_shell {
                    found.truncate(k);
                    return found.into_iter().map(|(_, i)| i).collect();
                }
            } else if shell > self.max_shell {
                found.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                return found.into_iter().map(|(_, i)| i).collect();
            }
            shell += 1;
        }
    }

    /// Indices within `radius` of `query` (excluding exact self-matches is
    /// the caller's concern), in deterministic cell-scan order.
    pub fn radius(&self, query: &Vec3, radius: f64) -> Vec<u32> {
        let r2 = radius * radius;
        let lo = Self::key_of(&(query - Vec3::repeat(radius)), &self.origin, self.cell);
        let hi = Self::key_of(&(query + Vec3::repeat(radius)), &self.origin, self.cell);
        let mut out = Vec::new();
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if let Some(bucket) = self.cells.get(&(x, y, z)) {
                        for &idx in bucket {
                            if (self.points[idx as usize] - query).norm_squared() <= r2 {
                                out.push(idx);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Visits every bucket on the Chebyshev shell of the given radius in
    /// lexicographic order.
    fn visit_shell(&self, center: (i32, i32, i32), shell: i32, mut f: impl FnMut(u32)) {
        let (cx, cy, cz) = center;
        for x in cx - shell..=cx + shell {
            for y in cy - shell..=cy + shell {
                for z in cz - shell..=cz + shell {
                    let on_shell = (x - cx).abs() == shell
                        || (y - cy).abs() == shell
                        || (z - cz).abs() == shell;
                    if !on_shell {
                        continue;
                    }
                    if let Some(bucket) = self.cells.get(&(x, y, z)) {
                        for &idx in bucket {
                            f(idx);
                        }
                    }
                }
            }
        }
    }
}

/// Result of normal estimation: unit normals plus a per-point flag marking
/// neighborhoods whose covariance had rank < 2 (normal fell back to the
/// view direction).
#[derive(Clone, Debug)]
pub struct NormalsEstimate {
    pub normals: Vec<UnitVec3>,
    pub degenerate: Vec<bool>,
}

/// Estimates per-point normals from the covariance of each point's k
/// nearest neighbors (the point itself counts as a neighbor).
///
/// Normal signs are oriented toward the viewpoint at the origin, matching a
/// depth camera at the optical center. Degenerate (sub-planar) neighborhoods
/// are flagged and given the view direction as a placeholder normal.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalsEstimate> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::CloudTooSmall {
            need: k,
            got: cloud.len(),
        });
    }
    let grid = NeighborGrid::build(&cloud.positions, k)?;
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::with_capacity(cloud.len());
    for p in &cloud.positions {
        let idx = grid.knn(p, k);
        let mut mean = Vec3::zeros();
        for &i in &idx {
            mean += cloud.positions[i as usize];
        }
        mean /= idx.len() as f64;
        let mut cov = na::Matrix3::zeros();
        for &i in &idx {
            let d = cloud.positions[i as usize] - mean;
            cov += d * d.transpose();
        }
        cov /= idx.len() as f64;
        let eig = na::SymmetricEigen::new(cov);
        // Sort eigenpairs ascending by eigenvalue.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("finite eigenvalues")
        });
        let l1 = eig.eigenvalues[order[1]].max(0.0);
        let l2 = eig.eigenvalues[order[2]].max(0.0);
        let is_degenerate = l2 <= 0.0 || l1 <= 1e-9 * l2;
        if is_degenerate {
            let toward_view = if p.norm() > 1e-12 {
                UnitVec3::new_normalize(-p)
            } else {
                UnitVec3::new_unchecked(Vec3::z())
            };
            normals.push(toward_view);
            degenerate.push(true);
            continue;
        }
        let col = eig.eigenvectors.column(order[0]);
        let mut n = Vec3::new(col[0], col[1], col[2]);
        // Orient toward the viewpoint at the origin.
        if n.dot(p) > 0.0 {
            n = -n;
        }
        normals.push(UnitVec3::new_normalize(n));
        degenerate.push(false);
    }
    Ok(NormalsEstimate { normals, degenerate })
}

/// Attaches estimated normals to a cloud that lacks them; keeps existing ones.
pub fn ensure_normals(cloud: &mut PointCloud, k: usize) -> Result<()> {
    if cloud.normals.is_none() {
        let est = estimate_normals(cloud, k)?;
        cloud.normals = Some(est.normals);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_cloud(rng: &mut impl Rng, n: usize, z: f64) -> PointCloud {
        let positions = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), z))
            .collect();
        PointCloud::from_positions(positions)
    }

    #[test]
    fn plane_normals_are_exact_and_face_the_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = plane_cloud(&mut rng, 1000, 0.5);
        let est = estimate_normals(&cloud, 16).unwrap();
        for (n, d) in est.normals.iter().zip(&est.degenerate) {
            assert!(!d);
            // Plane z = 0.5 seen from the origin: normal must be -z.
            assert!((n.into_inner() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
        }
    }

    // Oracle: cube faces have construction-known normals (the face axes).
    #[test]
    fn cube_face_normals_match_face_axes() {
        let mut positions = Vec::new();
        let step = 0.05;
        let center = Vec3::new(0.0, 0.0, 2.0);
        for i in 0..=20 {
            for j in 0..=20 {
                let a = -0.5 + i as f64 * step;
                let b = -0.5 + j as f64 * step;
                positions.push(center + Vec3::new(a, b, -0.5)); // front face
                positions.push(center + Vec3::new(a, -0.5, b)); // bottom face
                positions.push(center + Vec3::new(-0.5, a, b)); // left face
            }
        }
        let cloud = PointCloud::from_positions(positions.clone());
        let est = estimate_normals(&cloud, 8).unwrap();
        let margin = 2.0 * step;
        // Expected signs follow the toward-the-origin convention: the front
        // face keeps its outward normal (it faces the camera), while the
        // occluded bottom/left faces get theirs flipped inward.
        for (p, n) in positions.iter().zip(&est.normals) {
            let local = p - center;
            let interior = |u: f64| u.abs() < 0.5 - margin;
            let expected = if (local.z + 0.5).abs() < 1e-9 && interior(local.x) && interior(local.y)
            {
                Some(Vec3::new(0.0, 0.0, -1.0))
            } else if (local.y + 0.5).abs() < 1e-9 && interior(local.x) && interior(local.z) {
                Some(Vec3::new(0.0, 1.0, 0.0))
            } else if (local.x + 0.5).abs() < 1e-9 && interior(local.y) && interior(local.z) {
                Some(Vec3::new(1.0, 0.0, 0.0))
            } else {
                None
            };
            if let Some(e) = expected {
                let dot = n.dot(&e);
                assert!(dot > 1.0 - 1e-6, "normal {n:?} vs expected {e:?}");
            }
        }
    }

    #[test]
    fn collinear_neighborhood_is_flagged_degenerate() {
        let cloud = PointCloud::from_positions(vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.1, 0.0, 1.0),
            Vec3::new(0.2, 0.0, 1.0),
        ]);
        let est = estimate_normals(&cloud, 3).unwrap();
        assert!(est.degenerate.iter().all(|&d| d));
        // Fallback normal points back at the camera.
        for (n, p) in est.normals.iter().zip(&cloud.positions) {
            assert!(n.dot(&-p.normalize()) > 0.99);
        }
    }

    #[test]
    fn small_cloud_and_small_k_are_rejected() {
        let cloud = plane_cloud(&mut ChaCha8Rng::seed_from_u64(0), 5, 1.0);
        assert!(matches!(
            estimate_normals(&cloud, 16),
            Err(Error::CloudTooSmall { .. })
        ));
        assert!(matches!(
            estimate_normals(&cloud, 2),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn normals_are_unit_and_rotation_equivariant() {
        // Coplanar patches give fp-exact normals, so equivariance holds to
        // tight tolerance even if neighbor sets shuffle under rotation.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut positions = Vec::new();
        for _ in 0..6 {
            let base = Vec3::new(
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.8..1.2),
            );
            let u = crate::geom::tests::random_unit(&mut rng).into_inner();
            let w = crate::geom::tests::random_unit(&mut rng).into_inner();
            let v = (w - u * w.dot(&u)).normalize();
            for _ in 0..150 {
                positions.push(
                    base + u * rng.gen_range(-0.1..0.1) + v * rng.gen_range(-0.1..0.1),
                );
            }
        }
        let cloud = PointCloud::from_positions(positions);
        let est = estimate_normals(&cloud, 12).unwrap();
        for n in &est.normals {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
        let rot = crate::geom::tests::random_rotation(&mut rng);
        let rotated = cloud.transformed_rigid(&rot, &Vec3::zeros());
        let est_rot = estimate_normals(&rotated, 12).unwrap();
        let mut checked = 0;
        for i in 0..cloud.len() {
            if est.degenerate[i] || est_rot.degenerate[i] {
                continue;
            }
            let p = cloud.positions[i];
            let n = est.normals[i].into_inner();
            // Skip points whose sign rule is on a knife edge.
            if n.dot(&p).abs() < 1e-6 * p.norm() {
                continue;
            }
            let err = (est_rot.normals[i].into_inner() - rot.apply(&n)).norm();
            assert!(err < 1e-9, "point {i}: equivariance error {err:.3e}");
            checked += 1;
        }
        assert!(checked > 800, "only {checked} points checked");
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let positions: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let grid = NeighborGrid::build(&positions, 8).unwrap();
        for _ in 0..50 {
            let q = positions[rng.gen_range(0..positions.len())];
            let got = grid.knn(&q, 10);
            let mut brute: Vec<(f64, u32)> = positions
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - q).norm_squared(), i as u32))
                .collect();
            brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<u32> = brute[..10].iter().map(|&(_, i)| i).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let positions: Vec<Vec3> = (0..400)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let grid = NeighborGrid::build(&positions, 8).unwrap();
        for _ in 0..25 {
            let q = positions[rng.gen_range(0..positions.len())];
            let r = rng.gen_range(0.05..0.6);
            let mut got = grid.radius(&q, r);
            got.sort_unstable();
            let mut want: Vec<u32> = positions
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - q).norm() <= r)
                .map(|(i, _)| i as u32)
                .collect();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }
}
