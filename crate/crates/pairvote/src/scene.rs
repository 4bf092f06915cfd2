//! Synthetic depth views: z-buffer rasterization of a posed mesh into a
//! camera-frame point cloud with exact canonical ground truth, plus a
//! corruption stage (depth jitter, clutter plane, mask halo).

use crate::error::{Error, Result};
use crate::geom::{Pose9D, Rotation, Vec3};
use crate::mesh::CanonicalMesh;
use crate::cloud::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Pinhole intrinsics; +z looks into the scene, +y is image-down.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// A camera whose field of view places desk-scale objects (0.1-0.3 m at
    /// 0.5-1.0 m) at a few thousand pixels.
    pub fn standard(width: usize, height: usize) -> Self {
        let f = 1.75 * width.max(height) as f64;
        Camera {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}

/// One synthetic observation: camera-frame points, their canonical
/// coordinates under the ground-truth pose, and a clutter mask
/// (`true` = injected clutter, not object surface).
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub cloud: PointCloud,
    pub canonical: Vec<Vec3>,
    pub noise_mask: Vec<bool>,
    pub pose: Pose9D,
}

/// Corruption knobs applied by [`corrupt`]. All-zero means a no-op.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    /// Clutter points appended, as a fraction of the clean count.
    pub clutter_fraction: f64,
    /// Gaussian sigma (meters) added to every depth.
    pub depth_jitter_sigma: f64,
    /// How far (pixels) halo clutter strays outside the object mask.
    pub mask_dilation_px: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            clutter_fraction: 0.0,
            depth_jitter_sigma: 0.0,
            mask_dilation_px: 3.0,
            seed: 0,
        }
    }
}

const NEAR_PLANE: f64 = 0.05;

/// Renders the mesh under `pose` into a depth buffer and lifts every hit
/// pixel into a camera-frame point with exact canonical coordinates
/// (perspective-correct interpolation, consistent with the pose to 1e-12).
pub fn sample_view(mesh: &CanonicalMesh, pose: &Pose9D, camera: &Camera) -> Result<SceneSample> {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut canon = vec![Vec3::zeros(); w * h];

    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.to_camera(v)).collect();
    let proj: Vec<(f64, f64)> = cam_verts.iter().map(|p| camera.project(p)).collect();

    for tri in &mesh.triangles {
        let (i0, i1, i2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
        if cam_verts[i0].z < NEAR_PLANE
            || cam_verts[i1].z < NEAR_PLANE
            || cam_verts[i2].z < NEAR_PLANE
        {
            continue;
        }
        let (u0, v0) = proj[i0];
        let (u1, v1) = proj[i1];
        let (u2, v2) = proj[i2];
        let area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_u = u0.min(u1).min(u2);
        let max_u = u0.max(u1).max(u2);
        let min_v = v0.min(v1).min(v2);
        let max_v = v0.max(v1).max(v2);
        let px_lo = ((min_u - 0.5).floor().max(0.0)) as usize;
        let px_hi = ((max_u - 0.5).ceil().min((w - 1) as f64)) as usize;
        let py_lo = ((min_v - 0.5).floor().max(0.0)) as usize;
        let py_hi = ((max_v - 0.5).ceil().min((h - 1) as f64)) as usize;
        if px_lo > px_hi || py_lo > py_hi {
            continue;
        }
        let inv_z = (
            1.0 / cam_verts[i0].z,
            1.0 / cam_verts[i1].z,
            1.0 / cam_verts[i2].z,
        );
        let c_over_z = (
            mesh.vertices[i0] * inv_z.0,
            mesh.vertices[i1] * inv_z.1,
            mesh.vertices[i2] * inv_z.2,
        );
        for py in py_lo..=py_hi {
            let pv = py as f64 + 0.5;
            for px in px_lo..=px_hi {
                let pu = px as f64 + 0.5;
                let w0 = (u1 - pu) * (v2 - pv) - (v1 - pv) * (u2 - pu);
                let w1 = (u2 - pu) * (v0 - pv) - (v2 - pv) * (u0 - pu);
                let w2 = (u0 - pu) * (v1 - pv) - (v0 - pv) * (u1 - pu);
                let (b0, b1, b2) = (w0 / area, w1 / area, w2 / area);
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let one_over_z = b0 * inv_z.0 + b1 * inv_z.1 + b2 * inv_z.2;
                let z = 1.0 / one_over_z;
                let cell = py * w + px;
                if z < depth[cell] {
                    depth[cell] = z;
                    canon[cell] = (c_over_z.0 * b0 + c_over_z.1 * b1 + c_over_z.2 * b2) * z;
                }
            }
        }
    }

    let mut positions = Vec::new();
    let mut canonical = Vec::new();
    for py in 0..h {
        for px in 0..w {
            let cell = py * w + px;
            if depth[cell].is_finite() {
                positions.push(camera.backproject(
                    px as f64 + 0.5,
                    py as f64 + 0.5,
                    depth[cell],
                ));
                canonical.push(canon[cell]);
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyView);
    }
    let noise_mask = vec![false; canonical.len()];
    Ok(SceneSample {
        cloud: PointCloud::from_positions(positions),
        canonical,
        noise_mask,
        pose: *pose,
    })
}

/// Applies depth jitter to every point (canonical coordinates are recomputed
/// so ground truth stays self-consistent) and appends clutter: half on a
/// support plane under the object (image-down), half as a halo just outside
/// the object mask at background depth.
pub fn corrupt(sample: &SceneSample, noise: &NoiseConfig, camera: &Camera) -> SceneSample {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = sample.clone();
    let n = sample.cloud.len();

    if noise.depth_jitter_sigma > 0.0 {
        let dist = Normal::new(0.0, noise.depth_jitter_sigma).expect("positive sigma");
        for i in 0..n {
            out.cloud.positions[i].z += dist.sample(&mut rng);
            out.canonical[i] = out.pose.to_canonical(&out.cloud.positions[i]);
        }
    }

    let clutter_total = (noise.clutter_fraction * n as f64).round() as usize;
    if clutter_total == 0 {
        return out;
    }
    let plane_count = clutter_total / 2;
    let halo_count = clutter_total - plane_count;

    let (lo, hi) = out.cloud.aabb().expect("non-empty sample");
    let ext = hi - lo;
    let y_jitter = Normal::new(0.0, 0.001).expect("positive sigma");
    for _ in 0..plane_count {
        let p = Vec3::new(
            rng.gen_range(lo.x - 0.25 * ext.x..=hi.x + 0.25 * ext.x),
            hi.y + Distribution::<f64>::sample(&y_jitter, &mut rng).abs(),
            rng.gen_range(lo.z - 0.25 * ext.z..=hi.z + 0.25 * ext.z),
        );
        out.cloud.positions.push(p);
        out.canonical.push(out.pose.to_canonical(&p));
        out.noise_mask.push(true);
    }
    for _ in 0..halo_count {
        let src = out.cloud.positions[rng.gen_range(0..n)];
        let (u, v) = camera.project(&src);
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist_px = rng.gen_range(0.5..0.5 + noise.mask_dilation_px.max(0.5));
        let z = src.z + rng.gen_range(0.02..0.06);
        let p = camera.backproject(u + dir.cos() * dist_px, v + dir.sin() * dist_px, z);
        out.cloud.positions.push(p);
        out.canonical.push(out.pose.to_canonical(&p));
        out.noise_mask.push(true);
    }
    out
}

/// Uniform random rotation (quaternion of four Gaussians).
pub fn random_rotation_uniform(rng: &mut impl Rng) -> Rotation {
    loop {
        let mut gauss = || -> f64 { StandardNormal.sample(rng) };
        let q = nalgebra::Quaternion::new(gauss(), gauss(), gauss(), gauss());
        if q.norm() > 1e-6 {
            let uq = nalgebra::UnitQuaternion::from_quaternion(q);
            return Rotation::from_matrix_unchecked(uq.to_rotation_matrix().into_inner());
        }
    }
}

/// Random pose that keeps the whole object inside the camera frustum.
/// Scale is the mesh's metric half-extents (optionally pre-scaled by the
/// caller).
pub fn random_pose(
    rng: &mut impl Rng,
    half_extents: Vec3,
    camera: &Camera,
) -> Result<Pose9D> {
    let rotation = random_rotation_uniform(rng);
    let radius = half_extents.norm();
    let z = rng.gen_range(0.55..0.95);
    let margin = 6.0;
    let span_x = (z * (camera.cx - margin) / camera.fx - radius).max(0.0);
    let span_y = (z * (camera.cy - margin) / camera.fy - radius).max(0.0);
    let translation = Vec3::new(
        rng.gen_range(-span_x..=span_x),
        rng.gen_range(-span_y..=span_y),
        z,
    );
    Pose9D::new(rotation, translation, half_extents)
}
