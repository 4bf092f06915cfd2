//! Core 3D types: rotations with drift control, the SO(3) exponential map,
//! and the 9-parameter pose (rotation + translation + per-axis scale).

use crate::error::{Error, Result};
use nalgebra as na;

pub type Vec3 = na::Vector3<f64>;
pub type Mat3 = na::Matrix3<f64>;
pub type UnitVec3 = na::Unit<Vec3>;

/// Orthonormality tolerance accepted by [`Rotation::from_matrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Number of matrix compositions after which a rotation is snapped back to
/// the orthonormal manifold via polar decomposition.
const COMPOSE_RENORM_INTERVAL: u32 = 100;

/// A proper rotation stored as a 3x3 matrix.
///
/// Composition tracks how many products the matrix has accumulated and
/// re-orthonormalizes (polar projection) once the count passes a fixed
/// interval, so long composition chains do not drift off the manifold.
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    m: Mat3,
    compositions: u32,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            m: Mat3::identity(),
            compositions: 0,
        }
    }

    /// Builds a rotation from a matrix, rejecting inputs that deviate from
    /// orthonormality (or have negative determinant) by more than
    /// [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let gram = m.transpose() * m;
        let dev = (gram - Mat3::identity()).abs().max();
        if !dev.is_finite() || dev > ROTATION_TOLERANCE {
            return Err(Error::NotARotation(dev));
        }
        if m.determinant() < 0.0 {
            return Err(Error::NotARotation(2.0));
        }
        Ok(Rotation { m, compositions: 0 })
    }

    /// Wraps a matrix that is already known to be a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation { m, compositions: 0 }
    }

    pub fn from_axis_angle(axis: &UnitVec3, angle: f64) -> Self {
        so3_exp(&(axis.into_inner() * angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn inverse(&self) -> Rotation {
        Rotation {
            m: self.m.transpose(),
            compositions: self.compositions,
        }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.m * v
    }

    /// Applies the inverse rotation without forming it.
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.m.transpose() * v
    }

    /// `self * other`, with periodic re-orthonormalization.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let compositions = self.compositions.max(other.compositions) + 1;
        let m = self.m * other.m;
        if compositions > COMPOSE_RENORM_INTERVAL {
            Rotation {
                m: orthonormalize(&m),
                compositions: 0,
            }
        } else {
            Rotation { m, compositions }
        }
    }

    /// Geodesic angle (radians) between two rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let rel = self.m.transpose() * other.m;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // atan2 on the skew magnitude stays accurate for tiny angles, where
        // acos of a near-1 cosine cannot resolve below ~1e-8.
        let vee = Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (vee.norm() * 0.5).atan2(c)
    }
}

/// Projects an arbitrary matrix onto the nearest proper rotation
/// (polar factor via SVD, determinant corrected to +1).
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD always produces U");
    let v_t = svd.v_t.expect("3x3 SVD always produces V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the singular direction with the smallest singular value.
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// SO(3) exponential map (Rodrigues), with a Taylor path for small angles.
pub fn so3_exp(w: &Vec3) -> Rotation {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let m = if theta2 < 1e-16 {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        Mat3::identity() + k * (1.0 - theta2 / 6.0) + k * k * (0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        Mat3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / theta2)
    };
    Rotation { m, compositions: 0 }
}

/// SO(3) logarithm: the rotation vector whose exponential is `r`.
///
/// Near the identity a series expansion is used; near angle pi, where
/// `R - R^T` loses the axis, the axis is recovered from the symmetric part
/// and the sign ambiguity is resolved by making the largest-magnitude
/// component non-negative.
pub fn so3_log(r: &Rotation) -> Vec3 {
    let m = &r.m;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // vee(R - R^T) = 2 sin(theta) * axis. Taking sin(theta) from here and
    // the angle from atan2 keeps the amplitude well conditioned near pi,
    // where acos followed by sin loses ~6 digits.
    let vee = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = vee.norm() * 0.5;
    let theta = sin.atan2(cos);
    if theta < 1e-7 {
        // R ~ I + [w]x, so vee/2 ~ w; second-order term is negligible here.
        return vee * 0.5;
    }
    if sin > 1e-6 {
        return vee * (theta / (2.0 * sin));
    }
    // Near pi: the symmetric part is cos(t) I + (1 - cos(t)) a a^T, so
    // (S - cos(t) I) / (1 - cos(t)) recovers a a^T free of the skew term;
    // read the axis off its strongest column.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Mat3::identity() * cos) / (1.0 - cos);
    let diag = [outer[(0, 0)], outer[(1, 1)], outer[(2, 2)]];
    let i = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let col = outer.column(i);
    let mut axis = Vec3::new(col[0], col[1], col[2]);
    axis.normalize_mut();
    // Sign is lost at exactly pi; take the residual skew part if it is still
    // informative, otherwise the largest-axis convention.
    let sin_axis = vee * 0.5;
    if sin_axis.norm() > 1e-9 {
        if axis.dot(&sin_axis) < 0.0 {
            axis = -axis;
        }
    } else {
        let (ax, ay, az) = (axis.x.abs(), axis.y.abs(), axis.z.abs());
        let lead = if ax >= ay && ax >= az {
            axis.x
        } else if ay >= az {
            axis.y
        } else {
            axis.z
        };
        if lead < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Rotation + translation + strictly positive per-axis scale.
///
/// Maps canonical coordinates `q` (object frame, unit half-extent box) to
/// camera coordinates via `R * diag(s) * q + t`.
#[derive(Clone, Copy, Debug)]
pub struct Pose9D {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub scale: Vec3,
}

impl Pose9D {
    pub fn new(rotation: Rotation, translation: Vec3, scale: Vec3) -> Result<Self> {
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(Error::NonPositiveScale(scale.x, scale.y, scale.z));
        }
        Ok(Pose9D {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Pose9D {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
            scale: Vec3::new(1.0, 1.0, 1.0),
        }
    }

    /// Canonical -> camera.
    pub fn to_camera(&self, canonical: &Vec3) -> Vec3 {
        self.rotation.apply(&canonical.component_mul(&self.scale)) + self.translation
    }

    /// Camera -> canonical.
    pub fn to_canonical(&self, camera: &Vec3) -> Vec3 {
        self.rotation
            .apply_inverse(&(camera - self.translation))
            .component_div(&self.scale)
    }
}

/// A box spanning `diag(scale) * [-1, 1]^3` in its own frame, placed by a pose.
#[derive(Clone, Copy, Debug)]
pub struct OrientedBox {
    pub pose: Pose9D,
}

impl OrientedBox {
    pub fn new(pose: Pose9D) -> Self {
        OrientedBox { pose }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.pose.to_canonical(p);
        q.x.abs() <= 1.0 && q.y.abs() <= 1.0 && q.z.abs() <= 1.0
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let q = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *corner = self.pose.to_camera(&q);
        }
        out
    }
}

/// Axis-aligned bounds of a set of points. Errors on an empty set.
pub fn aabb(points: &[Vec3]) -> Result<(Vec3, Vec3)> {
    let first = points.first().ok_or(Error::CloudTooSmall { need: 1, got: 0 })?;
    let mut lo = *first;
    let mut hi = *first;
    for p in &points[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok((lo, hi))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ORTHO_TOL: f64 = 1e-9;

    pub(crate) fn random_unit(rng: &mut impl Rng) -> UnitVec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return UnitVec3::new_normalize(v);
            }
        }
    }

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = random_unit(rng);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        Rotation::from_axis_angle(&axis, angle)
    }

    fn ortho_deviation(r: &Rotation) -> f64 {
        (r.matrix().transpose() * r.matrix() - Mat3::identity())
            .abs()
            .max()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = so3_exp(&Vec3::zeros());
        assert_relative_eq!(*r.matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    // Oracle: quaternion exponential from nalgebra, an independent formulation.
    #[test]
    fn exp_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let check = |w: Vec3| {
            let ours = so3_exp(&w);
            let oracle = if w.norm() > 0.0 {
                na::UnitQuaternion::from_axis_angle(&UnitVec3::new_normalize(w), w.norm())
            } else {
                na::UnitQuaternion::identity()
            };
            let diff = (ours.matrix() - oracle.to_rotation_matrix().into_inner())
                .abs()
                .max();
            assert!(diff < 1e-12, "w={w:?} diff={diff:.3e}");
        };
        check(Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        for _ in 0..200 {
            let w = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..3.1);
            check(w);
        }
    }

    #[test]
    fn exp_inverse_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let w = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..3.0);
            let r = so3_exp(&w).compose(&so3_exp(&-w));
            let dev = (r.matrix() - Mat3::identity()).abs().max();
            assert!(dev < 1e-12, "residual {dev:.3e}");
        }
    }

    #[test]
    fn log_inverts_exp_within_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let w = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..3.0);
            let back = so3_log(&so3_exp(&w));
            assert!(
                (back - w).norm() < 1e-9,
                "w={w:?} back={back:?} err={:.3e}",
                (back - w).norm()
            );
        }
    }

    #[test]
    fn log_handles_angles_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let axis = random_unit(&mut rng);
            let angle = std::f64::consts::PI - rng.gen_range(0.0..1e-4);
            let r = Rotation::from_axis_angle(&axis, angle);
            let w = so3_log(&r);
            let r2 = so3_exp(&w);
            // The vector may flip sign at the branch; compare rotations.
            assert!(r.angle_to(&r2) < 1e-6);
        }
    }

    #[test]
    fn log_at_exactly_pi_uses_largest_axis_convention() {
        let axis = UnitVec3::new_normalize(Vec3::new(0.3, -0.9, 0.2));
        let r = Rotation::from_axis_angle(&axis, std::f64::consts::PI);
        let w = so3_log(&r);
        assert_relative_eq!(w.norm(), std::f64::consts::PI, epsilon = 1e-9);
        // Largest-magnitude component (y here) must come out non-negative.
        assert!(w.y > 0.0);
        assert!(r.angle_to(&so3_exp(&w)) < 1e-9);
    }

    #[test]
    fn from_matrix_rejects_sheared_input() {
        let mut m = Mat3::identity();
        m[(0, 1)] = 1e-3;
        assert!(Rotation::from_matrix(m).is_err());
        assert!(Rotation::from_matrix(Mat3::identity()).is_ok());
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn long_composition_chains_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut r = Rotation::identity();
        for _ in 0..1000 {
            r = r.compose(&random_rotation(&mut rng));
        }
        assert!(ortho_deviation(&r) <= ORTHO_TOL, "{:.3e}", ortho_deviation(&r));
    }

    #[test]
    fn pose_roundtrip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let pose = Pose9D::new(
            random_rotation(&mut rng),
            Vec3::new(0.1, -0.2, 0.9),
            Vec3::new(0.2, 0.35, 0.15),
        )
        .unwrap();
        for _ in 0..50 {
            let q = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let back = pose.to_canonical(&pose.to_camera(&q));
            assert!((back - q).norm() < 1e-12);
        }
        assert!(Pose9D::new(
            Rotation::identity(),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn oriented_box_contains_its_corners_shrunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pose = Pose9D::new(
            random_rotation(&mut rng),
            Vec3::new(0.3, 0.0, 1.0),
            Vec3::new(0.1, 0.2, 0.3),
        )
        .unwrap();
        let bx = OrientedBox::new(pose);
        for c in bx.corners() {
            let inward = c + (pose.translation - c) * 1e-6;
            assert!(bx.contains(&inward));
            let outward = c + (c - pose.translation) * 1e-3;
            assert!(!bx.contains(&outward));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Group action: (R1 * R2) v == R1 (R2 v).
        #[test]
        fn composition_is_group_action(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = random_rotation(&mut rng);
            let r2 = random_rotation(&mut rng);
            let v = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..2.0);
            let lhs = r1.compose(&r2).apply(&v);
            let rhs = r1.apply(&r2.apply(&v));
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        // Rotation preserves norms and the exponential is orthonormal.
        #[test]
        fn exp_produces_isometries(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..6.0);
            let r = so3_exp(&w);
            prop_assert!(ortho_deviation(&r) < 1e-12);
            let v = random_unit(&mut rng).into_inner() * rng.gen_range(0.0..3.0);
            prop_assert!((r.apply(&v).norm() - v.norm()).abs() < 1e-12);
        }
    }
}
