//! Per-pair voting targets and their inverse candidate generators.
//!
//! A point pair `(p1, p2)` summarizes the object center `o` by two numbers:
//! the signed offset of `o` along the pair direction and its distance from
//! the pair line. Those two targets pin the center down to a circle; one
//! free ring angle selects a candidate on it. Orientation axes are handled
//! the same way: the cosine between an axis and the pair direction pins the
//! axis to a cone, and a ring angle selects a candidate direction.

use crate::error::{Error, Result};
use crate::geom::{UnitVec3, Vec3};

/// Pairs closer than this (meters) carry no usable direction.
pub const MIN_PAIR_SEPARATION: f64 = 1e-9;

/// Center summary for one pair: offset of the center along the pair
/// direction, and its orthogonal distance from the pair line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterTargets {
    pub axial: f64,
    pub radial: f64,
}

/// Cosines between the object's up/right axes and the pair direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationTargets {
    pub up_cos: f64,
    pub right_cos: f64,
}

/// The free angle selecting one point on a ring of candidates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialOffset {
    pub angle: f64,
}

/// Unit direction from `p1` to `p2`; errors when the pair is degenerate.
pub fn pair_direction(p1: &Vec3, p2: &Vec3) -> Result<UnitVec3> {
    let d = p2 - p1;
    let len = d.norm();
    if len <= MIN_PAIR_SEPARATION {
        return Err(Error::DegeneratePair {
            separation: len,
            limit: MIN_PAIR_SEPARATION,
        });
    }
    Ok(UnitVec3::new_unchecked(d / len))
}

/// Deterministic unit vector orthogonal to `d`: take the coordinate axis
/// least aligned with `d` (ties broken in x, y, z order), project out `d`,
/// normalize.
pub fn perp_axis(d: &UnitVec3) -> UnitVec3 {
    let a = [d.x.abs(), d.y.abs(), d.z.abs()];
    let mut pick = 0;
    if a[1] < a[pick] {
        pick = 1;
    }
    if a[2] < a[pick] {
        pick = 2;
    }
    let axis = match pick {
        0 => Vec3::x(),
        1 => Vec3::y(),
        _ => Vec3::z(),
    };
    UnitVec3::new_normalize(axis - d.into_inner() * d.dot(&axis))
}

/// Computes the center targets for a pair observing center `o`.
pub fn center_targets(o: &Vec3, p1: &Vec3, p2: &Vec3) -> Result<CenterTargets> {
    let d = pair_direction(p1, p2)?;
    let w = o - p1;
    let axial = w.dot(&d);
    let radial = (w - d.into_inner() * axial).norm();
    Ok(CenterTargets { axial, radial })
}

/// The ring of candidate centers implied by one pair's targets.
///
/// Precomputes the foot point and an orthonormal ring basis so vote loops
/// can sweep many angles cheaply.
#[derive(Clone, Copy, Debug)]
pub struct CenterRing {
    foot: Vec3,
    radial: f64,
    u: Vec3,
    v: Vec3,
}

impl CenterRing {
    pub fn new(t: &CenterTargets, p1: &Vec3, p2: &Vec3) -> Result<Self> {
        let d = pair_direction(p1, p2)?;
        let u = perp_axis(&d);
        let v = d.cross(&u);
        Ok(CenterRing {
            foot: p1 + d.into_inner() * t.axial,
            radial: t.radial,
            u: u.into_inner(),
            v,
        })
    }

    /// Candidate center for a precomputed `(cos, sin)` of the ring angle.
    #[inline]
    pub fn at(&self, cos: f64, sin: f64) -> Vec3 {
        self.foot + (self.u * cos + self.v * sin) * self.radial
    }
}

/// Candidate center at one ring angle.
pub fn center_candidate(
    t: &CenterTargets,
    offset: RadialOffset,
    p1: &Vec3,
    p2: &Vec3,
) -> Result<Vec3> {
    let ring = CenterRing::new(t, p1, p2)?;
    Ok(ring.at(offset.angle.cos(), offset.angle.sin()))
}

/// Computes the orientation targets for known axes `e1` (up), `e2` (right).
pub fn orientation_targets(
    e1: &UnitVec3,
    e2: &UnitVec3,
    p1: &Vec3,
    p2: &Vec3,
) -> Result<OrientationTargets> {
    let d = pair_direction(p1, p2)?;
    Ok(OrientationTargets {
        up_cos: e1.dot(&d),
        right_cos: e2.dot(&d),
    })
}

/// The cone of candidate axis directions implied by one cosine.
#[derive(Clone, Copy, Debug)]
pub struct ConeRing {
    tip: Vec3,
    ring: f64,
    u: Vec3,
    v: Vec3,
}

impl ConeRing {
    /// `cos_to_axis` must lie in `[-1, 1]` up to fp slack; it is clamped.
    pub fn new(cos_to_axis: f64, p1: &Vec3, p2: &Vec3) -> Result<Self> {
        let d = pair_direction(p1, p2)?;
        let c = cos_to_axis.clamp(-1.0, 1.0);
        let u = perp_axis(&d);
        let v = d.cross(&u);
        Ok(ConeRing {
            tip: d.into_inner() * c,
            ring: (1.0 - c * c).max(0.0).sqrt(),
            u: u.into_inner(),
            v,
        })
    }

    /// Candidate direction for a precomputed `(cos, sin)` of the ring angle.
    #[inline]
    pub fn at(&self, cos: f64, sin: f64) -> UnitVec3 {
        UnitVec3::new_unchecked(self.tip + (self.u * cos + self.v * sin) * self.ring)
    }
}

/// Candidate axis direction at one ring angle of the cone.
pub fn orientation_candidate(
    cos_to_axis: f64,
    offset: RadialOffset,
    p1: &Vec3,
    p2: &Vec3,
) -> Result<UnitVec3> {
    let cone = ConeRing::new(cos_to_axis, p1, p2)?;
    Ok(cone.at(offset.angle.cos(), offset.angle.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::tests::{random_rotation, random_unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    // Independent re-statement of the defining formulas, evaluated directly.
    fn oracle_targets(o: &Vec3, p1: &Vec3, p2: &Vec3) -> (f64, f64) {
        let d = (p2 - p1) / (p2 - p1).norm();
        let axial = (o - p1).dot(&d);
        let radial = (o - (p1 + d * axial)).norm();
        (axial, radial)
    }

    fn random_point(rng: &mut impl Rng, r: f64) -> Vec3 {
        Vec3::new(
            rng.gen_range(-r..r),
            rng.gen_range(-r..r),
            rng.gen_range(-r..r),
        )
    }

    #[test]
    fn axis_aligned_example() {
        let t = center_targets(
            &Vec3::new(0.5, 0.3, 0.0),
            &Vec3::zeros(),
            &Vec3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(t.axial, 0.5);
        assert_eq!(t.radial, 0.3);
    }

    #[test]
    fn collinear_center_has_zero_radial() {
        let t = center_targets(
            &Vec3::new(0.25, 0.0, 0.0),
            &Vec3::zeros(),
            &Vec3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(t.radial.abs() < 1e-15);
    }

    #[test]
    fn coincident_pair_is_rejected() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        assert!(matches!(
            center_targets(&Vec3::zeros(), &p, &(p + Vec3::repeat(1e-10))),
            Err(Error::DegeneratePair { .. })
        ));
    }

    #[test]
    fn matches_direct_formula_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10_000 {
            let o = random_point(&mut rng, 1.0);
            let p1 = random_point(&mut rng, 1.0);
            let mut p2 = random_point(&mut rng, 1.0);
            if (p2 - p1).norm() <= MIN_PAIR_SEPARATION {
                p2.x += 0.5;
            }
            let t = center_targets(&o, &p1, &p2).unwrap();
            let (axial, radial) = oracle_targets(&o, &p1, &p2);
            assert!((t.axial - axial).abs() < 1e-12);
            assert!((t.radial - radial).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_radial_candidate_ignores_the_angle() {
        let p1 = Vec3::new(0.0, 0.1, 0.4);
        let p2 = Vec3::new(0.3, -0.2, 0.6);
        let o = p1 + (p2 - p1) * 0.7;
        let t = center_targets(&o, &p1, &p2).unwrap();
        for angle in [0.0, 1.0, 2.5, 6.0] {
            let c = center_candidate(&t, RadialOffset { angle }, &p1, &p2).unwrap();
            assert!((c - o).norm() < 1e-12);
        }
    }

    #[test]
    fn candidates_lie_on_the_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let o = random_point(&mut rng, 1.0);
            let p1 = random_point(&mut rng, 1.0);
            let p2 = p1 + random_unit(&mut rng).into_inner() * rng.gen_range(0.05..1.0);
            let t = center_targets(&o, &p1, &p2).unwrap();
            let d = pair_direction(&p1, &p2).unwrap();
            let foot = p1 + d.into_inner() * t.axial;
            let angle = rng.gen_range(0.0..TAU);
            let c = center_candidate(&t, RadialOffset { angle }, &p1, &p2).unwrap();
            assert!(((c - foot).norm() - t.radial).abs() < 1e-12);
            assert!((c - foot).dot(&d).abs() < 1e-12);
        }
    }

    // The true center is on the candidate ring: a dense ring-angle scan must
    // pass within the chord length of one step.
    #[test]
    fn ring_scan_recovers_the_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let steps = 3600;
        for _ in 0..200 {
            let o = random_point(&mut rng, 1.0);
            let p1 = random_point(&mut rng, 1.0);
            let p2 = p1 + random_unit(&mut rng).into_inner() * rng.gen_range(0.05..1.0);
            let t = center_targets(&o, &p1, &p2).unwrap();
            let ring = CenterRing::new(&t, &p1, &p2).unwrap();
            let mut best = f64::INFINITY;
            for s in 0..steps {
                let a = TAU * s as f64 / steps as f64;
                best = best.min((ring.at(a.cos(), a.sin()) - o).norm());
            }
            assert!(
                best < t.radial * (TAU / steps as f64) + 1e-9,
                "best {best:.3e} radial {:.3e}",
                t.radial
            );
        }
    }

    #[test]
    fn perp_axis_convention_and_orthogonality() {
        let x = UnitVec3::new_unchecked(Vec3::x());
        let y = UnitVec3::new_unchecked(Vec3::y());
        let z = UnitVec3::new_unchecked(Vec3::z());
        // Least-aligned axis, ties in x < y < z order.
        assert_eq!(perp_axis(&x).into_inner(), Vec3::y());
        assert_eq!(perp_axis(&y).into_inner(), Vec3::x());
        assert_eq!(perp_axis(&z).into_inner(), Vec3::x());
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..200 {
            let d = random_unit(&mut rng);
            let u = perp_axis(&d);
            assert!(u.dot(&d).abs() < 1e-12);
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_and_orthogonal_orientation_targets() {
        let p1 = Vec3::zeros();
        let p2 = Vec3::new(0.0, 0.4, 0.0);
        let up = UnitVec3::new_unchecked(Vec3::y());
        let right = UnitVec3::new_unchecked(Vec3::x());
        let t = orientation_targets(&up, &right, &p1, &p2).unwrap();
        assert!((t.up_cos - 1.0).abs() < 1e-15);
        assert!(t.right_cos.abs() < 1e-15);
    }

    #[test]
    fn cone_candidates_are_unit_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..200 {
            let p1 = random_point(&mut rng, 1.0);
            let p2 = p1 + random_unit(&mut rng).into_inner() * rng.gen_range(0.05..1.0);
            let d = pair_direction(&p1, &p2).unwrap();
            let c = rng.gen_range(-1.0..1.0);
            let angle = rng.gen_range(0.0..TAU);
            let u = orientation_candidate(c, RadialOffset { angle }, &p1, &p2).unwrap();
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!((u.dot(&d) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_cone_collapses_to_the_pair_direction() {
        let p1 = Vec3::zeros();
        let p2 = Vec3::new(0.2, 0.1, 0.7);
        let d = pair_direction(&p1, &p2).unwrap();
        for angle in [0.0, 2.0, 4.0] {
            let u = orientation_candidate(1.0, RadialOffset { angle }, &p1, &p2).unwrap();
            assert!((u.into_inner() - d.into_inner()).norm() < 1e-12);
            let v = orientation_candidate(-1.0, RadialOffset { angle }, &p1, &p2).unwrap();
            assert!((v.into_inner() + d.into_inner()).norm() < 1e-12);
        }
    }

    #[test]
    fn cone_scan_recovers_the_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let steps = 3600;
        for _ in 0..100 {
            let p1 = random_point(&mut rng, 1.0);
            let p2 = p1 + random_unit(&mut rng).into_inner() * rng.gen_range(0.05..1.0);
            let e1 = random_unit(&mut rng);
            let d = pair_direction(&p1, &p2).unwrap();
            let cone = ConeRing::new(e1.dot(&d), &p1, &p2).unwrap();
            let mut best = f64::INFINITY;
            for s in 0..steps {
                let a = TAU * s as f64 / steps as f64;
                let u = cone.at(a.cos(), a.sin());
                best = best.min(u.dot(&e1).clamp(-1.0, 1.0).acos());
            }
            assert!(best < 0.1_f64.to_radians(), "best {:.4} deg", best.to_degrees());
        }
    }

    // Targets are rigid invariants; candidate rings map to the transformed
    // ring as a set.
    #[test]
    fn rigid_invariance_of_targets_and_rings() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..300 {
            let o = random_point(&mut rng, 1.0);
            let p1 = random_point(&mut rng, 1.0);
            let p2 = p1 + random_unit(&mut rng).into_inner() * rng.gen_range(0.05..1.0);
            let e1 = random_unit(&mut rng);
            let e2 = random_unit(&mut rng);
            let rot = random_rotation(&mut rng);
            let shift = random_point(&mut rng, 2.0);
            let (to, tp1, tp2) = (rot.apply(&o) + shift, rot.apply(&p1) + shift, rot.apply(&p2) + shift);
            let (te1, te2) = (
                UnitVec3::new_unchecked(rot.apply(&e1)),
                UnitVec3::new_unchecked(rot.apply(&e2)),
            );

            let a = center_targets(&o, &p1, &p2).unwrap();
            let b = center_targets(&to, &tp1, &tp2).unwrap();
            assert!((a.axial - b.axial).abs() < 1e-9);
            assert!((a.radial - b.radial).abs() < 1e-9);

            let oa = orientation_targets(&e1, &e2, &p1, &p2).unwrap();
            let ob = orientation_targets(&te1, &te2, &tp1, &tp2).unwrap();
            assert!((oa.up_cos - ob.up_cos).abs() < 1e-9);
            assert!((oa.right_cos - ob.right_cos).abs() < 1e-9);

            // Transformed candidates stay on the transformed ring.
            let angle = rng.gen_range(0.0..TAU);
            let c = center_candidate(&a, RadialOffset { angle }, &p1, &p2).unwrap();
            let tc = rot.apply(&c) + shift;
            let td = pair_direction(&tp1, &tp2).unwrap();
            let tfoot = tp1 + td.into_inner() * b.axial;
            assert!(((tc - tfoot).norm() - b.radial).abs() < 1e-9);
            assert!((tc - tfoot).dot(&td).abs() < 1e-9);
        }
    }

    #[test]
    fn ring_scan_bound_holds_against_half_step_worst_case() {
        // The chord bound radial * (2 pi / steps) must dominate the true
        // worst case radial * 2 sin(pi / steps).
        let steps = 3600.0_f64;
        assert!(2.0 * (PI / steps).sin() < TAU / steps);
    }
}
