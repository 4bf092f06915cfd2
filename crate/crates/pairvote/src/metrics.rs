//! Evaluation metrics: rotation/translation pose error with per-category
//! symmetry handling, sampled oriented-box IoU, ADD / ADD-S point
//! distances, and threshold-curve AUC, rolled up into an [`EvalReport`].

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geom::{aabb, OrientedBox, Pose9D, UnitVec3, Vec3};

/// Default sample budget for the sampled box IoU.
pub const DEFAULT_IOU_SAMPLES: usize = 100_000;
/// Default upper threshold (meters) for ADD / ADD-S AUC integration.
pub const DEFAULT_AUC_MAX: f64 = 0.10;
/// Rotation thresholds (degrees) reported in the AP table.
pub const AP_ROT_THRESHOLDS_DEG: [f64; 3] = [5.0, 10.0, 15.0];
/// Translation threshold (centimeters) paired with each rotation
/// threshold in the AP table.
pub const AP_TRANS_THRESHOLD_CM: f64 = 5.0;
/// IoU cutoffs reported as mAP entries.
pub const IOU_THRESHOLDS: [f64; 2] = [0.25, 0.50];

/// Rotation + translation error for one prediction.
#[derive(Clone, Copy, Debug)]
pub struct PoseError {
    /// Geodesic rotation error in degrees, in [0, 180]. When a symmetry
    /// axis was supplied this is already minimized over spins about it.
    pub rot_deg: f64,
    /// Translation error in centimeters.
    pub trans_cm: f64,
    /// Whether a symmetry axis was applied.
    pub symmetry_applied: bool,
}

/// Rotation and translation error between two poses.
///
/// With `symmetry_axis` set (a canonical-frame axis the object is
/// rotationally symmetric about), the rotation error is the minimum
/// geodesic distance over all spins about that axis. The minimizer has a
/// closed form: any rotation in the quotient family maps the posed axis
/// the same way, and the smallest rotation achieving a given axis image
/// is the direct rotation between the two images, so the quotient error
/// is exactly the angle between `pred·axis` and `gt·axis`.
pub fn pose_error(pred: &Pose9D, gt: &Pose9D, symmetry_axis: Option<&UnitVec3>) -> PoseError {
    let rot_deg = match symmetry_axis {
        None => pred.rotation.angle_to(&gt.rotation).to_degrees(),
        Some(axis) => {
            let cosine = pred
                .rotation
                .apply(axis.as_ref())
                .dot(&gt.rotation.apply(axis.as_ref()));
            cosine.clamp(-1.0, 1.0).acos().to_degrees()
        }
    };
    PoseError {
        rot_deg,
        trans_cm: (pred.translation - gt.translation).norm() * 100.0,
        symmetry_applied: symmetry_axis.is_some(),
    }
}

/// Oriented box covering a canonical axis-aligned bound `[lo, hi]` under
/// a pose: extents scale per axis, the bound's midpoint rides along.
pub fn box_from_pose_aabb(pose: &Pose9D, lo: &Vec3, hi: &Vec3) -> Result<OrientedBox> {
    let mid = ((lo + hi) / 2.0).component_mul(&pose.scale);
    let half = ((hi - lo) / 2.0).component_mul(&pose.scale);
    Ok(OrientedBox::new(Pose9D::new(
        pose.rotation.clone(),
        pose.rotation.apply(&mid) + pose.translation,
        half,
    )?))
}

/// Sampled intersection-over-union of two oriented boxes.
///
/// Deterministic: a stratified lattice (one point per cell center, cells
/// near-cubic, roughly `samples` total) spans the union's AABB; the ratio
/// of lattice points inside both boxes to points inside either estimates
/// the IoU. Disjoint boxes report exactly zero.
pub fn box_iou(a: &OrientedBox, b: &OrientedBox, samples: usize) -> f64 {
    let mut corners = a.corners().to_vec();
    corners.extend_from_slice(&b.corners());
    let (lo, hi) = aabb(&corners).expect("eight corners per box");
    let extent = hi - lo;
    let volume = extent.x * extent.y * extent.z;
    if !(volume > 0.0) {
        return 0.0;
    }
    let density = (samples.max(1) as f64 / volume).cbrt();
    let counts = [
        ((extent.x * density).round() as usize).max(1),
        ((extent.y * density).round() as usize).max(1),
        ((extent.z * density).round() as usize).max(1),
    ];
    let mut inter = 0u64;
    let mut union = 0u64;
    for ix in 0..counts[0] {
        let x = lo.x + (ix as f64 + 0.5) / counts[0] as f64 * extent.x;
        for iy in 0..counts[1] {
            let y = lo.y + (iy as f64 + 0.5) / counts[1] as f64 * extent.y;
            for iz in 0..counts[2] {
                let z = lo.z + (iz as f64 + 0.5) / counts[2] as f64 * extent.z;
                let p = Vec3::new(x, y, z);
                let in_a = a.contains(&p);
                let in_b = b.contains(&p);
                if in_a || in_b {
                    union += 1;
                    if in_a && in_b {
                        inter += 1;
                    }
                }
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// ADD / ADD-S distance between two posings of a canonical model cloud.
///
/// ADD is the mean distance between corresponding points; ADD-S replaces
/// correspondence with the nearest ground-truth point (exact quadratic
/// scan), which is the right notion for symmetric shapes.
pub fn add_metrics(
    pred: &Pose9D,
    gt: &Pose9D,
    model_points: &[Vec3],
    symmetric: bool,
) -> Result<f64> {
    if model_points.is_empty() {
        return Err(Error::EmptyView);
    }
    let posed: Vec<(Vec3, Vec3)> = model_points
        .iter()
        .map(|x| (pred.to_camera(x), gt.to_camera(x)))
        .collect();
    let total: f64 = if symmetric {
        posed
            .iter()
            .map(|(p, _)| {
                posed
                    .iter()
                    .map(|(_, g)| (p - g).norm_squared())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum()
    } else {
        posed.iter().map(|(p, g)| (p - g).norm()).sum()
    };
    Ok(total / model_points.len() as f64)
}

/// Area under the accuracy-vs-threshold curve over `[0, max_threshold]`,
/// normalized to [0, 1].
///
/// The empirical accuracy curve is a step function jumping by `1/n` at
/// each error value; its integral is exact: each value `v` contributes
/// `max(0, max_threshold − v) / n`.
pub fn auc(values: &[f64], max_threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyView);
    }
    if !(max_threshold > 0.0) {
        return Err(Error::InvalidConfig("AUC threshold must be positive".into()));
    }
    let total: f64 = values
        .iter()
        .map(|v| (max_threshold - v).max(0.0))
        .sum();
    Ok(total / (max_threshold * values.len() as f64))
}

/// Accuracy-at-threshold samples for plotting, `bins + 1` rows spanning
/// `[0, max_threshold]`.
pub fn accuracy_curve(values: &[f64], max_threshold: f64, bins: usize) -> Vec<(f64, f64)> {
    let n = values.len().max(1) as f64;
    (0..=bins)
        .map(|k| {
            let tau = max_threshold * k as f64 / bins.max(1) as f64;
            let hits = values.iter().filter(|v| **v <= tau).count() as f64;
            (tau, hits / n)
        })
        .collect()
}

/// Per-category rotational symmetry axes, keyed by lowercase category
/// name. The built-in table marks bottles, cans, and bowls as symmetric
/// about their canonical up axis; entries can be overridden or extended.
#[derive(Clone, Debug)]
pub struct SymmetryTable {
    axes: HashMap<String, UnitVec3>,
}

impl Default for SymmetryTable {
    fn default() -> Self {
        let up = UnitVec3::new_normalize(Vec3::new(0.0, 1.0, 0.0));
        let mut axes = HashMap::new();
        for name in ["bottle", "can", "bowl"] {
            axes.insert(name.to_string(), up);
        }
        SymmetryTable { axes }
    }
}

impl SymmetryTable {
    pub fn empty() -> Self {
        SymmetryTable {
            axes: HashMap::new(),
        }
    }

    pub fn set(&mut self, category: &str, axis: Option<UnitVec3>) {
        let key = category.to_lowercase();
        match axis {
            Some(a) => {
                self.axes.insert(key, a);
            }
            None => {
                self.axes.remove(&key);
            }
        }
    }

    pub fn lookup(&self, category: &str) -> Option<&UnitVec3> {
        self.axes.get(&category.to_lowercase())
    }
}

/// Aggregate metric report over an evaluation run.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Rows of (rotation threshold deg, translation threshold cm,
    /// fraction of samples under both).
    pub pose_ap: Vec<(f64, f64, f64)>,
    /// Rows of (IoU cutoff, fraction of samples at or above it).
    pub iou_map: Vec<(f64, f64)>,
    pub add_auc: f64,
    pub adds_auc: f64,
    pub samples: usize,
}

impl EvalReport {
    /// Builds the report from per-sample measurements. `add_m` / `adds_m`
    /// are ADD and ADD-S distances in meters; slices must share length
    /// with `errors` where present (missing predictions should be fed as
    /// infinite errors so they count against every threshold).
    pub fn compute(
        errors: &[PoseError],
        ious: &[f64],
        add_m: &[f64],
        adds_m: &[f64],
    ) -> Result<EvalReport> {
        if errors.is_empty() {
            return Err(Error::EmptyView);
        }
        let n = errors.len() as f64;
        let pose_ap = AP_ROT_THRESHOLDS_DEG
            .iter()
            .map(|rot| {
                let hits = errors
                    .iter()
                    .filter(|e| e.rot_deg <= *rot && e.trans_cm <= AP_TRANS_THRESHOLD_CM)
                    .count() as f64;
                (*rot, AP_TRANS_THRESHOLD_CM, hits / n)
            })
            .collect();
        let iou_map = IOU_THRESHOLDS
            .iter()
            .map(|cut| {
                let hits = ious.iter().filter(|v| **v >= *cut).count() as f64;
                (*cut, hits / ious.len().max(1) as f64)
            })
            .collect();
        Ok(EvalReport {
            pose_ap,
            iou_map,
            add_auc: auc(add_m, DEFAULT_AUC_MAX)?,
            adds_auc: auc(adds_m, DEFAULT_AUC_MAX)?,
            samples: errors.len(),
        })
    }

    /// Machine-readable form: one `metric,parameter,value` row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,parameter,value\n");
        for (rot, trans, ap) in &self.pose_ap {
            out.push_str(&format!("pose_ap,{rot}deg{trans}cm,{ap:.6}\n"));
        }
        for (cut, map) in &self.iou_map {
            out.push_str(&format!("iou_map,{:.0},{map:.6}\n", cut * 100.0));
        }
        out.push_str(&format!("add_auc,0.10m,{:.6}\n", self.add_auc));
        out.push_str(&format!("adds_auc,0.10m,{:.6}\n", self.adds_auc));
        out.push_str(&format!("samples,,{}\n", self.samples));
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evaluation over {} samples", self.samples)?;
        for (rot, trans, ap) in &self.pose_ap {
            writeln!(f, "  {rot:>4}° {trans} cm AP   {:6.2}%", ap * 100.0)?;
        }
        for (cut, map) in &self.iou_map {
            writeln!(f, "  IoU@{:.2} mAP    {:6.2}%", cut, map * 100.0)?;
        }
        writeln!(f, "  ADD   AUC@10cm {:6.2}%", self.add_auc * 100.0)?;
        writeln!(f, "  ADD-S AUC@10cm {:6.2}%", self.adds_auc * 100.0)
    }
}
