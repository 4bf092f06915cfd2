//! Vote accumulation: from per-tuple canonical predictions to a raw pose.
//!
//! Each tuple's first two points form a voting pair. Decoding the predicted
//! canonical coordinates of that pair (scaled into meters by the predicted
//! per-axis scale) yields center targets (axial offset, radial distance)
//! and orientation cone angles against the canonical axes, with the
//! canonical frame fixed as up = +y, right = +x and the object center at
//! the canonical origin. Candidates are enumerated around the unresolved
//! ring/cone angles into accumulator grids; the object center, orientation
//! basis, and scale are read off the peaks.
//!
//! Pair reliability is measured after the center vote: a pair's epsilon is
//! the mismatch between the center targets implied by the voted center and
//! the predicted canonical targets. The worst fraction is discarded and the
//! survivors are reweighted inversely to per-point membership, which evens
//! out the influence of points that appear in many pairs. Filtering and
//! reweighting shape the orientation and scale votes; the center vote runs
//! first (optionally a second, filtered center pass — see the pipeline).
//!
//! Accumulation is parallel across records with candidate lists folded
//! serially in record order, so grids are bit-identical for any worker
//! count. Ties everywhere resolve to the lowest linear bin index.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Rotation, UnitVec3, Vec3};
use crate::predictor::{CanonicalPrediction, DecodeMode};
use crate::targets::{
    center_targets, orientation_targets, CenterRing, CenterTargets, ConeRing, OrientationTargets,
};
use crate::tuples::TupleSample;
use rayon::prelude::*;
use std::collections::HashMap;

/// Default center accumulator voxel edge, meters.
pub const DEFAULT_VOXEL: f64 = 0.002;
/// Default orientation accumulator resolution, degrees.
pub const DEFAULT_ORIENTATION_RESOLUTION_DEG: f64 = 1.0;
/// Center grids pad the scene bounds by at least this margin (meters):
/// partial views put the object center outside the visible-point box.
const GRID_PAD_MIN: f64 = 0.02;
/// ... and by at least this fraction of the largest extent.
const GRID_PAD_FRACTION: f64 = 0.15;
/// Quantile of per-record candidate reach used to size record-driven
/// grids. Every clean record's reach is at least the center's distance to
/// the visible-point box, so a low quantile still covers the center while
/// staying robust to wild predictions.
const CENTER_REACH_QUANTILE: f64 = 0.25;
/// Safety margin added to the reach quantile (meters), absorbing
/// prediction quantization.
const REACH_MARGIN: f64 = 0.01;
/// Refuse center grids larger than this many cells.
const GRID_CELL_CAP: usize = 1 << 26;
/// An e2 peak this close to parallel with e1 falls through to the next bin.
const E2_PARALLEL_TOLERANCE: f64 = 1e-6;
/// Peak-to-mean ratios below this flag the azimuth as ambiguous.
pub const AMBIGUITY_PEAK_TO_MEAN: f64 = 1.5;

/// Canonical "up" axis (the first orientation basis vector).
pub fn canonical_up() -> UnitVec3 {
    UnitVec3::new_unchecked(Vec3::new(0.0, 1.0, 0.0))
}

/// Canonical "right" axis (the second orientation basis vector).
pub fn canonical_right() -> UnitVec3 {
    UnitVec3::new_unchecked(Vec3::new(1.0, 0.0, 0.0))
}

/// One voting pair: camera-frame points plus canonical-space targets.
#[derive(Clone, Debug)]
pub struct PairVoteRecord {
    pub tuple_index: u32,
    /// Cloud indices of the two voting points.
    pub i1: u32,
    pub i2: u32,
    /// Camera-frame positions of the two voting points.
    pub p1: Vec3,
    pub p2: Vec3,
    /// Center targets in metric canonical space.
    pub center: CenterTargets,
    /// Cone cosines against the canonical up/right axes.
    pub orientation: OrientationTargets,
    /// Per-pair predicted scale.
    pub scale: Vec3,
    /// Center-consistency error; filled by [`filter_noisy_pairs`].
    pub epsilon: f64,
    pub kept: bool,
    pub weight: f64,
}

/// Records built from one view plus the count of degenerate pairs dropped.
#[derive(Clone, Debug)]
pub struct RecordBatch {
    pub records: Vec<PairVoteRecord>,
    pub dropped: usize,
}

/// Voting knobs: filter ratio, membership margin, and ring sample counts.
#[derive(Clone, Copy, Debug)]
pub struct FilterConfig {
    /// Fraction of pairs discarded as noisy.
    pub tau: f64,
    /// Margin added to membership counts when reweighting.
    pub eta: f64,
    /// Samples around the center ring per record.
    pub sigma_samples: usize,
    /// Samples around each orientation cone per record.
    pub theta_samples: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tau: 0.5,
            eta: 1.0,
            sigma_samples: 360,
            theta_samples: 360,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!(
                "filter ratio must lie in [0, 1), got {}",
                self.tau
            )));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "membership margin must be >= 0, got {}",
                self.eta
            )));
        }
        if self.sigma_samples == 0 || self.theta_samples == 0 {
            return Err(Error::InvalidConfig("sample counts must be > 0".into()));
        }
        Ok(())
    }
}

/// Derives center and orientation targets from decoded canonical points.
///
/// The canonical points are scaled per-axis into meters first, so targets
/// are commensurable with camera-frame quantities; the object center is the
/// canonical origin and the basis axes are canonical up/right.
pub fn derive_pair_targets(
    p1_canonical: &Vec3,
    p2_canonical: &Vec3,
    scale: &Vec3,
) -> Result<(CenterTargets, OrientationTargets)> {
    let q1 = p1_canonical.component_mul(scale);
    let q2 = p2_canonical.component_mul(scale);
    let center = center_targets(&Vec3::zeros(), &q1, &q2)?;
    let orientation = orientation_targets(&canonical_up(), &canonical_right(), &q1, &q2)?;
    Ok((center, orientation))
}

/// Builds one vote record per tuple from its prediction. Tuples whose
/// decoded pair degenerates (coincident canonical points) are dropped and
/// counted. For `DecodeMode::Sample`, the seed is offset by tuple index.
pub fn build_records(
    cloud: &PointCloud,
    tuples: &[TupleSample],
    predictions: &[CanonicalPrediction],
    mode: DecodeMode,
) -> Result<RecordBatch> {
    if tuples.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: tuples.len(),
            got: predictions.len(),
        });
    }
    let built: Vec<Option<PairVoteRecord>> = tuples
        .par_iter()
        .zip(predictions.par_iter())
        .enumerate()
        .map(|(idx, (tuple, pred))| {
            let per_tuple_mode = match mode {
                DecodeMode::Expectation => DecodeMode::Expectation,
                DecodeMode::Sample(seed) => DecodeMode::Sample(seed.wrapping_add(idx as u64)),
            };
            let [c1, c2] = pred.decode(per_tuple_mode);
            let (center, orientation) = match derive_pair_targets(&c1, &c2, &pred.scale) {
                Ok(t) => t,
                Err(_) => return None,
            };
            Some(PairVoteRecord {
                tuple_index: idx as u32,
                i1: tuple.indices[0],
                i2: tuple.indices[1],
                p1: cloud.positions[tuple.indices[0] as usize],
                p2: cloud.positions[tuple.indices[1] as usize],
                center,
                orientation,
                scale: pred.scale,
                epsilon: 0.0,
                kept: true,
                weight: 1.0,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(built.len());
    let mut dropped = 0usize;
    for r in built {
        match r {
            Some(r) => records.push(r),
            None => dropped += 1,
        }
    }
    Ok(RecordBatch { records, dropped })
}

/// Dense voxel accumulator for center votes.
#[derive(Clone, Debug)]
pub struct CenterGrid {
    pub origin: Vec3,
    pub voxel: f64,
    pub dims: [usize; 3],
    pub counts: Vec<f64>,
}

impl CenterGrid {
    /// Grid covering `[lo, hi]` padded outward by a fraction of the
    /// extent; the center of a partial view's object lies beyond the
    /// visible points. Prefer [`CenterGrid::for_records`] when records are
    /// available — it pads by how far the votes can actually reach.
    pub fn for_bounds(lo: &Vec3, hi: &Vec3, voxel: f64) -> Result<Self> {
        let extent = hi - lo;
        if !extent.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry(
                "grid bounds are non-finite".into(),
            ));
        }
        let pad = (extent.max() * GRID_PAD_FRACTION).max(GRID_PAD_MIN);
        Self::padded(lo, hi, pad, voxel)
    }

    /// Grid covering `[lo, hi]` padded by a robust quantile of the
    /// records' candidate reach `hypot(axial, radial)` — the distance
    /// from a record's first point to any of its candidates. A face-on
    /// view puts the true center well behind the visible box, but never
    /// farther than a clean record's reach.
    pub fn for_records(
        lo: &Vec3,
        hi: &Vec3,
        records: &[PairVoteRecord],
        voxel: f64,
    ) -> Result<Self> {
        let mut reach: Vec<f64> = records
            .iter()
            .filter(|r| r.kept)
            .map(|r| r.center.axial.hypot(r.center.radial))
            .filter(|v| v.is_finite())
            .collect();
        if reach.is_empty() {
            return Self::for_bounds(lo, hi, voxel);
        }
        reach.sort_by(f64::total_cmp);
        let q = reach[((reach.len() - 1) as f64 * CENTER_REACH_QUANTILE) as usize];
        let pad = (q + REACH_MARGIN).max(GRID_PAD_MIN);
        Self::padded(lo, hi, pad, voxel)
    }

    fn padded(lo: &Vec3, hi: &Vec3, pad: f64, voxel: f64) -> Result<Self> {
        if !(voxel > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "voxel edge must be positive, got {voxel}"
            )));
        }
        let extent = hi - lo;
        if extent.min() < 0.0 || !extent.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry(
                "grid bounds are inverted or non-finite".into(),
            ));
        }
        let origin = lo - Vec3::repeat(pad);
        let span = extent + Vec3::repeat(2.0 * pad);
        let dims = [
            (span.x / voxel).ceil() as usize + 1,
            (span.y / voxel).ceil() as usize + 1,
            (span.z / voxel).ceil() as usize + 1,
        ];
        let cells = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidConfig("grid dimensions overflow".into()))?;
        if cells > GRID_CELL_CAP {
            return Err(Error::InvalidConfig(format!(
                "center grid of {cells} cells exceeds the cap; increase the voxel size"
            )));
        }
        Ok(CenterGrid {
            origin,
            voxel,
            dims,
            counts: vec![0.0; cells],
        })
    }

    /// Linear cell index of a point, or None when outside the grid.
    pub fn index_of(&self, p: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let t = (p[axis] - self.origin[axis]) / self.voxel;
            if t < 0.0 {
                return None;
            }
            let i = t as usize;
            if i >= self.dims[axis] {
                return None;
            }
            idx[axis] = i;
        }
        Some(idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2]))
    }

    /// Center point of a cell by linear index.
    pub fn cell_center(&self, linear: usize) -> Vec3 {
        let ix = linear % self.dims[0];
        let iy = (linear / self.dims[0]) % self.dims[1];
        let iz = linear / (self.dims[0] * self.dims[1]);
        self.origin
            + Vec3::new(
                (ix as f64 + 0.5) * self.voxel,
                (iy as f64 + 0.5) * self.voxel,
                (iz as f64 + 0.5) * self.voxel,
            )
    }

    /// Highest-count cell; ties go to the lowest linear index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0.0 && best.map_or(true, |(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Cosine/sine table for `n` evenly spaced angles over the full turn.
fn angle_table(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|s| {
            let a = 2.0 * std::f64::consts::PI * s as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect()
}

/// Casts center votes from all kept records and returns the peak cell's
/// center. Candidates outside the grid are ignored.
pub fn vote_center(
    records: &[PairVoteRecord],
    grid: &mut CenterGrid,
    cfg: &FilterConfig,
) -> Result<Vec3> {
    cfg.validate()?;
    if !records.iter().any(|r| r.kept) {
        return Err(Error::EmptyView);
    }
    let table = angle_table(cfg.sigma_samples);
    // Candidate cell lists are computed in parallel but folded in record
    // order, keeping counts identical across worker counts.
    let hits: Vec<Vec<(usize, f64)>> = records
        .par_iter()
        .map(|r| {
            if !r.kept {
                return Vec::new();
            }
            let ring = match CenterRing::new(&r.center, &r.p1, &r.p2) {
                Ok(ring) => ring,
                Err(_) => return Vec::new(),
            };
            let mut cells = Vec::with_capacity(table.len());
            for &(cos, sin) in &table {
                if let Some(cell) = grid.index_of(&ring.at(cos, sin)) {
                    cells.push((cell, r.weight));
                }
            }
            cells
        })
        .collect();
    for list in hits {
        for (cell, w) in list {
            grid.counts[cell] += w;
        }
    }
    let peak = grid.argmax().ok_or_else(|| {
        Error::DegenerateGeometry("no center vote landed inside the grid".into())
    })?;
    Ok(grid.cell_center(peak))
}

/// Scores each record against the voted center and discards the worst
/// `ceil(tau * K)` by error, stably (ties keep earlier records).
///
/// A record's error compares the center targets of its camera-frame pair
/// measured against `center` with its predicted canonical targets.
pub fn filter_noisy_pairs(
    records: &mut [PairVoteRecord],
    center: &Vec3,
    cfg: &FilterConfig,
) -> Result<()> {
    cfg.validate()?;
    for r in records.iter_mut() {
        let observed = center_targets(center, &r.p1, &r.p2)?;
        let da = observed.axial - r.center.axial;
        let dr = observed.radial - r.center.radial;
        r.epsilon = (da * da + dr * dr).sqrt();
        r.kept = true;
    }
    let discard = (cfg.tau * records.len() as f64).ceil() as usize;
    if discard == 0 {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .epsilon
            .total_cmp(&records[a].epsilon)
            .then(a.cmp(&b))
    });
    for &idx in order.iter().take(discard.min(records.len())) {
        records[idx].kept = false;
    }
    Ok(())
}

/// Reweights kept records inversely to per-point pair membership:
/// `w = 1/(m(p1) + eta) * 1/(m(p2) + eta)` with `m` counting kept records
/// containing the point in either voting slot. Discarded records get 0.
pub fn reweight(records: &mut [PairVoteRecord], eta: f64) -> Result<()> {
    if eta < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "membership margin must be >= 0, got {eta}"
        )));
    }
    let mut membership: HashMap<u32, u32> = HashMap::new();
    for r in records.iter() {
        if r.kept {
            *membership.entry(r.i1).or_insert(0) += 1;
            *membership.entry(r.i2).or_insert(0) += 1;
        }
    }
    for r in records.iter_mut() {
        if r.kept {
            let m1 = membership[&r.i1] as f64;
            let m2 = membership[&r.i2] as f64;
            r.weight = 1.0 / (m1 + eta) / (m2 + eta);
        } else {
            r.weight = 0.0;
        }
    }
    Ok(())
}

/// Equirectangular accumulator over unit directions.
///
/// Inclination is measured from +z; the linear index is
/// `inclination_row * azimuth_bins + azimuth_column`. Votes are multiplied
/// by an inverse-row-area factor so polar bins are not overcounted.
#[derive(Clone, Debug)]
pub struct OrientationGrid {
    pub resolution_deg: f64,
    pub az_bins: usize,
    pub inc_bins: usize,
    pub counts: Vec<f64>,
}

impl OrientationGrid {
    pub fn new(resolution_deg: f64) -> Result<Self> {
        if !(resolution_deg > 0.0) || resolution_deg > 90.0 {
            return Err(Error::InvalidConfig(format!(
                "orientation resolution must lie in (0, 90] degrees, got {resolution_deg}"
            )));
        }
        let az_bins = (360.0 / resolution_deg).round().max(1.0) as usize;
        let inc_bins = (180.0 / resolution_deg).round().max(1.0) as usize;
        Ok(OrientationGrid {
            resolution_deg,
            az_bins,
            inc_bins,
            counts: vec![0.0; az_bins * inc_bins],
        })
    }

    /// Linear bin containing a direction.
    pub fn bin_of(&self, u: &UnitVec3) -> usize {
        let inc = u.z.clamp(-1.0, 1.0).acos();
        let mut az = u.y.atan2(u.x);
        if az < 0.0 {
            az += 2.0 * std::f64::consts::PI;
        }
        let ii = ((inc / std::f64::consts::PI * self.inc_bins as f64) as usize)
            .min(self.inc_bins - 1);
        let ia = ((az / (2.0 * std::f64::consts::PI) * self.az_bins as f64) as usize)
            .min(self.az_bins - 1);
        ii * self.az_bins + ia
    }

    /// Area-compensation factor of a bin's inclination row.
    pub fn row_weight(&self, linear: usize) -> f64 {
        let ii = linear / self.az_bins;
        let inc = (ii as f64 + 0.5) * std::f64::consts::PI / self.inc_bins as f64;
        let res = self.resolution_deg.to_radians();
        1.0 / inc.sin().max(res.sin())
    }

    /// Direction at a bin's center.
    pub fn bin_center(&self, linear: usize) -> UnitVec3 {
        let ii = linear / self.az_bins;
        let ia = linear % self.az_bins;
        let inc = (ii as f64 + 0.5) * std::f64::consts::PI / self.inc_bins as f64;
        let az = (ia as f64 + 0.5) * 2.0 * std::f64::consts::PI / self.az_bins as f64;
        UnitVec3::new_normalize(Vec3::new(
            inc.sin() * az.cos(),
            inc.sin() * az.sin(),
            inc.cos(),
        ))
    }

    /// Highest-count bin; ties go to the lowest linear index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0.0 && best.map_or(true, |(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Result of the orientation vote.
#[derive(Clone, Debug)]
pub struct OrientationVote {
    /// Camera-frame image of the canonical up axis.
    pub e1: UnitVec3,
    /// Camera-frame image of the canonical right axis, orthogonal to `e1`.
    pub e2: UnitVec3,
    /// True when the right-axis vote has no clear peak (rotationally
    /// symmetric objects) or the right cone was not voted at all.
    pub azimuth_ambiguous: bool,
    /// Peak-to-mean ratio of the right-axis grid over its nonzero bins.
    pub peak_to_mean: f64,
}

/// Casts cone votes for the up axis (and, unless disabled, the right axis)
/// from all kept records, then reads both directions off the grid peaks.
///
/// The right-axis winner is projected orthogonal to the up axis; a winner
/// parallel to it falls through to the next-best bin. With the right cone
/// disabled, an arbitrary orthogonal direction is returned and flagged.
pub fn vote_orientation(
    records: &[PairVoteRecord],
    up_grid: &mut OrientationGrid,
    right_grid: &mut OrientationGrid,
    cfg: &FilterConfig,
    vote_right_cone: bool,
) -> Result<OrientationVote> {
    cfg.validate()?;
    if !records.iter().any(|r| r.kept && r.weight > 0.0) {
        return Err(Error::EmptyView);
    }
    let table = angle_table(cfg.theta_samples);
    let hits: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = records
        .par_iter()
        .map(|r| {
            if !r.kept || r.weight <= 0.0 {
                return (Vec::new(), Vec::new());
            }
            let mut up_hits = Vec::with_capacity(table.len());
            if let Ok(cone) = ConeRing::new(r.orientation.up_cos, &r.p1, &r.p2) {
                for &(cos, sin) in &table {
                    let dir = cone.at(cos, sin);
                    let bin = up_grid.bin_of(&dir);
                    up_hits.push((bin, r.weight * up_grid.row_weight(bin)));
                }
            }
            let mut right_hits = Vec::new();
            if vote_right_cone {
                if let Ok(cone) = ConeRing::new(r.orientation.right_cos, &r.p1, &r.p2) {
                    right_hits.reserve(table.len());
                    for &(cos, sin) in &table {
                        let dir = cone.at(cos, sin);
                        let bin = right_grid.bin_of(&dir);
                        right_hits.push((bin, r.weight * right_grid.row_weight(bin)));
                    }
                }
            }
            (up_hits, right_hits)
        })
        .collect();
    for (up_hits, right_hits) in hits {
        for (bin, w) in up_hits {
            up_grid.counts[bin] += w;
        }
        for (bin, w) in right_hits {
            right_grid.counts[bin] += w;
        }
    }
    let up_peak = up_grid
        .argmax()
        .ok_or_else(|| Error::DegenerateGeometry("up-axis vote is empty".into()))?;
    let e1 = up_grid.bin_center(up_peak);
    if !vote_right_cone {
        let fallback = crate::targets::perp_axis(&e1);
        return Ok(OrientationVote {
            e1,
            e2: fallback,
            azimuth_ambiguous: true,
            peak_to_mean: 0.0,
        });
    }
    // Rank right-axis bins by count (ties to lower index) and take the
    // first whose center is not parallel to e1 after projection.
    let mut ranked: Vec<usize> = (0..right_grid.counts.len())
        .filter(|&i| right_grid.counts[i] > 0.0)
        .collect();
    ranked.sort_by(|&a, &b| {
        right_grid.counts[b]
            .total_cmp(&right_grid.counts[a])
            .then(a.cmp(&b))
    });
    let mut chosen: Option<UnitVec3> = None;
    for &bin in &ranked {
        let raw = right_grid.bin_center(bin);
        let projected = raw.into_inner() - e1.into_inner() * raw.dot(&e1);
        if projected.norm() > E2_PARALLEL_TOLERANCE {
            chosen = Some(UnitVec3::new_normalize(projected));
            break;
        }
    }
    let e2 = chosen
        .ok_or_else(|| Error::DegenerateGeometry("right-axis vote is empty or parallel".into()))?;
    let peak = right_grid.counts[ranked[0]];
    let nonzero = ranked.len() as f64;
    let mean = ranked.iter().map(|&i| right_grid.counts[i]).sum::<f64>() / nonzero;
    let peak_to_mean = peak / mean;
    Ok(OrientationVote {
        e1,
        e2,
        azimuth_ambiguous: peak_to_mean < AMBIGUITY_PEAK_TO_MEAN,
        peak_to_mean,
    })
}

/// Assembles the rotation whose canonical up/right axes map to the voted
/// camera-frame directions (columns: right, up, right x up).
pub fn assemble_rotation(e1: &UnitVec3, e2: &UnitVec3) -> Result<Rotation> {
    let e3 = e2.cross(e1);
    let m = Mat3::from_columns(&[e2.into_inner(), e1.into_inner(), e3]);
    Rotation::from_matrix(m)
}

/// Weighted mean of per-record scale predictions over kept records.
pub fn vote_scale(records: &[PairVoteRecord]) -> Result<Vec3> {
    let mut sum = Vec3::zeros();
    let mut total = 0.0;
    for r in records {
        if r.kept && r.weight > 0.0 {
            sum += r.scale * r.weight;
            total += r.weight;
        }
    }
    if total <= 0.0 {
        return Err(Error::EmptyView);
    }
    Ok(sum / total)
}
