//! End-to-end pose estimation: tuples → predictions → voting →
//! filtering/reweighting → orientation + scale → gradient refinement.
//!
//! This is the wiring layer: every stage lives in its own module, and the
//! functions here compose them under one configuration, producing a
//! [`PoseEstimate`] per view.

use std::collections::HashSet;

use crate::cloud::{estimate_normals, PointCloud};
use crate::error::{Error, Result};
use crate::geom::Pose9D;
use crate::predictor::{ensemble_select, CanonicalPrediction, DecodeMode, Predictor};
use crate::refine::{alignment_loss, refine, Correspondence, RefineConfig};
use crate::scene::SceneSample;
use crate::tuples::{
    attach_ground_truth, build_tuples, compute_descriptors, feature_dim, sample_tuples,
    DescriptorConfig, TupleSample,
};
use crate::vote::{
    assemble_rotation, build_records, filter_noisy_pairs, reweight, vote_center,
    vote_orientation, vote_scale, CenterGrid, FilterConfig, OrientationGrid,
    DEFAULT_ORIENTATION_RESOLUTION_DEG, DEFAULT_VOXEL,
};

/// Neighborhood size for on-demand normal estimation.
const NORMALS_K: usize = 16;

/// Everything the end-to-end estimator needs.
#[derive(Clone, Copy, Debug)]
pub struct PipelineConfig {
    /// Tuples sampled per view (K).
    pub tuple_count: usize,
    /// Points per tuple (N); only the first two vote.
    pub tuple_size: usize,
    /// Seed for tuple sampling.
    pub seed: u64,
    /// Distribution decode used for voting targets.
    pub decode: DecodeMode,
    pub filter: FilterConfig,
    /// Run the noisy-pair filter and importance reweighting; when false,
    /// every record votes with unit weight (the ablation baseline).
    pub filter_enabled: bool,
    pub refine: RefineConfig,
    /// Skip gradient refinement when false (the voted pose is returned).
    pub refine_enabled: bool,
    /// Re-run the center vote on the filtered records before orientation.
    pub second_center_pass: bool,
    /// Center accumulator voxel edge (meters).
    pub voxel: f64,
    /// Orientation accumulator resolution (degrees).
    pub orientation_resolution_deg: f64,
    /// Vote the right-axis cone; when false the azimuth is left ambiguous
    /// and an arbitrary perpendicular completes the frame.
    pub vote_right_cone: bool,
    /// Local descriptor settings for network features.
    pub descriptor: DescriptorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tuple_count: 5000,
            tuple_size: 5,
            seed: 0,
            decode: DecodeMode::Expectation,
            filter: FilterConfig::default(),
            filter_enabled: true,
            refine: RefineConfig::default(),
            refine_enabled: true,
            second_center_pass: false,
            voxel: DEFAULT_VOXEL,
            orientation_resolution_deg: DEFAULT_ORIENTATION_RESOLUTION_DEG,
            vote_right_cone: true,
            descriptor: DescriptorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tuple_count == 0 || self.tuple_size < 2 {
            return Err(Error::InvalidConfig(
                "pipeline needs tuple_count >= 1 and tuple_size >= 2".into(),
            ));
        }
        if !(self.voxel > 0.0) {
            return Err(Error::InvalidConfig("voxel must be positive".into()));
        }
        self.filter.validate()?;
        self.refine.validate()
    }
}

/// One view's estimate with its diagnostics.
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    pub pose: Pose9D,
    /// True when the right-axis vote had no clear peak (or was skipped)
    /// and the azimuth came from an arbitrary perpendicular.
    pub azimuth_ambiguous: bool,
    /// Right-cone accumulator peak-to-mean ratio (0 when skipped).
    pub peak_to_mean: f64,
    /// Final mean squared alignment residual (m²) of the reported pose.
    pub coord_loss: f64,
    /// True when refinement was skipped for rank-deficient geometry.
    pub refine_degenerate: bool,
    /// Pair records rejected while decoding votes.
    pub dropped_pairs: usize,
    /// Pair records surviving the noisy-pair filter.
    pub kept_pairs: usize,
}

/// Runs the voting pipeline on already-predicted tuples.
pub fn estimate_from_predictions(
    cloud: &PointCloud,
    tuples: &[TupleSample],
    predictions: &[CanonicalPrediction],
    cfg: &PipelineConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let mut batch = build_records(cloud, tuples, predictions, cfg.decode)?;
    let (lo, hi) = cloud.aabb()?;

    let mut grid = CenterGrid::for_records(&lo, &hi, &batch.records, cfg.voxel)?;
    let mut center = vote_center(&batch.records, &mut grid, &cfg.filter)?;
    if cfg.filter_enabled {
        filter_noisy_pairs(&mut batch.records, &center, &cfg.filter)?;
        if cfg.second_center_pass {
            let mut second = CenterGrid::for_records(&lo, &hi, &batch.records, cfg.voxel)?;
            center = vote_center(&batch.records, &mut second, &cfg.filter)?;
        }
        reweight(&mut batch.records, cfg.filter.eta)?;
    }

    let mut up_grid = OrientationGrid::new(cfg.orientation_resolution_deg)?;
    let mut right_grid = OrientationGrid::new(cfg.orientation_resolution_deg)?;
    let orientation = vote_orientation(
        &batch.records,
        &mut up_grid,
        &mut right_grid,
        &cfg.filter,
        cfg.vote_right_cone,
    )?;
    let rotation = assemble_rotation(&orientation.e1, &orientation.e2)?;
    let scale = vote_scale(&batch.records)?;
    let initial = Pose9D::new(rotation, center, scale)?;

    // Alignment correspondences: each kept voting point once (the loss is
    // a mean over points), paired with its decoded canonical coordinate
    // scaled into meters. First decode in record order wins for points
    // appearing in several records.
    let mut seen: HashSet<u32> = HashSet::new();
    let mut pairs: Vec<Correspondence> = Vec::new();
    for record in batch.records.iter().filter(|r| r.kept) {
        let decoded = predictions[record.tuple_index as usize].decode(cfg.decode);
        for (index, point, canonical) in [
            (record.i1, record.p1, decoded[0]),
            (record.i2, record.p2, decoded[1]),
        ] {
            if seen.insert(index) {
                pairs.push((point, canonical.component_mul(&initial.scale)));
            }
        }
    }
    let kept_pairs = batch.records.iter().filter(|r| r.kept).count();

    let (pose, coord_loss, refine_degenerate) = if cfg.refine_enabled {
        let refined = refine(&pairs, &initial, &cfg.refine)?;
        (refined.pose, refined.final_loss, refined.degenerate)
    } else {
        let loss = alignment_loss(&pairs, &initial)?;
        (initial, loss, false)
    };

    Ok(PoseEstimate {
        pose,
        azimuth_ambiguous: orientation.azimuth_ambiguous,
        peak_to_mean: orientation.peak_to_mean,
        coord_loss,
        refine_degenerate,
        dropped_pairs: batch.dropped,
        kept_pairs,
    })
}

/// Full single-view estimation with a predictor.
///
/// The oracle predictor reads ground truth (and the clutter mask) from
/// `truth`; the network predictor reads only geometry, featurizing tuples
/// with the configured descriptors. Clouds without normals get them
/// estimated on the fly.
pub fn estimate_pose(
    cloud: &PointCloud,
    predictor: &Predictor,
    truth: Option<&SceneSample>,
    cfg: &PipelineConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    if cloud.len() < cfg.tuple_size {
        return Err(Error::CloudTooSmall {
            need: cfg.tuple_size,
            got: cloud.len(),
        });
    }
    match predictor {
        Predictor::Oracle(_) => {
            let truth = truth.ok_or(Error::MissingGroundTruth)?;
            let mut tuples =
                sample_tuples(cloud, cfg.tuple_count, cfg.tuple_size, cfg.seed)?;
            attach_ground_truth(&mut tuples, truth);
            let predictions = predictor.predict(&tuples, Some(&truth.noise_mask))?;
            estimate_from_predictions(cloud, &tuples, &predictions, cfg)
        }
        Predictor::Mlp(model) => {
            let owned;
            let featurizable = if cloud.normals.is_some() {
                cloud
            } else {
                let normals = estimate_normals(cloud, NORMALS_K)?;
                owned = PointCloud::with_normals(cloud.positions.clone(), normals.normals);
                &owned
            };
            let descriptors = compute_descriptors(featurizable, &cfg.descriptor)?;
            let expected = feature_dim(cfg.tuple_size, descriptors.dim);
            if expected != model.dims().input_dim {
                return Err(Error::DimensionMismatch {
                    expected: model.dims().input_dim,
                    got: expected,
                });
            }
            let tuples = build_tuples(
                featurizable,
                Some(&descriptors),
                cfg.tuple_count,
                cfg.tuple_size,
                cfg.seed,
            )?;
            let predictions = predictor.predict(&tuples, None)?;
            estimate_from_predictions(featurizable, &tuples, &predictions, cfg)
        }
    }
}

/// Runs each candidate predictor through the full pipeline and keeps the
/// estimate whose final alignment residual is lowest (ties favor the
/// earliest model). Returns the winning estimate and its index.
pub fn estimate_with_ensemble(
    cloud: &PointCloud,
    predictors: &[Predictor],
    truth: Option<&SceneSample>,
    cfg: &PipelineConfig,
) -> Result<(PoseEstimate, usize)> {
    if predictors.is_empty() {
        return Err(Error::InvalidConfig("ensemble needs at least one model".into()));
    }
    let estimates: Vec<PoseEstimate> = predictors
        .iter()
        .map(|p| estimate_pose(cloud, p, truth, cfg))
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = estimates.iter().map(|e| e.coord_loss).collect();
    let chosen = ensemble_select(&losses);
    Ok((estimates[chosen].clone(), chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::mesh::TriangleMesh;
    use crate::predictor::{OraclePredictor, OraclePredictorConfig};
    use crate::scene::{random_pose, sample_view, Camera};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle(noise: f64, seed: u64) -> Predictor {
        Predictor::Oracle(
            OraclePredictor::new(OraclePredictorConfig {
                coord_noise_sigma: noise,
                seed,
                ..Default::default()
            })
            .unwrap(),
        )
    }

    fn render(seed: u64) -> SceneSample {
        let camera = Camera::standard(160, 160);
        let mesh = TriangleMesh::l_shape(0.1).canonicalized().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let pose = random_pose(&mut rng, mesh.half_extents, &camera).unwrap();
            let view = sample_view(&mesh, &pose, &camera).unwrap();
            if view.cloud.len() >= 500 {
                return view;
            }
        }
    }

    #[test]
    fn clean_views_estimate_accurate_poses_end_to_end() {
        let view = render(77);
        let cfg = PipelineConfig {
            tuple_count: 3000,
            seed: 9,
            ..Default::default()
        };
        let out = estimate_pose(&view.cloud, &oracle(0.0, 0), Some(&view), &cfg).unwrap();
        let rot = out.pose.rotation.angle_to(&view.pose.rotation).to_degrees();
        let trans = (out.pose.translation - view.pose.translation).norm();
        assert!(rot < 2.0, "rotation error {rot} deg");
        assert!(trans < 0.004, "translation error {} mm", trans * 1000.0);
        for axis in 0..3 {
            let rel = (out.pose.scale[axis] / view.pose.scale[axis] - 1.0).abs();
            assert!(rel < 0.02, "scale axis {axis} off by {rel}");
        }
        assert!(out.kept_pairs > 0);
        assert!(out.coord_loss.is_finite());
    }

    #[test]
    fn refinement_tightens_or_matches_the_voted_translation() {
        let view = render(78);
        let base = PipelineConfig {
            tuple_count: 2000,
            seed: 4,
            ..Default::default()
        };
        let raw = estimate_pose(
            &view.cloud,
            &oracle(0.0, 0),
            Some(&view),
            &PipelineConfig {
                refine_enabled: false,
                ..base
            },
        )
        .unwrap();
        let refined = estimate_pose(&view.cloud, &oracle(0.0, 0), Some(&view), &base).unwrap();
        assert!(refined.coord_loss <= raw.coord_loss + 1e-12);
    }

    #[test]
    fn second_center_pass_is_available_and_consistent() {
        let view = render(79);
        let cfg = PipelineConfig {
            tuple_count: 2000,
            seed: 5,
            second_center_pass: true,
            ..Default::default()
        };
        let out = estimate_pose(&view.cloud, &oracle(0.0, 0), Some(&view), &cfg).unwrap();
        let trans = (out.pose.translation - view.pose.translation).norm();
        assert!(trans < 0.004, "translation error {} mm", trans * 1000.0);
    }

    #[test]
    fn ensemble_prefers_the_cleaner_predictor() {
        let view = render(80);
        let cfg = PipelineConfig {
            tuple_count: 1500,
            seed: 6,
            ..Default::default()
        };
        let models = [oracle(0.0, 1), oracle(0.15, 2)];
        let (winner, chosen) =
            estimate_with_ensemble(&view.cloud, &models, Some(&view), &cfg).unwrap();
        assert_eq!(chosen, 0, "zero-noise model should win");
        let rot = winner.pose.rotation.angle_to(&view.pose.rotation).to_degrees();
        assert!(rot < 2.0);
    }

    #[test]
    fn tiny_clouds_are_rejected_up_front() {
        let cloud = PointCloud::from_positions(vec![Vec3::new(0.0, 0.0, 0.5); 3]);
        let cfg = PipelineConfig::default();
        let err = estimate_pose(&cloud, &oracle(0.0, 0), None, &cfg).unwrap_err();
        assert!(matches!(err, Error::CloudTooSmall { .. }));
    }

    #[test]
    fn oracle_without_ground_truth_is_an_error() {
        let mesh = TriangleMesh::box_mesh(Vec3::repeat(0.05))
            .canonicalized()
            .unwrap();
        let camera = Camera::standard(120, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng, mesh.half_extents, &camera).unwrap();
        let view = sample_view(&mesh, &pose, &camera).unwrap();
        let cfg = PipelineConfig {
            tuple_count: 500,
            ..Default::default()
        };
        let err = estimate_pose(&view.cloud, &oracle(0.0, 0), None, &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingGroundTruth));
    }
}
