//! Adam training loop for the MLP predictor.
//!
//! The loss is the sum of a coordinate term and a scale term, both mean
//! squared error by default: the coordinate term compares the expectation
//! decode of each softmax row against the ground-truth canonical
//! coordinate. A cross-entropy coordinate term against the ground-truth
//! bin is available as a config alternative. Shuffling is seeded per
//! absolute epoch, so training is reproducible and resumable.

use super::{bin_center, bin_of, LossMode, MlpPredictor, PredictorConfig};
use crate::error::{Error, Result};
use crate::tuples::TupleSample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Samples per parallel gradient work unit; fixed so that accumulation
/// order (and thus the result) is independent of worker count.
const GRAD_CHUNK: usize = 8;

/// Guard inside logarithms of the cross-entropy loss.
const LOG_FLOOR: f64 = 1e-300;

/// Optimizer state carried across epochs (and checkpoints).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn fresh(param_len: usize) -> Self {
        TrainState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
            epochs_done: 0,
        }
    }
}

/// Per-epoch averages recorded during one training call.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Mean total loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    /// Mean coordinate-term loss per epoch.
    pub epoch_coord_losses: Vec<f64>,
    /// Mean scale-term loss per epoch.
    pub epoch_scale_losses: Vec<f64>,
}

/// Trains from a fresh optimizer state for `cfg.epochs` epochs.
pub fn train(
    model: &mut MlpPredictor,
    dataset: &[TupleSample],
    cfg: &PredictorConfig,
) -> Result<TrainReport> {
    let mut state = TrainState::fresh(model.params().len());
    train_resumable(model, dataset, cfg, &mut state, cfg.epochs)
}

/// Runs `epochs` further epochs on top of existing optimizer state.
///
/// The learning-rate schedule and shuffle seeds key off the absolute epoch
/// index in `state`, so split runs reproduce an unbroken one exactly.
pub fn train_resumable(
    model: &mut MlpPredictor,
    dataset: &[TupleSample],
    cfg: &PredictorConfig,
    state: &mut TrainState,
    epochs: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyView);
    }
    if state.m.len() != model.params().len() || state.v.len() != model.params().len() {
        return Err(Error::DimensionMismatch {
            expected: model.params().len(),
            got: state.m.len(),
        });
    }
    for t in dataset {
        if t.feature.len() != model.dims().input_dim {
            return Err(Error::DimensionMismatch {
                expected: model.dims().input_dim,
                got: t.feature.len(),
            });
        }
        if t.gt_canonical.is_none() || t.gt_scale.is_none() {
            return Err(Error::MissingGroundTruth);
        }
    }
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..epochs {
        let epoch = state.epochs_done;
        let lr = cfg.learning_rate * 0.5f64.powi((epoch / cfg.lr_halving_period) as i32);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        // Reset to identity first: the permutation must be a function of the
        // epoch seed alone, or resumed runs would drift from unbroken ones.
        for (i, slot) in order.iter_mut().enumerate() {
            *slot = i;
        }
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut coord_total = 0.0;
        let mut scale_total = 0.0;
        for batch_indices in order.chunks(cfg.batch_size) {
            let batch: Vec<&TupleSample> = batch_indices.iter().map(|&i| &dataset[i]).collect();
            let (loss, coord_loss, scale_loss, grad) = loss_and_grad(model, &batch, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}: {loss}"
                )));
            }
            total += loss * batch.len() as f64;
            coord_total += coord_loss * batch.len() as f64;
            scale_total += scale_loss * batch.len() as f64;
            adam_step(model.params_mut(), &grad, state, lr);
        }
        let n = dataset.len() as f64;
        report.epoch_losses.push(total / n);
        report.epoch_coord_losses.push(coord_total / n);
        report.epoch_scale_losses.push(scale_total / n);
        state.epochs_done += 1;
    }
    Ok(report)
}

/// Mean loss over the batch plus the mean parameter gradient.
///
/// Returns `(total, coord_term, scale_term, grad)`. Gradients accumulate
/// over fixed-size chunks folded in order, keeping results bit-identical
/// across thread counts.
pub(crate) fn loss_and_grad(
    model: &MlpPredictor,
    batch: &[&TupleSample],
    loss_mode: LossMode,
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let param_len = model.params().len();
    let chunk_results: Vec<(f64, f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; param_len];
            let mut coord_sum = 0.0;
            let mut scale_sum = 0.0;
            for tuple in chunk {
                let (c, s) = sample_loss_and_grad(model, tuple, loss_mode, &mut grad);
                coord_sum += c;
                scale_sum += s;
            }
            (coord_sum, scale_sum, grad)
        })
        .collect();
    let mut grad = vec![0.0; param_len];
    let mut coord_sum = 0.0;
    let mut scale_sum = 0.0;
    for (c, s, g) in chunk_results {
        coord_sum += c;
        scale_sum += s;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    let coord = coord_sum * inv;
    let scale = scale_sum * inv;
    Ok((coord + scale, coord, scale, grad))
}

/// Adds one sample's gradient into `grad`; returns its loss terms.
fn sample_loss_and_grad(
    model: &MlpPredictor,
    tuple: &TupleSample,
    loss_mode: LossMode,
    grad: &mut [f64],
) -> (f64, f64) {
    let bins = model.dims().bins;
    let cache = model.forward(&tuple.feature);
    let gt = tuple.gt_canonical.expect("validated by caller");
    let gt_scale = tuple.gt_scale.expect("validated by caller");
    let mut dlogits = vec![0.0; 6 * bins];
    let mut coord_loss = 0.0;
    for point in 0..2 {
        for axis in 0..3 {
            let row = point * 3 + axis;
            let probs = &cache.probs[row * bins..(row + 1) * bins];
            let target = gt[point][axis];
            match loss_mode {
                LossMode::Mse => {
                    let mut decoded = 0.0;
                    for (b, &p) in probs.iter().enumerate() {
                        decoded += p * bin_center(b, bins);
                    }
                    let err = decoded - target;
                    coord_loss += err * err / 6.0;
                    // d decoded / d logit_j = p_j (c_j - decoded).
                    let upstream = 2.0 * err / 6.0;
                    for (b, &p) in probs.iter().enumerate() {
                        dlogits[row * bins + b] = upstream * p * (bin_center(b, bins) - decoded);
                    }
                }
                LossMode::CrossEntropy => {
                    let target_bin = bin_of(target, bins);
                    coord_loss += -(probs[target_bin].max(LOG_FLOOR)).ln() / 6.0;
                    for (b, &p) in probs.iter().enumerate() {
                        let onehot = if b == target_bin { 1.0 } else { 0.0 };
                        dlogits[row * bins + b] = (p - onehot) / 6.0;
                    }
                }
            }
        }
    }
    let mut dscale = [0.0; 3];
    let mut scale_loss = 0.0;
    for axis in 0..3 {
        let err = cache.scale[axis] - gt_scale[axis];
        scale_loss += err * err / 3.0;
        dscale[axis] = 2.0 * err / 3.0;
    }
    model.backward(&cache, &dlogits, &dscale, grad);
    (coord_loss, scale_loss)
}

/// One Adam update over all parameters.
fn adam_step(params: &mut [f64], grad: &[f64], state: &mut TrainState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - ADAM_BETA1.powi(t);
    let v_corr = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / m_corr;
        let v_hat = state.v[i] / v_corr;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::predictor::MlpDims;
    use rand::Rng;

    fn toy_dataset(count: usize, dim: usize, seed: u64) -> Vec<TupleSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let feature: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                // Ground truth depends smoothly on the feature so the
                // network has something learnable.
                let a = Vec3::new(
                    (feature[0] * 0.8).clamp(-1.0, 1.0),
                    (feature[1] * 0.8).clamp(-1.0, 1.0),
                    (feature[2] * 0.8).clamp(-1.0, 1.0),
                );
                let b = Vec3::new(
                    (feature[dim - 3] * 0.8).clamp(-1.0, 1.0),
                    (feature[dim - 2] * 0.8).clamp(-1.0, 1.0),
                    (feature[dim - 1] * 0.8).clamp(-1.0, 1.0),
                );
                TupleSample {
                    indices: vec![0, 1],
                    feature,
                    gt_canonical: Some([a, b]),
                    gt_scale: Some(Vec3::new(0.12, 0.2, 0.31)),
                }
            })
            .collect()
    }

    fn small_cfg() -> PredictorConfig {
        PredictorConfig {
            hidden_width: 24,
            hidden_layers: 2,
            bins: 8,
            learning_rate: 1e-2,
            epochs: 10,
            lr_halving_period: 1000,
            batch_size: 16,
            seed: 5,
            loss: LossMode::Mse,
        }
    }

    #[test]
    fn single_tuple_is_memorized_in_500_steps() {
        let dataset = toy_dataset(1, 10, 1);
        let dims = MlpDims {
            input_dim: 10,
            width: 24,
            layers: 2,
            bins: 8,
        };
        let mut model = MlpPredictor::new(dims, 2).unwrap();
        let cfg = PredictorConfig {
            epochs: 500,
            batch_size: 1,
            ..small_cfg()
        };
        let report = train(&mut model, &dataset, &cfg).unwrap();
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < 1e-3, "memorization stalled at loss {last}");
    }

    #[test]
    fn epoch_losses_never_double() {
        let dataset = toy_dataset(128, 12, 3);
        let dims = MlpDims {
            input_dim: 12,
            width: 24,
            layers: 2,
            bins: 8,
        };
        let mut model = MlpPredictor::new(dims, 4).unwrap();
        let report = train(&mut model, &dataset, &small_cfg()).unwrap();
        assert_eq!(report.epoch_losses.len(), 10);
        for pair in report.epoch_losses.windows(2) {
            assert!(
                pair[1] < 2.0 * pair[0],
                "epoch loss regressed: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < first, "no net progress: {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = toy_dataset(64, 10, 6);
        let dims = MlpDims {
            input_dim: 10,
            width: 16,
            layers: 2,
            bins: 8,
        };
        let cfg = PredictorConfig {
            epochs: 3,
            ..small_cfg()
        };
        let mut a = MlpPredictor::new(dims, 9).unwrap();
        let mut b = MlpPredictor::new(dims, 9).unwrap();
        let ra = train(&mut a, &dataset, &cfg).unwrap();
        let rb = train(&mut b, &dataset, &cfg).unwrap();
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for loss_mode in [LossMode::Mse, LossMode::CrossEntropy] {
            let dataset = toy_dataset(3, 8, 11);
            let dims = MlpDims {
                input_dim: 8,
                width: 12,
                layers: 2,
                bins: 6,
            };
            let mut model = MlpPredictor::new(dims, 12).unwrap();
            let batch: Vec<&TupleSample> = dataset.iter().collect();
            let (_, _, _, grad) = loss_and_grad(&model, &batch, loss_mode).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..10 {
                let i = rng.gen_range(0..model.params().len());
                let h = 1e-5 * model.params()[i].abs().max(1.0);
                let original = model.params()[i];
                model.params_mut()[i] = original + h;
                let (plus, _, _, _) = loss_and_grad(&model, &batch, loss_mode).unwrap();
                model.params_mut()[i] = original - h;
                let (minus, _, _, _) = loss_and_grad(&model, &batch, loss_mode).unwrap();
                model.params_mut()[i] = original;
                let fd = (plus - minus) / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-8);
                let rel = (grad[i] - fd).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "param {i}: analytic {} vs fd {fd} (rel {rel})",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn diverging_loss_aborts_with_diagnostic() {
        let dataset = toy_dataset(8, 8, 20);
        let dims = MlpDims {
            input_dim: 8,
            width: 12,
            layers: 1,
            bins: 4,
        };
        let mut model = MlpPredictor::new(dims, 21).unwrap();
        let cfg = PredictorConfig {
            learning_rate: 1e150,
            epochs: 3,
            batch_size: 4,
            ..small_cfg()
        };
        match train(&mut model, &dataset, &cfg) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch")),
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dims = MlpDims {
            input_dim: 8,
            width: 12,
            layers: 1,
            bins: 4,
        };
        let mut model = MlpPredictor::new(dims, 0).unwrap();
        assert!(matches!(
            train(&mut model, &[], &small_cfg()),
            Err(Error::EmptyView)
        ));
    }
}
