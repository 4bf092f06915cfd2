//! Ground-truth-backed predictor with controlled corruption.
//!
//! The oracle reads each tuple's ground-truth canonical coordinates and
//! emits delta distributions at their bins, optionally corrupted three ways:
//! Gaussian coordinate noise before binning, hash-collision mixing (tuples
//! whose coarse pair geometry collides share averaged mass, mimicking
//! feature aliasing), and garbage rows for tuples voting from clutter
//! points. It exists to exercise the voting pipeline under dialed-in error
//! levels; it is not a learned component.

use super::{bin_of, CanonicalPrediction};
use crate::error::{Error, Result};
use crate::tuples::TupleSample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// Pair lengths are quantized to this step (meters) for collision hashing.
const COLLISION_LENGTH_STEP: f64 = 0.02;
/// Normal-cosine entries are quantized to this step for collision hashing.
const COLLISION_COSINE_STEP: f64 = 0.125;
/// Scale floor keeping corrupted scales valid.
const SCALE_FLOOR: f64 = 1e-6;

/// Corruption knobs for [`OraclePredictor`]. All-zero means exact output.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictorConfig {
    /// Gaussian sigma added to canonical coordinates before binning.
    pub coord_noise_sigma: f64,
    /// Fraction of each row replaced by its hash bucket's average.
    pub collision_rate: f64,
    /// Gaussian sigma added per scale axis, in meters.
    pub scale_noise_sigma: f64,
    /// Bins per axis distribution.
    pub bins: usize,
    /// Seed for all corruption draws.
    pub seed: u64,
}

impl Default for OraclePredictorConfig {
    fn default() -> Self {
        OraclePredictorConfig {
            coord_noise_sigma: 0.0,
            collision_rate: 0.0,
            scale_noise_sigma: 0.0,
            bins: 32,
            seed: 0,
        }
    }
}

impl OraclePredictorConfig {
    fn validate(&self) -> Result<()> {
        if self.coord_noise_sigma < 0.0 || self.scale_noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.collision_rate) {
            return Err(Error::InvalidConfig(format!(
                "collision rate must lie in [0, 1], got {}",
                self.collision_rate
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidConfig("bins must be > 0".into()));
        }
        Ok(())
    }
}

/// See the module docs; construct via [`OraclePredictor::new`].
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    cfg: OraclePredictorConfig,
}

impl OraclePredictor {
    pub fn new(cfg: OraclePredictorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OraclePredictor { cfg })
    }

    pub fn config(&self) -> &OraclePredictorConfig {
        &self.cfg
    }

    /// Emits one prediction per tuple. `clutter` flags points whose votes
    /// should be garbage (seeded-random bins) rather than ground truth.
    pub fn predict(
        &self,
        tuples: &[TupleSample],
        clutter: Option<&[bool]>,
    ) -> Result<Vec<CanonicalPrediction>> {
        let bins = self.cfg.bins;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let coord_noise = Normal::new(0.0, self.cfg.coord_noise_sigma.max(f64::MIN_POSITIVE))
            .expect("sigma validated");
        let scale_noise = Normal::new(0.0, self.cfg.scale_noise_sigma.max(f64::MIN_POSITIVE))
            .expect("sigma validated");
        let mut predictions = Vec::with_capacity(tuples.len());
        for tuple in tuples {
            let gt = tuple
                .gt_canonical
                .ok_or(Error::MissingGroundTruth)?;
            let gt_scale = tuple.gt_scale.ok_or(Error::MissingGroundTruth)?;
            let mut dist = vec![0.0; 6 * bins];
            for point in 0..2 {
                let garbage = clutter
                    .map(|mask| mask[tuple.indices[point] as usize])
                    .unwrap_or(false);
                for axis in 0..3 {
                    let bin = if garbage {
                        rng.gen_range(0..bins)
                    } else {
                        let mut c = gt[point][axis];
                        if self.cfg.coord_noise_sigma > 0.0 {
                            c += coord_noise.sample(&mut rng);
                        }
                        bin_of(c, bins)
                    };
                    dist[(point * 3 + axis) * bins + bin] = 1.0;
                }
            }
            let mut scale = gt_scale;
            if self.cfg.scale_noise_sigma > 0.0 {
                for axis in 0..3 {
                    scale[axis] = (scale[axis] + scale_noise.sample(&mut rng)).max(SCALE_FLOOR);
                }
            }
            predictions.push(CanonicalPrediction { bins, dist, scale });
        }
        if self.cfg.collision_rate > 0.0 {
            mix_collisions(tuples, &mut predictions, self.cfg.collision_rate)?;
        }
        Ok(predictions)
    }
}

/// Replaces a `rate` fraction of every row with the average over all tuples
/// whose coarse pair geometry hashes to the same bucket.
fn mix_collisions(
    tuples: &[TupleSample],
    predictions: &mut [CanonicalPrediction],
    rate: f64,
) -> Result<()> {
    let keys: Vec<u64> = tuples.iter().map(collision_key).collect::<Result<_>>()?;
    let mut buckets: HashMap<u64, (Vec<f64>, usize)> = HashMap::new();
    for (key, pred) in keys.iter().zip(predictions.iter()) {
        let entry = buckets
            .entry(*key)
            .or_insert_with(|| (vec![0.0; pred.dist.len()], 0));
        for (acc, &v) in entry.0.iter_mut().zip(&pred.dist) {
            *acc += v;
        }
        entry.1 += 1;
    }
    for (key, pred) in keys.iter().zip(predictions.iter_mut()) {
        let (sum, count) = &buckets[key];
        let inv = 1.0 / *count as f64;
        for (own, &s) in pred.dist.iter_mut().zip(sum) {
            *own = (1.0 - rate) * *own + rate * s * inv;
        }
    }
    Ok(())
}

/// FNV-1a hash of the tuple's quantized pair lengths and normal cosines,
/// read from the feature vector's pair blocks.
fn collision_key(tuple: &TupleSample) -> Result<u64> {
    let n = tuple.indices.len();
    let pairs = n * (n - 1) / 2;
    if tuple.feature.len() < 4 * pairs {
        return Err(Error::InvalidConfig(
            "collision corruption needs featurized tuples".into(),
        ));
    }
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |q: i64| {
        for byte in q.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1_0000_0000_01b3);
        }
    };
    for pair in 0..pairs {
        let off = &tuple.feature[3 * pair..3 * pair + 3];
        let len = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
        feed((len / COLLISION_LENGTH_STEP).floor() as i64);
    }
    for pair in 0..pairs {
        feed((tuple.feature[3 * pairs + pair] / COLLISION_COSINE_STEP).floor() as i64);
    }
    Ok(hash)
}
