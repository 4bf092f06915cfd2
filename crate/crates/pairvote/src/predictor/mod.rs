//! Canonical-coordinate predictors.
//!
//! A predictor maps each point tuple to per-axis multinomial distributions
//! over discretized canonical coordinates of the tuple's first two points,
//! plus a per-axis scale estimate. Two implementations share the interface:
//! a configurable-corruption oracle (test plumbing that reads ground truth)
//! and a trainable MLP.

mod checkpoint;
mod mlp;
mod oracle;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mlp::{MlpDims, MlpPredictor};
pub use oracle::{OraclePredictor, OraclePredictorConfig};
pub use train::{train, train_resumable, TrainReport, TrainState};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::tuples::TupleSample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-normalization slack for emitted distributions.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-6;

/// Per-axis multinomial over binned canonical coordinates for two points,
/// plus a scale estimate.
///
/// `dist` is laid out `[point][axis][bin]` flattened: 6 rows of `bins`.
#[derive(Clone, Debug)]
pub struct CanonicalPrediction {
    pub bins: usize,
    pub dist: Vec<f64>,
    pub scale: Vec3,
}

/// How distributions are turned into point coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    /// Per-axis expected bin center; deterministic.
    Expectation,
    /// Per-axis categorical draw with the given seed.
    Sample(u64),
}

/// Center of bin `b` of `bins` over `[-1, 1]`.
pub fn bin_center(b: usize, bins: usize) -> f64 {
    -1.0 + (2 * b + 1) as f64 / bins as f64
}

/// Bin containing coordinate `x`, clamped into range.
pub fn bin_of(x: f64, bins: usize) -> usize {
    let t = (x + 1.0) / 2.0 * bins as f64;
    (t.max(0.0) as usize).min(bins - 1)
}

impl CanonicalPrediction {
    /// One axis row of the distribution; `point < 2`, `axis < 3`.
    pub fn axis_row(&self, point: usize, axis: usize) -> &[f64] {
        let start = (point * 3 + axis) * self.bins;
        &self.dist[start..start + self.bins]
    }

    /// Checks nonnegativity and row normalization.
    pub fn validate(&self) -> Result<()> {
        if self.dist.len() != 6 * self.bins {
            return Err(Error::DimensionMismatch {
                expected: 6 * self.bins,
                got: self.dist.len(),
            });
        }
        for row in 0..6 {
            let slice = &self.dist[row * self.bins..(row + 1) * self.bins];
            if slice.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::NonFinite("negative or non-finite bin mass".into()));
            }
            let sum: f64 = slice.iter().sum();
            if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
                return Err(Error::NonFinite(format!(
                    "distribution row {row} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Decodes the two canonical points.
    pub fn decode(&self, mode: DecodeMode) -> [Vec3; 2] {
        match mode {
            DecodeMode::Expectation => {
                let mut out = [Vec3::zeros(); 2];
                for point in 0..2 {
                    for axis in 0..3 {
                        let row = self.axis_row(point, axis);
                        let mut e = 0.0;
                        for (b, &p) in row.iter().enumerate() {
                            e += p * bin_center(b, self.bins);
                        }
                        out[point][axis] = e;
                    }
                }
                out
            }
            DecodeMode::Sample(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = [Vec3::zeros(); 2];
                for point in 0..2 {
                    for axis in 0..3 {
                        let row = self.axis_row(point, axis);
                        let total: f64 = row.iter().sum();
                        let mut u = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
                        let mut chosen = self.bins - 1;
                        for (b, &p) in row.iter().enumerate() {
                            if u < p {
                                chosen = b;
                                break;
                            }
                            u -= p;
                        }
                        out[point][axis] = bin_center(chosen, self.bins);
                    }
                }
                out
            }
        }
    }
}

/// A canonical-coordinate predictor: corruption oracle or trained network.
#[derive(Clone, Debug)]
pub enum Predictor {
    Oracle(OraclePredictor),
    Mlp(MlpPredictor),
}

impl Predictor {
    /// Predicts distributions for a batch of tuples.
    ///
    /// `clutter` carries per-point scene noise flags; only the oracle's
    /// corruption model consumes them (a flagged voting point produces a
    /// garbage row, mimicking a network quizzed on background structure).
    pub fn predict(
        &self,
        tuples: &[TupleSample],
        clutter: Option<&[bool]>,
    ) -> Result<Vec<CanonicalPrediction>> {
        match self {
            Predictor::Oracle(o) => o.predict(tuples, clutter),
            Predictor::Mlp(m) => m.predict(tuples),
        }
    }

    /// Bin count of emitted distributions.
    pub fn bins(&self) -> usize {
        match self {
            Predictor::Oracle(o) => o.config().bins,
            Predictor::Mlp(m) => m.dims().bins,
        }
    }
}

/// Training hyperparameters for the MLP predictor.
#[derive(Clone, Copy, Debug)]
pub struct PredictorConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub bins: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossMode,
}

/// Coordinate-loss formulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Mean squared error between the expectation decode and ground truth.
    Mse,
    /// Cross-entropy against the ground-truth bin.
    CrossEntropy,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden_width: 128,
            hidden_layers: 4,
            bins: 32,
            learning_rate: 1e-3,
            epochs: 100,
            lr_halving_period: 25,
            batch_size: 64,
            seed: 0,
            loss: LossMode::Mse,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0
            || self.hidden_layers == 0
            || self.bins == 0
            || self.epochs == 0
            || self.lr_halving_period == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidConfig(
                "predictor counts must all be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Picks the model with the lowest post-refinement coordinate loss;
/// ties resolve to the lowest index.
pub fn ensemble_select(final_coord_losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &loss) in final_coord_losses.iter().enumerate().skip(1) {
        if loss < final_coord_losses[best] {
            best = i;
        }
    }
    best
}
