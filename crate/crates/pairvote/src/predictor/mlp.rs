//! Trainable residual MLP emitting binned canonical distributions.
//!
//! Plain `f64` matrices in one flat parameter vector: an input projection,
//! `layers` residual hidden layers (`h <- relu(W h + b) + h`), a softmax
//! coordinate head of six bin rows, and a linear scale head. The flat
//! layout keeps Adam and checkpointing trivial.

use super::CanonicalPrediction;
use crate::error::{Error, Result};
use crate::tuples::TupleSample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Samples per parallel work unit in batch prediction.
const PREDICT_CHUNK: usize = 64;

/// Network shape; fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpDims {
    pub input_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub bins: usize,
}

impl MlpDims {
    pub fn coord_outputs(&self) -> usize {
        6 * self.bins
    }

    /// Total parameter count across all blocks.
    pub fn param_len(&self) -> usize {
        let w = self.width;
        (w * self.input_dim + w)
            + self.layers * (w * w + w)
            + (self.coord_outputs() * w + self.coord_outputs())
            + (3 * w + 3)
    }
}

/// Offsets of each weight/bias block inside the flat parameter vector.
#[derive(Clone, Debug)]
struct Layout {
    w_in: usize,
    b_in: usize,
    hidden: Vec<(usize, usize)>,
    w_coord: usize,
    b_coord: usize,
    w_scale: usize,
    b_scale: usize,
}

fn layout(dims: &MlpDims) -> Layout {
    let w = dims.width;
    let mut at = 0usize;
    let mut take = |len: usize| {
        let start = at;
        at += len;
        start
    };
    let w_in = take(w * dims.input_dim);
    let b_in = take(w);
    let hidden = (0..dims.layers)
        .map(|_| (take(w * w), take(w)))
        .collect();
    let w_coord = take(dims.coord_outputs() * w);
    let b_coord = take(dims.coord_outputs());
    let w_scale = take(3 * w);
    let b_scale = take(3);
    debug_assert_eq!(at, dims.param_len());
    Layout {
        w_in,
        b_in,
        hidden,
        w_coord,
        b_coord,
        w_scale,
        b_scale,
    }
}

/// `y = W x + b` with `W` row-major `[rows][cols]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// Accumulates `dy x^T` into the weight block and `dy` into the bias block,
/// and adds `W^T dy` into `dx`.
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    dx: &mut [f64],
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        gb[r] += g;
        let row = &w[r * cols..(r + 1) * cols];
        let grow = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] += g * x[c];
            dx[c] += row[c] * g;
        }
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
pub(crate) struct ForwardCache {
    pub x: Vec<f64>,
    /// Pre-activations: input projection first, then each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-layer states: `h[0]` after the input relu, `h[l+1]` after
    /// residual layer `l`.
    pub h: Vec<Vec<f64>>,
    /// Row-softmaxed logits.
    pub probs: Vec<f64>,
    pub scale: [f64; 3],
}

/// See the module docs.
#[derive(Clone, Debug)]
pub struct MlpPredictor {
    dims: MlpDims,
    params: Vec<f64>,
}

impl MlpPredictor {
    /// Fresh network with seeded He-normal weights and zero biases.
    pub fn new(dims: MlpDims, seed: u64) -> Result<Self> {
        if dims.input_dim == 0 || dims.width == 0 || dims.layers == 0 || dims.bins == 0 {
            return Err(Error::InvalidConfig(
                "network dimensions must all be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = layout(&dims);
        let mut params = vec![0.0; dims.param_len()];
        let mut init = |start: usize, rows: usize, cols: usize, params: &mut Vec<f64>| {
            let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("finite sigma");
            for p in &mut params[start..start + rows * cols] {
                *p = normal.sample(&mut rng);
            }
        };
        init(lay.w_in, dims.width, dims.input_dim, &mut params);
        for &(w, _) in &lay.hidden {
            init(w, dims.width, dims.width, &mut params);
        }
        init(lay.w_coord, dims.coord_outputs(), dims.width, &mut params);
        init(lay.w_scale, 3, dims.width, &mut params);
        Ok(MlpPredictor { dims, params })
    }

    /// Rebuilds a network from checkpointed pieces.
    pub(crate) fn from_parts(dims: MlpDims, params: Vec<f64>) -> Result<Self> {
        if params.len() != dims.param_len() {
            return Err(Error::DimensionMismatch {
                expected: dims.param_len(),
                got: params.len(),
            });
        }
        Ok(MlpPredictor { dims, params })
    }

    pub fn dims(&self) -> &MlpDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Runs the batch through the network, in parallel chunks.
    pub fn predict(&self, tuples: &[TupleSample]) -> Result<Vec<CanonicalPrediction>> {
        for t in tuples {
            if t.feature.len() != self.dims.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dims.input_dim,
                    got: t.feature.len(),
                });
            }
        }
        let preds: Vec<CanonicalPrediction> = tuples
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|t| {
                        let cache = self.forward(&t.feature);
                        CanonicalPrediction {
                            bins: self.dims.bins,
                            dist: cache.probs,
                            scale: crate::geom::Vec3::new(
                                cache.scale[0],
                                cache.scale[1],
                                cache.scale[2],
                            ),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .flatten()
            .collect();
        Ok(preds)
    }

    /// Forward pass retaining activations.
    pub(crate) fn forward(&self, x: &[f64]) -> ForwardCache {
        let dims = &self.dims;
        let lay = layout(dims);
        let p = &self.params;
        let w = dims.width;
        let mut pre = Vec::with_capacity(dims.layers + 1);
        let mut h = Vec::with_capacity(dims.layers + 1);
        let mut a0 = vec![0.0; w];
        affine(
            &p[lay.w_in..lay.w_in + w * dims.input_dim],
            &p[lay.b_in..lay.b_in + w],
            x,
            &mut a0,
        );
        let h0: Vec<f64> = a0.iter().map(|&v| v.max(0.0)).collect();
        pre.push(a0);
        h.push(h0);
        for &(woff, boff) in &lay.hidden {
            let prev = h.last().expect("nonempty");
            let mut a = vec![0.0; w];
            affine(&p[woff..woff + w * w], &p[boff..boff + w], prev, &mut a);
            let next: Vec<f64> = a
                .iter()
                .zip(prev)
                .map(|(&ai, &hi)| ai.max(0.0) + hi)
                .collect();
            pre.push(a);
            h.push(next);
        }
        let top = h.last().expect("nonempty");
        let mut logits = vec![0.0; dims.coord_outputs()];
        affine(
            &p[lay.w_coord..lay.w_coord + dims.coord_outputs() * w],
            &p[lay.b_coord..lay.b_coord + dims.coord_outputs()],
            top,
            &mut logits,
        );
        let mut probs = logits;
        for row in probs.chunks_mut(dims.bins) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let mut scale = [0.0; 3];
        affine(
            &p[lay.w_scale..lay.w_scale + 3 * w],
            &p[lay.b_scale..lay.b_scale + 3],
            top,
            &mut scale,
        );
        ForwardCache {
            x: x.to_vec(),
            pre,
            h,
            probs,
            scale,
        }
    }

    /// Accumulates parameter gradients for one sample given the loss
    /// gradients at the logits and the scale output.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        dscale: &[f64; 3],
        grad: &mut [f64],
    ) {
        let dims = &self.dims;
        let lay = layout(dims);
        let p = &self.params;
        let w = dims.width;
        let top = cache.h.last().expect("nonempty");
        let mut dh = vec![0.0; w];
        {
            let (gw, rest) = grad[lay.w_coord..].split_at_mut(dims.coord_outputs() * w);
            let gb = &mut rest[..dims.coord_outputs()];
            affine_backward(
                &p[lay.w_coord..lay.w_coord + dims.coord_outputs() * w],
                top,
                dlogits,
                gw,
                gb,
                &mut dh,
            );
        }
        {
            let (gw, rest) = grad[lay.w_scale..].split_at_mut(3 * w);
            let gb = &mut rest[..3];
            affine_backward(
                &p[lay.w_scale..lay.w_scale + 3 * w],
                top,
                dscale,
                gw,
                gb,
                &mut dh,
            );
        }
        for l in (0..dims.layers).rev() {
            let (woff, _) = lay.hidden[l];
            let da: Vec<f64> = cache.pre[l + 1]
                .iter()
                .zip(&dh)
                .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
                .collect();
            // Residual skip: the incoming dh flows through unchanged and
            // the branch adds W^T da on top.
            let mut dprev = dh.clone();
            let (gw, rest) = grad[woff..].split_at_mut(w * w);
            let gb = &mut rest[..w];
            affine_backward(&p[woff..woff + w * w], &cache.h[l], &da, gw, gb, &mut dprev);
            dh = dprev;
        }
        let da0: Vec<f64> = cache.pre[0]
            .iter()
            .zip(&dh)
            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
            .collect();
        let mut dx = vec![0.0; dims.input_dim];
        let (gw, rest) = grad[lay.w_in..].split_at_mut(w * dims.input_dim);
        let gb = &mut rest[..w];
        affine_backward(
            &p[lay.w_in..lay.w_in + w * dims.input_dim],
            &cache.x,
            &da0,
            gw,
            gb,
            &mut dx,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_tuple(dim: usize, seed: u64) -> TupleSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TupleSample {
            indices: vec![0, 1],
            feature: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            gt_canonical: None,
            gt_scale: None,
        }
    }

    #[test]
    fn untrained_network_emits_normalized_rows() {
        let dims = MlpDims {
            input_dim: 12,
            width: 16,
            layers: 2,
            bins: 8,
        };
        let net = MlpPredictor::new(dims, 3).unwrap();
        let tuples: Vec<TupleSample> = (0..5).map(|i| toy_tuple(12, i)).collect();
        for pred in net.predict(&tuples).unwrap() {
            pred.validate().unwrap();
        }
    }

    #[test]
    fn wrong_feature_dimension_is_rejected() {
        let dims = MlpDims {
            input_dim: 12,
            width: 16,
            layers: 1,
            bins: 8,
        };
        let net = MlpPredictor::new(dims, 0).unwrap();
        let bad = toy_tuple(9, 0);
        assert!(matches!(
            net.predict(&[bad]),
            Err(Error::DimensionMismatch {
                expected: 12,
                got: 9
            })
        ));
    }

    #[test]
    fn initialization_is_seeded() {
        let dims = MlpDims {
            input_dim: 10,
            width: 8,
            layers: 2,
            bins: 4,
        };
        let a = MlpPredictor::new(dims, 7).unwrap();
        let b = MlpPredictor::new(dims, 7).unwrap();
        let c = MlpPredictor::new(dims, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn predictions_are_deterministic_and_batch_order_stable() {
        let dims = MlpDims {
            input_dim: 6,
            width: 8,
            layers: 1,
            bins: 4,
        };
        let net = MlpPredictor::new(dims, 1).unwrap();
        let tuples: Vec<TupleSample> = (0..200).map(|i| toy_tuple(6, i)).collect();
        let a = net.predict(&tuples).unwrap();
        let b = net.predict(&tuples).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.dist, y.dist);
            assert_eq!(x.scale, y.scale);
        }
        // Single tuple equals its batch entry (chunking must not matter).
        let solo = net.predict(&tuples[137..138]).unwrap();
        assert_eq!(solo[0].dist, a[137].dist);
    }
}
