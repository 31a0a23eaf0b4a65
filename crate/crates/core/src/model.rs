//! The regression model: a small fully-connected network with a scalar
//! output, trained by mini-batch SGD on quadratic loss.
//!
//! Parameters live in a flat `ParamVector` with a fixed layout: layers in
//! order, each layer's weights row-major (one row per output unit) followed
//! by its biases. Dimension indices therefore keep a stable meaning for the
//! whole run, which the attacks and aggregators rely on.

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape. Empty `hidden_dims` gives a plain linear model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl ModelArch {
    pub fn linear(input_dim: usize) -> Self {
        ModelArch {
            input_dim,
            hidden_dims: Vec::new(),
            activation: Activation::Tanh,
        }
    }

    /// Layer sizes from input to the scalar output.
    fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        dims
    }

    /// Total flattened parameter count.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter("input_dim must be >= 1".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter("hidden layer width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Local SGD hyperparameters, seeded per (BS, round).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidParameter("local_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic initialization: weights uniform in +-1/sqrt(fan_in),
/// biases zero.
pub fn init_model(arch: &ModelArch, seed: u64) -> ParamVector {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let dims = arch.layer_dims();
    let mut values = Vec::with_capacity(arch.param_count());
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.gen_range(-bound..bound));
        }
        values.extend(std::iter::repeat(0.0).take(fan_out));
    }
    ParamVector::new(values).expect("init weights are finite")
}

/// Forward pass; returns the scalar prediction.
pub fn predict(arch: &ModelArch, params: &ParamVector, input: &[f64]) -> Result<f64> {
    if input.len() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            left: input.len(),
            right: arch.input_dim,
        });
    }
    if params.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            left: params.len(),
            right: arch.param_count(),
        });
    }
    let (output, _) = forward(arch, params.values(), input);
    Ok(output)
}

/// `(pred - target)^2`.
pub fn quadratic_loss(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

/// Forward pass keeping pre-activations and activations for backprop.
/// `activations[0]` is the input; `pre_acts[l]` belongs to layer `l`.
fn forward_trace(
    arch: &ModelArch,
    params: &[f64],
    input: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    activations.push(input.to_vec());
    let mut offset = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &params[offset..offset + fan_in * fan_out];
        let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let prev = &activations[l];
        let mut pre = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            let z: f64 = row.iter().zip(prev).map(|(&w, &a)| w * a).sum::<f64>() + biases[o];
            pre.push(z);
        }
        let last = l == n_layers - 1;
        let act: Vec<f64> = if last {
            pre.clone() // linear output unit
        } else {
            pre.iter().map(|&z| arch.activation.apply(z)).collect()
        };
        pre_acts.push(pre);
        activations.push(act);
    }
    (activations, pre_acts)
}

fn forward(arch: &ModelArch, params: &[f64], input: &[f64]) -> (f64, ()) {
    let (acts, _) = forward_trace(arch, params, input);
    (acts.last().unwrap()[0], ())
}

/// Gradient of the mean quadratic loss over a batch, by backpropagation.
/// Exposed for the finite-difference oracle tests.
pub fn loss_gradient(
    arch: &ModelArch,
    params: &ParamVector,
    batch: &[(&[f64], f64)],
) -> Result<Vec<f64>> {
    let p = params.values();
    let dims = arch.layer_dims();
    let n_layers = dims.len() - 1;
    let mut grad = vec![0.0; p.len()];
    let scale = 1.0 / batch.len() as f64;

    for &(input, target) in batch {
        let (acts, pre) = forward_trace(arch, p, input);
        let pred = acts[n_layers][0];
        // d(mean loss)/d(pred) contribution of this sample
        let mut delta = vec![2.0 * (pred - target) * scale];
        // walk layers backwards accumulating gradients
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let off = offsets[l];
            let weights = &p[off..off + fan_in * fan_out];
            // gradient wrt weights and biases of layer l
            for o in 0..fan_out {
                for i in 0..fan_in {
                    grad[off + o * fan_in + i] += delta[o] * acts[l][i];
                }
                grad[off + fan_in * fan_out + o] += delta[o];
            }
            if l > 0 {
                let mut prev_delta = vec![0.0; fan_in];
                for i in 0..fan_in {
                    let mut sum = 0.0;
                    for o in 0..fan_out {
                        sum += delta[o] * weights[o * fan_in + i];
                    }
                    prev_delta[i] = sum * arch.activation.derivative(pre[l - 1][i]);
                }
                delta = prev_delta;
            }
        }
    }
    Ok(grad)
}

/// Mini-batch SGD on the train split. Shuffling is seeded; the result is a
/// pure function of `(params, data, cfg)`. The input vector is untouched.
pub fn local_train(
    arch: &ModelArch,
    params: &ParamVector,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("train split of bs {}", data.bs_id),
        });
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);

    let mut theta = params.values().to_vec();
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    for epoch in 0..cfg.local_epochs {
        shuffle(&mut order, &mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let current = ParamVector::new(theta.clone()).map_err(|_| Error::Divergence {
                epoch,
                batch: batch_idx,
            })?;
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (data.pairs[i].input.as_slice(), data.pairs[i].target))
                .collect();
            let grad = loss_gradient(arch, &current, &batch)?;
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= cfg.learning_rate * g;
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
        }
    }
    ParamVector::new(theta)
}

/// Fisher-Yates with our own rng so the permutation is stable across rand
/// versions.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Test-set MAE and MSE in normalized units, uncapped.
pub fn evaluate(arch: &ModelArch, params: &ParamVector, data: &WindowedDataset) -> Result<(f64, f64)> {
    if data.pairs.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("test split of bs {}", data.bs_id),
        });
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for pair in &data.pairs {
        let pred = predict(arch, params, &pair.input)?;
        let err = pred - pair.target;
        abs_sum += err.abs();
        sq_sum += err * err;
    }
    let n = data.pairs.len() as f64;
    Ok((abs_sum / n, sq_sum / n))
}
