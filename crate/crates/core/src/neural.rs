//! Nonlinear time-lagged autoencoder: an MLP with leaky ReLU and dropout on
//! the hidden layers, trained by Adam to predict the lag-shifted frame.
//!
//! Layer layout for encoder widths `[h1, h2]` and latent size `d`:
//! `N -> h1 -> h2 -> d -> h2 -> h1 -> N`. Hidden layers apply
//! affine -> leaky ReLU -> dropout; the latent and output layers are plain
//! affine maps. Backpropagation is written out by hand and checked against
//! finite differences in the tests.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::stats::{contiguous_block_split, raw_lagged_blocks, select_rows, TimeSeries};

/// Network architecture description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Always the reverse of `encoder_hidden`.
    pub decoder_hidden: Vec<usize>,
    pub leaky_alpha: f64,
    pub dropout_p: f64,
}

impl MlpSpec {
    /// Build a spec with a mirrored decoder and the default leaky slope
    /// (0.001) and dropout probability (0.5).
    pub fn new(input_dim: usize, encoder_hidden: Vec<usize>, latent_dim: usize) -> Result<Self> {
        let decoder_hidden: Vec<usize> = encoder_hidden.iter().rev().copied().collect();
        let spec = Self {
            input_dim,
            encoder_hidden,
            latent_dim,
            decoder_hidden,
            leaky_alpha: 0.001,
            dropout_p: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_leaky_alpha(mut self, alpha: f64) -> Self {
        self.leaky_alpha = alpha;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return Err(Error::InvalidParameter(format!(
                "latent dimension must satisfy 1 <= d < N, got d={} N={}",
                self.latent_dim, self.input_dim
            )));
        }
        if self.encoder_hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("hidden widths must be >= 1".into()));
        }
        let mirrored: Vec<usize> = self.encoder_hidden.iter().rev().copied().collect();
        if self.decoder_hidden != mirrored {
            return Err(Error::InvalidParameter(
                "decoder hidden widths must mirror the encoder".into(),
            ));
        }
        if !(self.dropout_p >= 0.0 && self.dropout_p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !self.leaky_alpha.is_finite() {
            return Err(Error::InvalidParameter("leaky alpha must be finite".into()));
        }
        Ok(())
    }

    /// Full chain of layer widths, input through output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.encoder_hidden.len() * 2 + 3);
        dims.push(self.input_dim);
        dims.extend(&self.encoder_hidden);
        dims.push(self.latent_dim);
        dims.extend(&self.decoder_hidden);
        dims.push(self.input_dim);
        dims
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.encoder_hidden.len() + self.decoder_hidden.len() + 2
    }

    /// Index of the layer whose output is the latent code.
    fn latent_layer(&self) -> usize {
        self.encoder_hidden.len()
    }

    /// Whether layer `idx` is a hidden layer (leaky ReLU + dropout).
    fn is_hidden(&self, idx: usize) -> bool {
        let latent = self.latent_layer();
        let out = self.n_layers() - 1;
        idx != latent && idx != out
    }
}

/// One affine layer: `z = x W^T + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "crate::io::serde_mat")]
    pub weight: Array2<f64>,
    #[serde(with = "crate::io::serde_vec")]
    pub bias: Array1<f64>,
}

/// Per-dimension affine standardization fitted on training pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "crate::io::serde_vec")]
    pub mean: Array1<f64>,
    #[serde(with = "crate::io::serde_vec")]
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        let mean = data.mean_axis(Axis(0)).unwrap();
        let n = data.nrows() as f64;
        let mut scale = Array1::<f64>::zeros(data.ncols());
        for j in 0..data.ncols() {
            let m = mean[j];
            let var = data.column(j).iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            scale[j] = if sd > f64::EPSILON { sd } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn invert(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = row[j] * self.scale[j] + self.mean[j];
            }
        }
        out
    }
}

/// How a forward pass treats dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Optimizer and training-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping patience on validation loss, in epochs.
    pub patience: usize,
    pub train_fraction: f64,
    /// Number of contiguous pair blocks used for the train/validation split.
    pub split_blocks: usize,
    /// Split/shuffle seed; derived from the training seed when absent.
    pub shuffle_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            train_fraction: 2.0 / 3.0,
            split_blocks: 12,
            shuffle_seed: None,
        }
    }
}

/// Per-epoch loss record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A trained time-lagged autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaeModel {
    pub spec: MlpSpec,
    pub params: Vec<Layer>,
    pub input_standardizer: Standardizer,
    pub output_standardizer: Standardizer,
    pub lag: usize,
    pub history: Vec<EpochRecord>,
}

/// Glorot-uniform weights (`b = sqrt(6 / (fan_in + fan_out))`), zero biases;
/// bit-reproducible for a given seed.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Vec<Layer> {
    let dims = spec.layer_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for l in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight =
            Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    layers
}

struct Cache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    /// Dropout masks (already inverse-scaled) for hidden layers in train mode.
    masks: Vec<Option<Array2<f64>>>,
}

fn leaky(u: f64, alpha: f64) -> f64 {
    if u >= 0.0 {
        u
    } else {
        alpha * u
    }
}

fn leaky_grad(u: f64, alpha: f64) -> f64 {
    // Subgradient at exactly zero is taken as 1.
    if u >= 0.0 {
        1.0
    } else {
        alpha
    }
}

fn forward_cached<R: Rng>(
    spec: &MlpSpec,
    params: &[Layer],
    batch: ArrayView2<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> (Array2<f64>, Cache) {
    let n_layers = params.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers);
    let mut a = batch.to_owned();
    for (l, layer) in params.iter().enumerate() {
        inputs.push(a.clone());
        let z = a.dot(&layer.weight.t()) + &layer.bias;
        pre.push(z.clone());
        if spec.is_hidden(l) {
            let mut h = z.mapv(|u| leaky(u, spec.leaky_alpha));
            let mask = if mode == Mode::Train && spec.dropout_p > 0.0 {
                let keep = 1.0 - spec.dropout_p;
                let m = Array2::from_shape_fn(h.dim(), |_| {
                    if rng.gen::<f64>() < spec.dropout_p {
                        0.0
                    } else {
                        1.0 / keep
                    }
                });
                h = &h * &m;
                Some(m)
            } else {
                None
            };
            masks.push(mask);
            a = h;
        } else {
            masks.push(None);
            a = z;
        }
    }
    (
        a,
        Cache {
            inputs,
            pre,
            masks,
        },
    )
}

/// Forward pass in standardized coordinates.
///
/// Train mode samples fresh dropout masks from `rng`; eval mode is
/// deterministic. Non-finite outputs surface as a divergence error.
pub fn forward<R: Rng>(
    model: &TaeModel,
    batch: ArrayView2<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_width(batch, model.spec.input_dim)?;
    let (out, _) = forward_cached(&model.spec, &model.params, batch, mode, rng);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    Ok(out)
}

/// Mean-squared prediction loss and its gradient by backpropagation.
///
/// `x` and `y` must already be standardized pairs; the loss is
/// `(1/B) sum_b ||net(x_b) - y_b||^2`.
pub fn loss_and_grad<R: Rng>(
    spec: &MlpSpec,
    params: &[Layer],
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Vec<Layer>)> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "paired batches disagree: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    check_width(x, spec.input_dim)?;
    let b = x.nrows() as f64;
    let (out, cache) = forward_cached(spec, params, x, mode, rng);
    let diff = &out - &y;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }

    let mut grads: Vec<Layer> = params
        .iter()
        .map(|l| Layer {
            weight: Array2::zeros(l.weight.dim()),
            bias: Array1::zeros(l.bias.len()),
        })
        .collect();

    // d loss / d output
    let mut g = diff.mapv(|v| 2.0 * v / b);
    for l in (0..params.len()).rev() {
        if spec.is_hidden(l) {
            if let Some(mask) = &cache.masks[l] {
                g = &g * mask;
            }
            let slope = cache.pre[l].mapv(|u| leaky_grad(u, spec.leaky_alpha));
            g = &g * &slope;
        }
        grads[l].weight = g.t().dot(&cache.inputs[l]);
        grads[l].bias = g.sum_axis(Axis(0));
        if l > 0 {
            g = g.dot(&params[l].weight);
        }
    }
    Ok((loss, grads))
}

/// Smallest hidden pre-activation magnitude over a batch.
///
/// Finite-difference gradient probes are only meaningful where the network
/// is differentiable; keep this margin well above the probe step to stay
/// away from the leaky-ReLU kink.
pub fn hidden_preactivation_margin(
    spec: &MlpSpec,
    params: &[Layer],
    batch: ArrayView2<'_, f64>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) = forward_cached(spec, params, batch, Mode::Eval, &mut rng);
    let mut margin = f64::INFINITY;
    for l in 0..params.len() {
        if spec.is_hidden(l) {
            for &z in cache.pre[l].iter() {
                margin = margin.min(z.abs());
            }
        }
    }
    margin
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    pub fn new(params: &[Layer]) -> Self {
        let zeros = |l: &Layer| Layer {
            weight: Array2::zeros(l.weight.dim()),
            bias: Array1::zeros(l.bias.len()),
        };
        Self {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step index.
pub fn adam_step(
    params: &mut [Layer],
    grads: &[Layer],
    state: &mut AdamState,
    t: usize,
    cfg: &TrainConfig,
) {
    let t = t.max(1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    };
    for l in 0..params.len() {
        ndarray::Zip::from(&mut params[l].weight)
            .and(&grads[l].weight)
            .and(&mut state.m[l].weight)
            .and(&mut state.v[l].weight)
            .for_each(|p, g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut params[l].bias)
            .and(&grads[l].bias)
            .and(&mut state.m[l].bias)
            .and(&mut state.v[l].bias)
            .for_each(|p, g, m, v| update(p, g, m, v));
    }
}

/// Train a TAE on one or more trajectories.
///
/// Pairs are pooled within trajectories, split into contiguous shuffled
/// blocks (train fraction from `cfg`), standardized with training-set
/// statistics, and optimized by minibatch Adam with early stopping on the
/// validation loss. The returned model carries the best-validation
/// parameters and the full loss history.
pub fn train_tae(
    series: &[TimeSeries],
    lag: usize,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TaeModel> {
    spec.validate()?;
    validate_train_config(cfg)?;
    if series.is_empty() {
        return Err(Error::ShapeMismatch("no trajectories given".into()));
    }
    if series[0].dim() != spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "spec expects {} input dimensions, data has {}",
            spec.input_dim,
            series[0].dim()
        )));
    }

    let (x_raw, y_raw) = raw_lagged_blocks(series, lag)?;
    let n_pairs = x_raw.nrows();
    let shuffle_seed = cfg.shuffle_seed.unwrap_or_else(|| derive_seed(seed, 0x51));
    let (train_idx, val_idx) =
        contiguous_block_split(n_pairs, cfg.train_fraction, cfg.split_blocks, shuffle_seed)?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{n_pairs} pairs are too few for a train/validation split"
        )));
    }

    let x_train = select_rows(x_raw.view(), &train_idx);
    let y_train = select_rows(y_raw.view(), &train_idx);
    let x_val = select_rows(x_raw.view(), &val_idx);
    let y_val = select_rows(y_raw.view(), &val_idx);

    let input_standardizer = Standardizer::fit(x_train.view());
    let output_standardizer = Standardizer::fit(y_train.view());
    let xs_train = input_standardizer.apply(x_train.view());
    let ys_train = output_standardizer.apply(y_train.view());
    let xs_val = input_standardizer.apply(x_val.view());
    let ys_val = output_standardizer.apply(y_val.view());

    let mut params = init_params(spec, seed);
    let mut state = AdamState::new(&params);
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));

    let n_train = xs_train.nrows();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale_epochs = 0usize;
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut epoch_rng);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = select_rows(xs_train.view(), chunk);
            let by = select_rows(ys_train.view(), chunk);
            let (loss, grads) = loss_and_grad(
                spec,
                &params,
                bx.view(),
                by.view(),
                Mode::Train,
                &mut dropout_rng,
            )
            .map_err(|e| match e {
                Error::TrainingDiverged { .. } => Error::TrainingDiverged { epoch },
                other => other,
            })?;
            step += 1;
            adam_step(&mut params, &grads, &mut state, step, cfg);
            running += loss * chunk.len() as f64;
        }
        let train_loss = running / n_train as f64;
        let val_loss = eval_loss(spec, &params, xs_val.view(), ys_val.view())
            .map_err(|e| match e {
                Error::TrainingDiverged { .. } => Error::TrainingDiverged { epoch },
                other => other,
            })?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    Ok(TaeModel {
        spec: spec.clone(),
        params: best_params,
        input_standardizer,
        output_standardizer,
        lag,
        history,
    })
}

fn eval_loss(
    spec: &MlpSpec,
    params: &[Layer],
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, _) = forward_cached(spec, params, x, Mode::Eval, &mut rng);
    let loss = (&out - &y).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    Ok(loss)
}

fn validate_train_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0 || cfg.split_blocks == 0 {
        return Err(Error::InvalidParameter(
            "batch_size, max_epochs, patience, and split_blocks must be >= 1".into(),
        ));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    for (name, v) in [
        ("learning_rate", cfg.learning_rate),
        ("beta1", cfg.beta1),
        ("beta2", cfg.beta2),
        ("epsilon", cfg.epsilon),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

impl TaeModel {
    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Standardize and run the encoder half in eval mode.
    pub fn encode(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_width(data, self.spec.input_dim)?;
        let mut a = self.input_standardizer.apply(data);
        for l in 0..=self.spec.latent_layer() {
            let layer = &self.params[l];
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            a = if self.spec.is_hidden(l) {
                z.mapv(|u| leaky(u, self.spec.leaky_alpha))
            } else {
                z
            };
        }
        Ok(a)
    }

    /// Full eval-mode forward pass, mapped back to input units.
    pub fn predict(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_width(data, self.spec.input_dim)?;
        let xs = self.input_standardizer.apply(data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = forward_cached(&self.spec, &self.params, xs.view(), Mode::Eval, &mut rng);
        Ok(self.output_standardizer.invert(out.view()))
    }
}

fn check_width(data: ArrayView2<'_, f64>, want: usize) -> Result<()> {
    if data.ncols() != want {
        return Err(Error::ShapeMismatch(format!(
            "expected {want} columns, got {}",
            data.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::principal_angles;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn tiny_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_spec(seed: u64) -> MlpSpec {
        let mut rng = tiny_rng(seed);
        let n = rng.gen_range(2..=5);
        let depth = rng.gen_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=7)).collect();
        let d = rng.gen_range(1..n.max(2)).min(n - 1).max(1);
        MlpSpec::new(n, hidden, d)
            .unwrap()
            .with_dropout(0.0)
    }

    fn numeric_grad(
        spec: &MlpSpec,
        params: &[Layer],
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        layer: usize,
        which: Which,
        idx: (usize, usize),
    ) -> f64 {
        let h = 1e-5;
        let mut plus = params.to_vec();
        let mut minus = params.to_vec();
        match which {
            Which::Weight => {
                plus[layer].weight[[idx.0, idx.1]] += h;
                minus[layer].weight[[idx.0, idx.1]] -= h;
            }
            Which::Bias => {
                plus[layer].bias[idx.0] += h;
                minus[layer].bias[idx.0] -= h;
            }
        }
        let mut rng = tiny_rng(0);
        let (lp, _) = loss_and_grad(spec, &plus, x, y, Mode::Eval, &mut rng).unwrap();
        let (lm, _) = loss_and_grad(spec, &minus, x, y, Mode::Eval, &mut rng).unwrap();
        (lp - lm) / (2.0 * h)
    }

    enum Which {
        Weight,
        Bias,
    }

    #[test]
    fn spec_rejects_bad_shapes() {
        assert!(MlpSpec::new(2, vec![0], 1).is_err());
        assert!(MlpSpec::new(2, vec![4], 2).is_err());
        assert!(MlpSpec::new(3, vec![5], 0).is_err());
        let mut spec = MlpSpec::new(3, vec![4, 5], 1).unwrap();
        assert_eq!(spec.decoder_hidden, vec![5, 4]);
        spec.decoder_hidden = vec![4, 5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::new(4, vec![6], 2).unwrap();
        let a = init_params(&spec, 7);
        let b = init_params(&spec, 7);
        for (la, lb) in a.iter().zip(b.iter()) {
            assert_eq!(la.weight, lb.weight);
            assert!(la.bias.iter().all(|&v| v == 0.0));
        }
        let c = init_params(&spec, 8);
        assert_ne!(a[0].weight, c[0].weight);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let spec = MlpSpec {
            input_dim: 30,
            encoder_hidden: vec![50],
            latent_dim: 1,
            decoder_hidden: vec![50],
            leaky_alpha: 0.001,
            dropout_p: 0.5,
        };
        let params = init_params(&spec, 3);
        let bound = (6.0f64 / 80.0).sqrt();
        assert!((bound - 0.27386).abs() < 1e-4);
        let max = params[0]
            .weight
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max <= bound);
        assert!(max > 0.8 * bound, "bound should be nearly attained");
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky(-1.0, 0.001), -0.001);
        assert_eq!(leaky(2.0, 0.001), 2.0);
        assert_eq!(leaky_grad(0.0, 0.001), 1.0);
    }

    #[test]
    fn dropout_zero_makes_train_equal_eval() {
        let spec = MlpSpec::new(3, vec![5], 1).unwrap().with_dropout(0.0);
        let params = init_params(&spec, 1);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let mut rng = tiny_rng(5);
        let (train_out, _) = forward_cached(&spec, &params, x.view(), Mode::Train, &mut rng);
        let (eval_out, _) = forward_cached(&spec, &params, x.view(), Mode::Eval, &mut rng);
        assert_eq!(train_out, eval_out);
    }

    #[test]
    fn zero_weight_network_outputs_bias() {
        let spec = MlpSpec::new(3, vec![4], 1).unwrap().with_dropout(0.0);
        let mut params = init_params(&spec, 2);
        for l in params.iter_mut() {
            l.weight.fill(0.0);
        }
        let out_bias = array![0.3, -0.7, 1.1];
        params.last_mut().unwrap().bias.assign(&out_bias);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        let mut rng = tiny_rng(0);
        let (out, _) = forward_cached(&spec, &params, x.view(), Mode::Eval, &mut rng);
        for row in out.rows() {
            for (a, b) in row.iter().zip(out_bias.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_output_bias_grad() {
        let spec = MlpSpec::new(3, vec![], 1).unwrap().with_dropout(0.0);
        let params = init_params(&spec, 3);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 1) * (j + 2)) as f64 * 0.05);
        let mut rng = tiny_rng(0);
        let (y, _) = forward_cached(&spec, &params, x.view(), Mode::Eval, &mut rng);
        let (loss, grads) =
            loss_and_grad(&spec, &params, x.view(), y.view(), Mode::Eval, &mut rng).unwrap();
        assert!(loss < 1e-24);
        assert!(grads.last().unwrap().bias.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn single_affine_layer_hand_gradient() {
        // One affine map, w = 2, b = 0, x = 1, y = 0:
        // loss = (w x)^2 = 4 and d loss / d w = 2 w x^2 = 4.
        let spec = MlpSpec {
            input_dim: 1,
            encoder_hidden: vec![],
            latent_dim: 1,
            decoder_hidden: vec![],
            leaky_alpha: 0.001,
            dropout_p: 0.0,
        };
        let params = vec![
            Layer {
                weight: array![[2.0]],
                bias: array![0.0],
            },
            Layer {
                weight: array![[1.0]],
                bias: array![0.0],
            },
        ];
        let x = array![[1.0]];
        let y = array![[0.0]];
        let mut rng = tiny_rng(0);
        let (loss, grads) =
            loss_and_grad(&spec, &params, x.view(), y.view(), Mode::Eval, &mut rng).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
        // With the identity second layer, d loss / d w1 = 2 (w1 x) x = 4.
        assert!((grads[0].weight[[0, 0]] - 4.0).abs() < 1e-12);
        assert!((grads[1].weight[[0, 0]] - 8.0).abs() < 1e-12);
    }

    /// Draw a batch whose hidden pre-activations stay clear of the
    /// leaky-ReLU kink, where finite differences are meaningless.
    fn smooth_batch(
        spec: &MlpSpec,
        params: &[Layer],
        b: usize,
        seed: u64,
    ) -> (Array2<f64>, Array2<f64>) {
        for attempt in 0..100u64 {
            let mut rng = tiny_rng(seed.wrapping_add(attempt * 7919));
            let x = Array2::from_shape_fn((b, spec.input_dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let y = Array2::from_shape_fn((b, spec.input_dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            if hidden_preactivation_margin(spec, params, x.view()) > 1e-4 {
                return (x, y);
            }
        }
        panic!("no smooth batch found");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..8u64 {
            let spec = random_spec(seed * 13 + 1);
            let params = init_params(&spec, seed + 100);
            let (x, y) = smooth_batch(&spec, &params, 3, seed);
            let mut rng = tiny_rng(seed);
            let (_, grads) =
                loss_and_grad(&spec, &params, x.view(), y.view(), Mode::Eval, &mut rng).unwrap();
            let mut worst = 0.0f64;
            for l in 0..params.len() {
                for i in 0..params[l].weight.nrows() {
                    for j in 0..params[l].weight.ncols() {
                        let num = numeric_grad(
                            &spec,
                            &params,
                            x.view(),
                            y.view(),
                            l,
                            Which::Weight,
                            (i, j),
                        );
                        let a = grads[l].weight[[i, j]];
                        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-2);
                        worst = worst.max(rel);
                    }
                }
                for i in 0..params[l].bias.len() {
                    let num =
                        numeric_grad(&spec, &params, x.view(), y.view(), l, Which::Bias, (i, 0));
                    let a = grads[l].bias[i];
                    let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-2);
                    worst = worst.max(rel);
                }
            }
            assert!(worst < 1e-5, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn dropout_mean_matches_eval_activation() {
        let spec = MlpSpec::new(3, vec![6], 1).unwrap();
        let params = init_params(&spec, 9);
        let x = array![[0.4, -1.2, 0.9]];
        let mut rng = tiny_rng(0);
        let (_, eval_cache) = forward_cached(&spec, &params, x.view(), Mode::Eval, &mut rng);
        // Post-activation of the first hidden layer in eval mode.
        let h_eval = eval_cache.pre[0].mapv(|u| leaky(u, spec.leaky_alpha));

        let n = 10_000;
        let mut sums = Array1::<f64>::zeros(6);
        let mut rng = tiny_rng(77);
        for _ in 0..n {
            let (_, cache) = forward_cached(&spec, &params, x.view(), Mode::Train, &mut rng);
            let h = cache.pre[0].mapv(|u| leaky(u, spec.leaky_alpha));
            let dropped = &h * cache.masks[0].as_ref().unwrap();
            for j in 0..6 {
                sums[j] += dropped[[0, j]];
            }
        }
        let p = spec.dropout_p;
        for j in 0..6 {
            let mean = sums[j] / n as f64;
            let expect = h_eval[[0, j]];
            let se = expect.abs() * (p / (1.0 - p)).sqrt() / (n as f64).sqrt();
            assert!(
                (mean - expect).abs() <= 3.0 * se + 1e-12,
                "unit {j}: mean {mean} vs {expect} (3se {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let spec = MlpSpec::new(3, vec![4], 1).unwrap();
        let mut params = init_params(&spec, 4);
        let before = params.clone();
        let grads: Vec<Layer> = params
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1, &TrainConfig::default());
        for (a, b) in params.iter().zip(before.iter()) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let cfg = TrainConfig::default();
        let spec = MlpSpec::new(2, vec![], 1).unwrap();
        let mut params = init_params(&spec, 5);
        let before = params.clone();
        let grads: Vec<Layer> = params
            .iter()
            .map(|l| Layer {
                weight: Array2::from_shape_fn(l.weight.dim(), |(i, j)| {
                    if (i + j) % 2 == 0 {
                        0.7
                    } else {
                        -1.3
                    }
                }),
                bias: Array1::from_shape_fn(l.bias.len(), |_| 0.5),
            })
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1, &cfg);
        for l in 0..params.len() {
            for (p, (p0, g)) in params[l]
                .weight
                .iter()
                .zip(before[l].weight.iter().zip(grads[l].weight.iter()))
            {
                let delta = p - p0;
                assert!(
                    (delta + cfg.learning_rate * g.signum()).abs() < cfg.learning_rate * 1e-4,
                    "delta {delta} for gradient {g}"
                );
            }
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = TrainConfig::default();
        let spec = MlpSpec::new(3, vec![4], 1).unwrap();
        let run = || {
            let mut params = init_params(&spec, 6);
            let grads: Vec<Layer> = params
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| v * 0.3 + 0.01),
                    bias: Array1::from_elem(l.bias.len(), -0.2),
                })
                .collect();
            let mut state = AdamState::new(&params);
            adam_step(&mut params, &grads, &mut state, 1, &cfg);
            adam_step(&mut params, &grads, &mut state, 2, &cfg);
            params
        };
        let a = run();
        let b = run();
        for (la, lb) in a.iter().zip(b.iter()) {
            assert_eq!(la.weight, lb.weight);
        }
    }

    fn rank_d_series(t: usize, n: usize, d: usize, seed: u64) -> TimeSeries {
        let mut rng = tiny_rng(seed);
        let latent = Array2::from_shape_fn((t, d), |_| rng.sample::<f64, _>(StandardNormal));
        let mix = Array2::from_shape_fn((d, n), |_| rng.sample::<f64, _>(StandardNormal));
        TimeSeries::new(latent.dot(&mix)).unwrap()
    }

    #[test]
    fn training_reduces_loss_on_noiseless_teacher() {
        // Rank-2 data reconstructed through a d=2 linear bottleneck at lag 0.
        let series = rank_d_series(3000, 4, 2, 11);
        let spec = MlpSpec::new(4, vec![], 2)
            .unwrap()
            .with_dropout(0.0)
            .with_leaky_alpha(1.0);
        let cfg = TrainConfig {
            max_epochs: 60,
            patience: 60,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series], 0, &spec, &cfg, 3).unwrap();
        let first = model.history.first().unwrap().val_loss;
        let last = model
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(
            last < 0.1 * first,
            "validation loss {last} not below 10% of initial {first}"
        );
    }

    #[test]
    fn zero_lag_linear_tae_recovers_pca_subspace() {
        let mut rng = tiny_rng(42);
        // Anisotropic correlated Gaussian data with distinct variances.
        let raw = Array2::from_shape_fn((8000, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let mix = array![[1.5, 0.2, 0.0], [0.0, 0.8, 0.1], [0.2, 0.0, 0.3]];
        let series = TimeSeries::new(raw.dot(&mix)).unwrap();
        let spec = MlpSpec::new(3, vec![], 2)
            .unwrap()
            .with_dropout(0.0)
            .with_leaky_alpha(1.0);
        let cfg = TrainConfig {
            max_epochs: 150,
            patience: 150,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series.clone()], 0, &spec, &cfg, 5).unwrap();

        // PCA of the standardized data, same coordinates the net trains in.
        let xs = model.input_standardizer.apply(series.data());
        let pca = crate::linear::fit_pca_rows(xs.view(), 2).unwrap();
        let encoder = model.params[0].weight.clone();
        let angles = principal_angles(encoder.view(), pca.encoder.view()).unwrap();
        let worst = angles.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 0.05, "principal angle {worst}");
    }

    #[test]
    fn training_is_deterministic() {
        let series = rank_d_series(600, 3, 1, 8);
        let spec = MlpSpec::new(3, vec![5], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let a = train_tae(&[series.clone()], 1, &spec, &cfg, 21).unwrap();
        let b = train_tae(&[series], 1, &spec, &cfg, 21).unwrap();
        for (la, lb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(la.weight, lb.weight);
            assert_eq!(la.bias, lb.bias);
        }
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.val_loss, rb.val_loss);
        }
    }

    #[test]
    fn one_epoch_training_has_one_history_entry() {
        let series = rank_d_series(500, 3, 1, 2);
        let spec = MlpSpec::new(3, vec![4], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series], 1, &spec, &cfg, 1).unwrap();
        assert_eq!(model.history.len(), 1);
    }

    #[test]
    fn encode_and_predict_shapes_and_determinism() {
        let series = rank_d_series(800, 4, 2, 3);
        let spec = MlpSpec::new(4, vec![6], 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series.clone()], 1, &spec, &cfg, 9).unwrap();
        let enc = model.encode(series.data()).unwrap();
        assert_eq!(enc.dim(), (800, 2));
        let enc2 = model.encode(series.data()).unwrap();
        assert_eq!(enc, enc2);
        let pred = model.predict(series.data()).unwrap();
        assert_eq!(pred.dim(), (800, 4));
        let pred2 = model.predict(series.data()).unwrap();
        assert_eq!(pred, pred2);
    }

    #[test]
    fn untrained_zero_network_predicts_unstandardized_bias() {
        let series = rank_d_series(300, 3, 1, 4);
        let spec = MlpSpec::new(3, vec![], 1).unwrap().with_dropout(0.0);
        let mut params = init_params(&spec, 0);
        for l in params.iter_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let model = TaeModel {
            spec,
            params,
            input_standardizer: Standardizer::fit(series.data()),
            output_standardizer: Standardizer::fit(series.data()),
            lag: 1,
            history: vec![],
        };
        let pred = model.predict(series.data()).unwrap();
        for row in pred.rows() {
            for (v, m) in row.iter().zip(model.output_standardizer.mean.iter()) {
                assert!((v - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_mode_composition_is_affine_rank_d() {
        let spec = MlpSpec::new(4, vec![6], 2)
            .unwrap()
            .with_dropout(0.0)
            .with_leaky_alpha(1.0);
        let series = rank_d_series(500, 4, 3, 6);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series], 1, &spec, &cfg, 13).unwrap();
        // Probe the affine map: columns of L are predict(e_i) - predict(0).
        let zero = Array2::<f64>::zeros((1, 4));
        let base = model.predict(zero.view()).unwrap();
        let mut l = Array2::<f64>::zeros((4, 4));
        for i in 0..4 {
            let mut e = Array2::<f64>::zeros((1, 4));
            e[[0, i]] = 1.0;
            let out = model.predict(e.view()).unwrap();
            for j in 0..4 {
                l[[j, i]] = out[[0, j]] - base[[0, j]];
            }
        }
        // Affinity: predict(2 e_0) - base = 2 (predict(e_0) - base).
        let mut e2 = Array2::<f64>::zeros((1, 4));
        e2[[0, 0]] = 2.0;
        let out2 = model.predict(e2.view()).unwrap();
        for j in 0..4 {
            let lin = 2.0 * l[[j, 0]];
            assert!((out2[[0, j]] - base[[0, j]] - lin).abs() < 1e-9);
        }
        let svd = crate::numerics::svd(l.view()).unwrap();
        assert!(svd.singular_values[2] < 1e-9 * svd.singular_values[0].max(1.0));
    }

    #[test]
    fn divergent_learning_rate_reports_epoch() {
        let series = rank_d_series(400, 3, 1, 14);
        let spec = MlpSpec::new(3, vec![8], 1).unwrap().with_dropout(0.0);
        let cfg = TrainConfig {
            learning_rate: 1e120,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        match train_tae(&[series], 1, &spec, &cfg, 2) {
            Err(Error::TrainingDiverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tae_model_json_round_trip() {
        let series = rank_d_series(400, 3, 1, 15);
        let spec = MlpSpec::new(3, vec![4], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let model = train_tae(&[series.clone()], 2, &spec, &cfg, 3).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: TaeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.lag, 2);
        let a = model.encode(series.data()).unwrap();
        let b = back.encode(series.data()).unwrap();
        assert_eq!(a, b);
    }
}
