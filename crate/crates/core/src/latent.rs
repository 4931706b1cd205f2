//! KL-regularized convolutional autoencoders for heightmaps and textures.
//!
//! The encoder emits `2c` channels (mean, then log-variance) at `1/f` of the
//! input resolution; the decoder maps `c` channels back to the input.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{conv, group_norm, init_conv, init_group_norm};
use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor, Var};
use crate::checkpoint::{config_hash, Checkpoint, CheckpointError};
use crate::raster::{denormalize_height, normalize_height, Heightmap, NormalizationSpec, RasterError, Texture};
use crate::seeding::substream;
use crate::training::{run_epochs, Grads, TrainConfig, TrainError, TrainState};

pub const CHECKPOINT_KIND: &str = "vae";

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error("image {h}x{w} not divisible by downsample factor {f}")]
    NotDivisible { h: usize, w: usize, f: usize },
    #[error("invalid VAE config: {0}")]
    Config(String),
    #[error("expected {expected} input channels, got {actual}")]
    Channels { expected: usize, actual: usize },
    #[error("model is a {0} autoencoder")]
    Modality(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("bad checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Modality {
    /// Single-channel elevation normalized with `h_max`.
    Heightmap { h_max: f64 },
    Texture,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Heightmap { .. } => 1,
            Modality::Texture => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub modality: Modality,
    pub latent_channels: usize,
    /// Spatial downsample factor, a power of two.
    pub downsample: usize,
    pub base_channels: usize,
    pub beta: f64,
    pub train: TrainConfig,
}

impl VaeConfig {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            latent_channels: 4,
            downsample: 4,
            base_channels: 16,
            beta: 1e-6,
            train: TrainConfig::default(),
        }
    }

    pub fn levels(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    fn widths(&self) -> Vec<usize> {
        (0..=self.levels())
            .map(|l| if l == 0 { self.base_channels } else { 2 * self.base_channels })
            .collect()
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        if !self.downsample.is_power_of_two() {
            return Err(LatentError::Config(format!("downsample {} is not a power of two", self.downsample)));
        }
        if self.latent_channels == 0 || self.base_channels == 0 {
            return Err(LatentError::Config("channel counts must be positive".into()));
        }
        if self.beta < 0.0 {
            return Err(LatentError::Config("beta must be non-negative".into()));
        }
        if let Modality::Heightmap { h_max } = self.modality {
            NormalizationSpec::new(h_max)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    Heightmap,
    Texture,
}

/// Latent codes, NCHW `[n, c, H/f, W/f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub tensor: Tensor<f32>,
    pub kind: LatentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub params: ParameterSet<f32>,
    /// Multiplier bringing encoder means to unit variance for diffusion.
    pub latent_scale: f32,
}

pub enum EncodeMode<'a> {
    Mean,
    Sample(&'a mut ChaCha8Rng),
}

fn block(tape: &mut Tape<f32>, ps: &ParameterSet<f32>, name: &str, x: Var) -> Result<Var, AutodiffError> {
    let h = group_norm(tape, ps, &format!("{name}.norm"), x)?;
    tape.silu(h)
}

impl VaeModel {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self, LatentError> {
        config.validate()?;
        let ch = config.widths();
        let l = config.levels();
        let inc = config.modality.channels();
        let c = config.latent_channels;
        let mut ps = ParameterSet::new();
        init_conv(&mut ps, "enc.conv_in", inc, ch[0], 3, rng)?;
        for i in 0..l {
            init_group_norm(&mut ps, &format!("enc.down{i}.norm"), ch[i])?;
            init_conv(&mut ps, &format!("enc.down{i}.conv"), ch[i], ch[i + 1], 3, rng)?;
        }
        init_group_norm(&mut ps, "enc.mid.norm", ch[l])?;
        init_conv(&mut ps, "enc.mid.conv", ch[l], ch[l], 3, rng)?;
        init_group_norm(&mut ps, "enc.out.norm", ch[l])?;
        init_conv(&mut ps, "enc.out.conv", ch[l], 2 * c, 3, rng)?;

        init_conv(&mut ps, "dec.conv_in", c, ch[l], 3, rng)?;
        init_group_norm(&mut ps, "dec.mid.norm", ch[l])?;
        init_conv(&mut ps, "dec.mid.conv", ch[l], ch[l], 3, rng)?;
        for i in (0..l).rev() {
            init_group_norm(&mut ps, &format!("dec.up{i}.norm"), ch[i + 1])?;
            init_conv(&mut ps, &format!("dec.up{i}.conv"), ch[i + 1], ch[i], 3, rng)?;
        }
        init_group_norm(&mut ps, "dec.out.norm", ch[0])?;
        init_conv(&mut ps, "dec.out.conv", ch[0], inc, 3, rng)?;
        Ok(Self {
            config,
            params: ps,
            latent_scale: 1.0,
        })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(), LatentError> {
        let f = self.config.downsample;
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        if c != self.config.modality.channels() {
            return Err(LatentError::Channels {
                expected: self.config.modality.channels(),
                actual: c,
            });
        }
        if h % f != 0 || w % f != 0 {
            return Err(LatentError::NotDivisible { h, w, f });
        }
        Ok(())
    }

    /// Encoder on the tape; returns `(mean, log-variance)`.
    pub fn encode_vars(&self, tape: &mut Tape<f32>, ps: &ParameterSet<f32>, x: Var) -> Result<(Var, Var), LatentError> {
        self.check_input(tape.shape(x))?;
        let mut h = conv(tape, ps, "enc.conv_in", x, 1)?;
        for i in 0..self.config.levels() {
            h = block(tape, ps, &format!("enc.down{i}"), h)?;
            h = conv(tape, ps, &format!("enc.down{i}.conv"), h, 2)?;
        }
        let m = block(tape, ps, "enc.mid", h)?;
        let m = conv(tape, ps, "enc.mid.conv", m, 1)?;
        let h = tape.add(h, m)?;
        let h = block(tape, ps, "enc.out", h)?;
        let moments = conv(tape, ps, "enc.out.conv", h, 1)?;
        let c = self.config.latent_channels;
        let parts = tape.split_channels(moments, &[c, c])?;
        Ok((parts[0], parts[1]))
    }

    pub fn decode_vars(&self, tape: &mut Tape<f32>, ps: &ParameterSet<f32>, z: Var) -> Result<Var, LatentError> {
        let mut h = conv(tape, ps, "dec.conv_in", z, 1)?;
        let m = block(tape, ps, "dec.mid", h)?;
        let m = conv(tape, ps, "dec.mid.conv", m, 1)?;
        h = tape.add(h, m)?;
        for i in (0..self.config.levels()).rev() {
            h = block(tape, ps, &format!("dec.up{i}"), h)?;
            h = tape.upsample2(h)?;
            h = conv(tape, ps, &format!("dec.up{i}.conv"), h, 1)?;
        }
        let h = block(tape, ps, "dec.out", h)?;
        Ok(conv(tape, ps, "dec.out.conv", h, 1)?)
    }

    fn latent_kind(&self) -> LatentKind {
        match self.config.modality {
            Modality::Heightmap { .. } => LatentKind::Heightmap,
            Modality::Texture => LatentKind::Texture,
        }
    }

    /// Mean and log-variance tensors for a batch of images in [-1, 1].
    pub fn moments(&self, images: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>), LatentError> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone())?;
        let (mu, lv) = self.encode_vars(&mut tape, &self.params, x)?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    pub fn to_checkpoint(&self, state: Option<&TrainState>) -> Checkpoint {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            state.map_or_else(|| self.params.clone(), |s| s.params.clone()),
            serde_json::json!({
                "config": self.config,
                "latent_scale": self.latent_scale,
                "epochs_done": state.map_or(self.config.train.epochs, |s| s.epochs_done),
                "epoch_losses": state.map(|s| s.epoch_losses.clone()).unwrap_or_default(),
            }),
            config_hash(&self.config),
        );
        ck.optimizer = state.map(|s| s.optimizer.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, LatentError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: VaeConfig = serde_json::from_value(ck.metadata["config"].clone())?;
        let latent_scale = ck.metadata["latent_scale"].as_f64().unwrap_or(1.0) as f32;
        Ok(Self {
            config,
            params: ck.params.clone(),
            latent_scale,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LatentError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<String, LatentError> {
        Ok(self.to_checkpoint(None).save(path)?)
    }

    /// Heightmap as a `[1, 1, H, W]` input under this model's `h_max`.
    pub fn heightmap_input(&self, hm: &Heightmap) -> Result<Tensor<f32>, LatentError> {
        let Modality::Heightmap { h_max } = self.config.modality else {
            return Err(LatentError::Modality("texture"));
        };
        let v = normalize_height(hm, &NormalizationSpec::new(h_max)?)?;
        Ok(Tensor::new(&[1, 1, hm.height(), hm.width()], v)?)
    }

    /// Decoder output item `b` back to meters.
    pub fn heightmap_output(&self, images: &Tensor<f32>, b: usize, resolution_m: f64) -> Result<Heightmap, LatentError> {
        let Modality::Heightmap { h_max } = self.config.modality else {
            return Err(LatentError::Modality("texture"));
        };
        let item = images.batch_item(b)?;
        let (h, w) = (item.shape()[2], item.shape()[3]);
        Ok(denormalize_height(item.data(), w, h, resolution_m, &NormalizationSpec::new(h_max)?)?)
    }
}

pub fn texture_input(t: &Texture) -> Result<Tensor<f32>, LatentError> {
    Ok(Tensor::new(&[1, 3, t.height(), t.width()], t.to_unit_planes())?)
}

pub fn texture_output(images: &Tensor<f32>, b: usize) -> Result<Texture, LatentError> {
    let item = images.batch_item(b)?;
    Ok(Texture::from_unit_planes(item.shape()[3], item.shape()[2], item.data())?)
}

/// Mean over elements of ½(μ² + σ² − 1 − log σ²).
pub fn kl_divergence(mu: &Tensor<f32>, logvar: &Tensor<f32>) -> f64 {
    let s: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum();
    s / mu.numel() as f64
}

fn kl_var(tape: &mut Tape<f32>, mu: Var, lv: Var) -> Result<Var, AutodiffError> {
    let m2 = tape.mean_square(mu)?;
    let e = tape.exp(lv)?;
    let me = tape.mean(e)?;
    let ml = tape.mean(lv)?;
    let a = tape.add(m2, me)?;
    let b = tape.sub(a, ml)?;
    tape.scalar_affine(b, 0.5, -0.5)
}

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    Tensor::new(shape, data).expect("extent product matches")
}

/// `z = μ + σ·ε` (or `μ` in mean mode), unscaled.
pub fn vae_encode(model: &VaeModel, images: &Tensor<f32>, mode: EncodeMode<'_>) -> Result<LatentGrid, LatentError> {
    let (mu, lv) = model.moments(images)?;
    let tensor = match mode {
        EncodeMode::Mean => mu,
        EncodeMode::Sample(rng) => {
            let eps = gaussian(mu.shape(), rng);
            let data = mu
                .data()
                .iter()
                .zip(lv.data())
                .zip(eps.data())
                .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
                .collect();
            Tensor::new(mu.shape(), data)?
        }
    };
    Ok(LatentGrid {
        tensor,
        kind: model.latent_kind(),
    })
}

/// Decoded images clamped to [-1, 1].
pub fn vae_decode(model: &VaeModel, z: &Tensor<f32>) -> Result<Tensor<f32>, LatentError> {
    if z.shape().len() != 4 || z.shape()[1] != model.config.latent_channels {
        return Err(LatentError::Channels {
            expected: model.config.latent_channels,
            actual: z.shape().get(1).copied().unwrap_or(0),
        });
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone())?;
    let out = model.decode_vars(&mut tape, &model.params, zv)?;
    Ok(tape.value(out).map(|v| v.clamp(-1.0, 1.0)))
}

/// Reconstruction MSE + β·KL with gradients for every trainable parameter.
pub fn vae_loss_and_grads(
    model: &VaeModel,
    params: &ParameterSet<f32>,
    batch: &Tensor<f32>,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<(f64, Grads), LatentError> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone())?;
    let (mu, lv) = model.encode_vars(&mut tape, params, x)?;
    let eps = tape.constant(gaussian(tape.shape(mu), rng))?;
    let half = tape.scalar_affine(lv, 0.5, 0.0)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(sigma, eps)?;
    let z = tape.add(mu, noise)?;
    let recon = model.decode_vars(&mut tape, params, z)?;
    let mse = tape.mse(recon, x)?;
    let kl = kl_var(&mut tape, mu, lv)?;
    let kl = tape.scalar_affine(kl, beta, 0.0)?;
    let loss = tape.add(mse, kl)?;
    let value = tape.value(loss).item() as f64;
    Ok((value, tape.backward(loss)?.into_params()))
}

pub fn vae_loss(model: &VaeModel, batch: &Tensor<f32>, beta: f64, rng: &mut impl Rng) -> Result<f64, LatentError> {
    Ok(vae_loss_and_grads(model, &model.params, batch, beta, rng)?.0)
}

/// Mean-mode reconstruction MSE in the model's normalized units.
pub fn reconstruction_mse(model: &VaeModel, images: &[Tensor<f32>]) -> Result<f64, LatentError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in images.chunks(32) {
        let batch = Tensor::stack_batch(chunk)?;
        let z = vae_encode(model, &batch, EncodeMode::Mean)?;
        let out = vae_decode(model, &z.tensor)?;
        total += out
            .data()
            .iter()
            .zip(batch.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
        count += batch.numel();
    }
    Ok(total / count as f64)
}

/// `1 / std` of encoder means over `images`.
pub fn compute_latent_scale(model: &VaeModel, images: &[Tensor<f32>]) -> Result<f32, LatentError> {
    let mut values = Vec::new();
    for chunk in images.chunks(32) {
        let (mu, _) = model.moments(&Tensor::stack_batch(chunk)?)?;
        values.extend(mu.data().iter().map(|&v| v as f64));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(if var > 0.0 { (1.0 / var.sqrt()) as f32 } else { 1.0 })
}

/// Trains from `state` (fresh or resumed) to `model.config.train.epochs`.
///
/// `images` are `[1, C, H, W]` tensors in [-1, 1]. When `checkpoint_dir` is
/// set, `vae_epoch_{k}.tfck` files are written every `checkpoint_every` epochs.
pub fn train_vae_from(
    mut model: VaeModel,
    mut state: TrainState,
    images: &[Tensor<f32>],
    checkpoint_dir: Option<&Path>,
) -> Result<VaeModel, LatentError> {
    if images.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    for im in images {
        model.check_input(im.shape())?;
    }
    let cfg = model.config.train.clone();
    let beta = model.config.beta;
    let template = model.clone();
    run_epochs(
        &mut state,
        images.len(),
        &cfg,
        "vae",
        |params, idx, rng| {
            let batch: Vec<Tensor<f32>> = idx.iter().map(|&i| images[i].clone()).collect();
            let batch = Tensor::stack_batch(&batch)?;
            vae_loss_and_grads(&template, params, &batch, beta, rng).map_err(|e| match e {
                LatentError::Autodiff(a) => TrainError::Autodiff(a),
                LatentError::Train(t) => t,
                other => TrainError::Invalid(other.to_string()),
            })
        },
        |st| {
            if let Some(dir) = checkpoint_dir {
                let snapshot = VaeModel {
                    params: st.params.clone(),
                    latent_scale: compute_latent_scale(
                        &VaeModel {
                            params: st.params.clone(),
                            ..template.clone()
                        },
                        images,
                    )
                    .map_err(|e| TrainError::Invalid(e.to_string()))?,
                    ..template.clone()
                };
                snapshot
                    .to_checkpoint(Some(st))
                    .save(&dir.join(format!("vae_epoch_{}.tfck", st.epochs_done)))?;
            }
            Ok(())
        },
    )?;
    model.params = state.params;
    model.latent_scale = compute_latent_scale(&model, images)?;
    Ok(model)
}

/// Fresh model from the config's seed, trained for the configured epochs.
pub fn train_vae(config: VaeConfig, images: &[Tensor<f32>], checkpoint_dir: Option<&Path>) -> Result<VaeModel, LatentError> {
    let mut rng = substream(config.train.seed, "vae/init");
    let model = VaeModel::new(config, &mut rng)?;
    if model.config.train.epochs == 0 {
        return Ok(model);
    }
    let state = TrainState::fresh(model.params.clone());
    train_vae_from(model, state, images, checkpoint_dir)
}

/// Continues training from a checkpoint written by [`train_vae`].
pub fn resume_vae(ck: &Checkpoint, epochs: usize, images: &[Tensor<f32>], checkpoint_dir: Option<&Path>) -> Result<VaeModel, LatentError> {
    let mut model = VaeModel::from_checkpoint(ck)?;
    let epochs_done = ck.metadata["epochs_done"].as_u64().unwrap_or(0) as usize;
    let epoch_losses = serde_json::from_value(ck.metadata["epoch_losses"].clone()).unwrap_or_default();
    let state = TrainState {
        params: ck.params.clone(),
        optimizer: ck.optimizer.clone().unwrap_or_default(),
        epochs_done,
        epoch_losses,
    };
    model.config.train.epochs = epochs;
    train_vae_from(model, state, images, checkpoint_dir)
}
