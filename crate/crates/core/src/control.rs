//! Raster-conditioned generation through a trainable encoder copy.
//!
//! The adapter owns a copy of the denoiser encoder (names under
//! [`PREFIX`]), a small embedding stack that brings the condition raster
//! down to latent resolution, and 1×1 projections into the frozen
//! decoder's skips. Projections start at zero, so a fresh adapter leaves
//! every prediction of the base model unchanged.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{conv, init_conv, init_zero_conv};
use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor, Var};
use crate::checkpoint::{config_hash, Checkpoint, CheckpointError};
use crate::diffusion::{
    encoder, forward_diffuse, init_encoder, joint_loss_with, sample_t_and_eps, strided_sample, Denoiser, DenoiserConfig,
    DiffusionError, EncoderFeatures, LdmModel, NoisePredictor, NoiseSchedule,
};
use crate::geomorph::SketchRaster;
use crate::latent::LatentError;
use crate::pipeline::JointModel;
use crate::raster::{Heightmap, RasterError, Texture};
use crate::seeding::substream;
use crate::training::{run_epochs, Grads, TrainConfig, TrainError, TrainState};

pub const CHECKPOINT_KIND: &str = "adapter";
/// Name prefix of every adapter parameter.
pub const PREFIX: &str = "ctrl.";
const EMBED_CONVS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("dataset lacks condition rasters: {0}")]
    MissingConditions(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid control config: {0}")]
    Config(String),
    #[error("invalid condition raster: {0}")]
    Condition(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("bad checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

impl From<ControlError> for TrainError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Autodiff(a) => TrainError::Autodiff(a),
            ControlError::Train(t) => t,
            other => TrainError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    /// Red valleys, green ridges, blue cliffs on black.
    Sketch,
    TwoColorTexture,
}

/// An RGB condition image at generation resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRaster {
    texture: Texture,
    kind: ConditionKind,
}

impl ConditionRaster {
    pub fn new(texture: Texture, kind: ConditionKind) -> Result<Self, ControlError> {
        if kind == ConditionKind::Sketch {
            SketchRaster::from_texture(texture.clone()).map_err(|e| ControlError::Condition(e.to_string()))?;
        }
        Ok(Self { texture, kind })
    }

    pub fn sketch(sketch: &SketchRaster) -> Self {
        Self {
            texture: sketch.texture().clone(),
            kind: ConditionKind::Sketch,
        }
    }

    /// All-black condition, the input used for condition dropout.
    pub fn blank(width: usize, height: usize, kind: ConditionKind) -> Self {
        Self {
            texture: Texture::filled(width, height, [0; 3]),
            kind,
        }
    }

    pub fn texture(&self) -> &Texture {
        &self.texture
    }

    pub fn kind(&self) -> ConditionKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.texture.width()
    }

    pub fn height(&self) -> usize {
        self.texture.height()
    }

    /// `[1, 3, H, W]` with channel values `v / 255`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        condition_tensor(&self.texture)
    }
}

/// `[1, 3, H, W]` with channel values `v / 255`.
pub fn condition_tensor(t: &Texture) -> Tensor<f32> {
    let n = t.width() * t.height();
    let mut out = vec![0.0f32; 3 * n];
    for (i, px) in t.rgb().chunks(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[1, 3, t.height(), t.width()], out).expect("planar layout")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub kind: ConditionKind,
    /// Ratio of condition resolution to latent resolution; 1, 2, 4 or 8.
    pub downsample: usize,
    pub embed_channels: usize,
    /// Probability of replacing an item's condition with zeros in training.
    pub dropout: f64,
    pub train: TrainConfig,
}

impl ControlConfig {
    pub fn new(kind: ConditionKind, downsample: usize) -> Self {
        Self {
            kind,
            downsample,
            embed_channels: 16,
            dropout: 0.1,
            train: TrainConfig {
                lr: 1e-5,
                ..TrainConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !self.downsample.is_power_of_two() || self.downsample > 1 << EMBED_CONVS {
            return Err(ControlError::Config(format!(
                "downsample must be a power of two up to {}, got {}",
                1 << EMBED_CONVS,
                self.downsample
            )));
        }
        if self.embed_channels == 0 {
            return Err(ControlError::Config("embed_channels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(ControlError::Config(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        Ok(())
    }

    fn stride(&self, i: usize) -> usize {
        let levels = self.downsample.trailing_zeros() as usize;
        if i >= EMBED_CONVS - levels {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAdapter {
    pub config: ControlConfig,
    /// Configuration of the denoiser this adapter was built for.
    pub base: DenoiserConfig,
    /// Adapter parameters only, every name starting with [`PREFIX`].
    pub params: ParameterSet<f32>,
}

/// Builds an adapter for `base`: encoder weights copied, embedding
/// initialized from `rng` with its last layer zeroed, projections zeroed.
pub fn init_adapter(base: &Denoiser, config: ControlConfig, rng: &mut impl Rng) -> Result<ControlAdapter, ControlError> {
    config.validate()?;
    let dc = base.config;
    let c = dc.base_channels;
    let mut layout = ParameterSet::new();
    init_encoder(&mut layout, "", &dc, &mut substream(0, "control/layout"))?;
    let mut ps = ParameterSet::new();
    for name in layout.names() {
        ps.insert(format!("{PREFIX}{name}"), base.params.value(name)?.clone(), true)?;
    }
    let e = config.embed_channels;
    init_conv(&mut ps, &format!("{PREFIX}cond.0"), 3, e, 3, rng)?;
    init_conv(&mut ps, &format!("{PREFIX}cond.1"), e, e, 3, rng)?;
    init_zero_conv(&mut ps, &format!("{PREFIX}cond.2"), e, c, 3)?;
    init_zero_conv(&mut ps, &format!("{PREFIX}proj1"), c, c, 1)?;
    init_zero_conv(&mut ps, &format!("{PREFIX}proj2"), 2 * c, 2 * c, 1)?;
    init_zero_conv(&mut ps, &format!("{PREFIX}proj_mid"), 2 * c, 2 * c, 1)?;
    Ok(ControlAdapter {
        config,
        base: dc,
        params: ps,
    })
}

impl ControlAdapter {
    pub fn projections_are_zero(&self) -> bool {
        ["proj1", "proj2", "proj_mid"].iter().all(|p| {
            ["weight", "bias"].iter().all(|k| {
                self.params
                    .value(&format!("{PREFIX}{p}.{k}"))
                    .is_ok_and(|t| t.data().iter().all(|&v| v == 0.0))
            })
        })
    }

    /// Frozen base parameters together with the trainable adapter ones.
    pub fn combined(&self, base: &Denoiser, adapter_params: &ParameterSet<f32>) -> Result<ParameterSet<f32>, ControlError> {
        if base.config != self.base {
            return Err(ControlError::Shape("adapter was built for a different denoiser".into()));
        }
        let mut ps = base.params.clone();
        ps.freeze_all();
        for (name, p) in adapter_params.iter() {
            ps.insert(name, p.value.clone(), p.trainable)?;
        }
        Ok(ps)
    }

    fn embed(&self, tape: &mut Tape<f32>, ps: &ParameterSet<f32>, cond: Var) -> Result<Var, AutodiffError> {
        let mut h = cond;
        for i in 0..EMBED_CONVS {
            h = conv(tape, ps, &format!("{PREFIX}cond.{i}"), h, self.config.stride(i))?;
            if i + 1 < EMBED_CONVS {
                h = tape.silu(h)?;
            }
        }
        Ok(h)
    }

    /// Conditioned ε prediction; `ps` comes from [`ControlAdapter::combined`].
    pub fn forward(
        &self,
        tape: &mut Tape<f32>,
        base: &Denoiser,
        ps: &ParameterSet<f32>,
        x: Var,
        t: &[usize],
        cond: Var,
    ) -> Result<Var, AutodiffError> {
        let emb = base.time_embedding(tape, ps, t)?;
        let f = base.encode(tape, ps, x, emb)?;
        let ce = self.embed(tape, ps, cond)?;
        let a = encoder(tape, ps, PREFIX, x, emb, Some(ce))?;
        let r = EncoderFeatures {
            skip1: conv(tape, ps, &format!("{PREFIX}proj1"), a.skip1, 1)?,
            skip2: conv(tape, ps, &format!("{PREFIX}proj2"), a.skip2, 1)?,
            mid: conv(tape, ps, &format!("{PREFIX}proj_mid"), a.mid, 1)?,
        };
        base.decode(tape, ps, f, emb, Some(&r))
    }

    pub fn check_condition(&self, z: &[usize], cond: &[usize]) -> Result<(), ControlError> {
        let f = self.config.downsample;
        let ok = cond.len() == 4
            && cond[1] == 3
            && (cond[0] == z[0] || cond[0] == 1)
            && cond[2] == z[2] * f
            && cond[3] == z[3] * f;
        if ok {
            Ok(())
        } else {
            Err(ControlError::Shape(format!(
                "condition {cond:?} does not match latents {z:?} at downsample {f}"
            )))
        }
    }

    pub fn to_checkpoint(&self, state: Option<&TrainState>) -> Checkpoint {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            state.map_or_else(|| self.params.clone(), |s| s.params.clone()),
            serde_json::json!({
                "config": self.config,
                "base": self.base,
                "epochs_done": state.map_or(self.config.train.epochs, |s| s.epochs_done),
                "epoch_losses": state.map(|s| s.epoch_losses.clone()).unwrap_or_default(),
            }),
            config_hash(&(&self.config, &self.base)),
        );
        ck.optimizer = state.map(|s| s.optimizer.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ControlError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let adapter = Self {
            config: serde_json::from_value(ck.metadata["config"].clone())?,
            base: serde_json::from_value(ck.metadata["base"].clone())?,
            params: ck.params.clone(),
        };
        adapter.config.validate()?;
        if let Some(stray) = adapter.params.names().find(|n| !n.starts_with(PREFIX)) {
            return Err(ControlError::Config(format!("parameter {stray} is not an adapter parameter")));
        }
        Ok(adapter)
    }

    pub fn load(path: &Path) -> Result<Self, ControlError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<String, ControlError> {
        Ok(self.to_checkpoint(None).save(path)?)
    }
}

/// Base model plus adapter plus a fixed condition batch, as a predictor.
pub struct ConditionedPredictor<'a> {
    base: &'a Denoiser,
    adapter: &'a ControlAdapter,
    params: ParameterSet<f32>,
    cond: Tensor<f32>,
}

impl<'a> ConditionedPredictor<'a> {
    /// `cond` is `[1, 3, H, W]` (shared) or one condition per batch item.
    pub fn new(base: &'a Denoiser, adapter: &'a ControlAdapter, cond: Tensor<f32>) -> Result<Self, ControlError> {
        let params = adapter.combined(base, &adapter.params)?;
        Ok(Self {
            base,
            adapter,
            params,
            cond,
        })
    }
}

fn tile_batch(t: &Tensor<f32>, n: usize) -> Result<Tensor<f32>, AutodiffError> {
    if t.shape()[0] == n {
        Ok(t.clone())
    } else {
        Tensor::stack_batch(&vec![t.clone(); n])
    }
}

impl NoisePredictor for ConditionedPredictor<'_> {
    fn predict(&self, z_t: &Tensor<f32>, t: &[usize]) -> Result<Tensor<f32>, DiffusionError> {
        self.base.check_input(z_t)?;
        self.adapter
            .check_condition(z_t.shape(), self.cond.shape())
            .map_err(|e| DiffusionError::Shape(e.to_string()))?;
        let mut tape = Tape::new();
        let x = tape.constant(z_t.clone())?;
        let c = tape.constant(tile_batch(&self.cond, z_t.shape()[0])?)?;
        let y = self.adapter.forward(&mut tape, self.base, &self.params, x, t, c)?;
        Ok(tape.value(y).clone())
    }
}

/// ε-prediction MSE of the conditioned model; draws `t` and ε exactly as
/// [`crate::diffusion::joint_loss`] does.
pub fn control_loss(
    base: &Denoiser,
    adapter: &ControlAdapter,
    z0_h: &Tensor<f32>,
    z0_x: &Tensor<f32>,
    cond: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64, ControlError> {
    let mut shape = z0_h.shape().to_vec();
    shape[1] *= 2;
    let (t, eps) = sample_t_and_eps(&shape, schedule, rng);
    let predictor = ConditionedPredictor::new(base, adapter, cond.clone())?;
    Ok(joint_loss_with(&predictor, z0_h, z0_x, &t, &eps, schedule)?)
}

/// Loss and adapter gradients for fused clean latents and their conditions.
pub fn control_loss_and_grads(
    base: &Denoiser,
    adapter: &ControlAdapter,
    adapter_params: &ParameterSet<f32>,
    z0: &Tensor<f32>,
    cond: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, Grads), ControlError> {
    adapter.check_condition(z0.shape(), cond.shape())?;
    let ps = adapter.combined(base, adapter_params)?;
    let (t, eps) = sample_t_and_eps(z0.shape(), schedule, rng);
    let zt = forward_diffuse(z0, &t, &eps, schedule)?;
    let mut tape = Tape::new();
    let x = tape.constant(zt)?;
    let c = tape.constant(tile_batch(cond, z0.shape()[0])?)?;
    let target = tape.constant(eps)?;
    let pred = adapter.forward(&mut tape, base, &ps, x, &t, c)?;
    let loss = tape.mse(pred, target)?;
    let value = tape.value(loss).item() as f64;
    Ok((value, tape.backward(loss)?.into_params()))
}

/// Zeroes each item's condition with probability `p`.
pub fn drop_conditions(conds: &[Tensor<f32>], p: f64, rng: &mut impl Rng) -> Vec<Tensor<f32>> {
    conds
        .iter()
        .map(|c| {
            if rng.random::<f64>() < p {
                Tensor::zeros(c.shape())
            } else {
                c.clone()
            }
        })
        .collect()
}

/// Trains a fresh adapter on fused, scaled latents and matching
/// `[1, 3, H, W]` conditions. The base model is never modified.
pub fn train_control(
    base: &LdmModel,
    config: ControlConfig,
    latents: &[Tensor<f32>],
    conditions: &[Tensor<f32>],
    checkpoint_dir: Option<&Path>,
) -> Result<ControlAdapter, ControlError> {
    let seed = config.train.seed;
    let adapter = init_adapter(&base.denoiser, config, &mut substream(seed, "control/init"))?;
    if adapter.config.train.epochs == 0 {
        return Ok(adapter);
    }
    let state = TrainState::fresh(adapter.params.clone());
    train_control_from(base, adapter, state, latents, conditions, checkpoint_dir)
}

pub fn train_control_from(
    base: &LdmModel,
    mut adapter: ControlAdapter,
    mut state: TrainState,
    latents: &[Tensor<f32>],
    conditions: &[Tensor<f32>],
    checkpoint_dir: Option<&Path>,
) -> Result<ControlAdapter, ControlError> {
    if conditions.is_empty() && !latents.is_empty() {
        return Err(ControlError::MissingConditions("no condition rasters given".into()));
    }
    if conditions.len() != latents.len() {
        return Err(ControlError::MissingConditions(format!(
            "{} latents but {} conditions",
            latents.len(),
            conditions.len()
        )));
    }
    for (z, c) in latents.iter().zip(conditions) {
        base.denoiser.check_input(z)?;
        adapter.check_condition(z.shape(), c.shape())?;
    }
    let cfg = adapter.config.train.clone();
    let template = adapter.clone();
    run_epochs(
        &mut state,
        latents.len(),
        &cfg,
        "control",
        |params, idx, rng| {
            let zs: Vec<Tensor<f32>> = idx.iter().map(|&i| latents[i].clone()).collect();
            let cs: Vec<Tensor<f32>> = idx.iter().map(|&i| conditions[i].clone()).collect();
            let cs = drop_conditions(&cs, template.config.dropout, rng);
            let z0 = Tensor::stack_batch(&zs)?;
            let c = Tensor::stack_batch(&cs)?;
            Ok(control_loss_and_grads(&base.denoiser, &template, params, &z0, &c, &base.schedule, rng)?)
        },
        |st| {
            if let Some(dir) = checkpoint_dir {
                template
                    .to_checkpoint(Some(st))
                    .save(&dir.join(format!("control_epoch_{}.tfck", st.epochs_done)))?;
            }
            Ok(())
        },
    )?;
    adapter.params = state.params;
    Ok(adapter)
}

pub fn resume_control(
    base: &LdmModel,
    ck: &Checkpoint,
    epochs: usize,
    latents: &[Tensor<f32>],
    conditions: &[Tensor<f32>],
    checkpoint_dir: Option<&Path>,
) -> Result<ControlAdapter, ControlError> {
    let mut adapter = ControlAdapter::from_checkpoint(ck)?;
    let state = TrainState {
        params: ck.params.clone(),
        optimizer: ck.optimizer.clone().unwrap_or_default(),
        epochs_done: ck.metadata["epochs_done"].as_u64().unwrap_or(0) as usize,
        epoch_losses: serde_json::from_value(ck.metadata["epoch_losses"].clone()).unwrap_or_default(),
    };
    adapter.config.train.epochs = epochs;
    train_control_from(base, adapter, state, latents, conditions, checkpoint_dir)
}

/// Strided sampling of `n` fused latents under one condition.
pub fn conditional_latents(
    base: &LdmModel,
    adapter: &ControlAdapter,
    cond: &ConditionRaster,
    steps: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>), ControlError> {
    let f = adapter.config.downsample;
    if cond.width() % f != 0 || cond.height() % f != 0 {
        return Err(ControlError::Shape(format!(
            "condition {}x{} not divisible by {f}",
            cond.width(),
            cond.height()
        )));
    }
    let shape = [n, base.denoiser.config.in_channels, cond.height() / f, cond.width() / f];
    let predictor = ConditionedPredictor::new(&base.denoiser, adapter, cond.to_tensor())?;
    Ok(strided_sample(&predictor, &base.schedule, steps, &shape, rng)?)
}

/// One conditioned sample decoded through both autoencoders, heightmap in meters.
pub fn conditional_sample(
    model: &JointModel,
    adapter: &ControlAdapter,
    cond: &ConditionRaster,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(Heightmap, Texture), ControlError> {
    if cond.width() != model.resolution_px || cond.height() != model.resolution_px {
        return Err(ControlError::Shape(format!(
            "condition is {}x{}, model generates {px}x{px}",
            cond.width(),
            cond.height(),
            px = model.resolution_px
        )));
    }
    let (zh, zx) = conditional_latents(&model.ldm, adapter, cond, steps, 1, rng)?;
    let mut out = model.decode(&zh, &zx)?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_strides() {
        let s = |f| {
            let c = ControlConfig::new(ConditionKind::Sketch, f);
            (0..EMBED_CONVS).map(|i| c.stride(i)).collect::<Vec<_>>()
        };
        assert_eq!(s(1), vec![1, 1, 1]);
        assert_eq!(s(4), vec![1, 2, 2]);
        assert_eq!(s(8), vec![2, 2, 2]);
        assert!(ControlConfig::new(ConditionKind::Sketch, 16).validate().is_err());
        assert!(ControlConfig::new(ConditionKind::Sketch, 3).validate().is_err());
    }

    #[test]
    fn condition_tensor_layout() {
        let mut t = Texture::filled(2, 1, [0; 3]);
        t.set_pixel(1, 0, [255, 0, 255]);
        assert_eq!(condition_tensor(&t).data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut bad = Texture::filled(2, 2, [0; 3]);
        bad.set_pixel(0, 0, [128, 0, 0]);
        assert!(ConditionRaster::new(bad.clone(), ConditionKind::Sketch).is_err());
        assert!(ConditionRaster::new(bad, ConditionKind::TwoColorTexture).is_ok());
    }
}
