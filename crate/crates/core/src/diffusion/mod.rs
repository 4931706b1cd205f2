//! Joint latent diffusion over fused heightmap and texture latents.
//!
//! Heightmap latents occupy the first `c` channels of the fused tensor and
//! texture latents the last `c`. One noise predictor handles both.

mod schedule;
mod unet;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
pub use unet::{extend_channels, timestep_embedding, ChannelPlacement, Denoiser, DenoiserConfig, EncoderFeatures};
pub(crate) use unet::{encoder, init_encoder};

use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor};
use crate::checkpoint::{config_hash, Checkpoint, CheckpointError};
use crate::seeding::substream;
use crate::training::{run_epochs, Grads, TrainConfig, TrainError, TrainState};

pub const CHECKPOINT_KIND: &str = "ldm";

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("timestep {t} outside 0..={max}")]
    Timestep { t: usize, max: usize },
    #[error("non-finite latent at timestep {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("bad checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

impl From<DiffusionError> for TrainError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Autodiff(a) => TrainError::Autodiff(a),
            DiffusionError::Train(t) => t,
            other => TrainError::Invalid(other.to_string()),
        }
    }
}

pub fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    Tensor::new(shape, data).expect("extent product matches")
}

/// Heightmap-first channel concatenation.
pub fn fuse_latents(z_h: &Tensor<f32>, z_x: &Tensor<f32>) -> Result<Tensor<f32>, DiffusionError> {
    Ok(Tensor::concat_channels(&[z_h, z_x])?)
}

pub fn split_latents(z: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>), DiffusionError> {
    let c = z.shape().get(1).copied().unwrap_or(0);
    if z.shape().len() != 4 || c % 2 != 0 {
        return Err(DiffusionError::Shape(format!("cannot split {:?} into two halves", z.shape())));
    }
    Ok((z.slice_channels(0, c / 2)?, z.slice_channels(c / 2, c / 2)?))
}

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε`, with one `t` per batch item.
pub fn forward_diffuse(
    z0: &Tensor<f32>,
    t: &[usize],
    eps: &Tensor<f32>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<f32>, DiffusionError> {
    if z0.shape() != eps.shape() {
        return Err(DiffusionError::Shape(format!("z0 {:?} vs ε {:?}", z0.shape(), eps.shape())));
    }
    let n = z0.shape()[0];
    if t.len() != n {
        return Err(DiffusionError::Shape(format!("{} timesteps for batch of {n}", t.len())));
    }
    let per = z0.numel() / n;
    let mut out = Vec::with_capacity(z0.numel());
    for (b, &tb) in t.iter().enumerate() {
        if tb > schedule.timesteps() {
            return Err(DiffusionError::Timestep {
                t: tb,
                max: schedule.timesteps(),
            });
        }
        let ab = schedule.alpha_bar(tb);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        for i in b * per..(b + 1) * per {
            out.push((a * z0.data()[i] as f64 + s * eps.data()[i] as f64) as f32);
        }
    }
    Ok(Tensor::new(z0.shape(), out)?)
}

/// Anything that predicts ε from `(z_t, t)`.
pub trait NoisePredictor {
    fn predict(&self, z_t: &Tensor<f32>, t: &[usize]) -> Result<Tensor<f32>, DiffusionError>;
}

impl NoisePredictor for Denoiser {
    fn predict(&self, z_t: &Tensor<f32>, t: &[usize]) -> Result<Tensor<f32>, DiffusionError> {
        self.check_input(z_t)?;
        let mut tape = Tape::new();
        let x = tape.constant(z_t.clone())?;
        let y = self.forward(&mut tape, &self.params, x, t, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Draws per-item timesteps uniform in `1..=T`, then ε, in that order.
pub fn sample_t_and_eps(shape: &[usize], schedule: &NoiseSchedule, rng: &mut impl Rng) -> (Vec<usize>, Tensor<f32>) {
    let t = (0..shape[0]).map(|_| rng.random_range(1..=schedule.timesteps())).collect();
    (t, gaussian(shape, rng))
}

fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64
}

/// ε-prediction MSE for given `t` and ε.
pub fn joint_loss_with(
    model: &impl NoisePredictor,
    z0_h: &Tensor<f32>,
    z0_x: &Tensor<f32>,
    t: &[usize],
    eps: &Tensor<f32>,
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let z0 = fuse_latents(z0_h, z0_x)?;
    let zt = forward_diffuse(&z0, t, eps, schedule)?;
    Ok(mse(&model.predict(&zt, t)?, eps))
}

/// Samples `t ~ U[1, T]` and `ε ~ N(0, I)`, then [`joint_loss_with`].
pub fn joint_loss(
    model: &impl NoisePredictor,
    z0_h: &Tensor<f32>,
    z0_x: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64, DiffusionError> {
    let mut shape = z0_h.shape().to_vec();
    shape[1] *= 2;
    let (t, eps) = sample_t_and_eps(&shape, schedule, rng);
    joint_loss_with(model, z0_h, z0_x, &t, &eps, schedule)
}

fn check_finite(z: &Tensor<f32>, t: usize) -> Result<(), DiffusionError> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(DiffusionError::NonFinite(t))
    }
}

/// Ancestral sampling over all `T` steps from `z_T ~ N(0, I)`.
/// `shape` is the fused `[n, 2c, h, w]`.
pub fn ddpm_sample(
    model: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>), DiffusionError> {
    let mut z = gaussian(shape, rng);
    let n = shape[0];
    for t in (1..=schedule.timesteps()).rev() {
        let eps = model.predict(&z, &vec![t; n])?;
        let ab = schedule.alpha_bar(t);
        let beta = schedule.beta(t);
        let coef = beta / (1.0 - ab).sqrt();
        let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
        let sigma = if t > 1 { schedule.posterior_variance(t).sqrt() } else { 0.0 };
        let noise = if t > 1 { Some(gaussian(shape, rng)) } else { None };
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .enumerate()
            .map(|(i, (&zi, &ei))| {
                let mean = inv_sqrt_alpha * (zi as f64 - coef * ei as f64);
                let nz = noise.as_ref().map_or(0.0, |nz| nz.data()[i] as f64);
                (mean + sigma * nz) as f32
            })
            .collect();
        z = Tensor::new(shape, data)?;
        check_finite(&z, t)?;
    }
    split_latents(&z)
}

/// Timesteps visited by the strided sampler: `T − k·T/S` for `k < S`.
pub fn strided_timesteps(total: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|k| total - k * total / steps).collect()
}

/// Deterministic (η = 0) sampling over `steps` uniformly strided timesteps.
pub fn strided_sample(
    model: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    steps: usize,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>), DiffusionError> {
    let z = gaussian(shape, rng);
    let z = strided_from(model, schedule, steps, z)?;
    split_latents(&z)
}

/// The strided trajectory from a given `z_T`; returns the fused `z_0`.
pub fn strided_from(
    model: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    steps: usize,
    mut z: Tensor<f32>,
) -> Result<Tensor<f32>, DiffusionError> {
    if steps == 0 || steps > schedule.timesteps() {
        return Err(DiffusionError::Config(format!(
            "steps must lie in 1..={}, got {steps}",
            schedule.timesteps()
        )));
    }
    let ts = strided_timesteps(schedule.timesteps(), steps);
    let n = z.shape()[0];
    let shape = z.shape().to_vec();
    for (k, &t) in ts.iter().enumerate() {
        let prev = ts.get(k + 1).copied().unwrap_or(0);
        let eps = model.predict(&z, &vec![t; n])?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(prev);
        let data = z
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&zi, &ei)| {
                let (zi, ei) = (zi as f64, ei as f64);
                let x0 = (zi - (1.0 - ab).sqrt() * ei) / ab.sqrt();
                (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * ei) as f32
            })
            .collect();
        z = Tensor::new(&shape, data)?;
        check_finite(&z, t)?;
    }
    Ok(z)
}

/// Everything needed to train and sample the joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdmConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
}

impl LdmConfig {
    pub fn new(latent_channels: usize) -> Self {
        Self {
            denoiser: DenoiserConfig::joint(latent_channels),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdmModel {
    pub config: LdmConfig,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

impl LdmModel {
    pub fn new(config: LdmConfig, rng: &mut impl Rng) -> Result<Self, DiffusionError> {
        let denoiser = Denoiser::new(config.denoiser, rng)?;
        let schedule = NoiseSchedule::from_config(&config.schedule)?;
        Ok(Self {
            config,
            denoiser,
            schedule,
        })
    }

    pub fn to_checkpoint(&self, state: Option<&TrainState>) -> Checkpoint {
        let mut ck = Checkpoint::new(
            CHECKPOINT_KIND,
            state.map_or_else(|| self.denoiser.params.clone(), |s| s.params.clone()),
            serde_json::json!({
                "config": self.config,
                "epochs_done": state.map_or(self.config.train.epochs, |s| s.epochs_done),
                "epoch_losses": state.map(|s| s.epoch_losses.clone()).unwrap_or_default(),
            }),
            config_hash(&self.config),
        );
        ck.optimizer = state.map(|s| s.optimizer.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DiffusionError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: LdmConfig = serde_json::from_value(ck.metadata["config"].clone())?;
        Ok(Self {
            schedule: NoiseSchedule::from_config(&config.schedule)?,
            denoiser: Denoiser {
                config: config.denoiser,
                params: ck.params.clone(),
            },
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<String, DiffusionError> {
        Ok(self.to_checkpoint(None).save(path)?)
    }
}

/// Loss and parameter gradients for one batch of fused clean latents.
pub fn ldm_loss_and_grads(
    denoiser: &Denoiser,
    params: &ParameterSet<f32>,
    z0: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, Grads), DiffusionError> {
    let (t, eps) = sample_t_and_eps(z0.shape(), schedule, rng);
    let zt = forward_diffuse(z0, &t, &eps, schedule)?;
    let mut tape = Tape::new();
    let x = tape.constant(zt)?;
    let target = tape.constant(eps)?;
    let pred = denoiser.forward(&mut tape, params, x, &t, None)?;
    let loss = tape.mse(pred, target)?;
    let value = tape.value(loss).item() as f64;
    Ok((value, tape.backward(loss)?.into_params()))
}

/// Trains on fused, already scaled clean latents (`[1, 2c, h, w]` each).
///
/// Starts from `init` when given (e.g. a channel-extended checkpoint),
/// otherwise from a fresh model seeded by the config.
pub fn train_ldm(
    config: LdmConfig,
    latents: &[Tensor<f32>],
    init: Option<Denoiser>,
    checkpoint_dir: Option<&Path>,
) -> Result<LdmModel, DiffusionError> {
    let denoiser = match init {
        Some(d) => {
            if d.config != config.denoiser {
                return Err(DiffusionError::Config("initial denoiser does not match the config".into()));
            }
            d
        }
        None => Denoiser::new(config.denoiser, &mut substream(config.train.seed, "ldm/init"))?,
    };
    let model = LdmModel {
        schedule: NoiseSchedule::from_config(&config.schedule)?,
        denoiser,
        config,
    };
    if model.config.train.epochs == 0 {
        return Ok(model);
    }
    let state = TrainState::fresh(model.denoiser.params.clone());
    train_ldm_from(model, state, latents, checkpoint_dir)
}

pub fn train_ldm_from(
    mut model: LdmModel,
    mut state: TrainState,
    latents: &[Tensor<f32>],
    checkpoint_dir: Option<&Path>,
) -> Result<LdmModel, DiffusionError> {
    for z in latents {
        model.denoiser.check_input(z)?;
    }
    let cfg = model.config.train.clone();
    let template = model.clone();
    run_epochs(
        &mut state,
        latents.len(),
        &cfg,
        "ldm",
        |params, idx, rng| {
            let batch: Vec<Tensor<f32>> = idx.iter().map(|&i| latents[i].clone()).collect();
            let z0 = Tensor::stack_batch(&batch)?;
            Ok(ldm_loss_and_grads(&template.denoiser, params, &z0, &template.schedule, rng)?)
        },
        |st| {
            if let Some(dir) = checkpoint_dir {
                template
                    .to_checkpoint(Some(st))
                    .save(&dir.join(format!("ldm_epoch_{}.tfck", st.epochs_done)))?;
            }
            Ok(())
        },
    )?;
    model.denoiser.params = state.params;
    Ok(model)
}

pub fn resume_ldm(ck: &Checkpoint, epochs: usize, latents: &[Tensor<f32>], checkpoint_dir: Option<&Path>) -> Result<LdmModel, DiffusionError> {
    let mut model = LdmModel::from_checkpoint(ck)?;
    let state = TrainState {
        params: ck.params.clone(),
        optimizer: ck.optimizer.clone().unwrap_or_default(),
        epochs_done: ck.metadata["epochs_done"].as_u64().unwrap_or(0) as usize,
        epoch_losses: serde_json::from_value(ck.metadata["epoch_losses"].clone()).unwrap_or_default(),
    };
    model.config.train.epochs = epochs;
    train_ldm_from(model, state, latents, checkpoint_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_diffuse_endpoints() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        let z0 = Tensor::new(&[1, 2, 1, 1], vec![2.0f32, -4.0]).unwrap();
        let eps = Tensor::new(&[1, 2, 1, 1], vec![0.5f32, 0.25]).unwrap();
        assert_eq!(forward_diffuse(&z0, &[0], &eps, &s).unwrap(), z0);
        assert!(forward_diffuse(&z0, &[11], &eps, &s).is_err());
    }

    #[test]
    fn fuse_split_round_trip() {
        let a = Tensor::new(&[2, 1, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1, 1, 2], vec![5.0f32, 6.0, 7.0, 8.0]).unwrap();
        let f = fuse_latents(&a, &b).unwrap();
        assert_eq!(f.shape(), &[2, 2, 1, 2]);
        assert_eq!(f.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(split_latents(&f).unwrap(), (a, b));
    }

    #[test]
    fn trailing_timesteps() {
        assert_eq!(strided_timesteps(1000, 4), vec![1000, 750, 500, 250]);
        assert_eq!(strided_timesteps(5, 5), vec![5, 4, 3, 2, 1]);
    }
}
