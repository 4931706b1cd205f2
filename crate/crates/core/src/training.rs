//! Epoch/batch loop shared by the VAE, LDM and adapter trainers.
//!
//! Each epoch shuffles with its own named stream, so a run resumed at an
//! epoch boundary from a checkpoint with optimizer state reproduces the
//! uninterrupted run exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adamw_step, AdamConfig, AutodiffError, OptimizerState, ParameterSet, Tensor};
use crate::checkpoint::CheckpointError;
use crate::seeding::substream;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

pub type Grads = BTreeMap<String, Tensor<f32>>;

/// Mutable state carried across epochs and into checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet<f32>,
    pub optimizer: OptimizerState<f32>,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn fresh(params: ParameterSet<f32>) -> Self {
        Self {
            params,
            optimizer: OptimizerState::new(),
            epochs_done: 0,
            epoch_losses: Vec::new(),
        }
    }
}

/// Index batches of one epoch, shuffled by the epoch's stream.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, stream: &str, epoch: usize) -> (Vec<Vec<usize>>, ChaCha8Rng) {
    let mut rng = substream(seed, &format!("{stream}/epoch/{epoch}"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect(), rng)
}

/// Runs epochs `state.epochs_done..cfg.epochs`.
///
/// `step` returns the batch loss and parameter gradients; `checkpoint` is
/// called after every `cfg.checkpoint_every`-th epoch.
pub fn run_epochs<S, C>(
    state: &mut TrainState,
    n_items: usize,
    cfg: &TrainConfig,
    stream: &str,
    mut step: S,
    mut checkpoint: C,
) -> Result<(), TrainError>
where
    S: FnMut(&ParameterSet<f32>, &[usize], &mut ChaCha8Rng) -> Result<(f64, Grads), TrainError>,
    C: FnMut(&TrainState) -> Result<(), TrainError>,
{
    if n_items == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Invalid("batch_size must be positive".into()));
    }
    let adam = AdamConfig::adam(cfg.lr);
    for epoch in state.epochs_done..cfg.epochs {
        let (batches, mut rng) = epoch_batches(n_items, cfg.batch_size, cfg.seed, stream, epoch);
        let mut total = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let (loss, grads) = step(&state.params, batch, &mut rng)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: i, loss });
            }
            adamw_step(&mut state.params, &grads, &mut state.optimizer, &adam)?;
            total += loss;
        }
        let mean = total / batches.len() as f64;
        log::info!("{stream}: epoch {} loss {mean:.6}", epoch + 1);
        state.epoch_losses.push(mean);
        state.epochs_done = epoch + 1;
        if cfg.checkpoint_every > 0 && state.epochs_done % cfg.checkpoint_every == 0 {
            checkpoint(state)?;
        }
    }
    Ok(())
}
