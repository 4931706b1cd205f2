//! The JSON pipeline configuration and the on-disk artifact layout.
//!
//! One run seed feeds every stage through named sub-streams; nested seeds
//! in the file are overwritten by [`PipelineConfig::resolved`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ConditionKind, ControlConfig};
use crate::diffusion::LdmConfig;
use crate::geomorph::SketchConfig;
use crate::latent::{Modality, VaeConfig};
use crate::raster::DEFAULT_H_MAX;
use crate::seeding::derive_seed;
use crate::synthterra::SynthConfig;
use crate::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub dir: PathBuf,
    pub count: usize,
    pub synth: SynthConfig,
    pub sketch: SketchConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/synthetic"),
            count: 512,
            synth: SynthConfig::default(),
            sketch: SketchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub steps: usize,
    pub count: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { steps: 20, count: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub queue_depth: usize,
    pub workers: usize,
    pub allowed_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            queue_depth: 16,
            workers: 1,
            allowed_origins: vec!["http://localhost:5173".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub heightmap_vae: VaeConfig,
    pub texture_vae: VaeConfig,
    pub ldm: LdmConfig,
    pub control: ControlConfig,
    pub sampling: SamplingConfig,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vae_train = TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-4,
            ..TrainConfig::default()
        };
        let heightmap_vae = VaeConfig {
            train: vae_train.clone(),
            ..VaeConfig::new(Modality::Heightmap { h_max: DEFAULT_H_MAX })
        };
        let texture_vae = VaeConfig {
            train: vae_train,
            ..VaeConfig::new(Modality::Texture)
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            ldm: LdmConfig::new(heightmap_vae.latent_channels),
            control: ControlConfig::new(ConditionKind::Sketch, heightmap_vae.downsample),
            heightmap_vae,
            texture_vae,
            sampling: SamplingConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Copy with every stage seed derived from the run seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.dataset.synth.seed = derive_seed(s, "dataset");
        c.heightmap_vae.train.seed = derive_seed(s, "train/vae/heightmap");
        c.texture_vae.train.seed = derive_seed(s, "train/vae/texture");
        c.ldm.train.seed = derive_seed(s, "train/ldm");
        c.control.train.seed = derive_seed(s, "train/control");
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.dataset.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.heightmap_vae.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.texture_vae.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.control.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !matches!(self.heightmap_vae.modality, Modality::Heightmap { .. }) {
            return bad("heightmap_vae.modality must be heightmap".into());
        }
        if self.texture_vae.modality != Modality::Texture {
            return bad("texture_vae.modality must be texture".into());
        }
        let (h, x) = (&self.heightmap_vae, &self.texture_vae);
        if h.latent_channels != x.latent_channels || h.downsample != x.downsample {
            return bad("both autoencoders need the same latent channels and downsample".into());
        }
        let c = 2 * h.latent_channels;
        if self.ldm.denoiser.in_channels != c || self.ldm.denoiser.out_channels != c {
            return bad(format!("ldm.denoiser must have {c} input and output channels"));
        }
        if self.control.downsample != h.downsample {
            return bad("control.downsample must equal the autoencoder downsample".into());
        }
        if self.dataset.synth.size_px % (2 * h.downsample) != 0 {
            return bad(format!("dataset.synth.size_px must be a multiple of {}", 2 * h.downsample));
        }
        if self.sampling.steps == 0 || self.sampling.steps > self.ldm.schedule.timesteps {
            return bad(format!("sampling.steps must lie in 1..={}", self.ldm.schedule.timesteps));
        }
        if self.service.queue_depth == 0 || self.service.workers == 0 {
            return bad("service.queue_depth and service.workers must be positive".into());
        }
        Ok(())
    }

    pub fn artifacts(&self) -> ArtifactPaths {
        ArtifactPaths::new(&self.out_dir)
    }
}

/// Where each command reads and writes under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub root: PathBuf,
}

impl ArtifactPaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn heightmap_vae(&self) -> PathBuf {
        self.checkpoints().join("vae_heightmap.tfck")
    }

    pub fn texture_vae(&self) -> PathBuf {
        self.checkpoints().join("vae_texture.tfck")
    }

    pub fn ldm(&self) -> PathBuf {
        self.checkpoints().join("ldm.tfck")
    }

    pub fn adapter(&self) -> PathBuf {
        self.checkpoints().join("adapter_sketch.tfck")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn sketches(&self) -> PathBuf {
        self.root.join("sketches")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}
