//! Both autoencoders plus the joint denoiser, wired for generation.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::diffusion::{ddpm_sample, fuse_latents, strided_sample, DiffusionError, LdmModel};
use crate::latent::{texture_input, texture_output, vae_decode, vae_encode, EncodeMode, LatentError, Modality, VaeModel};
use crate::raster::{Heightmap, Texture};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("input {0}")]
    Input(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

impl From<PipelineError> for crate::control::ControlError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Latent(l) => Self::Latent(l),
            PipelineError::Diffusion(d) => Self::Diffusion(d),
            PipelineError::Autodiff(a) => Self::Autodiff(a),
            other => Self::Shape(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    /// Ancestral sampling over every timestep.
    Ddpm,
    /// Deterministic sampling over `steps` strided timesteps.
    Strided { steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub heightmap_vae: VaeModel,
    pub texture_vae: VaeModel,
    pub ldm: LdmModel,
    /// Side length of generated rasters in pixels.
    pub resolution_px: usize,
    /// Ground spacing stamped on generated heightmaps.
    pub resolution_m: f64,
}

impl JointModel {
    pub fn new(
        heightmap_vae: VaeModel,
        texture_vae: VaeModel,
        ldm: LdmModel,
        resolution_px: usize,
        resolution_m: f64,
    ) -> Result<Self, PipelineError> {
        if !matches!(heightmap_vae.config.modality, Modality::Heightmap { .. }) {
            return Err(PipelineError::Incompatible("first autoencoder must be the heightmap one".into()));
        }
        if texture_vae.config.modality != Modality::Texture {
            return Err(PipelineError::Incompatible("second autoencoder must be the texture one".into()));
        }
        let (ch, cx) = (heightmap_vae.config.latent_channels, texture_vae.config.latent_channels);
        let dc = ldm.denoiser.config;
        if ch != cx || dc.in_channels != ch + cx || dc.out_channels != ch + cx {
            return Err(PipelineError::Incompatible(format!(
                "latent channels {ch}+{cx} vs denoiser {}/{}",
                dc.in_channels, dc.out_channels
            )));
        }
        let f = heightmap_vae.config.downsample;
        if texture_vae.config.downsample != f {
            return Err(PipelineError::Incompatible("autoencoders downsample differently".into()));
        }
        if resolution_px == 0 || resolution_px % (2 * f) != 0 {
            return Err(PipelineError::Incompatible(format!(
                "resolution {resolution_px} must be a positive multiple of {}",
                2 * f
            )));
        }
        Ok(Self {
            heightmap_vae,
            texture_vae,
            ldm,
            resolution_px,
            resolution_m,
        })
    }

    pub fn load(heightmap_vae: &Path, texture_vae: &Path, ldm: &Path, resolution_px: usize, resolution_m: f64) -> Result<Self, PipelineError> {
        Self::new(
            VaeModel::load(heightmap_vae)?,
            VaeModel::load(texture_vae)?,
            LdmModel::load(ldm)?,
            resolution_px,
            resolution_m,
        )
    }

    pub fn latent_channels(&self) -> usize {
        self.heightmap_vae.config.latent_channels
    }

    /// Fused latent shape for `n` samples.
    pub fn latent_shape(&self, n: usize) -> [usize; 4] {
        let s = self.resolution_px / self.heightmap_vae.config.downsample;
        [n, 2 * self.latent_channels(), s, s]
    }

    /// Scaled encoder means of one pair, fused as `[1, 2c, h, w]`.
    pub fn encode_pair(&self, hm: &Heightmap, texture: &Texture) -> Result<Tensor<f32>, PipelineError> {
        encode_pair(&self.heightmap_vae, &self.texture_vae, hm, texture)
    }

    /// Unscales, decodes and converts every item of the latent batch.
    pub fn decode(&self, z_h: &Tensor<f32>, z_x: &Tensor<f32>) -> Result<Vec<(Heightmap, Texture)>, PipelineError> {
        let sh = 1.0 / self.heightmap_vae.latent_scale;
        let sx = 1.0 / self.texture_vae.latent_scale;
        let hm_img = vae_decode(&self.heightmap_vae, &z_h.map(|v| v * sh))?;
        let tx_img = vae_decode(&self.texture_vae, &z_x.map(|v| v * sx))?;
        (0..z_h.shape()[0])
            .map(|b| {
                Ok((
                    self.heightmap_vae.heightmap_output(&hm_img, b, self.resolution_m)?,
                    texture_output(&tx_img, b)?,
                ))
            })
            .collect()
    }

    /// `n` unconditional pairs.
    pub fn sample(&self, sampler: Sampler, n: usize, rng: &mut impl Rng) -> Result<Vec<(Heightmap, Texture)>, PipelineError> {
        let shape = self.latent_shape(n);
        let (zh, zx) = match sampler {
            Sampler::Ddpm => ddpm_sample(&self.ldm.denoiser, &self.ldm.schedule, &shape, rng)?,
            Sampler::Strided { steps } => strided_sample(&self.ldm.denoiser, &self.ldm.schedule, steps, &shape, rng)?,
        };
        self.decode(&zh, &zx)
    }
}

/// Scaled encoder means of one pair, fused as `[1, 2c, h, w]`.
pub fn encode_pair(heightmap_vae: &VaeModel, texture_vae: &VaeModel, hm: &Heightmap, texture: &Texture) -> Result<Tensor<f32>, PipelineError> {
    if !texture.same_dims(hm) {
        return Err(PipelineError::Input(format!(
            "texture {}x{} vs heightmap {}x{}",
            texture.width(),
            texture.height(),
            hm.width(),
            hm.height()
        )));
    }
    let zh = vae_encode(heightmap_vae, &heightmap_vae.heightmap_input(hm)?, EncodeMode::Mean)?.tensor;
    let zx = vae_encode(texture_vae, &texture_input(texture)?, EncodeMode::Mean)?.tensor;
    let (sh, sx) = (heightmap_vae.latent_scale, texture_vae.latent_scale);
    Ok(fuse_latents(&zh.map(|v| v * sh), &zx.map(|v| v * sx))?)
}

/// A joint model with an optional sketch adapter: the unit of inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub model: JointModel,
    pub adapter: Option<crate::control::ControlAdapter>,
}

impl Generator {
    /// One pair; conditioned on `sketch` when given, else unconditional,
    /// both through the strided sampler.
    pub fn generate(
        &self,
        sketch: Option<&crate::control::ConditionRaster>,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<(Heightmap, Texture), crate::control::ControlError> {
        match sketch {
            Some(c) => {
                let adapter = self
                    .adapter
                    .as_ref()
                    .ok_or_else(|| crate::control::ControlError::Config("no adapter loaded for conditioned generation".into()))?;
                crate::control::conditional_sample(&self.model, adapter, c, steps, rng)
            }
            None => Ok(self.model.sample(Sampler::Strided { steps }, 1, rng)?.remove(0)),
        }
    }
}
