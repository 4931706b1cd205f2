//! Two-level U-Net noise predictor with a timestep MLP and a learned
//! constant context vector added to the timestep embedding.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{conv, group_norm, init_conv, init_group_norm, init_linear, linear};
use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor, Var};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub time_dim: usize,
}

impl DenoiserConfig {
    /// Joint model over two `c`-channel latents.
    pub fn joint(latent_channels: usize) -> Self {
        Self {
            in_channels: 2 * latent_channels,
            out_channels: 2 * latent_channels,
            base_channels: 32,
            time_dim: 64,
        }
    }
}

/// Sinusoidal embedding `[sin(t·ω_k), cos(t·ω_k)]`, `ω_k = 10000^(−k/(D/2))`.
pub fn timestep_embedding(t: &[usize], dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; t.len() * dim];
    for (i, &ti) in t.iter().enumerate() {
        for k in 0..half {
            let w = (-(k as f64) / half as f64 * 10000f64.ln()).exp();
            out[i * dim + k] = (ti as f64 * w).sin() as f32;
            out[i * dim + half + k] = (ti as f64 * w).cos() as f32;
        }
    }
    Tensor::new(&[t.len(), dim], out).expect("positive extents")
}

pub(crate) fn init_res_block(
    ps: &mut ParameterSet<f32>,
    name: &str,
    ch: usize,
    time_dim: usize,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    init_group_norm(ps, &format!("{name}.norm1"), ch)?;
    init_conv(ps, &format!("{name}.conv1"), ch, ch, 3, rng)?;
    init_linear(ps, &format!("{name}.emb"), time_dim, ch, rng)?;
    init_group_norm(ps, &format!("{name}.norm2"), ch)?;
    init_conv(ps, &format!("{name}.conv2"), ch, ch, 3, rng)
}

pub(crate) fn res_block(
    tape: &mut Tape<f32>,
    ps: &ParameterSet<f32>,
    name: &str,
    x: Var,
    emb: Var,
) -> Result<Var, AutodiffError> {
    let h = group_norm(tape, ps, &format!("{name}.norm1"), x)?;
    let h = tape.silu(h)?;
    let h = conv(tape, ps, &format!("{name}.conv1"), h, 1)?;
    let e = tape.silu(emb)?;
    let e = linear(tape, ps, &format!("{name}.emb"), e)?;
    let (n, c) = (tape.shape(e)[0], tape.shape(e)[1]);
    let e = tape.reshape(e, &[n, c, 1, 1])?;
    let h = tape.add(h, e)?;
    let h = group_norm(tape, ps, &format!("{name}.norm2"), h)?;
    let h = tape.silu(h)?;
    let h = conv(tape, ps, &format!("{name}.conv2"), h, 1)?;
    tape.add(x, h)
}

/// Encoder-half features: full-resolution skip, half-resolution skip and
/// the middle block output.
#[derive(Debug, Clone, Copy)]
pub struct EncoderFeatures {
    pub skip1: Var,
    pub skip2: Var,
    pub mid: Var,
}

pub(crate) fn init_encoder(
    ps: &mut ParameterSet<f32>,
    prefix: &str,
    cfg: &DenoiserConfig,
    rng: &mut impl Rng,
) -> Result<(), AutodiffError> {
    let c = cfg.base_channels;
    init_conv(ps, &format!("{prefix}conv_in"), cfg.in_channels, c, 3, rng)?;
    init_res_block(ps, &format!("{prefix}res1"), c, cfg.time_dim, rng)?;
    init_conv(ps, &format!("{prefix}down"), c, 2 * c, 3, rng)?;
    init_res_block(ps, &format!("{prefix}res2"), 2 * c, cfg.time_dim, rng)?;
    init_res_block(ps, &format!("{prefix}mid"), 2 * c, cfg.time_dim, rng)
}

/// `extra` (already at full latent resolution) is added after `conv_in`.
pub(crate) fn encoder(
    tape: &mut Tape<f32>,
    ps: &ParameterSet<f32>,
    prefix: &str,
    x: Var,
    emb: Var,
    extra: Option<Var>,
) -> Result<EncoderFeatures, AutodiffError> {
    let mut h = conv(tape, ps, &format!("{prefix}conv_in"), x, 1)?;
    if let Some(e) = extra {
        h = tape.add(h, e)?;
    }
    let skip1 = res_block(tape, ps, &format!("{prefix}res1"), h, emb)?;
    let h = conv(tape, ps, &format!("{prefix}down"), skip1, 2)?;
    let skip2 = res_block(tape, ps, &format!("{prefix}res2"), h, emb)?;
    let mid = res_block(tape, ps, &format!("{prefix}mid"), skip2, emb)?;
    Ok(EncoderFeatures { skip1, skip2, mid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParameterSet<f32>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut impl Rng) -> Result<Self, DiffusionError> {
        if config.in_channels == 0 || config.out_channels == 0 || config.base_channels == 0 {
            return Err(DiffusionError::Config("channel counts must be positive".into()));
        }
        if config.time_dim < 2 || config.time_dim % 2 != 0 {
            return Err(DiffusionError::Config("time_dim must be even and at least 2".into()));
        }
        let c = config.base_channels;
        let d = config.time_dim;
        let mut ps = ParameterSet::new();
        init_linear(&mut ps, "time.lin1", d, d, rng)?;
        init_linear(&mut ps, "time.lin2", d, d, rng)?;
        ps.insert("context", Tensor::zeros(&[1, d]), true)?;
        init_encoder(&mut ps, "", &config, rng)?;
        init_conv(&mut ps, "merge2", 4 * c, 2 * c, 3, rng)?;
        init_res_block(&mut ps, "res3", 2 * c, d, rng)?;
        init_conv(&mut ps, "up", 2 * c, c, 3, rng)?;
        init_conv(&mut ps, "merge1", 2 * c, c, 3, rng)?;
        init_res_block(&mut ps, "res4", c, d, rng)?;
        init_group_norm(&mut ps, "out.norm", c)?;
        init_conv(&mut ps, "out.conv", c, config.out_channels, 3, rng)?;
        Ok(Self { config, params: ps })
    }

    /// Learned constant added to every timestep embedding.
    pub fn constant_context(&self) -> &Tensor<f32> {
        self.params.value("context").expect("created with the model")
    }

    pub fn time_embedding(&self, tape: &mut Tape<f32>, ps: &ParameterSet<f32>, t: &[usize]) -> Result<Var, AutodiffError> {
        let s = tape.constant(timestep_embedding(t, self.config.time_dim))?;
        let h = linear(tape, ps, "time.lin1", s)?;
        let h = tape.silu(h)?;
        let h = linear(tape, ps, "time.lin2", h)?;
        let ctx = tape.param(ps, "context")?;
        tape.add(h, ctx)
    }

    pub fn encode(
        &self,
        tape: &mut Tape<f32>,
        ps: &ParameterSet<f32>,
        x: Var,
        emb: Var,
    ) -> Result<EncoderFeatures, AutodiffError> {
        encoder(tape, ps, "", x, emb, None)
    }

    /// Decoder half; `residuals` are added to the skips and middle output.
    pub fn decode(
        &self,
        tape: &mut Tape<f32>,
        ps: &ParameterSet<f32>,
        f: EncoderFeatures,
        emb: Var,
        residuals: Option<&EncoderFeatures>,
    ) -> Result<Var, AutodiffError> {
        let (mut skip1, mut skip2, mut mid) = (f.skip1, f.skip2, f.mid);
        if let Some(r) = residuals {
            skip1 = tape.add(skip1, r.skip1)?;
            skip2 = tape.add(skip2, r.skip2)?;
            mid = tape.add(mid, r.mid)?;
        }
        let h = tape.concat_channels(&[mid, skip2])?;
        let h = conv(tape, ps, "merge2", h, 1)?;
        let h = res_block(tape, ps, "res3", h, emb)?;
        let h = tape.upsample2(h)?;
        let h = conv(tape, ps, "up", h, 1)?;
        let h = crop_to(tape, h, tape.shape(skip1)[2], tape.shape(skip1)[3])?;
        let h = tape.concat_channels(&[h, skip1])?;
        let h = conv(tape, ps, "merge1", h, 1)?;
        let h = res_block(tape, ps, "res4", h, emb)?;
        let h = group_norm(tape, ps, "out.norm", h)?;
        let h = tape.silu(h)?;
        conv(tape, ps, "out.conv", h, 1)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<f32>,
        ps: &ParameterSet<f32>,
        x: Var,
        t: &[usize],
        residuals: Option<&EncoderFeatures>,
    ) -> Result<Var, AutodiffError> {
        let emb = self.time_embedding(tape, ps, t)?;
        let f = self.encode(tape, ps, x, emb)?;
        self.decode(tape, ps, f, emb, residuals)
    }

    pub fn check_input(&self, z: &Tensor<f32>) -> Result<(), DiffusionError> {
        match z.shape() {
            [_, c, h, w] if *c == self.config.in_channels && *h >= 2 && *w >= 2 => Ok(()),
            s => Err(DiffusionError::Shape(format!(
                "denoiser expects [n, {}, h, w], got {s:?}",
                self.config.in_channels
            ))),
        }
    }
}

fn crop_to(tape: &mut Tape<f32>, x: Var, h: usize, w: usize) -> Result<Var, AutodiffError> {
    let s = tape.shape(x);
    if s[2] == h && s[3] == w {
        Ok(x)
    } else {
        Err(AutodiffError::Shape(format!(
            "odd latent sizes are not supported ({}x{} vs {h}x{w})",
            s[2], s[3]
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPlacement {
    /// Original channels stay first; new ones are appended.
    Leading,
    /// Original channels move to the end; new ones are prepended.
    Trailing,
}

/// Widens the input and output channels of a trained denoiser.
///
/// Original weights are copied; new weights are drawn from
/// `N(0, init_scale²)` and new output biases start at zero.
pub fn extend_channels(
    model: &Denoiser,
    old_in: usize,
    old_out: usize,
    new_in: usize,
    new_out: usize,
    init_scale: f64,
    placement: ChannelPlacement,
    rng: &mut impl Rng,
) -> Result<Denoiser, DiffusionError> {
    let cfg = model.config;
    if cfg.in_channels != old_in || cfg.out_channels != old_out {
        return Err(DiffusionError::Shape(format!(
            "model has {}/{} channels, caller says {old_in}/{old_out}",
            cfg.in_channels, cfg.out_channels
        )));
    }
    if new_in < old_in || new_out < old_out {
        return Err(DiffusionError::Config("cannot shrink channel counts".into()));
    }
    if !(init_scale >= 0.0) {
        return Err(DiffusionError::Config("init_scale must be non-negative".into()));
    }
    let normal = Normal::new(0.0, init_scale).map_err(|e| DiffusionError::Config(e.to_string()))?;
    let mut draw = || -> f32 { normal.sample(rng) as f32 };
    let place = |old: usize, new: usize, i: usize| -> Option<usize> {
        match placement {
            ChannelPlacement::Leading => (i < old).then_some(i),
            ChannelPlacement::Trailing => i.checked_sub(new - old),
        }
    };

    let w_in = model.params.value("conv_in.weight")?;
    let (cout, _, k, _) = (w_in.shape()[0], w_in.shape()[1], w_in.shape()[2], w_in.shape()[3]);
    let kk = k * k;
    if w_in.shape()[1] != old_in {
        return Err(DiffusionError::Shape("conv_in weight disagrees with config".into()));
    }
    let mut data = Vec::with_capacity(cout * new_in * kk);
    for o in 0..cout {
        for i in 0..new_in {
            match place(old_in, new_in, i) {
                Some(src) => data.extend_from_slice(&w_in.data()[(o * old_in + src) * kk..(o * old_in + src + 1) * kk]),
                None => data.extend((0..kk).map(|_| draw())),
            }
        }
    }
    let new_w_in = Tensor::new(&[cout, new_in, k, k], data)?;

    let w_out = model.params.value("out.conv.weight")?;
    let b_out = model.params.value("out.conv.bias")?;
    let cin = w_out.shape()[1];
    if w_out.shape()[0] != old_out {
        return Err(DiffusionError::Shape("out.conv weight disagrees with config".into()));
    }
    let per = cin * kk;
    let mut wdata = Vec::with_capacity(new_out * per);
    let mut bdata = Vec::with_capacity(new_out);
    for o in 0..new_out {
        match place(old_out, new_out, o) {
            Some(src) => {
                wdata.extend_from_slice(&w_out.data()[src * per..(src + 1) * per]);
                bdata.push(b_out.data()[src]);
            }
            None => {
                wdata.extend((0..per).map(|_| draw()));
                bdata.push(0.0);
            }
        }
    }

    let mut params = ParameterSet::new();
    for (name, p) in model.params.iter() {
        let value = match name {
            "conv_in.weight" => new_w_in.clone(),
            "out.conv.weight" => Tensor::new(&[new_out, cin, k, k], wdata.clone())?,
            "out.conv.bias" => Tensor::new(&[new_out], bdata.clone())?,
            _ => p.value.clone(),
        };
        params.insert(name, value, p.trainable)?;
    }
    Ok(Denoiser {
        config: DenoiserConfig {
            in_channels: new_in,
            out_channels: new_out,
            ..cfg
        },
        params,
    })
}
