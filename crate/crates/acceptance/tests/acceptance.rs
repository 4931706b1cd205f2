//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test -p terrain-acceptance --test acceptance [-- FILTER...]` runs
//! every check whose name contains one of the filters. Setting
//! `TERRAFUSION_ACCEPTANCE_CACHE` to a directory keeps trained models
//! between runs, keyed by their config hash.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "support/contract.rs"]
mod contract;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use terrain_diffusion::autodiff::Tensor;
use terrain_diffusion::checkpoint::{config_hash, sha256_hex, Checkpoint};
use terrain_diffusion::control::{
    conditional_sample, init_adapter, train_control, ConditionKind, ConditionRaster, ConditionedPredictor, ControlAdapter,
    ControlConfig,
};
use terrain_diffusion::diffusion::{
    extend_channels, forward_diffuse, gaussian, make_schedule, ChannelPlacement, DenoiserConfig, LdmConfig, LdmModel,
    NoisePredictor, ScheduleConfig,
};
use terrain_diffusion::geomorph::{extract_sketch, fill_grid, flow_accumulation_d8, SketchConfig, FILL_EPSILON_M};
use terrain_diffusion::latent::{texture_input, train_vae, vae_decode, Modality, VaeConfig, VaeModel};
use terrain_diffusion::metrics::{
    corr_stats, extract_features, frechet_distance, frechet_from_moments, pair_correlations, pairing_permutation_test,
    pearson, sign_test, VaeFeatures,
};
use terrain_diffusion::pipeline::{encode_pair, JointModel, Sampler};
use terrain_diffusion::raster::io::texture_to_png;
use terrain_diffusion::raster::{denormalize_height, normalize_height, Heightmap, NormalizationSpec, Texture};
use terrain_diffusion::seeding::{derive_seed, substream};
use terrain_diffusion::synthterra::{generate_pair, SynthConfig, SyntheticPair};
use terrain_diffusion::training::TrainConfig;

type Outcome = Result<(bool, String), String>;

const SEED: u64 = 2024;
const N_TRAIN: usize = 512;
const N_TEST: usize = 64;
const N_GENERATED: usize = 128;
const N_SKETCH_SAMPLES: usize = 32;
const GENERATION_STEPS: usize = 100;
const CONDITIONAL_STEPS: usize = 20;
const PERMUTATIONS: usize = 999;
const VAE_BUDGET_S: f64 = 30.0 * 60.0;
const JOINT_BUDGET_S: f64 = 2.0 * 3600.0;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- fast checks

fn autodiff_gradients() -> Outcome {
    use common::ops::{case, ALL_KINDS, STEP, TOL};
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut cases = 0;
    for kind in ALL_KINDS {
        for seed in 0..20 {
            let (inputs, f) = case(kind, seed * 31 + kind as u64);
            let e = common::gradcheck(f, &inputs, STEP);
            cases += 1;
            worst = worst.max(e);
            if !(e < TOL) {
                failures.push(format!("{kind:?}#{seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        failures.is_empty() && secs < 60.0,
        format!(
            "{} op kinds, {cases} random shapes, worst relative error {worst:.2e} (< {TOL:e}), {secs:.1} s (< 60 s){}",
            ALL_KINDS.len(),
            if failures.is_empty() { String::new() } else { format!(", failing {failures:?}") }
        ),
    ))
}

fn forward_process_statistics() -> Outcome {
    let n = 100_000usize;
    let z0v = 1.5f64;
    let mut notes = Vec::new();
    let mut ok = true;
    for &ab in &[0.9f64, 0.5, 0.1] {
        let s = make_schedule(1, 1.0 - ab, 1.0 - ab).map_err(err)?;
        let z0 = Tensor::full(&[n, 1, 1, 1], z0v as f32);
        let eps = gaussian(&[n, 1, 1, 1], &mut substream(SEED, &format!("forward/{ab}")));
        let zt = forward_diffuse(&z0, &vec![1; n], &eps, &s).map_err(err)?;
        let nf = n as f64;
        let mean = zt.data().iter().map(|&v| v as f64).sum::<f64>() / nf;
        let var = zt.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let (want_mean, want_var) = (ab.sqrt() * z0v, 1.0 - ab);
        let se_mean = (want_var / nf).sqrt();
        let se_var = want_var * (2.0 / (nf - 1.0)).sqrt();
        let (dm, dv) = ((mean - want_mean).abs() / se_mean, (var - want_var).abs() / se_var);
        ok &= dm < 3.0 && dv < 3.0;
        notes.push(format!("alpha_bar {ab}: mean {dm:.2} SE, var {dv:.2} SE"));
    }
    Ok((ok, format!("10^5 samples each; {}", notes.join("; "))))
}

fn fill_and_d8_oracles() -> Outcome {
    use common::dem::{fixpoint_fill, oracle_accumulation, oracle_direction, random_grid};
    let start = Instant::now();
    let mut r = rng(derive_seed(SEED, "dem"));
    let mut fill_bad = 0;
    for i in 0..1000 {
        let dem = random_grid(&mut r, 16, 16, i % 2 == 0);
        if fill_grid(&dem, 0.0) != fixpoint_fill(&dem) {
            fill_bad += 1;
        }
    }
    let mut d8_bad = 0;
    for i in 0..1000 {
        let dem = fill_grid(&random_grid(&mut r, 12, 12, i % 2 == 0), FILL_EPSILON_M);
        let (flow, acc) = flow_accumulation_d8(&dem).map_err(err)?;
        let dirs_ok = (0..12).all(|y| {
            (0..12).all(|x| flow.directions.get(x, y).map(|d| d as usize) == oracle_direction(&dem, x, y))
        });
        if !dirs_ok || acc != oracle_accumulation(&dem) {
            d8_bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        fill_bad == 0 && d8_bad == 0 && secs < 60.0,
        format!("fill mismatches {fill_bad}/1000 (16x16), D8 mismatches {d8_bad}/1000 (12x12), {secs:.1} s (< 60 s)"),
    ))
}

fn sketch_determinism() -> Outcome {
    let cfg = SynthConfig {
        seed: derive_seed(SEED, "sketch-determinism"),
        ..SynthConfig::default()
    };
    let sk = SketchConfig::default();
    let maps: Vec<Heightmap> = (0..8).map(|i| generate_pair(&cfg, &sk, i).map(|p| p.heightmap)).collect::<Result<_, _>>().map_err(err)?;
    let render = |threads: usize| -> Result<Vec<Vec<u8>>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
        pool.install(|| {
            use rayon::prelude::*;
            maps.par_iter()
                .map(|hm| {
                    let s = extract_sketch(hm, &sk).map_err(err)?;
                    texture_to_png(s.texture()).map_err(err)
                })
                .collect()
        })
    };
    let runs = [render(1)?, render(1)?, render(4)?, render(4)?];
    let same = runs.iter().all(|r| *r == runs[0]);
    Ok((same, format!("8 heightmaps, 2 runs each at 1 and 4 threads, byte-identical: {same}")))
}

fn normalization_round_trip() -> Outcome {
    let n = 1000;
    let mut r = rng(derive_seed(SEED, "normalize"));
    // drawn in f64 so the f32 values use their full mantissa
    let elevations: Vec<f32> = (0..n * n).map(|_| r.random_range(0.0..=2000.0f64) as f32).collect();
    let hm = Heightmap::new(n, n, elevations, 25.0).map_err(err)?;
    let spec = NormalizationSpec::new(2000.0).map_err(err)?;
    let norm = normalize_height(&hm, &spec).map_err(err)?;
    let back = denormalize_height(&norm, n, n, 25.0, &spec).map_err(err)?;
    let worst = hm
        .elevations()
        .iter()
        .zip(back.elevations())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .fold(0.0, f64::max);
    Ok((worst <= 1e-3, format!("10^6 elevations in [0, 2000] m, worst error {worst:.2e} m (<= 1e-3)")))
}

fn production_ldm_config() -> LdmConfig {
    LdmConfig {
        denoiser: DenoiserConfig::joint(4),
        schedule: ScheduleConfig::default(),
        train: TrainConfig {
            epochs: 80,
            batch_size: 8,
            lr: 2e-4,
            seed: derive_seed(SEED, "ldm"),
            checkpoint_every: 0,
        },
    }
}

fn random_sketch(r: &mut impl Rng, px: usize) -> Texture {
    let colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [0, 0, 0], [0, 0, 0], [0, 0, 0]];
    Texture::from_fn(px, px, |_, _| colors[r.random_range(0..colors.len())])
}

fn adapter_zero_init() -> Outcome {
    let mut base = LdmModel::new(production_ldm_config(), &mut rng(1)).map_err(err)?;
    let ctx = gaussian(&[1, base.denoiser.config.time_dim], &mut rng(2)).map(|v| 0.1 * v);
    base.denoiser.params.set("context", ctx).map_err(err)?;
    let adapter = init_adapter(&base.denoiser, ControlConfig::new(ConditionKind::Sketch, 4), &mut rng(3)).map_err(err)?;
    let mut r = rng(derive_seed(SEED, "zero-init"));
    let mut worst: f32 = 0.0;
    for _ in 0..10 {
        let z = gaussian(&[2, 8, 16, 16], &mut r);
        let t = [r.random_range(1..=1000), r.random_range(1..=1000)];
        let cond = ConditionRaster::new(random_sketch(&mut r, 64), ConditionKind::Sketch).map_err(err)?;
        let conditioned = ConditionedPredictor::new(&base.denoiser, &adapter, cond.to_tensor()).map_err(err)?;
        let a = conditioned.predict(&z, &t).map_err(err)?;
        let b = base.denoiser.predict(&z, &t).map_err(err)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok((worst < 1e-6, format!("10 random sketches, worst max abs diff {worst:.2e} (< 1e-6)")))
}

fn channel_extension() -> Outcome {
    let src = terrain_diffusion::diffusion::Denoiser::new(
        DenoiserConfig {
            in_channels: 4,
            out_channels: 4,
            base_channels: 16,
            time_dim: 32,
        },
        &mut rng(derive_seed(SEED, "extension/src")),
    )
    .map_err(err)?;
    let mut notes = Vec::new();
    let mut ok = true;
    for placement in [ChannelPlacement::Leading, ChannelPlacement::Trailing] {
        let ext = extend_channels(&src, 4, 4, 8, 8, 0.0, placement, &mut rng(derive_seed(SEED, "extension/new"))).map_err(err)?;
        let z = gaussian(&[3, 4, 16, 16], &mut rng(derive_seed(SEED, "extension/z")));
        let pad = Tensor::zeros(&[3, 4, 16, 16]);
        let (input, keep) = match placement {
            ChannelPlacement::Leading => (Tensor::concat_channels(&[&z, &pad]).map_err(err)?, 0),
            ChannelPlacement::Trailing => (Tensor::concat_channels(&[&pad, &z]).map_err(err)?, 4),
        };
        let t = [3, 400, 999];
        let want = src.predict(&z, &t).map_err(err)?;
        let got = ext.predict(&input, &t).map_err(err)?.slice_channels(keep, 4).map_err(err)?;
        let exact = got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= exact;
        notes.push(format!("{placement:?} bitwise {exact}"));
    }
    Ok((ok, format!("4 -> 8 channels, zero-padded inputs: {}", notes.join(", "))))
}

fn metrics_oracles() -> Outcome {
    let mut r = rng(derive_seed(SEED, "metrics"));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(3..200);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = a.iter().map(|&x| 0.3 * x + r.random_range(-3.0..3.0)).collect();
        // textbook raw-sums form
        let nf = n as f64;
        let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
        let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let (saa, sbb) = (a.iter().map(|x| x * x).sum::<f64>(), b.iter().map(|x| x * x).sum::<f64>());
        let direct = (nf * sab - sa * sb) / ((nf * saa - sa * sa).sqrt() * (nf * sbb - sb * sb).sqrt());
        worst = worst.max((pearson(&a, &b).map_err(err)? - direct).abs());
    }
    let s = corr_stats(&[0.0, 0.1, 0.2, 0.3, 0.4]).map_err(err)?;
    let stats_err = [
        (s.mean, 0.2),
        (s.std, 0.025f64.sqrt()),
        (s.q25, 0.1),
        (s.q50, 0.2),
        (s.q75, 0.3),
        (s.iqr, 0.2),
    ]
    .iter()
    .map(|(g, w)| (g - w).abs())
    .fold(0.0, f64::max);
    use nalgebra::{DMatrix, DVector};
    let f = frechet_from_moments(
        &DVector::from_vec(vec![0.0]),
        &DMatrix::from_vec(1, 1, vec![1.0]),
        &DVector::from_vec(vec![3.0]),
        &DMatrix::from_vec(1, 1, vec![1.0]),
    )
    .map_err(err)?;
    let ok = worst < 1e-12 && stats_err < 1e-12 && (f - 9.0).abs() < 1e-9;
    Ok((
        ok,
        format!(
            "pearson vs direct formula {worst:.1e} (< 1e-12), 5-element stats fixture {stats_err:.1e}, 1-D frechet {f} (9.0 +- 1e-9)"
        ),
    ))
}

// --------------------------------------------------------- trained pipeline

struct Trained {
    train: Vec<SyntheticPair>,
    test: Vec<SyntheticPair>,
    hvae_2000: VaeModel,
    hvae_8000: VaeModel,
    vae_seconds: (f64, f64),
    xvae: VaeModel,
    ldm: LdmModel,
    joint_seconds: f64,
    adapter: Option<ControlAdapter>,
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("TERRAFUSION_ACCEPTANCE_CACHE").map(PathBuf::from)
}

/// Loads `name` from the cache when a file for this config hash exists,
/// otherwise trains it and stores it. Returns the model and training seconds.
fn cached<T, C: serde::Serialize>(
    name: &str,
    config: &C,
    train: impl FnOnce() -> Result<T, String>,
    save: impl Fn(&T, &Path) -> Result<(), String>,
    load: impl Fn(&Path) -> Result<T, String>,
) -> Result<(T, f64), String> {
    let path = cache_dir().map(|d| d.join(format!("{name}-{}.tfck", &config_hash(config)[..16])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let seconds: f64 = std::fs::read_to_string(p.with_extension("secs")).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0.0);
        eprintln!("  loaded cached {name}");
        return Ok((load(p)?, seconds));
    }
    eprintln!("  training {name}...");
    let start = Instant::now();
    let model = train()?;
    let seconds = start.elapsed().as_secs_f64();
    eprintln!("  {name} trained in {seconds:.0} s");
    if let Some(p) = path {
        std::fs::create_dir_all(p.parent().unwrap()).map_err(err)?;
        save(&model, &p)?;
        std::fs::write(p.with_extension("secs"), seconds.to_string()).map_err(err)?;
    }
    Ok((model, seconds))
}

fn model_hash(ck: &Checkpoint) -> String {
    sha256_hex(&ck.to_bytes())
}

fn vae_config(modality: Modality, stream: &str) -> VaeConfig {
    VaeConfig {
        latent_channels: 4,
        downsample: 4,
        base_channels: 16,
        beta: 1e-6,
        train: TrainConfig {
            epochs: 12,
            batch_size: 8,
            lr: 5e-4,
            seed: derive_seed(SEED, stream),
            checkpoint_every: 0,
        },
        ..VaeConfig::new(modality)
    }
}

fn train_heightmap_vae(h_max: f64, pairs: &[SyntheticPair]) -> Result<(VaeModel, f64), String> {
    // identical seed and budget for every h_max
    let cfg = vae_config(Modality::Heightmap { h_max }, "vae/heightmap");
    cached(
        &format!("vae_h{h_max}"),
        &cfg,
        || {
            let probe = VaeModel::new(cfg.clone(), &mut rng(0)).map_err(err)?;
            let images: Vec<_> = pairs.iter().map(|p| probe.heightmap_input(&p.heightmap)).collect::<Result<_, _>>().map_err(err)?;
            train_vae(cfg.clone(), &images, None).map_err(err)
        },
        |m, p| m.save(p).map(|_| ()).map_err(err),
        |p| VaeModel::load(p).map_err(err),
    )
}

fn adapter_config() -> ControlConfig {
    ControlConfig {
        embed_channels: 16,
        dropout: 0.1,
        train: TrainConfig {
            epochs: 40,
            batch_size: 8,
            lr: 1e-4,
            seed: derive_seed(SEED, "control"),
            checkpoint_every: 0,
        },
        ..ControlConfig::new(ConditionKind::Sketch, 4)
    }
}

impl Trained {
    fn build(with_adapter: bool) -> Result<Self, String> {
        let synth = SynthConfig {
            seed: derive_seed(SEED, "dataset"),
            ..SynthConfig::default()
        };
        let sk = SketchConfig::default();
        let all: Vec<SyntheticPair> = {
            use rayon::prelude::*;
            (0..N_TRAIN + N_TEST).into_par_iter().map(|i| generate_pair(&synth, &sk, i)).collect::<Result<_, _>>().map_err(err)?
        };
        let (train, test) = (all[..N_TRAIN].to_vec(), all[N_TRAIN..].to_vec());

        let (hvae_2000, s2000) = train_heightmap_vae(2000.0, &train)?;
        let (hvae_8000, s8000) = train_heightmap_vae(8000.0, &train)?;
        let xcfg = vae_config(Modality::Texture, "vae/texture");
        let (xvae, sx) = cached(
            "vae_texture",
            &xcfg,
            || {
                let images: Vec<_> = train.iter().map(|p| texture_input(&p.texture)).collect::<Result<_, _>>().map_err(err)?;
                train_vae(xcfg.clone(), &images, None).map_err(err)
            },
            |m, p| m.save(p).map(|_| ()).map_err(err),
            |p| VaeModel::load(p).map_err(err),
        )?;
        let latents = || -> Result<Vec<Tensor<f32>>, String> {
            train.iter().map(|p| encode_pair(&hvae_2000, &xvae, &p.heightmap, &p.texture).map_err(err)).collect()
        };
        let lcfg = production_ldm_config();
        let key = (&lcfg, model_hash(&hvae_2000.to_checkpoint(None)), model_hash(&xvae.to_checkpoint(None)));
        let (ldm, sl) = cached(
            "ldm",
            &key,
            || terrain_diffusion::diffusion::train_ldm(lcfg.clone(), &latents()?, None, None).map_err(err),
            |m, p| m.save(p).map(|_| ()).map_err(err),
            |p| LdmModel::load(p).map_err(err),
        )?;
        let adapter = if with_adapter {
            let ccfg = adapter_config();
            let key = (&ccfg, model_hash(&ldm.to_checkpoint(None)));
            let (a, _) = cached(
                "adapter",
                &key,
                || {
                    let conds: Vec<Tensor<f32>> = train.iter().map(|p| ConditionRaster::sketch(&p.sketch).to_tensor()).collect();
                    train_control(&ldm, ccfg.clone(), &latents()?, &conds, None).map_err(err)
                },
                |m, p| m.save(p).map(|_| ()).map_err(err),
                |p| ControlAdapter::load(p).map_err(err),
            )?;
            Some(a)
        } else {
            None
        };
        Ok(Self {
            train,
            test,
            hvae_2000,
            hvae_8000,
            vae_seconds: (s2000, s8000),
            joint_seconds: s2000 + sx + sl,
            xvae,
            ldm,
            adapter,
        })
    }

    fn joint(&self, ldm: LdmModel) -> Result<JointModel, String> {
        JointModel::new(self.hvae_2000.clone(), self.xvae.clone(), ldm, 64, 25.0).map_err(err)
    }

    /// `n` pairs in chunks of 16, one sub-stream per chunk.
    fn generate(&self, model: &JointModel, n: usize, steps: usize, stream: &str) -> Result<Vec<(Heightmap, Texture)>, String> {
        let mut out = Vec::with_capacity(n);
        for (k, start) in (0..n).step_by(16).enumerate() {
            let m = (n - start).min(16);
            let mut r = substream(SEED, &format!("{stream}/{k}"));
            out.extend(model.sample(Sampler::Strided { steps }, m, &mut r).map_err(err)?);
        }
        Ok(out)
    }
}

fn reconstruction_mse_m(vae: &VaeModel, maps: &[&Heightmap]) -> Result<f64, String> {
    let mut total = 0.0;
    let mut count = 0usize;
    for hm in maps {
        let x = vae.heightmap_input(hm).map_err(err)?;
        let (mu, _) = vae.moments(&x).map_err(err)?;
        let out = vae.heightmap_output(&vae_decode(vae, &mu).map_err(err)?, 0, hm.resolution_m()).map_err(err)?;
        for (&a, &b) in hm.elevations().iter().zip(out.elevations()) {
            total += (a as f64 - b as f64).powi(2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn vae_normalization(t: &Trained) -> Outcome {
    let maps: Vec<&Heightmap> = t.test.iter().map(|p| &p.heightmap).collect();
    let m2 = reconstruction_mse_m(&t.hvae_2000, &maps)?;
    let m8 = reconstruction_mse_m(&t.hvae_8000, &maps)?;
    let reduction = 1.0 - m2 / m8;
    let secs = t.vae_seconds.0 + t.vae_seconds.1;
    Ok((
        reduction >= 0.25 && secs <= VAE_BUDGET_S,
        format!(
            "held-out MSE {m2:.1} m^2 (H_max 2000) vs {m8:.1} m^2 (H_max 8000), {:.0}% lower (>= 25%), training {:.1} min (<= 30)",
            100.0 * reduction,
            secs / 60.0
        ),
    ))
}

fn joint_correlation(t: &Trained) -> Outcome {
    let start = Instant::now();
    let model = t.joint(t.ldm.clone())?;
    let generated = t.generate(&model, N_GENERATED, GENERATION_STEPS, "generate")?;
    let train_pairs: Vec<(Heightmap, Texture)> = t.train.iter().map(|p| (p.heightmap.clone(), p.texture.clone())).collect();
    let train_mean = mean(&pair_correlations(&train_pairs).map_err(err)?);
    let test = pairing_permutation_test(&generated, PERMUTATIONS, &mut substream(SEED, "permutation")).map_err(err)?;
    let secs = t.joint_seconds + start.elapsed().as_secs_f64();
    let closer = (test.aligned_mean - train_mean).abs() < (test.shuffled_mean - train_mean).abs();
    let ok = test.aligned_mean > test.shuffled_mean && test.p_value < 0.05 && closer && secs <= JOINT_BUDGET_S;
    Ok((
        ok,
        format!(
            "{N_GENERATED} generated: mean r {:.3} vs shuffled {:.3}, p = {:.4} (< 0.05), training-set mean {train_mean:.3}, generated closer: {closer}, {:.1} min (<= 120)",
            test.aligned_mean,
            test.shuffled_mean,
            test.p_value,
            secs / 60.0
        ),
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn frechet_sanity(t: &Trained) -> Outcome {
    let extractor = VaeFeatures::new(&t.xvae).map_err(err)?;
    let train: Vec<Texture> = t.train.iter().map(|p| p.texture.clone()).collect();
    let untrained_ldm = LdmModel::new(production_ldm_config(), &mut substream(SEED, "untrained")).map_err(err)?;
    let untrained: Vec<Texture> = t
        .generate(&t.joint(untrained_ldm)?, N_GENERATED, CONDITIONAL_STEPS, "untrained")?
        .into_iter()
        .map(|p| p.1)
        .collect();
    let f_train = extract_features(&train, &extractor).map_err(err)?;
    let f_untrained = extract_features(&untrained, &extractor).map_err(err)?;
    let half = f_train.len() / 2;
    let halves = frechet_distance(&f_train[..half], &f_train[half..]).map_err(err)?;
    let vs_untrained = frechet_distance(&f_train, &f_untrained).map_err(err)?;
    let itself = frechet_distance(&f_train, &f_train).map_err(err)?;
    Ok((
        halves < vs_untrained && itself < 1e-6,
        format!(
            "{}: train halves {halves:.4} vs untrained-model samples {vs_untrained:.4} (halves must be lower); self {itself:.1e} (< 1e-6)",
            extractor_name(&extractor)
        ),
    ))
}

fn extractor_name(e: &VaeFeatures) -> String {
    use terrain_diffusion::metrics::FeatureExtractor;
    format!("{} ({}-dim)", e.name(), e.dim())
}

/// Held-out sketch with the most pixels of its scarcer class.
fn test_sketch(t: &Trained) -> Result<(ConditionRaster, Vec<usize>, Vec<usize>), String> {
    let classify = |s: &Texture| {
        let (mut red, mut green) = (Vec::new(), Vec::new());
        for y in 0..s.height() {
            for x in 0..s.width() {
                match s.pixel(x, y) {
                    [255, 0, _] => red.push(y * s.width() + x),
                    [0, 255, _] => green.push(y * s.width() + x),
                    _ => {}
                }
            }
        }
        (red, green)
    };
    let best = t
        .test
        .iter()
        .max_by_key(|p| {
            let (r, g) = classify(p.sketch.texture());
            r.len().min(g.len())
        })
        .ok_or("empty test split")?;
    let (red, green) = classify(best.sketch.texture());
    Ok((ConditionRaster::sketch(&best.sketch), red, green))
}

fn sketch_directionality(t: &Trained) -> Outcome {
    let adapter = t.adapter.as_ref().ok_or("adapter not trained")?;
    let model = t.joint(t.ldm.clone())?;
    let (cond, red, green) = test_sketch(t)?;
    let mut successes = 0;
    let mut gaps = Vec::new();
    for i in 0..N_SKETCH_SAMPLES {
        let (hm, _) = conditional_sample(&model, adapter, &cond, CONDITIONAL_STEPS, &mut substream(SEED, &format!("sketch/{i}")))
            .map_err(err)?;
        let e = hm.elevations();
        let avg = |idx: &[usize]| idx.iter().map(|&k| e[k] as f64).sum::<f64>() / idx.len() as f64;
        let gap = avg(&green) - avg(&red);
        if gap > 0.0 {
            successes += 1;
        }
        gaps.push(gap);
    }
    let p = sign_test(successes, N_SKETCH_SAMPLES);
    Ok((
        p < 0.05,
        format!(
            "{successes}/{N_SKETCH_SAMPLES} samples lower under red ({} px) than green ({} px), mean gap {:.1} m, sign test p = {p:.4} (< 0.05)",
            red.len(),
            green.len(),
            mean(&gaps)
        ),
    ))
}

// ------------------------------------------------------------------- driver

struct Check {
    name: &'static str,
    heavy: bool,
    run: fn(Option<&Trained>) -> Outcome,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: Vec<Check> = vec![
        Check { name: "autodiff gradient suite", heavy: false, run: |_| autodiff_gradients() },
        Check { name: "forward-process statistics", heavy: false, run: |_| forward_process_statistics() },
        Check { name: "depression fill and D8 oracles", heavy: false, run: |_| fill_and_d8_oracles() },
        Check { name: "sketch pipeline determinism", heavy: false, run: |_| sketch_determinism() },
        Check { name: "height normalization round trip", heavy: false, run: |_| normalization_round_trip() },
        Check { name: "adapter zero-init equivalence", heavy: false, run: |_| adapter_zero_init() },
        Check { name: "channel extension equivalence", heavy: false, run: |_| channel_extension() },
        Check { name: "heightmap VAE normalization range", heavy: true, run: |t| vae_normalization(t.unwrap()) },
        Check { name: "joint correlation at desk scale", heavy: true, run: |t| joint_correlation(t.unwrap()) },
        Check { name: "frechet sanity", heavy: true, run: |t| frechet_sanity(t.unwrap()) },
        Check { name: "sketch conditioning directionality", heavy: true, run: |t| sketch_directionality(t.unwrap()) },
        Check { name: "metrics oracles", heavy: false, run: |_| metrics_oracles() },
        Check { name: "service contract", heavy: false, run: |_| contract::run() },
    ];
    let selected: Vec<&Check> = checks
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str())))
        .collect();
    let needs_adapter = selected.iter().any(|c| c.name.contains("directionality"));
    let trained = if selected.iter().any(|c| c.heavy) {
        eprintln!("building the shared desk-scale models");
        match Trained::build(needs_adapter) {
            Ok(t) => Some(Ok(t)),
            Err(e) => Some(Err(e)),
        }
    } else {
        None
    };
    let mut failed = 0;
    for c in &selected {
        let start = Instant::now();
        let outcome = match (&trained, c.heavy) {
            (Some(Err(e)), true) => Err(format!("training failed: {e}")),
            (Some(Ok(t)), true) => (c.run)(Some(t)),
            _ => (c.run)(None),
        };
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" }, c.name);
    }
    println!("acceptance: {}/{} passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
