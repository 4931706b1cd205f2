//! The `terrafusion` command line: one subcommand per pipeline stage.
//!
//! Every command reads a JSON [`PipelineConfig`], applies flag overrides,
//! writes its artifacts atomically under the output directory and records a
//! run manifest in `manifests/{command}.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use terrain_diffusion::checkpoint::{config_hash, sha256_hex, FORMAT_VERSION};
use terrain_diffusion::config::{ArtifactPaths, ConfigError, PipelineConfig};
use terrain_diffusion::control::{train_control, ConditionKind, ConditionRaster, ControlAdapter, ControlError};
use terrain_diffusion::diffusion::{train_ldm, DiffusionError, LdmModel};
use terrain_diffusion::fsutil::write_atomic;
use terrain_diffusion::geomorph::extract_sketch;
use terrain_diffusion::latent::{texture_input, train_vae, LatentError, Modality, VaeModel};
use terrain_diffusion::metrics::{evaluate_model, MetricsError, VaeFeatures};
use terrain_diffusion::pipeline::{encode_pair, Generator, JointModel, PipelineError, Sampler};
use terrain_diffusion::raster::io::{read_pair_dir, read_texture_png, write_pair_dir, write_texture_png, StoredPair};
use terrain_diffusion::raster::{normalize_height, quantize_two_color, NormalizationSpec, RasterError, Texture};
use terrain_diffusion::seeding::substream;
use terrain_diffusion::synthterra::{build_synthetic_dataset, load_dataset, LoadedPair, SynthError, MANIFEST_FILE};
use terrain_diffusion::autodiff::Tensor;

pub const THREADS_ENV: &str = "TERRAFUSION_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{what} not found at {}; {hint}", path.display())]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Service(#[from] terrain_service::ServiceError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for problems the user can fix, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Missing { .. } | CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "terrafusion", version, about = "Joint heightmap and texture generation")]
pub struct Cli {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, samples and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pair count for dataset-build and sample.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Sampling steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Sketch PNG to condition sampling on.
    #[arg(long, global = true)]
    pub sketch: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the synthetic paired dataset.
    DatasetBuild,
    /// Extract a sketch PNG from every dataset heightmap.
    SketchExtract,
    /// Train the heightmap and texture autoencoders.
    TrainVae,
    /// Train the joint latent denoiser.
    TrainLdm,
    /// Train the sketch adapter on a frozen denoiser.
    TrainControl,
    /// Generate pairs into `samples/`.
    Sample,
    /// Compare generated pairs against a reference set.
    Evaluate {
        /// Generated pairs; defaults to the output's `samples/`.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Reference pairs; defaults to the dataset directory.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run the HTTP generation service.
    Serve,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::DatasetBuild => "dataset-build",
            Command::SketchExtract => "sketch-extract",
            Command::TrainVae => "train-vae",
            Command::TrainLdm => "train-ldm",
            Command::TrainControl => "train-control",
            Command::Sample => "sample",
            Command::Evaluate { .. } => "evaluate",
            Command::Serve => "serve",
        }
    }
}

/// Records what a command produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: PipelineConfig,
    /// Artifact path relative to the output directory, to its sha256.
    pub artifacts: BTreeMap<String, String>,
}

/// Config file (or defaults) with flag overrides applied, validated and
/// with stage seeds derived from the run seed.
pub fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.steps {
        cfg.sampling.steps = s;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = load_config(&cli)?;
    let paths = cfg.artifacts();
    let written = match &cli.command {
        Command::DatasetBuild => dataset_build(&cli, &cfg)?,
        Command::SketchExtract => sketch_extract(&cfg)?,
        Command::TrainVae => train_vaes(&cfg)?,
        Command::TrainLdm => train_denoiser(&cfg)?,
        Command::TrainControl => train_adapter(&cfg)?,
        Command::Sample => sample(&cli, &cfg)?,
        Command::Evaluate { samples, reference } => evaluate(&cfg, samples.as_deref(), reference.as_deref())?,
        Command::Serve => return serve(&cfg),
    };
    write_manifest(cli.command.name(), &cfg, &paths, &written)
}

fn write_manifest(command: &str, cfg: &PipelineConfig, paths: &ArtifactPaths, written: &[PathBuf]) -> Result<(), CliError> {
    let mut artifacts = BTreeMap::new();
    for p in written {
        let key = p.strip_prefix(&paths.root).unwrap_or(p).to_string_lossy().into_owned();
        artifacts.insert(key, sha256_hex(&std::fs::read(p)?));
    }
    let versions = BTreeMap::from([
        ("terrafusion".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("checkpoint_format".to_string(), FORMAT_VERSION.to_string()),
    ]);
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        versions,
        config: cfg.clone(),
        artifacts,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&paths.manifests().join(format!("{command}.json")), &json)?;
    Ok(())
}

fn require(path: &Path, what: &'static str, hint: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
            hint,
        })
    }
}

fn require_dataset(cfg: &PipelineConfig) -> Result<Vec<LoadedPair>, CliError> {
    require(
        &cfg.dataset.dir.join(MANIFEST_FILE),
        "dataset manifest",
        "run `terrafusion dataset-build` first or set dataset.dir",
    )?;
    let (_, pairs) = load_dataset(&cfg.dataset.dir)?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("dataset {} is empty", cfg.dataset.dir.display())));
    }
    Ok(pairs)
}

fn require_vaes(paths: &ArtifactPaths) -> Result<(VaeModel, VaeModel), CliError> {
    const HINT: &str = "run `terrafusion train-vae` first";
    require(&paths.heightmap_vae(), "heightmap autoencoder checkpoint", HINT)?;
    require(&paths.texture_vae(), "texture autoencoder checkpoint", HINT)?;
    Ok((VaeModel::load(&paths.heightmap_vae())?, VaeModel::load(&paths.texture_vae())?))
}

fn require_joint(cfg: &PipelineConfig) -> Result<JointModel, CliError> {
    let paths = cfg.artifacts();
    let (h, x) = require_vaes(&paths)?;
    require(&paths.ldm(), "denoiser checkpoint", "run `terrafusion train-ldm` first")?;
    let synth = &cfg.dataset.synth;
    Ok(JointModel::new(h, x, LdmModel::load(&paths.ldm())?, synth.size_px, synth.resolution_m)?)
}

fn dataset_build(cli: &Cli, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let n = cli.count.unwrap_or(cfg.dataset.count);
    if n == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let dir = &cfg.dataset.dir;
    let manifest = build_synthetic_dataset(dir, n, &cfg.dataset.synth, &cfg.dataset.sketch)?;
    log::info!("wrote {n} pairs to {}", dir.display());
    let mut out = vec![dir.join(MANIFEST_FILE)];
    for e in &manifest.pairs {
        out.extend([&e.heightmap, &e.texture, &e.sketch, &e.sidecar].map(|r| dir.join(r)));
    }
    Ok(out)
}

fn sketch_extract(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let pairs = require_dataset(cfg)?;
    let dir = cfg.artifacts().sketches();
    let written = pairs
        .par_iter()
        .map(|p| {
            let sketch = extract_sketch(&p.heightmap, &cfg.dataset.sketch).map_err(SynthError::from)?;
            let path = dir.join(format!("{}.png", p.id));
            write_texture_png(&path, sketch.texture())?;
            Ok(path)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    log::info!("wrote {} sketches to {}", written.len(), dir.display());
    Ok(written)
}

fn heightmap_images(pairs: &[LoadedPair], modality: Modality) -> Result<Vec<Tensor<f32>>, CliError> {
    let Modality::Heightmap { h_max } = modality else {
        return Err(CliError::Usage("heightmap_vae.modality must be heightmap".into()));
    };
    let spec = NormalizationSpec::new(h_max)?;
    pairs
        .iter()
        .map(|p| {
            let hm = &p.heightmap;
            let v = normalize_height(hm, &spec)?;
            Ok(Tensor::new(&[1, 1, hm.height(), hm.width()], v).map_err(LatentError::from)?)
        })
        .collect()
}

/// `checkpoints/epochs/{name}` when periodic checkpoints are enabled.
fn epoch_dir(paths: &ArtifactPaths, name: &str, every: usize) -> Result<Option<PathBuf>, CliError> {
    if every == 0 {
        return Ok(None);
    }
    let dir = paths.checkpoints().join("epochs").join(name);
    std::fs::create_dir_all(&dir)?;
    Ok(Some(dir))
}

fn train_vaes(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let pairs = require_dataset(cfg)?;
    let paths = cfg.artifacts();
    let hm_images = heightmap_images(&pairs, cfg.heightmap_vae.modality)?;
    let tx_images = pairs.iter().map(|p| texture_input(&p.texture)).collect::<Result<Vec<_>, _>>()?;
    let hdir = epoch_dir(&paths, "vae_heightmap", cfg.heightmap_vae.train.checkpoint_every)?;
    let xdir = epoch_dir(&paths, "vae_texture", cfg.texture_vae.train.checkpoint_every)?;
    let h = train_vae(cfg.heightmap_vae.clone(), &hm_images, hdir.as_deref())?;
    h.save(&paths.heightmap_vae())?;
    log::info!("heightmap autoencoder saved to {}", paths.heightmap_vae().display());
    let x = train_vae(cfg.texture_vae.clone(), &tx_images, xdir.as_deref())?;
    x.save(&paths.texture_vae())?;
    log::info!("texture autoencoder saved to {}", paths.texture_vae().display());
    Ok(vec![paths.heightmap_vae(), paths.texture_vae()])
}

fn encode_dataset(h: &VaeModel, x: &VaeModel, pairs: &[LoadedPair]) -> Result<Vec<Tensor<f32>>, CliError> {
    Ok(pairs
        .par_iter()
        .map(|p| encode_pair(h, x, &p.heightmap, &p.texture))
        .collect::<Result<Vec<_>, _>>()?)
}

fn train_denoiser(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let pairs = require_dataset(cfg)?;
    let paths = cfg.artifacts();
    let (h, x) = require_vaes(&paths)?;
    let latents = encode_dataset(&h, &x, &pairs)?;
    let dir = epoch_dir(&paths, "ldm", cfg.ldm.train.checkpoint_every)?;
    let ldm = train_ldm(cfg.ldm.clone(), &latents, None, dir.as_deref())?;
    let synth = &cfg.dataset.synth;
    JointModel::new(h, x, ldm.clone(), synth.size_px, synth.resolution_m)?;
    ldm.save(&paths.ldm())?;
    log::info!("denoiser saved to {}", paths.ldm().display());
    Ok(vec![paths.ldm()])
}

fn condition_for(kind: ConditionKind, pair: &LoadedPair) -> Result<ConditionRaster, CliError> {
    Ok(match kind {
        ConditionKind::Sketch => ConditionRaster::new(pair.sketch.clone(), kind)?,
        ConditionKind::TwoColorTexture => ConditionRaster::new(quantize_two_color(&pair.texture).texture, kind)?,
    })
}

fn train_adapter(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let model = require_joint(cfg)?;
    let pairs = require_dataset(cfg)?;
    let latents = encode_dataset(&model.heightmap_vae, &model.texture_vae, &pairs)?;
    let conditions = pairs
        .iter()
        .map(|p| Ok(condition_for(cfg.control.kind, p)?.to_tensor()))
        .collect::<Result<Vec<_>, CliError>>()?;
    let paths = cfg.artifacts();
    let dir = epoch_dir(&paths, "control", cfg.control.train.checkpoint_every)?;
    let adapter = train_control(&model.ldm, cfg.control.clone(), &latents, &conditions, dir.as_deref())?;
    adapter.save(&paths.adapter())?;
    log::info!("adapter saved to {}", paths.adapter().display());
    Ok(vec![paths.adapter()])
}

fn sample(cli: &Cli, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let model = require_joint(cfg)?;
    let paths = cfg.artifacts();
    let n = cli.count.unwrap_or(cfg.sampling.count);
    if n == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let sketch = match &cli.sketch {
        Some(p) => {
            require(p, "sketch", "pass an RGB sketch PNG with --sketch")?;
            let tex = read_texture_png(p).map_err(|e| CliError::Usage(format!("cannot read sketch {}: {e}", p.display())))?;
            let cond = ConditionRaster::new(tex, ConditionKind::Sketch).map_err(|e| CliError::Usage(e.to_string()))?;
            if cond.width() != model.resolution_px || cond.height() != model.resolution_px {
                return Err(CliError::Usage(format!(
                    "sketch is {}x{}, the model generates {px}x{px}",
                    cond.width(),
                    cond.height(),
                    px = model.resolution_px
                )));
            }
            Some(cond)
        }
        None => None,
    };
    let adapter = match &sketch {
        Some(_) => {
            require(&paths.adapter(), "adapter checkpoint", "run `terrafusion train-control` first")?;
            Some(ControlAdapter::load(&paths.adapter())?)
        }
        None => None,
    };
    let sampler = match (&sketch, cli.steps) {
        (None, None) => Sampler::Ddpm,
        _ => Sampler::Strided { steps: cfg.sampling.steps },
    };
    let generator = Generator { model, adapter };
    let seed = cfg.seed;
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &format!("sample/{i}"));
            let (heightmap, texture) = match (&sketch, sampler) {
                (None, Sampler::Ddpm) => generator.model.sample(Sampler::Ddpm, 1, &mut rng)?.remove(0),
                (s, _) => generator.generate(s.as_ref(), cfg.sampling.steps, &mut rng)?,
            };
            Ok(StoredPair {
                id: format!("{i:05}"),
                heightmap,
                texture,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let dir = paths.samples();
    replace_dir(&dir, |tmp| Ok(write_pair_dir(tmp, &pairs, &format!("sample:{seed}"))?))?;
    log::info!("wrote {n} samples to {}", dir.display());
    Ok(pairs
        .iter()
        .flat_map(|p| {
            ["heightmaps", "textures"]
                .map(|k| dir.join(format!("{k}/{}.png", p.id)))
                .into_iter()
                .chain([dir.join(format!("meta/{}.json", p.id))])
        })
        .collect())
}

/// Fills a sibling temp directory and swaps it in for `dir`, so stale
/// outputs from an earlier run never mix with new ones.
fn replace_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    fill(&tmp)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::rename(&tmp, dir)?;
    Ok(())
}

fn read_pairs(dir: &Path, what: &'static str, hint: &'static str) -> Result<Vec<(terrain_diffusion::raster::Heightmap, Texture)>, CliError> {
    require(&dir.join("heightmaps"), what, hint)?;
    Ok(read_pair_dir(dir)?.into_iter().map(|p| (p.heightmap, p.texture)).collect())
}

fn evaluate(cfg: &PipelineConfig, samples: Option<&Path>, reference: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let paths = cfg.artifacts();
    require(&paths.texture_vae(), "texture autoencoder checkpoint", "run `terrafusion train-vae` first")?;
    let vae = VaeModel::load(&paths.texture_vae())?;
    let sample_dir = samples.map(Path::to_path_buf).unwrap_or_else(|| paths.samples());
    let reference_dir = reference.map(Path::to_path_buf).unwrap_or_else(|| cfg.dataset.dir.clone());
    let s = read_pairs(&sample_dir, "generated pairs", "run `terrafusion sample` first or pass --samples")?;
    let r = read_pairs(&reference_dir, "reference pairs", "run `terrafusion dataset-build` first or pass --reference")?;
    let extractor = VaeFeatures::new(&vae)?;
    let report = evaluate_model(&s, &r, &extractor)?;
    let json = paths.eval().join("report.json");
    let csv = paths.eval().join("correlations.csv");
    let mut bytes = report.to_json()?.into_bytes();
    bytes.push(b'\n');
    write_atomic(&json, &bytes)?;
    write_atomic(&csv, report.to_csv().as_bytes())?;
    println!(
        "mean correlation {:.4} (reference {:.4}, |diff| {:.4}); frechet distance {:.6}",
        report.samples.mean, report.reference.mean, report.differences.mean, report.frechet_distance
    );
    Ok(vec![json, csv])
}

fn serve(cfg: &PipelineConfig) -> Result<(), CliError> {
    let synth = &cfg.dataset.synth;
    let models = terrain_service::LoadedModels::load(&cfg.artifacts(), synth.size_px, synth.resolution_m);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(terrain_service::serve(&cfg.service, models, synth.size_px))?;
    Ok(())
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
