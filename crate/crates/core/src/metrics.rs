//! Height/texture correlation statistics and a Fréchet feature distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::geomorph::quantile;
use crate::latent::{texture_input, LatentError, Modality, VaeModel};
use crate::raster::{Heightmap, Texture};

/// Added to covariance diagonals when there are no more samples than features.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("feature extractor failed: {0}")]
    Extractor(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Pearson coefficient of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Dimensions(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(MetricsError::Constant("first series"));
    }
    if sbb == 0.0 {
        return Err(MetricsError::Constant("second series"));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Mean over the three texture channels of the Pearson coefficient with elevation.
pub fn pearson_corr_pair(hm: &Heightmap, texture: &Texture) -> Result<f64, MetricsError> {
    if !texture.same_dims(hm) {
        return Err(MetricsError::Dimensions(format!(
            "heightmap {}x{} vs texture {}x{}",
            hm.width(),
            hm.height(),
            texture.width(),
            texture.height()
        )));
    }
    let h: Vec<f64> = hm.elevations().iter().map(|&v| v as f64).collect();
    if h.iter().all(|&v| v == h[0]) {
        return Err(MetricsError::Constant("heightmap"));
    }
    let mut sum = 0.0;
    for c in 0..3 {
        let ch: Vec<f64> = texture.rgb().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        sum += pearson(&h, &ch).map_err(|e| match e {
            MetricsError::Constant(_) => MetricsError::Constant(["red channel", "green channel", "blue channel"][c]),
            other => other,
        })?;
    }
    Ok(sum / 3.0)
}

/// Per-pair correlations, in input order.
pub fn pair_correlations(pairs: &[(Heightmap, Texture)]) -> Result<Vec<f64>, MetricsError> {
    pairs.par_iter().map(|(h, t)| pearson_corr_pair(h, t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub mean: f64,
    pub std: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub iqr: f64,
}

impl CorrelationStats {
    /// Element-wise absolute difference.
    pub fn abs_diff(&self, other: &Self) -> Self {
        Self {
            mean: (self.mean - other.mean).abs(),
            std: (self.std - other.std).abs(),
            q25: (self.q25 - other.q25).abs(),
            q50: (self.q50 - other.q50).abs(),
            q75: (self.q75 - other.q75).abs(),
            iqr: (self.iqr - other.iqr).abs(),
        }
    }
}

/// Mean, sample standard deviation and linear-interpolation quartiles.
pub fn corr_stats(values: &[f64]) -> Result<CorrelationStats, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (q25, q50, q75) = (quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75));
    Ok(CorrelationStats {
        mean,
        std,
        q25,
        q50,
        q75,
        iqr: q75 - q25,
    })
}

/// A named deterministic map from texture to a fixed-length vector.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, texture: &Texture) -> Result<Vec<f64>, MetricsError>;
}

/// Texture-autoencoder means average-pooled over a `grid × grid` layout.
pub struct VaeFeatures<'a> {
    vae: &'a VaeModel,
    grid: usize,
}

impl<'a> VaeFeatures<'a> {
    /// Target feature length of the default extractor.
    pub const DEFAULT_DIM: usize = 64;

    /// Chooses the grid so that `channels · grid²` is 64 when possible,
    /// otherwise 4 × 4.
    pub fn new(vae: &'a VaeModel) -> Result<Self, MetricsError> {
        let c = vae.config.latent_channels;
        let grid = (1..=8).find(|g| c * g * g == Self::DEFAULT_DIM).unwrap_or(4);
        Self::with_grid(vae, grid)
    }

    pub fn with_grid(vae: &'a VaeModel, grid: usize) -> Result<Self, MetricsError> {
        if vae.config.modality != Modality::Texture {
            return Err(MetricsError::Extractor("feature extractor needs the texture autoencoder".into()));
        }
        if grid == 0 {
            return Err(MetricsError::Extractor("pooling grid must be positive".into()));
        }
        Ok(Self { vae, grid })
    }
}

/// Averages each channel of `[1, c, h, w]` over `g × g` near-equal cells.
pub fn grid_pool(t: &Tensor<f32>, g: usize) -> Vec<f64> {
    let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
    let mut out = Vec::with_capacity(c * g * g);
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        for gy in 0..g {
            let (y0, y1) = (gy * h / g, ((gy + 1) * h / g).max(gy * h / g + 1).min(h));
            for gx in 0..g {
                let (x0, x1) = (gx * w / g, ((gx + 1) * w / g).max(gx * w / g + 1).min(w));
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += plane[y * w + x] as f64;
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

impl FeatureExtractor for VaeFeatures<'_> {
    fn name(&self) -> &str {
        "texture-vae-mean-pool"
    }

    fn dim(&self) -> usize {
        self.vae.config.latent_channels * self.grid * self.grid
    }

    fn extract(&self, texture: &Texture) -> Result<Vec<f64>, MetricsError> {
        let (mu, _) = self.vae.moments(&texture_input(texture)?)?;
        Ok(grid_pool(&mu, self.grid))
    }
}

/// Mean and `(n−1)`-normalized covariance of row vectors.
pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>), MetricsError> {
    let n = features.len();
    if n == 0 {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(MetricsError::Dimensions(format!("feature length {} vs {d}", bad.len())));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = if n > 1 {
        centered.transpose() * &centered / (n - 1) as f64
    } else {
        DMatrix::zeros(d, d)
    };
    if n <= d {
        for i in 0..d {
            cov[(i, i)] += COVARIANCE_RIDGE;
        }
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, clamped at zero.
///
/// The trace of the product root is taken as `Tr((√Σ₁ Σ₂ √Σ₁)^{1/2})`, a
/// symmetric matrix with the same eigenvalues as `Σ₁Σ₂`.
pub fn frechet_from_moments(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64, MetricsError> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(MetricsError::Dimensions("moment shapes disagree".into()));
    }
    let s1 = sym_sqrt(cov1);
    let inner = &s1 * cov2 * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dist = (mu1 - mu2).norm_squared() + cov1.trace() + cov2.trace() - 2.0 * tr_root;
    Ok(dist.max(0.0))
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let (m1, c1) = gaussian_fit(a)?;
    let (m2, c2) = gaussian_fit(b)?;
    frechet_from_moments(&m1, &c1, &m2, &c2)
}

pub fn extract_features(set: &[Texture], extractor: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>, MetricsError> {
    set.par_iter().map(|t| extractor.extract(t)).collect()
}

/// Fréchet distance between Gaussian fits of the two sets' features.
pub fn frechet_feature_distance(set_a: &[Texture], set_b: &[Texture], extractor: &dyn FeatureExtractor) -> Result<f64, MetricsError> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    frechet_distance(&extract_features(set_a, extractor)?, &extract_features(set_b, extractor)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub extractor: String,
    pub sample_count: usize,
    pub reference_count: usize,
    pub samples: CorrelationStats,
    pub reference: CorrelationStats,
    /// Absolute per-statistic differences, samples vs reference.
    pub differences: CorrelationStats,
    pub frechet_distance: f64,
    pub sample_correlations: Vec<f64>,
    pub reference_correlations: Vec<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, MetricsError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MetricsError> {
        Ok(serde_json::from_str(s)?)
    }

    /// One correlation per row: `set,index,correlation`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,index,correlation\n");
        for (set, values) in [("sample", &self.sample_correlations), ("reference", &self.reference_correlations)] {
            for (i, v) in values.iter().enumerate() {
                out.push_str(&format!("{set},{i},{v}\n"));
            }
        }
        out
    }
}

pub fn evaluate_model(
    samples: &[(Heightmap, Texture)],
    reference: &[(Heightmap, Texture)],
    extractor: &dyn FeatureExtractor,
) -> Result<EvalReport, MetricsError> {
    let sc = pair_correlations(samples)?;
    let rc = pair_correlations(reference)?;
    let s = corr_stats(&sc)?;
    let r = corr_stats(&rc)?;
    let st: Vec<Texture> = samples.iter().map(|p| p.1.clone()).collect();
    let rt: Vec<Texture> = reference.iter().map(|p| p.1.clone()).collect();
    Ok(EvalReport {
        extractor: extractor.name().to_string(),
        sample_count: samples.len(),
        reference_count: reference.len(),
        differences: s.abs_diff(&r),
        samples: s,
        reference: r,
        frechet_distance: frechet_feature_distance(&st, &rt, extractor)?,
        sample_correlations: sc,
        reference_correlations: rc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingTest {
    /// Mean correlation of the pairs as generated.
    pub aligned_mean: f64,
    /// Mean over permutations of the shuffled-pairing mean correlation.
    pub shuffled_mean: f64,
    /// One-sided p-value with the `(k + 1) / (m + 1)` correction.
    pub p_value: f64,
    pub permutations: usize,
}

/// Compares aligned-pair correlation against random re-pairings of the
/// same heightmaps and textures.
pub fn pairing_permutation_test(
    pairs: &[(Heightmap, Texture)],
    permutations: usize,
    rng: &mut impl Rng,
) -> Result<PairingTest, MetricsError> {
    if pairs.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: pairs.len() });
    }
    let aligned = mean(&pair_correlations(pairs)?);
    let mut at_least = 0usize;
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..permutations {
        order.shuffle(rng);
        let shuffled: Vec<(Heightmap, Texture)> = order
            .iter()
            .enumerate()
            .map(|(i, &j)| (pairs[i].0.clone(), pairs[j].1.clone()))
            .collect();
        let m = mean(&pair_correlations(&shuffled)?);
        total += m;
        if m >= aligned {
            at_least += 1;
        }
    }
    Ok(PairingTest {
        aligned_mean: aligned,
        shuffled_mean: total / permutations.max(1) as f64,
        p_value: (at_least + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

/// One-sided exact sign test: `P(X ≥ successes)` for `X ~ Bin(n, ½)`.
pub fn sign_test(successes: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in successes..=n {
        p += binomial(n, k);
    }
    p / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
