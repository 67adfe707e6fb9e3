//! Synthetic image/caption/tag dataset and the stochastic augmentation used
//! to produce the two views of each sample.
//!
//! Every class owns a unit-norm image prototype, a unit-norm caption
//! prototype and a fixed subset of `tags_per_class` tags. A sample is its
//! class prototypes plus noise in each modality and the class tags with each
//! bit flipped independently.
//!
//! The noise of one sample is correlated across modalities through a shared
//! latent `u ~ N(0, I_L)`, `L = max(image_dim, caption_dim)`:
//!
//! ```text
//! noise_m = σ (√ρ · P_m u + √(1−ρ) · e_m),   e_m ~ N(0, I)
//! ```
//!
//! where `P_m` has orthonormal rows, so each modality's noise is exactly
//! `N(0, σ² I)` while image and caption of one sample share instance-level
//! structure (ρ = `pair_correlation`). With ρ = 0 the modalities are
//! independent given the class.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_dim: usize,
    pub caption_dim: usize,
    pub num_tags: usize,
    pub noise_std: f64,
    pub tags_per_class: usize,
    pub tag_flip_prob: f64,
    /// Cross-modal correlation ρ of the per-sample noise.
    pub pair_correlation: f64,
    /// Probability a sample has no caption.
    pub missing_caption_prob: f64,
    /// Probability a sample has no tags.
    pub missing_tags_prob: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            samples_per_class: 250,
            image_dim: 32,
            caption_dim: 24,
            num_tags: 20,
            noise_std: 0.25,
            tags_per_class: 4,
            tag_flip_prob: 0.05,
            pair_correlation: 0.9,
            missing_caption_prob: 0.0,
            missing_tags_prob: 0.0,
            seed: 0,
        }
    }
}

fn invalid(field: &'static str, reason: &'static str) -> Error {
    Error::InvalidConfig { field, reason }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "must be at least 2"));
        }
        if self.samples_per_class == 0 {
            return Err(invalid("samples_per_class", "must be positive"));
        }
        if self.image_dim < 2 {
            return Err(invalid("image_dim", "must be at least 2"));
        }
        if self.caption_dim < 2 {
            return Err(invalid("caption_dim", "must be at least 2"));
        }
        if self.num_tags == 0 {
            return Err(invalid("num_tags", "must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std", "must be positive"));
        }
        if self.tags_per_class > self.num_tags {
            return Err(invalid("tags_per_class", "must not exceed num_tags"));
        }
        if !is_prob(self.tag_flip_prob) {
            return Err(invalid("tag_flip_prob", "must lie in [0, 1]"));
        }
        if !is_prob(self.pair_correlation) {
            return Err(invalid("pair_correlation", "must lie in [0, 1]"));
        }
        if !is_prob(self.missing_caption_prob) {
            return Err(invalid("missing_caption_prob", "must lie in [0, 1]"));
        }
        if !is_prob(self.missing_tags_prob) {
            return Err(invalid("missing_tags_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_classes * self.samples_per_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_raw: Vec<f64>,
    pub caption_raw: Option<Vec<f64>>,
    pub tags: Option<Vec<u8>>,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Random `rows × cols` matrix with orthonormal rows (`rows ≤ cols`),
/// Gram-Schmidt on Gaussian draws.
fn orthonormal_rows(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
        for b in &basis {
            let p = numerics::dot_unchecked(&v, b);
            numerics::axpy(-p, b, &mut v);
        }
        if let Ok(u) = numerics::l2_normalize(&v) {
            basis.push(u);
        }
    }
    let refs: Vec<&[f64]> = basis.iter().map(Vec::as_slice).collect();
    Matrix::from_rows(&refs).expect("equal row lengths")
}

fn unit_gaussian(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if let Ok(u) = numerics::l2_normalize(&v) {
            return u;
        }
    }
}

/// Sample index `n` belongs to class `n mod C`; the first 90% of indices form
/// the training split and the rest the test split.
pub fn generate(cfg: &GenConfig) -> Result<SplitDataset> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let c = cfg.num_classes;

    let image_protos: Vec<Vec<f64>> = (0..c).map(|_| unit_gaussian(cfg.image_dim, &mut rng)).collect();
    let caption_protos: Vec<Vec<f64>> = (0..c).map(|_| unit_gaussian(cfg.caption_dim, &mut rng)).collect();
    let class_tags: Vec<Vec<u8>> = (0..c)
        .map(|_| {
            let mut order: Vec<usize> = (0..cfg.num_tags).collect();
            rng.shuffle(&mut order);
            let mut tags = vec![0u8; cfg.num_tags];
            for &t in &order[..cfg.tags_per_class] {
                tags[t] = 1;
            }
            tags
        })
        .collect();
    let latent_dim = cfg.image_dim.max(cfg.caption_dim);
    let image_proj = orthonormal_rows(cfg.image_dim, latent_dim, &mut rng);
    let caption_proj = orthonormal_rows(cfg.caption_dim, latent_dim, &mut rng);

    let shared = libm::sqrt(cfg.pair_correlation);
    let own = libm::sqrt(1.0 - cfg.pair_correlation);
    let noisy = |proto: &[f64], proj: &Matrix, latent: &[f64], rng: &mut SeededRng| -> Vec<f64> {
        let projected = proj.matvec(latent).expect("latent dim");
        proto
            .iter()
            .zip(projected)
            .map(|(p, z)| p + cfg.noise_std * (shared * z + own * rng.normal()))
            .collect()
    };

    let total = cfg.total_samples();
    let mut samples = Vec::with_capacity(total);
    for n in 0..total {
        let class_id = n % c;
        let latent: Vec<f64> = (0..latent_dim).map(|_| rng.normal()).collect();
        let image_raw = noisy(&image_protos[class_id], &image_proj, &latent, &mut rng);
        let caption = noisy(&caption_protos[class_id], &caption_proj, &latent, &mut rng);
        let tags: Vec<u8> = class_tags[class_id]
            .iter()
            .map(|&t| if rng.bernoulli(cfg.tag_flip_prob) { 1 - t } else { t })
            .collect();
        let drop_caption = rng.bernoulli(cfg.missing_caption_prob);
        let drop_tags = rng.bernoulli(cfg.missing_tags_prob);
        samples.push(Sample {
            image_raw,
            caption_raw: (!drop_caption).then_some(caption),
            tags: (!drop_tags).then_some(tags),
            class_id,
        });
    }
    let test = samples.split_off(total * 9 / 10);
    Ok(SplitDataset { train: samples, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub noise_std: f64,
    /// Probability each coordinate is zeroed.
    pub dropout_prob: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self { noise_std: 0.1, dropout_prob: 0.1 }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(invalid("dropout_prob", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adds `N(0, noise_std²)` to every coordinate, then zeroes each coordinate
/// independently with probability `dropout_prob`.
pub fn augment(v: &[f64], cfg: &AugConfig, rng: &mut SeededRng) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let noisy = x + cfg.noise_std * rng.normal();
            if rng.bernoulli(cfg.dropout_prob) {
                0.0
            } else {
                noisy
            }
        })
        .collect()
}
