//! Contrastive losses over unit-norm features, each returning the loss value
//! and its exact gradient with respect to the query feature.
//!
//! - [`info_nce`]: softmax cross-entropy of the positive key against itself
//!   plus all negatives, logits `q·k / τ`.
//! - [`tag_supervised_nce`]: the same denominator, numerator averaged over a
//!   positive set extended by queue keys whose tags overlap the query's by
//!   more than `ε`.
//! - [`hinge_ranking`]: `Σⱼ max(0, α − q·k⁺ + q·kⱼ)` over the negatives only.
//!
//! [`combined_loss`] evaluates all five terms for a batch and weights them.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, dot_unchecked};
use crate::queue::QueueEntry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub lambda_ii: f64,
    pub lambda_tag: f64,
    pub lambda_cc: f64,
    pub lambda_ic: f64,
    pub lambda_ci: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha: 0.2,
            epsilon: 2.0,
            lambda_ii: 1.0,
            lambda_tag: 1.0,
            lambda_cc: 1.0,
            lambda_ic: 1e-4,
            lambda_ci: 1e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig { field: "tau", reason: "must be positive" });
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig { field: "alpha", reason: "must be nonnegative" });
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig { field: "epsilon", reason: "must be nonnegative" });
        }
        let lambdas = [
            ("lambda_ii", self.lambda_ii),
            ("lambda_tag", self.lambda_tag),
            ("lambda_cc", self.lambda_cc),
            ("lambda_ic", self.lambda_ic),
            ("lambda_ci", self.lambda_ci),
        ];
        for (field, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig { field, reason: "must be nonnegative" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// A key with the tags of the sample it came from.
#[derive(Debug, Clone, Copy)]
pub struct TaggedKey<'a> {
    pub key: &'a [f64],
    pub tags: Option<&'a [u8]>,
}

fn check_dims<K: AsRef<[f64]>>(dim: usize, keys: &[K]) -> Result<()> {
    for k in keys {
        let k = k.as_ref();
        if k.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: k.len() });
        }
    }
    Ok(())
}

/// Shared kernel of the InfoNCE family. `keys[0]` is the in-batch positive;
/// `positives` lists indices into `keys` (always including 0).
fn nce_kernel(query: &[f64], keys: &[&[f64]], positives: &[usize], tau: f64) -> LossGrad {
    let logits: Vec<f64> = keys.iter().map(|k| dot_unchecked(query, k) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + libm::log(sum);

    let n_pos = positives.len() as f64;
    let value = positives.iter().map(|&p| lse - logits[p]).sum::<f64>() / n_pos;

    let mut grad = vec![0.0; query.len()];
    for (k, e) in keys.iter().zip(&exps) {
        numerics::axpy(e / sum, k, &mut grad);
    }
    let mut pos_sum = vec![0.0; query.len()];
    for &p in positives {
        numerics::axpy(1.0, keys[p], &mut pos_sum);
    }
    for (g, s) in grad.iter_mut().zip(&pos_sum) {
        *g = (*g - s / n_pos) / tau;
    }
    LossGrad { value, grad }
}

/// `−log[exp(q·k⁺/τ) / Σⱼ exp(q·kⱼ/τ)]`, the sum running over the positive
/// and every negative.
pub fn info_nce<K: AsRef<[f64]>>(query: &[f64], pos_key: &[f64], neg_keys: &[K], tau: f64) -> Result<LossGrad> {
    check_dims(query.len(), core::slice::from_ref(&pos_key))?;
    check_dims(query.len(), neg_keys)?;
    let mut keys: Vec<&[f64]> = Vec::with_capacity(neg_keys.len() + 1);
    keys.push(pos_key);
    keys.extend(neg_keys.iter().map(AsRef::as_ref));
    Ok(nce_kernel(query, &keys, &[0], tau))
}

/// Number of tags two binary tag vectors share.
pub fn tag_overlap(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| u32::from(x) * u32::from(y)).sum()
}

/// Positive set `P = {k⁺} ∪ {queue keys with tags·query_tags > ε}`;
/// loss `−(1/|P|) Σ_{p∈P} log[exp(q·kₚ/τ) / Σⱼ exp(q·kⱼ/τ)]` with the
/// denominator over the positive and the full queue. Untagged queue keys are
/// never positives.
pub fn tag_supervised_nce(
    query: &[f64],
    query_tags: &[u8],
    pos_key: &[f64],
    queue: &[TaggedKey<'_>],
    tau: f64,
    epsilon: f64,
) -> Result<LossGrad> {
    check_dims(query.len(), core::slice::from_ref(&pos_key))?;
    let mut keys: Vec<&[f64]> = Vec::with_capacity(queue.len() + 1);
    keys.push(pos_key);
    let mut positives = vec![0];
    for (i, entry) in queue.iter().enumerate() {
        if entry.key.len() != query.len() {
            return Err(Error::DimensionMismatch { expected: query.len(), found: entry.key.len() });
        }
        keys.push(entry.key);
        if let Some(tags) = entry.tags {
            if tags.len() != query_tags.len() {
                return Err(Error::DimensionMismatch { expected: query_tags.len(), found: tags.len() });
            }
            if f64::from(tag_overlap(tags, query_tags)) > epsilon {
                positives.push(i + 1);
            }
        }
    }
    Ok(nce_kernel(query, &keys, &positives, tau))
}

/// `Σⱼ max(0, α − q·k⁺ + q·kⱼ)` over the negatives. The subgradient at the
/// hinge point is taken as zero.
pub fn hinge_ranking<K: AsRef<[f64]>>(query: &[f64], pos_key: &[f64], neg_keys: &[K], alpha: f64) -> Result<LossGrad> {
    check_dims(query.len(), core::slice::from_ref(&pos_key))?;
    check_dims(query.len(), neg_keys)?;
    let s_pos = dot_unchecked(query, pos_key);
    let mut value = 0.0;
    let mut grad = vec![0.0; query.len()];
    let mut active = 0usize;
    for k in neg_keys {
        let k = k.as_ref();
        let margin = alpha - s_pos + dot_unchecked(query, k);
        if margin > 0.0 {
            value += margin;
            numerics::axpy(1.0, k, &mut grad);
            active += 1;
        }
    }
    numerics::axpy(-(active as f64), pos_key, &mut grad);
    Ok(LossGrad { value, grad })
}

/// Query and key features of one modality for one sample.
///
/// For the image side these are `(q_ii, q_ic, k_ii, k_ci)`; for the caption
/// side `(q_cc, q_ci, k_cc, k_ic)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub query_intra: Vec<f64>,
    pub query_inter: Vec<f64>,
    pub key_intra: Vec<f64>,
    pub key_inter: Vec<f64>,
}

/// Features of one training sample. A missing caption or missing tags masks
/// the terms that need them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub image: ModalityFeatures,
    pub caption: Option<ModalityFeatures>,
    pub tags: Option<Vec<u8>>,
}

/// Gradient of the weighted total with respect to each query feature.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrads {
    pub image_intra: Vec<f64>,
    pub image_inter: Vec<f64>,
    pub caption_intra: Option<Vec<f64>>,
    pub caption_inter: Option<Vec<f64>>,
}

/// Batch-mean value of each term and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub j_ii: f64,
    pub j_tag: f64,
    pub j_cc: f64,
    pub j_ic: f64,
    pub j_ci: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, cfg: &LossConfig) -> f64 {
        cfg.lambda_ii * self.j_ii
            + cfg.lambda_tag * self.j_tag
            + cfg.lambda_cc * self.j_cc
            + cfg.lambda_ic * self.j_ic
            + cfg.lambda_ci * self.j_ci
    }

    pub fn is_finite(&self) -> bool {
        [self.j_ii, self.j_tag, self.j_cc, self.j_ic, self.j_ci, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    /// One entry per batch sample, already scaled by `λ / batch_size`.
    pub grads: Vec<QueryGrads>,
}

/// Evaluates all five terms for a batch against the queue snapshots.
///
/// Per term the per-sample losses are averaged over the whole batch, with
/// samples lacking the needed modality contributing zero: `J_tag` needs tags,
/// `J_cc`, `J_ic`, `J_ci` need a caption. `J_ii` and `J_tag` use the image
/// queue's intra keys, `J_cc` the caption queue's intra keys, `J_ic` the
/// caption queue's inter keys and `J_ci` the image queue's inter keys.
pub fn combined_loss(
    batch: &[SampleFeatures],
    image_queue: &[QueueEntry],
    caption_queue: &[QueueEntry],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    cfg.validate()?;
    let image_intra: Vec<&[f64]> = image_queue.iter().map(|e| e.intra_key.as_slice()).collect();
    let image_inter: Vec<&[f64]> = image_queue.iter().map(|e| e.inter_key.as_slice()).collect();
    let image_tagged: Vec<TaggedKey<'_>> = image_queue
        .iter()
        .map(|e| TaggedKey { key: e.intra_key.as_slice(), tags: e.tags.as_deref() })
        .collect();
    let caption_intra: Vec<&[f64]> = caption_queue.iter().map(|e| e.intra_key.as_slice()).collect();
    let caption_inter: Vec<&[f64]> = caption_queue.iter().map(|e| e.inter_key.as_slice()).collect();

    let inv_n = 1.0 / batch.len() as f64;
    let mut sums = LossTerms::default();
    let mut grads = Vec::with_capacity(batch.len());

    for sample in batch {
        let img = &sample.image;
        let ii = info_nce(&img.query_intra, &img.key_intra, &image_intra, cfg.tau)?;
        sums.j_ii += ii.value;
        let mut g_img_intra = numerics::scale(cfg.lambda_ii * inv_n, &ii.grad);

        if let Some(tags) = &sample.tags {
            let tag = tag_supervised_nce(&img.query_intra, tags, &img.key_intra, &image_tagged, cfg.tau, cfg.epsilon)?;
            sums.j_tag += tag.value;
            numerics::axpy(cfg.lambda_tag * inv_n, &tag.grad, &mut g_img_intra);
        }

        let mut g_img_inter = vec![0.0; img.query_inter.len()];
        let (mut g_cap_intra, mut g_cap_inter) = (None, None);
        if let Some(cap) = &sample.caption {
            let cc = info_nce(&cap.query_intra, &cap.key_intra, &caption_intra, cfg.tau)?;
            let ic = hinge_ranking(&img.query_inter, &cap.key_inter, &caption_inter, cfg.alpha)?;
            let ci = hinge_ranking(&cap.query_inter, &img.key_inter, &image_inter, cfg.alpha)?;
            sums.j_cc += cc.value;
            sums.j_ic += ic.value;
            sums.j_ci += ci.value;
            numerics::axpy(cfg.lambda_ic * inv_n, &ic.grad, &mut g_img_inter);
            g_cap_intra = Some(numerics::scale(cfg.lambda_cc * inv_n, &cc.grad));
            g_cap_inter = Some(numerics::scale(cfg.lambda_ci * inv_n, &ci.grad));
        }
        grads.push(QueryGrads {
            image_intra: g_img_intra,
            image_inter: g_img_inter,
            caption_intra: g_cap_intra,
            caption_inter: g_cap_inter,
        });
    }

    let mut terms = LossTerms {
        j_ii: sums.j_ii * inv_n,
        j_tag: sums.j_tag * inv_n,
        j_cc: sums.j_cc * inv_n,
        j_ic: sums.j_ic * inv_n,
        j_ci: sums.j_ci * inv_n,
        total: 0.0,
    };
    terms.total = terms.weighted_total(cfg);
    Ok(LossBreakdown { terms, grads })
}
