//! Downstream metrics on frozen features: cross-modal retrieval (R@K and
//! median rank), a linear probe over backbone features, and tag prediction
//! scored by mIOU@K.
//!
//! Every ranking breaks ties by ascending index, so reports are
//! bit-reproducible.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::dot_unchecked;
use crate::synthdata::{Sample, SplitDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    /// K → percentage of queries whose true pair ranks within the top K.
    pub r_at: BTreeMap<usize, f64>,
    /// Lower median of the 1-based true-pair ranks.
    pub med_r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Test top-1 accuracy in percent.
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingReport {
    pub miou_at: BTreeMap<usize, f64>,
}

/// Full-batch gradient descent settings for the logistic probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// L2 penalty `½·l2·‖W‖²` on the weights (not the bias).
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-5, l2: 1e-4 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig { field: "max_iters", reason: "must be positive" });
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig { field: "tol", reason: "must be nonnegative" });
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig { field: "l2", reason: "must be nonnegative" });
        }
        Ok(())
    }
}

fn check_ks(ks: &[usize], max: Option<usize>) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig { field: "ks", reason: "need at least one K, all positive" });
    }
    if let Some(max) = max {
        if ks.iter().any(|&k| k > max) {
            return Err(Error::InvalidConfig { field: "tag_ks", reason: "K exceeds the number of tags" });
        }
    }
    Ok(())
}

/// 1-based rank of `scores[target]` when `scores` is sorted descending with
/// ties broken by ascending index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < target)).count()
}

/// Lower median: the `⌊(n−1)/2⌋`-th smallest value.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Builds a report from the true-pair rank of every query.
pub fn report_from_ranks(direction: Direction, ranks: &[usize], ks: &[usize]) -> Result<RetrievalReport> {
    check_ks(ks, None)?;
    let med_r = lower_median(ranks).ok_or(Error::EmptyTestSet)?;
    let n = ranks.len() as f64;
    let r_at = ks
        .iter()
        .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(RetrievalReport { direction, r_at, med_r })
}

/// Retrieval in both directions over index-paired unit-norm features;
/// similarity is the dot product. Returns `(image→text, text→image)`.
pub fn retrieval_eval<V: AsRef<[f64]>>(
    image_feats: &[V],
    caption_feats: &[V],
    ks: &[usize],
) -> Result<(RetrievalReport, RetrievalReport)> {
    if image_feats.len() != caption_feats.len() {
        return Err(Error::DimensionMismatch { expected: image_feats.len(), found: caption_feats.len() });
    }
    if image_feats.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let n = image_feats.len();
    let dim = image_feats[0].as_ref().len();
    for f in image_feats.iter().chain(caption_feats) {
        if f.as_ref().len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: f.as_ref().len() });
        }
    }
    // sim[i][j] = image i · caption j
    let sim: Vec<Vec<f64>> = image_feats
        .iter()
        .map(|a| caption_feats.iter().map(|b| dot_unchecked(a.as_ref(), b.as_ref())).collect())
        .collect();
    let i2t: Vec<usize> = (0..n).map(|i| rank_of(&sim[i], i)).collect();
    let t2i: Vec<usize> = (0..n)
        .map(|j| {
            let column: Vec<f64> = sim.iter().map(|row| row[j]).collect();
            rank_of(&column, j)
        })
        .collect();
    Ok((report_from_ranks(Direction::ImageToText, &i2t, ks)?, report_from_ranks(Direction::TextToImage, &t2i, ks)?))
}

/// Per-dimension standardization fitted on training features. Constant
/// dimensions are centred but not scaled.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit<V: AsRef<[f64]>>(x: &[V]) -> Self {
        let d = x[0].as_ref().len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = var.iter().map(|&v| if v > 1e-24 { 1.0 / libm::sqrt(v) } else { 1.0 }).collect();
        Self { mean, inv_std }
    }

    fn apply<V: AsRef<[f64]>>(&self, x: &[V]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| row.as_ref().iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    /// One class per row; targets are one-hot.
    Softmax,
    /// Independent binary outputs; targets are 0/1 per output.
    Sigmoid,
}

/// Affine scores `W x + b`, `W` stored row-major as outputs × inputs.
#[derive(Debug, Clone, PartialEq)]
struct AffineModel {
    outputs: usize,
    inputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineModel {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.bias[o] + dot_unchecked(&self.weight[o * self.inputs..(o + 1) * self.inputs], x))
            .collect()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean loss over rows plus the L2 penalty, and optionally `(P − Y)` per row.
fn objective(model: &AffineModel, x: &[Vec<f64>], y: &[Vec<f64>], link: Link, l2: f64, residuals: Option<&mut Vec<Vec<f64>>>) -> f64 {
    let n = x.len() as f64;
    let mut total = 0.0;
    let mut res_out = residuals;
    if let Some(r) = res_out.as_deref_mut() {
        r.clear();
    }
    for (xi, yi) in x.iter().zip(y) {
        let z = model.scores(xi);
        let (loss, p) = match link {
            Link::Softmax => {
                let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| libm::exp(v - zmax)).collect();
                let sum: f64 = exps.iter().sum();
                let lse = zmax + libm::log(sum);
                let loss = lse - dot_unchecked(&z, yi);
                (loss, exps.iter().map(|e| e / sum).collect::<Vec<_>>())
            }
            Link::Sigmoid => {
                let loss = z.iter().zip(yi).map(|(zt, yt)| softplus(*zt) - yt * zt).sum();
                (loss, z.iter().map(|&zt| sigmoid(zt)).collect())
            }
        };
        total += loss / n;
        if let Some(r) = res_out.as_deref_mut() {
            r.push(p.iter().zip(yi).map(|(pi, yi)| pi - yi).collect());
        }
    }
    total + 0.5 * l2 * dot_unchecked(&model.weight, &model.weight)
}

/// Minimizes the regularized logistic objective by gradient descent with
/// backtracking (Armijo) line search, starting from zero parameters.
fn fit_logistic(x: &[Vec<f64>], y: &[Vec<f64>], link: Link, cfg: &ProbeConfig) -> AffineModel {
    let inputs = x[0].len();
    let outputs = y[0].len();
    let n = x.len() as f64;
    let mut model = AffineModel { outputs, inputs, weight: vec![0.0; outputs * inputs], bias: vec![0.0; outputs] };
    let mut residuals = Vec::with_capacity(x.len());
    let mut f = objective(&model, x, y, link, cfg.l2, Some(&mut residuals));
    let mut step = 1.0;
    for _ in 0..cfg.max_iters {
        let mut gw: Vec<f64> = model.weight.iter().map(|w| cfg.l2 * w).collect();
        let mut gb = vec![0.0; outputs];
        for (xi, ri) in x.iter().zip(&residuals) {
            for (o, r) in ri.iter().enumerate() {
                if *r != 0.0 {
                    let row = &mut gw[o * inputs..(o + 1) * inputs];
                    for (g, v) in row.iter_mut().zip(xi) {
                        *g += r * v / n;
                    }
                    gb[o] += r / n;
                }
            }
        }
        let gnorm2 = dot_unchecked(&gw, &gw) + dot_unchecked(&gb, &gb);
        if libm::sqrt(gnorm2) < cfg.tol {
            break;
        }
        step *= 2.0;
        loop {
            let trial = AffineModel {
                outputs,
                inputs,
                weight: model.weight.iter().zip(&gw).map(|(w, g)| w - step * g).collect(),
                bias: model.bias.iter().zip(&gb).map(|(b, g)| b - step * g).collect(),
            };
            let f_trial = objective(&trial, x, y, link, cfg.l2, None);
            if f_trial <= f - 1e-4 * step * gnorm2 {
                model = trial;
                f = objective(&model, x, y, link, cfg.l2, Some(&mut residuals));
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return model;
            }
        }
    }
    model
}

/// Index of the largest entry, the lowest index among ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Multinomial logistic regression on standardized features; reports test
/// top-1 accuracy. The class count is one more than the largest label seen.
pub fn linear_probe<V: AsRef<[f64]>>(
    train_feats: &[V],
    train_labels: &[usize],
    test_feats: &[V],
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if train_feats.len() != train_labels.len() {
        return Err(Error::DimensionMismatch { expected: train_feats.len(), found: train_labels.len() });
    }
    if test_feats.len() != test_labels.len() {
        return Err(Error::DimensionMismatch { expected: test_feats.len(), found: test_labels.len() });
    }
    if train_feats.is_empty() || test_feats.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    train_labels.iter().for_each(|&l| seen[l] = true);
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(Error::DegenerateLabels { class });
    }
    let std = Standardizer::fit(train_feats);
    let x = std.apply(train_feats);
    let y: Vec<Vec<f64>> = train_labels
        .iter()
        .map(|&l| {
            let mut t = vec![0.0; classes];
            t[l] = 1.0;
            t
        })
        .collect();
    let model = fit_logistic(&x, &y, Link::Softmax, cfg);
    let correct = std
        .apply(test_feats)
        .iter()
        .zip(test_labels)
        .filter(|(xi, &l)| argmax(&model.scores(xi)) == l)
        .count();
    Ok(ProbeReport { top1: 100.0 * correct as f64 / test_labels.len() as f64 })
}

/// Indices of the `k` highest scores, ties broken by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean over rows of `|top-K ∩ gt| / |top-K ∪ gt|`, `gt` a 0/1 tag vector.
pub fn miou_at_k<S: AsRef<[f64]>, G: AsRef<[u8]>>(scores: &[S], gt: &[G], k: usize) -> Result<f64> {
    if scores.len() != gt.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), found: gt.len() });
    }
    if scores.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut total = 0.0;
    for (s, g) in scores.iter().zip(gt) {
        let (s, g) = (s.as_ref(), g.as_ref());
        if s.len() != g.len() {
            return Err(Error::DimensionMismatch { expected: s.len(), found: g.len() });
        }
        let pred = top_k(s, k);
        let inter = pred.iter().filter(|&&t| g[t] != 0).count();
        let gt_count = g.iter().filter(|&&t| t != 0).count();
        let union = pred.len() + gt_count - inter;
        total += inter as f64 / union as f64;
    }
    Ok(total / scores.len() as f64)
}

/// One-vs-all logistic tag scores fitted on the training split, evaluated
/// on the test split at every K.
pub fn tagging_miou<V: AsRef<[f64]>, G: AsRef<[u8]>>(
    train_feats: &[V],
    train_tags: &[G],
    test_feats: &[V],
    test_tags: &[G],
    ks: &[usize],
    cfg: &ProbeConfig,
) -> Result<TaggingReport> {
    cfg.validate()?;
    if train_feats.len() != train_tags.len() {
        return Err(Error::DimensionMismatch { expected: train_feats.len(), found: train_tags.len() });
    }
    if train_feats.is_empty() || test_feats.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let num_tags = train_tags[0].as_ref().len();
    check_ks(ks, Some(num_tags))?;
    let std = Standardizer::fit(train_feats);
    let x = std.apply(train_feats);
    let y: Vec<Vec<f64>> = train_tags.iter().map(|t| t.as_ref().iter().map(|&b| f64::from(b != 0)).collect()).collect();
    if let Some(bad) = y.iter().find(|t| t.len() != num_tags) {
        return Err(Error::DimensionMismatch { expected: num_tags, found: bad.len() });
    }
    let model = fit_logistic(&x, &y, Link::Sigmoid, cfg);
    let scores: Vec<Vec<f64>> = std.apply(test_feats).iter().map(|xi| model.scores(xi)).collect();
    let mut miou_at = BTreeMap::new();
    for &k in ks {
        miou_at.insert(k, miou_at_k(&scores, test_tags, k)?);
    }
    Ok(TaggingReport { miou_at })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Retrieval cut-offs.
    pub ks: Vec<usize>,
    /// Tagging cut-offs, each at most the number of tags.
    pub tag_ks: Vec<usize>,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], tag_ks: vec![1, 3, 5], probe: ProbeConfig::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        check_ks(&self.ks, None)?;
        check_ks(&self.tag_ks, None)?;
        self.probe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image_to_text: RetrievalReport,
    pub text_to_image: RetrievalReport,
    pub probe: ProbeReport,
    pub tagging: TaggingReport,
}

/// Evaluates query encoders on clean (unaugmented) inputs. Retrieval uses
/// the test samples that have captions; tagging uses the samples that have
/// tags; the probe uses image backbone features of every sample.
pub fn evaluate(image: &EncoderParams, caption: &EncoderParams, data: &SplitDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut image_inter = Vec::new();
    let mut caption_inter = Vec::new();
    for s in &data.test {
        if let Some(raw) = &s.caption_raw {
            image_inter.push(image.forward(&s.image_raw)?.inter);
            caption_inter.push(caption.forward(raw)?.inter);
        }
    }
    let (image_to_text, text_to_image) = retrieval_eval(&image_inter, &caption_inter, &cfg.ks)?;

    let backbone = |samples: &[Sample]| -> Result<Vec<Vec<f64>>> {
        samples.iter().map(|s| image.backbone_features(&s.image_raw)).collect()
    };
    let train_feats = backbone(&data.train)?;
    let test_feats = backbone(&data.test)?;
    let labels = |samples: &[Sample]| samples.iter().map(|s| s.class_id).collect::<Vec<_>>();
    let probe = linear_probe(&train_feats, &labels(&data.train), &test_feats, &labels(&data.test), &cfg.probe)?;

    let tagged = |samples: &[Sample], feats: Vec<Vec<f64>>| -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
        samples.iter().zip(feats).filter_map(|(s, f)| s.tags.clone().map(|t| (f, t))).unzip()
    };
    let (tag_train_x, tag_train_y) = tagged(&data.train, train_feats);
    let (tag_test_x, tag_test_y) = tagged(&data.test, test_feats);
    let tagging = tagging_miou(&tag_train_x, &tag_train_y, &tag_test_x, &tag_test_y, &cfg.tag_ks, &cfg.probe)?;

    Ok(EvalReport { image_to_text, text_to_image, probe, tagging })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn unit(v: &[f64]) -> Vec<f64> {
        crate::numerics::l2_normalize(v).unwrap()
    }

    #[test]
    fn identical_pairs_are_perfect() {
        let feats: Vec<Vec<f64>> = (0..6).map(|i| {
            let mut v = vec![0.0; 6];
            v[i] = 1.0;
            v
        }).collect();
        let (i2t, t2i) = retrieval_eval(&feats, &feats, &[1, 5]).unwrap();
        for r in [i2t, t2i] {
            assert_eq!(r.r_at[&1], 100.0);
            assert_eq!(r.med_r, 1);
        }
    }

    #[test]
    fn hand_built_similarities() {
        // Rows: images, columns: captions.
        // sim = [[.9, .1, .0, .0], [.2, .1, .8, .0], [.0, .0, .5, .5], [.3, .0, .0, .3]]
        let images = [vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        let captions = [vec![0.9, 0.2, 0.0, 0.3], vec![0.1, 0.1, 0.0, 0.0], vec![0.0, 0.8, 0.5, 0.0], vec![0.0, 0.0, 0.5, 0.3]];
        let (i2t, t2i) = retrieval_eval(&images, &captions, &[1, 2, 4]).unwrap();
        // image→text ranks: row0 caption0 → 1; row1 [.2,.1,.8,0] caption1 → 3;
        // row2 [0,0,.5,.5] caption2 → 1 (tie, lower index wins); row3 [.3,0,0,.3] caption3 → 2.
        assert_eq!(i2t.med_r, 1);
        assert_eq!(i2t.r_at[&1], 50.0);
        assert_eq!(i2t.r_at[&2], 75.0);
        assert_eq!(i2t.r_at[&4], 100.0);
        // text→image ranks: col0 [.9,.2,0,.3] → 1; col1 [.1,.1,0,0] → 2;
        // col2 [0,.8,.5,0] → 2; col3 [0,0,.5,.3] → 2.
        assert_eq!(t2i.med_r, 2);
        assert_eq!(t2i.r_at[&1], 25.0);
        assert_eq!(t2i.r_at[&2], 100.0);
    }

    #[test]
    fn random_pairing_is_near_chance() {
        let mut rng = SeededRng::new(5);
        let mut draw = || unit(&(0..16).map(|_| rng.normal()).collect::<Vec<_>>());
        let images: Vec<Vec<f64>> = (0..1000).map(|_| draw()).collect();
        let captions: Vec<Vec<f64>> = (0..1000).map(|_| draw()).collect();
        let (i2t, t2i) = retrieval_eval(&images, &captions, &[1, 10]).unwrap();
        for r in [i2t, t2i] {
            assert!(r.r_at[&1] <= 0.5, "{:?}", r);
            assert!((400..=600).contains(&r.med_r), "{:?}", r);
        }
    }

    #[test]
    fn retrieval_errors() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(retrieval_eval(&empty, &empty, &[1]).unwrap_err(), Error::EmptyTestSet);
        let a = [vec![1.0, 0.0]];
        let b = [vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(retrieval_eval(&a[..], &b[..], &[1]).is_err());
        assert!(retrieval_eval(&a[..], &a[..], &[0]).is_err());
    }

    #[test]
    fn lower_median_of_even_count() {
        assert_eq!(lower_median(&[4, 1, 3, 2]), Some(2));
        assert_eq!(lower_median(&[5, 1, 3]), Some(3));
        assert_eq!(lower_median(&[]), None);
    }

    fn two_clusters(n: usize, rng: &mut SeededRng) -> (Vec<Vec<f64>>, Vec<usize>) {
        (0..n)
            .map(|i| {
                let c = i % 2;
                let centre = if c == 0 { -3.0 } else { 3.0 };
                (vec![centre + rng.normal() * 0.5, rng.normal()], c)
            })
            .unzip()
    }

    #[test]
    fn probe_separable_clusters() {
        let mut rng = SeededRng::new(1);
        let (xtr, ytr) = two_clusters(200, &mut rng);
        let (xte, yte) = two_clusters(100, &mut rng);
        let r = linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default()).unwrap();
        assert_eq!(r.top1, 100.0);
    }

    #[test]
    fn probe_shuffled_labels_is_chance() {
        let mut rng = SeededRng::new(2);
        let feats = |rng: &mut SeededRng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..16).map(|_| rng.normal()).collect()).collect()
        };
        let xtr = feats(&mut rng, 1600);
        let xte = feats(&mut rng, 1600);
        let mut ytr: Vec<usize> = (0..1600).map(|i| i % 8).collect();
        let mut yte = ytr.clone();
        rng.shuffle(&mut ytr);
        rng.shuffle(&mut yte);
        let r = linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default()).unwrap();
        assert!((r.top1 - 12.5).abs() <= 5.0, "{}", r.top1);
    }

    #[test]
    fn probe_constant_features_predicts_majority() {
        let x = vec![vec![1.0, 2.0]; 10];
        let y = vec![0, 1, 1, 1, 2, 2, 1, 1, 0, 1];
        let r = linear_probe(&x, &y, &x, &y, &ProbeConfig::default()).unwrap();
        assert!((r.top1 - 60.0).abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_absent_class() {
        let x = vec![vec![0.0], vec![1.0]];
        let r = linear_probe(&x, &[0, 2], &x, &[0, 2], &ProbeConfig::default());
        assert_eq!(r.unwrap_err(), Error::DegenerateLabels { class: 1 });
    }

    #[test]
    fn miou_examples() {
        let gt: [u8; 6] = [1, 1, 0, 0, 0, 0];
        let exact = [[0.9, 0.8, 0.1, 0.0, 0.0, 0.0]];
        assert_eq!(miou_at_k(&exact, &[gt], 2).unwrap(), 1.0);
        let disjoint = [[0.0, 0.0, 0.5, 0.9, 0.0, 0.0]];
        assert_eq!(miou_at_k(&disjoint, &[gt], 2).unwrap(), 0.0);
        let gt5: [u8; 10] = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let partial = [[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]];
        assert_eq!(miou_at_k(&partial, &[gt5], 5).unwrap(), 0.25);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.5, 0.7, 0.5, 0.7], 3), vec![1, 3, 0]);
    }

    #[test]
    fn tagging_learns_linear_tags() {
        let mut rng = SeededRng::new(4);
        let mut gen = |n: usize| -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
            (0..n)
                .map(|i| {
                    let c = i % 4;
                    let mut x: Vec<f64> = (0..4).map(|_| rng.normal() * 0.2).collect();
                    x[c] += 2.0;
                    let mut t = vec![0u8; 8];
                    t[2 * c] = 1;
                    t[2 * c + 1] = 1;
                    (x, t)
                })
                .unzip()
        };
        let (xtr, ttr) = gen(200);
        let (xte, tte) = gen(100);
        let r = tagging_miou(&xtr, &ttr, &xte, &tte, &[2, 4], &ProbeConfig::default()).unwrap();
        assert_eq!(r.miou_at[&2], 1.0);
        assert_eq!(r.miou_at[&4], 0.5);
        assert!(tagging_miou(&xtr, &ttr, &xte, &tte, &[9], &ProbeConfig::default()).is_err());
    }
}
