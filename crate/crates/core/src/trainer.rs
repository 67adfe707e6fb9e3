//! Training step and loop.
//!
//! One step, for a batch of samples:
//! 1. augment every image and caption twice (query view, key view);
//! 2. query encoders embed the query view through both heads, key encoders
//!    embed the key view;
//! 3. evaluate [`combined_loss`] against the current queue snapshots, the
//!    positive of each query being the key of the same sample;
//! 4. backpropagate into the query encoders only;
//! 5. SGD with momentum and weight decay at the scheduled learning rate;
//! 6. EMA-update both key encoders;
//! 7. enqueue the batch's keys and advance the step counter.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{init_encoder, EncoderConfig, EncoderParams, FeaturePairOutput, ForwardCache, MomentumPair};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossBreakdown, LossConfig, LossTerms, ModalityFeatures, SampleFeatures};
use crate::numerics;
use crate::queue::{KeyQueue, QueueEntry};
use crate::rng::SeededRng;
use crate::synthdata::{augment, AugConfig, Sample};

const INIT_STREAM: u64 = 0x696e_6974;
const REFILL_STREAM: u64 = 0x7265_6669_6c6c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_image: f64,
    pub lr_text: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr_image: 0.03, lr_text: 0.03, sgd_momentum: 0.9, weight_decay: 1e-4, batch_size: 64, epochs: 50 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason| Err(Error::InvalidConfig { field, reason });
        if !(self.lr_image > 0.0 && self.lr_image.is_finite()) {
            return bad("lr_image", "must be positive");
        }
        if !(self.lr_text > 0.0 && self.lr_text.is_finite()) {
            return bad("lr_text", "must be positive");
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad("sgd_momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        Ok(())
    }
}

/// Encoder shapes plus the momentum-encoder and queue settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image: EncoderConfig,
    pub caption: EncoderConfig,
    /// EMA coefficient `m` of both key encoders.
    pub momentum: f64,
    pub image_queue_capacity: usize,
    pub caption_queue_capacity: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image: EncoderConfig::default(),
            caption: EncoderConfig { layer_dims: vec![24, 64, 64], ..EncoderConfig::default() },
            momentum: 0.999,
            image_queue_capacity: 256,
            caption_queue_capacity: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.caption.validate()?;
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig { field: "momentum", reason: "must lie in [0, 1]" });
        }
        if self.image_queue_capacity == 0 {
            return Err(Error::InvalidConfig { field: "image_queue_capacity", reason: "must be positive" });
        }
        if self.caption_queue_capacity == 0 {
            return Err(Error::InvalidConfig { field: "caption_queue_capacity", reason: "must be positive" });
        }
        if self.image.inter_dim != self.caption.inter_dim {
            return Err(Error::InvalidConfig { field: "inter_dim", reason: "image and caption common spaces differ" });
        }
        Ok(())
    }
}

/// Everything a training step needs besides the state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub aug: AugConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        self.aug.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: EncoderParams,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        Self { velocity: params.zeros_like() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub image: f64,
    pub text: f64,
}

/// `base · ½ (1 + cos(π · step / total))`, no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// `v ← μ·v + g + wd·p;  p ← p − lr·v`, elementwise over every tensor.
pub fn sgd_update(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.velocity) {
        return Err(Error::DimensionMismatch { expected: params.num_params(), found: grads.num_params() });
    }
    let grad_tensors = grads.named_tensors();
    if grad_tensors.iter().any(|(_, g)| !numerics::all_finite(g)) {
        return Err(Error::NonFiniteGradient);
    }
    for ((p, v), (_, g)) in params.tensors_mut().into_iter().zip(state.velocity.tensors_mut()).zip(grad_tensors) {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = cfg.sgd_momentum * *vi + gi + cfg.weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub image: MomentumPair,
    pub caption: MomentumPair,
    pub image_queue: KeyQueue,
    pub caption_queue: KeyQueue,
    pub image_opt: OptimizerState,
    pub caption_opt: OptimizerState,
    pub step: u64,
    pub rng: SeededRng,
}

impl TrainState {
    /// Fresh encoders drawn from a stream forked off `seed`; the training
    /// stream itself starts at `seed`.
    pub fn new(model: &ModelConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        let rng = SeededRng::new(seed);
        let mut init_rng = rng.fork(INIT_STREAM);
        let image = init_encoder(&model.image, &mut init_rng)?;
        let caption = init_encoder(&model.caption, &mut init_rng)?;
        Self::from_parts(model, image, caption, rng)
    }

    /// State around given query encoders: keys copied from the queries,
    /// zero velocities, empty queues, step 0.
    pub fn from_parts(model: &ModelConfig, image: EncoderParams, caption: EncoderParams, rng: SeededRng) -> Result<Self> {
        Ok(Self {
            image_opt: OptimizerState::new(&image),
            caption_opt: OptimizerState::new(&caption),
            image: MomentumPair::new(image, model.momentum)?,
            caption: MomentumPair::new(caption, model.momentum)?,
            image_queue: KeyQueue::new(model.image_queue_capacity)?,
            caption_queue: KeyQueue::new(model.caption_queue_capacity)?,
            step: 0,
            rng,
        })
    }

    /// Key-encoder features of a fresh key view of every sample, enqueued in
    /// a shuffled order. Uses a stream forked from the current rng state and
    /// touches nothing but the queues, so it can rebuild the queues after a
    /// checkpoint restore without perturbing the training trajectory.
    pub fn refill_queues(&mut self, samples: &[Sample], aug: &AugConfig) -> Result<()> {
        let mut rng = self.rng.fork(REFILL_STREAM);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        self.image_queue.clear();
        self.caption_queue.clear();
        for &i in &order {
            let s = &samples[i];
            let img = self.image.key.forward(&augment(&s.image_raw, aug, &mut rng))?;
            self.image_queue.enqueue_batch(vec![QueueEntry {
                intra_key: img.intra,
                inter_key: img.inter,
                tags: s.tags.clone(),
                source_id: i,
            }])?;
            if let Some(cap_raw) = &s.caption_raw {
                let cap = self.caption.key.forward(&augment(cap_raw, aug, &mut rng))?;
                self.caption_queue.enqueue_batch(vec![QueueEntry {
                    intra_key: cap.intra,
                    inter_key: cap.inter,
                    tags: None,
                    source_id: i,
                }])?;
            }
        }
        Ok(())
    }
}

struct QueryPass {
    out: FeaturePairOutput,
    cache: ForwardCache,
}

struct ModalityPass {
    query: QueryPass,
    key: FeaturePairOutput,
}

fn embed(pair: &MomentumPair, raw: &[f64], aug: &AugConfig, rng: &mut SeededRng) -> Result<ModalityPass> {
    let query_view = augment(raw, aug, rng);
    let key_view = augment(raw, aug, rng);
    let (out, cache) = pair.query.forward_cached(&query_view)?;
    let key = pair.key.forward(&key_view)?;
    Ok(ModalityPass { query: QueryPass { out, cache }, key })
}

fn features(pass: &ModalityPass) -> ModalityFeatures {
    ModalityFeatures {
        query_intra: pass.query.out.intra.clone(),
        query_inter: pass.query.out.inter.clone(),
        key_intra: pass.key.intra.clone(),
        key_inter: pass.key.inter.clone(),
    }
}

/// One optimization step over `batch`, given as `(sample id, sample)` pairs.
pub fn train_step(
    state: &mut TrainState,
    batch: &[(usize, &Sample)],
    cfg: &TrainConfig,
    lr: LearningRates,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut image_passes = Vec::with_capacity(batch.len());
    let mut caption_passes = Vec::with_capacity(batch.len());
    for (_, s) in batch {
        image_passes.push(embed(&state.image, &s.image_raw, &cfg.aug, &mut state.rng)?);
        caption_passes.push(match &s.caption_raw {
            Some(raw) => Some(embed(&state.caption, raw, &cfg.aug, &mut state.rng)?),
            None => None,
        });
    }

    let sample_features: Vec<SampleFeatures> = batch
        .iter()
        .zip(&image_passes)
        .zip(&caption_passes)
        .map(|(((_, s), img), cap)| SampleFeatures {
            image: features(img),
            caption: cap.as_ref().map(features),
            tags: s.tags.clone(),
        })
        .collect();
    let breakdown = combined_loss(
        &sample_features,
        &state.image_queue.snapshot(),
        &state.caption_queue.snapshot(),
        &cfg.loss,
    )?;

    let mut image_grads = state.image.query.zeros_like();
    let mut caption_grads = state.caption.query.zeros_like();
    for ((g, img), cap) in breakdown.grads.iter().zip(&image_passes).zip(&caption_passes) {
        state.image.query.backward_into(&img.query.cache, &g.image_intra, &g.image_inter, &mut image_grads)?;
        if let (Some(cap), Some(gi), Some(ge)) = (cap, &g.caption_intra, &g.caption_inter) {
            state.caption.query.backward_into(&cap.query.cache, gi, ge, &mut caption_grads)?;
        }
    }

    sgd_update(&mut state.image.query, &image_grads, &mut state.image_opt, lr.image, &cfg.optim)?;
    sgd_update(&mut state.caption.query, &caption_grads, &mut state.caption_opt, lr.text, &cfg.optim)?;
    state.image.momentum_update();
    state.caption.momentum_update();

    let mut image_entries = Vec::with_capacity(batch.len());
    let mut caption_entries = Vec::with_capacity(batch.len());
    for (((id, s), img), cap) in batch.iter().zip(image_passes).zip(caption_passes) {
        image_entries.push(QueueEntry {
            intra_key: img.key.intra,
            inter_key: img.key.inter,
            tags: s.tags.clone(),
            source_id: *id,
        });
        if let Some(cap) = cap {
            caption_entries.push(QueueEntry {
                intra_key: cap.key.intra,
                inter_key: cap.key.inter,
                tags: None,
                source_id: *id,
            });
        }
    }
    state.image_queue.enqueue_batch(image_entries)?;
    state.caption_queue.enqueue_batch(caption_entries)?;
    state.step += 1;
    Ok(breakdown)
}

/// Per-epoch means of the step losses and the learning rates of the
/// epoch's last step. `epoch` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr_image: f64,
    pub lr_text: f64,
    pub terms: LossTerms,
}

pub fn steps_per_epoch(num_samples: usize, batch_size: usize) -> u64 {
    num_samples.div_ceil(batch_size) as u64
}

/// Runs the epochs remaining after `state.step`, calling `on_epoch` with the
/// state and metrics after each one; an error from the callback stops the
/// loop. Batches are drawn from a fresh shuffle of `train` per epoch; the
/// last batch of an epoch may be short.
pub fn train_loop<F, E>(
    state: &mut TrainState,
    train: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> core::result::Result<Vec<EpochMetrics>, E>
where
    F: FnMut(&TrainState, &EpochMetrics) -> core::result::Result<(), E>,
    E: From<Error>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch.into());
    }
    let per_epoch = steps_per_epoch(train.len(), cfg.optim.batch_size);
    let total_steps = per_epoch * cfg.optim.epochs as u64;
    let first_epoch = (state.step / per_epoch) as usize;
    let mut history = Vec::new();

    for epoch in first_epoch..cfg.optim.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        state.rng.shuffle(&mut order);
        let mut sums = LossTerms::default();
        let mut lr = LearningRates { image: 0.0, text: 0.0 };
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.optim.batch_size) {
            lr = LearningRates {
                image: cosine_lr(state.step, total_steps, cfg.optim.lr_image),
                text: cosine_lr(state.step, total_steps, cfg.optim.lr_text),
            };
            let batch: Vec<(usize, &Sample)> = chunk.iter().map(|&i| (i, &train[i])).collect();
            let t = train_step(state, &batch, cfg, lr)?.terms;
            sums.j_ii += t.j_ii;
            sums.j_tag += t.j_tag;
            sums.j_cc += t.j_cc;
            sums.j_ic += t.j_ic;
            sums.j_ci += t.j_ci;
            sums.total += t.total;
            steps += 1;
        }
        let n = steps as f64;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            lr_image: lr.image,
            lr_text: lr.text,
            terms: LossTerms {
                j_ii: sums.j_ii / n,
                j_tag: sums.j_tag / n,
                j_cc: sums.j_cc / n,
                j_ic: sums.j_ic / n,
                j_ci: sums.j_ci / n,
                total: sums.total / n,
            },
        };
        on_epoch(state, &metrics)?;
        history.push(metrics);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Linear;
    use crate::numerics::Matrix;
    use crate::synthdata::{generate, GenConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            image: EncoderConfig::new(vec![8, 32, 32], 4, 6),
            caption: EncoderConfig::new(vec![6, 32, 32], 4, 6),
            momentum: 0.99,
            image_queue_capacity: 32,
            caption_queue_capacity: 32,
        }
    }

    fn tiny_data(seed: u64) -> Vec<Sample> {
        let cfg = GenConfig { samples_per_class: 12, image_dim: 8, caption_dim: 6, num_classes: 4, num_tags: 8, tags_per_class: 3, seed, ..GenConfig::default() };
        generate(&cfg).unwrap().train
    }

    fn scalar_params(p: f64) -> EncoderParams {
        let lin = |v: f64| Linear { weight: Matrix::from_vec(1, 1, vec![v]).unwrap(), bias: vec![v] };
        let mlp = |v: f64| crate::encoders::Mlp { layers: vec![lin(v)] };
        EncoderParams { backbone: mlp(p), intra_head: mlp(p), inter_head: None }
    }

    #[test]
    fn cosine_schedule_examples() {
        assert_eq!(cosine_lr(0, 100, 0.03), 0.03);
        assert!(cosine_lr(100, 100, 0.03).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.03) - 0.015).abs() < 1e-15);
        assert!(cosine_lr(30, 100, 1.0) > cosine_lr(31, 100, 1.0));
    }

    #[test]
    fn sgd_plain_step() {
        let cfg = OptimConfig { sgd_momentum: 0.0, weight_decay: 0.0, ..OptimConfig::default() };
        let mut p = scalar_params(1.0);
        let mut st = OptimizerState::new(&p);
        let g = scalar_params(0.5);
        for k in 1..=3 {
            sgd_update(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
            assert!((p.flatten()[0] - (1.0 - 0.05 * k as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_zero_grad_decays_velocity() {
        let cfg = OptimConfig { sgd_momentum: 0.9, weight_decay: 0.0, ..OptimConfig::default() };
        let mut p = scalar_params(1.0);
        let mut st = OptimizerState::new(&p);
        st.velocity = scalar_params(2.0);
        let before = p.clone();
        sgd_update(&mut p, &scalar_params(0.0), &mut st, 0.0, &cfg).unwrap();
        assert_eq!(p, before);
        assert!(st.velocity.flatten().iter().all(|&v| (v - 1.8).abs() < 1e-15));
    }

    #[test]
    fn sgd_weight_decay_step() {
        let cfg = OptimConfig { sgd_momentum: 0.0, weight_decay: 0.1, ..OptimConfig::default() };
        let mut p = scalar_params(1.0);
        let mut st = OptimizerState::new(&p);
        sgd_update(&mut p, &scalar_params(0.0), &mut st, 1.0, &cfg).unwrap();
        assert!(p.flatten().iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let cfg = OptimConfig::default();
        let mut p = scalar_params(1.0);
        let mut st = OptimizerState::new(&p);
        let err = sgd_update(&mut p, &scalar_params(f64::NAN), &mut st, 0.1, &cfg).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient);
        assert_eq!(p, scalar_params(1.0));
    }

    #[test]
    fn step_applies_ema_to_keys_and_grows_queues() {
        let model = tiny_model();
        let data = tiny_data(1);
        let mut state = TrainState::new(&model, 3).unwrap();
        let cfg = TrainConfig::default();
        let batch: Vec<(usize, &Sample)> = data.iter().take(10).enumerate().collect();
        for step in 1..=4u64 {
            let old_image_key = state.image.key.clone();
            let old_caption_key = state.caption.key.clone();
            train_step(&mut state, &batch, &cfg, LearningRates { image: 0.005, text: 0.005 }).unwrap();
            for (old, pair) in [(&old_image_key, &state.image), (&old_caption_key, &state.caption)] {
                let expected: Vec<f64> = old
                    .flatten()
                    .iter()
                    .zip(pair.query.flatten())
                    .map(|(k, q)| pair.m * k + (1.0 - pair.m) * q)
                    .collect();
                assert_eq!(pair.key.flatten(), expected);
            }
            let expected_len = (10 * step as usize).min(32);
            assert_eq!(state.image_queue.len(), expected_len);
            assert_eq!(state.caption_queue.len(), expected_len);
            assert_eq!(state.step, step);
        }
    }

    #[test]
    fn step_without_captions_leaves_caption_encoder_alone() {
        let model = tiny_model();
        let mut data = tiny_data(2);
        data.iter_mut().for_each(|s| s.caption_raw = None);
        let mut state = TrainState::new(&model, 4).unwrap();
        let before = state.caption.query.clone();
        let batch: Vec<(usize, &Sample)> = data.iter().take(8).enumerate().collect();
        let cfg = TrainConfig { optim: OptimConfig { weight_decay: 0.0, ..OptimConfig::default() }, ..TrainConfig::default() };
        let b = train_step(&mut state, &batch, &cfg, LearningRates { image: 0.1, text: 0.1 }).unwrap();
        assert_eq!(state.caption.query, before);
        assert_eq!(state.caption_queue.len(), 0);
        assert_eq!(b.terms.j_cc, 0.0);
        assert!(train_step(&mut state, &[], &cfg, LearningRates { image: 0.1, text: 0.1 }).is_err());
    }

    /// Replays a step with the same augmentations and queue snapshot after
    /// the update; the loss should drop in the large majority of trials.
    #[test]
    fn single_step_descends_statistically() {
        let model = tiny_model();
        let cfg = TrainConfig::default();
        let lr = LearningRates { image: 0.002, text: 0.002 };
        let mut wins = 0;
        for trial in 0..100u64 {
            let data = tiny_data(100 + trial);
            let mut state = TrainState::new(&model, trial).unwrap();
            state.refill_queues(&data, &cfg.aug).unwrap();
            let batch: Vec<(usize, &Sample)> = data.iter().take(8).enumerate().collect();
            let (queues, rng) = ((state.image_queue.clone(), state.caption_queue.clone()), state.rng.clone());
            let first = train_step(&mut state, &batch, &cfg, lr).unwrap().terms.total;
            state.image_queue = queues.0;
            state.caption_queue = queues.1;
            state.rng = rng;
            let second = train_step(&mut state, &batch, &cfg, lr).unwrap().terms.total;
            if second <= first {
                wins += 1;
            }
        }
        assert!(wins >= 80, "{wins}/100");
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let model = tiny_model();
        let data = tiny_data(5);
        let mut state = TrainState::new(&model, 5).unwrap();
        let before = state.clone();
        let cfg = TrainConfig { optim: OptimConfig { epochs: 0, ..OptimConfig::default() }, ..TrainConfig::default() };
        let hist = train_loop(&mut state, &data, &cfg, |_, _| Ok::<(), Error>(())).unwrap();
        assert!(hist.is_empty());
        assert_eq!(state, before);
    }

    #[test]
    fn loop_is_deterministic() {
        let model = tiny_model();
        let data = tiny_data(6);
        let cfg = TrainConfig { optim: OptimConfig { epochs: 3, batch_size: 10, ..OptimConfig::default() }, ..TrainConfig::default() };
        let run = || {
            let mut s = TrainState::new(&model, 9).unwrap();
            let h = train_loop(&mut s, &data, &cfg, |_, _| Ok::<(), Error>(())).unwrap();
            (s, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 3);
        assert_eq!(a.step, 3 * steps_per_epoch(data.len(), 10));
        assert!(ha.iter().all(|m| m.terms.is_finite()));
    }

    #[test]
    fn refill_touches_only_queues() {
        let model = tiny_model();
        let data = tiny_data(7);
        let mut state = TrainState::new(&model, 1).unwrap();
        let before = state.clone();
        state.refill_queues(&data, &AugConfig::default()).unwrap();
        assert_eq!(state.image_queue.len(), 32);
        assert_eq!(state.image, before.image);
        assert_eq!(state.rng, before.rng);
        assert_eq!(state.step, 0);
    }
}
