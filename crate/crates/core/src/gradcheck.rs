//! Finite-difference check of every loss composed with an encoder.
//!
//! Each trial draws small random encoders, an input, a positive key and a
//! queue from its own seed. For each of the five losses, the analytic
//! gradient with respect to all encoder parameters (loss gradient, then
//! normalization backward, then MLP backward) is compared with central
//! differences of the same scalar function of the flattened parameters.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoders::{init_encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{hinge_ranking, info_nce, tag_supervised_nce, LossGrad, TaggedKey};
use crate::numerics::{dot_unchecked, finite_diff_grad, l2_normalize, relative_error, DEFAULT_FD_STEP};
use crate::rng::SeededRng;

/// Largest accepted norm-wise relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const QUEUE_LEN: usize = 12;
const NUM_TAGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    JIi,
    JTag,
    JCc,
    JIc,
    JCi,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::JIi, LossKind::JTag, LossKind::JCc, LossKind::JIc, LossKind::JCi];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::JIi => "j_ii",
            LossKind::JTag => "j_tag",
            LossKind::JCc => "j_cc",
            LossKind::JIc => "j_ic",
            LossKind::JCi => "j_ci",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Negative control: scales the analytic gradient of this loss by 1.01
    /// before comparing.
    pub corrupt: Option<LossKind>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 100, seed: 0, corrupt: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: LossKind,
    pub max_rel_error: f64,
    /// Seed of the instance that produced `max_rel_error`.
    pub worst_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub loss: LossKind,
    pub instance_seed: u64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub per_loss: Vec<LossCheck>,
    pub failures: Vec<Failure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// One randomly drawn problem.
struct Instance {
    image: EncoderParams,
    caption: EncoderParams,
    image_input: Vec<f64>,
    caption_input: Vec<f64>,
    intra_pos: Vec<f64>,
    inter_pos: Vec<f64>,
    intra_queue: Vec<Vec<f64>>,
    inter_queue: Vec<Vec<f64>>,
    query_tags: Vec<u8>,
    queue_tags: Vec<Vec<u8>>,
}

/// Instances with a ReLU pre-activation or hinge margin closer than this to
/// its kink are redrawn.
const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 64;

const TAU: f64 = 0.2;
const ALPHA: f64 = 0.5;
const EPSILON: f64 = 1.0;

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    l2_normalize(&(0..dim).map(|_| rng.normal()).collect::<Vec<_>>())
}

impl Instance {
    /// The first instance at or after `seed` in the redraw chain whose
    /// kinks are all at least [`KINK_MARGIN`] away. Returns the seed used.
    fn draw_smooth(seed: u64) -> Result<(u64, Self)> {
        let mut s = seed;
        for _ in 0..MAX_REDRAWS {
            let inst = Self::draw(s)?;
            if inst.kink_margin()? >= KINK_MARGIN {
                return Ok((s, inst));
            }
            s = SeededRng::new(s).next_u64();
        }
        Err(Error::InvalidConfig { field: "seed", reason: "no instance away from ReLU and hinge kinks" })
    }

    fn kink_margin(&self) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for (params, input) in [(&self.image, &self.image_input), (&self.caption, &self.caption_input)] {
            let (out, cache) = params.forward_cached(input)?;
            margin = margin.min(cache.min_relu_margin());
            let s_pos = dot_unchecked(&out.inter, &self.inter_pos);
            for k in &self.inter_queue {
                margin = margin.min((ALPHA - s_pos + dot_unchecked(&out.inter, k)).abs());
            }
        }
        Ok(margin)
    }

    fn draw(seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let image_cfg = EncoderConfig::new(vec![5, 16, 16], 3, 4);
        let caption_cfg = EncoderConfig::new(vec![4, 16, 16], 3, 4);
        let image = init_encoder(&image_cfg, &mut rng)?;
        let caption = init_encoder(&caption_cfg, &mut rng)?;
        let image_input = (0..5).map(|_| rng.normal()).collect();
        let caption_input = (0..4).map(|_| rng.normal()).collect();
        let intra_pos = unit_vector(3, &mut rng)?;
        let inter_pos = unit_vector(4, &mut rng)?;
        let intra_queue = (0..QUEUE_LEN).map(|_| unit_vector(3, &mut rng)).collect::<Result<_>>()?;
        let inter_queue = (0..QUEUE_LEN).map(|_| unit_vector(4, &mut rng)).collect::<Result<_>>()?;
        let mut tags = || (0..NUM_TAGS).map(|_| u8::from(rng.bernoulli(0.5))).collect::<Vec<u8>>();
        // At least three query tags so the positive set can extend past the key.
        let mut query_tags = tags();
        query_tags[..3].fill(1);
        let queue_tags = (0..QUEUE_LEN).map(|_| tags()).collect();
        Ok(Self { image, caption, image_input, caption_input, intra_pos, inter_pos, intra_queue, inter_queue, query_tags, queue_tags })
    }

    fn encoder(&self, kind: LossKind) -> (&EncoderParams, &[f64]) {
        match kind {
            LossKind::JIi | LossKind::JTag | LossKind::JIc => (&self.image, &self.image_input),
            LossKind::JCc | LossKind::JCi => (&self.caption, &self.caption_input),
        }
    }

    /// Loss of the chosen feature of `params` applied to the encoder input.
    fn loss(&self, kind: LossKind, params: &EncoderParams) -> Result<(LossGrad, bool)> {
        let (_, input) = self.encoder(kind);
        let out = params.forward(input)?;
        Ok(match kind {
            LossKind::JIi | LossKind::JCc => (info_nce(&out.intra, &self.intra_pos, &self.intra_queue, TAU)?, true),
            LossKind::JTag => {
                let queue: Vec<TaggedKey<'_>> = self
                    .intra_queue
                    .iter()
                    .zip(&self.queue_tags)
                    .map(|(k, t)| TaggedKey { key: k, tags: Some(t) })
                    .collect();
                (tag_supervised_nce(&out.intra, &self.query_tags, &self.intra_pos, &queue, TAU, EPSILON)?, true)
            }
            LossKind::JIc | LossKind::JCi => (hinge_ranking(&out.inter, &self.inter_pos, &self.inter_queue, ALPHA)?, false),
        })
    }

    fn analytic(&self, kind: LossKind) -> Result<Vec<f64>> {
        let (params, input) = self.encoder(kind);
        let (out, cache) = params.forward_cached(input)?;
        let (lg, on_intra) = self.loss(kind, params)?;
        let (g_intra, g_inter) = if on_intra {
            (lg.grad, vec![0.0; out.inter.len()])
        } else {
            (vec![0.0; out.intra.len()], lg.grad)
        };
        Ok(params.backward(&cache, &g_intra, &g_inter)?.flatten())
    }

    fn numeric(&self, kind: LossKind) -> Result<Vec<f64>> {
        let (params, _) = self.encoder(kind);
        let mut probe = params.clone();
        let mut failure = None;
        let grad = finite_diff_grad(
            |theta| {
                let evaluated = probe.load_flat(theta).and_then(|()| self.loss(kind, &probe));
                match evaluated {
                    Ok((lg, _)) => lg.value,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &params.flatten(),
            DEFAULT_FD_STEP,
        );
        match failure {
            Some(e) => Err(e),
            None => grad,
        }
    }
}

/// Relative error of one loss on the instance drawn from `seed`, and the
/// seed of the instance actually checked.
pub fn check_instance(kind: LossKind, seed: u64, corrupt: bool) -> Result<(u64, f64)> {
    let (used, inst) = Instance::draw_smooth(seed)?;
    let mut analytic = inst.analytic(kind)?;
    if corrupt {
        analytic.iter_mut().for_each(|g| *g *= 1.01);
    }
    let numeric = inst.numeric(kind)?;
    let err = relative_error(&analytic, &numeric);
    // Both zero (e.g. an inactive hinge) counts as agreement.
    let err = if err.is_nan() && analytic.iter().chain(&numeric).all(|&g| g == 0.0) { 0.0 } else { err };
    Ok((used, err))
}

/// Instance seed of trial `t`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    SeededRng::new(seed).fork(trial as u64).next_u64()
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig { field: "trials", reason: "must be at least 1" });
    }
    let mut per_loss: Vec<LossCheck> =
        LossKind::ALL.iter().map(|&loss| LossCheck { loss, max_rel_error: 0.0, worst_seed: 0 }).collect();
    let mut failures = Vec::new();
    for trial in 0..cfg.trials {
        let seed = trial_seed(cfg.seed, trial);
        for check in per_loss.iter_mut() {
            let (seed, err) = check_instance(check.loss, seed, cfg.corrupt == Some(check.loss))?;
            if !(err < GRADCHECK_TOLERANCE) {
                failures.push(Failure { loss: check.loss, instance_seed: seed, rel_error: err });
            }
            if !(err <= check.max_rel_error) {
                check.max_rel_error = err;
                check.worst_seed = seed;
            }
        }
    }
    Ok(GradcheckReport { per_loss, failures })
}
