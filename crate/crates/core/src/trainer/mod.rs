//! Stage-wise training of the uncertainty head on genuine pairs.
//!
//! Means are frozen inputs; only the head that predicts σ² is optimized, by
//! SGD with momentum on the average negative mutual likelihood score of all
//! genuine pairs in each minibatch.

mod batch;
mod checkpoint;
mod gradcheck;
mod head;
mod loss;

pub use batch::{sample_minibatch, Minibatch};
pub use checkpoint::{decode_head, encode_head, load_head, save_head, HEAD_FORMAT_VERSION, HEAD_MAGIC};
pub use gradcheck::{
    coordinate_error, gradient_check, gradient_check_against, GradCheckReport, ABS_SCALE_FLOOR,
};
pub use head::{
    ForwardCache, HeadGradients, HeadMode, ParamTensor, UncertaintyHead, BN_EPS, BN_MOMENTUM,
};
pub use loss::{mls_loss, mls_loss_grad, GenuinePairSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PfeError, Result};
use crate::synthlab::SynthCorpus;

/// Schedule for a CNN-scale head: 1e-3, then 1e-4 from step 2000.
pub const CNN_LR_SCHEDULE: [(usize, f64); 2] = [(0, 1e-3), (2000, 1e-4)];

/// Default schedule: same breakpoint and 10x drop, rates scaled up 10x for
/// the small synthetic head.
pub const DEFAULT_LR_SCHEDULE: [(usize, f64); 2] = [(0, 1e-2), (2000, 1e-3)];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub subjects_per_batch: usize,
    pub images_per_subject: usize,
    pub steps: usize,
    /// Piecewise-constant `(first step, rate)` entries, sorted by step.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Width of the first FC layer; `None` means the input width.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            subjects_per_batch: 64,
            images_per_subject: 4,
            steps: 3000,
            lr_schedule: DEFAULT_LR_SCHEDULE.to_vec(),
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.subjects_per_batch * self.images_per_subject
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects_per_batch < 1 {
            return Err(PfeError::Config("subjects_per_batch must be >= 1".into()));
        }
        if self.images_per_subject < 2 {
            return Err(PfeError::Config(
                "images_per_subject must be >= 2 so genuine pairs exist".into(),
            ));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule[0].0 != 0 {
            return Err(PfeError::Config("lr_schedule must start at step 0".into()));
        }
        if self.lr_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(PfeError::Config("lr_schedule steps must increase".into()));
        }
        if self.lr_schedule.iter().any(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
            return Err(PfeError::Config("learning rates must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PfeError::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PfeError::Config("weight_decay must be finite and >= 0".into()));
        }
        if self.hidden == Some(0) {
            return Err(PfeError::Config("hidden width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map(|(_, r)| *r)
            .unwrap_or(0.0)
    }

    /// Fresh head sized for `corpus`, seeded from the config seed.
    pub fn init_head(&self, corpus: &SynthCorpus) -> Result<UncertaintyHead> {
        let din = corpus.params.head_input_dim();
        UncertaintyHead::init(
            din,
            self.hidden.unwrap_or(din),
            corpus.params.dim,
            self.seed ^ 0x5eed_0f_4ead,
        )
    }
}

/// Objective minimized by training: MLS loss plus `½·wd·(‖W1‖² + ‖W2‖²)`.
/// Always evaluated with batch statistics.
pub fn objective(
    head: &UncertaintyHead,
    inputs: &[Vec<f64>],
    mus: &[Vec<f64>],
    pairs: &GenuinePairSet,
    weight_decay: f64,
) -> Result<f64> {
    let cache = head.forward_train(inputs)?;
    let loss = mls_loss(mus, &cache.variances, pairs)?;
    Ok(loss + 0.5 * weight_decay * head.sq_weight_norm())
}

/// Analytic gradient of [`objective`]. Returns the MLS loss (without the
/// decay term) alongside the gradients.
pub fn head_gradients(
    head: &UncertaintyHead,
    inputs: &[Vec<f64>],
    mus: &[Vec<f64>],
    pairs: &GenuinePairSet,
    weight_decay: f64,
) -> Result<(f64, HeadGradients)> {
    let cache = head.forward_train(inputs)?;
    head_gradients_from_cache(head, &cache, mus, pairs, weight_decay)
}

fn head_gradients_from_cache(
    head: &UncertaintyHead,
    cache: &ForwardCache,
    mus: &[Vec<f64>],
    pairs: &GenuinePairSet,
    weight_decay: f64,
) -> Result<(f64, HeadGradients)> {
    if mus.len() != cache.inputs.len() {
        return Err(PfeError::validation(format!(
            "{} means for {} head inputs",
            mus.len(),
            cache.inputs.len()
        )));
    }
    let (loss, d_var) = mls_loss_grad(mus, &cache.variances, pairs)?;
    let mut g = head.backward(cache, &d_var);
    if weight_decay > 0.0 {
        for (gw, w) in g.w1.iter_mut().zip(&head.w1) {
            *gw += weight_decay * w;
        }
        for (gw, w) in g.w2.iter_mut().zip(&head.w2) {
            *gw += weight_decay * w;
        }
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: UncertaintyHead,
    /// MLS loss of each step's minibatch, before that step's update.
    pub losses: Vec<f64>,
}

/// Runs exactly `config.steps` momentum-SGD updates and returns the head in
/// inference mode. The corpus is only read.
pub fn train(
    mut head: UncertaintyHead,
    corpus: &SynthCorpus,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.steps == 0 {
        return Ok(TrainOutcome {
            head,
            losses: Vec::new(),
        });
    }
    if head.output_dim() != corpus.params.dim || head.input_dim() != corpus.params.head_input_dim()
    {
        return Err(PfeError::Dimension {
            expected: corpus.params.head_input_dim(),
            found: head.input_dim(),
        });
    }
    head.set_mode(HeadMode::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = HeadGradients::zeros_like(&head);
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = sample_minibatch(corpus, config, &mut rng)?;
        let cache = head.forward_train(&batch.inputs)?;
        let (loss, grads) =
            head_gradients_from_cache(&head, &cache, &batch.mus, &batch.pairs, config.weight_decay)?;
        if !loss.is_finite() {
            return Err(PfeError::Divergence { step, loss });
        }
        head.update_running_stats(&cache);
        let lr = config.lr_at(step);
        for t in ParamTensor::ORDER {
            let g = grads.tensor(t);
            let v = velocity.tensor_mut(t);
            let p = head.tensor_mut(t);
            for k in 0..p.len() {
                v[k] = config.momentum * v[k] + g[k];
                p[k] -= lr * v[k];
            }
        }
        if !head.is_finite() {
            return Err(PfeError::Divergence { step, loss: f64::NAN });
        }
        if step % 500 == 0 {
            log::debug!("step {step}: loss {loss:.6} lr {lr:e}");
        }
        losses.push(loss);
    }
    head.set_mode(HeadMode::Inference);
    Ok(TrainOutcome { head, losses })
}

/// Predicted variances for every corpus sample (inference mode).
pub fn predict_corpus(head: &UncertaintyHead, corpus: &SynthCorpus) -> Result<Vec<Vec<f64>>> {
    corpus
        .samples
        .iter()
        .map(|s| head.predict_one(&s.head_input()))
        .collect()
}
