use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::loss::GenuinePairSet;
use super::TrainConfig;
use crate::error::{PfeError, Result};
use crate::synthlab::SynthCorpus;

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    /// Head inputs (observed mean ++ auxiliary channels), one row per image.
    pub inputs: Vec<Vec<f64>>,
    /// Frozen means, aligned with `inputs`.
    pub mus: Vec<Vec<f64>>,
    pub pairs: GenuinePairSet,
    /// Corpus sample index of each row.
    pub sample_indices: Vec<usize>,
}

/// Draws `subjects_per_batch` distinct subjects and `images_per_subject`
/// distinct images of each, then enumerates every intra-subject pair.
pub fn sample_minibatch(
    corpus: &SynthCorpus,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Minibatch> {
    let by_identity = corpus.samples_by_identity();
    let eligible: Vec<&Vec<usize>> = by_identity
        .iter()
        .filter(|s| s.len() >= config.images_per_subject)
        .collect();
    if eligible.len() < config.subjects_per_batch {
        return Err(PfeError::CorpusTooSmall(format!(
            "{} subjects with >= {} samples, batch needs {}",
            eligible.len(),
            config.images_per_subject,
            config.subjects_per_batch
        )));
    }
    let mut sample_indices = Vec::with_capacity(config.batch_size());
    let mut groups = Vec::with_capacity(config.subjects_per_batch);
    for s in index::sample(rng, eligible.len(), config.subjects_per_batch) {
        let pool = eligible[s];
        let mut group = Vec::with_capacity(config.images_per_subject);
        for k in index::sample(rng, pool.len(), config.images_per_subject) {
            group.push(sample_indices.len());
            sample_indices.push(pool[k]);
        }
        groups.push(group);
    }
    let inputs = sample_indices
        .iter()
        .map(|&k| corpus.samples[k].head_input())
        .collect();
    let mus = sample_indices
        .iter()
        .map(|&k| corpus.samples[k].observed_mu.clone())
        .collect();
    Ok(Minibatch {
        inputs,
        mus,
        pairs: GenuinePairSet::from_groups(&groups),
        sample_indices,
    })
}
