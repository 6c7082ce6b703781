//! End-to-end synthetic lab run: trains a head, reports held-out variance
//! correlation, the degradation sweep under both scorers, TAR@FAR=1% on the
//! mixed-quality set and the confidence filter curve.
//!
//! `cargo run --release -p pfe-core --example lab -- [seed]`

use pfe_core::eval::{all_pairs, filter_curve, spearman, split_pairs, tar_at_far, PairConfidence};
use pfe_core::synthlab::{
    dilemma_sweep, DegradationMode, DegradationSpec, SynthCorpus, SynthParams, MIXED_LOW_BAND,
    MIXED_LOW_FRACTION,
};
use pfe_core::trainer::{predict_corpus, train, TrainConfig};
use pfe_core::{confidence, GaussianEmbedding, Scorer};

fn main() -> pfe_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = SynthCorpus::generate(&SynthParams::default(), seed)?;
    let (train_set, held_out) = corpus.split_identities(160)?;
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let out = train(cfg.init_head(&train_set)?, &train_set, &cfg)?;
    println!("trained in {:.1?}; loss {:.4} -> {:.4}", t0.elapsed(), out.losses[0], out.losses.last().unwrap());
    let head = out.head;

    let pred = predict_corpus(&head, &held_out)?;
    let mean_pred: Vec<f64> = pred.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let truth: Vec<f64> = held_out.samples.iter().map(|s| s.true_noise_var).collect();
    println!("spearman {:.4}", spearman(&mean_pred, &truth)?);

    for mode in DegradationMode::ALL {
        let spec = DegradationSpec::new(mode, vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0])?;
        for (scorer, h) in [(Scorer::Cosine, None), (Scorer::Mls, Some(&head))] {
            let t = dilemma_sweep(&held_out, &spec, scorer, h, seed)?;
            println!("{mode:?} {scorer:?} pooled genuine median {:.3}", t.pooled_genuine_median());
            for r in &t.rows {
                println!("  q={:.1} gen {:9.3} (med {:9.3}) imp {:9.3}", r.level, r.genuine_mean, r.genuine_median, r.impostor_mean);
            }
        }
    }

    let held_out = held_out.mixed_quality(MIXED_LOW_FRACTION, MIXED_LOW_BAND, seed + 7)?;
    let pred = predict_corpus(&head, &held_out)?;
    let point: Vec<GaussianEmbedding> = held_out.samples.iter().map(|s| s.point_embedding()).collect::<Result<_, _>>()?;
    let prob: Vec<GaussianEmbedding> = held_out.samples.iter().zip(&pred)
        .map(|(s, v)| Ok(GaussianEmbedding::new_clamped(s.observed_mu.clone(), v.clone())?.with_label(s.subject_id.clone())))
        .collect::<pfe_core::Result<_>>()?;
    let cos_pairs = all_pairs(&point, Scorer::Cosine)?;
    let (g, i) = split_pairs(&cos_pairs);
    let cos_tar = tar_at_far(&g, &i, 0.01)?.tar;
    let (g, i) = split_pairs(&all_pairs(&prob, Scorer::Mls)?);
    let mls_tar = tar_at_far(&g, &i, 0.01)?.tar;
    println!("TAR@1%: cosine {cos_tar:?} mls {mls_tar:?}");

    let conf: Vec<f64> = prob.iter().map(confidence).collect();
    let c = filter_curve(&cos_pairs, &conf, 0.01, &[0.0, 0.1, 0.2, 0.3], PairConfidence::Min)?;
    println!("filter by confidence {:?}", c.tar_at_fixed_far);
    Ok(())
}
