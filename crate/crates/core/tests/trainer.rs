mod common;

use pfe_core::synthlab::{SynthCorpus, SynthParams};
use pfe_core::trainer::{
    decode_head, encode_head, gradient_check, gradient_check_against, head_gradients, load_head,
    mls_loss, mls_loss_grad, sample_minibatch, save_head, train, GenuinePairSet, HeadMode,
    Minibatch, ParamTensor, TrainConfig, UncertaintyHead,
};
use pfe_core::{mls_score, GaussianEmbedding, PfeError, VARIANCE_FLOOR};
use proptest::prelude::*;

fn small_corpus(seed: u64) -> SynthCorpus {
    let p = SynthParams {
        identities: 12,
        samples_per_identity: 6,
        dim: 4,
        ..SynthParams::default()
    };
    SynthCorpus::generate(&p, seed).unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        subjects_per_batch: 6,
        images_per_subject: 3,
        steps: 40,
        lr_schedule: vec![(0, 1e-2), (30, 1e-3)],
        seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn analytic_gradients_match_central_differences(seed in any::<u64>(), wd in prop_oneof![Just(0.0), Just(5e-4), Just(0.1)]) {
        let (head, batch) = common::gradcheck_case(seed);
        let r = gradient_check(&head, &batch, 1e-4, wd).unwrap();
        prop_assert!(r.passes(1e-4), "{}", r.describe_worst());
    }

    #[test]
    fn loss_falls_exactly_when_mean_score_rises(
        mus in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 4),
        a in prop::collection::vec(prop::collection::vec(1e-2..4.0f64, 3), 4),
        b in prop::collection::vec(prop::collection::vec(1e-2..4.0f64, 3), 4),
    ) {
        let pairs = GenuinePairSet::from_groups(&[vec![0, 1, 2], vec![2, 3]]);
        let mean_score = |s: &[Vec<f64>]| {
            let total: f64 = pairs
                .pairs()
                .iter()
                .map(|&(i, j)| {
                    let ei = GaussianEmbedding::new(mus[i].clone(), s[i].clone()).unwrap();
                    let ej = GaussianEmbedding::new(mus[j].clone(), s[j].clone()).unwrap();
                    mls_score(&ei, &ej).unwrap().value
                })
                .sum();
            total / pairs.len() as f64
        };
        let (la, lb) = (mls_loss(&mus, &a, &pairs).unwrap(), mls_loss(&mus, &b, &pairs).unwrap());
        let (sa, sb) = (mean_score(&a), mean_score(&b));
        prop_assert!((la + sa).abs() <= 1e-12 * la.abs().max(1.0));
        prop_assert_eq!(la < lb, sa > sb);
    }
}

#[test]
fn loss_worked_examples() {
    let one = GenuinePairSet::new(vec![(0, 1)]).unwrap();
    let l = mls_loss(&[vec![0.0], vec![0.0]], &[vec![0.5], vec![0.5]], &one).unwrap();
    assert!((l - 0.918939).abs() < 1e-6);
    let l = mls_loss(&[vec![0.0], vec![2.0]], &[vec![1.0], vec![1.0]], &one).unwrap();
    assert!((l - 2.265512).abs() < 1e-6);
    let twice = GenuinePairSet::new(vec![(0, 1), (2, 3)]).unwrap();
    let l2 = mls_loss(
        &[vec![0.0], vec![2.0], vec![0.0], vec![2.0]],
        &vec![vec![1.0]; 4],
        &twice,
    )
    .unwrap();
    assert_eq!(l, l2);
    assert!(matches!(
        mls_loss(&[vec![0.0]], &[vec![1.0]], &GenuinePairSet::new(vec![]).unwrap()),
        Err(PfeError::EmptySet(_))
    ));
    assert!(GenuinePairSet::new(vec![(1, 0)]).is_err());
}

#[test]
fn stationary_dimension_contributes_no_gradient() {
    // v = σ²a + σ²b = 4 equals d = (0 − 2)²
    let pairs = GenuinePairSet::new(vec![(0, 1)]).unwrap();
    let (_, g) = mls_loss_grad(&[vec![0.0, 0.0], vec![2.0, 0.0]], &[vec![1.5, 1.0], vec![2.5, 1.0]], &pairs).unwrap();
    assert_eq!(g[0][0], 0.0);
    assert_eq!(g[1][0], 0.0);
    assert!(g[0][1] > 0.0);
}

/// Zero weights and identical inputs leave `β2` as the only live parameter:
/// every output is `exp(β2)`. With gap `d` on every pair the minimizer is
/// `exp(β2) = d / 2`.
fn one_parameter_probe(beta2: f64) -> (UncertaintyHead, Minibatch) {
    let mut head = UncertaintyHead::zeroed(3, 2, 1).unwrap();
    head.beta2 = beta2;
    head.set_mode(HeadMode::Train);
    let gap = 1.5f64;
    let batch = Minibatch {
        inputs: vec![vec![0.3, -0.1, 0.7]; 6],
        mus: vec![vec![0.0], vec![gap], vec![0.0], vec![gap], vec![0.0], vec![gap]],
        pairs: GenuinePairSet::new(vec![(0, 1), (2, 3), (4, 5)]).unwrap(),
        sample_indices: (0..6).collect(),
    };
    (head, batch)
}

#[test]
fn one_parameter_probe_is_stationary_at_its_minimum() {
    let beta_star = (1.5f64 * 1.5 / 2.0).ln();
    let (head, batch) = one_parameter_probe(beta_star);
    let (_, g) = head_gradients(&head, &batch.inputs, &batch.mus, &batch.pairs, 0.0).unwrap();
    assert!(g.max_abs() < 1e-10, "{}", g.max_abs());

    // off the minimum the probe gradient has the expected sign
    let (head, batch) = one_parameter_probe(beta_star + 0.5);
    let (_, g) = head_gradients(&head, &batch.inputs, &batch.mus, &batch.pairs, 0.0).unwrap();
    assert!(g.beta2 > 0.0);
}

#[test]
fn zero_gradient_configuration_checks_on_absolute_scale() {
    let (head, batch) = one_parameter_probe((1.5f64 * 1.5 / 2.0).ln());
    let r = gradient_check(&head, &batch, 1e-4, 0.0).unwrap();
    assert!(r.max_error < 1e-8, "{}", r.describe_worst());
    assert!(r.analytic.abs() < 1e-6 && r.numeric.abs() < 1e-6);
}

#[test]
fn corrupted_gradient_is_caught_and_named() {
    let (head, batch) = common::gradcheck_case(17);
    let (_, mut g) = head_gradients(&head, &batch.inputs, &batch.mus, &batch.pairs, 0.0).unwrap();
    let k = g
        .w2
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0;
    g.w2[k] *= 1.1;
    let r = gradient_check_against(&head, &batch, &g, 1e-4, 0.0).unwrap();
    assert!(!r.passes(1e-4));
    assert_eq!(r.worst, Some((ParamTensor::W2, k)));
    assert!(r.describe_worst().contains(&format!("[{k}]")));
}

#[test]
fn outputs_respect_the_variance_floor() {
    let mut head = UncertaintyHead::init(4, 3, 2, 5).unwrap();
    head.beta2 = -1e4;
    let x = vec![vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.0, 2.0, 1.0]];
    for mode in [HeadMode::Train, HeadMode::Inference] {
        head.set_mode(mode);
        assert!(head.forward(&x).unwrap().iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
    }
    head.set_mode(HeadMode::Train);
    assert!(matches!(head.forward(&x[..1]), Err(PfeError::BatchTooSmall(1))));
}

#[test]
fn identity_configuration_outputs_one() {
    let mut head = UncertaintyHead::zeroed(5, 4, 3).unwrap();
    head.set_mode(HeadMode::Inference);
    let v = head.predict_one(&[1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
    assert_eq!(v, vec![1.0; 3]);
}

#[test]
fn training_is_deterministic_and_leaves_means_alone() {
    let corpus = small_corpus(3);
    let before = corpus.mean_checksum();
    let cfg = small_config(11);
    let a = train(cfg.init_head(&corpus).unwrap(), &corpus, &cfg).unwrap();
    let b = train(cfg.init_head(&corpus).unwrap(), &corpus, &cfg).unwrap();
    assert_eq!(corpus.mean_checksum(), before);
    assert_eq!(encode_head(&a.head), encode_head(&b.head));
    assert_eq!(a.losses.len(), cfg.steps);
    assert_eq!(
        a.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
        b.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.head.mode, HeadMode::Inference);
    // the shared BN2 affine stays one scalar each
    assert_eq!(a.head.tensor(ParamTensor::Gamma2).len(), 1);
    assert_eq!(a.head.tensor(ParamTensor::Beta2).len(), 1);
    let other = train(cfg.init_head(&corpus).unwrap(), &corpus, &TrainConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(encode_head(&a.head), encode_head(&other.head));
}

#[test]
fn minibatch_shapes() {
    let corpus = SynthCorpus::generate(&SynthParams::default(), 0).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let b = sample_minibatch(&corpus, &TrainConfig::default(), &mut rng).unwrap();
    assert_eq!(b.pairs.len(), 384);
    assert_eq!(b.inputs.len(), 256);
    let tiny = TrainConfig { subjects_per_batch: 13, ..small_config(0) };
    assert!(matches!(
        sample_minibatch(&small_corpus(0), &tiny, &mut rng),
        Err(PfeError::CorpusTooSmall(_))
    ));
}

#[test]
fn checkpoint_round_trip() {
    let corpus = small_corpus(5);
    let cfg = small_config(2);
    let head = train(cfg.init_head(&corpus).unwrap(), &corpus, &cfg).unwrap().head;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.pfeh");
    save_head(&path, &head).unwrap();
    let back = load_head(&path).unwrap();
    assert_eq!(encode_head(&back), encode_head(&head));
    let bytes = encode_head(&head);
    assert!(decode_head(&bytes[..bytes.len() - 3]).is_err());
    assert!(decode_head(b"nope").is_err());
}
