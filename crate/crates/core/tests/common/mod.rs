//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use pfe_core::eval::ScoredPair;
use pfe_core::GaussianEmbedding;
use std::f64::consts::PI;

/// Log of the product over dimensions of the density of `Δz = za − zb`
/// at zero, each factor evaluated as an explicit Gaussian pdf.
pub fn mls_pdf_product(ma: &[f64], va: &[f64], mb: &[f64], vb: &[f64]) -> f64 {
    ma.iter()
        .zip(va)
        .zip(mb.iter().zip(vb))
        .map(|((a, sa), (b, sb))| {
            let var = sa + sb;
            let mean = a - b;
            let pdf = (-(0.0 - mean) * (0.0 - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            pdf.ln()
        })
        .sum()
}

/// Sequential posterior update with an explicit `N(mu0, s0²)` prior that is
/// subtracted once per merge, before taking any limit.
pub fn prior_fuse_sequential(
    state: (&[f64], &[f64]),
    next: (&[f64], &[f64]),
    mu0: f64,
    s0_sq: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (m_n, v_n) = state;
    let (m, v) = next;
    let var: Vec<f64> = (0..m.len())
        .map(|l| 1.0 / (1.0 / v[l] + 1.0 / v_n[l] - 1.0 / s0_sq))
        .collect();
    let mean = (0..m.len())
        .map(|l| var[l] * (m[l] / v[l] + m_n[l] / v_n[l] - mu0 / s0_sq))
        .collect();
    (mean, var)
}

/// Closed-form batch posterior with the same explicit prior.
pub fn prior_fuse_batch(members: &[GaussianEmbedding], mu0: f64, s0_sq: f64) -> (Vec<f64>, Vec<f64>) {
    let n = members.len() as f64;
    let d = members[0].dim();
    let var: Vec<f64> = (0..d)
        .map(|l| {
            let prec: f64 = members.iter().map(|e| 1.0 / e.sigma_sq()[l]).sum();
            1.0 / (prec - (n - 1.0) / s0_sq)
        })
        .collect();
    let mean = (0..d)
        .map(|l| {
            let s: f64 = members.iter().map(|e| var[l] * e.mu()[l] / e.sigma_sq()[l]).sum();
            s - (n - 1.0) * var[l] * mu0 / s0_sq
        })
        .collect();
    (mean, var)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `(threshold, far, tar)` by scanning every impostor score as a candidate
/// threshold and keeping the feasible one with the highest TAR.
pub fn brute_tar_at_far(genuine: &[f64], impostor: &[f64], target: f64) -> Option<(f64, f64, f64)> {
    let frac = |xs: &[f64], t: f64| xs.iter().filter(|x| **x >= t).count() as f64 / xs.len() as f64;
    let mut best: Option<(f64, f64, f64)> = None;
    for &t in impostor {
        let far = frac(impostor, t);
        // counts, not rates, decide feasibility so that e.g. 0.3·10 is exact
        let allowed = (target * impostor.len() as f64 + 1e-9).floor();
        if (impostor.iter().filter(|x| **x >= t).count() as f64) > allowed {
            continue;
        }
        let tar = frac(genuine, t);
        let better = match best {
            None => true,
            Some((bt, _, btar)) => tar > btar || (tar == btar && t < bt),
        };
        if better {
            best = Some((t, far, tar));
        }
    }
    best
}

/// `(fpir target, tpir)` and the CMC by direct enumeration.
pub fn brute_identify(
    scores: &[Vec<f64>],
    gallery: &[&str],
    probes: &[&str],
    fpir: &[f64],
) -> (Vec<(f64, Option<f64>)>, Vec<(usize, f64)>) {
    let mut ranks = Vec::new();
    let mut mate_scores = Vec::new();
    let mut nm_top = Vec::new();
    for (row, p) in scores.iter().zip(probes) {
        match gallery.iter().position(|g| g == p) {
            Some(m) => {
                // sort gallery by score, placing the mate after every tie
                let mut order: Vec<usize> = (0..gallery.len()).collect();
                order.sort_by(|&a, &b| {
                    row[b]
                        .partial_cmp(&row[a])
                        .unwrap()
                        .then((a == m).cmp(&(b == m)))
                });
                ranks.push(order.iter().position(|&k| k == m).unwrap() + 1);
                mate_scores.push(row[m]);
            }
            None => nm_top.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        }
    }
    let cmc = if ranks.is_empty() {
        Vec::new()
    } else {
        (1..=gallery.len())
            .map(|k| (k, ranks.iter().filter(|r| **r <= k).count() as f64 / ranks.len() as f64))
            .collect()
    };
    let tpir = fpir
        .iter()
        .map(|&f| {
            if ranks.is_empty() || nm_top.is_empty() {
                return (f, None);
            }
            let allowed = (f * nm_top.len() as f64 + 1e-9).floor();
            let t = nm_top
                .iter()
                .copied()
                .filter(|&t| nm_top.iter().filter(|x| **x >= t).count() as f64 <= allowed)
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
            let v = t.map(|t| {
                let hits = ranks
                    .iter()
                    .zip(&mate_scores)
                    .filter(|(r, s)| **r == 1 && **s >= t)
                    .count();
                hits as f64 / ranks.len() as f64
            });
            (f, v)
        })
        .collect();
    (tpir, cmc)
}

/// Filter curve by explicit image removal and the brute-force TAR.
pub fn brute_filter_curve(pairs: &[ScoredPair], conf: &[f64], far: f64, grid: &[f64]) -> Vec<Option<f64>> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[a].partial_cmp(&conf[b]).unwrap().then(a.cmp(&b)));
    grid.iter()
        .map(|r| {
            let drop = (r * conf.len() as f64 + 1e-9).floor() as usize;
            let removed = &order[..drop];
            let (mut g, mut i) = (Vec::new(), Vec::new());
            for p in pairs {
                if removed.contains(&p.a) || removed.contains(&p.b) {
                    continue;
                }
                if p.genuine {
                    g.push(p.score)
                } else {
                    i.push(p.score)
                }
            }
            if g.is_empty() || i.is_empty() {
                return None;
            }
            brute_tar_at_far(&g, &i, far).map(|(_, _, tar)| tar)
        })
        .collect()
}

/// Pre-ReLU activations closer than this to zero would let a finite
/// difference step straddle the kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Random small head and minibatch for gradient checking. Configurations
/// with a ReLU input inside [`KINK_MARGIN`] of zero, or a clamped output,
/// are redrawn from the same stream.
pub fn gradcheck_case(seed: u64) -> (pfe_core::trainer::UncertaintyHead, pfe_core::trainer::Minibatch) {
    use pfe_core::trainer::{GenuinePairSet, Minibatch, UncertaintyHead};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let din = rng.random_range(2..=7);
        let hidden = rng.random_range(2..=7);
        let d = rng.random_range(1..=5);
        let subjects = rng.random_range(2..=4);
        let per = rng.random_range(2..=3);
        let mut head = UncertaintyHead::init(din, hidden, d, rng.random()).unwrap();
        // move BN affine params and biases away from their init values
        for g in head.gamma1.iter_mut() {
            *g = rng.random_range(0.5..1.5);
        }
        for b in head.beta1.iter_mut().chain(head.b1.iter_mut()).chain(head.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        head.gamma2 = rng.random_range(0.3..1.2);
        head.beta2 = rng.random_range(-1.0..1.0);

        let n = subjects * per;
        let normal = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<f64> {
            (0..k).map(|_| StandardNormal.sample(rng)).collect()
        };
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| normal(&mut rng, din)).collect();
        let mus: Vec<Vec<f64>> = (0..n).map(|_| normal(&mut rng, d)).collect();
        let groups: Vec<Vec<usize>> = (0..subjects).map(|s| (s * per..(s + 1) * per).collect()).collect();
        let batch = Minibatch {
            inputs,
            mus,
            pairs: GenuinePairSet::from_groups(&groups),
            sample_indices: (0..n).collect(),
        };
        let cache = head.forward_train(&batch.inputs).unwrap();
        let near_kink = cache.pre_relu().iter().flatten().any(|y| y.abs() < KINK_MARGIN);
        let clamped = cache.variances.iter().flatten().any(|v| *v <= 10.0 * pfe_core::VARIANCE_FLOOR);
        if !near_kink && !clamped {
            return (head, batch);
        }
    }
}
