//! Verification, identification and risk-controlled filtering metrics.
//!
//! Conventions: a comparison is accepted iff `score >= threshold`, and every
//! operating threshold is one of the observed non-match scores. A target rate
//! finer than one non-match sample is reported as unsupported (`None`), never
//! extrapolated.

use std::cmp::Ordering;

use crate::embedding::{GaussianEmbedding, Scorer};
use crate::error::{PfeError, Result};
use crate::fusion::Template;

/// Slack when converting a target rate into an allowed count.
const RATE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ascending.
    pub thresholds: Vec<f64>,
    pub tar: Vec<f64>,
    pub far: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TarAtFar {
    pub far_target: f64,
    /// `None` when the target is below the impostor resolution.
    pub threshold: Option<f64>,
    pub far: Option<f64>,
    pub tar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub roc: RocCurve,
    pub table: Vec<TarAtFar>,
}

fn sorted_desc(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn check_scores(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.is_empty() {
        return Err(PfeError::EmptySet(what));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(PfeError::validation(format!("non-finite value among {what}")));
    }
    Ok(())
}

/// Number of entries of a descending-sorted slice that are `>= t`.
fn count_ge(desc: &[f64], t: f64) -> usize {
    desc.partition_point(|x| *x >= t)
}

/// Smallest non-match score `t` with `#{non-match >= t} <= floor(rate·n)`.
fn operating_threshold(nonmatch_desc: &[f64], rate: f64) -> Option<f64> {
    let n = nonmatch_desc.len();
    if n == 0 || !(0.0..=1.0).contains(&rate) {
        return None;
    }
    let allowed = ((rate * n as f64) + RATE_SLACK).floor() as usize;
    if allowed == 0 {
        return None;
    }
    let allowed = allowed.min(n);
    let mut idx = allowed - 1;
    loop {
        let t = nonmatch_desc[idx];
        if count_ge(nonmatch_desc, t) <= allowed {
            return Some(t);
        }
        // tied block overshoots; move to the next larger distinct value
        let first_of_block = nonmatch_desc.partition_point(|x| *x > t);
        if first_of_block == 0 {
            return None;
        }
        idx = first_of_block - 1;
    }
}

/// TAR at one FAR target; `None` if the target is unsupported.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far_target: f64) -> Result<TarAtFar> {
    check_scores(genuine, "genuine scores")?;
    check_scores(impostor, "impostor scores")?;
    let g = sorted_desc(genuine);
    let i = sorted_desc(impostor);
    Ok(tar_at_far_sorted(&g, &i, far_target))
}

fn tar_at_far_sorted(genuine_desc: &[f64], impostor_desc: &[f64], far_target: f64) -> TarAtFar {
    match operating_threshold(impostor_desc, far_target) {
        None => TarAtFar {
            far_target,
            threshold: None,
            far: None,
            tar: None,
        },
        Some(t) => TarAtFar {
            far_target,
            threshold: Some(t),
            far: Some(count_ge(impostor_desc, t) as f64 / impostor_desc.len() as f64),
            tar: Some(count_ge(genuine_desc, t) as f64 / genuine_desc.len() as f64),
        },
    }
}

/// Full ROC over every distinct observed score plus TAR at each FAR target.
pub fn verify_roc(
    genuine: &[f64],
    impostor: &[f64],
    far_targets: &[f64],
) -> Result<VerificationReport> {
    check_scores(genuine, "genuine scores")?;
    check_scores(impostor, "impostor scores")?;
    let g = sorted_desc(genuine);
    let i = sorted_desc(impostor);
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let tar = thresholds
        .iter()
        .map(|&t| count_ge(&g, t) as f64 / g.len() as f64)
        .collect();
    let far = thresholds
        .iter()
        .map(|&t| count_ge(&i, t) as f64 / i.len() as f64)
        .collect();
    let table = far_targets
        .iter()
        .map(|&f| tar_at_far_sorted(&g, &i, f))
        .collect();
    Ok(VerificationReport {
        roc: RocCurve {
            thresholds,
            tar,
            far,
        },
        table,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into())
}

impl VerificationReport {
    /// `far_target,threshold,far,tar`; unsupported entries print `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("far_target,threshold,far,tar\n");
        for r in &self.table {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.far_target,
                fmt_opt(r.threshold),
                fmt_opt(r.far),
                fmt_opt(r.tar)
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>12}  {:>12}  {:>10}  {:>10}\n", "FAR target", "threshold", "FAR", "TAR");
        for r in &self.table {
            out.push_str(&format!(
                "{:>12}  {:>12}  {:>10}  {:>10}\n",
                format!("{}", r.far_target),
                fmt_opt(r.threshold),
                fmt_opt(r.far),
                fmt_opt(r.tar)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetReport {
    /// `(fpir target, tpir)`; `None` when unsupported.
    pub tpir_at_fpir: Vec<(f64, Option<f64>)>,
    /// `(rank, retrieval rate)` for ranks `1..=gallery size`; empty when no
    /// probe has a gallery mate.
    pub cmc: Vec<(usize, f64)>,
    pub mated_probes: usize,
    pub nonmated_probes: usize,
}

impl OpenSetReport {
    pub fn rank(&self, k: usize) -> Option<f64> {
        self.cmc.iter().find(|(r, _)| *r == k).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,level,value\n");
        for (r, v) in &self.cmc {
            out.push_str(&format!("rank,{r},{v:.6}\n"));
        }
        for (f, v) in &self.tpir_at_fpir {
            out.push_str(&format!("tpir_at_fpir,{f},{}\n", fmt_opt(*v)));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "mated probes: {}  non-mated probes: {}\n",
            self.mated_probes, self.nonmated_probes
        );
        for (r, v) in self.cmc.iter().take(10) {
            out.push_str(&format!("rank-{r:<3} {v:.6}\n"));
        }
        for (f, v) in &self.tpir_at_fpir {
            out.push_str(&format!("TPIR@FPIR={f}: {}\n", fmt_opt(*v)));
        }
        out
    }
}

/// Open-set search of probe templates against a gallery of templates, scored
/// on their fused representations.
pub fn identify(
    gallery: &[Template],
    probes: &[Template],
    scorer: Scorer,
    fpir_targets: &[f64],
) -> Result<OpenSetReport> {
    let fused = |t: &Template| -> Result<GaussianEmbedding> {
        t.fused()
            .cloned()
            .ok_or_else(|| PfeError::validation(format!("template {} has no fused cache", t.subject_id())))
    };
    let g: Vec<GaussianEmbedding> = gallery.iter().map(fused).collect::<Result<_>>()?;
    let p: Vec<GaussianEmbedding> = probes.iter().map(fused).collect::<Result<_>>()?;
    let scores = p
        .iter()
        .map(|pe| g.iter().map(|ge| scorer.score(pe, ge)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let gids: Vec<&str> = gallery.iter().map(|t| t.subject_id()).collect();
    let pids: Vec<&str> = probes.iter().map(|t| t.subject_id()).collect();
    identify_from_scores(&scores, &gids, &pids, fpir_targets)
}

/// Same as [`identify`] on a precomputed `probe × gallery` score matrix.
///
/// The rank of a mated probe is one plus the number of non-mate gallery
/// entries scoring at least as high as the mate (ties count against it).
pub fn identify_from_scores(
    scores: &[Vec<f64>],
    gallery_ids: &[&str],
    probe_ids: &[&str],
    fpir_targets: &[f64],
) -> Result<OpenSetReport> {
    if gallery_ids.is_empty() {
        return Err(PfeError::EmptySet("gallery"));
    }
    if probe_ids.is_empty() {
        return Err(PfeError::EmptySet("probes"));
    }
    for (k, id) in gallery_ids.iter().enumerate() {
        if gallery_ids[..k].contains(id) {
            return Err(PfeError::validation(format!("duplicate gallery id '{id}'")));
        }
    }
    if scores.len() != probe_ids.len() || scores.iter().any(|r| r.len() != gallery_ids.len()) {
        return Err(PfeError::validation("score matrix shape does not match ids"));
    }
    if scores.iter().flatten().any(|s| !s.is_finite()) {
        return Err(PfeError::validation("non-finite score"));
    }

    // (rank, mate score) for mated probes; top score for non-mated probes.
    let mut mated: Vec<(usize, f64)> = Vec::new();
    let mut nonmated_top: Vec<f64> = Vec::new();
    for (row, pid) in scores.iter().zip(probe_ids) {
        match gallery_ids.iter().position(|g| g == pid) {
            Some(m) => {
                let mate = row[m];
                let better = row
                    .iter()
                    .enumerate()
                    .filter(|(k, s)| *k != m && **s >= mate)
                    .count();
                mated.push((better + 1, mate));
            }
            None => nonmated_top.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        }
    }

    let cmc = if mated.is_empty() {
        Vec::new()
    } else {
        (1..=gallery_ids.len())
            .map(|k| {
                let hits = mated.iter().filter(|(r, _)| *r <= k).count();
                (k, hits as f64 / mated.len() as f64)
            })
            .collect()
    };

    let nm_desc = sorted_desc(&nonmated_top);
    let tpir_at_fpir = fpir_targets
        .iter()
        .map(|&f| {
            let tpir = if mated.is_empty() {
                None
            } else {
                operating_threshold(&nm_desc, f).map(|t| {
                    let hits = mated.iter().filter(|(r, s)| *r == 1 && *s >= t).count();
                    hits as f64 / mated.len() as f64
                })
            };
            (f, tpir)
        })
        .collect();

    Ok(OpenSetReport {
        tpir_at_fpir,
        cmc,
        mated_probes: mated.len(),
        nonmated_probes: nonmated_top.len(),
    })
}

/// One scored comparison between images `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
    pub genuine: bool,
}

/// How a pair's confidence is formed from its two images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairConfidence {
    /// Drop the lowest-confidence images; a pair survives iff both images do.
    #[default]
    Min,
    /// Drop the pairs with the lowest mean confidence of their two images.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCurve {
    pub filter_out_rate: Vec<f64>,
    /// `None` when a score class empties or the FAR is unsupported.
    pub tar_at_fixed_far: Vec<Option<f64>>,
}

impl FilterCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter_out_rate,tar\n");
        for (r, t) in self.filter_out_rate.iter().zip(&self.tar_at_fixed_far) {
            out.push_str(&format!("{r},{}\n", fmt_opt(*t)));
        }
        out
    }
}

fn split_scores<'a>(pairs: impl Iterator<Item = &'a ScoredPair>) -> (Vec<f64>, Vec<f64>) {
    let (mut g, mut i) = (Vec::new(), Vec::new());
    for p in pairs {
        if p.genuine {
            g.push(p.score);
        } else {
            i.push(p.score);
        }
    }
    (g, i)
}

fn ascending_order(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx
}

/// TAR at `fixed_far` after discarding the least confident fraction of the
/// data at each rate in `grid`.
pub fn filter_curve(
    pairs: &[ScoredPair],
    image_confidence: &[f64],
    fixed_far: f64,
    grid: &[f64],
    pair_confidence: PairConfidence,
) -> Result<FilterCurve> {
    if pairs.is_empty() {
        return Err(PfeError::EmptySet("scored pairs"));
    }
    if grid.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(PfeError::validation("filter-out rates must lie in [0, 1)"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PfeError::validation("filter-out rates must be strictly increasing"));
    }
    if image_confidence.iter().any(|c| !c.is_finite()) {
        return Err(PfeError::validation("non-finite confidence"));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| p.a >= image_confidence.len() || p.b >= image_confidence.len())
    {
        return Err(PfeError::validation(format!(
            "pair ({}, {}) references an image without confidence",
            p.a, p.b
        )));
    }
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(PfeError::validation("non-finite score"));
    }

    let mut tar = Vec::with_capacity(grid.len());
    match pair_confidence {
        PairConfidence::Min => {
            let order = ascending_order(image_confidence);
            for &r in grid {
                let drop = ((r * order.len() as f64) + RATE_SLACK).floor() as usize;
                let mut keep = vec![true; image_confidence.len()];
                for &k in &order[..drop.min(order.len())] {
                    keep[k] = false;
                }
                let (g, i) = split_scores(pairs.iter().filter(|p| keep[p.a] && keep[p.b]));
                tar.push(survivor_tar(&g, &i, fixed_far));
            }
        }
        PairConfidence::Mean => {
            let keys: Vec<f64> = pairs
                .iter()
                .map(|p| 0.5 * (image_confidence[p.a] + image_confidence[p.b]))
                .collect();
            let order = ascending_order(&keys);
            for &r in grid {
                let drop = ((r * order.len() as f64) + RATE_SLACK).floor() as usize;
                let (g, i) = split_scores(order[drop.min(order.len())..].iter().map(|&k| &pairs[k]));
                tar.push(survivor_tar(&g, &i, fixed_far));
            }
        }
    }
    Ok(FilterCurve {
        filter_out_rate: grid.to_vec(),
        tar_at_fixed_far: tar,
    })
}

fn survivor_tar(genuine: &[f64], impostor: &[f64], far: f64) -> Option<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return None;
    }
    tar_at_far_sorted(&sorted_desc(genuine), &sorted_desc(impostor), far).tar
}

/// All `i < j` comparisons among labelled embeddings; genuine iff labels match.
pub fn all_pairs(embeddings: &[GaussianEmbedding], scorer: Scorer) -> Result<Vec<ScoredPair>> {
    let mut out = Vec::with_capacity(embeddings.len() * embeddings.len().saturating_sub(1) / 2);
    for a in 0..embeddings.len() {
        for b in a + 1..embeddings.len() {
            let (ea, eb) = (&embeddings[a], &embeddings[b]);
            let genuine = match (ea.label(), eb.label()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            };
            out.push(ScoredPair {
                a,
                b,
                score: scorer.score(ea, eb)?,
                genuine,
            });
        }
    }
    Ok(out)
}

/// Splits scored pairs into `(genuine, impostor)` score lists.
pub fn split_pairs(pairs: &[ScoredPair]) -> (Vec<f64>, Vec<f64>) {
    split_scores(pairs.iter())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let order = ascending_order(xs);
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]].total_cmp(&xs[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(PfeError::validation("spearman inputs differ in length"));
    }
    if x.len() < 2 {
        return Err(PfeError::EmptySet("spearman needs two observations"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut dx, mut dy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return Err(PfeError::validation("spearman undefined for constant input"));
    }
    Ok(num / (dx * dy).sqrt())
}
