//! Posterior fusion of several Gaussian embeddings of one subject.
//!
//! Under a flat prior and conditionally independent observations the
//! posterior precision is the sum of member precisions and the posterior mean
//! is the precision-weighted mean. Real templates (video frames, near
//! duplicates) violate independence, so [`FusionMode::MinVariance`] keeps the
//! same mean but takes the per-dimension minimum variance instead.

use crate::embedding::GaussianEmbedding;
use crate::error::{PfeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    PrecisionSum,
    #[default]
    MinVariance,
}

impl FusionMode {
    pub fn fuse(&self, members: &[GaussianEmbedding]) -> Result<GaussianEmbedding> {
        match self {
            FusionMode::PrecisionSum => fuse_batch(members),
            FusionMode::MinVariance => fuse_min_variance(members),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::PrecisionSum => "precision-sum",
            FusionMode::MinVariance => "min-variance",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = PfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "precision-sum" => Ok(FusionMode::PrecisionSum),
            "min-variance" => Ok(FusionMode::MinVariance),
            other => Err(PfeError::Config(format!("unknown fusion mode '{other}'"))),
        }
    }
}

fn uniform_dim(members: &[GaussianEmbedding]) -> Result<usize> {
    let first = members.first().ok_or(PfeError::EmptySet("fusion members"))?;
    let d = first.dim();
    for m in members {
        if m.dim() != d {
            return Err(PfeError::Dimension {
                expected: d,
                found: m.dim(),
            });
        }
    }
    Ok(d)
}

/// Returns per-dimension (precision sum, precision-weighted mean).
fn precision_moments(members: &[GaussianEmbedding], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut precision = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    for m in members {
        for l in 0..d {
            let p = 1.0 / m.sigma_sq()[l];
            precision[l] += p;
            weighted[l] += p * m.mu()[l];
        }
    }
    let mean = weighted
        .iter()
        .zip(&precision)
        .map(|(w, p)| w / p)
        .collect();
    (precision, mean)
}

fn carry_label(members: &[GaussianEmbedding], e: GaussianEmbedding) -> GaussianEmbedding {
    match members[0].label() {
        Some(l) if members.iter().all(|m| m.label() == Some(l)) => e.with_label(l),
        _ => e,
    }
}

/// Closed-form fusion of a whole set: `1/σ̂² = Σ 1/σ²ᵢ`, `μ̂ = σ̂² Σ μᵢ/σ²ᵢ`.
pub fn fuse_batch(members: &[GaussianEmbedding]) -> Result<GaussianEmbedding> {
    let d = uniform_dim(members)?;
    if members.len() == 1 {
        return Ok(members[0].clone());
    }
    let (precision, mean) = precision_moments(members, d);
    let var = precision.iter().map(|p| 1.0 / p).collect();
    Ok(carry_label(members, GaussianEmbedding::new_clamped(mean, var)?))
}

/// One posterior update: fold `next` into the running fused `state`.
pub fn fuse_sequential(
    state: &GaussianEmbedding,
    next: &GaussianEmbedding,
) -> Result<GaussianEmbedding> {
    if state.dim() != next.dim() {
        return Err(PfeError::Dimension {
            expected: state.dim(),
            found: next.dim(),
        });
    }
    let d = state.dim();
    let mut mu = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for l in 0..d {
        let (ms, vs) = (state.mu()[l], state.sigma_sq()[l]);
        let (mn, vn) = (next.mu()[l], next.sigma_sq()[l]);
        let denom = vn + vs;
        mu.push((vs * mn + vn * ms) / denom);
        var.push(vn * vs / denom);
    }
    let fused = GaussianEmbedding::new_clamped(mu, var)?;
    Ok(match (state.label(), next.label()) {
        (Some(a), Some(b)) if a == b => fused.with_label(a),
        _ => fused,
    })
}

/// Precision-weighted mean with the per-dimension minimum member variance.
pub fn fuse_min_variance(members: &[GaussianEmbedding]) -> Result<GaussianEmbedding> {
    let d = uniform_dim(members)?;
    let (_, mean) = precision_moments(members, d);
    let var = (0..d)
        .map(|l| {
            members
                .iter()
                .map(|m| m.sigma_sq()[l])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(carry_label(members, GaussianEmbedding::new(mean, var)?))
}

/// Quality-weighted average of mean vectors, `Σ qᵢ μᵢ / Σ qⱼ`.
pub fn quality_pool(means: &[Vec<f64>], qualities: &[f64]) -> Result<Vec<f64>> {
    if means.is_empty() {
        return Err(PfeError::validation("quality_pool needs at least one mean"));
    }
    if means.len() != qualities.len() {
        return Err(PfeError::validation(format!(
            "{} means but {} qualities",
            means.len(),
            qualities.len()
        )));
    }
    if let Some(q) = qualities.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
        return Err(PfeError::validation(format!(
            "quality must be positive and finite, got {q}"
        )));
    }
    let d = means[0].len();
    if let Some(m) = means.iter().find(|m| m.len() != d) {
        return Err(PfeError::Dimension {
            expected: d,
            found: m.len(),
        });
    }
    let total: f64 = qualities.iter().sum();
    let mut out = vec![0.0; d];
    for (m, q) in means.iter().zip(qualities) {
        for (o, x) in out.iter_mut().zip(m) {
            *o += q * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// A labelled set of embeddings with its fused representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    subject_id: String,
    members: Vec<GaussianEmbedding>,
    fused: Option<GaussianEmbedding>,
    fusion_mode: FusionMode,
}

impl Template {
    /// Builds the template and computes the fused cache eagerly.
    pub fn new(
        subject_id: impl Into<String>,
        members: Vec<GaussianEmbedding>,
        fusion_mode: FusionMode,
    ) -> Result<Self> {
        let mut t = Self {
            subject_id: subject_id.into(),
            members,
            fused: None,
            fusion_mode,
        };
        t.recompute()?;
        Ok(t)
    }

    pub fn recompute(&mut self) -> Result<()> {
        let fused = self.fusion_mode.fuse(&self.members)?;
        self.fused = Some(fused.with_label(self.subject_id.clone()));
        Ok(())
    }

    pub fn with_member(mut self, e: GaussianEmbedding) -> Result<Self> {
        self.members.push(e);
        self.recompute()?;
        Ok(self)
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn members(&self) -> &[GaussianEmbedding] {
        &self.members
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.fusion_mode
    }

    pub fn fused(&self) -> Option<&GaussianEmbedding> {
        self.fused.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    /// Groups labelled embeddings into templates, in order of first appearance.
    /// Unlabelled embeddings are rejected.
    pub fn group_by_label(
        embeddings: &[GaussianEmbedding],
        mode: FusionMode,
    ) -> Result<Vec<Template>> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: std::collections::HashMap<String, Vec<GaussianEmbedding>> =
            std::collections::HashMap::new();
        for e in embeddings {
            let label = e
                .label()
                .ok_or_else(|| PfeError::validation("template grouping needs labels"))?;
            if !groups.contains_key(label) {
                order.push(label.to_string());
            }
            groups.entry(label.to_string()).or_default().push(e.clone());
        }
        order
            .into_iter()
            .map(|id| {
                let members = groups.remove(&id).unwrap_or_default();
                Template::new(id, members, mode)
            })
            .collect()
    }
}
