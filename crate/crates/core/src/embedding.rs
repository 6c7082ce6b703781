//! Diagonal Gaussian embeddings and the pairwise scores defined on them.
//!
//! An embedding is a mean vector plus a per-dimension variance. Values are
//! immutable once constructed and every scoring function is pure.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{PfeError, Result};

/// Smallest variance any embedding may carry. Ingestion and head outputs clamp to it.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    mu: Vec<f64>,
    sigma_sq: Vec<f64>,
    label: Option<String>,
}

/// A single broken invariant found by [`validate_embedding`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension,
    LengthMismatch { mu: usize, sigma_sq: usize },
    NonFiniteMean { index: usize },
    NonFiniteVariance { index: usize },
    BelowVarianceFloor { index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimension => write!(f, "empty dimension"),
            Violation::LengthMismatch { mu, sigma_sq } => {
                write!(f, "length mismatch: mu has {mu}, sigma_sq has {sigma_sq}")
            }
            Violation::NonFiniteMean { index } => write!(f, "non-finite mean at {index}"),
            Violation::NonFiniteVariance { index } => {
                write!(f, "non-finite variance at {index}")
            }
            Violation::BelowVarianceFloor { index, value } => {
                write!(f, "below variance floor at {index}: {value:e}")
            }
        }
    }
}

/// Reports every violated invariant of a candidate `(mu, sigma_sq)` pair.
/// An empty vector means the pair forms a valid embedding.
pub fn validate_embedding(mu: &[f64], sigma_sq: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    if mu.is_empty() || sigma_sq.is_empty() {
        out.push(Violation::EmptyDimension);
    }
    if mu.len() != sigma_sq.len() {
        out.push(Violation::LengthMismatch {
            mu: mu.len(),
            sigma_sq: sigma_sq.len(),
        });
    }
    for (index, m) in mu.iter().enumerate() {
        if !m.is_finite() {
            out.push(Violation::NonFiniteMean { index });
        }
    }
    for (index, &s) in sigma_sq.iter().enumerate() {
        if !s.is_finite() {
            out.push(Violation::NonFiniteVariance { index });
        } else if s < VARIANCE_FLOOR {
            out.push(Violation::BelowVarianceFloor { index, value: s });
        }
    }
    out
}

fn violations_to_error(v: &[Violation]) -> PfeError {
    let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    PfeError::validation(text.join("; "))
}

impl GaussianEmbedding {
    /// Strict constructor: fails unless every invariant holds.
    pub fn new(mu: Vec<f64>, sigma_sq: Vec<f64>) -> Result<Self> {
        let v = validate_embedding(&mu, &sigma_sq);
        if !v.is_empty() {
            return Err(violations_to_error(&v));
        }
        Ok(Self {
            mu,
            sigma_sq,
            label: None,
        })
    }

    /// Ingestion constructor: finite variances below [`VARIANCE_FLOOR`] are
    /// raised to it (and logged); anything else invalid is still an error.
    pub fn new_clamped(mu: Vec<f64>, mut sigma_sq: Vec<f64>) -> Result<Self> {
        let mut clamped = 0usize;
        for s in sigma_sq.iter_mut() {
            if s.is_finite() && *s < VARIANCE_FLOOR {
                *s = VARIANCE_FLOOR;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::info!("clamped {clamped} variance(s) to floor {VARIANCE_FLOOR:e}");
        }
        Self::new(mu, sigma_sq)
    }

    /// Point embedding with unit variance on every dimension.
    pub fn deterministic(mu: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        Self::new(mu, vec![1.0; d])
    }

    /// Isotropic embedding: the same variance on every dimension.
    pub fn isotropic(mu: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mu.len();
        Self::new(mu, vec![variance; d])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn set_label(&mut self, label: Option<String>) {
        self.label = label;
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Copy with the mean rescaled to unit ℓ2 norm; variances are untouched.
    pub fn l2_normalized(&self) -> Result<Self> {
        let n = norm(&self.mu);
        if n == 0.0 {
            return Err(PfeError::validation("cannot normalize a zero-norm mean"));
        }
        Ok(Self {
            mu: self.mu.iter().map(|m| m / n).collect(),
            sigma_sq: self.sigma_sq.clone(),
            label: self.label.clone(),
        })
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, Option<String>) {
        (self.mu, self.sigma_sq, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    Mls,
    Cosine,
    NegSqEuclid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub value: f64,
    pub kind: ScoreKind,
}

fn check_dims(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PfeError::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Log-density that the latent codes of `a` and `b` coincide (mutual likelihood score).
///
/// Per dimension the difference of the two latents is Gaussian with mean
/// `μa − μb` and variance `σ²a + σ²b`; the score is the log of that density at zero,
/// summed over dimensions. The `(D/2)·log 2π` constant is always included.
pub fn mls_score(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<MatchScore> {
    check_dims(a, b)?;
    Ok(MatchScore {
        value: mls_raw(a.mu(), a.sigma_sq(), b.mu(), b.sigma_sq()),
        kind: ScoreKind::Mls,
    })
}

/// Unchecked slice form of [`mls_score`]; callers guarantee equal lengths.
pub(crate) fn mls_raw(mu_a: &[f64], var_a: &[f64], mu_b: &[f64], var_b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for l in 0..mu_a.len() {
        let diff = mu_a[l] - mu_b[l];
        let v = var_a[l] + var_b[l];
        acc += diff * diff / v + v.ln();
    }
    -0.5 * acc - 0.5 * mu_a.len() as f64 * (2.0 * PI).ln()
}

/// Cosine of the angle between the two means. Variances are ignored.
pub fn cosine_score(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<MatchScore> {
    check_dims(a, b)?;
    let value = cosine_raw(a.mu(), b.mu())?;
    Ok(MatchScore {
        value,
        kind: ScoreKind::Cosine,
    })
}

pub(crate) fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(PfeError::validation("cosine undefined for zero-norm mean"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Negative squared Euclidean distance between the means.
pub fn neg_sq_euclid_score(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<MatchScore> {
    check_dims(a, b)?;
    let value = -a
        .mu()
        .iter()
        .zip(b.mu())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    Ok(MatchScore {
        value,
        kind: ScoreKind::NegSqEuclid,
    })
}

/// Which per-dimension spread the harmonic mean in [`confidence_with`] runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceBasis {
    /// σ = √σ², the default reading.
    #[default]
    StdDev,
    Variance,
}

/// Inverse of the harmonic mean of σ across dimensions, i.e. `mean(1/σ)`.
pub fn confidence(e: &GaussianEmbedding) -> f64 {
    confidence_with(e, ConfidenceBasis::StdDev)
}

pub fn confidence_with(e: &GaussianEmbedding, basis: ConfidenceBasis) -> f64 {
    let d = e.dim() as f64;
    let inv_sum: f64 = match basis {
        ConfidenceBasis::StdDev => e.sigma_sq().iter().map(|s| 1.0 / s.sqrt()).sum(),
        ConfidenceBasis::Variance => e.sigma_sq().iter().map(|s| 1.0 / s).sum(),
    };
    inv_sum / d
}

/// Stateless scorer selector used by sweeps, identification and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scorer {
    #[default]
    Mls,
    Cosine,
    NegSqEuclid,
}

impl Scorer {
    pub fn score(&self, a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
        let s = match self {
            Scorer::Mls => mls_score(a, b)?,
            Scorer::Cosine => cosine_score(a, b)?,
            Scorer::NegSqEuclid => neg_sq_euclid_score(a, b)?,
        };
        Ok(s.value)
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            Scorer::Mls => ScoreKind::Mls,
            Scorer::Cosine => ScoreKind::Cosine,
            Scorer::NegSqEuclid => ScoreKind::NegSqEuclid,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Mls => "mls",
            Scorer::Cosine => "cosine",
            Scorer::NegSqEuclid => "neg-sq-euclid",
        }
    }
}

impl std::str::FromStr for Scorer {
    type Err = PfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mls" => Ok(Scorer::Mls),
            "cosine" | "cos" => Ok(Scorer::Cosine),
            "neg-sq-euclid" | "euclid" => Ok(Scorer::NegSqEuclid),
            other => Err(PfeError::Config(format!("unknown scorer '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: &[f64], var: &[f64]) -> GaussianEmbedding {
        GaussianEmbedding::new(mu.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn mls_zero_distance_unit_variance_sum() {
        let a = g(&[0.0], &[0.5]);
        let s = mls_score(&a, &a).unwrap().value;
        assert!((s - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((s + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn mls_worked_pair() {
        let a = g(&[0.0], &[1.0]);
        let b = g(&[2.0], &[1.0]);
        let s = mls_score(&a, &b).unwrap().value;
        // Property-1 closed form with c = 1, d = 4.
        let closed = -4.0 / 4.0 - 0.5 * (4.0 * PI).ln();
        assert!((s - closed).abs() < 1e-12);
        assert!((s + 2.265512).abs() < 1e-6);
    }

    #[test]
    fn mls_dimension_mismatch() {
        let a = g(&[0.0], &[1.0]);
        let b = g(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(
            mls_score(&a, &b),
            Err(PfeError::Dimension {
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn cosine_examples() {
        let c = |x: &[f64], y: &[f64]| {
            cosine_score(
                &GaussianEmbedding::deterministic(x.to_vec()).unwrap(),
                &GaussianEmbedding::deterministic(y.to_vec()).unwrap(),
            )
            .unwrap()
            .value
        };
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(c(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!((c(&[1.0, 1.0], &[1.0, 0.0]) - 0.707107).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let a = GaussianEmbedding::deterministic(vec![0.0, 0.0]).unwrap();
        let b = GaussianEmbedding::deterministic(vec![1.0, 0.0]).unwrap();
        assert!(matches!(cosine_score(&a, &b), Err(PfeError::Validation(_))));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&g(&[0.0, 0.0], &[1.0, 1.0])), 1.0);
        assert!((confidence(&g(&[0.0, 0.0], &[1.0, 4.0])) - 0.75).abs() < 1e-15);
        for c in [0.01, 0.5, 3.0, 100.0] {
            let e = g(&[0.0; 3], &[c; 3]);
            assert!((confidence(&e) - 1.0 / c.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_variance_basis() {
        let e = g(&[0.0, 0.0], &[1.0, 4.0]);
        assert!((confidence_with(&e, ConfidenceBasis::Variance) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn validation_reports_each_problem() {
        let v = validate_embedding(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("below variance floor"));

        let v = validate_embedding(&[f64::NAN, 1.0], &[1.0, 1.0]);
        assert_eq!(v, vec![Violation::NonFiniteMean { index: 0 }]);
        assert!(v[0].to_string().contains("non-finite mean"));

        assert!(validate_embedding(&[0.0, 1.0], &[1.0, 2.0]).is_empty());

        let v = validate_embedding(&[f64::INFINITY], &[0.0, f64::NAN]);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn strict_and_clamped_constructors() {
        assert!(GaussianEmbedding::new(vec![0.0], vec![0.0]).is_err());
        let e = GaussianEmbedding::new_clamped(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(e.sigma_sq(), &[VARIANCE_FLOOR]);
        assert!(GaussianEmbedding::new_clamped(vec![0.0], vec![f64::NAN]).is_err());
        assert!(GaussianEmbedding::new(vec![], vec![]).is_err());
    }

    #[test]
    fn normalization_is_opt_in() {
        let e = GaussianEmbedding::deterministic(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.mu(), &[3.0, 4.0]);
        let n = e.l2_normalized().unwrap();
        assert!((n.mu()[0] - 0.6).abs() < 1e-15);
        assert_eq!(n.sigma_sq(), e.sigma_sq());
    }

    #[test]
    fn scorer_parse() {
        assert_eq!("MLS".parse::<Scorer>().unwrap(), Scorer::Mls);
        assert_eq!("cosine".parse::<Scorer>().unwrap(), Scorer::Cosine);
        assert!("kl".parse::<Scorer>().is_err());
    }
}
