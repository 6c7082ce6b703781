use crate::embedding::mls_raw;
use crate::error::{PfeError, Result};

/// Intra-subject index pairs `(i, j)`, `i < j`, within one batch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GenuinePairSet {
    pairs: Vec<(usize, usize)>,
}

impl GenuinePairSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(i, j)) = pairs.iter().find(|(i, j)| i >= j) {
            return Err(PfeError::validation(format!("pair ({i}, {j}) must have i < j")));
        }
        Ok(Self { pairs })
    }

    /// All pairs within each group of batch row indices.
    pub fn from_groups(groups: &[Vec<usize>]) -> Self {
        let mut pairs = Vec::new();
        for g in groups {
            for a in 0..g.len() {
                for b in a + 1..g.len() {
                    let (i, j) = (g[a].min(g[b]), g[a].max(g[b]));
                    pairs.push((i, j));
                }
            }
        }
        Self { pairs }
    }

    /// Every pair of rows sharing a label.
    pub fn from_labels<T: PartialEq>(labels: &[T]) -> Self {
        let mut pairs = Vec::new();
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                if labels[i] == labels[j] {
                    pairs.push((i, j));
                }
            }
        }
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check(&self, rows: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(PfeError::EmptySet("genuine pair set"));
        }
        if let Some(&(_, j)) = self.pairs.iter().find(|(_, j)| *j >= rows) {
            return Err(PfeError::validation(format!("pair index {j} out of range {rows}")));
        }
        Ok(())
    }
}

fn check_rows(mus: &[Vec<f64>], sigmas: &[Vec<f64>]) -> Result<()> {
    if mus.len() != sigmas.len() {
        return Err(PfeError::validation(format!(
            "{} mean rows but {} variance rows",
            mus.len(),
            sigmas.len()
        )));
    }
    for (m, s) in mus.iter().zip(sigmas) {
        if m.len() != s.len() {
            return Err(PfeError::Dimension {
                expected: m.len(),
                found: s.len(),
            });
        }
    }
    Ok(())
}

/// Mean negative mutual likelihood score over the genuine pairs.
pub fn mls_loss(mus: &[Vec<f64>], sigmas: &[Vec<f64>], pairs: &GenuinePairSet) -> Result<f64> {
    check_rows(mus, sigmas)?;
    pairs.check(mus.len())?;
    let total: f64 = pairs
        .pairs()
        .iter()
        .map(|&(i, j)| -mls_raw(&mus[i], &sigmas[i], &mus[j], &sigmas[j]))
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Loss together with ∂loss/∂σ² for every row and dimension.
///
/// Per pair and dimension, with `v = σ²ᵢ + σ²ⱼ` and `d = (μᵢ − μⱼ)²`, both
/// variances receive `(v − d) / (2v²)`, scaled by `1/|P|`.
pub fn mls_loss_grad(
    mus: &[Vec<f64>],
    sigmas: &[Vec<f64>],
    pairs: &GenuinePairSet,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let loss = mls_loss(mus, sigmas, pairs)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut grad: Vec<Vec<f64>> = sigmas.iter().map(|s| vec![0.0; s.len()]).collect();
    for &(i, j) in pairs.pairs() {
        for l in 0..mus[i].len() {
            let diff = mus[i][l] - mus[j][l];
            let v = sigmas[i][l] + sigmas[j][l];
            let g = scale * (v - diff * diff) / (2.0 * v * v);
            grad[i][l] += g;
            grad[j][l] += g;
        }
    }
    Ok((loss, grad))
}
