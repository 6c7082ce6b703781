//! Python module `pfe`: Gaussian embeddings, scoring, fusion, the synthetic
//! lab, head training and evaluation metrics.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pfe_core::eval::{all_pairs, PairConfidence};
use pfe_core::synthlab::{DegradationMode, DegradationSpec, SynthParams};
use pfe_core::trainer::TrainConfig;
use pfe_core::{FusionMode, PfeError, Scorer};

fn to_py(e: PfeError) -> PyErr {
    match e {
        PfeError::Io(m) => PyIOError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = PfeError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Diagonal Gaussian embedding `N(mu, diag(sigma_sq))`. Without `sigma_sq`
/// every variance is 1.
#[pyclass(name = "GaussianEmbedding", module = "pfe", skip_from_py_object)]
#[derive(Clone)]
pub struct PyEmbedding {
    inner: pfe_core::GaussianEmbedding,
}

#[pymethods]
impl PyEmbedding {
    #[new]
    #[pyo3(signature = (mu, sigma_sq=None, label=None))]
    fn new(mu: Vec<f64>, sigma_sq: Option<Vec<f64>>, label: Option<String>) -> PyResult<Self> {
        let var = sigma_sq.unwrap_or_else(|| vec![1.0; mu.len()]);
        let mut inner = pfe_core::GaussianEmbedding::new(mu, var).map_err(to_py)?;
        inner.set_label(label);
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn sigma_sq(&self) -> Vec<f64> {
        self.inner.sigma_sq().to_vec()
    }

    #[getter]
    fn label(&self) -> Option<String> {
        self.inner.label().map(str::to_string)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Mean inverse standard deviation.
    fn confidence(&self) -> f64 {
        pfe_core::confidence(&self.inner)
    }

    fn mls(&self, other: PyRef<'_, PyEmbedding>) -> PyResult<f64> {
        Ok(pfe_core::mls_score(&self.inner, &other.inner).map_err(to_py)?.value)
    }

    fn cosine(&self, other: PyRef<'_, PyEmbedding>) -> PyResult<f64> {
        Ok(pfe_core::cosine_score(&self.inner, &other.inner).map_err(to_py)?.value)
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "GaussianEmbedding(dim={}, label={:?})",
            self.inner.dim(),
            self.inner.label().unwrap_or("")
        )
    }
}

fn unwrap_all(members: &[PyRef<'_, PyEmbedding>]) -> Vec<pfe_core::GaussianEmbedding> {
    members.iter().map(|m| m.inner.clone()).collect()
}

fn wrap_all(list: Vec<pfe_core::GaussianEmbedding>) -> Vec<PyEmbedding> {
    list.into_iter().map(|inner| PyEmbedding { inner }).collect()
}

/// Score two embeddings with `metric` in {"mls", "cosine", "neg-sq-euclid"}.
#[pyfunction]
#[pyo3(signature = (a, b, metric="mls"))]
fn score(a: PyRef<'_, PyEmbedding>, b: PyRef<'_, PyEmbedding>, metric: &str) -> PyResult<f64> {
    parse::<Scorer>(metric)?.score(&a.inner, &b.inner).map_err(to_py)
}

/// Fuse members with `mode` in {"precision-sum", "min-variance"}.
#[pyfunction]
#[pyo3(signature = (members, mode="precision-sum"))]
fn fuse(members: Vec<PyRef<'_, PyEmbedding>>, mode: &str) -> PyResult<PyEmbedding> {
    let inner = parse::<FusionMode>(mode)?.fuse(&unwrap_all(&members)).map_err(to_py)?;
    Ok(PyEmbedding { inner })
}

#[pyfunction]
fn fuse_sequential(state: PyRef<'_, PyEmbedding>, next: PyRef<'_, PyEmbedding>) -> PyResult<PyEmbedding> {
    let inner = pfe_core::fuse_sequential(&state.inner, &next.inner).map_err(to_py)?;
    Ok(PyEmbedding { inner })
}

#[pyfunction]
fn quality_pool(means: Vec<Vec<f64>>, qualities: Vec<f64>) -> PyResult<Vec<f64>> {
    pfe_core::quality_pool(&means, &qualities).map_err(to_py)
}

#[pyfunction]
fn read_embeddings(path: &str) -> PyResult<Vec<PyEmbedding>> {
    Ok(wrap_all(pfe_core::io::read_embeddings(path).map_err(to_py)?))
}

#[pyfunction]
fn write_embeddings(path: &str, embeddings: Vec<PyRef<'_, PyEmbedding>>) -> PyResult<()> {
    pfe_core::io::write_embeddings(path, &unwrap_all(&embeddings)).map_err(to_py)
}

/// `(threshold, far, tar)`, each `None` when the target is unsupported.
#[pyfunction]
fn tar_at_far(genuine: Vec<f64>, impostor: Vec<f64>, far: f64) -> PyResult<(Option<f64>, Option<f64>, Option<f64>)> {
    let t = pfe_core::eval::tar_at_far(&genuine, &impostor, far).map_err(to_py)?;
    Ok((t.threshold, t.far, t.tar))
}

/// All-pairs verification of labelled embeddings; returns
/// `[(far_target, threshold, far, tar)]`.
#[pyfunction]
#[pyo3(signature = (embeddings, far_targets, metric="mls"))]
fn verify(
    embeddings: Vec<PyRef<'_, PyEmbedding>>,
    far_targets: Vec<f64>,
    metric: &str,
) -> PyResult<Vec<(f64, Option<f64>, Option<f64>, Option<f64>)>> {
    let pairs = all_pairs(&unwrap_all(&embeddings), parse(metric)?).map_err(to_py)?;
    let (g, i) = pfe_core::eval::split_pairs(&pairs);
    let r = pfe_core::eval::verify_roc(&g, &i, &far_targets).map_err(to_py)?;
    Ok(r.table.iter().map(|t| (t.far_target, t.threshold, t.far, t.tar)).collect())
}

/// Open-set search on a `probe x gallery` score matrix; returns
/// `(cmc, [(fpir, tpir)])`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn identify_from_scores(
    scores: Vec<Vec<f64>>,
    gallery_ids: Vec<String>,
    probe_ids: Vec<String>,
    fpir_targets: Vec<f64>,
) -> PyResult<(Vec<(usize, f64)>, Vec<(f64, Option<f64>)>)> {
    let g: Vec<&str> = gallery_ids.iter().map(String::as_str).collect();
    let p: Vec<&str> = probe_ids.iter().map(String::as_str).collect();
    let r = pfe_core::eval::identify_from_scores(&scores, &g, &p, &fpir_targets).map_err(to_py)?;
    Ok((r.cmc, r.tpir_at_fpir))
}

/// TAR at `far` after dropping the least confident fraction of images at
/// each rate in `grid`. Confidence comes from each embedding's variances.
#[pyfunction]
#[pyo3(signature = (embeddings, far, grid, metric="cosine"))]
fn filter_curve(
    embeddings: Vec<PyRef<'_, PyEmbedding>>,
    far: f64,
    grid: Vec<f64>,
    metric: &str,
) -> PyResult<Vec<Option<f64>>> {
    let embs = unwrap_all(&embeddings);
    let pairs = all_pairs(&embs, parse(metric)?).map_err(to_py)?;
    let conf: Vec<f64> = embs.iter().map(pfe_core::confidence).collect();
    let c = pfe_core::eval::filter_curve(&pairs, &conf, far, &grid, PairConfidence::Min).map_err(to_py)?;
    Ok(c.tar_at_fixed_far)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    pfe_core::eval::spearman(&x, &y).map_err(to_py)
}

/// Synthetic latent corpus with per-sample ground-truth noise.
#[pyclass(name = "SynthCorpus", module = "pfe")]
pub struct PySynthCorpus {
    inner: pfe_core::synthlab::SynthCorpus,
}

#[pymethods]
impl PySynthCorpus {
    #[new]
    #[pyo3(signature = (identities=200, samples_per_identity=20, dim=16, mode="blur", seed=0))]
    fn new(identities: usize, samples_per_identity: usize, dim: usize, mode: &str, seed: u64) -> PyResult<Self> {
        let params = SynthParams {
            identities,
            samples_per_identity,
            dim,
            mode: parse::<DegradationMode>(mode)?,
            ..SynthParams::default()
        };
        let inner = pfe_core::synthlab::SynthCorpus::generate(&params, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Split by identity into the first `n` identities and the rest.
    fn split(&self, n: usize) -> PyResult<(PySynthCorpus, PySynthCorpus)> {
        let (a, b) = self.inner.split_identities(n).map_err(to_py)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    /// Mixed-quality copy: a `low_fraction` share of samples degraded into `low_band`.
    #[pyo3(signature = (seed, low_fraction=pfe_core::synthlab::MIXED_LOW_FRACTION, low_band=pfe_core::synthlab::MIXED_LOW_BAND))]
    fn mixed(&self, seed: u64, low_fraction: f64, low_band: (f64, f64)) -> PyResult<PySynthCorpus> {
        let inner = self.inner.mixed_quality(low_fraction, low_band, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn labels(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.subject_id.clone()).collect()
    }

    fn qualities(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.quality).collect()
    }

    fn noise_vars(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.true_noise_var).collect()
    }

    /// Observed means with unit variances.
    fn point_embeddings(&self) -> PyResult<Vec<PyEmbedding>> {
        let list = self.inner.samples.iter().map(|s| s.point_embedding()).collect::<pfe_core::Result<_>>();
        Ok(wrap_all(list.map_err(to_py)?))
    }

    /// Degradation sweep as CSV. `scorer="mls"` needs a trained head.
    #[pyo3(signature = (levels, scorer="cosine", head=None, seed=0))]
    fn sweep(&self, levels: Vec<f64>, scorer: &str, head: Option<PyRef<'_, PyHead>>, seed: u64) -> PyResult<String> {
        let spec = DegradationSpec::new(self.inner.params.mode, levels).map_err(to_py)?;
        let t = pfe_core::synthlab::dilemma_sweep(&self.inner, &spec, parse(scorer)?, head.as_ref().map(|h| &h.inner), seed)
            .map_err(to_py)?;
        Ok(t.to_csv())
    }
}

/// Uncertainty head predicting per-dimension variances.
#[pyclass(name = "UncertaintyHead", module = "pfe")]
pub struct PyHead {
    inner: pfe_core::trainer::UncertaintyHead,
}

#[pymethods]
impl PyHead {
    /// Train a fresh head; returns `(head, losses)`.
    #[staticmethod]
    #[pyo3(signature = (corpus, steps=3000, seed=0, subjects_per_batch=64, images_per_subject=4))]
    fn train(
        py: Python<'_>,
        corpus: PyRef<'_, PySynthCorpus>,
        steps: usize,
        seed: u64,
        subjects_per_batch: usize,
        images_per_subject: usize,
    ) -> PyResult<(PyHead, Vec<f64>)> {
        let cfg = TrainConfig { steps, seed, subjects_per_batch, images_per_subject, ..TrainConfig::default() };
        let corpus = &corpus.inner;
        let out = py
            .detach(|| {
                let head = cfg.init_head(corpus)?;
                pfe_core::trainer::train(head, corpus, &cfg)
            })
            .map_err(to_py)?;
        Ok((PyHead { inner: out.head }, out.losses))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyHead> {
        Ok(PyHead { inner: pfe_core::trainer::load_head(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pfe_core::trainer::save_head(path, &self.inner).map_err(to_py)
    }

    /// Predicted variances for every corpus sample.
    fn predict(&self, corpus: PyRef<'_, PySynthCorpus>) -> PyResult<Vec<Vec<f64>>> {
        pfe_core::trainer::predict_corpus(&self.inner, &corpus.inner).map_err(to_py)
    }

    /// Probabilistic embeddings: observed means with predicted variances.
    fn embed(&self, corpus: PyRef<'_, PySynthCorpus>) -> PyResult<Vec<PyEmbedding>> {
        let pred = pfe_core::trainer::predict_corpus(&self.inner, &corpus.inner).map_err(to_py)?;
        let list = corpus
            .inner
            .samples
            .iter()
            .zip(pred)
            .map(|(s, v)| {
                Ok(pfe_core::GaussianEmbedding::new_clamped(s.observed_mu.clone(), v)?.with_label(s.subject_id.clone()))
            })
            .collect::<pfe_core::Result<_>>()
            .map_err(to_py)?;
        Ok(wrap_all(list))
    }

    fn __repr__(&self) -> String {
        format!(
            "UncertaintyHead(din={}, hidden={}, d={})",
            self.inner.input_dim(),
            self.inner.hidden_dim(),
            self.inner.output_dim()
        )
    }
}

#[pymodule]
fn pfe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbedding>()?;
    m.add_class::<PySynthCorpus>()?;
    m.add_class::<PyHead>()?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_sequential, m)?)?;
    m.add_function(wrap_pyfunction!(quality_pool, m)?)?;
    m.add_function(wrap_pyfunction!(read_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(write_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(tar_at_far, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(identify_from_scores, m)?)?;
    m.add_function(wrap_pyfunction!(filter_curve, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add("VARIANCE_FLOOR", pfe_core::VARIANCE_FLOOR)?;
    Ok(())
}
