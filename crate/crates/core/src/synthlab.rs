//! Synthetic latent-space corpora with controllable quality degradation.
//!
//! Every identity owns an intrinsic code `z`. An observation of quality `q`
//! is the convex blend `(1 − w(q))·z + w(q)·dark` plus isotropic Gaussian noise
//! of variance `v(q)`, where `w(1) = 0`, `w(0) = 1` and `v` decreases with
//! quality. The blend drags degraded observations of every identity toward a
//! single dark point, which is what makes point-embedding cosine scores fail
//! on low-quality pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{cosine_raw, GaussianEmbedding, Scorer};
use crate::error::{PfeError, Result};
use crate::trainer::UncertaintyHead;

/// Noise variance of a pristine observation, shared by all modes.
pub const NOISE_FLOOR: f64 = 0.01;
/// Defaults of the mixed-quality evaluation protocol, see
/// [`SynthCorpus::mixed_quality`].
pub const MIXED_LOW_FRACTION: f64 = 0.3;
pub const MIXED_LOW_BAND: (f64, f64) = (0.05, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegradationMode {
    #[default]
    BlurLike,
    OcclusionLike,
    NoiseLike,
}

impl DegradationMode {
    pub const ALL: [DegradationMode; 3] = [
        DegradationMode::BlurLike,
        DegradationMode::OcclusionLike,
        DegradationMode::NoiseLike,
    ];

    fn blend_exponent(&self) -> f64 {
        match self {
            DegradationMode::BlurLike => 3.0,
            DegradationMode::OcclusionLike => 2.0,
            DegradationMode::NoiseLike => 4.0,
        }
    }

    fn noise_scale(&self) -> f64 {
        match self {
            DegradationMode::BlurLike => 0.2,
            DegradationMode::OcclusionLike => 0.25,
            DegradationMode::NoiseLike => 0.3,
        }
    }

    /// Weight of the dark point in the blend; 0 at q = 1 and 1 at q = 0.
    pub fn blend_weight(&self, quality: f64) -> f64 {
        (1.0 - quality.clamp(0.0, 1.0)).powf(self.blend_exponent())
    }

    /// Strictly decreasing in quality.
    pub fn noise_var(&self, quality: f64) -> f64 {
        NOISE_FLOOR + self.noise_scale() * (1.0 - quality.clamp(0.0, 1.0))
    }

    pub fn name(&self) -> &'static str {
        match self {
            DegradationMode::BlurLike => "blur",
            DegradationMode::OcclusionLike => "occlusion",
            DegradationMode::NoiseLike => "noise",
        }
    }
}

impl std::str::FromStr for DegradationMode {
    type Err = PfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blur" | "blur-like" | "blur_like" => Ok(DegradationMode::BlurLike),
            "occlusion" | "occlusion-like" | "occlusion_like" => Ok(DegradationMode::OcclusionLike),
            "noise" | "noise-like" | "noise_like" => Ok(DegradationMode::NoiseLike),
            other => Err(PfeError::Config(format!("unknown degradation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub aux_channels: usize,
    pub quality_min: f64,
    pub quality_max: f64,
    pub mode: DegradationMode,
    /// Standard deviation of the noise on each auxiliary quality channel.
    pub aux_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            identities: 200,
            samples_per_identity: 20,
            dim: 16,
            aux_channels: 4,
            quality_min: 0.2,
            quality_max: 1.0,
            mode: DegradationMode::BlurLike,
            aux_noise: 0.05,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 1 || self.samples_per_identity < 1 {
            return Err(PfeError::validation("identity and sample counts must be >= 1"));
        }
        if self.dim < 2 {
            return Err(PfeError::validation("latent dimension must be >= 2"));
        }
        let q_ok = (0.0..=1.0).contains(&self.quality_min)
            && (0.0..=1.0).contains(&self.quality_max)
            && self.quality_min <= self.quality_max;
        if !q_ok {
            return Err(PfeError::validation(format!(
                "quality range [{}, {}] must lie inside [0, 1]",
                self.quality_min, self.quality_max
            )));
        }
        if !(self.aux_noise.is_finite() && self.aux_noise >= 0.0) {
            return Err(PfeError::validation("aux_noise must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn head_input_dim(&self) -> usize {
        self.dim + self.aux_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthIdentity {
    pub id: String,
    pub intrinsic_code: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub subject_id: String,
    /// Position of the subject in [`SynthCorpus::identities`].
    pub identity: usize,
    pub quality: f64,
    /// Accumulated dark-point weight of `observed_mu`.
    pub blend_weight: f64,
    pub observed_mu: Vec<f64>,
    pub true_noise_var: f64,
    pub aux_channels: Vec<f64>,
}

impl SynthSample {
    /// Observed mean followed by the auxiliary channels.
    pub fn head_input(&self) -> Vec<f64> {
        let mut v = self.observed_mu.clone();
        v.extend_from_slice(&self.aux_channels);
        v
    }

    pub fn point_embedding(&self) -> Result<GaussianEmbedding> {
        Ok(GaussianEmbedding::deterministic(self.observed_mu.clone())?
            .with_label(self.subject_id.clone()))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn aux_for(rng: &mut ChaCha8Rng, quality: f64, channels: usize, noise: f64) -> Vec<f64> {
    (0..channels)
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            quality + noise * n
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub identities: Vec<SynthIdentity>,
    pub samples: Vec<SynthSample>,
    pub dark_point: Vec<f64>,
    pub seed: u64,
    pub params: SynthParams,
}

impl SynthCorpus {
    /// Regenerable bit-for-bit from `(params, seed)`.
    pub fn generate(params: &SynthParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = params.dim;
        let scale_to = |v: Vec<f64>| {
            let n = crate::embedding::norm(&v);
            let target = (d as f64).sqrt();
            v.into_iter().map(|x| x * target / n).collect::<Vec<_>>()
        };
        let dark_point = scale_to(normal_vec(&mut rng, d));
        let identities: Vec<SynthIdentity> = (0..params.identities)
            .map(|i| SynthIdentity {
                id: format!("id{i:04}"),
                intrinsic_code: scale_to(normal_vec(&mut rng, d)),
            })
            .collect();

        let mut samples = Vec::with_capacity(params.identities * params.samples_per_identity);
        for (i, ident) in identities.iter().enumerate() {
            for _ in 0..params.samples_per_identity {
                let quality = if params.quality_max > params.quality_min {
                    rng.random_range(params.quality_min..params.quality_max)
                } else {
                    params.quality_min
                };
                samples.push(observe(
                    &mut rng,
                    ident,
                    i,
                    &dark_point,
                    quality,
                    params.mode,
                    params,
                ));
            }
        }
        Ok(Self {
            identities,
            samples,
            dark_point,
            seed,
            params: params.clone(),
        })
    }

    /// Sample indices per identity, in identity order.
    pub fn samples_by_identity(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.identities.len()];
        for (k, s) in self.samples.iter().enumerate() {
            out[s.identity].push(k);
        }
        out
    }

    /// Splits by identity: the first `n_first` identities and their samples go
    /// to the first corpus. Both halves keep the same dark point.
    pub fn split_identities(&self, n_first: usize) -> Result<(SynthCorpus, SynthCorpus)> {
        if n_first == 0 || n_first >= self.identities.len() {
            return Err(PfeError::validation(format!(
                "split point {n_first} must be inside 1..{}",
                self.identities.len()
            )));
        }
        let part = |range: std::ops::Range<usize>| {
            let offset = range.start;
            let identities = self.identities[range.clone()].to_vec();
            let samples = self
                .samples
                .iter()
                .filter(|s| range.contains(&s.identity))
                .map(|s| SynthSample {
                    identity: s.identity - offset,
                    ..s.clone()
                })
                .collect();
            let mut params = self.params.clone();
            params.identities = identities.len();
            SynthCorpus {
                identities,
                samples,
                dark_point: self.dark_point.clone(),
                seed: self.seed,
                params,
            }
        };
        Ok((
            part(0..n_first),
            part(n_first..self.identities.len()),
        ))
    }

    /// Fresh quality-1 observation of identity `i`.
    pub fn pristine_sample(&self, i: usize, rng: &mut ChaCha8Rng) -> SynthSample {
        observe(
            rng,
            &self.identities[i],
            i,
            &self.dark_point,
            1.0,
            self.params.mode,
            &self.params,
        )
    }

    /// Copy in which each sample, with probability `low_fraction`, is
    /// degraded to a quality drawn uniformly from `low_band` (samples already
    /// below the drawn quality are kept). Mixes captures the way a
    /// surveillance-style protocol would.
    pub fn mixed_quality(&self, low_fraction: f64, low_band: (f64, f64), seed: u64) -> Result<Self> {
        let (lo, hi) = low_band;
        if !(0.0..=1.0).contains(&low_fraction) {
            return Err(PfeError::validation("low_fraction must be in [0, 1]"));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(PfeError::validation(format!("invalid low-quality band [{lo}, {hi}]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for s in &mut out.samples {
            if rng.random::<f64>() >= low_fraction {
                continue;
            }
            let q = if hi > lo { rng.random_range(lo..hi) } else { lo };
            if q < s.quality {
                *s = degrade(s, q, self.params.mode, &self.dark_point, self.params.aux_noise, &mut rng)?;
            }
        }
        Ok(out)
    }

    pub fn mean_checksum(&self) -> u64 {
        // FNV-1a over the raw bit patterns of every observed mean.
        let mut h: u64 = 0xcbf29ce484222325;
        for s in &self.samples {
            for x in &s.observed_mu {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

fn observe(
    rng: &mut ChaCha8Rng,
    ident: &SynthIdentity,
    identity: usize,
    dark: &[f64],
    quality: f64,
    mode: DegradationMode,
    params: &SynthParams,
) -> SynthSample {
    let w = mode.blend_weight(quality);
    let v = mode.noise_var(quality);
    let sd = v.sqrt();
    let observed_mu = ident
        .intrinsic_code
        .iter()
        .zip(dark)
        .map(|(z, d)| {
            let n: f64 = StandardNormal.sample(rng);
            (1.0 - w) * z + w * d + sd * n
        })
        .collect();
    SynthSample {
        subject_id: ident.id.clone(),
        identity,
        quality,
        blend_weight: w,
        observed_mu,
        true_noise_var: v,
        aux_channels: aux_for(rng, quality, params.aux_channels, params.aux_noise),
    }
}

/// Moves `sample` to a lower quality: a further convex step toward the dark
/// point plus enough fresh noise to reach the mode's noise variance.
pub fn degrade(
    sample: &SynthSample,
    target_quality: f64,
    mode: DegradationMode,
    dark_point: &[f64],
    aux_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SynthSample> {
    if !(0.0..=1.0).contains(&target_quality) {
        return Err(PfeError::validation(format!(
            "target quality {target_quality} outside [0, 1]"
        )));
    }
    if target_quality > sample.quality {
        return Err(PfeError::validation(format!(
            "target quality {target_quality} above current {}",
            sample.quality
        )));
    }
    if dark_point.len() != sample.observed_mu.len() {
        return Err(PfeError::Dimension {
            expected: sample.observed_mu.len(),
            found: dark_point.len(),
        });
    }
    if target_quality == sample.quality {
        return Ok(sample.clone());
    }
    let w_target = mode.blend_weight(target_quality).max(sample.blend_weight);
    // (1 - w_target) = (1 - step) (1 - w_current)
    let step = if sample.blend_weight >= 1.0 {
        1.0
    } else {
        1.0 - (1.0 - w_target) / (1.0 - sample.blend_weight)
    };
    let carried = (1.0 - step) * (1.0 - step) * sample.true_noise_var;
    let target_var = mode.noise_var(target_quality).max(carried);
    let extra_sd = (target_var - carried).max(0.0).sqrt();
    let observed_mu = sample
        .observed_mu
        .iter()
        .zip(dark_point)
        .map(|(x, d)| {
            let n: f64 = StandardNormal.sample(rng);
            (1.0 - step) * x + step * d + extra_sd * n
        })
        .collect();
    let channels = sample.aux_channels.len();
    Ok(SynthSample {
        subject_id: sample.subject_id.clone(),
        identity: sample.identity,
        quality: target_quality,
        blend_weight: w_target,
        observed_mu,
        true_noise_var: target_var,
        aux_channels: aux_for(rng, target_quality, channels, aux_noise),
    })
}

/// Degradation protocol for a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    levels: Vec<f64>,
}

impl DegradationSpec {
    /// `levels` are quality values and must be strictly decreasing.
    pub fn new(mode: DegradationMode, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(PfeError::EmptySet("degradation levels"));
        }
        if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(PfeError::validation("degradation levels must lie in [0, 1]"));
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(PfeError::validation(
                "degradation levels must be strictly decreasing in quality",
            ));
        }
        Ok(Self { mode, levels })
    }

    /// `steps + 1` qualities evenly spaced from 1 down to `lowest`.
    pub fn linear(mode: DegradationMode, steps: usize, lowest: f64) -> Result<Self> {
        if steps == 0 {
            return Self::new(mode, vec![1.0]);
        }
        let levels = (0..=steps)
            .map(|k| 1.0 - (1.0 - lowest) * k as f64 / steps as f64)
            .collect();
        Self::new(mode, levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub scorer: Scorer,
    pub genuine_mean: f64,
    pub genuine_std: f64,
    pub genuine_median: f64,
    pub impostor_mean: f64,
    pub impostor_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Raw scores per level, `(genuine, impostor)`.
    pub scores: Vec<(Vec<f64>, Vec<f64>)>,
}

pub const SWEEP_CSV_HEADER: &str = "level,scorer,genuine_mean,genuine_std,impostor_mean,impostor_std";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.level,
                r.scorer.name(),
                r.genuine_mean,
                r.genuine_std,
                r.impostor_mean,
                r.impostor_std
            ));
        }
        out
    }

    /// Median over the genuine scores of every level pooled together.
    pub fn pooled_genuine_median(&self) -> f64 {
        let all: Vec<f64> = self.scores.iter().flat_map(|(g, _)| g.iter().copied()).collect();
        median(&all)
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn to_gaussian(sample: &SynthSample, head: Option<&UncertaintyHead>) -> Result<GaussianEmbedding> {
    match head {
        None => sample.point_embedding(),
        Some(h) => {
            let var = h.predict_one(&sample.head_input())?;
            GaussianEmbedding::new_clamped(sample.observed_mu.clone(), var)
        }
    }
}

/// Cross-quality genuine vs degraded-impostor score statistics per level.
///
/// Genuine pairs compare each subject's pristine observation with its own
/// degraded copy; impostor pairs compare degraded copies of distinct subjects
/// (all pairs). Each level draws its noise from its own derived stream, so a
/// level's result does not depend on which other levels are present.
pub fn dilemma_sweep(
    corpus: &SynthCorpus,
    spec: &DegradationSpec,
    scorer: Scorer,
    head: Option<&UncertaintyHead>,
    seed: u64,
) -> Result<SweepTable> {
    let head = match (scorer, head) {
        (Scorer::Mls, None) => {
            return Err(PfeError::Config("MLS sweep requires a trained head".into()))
        }
        (Scorer::Mls, Some(h)) => Some(h),
        _ => None,
    };
    let mut base = ChaCha8Rng::seed_from_u64(seed);
    let pristine: Vec<SynthSample> = (0..corpus.identities.len())
        .map(|i| corpus.pristine_sample(i, &mut base))
        .collect();
    let pristine_emb = pristine
        .iter()
        .map(|s| to_gaussian(s, head))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for (k, &level) in spec.levels().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let degraded = pristine
            .iter()
            .map(|s| {
                degrade(
                    s,
                    level,
                    spec.mode,
                    &corpus.dark_point,
                    corpus.params.aux_noise,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let emb = degraded
            .iter()
            .map(|s| to_gaussian(s, head))
            .collect::<Result<Vec<_>>>()?;
        let genuine = pristine_emb
            .iter()
            .zip(&emb)
            .map(|(p, d)| scorer.score(p, d))
            .collect::<Result<Vec<_>>>()?;
        let mut impostor = Vec::with_capacity(emb.len() * emb.len().saturating_sub(1) / 2);
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                impostor.push(scorer.score(&emb[i], &emb[j])?);
            }
        }
        if impostor.is_empty() {
            return Err(PfeError::CorpusTooSmall(
                "a sweep needs at least two identities".into(),
            ));
        }
        let (gm, gs) = mean_std(&genuine);
        let (im, is) = mean_std(&impostor);
        rows.push(SweepRow {
            level,
            scorer,
            genuine_mean: gm,
            genuine_std: gs,
            genuine_median: median(&genuine),
            impostor_mean: im,
            impostor_std: is,
        });
        scores.push((genuine, impostor));
    }
    Ok(SweepTable { rows, scores })
}

/// Mean cosine between degraded means of distinct subjects after pushing
/// pristine observations to `quality`. Monte Carlo over `pairs` pairs.
pub fn degraded_impostor_cosine(
    corpus: &SynthCorpus,
    quality: f64,
    mode: DegradationMode,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if corpus.identities.len() < 2 {
        return Err(PfeError::CorpusTooSmall("need two identities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.identities.len();
    let mut acc = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let a = corpus.pristine_sample(i, &mut rng);
        let b = corpus.pristine_sample(j, &mut rng);
        let a = degrade(&a, quality, mode, &corpus.dark_point, 0.0, &mut rng)?;
        let b = degrade(&b, quality, mode, &corpus.dark_point, 0.0, &mut rng)?;
        acc += cosine_raw(&a.observed_mu, &b.observed_mu)?;
    }
    Ok(acc / pairs as f64)
}
