//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Every key has a default; [`RunConfig::to_text`] prints all of them.

use crate::embedding::Scorer;
use crate::error::{PfeError, Result};
use crate::fusion::FusionMode;
use crate::synthlab::{DegradationMode, SynthParams};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthParams,
    pub scorer: Scorer,
    pub fusion_mode: FusionMode,
    /// Quality levels for degradation sweeps, strictly decreasing.
    pub sweep_levels: Vec<f64>,
    pub head_out: String,
    pub log_out: String,
    pub sweep_out: String,
    pub report_out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthParams::default(),
            scorer: Scorer::Mls,
            fusion_mode: FusionMode::MinVariance,
            sweep_levels: vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0],
            head_out: "head.pfeh".into(),
            log_out: "train_log.csv".into(),
            sweep_out: "sweep.csv".into(),
            report_out: "report.csv".into(),
        }
    }
}

pub const RUN_CONFIG_KEYS: &[&str] = &[
    "subjects_per_batch",
    "images_per_subject",
    "steps",
    "lr_schedule",
    "momentum",
    "weight_decay",
    "seed",
    "hidden",
    "identities",
    "samples_per_identity",
    "dim",
    "aux_channels",
    "quality_min",
    "quality_max",
    "aux_noise",
    "degradation_mode",
    "scorer",
    "fusion_mode",
    "sweep_levels",
    "head_out",
    "log_out",
    "sweep_out",
    "report_out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| PfeError::Config(format!("invalid value '{v}' for key '{key}'")))
}

fn list_f64(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

pub fn parse_lr_schedule(v: &str) -> Result<Vec<(usize, f64)>> {
    v.split(',')
        .map(|entry| {
            let (s, r) = entry.trim().split_once(':').ok_or_else(|| {
                PfeError::Config(format!("lr_schedule entry '{entry}' must be step:rate"))
            })?;
            Ok((num("lr_schedule", s.trim())?, num("lr_schedule", r.trim())?))
        })
        .collect()
}

fn join<T: std::fmt::Display>(xs: impl Iterator<Item = T>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PfeError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "subjects_per_batch" => self.train.subjects_per_batch = num(key, v)?,
            "images_per_subject" => self.train.images_per_subject = num(key, v)?,
            "steps" => self.train.steps = num(key, v)?,
            "lr_schedule" => self.train.lr_schedule = parse_lr_schedule(v)?,
            "momentum" => self.train.momentum = num(key, v)?,
            "weight_decay" => self.train.weight_decay = num(key, v)?,
            "seed" => self.train.seed = num(key, v)?,
            "hidden" => {
                self.train.hidden = match v {
                    "auto" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "identities" => self.synth.identities = num(key, v)?,
            "samples_per_identity" => self.synth.samples_per_identity = num(key, v)?,
            "dim" => self.synth.dim = num(key, v)?,
            "aux_channels" => self.synth.aux_channels = num(key, v)?,
            "quality_min" => self.synth.quality_min = num(key, v)?,
            "quality_max" => self.synth.quality_max = num(key, v)?,
            "aux_noise" => self.synth.aux_noise = num(key, v)?,
            "degradation_mode" => self.synth.mode = v.parse::<DegradationMode>()?,
            "scorer" => self.scorer = v.parse()?,
            "fusion_mode" => self.fusion_mode = v.parse()?,
            "sweep_levels" => self.sweep_levels = list_f64(key, v)?,
            "head_out" => self.head_out = v.to_string(),
            "log_out" => self.log_out = v.to_string(),
            "sweep_out" => self.sweep_out = v.to_string(),
            "report_out" => self.report_out = v.to_string(),
            other => return Err(PfeError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        crate::synthlab::DegradationSpec::new(self.synth.mode, self.sweep_levels.clone())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let lines = [
            ("subjects_per_batch", t.subjects_per_batch.to_string()),
            ("images_per_subject", t.images_per_subject.to_string()),
            ("steps", t.steps.to_string()),
            (
                "lr_schedule",
                join(t.lr_schedule.iter().map(|(a, b)| format!("{a}:{b}"))),
            ),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("seed", t.seed.to_string()),
            (
                "hidden",
                t.hidden.map(|h| h.to_string()).unwrap_or_else(|| "auto".into()),
            ),
            ("identities", s.identities.to_string()),
            ("samples_per_identity", s.samples_per_identity.to_string()),
            ("dim", s.dim.to_string()),
            ("aux_channels", s.aux_channels.to_string()),
            ("quality_min", s.quality_min.to_string()),
            ("quality_max", s.quality_max.to_string()),
            ("aux_noise", s.aux_noise.to_string()),
            ("degradation_mode", s.mode.name().to_string()),
            ("scorer", self.scorer.name().to_string()),
            ("fusion_mode", self.fusion_mode.name().to_string()),
            ("sweep_levels", join(self.sweep_levels.iter())),
            ("head_out", self.head_out.clone()),
            ("log_out", self.log_out.clone()),
            ("sweep_out", self.sweep_out.clone()),
            ("report_out", self.report_out.clone()),
        ];
        lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
