//! `pfe` command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and maps the outcome to an exit code: 0 on success, 1 on a
//! usage error, 2 on a data error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pfe_core::config::RunConfig;
use pfe_core::eval::{all_pairs, filter_curve, spearman, verify_roc, PairConfidence};
use pfe_core::io::{read_embeddings, write_embeddings, write_point_embeddings};
use pfe_core::synthlab::{
    dilemma_sweep, DegradationMode, DegradationSpec, SynthCorpus, MIXED_LOW_BAND,
    MIXED_LOW_FRACTION,
};
use pfe_core::trainer::{load_head, predict_corpus, save_head, train};
use pfe_core::{confidence, FusionMode, GaussianEmbedding, Scorer, Template};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pfe", version, about = "Probabilistic embedding toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// RNG seed; overrides the config file. Commands without randomness ignore it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every record of A against every record of B (one row per record of A).
    Score {
        #[arg(long, default_value = "mls")]
        metric: Scorer,
        a: PathBuf,
        b: PathBuf,
    },
    /// Fuse records sharing a subject id into one embedding per subject.
    Fuse {
        #[arg(long, default_value = "precision-sum")]
        mode: FusionMode,
        input: PathBuf,
        /// Write the fused embeddings here as well as printing them.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train an uncertainty head on a synthetic corpus.
    TrainHead {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint path (default: head_out from the config).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-step loss CSV (default: log_out from the config).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate a synthetic corpus and write its observed embeddings.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Attach variances predicted by this head; otherwise means only.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Write `index,subject_id,quality,true_noise_var` here.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Push a share of samples into the low-quality band.
        #[arg(long)]
        mixed: bool,
    },
    /// Degradation sweep: genuine and impostor score statistics per quality level.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "cosine")]
        scorer: Scorer,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Comma-separated strictly decreasing quality levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// All-pairs verification within one file, genuine iff subject ids match.
    EvalVerify {
        #[arg(long, default_value = "mls")]
        metric: Scorer,
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
        far: Vec<f64>,
        #[arg(long)]
        csv: bool,
    },
    /// Open-set identification of probe templates against gallery templates.
    EvalIdentify {
        #[arg(long, default_value = "mls")]
        metric: Scorer,
        #[arg(long, default_value = "min-variance")]
        fusion: FusionMode,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1")]
        fpir: Vec<f64>,
        #[arg(long)]
        csv: bool,
    },
    /// TAR at a fixed FAR after dropping the least confident images.
    FilterCurve {
        #[arg(long, default_value = "cosine")]
        metric: Scorer,
        input: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        far: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
        grid: Vec<f64>,
        /// Score pairs by their mean image confidence instead of the minimum.
        #[arg(long)]
        mean_confidence: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key = value run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub samples_per_identity: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub mode: Option<DegradationMode>,
}

impl RunArgs {
    fn load(&self, seed: Option<u64>) -> pfe_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        if let Some(n) = self.identities {
            cfg.synth.identities = n;
        }
        if let Some(n) = self.samples_per_identity {
            cfg.synth.samples_per_identity = n;
        }
        if let Some(d) = self.dim {
            cfg.synth.dim = d;
        }
        if let Some(m) = self.mode {
            cfg.synth.mode = m;
        }
        Ok(cfg)
    }
}

fn fmt_vec(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

fn embeddings_with_head(corpus: &SynthCorpus, head: Option<&Path>) -> pfe_core::Result<Vec<GaussianEmbedding>> {
    match head {
        None => corpus.samples.iter().map(|s| s.point_embedding()).collect(),
        Some(p) => {
            let head = load_head(p)?;
            let pred = predict_corpus(&head, corpus)?;
            corpus
                .samples
                .iter()
                .zip(pred)
                .map(|(s, v)| Ok(GaussianEmbedding::new_clamped(s.observed_mu.clone(), v)?.with_label(s.subject_id.clone())))
                .collect()
        }
    }
}

/// Runs a parsed command, writing data output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> pfe_core::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Score { metric, a, b } => {
            let (a, b) = (read_embeddings(a)?, read_embeddings(b)?);
            for ea in &a {
                let row = b.iter().map(|eb| metric.score(ea, eb)).collect::<pfe_core::Result<Vec<_>>>()?;
                let line: Vec<String> = row.iter().map(|s| format!("{s:.6}")).collect();
                writeln!(out, "{}", line.join("\t"))?;
            }
        }
        Command::Fuse { mode, input, out: path } => {
            let templates = Template::group_by_label(&read_embeddings(input)?, mode)?;
            let mut fused = Vec::with_capacity(templates.len());
            for t in &templates {
                let f = t.fused().expect("templates are built with their fused cache").clone();
                writeln!(out, "{}\t{}\t{}", t.subject_id(), fmt_vec(f.mu()), fmt_vec(f.sigma_sq()))?;
                fused.push(f);
            }
            if let Some(p) = path {
                write_embeddings(p, &fused)?;
            }
        }
        Command::TrainHead { run, steps, out: path, log } => {
            let mut cfg = run.load(seed)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            cfg.validate()?;
            let corpus = SynthCorpus::generate(&cfg.synth, cfg.train.seed)?;
            let n_train = (corpus.identities.len() * 4 / 5).max(1);
            let (train_set, held_out) = corpus.split_identities(n_train)?;
            let outcome = train(cfg.train.init_head(&train_set)?, &train_set, &cfg.train)?;
            let head_path = path.unwrap_or_else(|| cfg.head_out.clone().into());
            save_head(&head_path, &outcome.head)?;
            let mut csv = String::from("step,loss\n");
            for (k, l) in outcome.losses.iter().enumerate() {
                csv.push_str(&format!("{k},{l:.6}\n"));
            }
            std::fs::write(log.unwrap_or_else(|| cfg.log_out.clone().into()), csv)?;

            let pred = predict_corpus(&outcome.head, &held_out)?;
            let mean: Vec<f64> = pred.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let truth: Vec<f64> = held_out.samples.iter().map(|s| s.true_noise_var).collect();
            writeln!(out, "steps\t{}", outcome.losses.len())?;
            if let Some(l) = outcome.losses.last() {
                writeln!(out, "final_loss\t{l:.6}")?;
            }
            writeln!(out, "heldout_spearman\t{:.6}", spearman(&mean, &truth)?)?;
            writeln!(out, "head\t{}", head_path.display())?;
        }
        Command::Synth { run, out: path, head, truth, mixed } => {
            let cfg = run.load(seed)?;
            cfg.validate()?;
            let seed = cfg.train.seed;
            let mut corpus = SynthCorpus::generate(&cfg.synth, seed)?;
            if mixed {
                corpus = corpus.mixed_quality(MIXED_LOW_FRACTION, MIXED_LOW_BAND, seed.wrapping_add(7))?;
            }
            let embs = embeddings_with_head(&corpus, head.as_deref())?;
            if head.is_some() {
                write_embeddings(&path, &embs)?;
            } else {
                write_point_embeddings(&path, &embs)?;
            }
            if let Some(t) = truth {
                let mut csv = String::from("index,subject_id,quality,true_noise_var\n");
                for (k, s) in corpus.samples.iter().enumerate() {
                    csv.push_str(&format!("{k},{},{:.6},{:.6}\n", s.subject_id, s.quality, s.true_noise_var));
                }
                std::fs::write(t, csv)?;
            }
            writeln!(out, "{} samples of {} identities, D={}", embs.len(), corpus.identities.len(), cfg.synth.dim)?;
        }
        Command::Sweep { run, scorer, head, levels, out: path } => {
            let mut cfg = run.load(seed)?;
            if let Some(l) = levels {
                cfg.sweep_levels = l;
            }
            cfg.validate()?;
            let corpus = SynthCorpus::generate(&cfg.synth, cfg.train.seed)?;
            let spec = DegradationSpec::new(cfg.synth.mode, cfg.sweep_levels.clone())?;
            let head = head.map(load_head).transpose()?;
            let table = dilemma_sweep(&corpus, &spec, scorer, head.as_ref(), cfg.train.seed)?;
            match path {
                Some(p) => std::fs::write(p, table.to_csv())?,
                None => write!(out, "{}", table.to_csv())?,
            }
        }
        Command::EvalVerify { metric, input, far, csv } => {
            let pairs = all_pairs(&read_embeddings(input)?, metric)?;
            let (g, i) = pfe_core::eval::split_pairs(&pairs);
            let report = verify_roc(&g, &i, &far)?;
            write!(out, "{}", if csv { report.to_csv() } else { report.to_text() })?;
        }
        Command::EvalIdentify { metric, fusion, gallery, probes, fpir, csv } => {
            let g = Template::group_by_label(&read_embeddings(gallery)?, fusion)?;
            let p = Template::group_by_label(&read_embeddings(probes)?, fusion)?;
            let report = pfe_core::eval::identify(&g, &p, metric, &fpir)?;
            write!(out, "{}", if csv { report.to_csv() } else { report.to_text() })?;
        }
        Command::FilterCurve { metric, input, far, grid, mean_confidence } => {
            let embs = read_embeddings(input)?;
            let pairs = all_pairs(&embs, metric)?;
            let conf: Vec<f64> = embs.iter().map(confidence).collect();
            let mode = if mean_confidence { PairConfidence::Mean } else { PairConfidence::Min };
            write!(out, "{}", filter_curve(&pairs, &conf, far, &grid, mode)?.to_csv())?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command against
/// stdout and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PFE_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    // usage errors and bare `pfe` both go to stderr
                    let _ = write!(std::io::stderr(), "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    log::debug!("{:?}", cli.command);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pfe: {e}");
            EXIT_DATA
        }
    }
}
