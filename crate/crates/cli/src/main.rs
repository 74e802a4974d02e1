use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use mmt_core::data::corpus::{read_lines, write_lines};
use mmt_core::data::text::preprocess_bytes;
use mmt_core::data::{generate, BpeModel, FeatureStore, SynthSpec};
use mmt_core::eval::{approx_randomization, bleu_corpus, report_runs, MIN_TRIALS};
use mmt_core::experiment::{
    matrix_threads, run_matrix, train_run, translate, write_synth, DecodeOptions, MatrixConfig, Translator,
};
use mmt_core::model::Arch;
use mmt_core::train::{read_metrics, read_settings, TrainConfig, METRICS_FILE};
use mmt_core::{Error, Rng};

#[derive(Parser, Debug)]
#[command(name = "mmt", version, about = "Multimodal NMT experiments on a laptop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize punctuation, lowercase and split hyphens, line by line.
    Prep(IoArgs),
    /// Learn a joint BPE merge table from preprocessed text files.
    BpeLearn {
        #[arg(long, default_value_t = 10_000)]
        merges: usize,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Segment text with a learned merge table.
    BpeApply {
        #[arg(long)]
        codes: PathBuf,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Write a synthetic grounded-translation dataset.
    GenSynth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides of the synthetic spec.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train one model into a run directory, resuming if possible.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Translate raw source lines with a checkpoint or an ensemble.
    Translate {
        /// Checkpoint; its directory must hold the run's BPE and vocabularies.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Further checkpoints decoded as an ensemble.
        #[arg(long, num_args = 1..)]
        ensemble: Vec<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        length_norm: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Corpus BLEU of a hypothesis file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Approximate randomization test between two systems.
    Sigtest {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
    /// Mean ± std of the best dev BLEU per system from metrics files.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Train, decode and compare every architecture over several seeds.
    Matrix {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "baseline,ma,fa")]
        archs: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args, Debug)]
struct IoArgs {
    /// Input file; standard input when absent.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_name = "on|off")]
    normalize_features: Option<String>,
    #[arg(long)]
    feature_width: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    /// Extra `key=value` overrides of the training configuration.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn split_override(s: &str) -> Result<(&str, &str), Error> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_settings(&read_settings(p)?)?,
            None => TrainConfig::default(),
        };
        for s in &self.set {
            let (k, v) = split_override(s)?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("arch", self.arch.clone()),
            ("normalize_features", self.normalize_features.clone()),
            ("feature_width", self.feature_width.map(|v| v.to_string())),
            ("beam", self.beam.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_input(path: &Option<PathBuf>) -> anyhow::Result<Vec<u8>> {
    match path {
        Some(p) => std::fs::read(p).with_context(|| p.display().to_string()),
        None => {
            let mut buf = Vec::new();
            io::stdin().lock().read_to_end(&mut buf)?;
            Ok(buf)
        }
    }
}

fn write_output(path: &Option<PathBuf>, lines: &[String]) -> anyhow::Result<()> {
    match path {
        Some(p) => write_lines(p, lines).with_context(|| p.display().to_string()),
        None => {
            let mut out = io::stdout().lock();
            for l in lines {
                writeln!(out, "{l}")?;
            }
            Ok(())
        }
    }
}

fn text_lines(bytes: &[u8]) -> anyhow::Result<Vec<String>> {
    let mut lines = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        lines.push(line.map_err(|_| Error::Encoding(format!("line {} is not UTF-8", i + 1)))?);
    }
    Ok(lines)
}

/// System name for a metrics file: its directory, or the directory above a
/// run directory holding `metrics.jsonl`.
fn system_name(path: &Path) -> String {
    let dir = path.parent().unwrap_or(Path::new(""));
    let group = if path.file_name().is_some_and(|n| n == METRICS_FILE) {
        dir.parent().unwrap_or(dir)
    } else {
        dir
    };
    let name = group.display().to_string();
    if name.is_empty() {
        ".".into()
    } else {
        name
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prep(io) => {
            let bytes = read_input(&io.input)?;
            let mut pieces: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
            if pieces.last().is_some_and(|l| l.is_empty()) {
                pieces.pop();
            }
            let out = pieces
                .iter()
                .enumerate()
                .map(|(i, l)| preprocess_bytes(l).map_err(|e| anyhow!("line {}: {e}", i + 1)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_output(&io.output, &out)
        }
        Command::BpeLearn { merges, output, inputs } => {
            let corpora: Vec<Vec<String>> = inputs.iter().map(|p| read_lines(p)).collect::<Result<_, _>>()?;
            let refs: Vec<&[String]> = corpora.iter().map(Vec::as_slice).collect();
            let bpe = BpeModel::learn_joint(&refs, merges)?;
            bpe.save(&output)?;
            log::info!("learned {} merges", bpe.len());
            Ok(())
        }
        Command::BpeApply { codes, io } => {
            let bpe = BpeModel::load(&codes)?;
            let lines = text_lines(&read_input(&io.input)?)?;
            let mut cache = std::collections::HashMap::new();
            let out: Vec<String> = lines.iter().map(|l| bpe.apply_cached(l, &mut cache)).collect();
            write_output(&io.output, &out)
        }
        Command::GenSynth { out, config, seed, set } => {
            let mut spec = match &config {
                Some(p) => SynthSpec::from_settings(&read_settings(p)?)?,
                None => SynthSpec::default(),
            };
            for s in &set {
                let (k, v) = split_override(s)?;
                spec.set(k, v)?;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = generate(&spec)?;
            write_synth(&data, &out)?;
            log::info!("wrote synthetic data to {}", out.display());
            Ok(())
        }
        Command::Train { data, out, train } => {
            let cfg = train.resolve()?;
            let summary = train_run(&cfg, &data, &out, None)?;
            let o = &summary.outcome;
            println!(
                "epochs {} best dev BLEU {:.2} at epoch {}{}",
                o.history.last().map_or(0, |r| r.epoch),
                o.best_metric.unwrap_or(0.0),
                o.best_epoch.map_or("-".to_string(), |e| e.to_string()),
                if o.stopped_early { " (early stop)" } else { "" }
            );
            Ok(())
        }
        Command::Translate {
            model,
            ensemble,
            features,
            beam,
            length_norm,
            max_len,
            io,
        } => {
            let paths: Vec<PathBuf> = model.into_iter().chain(ensemble).collect();
            if paths.is_empty() {
                return Err(Error::Config("give --model or --ensemble".into()).into());
            }
            let members: Vec<Translator> = paths
                .iter()
                .map(|p| Translator::load(p).with_context(|| p.display().to_string()))
                .collect::<anyhow::Result<_>>()?;
            let mut opts = DecodeOptions::from_config(&members[0].train);
            if let Some(b) = beam {
                if b == 0 {
                    return Err(Error::Config("beam must be positive".into()).into());
                }
                opts.beam = b;
            }
            if let Some(a) = length_norm {
                opts.length_norm = a;
            }
            if let Some(m) = max_len {
                opts.max_len = m;
            }
            let store = features.as_ref().map(|p| FeatureStore::load(p, false)).transpose()?;
            let lines = text_lines(&read_input(&io.input)?)?;
            let hyps = translate(&members, &lines, store.as_ref(), &opts)?;
            write_output(&io.output, &hyps)
        }
        Command::Score { hyp, reference } => {
            let score = bleu_corpus(&read_lines(&hyp)?, &read_lines(&reference)?)?;
            println!("BLEU = {score:.2}");
            Ok(())
        }
        Command::Sigtest {
            a,
            b,
            reference,
            trials,
            seed,
        } => {
            if trials < MIN_TRIALS {
                return Err(Error::Config(format!("at least {MIN_TRIALS} trials are needed")).into());
            }
            let (ha, hb, refs) = (read_lines(&a)?, read_lines(&b)?, read_lines(&reference)?);
            let p = approx_randomization(&ha, &hb, &refs, trials, &mut Rng::seed_from(seed))?;
            println!(
                "BLEU a = {:.2} b = {:.2} p = {p:.4}",
                bleu_corpus(&ha, &refs)?,
                bleu_corpus(&hb, &refs)?
            );
            Ok(())
        }
        Command::Report { metrics } => {
            let mut systems: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for path in &metrics {
                let records = read_metrics(path).with_context(|| path.display().to_string())?;
                let best = records
                    .iter()
                    .map(|r| r.dev_bleu)
                    .reduce(f64::max)
                    .ok_or_else(|| anyhow!("{} has no epochs", path.display()))?;
                systems.entry(system_name(path)).or_default().push(best);
            }
            let report = report_runs(&systems.into_iter().collect::<Vec<_>>())?;
            print!("{report}");
            Ok(())
        }
        Command::Matrix {
            data,
            out,
            seeds,
            archs,
            trials,
            train,
        } => {
            let mut cfg = MatrixConfig::new(train.resolve()?);
            cfg.seeds = seeds;
            cfg.archs = archs.iter().map(|a| a.parse::<Arch>()).collect::<Result<_, _>>()?;
            cfg.trials = trials;
            let report = run_matrix(&cfg, &data, &out, matrix_threads())?;
            print!("{report}");
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_config() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
