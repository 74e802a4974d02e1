use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::layout::{split_paths, SYNTH_SPEC_FILE};
use super::run::{load_features, load_split, prepare, train_run, Prepared};
use super::translate::{translate, DecodeOptions, Translator};
use crate::data::corpus::{read_lines, write_lines};
use crate::data::{ambiguous_accuracy, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{approx_randomization, bleu_corpus, report_runs, EvalReport, PairTest};
use crate::model::Arch;
use crate::tensor::Rng;
use crate::train::{TrainConfig, BEST_CHECKPOINT};

pub const RESULT_FILE: &str = "result.json";
pub const THREADS_ENV: &str = "MMT_MICRO_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixConfig {
    /// Shared settings; `arch` and `seed` are overridden per run.
    pub train: TrainConfig,
    pub archs: Vec<Arch>,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub sig_seed: u64,
}

impl MatrixConfig {
    pub fn new(train: TrainConfig) -> Self {
        MatrixConfig {
            train,
            archs: Arch::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4],
            trials: 1000,
            sig_seed: 12345,
        }
    }
}

/// Scores of one finished run, stored as `result.json` in its directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arch: Arch,
    pub seed: u64,
    pub dir: PathBuf,
    pub epochs: usize,
    /// Best greedy dev BLEU seen during training.
    pub best_dev_bleu: f64,
    /// Beam-search BLEU of the best checkpoint.
    pub dev_bleu: f64,
    pub test_bleu: f64,
    /// Share of test sentences with the right color word, when answers exist.
    pub test_ambiguous_accuracy: Option<f64>,
    /// Mean |pre-tanh| of visual attention over the last epoch.
    pub vis_pre_tanh_mean_abs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub runs: Vec<RunResult>,
    /// Test BLEU per system with pairwise p-values.
    pub bleu: EvalReport,
    pub ambiguous: Option<EvalReport>,
}

/// Parallel runs allowed: the available cores, capped by `MMT_MICRO_THREADS`.
pub fn matrix_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(cores),
        _ => cores,
    }
}

fn run_dir(out: &Path, arch: Arch, seed: u64) -> PathBuf {
    out.join(arch.name()).join(format!("seed{seed}"))
}

fn hyp_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.hyp"))
}

/// Train if needed, then decode dev and test with the best checkpoint.
fn complete_run(cfg: &TrainConfig, data_dir: &Path, dir: &Path, prep: &Prepared) -> Result<RunResult> {
    let summary = train_run(cfg, data_dir, dir, Some(prep))?;
    let result_path = dir.join(RESULT_FILE);
    if summary.skipped && result_path.exists() {
        let text = std::fs::read_to_string(&result_path)?;
        return serde_json::from_str(&text).map_err(|e| Error::format("run result", e.to_string()));
    }
    let translator = Translator::load(&dir.join(BEST_CHECKPOINT))?;
    let opts = DecodeOptions::from_config(cfg);
    let mut bleu = [0.0; 2];
    let mut accuracy = None;
    for (i, split) in ["dev", "test"].into_iter().enumerate() {
        let paths = split_paths(data_dir, split);
        let raw = crate::data::ParallelCorpus::load(&paths.src, &paths.tgt)?;
        let refs = load_split(data_dir, split)?.tgt;
        let features = match cfg.arch.uses_features() {
            true => Some(load_features(&paths.features, &TrainConfig { normalize_features: false, ..cfg.clone() })?),
            false => None,
        };
        let hyps = translate(std::slice::from_ref(&translator), &raw.src, features.as_ref(), &opts)?;
        write_lines(&hyp_path(dir, split), &hyps)?;
        bleu[i] = bleu_corpus(&hyps, &refs)?;
        let spec_path = data_dir.join(SYNTH_SPEC_FILE);
        if split == "test" && paths.answers.exists() && spec_path.exists() {
            let spec: SynthSpec = serde_json::from_str(&std::fs::read_to_string(&spec_path)?)
                .map_err(|e| Error::format("synthetic spec", e.to_string()))?;
            let answers = read_lines(&paths.answers)?;
            accuracy = Some(ambiguous_accuracy(&hyps, &answers, spec.color_words()));
        }
    }
    let last = summary.outcome.history.last();
    let result = RunResult {
        arch: cfg.arch,
        seed: cfg.seed,
        dir: dir.to_path_buf(),
        epochs: last.map_or(0, |r| r.epoch),
        best_dev_bleu: summary.outcome.best_metric.unwrap_or(0.0),
        dev_bleu: bleu[0],
        test_bleu: bleu[1],
        test_ambiguous_accuracy: accuracy,
        vis_pre_tanh_mean_abs: last.and_then(|r| r.vis_pre_tanh_mean_abs),
    };
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(&result_path, json + "\n")?;
    Ok(result)
}

/// Train every architecture × seed, decode, score and test significance.
///
/// Completed runs (finished `last.ckpt` plus `result.json`) are skipped and
/// interrupted ones resume. Runs are distributed over [`matrix_threads`]
/// workers; results keep the (arch, seed) order regardless of completion.
pub fn run_matrix(cfg: &MatrixConfig, data_dir: &Path, out_dir: &Path, threads: usize) -> Result<MatrixReport> {
    if cfg.archs.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("the matrix needs at least one architecture and one seed".into()));
    }
    let needs_features = cfg.archs.iter().any(|a| a.uses_features());
    let shared = TrainConfig {
        arch: if needs_features { Arch::Fa } else { Arch::Baseline },
        ..cfg.train.clone()
    };
    let prep = prepare(&shared, data_dir)?;
    let jobs: Vec<(Arch, u64)> = cfg.archs.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let slots: Vec<Mutex<Option<Result<RunResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(arch, seed)) = jobs.get(i) else { break };
                let run_cfg = TrainConfig {
                    arch,
                    seed,
                    ..cfg.train.clone()
                };
                let r = complete_run(&run_cfg, data_dir, &run_dir(out_dir, arch, seed), &prep);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let runs: Vec<RunResult> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every job ran"))
        .collect::<Result<_>>()?;

    let group = |f: &dyn Fn(&RunResult) -> Option<f64>| -> Vec<(String, Vec<f64>)> {
        cfg.archs
            .iter()
            .map(|&a| (a.name().to_string(), runs.iter().filter(|r| r.arch == a).filter_map(f).collect()))
            .collect()
    };
    let mut bleu = report_runs(&group(&|r| Some(r.test_bleu)))?;
    let ambiguous = if runs.iter().all(|r| r.test_ambiguous_accuracy.is_some()) {
        Some(report_runs(&group(&|r| r.test_ambiguous_accuracy.map(|a| 100.0 * a)))?)
    } else {
        None
    };

    // Pairwise tests on the pooled test outputs of all seeds.
    let refs = load_split(data_dir, "test")?.tgt;
    let pooled = |arch: Arch| -> Result<Vec<String>> {
        let mut out = Vec::new();
        for &s in &cfg.seeds {
            out.extend(read_lines(&hyp_path(&run_dir(out_dir, arch, s), "test"))?);
        }
        Ok(out)
    };
    let pooled_refs: Vec<String> = cfg.seeds.iter().flat_map(|_| refs.iter().cloned()).collect();
    for (i, &a) in cfg.archs.iter().enumerate() {
        for &b in &cfg.archs[i + 1..] {
            let mut rng = Rng::seed_from(cfg.sig_seed);
            let p = approx_randomization(&pooled(a)?, &pooled(b)?, &pooled_refs, cfg.trials, &mut rng)?;
            bleu.tests.push(PairTest {
                a: a.name().to_string(),
                b: b.name().to_string(),
                p_value: p,
            });
        }
    }
    let report = MatrixReport { runs, bleu, ambiguous };
    std::fs::write(out_dir.join("report.txt"), report.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(out_dir.join("report.json"), json + "\n")?;
    Ok(report)
}

impl std::fmt::Display for MatrixReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "test BLEU (mean ± std over seeds)")?;
        write!(f, "{}", self.bleu)?;
        if let Some(a) = &self.ambiguous {
            writeln!(f, "\nambiguous-token accuracy, %")?;
            write!(f, "{a}")?;
        }
        Ok(())
    }
}
