//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Arguments that are criterion numbers select a
//! subset, e.g. `cargo test -p mmt-cli --test acceptance -- 1 2 10`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mmt_core::data::bpe::word_counts;
use mmt_core::data::corpus::read_lines;
use mmt_core::data::{generate, BpeModel, FeatureStore, ParallelCorpus, SynthSpec, Vocabulary};
use mmt_core::decode::toy::RandomTreeModel;
use mmt_core::decode::{beam_search, DecodeConfig};
use mmt_core::eval::{approx_randomization, bleu_corpus};
use mmt_core::experiment::{
    load_features, load_split, matrix_threads, run_matrix, split_paths, translate, write_synth, DecodeOptions, MatrixConfig,
    MatrixReport, Translator,
};
use mmt_core::model::{Arch, Batch, Model, ModelConfig, ParamSet, ParamVars, SourceBatch, TargetBatch};
use mmt_core::tensor::gradcheck::check_inputs;
use mmt_core::train::{init_params, Checkpoint, TrainConfig, BEST_CHECKPOINT, LAST_CHECKPOINT};
use mmt_core::{Rng, Tensor};

type Check = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Working directory for every check, removed when `main` returns.
fn scratch() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("scratch directory").keep())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Check {
    ensure(
        elapsed <= limit,
        format!("{detail}; {:.1}s of {:.0}s allowed", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

// 1. Gradients

fn random_params(model: &Model, seed: u64) -> ParamSet<f64> {
    let mut rng = Rng::seed_from(seed);
    ParamSet::from_specs(model.specs(), |s| {
        let n = s.shape.iter().product();
        Tensor::new(&s.shape, (0..n).map(|_| 0.5 * rng.normal()).collect()).unwrap()
    })
    .unwrap()
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for arch in Arch::ALL {
        let cfg = ModelConfig {
            emb_dim: 3,
            hidden: 4,
            feat_channels: 5,
            dropout_emb: 0.0,
            dropout_enc: 0.0,
            dropout_out: 0.0,
            ..ModelConfig::new(arch, 7, 6)
        };
        let model = Model::new(cfg).map_err(fail)?;
        let params = random_params(&model, 40);
        let mut rng = Rng::seed_from(41);
        let features = arch.uses_features().then(|| {
            Tensor::new(&[2, 4, 5], (0..40).map(|_| rng.normal()).collect()).unwrap()
        });
        let batch = Batch {
            src: SourceBatch::from_sentences(&[vec![3, 4, 5, 6], vec![5, 6]], 0),
            tgt: TargetBatch::from_sentences(&[vec![3, 4, 5], vec![4]], 1, 2, 0),
            features,
        };
        let inputs: Vec<Tensor<f64>> = params.iter().map(|p| p.value.as_ref().clone()).collect();
        let report = check_inputs(
            &inputs,
            |tape, v| {
                let vars = model.resolve(ParamVars::new(v.to_vec()))?;
                Ok(model.loss(tape, &vars, &batch, &mut Rng::seed_from(0), false)?.loss)
            },
            1e-6,
            None,
        )
        .map_err(fail)?;
        worst = worst.max(report.max_error);
        parts.push(format!("{arch} {} coords err {:.1e}", report.checked, report.max_error));
    }
    let detail = parts.join(", ");
    if worst >= 1e-3 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(120), detail)
}

// 2. BPE

fn micro_corpus(rng: &mut Rng) -> Vec<String> {
    let alphabet = ['a', 'b', 'c', 'd'];
    let words = 5 + rng.below(46);
    let mut lines = Vec::new();
    let mut line = Vec::new();
    for _ in 0..words {
        let w: String = (0..1 + rng.below(6)).map(|_| alphabet[rng.below(4)]).collect();
        line.push(w);
        if rng.below(6) == 0 {
            lines.push(line.join(" "));
            line.clear();
        }
    }
    if !line.is_empty() {
        lines.push(line.join(" "));
    }
    lines
}

fn bpe() -> Check {
    let start = Instant::now();
    let mut rng = Rng::seed_from(77);
    let mut words = 0;
    for case in 0..20 {
        let lines = micro_corpus(&mut rng);
        let n = 1 + rng.below(30);
        let model = BpeModel::learn(&word_counts(lines.iter().map(String::as_str)), n).map_err(fail)?;
        let reference = oracles::bpe::learn(&lines, n);
        if model.merges() != &reference[..] {
            return Err(format!("corpus {case}: merge tables differ"));
        }
        for w in lines.iter().flat_map(|l| l.split_whitespace()) {
            if model.segment_word(w) != oracles::bpe::segment(&reference, w) {
                return Err(format!("corpus {case}: `{w}` segmented differently"));
            }
            words += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10), format!("20 corpora, {words} words"))
}

// 3. Beam search

fn beam() -> Check {
    let start = Instant::now();
    let mut searches = 0;
    for i in 0..50 {
        let mut rng = Rng::seed_from(5000 + i);
        let vocab = 3 + rng.below(3);
        let max_len = 1 + rng.below(4);
        let model = RandomTreeModel {
            vocab,
            sources: 2,
            seed: rng.next_u64(),
            scale: 1.0,
        };
        let eos = rng.below(vocab);
        let bos = rng.below(vocab);
        let cfg = DecodeConfig {
            bos,
            eos,
            max_len,
            beam: 4,
            length_norm: 0.0,
        };
        let found = beam_search(&model, &cfg).map_err(fail)?;
        for (row, h) in found.iter().enumerate() {
            let (tokens, score) = oracles::beam::best_finished(vocab, eos, bos, max_len, 0.0, &|p| model.distribution(row, p));
            if !h.finished || (h.logprob - score).abs() > 1e-9 {
                return Err(format!("model {i} row {row}: beam {:?} {:.6} vs optimum {tokens:?} {score:.6}", h.tokens, h.logprob));
            }
            searches += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(30), format!("{searches} searches on 50 models"))
}

// Training experiments

fn recipe() -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        dropout_emb: 0.0,
        dropout_enc: 0.0,
        dropout_out: 0.0,
        l2_factor: 0.0,
        max_epochs: 12,
        ..TrainConfig::default()
    }
}

fn synth(name: &str, spec: &SynthSpec) -> Result<PathBuf, String> {
    let dir = scratch().join(name);
    write_synth(&generate(spec).map_err(fail)?, &dir).map_err(fail)?;
    Ok(dir)
}

fn matrix(data: &Path, out: &str, train: TrainConfig, archs: &[Arch]) -> Result<MatrixReport, String> {
    let cfg = MatrixConfig {
        archs: archs.to_vec(),
        ..MatrixConfig::new(train)
    };
    run_matrix(&cfg, data, &scratch().join(out), matrix_threads()).map_err(fail)
}

fn runs_of(report: &MatrixReport, arch: Arch) -> Vec<&mmt_core::experiment::RunResult> {
    report.runs.iter().filter(|r| r.arch == arch).collect()
}

// 4. Feature normalization

fn normalization() -> Check {
    let start = Instant::now();
    let data = synth(
        "scaled",
        &SynthSpec {
            feature_scale: 100.0,
            ..SynthSpec::default()
        },
    )?;
    let run = |normalize: bool, out: &str| {
        matrix(&data, out, TrainConfig { arch: Arch::Ma, normalize_features: normalize, ..recipe() }, &[Arch::Ma])
    };
    let norm = run(true, "scaled-norm")?;
    let raw = run(false, "scaled-raw")?;
    let bleu = |r: &MatrixReport| mean(r.runs.iter().map(|x| x.dev_bleu));
    let pre = |r: &MatrixReport| mean(r.runs.iter().map(|x| x.vis_pre_tanh_mean_abs.unwrap_or(f64::NAN)));
    let (bn, br, pn, pr) = (bleu(&norm), bleu(&raw), pre(&norm), pre(&raw));
    let detail = format!("dev BLEU normalized {bn:.2} vs raw {br:.2}; mean |pre-tanh| normalized {pn:.2}, raw {pr:.2}");
    if !(bn >= br && pr > 3.0 && pn < 2.0) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(45 * 60), detail)
}

// 5. Grounding, and the runs reused by 7

fn default_task() -> Result<&'static (PathBuf, MatrixReport), String> {
    static RUNS: OnceLock<Result<(PathBuf, MatrixReport), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let data = synth("default", &SynthSpec::default())?;
        let report = matrix(&data, "default-runs", recipe(), &[Arch::Baseline, Arch::Fa])?;
        Ok((data, report))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn grounding() -> Check {
    let start = Instant::now();
    let (_, report) = default_task()?;
    let acc = |arch| mean(runs_of(report, arch).iter().map(|r| r.test_ambiguous_accuracy.unwrap_or(f64::NAN)));
    let (base, fa) = (acc(Arch::Baseline), acc(Arch::Fa));
    let detail = format!("color accuracy baseline {:.1}%, fa {:.1}%", 100.0 * base, 100.0 * fa);
    if !(base <= 0.30 && fa >= 0.80) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(35 * 60), detail)
}

// 6. Filtered vs multimodal attention with heavy clutter

fn pooled_dev(report: &MatrixReport, arch: Arch) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for r in runs_of(report, arch) {
        out.extend(read_lines(&r.dir.join("dev.hyp")).map_err(fail)?);
    }
    Ok(out)
}

fn clutter() -> Check {
    let data = synth(
        "clutter",
        &SynthSpec {
            distractors: 8,
            ..SynthSpec::default()
        },
    )?;
    let train = TrainConfig {
        max_epochs: CLUTTER_EPOCHS,
        patience: CLUTTER_EPOCHS,
        ..recipe()
    };
    let report = matrix(&data, "clutter-runs", train, &Arch::ALL)?;
    let dev = |arch| mean(runs_of(&report, arch).iter().map(|r| r.dev_bleu));
    let (base, ma, fa) = (dev(Arch::Baseline), dev(Arch::Ma), dev(Arch::Fa));
    let mut detail = format!("dev BLEU baseline {base:.2}, ma {ma:.2}, fa {fa:.2}");
    let mut ok = fa >= ma;
    if (fa - base).abs() > 1.0 {
        let refs = load_split(&data, "dev").map_err(fail)?.tgt;
        let pooled_refs: Vec<String> = (0..4).flat_map(|_| refs.iter().cloned()).collect();
        let p = approx_randomization(
            &pooled_dev(&report, Arch::Fa)?,
            &pooled_dev(&report, Arch::Baseline)?,
            &pooled_refs,
            1000,
            &mut Rng::seed_from(12345),
        )
        .map_err(fail)?;
        detail.push_str(&format!("; fa vs baseline p = {p:.4}"));
        ok &= p <= 0.05;
    }
    ensure(ok, detail)
}

const CLUTTER_EPOCHS: usize = 50;

// 7. Ensembles

fn ensemble() -> Check {
    let (data, report) = default_task()?;
    let fa = runs_of(report, Arch::Fa);
    let members: Vec<Translator> = fa
        .iter()
        .map(|r| Translator::load(&r.dir.join(BEST_CHECKPOINT)))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let paths = split_paths(data, "test");
    let raw = ParallelCorpus::load(&paths.src, &paths.tgt).map_err(fail)?;
    let refs = load_split(data, "test").map_err(fail)?.tgt;
    let cfg = &members[0].train;
    let features = load_features(&paths.features, &TrainConfig { normalize_features: false, ..cfg.clone() }).map_err(fail)?;
    let hyps = translate(&members, &raw.src, Some(&features), &DecodeOptions::from_config(cfg)).map_err(fail)?;
    let joint = bleu_corpus(&hyps, &refs).map_err(fail)?;
    let single = mean(fa.iter().map(|r| r.test_bleu));
    ensure(joint >= single, format!("fa test BLEU ensemble {joint:.2} vs mean single {single:.2}"))
}

// 8. Determinism through the command-line tool

fn mmt(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!("mmt {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn determinism() -> Check {
    let root = scratch().join("determinism");
    let data = root.join("data");
    let sizes = ["--set", "train_size=300", "--set", "dev_size=40", "--set", "test_size=40"];
    let mut gen = vec!["gen-synth", "--out", s(&data), "--seed", "9"];
    gen.extend(sizes);
    mmt(&gen)?;
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run = root.join(name);
        mmt(&[
            "train", "--data", s(&data), "--out", s(&run), "--arch", "fa", "--seed", "5", "--set", "max_epochs=3",
        ])?;
        let hyp = root.join(format!("{name}.hyp"));
        mmt(&[
            "translate", "--model", s(&run.join(BEST_CHECKPOINT)), "--features", s(&data.join("test.feat")),
            "--input", s(&data.join("test.en")), "--output", s(&hyp),
        ])?;
        outputs.push(run);
    }
    for f in [LAST_CHECKPOINT, BEST_CHECKPOINT] {
        let a = std::fs::read(outputs[0].join(f)).map_err(fail)?;
        let b = std::fs::read(outputs[1].join(f)).map_err(fail)?;
        if a != b {
            return Err(format!("{f} differs between identical runs"));
        }
    }
    let a = std::fs::read(root.join("a.hyp")).map_err(fail)?;
    let b = std::fs::read(root.join("b.hyp")).map_err(fail)?;
    if a != b {
        return Err("test translations differ between identical runs".into());
    }
    Ok("two train runs gave bit-identical checkpoints and translations".into())
}

// 9. File formats

fn round_trip<T>(what: &str, path: &Path, load: impl Fn(&Path) -> mmt_core::Result<T>, save: impl Fn(&T, &Path) -> mmt_core::Result<()>) -> Result<(), String> {
    let original = std::fs::read(path).map_err(fail)?;
    let copy = path.with_extension("copy");
    save(&load(path).map_err(fail)?, &copy).map_err(fail)?;
    let again = path.with_extension("again");
    save(&load(&copy).map_err(fail)?, &again).map_err(fail)?;
    let (a, b) = (std::fs::read(&copy).map_err(fail)?, std::fs::read(&again).map_err(fail)?);
    if a != original || b != original {
        return Err(format!("{what} changed on save→load→save"));
    }
    Ok(())
}

fn corrupted_is_rejected(what: &str, path: &Path, load: impl Fn(&Path) -> mmt_core::Result<()>) -> Result<(), String> {
    let mut bytes = std::fs::read(path).map_err(fail)?;
    let at = bytes.len() / 2;
    bytes[at] ^= 0x10;
    let bad = path.with_extension("corrupt");
    std::fs::write(&bad, bytes).map_err(fail)?;
    match load(&bad) {
        Err(_) => Ok(()),
        Ok(()) => Err(format!("{what} with a flipped bit loaded without error")),
    }
}

fn formats() -> Check {
    let root = scratch().join("formats");
    let spec = SynthSpec {
        train_size: 200,
        dev_size: 20,
        test_size: 20,
        ..SynthSpec::default()
    };
    write_synth(&generate(&spec).map_err(fail)?, &root).map_err(fail)?;
    let feat = root.join("train.feat");
    round_trip("feature file", &feat, |p| FeatureStore::load(p, false), FeatureStore::save)?;
    corrupted_is_rejected("feature file", &feat, |p| FeatureStore::load(p, false).map(drop))?;

    let text = load_split(&root, "train").map_err(fail)?;
    let lines: Vec<&str> = text.src.iter().chain(&text.tgt).map(String::as_str).collect();
    let bpe = BpeModel::learn(&word_counts(lines.iter().copied()), 50).map_err(fail)?;
    let codes = root.join("bpe.codes");
    bpe.save(&codes).map_err(fail)?;
    round_trip("BPE model", &codes, BpeModel::load, BpeModel::save)?;

    let vocab = Vocabulary::build(text.tgt.iter().map(|l| bpe.apply(l)).collect::<Vec<_>>().iter().map(String::as_str));
    let vpath = root.join("vocab.tgt");
    vocab.save(&vpath).map_err(fail)?;
    round_trip("vocabulary", &vpath, Vocabulary::load, Vocabulary::save)?;

    let cfg = TrainConfig { arch: Arch::Fa, ..TrainConfig::default() };
    let mc = cfg.model_config(30, vocab.len(), spec.channels);
    let trainer = mmt_core::train::Trainer::new(cfg, mc).map_err(fail)?;
    let ckpt = root.join("model.ckpt");
    trainer.checkpoint().save(&ckpt).map_err(fail)?;
    round_trip("checkpoint", &ckpt, Checkpoint::load, Checkpoint::save)?;
    corrupted_is_rejected("checkpoint", &ckpt, |p| Checkpoint::load(p).map(drop))?;
    Ok("features, BPE codes, vocabulary and checkpoint byte-identical; corrupted features and checkpoint rejected".into())
}

// 10. Full-scale shapes

fn shapes() -> Check {
    let (vocab, channels) = (10_000, 2048);
    let config = |arch| ModelConfig {
        emb_dim: 128,
        hidden: 256,
        feat_channels: channels,
        ..ModelConfig::new(arch, vocab, vocab)
    };
    let counts: Vec<usize> = Arch::ALL
        .iter()
        .map(|&a| Model::new(config(a)).map(|m| m.param_count()))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let model = Model::new(config(Arch::Fa)).map_err(fail)?;
    let params = init_params(&model, &mut Rng::seed_from(1));
    let mut rng = Rng::seed_from(2);
    for w in [7, 14] {
        let p = w * w;
        let features = Tensor::new(&[1, p, channels], (0..p * channels).map(|_| rng.uniform() as f32).collect()).map_err(fail)?;
        let src = SourceBatch::from_sentences(&[vec![4, 5, 6, 7, 8]], 0);
        let enc = model.encode(&params, &src, Some(&features)).map_err(fail)?;
        let (logits, h2) = model.decode_step(&params, &enc, &[0], &Tensor::zeros(&[1, 256]), &[1]).map_err(fail)?;
        if logits.shape() != [1, vocab] || h2.shape() != [1, 256] || !logits.is_finite() {
            return Err(format!("w = {w}: logits {:?}, state {:?}", logits.shape(), h2.shape()));
        }
    }
    let millions: Vec<String> = counts.iter().map(|c| format!("{:.2}M", *c as f64 / 1e6)).collect();
    ensure(
        counts[0] < counts[1] && counts[1] < counts[2],
        format!("fa decodes at w = 7 and 14; parameters baseline/ma/fa {}", millions.join("/")),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient check", gradients),
        (2, "bpe oracle", bpe),
        (3, "beam oracle", beam),
        (4, "feature normalization", normalization),
        (5, "grounding", grounding),
        (6, "fa vs ma under clutter", clutter),
        (7, "ensemble", ensemble),
        (8, "determinism", determinism),
        (9, "format round-trips", formats),
        (10, "full-scale shapes", shapes),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    let _ = std::fs::remove_dir_all(scratch());
    if failed > 0 {
        std::process::exit(1);
    }
}
