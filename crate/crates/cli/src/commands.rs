//! Command implementations behind the CLI surface.
//!
//! Exit-code contract: 0 success, 2 usage/input problems, 3 checkpoint
//! mismatch, 4 evaluation failure. Every command writes a run manifest as
//! soon as its inputs are resolved, before producing outputs.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use biasvec_core::arith::{self, ArithError, LayerFilter};
use biasvec_core::model::EncoderConfig;
use biasvec_core::seat::{
    self, format_float, EffectOptions, EffectResult, PermMode, SeatError, SeatTest, SweepAggregate,
    SweepRow,
};
use biasvec_core::train::{corpus_mlm_loss, train_mlm, Pooling, TrainConfig};
use biasvec_core::vocab::Vocab;
use biasvec_core::{BiasVector, TensorMap};

use crate::config::RunConfig;
use crate::datasets::{
    filter_by_bias, load_plain_corpus, load_seat, load_stereoset, realize_stereotype, BiasType,
};
use crate::manifest::RunManifest;
use crate::plot::sweep_svg;
use crate::provider::{attach_vocab, MinilmProvider};
use crate::store::{load_checkpoint, save_checkpoint, StoreError};
use crate::vecio::{is_zero_vector, load_vector, save_vector};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or unreadable/unparsable inputs — exit 2.
    #[error("{0}")]
    Usage(String),
    /// Checkpoint/vector incompatibility — exit 3.
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    /// Evaluation or training failure — exit 4.
    #[error("evaluation failure: {0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Eval(_) => 4,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ArithError> for CliError {
    fn from(e: ArithError) -> Self {
        CliError::Mismatch(e.to_string())
    }
}

impl From<crate::datasets::DatasetError> for CliError {
    fn from(e: crate::datasets::DatasetError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn seat_err(e: SeatError) -> CliError {
    match e {
        SeatError::Arith(inner) => CliError::Mismatch(inner.to_string()),
        other => CliError::Eval(other.to_string()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn write_manifest(m: &RunManifest, path: &Path) -> Result<(), CliError> {
    m.write(path).map_err(|e| CliError::Usage(format!("writing {}: {e}", path.display())))
}

fn digest_input(m: &mut RunManifest, role: &str, path: &Path) -> Result<(), CliError> {
    m.input_file(role, path)
        .map(|_| ())
        .map_err(|e| CliError::Usage(format!("reading {}: {e}", path.display())))
}

/// Worker cap from BIASVEC_THREADS (default 1; invalid values are a usage
/// error so typos do not silently serialize a long sweep).
fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("BIASVEC_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(CliError::Usage(format!("BIASVEC_THREADS: {e}"))),
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("BIASVEC_THREADS must be a positive integer, got {s:?}"))),
    }
}

/// Exclusive lock on an output directory; removed on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(
                format!("output directory {} is locked by another run (remove {} if stale)",
                    dir.display(), path.display()),
            )),
            Err(e) => Err(CliError::Usage(format!("locking {}: {e}", dir.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_self_contained(path: &Path) -> Result<(TensorMap, EncoderConfig, Vocab), CliError> {
    let params = load_checkpoint(path)?;
    let cfg = EncoderConfig::from_metadata(&params).ok_or_else(|| {
        CliError::Usage(format!("{}: checkpoint metadata lacks encoder dimensions", path.display()))
    })?;
    let vocab = crate::provider::vocab_from_metadata(&params).ok_or_else(|| {
        CliError::Usage(format!("{}: checkpoint metadata lacks a vocabulary", path.display()))
    })?;
    Ok((params, cfg, vocab))
}

fn train_and_save(
    init: &TensorMap,
    cfg: &EncoderConfig,
    tcfg: &TrainConfig,
    vocab: &Vocab,
    corpus: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let trained = train_mlm(init, cfg, tcfg, vocab, corpus)
        .map_err(|e| CliError::Eval(e.to_string()))?;
    let mut params = trained.params;
    attach_vocab(&mut params, vocab);
    save_checkpoint(&params, out)?;

    let mut log = String::from("step,lr,loss\n");
    for entry in &trained.log {
        log.push_str(&format!(
            "{},{},{}\n",
            entry.step,
            format_float(entry.lr),
            format_float(entry.loss)
        ));
    }
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".trainlog.csv");
    write_file(Path::new(&log_path), &log)
}

/// Train a fresh base model on a plain-text corpus (one sentence per
/// line). Companion to `train-bias`: it produces the θ_org that continual
/// training and vector construction start from.
pub fn cmd_train_base(
    corpus: &Path,
    config: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let rc = match config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    let sentences = load_plain_corpus(corpus)?;
    let vocab = Vocab::build(&sentences, rc.vocab_min_count())
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut manifest = RunManifest::new("train-base");
    digest_input(&mut manifest, "corpus", corpus)?;
    if let Some(p) = config {
        digest_input(&mut manifest, "config", p)?;
    }
    manifest.option("corpus", corpus.display());
    manifest.option("out", out.display());
    manifest.option("sentences", sentences.len());
    manifest.seeds = vec![seed];
    write_manifest(&manifest, &manifest_path(out))?;

    let cfg = rc.encoder(vocab.len());
    let tcfg = rc.train(seed).map_err(CliError::Usage)?;
    let init = cfg.init_params(seed).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("training base model on {} sentences (seed {seed})", sentences.len());
    train_and_save(&init, &cfg, &tcfg, &vocab, &sentences, out)
}

/// Continually train toward bias: realize stereotype sentences for the
/// selected categories and run MLM training from the base checkpoint (or
/// a fresh init when no base is given).
pub fn cmd_train_bias(
    corpus: &Path,
    bias_types: &[BiasType],
    config: Option<&Path>,
    seed: u64,
    base: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let rc = match config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    let records = load_stereoset(corpus)?;
    let selected = filter_by_bias(&records, bias_types);
    if selected.is_empty() {
        return Err(CliError::Usage(format!(
            "no records match bias types {:?} in {}",
            bias_types.iter().map(|t| t.name()).collect::<Vec<_>>(),
            corpus.display()
        )));
    }
    let sentences: Vec<String> = selected.iter().map(realize_stereotype).collect();

    let mut manifest = RunManifest::new("train-bias");
    digest_input(&mut manifest, "corpus", corpus)?;
    if let Some(p) = config {
        digest_input(&mut manifest, "config", p)?;
    }
    if let Some(p) = base {
        digest_input(&mut manifest, "base", p)?;
    }
    manifest.option("corpus", corpus.display());
    manifest.option(
        "bias-types",
        bias_types.iter().map(|t| t.name()).collect::<Vec<_>>().join(","),
    );
    manifest.option("out", out.display());
    manifest.option("sentences", sentences.len());
    manifest.seeds = vec![seed];
    write_manifest(&manifest, &manifest_path(out))?;

    println!("training on {} stereotype sentences (seed {seed})", sentences.len());

    let (init, cfg, vocab) = match base {
        Some(p) => load_self_contained(p)?,
        None => {
            let vocab = Vocab::build(&sentences, rc.vocab_min_count())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let cfg = rc.encoder(vocab.len());
            let init = cfg.init_params(seed).map_err(|e| CliError::Usage(e.to_string()))?;
            (init, cfg, vocab)
        }
    };
    let tcfg = rc.train(seed).map_err(CliError::Usage)?;
    train_and_save(&init, &cfg, &tcfg, &vocab, &sentences, out)
}

/// Build a bias vector as the filtered checkpoint delta.
pub fn cmd_make_vector(
    org: &Path,
    biased: &Path,
    exclude_patterns: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let theta_org = load_checkpoint(org)?;
    let theta_bias = load_checkpoint(biased)?;

    let mut manifest = RunManifest::new("make-vector");
    digest_input(&mut manifest, "org", org)?;
    digest_input(&mut manifest, "biased", biased)?;
    manifest.option("org", org.display());
    manifest.option("biased", biased.display());
    manifest.option("out", out.display());
    let filter = if exclude_patterns.is_empty() {
        manifest.option("exclude-pattern", "(default layer-norm set)");
        LayerFilter::default_layernorm()
    } else {
        manifest.option("exclude-pattern", exclude_patterns.join(","));
        LayerFilter::new(exclude_patterns)
    };
    write_manifest(&manifest, &manifest_path(out))?;

    let mut v = arith::diff(&theta_bias, &theta_org, &filter)?;
    // carry the biased model's training seed as provenance, if recorded
    v.seed = theta_bias.metadata().get("train.seed").and_then(|s| s.parse().ok());
    if is_zero_vector(&v) {
        eprintln!("warning: zero vector (the two checkpoints are identical on included tensors)");
    }
    for name in &v.excluded {
        println!("excluded: {name}");
    }
    save_vector(&v, out)?;
    Ok(())
}

/// Apply a stored bias vector with a scaling factor.
pub fn cmd_apply(org: &Path, vector: &Path, lambda: f64, out: &Path) -> Result<(), CliError> {
    if !lambda.is_finite() {
        return Err(CliError::Usage(format!("lambda must be finite, got {lambda}")));
    }
    let theta_org = load_checkpoint(org)?;
    let v = load_vector(vector)?;

    let mut manifest = RunManifest::new("apply");
    digest_input(&mut manifest, "org", org)?;
    digest_input(&mut manifest, "vector", vector)?;
    manifest.option("org", org.display());
    manifest.option("vector", vector.display());
    manifest.option("lambda", lambda);
    manifest.option("out", out.display());
    write_manifest(&manifest, &manifest_path(out))?;

    let theta = arith::apply(&theta_org, &v, lambda)?;
    save_checkpoint(&theta, out)?;
    Ok(())
}

pub fn effect_options(denom_mode: seat::DenomMode, ddof: seat::Ddof) -> EffectOptions {
    EffectOptions { denom_mode, ddof, perm: PermMode::Auto { samples: 10_000, seed: 0 } }
}

fn eval_csv(results: &[EffectResult]) -> String {
    let mut csv = String::from("test,d,p,sig\n");
    for r in results {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.test_name,
            format_float(r.d),
            format_float(r.p),
            if r.significant() { "*" } else { "" }
        ));
    }
    let mean_abs = results.iter().map(|r| r.d.abs()).sum::<f64>() / results.len().max(1) as f64;
    csv.push_str(&format!("mean_abs_d,{},,\n", format_float(mean_abs)));
    csv
}

/// Evaluate a model checkpoint on SEAT tests and write the report CSV.
pub fn cmd_eval_seat(
    model: &Path,
    tests_path: &Path,
    pooling: Pooling,
    options: &EffectOptions,
    out_csv: &Path,
) -> Result<(), CliError> {
    let tests = load_seat(tests_path)?;
    let params = load_checkpoint(model)?;

    let mut manifest = RunManifest::new("eval-seat");
    digest_input(&mut manifest, "model", model)?;
    digest_input(&mut manifest, "tests", tests_path)?;
    manifest.option("model", model.display());
    manifest.option("tests", tests_path.display());
    manifest.option("pooling", format!("{pooling:?}").to_lowercase());
    manifest.option("denom-mode", format!("{:?}", options.denom_mode).to_lowercase());
    manifest.option("out-csv", out_csv.display());
    write_manifest(&manifest, &manifest_path(out_csv))?;

    let mut provider =
        MinilmProvider::from_checkpoint(params, pooling).map_err(CliError::Mismatch)?;
    let results: Vec<EffectResult> = tests
        .iter()
        .map(|t| seat::run_test(&mut provider, t, options))
        .collect::<Result<_, _>>()
        .map_err(seat_err)?;
    write_file(out_csv, &eval_csv(&results))
}

struct SeedEval {
    seed: u64,
    loss: f64,
    results: Vec<EffectResult>,
}

fn eval_one_seed(
    theta_org: &TensorMap,
    seed: u64,
    vector: &BiasVector,
    lambda: f64,
    tests: &[SeatTest],
    options: &EffectOptions,
    pooling: Pooling,
    neutral: &[String],
) -> Result<SeedEval, CliError> {
    let theta = arith::apply(theta_org, vector, lambda)?;
    let mut provider =
        MinilmProvider::from_checkpoint(theta.clone(), pooling).map_err(CliError::Mismatch)?;
    let cfg = *provider.config();
    let loss = corpus_mlm_loss(&theta, &cfg, provider.vocab(), neutral, 0.15, 0)
        .map_err(|e| CliError::Eval(e.to_string()))?;
    let results: Vec<EffectResult> = tests
        .iter()
        .map(|t| seat::run_test(&mut provider, t, options))
        .collect::<Result<_, _>>()
        .map_err(seat_err)?;
    Ok(SeedEval { seed, loss, results })
}

fn sweep_row_line(row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        row.lambda,
        row.seed,
        row.test_name,
        format_float(row.d),
        format_float(row.p),
        format_float(row.neutral_loss)
    )
}

/// λ sweep over one or more seed-specific vectors: per-(λ, seed, test)
/// rows with the collapse-probe loss, per-λ aggregates, optional chart.
/// Row results are flushed after each λ so aborted runs keep partial data.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    org: &Path,
    vector_paths: &[PathBuf],
    lambdas: &[f64],
    seeds: Option<&[u64]>,
    tests_path: &Path,
    neutral_corpus: &Path,
    pooling: Pooling,
    options: &EffectOptions,
    out_dir: &Path,
    plot: bool,
) -> Result<(), CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Usage("at least one lambda is required".into()));
    }
    if vector_paths.is_empty() {
        return Err(CliError::Usage("at least one --vector is required".into()));
    }
    if let Some(s) = seeds {
        if s.len() != vector_paths.len() {
            return Err(CliError::Usage(format!(
                "{} seeds given for {} vectors; counts must match",
                s.len(),
                vector_paths.len()
            )));
        }
    }
    let threads = thread_cap()?;
    let _lock = DirLock::acquire(out_dir)?;

    let theta_org = load_checkpoint(org)?;
    let tests = load_seat(tests_path)?;
    let neutral = load_plain_corpus(neutral_corpus)?;
    let mut vectors: Vec<(u64, BiasVector)> = Vec::with_capacity(vector_paths.len());
    for (i, p) in vector_paths.iter().enumerate() {
        let v = load_vector(p)?;
        let seed = match seeds {
            Some(s) => s[i],
            None => v.seed.unwrap_or(i as u64),
        };
        vectors.push((seed, v));
    }

    let mut manifest = RunManifest::new("sweep");
    digest_input(&mut manifest, "org", org)?;
    digest_input(&mut manifest, "tests", tests_path)?;
    digest_input(&mut manifest, "neutral-corpus", neutral_corpus)?;
    for (i, p) in vector_paths.iter().enumerate() {
        digest_input(&mut manifest, &format!("vector[{i}]"), p)?;
    }
    manifest.option("org", org.display());
    manifest.option("lambdas", lambdas.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    manifest.option("tests", tests_path.display());
    manifest.option("neutral-corpus", neutral_corpus.display());
    manifest.option("out-dir", out_dir.display());
    manifest.option("pooling", format!("{pooling:?}").to_lowercase());
    manifest.option("threads", threads);
    manifest.seeds = vectors.iter().map(|(s, _)| *s).collect();
    write_manifest(&manifest, &out_dir.join("manifest.json"))?;

    // unmodified-model baseline for the chart and the summary
    let base_eval = eval_one_seed(
        &theta_org,
        0,
        &vectors[0].1,
        0.0,
        &tests,
        options,
        pooling,
        &neutral,
    )?;
    let baseline_mean_abs = base_eval.results.iter().map(|r| r.d.abs()).sum::<f64>()
        / base_eval.results.len().max(1) as f64;

    let rows_path = out_dir.join("rows.csv");
    let mut rows_file = File::create(&rows_path)
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", rows_path.display())))?;
    rows_file
        .write_all(b"lambda,seed,test,d,p,neutral_loss\n")
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", rows_path.display())))?;

    let mut aggregates: Vec<SweepAggregate> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let evals = run_seeds_parallel(
            &theta_org, &vectors, lambda, &tests, options, pooling, &neutral, threads,
        )?;

        let mut per_seed_means = Vec::with_capacity(evals.len());
        let mut loss_sum = 0.0;
        let mut chunk = String::new();
        for eval in &evals {
            loss_sum += eval.loss;
            let mut abs_sum = 0.0;
            for r in &eval.results {
                abs_sum += r.d.abs();
                chunk.push_str(&sweep_row_line(&SweepRow {
                    lambda,
                    seed: eval.seed,
                    test_name: r.test_name.clone(),
                    d: r.d,
                    p: r.p,
                    neutral_loss: eval.loss,
                }));
            }
            per_seed_means.push(abs_sum / eval.results.len().max(1) as f64);
        }
        rows_file
            .write_all(chunk.as_bytes())
            .and_then(|_| rows_file.flush())
            .map_err(|e| CliError::Usage(format!("writing {}: {e}", rows_path.display())))?;

        let n = per_seed_means.len();
        let mean = per_seed_means.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n < 2 {
            0.0
        } else {
            (per_seed_means.iter().map(|&m| (m - mean) * (m - mean)).sum::<f64>()
                / (n as f64 - 1.0))
                .sqrt()
        };
        aggregates.push(SweepAggregate {
            lambda,
            mean_abs_d: mean,
            std_over_seeds: std,
            mean_neutral_loss: loss_sum / n.max(1) as f64,
        });
    }

    let mut summary = String::from("lambda,mean_abs_d,std_over_seeds,mean_neutral_loss\n");
    summary.push_str(&format!(
        "baseline,{},,{}\n",
        format_float(baseline_mean_abs),
        format_float(base_eval.loss)
    ));
    for a in &aggregates {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            a.lambda,
            format_float(a.mean_abs_d),
            format_float(a.std_over_seeds),
            format_float(a.mean_neutral_loss)
        ));
    }
    write_file(&out_dir.join("summary.csv"), &summary)?;

    if plot {
        write_file(&out_dir.join("sweep.svg"), &sweep_svg(&aggregates, baseline_mean_abs))?;
    }
    Ok(())
}

/// Evaluate every seed's vector at one λ, fanning out over up to
/// `threads` workers; output order is by vector index regardless of
/// scheduling.
#[allow(clippy::too_many_arguments)]
fn run_seeds_parallel(
    theta_org: &TensorMap,
    vectors: &[(u64, BiasVector)],
    lambda: f64,
    tests: &[SeatTest],
    options: &EffectOptions,
    pooling: Pooling,
    neutral: &[String],
    threads: usize,
) -> Result<Vec<SeedEval>, CliError> {
    if threads <= 1 || vectors.len() <= 1 {
        return vectors
            .iter()
            .map(|(seed, v)| {
                eval_one_seed(theta_org, *seed, v, lambda, tests, options, pooling, neutral)
            })
            .collect();
    }
    let chunk_size = vectors.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<SeedEval, CliError>>> = Vec::new();
    slots.resize_with(vectors.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_idx, chunk) in vectors.chunks(chunk_size).enumerate() {
            let start = chunk_idx * chunk_size;
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(chunk.len());
                for (offset, (seed, v)) in chunk.iter().enumerate() {
                    out.push((
                        start + offset,
                        eval_one_seed(
                            theta_org, *seed, v, lambda, tests, options, pooling, neutral,
                        ),
                    ));
                }
                out
            }));
        }
        for handle in handles {
            for (idx, result) in handle.join().expect("sweep worker panicked") {
                slots[idx] = Some(result);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use biasvec_core::seat::{Ddof, DenomMode, PermMethod};

    #[test]
    fn eval_csv_formats_rows_and_summary() {
        let results = vec![
            EffectResult {
                test_name: "t1".into(),
                d: -0.5,
                p: 0.001,
                n_x: 2,
                n_y: 2,
                n_a: 2,
                n_b: 2,
                method: PermMethod::Exact,
            },
            EffectResult {
                test_name: "t2".into(),
                d: 1.5,
                p: 0.5,
                n_x: 2,
                n_y: 2,
                n_a: 2,
                n_b: 2,
                method: PermMethod::Exact,
            },
        ];
        let csv = eval_csv(&results);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "test,d,p,sig");
        assert!(lines[1].starts_with("t1,-0.5000000000,0.0010000000,*"));
        assert!(lines[2].starts_with("t2,1.5000000000,0.5000000000,"));
        assert_eq!(lines[3], "mean_abs_d,1.0000000000,,");
    }

    #[test]
    fn effect_options_default_to_auto_permutations() {
        let o = effect_options(DenomMode::Standard, Ddof::One);
        assert!(matches!(o.perm, PermMode::Auto { samples: 10_000, seed: 0 }));
    }

    #[test]
    fn dir_lock_excludes_second_acquisition() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
