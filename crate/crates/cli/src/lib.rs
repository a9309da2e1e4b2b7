//! Subcommand dispatch for the `titans` binary. Every run resolves its
//! config (file, then flag overrides), echoes the resolved document into
//! the output directory and emits metrics as JSONL and CSV, so any
//! result row can be reproduced from its directory alone.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use titans_core::io::{emit_metrics, Checkpoint, ExperimentConfig, SplitMode};
use titans_core::model::{ModelConfig, ModelParams};
use titans_core::numerics::Rng;
use titans_core::tasks::ablation::run_ablation_matrix;
use titans_core::tasks::corpus::{read_corpus, ttl_split};
use titans_core::tasks::forecast::run_forecasting;
use titans_core::tasks::gradcheck::run_component_gradchecks;
use titans_core::tasks::recall::run_recall;
use titans_core::tasks::record::RunRecord;
use titans_core::tasks::sweeps::run_sweeps;
use titans_core::tasks::train::{evaluate_mlm, train_mlm_model, MlmTrainSet};
use titans_core::tasks::ttl::run_test_time_learning;
use titans_core::tasks::{prepare_mlm_docs, PreparedMlm};
use titans_core::{Error, Result};

#[derive(Parser)]
#[command(name = "titans", version, about = "Chunked attention with test-time neural memory: training and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the corpus and write a checkpoint per seed.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(CommonArgs),
    /// Run the five-variant ablation matrix.
    Ablate(CommonArgs),
    /// Sequence-length and chunk-size sweeps.
    Sweep(CommonArgs),
    /// Memory-only forecasting on an ETT-format CSV.
    Forecast(CommonArgs),
    /// Test-time learning: stream the test split with a frozen backbone.
    Ttl(CommonArgs),
    /// Synthetic cross-chunk recall experiment.
    Recall(CommonArgs),
    /// Finite-difference checks of every differentiable component.
    Gradcheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model variant override (mac | lmm | baseline).
    #[arg(long)]
    variant: Option<String>,
    /// Override any config key, e.g. --set model.chunk_size=64.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Parse and run; returns the process exit status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text and picks exit 0 for
            // --help/--version, 2 for usage errors
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = match &cli.command {
        Command::Train(a) => ("train", a),
        Command::Eval(a) => ("eval", a),
        Command::Ablate(a) => ("ablate", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Forecast(a) => ("forecast", a),
        Command::Ttl(a) => ("ttl", a),
        Command::Recall(a) => ("recall", a),
        Command::Gradcheck(a) => ("gradcheck", a),
    };
    match run(name, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(name: &str, args: &CommonArgs) -> Result<i32> {
    let config = resolve_config(args)?;
    let hash = config.hash()?;
    let out = Path::new(&config.run.out).to_path_buf();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), config.resolved_toml()?)?;

    match name {
        "train" => cmd_train(&config, &hash, &out),
        "eval" => cmd_eval(&config, &hash, &out),
        "ablate" => cmd_ablate(&config, &hash, &out),
        "sweep" => cmd_sweep(&config, &hash, &out),
        "forecast" => cmd_forecast(&config, &hash, &out),
        "ttl" => cmd_ttl(&config, &hash, &out),
        "recall" => cmd_recall(&config, &hash, &out),
        "gradcheck" => cmd_gradcheck(&config),
        _ => unreachable!("subcommands are exhaustive"),
    }
}

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(seed) = args.seed {
        overrides.push(("run.seeds".into(), format!("[{seed}]")));
    }
    if let Some(out) = &args.out {
        overrides.push(("run.out".into(), out.display().to_string()));
    }
    if let Some(variant) = &args.variant {
        overrides.push(("model.variant".into(), variant.clone()));
    }
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
        })?;
        overrides.push((key.trim().to_string(), value.trim().to_string()));
    }
    if !overrides.is_empty() {
        config = config.with_overrides(&overrides)?;
    }
    Ok(config)
}

fn load_docs(config: &ExperimentConfig) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(&config.data.corpus).map_err(|e| {
        Error::Data(format!("cannot read corpus {}: {e}", config.data.corpus))
    })?;
    read_corpus(&text)
}

/// Corpus split and masking for the configured split mode.
fn prepared_splits(config: &ExperimentConfig, docs: &[String], seed: u64) -> Result<PreparedMlm> {
    match config.data.split {
        SplitMode::Frac => {
            let (train, eval) = titans_core::tasks::corpus::frac_split(docs, config.mlm.train_frac);
            prepare_mlm_docs(train, eval, &config.mlm, seed)
        }
        SplitMode::Ttl => {
            let (train, val, _test) = ttl_split(docs);
            prepare_mlm_docs(train, val, &config.mlm, seed)
        }
    }
}

fn runtime_model_config(config: &ExperimentConfig, vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size,
        seed,
        ..config.model.clone()
    }
}

fn checkpoint_path(config: &ExperimentConfig, out: &Path, seed: u64) -> PathBuf {
    if config.run.checkpoint.is_empty() {
        out.join(format!("checkpoint-{seed}.ttns"))
    } else {
        PathBuf::from(&config.run.checkpoint)
    }
}

fn finish(records: Vec<RunRecord>, out: &Path) -> Result<i32> {
    for r in &records {
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        println!(
            "{} {} seed={} epoch={} {}",
            r.task,
            r.variant,
            r.seed,
            r.epoch,
            metrics.join(" ")
        );
    }
    emit_metrics(&records, out)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(0)
}

fn cmd_train(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let docs = load_docs(config)?;
    let mut records = Vec::new();
    for &seed in &config.run.seeds {
        let data = prepared_splits(config, &docs, seed)?;
        let cfg = runtime_model_config(config, data.vocab_size, seed);
        let mut rng = Rng::new(seed);
        let mut params = ModelParams::init(&cfg, &mut rng)?;
        let losses = train_mlm_model(
            &cfg,
            &config.optimizer,
            &mut params,
            MlmTrainSet::Remask {
                sequences: &data.train_sequences,
                mask_prob: config.mlm.mask_prob,
            },
            &mut rng,
        )?;
        for (epoch, loss) in losses.iter().enumerate() {
            records.push(
                RunRecord::new("mlm-train", "train", seed, hash, epoch)
                    .with_metric("train_loss", *loss)?,
            );
        }
        let (accuracy, f1) = evaluate_mlm(&cfg, &params, &data.eval)?;
        records.push(
            RunRecord::new("mlm-train", "eval", seed, hash, config.optimizer.epochs)
                .with_metric("accuracy", accuracy)?
                .with_metric("f1", f1)?,
        );
        let ck = Checkpoint {
            config_hash: hash.to_string(),
            rng_seed: seed,
            rng_word_pos: rng.word_pos(),
            params: params.to_map(),
            memory: params.fresh_states()?,
        };
        let path = checkpoint_path(config, out, seed);
        ck.save(&path)?;
        println!("checkpoint saved to {}", path.display());
    }
    finish(records, out)
}

fn load_model_from_checkpoint(
    config: &ExperimentConfig,
    hash: &str,
    out: &Path,
    seed: u64,
) -> Result<(ModelConfig, ModelParams)> {
    let path = checkpoint_path(config, out, seed);
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing checkpoint {}; run train first or set run.checkpoint",
            path.display()
        )));
    }
    let ck = Checkpoint::load(&path)?;
    ck.verify_hash(hash, config.run.allow_hash_mismatch)?;
    let docs = load_docs(config)?;
    let data = prepared_splits(config, &docs, seed)?;
    let cfg = runtime_model_config(config, data.vocab_size, seed);
    let params = ModelParams::from_map(&cfg, &ck.params)?;
    Ok((cfg, params))
}

fn cmd_eval(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let docs = load_docs(config)?;
    let mut records = Vec::new();
    for &seed in &config.run.seeds {
        let (cfg, params) = load_model_from_checkpoint(config, hash, out, seed)?;
        let data = prepared_splits(config, &docs, seed)?;
        let (accuracy, f1) = evaluate_mlm(&cfg, &params, &data.eval)?;
        records.push(
            RunRecord::new("mlm-eval", "eval", seed, hash, 0)
                .with_metric("accuracy", accuracy)?
                .with_metric("f1", f1)?,
        );
    }
    finish(records, out)
}

fn cmd_ablate(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let docs = load_docs(config)?;
    let records = run_ablation_matrix(
        &config.model,
        &config.optimizer,
        &config.mlm,
        &docs,
        &config.run.seeds,
        hash,
    )?;
    finish(records, out)
}

fn cmd_sweep(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let docs = load_docs(config)?;
    let records = run_sweeps(
        &config.model,
        &config.optimizer,
        &config.mlm,
        &docs,
        &config.run.lengths,
        &config.run.chunk_sizes,
        &config.run.seeds,
        hash,
    )?;
    finish(records, out)
}

fn cmd_forecast(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let csv_text = std::fs::read_to_string(&config.data.ett_csv).map_err(|e| {
        Error::Data(format!(
            "cannot read series csv {}: {e} (datasets are never downloaded automatically)",
            config.data.ett_csv
        ))
    })?;
    let mut records = Vec::new();
    for &seed in &config.run.seeds {
        let outcome = run_forecasting(
            &config.model,
            &config.optimizer,
            &config.forecast,
            &csv_text,
            seed,
            hash,
        )?;
        println!(
            "forecast seed={seed}: mse={:.4} mae={:.4} (naive mse={:.4} mae={:.4})",
            outcome.mse, outcome.mae, outcome.naive_mse, outcome.naive_mae
        );
        records.extend(outcome.records);
    }
    finish(records, out)
}

fn cmd_ttl(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let docs = load_docs(config)?;
    let mut records = Vec::new();
    for &seed in &config.run.seeds {
        let (cfg, params) = load_model_from_checkpoint(config, hash, out, seed)?;
        let before = params.to_map();
        let ttl_records = run_test_time_learning(
            &cfg,
            &params,
            &config.mlm,
            &docs,
            config.run.ttl_passes,
            seed,
            hash,
        )?;
        let after = params.to_map();
        let identical = before.len() == after.len()
            && before.iter().all(|(k, m)| after.get(k).map(|n| n.data()) == Some(m.data()));
        println!(
            "ttl seed={seed}: backbone bit-identical after {} passes: {identical}",
            ttl_records.len()
        );
        if !identical {
            return Err(Error::Data("backbone weights drifted during ttl".into()));
        }
        records.extend(ttl_records);
    }
    finish(records, out)
}

fn cmd_recall(config: &ExperimentConfig, hash: &str, out: &Path) -> Result<i32> {
    let records = run_recall(
        &config.model,
        &config.optimizer,
        &config.recall,
        &config.run.seeds,
        hash,
    )?;
    finish(records, out)
}

fn cmd_gradcheck(config: &ExperimentConfig) -> Result<i32> {
    let seed = config.run.seeds.first().copied().unwrap_or(0);
    let reports = run_component_gradchecks(seed)?;
    let mut failed = false;
    for r in &reports {
        let status = if r.max_rel_err < 1e-4 { "ok" } else { "FAIL" };
        println!("gradcheck {}: max rel err {:.3e} {status}", r.component, r.max_rel_err);
        if r.max_rel_err >= 1e-4 {
            failed = true;
        }
    }
    Ok(if failed { 1 } else { 0 })
}
