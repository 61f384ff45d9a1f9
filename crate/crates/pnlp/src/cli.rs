use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::builder::TypedValueParser;
use clap::{Parser, Subcommand};
use pnlp_core::data::{encode, synth_dataset, LabelInventory, SynthConfig};
use pnlp_core::mixer::count_parameters;
use pnlp_core::projection::HashWidth;
use pnlp_core::quant::{float_tensors, params_from_tensors, quantize_params};
use pnlp_core::train::{evaluate, predict, train, EpochLog, Prediction, TrainObserver};
use pnlp_core::vocab::pre_tokenize;
use pnlp_core::{FingerprintCache, HashFamily, ModelParams, ProjectionConfig, Projector};
use serde_json::json;

use crate::config::{RunConfig, PRESETS};
use crate::error::{CliError, Result};
use crate::model_file::{ModelFile, ModelMeta};
use crate::{cache_file, features_file, import, io, model_file};

#[derive(Debug, Parser)]
#[command(name = "pnlp", version, about = "Embedding-free MinHash projection mixer for tagging and classification")]
pub struct Cli {
    /// Seed for training and synthetic data; overrides config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress JSON-lines progress logs.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Directory all artifacts are written under.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fingerprint every vocabulary unit once and store the table.
    BuildCache {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 64)]
        hashes: usize,
        #[arg(long, default_value_t = 64, value_parser = clap::builder::PossibleValuesParser::new(["32", "64"]).map(|s| s.parse::<u32>().unwrap()))]
        width: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Project a JSONL dataset and dump the feature matrices.
    Project {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a model; writes model.bin, config.toml and log.jsonl.
    Train {
        #[arg(long, required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Option<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score a model (float or quantized) on a JSONL dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Store weight matrices as int8 with one scale per tensor.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Label raw text.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Print the trainable parameter count of a configuration.
    Params {
        #[arg(long, required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Option<String>,
    },
    /// Write a seeded synthetic tagging task (train.jsonl, val.jsonl, vocab.txt).
    Synth {
        #[arg(long, default_value_t = 5000)]
        examples: usize,
        #[arg(long, default_value_t = 400)]
        vocab_size: usize,
        #[arg(long, default_value_t = 6)]
        min_len: usize,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
        #[arg(long, default_value_t = 8)]
        labels: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(short, long, default_value = ".")]
        output: PathBuf,
    },
    /// Convert an MTOP-style TSV file to JSONL.
    ImportMtop {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        fields: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Convert a multiATIS-style TSV file to JSONL.
    ImportMultiatis {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        fields: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
}

impl Ctx<'_> {
    fn artifact(&self, path: &Path) -> Result<PathBuf> {
        let full = match &self.cli.out {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        };
        if let Some(parent) = full.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        Ok(full)
    }

    fn artifact_dir(&self, path: &Path) -> Result<PathBuf> {
        let full: PathBuf = match &self.cli.out {
            Some(dir) if path.is_relative() => dir.join(path).components().collect(),
            _ => path.to_path_buf(),
        };
        fs::create_dir_all(&full).map_err(CliError::io(&full))?;
        Ok(full)
    }

    fn log(&self, value: &serde_json::Value) {
        if !self.cli.quiet {
            println!("{value}");
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = Ctx { cli };
    match &cli.command {
        Command::BuildCache { vocab, hashes, width, output } => build_cache(&ctx, vocab, *hashes, *width, output),
        Command::Project { config, input, output } => project(&ctx, config, input, output),
        Command::Train { config, preset, train, val, vocab, cache, epochs, lr, batch_size } => {
            let mut cfg = load_config(config.as_deref(), preset.as_deref())?;
            let d = &mut cfg.data;
            for (slot, flag) in [(&mut d.train, train), (&mut d.val, val), (&mut d.vocab, vocab), (&mut d.cache, cache)] {
                if flag.is_some() {
                    slot.clone_from(flag);
                }
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.train.learning_rate = *lr;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = *b;
            }
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            if let Some(out) = &cli.out {
                cfg.data.out = Some(out.clone());
            }
            cfg.validate()?;
            train_cmd(&ctx, cfg)
        }
        Command::Eval { model, data } => eval_cmd(model, data),
        Command::Quantize { model, output } => quantize_cmd(&ctx, model, output),
        Command::Predict { model, text } => predict_cmd(model, text),
        Command::Params { config, preset } => {
            let cfg = load_config(config.as_deref(), preset.as_deref())?;
            println!("{}", count_parameters(&cfg.model_config()));
            Ok(())
        }
        Command::Synth { examples, vocab_size, min_len, max_len, labels, val_fraction, output } => {
            let sc = SynthConfig {
                seed: cli.seed.unwrap_or(0),
                n_examples: *examples,
                vocab_size: *vocab_size,
                min_len: *min_len,
                max_len: *max_len,
                n_labels: *labels,
                val_fraction: *val_fraction,
            };
            let data = synth_dataset(&sc)?;
            let dir = ctx.artifact_dir(output)?;
            io::write_jsonl(&dir.join("train.jsonl"), &data.train)?;
            io::write_jsonl(&dir.join("val.jsonl"), &data.val)?;
            io::write_vocab(&dir.join("vocab.txt"), &data.vocab)?;
            ctx.log(&json!({"train": data.train.len(), "val": data.val.len(), "vocab": data.vocab.len(), "dir": dir}));
            Ok(())
        }
        Command::ImportMtop { raw, fields, output } => {
            let f: import::MtopFields = import::read_field_map(fields)?;
            let (examples, summary) = import::import_mtop(raw, &f)?;
            finish_import(&ctx, &examples, summary, output)
        }
        Command::ImportMultiatis { raw, fields, output } => {
            let f: import::AtisFields = import::read_field_map(fields)?;
            let (examples, summary) = import::import_multiatis(raw, &f)?;
            finish_import(&ctx, &examples, summary, output)
        }
    }
}

fn finish_import(ctx: &Ctx, examples: &[pnlp_core::data::Example], summary: import::ImportSummary, output: &Path) -> Result<()> {
    let path = ctx.artifact(output)?;
    io::write_jsonl(&path, examples)?;
    if !ctx.cli.quiet {
        for (row, reason) in &summary.skipped_rows {
            eprintln!("skipped row {row}: {reason}");
        }
    }
    println!("{}", serde_json::to_string(&summary).map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    match (path, preset) {
        (Some(p), _) => RunConfig::load(p),
        (None, Some(name)) => RunConfig::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`"))),
        (None, None) => Err(CliError::Usage("pass --config or --preset".into())),
    }
}

fn build_cache(ctx: &Ctx, vocab: &Path, hashes: usize, width: u32, output: &Path) -> Result<()> {
    let v = io::read_vocab(vocab)?;
    let cache = FingerprintCache::build(&v, &HashFamily::new(hashes)?, HashWidth::from_bits(width)?)?;
    let path = ctx.artifact(output)?;
    cache_file::write(&path, &cache)?;
    ctx.log(&json!({"units": v.len(), "hashes": hashes, "width": width, "bytes": cache.table_bytes(), "path": path}));
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("no {what} path given (config [data] or flag)")))
}

fn make_projector(vocab: &Path, cache: Option<&Path>, pc: &ProjectionConfig, width: u32) -> Result<Projector> {
    let v = io::read_vocab(vocab)?;
    let cache = match cache {
        Some(path) => {
            let c = cache_file::read(path, v.len())?;
            if u32::from(c.width().bits()) != width {
                return Err(CliError::Usage(format!("{} holds {}-bit hashes, config asks for {width}", path.display(), c.width().bits())));
            }
            c
        }
        None => FingerprintCache::build(&v, &HashFamily::new(pc.n_hashes)?, HashWidth::from_bits(width)?)?,
    };
    Ok(Projector::new(v, Some(cache), pc.clone())?)
}

fn project(ctx: &Ctx, config: &Path, input: &Path, output: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let projector = make_projector(required(&cfg.data.vocab, "vocab")?, cfg.data.cache.as_deref(), &cfg.projection, cfg.data.hash_width)?;
    let examples = io::load_jsonl(input)?;
    let features = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| projector.project(&ex.tokens).map_err(|e| CliError::file(input, format!("example {}: {e}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    let path = ctx.artifact(output)?;
    features_file::write(&path, &features)?;
    ctx.log(&json!({"examples": features.len(), "rows": cfg.projection.input_rows(), "cols": cfg.projection.max_seq_len, "path": path}));
    Ok(())
}

struct EpochWriter {
    start: Instant,
    log: fs::File,
    log_path: PathBuf,
    quiet: bool,
    error: Option<CliError>,
}

impl TrainObserver for EpochWriter {
    fn elapsed_seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, log: &EpochLog) -> ControlFlow<()> {
        let line = epoch_json(log);
        if !self.quiet {
            println!("{line}");
        }
        if let Err(e) = writeln!(self.log, "{line}") {
            self.error = Some(CliError::Io { path: self.log_path.clone(), source: e });
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    }
}

pub fn epoch_json(log: &EpochLog) -> serde_json::Value {
    json!({"epoch": log.epoch, "train_loss": log.train_loss, "val_metric": log.val_metric, "wallclock_seconds": log.wallclock_seconds})
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(CliError::io(p))
}

fn train_cmd(ctx: &Ctx, cfg: RunConfig) -> Result<()> {
    let out = required(&cfg.data.out, "output directory (--out)")?.to_path_buf();
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let vocab_path = absolute(required(&cfg.data.vocab, "vocab")?)?;
    let cache_path = cfg.data.cache.as_deref().map(absolute).transpose()?;
    let projector = make_projector(&vocab_path, cache_path.as_deref(), &cfg.projection, cfg.data.hash_width)?;

    let train_path = required(&cfg.data.train, "train")?;
    let val_path = required(&cfg.data.val, "val")?;
    let train_ex = io::load_jsonl(train_path)?;
    let val_ex = io::load_jsonl(val_path)?;
    let labels = LabelInventory::from_examples(&train_ex, cfg.model.head);
    if labels.is_empty() {
        return Err(CliError::file(train_path, "training split has no labels for this model head"));
    }
    let mut model_cfg = cfg.model_config();
    model_cfg.head = model_cfg.head.with_outputs(labels.len());
    if model_cfg.head != cfg.model.head {
        ctx.log(&json!({"note": "head sized from training labels", "configured": cfg.model.head.outputs(), "labels": labels.len()}));
    }
    let (train_set, _) = encode(&train_ex, &projector, &labels, model_cfg.head).map_err(|e| CliError::file(train_path, e.to_string()))?;
    let (val_set, unseen) = encode(&val_ex, &projector, &labels, model_cfg.head).map_err(|e| CliError::file(val_path, e.to_string()))?;
    if !unseen.is_empty() {
        ctx.log(&json!({"unseen_validation_labels": unseen.labels, "occurrences": unseen.occurrences}));
    }

    let mut echoed = cfg.clone();
    echoed.data.out = Some(absolute(&out)?);
    let d = &mut echoed.data;
    for p in [&mut d.vocab, &mut d.cache, &mut d.train, &mut d.val, &mut d.test].into_iter().flatten() {
        if p.exists() {
            *p = absolute(p)?;
        }
    }
    let config_path = out.join("config.toml");
    fs::write(&config_path, echoed.to_toml()?).map_err(CliError::io(&config_path))?;

    let log_path = out.join("log.jsonl");
    let mut observer = EpochWriter {
        start: Instant::now(),
        log: fs::File::create(&log_path).map_err(CliError::io(&log_path))?,
        log_path: log_path.clone(),
        quiet: ctx.cli.quiet,
        error: None,
    };
    let outcome = train::<f32>(&model_cfg, &train_set, &val_set, &cfg.train, &mut observer)?;
    if let Some(e) = observer.error {
        return Err(e);
    }

    let model = ModelFile {
        meta: ModelMeta {
            model: model_cfg,
            projection: cfg.projection.clone(),
            labels: labels.labels().to_vec(),
            vocab: vocab_path,
            cache: cache_path,
            hash_width: cfg.data.hash_width,
            best_epoch: Some(outcome.best_epoch),
            best_metric: Some(outcome.best_metric),
        },
        tensors: float_tensors(&outcome.best),
    };
    let model_path = out.join("model.bin");
    model_file::write(&model_path, &model)?;
    ctx.log(&json!({"best_epoch": outcome.best_epoch, "best_metric": outcome.best_metric, "model": model_path}));
    Ok(())
}

/// Parameters and projector described by a model file.
pub fn load_model(path: &Path) -> Result<(ModelFile, ModelParams<f32>, Projector)> {
    let model = model_file::read(path)?;
    let meta = &model.meta;
    if meta.labels.len() != meta.model.head.outputs() {
        return Err(CliError::file(path, format!("{} labels for a head with {} outputs", meta.labels.len(), meta.model.head.outputs())));
    }
    let params = params_from_tensors(&meta.model, &model.tensors).map_err(|e| CliError::file(path, e.to_string()))?;
    let cache = meta.cache.as_deref().filter(|c| c.exists());
    let projector = make_projector(&meta.vocab, cache, &meta.projection, meta.hash_width)?;
    Ok((model, params, projector))
}

fn eval_cmd(model_path: &Path, data: &Path) -> Result<()> {
    let (model, params, projector) = load_model(model_path)?;
    let examples = io::load_jsonl(data)?;
    let labels = LabelInventory::new(model.meta.labels.iter().cloned());
    let (encoded, unseen) =
        encode(&examples, &projector, &labels, model.meta.model.head).map_err(|e| CliError::file(data, e.to_string()))?;
    if encoded.is_empty() {
        return Err(CliError::file(data, "no examples"));
    }
    let eval = evaluate(&params, &model.meta.model, &encoded)?;
    let metric_name = match pnlp_core::Metric::for_head(model.meta.model.head) {
        pnlp_core::Metric::ExactMatch => "exact_match",
        pnlp_core::Metric::IntentAccuracy => "intent_accuracy",
    };
    println!(
        "{}",
        json!({
            "metric": metric_name,
            "value": eval.metric,
            "loss": eval.loss,
            "examples": encoded.len(),
            "quantized": model.is_quantized(),
            "unseen_labels": unseen.labels,
        })
    );
    Ok(())
}

fn quantize_cmd(ctx: &Ctx, model_path: &Path, output: &Path) -> Result<()> {
    let model = model_file::read(model_path)?;
    let params = params_from_tensors(&model.meta.model, &model.tensors).map_err(|e| CliError::file(model_path, e.to_string()))?;
    let quantized = ModelFile { meta: model.meta.clone(), tensors: quantize_params(&params)? };
    let path = ctx.artifact(output)?;
    model_file::write(&path, &quantized)?;
    let before = fs::metadata(model_path).map_err(CliError::io(model_path))?.len();
    let after = fs::metadata(&path).map_err(CliError::io(&path))?.len();
    ctx.log(&json!({"float_bytes": before, "quantized_bytes": after, "ratio": after as f64 / before as f64, "path": path}));
    Ok(())
}

fn predict_cmd(model_path: &Path, text: &str) -> Result<()> {
    let (model, params, projector) = load_model(model_path)?;
    let tokens = pre_tokenize(text);
    if tokens.is_empty() {
        return Err(CliError::Usage("--text has no tokens".into()));
    }
    let features = projector.project(&tokens)?;
    let label = |i: usize| model.meta.labels[i].clone();
    let value = match predict(&params, &model.meta.model, &features)? {
        Prediction::Tokens(ids) => {
            // tokens past the model's sequence length get no label
            let slots: Vec<Option<String>> = (0..tokens.len()).map(|t| ids.get(t).map(|&i| label(i))).collect();
            json!({"tokens": tokens, "slots": slots})
        }
        Prediction::Class(i) => json!({"tokens": tokens, "label": label(i)}),
    };
    println!("{value}");
    Ok(())
}
