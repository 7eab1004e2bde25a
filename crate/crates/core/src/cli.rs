//! The `phcnet` command line.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O, 4 shape / transfer /
//! format, 5 numeric.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{Checkpoint, Header};
use crate::data::{
    extract_patches, gen_synthetic, write_patches, Dataset, Manifest, PatchOptions, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::models::{transfer_weights, Model, ModelConfig, TransferMap, TAPS};
use crate::training::{evaluate, export_maps, train, Stage, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Io { .. } => 3,
        Error::Shape(_) | Error::Transfer { .. } | Error::Format(_) | Error::Contract(_) => 4,
        Error::Numeric(_) | Error::UndefinedMetric(_) => 5,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    /// Held-out set evaluated once after training.
    pub test_manifest: Option<PathBuf>,
}

/// Everything a training run needs; the JSON config file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub config_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

/// Parses `value` as JSON, falling back to a plain string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `--set a.b.c=value` overrides to a JSON document, creating
/// intermediate objects as needed.
pub fn apply_overrides(doc: &mut Value, sets: &[String]) -> Result<()> {
    for set in sets {
        let (path, raw) = set
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {set:?} is not key=value")))?;
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::config(format!("bad override path {path:?}")));
        }
        let mut node = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::config(format!("override {path:?}: {key:?} is not inside an object")))?;
            node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {path:?} does not address an object field")))?;
        obj.insert(keys[keys.len() - 1].to_string(), override_value(raw));
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::config(format!("config: {e}")))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(Error::config(format!("unsupported config-version {}", cfg.config_version)));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, sets: &[String]) -> Result<Self> {
        let mut v = read_json(path)?;
        apply_overrides(&mut v, sets)?;
        Self::from_value(v)
    }
}

#[derive(Debug, Parser)]
#[command(name = "phcnet", version, about = "Hypercomplex multi-view networks on the command line")]
pub struct Cli {
    /// More diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Dot-path override, e.g. `--set train.lr=1e-5`; repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-view dataset.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Cut two-view patch pairs from a whole-image dataset.
    ExtractPatches {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = crate::data::patches::DEFAULT_PER_LESION)]
        per_lesion: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage of the pipeline.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage: Option<Stage>,
        /// Checkpoint whose weights initialize the model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `data.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Run log; defaults to the checkpoint path with a `.jsonl` extension.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint; prints metrics as JSON.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write saliency and activation maps of one sample.
    Maps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = TAPS.map(String::from))]
        taps: Vec<String>,
    },
    /// Describe a checkpoint's tensors and parameter savings.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Prints to stdout; a reader that closed the pipe early is not an error.
fn print_json(v: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

/// Loads a dataset; a missing manifest is a configuration problem.
fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::config(format!("dataset manifest {} does not exist", path.display())));
    }
    Dataset::load(path)
}

fn infer_stage(model: &ModelConfig, data: &Dataset) -> Stage {
    use crate::data::DatasetKind;
    match (model, data.metadata.kind) {
        (ModelConfig::Phunet(_), _) => Stage::Segmentation,
        (_, DatasetKind::Patch) => Stage::Patch,
        (_, DatasetKind::FourView) => Stage::FourView,
        _ => Stage::TwoView,
    }
}

fn cmd_gen(spec_path: &Path, out: &Path, o: &Overrides, verbose: u8) -> Result<()> {
    let mut v = read_json(spec_path)?;
    apply_overrides(&mut v, &o.sets)?;
    let mut spec: SyntheticSpec = serde_json::from_value(v).map_err(|e| Error::config(format!("spec: {e}")))?;
    if let Some(s) = o.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let manifest = gen_synthetic(&spec, out)?;
    let positives: usize = manifest.entries.iter().map(|e| e.labels.iter().filter(|&&l| l == 1).count()).sum();
    let labels: usize = manifest.entries.iter().map(|e| e.labels.len()).sum();
    if verbose > 0 {
        eprintln!("wrote {} samples to {}", manifest.entries.len(), out.display());
    }
    print_json(&serde_json::json!({
        "samples": manifest.entries.len(),
        "views": spec.views,
        "images": manifest.entries.len() * spec.views,
        "positive-labels": positives,
        "negative-labels": labels - positives,
        "manifest": out.join("manifest.json"),
    }))
}

fn cmd_patches(manifest: &Path, out: &Path, size: usize, per_lesion: usize, seed: u64) -> Result<()> {
    let data = load_dataset(manifest)?;
    let m = Manifest::load(manifest)?;
    let records = extract_patches(&m, &data, &PatchOptions { size, per_lesion, seed })?;
    let pm = write_patches(out, &records, size)?;
    let mut hist = [0usize; crate::data::PATCH_CLASSES.len()];
    for r in &records {
        hist[r.class] += 1;
    }
    let classes: serde_json::Map<String, Value> = crate::data::PATCH_CLASSES
        .iter()
        .zip(hist)
        .map(|(n, c)| (n.to_string(), c.into()))
        .collect();
    print_json(&serde_json::json!({
        "patches": pm.entries.len(),
        "classes": classes,
        "manifest": out.join("manifest.json"),
    }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &Path,
    stage: Option<Stage>,
    init: Option<PathBuf>,
    out: Option<PathBuf>,
    manifest: Option<PathBuf>,
    log_path: Option<PathBuf>,
    o: &Overrides,
    verbose: u8,
) -> Result<()> {
    let mut v = read_json(config)?;
    apply_overrides(&mut v, &o.sets)?;
    if let Some(s) = stage {
        v["train"]["stage"] = serde_json::to_value(s)?;
    }
    if let Some(s) = o.seed {
        v["train"]["seed"] = s.into();
    }
    if let Some(p) = init {
        v["train"]["init"] = serde_json::to_value(p)?;
    }
    if let Some(p) = out {
        v["train"]["output"] = serde_json::to_value(p)?;
    }
    if let Some(p) = manifest {
        v["data"]["manifest"] = serde_json::to_value(p)?;
    }
    let cfg = RunConfig::from_value(v)?;
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::config("no dataset: set data.manifest or pass --manifest"))?;
    let data = load_dataset(manifest)?;
    let mut model = Model::<f32>::build(&cfg.model, cfg.train.seed)?;
    let mut transferred = None;
    if let Some(init) = &cfg.train.init {
        let source = Checkpoint::<f32>::load(init)?;
        let k = transfer_weights(&source, &mut model, TransferMap::infer(&cfg.model))?;
        eprintln!("transferred {k} tensors");
        transferred = Some(k);
    }
    if verbose > 0 {
        eprintln!(
            "training {} ({} parameters) on {} samples, stage {}",
            cfg.model.arch(),
            model.param_count(),
            data.len(),
            cfg.train.stage.as_str()
        );
    }
    let mut log = train(&cfg.train, &mut model, &data)?;
    log.transferred = transferred;
    log.config = serde_json::to_value(&cfg)?;
    if let Some(test) = &cfg.data.test_manifest {
        log.test = Some(evaluate(&model, &load_dataset(test)?, cfg.train.stage, cfg.train.threshold)?);
    }
    if let Some(path) = &cfg.train.output {
        Checkpoint::from_model(&model).save(path)?;
    }
    let log_path = log_path.or_else(|| cfg.train.output.as_ref().map(|p| p.with_extension("jsonl")));
    if let Some(p) = &log_path {
        log.write_jsonl(p)?;
    }
    let last = log.epochs.last();
    print_json(&serde_json::json!({
        "epochs": log.epochs.len(),
        "best-epoch": log.best_epoch,
        "best-metric": log.best_metric,
        "final-val": last.map(|e| &e.val),
        "test": log.test,
        "transferred": log.transferred,
        "param-count": log.param_count,
    }))
}

fn cmd_eval(config: Option<&Path>, checkpoint: &Path, manifest: &Path, o: &Overrides) -> Result<()> {
    let model = Checkpoint::<f32>::load(checkpoint)?.to_model()?;
    let data = load_dataset(manifest)?;
    let (stage, threshold) = match config {
        Some(c) => {
            let cfg = RunConfig::load(c, &o.sets)?;
            (cfg.train.stage, cfg.train.threshold)
        }
        None => (infer_stage(&model.config, &data), 0.5),
    };
    print_json(&evaluate(&model, &data, stage, threshold)?)
}

fn cmd_maps(checkpoint: &Path, manifest: &Path, sample: &str, out: &Path, taps: &[String]) -> Result<()> {
    let model = Checkpoint::<f32>::load(checkpoint)?.to_model()?;
    let data = load_dataset(manifest)?;
    let s = data
        .get(sample)
        .ok_or_else(|| Error::Contract(format!("sample {sample:?} is not in {}", manifest.display())))?;
    let taps: Vec<&str> = taps.iter().map(String::as_str).collect();
    let files = export_maps(&model, s, out, &taps)?;
    print_json(&serde_json::json!({ "files": files }))
}

fn cmd_inspect(checkpoint: &Path) -> Result<()> {
    let header = Header::read(checkpoint)?;
    let ckpt = Checkpoint::<f32>::load(checkpoint).or_else(|_| Checkpoint::<f64>::load(checkpoint).map(|c| Checkpoint {
        config: c.config,
        tensors: c.tensors.into_iter().map(|(k, v)| (k, v.cast())).collect(),
    }))?;
    let model = ckpt.to_model()?;
    let real = Model::<f32>::build(&model.config.real_valued(), 0)?;
    let params = model.param_count();
    let real_params = real.param_count();
    let tensors: Vec<Value> = header
        .tensors
        .iter()
        .map(|(name, t)| {
            serde_json::json!({
                "name": name,
                "shape": t.shape,
                "dtype": t.dtype,
                "trainable": model.store.lookup(name).is_some_and(|id| model.store.is_trainable(id)),
            })
        })
        .collect();
    eprintln!("{:<48} {:>20} {:>6}", "tensor", "shape", "dtype");
    for (name, t) in &header.tensors {
        eprintln!("{:<48} {:>20} {:>6}", name, format!("{:?}", t.shape), format!("{:?}", t.dtype));
    }
    eprintln!(
        "{params} parameters; n=1 equivalent {real_params}; ratio {:.4}",
        params as f64 / real_params as f64
    );
    print_json(&serde_json::json!({
        "arch": model.config.arch(),
        "model-config": model.config,
        "tensors": tensors,
        "param-count": params,
        "real-param-count": real_params,
        "ratio": params as f64 / real_params as f64,
    }))
}

pub fn run(cli: Cli) -> Result<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::GenSynthetic { spec, out, overrides } => cmd_gen(&spec, &out, &overrides, verbose),
        Command::ExtractPatches {
            manifest,
            out,
            size,
            per_lesion,
            seed,
        } => cmd_patches(&manifest, &out, size, per_lesion, seed),
        Command::Train {
            config,
            stage,
            init,
            out,
            manifest,
            log,
            overrides,
        } => cmd_train(&config, stage, init, out, manifest, log, &overrides, verbose),
        Command::Eval {
            config,
            checkpoint,
            manifest,
            overrides,
        } => cmd_eval(config.as_deref(), &checkpoint, &manifest, &overrides),
        Command::Maps {
            checkpoint,
            manifest,
            sample,
            out,
            taps,
        } => cmd_maps(&checkpoint, &manifest, &sample, &out, &taps),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

/// Parses arguments, runs, reports errors on stderr; returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("phcnet: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "config-version": 1,
            "model": {"arch": "phresnet", "width": 8},
            "train": {"lr": 0.001}
        })
    }

    #[test]
    fn overrides_take_precedence_and_parse_json() {
        let mut v = base();
        apply_overrides(
            &mut v,
            &["train.lr=1e-5".into(), "train.stage=patch".into(), "model.blocks=[1,1]".into(), "data.manifest=x/m.json".into()],
        )
        .unwrap();
        let cfg = RunConfig::from_value(v).unwrap();
        assert_eq!(cfg.train.lr, Some(1e-5));
        assert_eq!(cfg.train.stage, Stage::Patch);
        assert_eq!(cfg.data.manifest, Some(PathBuf::from("x/m.json")));
        let ModelConfig::Phresnet(r) = cfg.model else { panic!() };
        assert_eq!(r.blocks, vec![1, 1]);
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        for bad in ["train.lr", "train..lr=1", "=3", "train.lr.x=1"] {
            let mut v = base();
            let r = apply_overrides(&mut v, &[bad.into()]);
            assert!(matches!(r, Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn config_version_and_unknown_fields_are_checked() {
        let mut v = base();
        v["config-version"] = 2.into();
        assert!(matches!(RunConfig::from_value(v), Err(Error::Config(_))));
        let mut v = base();
        v["trian"] = serde_json::json!({});
        assert!(matches!(RunConfig::from_value(v), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_follow_the_table() {
        assert_eq!(exit_code(&Error::config("x")), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 4);
        assert_eq!(exit_code(&Error::Transfer { names: vec![], detail: String::new() }), 4);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 5);
    }
}
