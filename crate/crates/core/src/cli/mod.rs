//! Config-driven experiment runner behind the `bpc` binary.
//!
//! A run is described by a [`RunConfig`] (TOML or JSON, unknown keys
//! rejected), optionally seeded from a named preset. Every run writes
//! `manifest.json` into its output directory before doing any work.

pub mod presets;

use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::{preprocess, synthetic_digits, xor_dataset, Dataset, MnistFiles, Split};
use crate::eval::{
    ancestral_sample, classify, energy_landscape, equilibrium_energies, generate_conditional,
    generation_rmse, image_grid_pgm, infer_representation, linear_readout, occluded_classify,
    percentile, reconstruction_rmse, threshold_sample, EvalConfig, LandscapeConfig, Model,
    SampleConfig, Threshold,
};
use crate::io::write_atomic;
use crate::learning::{
    BaselineKind, BpTrainer, Checkpoint, MetricsLog, MetricsRow, PcTrainer, TrainConfig, TrainHooks,
    TrainMode,
};
use crate::network::{Direction, Network, NetworkSpec};
use crate::{Error, Result};

pub use presets::{preset, preset_models, DataSource, Preset, Protocol, PRESETS};

/// Output directory override.
pub const OUT_ENV: &str = "BPC_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Train,
    Eval,
    Landscape,
    Sample,
    Complete,
    Inspect,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Landscape => "landscape",
            Command::Sample => "sample",
            Command::Complete => "complete",
            Command::Inspect => "inspect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    /// Label-conditioned relaxation until the energy threshold is met.
    #[default]
    Threshold,
    /// Top-down draws through the generative chain.
    Ancestral,
}

fn default_sample_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSettings {
    #[serde(default)]
    pub method: SampleMethod,
    /// Label to condition on; every class when unset.
    #[serde(default)]
    pub label: Option<usize>,
    /// Chains per label (threshold) or number of draws (ancestral).
    #[serde(default = "default_sample_batch")]
    pub batch: usize,
    /// Ancestral images drawn with observation noise instead of the mean.
    #[serde(default)]
    pub noisy: bool,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            method: SampleMethod::Threshold,
            label: None,
            batch: default_sample_batch(),
            noisy: false,
        }
    }
}

fn default_fraction() -> f64 {
    0.5
}

fn default_show() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteSettings {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub mask_seed: u64,
    /// Images shown in the output grid.
    #[serde(default = "default_show")]
    pub show: usize,
}

impl Default for CompleteSettings {
    fn default() -> Self {
        Self {
            fraction: default_fraction(),
            mask_seed: 0,
            show: default_show(),
        }
    }
}

/// One run as written in a config file. Sections left out come from the
/// preset (if any), the checkpoint, or built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Input checkpoint; required by every command except `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocols: Option<Vec<Protocol>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SampleSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<CompleteSettings>,
}

impl RunConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub epochs: Option<usize>,
    /// Inference steps of the command being run.
    pub steps: Option<usize>,
}

/// A run with every section filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: Command,
    pub preset: Option<String>,
    pub model: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub network: Option<NetworkSpec>,
    pub baseline: Option<BaselineKind>,
    pub data: Option<DataSource>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalConfig>,
    pub protocols: Option<Vec<Protocol>>,
    pub landscape: Option<LandscapeConfig>,
    pub sample: Option<SampleConfig>,
    pub sampling: SampleSettings,
    pub complete: CompleteSettings,
}

impl Resolved {
    /// The equivalent config file.
    pub fn to_config(&self) -> RunConfig {
        RunConfig {
            command: Some(self.command),
            preset: None,
            model: None,
            seed: Some(self.seed),
            out: Some(self.out.clone()),
            checkpoint: self.checkpoint.clone(),
            network: self.network.clone(),
            baseline: self.baseline,
            data: self.data.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
            protocols: self.protocols.clone(),
            landscape: self.landscape.clone(),
            sample: self.sample.clone(),
            sampling: Some(self.sampling.clone()),
            complete: Some(self.complete.clone()),
        }
    }
}

/// Merges preset, config file and command-line overrides, in that order of
/// increasing precedence.
pub fn resolve(command: Command, cfg: RunConfig, ov: Overrides) -> Result<Resolved> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config(format!(
                "config is for `{}` but the command is `{}`",
                c.name(),
                command.name()
            )));
        }
    }
    let checkpoint = ov.checkpoint.or(cfg.checkpoint);
    let run = match &checkpoint {
        Some(c) if command != Command::Train => training_config(c)?,
        _ => None,
    };
    let run = run.unwrap_or_default();
    let preset_name = ov.preset.or(cfg.preset);
    let model = ov.model.or(cfg.model);
    let base = match &preset_name {
        Some(p) => Some(presets::preset(p, model.as_deref().unwrap_or("bpc"))?),
        None => {
            if model.is_some() {
                return Err(Error::Config("`model` needs a preset".into()));
            }
            None
        }
    };
    let seed = ov.seed.or(cfg.seed).unwrap_or(0);
    let out = ov
        .out
        .or(cfg.out)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    let mut r = Resolved {
        command,
        model: match &base {
            Some(p) => Some(p.model.clone()),
            None => run.model,
        },
        preset: preset_name.or(run.preset),
        seed,
        out,
        checkpoint,
        network: cfg.network.or(base.as_ref().map(|p| p.network.clone())),
        baseline: cfg.baseline.or(base.as_ref().and_then(|p| p.baseline)),
        data: cfg.data.or(base.as_ref().map(|p| p.data.clone())).or(run.data),
        train: cfg.train.or(base.as_ref().map(|p| p.train.clone())),
        eval: cfg.eval.or(base.as_ref().map(|p| p.eval.clone())).or(run.eval),
        protocols: cfg.protocols.or(base.as_ref().map(|p| p.protocols.clone())).or(run.protocols),
        landscape: cfg.landscape.or(base.as_ref().map(|p| p.landscape.clone())).or(run.landscape),
        sample: cfg.sample.or(base.as_ref().map(|p| p.sample.clone())).or(run.sample),
        sampling: cfg.sampling.unwrap_or_default(),
        complete: cfg.complete.unwrap_or_default(),
    };
    if let Some(t) = r.train.as_mut() {
        t.seed = seed;
        if let Some(n) = ov.epochs {
            t.epochs = n;
        }
    }
    if let Some(n) = ov.steps {
        match command {
            Command::Train => {
                if let Some(t) = r.train.as_mut() {
                    t.relax.steps = n;
                }
            }
            Command::Eval | Command::Complete => {
                let e = r.eval.get_or_insert_with(EvalConfig::default);
                e.relax.steps = n;
                e.occlusion_steps = Some(n);
            }
            Command::Landscape => r.landscape.get_or_insert_with(LandscapeConfig::default).relax.steps = n,
            Command::Sample => r.sample.get_or_insert_with(SampleConfig::default).max_steps = n,
            Command::Inspect => {}
        }
    }
    if command == Command::Train {
        if r.network.is_none() {
            return Err(Error::Config("training needs a [network] section or a preset".into()));
        }
        if r.train.is_none() {
            return Err(Error::Config("training needs a [train] section or a preset".into()));
        }
        r.train.as_ref().expect("checked").validate()?;
    } else if r.checkpoint.is_none() {
        return Err(Error::Config(format!("`{}` needs --checkpoint", command.name())));
    }
    if let Some(e) = &r.eval {
        e.validate()?;
    }
    Ok(r)
}

/// The resolved config saved next to a checkpoint by `train`, if any.
/// Commands run on that checkpoint fall back to its data, eval, protocol,
/// landscape and sample sections.
fn training_config(checkpoint: &Path) -> Result<Option<RunConfig>> {
    let path = checkpoint.with_file_name("config.toml");
    if !path.is_file() {
        return Ok(None);
    }
    RunConfig::from_file(&path).map(Some)
}

/// Train, validation and test sets of a run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset<f64>,
    pub val: Dataset<f64>,
    pub test: Dataset<f64>,
}

/// MNIST directory used when a config does not name one.
pub fn default_mnist_dir() -> PathBuf {
    PathBuf::from("data/mnist")
}

pub fn load_data(src: &DataSource) -> Result<RunData> {
    match src {
        DataSource::Xor => {
            let d = xor_dataset::<f64>();
            Ok(RunData {
                train: d.clone(),
                val: d.clone(),
                test: d,
            })
        }
        DataSource::Mnist {
            dir,
            train_subset,
            val_subset,
            test_subset,
            split_seed,
        } => {
            let dir = dir.clone().unwrap_or_else(default_mnist_dir);
            let files = MnistFiles::in_dir(&dir);
            if !files.exist() {
                return Err(Error::Data(format!(
                    "MNIST IDX files not found in {} (run scripts/fetch_mnist.sh)",
                    dir.display()
                )));
            }
            let (tr, ev) = files.load()?;
            let sp = preprocess::<f64>(&tr, &ev, 10, *split_seed)?;
            let cut = |d: Dataset<f64>, n: &Option<usize>| match n {
                Some(n) => d.take(*n),
                None => d,
            };
            Ok(RunData {
                train: cut(sp.train, train_subset),
                val: cut(sp.val, val_subset),
                test: cut(sp.test, test_subset),
            })
        }
        DataSource::Synthetic {
            n_train,
            n_test,
            side,
            n_classes,
        } => {
            let train = synthetic_digits::<f64>(*n_train, *side, *n_classes, 0);
            let mut test = synthetic_digits::<f64>(*n_test, *side, *n_classes, 1);
            test.split = Split::Test;
            let mut val = test.clone();
            val.split = Split::Val;
            Ok(RunData { train, val, test })
        }
    }
}

/// Lower-case hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn n_classes_of(net: &Network<f64>) -> usize {
    match net.width(net.label_layer()) {
        1 => 2,
        w => w,
    }
}

fn default_protocols(net: &Network<f64>, baseline: Option<BaselineKind>) -> Vec<Protocol> {
    match baseline {
        Some(BaselineKind::DiscBp) => vec![Protocol::Classify],
        Some(BaselineKind::GenBp) => vec![Protocol::Generate],
        Some(_) => vec![Protocol::Reconstruct],
        None if net.edges_in(Direction::Generative).next().is_some() => {
            vec![Protocol::Classify, Protocol::Generate]
        }
        None => vec![Protocol::Classify],
    }
}

fn default_data(net: &Network<f64>) -> DataSource {
    if net.width(net.image_layer()) == 2 {
        DataSource::Xor
    } else {
        DataSource::Mnist {
            dir: None,
            train_subset: None,
            val_subset: None,
            test_subset: None,
            split_seed: 0,
        }
    }
}

/// Validation metric reported each epoch: the first protocol that yields a
/// single number.
fn val_metric(model: Model<'_, f64>, data: &Dataset<f64>, protocols: &[Protocol], mode: TrainMode, cfg: &EvalConfig) -> Result<Option<f64>> {
    for p in protocols {
        match p {
            Protocol::Classify => return classify(model, data, cfg).map(Some),
            Protocol::Generate => return generation_rmse(model, data, cfg).map(Some),
            Protocol::Reconstruct => {
                let k = match mode {
                    TrainMode::PartialClamp { k } => Some(k),
                    _ => None,
                };
                return reconstruction_rmse(model, data, k, cfg).map(Some);
            }
            _ => {}
        }
    }
    Ok(None)
}

/// Loaded input checkpoint with its hash.
struct Input {
    ckpt: Checkpoint<f64>,
    sha256: String,
}

fn load_input(path: &Path) -> Result<Input> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Input {
        sha256: sha256_hex(&bytes),
        ckpt: Checkpoint::from_bytes(&bytes)?,
    })
}

/// Summary returned by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub results: serde_json::Value,
}

struct Runner {
    r: Resolved,
    manifest: serde_json::Value,
}

impl Runner {
    fn path(&self, name: &str) -> PathBuf {
        self.r.out.join(name)
    }

    fn write_manifest(&self) -> Result<()> {
        write_json(&self.path("manifest.json"), &self.manifest)
    }
}

/// Executes a resolved run. The output directory and its manifest are
/// created before anything else; results are also returned.
pub fn run(r: Resolved) -> Result<RunOutcome> {
    std::fs::create_dir_all(&r.out).map_err(|e| Error::io(&r.out, e))?;
    let input = match (&r.checkpoint, r.command) {
        (Some(p), c) if c != Command::Train => Some(load_input(p)?),
        _ => None,
    };
    let config = r.to_config();
    let manifest = json!({
        "tool": "bpc",
        "version": env!("CARGO_PKG_VERSION"),
        "command": r.command.name(),
        "preset": r.preset,
        "model": r.model,
        "seed": r.seed,
        "input_checkpoint": input.as_ref().map(|i| json!({
            "path": r.checkpoint,
            "sha256": i.sha256,
        })),
        "checkpoint_sha256": serde_json::Value::Null,
        "config": serde_json::to_value(&config).expect("configs serialize"),
    });
    let mut runner = Runner { r, manifest };
    runner.write_manifest()?;
    let toml_text = toml::to_string(&config).map_err(|e| Error::Config(format!("config does not serialize: {e}")))?;
    write_atomic(&runner.path("config.toml"), toml_text.as_bytes())?;

    let results = match runner.r.command {
        Command::Train => cmd_train(&mut runner)?,
        Command::Eval => cmd_eval(&runner, input.expect("checked in resolve"))?,
        Command::Landscape => cmd_landscape(&runner, input.expect("checked in resolve"))?,
        Command::Sample => cmd_sample(&runner, input.expect("checked in resolve"))?,
        Command::Complete => cmd_complete(&runner, input.expect("checked in resolve"))?,
        Command::Inspect => cmd_inspect(&runner, input.expect("checked in resolve"))?,
    };
    write_json(&runner.path("results.json"), &results)?;
    Ok(RunOutcome {
        out: runner.r.out.clone(),
        results,
    })
}

fn progress_line(row: &MetricsRow) -> String {
    json!({
        "epoch": row.epoch,
        "energy": row.total_energy,
        "val_metric": row.val_metric,
    })
    .to_string()
}

fn cmd_train(runner: &mut Runner) -> Result<serde_json::Value> {
    let r = &runner.r;
    let spec = r.network.clone().expect("checked in resolve");
    let cfg = r.train.clone().expect("checked in resolve");
    let data = load_data(r.data.as_ref().ok_or_else(|| Error::Config("training needs a [data] section or a preset".into()))?)?;
    let net = Network::<f64>::build(spec, r.seed)?;
    let eval = r.eval.clone().unwrap_or_else(|| EvalConfig {
        energy: cfg.energy.clone(),
        ..EvalConfig::default()
    });
    let protocols = r.protocols.clone().unwrap_or_else(|| default_protocols(&net, r.baseline));
    let baseline = r.baseline;
    let mode = cfg.mode;
    let val_data = data.val.clone();
    let validate = move |net: &Network<f64>| -> Result<f64> {
        let model = Model { net, baseline };
        Ok(val_metric(model, &val_data, &protocols, mode, &eval)?.unwrap_or(f64::NAN))
    };
    let mut on_epoch = |row: &MetricsRow| println!("{}", progress_line(row));
    let mut hooks = TrainHooks {
        validate: Some(&validate),
        on_epoch: Some(&mut on_epoch),
    };
    let (net, opt, log, epochs): (_, _, MetricsLog, _) = match baseline {
        Some(kind) => {
            let mut t = BpTrainer::new(net, kind, cfg.clone())?;
            let log = t.train(&data.train, &mut hooks)?;
            (t.net, t.opt, log, t.epochs_done)
        }
        None => {
            let mut t = PcTrainer::new(net, cfg.clone())?;
            let log = t.train(&data.train, &mut hooks)?;
            (t.net, t.opt, log, t.epochs_done)
        }
    };
    log.write_csv(&runner.path("metrics.csv"))?;
    let last_val = log.epoch_rows().last().and_then(|row| row.val_metric);
    let mut ckpt = Checkpoint::new(net, r.seed);
    ckpt.optimizer = Some(opt);
    ckpt.baseline = baseline;
    ckpt.train = Some(cfg);
    ckpt.epoch = epochs;
    let bytes = ckpt.to_bytes()?;
    let ckpt_path = runner.path("checkpoint.bpc");
    write_atomic(&ckpt_path, &bytes)?;
    let hash = sha256_hex(&bytes);
    runner.manifest["checkpoint_sha256"] = json!(hash);
    runner.write_manifest()?;
    Ok(json!({
        "epochs": epochs,
        "val_metric": last_val,
        "checkpoint": ckpt_path,
        "checkpoint_sha256": hash,
    }))
}

fn eval_setup(runner: &Runner, ckpt: &Checkpoint<f64>) -> EvalConfig {
    runner.r.eval.clone().unwrap_or_else(|| EvalConfig {
        energy: ckpt.train.as_ref().map(|t| t.energy.clone()).unwrap_or_default(),
        ..EvalConfig::default()
    })
}

fn cmd_eval(runner: &Runner, input: Input) -> Result<serde_json::Value> {
    let r = &runner.r;
    let ckpt = input.ckpt;
    let net = &ckpt.net;
    let model = Model { net, baseline: ckpt.baseline };
    let cfg = eval_setup(runner, &ckpt);
    let data = load_data(&r.data.clone().unwrap_or_else(|| default_data(net)))?;
    let protocols = r.protocols.clone().unwrap_or_else(|| default_protocols(net, ckpt.baseline));
    let mode = ckpt.train.as_ref().map(|t| t.mode).unwrap_or(TrainMode::Supervised);
    let label_k = match mode {
        TrainMode::PartialClamp { k } => Some(k),
        _ => None,
    };
    let mut out = serde_json::Map::new();
    for p in &protocols {
        match p {
            Protocol::Classify => {
                out.insert("accuracy".into(), json!(classify(model, &data.test, &cfg)?));
            }
            Protocol::Generate => {
                out.insert("generation_rmse".into(), json!(generation_rmse(model, &data.test, &cfg)?));
                let k = data.test.n_classes;
                let labels: Vec<usize> = (0..k).collect();
                let gen = generate_conditional(model, &labels, k, &cfg)?;
                if net.width(net.image_layer()) > 2 {
                    write_atomic(&runner.path("generated.pgm"), &image_grid_pgm(gen.view(), k)?)?;
                }
            }
            Protocol::Reconstruct => {
                out.insert(
                    "reconstruction_rmse".into(),
                    json!(reconstruction_rmse(model, &data.test, label_k, &cfg)?),
                );
            }
            Protocol::Readout => {
                let reps_tr = infer_representation(model, data.train.images.view(), None, &cfg)?;
                let reps_te = infer_representation(model, data.test.images.view(), None, &cfg)?;
                let acc = linear_readout(
                    reps_tr.view(),
                    &data.train.labels,
                    reps_te.view(),
                    &data.test.labels,
                    data.test.n_classes,
                    r.seed,
                )?;
                out.insert("readout_accuracy".into(), json!(acc));
            }
            Protocol::Occlusion => {
                let mut rows = Vec::new();
                let mut csv = String::from("fraction,accuracy\n");
                for &f in &cfg.occlusion_fractions {
                    let res = occluded_classify(model, &data.test, f, r.seed, &cfg)?;
                    csv.push_str(&format!("{f},{}\n", res.accuracy));
                    rows.push(json!({"fraction": f, "accuracy": res.accuracy}));
                }
                write_atomic(&runner.path("occlusion.csv"), csv.as_bytes())?;
                out.insert("occlusion".into(), json!(rows));
            }
        }
    }
    Ok(serde_json::Value::Object(out))
}

fn cmd_landscape(runner: &Runner, input: Input) -> Result<serde_json::Value> {
    let ckpt = input.ckpt;
    let cfg = runner.r.landscape.clone().unwrap_or_else(|| LandscapeConfig {
        energy: ckpt.train.as_ref().map(|t| t.energy.clone()).unwrap_or_default(),
        ..LandscapeConfig::default()
    });
    let k = n_classes_of(&ckpt.net);
    let land = energy_landscape(&ckpt.net, k, &cfg)?;
    land.write_csv(&runner.path("landscape.csv"))?;
    Ok(json!({
        "grid_points": land.axis.len(),
        "labels": k,
        "rows": land.total.len(),
    }))
}

fn cmd_sample(runner: &Runner, input: Input) -> Result<serde_json::Value> {
    let r = &runner.r;
    let ckpt = input.ckpt;
    let net = &ckpt.net;
    let settings = &r.sampling;
    let side_ok = {
        let d = net.width(net.image_layer());
        let s = (d as f64).sqrt().round() as usize;
        s * s == d && d > 2
    };
    match settings.method {
        SampleMethod::Ancestral => {
            let s = ancestral_sample(net, settings.batch, r.seed, settings.noisy)?;
            if side_ok {
                write_atomic(&runner.path("samples.pgm"), &image_grid_pgm(s.images.view(), 8)?)?;
            }
            let n = s.latent.nrows() as f64;
            let mean = s.latent.sum() / (n * s.latent.ncols() as f64);
            Ok(json!({"method": "ancestral", "n": settings.batch, "latent_mean": mean}))
        }
        SampleMethod::Threshold => {
            let energy = ckpt.train.as_ref().map(|t| t.energy.clone()).unwrap_or_default();
            let mut scfg = r.sample.clone().unwrap_or_else(|| SampleConfig {
                energy: energy.clone(),
                ..SampleConfig::default()
            });
            let eval = eval_setup(runner, &ckpt);
            if scfg.relax.lr_x <= 0.0 {
                scfg.relax.lr_x = eval.relax.lr_x;
            }
            let data = load_data(&r.data.clone().unwrap_or_else(|| default_data(net)))?;
            let energies = equilibrium_energies(net, &data.test, &eval.relax, &scfg.energy, eval.chunk)?;
            let value = percentile(&energies, eval.percentile)?;
            let threshold = Threshold::Total { value };
            let k = data.test.n_classes;
            let labels: Vec<usize> = match settings.label {
                Some(l) => vec![l],
                None => (0..k).collect(),
            };
            let mut images = Vec::new();
            let mut csv = String::from("label,energy\n");
            let mut per_label = Vec::new();
            for (i, &l) in labels.iter().enumerate() {
                let s = threshold_sample(net, l, k, threshold, settings.batch, r.seed.wrapping_add(i as u64), &scfg)?;
                for e in &s.energies {
                    csv.push_str(&format!("{l},{e:e}\n"));
                }
                per_label.push(json!({"label": l, "kept": s.images.nrows(), "steps": s.steps, "converged": s.converged}));
                images.push(s.images);
            }
            write_atomic(&runner.path("samples.csv"), csv.as_bytes())?;
            let views: Vec<_> = images.iter().map(|a| a.view()).collect();
            let all = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
            if side_ok && all.nrows() > 0 {
                write_atomic(&runner.path("samples.pgm"), &image_grid_pgm(all.view(), 8)?)?;
            }
            Ok(json!({"method": "threshold", "threshold": value, "labels": per_label}))
        }
    }
}

fn cmd_complete(runner: &Runner, input: Input) -> Result<serde_json::Value> {
    let r = &runner.r;
    let ckpt = input.ckpt;
    let net = &ckpt.net;
    let model = Model { net, baseline: ckpt.baseline };
    let cfg = eval_setup(runner, &ckpt);
    let data = load_data(&r.data.clone().unwrap_or_else(|| default_data(net)))?;
    let c = &r.complete;
    let res = occluded_classify(model, &data.test, c.fraction, c.mask_seed, &cfg)?;
    let n = c.show.min(data.test.len());
    if n > 0 && net.width(net.image_layer()) > 2 {
        let original = data.test.images.slice(s![..n, ..]);
        let mut masked = original.to_owned();
        for (v, &m) in masked.iter_mut().zip(res.mask.missing.slice(s![..n, ..]).iter()) {
            if m {
                *v = 0.0;
            }
        }
        let completed = res.completed.slice(s![..n, ..]);
        let grid = concatenate(Axis(0), &[original, masked.view(), completed]).map_err(|e| Error::Shape(e.to_string()))?;
        write_atomic(&runner.path("completed.pgm"), &image_grid_pgm(grid.view(), n)?)?;
    }
    Ok(json!({"fraction": c.fraction, "accuracy": res.accuracy}))
}

fn cmd_inspect(runner: &Runner, input: Input) -> Result<serde_json::Value> {
    let ckpt = input.ckpt;
    let net = &ckpt.net;
    let spec = net.spec();
    let info = json!({
        "family": net.family().name(),
        "baseline": ckpt.baseline,
        "layers": spec.layers.iter().map(|l| json!({"id": l.id, "width": l.width})).collect::<Vec<_>>(),
        "edges": spec.edges.iter().map(|e| e.id.clone()).collect::<Vec<_>>(),
        "parameters": net.param_count(),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "optimizer_state": ckpt.optimizer.is_some(),
        "sha256": input.sha256,
    });
    write_json(&runner.path("inspect.json"), &info)?;
    println!("{info}");
    Ok(info)
}

/// Machine-readable failure record.
pub fn error_record(err: &Error) -> serde_json::Value {
    json!({
        "error": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    })
}

/// Writes `error.json` into an existing output directory.
pub fn write_error_record(out: &Path, err: &Error) {
    if out.is_dir() {
        let _ = write_json(&out.join("error.json"), &error_record(err));
    }
}
