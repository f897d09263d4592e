//! Run configuration: TOML text, named presets, `key=value` overrides.
//!
//! Resolution order is preset defaults, then the file, then `--set` flags.
//! Unknown keys and type mismatches are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::AlignLoss;
use crate::models::Arch;
use crate::neuron::NeuronParams;

pub const DEFAULT_PRESET: &str = "mnist-mlp";
pub const PRESETS: [&str; 10] = [
    "mnist-mlp",
    "mnist-mlp-desk",
    "mnist-ann",
    "cnn",
    "cnn-desk",
    "autoencoder",
    "autoencoder-desk",
    "char-rnn",
    "forecast",
    "forecast-csv",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classify,
    Char,
    Forecast,
    Generate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Bsd,
    BpAnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Mlp,
    Cnn,
    Autoencoder,
    Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Lif,
    If,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Reco,
    Infonce,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
    Cifar10,
    Text,
    Csv,
    Sines,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentKind {
    None,
    Crop,
    CropFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchKind,
    /// Layer widths for `mlp` (input first, classes last).
    pub sizes: Vec<usize>,
    /// Stage channels for `cnn` and `autoencoder`.
    pub channels: Vec<usize>,
    /// Hidden width for `rnn`.
    pub hidden: usize,
    /// Simulation steps `T`.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronConfig {
    pub variant_fwd: Variant,
    pub threshold_fwd: f64,
    pub variant_bwd: Variant,
    pub threshold_bwd: f64,
    pub tau: f64,
    pub reset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda: f64,
    pub temperature: f64,
    /// Frequency-banded ReCo for map populations (generation).
    pub banded: bool,
    pub cutoff: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_w: f64,
    pub lr_theta: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip; 0 disables.
    pub clip: f64,
    pub warmup_steps: u64,
    /// Final learning rate as a fraction of the base rate.
    pub min_lr_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Dataset,
    /// Dataset root; empty means `$BSD_DATA_ROOT` or `data`.
    pub root: String,
    /// Text or CSV file for `text` / `csv`.
    pub path: String,
    /// Keep only the first N training (test) samples; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Zero-pad images to this side length; 0 disables.
    pub pad_to: usize,
    pub augment: AugmentKind,
    pub augment_pad: usize,
    pub seq_len: usize,
    /// Window stride for training sequences.
    pub stride: usize,
    /// Forecast target column name; empty forecasts every column.
    pub target_column: String,
    /// Row count of the synthetic sine series.
    pub rows: usize,
    /// Fraction of the text used for training.
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub task: Task,
    pub algo: Algo,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Samples in the fixed Hamming probe set.
    pub probe_size: usize,
    pub output_dir: String,
    pub model: ModelConfig,
    pub neuron: NeuronConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
}

fn mnist_mlp() -> RunConfig {
    RunConfig {
        preset: "mnist-mlp".into(),
        task: Task::Classify,
        algo: Algo::Bsd,
        seed: 0,
        epochs: 40,
        batch_size: 128,
        eval_batch_size: 500,
        threads: 0,
        probe_size: 512,
        output_dir: "runs/mnist-mlp".into(),
        model: ModelConfig {
            arch: ArchKind::Mlp,
            sizes: vec![784, 1024, 1024, 512, 256, 10],
            channels: vec![],
            hidden: 0,
            steps: 4,
        },
        neuron: NeuronConfig {
            variant_fwd: Variant::Lif,
            threshold_fwd: 0.2,
            variant_bwd: Variant::Lif,
            threshold_bwd: 0.1,
            tau: 2.0,
            reset: 0.0,
        },
        loss: LossConfig {
            kind: LossKind::Reco,
            lambda: 0.6,
            temperature: 0.1,
            banded: false,
            cutoff: 0.6,
            lambda_low: 0.005,
            lambda_high: 0.01,
        },
        optim: OptimConfig {
            lr_w: 1e-4,
            lr_theta: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 0.3,
            warmup_steps: 0,
            min_lr_ratio: 0.0,
        },
        data: DataConfig {
            dataset: Dataset::Mnist,
            root: String::new(),
            path: String::new(),
            train_limit: 0,
            test_limit: 0,
            pad_to: 0,
            augment: AugmentKind::None,
            augment_pad: 0,
            seq_len: 32,
            stride: 32,
            target_column: String::new(),
            rows: 6000,
            train_fraction: 0.9,
        },
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = mnist_mlp();
        c.preset = name.to_string();
        c.output_dir = format!("runs/{name}");
        match name {
            "mnist-mlp" => {}
            "mnist-mlp-desk" => {
                c.model.sizes = vec![784, 256, 128, 10];
                c.epochs = 15;
                c.optim.lr_w = 1e-3;
                c.optim.lr_theta = 1e-3;
            }
            "mnist-ann" => {
                c.algo = Algo::BpAnn;
                c.model.sizes = vec![784, 256, 128, 10];
                c.epochs = 15;
                c.optim.lr_w = 1e-3;
                c.optim.lr_theta = 1e-3;
                c.optim.clip = 0.0;
            }
            "cnn" | "cnn-desk" => {
                c.model.arch = ArchKind::Cnn;
                c.model.sizes = vec![];
                c.neuron.threshold_fwd = 1.0;
                c.neuron.threshold_bwd = 1.0;
                c.optim.lr_w = 1e-3;
                c.optim.lr_theta = 1e-3;
                c.optim.warmup_steps = 100;
                c.optim.clip = 0.0;
                if name == "cnn" {
                    c.model.channels = vec![128, 128, 256, 256, 512];
                    c.data.dataset = Dataset::Cifar10;
                    c.data.augment = AugmentKind::CropFlip;
                    c.data.augment_pad = 4;
                    c.epochs = 50;
                } else {
                    c.model.channels = vec![32, 32, 64];
                    c.epochs = 5;
                }
            }
            "autoencoder" | "autoencoder-desk" => {
                c.task = Task::Generate;
                c.model.arch = ArchKind::Autoencoder;
                c.model.sizes = vec![];
                c.model.steps = 8;
                c.neuron.threshold_fwd = 0.4;
                c.neuron.threshold_bwd = 0.4;
                c.loss.banded = true;
                c.optim.lr_w = 1e-3;
                c.optim.lr_theta = 1e-3;
                c.optim.clip = 0.0;
                c.batch_size = 32;
                c.eval_batch_size = 100;
                c.data.pad_to = 32;
                if name == "autoencoder" {
                    c.model.channels = vec![128, 256, 512];
                    c.epochs = 20;
                } else {
                    c.model.channels = vec![16, 32, 64];
                    c.epochs = 3;
                    c.data.train_limit = 10_000;
                    c.data.test_limit = 1000;
                }
            }
            "char-rnn" | "forecast" | "forecast-csv" => {
                c.model.arch = ArchKind::Rnn;
                c.model.sizes = vec![];
                c.model.hidden = 300;
                c.optim.lr_w = 1e-3;
                c.optim.lr_theta = 1e-3;
                c.optim.clip = 1.0;
                c.data.seq_len = 32;
                if name == "char-rnn" {
                    c.task = Task::Char;
                    c.neuron.threshold_fwd = 1.0;
                    c.neuron.threshold_bwd = 1.0;
                    c.batch_size = 64;
                    c.epochs = 10;
                    c.data.dataset = Dataset::Text;
                    c.data.path = "data/corpus/kjv_sample.txt".into();
                } else {
                    c.task = Task::Forecast;
                    c.neuron.threshold_fwd = 0.8;
                    c.neuron.threshold_bwd = 0.8;
                    c.batch_size = 128;
                    c.epochs = if name == "forecast" { 30 } else { 100 };
                    c.data.stride = 1;
                    c.data.dataset = if name == "forecast" { Dataset::Sines } else { Dataset::Csv };
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Resolve preset, file text and `key=value` overrides.
    pub fn resolve(text: &str, sets: &[String]) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{s}` is not key=value")))?;
            set_path(&mut user, key.trim(), parse_value(value.trim()))?;
        }
        let preset = match user.get("preset") {
            None => DEFAULT_PRESET.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("`preset` must be a string")),
        };
        let base = Self::preset(&preset)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut merged, user);
        let text = toml::to_string(&merged).map_err(|e| Error::config(e.to_string()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, sets: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(&text, sets)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::config(format!("`{key}` {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size", "must be at least 1");
        }
        if self.model.steps < 1 {
            return bad("model.steps", "(T) must be at least 1");
        }
        if !(self.loss.lambda >= 0.0) {
            return bad("loss.lambda", "(lambda) must be >= 0");
        }
        if !(self.loss.lambda_low >= 0.0) {
            return bad("loss.lambda_low", "must be >= 0");
        }
        if !(self.loss.lambda_high >= 0.0) {
            return bad("loss.lambda_high", "must be >= 0");
        }
        if !(self.loss.temperature > 0.0) {
            return bad("loss.temperature", "must be > 0");
        }
        if !(self.loss.cutoff > 0.0 && self.loss.cutoff < 1.0) {
            return bad("loss.cutoff", "must lie in (0, 1)");
        }
        for (key, v) in [("optim.lr_w", self.optim.lr_w), ("optim.lr_theta", self.optim.lr_theta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(key, "must be a finite rate >= 0");
            }
        }
        if !(self.optim.clip >= 0.0) {
            return bad("optim.clip", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.optim.min_lr_ratio) {
            return bad("optim.min_lr_ratio", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.optim.beta1) || !(0.0..1.0).contains(&self.optim.beta2) {
            return bad("optim.beta1/beta2", "must lie in [0, 1)");
        }
        if !(self.optim.eps > 0.0) || !(self.optim.weight_decay >= 0.0) {
            return bad("optim.eps/weight_decay", "must be positive / nonnegative");
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad("data.train_fraction", "must lie in (0, 1)");
        }
        if self.data.seq_len < 1 {
            return bad("data.seq_len", "must be at least 1");
        }
        self.neuron_fwd()?;
        self.neuron_bwd()?;
        let task_arch = match self.task {
            Task::Classify => matches!(self.model.arch, ArchKind::Mlp | ArchKind::Cnn),
            Task::Generate => self.model.arch == ArchKind::Autoencoder,
            Task::Char | Task::Forecast => self.model.arch == ArchKind::Rnn,
        };
        if !task_arch {
            return bad("model.arch", "does not fit the task");
        }
        if self.algo == Algo::BpAnn && (self.task != Task::Classify || self.model.arch != ArchKind::Mlp) {
            return bad("algo", "bp-ann supports only MLP classification");
        }
        match self.model.arch {
            ArchKind::Mlp if self.model.sizes.len() < 2 || self.model.sizes.contains(&0) => {
                return bad("model.sizes", "needs at least two positive widths")
            }
            ArchKind::Cnn | ArchKind::Autoencoder if self.model.channels.is_empty() || self.model.channels.contains(&0) => {
                return bad("model.channels", "needs at least one positive stage")
            }
            ArchKind::Rnn if self.model.hidden == 0 => return bad("model.hidden", "must be positive"),
            _ => {}
        }
        match self.task {
            Task::Classify | Task::Generate if !matches!(self.data.dataset, Dataset::Mnist | Dataset::FashionMnist | Dataset::Cifar10) => {
                return bad("data.dataset", "must be an image dataset for this task")
            }
            Task::Char if self.data.dataset != Dataset::Text => return bad("data.dataset", "must be `text` for char"),
            Task::Forecast if !matches!(self.data.dataset, Dataset::Csv | Dataset::Sines) => {
                return bad("data.dataset", "must be `csv` or `sines` for forecast")
            }
            _ => {}
        }
        if matches!(self.data.dataset, Dataset::Text | Dataset::Csv) && self.data.path.is_empty() {
            return bad("data.path", "is required for text and csv data");
        }
        Ok(())
    }

    fn neuron(variant: Variant, thr: f64, tau: f64, reset: f64, key: &str) -> Result<NeuronParams> {
        let mut p = match variant {
            Variant::Lif => NeuronParams::lif(thr),
            Variant::If => NeuronParams::integrate_and_fire(thr),
        };
        p.tau = tau;
        p.u_reset = reset;
        p.validate().map_err(|e| Error::config(format!("`{key}`: {e}")))?;
        Ok(p)
    }

    pub fn neuron_fwd(&self) -> Result<NeuronParams> {
        let n = &self.neuron;
        Self::neuron(n.variant_fwd, n.threshold_fwd, n.tau, n.reset, "neuron.threshold_fwd")
    }

    pub fn neuron_bwd(&self) -> Result<NeuronParams> {
        let n = &self.neuron;
        Self::neuron(n.variant_bwd, n.threshold_bwd, n.tau, n.reset, "neuron.threshold_bwd")
    }

    /// Alignment loss for hidden populations.
    pub fn hidden_loss(&self) -> AlignLoss {
        let l = &self.loss;
        match l.kind {
            LossKind::Reco if l.banded => AlignLoss::BandedReco {
                cutoff: l.cutoff,
                lambda_low: l.lambda_low,
                lambda_high: l.lambda_high,
            },
            LossKind::Reco => AlignLoss::Reco { lambda: l.lambda },
            LossKind::Infonce => AlignLoss::InfoNce {
                temperature: l.temperature,
            },
            LossKind::Mse => AlignLoss::Mse,
        }
    }

    pub fn clip(&self) -> Option<f64> {
        (self.optim.clip > 0.0).then_some(self.optim.clip)
    }

    pub fn adamw(&self) -> crate::optim::AdamWConfig {
        crate::optim::AdamWConfig {
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
            weight_decay: self.optim.weight_decay,
        }
    }

    /// Dual-path architecture for image input of shape `chw` with `classes` labels.
    pub fn arch(&self, chw: [usize; 3], classes: usize) -> Result<Arch> {
        match self.model.arch {
            ArchKind::Mlp => {
                let sizes = &self.model.sizes;
                let inputs = chw.iter().product::<usize>();
                if sizes[0] != inputs || *sizes.last().unwrap() != classes {
                    return Err(Error::config(format!(
                        "`model.sizes` {sizes:?} must start at {inputs} inputs and end at {classes} classes"
                    )));
                }
                Ok(Arch::Mlp { sizes: sizes.clone() })
            }
            ArchKind::Cnn => Ok(Arch::Cnn {
                input: chw,
                channels: self.model.channels.clone(),
                classes,
            }),
            ArchKind::Autoencoder => Ok(Arch::Autoencoder {
                input: chw,
                channels: self.model.channels.clone(),
            }),
            ArchKind::Rnn => Err(Error::config("`model.arch` rnn has no dual-path image architecture")),
        }
    }

    pub fn data_root(&self) -> PathBuf {
        if self.data.root.is_empty() {
            crate::data::data_root()
        } else {
            PathBuf::from(&self.data.root)
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config("empty override key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
