//! Run orchestration: data preparation, per-task training loops, run
//! directories, checkpoint evaluation, parameter sweeps and feature export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{ann_accuracy, new_ann_optimizer, train_step_ann, AnnMlp};
use crate::config::{Algo, AugmentKind, Dataset, RunConfig, Task};
use crate::data::{
    augment, batches, char_windows, last_value_mse, load_cifar_bin, load_mnist_dir, series_splits, synthetic_sines,
    unigram_accuracy, Augment, CharDataset, ImageDataset, NormStats, SeriesSplits,
};
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::math::{Rng, Tensor};
use crate::models::{forward_pass, one_hot, Checkpoint, DualPathNet, ModelSpec, RecurrentNet};
use crate::optim::Schedule;
use crate::parallel;
use crate::train::{
    char_accuracy, classifier_accuracy, layer_alignment, new_optimizer, new_rnn_optimizer, probe_hamming,
    reconstruction_mse, sequence_metrics, train_step_autoencoder, train_step_classifier, train_step_rnn, Crop,
    DualStepConfig, MetricsRow, MetricsWriter, Readout, RnnStepConfig, TopLoss, TrainStepReport,
};

pub const SWEEP_HEADER: &str = "schema,key,value,epoch,accuracy,mse,mae,hamming_mean,alignment_mean";
pub const SWEEP_SCHEMA: &str = "bsd-sweep/1";
const FEATURE_SCHEMA: &str = "bsd-features/1";

/// Hidden firing rates outside this band raise a diagnostic alarm.
pub const RATE_BAND: (f64, f64) = (0.01, 0.9);

/// Layout of one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let dir = Self { root: root.to_path_buf() };
        if !dir.config_path().is_file() {
            return Err(Error::io(
                dir.config_path(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "run directory has no resolved config"),
            ));
        }
        Ok(dir)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config_path(), &[])
    }

    pub fn summary(&self) -> Result<Summary> {
        let path = self.summary_path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            offset: 0,
            msg: e.to_string(),
        })
    }

    fn write(&self, path: PathBuf, text: &str) -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// End-of-run record written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub task: Task,
    pub algo: Algo,
    pub seed: u64,
    pub epochs: usize,
    /// Final-epoch metrics on the reported split.
    pub final_metrics: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Unigram accuracy (char) or last-value MSE (forecast) on the test split.
    pub baseline: Option<f64>,
    pub rate_alarms: usize,
    pub threads: usize,
    pub wall_seconds: f64,
    /// The bp-ann reference violates every biological constraint by design.
    pub local_learning: bool,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

/// Training data plus everything evaluation needs.
pub enum Prepared {
    Images {
        train: ImageDataset,
        test: ImageDataset,
        stats: NormStats,
        crop: Option<Crop>,
    },
    Text {
        train: CharDataset,
        test: CharDataset,
    },
    Series(SeriesSplits),
}

fn dataset_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.data_root().join(name)
}

fn limit(ds: ImageDataset, n: usize) -> ImageDataset {
    if n == 0 || n >= ds.len() {
        ds
    } else {
        ds.take(n)
    }
}

pub fn load_images(cfg: &RunConfig) -> Result<(ImageDataset, ImageDataset)> {
    match cfg.data.dataset {
        Dataset::Mnist => Ok((
            load_mnist_dir(&dataset_dir(cfg, "mnist"), "train")?,
            load_mnist_dir(&dataset_dir(cfg, "mnist"), "t10k")?,
        )),
        Dataset::FashionMnist => Ok((
            load_mnist_dir(&dataset_dir(cfg, "fashion-mnist"), "train")?,
            load_mnist_dir(&dataset_dir(cfg, "fashion-mnist"), "t10k")?,
        )),
        Dataset::Cifar10 => {
            let dir = dataset_dir(cfg, "cifar10");
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            Ok((load_cifar_bin(&train)?, load_cifar_bin(&[dir.join("test_batch.bin")])?))
        }
        other => Err(Error::config(format!("`data.dataset` {other:?} is not an image dataset"))),
    }
}

fn column_index(csv: &str, name: &str) -> Result<Option<usize>> {
    if name.is_empty() {
        return Ok(None);
    }
    let header = csv.lines().next().unwrap_or_default();
    header
        .split(',')
        .position(|c| c.trim() == name)
        .map(Some)
        .ok_or_else(|| Error::config(format!("`data.target_column` {name:?} is not in the csv header")))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    match cfg.task {
        Task::Classify | Task::Generate => {
            let (train, test) = load_images(cfg)?;
            let (mut train, mut test) = (limit(train, cfg.data.train_limit), limit(test, cfg.data.test_limit));
            let mut crop = None;
            if cfg.data.pad_to > 0 {
                let [_, h, w] = train.chw();
                let side = cfg.data.pad_to;
                train = train.pad_to(side, side)?;
                test = test.pad_to(side, side)?;
                crop = Some(Crop {
                    top: (side - h) / 2,
                    left: (side - w) / 2,
                    height: h,
                    width: w,
                });
            }
            let stats = train.stats();
            train.normalize(&stats)?;
            test.normalize(&stats)?;
            Ok(Prepared::Images { train, test, stats, crop })
        }
        Task::Char => {
            let path = Path::new(&cfg.data.path);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let all = char_windows(&text, cfg.data.seq_len)?;
            let (train, test) = all.split(cfg.data.train_fraction)?;
            Ok(Prepared::Text { train, test })
        }
        Task::Forecast => {
            let csv = match cfg.data.dataset {
                Dataset::Sines => synthetic_sines(cfg.data.rows, cfg.seed),
                _ => {
                    let path = Path::new(&cfg.data.path);
                    fs::read_to_string(path).map_err(|e| Error::io(path, e))?
                }
            };
            let target = column_index(&csv, &cfg.data.target_column)?;
            Ok(Prepared::Series(series_splits(&csv, cfg.data.seq_len, target, cfg.data.stride)?))
        }
    }
}

/// A trained model of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Dual(DualPathNet),
    Rnn(RecurrentNet),
    Ann(AnnMlp),
}

impl Model {
    pub fn rounded_f32(&self) -> Self {
        match self {
            Model::Dual(n) => Model::Dual(n.rounded_f32()),
            Model::Rnn(n) => Model::Rnn(n.rounded_f32()),
            Model::Ann(n) => Model::Ann(n.rounded_f32()),
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        match self {
            Model::Dual(n) => n.to_checkpoint(seed),
            Model::Rnn(n) => n.to_checkpoint(seed),
            Model::Ann(n) => n.to_checkpoint(seed),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(match ck.header.spec {
            ModelSpec::DualPath { .. } => Model::Dual(DualPathNet::from_checkpoint(ck)?),
            ModelSpec::Recurrent { .. } => Model::Rnn(RecurrentNet::from_checkpoint(ck)?),
            ModelSpec::Ann { .. } => Model::Ann(AnnMlp::from_checkpoint(ck)?),
        })
    }
}

pub fn build_model(cfg: &RunConfig, data: &Prepared) -> Result<Model> {
    let (nf, nb) = (cfg.neuron_fwd()?, cfg.neuron_bwd()?);
    match data {
        Prepared::Images { train, .. } => {
            let arch = cfg.arch(train.chw(), train.classes)?;
            if cfg.algo == Algo::BpAnn {
                return Ok(Model::Ann(AnnMlp::new(&cfg.model.sizes, cfg.seed)?));
            }
            Ok(Model::Dual(DualPathNet::new(arch, nf, nb, cfg.model.steps, cfg.seed)?))
        }
        Prepared::Text { train, .. } => {
            let v = train.vocab_size();
            Ok(Model::Rnn(RecurrentNet::new(v, cfg.model.hidden, v, nf, nb, cfg.model.steps, cfg.seed)?))
        }
        Prepared::Series(s) => Ok(Model::Rnn(RecurrentNet::new(
            s.train.input_dim(),
            cfg.model.hidden,
            s.train.output_dim(),
            nf,
            nb,
            cfg.model.steps,
            cfg.seed,
        )?)),
    }
}

fn probe(ds: &ImageDataset, n: usize) -> (Tensor, Vec<usize>) {
    ds.gather(&(0..n.min(ds.len())).collect::<Vec<_>>())
}

/// Metrics of `model` on `split` (`train`, `val` or `test`). The caller
/// passes the checkpoint-precision model so that evaluating a saved run
/// reproduces the training-time row exactly.
pub fn evaluate(cfg: &RunConfig, model: &Model, data: &Prepared, split: &str, epoch: usize) -> Result<MetricsRow> {
    let mut row = MetricsRow {
        epoch,
        split: split.to_string(),
        ..Default::default()
    };
    let eb = cfg.eval_batch_size;
    match (model, data) {
        (Model::Dual(net), Prepared::Images { train, test, stats, crop }) => {
            let ds = pick_image_split(split, train, test)?;
            if cfg.task == Task::Generate {
                row.mse = Some(reconstruction_mse(net, ds, stats, *crop, eb)?);
            } else {
                row.accuracy = Some(classifier_accuracy(net, ds, eb)?);
            }
            let (px, py) = probe(ds, cfg.probe_size);
            let target = if cfg.task == Task::Generate { px.clone() } else { one_hot(&py, ds.classes)? };
            row.hamming = probe_hamming(net, &px, &target)?;
            row.alignment = layer_alignment(net)?;
        }
        (Model::Ann(net), Prepared::Images { train, test, .. }) => {
            row.accuracy = Some(ann_accuracy(net, pick_image_split(split, train, test)?, eb)?);
        }
        (Model::Rnn(net), Prepared::Text { train, test }) => {
            let ds = match split {
                "train" => train,
                "test" => test,
                other => return Err(Error::config(format!("split `{other}` does not exist for text data"))),
            };
            row.accuracy = Some(char_accuracy(net, ds, &ds.starts(ds.seq_len), eb)?);
        }
        (Model::Rnn(net), Prepared::Series(s)) => {
            let ds = match split {
                "train" => &s.train,
                "val" => &s.val,
                "test" => &s.test,
                other => return Err(Error::config(format!("split `{other}` does not exist for series data"))),
            };
            let (mse, mae) = sequence_metrics(net, ds, eb)?;
            row.mse = Some(mse);
            row.mae = Some(mae);
        }
        _ => return Err(Error::config("model does not match the configured task")),
    }
    Ok(row)
}

fn pick_image_split<'a>(split: &str, train: &'a ImageDataset, test: &'a ImageDataset) -> Result<&'a ImageDataset> {
    match split {
        "train" => Ok(train),
        "test" => Ok(test),
        other => Err(Error::config(format!("split `{other}` does not exist for image data"))),
    }
}

/// Split whose metric drives best-checkpoint selection and the summary.
fn report_split(cfg: &RunConfig) -> &'static str {
    if cfg.task == Task::Forecast {
        "val"
    } else {
        "test"
    }
}

/// `(value, higher_is_better)` of the selection metric.
fn score(row: &MetricsRow) -> (f64, bool) {
    match (row.accuracy, row.mse) {
        (Some(a), _) => (a, true),
        (None, Some(m)) => (m, false),
        _ => (f64::NAN, true),
    }
}

fn metric_map(row: &MetricsRow) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for (k, v) in [
        ("accuracy", row.accuracy),
        ("mse", row.mse),
        ("mae", row.mae),
        ("hamming_mean", row.hamming_mean()),
    ] {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    }
    if !row.alignment.is_empty() {
        m.insert(
            "alignment_mean".into(),
            row.alignment.iter().sum::<f64>() / row.alignment.len() as f64,
        );
    }
    m
}

/// Per-epoch accumulator of step reports.
#[derive(Default)]
struct EpochStats {
    loss: f64,
    top: f64,
    rate_fwd: f64,
    rate_bwd: f64,
    steps: usize,
}

fn hidden_mean(rates: &[f64]) -> f64 {
    if rates.len() > 2 {
        let h = &rates[1..rates.len() - 1];
        h.iter().sum::<f64>() / h.len() as f64
    } else {
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }
}

impl EpochStats {
    fn add(&mut self, r: &TrainStepReport) {
        self.loss += r.total();
        self.top += r.top;
        self.rate_fwd += hidden_mean(&r.rates_fwd);
        self.rate_bwd += hidden_mean(&r.rates_bwd);
        self.steps += 1;
    }

    fn row(&self, epoch: usize, forecast: bool) -> MetricsRow {
        let n = self.steps.max(1) as f64;
        MetricsRow {
            epoch,
            split: "train".into(),
            loss: Some(self.loss / n),
            mse: forecast.then_some(self.top / n),
            rate_fwd: Some(self.rate_fwd / n),
            rate_bwd: Some(self.rate_bwd / n),
            ..Default::default()
        }
    }

    fn alarm(&self) -> bool {
        let n = self.steps.max(1) as f64;
        let ok = |r: f64| r / n > RATE_BAND.0 && r / n < RATE_BAND.1;
        self.steps > 0 && !(ok(self.rate_fwd) && ok(self.rate_bwd))
    }
}

/// Draws independent streams for shuffling and augmentation.
fn stream(seed: u64, tag: u64) -> Rng {
    Rng::new(seed).split(1000 + tag)
}

fn schedule(cfg: &RunConfig, steps_per_epoch: usize) -> Result<Schedule> {
    let total = (cfg.epochs * steps_per_epoch).max(1) as u64;
    let warmup = cfg.optim.warmup_steps.min(total.saturating_sub(1));
    let s = Schedule {
        base_lr: 1.0,
        min_lr: cfg.optim.min_lr_ratio,
        warmup_steps: warmup,
        total_steps: total,
    };
    s.validate()?;
    Ok(s)
}

/// Train from a resolved config, writing everything into `cfg.output_dir`.
pub fn train(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    if cfg.threads > 0 {
        parallel::with_threads(cfg.threads, || train_inner(cfg))
    } else {
        train_inner(cfg)
    }
}

fn train_inner(cfg: &RunConfig) -> Result<Summary> {
    let start = Instant::now();
    let data = prepare(cfg)?;
    let mut model = build_model(cfg, &data)?;
    let dir = RunDir::create(Path::new(&cfg.output_dir))?;
    dir.write(dir.config_path(), &cfg.to_toml())?;
    let mut writer = MetricsWriter::create(&dir.metrics_path())?;

    let n_train = match &data {
        Prepared::Images { train, .. } => train.len(),
        Prepared::Text { train, .. } => train.starts(cfg.data.stride).len(),
        Prepared::Series(s) => s.train.len(),
    };
    let steps_per_epoch = n_train.div_ceil(cfg.batch_size);
    let sched = schedule(cfg, steps_per_epoch)?;
    let mut opt = match &model {
        Model::Dual(n) => new_optimizer(n, cfg.adamw()),
        Model::Rnn(n) => new_rnn_optimizer(n, cfg.adamw()),
        Model::Ann(n) => new_ann_optimizer(n, cfg.adamw()),
    };
    let mut shuffle = stream(cfg.seed, 0);
    let mut aug_rng = stream(cfg.seed, 1);
    let split = report_split(cfg);
    let forecast = cfg.task == Task::Forecast;
    let eval_splits: &[&str] = if forecast { &["val", "test"] } else { &["test"] };

    let initial = evaluate(cfg, &model.rounded_f32(), &data, split, 0)?;
    writer.write(&initial)?;
    let (mut best_value, higher) = score(&initial);
    let mut best_epoch = 0;
    let mut last = initial;
    let mut alarms = 0;
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        let mut stats = EpochStats::default();
        let order = batches(n_train, cfg.batch_size, Some(&mut shuffle));
        for idx in order {
            let scale = sched.lr_at(step);
            step += 1;
            let dual_cfg = DualStepConfig {
                hidden: cfg.hidden_loss(),
                top: TopLoss::CrossEntropy,
                lr_w: cfg.optim.lr_w * scale,
                lr_theta: cfg.optim.lr_theta * scale,
                clip: cfg.clip(),
            };
            match (&mut model, &data) {
                (Model::Dual(net), Prepared::Images { train, .. }) => {
                    let (mut x, labels) = train.gather(&idx);
                    x = image_augment(cfg, x, train.chw(), &mut aug_rng)?;
                    let r = if cfg.task == Task::Generate {
                        train_step_autoencoder(net, &mut opt, &x, &dual_cfg)?
                    } else {
                        train_step_classifier(net, &mut opt, &x, &labels, &dual_cfg)?
                    };
                    stats.add(&r);
                }
                (Model::Ann(net), Prepared::Images { train, .. }) => {
                    let (mut x, labels) = train.gather(&idx);
                    x = image_augment(cfg, x, train.chw(), &mut aug_rng)?;
                    let (loss, _) = train_step_ann(net, &mut opt, &x, &labels, dual_cfg.lr_w, cfg.clip())?;
                    stats.loss += loss;
                    stats.steps += 1;
                }
                (Model::Rnn(net), Prepared::Text { train, .. }) => {
                    let all = train.starts(cfg.data.stride);
                    let starts: Vec<usize> = idx.iter().map(|&i| all[i]).collect();
                    let (x, y, ids) = train.one_hot_batch(&starts);
                    let rc = rnn_config(cfg, Readout::CrossEntropy, scale);
                    stats.add(&train_step_rnn(net, &mut opt, &x, &y, Some(&ids), &rc)?);
                }
                (Model::Rnn(net), Prepared::Series(s)) => {
                    let (x, y) = s.train.batch(&idx);
                    let rc = rnn_config(cfg, Readout::Mse, scale);
                    stats.add(&train_step_rnn(net, &mut opt, &x, &y, None, &rc)?);
                }
                _ => return Err(Error::config("model does not match the configured task")),
            }
        }
        if !matches!(model, Model::Ann(_)) && stats.alarm() {
            alarms += 1;
        }
        let mut train_row = stats.row(epoch, forecast);
        if matches!(model, Model::Ann(_)) {
            train_row.rate_fwd = None;
            train_row.rate_bwd = None;
        }
        writer.write(&train_row)?;
        let snapshot = model.rounded_f32();
        for s in eval_splits {
            let row = evaluate(cfg, &snapshot, &data, s, epoch)?;
            writer.write(&row)?;
            if *s == split {
                last = row;
            }
        }
        let ck = model.to_checkpoint(cfg.seed);
        ck.save(&dir.checkpoint_path("last"))?;
        let (value, _) = score(&last);
        if (higher && value > best_value) || (!higher && value < best_value) || best_epoch == 0 {
            best_value = value;
            best_epoch = epoch;
            ck.save(&dir.checkpoint_path("best"))?;
        }
    }

    let baseline = match &data {
        Prepared::Text { train, test } => Some(unigram_accuracy(train, test)),
        Prepared::Series(s) => Some(last_value_mse(&s.test)),
        Prepared::Images { .. } => None,
    };
    let (norm_mean, norm_std) = match &data {
        Prepared::Images { stats, .. } => (stats.mean.clone(), stats.std.clone()),
        Prepared::Series(s) => (s.train.mean.clone(), s.train.std.clone()),
        Prepared::Text { .. } => (vec![], vec![]),
    };
    let mut final_metrics = metric_map(&last);
    if forecast {
        let test = evaluate(cfg, &model.rounded_f32(), &data, "test", cfg.epochs)?;
        for (k, v) in metric_map(&test) {
            final_metrics.insert(format!("test_{k}"), v);
        }
    }
    let summary = Summary {
        preset: cfg.preset.clone(),
        task: cfg.task,
        algo: cfg.algo,
        seed: cfg.seed,
        epochs: cfg.epochs,
        final_metrics,
        best_epoch,
        best_metric: best_value,
        baseline,
        rate_alarms: alarms,
        threads: parallel::current_threads(),
        wall_seconds: start.elapsed().as_secs_f64(),
        local_learning: cfg.algo == Algo::Bsd,
        norm_mean,
        norm_std,
    };
    dir.write(
        dir.summary_path(),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn rnn_config(cfg: &RunConfig, readout: Readout, scale: f64) -> RnnStepConfig {
    RnnStepConfig {
        hidden: cfg.hidden_loss(),
        readout,
        lr_w: cfg.optim.lr_w * scale,
        lr_theta: cfg.optim.lr_theta * scale,
        clip: cfg.clip(),
    }
}

fn image_augment(cfg: &RunConfig, x: Tensor, chw: [usize; 3], rng: &mut Rng) -> Result<Tensor> {
    let mode = match cfg.data.augment {
        AugmentKind::None => return Ok(x),
        AugmentKind::Crop => Augment::Crop { pad: cfg.data.augment_pad },
        AugmentKind::CropFlip => Augment::CropFlip { pad: cfg.data.augment_pad },
    };
    Ok(augment(&x, chw, mode, rng))
}

fn load_model(dir: &RunDir, checkpoint: &str) -> Result<Model> {
    Model::from_checkpoint(&Checkpoint::load(&dir.checkpoint_path(checkpoint))?)
}

/// Evaluate a saved checkpoint (`last` or `best`) of a run on `split`.
pub fn eval(run: &Path, split: &str, checkpoint: &str) -> Result<MetricsRow> {
    let dir = RunDir::open(run)?;
    let cfg = dir.config()?;
    let model = load_model(&dir, checkpoint)?;
    let data = prepare(&cfg)?;
    let epoch = if checkpoint == "last" { cfg.epochs } else { dir.summary()?.best_epoch };
    let go = || evaluate(&cfg, &model, &data, split, epoch);
    if cfg.threads > 0 {
        parallel::with_threads(cfg.threads, go)
    } else {
        go()
    }
}

/// Sweep description: a base config plus one key varied over a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Preset used when `config` is empty.
    #[serde(default)]
    pub preset: String,
    /// Path of a base config file.
    #[serde(default)]
    pub config: String,
    #[serde(default)]
    pub set: Vec<String>,
    pub output_dir: String,
    pub key: String,
    pub values: Vec<toml::Value>,
}

/// One sweep setting and its final metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub summary: Summary,
    pub last: MetricsRow,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.8}")).unwrap_or_default()
}

fn read_last_row(path: &Path, split: &str) -> Result<MetricsRow> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |s: &str| if s.is_empty() { None } else { s.parse::<f64>().ok() };
    let list = |s: &str| -> Vec<f64> { s.split(';').filter(|x| !x.is_empty()).filter_map(|x| x.parse().ok()).collect() };
    text.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|c| c.len() == 12 && c[2] == split)
        .last()
        .map(|c| MetricsRow {
            epoch: c[1].parse().unwrap_or(0),
            split: c[2].to_string(),
            accuracy: parse(c[3]),
            mse: parse(c[4]),
            mae: parse(c[5]),
            loss: parse(c[6]),
            hamming: list(c[8]),
            alignment: list(c[9]),
            rate_fwd: parse(c[10]),
            rate_bwd: parse(c[11]),
        })
        .ok_or_else(|| Error::data(format!("{} has no `{split}` rows", path.display())))
}

/// Run every setting of a sweep and write `sweep.csv` into its output dir.
pub fn analyze(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::config("`values` of a sweep must not be empty"));
    }
    let base_text = if spec.config.is_empty() {
        format!("preset = {:?}", if spec.preset.is_empty() { crate::config::DEFAULT_PRESET } else { &spec.preset })
    } else {
        let p = Path::new(&spec.config);
        fs::read_to_string(p).map_err(|e| Error::io(p, e))?
    };
    let out = PathBuf::from(&spec.output_dir);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut rows = vec![];
    let mut csv = format!("{SWEEP_HEADER}\n");
    for v in &spec.values {
        let text = value_text(v);
        let mut sets = spec.set.clone();
        sets.push(format!("{}={}", spec.key, v));
        sets.push(format!("output_dir={:?}", out.join(format!("{}={text}", spec.key)).display().to_string()));
        let cfg = RunConfig::resolve(&base_text, &sets)?;
        let summary = train(&cfg)?;
        let last = read_last_row(&RunDir::open(Path::new(&cfg.output_dir))?.metrics_path(), report_split(&cfg))?;
        let align = (!last.alignment.is_empty()).then(|| last.alignment.iter().sum::<f64>() / last.alignment.len() as f64);
        csv.push_str(&format!(
            "{SWEEP_SCHEMA},{},{text},{},{},{},{},{},{}\n",
            spec.key,
            last.epoch,
            cell(last.accuracy),
            cell(last.mse),
            cell(last.mae),
            cell(last.hamming_mean()),
            cell(align)
        ));
        rows.push(SweepRow { value: text, summary, last });
    }
    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("sweep: {}", e.message())))
}

/// Write the time-averaged Type 1 voltages of population `layer` for the
/// first `probe_size` test images as CSV (`label,f0,f1,...`).
pub fn export_features(run: &Path, layer: usize) -> Result<(PathBuf, [usize; 2])> {
    let dir = RunDir::open(run)?;
    let cfg = dir.config()?;
    let Model::Dual(net) = load_model(&dir, "last")? else {
        return Err(Error::config("feature export needs a dual-path image model"));
    };
    if layer >= net.depth() {
        return Err(Error::config(format!(
            "layer {layer} does not exist; the network has populations 0..{}",
            net.depth() - 1
        )));
    }
    let Prepared::Images { test, .. } = prepare(&cfg)? else {
        return Err(Error::config("feature export needs image data"));
    };
    let (x, labels) = probe(&test, cfg.probe_size);
    let rec = forward_pass(&net, &x, BnMode::Eval)?;
    let v = &rec.voltages[layer];
    let (rows, cols) = (v.rows(), v.row_len());
    let mut out = format!("# {FEATURE_SCHEMA}\nlabel");
    for j in 0..cols {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (k, label) in labels.iter().enumerate() {
        out.push_str(&label.to_string());
        for x in v.row(k) {
            out.push_str(&format!(",{x:.6}"));
        }
        out.push('\n');
    }
    let fdir = dir.features_dir();
    fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
    let path = fdir.join(format!("layer{layer}.csv"));
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok((path, [rows, cols]))
}
