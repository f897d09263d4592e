use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::data::{CharDataset, ImageDataset, NormStats, SequenceDataset};
use crate::error::{Error, Result};
use crate::layers::BnMode;
use crate::math::Tensor;
use crate::models::{classify, dual_pass, forward_pass, rnn_forward, DualPathNet, RecurrentNet};
use crate::neuron::SpikeTrain;

/// Fraction of positions where two spike trains agree.
pub fn hamming_similarity(a: &SpikeTrain, b: &SpikeTrain) -> Result<f64> {
    a.tensor().check_same_shape(b.tensor(), "hamming_similarity")?;
    let n = a.tensor().len();
    if n == 0 {
        return Ok(1.0);
    }
    let same = a.tensor().data().iter().zip(b.tensor().data()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / n as f64)
}

/// Same-layer Type 1 / Type 2 Hamming similarity for every hidden population.
pub fn probe_hamming(net: &DualPathNet, x: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let rec = dual_pass(net, x, target, BnMode::Eval)?;
    (1..net.layers.len())
        .map(|p| hamming_similarity(&rec.forward.spikes[p], &rec.backward.spikes[p]))
        .collect()
}

/// Weight alignment of every layer pair.
pub fn layer_alignment(net: &DualPathNet) -> Result<Vec<f64>> {
    net.layers.iter().map(|l| l.weight_alignment()).collect()
}

fn nonempty(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::data(format!("{what} split is empty")));
    }
    Ok(())
}

/// Spike-count classification accuracy in evaluation mode.
pub fn classifier_accuracy(net: &DualPathNet, ds: &ImageDataset, batch: usize) -> Result<f64> {
    nonempty(ds.len(), "evaluation")?;
    let mut hits = 0usize;
    for idx in crate::data::batches(ds.len(), batch, None) {
        let (x, labels) = ds.gather(&idx);
        let rec = forward_pass(net, &x, BnMode::Eval)?;
        hits += classify(rec.spikes.last().unwrap())
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Region of an image scored by the reconstruction metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Per-pixel reconstruction MSE in `[0, 1]` pixel units: the top Type 1
/// voltage is mapped back through the normalization and compared with the
/// source image inside `crop`.
pub fn reconstruction_mse(
    net: &DualPathNet,
    ds: &ImageDataset,
    stats: &NormStats,
    crop: Option<Crop>,
    batch: usize,
) -> Result<f64> {
    nonempty(ds.len(), "evaluation")?;
    let [c, h, w] = ds.chw();
    let crop = crop.unwrap_or(Crop {
        top: 0,
        left: 0,
        height: h,
        width: w,
    });
    let mut acc = 0.0;
    for idx in crate::data::batches(ds.len(), batch, None) {
        let (x, _) = ds.gather(&idx);
        let rec = forward_pass(net, &x, BnMode::Eval)?;
        let out = rec.voltages.last().unwrap();
        for b in 0..x.rows() {
            let (src, rc) = (x.row(b), out.row(b));
            for ch in 0..c {
                let s = stats.std[ch].max(crate::data::STD_EPS);
                for y in crop.top..crop.top + crop.height {
                    for xx in crop.left..crop.left + crop.width {
                        let i = (ch * h + y) * w + xx;
                        let d = (rc[i] - src[i]) * s;
                        acc += d * d;
                    }
                }
            }
        }
    }
    Ok(acc / (ds.len() * c * crop.height * crop.width) as f64)
}

/// `(MAE, MSE)` averaged over every element.
pub fn mae_mse(pred: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim("prediction and target lengths differ or are empty"));
    }
    let n = pred.len() as f64;
    let (mut a, mut s) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        a += (p - t).abs();
        s += (p - t) * (p - t);
    }
    Ok((a / n, s / n))
}

/// Forecast `(MSE, MAE)` of the readout over every window and step.
pub fn sequence_metrics(net: &RecurrentNet, ds: &SequenceDataset, batch: usize) -> Result<(f64, f64)> {
    nonempty(ds.len(), "evaluation")?;
    let mut pred = vec![];
    let mut target = vec![];
    for idx in crate::data::batches(ds.len(), batch, None) {
        let (x, y) = ds.batch(&idx);
        let (_, o, _) = rnn_forward(net, &x)?;
        for (t, ot) in o.iter().enumerate() {
            pred.extend_from_slice(ot.data());
            target.extend_from_slice(y.row(t));
        }
    }
    let (mae, mse) = mae_mse(&pred, &target)?;
    Ok((mse, mae))
}

/// Next-character accuracy over the windows starting at `starts`.
pub fn char_accuracy(net: &RecurrentNet, ds: &CharDataset, starts: &[usize], batch: usize) -> Result<f64> {
    nonempty(starts.len(), "evaluation")?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in starts.chunks(batch.max(1)) {
        let (x, _, ids) = ds.one_hot_batch(chunk);
        let (_, o, _) = rnn_forward(net, &x)?;
        let b = chunk.len();
        for (t, ot) in o.iter().enumerate() {
            for j in 0..b {
                let row = ot.row(j);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                hits += usize::from(best == ids[t * b + j]);
                total += 1;
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

pub const METRICS_SCHEMA: &str = "bsd-metrics/1";
pub const METRICS_HEADER: &str =
    "schema,epoch,split,accuracy,mse,mae,loss,hamming_mean,hamming_layers,alignment_layers,rate_fwd,rate_bwd";

/// One metrics CSV row (one per epoch per split).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub loss: Option<f64>,
    pub hamming: Vec<f64>,
    pub alignment: Vec<f64>,
    pub rate_fwd: Option<f64>,
    pub rate_bwd: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.8}")).unwrap_or_default()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.8}")).collect::<Vec<_>>().join(";")
}

impl MetricsRow {
    pub fn hamming_mean(&self) -> Option<f64> {
        (!self.hamming.is_empty()).then(|| self.hamming.iter().sum::<f64>() / self.hamming.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        [
            METRICS_SCHEMA.to_string(),
            self.epoch.to_string(),
            self.split.clone(),
            cell(self.accuracy),
            cell(self.mse),
            cell(self.mae),
            cell(self.loss),
            cell(self.hamming_mean()),
            list(&self.hamming),
            list(&self.alignment),
            cell(self.rate_fwd),
            cell(self.rate_bwd),
        ]
        .join(",")
    }
}

/// Append-only metrics CSV.
pub struct MetricsWriter {
    file: File,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
