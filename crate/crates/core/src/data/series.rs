use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::{Rng, Tensor};

use super::STD_EPS;

/// Sliding windows over z-scored columns; targets are the next-step values
/// of the target columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    /// `[M, N, Din]`.
    pub inputs: Tensor,
    /// `[M, N, Dout]`.
    pub targets: Tensor,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub target_columns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSplits {
    pub train: SequenceDataset,
    pub val: SequenceDataset,
    pub test: SequenceDataset,
}

fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = vec![];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("csv row {}: {e}", r + 1)))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|_| Error::Format {
                    path: "<csv>".into(),
                    offset,
                    msg: format!("row {} column {} ({}): non-numeric cell {cell:?}", r + 1, c + 1, header.get(c).map_or("?", |s| s)),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::data(format!("row {} has {} cells, header has {}", r + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data("csv has no data rows"));
    }
    Ok((header, rows))
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std = (0..d)
        .map(|c| (rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

fn windows(
    rows: &[Vec<f64>],
    mean: &[f64],
    std: &[f64],
    seq_len: usize,
    stride: usize,
    target_columns: &[usize],
) -> Result<SequenceDataset> {
    if rows.len() < seq_len + 1 {
        return Err(Error::data(format!(
            "{} rows cannot hold a window of {seq_len} plus a target",
            rows.len()
        )));
    }
    let d = mean.len();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..d).map(|c| (r[c] - mean[c]) / std[c].max(STD_EPS)).collect())
        .collect();
    let starts: Vec<usize> = (0..rows.len() - seq_len).step_by(stride.max(1)).collect();
    let dout = target_columns.len();
    let mut x = Vec::with_capacity(starts.len() * seq_len * d);
    let mut y = Vec::with_capacity(starts.len() * seq_len * dout);
    for &s in &starts {
        for t in 0..seq_len {
            x.extend_from_slice(&z[s + t]);
            y.extend(target_columns.iter().map(|&c| z[s + t + 1][c]));
        }
    }
    Ok(SequenceDataset {
        inputs: Tensor::from_vec(&[starts.len(), seq_len, d], x)?,
        targets: Tensor::from_vec(&[starts.len(), seq_len, dout], y)?,
        mean: mean.to_vec(),
        std: std.to_vec(),
        target_columns: target_columns.to_vec(),
    })
}

fn resolve_targets(d: usize, target_column: Option<usize>) -> Result<Vec<usize>> {
    match target_column {
        Some(c) if c >= d => Err(Error::config(format!("target column {c} outside 0..{d}"))),
        Some(c) => Ok(vec![c]),
        None => Ok((0..d).collect()),
    }
}

/// Windows over the whole file with statistics from every row.
pub fn series_windows(csv: &str, seq_len: usize, target_column: Option<usize>) -> Result<SequenceDataset> {
    if seq_len < 1 {
        return Err(Error::config("seq_len must be at least 1"));
    }
    let (_, rows) = parse_csv(csv)?;
    let (mean, std) = column_stats(&rows);
    windows(&rows, &mean, &std, seq_len, 1, &resolve_targets(mean.len(), target_column)?)
}

/// Chronological 80/10/10 split; statistics come from the training rows only.
pub fn series_splits(csv: &str, seq_len: usize, target_column: Option<usize>, stride: usize) -> Result<SeriesSplits> {
    if seq_len < 1 {
        return Err(Error::config("seq_len must be at least 1"));
    }
    let (_, rows) = parse_csv(csv)?;
    let n = rows.len();
    let (a, b) = (n * 8 / 10, n * 9 / 10);
    let (mean, std) = column_stats(&rows[..a.max(1)]);
    let targets = resolve_targets(mean.len(), target_column)?;
    Ok(SeriesSplits {
        train: windows(&rows[..a], &mean, &std, seq_len, stride, &targets)?,
        val: windows(&rows[a..b], &mean, &std, seq_len, stride, &targets)?,
        test: windows(&rows[b..], &mean, &std, seq_len, stride, &targets)?,
    })
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn output_dim(&self) -> usize {
        self.targets.shape()[2]
    }

    /// Time-major `[N, B, Din]` inputs and `[N, B, Dout]` targets.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let (n, din, dout) = (self.seq_len(), self.input_dim(), self.output_dim());
        let b = idx.len();
        let mut x = Tensor::zeros(&[n, b, din]);
        let mut y = Tensor::zeros(&[n, b, dout]);
        for (j, &m) in idx.iter().enumerate() {
            for t in 0..n {
                let xs = &self.inputs.row(m)[t * din..(t + 1) * din];
                x.data_mut()[(t * b + j) * din..(t * b + j + 1) * din].copy_from_slice(xs);
                let ys = &self.targets.row(m)[t * dout..(t + 1) * dout];
                y.data_mut()[(t * b + j) * dout..(t * b + j + 1) * dout].copy_from_slice(ys);
            }
        }
        (x, y)
    }
}

/// MSE of predicting each next value by the current one.
pub fn last_value_mse(ds: &SequenceDataset) -> f64 {
    let (din, dout) = (ds.input_dim(), ds.output_dim());
    let mut acc = 0.0;
    let mut count = 0usize;
    for m in 0..ds.len() {
        for t in 0..ds.seq_len() {
            for (k, &c) in ds.target_columns.iter().enumerate() {
                let last = ds.inputs.row(m)[t * din + c];
                acc += (ds.targets.row(m)[t * dout + k] - last).powi(2);
                count += 1;
            }
        }
    }
    acc / count.max(1) as f64
}

/// Three noisy mixtures of shared sinusoids, as headered CSV.
pub fn synthetic_sines(rows: usize, seed: u64) -> String {
    let mut rng = Rng::new(seed);
    let periods = [9.0, 17.0, 31.0];
    let mut amp = [[0.0; 3]; 3];
    let mut phase = [[0.0; 3]; 3];
    for d in 0..3 {
        for k in 0..3 {
            amp[d][k] = rng.uniform(0.5, 1.5);
            phase[d][k] = rng.uniform(0.0, 2.0 * PI);
        }
    }
    let mut out = String::from("a,b,c\n");
    for t in 0..rows {
        let vals: Vec<String> = (0..3)
            .map(|d| {
                let clean: f64 = (0..3)
                    .map(|k| amp[d][k] * (2.0 * PI * t as f64 / periods[k] + phase[d][k]).sin())
                    .sum();
                format!("{:.6}", clean + 0.15 * rng.normal())
            })
            .collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_z_scores() {
        let ds = series_windows("x,k\n1,5\n2,5\n3,5\n", 1, None).unwrap();
        let z = 1.5f64.sqrt();
        assert!((ds.inputs.data()[0] + z).abs() < 1e-4);
        assert!(ds.inputs.data()[2].abs() < 1e-12);
        assert_eq!(ds.inputs.data()[1], 0.0);
        assert!((ds.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn targets_are_next_values() {
        let ds = series_windows("x\n1\n2\n3\n4\n5\n", 2, Some(0)).unwrap();
        for m in 0..ds.len() {
            assert_eq!(ds.targets.row(m)[0], ds.inputs.row(m)[1]);
        }
        assert!(last_value_mse(&ds) > 0.0);
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let err = series_windows("a,b\n1,2\n3,oops\n", 1, None).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }));
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    }

    #[test]
    fn splits_use_training_statistics() {
        let csv = synthetic_sines(500, 1);
        let s = series_splits(&csv, 8, None, 4).unwrap();
        assert_eq!(s.train.mean, s.test.mean);
        assert_eq!(s.train.input_dim(), 3);
        let train_rows: Vec<f64> = (0..s.train.len()).map(|m| s.train.inputs.row(m)[0]).collect();
        assert!(train_rows.iter().sum::<f64>().abs() / (train_rows.len() as f64) < 0.5);
        let (x, y) = s.train.batch(&[0, 1]);
        assert_eq!(x.shape(), &[8, 2, 3]);
        assert_eq!(y.shape(), &[8, 2, 3]);
        assert_eq!(&x.data()[3..6], &s.train.inputs.row(1)[..3]);
    }

    #[test]
    fn synthetic_is_seeded() {
        assert_eq!(synthetic_sines(20, 3), synthetic_sines(20, 3));
        assert_ne!(synthetic_sines(20, 3), synthetic_sines(20, 4));
    }
}
