use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_binary, read_csv_long, read_labels, SeriesTensor};
use super::TtsWindow;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Binary,
    CsvLong,
}

/// Whether splits cut the time axis (forecasting) or the window list
/// (independent labelled samples).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitAxis {
    Time,
    Samples,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl Splits {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be in [0,1] and sum to 1: {self:?}")));
        }
        if self.train <= 0.0 {
            return Err(Error::Config("train fraction must be positive".into()));
        }
        Ok(())
    }

    /// Cut points `(train_end, valid_end)` for `n` items.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let train_end = ((n as f64) * self.train).floor() as usize;
        let valid_end = ((n as f64) * (self.train + self.valid)).floor() as usize;
        (train_end.min(n), valid_end.min(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub layout: Layout,
    pub window: usize,
    pub stride: usize,
    #[serde(default)]
    pub splits: Splits,
    pub split_axis: SplitAxis,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

/// Per-variable z-score statistics, indexed by `i * d2 + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub d1: usize,
    pub d2: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            mean: vec![0.0; d1 * d2],
            std: vec![1.0; d1 * d2],
        }
    }

    /// Statistics of each variable over `range` of the time axis.
    pub fn fit(series: &SeriesTensor, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > series.len {
            return Err(Error::Data(format!("empty or invalid statistics range {range:?}")));
        }
        let n = range.len() as f64;
        let vars = series.d1 * series.d2;
        let mut mean = Vec::with_capacity(vars);
        let mut std = Vec::with_capacity(vars);
        for v in 0..vars {
            let xs = &series.values[v * series.len + range.start..v * series.len + range.end];
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Self {
            d1: series.d1,
            d2: series.d2,
            mean,
            std,
        })
    }

    pub fn normalize(&self, series: &mut SeriesTensor) {
        for v in 0..self.mean.len() {
            let row = &mut series.values[v * series.len..(v + 1) * series.len];
            row.iter_mut().for_each(|x| *x = (*x - self.mean[v]) / self.std[v]);
        }
    }

    pub fn denormalize_value(&self, var: usize, z: f64) -> f64 {
        z * self.std[var] + self.mean[var]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "mode1_id,mode2_id,mean,std")?;
        for i in 0..self.d1 {
            for j in 0..self.d2 {
                let v = i * self.d2 + j;
                writeln!(out, "{i},{j},{:?},{:?}", self.mean[v], self.std[v])?;
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: String| Error::Parse { line: k + 1, msg };
            if parts.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", parts.len())));
            }
            let i: usize = parts[0].parse().map_err(|e| bad(format!("{e}")))?;
            let j: usize = parts[1].parse().map_err(|e| bad(format!("{e}")))?;
            let m: f64 = parts[2].parse().map_err(|e| bad(format!("{e}")))?;
            let s: f64 = parts[3].parse().map_err(|e| bad(format!("{e}")))?;
            rows.push((i, j, m, s));
        }
        let d1 = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        let d2 = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
        if rows.len() != d1 * d2 || d1 == 0 {
            return Err(Error::Data("statistics file does not cover a full grid".into()));
        }
        let mut stats = Self::identity(d1, d2);
        for (i, j, m, s) in rows {
            stats.mean[i * d2 + j] = m;
            stats.std[i * d2 + j] = s;
        }
        Ok(stats)
    }
}

#[derive(Clone, Debug)]
pub struct IngestedDataset {
    pub windows: Vec<TtsWindow>,
    pub stats: NormStats,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

fn check_finite(series: &SeriesTensor) -> Result<()> {
    let bad: Vec<String> = series
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .take(10)
        .map(|(k, _)| {
            let (i, j, t) = (k / (series.d2 * series.len), (k / series.len) % series.d2, k % series.len);
            format!("({i}, {j}, {t})")
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("non-finite values at {}", bad.join(", "))))
    }
}

pub fn load_series(path: &Path, layout: Layout) -> Result<SeriesTensor> {
    match layout {
        Layout::Binary => read_binary(path),
        Layout::CsvLong => read_csv_long(path),
    }
}

/// Reads, normalizes with train-only statistics and windows a series.
pub fn ingest(spec: &DatasetSpec) -> Result<IngestedDataset> {
    let series = load_series(&spec.path, spec.layout)?;
    let labels = spec.labels.as_deref().map(read_labels).transpose()?;
    ingest_series(series, spec, labels)
}

/// [`ingest`] for a series already in memory; `spec.path`, `spec.layout`
/// and `spec.labels` are ignored in favour of the arguments.
pub fn ingest_series(mut series: SeriesTensor, spec: &DatasetSpec, labels: Option<Vec<usize>>) -> Result<IngestedDataset> {
    spec.splits.validate()?;
    check_finite(&series)?;
    if spec.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if spec.window < 2 || spec.window > series.len {
        return Err(Error::Config(format!(
            "window {} invalid for series length {}",
            spec.window, series.len
        )));
    }

    let (windows, stats, train, valid, test) = match spec.split_axis {
        SplitAxis::Time => {
            let (t_train, t_valid) = spec.splits.boundaries(series.len);
            let stats = NormStats::fit(&series, 0..t_train)?;
            stats.normalize(&mut series);
            let mut windows = Vec::new();
            let mut ranges = Vec::new();
            for seg in [0..t_train, t_train..t_valid, t_valid..series.len] {
                let start = windows.len();
                if seg.len() >= spec.window {
                    let part = SeriesTensor::new(
                        series.d1,
                        series.d2,
                        seg.len(),
                        (0..series.d1 * series.d2)
                            .flat_map(|v| series.values[v * series.len + seg.start..v * series.len + seg.end].to_vec())
                            .collect(),
                    )?;
                    for w in part.windows(spec.window, spec.stride)? {
                        let id = seg.start + w.sample_id;
                        windows.push(w.with_sample_id(id));
                    }
                }
                ranges.push(start..windows.len());
            }
            (windows, stats, ranges[0].clone(), ranges[1].clone(), ranges[2].clone())
        }
        SplitAxis::Samples => {
            let raw = series.windows(spec.window, spec.stride)?;
            let (n_train, n_valid) = spec.splits.boundaries(raw.len());
            if n_train == 0 {
                return Err(Error::Data("train split holds no windows".into()));
            }
            let covered = raw[n_train - 1].sample_id + spec.window;
            let stats = NormStats::fit(&series, 0..covered)?;
            stats.normalize(&mut series);
            let windows = series.windows(spec.window, spec.stride)?;
            let n = windows.len();
            (windows, stats, 0..n_train, n_train..n_valid, n_valid..n)
        }
    };
    if train.is_empty() {
        return Err(Error::Data("train split holds no windows".into()));
    }

    let mut windows = windows;
    if let Some(labels) = labels {
        if labels.len() != windows.len() {
            return Err(Error::Data(format!(
                "{} labels for {} windows",
                labels.len(),
                windows.len()
            )));
        }
        for (w, l) in windows.iter_mut().zip(labels) {
            w.label = Some(l);
        }
    }
    Ok(IngestedDataset {
        windows,
        stats,
        train,
        valid,
        test,
    })
}
