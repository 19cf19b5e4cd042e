//! Frozen-encoder evaluation and the long-form results table.
//!
//! Results CSV columns, in order:
//! `dataset,variant,task,horizon,seed,metric,value,lambda`. `task` is
//! `classification` (metric `acc`) or `forecasting` (metrics `mse`, `mae`,
//! and `raw_mse`, `raw_mae` when the data was normalized). `horizon` is
//! empty for classification.

use std::path::Path;

use most_core::encoder::forward;
use most_core::probes::{classify, forecast, last_timestamp, max_pool_time, to_matrix, Metrics, ProbeConfig};
use most_core::trainer::split_forecast;
use most_core::MostModel;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CliError, PathContext, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub classification: Option<Metrics>,
    pub forecast: Option<Metrics>,
}

/// Time-max-pooled full representation per window.
pub fn pooled_features(model: &MostModel, windows: &[most_core::TtsWindow]) -> Result<Vec<Vec<f64>>> {
    windows
        .iter()
        .map(|x| Ok(max_pool_time(&forward(model, x, 0)?.v)))
        .collect()
}

/// Context features and flattened futures, one row per window.
type ForecastRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn forecast_features(model: &MostModel, windows: &[most_core::TtsWindow], horizon: usize) -> Result<ForecastRows> {
    let mut xs = Vec::with_capacity(windows.len());
    let mut ys = Vec::with_capacity(windows.len());
    for x in windows {
        let (ctx, fut) = split_forecast(x, horizon)?;
        xs.push(last_timestamp(&forward(model, &ctx, 0)?.v));
        ys.push(fut);
    }
    Ok((xs, ys))
}

/// Logistic probe on pooled representations when every window is labelled,
/// ridge forecasting of the last `horizon` steps when the window leaves room
/// for context. Parts with an empty test split are skipped.
pub fn evaluate(model: &MostModel, ds: &Dataset, horizon: usize, probe: &ProbeConfig) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    if ds.test.is_empty() {
        log::warn!("test split is empty; nothing to evaluate");
        return Ok(out);
    }
    if let (Some(ytr), Some(yva), Some(yte)) = (ds.labels(&ds.train), ds.labels(&ds.valid), ds.labels(&ds.test)) {
        let xtr = to_matrix(&pooled_features(model, ds.part(&ds.train))?)?;
        let xva = to_matrix(&pooled_features(model, ds.part(&ds.valid))?)?;
        let xte = to_matrix(&pooled_features(model, ds.part(&ds.test))?)?;
        let valid = (!yva.is_empty()).then_some((&xva, yva.as_slice()));
        out.classification = Some(classify((&xtr, &ytr), valid, (&xte, &yte), probe).map_err(|e| CliError::from(e).context("classification probe"))?);
    }
    let (_, _, w) = ds.dims();
    if horizon + 2 <= w {
        let (xtr, ytr) = forecast_features(model, ds.part(&ds.train), horizon)?;
        let (xva, yva) = forecast_features(model, ds.part(&ds.valid), horizon)?;
        let (xte, yte) = forecast_features(model, ds.part(&ds.test), horizon)?;
        let (xtr, ytr) = (to_matrix(&xtr)?, to_matrix(&ytr)?);
        let (xte, yte) = (to_matrix(&xte)?, to_matrix(&yte)?);
        let valid = if xva.is_empty() {
            None
        } else {
            Some((to_matrix(&xva)?, to_matrix(&yva)?))
        };
        let m = forecast(
            (&xtr, &ytr),
            valid.as_ref().map(|(x, y)| (x, y)),
            (&xte, &yte),
            horizon,
            probe,
            ds.raw_scale.as_ref(),
        )
        .map_err(|e| CliError::from(e).context("forecasting probe"))?;
        out.forecast = Some(m);
    } else {
        log::warn!("horizon {horizon} leaves no context in windows of length {w}; skipping forecasting");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub variant: String,
    pub task: String,
    pub horizon: Option<usize>,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub lambda: f64,
}

pub fn result_rows(ev: &Evaluation, dataset: &str, variant: &str, horizon: usize, seed: u64) -> Vec<ResultRow> {
    let row = |task: &str, h: Option<usize>, metric: &str, value: f64, lambda: f64| ResultRow {
        dataset: dataset.to_string(),
        variant: variant.to_string(),
        task: task.to_string(),
        horizon: h,
        seed,
        metric: metric.to_string(),
        value,
        lambda,
    };
    let mut rows = Vec::new();
    if let Some(m) = &ev.classification {
        if let Some(acc) = m.acc {
            rows.push(row("classification", None, "acc", acc, m.lambda));
        }
    }
    if let Some(m) = &ev.forecast {
        for (name, v) in [("mse", m.mse), ("mae", m.mae), ("raw_mse", m.raw_mse), ("raw_mae", m.raw_mae)] {
            if let Some(v) = v {
                rows.push(row("forecasting", Some(horizon), name, v, m.lambda));
            }
        }
    }
    rows
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    if rows.is_empty() {
        w.write_record(["dataset", "variant", "task", "horizon", "seed", "metric", "value", "lambda"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).at(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}
