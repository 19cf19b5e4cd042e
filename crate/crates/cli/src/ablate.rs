//! Paired ablation runs over encoder, architecture and loss variants.
//!
//! Every variant trains from the same seeds on the same data split and is
//! scored with the same probes. Deltas are relative to `full` and signed so
//! that negative means worse: `(base - v) / base` for error metrics,
//! `(v - base) / base` for accuracy.
//!
//! `ablation.csv` columns, in order:
//! `variant,status,mse,mse_delta,mae,mae_delta,acc,acc_delta,error`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use most_core::encoder::save_checkpoint;
use most_core::trainer::{train, Objective};
use most_core::{EncoderVariant, MostModel};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{CliError, PathContext, Result};
use crate::eval::{evaluate, result_rows, Evaluation, ResultRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Encoder(EncoderVariant),
    NoInstanceLoss,
    NoModeLoss,
    Mse,
    MseContrastive,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Encoder(EncoderVariant::Full),
        Variant::Encoder(EncoderVariant::M1d),
        Variant::Encoder(EncoderVariant::M2d),
        Variant::Encoder(EncoderVariant::Random),
        Variant::Encoder(EncoderVariant::Ci),
        Variant::Encoder(EncoderVariant::Cd),
        Variant::Encoder(EncoderVariant::NoTemporalEmbedding),
        Variant::Encoder(EncoderVariant::NoCausalEncoder),
        Variant::NoInstanceLoss,
        Variant::NoModeLoss,
        Variant::Mse,
        Variant::MseContrastive,
    ];

    pub const FULL: Variant = Variant::Encoder(EncoderVariant::Full);

    pub fn name(self) -> &'static str {
        match self {
            Variant::Encoder(v) => v.name(),
            Variant::NoInstanceLoss => "no-instance-loss",
            Variant::NoModeLoss => "no-mode-loss",
            Variant::Mse => "mse",
            Variant::MseContrastive => "mse+contrastive",
        }
    }

    /// The base config with this variant's switch flipped.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.model.variant = EncoderVariant::Full;
        cfg.train.objective = Objective::Contrastive;
        cfg.train.horizon = base.eval.horizon;
        match self {
            Variant::Encoder(v) => cfg.model.variant = v,
            Variant::NoInstanceLoss => cfg.train.loss.enable_instance = false,
            Variant::NoModeLoss => cfg.train.loss.enable_mode = false,
            Variant::Mse => cfg.train.objective = Objective::Mse,
            Variant::MseContrastive => cfg.train.objective = Objective::MseContrastive,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown ablation variant '{s}'")))
    }
}

/// Signed relative change of `value` against `base`, in percent; negative
/// means worse. `None` when the base is zero.
pub fn delta_pct(base: f64, value: f64, higher_is_better: bool) -> Option<f64> {
    if base == 0.0 || !base.is_finite() || !value.is_finite() {
        return None;
    }
    let d = if higher_is_better { value - base } else { base - value };
    Some(100.0 * d / base)
}

/// `(-27.5%)`, `(+3.1%)`, `(0.0%)` for an exact zero, `(-0.0%)` for a
/// loss that rounds away.
pub fn format_delta(pct: Option<f64>) -> String {
    match pct {
        None => "(n/a)".to_string(),
        Some(0.0) => "(0.0%)".to_string(),
        Some(p) if p < 0.0 => format!("({p:.1}%)"),
        Some(p) => format!("(+{p:.1}%)"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub outcome: std::result::Result<Evaluation, String>,
}

impl VariantResult {
    pub fn mse(&self) -> Option<f64> {
        self.outcome.as_ref().ok()?.forecast.as_ref()?.mse
    }

    pub fn mae(&self) -> Option<f64> {
        self.outcome.as_ref().ok()?.forecast.as_ref()?.mae
    }

    pub fn acc(&self) -> Option<f64> {
        self.outcome.as_ref().ok()?.classification.as_ref()?.acc
    }

    /// `(value, higher_is_better)` for mse, mae, acc.
    fn metrics(&self) -> [(Option<f64>, bool); 3] {
        [(self.mse(), false), (self.mae(), false), (self.acc(), true)]
    }
}

#[derive(Clone, Debug, Serialize)]
struct TableRow {
    variant: String,
    status: String,
    mse: Option<f64>,
    mse_delta: String,
    mae: Option<f64>,
    mae_delta: String,
    acc: Option<f64>,
    acc_delta: String,
    error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub results: Vec<VariantResult>,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

impl AblationReport {
    pub fn full(&self) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant == Variant::FULL && r.outcome.is_ok())
    }

    /// Whether `full` is at least as good as `other` on a majority of the
    /// metrics both report, compared at three decimals. Failed runs are not
    /// counted.
    pub fn full_best_or_tied(&self, other: &VariantResult) -> bool {
        let Some(full) = self.full() else { return false };
        if other.outcome.is_err() {
            return false;
        }
        let mut shared = 0;
        let mut wins = 0;
        for ((f, hib), (o, _)) in full.metrics().into_iter().zip(other.metrics()) {
            if let (Some(f), Some(o)) = (f, o) {
                shared += 1;
                let (f, o) = (round3(f), round3(o));
                if (hib && f >= o) || (!hib && f <= o) {
                    wins += 1;
                }
            }
        }
        shared > 0 && 2 * wins > shared
    }

    /// Number of variants, `full` included, that `full` matches or beats.
    pub fn best_or_tied_count(&self) -> usize {
        self.results.iter().filter(|r| self.full_best_or_tied(r)).count()
    }

    fn deltas(&self, r: &VariantResult) -> [String; 3] {
        let base = self.full().map(VariantResult::metrics);
        let mut out: [String; 3] = Default::default();
        for (k, (v, hib)) in r.metrics().into_iter().enumerate() {
            let b = base.and_then(|b| b[k].0);
            out[k] = match (b, v) {
                (Some(b), Some(v)) => format_delta(delta_pct(b, v, hib)),
                _ => String::new(),
            };
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).at(path)?;
        for r in &self.results {
            let [md, ad, cd] = self.deltas(r);
            w.serialize(TableRow {
                variant: r.variant.name().to_string(),
                status: if r.outcome.is_ok() { "ok" } else { "failed" }.to_string(),
                mse: r.mse(),
                mse_delta: md,
                mae: r.mae(),
                mae_delta: ad,
                acc: r.acc(),
                acc_delta: cd,
                error: r.outcome.as_ref().err().cloned().unwrap_or_default(),
            })?;
        }
        w.flush().at(path)?;
        Ok(())
    }

    /// Plain-text table with `value (delta)` cells.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | MSE | MAE | Acc |\n|---|---|---|---|\n");
        for r in &self.results {
            if let Err(e) = &r.outcome {
                s.push_str(&format!("| {} | failed: {} | | |\n", r.variant, e.replace('|', "/")));
                continue;
            }
            let d = self.deltas(r);
            let cell = |v: Option<f64>, d: &str| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3} {d}"));
            s.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.variant,
                cell(r.mse(), &d[0]),
                cell(r.mae(), &d[1]),
                cell(r.acc(), &d[2])
            ));
        }
        s.push_str(&format!(
            "\nfull best or tied: {}/{}\n",
            self.best_or_tied_count(),
            self.results.len()
        ));
        s
    }

    pub fn result_rows(&self, dataset: &str, config: &RunConfig) -> Vec<ResultRow> {
        self.results
            .iter()
            .filter_map(|r| {
                let ev = r.outcome.as_ref().ok()?;
                Some(result_rows(ev, dataset, r.variant.name(), config.eval.horizon, config.train.seed))
            })
            .flatten()
            .collect()
    }
}

fn run_variant(variant: Variant, base: &RunConfig, ds: &Dataset, checkpoint_dir: Option<&Path>) -> Result<Evaluation> {
    let cfg = variant.apply(base);
    cfg.validate()?;
    let (d1, d2, _) = ds.dims();
    let model = MostModel::new(cfg.model.clone(), d1, d2)?;
    let (model, _) = train(ds.train_windows(), model, &cfg.train, None)?;
    if let Some(dir) = checkpoint_dir {
        let path = dir.join(format!("{}.ckpt", variant.name()));
        save_checkpoint(&path, &model).at(&path)?;
    }
    evaluate(&model, ds, cfg.eval.horizon, &cfg.probe)
}

/// Trains and probes every variant in order. A failing variant records its
/// error and the remaining ones still run.
pub fn run_ablation(base: &RunConfig, ds: &Dataset, variants: &[Variant], checkpoint_dir: Option<&Path>) -> AblationReport {
    if let Some(dir) = checkpoint_dir {
        if let Err(e) = fs::create_dir_all(dir) {
            log::warn!("cannot create {}: {e}", dir.display());
        }
    }
    let results = variants
        .iter()
        .map(|&variant| {
            log::info!("ablation variant {variant}");
            let outcome = run_variant(variant, base, ds, checkpoint_dir).map_err(|e| {
                log::warn!("variant {variant} failed: {e}");
                e.to_string()
            });
            VariantResult { variant, outcome }
        })
        .collect();
    AblationReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;
    use most_core::probes::Metrics;

    #[test]
    fn delta_convention() {
        assert_eq!(format_delta(delta_pct(0.636, 0.811, false)), "(-27.5%)");
        assert_eq!(format_delta(delta_pct(0.636, 0.636, false)), "(0.0%)");
        assert_eq!(format_delta(delta_pct(0.732, 0.7319, true)), "(-0.0%)");
        assert_eq!(format_delta(delta_pct(0.5, 0.6, true)), "(+20.0%)");
        assert_eq!(format_delta(delta_pct(0.0, 0.6, true)), "(n/a)");
    }

    #[test]
    fn names_round_trip_and_are_unique() {
        let mut names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 12);
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn switches_touch_one_thing() {
        let base = RunConfig::default();
        let c = Variant::NoModeLoss.apply(&base);
        assert!(!c.train.loss.enable_mode && c.train.loss.enable_instance);
        assert_eq!(Variant::Mse.apply(&base).train.objective, Objective::Mse);
        assert_eq!(Variant::Encoder(EncoderVariant::Cd).apply(&base).model.variant, EncoderVariant::Cd);
        assert_eq!(Variant::FULL.apply(&base).model, base.model);
    }

    fn ev(mse: f64, mae: f64, acc: f64) -> Evaluation {
        Evaluation {
            classification: Some(Metrics {
                acc: Some(acc),
                ..Default::default()
            }),
            forecast: Some(Metrics {
                mse: Some(mse),
                mae: Some(mae),
                ..Default::default()
            }),
        }
    }

    #[test]
    fn best_or_tied_counting() {
        let report = AblationReport {
            results: vec![
                VariantResult { variant: Variant::FULL, outcome: Ok(ev(0.5, 0.5, 0.9)) },
                VariantResult { variant: Variant::Mse, outcome: Ok(ev(0.6, 0.4, 0.8)) },
                VariantResult { variant: Variant::NoModeLoss, outcome: Ok(ev(0.4, 0.4, 0.9)) },
                VariantResult { variant: Variant::MseContrastive, outcome: Ok(ev(0.50001, 0.4, 0.7)) },
                VariantResult { variant: Variant::NoInstanceLoss, outcome: Err("boom".into()) },
            ],
        };
        // self, mse (2 of 3), tie on rounded mse plus acc
        assert_eq!(report.best_or_tied_count(), 3);
        let md = report.to_markdown();
        assert!(md.contains("0.600 (-20.0%)"));
        assert!(md.contains("failed: boom"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| variant")).count(), 5);
    }
}
