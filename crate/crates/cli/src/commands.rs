//! One function per subcommand. Each creates its run directory first, so a
//! failed run still leaves its manifest behind.

use std::fs;
use std::path::{Path, PathBuf};

use most_core::encoder::load_checkpoint;
use most_core::trainer::{train, TrainReport};
use most_core::ttsdata::{generate_synthetic, ingest, write_binary, write_labels, SeriesTensor};
use most_core::MostModel;

use crate::ablate::{run_ablation, AblationReport, Variant};
use crate::casestudy::{case_study, CaseStudy};
use crate::config::{DataSource, RunConfig};
use crate::data::load_dataset;
use crate::error::{CliError, PathContext, Result};
use crate::eval::{evaluate, result_rows, write_results, Evaluation, ResultRow};
use crate::manifest::{create_run, RunDir};

pub const SERIES_FILE: &str = "series.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const REPS_FILE: &str = "reps.bin";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Writes the synthetic windows as one series concatenated along time,
/// with one label per window, to `data/`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<RunDir> {
    let (run, _) = create_run(out, "synth", cfg, &[])?;
    let windows = generate_synthetic(&cfg.data.synthetic)?;
    let series = SeriesTensor::from_windows(&windows)?;
    let labels: Vec<usize> = windows.iter().filter_map(|w| w.label).collect();
    let path = run.data().join(SERIES_FILE);
    write_binary(&path, &series).at(&path)?;
    let path = run.data().join(LABELS_FILE);
    write_labels(&path, &labels).at(&path)?;
    Ok(run)
}

/// Validates and normalizes a file dataset, writing its statistics and the
/// split sizes.
pub fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<RunDir> {
    let spec = match (cfg.data.source, &cfg.data.file) {
        (DataSource::File, Some(spec)) => spec,
        _ => return Err(CliError::Config("ingest needs data.source = \"file\" and a [data.file] section".into())),
    };
    let (run, _) = create_run(out, "ingest", cfg, &[])?;
    let ds = ingest(spec)?;
    let path = run.data().join("stats.csv");
    ds.stats.write_csv(&path).at(&path)?;
    let path = run.reports().join("ingest.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["split", "windows"])?;
    for (name, r) in [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)] {
        w.write_record([name.to_string(), r.len().to_string()])?;
    }
    w.flush().at(&path)?;
    Ok(run)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run: RunDir,
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

/// Trains on the train split; checkpoints go to `checkpoints/`, the loss
/// curve to `reports/train_loss.csv`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let (run, _) = create_run(out, "train", cfg, &[])?;
    let ds = load_dataset(cfg)?;
    let (d1, d2, _) = ds.dims();
    let model = MostModel::new(cfg.model.clone(), d1, d2)?;
    let (_, report) = train(ds.train_windows(), model, &cfg.train, Some(&run.checkpoints()))?;
    let path = run.reports().join("train_loss.csv");
    report.write_csv(&path).at(&path)?;
    let checkpoint = report
        .final_checkpoint
        .clone()
        .unwrap_or_else(|| run.checkpoints().join(FINAL_CHECKPOINT));
    Ok(TrainOutcome { run, checkpoint, report })
}

fn open_checkpoint(path: &Path) -> Result<MostModel> {
    if !path.is_file() {
        return Err(CliError::Io(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path).at(path)
}

/// Encodes every window with a frozen checkpoint. `reps/reps.bin` uses the
/// tensor container with dims `(windows, h, w)`.
pub fn cmd_encode(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<RunDir> {
    let model = open_checkpoint(checkpoint)?;
    let (run, _) = create_run(out, "encode", cfg, &[checkpoint])?;
    let ds = load_dataset(cfg)?;
    let (_, _, w) = ds.dims();
    let h = model.config.h;
    let mut values = Vec::with_capacity(ds.windows.len() * h * w);
    for x in &ds.windows {
        let r = most_core::encoder::forward(&model, x, 0)?;
        values.extend_from_slice(r.v.data());
    }
    let reps = SeriesTensor::new(ds.windows.len(), h, w, values)?;
    let path = run.reps().join(REPS_FILE);
    write_binary(&path, &reps).at(&path)?;
    if let Some(labels) = ds.labels(&(0..ds.windows.len())) {
        let path = run.reps().join(LABELS_FILE);
        write_labels(&path, &labels).at(&path)?;
    }
    Ok(run)
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub run: RunDir,
    pub evaluation: Evaluation,
    pub rows: Vec<ResultRow>,
}

/// Probes a checkpoint, or a freshly initialized encoder from the config
/// when none is given. Results go to `reports/results.csv`.
pub fn cmd_probe(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<ProbeOutcome> {
    let model = checkpoint.map(open_checkpoint).transpose()?;
    let extra: Vec<&Path> = checkpoint.into_iter().collect();
    let (run, _) = create_run(out, "probe", cfg, &extra)?;
    let ds = load_dataset(cfg)?;
    let model = match model {
        Some(m) => m,
        None => {
            let (d1, d2, _) = ds.dims();
            MostModel::new(cfg.model.clone(), d1, d2)?
        }
    };
    let evaluation = evaluate(&model, &ds, cfg.eval.horizon, &cfg.probe)?;
    let rows = result_rows(&evaluation, &ds.name, model.config.variant.name(), cfg.eval.horizon, cfg.train.seed);
    write_results(&run.reports().join("results.csv"), &rows)?;
    Ok(ProbeOutcome { run, evaluation, rows })
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub run: RunDir,
    pub report: AblationReport,
}

/// Runs the ablation variants and writes `reports/ablation.csv`,
/// `reports/ablation.md` and `reports/results.csv`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, variants: &[Variant]) -> Result<AblationOutcome> {
    if variants.is_empty() {
        return Err(CliError::Config("no ablation variants requested".into()));
    }
    let (run, _) = create_run(out, "ablate", cfg, &[])?;
    let ds = load_dataset(cfg)?;
    let report = run_ablation(cfg, &ds, variants, Some(&run.checkpoints()));
    report.write_csv(&run.reports().join("ablation.csv"))?;
    let md = run.reports().join("ablation.md");
    fs::write(&md, report.to_markdown()).at(&md)?;
    write_results(&run.reports().join("results.csv"), &report.result_rows(&ds.name, cfg))?;
    Ok(AblationOutcome { run, report })
}

#[derive(Clone, Debug)]
pub struct CaseStudyOutcome {
    pub run: RunDir,
    pub study: CaseStudy,
}

/// PCA scatter and per-mode probes from a trained checkpoint.
pub fn cmd_casestudy(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<CaseStudyOutcome> {
    let model = open_checkpoint(checkpoint)?;
    let (run, _) = create_run(out, "casestudy", cfg, &[checkpoint])?;
    let ds = load_dataset(cfg)?;
    let study = case_study(&model, &ds, &cfg.probe)?;
    study.write(&run.reports())?;
    Ok(CaseStudyOutcome { run, study })
}
