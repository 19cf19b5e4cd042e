use std::ops::Range;

use most_core::probes::RawScale;
use most_core::ttsdata::{generate_synthetic, ingest};
use most_core::TtsWindow;

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, Result};

/// Windows with contiguous train / valid / test index ranges.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub windows: Vec<TtsWindow>,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
    /// Per-variable scale back to original units, when the data was
    /// normalized on ingestion.
    pub raw_scale: Option<RawScale>,
}

impl Dataset {
    pub fn part(&self, r: &Range<usize>) -> &[TtsWindow] {
        &self.windows[r.clone()]
    }

    pub fn train_windows(&self) -> &[TtsWindow] {
        self.part(&self.train)
    }

    /// Labels of `r`, or `None` when any window is unlabelled.
    pub fn labels(&self, r: &Range<usize>) -> Option<Vec<usize>> {
        self.part(r).iter().map(|w| w.label).collect()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let x = &self.windows[0];
        (x.d1(), x.d2(), x.len())
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let name = cfg.dataset_name();
    let ds = match cfg.data.source {
        DataSource::Synthetic => {
            let windows = generate_synthetic(&cfg.data.synthetic)?;
            let (a, b) = cfg.data.splits.boundaries(windows.len());
            let n = windows.len();
            Dataset {
                name,
                windows,
                train: 0..a,
                valid: a..b,
                test: b..n,
                raw_scale: None,
            }
        }
        DataSource::File => {
            let spec = cfg
                .data
                .file
                .as_ref()
                .ok_or_else(|| CliError::Config("missing [data.file]".into()))?;
            let d = ingest(spec)?;
            Dataset {
                name,
                windows: d.windows,
                train: d.train,
                valid: d.valid,
                test: d.test,
                raw_scale: Some(RawScale { std: d.stats.std }),
            }
        }
    };
    if ds.train.is_empty() {
        return Err(CliError::Data("train split holds no windows".into()));
    }
    Ok(ds)
}
