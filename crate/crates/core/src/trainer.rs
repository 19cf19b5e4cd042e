//! Self-supervised training loop with Adam updates and deterministic replay.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::{mse_supervised_loss, total_loss, ContrastBatch, LossValues, LossWeights};
use crate::encoder::{forward_tape, save_checkpoint, MostModel, RepVars};
use crate::error::{Error, Result};
use crate::ndnum::{Tape, Tensor, Var};
use crate::ttsdata::{default_min_overlap, sample_crop_with_overlap, TtsWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Contrastive,
    /// Supervised forecasting of the last `horizon` steps from the rest.
    Mse,
    MseContrastive,
}

impl Objective {
    pub fn uses_mse(self) -> bool {
        matches!(self, Objective::Mse | Objective::MseContrastive)
    }

    pub fn uses_contrast(self) -> bool {
        matches!(self, Objective::Contrastive | Objective::MseContrastive)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub objective: Objective,
    /// Forecast length for the supervised objectives.
    pub horizon: usize,
    /// Shortest crop overlap; `None` means `max(1, w / 8)`.
    pub min_overlap: Option<usize>,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            loss: LossWeights::default(),
            objective: Objective::Contrastive,
            horizon: 1,
            min_overlap: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.objective.uses_mse() && self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossValues,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss.total)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "epoch,loss_total,loss_instance,loss_mode1,loss_mode2,seconds")?;
        for e in &self.epochs {
            writeln!(
                f,
                "{},{},{},{},{},{:.6}",
                e.epoch, e.loss.total, e.loss.instance, e.loss.mode1, e.loss.mode2, e.seconds
            )?;
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: &TrainConfig, sizes: &[usize]) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k].data());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *w -= self.lr * (update + self.weight_decay * *w);
            }
        }
    }
}

/// Linear forecasting head on last-timestamp representations, used by the
/// supervised objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct MseHead {
    /// `(d1 * d2 * horizon, h + 1)`, intercept in the last column.
    pub weights: Tensor,
    pub horizon: usize,
}

/// Splits a window into its context and the flattened `(d1 * d2 * horizon)`
/// future targets, ordered variable-major.
pub fn split_forecast(x: &TtsWindow, horizon: usize) -> Result<(TtsWindow, Vec<f64>)> {
    let w = x.len();
    if horizon == 0 || horizon + 2 > w {
        return Err(Error::arg(format!("horizon {horizon} leaves no context in a window of {w}")));
    }
    let ctx = x.time_range(0, w - horizon)?;
    let fut = x.time_range(w - horizon, w)?;
    Ok((ctx, fut.values().to_vec()))
}

/// Tape, objective, its parts, encoder parameter handles, head handle.
type Built = (Tape, Var, LossValues, Vec<Var>, Option<Var>);

struct Step<'a> {
    model: &'a MostModel,
    head: Option<&'a Tensor>,
    config: &'a TrainConfig,
}

impl Step<'_> {
    /// Builds the batch objective on a fresh tape.
    fn run(&self, batch: &[&TtsWindow], rng: &mut ChaCha8Rng) -> Result<Built> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let head_var = self.head.map(|h| tape.param(h.clone()));
        let mut parts = LossValues::default();
        let mut terms: Vec<Var> = Vec::new();

        if self.config.objective.uses_contrast() {
            let w = batch[0].len();
            let min_overlap = self.config.min_overlap.unwrap_or_else(|| default_min_overlap(w)).min(w);
            let n = rng.random_range(min_overlap.max(1)..=w);
            let mut crops = Vec::with_capacity(batch.len());
            let mut v1: Vec<RepVars> = Vec::with_capacity(batch.len());
            let mut v2: Vec<RepVars> = Vec::with_capacity(batch.len());
            for x in batch {
                let crop = sample_crop_with_overlap(w, n, rng)?;
                let (a, b) = crop.views(x)?;
                v1.push(forward_tape(&mut tape, &bound, &a, crop.a1)?);
                v2.push(forward_tape(&mut tape, &bound, &b, crop.a2)?);
                crops.push(crop);
            }
            let cb = ContrastBatch::from_views(&mut tape, &v1, &v2, &crops)?;
            let lt = total_loss(&mut tape, &cb, &self.config.loss)?;
            parts = lt.values(&tape);
            terms.push(lt.total);
        }

        if let Some(hv) = head_var {
            let horizon = self.config.horizon;
            let mut last = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for x in batch {
                let (ctx, fut) = split_forecast(x, horizon)?;
                let r = forward_tape(&mut tape, &bound, &ctx, 0)?;
                let c = ctx.len();
                last.push(tape.slice_cols(r.v, c - 1, c)?);
                targets.push(fut);
            }
            let out = targets[0].len();
            let mut t = Tensor::zeros(&[out, batch.len()]);
            for (s, fut) in targets.iter().enumerate() {
                for (o, &v) in fut.iter().enumerate() {
                    t.set(o, s, v);
                }
            }
            let mse = mse_supervised_loss(&mut tape, &last, hv, &t)?;
            terms.push(mse);
        }

        let total = match terms.as_slice() {
            [a] => *a,
            [a, b] => tape.add(*a, *b)?,
            _ => unreachable!("objective has one or two terms"),
        };
        parts.total = tape.value(total).item();
        Ok((tape, total, parts, bound.vars, head_var))
    }
}

/// Trains `model` on `windows` and returns it with the per-epoch report.
///
/// Every batch draws one overlap length and then one crop pair per window
/// with that overlap. With a checkpoint directory, `epoch-<k>.ckpt` files are
/// written at the configured cadence and `final.ckpt` at the end.
pub fn train(
    windows: &[TtsWindow],
    mut model: MostModel,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(MostModel, TrainReport)> {
    config.validate()?;
    let first = windows.first().ok_or_else(|| Error::Data("no training windows".into()))?;
    let w = first.len();
    for x in windows {
        if x.len() != w || x.d1() != model.d1 || x.d2() != model.d2 {
            return Err(Error::Data(format!(
                "window ({}, {}, {}) does not match ({}, {}, {w})",
                x.d1(),
                x.d2(),
                x.len(),
                model.d1,
                model.d2
            )));
        }
    }
    if w > model.config.max_window {
        return Err(Error::Config(format!(
            "window length {w} exceeds max_window {}",
            model.config.max_window
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = if config.objective.uses_mse() {
        let out = model.d1 * model.d2 * config.horizon;
        let h = model.config.h;
        Some(MseHead {
            weights: Tensor::uniform(&[out, h + 1], 1.0 / ((h + 1) as f64).sqrt(), &mut rng),
            horizon: config.horizon,
        })
    } else {
        None
    };
    let mut sizes: Vec<usize> = model.params.iter().map(|p| p.value.numel()).collect();
    if let Some(h) = &head {
        sizes.push(h.weights.numel());
    }
    let mut adam = Adam::new(config, &sizes);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut report = TrainReport::default();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossValues::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TtsWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let step = Step {
                model: &model,
                head: head.as_ref().map(|h| &h.weights),
                config,
            };
            let (mut tape, total, parts, vars, head_var) = step.run(&batch, &mut rng)?;
            if !parts.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    msg: format!("loss is {}", parts.total),
                });
            }
            tape.backward(total)?;
            let mut grads: Vec<Tensor> = vars
                .iter()
                .zip(&model.params)
                .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
                .collect();
            if let (Some(hv), Some(h)) = (head_var, &head) {
                grads.push(tape.grad(hv).unwrap_or_else(|| Tensor::zeros(h.weights.shape())));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    msg: "non-finite gradient".into(),
                });
            }
            let params = model
                .params
                .iter_mut()
                .map(|p| &mut p.value)
                .chain(head.as_mut().map(|h| &mut h.weights));
            adam.step(params, &grads);
            sum.total += parts.total;
            sum.instance += parts.instance;
            sum.mode1 += parts.mode1;
            sum.mode2 += parts.mode2;
            batches += 1;
        }
        let nb = batches as f64;
        let loss = LossValues {
            total: sum.total / nb,
            instance: sum.instance / nb,
            mode1: sum.mode1 / nb,
            mode2: sum.mode2 / nb,
        };
        let seconds = started.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {:.6} ({seconds:.2}s)", loss.total);
        report.epochs.push(EpochStats { epoch, loss, seconds });
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("epoch-{}.ckpt", epoch + 1)), &model)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("final.ckpt");
        save_checkpoint(&path, &model)?;
        report.final_checkpoint = Some(path);
    }
    Ok((model, report))
}
