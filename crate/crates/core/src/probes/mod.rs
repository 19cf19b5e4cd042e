//! Frozen-representation evaluation: logistic classification on
//! time-max-pooled representations and ridge forecasting from the last
//! timestamp, with the penalty picked on a validation split.

mod logistic;
pub mod metrics;
mod ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use logistic::{LogisticFit, LogisticProbe, DEFAULT_MAX_ITER};
pub use ridge::RidgeProbe;

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lambdas: Vec<f64>,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambdas: (-3..=3).map(|e| 10f64.powi(e)).collect(),
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda grid must be non-empty and >= 0: {:?}", self.lambdas)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub mse_per_step: Vec<f64>,
    pub mae_per_step: Vec<f64>,
    pub raw_mse: Option<f64>,
    pub raw_mae: Option<f64>,
    pub lambda: f64,
}

/// Per-row maximum over timestamps of an `(h, w)` representation.
pub fn max_pool_time(rep: &Tensor) -> Vec<f64> {
    (0..rep.rows())
        .map(|r| rep.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Final column of an `(h, w)` representation.
pub fn last_timestamp(rep: &Tensor) -> Vec<f64> {
    rep.column(rep.cols() - 1)
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::arg("feature rows have differing lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]))
}

fn log_loss(probe: &LogisticProbe, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    let p = probe.predict_proba(x)?;
    Ok(y.iter()
        .enumerate()
        .map(|(r, &c)| -(if c < p.ncols() { p[(r, c)] } else { 0.0 }).max(1e-300).ln())
        .sum::<f64>()
        / y.len() as f64)
}

/// Fits a logistic probe per grid penalty, keeps the one with the best
/// validation accuracy (lower validation log-loss breaks ties) and reports
/// test accuracy. Without a validation split the training split scores the
/// grid.
pub fn classify(
    train: (&DMatrix<f64>, &[usize]),
    valid: Option<(&DMatrix<f64>, &[usize])>,
    test: (&DMatrix<f64>, &[usize]),
    config: &ProbeConfig,
) -> Result<Metrics> {
    config.validate()?;
    let (vx, vy) = valid.filter(|(_, y)| !y.is_empty()).unwrap_or(train);
    let mut best: Option<(f64, f64, LogisticProbe)> = None;
    for &lambda in &config.lambdas {
        let fit = LogisticProbe::fit(train.0, train.1, lambda, config.max_iter)?;
        let acc = metrics::accuracy(&fit.probe.predict(vx)?, vy)?;
        let ll = log_loss(&fit.probe, vx, vy)?;
        let better = match &best {
            None => true,
            Some((a, l, _)) => acc > *a || (acc == *a && ll < *l),
        };
        if better {
            best = Some((acc, ll, fit.probe));
        }
    }
    let (_, _, probe) = best.expect("non-empty grid");
    let acc = metrics::accuracy(&probe.predict(test.0)?, test.1)?;
    Ok(Metrics {
        acc: Some(acc),
        lambda: probe.lambda,
        ..Default::default()
    })
}

/// Per-variable scale used to report errors in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawScale {
    pub std: Vec<f64>,
}

/// Ridge forecasting. Target columns are variable-major: column
/// `var * horizon + step`. The penalty with the lowest validation MSE wins.
pub fn forecast(
    train: (&DMatrix<f64>, &DMatrix<f64>),
    valid: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    test: (&DMatrix<f64>, &DMatrix<f64>),
    horizon: usize,
    config: &ProbeConfig,
    raw: Option<&RawScale>,
) -> Result<Metrics> {
    config.validate()?;
    let out = train.1.ncols();
    if horizon == 0 || !out.is_multiple_of(horizon) || test.1.ncols() != out {
        return Err(Error::arg(format!("{out} target columns do not split into horizon {horizon}")));
    }
    let (vx, vy) = valid.filter(|(x, _)| x.nrows() > 0).unwrap_or(train);
    let mut best: Option<(f64, RidgeProbe)> = None;
    for &lambda in &config.lambdas {
        let probe = RidgeProbe::fit(train.0, train.1, lambda)?;
        let pred = probe.predict(vx)?;
        let m = metrics::mse(pred.as_slice(), vy.as_slice())?;
        if best.as_ref().is_none_or(|(b, _)| m < *b) {
            best = Some((m, probe));
        }
    }
    let (_, probe) = best.expect("non-empty grid");
    let pred = probe.predict(test.0)?;
    let truth = test.1;
    let vars = out / horizon;
    let step_cols = |s: usize| -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for v in 0..vars {
            p.extend(pred.column(v * horizon + s).iter());
            t.extend(truth.column(v * horizon + s).iter());
        }
        (p, t)
    };
    let mut mse_per_step = Vec::with_capacity(horizon);
    let mut mae_per_step = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let (p, t) = step_cols(s);
        mse_per_step.push(metrics::mse(&p, &t)?);
        mae_per_step.push(metrics::mae(&p, &t)?);
    }
    let (raw_mse, raw_mae) = match raw {
        Some(scale) => {
            if scale.std.len() != vars {
                return Err(Error::dim("raw scale", &[scale.std.len()], &[vars]));
            }
            let (mut se, mut ae) = (0.0, 0.0);
            for c in 0..out {
                let sd = scale.std[c / horizon];
                for r in 0..pred.nrows() {
                    let e = (pred[(r, c)] - truth[(r, c)]) * sd;
                    se += e * e;
                    ae += e.abs();
                }
            }
            let n = pred.len() as f64;
            (Some(se / n), Some(ae / n))
        }
        None => (None, None),
    };
    Ok(Metrics {
        acc: None,
        mse: Some(metrics::mse(pred.as_slice(), truth.as_slice())?),
        mae: Some(metrics::mae(pred.as_slice(), truth.as_slice())?),
        mse_per_step,
        mae_per_step,
        raw_mse,
        raw_mae,
        lambda: probe.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pooling_helpers() {
        let t = Tensor::from_rows(&[vec![1.0, 3.0, 2.0], vec![-1.0, -4.0, -2.0]]).unwrap();
        assert_eq!(max_pool_time(&t), vec![3.0, -1.0]);
        assert_eq!(last_timestamp(&t), vec![2.0, -2.0]);
        assert!(to_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn classify_picks_a_grid_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut gen = |n: usize| {
            let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let x = DMatrix::from_fn(n, 2, |r, c| if c == y[r] % 2 { y[r] as f64 } else { 0.0 } + rng.random_range(-0.1..0.1));
            (x, y)
        };
        let (x, y) = gen(60);
        let (vx, vy) = gen(30);
        let (tx, ty) = gen(30);
        let m = classify((&x, &y), Some((&vx, &vy)), (&tx, &ty), &ProbeConfig::default()).unwrap();
        assert_eq!(m.acc, Some(1.0));
        assert!(ProbeConfig::default().lambdas.contains(&m.lambda));
    }

    #[test]
    fn forecast_metrics_and_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (vars, horizon) = (2, 3);
        let w = DMatrix::from_fn(4, vars * horizon, |_, _| rng.random_range(-1.0..1.0));
        let mut gen = |n: usize| {
            let x = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
            let y = &x * &w;
            (x, y)
        };
        let (x, y) = gen(50);
        let (tx, ty) = gen(20);
        let cfg = ProbeConfig {
            lambdas: vec![0.0],
            ..Default::default()
        };
        let raw = RawScale { std: vec![2.0, 3.0] };
        let m = forecast((&x, &y), None, (&tx, &ty), horizon, &cfg, Some(&raw)).unwrap();
        assert!(m.mse.unwrap() < 1e-10);
        assert_eq!(m.mse_per_step.len(), horizon);
        assert!(m.raw_mae.unwrap() < 1e-5);

        // constant offset of one unit on every target
        let shifted = ty.map(|v| v + 1.0);
        let m = forecast((&x, &y), None, (&tx, &shifted), horizon, &cfg, Some(&raw)).unwrap();
        assert!((m.mse.unwrap() - 1.0).abs() < 1e-9);
        assert!(m.mae_per_step.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!((m.raw_mse.unwrap() - (4.0 + 9.0) / 2.0).abs() < 1e-8);
        assert!(forecast((&x, &y), None, (&tx, &ty), 4, &cfg, None).is_err());
    }
}
