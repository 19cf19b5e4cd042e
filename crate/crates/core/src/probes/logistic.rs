use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Multinomial logistic regression on z-scored features with an L2 penalty
/// on the weights and a free intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticProbe {
    /// `(K, p)`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub lambda: f64,
    mean: DVector<f64>,
    scale: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub probe: LogisticProbe,
    /// Training objective after each accepted step, starting at the initial
    /// point.
    pub losses: Vec<f64>,
}

pub const DEFAULT_MAX_ITER: usize = 500;

fn standardize(x: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - mean[c]) / scale[c])
}

fn softmax_rows(logits: &mut DMatrix<f64>) {
    for mut row in logits.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

struct Objective<'a> {
    z: &'a DMatrix<f64>,
    onehot: DMatrix<f64>,
    lambda: f64,
}

impl Objective<'_> {
    fn logits(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let mut l = self.z * w.transpose();
        for mut row in l.row_iter_mut() {
            row += b.transpose();
        }
        l
    }

    fn loss(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let l = self.logits(w, b);
        let n = l.nrows() as f64;
        let mut ce = 0.0;
        for (r, row) in l.row_iter().enumerate() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let y = self.onehot.row(r).iter().position(|&v| v == 1.0).expect("one-hot");
            ce += lse - row[y];
        }
        ce / n + 0.5 * self.lambda * w.norm_squared()
    }

    fn grad(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut p = self.logits(w, b);
        softmax_rows(&mut p);
        let n = p.nrows() as f64;
        let d = (p - &self.onehot) / n;
        let gw = d.transpose() * self.z + w * self.lambda;
        let gb = d.row_sum().transpose();
        (gw, gb)
    }
}

impl LogisticProbe {
    /// Full-batch gradient descent with Armijo backtracking, so the recorded
    /// objective never increases.
    pub fn fit(x: &DMatrix<f64>, y: &[usize], lambda: f64, max_iter: usize) -> Result<LogisticFit> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::dim("logistic", &[x.nrows(), x.ncols()], &[y.len()]));
        }
        if !(lambda >= 0.0) {
            return Err(Error::arg(format!("logistic penalty must be >= 0, got {lambda}")));
        }
        let k = y.iter().max().expect("non-empty") + 1;
        let mut seen = vec![false; k];
        y.iter().for_each(|&c| seen[c] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "training labels contain a single class ({})",
                y[0]
            )));
        }
        let (n, p) = (x.nrows(), x.ncols());
        let mean = x.row_mean().transpose();
        let scale = DVector::from_fn(p, |c, _| {
            let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if var.sqrt() > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        });
        let z = standardize(x, &mean, &scale);
        let onehot = DMatrix::from_fn(n, k, |r, c| if y[r] == c { 1.0 } else { 0.0 });
        let obj = Objective { z: &z, onehot, lambda };

        let mut w = DMatrix::zeros(k, p);
        let mut b = DVector::zeros(k);
        let mut loss = obj.loss(&w, &b);
        let mut losses = vec![loss];
        let mut step = 1.0;
        for _ in 0..max_iter {
            let (gw, gb) = obj.grad(&w, &b);
            let gnorm2 = gw.norm_squared() + gb.norm_squared();
            if gnorm2.sqrt() < 1e-9 {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let w_new = &w - &gw * step;
                let b_new = &b - &gb * step;
                let l_new = obj.loss(&w_new, &b_new);
                if l_new <= loss - 1e-4 * step * gnorm2 {
                    w = w_new;
                    b = b_new;
                    loss = l_new;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            losses.push(loss);
            step = (step * 2.0).min(1e3);
        }
        Ok(LogisticFit {
            probe: LogisticProbe {
                weights: w,
                bias: b,
                lambda,
                mean,
                scale,
            },
            losses,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::dim("logistic predict", &[x.nrows(), x.ncols()], &[self.weights.ncols()]));
        }
        let z = standardize(x, &self.mean, &self.scale);
        let mut l = z * self.weights.transpose();
        for mut row in l.row_iter_mut() {
            row += self.bias.transpose();
        }
        softmax_rows(&mut l);
        Ok(l)
    }

    /// Most probable class per row; ties go to the lowest class id.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.row_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::metrics::accuracy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<usize>) {
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(n, 3, |r, _| {
            let s = if y[r] == 0 { 1.0 } else { -1.0 };
            s + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        (x, y)
    }

    #[test]
    fn separable_set_is_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = blobs(40, &mut rng);
        let (xt, yt) = blobs(100, &mut rng);
        let fit = LogisticProbe::fit(&x, &y, 1e-6, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(accuracy(&fit.probe.predict(&xt).unwrap(), &yt).unwrap(), 1.0);
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(60, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let fit = LogisticProbe::fit(&x, &y, 0.01, 200).unwrap();
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.losses.last().unwrap() < &fit.losses[0]);
    }

    #[test]
    fn noise_features_score_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 4;
        let mut gen = |n: usize| {
            let x = DMatrix::from_fn(n, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            (x, y)
        };
        let (x, y) = gen(400);
        let (xt, yt) = gen(1000);
        let fit = LogisticProbe::fit(&x, &y, 1.0, 200).unwrap();
        let acc = accuracy(&fit.probe.predict(&xt).unwrap(), &yt).unwrap();
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / 1000.0).sqrt();
        assert!((acc - p).abs() <= 3.0 * sigma, "acc {acc}");
    }

    #[test]
    fn huge_penalty_predicts_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(50, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..50).map(|i| usize::from(i % 5 == 0)).collect();
        let fit = LogisticProbe::fit(&x, &y, 1e8, 300).unwrap();
        assert!(fit.probe.weights.amax() < 1e-6);
        let pred = fit.probe.predict(&x).unwrap();
        assert!(pred.iter().all(|&c| c == 0));
        assert_eq!(accuracy(&pred, &y).unwrap(), 0.8);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(60, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..60).map(|r| usize::from(x[(r, 0)] + 0.3 * x[(r, 1)] > 0.0)).collect();
        let shift = DMatrix::from_fn(60, 3, |_, c| 5.0 * (c as f64 + 1.0));
        let a = LogisticProbe::fit(&x, &y, 0.1, 200).unwrap();
        let b = LogisticProbe::fit(&(&x + &shift), &y, 0.1, 200).unwrap();
        assert_eq!(a.probe.predict(&x).unwrap(), b.probe.predict(&(&x + &shift)).unwrap());
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = DMatrix::from_element(5, 2, 1.0);
        assert!(matches!(
            LogisticProbe::fit(&x, &[2, 2, 2, 2, 2], 1.0, 10),
            Err(Error::DegenerateLabels(_))
        ));
    }
}
