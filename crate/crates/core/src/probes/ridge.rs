use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Multi-output ridge regression with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeProbe {
    /// `(p, out)`
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
    /// True when the system was solved by pseudo-inverse.
    pub used_pinv: bool,
}

const RCOND_MIN: f64 = 1e-12;

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = m.row_mean().transpose();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    (c, mean)
}

impl RidgeProbe {
    /// Solves `(XcᵀXc + λI) W = XcᵀYc` on centered data; `x` is `(n, p)`,
    /// `y` is `(n, out)`.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::dim("ridge", &[x.nrows(), x.ncols()], &[y.nrows(), y.ncols()]));
        }
        if !(lambda >= 0.0) {
            return Err(Error::arg(format!("ridge penalty must be >= 0, got {lambda}")));
        }
        let (xc, x_mean) = centered(x);
        let (yc, y_mean) = centered(y);
        let p = x.ncols();
        let a = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
        let b = xc.transpose() * &yc;
        let chol = if lambda > 0.0 { a.clone().cholesky() } else { None };
        let solved = chol.and_then(|c| {
            let d = c.l().diagonal();
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            ((lo / hi).powi(2) > RCOND_MIN).then(|| c.solve(&b))
        });
        let (weights, used_pinv) = match solved {
            Some(w) => (w, false),
            None => {
                log::warn!("ridge system at lambda={lambda} is singular or ill-conditioned; using pseudo-inverse");
                let pinv = a
                    .svd(true, true)
                    .pseudo_inverse(1e-12 * (1.0 + lambda))
                    .map_err(|e| Error::Data(format!("pseudo-inverse failed: {e}")))?;
                (pinv * b, true)
            }
        };
        let intercept = &y_mean - weights.transpose() * &x_mean;
        Ok(Self {
            weights,
            intercept,
            lambda,
            used_pinv,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::dim("ridge predict", &[x.nrows(), x.ncols()], &[self.weights.nrows()]));
        }
        let mut out = x * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        Ok(out)
    }

    /// `‖(XcᵀXc + λI)W − XcᵀYc‖ / ‖XcᵀYc‖`.
    pub fn normal_equation_residual(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let (xc, _) = centered(x);
        let (yc, _) = centered(y);
        let p = x.ncols();
        let a = xc.transpose() * &xc + DMatrix::identity(p, p) * self.lambda;
        let b = xc.transpose() * &yc;
        (a * &self.weights - &b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(30, 5, &mut rng);
        let w = random(5, 2, &mut rng);
        let mut y = &x * &w;
        for mut r in y.row_iter_mut() {
            r[0] += 0.7;
        }
        let probe = RidgeProbe::fit(&x, &y, 0.0).unwrap();
        let pred = probe.predict(&x).unwrap();
        let mse = (pred - &y).map(|v| v * v).mean();
        assert!(mse < 1e-10);
        assert!((probe.weights - w).amax() < 1e-8);
    }

    #[test]
    fn huge_penalty_predicts_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(25, 4, &mut rng);
        let y = DMatrix::from_element(25, 1, 3.25);
        let probe = RidgeProbe::fit(&x, &y, 1e12).unwrap();
        let pred = probe.predict(&random(10, 4, &mut rng)).unwrap();
        assert!(pred.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn matches_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(20, 8, &mut rng);
        let y = random(20, 1, &mut rng);
        let lambda = 0.3;
        let probe = RidgeProbe::fit(&x, &y, lambda).unwrap();
        // minimize ‖Xc w − yc‖² + λ‖w‖² by plain gradient descent
        let (xc, _) = centered(&x);
        let (yc, _) = centered(&y);
        let a = xc.transpose() * &xc + DMatrix::identity(8, 8) * lambda;
        let b = xc.transpose() * &yc;
        let step = 1.0 / a.clone().symmetric_eigenvalues().max();
        let mut w = DMatrix::zeros(8, 1);
        for _ in 0..200_000 {
            let g = &a * &w - &b;
            if g.norm() < 1e-14 {
                break;
            }
            w -= g * step;
        }
        assert!((probe.weights - w).amax() < 1e-6);
    }

    #[test]
    fn normal_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(40, 6, &mut rng);
        let y = random(40, 3, &mut rng);
        for lambda in [1e-3, 1.0, 1e3] {
            let probe = RidgeProbe::fit(&x, &y, lambda).unwrap();
            assert!(!probe.used_pinv);
            assert!(probe.normal_equation_residual(&x, &y) < 1e-8);
        }
    }

    #[test]
    fn singular_design_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random(10, 2, &mut rng);
        let x = DMatrix::from_fn(10, 3, |r, c| if c < 2 { base[(r, c)] } else { base[(r, 0)] });
        let y = random(10, 1, &mut rng);
        let probe = RidgeProbe::fit(&x, &y, 0.0).unwrap();
        assert!(probe.used_pinv);
        assert!(probe.weights.iter().all(|v| v.is_finite()));
        assert!(probe.normal_equation_residual(&x, &y) < 1e-8);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DMatrix::zeros(3, 2);
        assert!(RidgeProbe::fit(&x, &DMatrix::zeros(4, 1), 1.0).is_err());
        assert!(RidgeProbe::fit(&x, &DMatrix::zeros(3, 1), -1.0).is_err());
        let p = RidgeProbe::fit(&x, &DMatrix::zeros(3, 1), 1.0).unwrap();
        assert!(p.predict(&DMatrix::zeros(1, 5)).is_err());
    }
}
