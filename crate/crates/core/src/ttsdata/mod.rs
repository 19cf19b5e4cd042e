//! Tensor time series containers, mode slicing, crop sampling, synthetic
//! data and file ingestion.

mod crop;
mod ingest;
mod io;
mod synthetic;

pub use crop::{default_min_overlap, sample_crop_pair, sample_crop_with_overlap, CropPair};
pub use ingest::{ingest, ingest_series, load_series, DatasetSpec, IngestedDataset, Layout, NormStats, SplitAxis, Splits};
pub use io::{read_binary, read_csv_long, read_labels, write_binary, write_csv_long, write_labels, SeriesTensor};
pub use synthetic::{
    ar2_driver, generate_synthetic, mode2_transform, SyntheticLabel, SyntheticSpec, MODE1_COEFFS,
    MODE1_LOADINGS,
};

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

/// One `(d1, d2, w)` sample, stored row-major in `(i, j, t)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct TtsWindow {
    values: Vec<f64>,
    d1: usize,
    d2: usize,
    w: usize,
    pub label: Option<usize>,
    pub sample_id: usize,
}

impl TtsWindow {
    pub fn new(values: Vec<f64>, d1: usize, d2: usize, w: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::arg(format!("non-temporal dims must be >= 1, got ({d1}, {d2})")));
        }
        if w < 2 {
            return Err(Error::arg(format!("window length must be >= 2, got {w}")));
        }
        if values.len() != d1 * d2 * w {
            return Err(Error::dim("TtsWindow", &[values.len()], &[d1, d2, w]));
        }
        Ok(Self {
            values,
            d1,
            d2,
            w,
            label: None,
            sample_id: 0,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_sample_id(mut self, id: usize) -> Self {
        self.sample_id = id;
        self
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn len(&self) -> usize {
        self.w
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize, t: usize) -> f64 {
        self.values[(i * self.d2 + j) * self.w + t]
    }

    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        self.values[(i * self.d2 + j) * self.w + t] = v;
    }

    /// Series of variable `(i, j)`.
    pub fn series(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.d2 + j) * self.w;
        &self.values[start..start + self.w]
    }

    /// Time range `start..end` as a new window. Unlike [`TtsWindow::new`],
    /// a single timestamp is allowed so crops may be short.
    pub fn time_range(&self, start: usize, end: usize) -> Result<TtsWindow> {
        if start >= end || end > self.w {
            return Err(Error::arg(format!("time range {start}..{end} invalid for w={}", self.w)));
        }
        let len = end - start;
        let mut values = Vec::with_capacity(self.d1 * self.d2 * len);
        for i in 0..self.d1 {
            for j in 0..self.d2 {
                values.extend_from_slice(&self.series(i, j)[start..end]);
            }
        }
        Ok(TtsWindow {
            values,
            d1: self.d1,
            d2: self.d2,
            w: len,
            label: self.label,
            sample_id: self.sample_id,
        })
    }

    /// Reorders the `d1 * d2` variables: new variable `k` takes the series of
    /// old variable `perm[k]` (flattened `i * d2 + j`).
    pub fn permute_variables(&self, perm: &[usize]) -> Result<TtsWindow> {
        let n = self.d1 * self.d2;
        if perm.len() != n {
            return Err(Error::arg(format!("permutation of length {} for {n} variables", perm.len())));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &src in perm {
            if src >= n {
                return Err(Error::arg(format!("permutation index {src} out of range")));
            }
            values.extend_from_slice(&self.values[src * self.w..(src + 1) * self.w]);
        }
        Ok(TtsWindow {
            values,
            ..self.clone()
        })
    }

    /// All `d1 * d2` variables as rows of a `(d1 * d2, w)` matrix.
    pub fn flattened(&self) -> Tensor {
        Tensor::new(vec![self.d1 * self.d2, self.w], self.values.clone()).expect("window shape")
    }
}

/// Mode slices of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicedTensor {
    /// `d2` matrices of shape `(d1, w)`; entry `j` is `X[:, j, :]`.
    pub mode1: Vec<Tensor>,
    /// `d1` matrices of shape `(d2, w)`; entry `i` is `X[i, :, :]`.
    pub mode2: Vec<Tensor>,
}

pub fn slice(x: &TtsWindow) -> SlicedTensor {
    let (d1, d2, w) = (x.d1, x.d2, x.w);
    let mode1 = (0..d2)
        .map(|j| {
            let mut data = Vec::with_capacity(d1 * w);
            for i in 0..d1 {
                data.extend_from_slice(x.series(i, j));
            }
            Tensor::new(vec![d1, w], data).expect("slice shape")
        })
        .collect();
    let mode2 = (0..d1)
        .map(|i| {
            let start = i * d2 * w;
            Tensor::new(vec![d2, w], x.values[start..start + d2 * w].to_vec()).expect("slice shape")
        })
        .collect();
    SlicedTensor { mode1, mode2 }
}

impl SlicedTensor {
    /// Rebuilds the `(d1, d2, w)` values from the mode-1 slices.
    pub fn reassemble_mode1(&self) -> Vec<f64> {
        let d2 = self.mode1.len();
        let (d1, w) = (self.mode1[0].rows(), self.mode1[0].cols());
        let mut out = vec![0.0; d1 * d2 * w];
        for (j, s) in self.mode1.iter().enumerate() {
            for i in 0..d1 {
                out[(i * d2 + j) * w..(i * d2 + j + 1) * w].copy_from_slice(s.row(i));
            }
        }
        out
    }

    /// Rebuilds the `(d1, d2, w)` values from the mode-2 slices.
    pub fn reassemble_mode2(&self) -> Vec<f64> {
        self.mode2.iter().flat_map(|s| s.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(d1: usize, d2: usize, w: usize) -> TtsWindow {
        let values = (0..d1 * d2 * w).map(|k| k as f64 * 0.5 - 3.0).collect();
        TtsWindow::new(values, d1, d2, w).unwrap()
    }

    #[test]
    fn slice_shapes() {
        let s = slice(&window(2, 3, 5));
        assert_eq!(s.mode1.len(), 3);
        assert_eq!(s.mode2.len(), 2);
        assert!(s.mode1.iter().all(|m| m.shape() == [2, 5]));
        assert!(s.mode2.iter().all(|m| m.shape() == [3, 5]));
    }

    #[test]
    fn slice_constant_series() {
        let mut x = window(2, 3, 5);
        for t in 0..5 {
            x.set(0, 1, t, 7.0);
        }
        let s = slice(&x);
        assert!(s.mode1[1].row(0).iter().all(|&v| v == 7.0));
        assert!(s.mode2[0].row(1).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn window_validation() {
        assert!(TtsWindow::new(vec![0.0; 3], 1, 3, 1).is_err());
        assert!(TtsWindow::new(vec![0.0; 4], 0, 2, 2).is_err());
        assert!(TtsWindow::new(vec![0.0; 5], 1, 2, 2).is_err());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let x = window(2, 2, 4);
        let y = x.permute_variables(&[0, 1, 2, 3]).unwrap();
        assert_eq!(x, y);
        let z = x.permute_variables(&[3, 2, 1, 0]).unwrap();
        assert_eq!(z.series(0, 0), x.series(1, 1));
    }

    proptest! {
        #[test]
        fn slicing_is_lossless(d1 in 1usize..5, d2 in 1usize..5, w in 2usize..10, seed in any::<u64>()) {
            let n = d1 * d2 * w;
            let values: Vec<f64> = (0..n).map(|k| ((k as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0).collect();
            let x = TtsWindow::new(values.clone(), d1, d2, w).unwrap();
            let s = slice(&x);
            prop_assert_eq!(s.reassemble_mode1(), values.clone());
            prop_assert_eq!(s.reassemble_mode2(), values);
        }
    }
}
