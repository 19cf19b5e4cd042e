use rand::Rng;

use super::TtsWindow;
use crate::error::{Error, Result};

/// Two overlapping time ranges `[a1, b1)` and `[a2, b2)` of one window.
///
/// Invariant: `0 <= a1 <= a2 < b1 <= b2 <= w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropPair {
    pub a1: usize,
    pub a2: usize,
    pub b1: usize,
    pub b2: usize,
}

impl CropPair {
    pub fn full(w: usize) -> Self {
        Self {
            a1: 0,
            a2: 0,
            b1: w,
            b2: w,
        }
    }

    /// Overlap length `b1 - a2`.
    pub fn overlap(&self) -> usize {
        self.b1 - self.a2
    }

    pub fn is_valid(&self, w: usize) -> bool {
        self.a1 <= self.a2 && self.a2 < self.b1 && self.b1 <= self.b2 && self.b2 <= w
    }

    /// The two views; each keeps the window's label and sample id.
    pub fn views(&self, x: &TtsWindow) -> Result<(TtsWindow, TtsWindow)> {
        if !self.is_valid(x.len()) {
            return Err(Error::arg(format!("{self:?} invalid for w={}", x.len())));
        }
        Ok((x.time_range(self.a1, self.b1)?, x.time_range(self.a2, self.b2)?))
    }

    /// Column range of the overlap inside view 1 and view 2.
    pub fn overlap_in_views(&self) -> ((usize, usize), (usize, usize)) {
        let n = self.overlap();
        ((self.a2 - self.a1, self.a2 - self.a1 + n), (0, n))
    }
}

pub fn default_min_overlap(w: usize) -> usize {
    (w / 8).max(1)
}

/// Draws the overlap length uniformly from `[min_overlap, w]`, then
/// `a2 ~ U[0, w - n]`, `b1 = a2 + n`, `a1 ~ U[0, a2]`, `b2 ~ U[b1, w]`.
pub fn sample_crop_pair<R: Rng + ?Sized>(w: usize, rng: &mut R, min_overlap: usize) -> Result<CropPair> {
    if min_overlap == 0 {
        return Err(Error::arg("min_overlap must be >= 1"));
    }
    if w < min_overlap {
        return Err(Error::arg(format!("window length {w} shorter than min_overlap {min_overlap}")));
    }
    let n = rng.random_range(min_overlap..=w);
    sample_crop_with_overlap(w, n, rng)
}

/// Crop pair with a fixed overlap length `n`, positions drawn as in
/// [`sample_crop_pair`].
pub fn sample_crop_with_overlap<R: Rng + ?Sized>(w: usize, n: usize, rng: &mut R) -> Result<CropPair> {
    if n == 0 || n > w {
        return Err(Error::arg(format!("overlap {n} invalid for w={w}")));
    }
    let a2 = rng.random_range(0..=w - n);
    let b1 = a2 + n;
    let a1 = rng.random_range(0..=a2);
    let b2 = rng.random_range(b1..=w);
    Ok(CropPair { a1, a2, b1, b2 })
}
