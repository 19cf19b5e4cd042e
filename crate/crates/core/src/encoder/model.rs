use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderVariant, MostConfig};
use crate::error::{Error, Result};
use crate::ndnum::{Tape, Tensor, Var};

pub(crate) const PROJ_MODE1: &str = "proj_mode1";
pub(crate) const PROJ_MODE2: &str = "proj_mode2";
pub(crate) const PROJ_SCALAR: &str = "proj_scalar";
pub(crate) const PROJ_FLAT: &str = "proj_flat";
pub(crate) const POINTWISE_KERNEL: &str = "pointwise.kernel";
pub(crate) const POINTWISE_BIAS: &str = "pointwise.bias";

pub(crate) fn conv_kernel_name(k: usize) -> String {
    format!("conv{k}.kernel")
}

pub(crate) fn conv_bias_name(k: usize) -> String {
    format!("conv{k}.bias")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Trainable parameters plus the fixed temporal embedding.
///
/// The conv blocks are a single set of parameters used by both mode
/// branches.
#[derive(Clone, Debug, PartialEq)]
pub struct MostModel {
    pub config: MostConfig,
    pub d1: usize,
    pub d2: usize,
    pub params: Vec<Param>,
    /// Variable order used by the `random` variant: new flattened variable
    /// `k` reads old variable `permutation[k]`.
    pub permutation: Option<Vec<usize>>,
    temporal_embedding: Tensor,
}

/// Sinusoidal position table of shape `(h, len)`: row `2k` holds
/// `sin(t / 10000^(2k/h))`, row `2k + 1` the matching cosine.
pub fn sinusoidal_embedding(h: usize, len: usize) -> Tensor {
    let mut t = Tensor::zeros(&[h, len]);
    for row in 0..h {
        let k = (row / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * k / h as f64);
        for col in 0..len {
            let angle = col as f64 * freq;
            t.set(row, col, if row % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

impl MostModel {
    pub fn new(config: MostConfig, d1: usize, d2: usize) -> Result<Self> {
        config.validate()?;
        if d1 == 0 || d2 == 0 {
            return Err(Error::Config(format!("tensor dims must be >= 1, got ({d1}, {d2})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, hd) = (config.h, config.h_mode());
        let mut params = Vec::new();
        let mut add = |name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(Param {
                name,
                value: Tensor::uniform(shape, bound, rng),
            });
        };
        match config.variant {
            EncoderVariant::Ci => add(PROJ_SCALAR.into(), &[h, 1], 1, &mut rng),
            EncoderVariant::Cd => add(PROJ_FLAT.into(), &[h, d1 * d2], d1 * d2, &mut rng),
            _ => {
                add(PROJ_MODE1.into(), &[h, d1], d1, &mut rng);
                add(PROJ_MODE2.into(), &[h, d2], d2, &mut rng);
            }
        }
        if config.variant == EncoderVariant::NoCausalEncoder {
            add(POINTWISE_KERNEL.into(), &[hd, h, 1], h, &mut rng);
            add(POINTWISE_BIAS.into(), &[hd], h, &mut rng);
        } else {
            for (k, ksize) in config.kernel_sizes().into_iter().enumerate() {
                add(conv_kernel_name(k), &[hd, h, ksize], h * ksize, &mut rng);
                add(conv_bias_name(k), &[hd], h * ksize, &mut rng);
            }
        }
        let permutation = (config.variant == EncoderVariant::Random).then(|| {
            let mut perm: Vec<usize> = (0..d1 * d2).collect();
            perm.shuffle(&mut rng);
            perm
        });
        let temporal_embedding = sinusoidal_embedding(h, config.max_window);
        Ok(Self {
            config,
            d1,
            d2,
            params,
            permutation,
            temporal_embedding,
        })
    }

    /// Rebuilds a model from stored parts, validating every shape.
    pub fn from_parts(
        config: MostConfig,
        d1: usize,
        d2: usize,
        params: Vec<Param>,
        permutation: Option<Vec<usize>>,
    ) -> Result<Self> {
        let template = Self::new(config, d1, d2)?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
        }
        if let Some(perm) = &permutation {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..d1 * d2).collect::<Vec<_>>() {
                return Err(Error::Checkpoint("stored permutation is not a permutation".into()));
            }
        }
        Ok(Self {
            params,
            permutation,
            ..template
        })
    }

    pub fn temporal_embedding(&self) -> &Tensor {
        &self.temporal_embedding
    }

    /// Replaces the temporal embedding table; it stays gradient-free.
    pub fn set_temporal_embedding(&mut self, table: Tensor) -> Result<()> {
        if table.shape() != self.temporal_embedding.shape() {
            return Err(Error::dim("temporal_embedding", table.shape(), self.temporal_embedding.shape()));
        }
        self.temporal_embedding = table;
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Variable permutation for the `random` variant, derived from the seed
    /// when the model was not built for that variant.
    pub fn permutation_or_seeded(&self) -> Vec<usize> {
        self.permutation.clone().unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut perm: Vec<usize> = (0..self.d1 * self.d2).collect();
            perm.shuffle(&mut rng);
            perm
        })
    }

    /// Places every parameter on `tape`, tracked when `trainable`.
    pub fn bind<'m>(&'m self, tape: &mut Tape, trainable: bool) -> BoundModel<'m> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        BoundModel { model: self, vars }
    }

    /// 64-bit FNV-1a over every parameter's bits, for freeze checks.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.name.bytes().chain(p.value.data().iter().flat_map(|v| v.to_le_bytes())) {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

/// A model whose parameters live on a tape.
pub struct BoundModel<'m> {
    pub model: &'m MostModel,
    pub vars: Vec<Var>,
}

impl BoundModel<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.model
            .params
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| {
                Error::Config(format!(
                    "parameter '{name}' not present in a {} model",
                    self.model.config.variant
                ))
            })
    }

    /// Gradients of every parameter, zero where none flowed.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: EncoderVariant) -> MostConfig {
        MostConfig {
            h: 8,
            levels: 2,
            max_window: 16,
            variant,
            ..Default::default()
        }
    }

    #[test]
    fn parameter_shapes_per_variant() {
        let m = MostModel::new(small(EncoderVariant::Full), 2, 3).unwrap();
        assert_eq!(m.param(PROJ_MODE1).unwrap().shape(), &[8, 2]);
        assert_eq!(m.param(PROJ_MODE2).unwrap().shape(), &[8, 3]);
        for k in 0..3 {
            assert_eq!(m.param(&conv_kernel_name(k)).unwrap().shape(), &[4, 8, 1 << k]);
            assert_eq!(m.param(&conv_bias_name(k)).unwrap().shape(), &[4]);
        }
        let cd = MostModel::new(small(EncoderVariant::Cd), 2, 3).unwrap();
        assert_eq!(cd.param(PROJ_FLAT).unwrap().shape(), &[8, 6]);
        let nc = MostModel::new(small(EncoderVariant::NoCausalEncoder), 2, 3).unwrap();
        assert!(nc.param(&conv_kernel_name(0)).is_none());
        assert_eq!(nc.param(POINTWISE_KERNEL).unwrap().shape(), &[4, 8, 1]);
        let r = MostModel::new(small(EncoderVariant::Random), 2, 3).unwrap();
        let mut perm = r.permutation.clone().unwrap();
        perm.sort_unstable();
        assert_eq!(perm, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn init_is_seeded() {
        let a = MostModel::new(small(EncoderVariant::Full), 2, 2).unwrap();
        let b = MostModel::new(small(EncoderVariant::Full), 2, 2).unwrap();
        assert_eq!(a, b);
        let c = MostModel::new(MostConfig { seed: 5, ..small(EncoderVariant::Full) }, 2, 2).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn sinusoid_table_values() {
        let t = sinusoidal_embedding(4, 3);
        assert_eq!(t.at(0, 0), 0.0);
        assert_eq!(t.at(1, 0), 1.0);
        assert!((t.at(0, 2) - 2f64.sin()).abs() < 1e-15);
        assert!((t.at(3, 1) - (0.01f64).cos()).abs() < 1e-15);
    }
}
