use super::model::{
    conv_bias_name, conv_kernel_name, BoundModel, MostModel, POINTWISE_BIAS, POINTWISE_KERNEL,
    PROJ_FLAT, PROJ_MODE1, PROJ_MODE2, PROJ_SCALAR,
};
use super::{Activation, Aggregator, EncoderVariant};
use crate::error::{Error, Result};
use crate::ndnum::{Tape, Tensor, Var};
use crate::ttsdata::{slice, TtsWindow};

/// Per-timestamp representations of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    /// `(h / 2, w)`
    pub v_mode1: Tensor,
    /// `(h / 2, w)`
    pub v_mode2: Tensor,
    /// `(h, w)`, `v_mode1` stacked over `v_mode2`.
    pub v: Tensor,
}

/// Tape handles of a [`Representation`].
#[derive(Clone, Copy, Debug)]
pub struct RepVars {
    pub mode1: Var,
    pub mode2: Var,
    pub v: Var,
}

/// Projects a `(c, w)` slice with `proj` and adds the temporal embedding
/// columns `crop_offset..crop_offset + w` unless disabled.
pub fn embed_slice(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    slice: Var,
    proj: Var,
    crop_offset: usize,
    temporal: bool,
) -> Result<Var> {
    let z = tape.matmul(proj, slice)?;
    if !temporal {
        return Ok(z);
    }
    let w = tape.shape(slice)[1];
    let table = bound.model.temporal_embedding();
    if crop_offset + w > table.cols() {
        return Err(Error::arg(format!(
            "crop at offset {crop_offset} with length {w} exceeds max_window {}",
            table.cols()
        )));
    }
    let e = tape.constant(table.col_range(crop_offset, crop_offset + w));
    tape.add(z, e)
}

/// Runs the conv bank on an `(h, w)` embedding and averages the blocks,
/// giving `(h / 2, w)`.
pub fn encode_slice(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    z: Var,
    variant: EncoderVariant,
) -> Result<Var> {
    let cfg = &bound.model.config;
    let names: Vec<(String, String)> = if variant == EncoderVariant::NoCausalEncoder {
        vec![(POINTWISE_KERNEL.into(), POINTWISE_BIAS.into())]
    } else {
        (0..=cfg.levels).map(|k| (conv_kernel_name(k), conv_bias_name(k))).collect()
    };
    let mut blocks = Vec::with_capacity(names.len());
    for (kn, bn) in names {
        let y = tape.causal_conv1d(z, bound.var(&kn)?, bound.var(&bn)?)?;
        blocks.push(match cfg.activation {
            Activation::Gelu => tape.gelu(y),
            Activation::None => y,
        });
    }
    tape.mean_over(&blocks)
}

fn pool(tape: &mut Tape, items: &[Var], agg: Aggregator) -> Result<Var> {
    match agg {
        Aggregator::Mean => tape.mean_over(items),
        Aggregator::Max => tape.max_over(items),
    }
}

fn branch(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    slices: Vec<Tensor>,
    proj: Var,
    crop_offset: usize,
    variant: EncoderVariant,
) -> Result<Var> {
    let temporal = variant != EncoderVariant::NoTemporalEmbedding;
    let mut outs = Vec::with_capacity(slices.len());
    for s in slices {
        let sv = tape.constant(s);
        let z = embed_slice(tape, bound, sv, proj, crop_offset, temporal)?;
        outs.push(encode_slice(tape, bound, z, variant)?);
    }
    pool(tape, &outs, bound.model.config.aggregator)
}

/// Encodes a window (or crop starting at `crop_offset` of its source window)
/// with the model's configured variant.
pub fn forward_tape(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    x: &TtsWindow,
    crop_offset: usize,
) -> Result<RepVars> {
    forward_tape_as(tape, bound, x, crop_offset, bound.model.config.variant)
}

fn forward_tape_as(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    x: &TtsWindow,
    crop_offset: usize,
    variant: EncoderVariant,
) -> Result<RepVars> {
    let model = bound.model;
    if x.d1() != model.d1 || x.d2() != model.d2 {
        return Err(Error::dim("forward", &[x.d1(), x.d2()], &[model.d1, model.d2]));
    }
    let permuted;
    let x = if variant == EncoderVariant::Random {
        permuted = x.permute_variables(&model.permutation_or_seeded())?;
        &permuted
    } else {
        x
    };
    let (mode1, mode2) = match variant {
        EncoderVariant::Ci => {
            let proj = bound.var(PROJ_SCALAR)?;
            let flat = x.flattened();
            let rows = (0..flat.rows()).map(|r| flat.row_range(r, r + 1)).collect();
            let r = branch(tape, bound, rows, proj, crop_offset, variant)?;
            (r, r)
        }
        EncoderVariant::Cd => {
            let proj = bound.var(PROJ_FLAT)?;
            let r = branch(tape, bound, vec![x.flattened()], proj, crop_offset, variant)?;
            (r, r)
        }
        _ => {
            let s = slice(x);
            let want1 = variant != EncoderVariant::M2d;
            let want2 = variant != EncoderVariant::M1d;
            let r1 = if want1 {
                let proj = bound.var(PROJ_MODE1)?;
                Some(branch(tape, bound, s.mode1, proj, crop_offset, variant)?)
            } else {
                None
            };
            let r2 = if want2 {
                let proj = bound.var(PROJ_MODE2)?;
                Some(branch(tape, bound, s.mode2, proj, crop_offset, variant)?)
            } else {
                None
            };
            match (r1, r2) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => unreachable!("at least one mode branch runs"),
            }
        }
    };
    let v = tape.concat_rows(&[mode1, mode2])?;
    Ok(RepVars { mode1, mode2, v })
}

fn read_out(tape: &Tape, r: RepVars) -> Representation {
    Representation {
        v_mode1: tape.value(r.mode1).clone(),
        v_mode2: tape.value(r.mode2).clone(),
        v: tape.value(r.v).clone(),
    }
}

/// Gradient-free forward pass with the configured variant.
pub fn forward(model: &MostModel, x: &TtsWindow, crop_offset: usize) -> Result<Representation> {
    forward_variant(model, x, crop_offset, model.config.variant)
}

/// Gradient-free forward pass treating the model as `variant`; fails when
/// the model lacks that variant's parameters.
pub fn forward_variant(
    model: &MostModel,
    x: &TtsWindow,
    crop_offset: usize,
    variant: EncoderVariant,
) -> Result<Representation> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let r = forward_tape_as(&mut tape, &bound, x, crop_offset, variant)?;
    Ok(read_out(&tape, r))
}

/// Encodes full windows from offset zero.
pub fn encode_windows(model: &MostModel, windows: &[TtsWindow]) -> Result<Vec<Representation>> {
    windows.iter().map(|x| forward(model, x, 0)).collect()
}
