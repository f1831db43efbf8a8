//! Turning raw inputs into token embeddings.
//!
//! Clinical variables become 4-element one-hot vectors which a per-variable
//! feed-forward extractor maps to width `C_M`. Images are cut into square
//! patches, flattened, scaled to `[0, 1]`, and projected to width `C_X`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::image::ToyImage;
use crate::nn::{init_layer_norm, init_linear, layer_norm, linear, ParamStore};
use crate::tensor::Tensor;

/// Width of every encoded clinical variable.
pub const ONEHOT_BINS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableKind {
    Numerical { min: f64, max: f64 },
    Categorical { levels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVariable {
    pub name: String,
    pub kind: VariableKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClinicalValue {
    Numerical(f64),
    Categorical(usize),
    Missing,
}

/// Equal-width 4-bin one-hot code of `value` on `[min, max]`. Values outside
/// the range fall into the nearest end bin; a value on an inner boundary goes
/// to the higher bin.
pub fn quantize_onehot(value: f64, min: f64, max: f64) -> Result<[f64; ONEHOT_BINS]> {
    if !(min < max) {
        return Err(Error::InvalidArgument(format!("quantization range [{min}, {max}] is empty")));
    }
    let raw = (ONEHOT_BINS as f64 * (value - min) / (max - min)).floor();
    let bin = raw.clamp(0.0, (ONEHOT_BINS - 1) as f64) as usize;
    let mut out = [0.0; ONEHOT_BINS];
    out[bin] = 1.0;
    Ok(out)
}

/// Encodes one variable; missing values become the all-zero vector.
pub fn encode_value(var: &ClinicalVariable, value: ClinicalValue) -> Result<[f64; ONEHOT_BINS]> {
    match (&var.kind, value) {
        (_, ClinicalValue::Missing) => Ok([0.0; ONEHOT_BINS]),
        (VariableKind::Numerical { min, max }, ClinicalValue::Numerical(v)) => quantize_onehot(v, *min, *max),
        (VariableKind::Categorical { levels }, ClinicalValue::Categorical(c)) => {
            if *levels > ONEHOT_BINS || c >= *levels {
                return Err(Error::InvalidArgument(format!(
                    "`{}`: level {c} outside {levels} levels (max {ONEHOT_BINS})",
                    var.name
                )));
            }
            let mut out = [0.0; ONEHOT_BINS];
            out[c] = 1.0;
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!("`{}`: value type does not match variable", var.name))),
    }
}

/// Encodes a full record as an `[M, 4]` tensor.
pub fn encode_record(schema: &[ClinicalVariable], values: &[ClinicalValue]) -> Result<Tensor> {
    if schema.len() != values.len() {
        return Err(Error::shape(
            "encode_record",
            format!("{} variables, {} values", schema.len(), values.len()),
        ));
    }
    let mut data = Vec::with_capacity(schema.len() * ONEHOT_BINS);
    for (var, &v) in schema.iter().zip(values) {
        data.extend_from_slice(&encode_value(var, v)?);
    }
    Tensor::new(vec![schema.len(), ONEHOT_BINS], data)
}

/// Splits `img` into non-overlapping `patch × patch` squares in row-major grid
/// order. Returns `[N, patch²]` with pixels scaled to `[0, 1]`.
pub fn patchify(img: &ToyImage, patch: usize) -> Result<Tensor> {
    let (w, h) = (img.width(), img.height());
    if patch == 0 || w % patch != 0 || h % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} does not divide {w}x{h}"
        )));
    }
    let (gx, gy) = (w / patch, h / patch);
    let mut data = Vec::with_capacity(w * h);
    for py in 0..gy {
        for px in 0..gx {
            for y in 0..patch {
                for x in 0..patch {
                    data.push(img.get(px * patch + x, py * patch + y) as f64 / 255.0);
                }
            }
        }
    }
    Tensor::new(vec![gx * gy, patch * patch], data)
}

/// Inverse of [`patchify`] for pixel values that were exact multiples of 1/255.
pub fn unpatchify(patches: &Tensor, width: usize, height: usize, patch: usize) -> Result<ToyImage> {
    let gx = width / patch;
    if patches.shape() != [gx * (height / patch), patch * patch] {
        return Err(Error::shape("unpatchify", format!("{:?}", patches.shape())));
    }
    let mut img = ToyImage::filled(width, height, 0);
    for (p, row) in patches.data().chunks_exact(patch * patch).enumerate() {
        let (px, py) = (p % gx, p / gx);
        for (i, v) in row.iter().enumerate() {
            img.set(px * patch + i % patch, py * patch + i / patch, (v * 255.0).round() as u8);
        }
    }
    Ok(img)
}

/// `LN(GELU(x · W + b))` over the last axis of `x`.
pub fn ffn_extract(g: &mut Graph, prefix: &str, x: NodeId, width: usize) -> Result<NodeId> {
    let fan_in = *g.shape(x).last().unwrap_or(&0);
    let h = linear(g, &format!("{prefix}.proj"), x, fan_in, width, true)?;
    let h = g.gelu(h);
    layer_norm(g, &format!("{prefix}.ln"), h)
}

pub fn init_ffn_extract(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, fan_in: usize, width: usize) -> Result<()> {
    init_linear(store, rng, &format!("{prefix}.proj"), fan_in, width, true)?;
    init_layer_norm(store, &format!("{prefix}.ln"), width)
}

/// Patch embedding: `[B, N, patch²]` pixels to `[B, N, C_X]` tokens.
pub fn image_extract(g: &mut Graph, prefix: &str, patches: NodeId, width: usize) -> Result<NodeId> {
    ffn_extract(g, prefix, patches, width)
}

/// Clinical tokens: `[B, M, 4]` one-hot codes to `[B, M, C_M]`, one extractor
/// per variable (`{prefix}.var{i}`).
pub fn clinical_extract(g: &mut Graph, prefix: &str, codes: NodeId, width: usize) -> Result<NodeId> {
    let m = g.shape(codes)[1];
    let mut tokens = Vec::with_capacity(m);
    for i in 0..m {
        let x = g.slice(codes, 1, i, 1)?;
        tokens.push(ffn_extract(g, &format!("{prefix}.var{i}"), x, width)?);
    }
    if m == 1 {
        Ok(tokens[0])
    } else {
        g.concat(&tokens, 1)
    }
}

/// Evaluates one feed-forward extractor on a single vector.
pub fn ffn_extract_eval(params: &ParamStore, prefix: &str, input: &[f64], width: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, input.len()], input.to_vec())?);
    let y = ffn_extract(&mut g, prefix, x, width)?;
    g.forward(params)?;
    Ok(g.value(y)?.data().to_vec())
}
