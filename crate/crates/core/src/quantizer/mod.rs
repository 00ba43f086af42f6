//! Nearest-code quantization with a shared EMA codebook, the residual gate
//! `z = alpha * e + (1 - alpha) * q(e)` and the commitment term.

mod codebook;
mod gate;

pub use codebook::{usage_entropy, Codebook, EmaConfig};
pub use gate::{gate_penalty, GateMode, ResidualGate};

use crate::numcore::{Gate, Graph, Real, Var};
use crate::seqcoder::{LatentMatrix, LatentStage};
use crate::{Error, Result};

/// Quantization of one head vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadQuantization {
    pub index: usize,
    pub quantized: Vec<f32>,
    pub combined: Vec<f32>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult {
    pub heads: Vec<HeadQuantization>,
}

impl QuantizationResult {
    pub fn indices(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.index).collect()
    }
}

/// Quantizes every head of `e` and blends it with the residual weight
/// (`alpha` holds one value, or one per head).
pub fn quantize_combine(
    e: &LatentMatrix,
    codebook: &Codebook,
    alpha: &[f64],
) -> Result<(LatentMatrix, QuantizationResult)> {
    if e.dim != codebook.dim() {
        return Err(Error::Shape(format!("head dimension {} vs codebook {}", e.dim, codebook.dim())));
    }
    if alpha.is_empty() || (alpha.len() != 1 && alpha.len() != e.heads) {
        return Err(Error::Shape(format!("{} gate values for {} heads", alpha.len(), e.heads)));
    }
    let found = codebook.lookup(&e.data);
    let mut heads = Vec::with_capacity(e.heads);
    let mut data = Vec::with_capacity(e.data.len());
    for (h, &(index, distance)) in found.iter().enumerate() {
        let a = alpha[if alpha.len() == 1 { 0 } else { h }];
        let q = codebook.code(index).to_vec();
        let z: Vec<f32> = blend_row(e.row(h), &q, a);
        data.extend_from_slice(&z);
        heads.push(HeadQuantization { index, quantized: q, combined: z, distance });
    }
    Ok((LatentMatrix::new(e.heads, e.dim, data, LatentStage::Post), QuantizationResult { heads }))
}

fn blend_row(e: &[f32], q: &[f32], alpha: f64) -> Vec<f32> {
    if alpha == 0.0 {
        return q.to_vec();
    }
    if alpha == 1.0 {
        return e.to_vec();
    }
    let a = alpha as f32;
    e.iter().zip(q).map(|(&x, &c)| a * x + (1.0 - a) * c).collect()
}

/// Graph-side quantization: looks up codes for the rows of `e` and records
/// the straight-through blend. Returns `(z, code indices, code rows)`.
pub fn quantize_graph<T: Real>(
    g: &mut Graph<'_, T>,
    e: Var,
    codebook: &Codebook,
    gate: Gate<T>,
    heads: usize,
) -> Result<(Var, Vec<usize>, Vec<T>)> {
    let (_, cols) = g.dims(e);
    if cols != codebook.dim() {
        return Err(Error::Shape(format!("head dimension {cols} vs codebook {}", codebook.dim())));
    }
    let found = codebook.lookup(g.value(e));
    let indices: Vec<usize> = found.iter().map(|f| f.0).collect();
    let codes: Vec<T> =
        indices.iter().flat_map(|&i| codebook.code(i).iter().map(|&v| T::narrow(v as f64))).collect();
    let z = g.gated_quantize(e, codes.clone(), gate, heads);
    Ok((z, indices, codes))
}

/// `beta / batch * sum ||e - stopgrad(q)||^2`; only `e` receives gradient.
pub fn commitment_graph<T: Real>(g: &mut Graph<'_, T>, e: Var, codes: Vec<T>, beta: f64, batch: usize) -> Var {
    let (r, c) = g.dims(e);
    let q = g.constant(r, c, codes);
    let diff = g.sub(e, q);
    let sq = g.sum_squares(diff);
    g.scale(sq, beta / batch.max(1) as f64)
}

/// `beta * sum_h ||e_h - q_h||^2` for one latent.
pub fn commitment_loss(e: &LatentMatrix, quantized: &[Vec<f32>], beta: f64) -> Result<f64> {
    if quantized.len() != e.heads || quantized.iter().any(|q| q.len() != e.dim) {
        return Err(Error::Shape("quantized vectors do not match the latent".into()));
    }
    let mut total = 0.0;
    for (h, q) in quantized.iter().enumerate() {
        total += e.row(h).iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
    }
    Ok(beta * total)
}
