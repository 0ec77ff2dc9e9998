//! Graph-level building blocks. Every function records onto the caller's tape.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{Graph, Mask, Matrix, NodeId};

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnWeights {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// `Concat(head_1..head_h)·Wᴼ` with `head_i = softmax(QᵢKᵢᵀ/√d_head)·Vᵢ`.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    x_q: NodeId,
    x_kv: NodeId,
    mask: &Mask,
    w: &AttentionWeights,
    heads: usize,
) -> Result<NodeId> {
    let q = g.matmul(x_q, w.wq)?;
    let k = g.matmul(x_kv, w.wk)?;
    let v = g.matmul(x_kv, w.wv)?;
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.masked_softmax(scores, mask)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, w.wo)
}

/// `max(0, x·W₁ + b₁)·W₂ + b₂`, row by row.
pub fn ffn(g: &mut Graph<'_>, x: NodeId, w: &FfnWeights) -> Result<NodeId> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add_row(h, w.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w.w2)?;
    g.add_row(o, w.b2)
}

/// Inverted dropout: zeroes entries with probability `p` and rescales the
/// survivors by `1/(1−p)`. Identity when `rng` is `None` or `p == 0`.
pub fn dropout<R: Rng>(g: &mut Graph<'_>, x: NodeId, p: f64, rng: Option<&mut R>) -> Result<NodeId> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let (r, c) = g.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    g.mul_const(x, Matrix::from_vec(r, c, mask)?)
}
