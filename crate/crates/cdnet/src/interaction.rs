//! Token interaction stack: multi-head self-attention with masked core
//! slots, residual + layer-norm, per-token feed-forward nets, and the
//! sigmoid prediction head over the flattened token matrix.

use cdnet_tensor::{NodeId, ParamId, ParamStore, Real, Tape};
use rand_chacha::ChaCha8Rng;

use crate::embed::{init_dense, init_vector};
use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Multiply-add counts attributed to one attention invocation, split
/// into the projection (linear in T) and score/value (quadratic in T)
/// parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MhaCost {
    pub proj_madds: u64,
    pub quad_madds: u64,
}

impl MhaCost {
    pub fn total(&self) -> u64 {
        self.proj_madds + self.quad_madds
    }
}

pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Parameters of one interaction block for a fixed token count T.
pub struct BlockIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    /// One feed-forward net per token position.
    pub ffn: Vec<FfnIds>,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

pub fn init_block<F: Real>(
    store: &mut ParamStore<F>,
    tag: &str,
    tokens: usize,
    d: usize,
    heads: usize,
    ffn_mult: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BlockIds> {
    assert!(d % heads == 0);
    let dh = d / heads;
    let mut wq = Vec::with_capacity(heads);
    let mut wk = Vec::with_capacity(heads);
    let mut wv = Vec::with_capacity(heads);
    for h in 0..heads {
        wq.push(init_dense(store, &format!("{tag}/head{h}/wq"), d, dh, rng)?);
        wk.push(init_dense(store, &format!("{tag}/head{h}/wk"), d, dh, rng)?);
        wv.push(init_dense(store, &format!("{tag}/head{h}/wv"), d, dh, rng)?);
    }
    let wo = init_dense(store, &format!("{tag}/wo"), d, d, rng)?;
    let hidden = ffn_mult * d;
    let mut ffn = Vec::with_capacity(tokens);
    for t in 0..tokens {
        ffn.push(FfnIds {
            w1: init_dense(store, &format!("{tag}/ffn{t}/w1"), d, hidden, rng)?,
            b1: init_vector(store, &format!("{tag}/ffn{t}/b1"), hidden, 0.0)?,
            w2: init_dense(store, &format!("{tag}/ffn{t}/w2"), hidden, d, rng)?,
            b2: init_vector(store, &format!("{tag}/ffn{t}/b2"), d, 0.0)?,
        });
    }
    Ok(BlockIds {
        wq,
        wk,
        wv,
        wo,
        ffn,
        ln1_gain: init_vector(store, &format!("{tag}/ln1/gain"), d, 1.0)?,
        ln1_bias: init_vector(store, &format!("{tag}/ln1/bias"), d, 0.0)?,
        ln2_gain: init_vector(store, &format!("{tag}/ln2/gain"), d, 1.0)?,
        ln2_bias: init_vector(store, &format!("{tag}/ln2/bias"), d, 0.0)?,
    })
}

/// Multi-head self-attention with masked key columns. Masked tokens
/// receive zero attention weight from every query; they still produce
/// an output row, which the block zeroes afterwards.
pub fn mha_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    x: NodeId,
    block: &BlockIds,
    key_mask: &[bool],
    mut cost: Option<&mut MhaCost>,
) -> Result<NodeId> {
    let d = tape.value(x).cols();
    let heads = block.wq.len();
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let all_unmasked = key_mask.iter().all(|&m| m);

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let wq = tape.param(store, block.wq[h]);
        let wk = tape.param(store, block.wk[h]);
        let wv = tape.param(store, block.wv[h]);

        let before = tape.madds();
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        if let Some(c) = cost.as_deref_mut() {
            c.proj_madds += tape.madds() - before;
        }

        let kt = tape.transpose(k)?;
        let before = tape.madds();
        let logits = tape.matmul(q, kt)?;
        if let Some(c) = cost.as_deref_mut() {
            c.quad_madds += tape.madds() - before;
        }
        let scaled = tape.scale(logits, scale);
        let attn = if all_unmasked {
            tape.softmax_rows(scaled)?
        } else {
            tape.softmax_rows_masked(scaled, key_mask)?
        };
        let before = tape.madds();
        let mixed = tape.matmul(attn, v)?;
        if let Some(c) = cost.as_deref_mut() {
            c.quad_madds += tape.madds() - before;
        }
        head_outputs.push(mixed);
    }
    let concat = if heads == 1 {
        head_outputs[0]
    } else {
        tape.concat_cols(&head_outputs)?
    };
    let wo = tape.param(store, block.wo);
    let before = tape.madds();
    let out = tape.matmul(concat, wo)?;
    if let Some(c) = cost {
        c.proj_madds += tape.madds() - before;
    }
    Ok(out)
}

/// One interaction block: LN(MHA(X) + X), then per-token FFN with
/// residual and a second LN. Masked token rows are zeroed on the way
/// out so padding content can never leak through residual paths.
pub fn block_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    x: NodeId,
    block: &BlockIds,
    token_mask: &[bool],
    cost: Option<&mut MhaCost>,
) -> Result<NodeId> {
    let eps = F::from_f64(LAYER_NORM_EPS);
    let attn = mha_forward(tape, store, x, block, token_mask, cost)?;
    let res1 = tape.add(attn, x)?;
    let g1 = tape.param(store, block.ln1_gain);
    let b1 = tape.param(store, block.ln1_bias);
    let normed1 = tape.layer_norm(res1, g1, b1, eps)?;

    let mut ffn_rows = Vec::with_capacity(block.ffn.len());
    for (t, ffn) in block.ffn.iter().enumerate() {
        let row = tape.gather_rows(normed1, &[t])?;
        let w1 = tape.param(store, ffn.w1);
        let b1v = tape.param(store, ffn.b1);
        let w2 = tape.param(store, ffn.w2);
        let b2v = tape.param(store, ffn.b2);
        let h = tape.matmul(row, w1)?;
        let h = tape.add_row(h, b1v)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        let o = tape.add_row(o, b2v)?;
        ffn_rows.push(o);
    }
    let ffn_out = tape.concat_rows(&ffn_rows)?;
    let res2 = tape.add(ffn_out, normed1)?;
    let g2 = tape.param(store, block.ln2_gain);
    let b2 = tape.param(store, block.ln2_bias);
    let normed2 = tape.layer_norm(res2, g2, b2, eps)?;
    Ok(tape.zero_masked_rows(normed2, token_mask)?)
}

/// Prediction head: flatten the token matrix and run an MLP with
/// rectified-linear hidden layers and a sigmoid output.
pub struct HeadIds {
    pub layers: Vec<(ParamId, ParamId)>,
}

pub fn init_head<F: Real>(
    store: &mut ParamStore<F>,
    tokens: usize,
    d: usize,
    hidden: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<HeadIds> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = tokens * d;
    for (i, &width) in hidden.iter().enumerate() {
        let w = init_dense(store, &format!("head/w{i}"), fan_in, width, rng)?;
        let b = init_vector(store, &format!("head/b{i}"), width, 0.0)?;
        layers.push((w, b));
        fan_in = width;
    }
    let w = init_dense(store, &format!("head/w{}", hidden.len()), fan_in, 1, rng)?;
    let b = init_vector(store, &format!("head/b{}", hidden.len()), 1, 0.0)?;
    layers.push((w, b));
    Ok(HeadIds { layers })
}

pub fn predict<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    x: NodeId,
    head: &HeadIds,
) -> Result<NodeId> {
    let numel = tape.value(x).numel();
    let mut h = tape.reshape(x, &[1, numel])?;
    let last = head.layers.len() - 1;
    for (i, (w, b)) in head.layers.iter().enumerate() {
        let w = tape.param(store, *w);
        let b = tape.param(store, *b);
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
        if i < last {
            h = tape.relu(h);
        }
    }
    Ok(tape.sigmoid(h))
}

/// Closed-form multiply-add count of one attention layer at `tokens`
/// tokens and width `d`: 2*T^2*d for scores and value mixing plus
/// 4*T*d^2 for the Q/K/V/O projections, independent of head count.
pub fn mha_madds_formula(tokens: usize, d: usize) -> (u64, u64) {
    let t = tokens as u64;
    let d = d as u64;
    (4 * t * d * d, 2 * t * t * d)
}
