//! Core-behavior selection: score every behavior against the target,
//! pick the top k, and gather them with straight-through gradients so
//! the discrete choice stays trainable.

use cdnet_tensor::{NodeId, Real, Tape};

use crate::error::Result;

/// Denominator floor for the cosine; degenerate (zero) vectors score a
/// neutral 0.5 instead of erroring.
pub const COSINE_FLOOR: f64 = 1e-12;

/// Importance scores in [0,1] for valid positions, sentinel -1 elsewhere.
pub struct ScoreVector {
    pub node: NodeId,
    pub mask: Vec<bool>,
}

impl ScoreVector {
    pub fn values<F: Real>(&self, tape: &Tape<F>) -> Vec<f64> {
        tape.value(self.node).data().iter().map(|v| v.to_f64()).collect()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Top-k selection outcome: indices in ascending (temporal) order and
/// the binary mask over all L positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreSelection {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl CoreSelection {
    pub fn k_eff(&self) -> usize {
        self.indices.len()
    }
}

/// a_j = (cos(f_i, s_j) + 1) / 2 over valid positions.
pub fn score_sequence<F: Real>(
    tape: &mut Tape<F>,
    target: NodeId,
    behaviors: NodeId,
    mask: &[bool],
) -> Result<ScoreVector> {
    let node = tape.cosine_scores(target, behaviors, mask, F::from_f64(COSINE_FLOOR))?;
    Ok(ScoreVector {
        node,
        mask: mask.to_vec(),
    })
}

/// Indices of the k_eff = min(k, valid_len) largest valid scores. Ties
/// break toward the smaller index; the result is in ascending index
/// order so downstream tokens keep their temporal order.
pub fn top_k_select<F: Real>(tape: &Tape<F>, scores: &ScoreVector, k: usize) -> CoreSelection {
    assert!(k >= 1, "k must be >= 1");
    let values = tape.value(scores.node).data();
    let mut candidates: Vec<usize> = (0..values.len()).filter(|&j| scores.mask[j]).collect();
    candidates.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let k_eff = k.min(candidates.len());
    let mut indices = candidates[..k_eff].to_vec();
    indices.sort_unstable();
    let mut mask = vec![false; values.len()];
    for &i in &indices {
        mask[i] = true;
    }
    CoreSelection { indices, mask }
}

/// Core-behavior matrix [k x d]: selected rows bit-identical to a hard
/// gather, rows past k_eff zero. `core_mask` marks the real rows.
pub struct CoreGather {
    pub node: NodeId,
    pub core_mask: Vec<bool>,
}

pub fn ste_gather<F: Real>(
    tape: &mut Tape<F>,
    behaviors: NodeId,
    scores: &ScoreVector,
    selection: &CoreSelection,
    k: usize,
) -> Result<CoreGather> {
    let node = tape.ste_gather(behaviors, scores.node, &selection.indices, k)?;
    let mut core_mask = vec![false; k];
    core_mask[..selection.k_eff()].fill(true);
    Ok(CoreGather { node, core_mask })
}
