//! Ranking metrics: AUC by the rank-sum method, impression-weighted
//! grouped AUC, and clamped log loss.

use std::collections::BTreeMap;

use crate::error::{CdnetError, Result};

/// One scored impression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub user: u32,
    pub score: f64,
    pub label: u8,
}

impl EvalRecord {
    pub fn new(user: u32, score: f64, label: u8) -> Self {
        debug_assert!((0.0..=1.0).contains(&score));
        debug_assert!(label <= 1);
        EvalRecord { user, score, label }
    }
}

/// Probability that a uniformly random positive outranks a uniformly
/// random negative, ties counted half. Computed via average ranks, so it
/// is O(n log n).
pub fn auc(records: &[EvalRecord]) -> Result<f64> {
    let positives = records.iter().filter(|r| r.label == 1).count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CdnetError::UndefinedMetric(
            "auc requires at least one positive and one negative",
        ));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .score
            .partial_cmp(&records[b].score)
            .expect("scores must not be NaN")
    });
    // Average rank within each tie group (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && records[order[j + 1]].score == records[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if records[idx].label == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Impression-weighted mean of per-user AUC over users that have both a
/// positive and a negative; other users contribute neither value nor
/// weight.
pub fn gauc(records: &[EvalRecord]) -> Result<f64> {
    let mut by_user: BTreeMap<u32, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user).or_default().push(*r);
    }
    let mut weighted = 0.0f64;
    let mut weight = 0.0f64;
    for (_, recs) in by_user {
        let pos = recs.iter().filter(|r| r.label == 1).count();
        if pos == 0 || pos == recs.len() {
            continue;
        }
        let user_auc = auc(&recs)?;
        let w = recs.len() as f64;
        weighted += w * user_auc;
        weight += w;
    }
    if weight == 0.0 {
        return Err(CdnetError::UndefinedMetric(
            "gauc requires a user with both classes",
        ));
    }
    Ok(weighted / weight)
}

/// Mean binary cross-entropy with scores clamped to [1e-7, 1 - 1e-7].
pub fn logloss(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CdnetError::UndefinedMetric("logloss of an empty set"));
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let p = r.score.clamp(1e-7, 1.0 - 1e-7);
            if r.label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / records.len() as f64)
}
