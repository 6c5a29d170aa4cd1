//! Global interest distribution: histogram the full score vector into n
//! similarity bins and embed the (discrete) bin counts.

use cdnet_tensor::{NodeId, ParamId, ParamStore, Real, Tape};
use rand_chacha::ChaCha8Rng;

use crate::core_behaviors::ScoreVector;
use crate::embed::init_embedding_table;
use crate::error::Result;

/// Count-bucket table size: floor(log2(count+1)) clamped to 16 covers
/// counts up to 2^17 - 2, far beyond any supported sequence length.
pub const COUNT_BUCKETS: u32 = 17;

/// 1-based bin of a score under the partition c_1 = [0, 1/n],
/// c_j = ((j-1)/n, j/n]. A value exactly on the boundary j/n belongs to
/// bin j.
pub fn bin_of<F: Real>(a: F, n: usize) -> usize {
    debug_assert!(n >= 1);
    let guess = (a.to_f64() * n as f64).ceil();
    let mut b = if guess.is_finite() { guess as i64 } else { 1 };
    b = b.clamp(1, n as i64);
    let mut b = b as usize;
    let edge = |j: usize| F::from_f64(j as f64) / F::from_f64(n as f64);
    while b > 1 && a <= edge(b - 1) {
        b -= 1;
    }
    while b < n && a > edge(b) {
        b += 1;
    }
    b
}

/// Bin counts over the valid scores only.
pub fn histogram<F: Real>(tape: &Tape<F>, scores: &ScoreVector, n: usize) -> Vec<u32> {
    let values = tape.value(scores.node).data();
    let mut counts = vec![0u32; n];
    for (j, &a) in values.iter().enumerate() {
        if scores.mask[j] {
            counts[bin_of(a, n) - 1] += 1;
        }
    }
    counts
}

pub fn count_bucket(count: u32) -> usize {
    (u64::from(count) + 1).ilog2().min(COUNT_BUCKETS - 1) as usize
}

/// Per-bin count-embedding tables. Separate tables keep bin identity
/// under the mean in [`CountEmbedder::embed`].
pub struct CountEmbedder {
    tables: Vec<ParamId>,
    pub d: usize,
}

impl CountEmbedder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        n: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut tables = Vec::with_capacity(n);
        for j in 0..n {
            // Bucket 0 (count zero) is informative, so nothing is frozen.
            let id = init_embedding_table(store, &format!("gid/bin{j}"), COUNT_BUCKETS, d, rng)?;
            store.entry_mut(id).freeze_row0 = false;
            tables.push(id);
        }
        Ok(CountEmbedder { tables, d })
    }

    pub fn n(&self) -> usize {
        self.tables.len()
    }

    /// S_gid = mean over bins of table_j[bucket(p_j)]: [1 x d].
    pub fn embed<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        counts: &[u32],
    ) -> Result<NodeId> {
        assert_eq!(counts.len(), self.tables.len());
        let mut rows = Vec::with_capacity(counts.len());
        for (j, &c) in counts.iter().enumerate() {
            rows.push(tape.lookup(store, self.tables[j], &[count_bucket(c) as u32])?);
        }
        let stacked = tape.concat_rows(&rows)?;
        let keep = vec![true; counts.len()];
        Ok(tape.mean_rows_masked(stacked, &keep)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdnet_tensor::Tensor;
    use rand::SeedableRng;

    fn sv(tape: &mut Tape<f64>, values: &[f64], mask: &[bool]) -> ScoreVector {
        let node = tape.constant(Tensor::from_vec(&[values.len()], values.to_vec()).unwrap());
        ScoreVector {
            node,
            mask: mask.to_vec(),
        }
    }

    #[test]
    fn direct_binning_example() {
        let mut tape = Tape::new();
        let s = sv(&mut tape, &[0.1, 0.25, 0.25, 0.9], &[true; 4]);
        assert_eq!(histogram(&tape, &s, 5), vec![1, 2, 0, 0, 1]);
    }

    #[test]
    fn boundary_goes_to_lower_bin() {
        assert_eq!(bin_of(0.2f64, 5), 1);
        assert_eq!(bin_of(0.4f64, 5), 2);
        assert_eq!(bin_of(0.0f64, 5), 1);
        assert_eq!(bin_of(1.0f64, 5), 5);
        assert_eq!(bin_of(0.2000001f64, 5), 2);
    }

    #[test]
    fn all_ones_fall_in_last_bin() {
        let mut tape = Tape::new();
        let s = sv(&mut tape, &[1.0; 7], &[true; 7]);
        let h = histogram(&tape, &s, 5);
        assert_eq!(h, vec![0, 0, 0, 0, 7]);
    }

    #[test]
    fn invalid_positions_do_not_count() {
        let mut tape = Tape::new();
        let s = sv(&mut tape, &[0.5, -1.0, 0.5], &[true, false, true]);
        let h = histogram(&tape, &s, 2);
        assert_eq!(h.iter().sum::<u32>(), 2);
    }

    #[test]
    fn count_bucket_is_log2() {
        assert_eq!(count_bucket(0), 0);
        assert_eq!(count_bucket(1), 1);
        assert_eq!(count_bucket(2), 1);
        assert_eq!(count_bucket(3), 2);
        assert_eq!(count_bucket(7), 3);
        assert_eq!(count_bucket(1600), 10);
        assert_eq!(count_bucket(u32::MAX), (COUNT_BUCKETS - 1) as usize);
    }

    #[test]
    fn single_bin_mean_is_that_embedding() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = CountEmbedder::new(&mut store, 1, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let gid = emb.embed(&mut tape, &store, &[3]).unwrap();
        let table = store.value(emb.tables[0]);
        assert_eq!(tape.value(gid).data(), table.row(count_bucket(3)));
    }

    #[test]
    fn gradient_reaches_exactly_touched_buckets() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = CountEmbedder::new(&mut store, 3, 4, &mut rng).unwrap();
        let counts = [0u32, 5, 5];
        let mut tape = Tape::new();
        let gid = emb.embed(&mut tape, &store, &counts).unwrap();
        let loss = tape.sum_all(gid);
        tape.backward(loss, &mut store).unwrap();
        for (j, &table) in emb.tables.iter().enumerate() {
            let grad = store.grad(table);
            let hot = count_bucket(counts[j]);
            for row in 0..COUNT_BUCKETS as usize {
                let all_zero = grad.row(row).iter().all(|&g| g == 0.0);
                assert_eq!(all_zero, row != hot, "table {j} row {row}");
            }
        }
    }
}
