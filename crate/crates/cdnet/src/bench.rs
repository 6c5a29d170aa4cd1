//! Attention-cost benchmark: counted multiply-adds (exact) and wall
//! time (informational) for the dual-view token count versus running
//! the full sequence through the interaction layer.

use std::time::Instant;

use cdnet_tensor::{ParamStore, Tape, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::interaction::{init_block, mha_forward, mha_madds_formula, MhaCost};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub seq_len: usize,
    pub tokens_compact: usize,
    pub tokens_full: usize,
    pub quad_madds_compact: u64,
    pub quad_madds_full: u64,
    pub total_madds_compact: u64,
    pub total_madds_full: u64,
    /// (k+1+N_f)^2 / (L+N_f)^2.
    pub predicted_quad_ratio: f64,
    /// Counted quadratic-term ratio; equals the prediction exactly.
    pub counted_quad_ratio: f64,
    pub wall_ns_compact: u64,
    pub wall_ns_full: u64,
    pub wall_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub k: usize,
    pub n_f: usize,
    pub d: usize,
    pub heads: usize,
    pub rows: Vec<BenchRow>,
}

/// Instrumented cost of one attention layer at `tokens` tokens: counted
/// multiply-adds plus the median wall time over `reps` runs.
pub fn measure_layer(tokens: usize, d: usize, heads: usize, reps: usize) -> Result<(MhaCost, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let mut store = ParamStore::<f32>::new();
    let block = init_block(&mut store, "bench", tokens, d, heads, 2, &mut rng)?;
    let data: Vec<f32> = (0..tokens * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x_init = Tensor::from_vec(&[tokens, d], data)?;
    let mask = vec![true; tokens];

    let mut cost = MhaCost::default();
    {
        let mut tape = Tape::new();
        let x = tape.constant(x_init.clone());
        mha_forward(&mut tape, &store, x, &block, &mask, Some(&mut cost))?;
    }

    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let started = Instant::now();
        let mut tape = Tape::new();
        let x = tape.constant(x_init.clone());
        mha_forward(&mut tape, &store, x, &block, &mask, None)?;
        times.push(started.elapsed().as_nanos() as u64);
    }
    times.sort_unstable();
    Ok((cost, times[times.len() / 2]))
}

/// Run the benchmark over a list of sequence lengths.
pub fn run_bench(
    l_values: &[usize],
    k: usize,
    n_f: usize,
    d: usize,
    heads: usize,
    reps: usize,
) -> Result<BenchReport> {
    let tokens_compact = k + 1 + n_f;
    let mut rows = Vec::with_capacity(l_values.len());
    let (compact_cost, compact_wall) = measure_layer(tokens_compact, d, heads, reps)?;
    debug_assert_eq!(
        (compact_cost.proj_madds, compact_cost.quad_madds),
        mha_madds_formula(tokens_compact, d)
    );
    for &l in l_values {
        let tokens_full = l + n_f;
        let (full_cost, full_wall) = measure_layer(tokens_full, d, heads, reps)?;
        let predicted = (tokens_compact as f64 / tokens_full as f64).powi(2);
        rows.push(BenchRow {
            seq_len: l,
            tokens_compact,
            tokens_full,
            quad_madds_compact: compact_cost.quad_madds,
            quad_madds_full: full_cost.quad_madds,
            total_madds_compact: compact_cost.total(),
            total_madds_full: full_cost.total(),
            predicted_quad_ratio: predicted,
            counted_quad_ratio: compact_cost.quad_madds as f64 / full_cost.quad_madds as f64,
            wall_ns_compact: compact_wall,
            wall_ns_full: full_wall,
            wall_ratio: compact_wall as f64 / full_wall as f64,
        });
    }
    Ok(BenchReport {
        k,
        n_f,
        d,
        heads,
        rows,
    })
}

impl BenchReport {
    /// Tab-separated table, one row per sequence length.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "L\tT_compact\tT_full\tquad_madds_compact\tquad_madds_full\ttotal_madds_compact\t\
             total_madds_full\tpredicted_quad_ratio\tcounted_quad_ratio\twall_ns_compact\t\
             wall_ns_full\twall_ratio\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.9}\t{:.9}\t{}\t{}\t{:.6}\n",
                r.seq_len,
                r.tokens_compact,
                r.tokens_full,
                r.quad_madds_compact,
                r.quad_madds_full,
                r.total_madds_compact,
                r.total_madds_full,
                r.predicted_quad_ratio,
                r.counted_quad_ratio,
                r.wall_ns_compact,
                r.wall_ns_full,
                r.wall_ratio,
            ));
        }
        out
    }
}
