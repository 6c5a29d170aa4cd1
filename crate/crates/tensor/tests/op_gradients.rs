//! Central-finite-difference checks for every differentiable operation,
//! run at 64-bit over 20 random seeds each.

use cdnet_tensor::gradcheck::{check_store_gradients, FdReport, ForwardEval};
use cdnet_tensor::{NodeId, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(rng, n)).unwrap()
}

/// Run backward once, then sweep every coordinate with central
/// differences using the same forward closure.
fn check(
    store: &mut ParamStore<f64>,
    fwd: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> NodeId,
) -> FdReport {
    let mut tape = Tape::new();
    let loss = fwd(&mut tape, store);
    tape.backward(loss, store).unwrap();
    check_store_gradients(store, STEP, RTOL, |st| {
        let mut tape = Tape::new();
        let loss = fwd(&mut tape, st);
        ForwardEval::smooth(tape.scalar(loss).unwrap())
    })
}

fn assert_report(op: &str, seed: u64, report: &FdReport) {
    assert!(
        report.passes(RTOL),
        "{op} gradient check failed at seed {seed}: max rel err {}, worst {:?}",
        report.max_rel_err,
        report.worst
    );
}

/// Weighted sum makes the loss sensitive to every output coordinate.
fn weighted_sum(
    tape: &mut Tape<f64>,
    out: NodeId,
    weights: &Tensor<f64>,
) -> NodeId {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum_all(prod)
}

#[test]
fn matmul_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let b = store.add("b", rand_tensor(&mut rng, &[4, 2])).unwrap();
        let w = rand_tensor(&mut rng, &[3, 2]);
        let report = check(&mut store, |tape, st| {
            let a = tape.param(st, a);
            let b = tape.param(st, b);
            let out = tape.matmul(a, b).unwrap();
            weighted_sum(tape, out, &w)
        });
        assert_report("matmul", seed, &report);
    }
}

#[test]
fn softmax_gradients_plain_and_masked() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[4, 5])).unwrap();
        let w = rand_tensor(&mut rng, &[4, 5]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let s = tape.softmax_rows(x).unwrap();
            weighted_sum(tape, s, &w)
        });
        assert_report("softmax_rows", seed, &report);

        let mask = vec![true, false, true, true, false];
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let s = tape.softmax_rows_masked(x, &mask).unwrap();
            weighted_sum(tape, s, &w)
        });
        assert_report("softmax_rows_masked", seed, &report);
    }
}

#[test]
fn layer_norm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[3, 8])).unwrap();
        let g = store.add("gain", rand_tensor(&mut rng, &[8])).unwrap();
        let b = store.add("bias", rand_tensor(&mut rng, &[8])).unwrap();
        let w = rand_tensor(&mut rng, &[3, 8]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let g = tape.param(st, g);
            let b = tape.param(st, b);
            let out = tape.layer_norm(x, g, b, 1e-5).unwrap();
            weighted_sum(tape, out, &w)
        });
        assert_report("layer_norm", seed, &report);
    }
}

#[test]
fn elementwise_and_broadcast_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let b = store.add("b", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let bias = store.add("bias", rand_tensor(&mut rng, &[4])).unwrap();
        let w = rand_tensor(&mut rng, &[3, 4]);
        let report = check(&mut store, |tape, st| {
            let a = tape.param(st, a);
            let b = tape.param(st, b);
            let bias = tape.param(st, bias);
            let sum = tape.add(a, b).unwrap();
            let diff = tape.sub(sum, b).unwrap();
            let prod = tape.mul(diff, b).unwrap();
            let scaled = tape.scale(prod, 0.7);
            let shifted = tape.add_const(scaled, 0.3);
            let biased = tape.add_row(shifted, bias).unwrap();
            weighted_sum(tape, biased, &w)
        });
        assert_report("elementwise/add_row", seed, &report);
    }
}

#[test]
fn transpose_and_reshape_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", rand_tensor(&mut rng, &[3, 5])).unwrap();
        let w = rand_tensor(&mut rng, &[5, 3]);
        let report = check(&mut store, |tape, st| {
            let a = tape.param(st, a);
            let t = tape.transpose(a).unwrap();
            weighted_sum(tape, t, &w)
        });
        assert_report("transpose", seed, &report);

        let w2 = rand_tensor(&mut rng, &[1, 15]);
        let report = check(&mut store, |tape, st| {
            let a = tape.param(st, a);
            let r = tape.reshape(a, &[1, 15]).unwrap();
            weighted_sum(tape, r, &w2)
        });
        assert_report("reshape", seed, &report);
    }
}

#[test]
fn gather_lookup_and_concat_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[5, 3])).unwrap();
        let table = store.add("table", rand_tensor(&mut rng, &[6, 3])).unwrap();
        let w = rand_tensor(&mut rng, &[7, 3]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let g = tape.gather_rows(x, &[4, 0, 2, 2]).unwrap();
            let l = tape.lookup(st, table, &[1, 5, 1]).unwrap();
            let cat = tape.concat_rows(&[g, l]).unwrap();
            weighted_sum(tape, cat, &w)
        });
        assert_report("gather/lookup/concat_rows", seed, &report);

        let w2 = rand_tensor(&mut rng, &[5, 6]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let cat = tape.concat_cols(&[x, x]).unwrap();
            weighted_sum(tape, cat, &w2)
        });
        assert_report("concat_cols", seed, &report);
    }
}

#[test]
fn activation_and_reduction_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        // Keep relu inputs away from the kink at zero.
        let vals: Vec<f64> = (0..12)
            .map(|_| {
                let v: f64 = rng.gen_range(-1.0..1.0);
                v + 0.05 * v.signum()
            })
            .collect();
        let x = store
            .add("x", Tensor::from_vec(&[3, 4], vals).unwrap())
            .unwrap();
        let w = rand_tensor(&mut rng, &[3, 4]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let r = tape.relu(x);
            let s = tape.sigmoid(r);
            weighted_sum(tape, s, &w)
        });
        assert_report("relu/sigmoid", seed, &report);

        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let m = tape.mean_all(x);
            let s = tape.sum_all(x);
            let both = tape.add(m, s).unwrap();
            let sq = tape.mul(both, both).unwrap();
            tape.sum_all(sq)
        });
        assert_report("sum_all/mean_all", seed, &report);

        let keep = vec![true, false, true];
        let wrow = rand_tensor(&mut rng, &[1, 4]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let m = tape.mean_rows_masked(x, &keep).unwrap();
            weighted_sum(tape, m, &wrow)
        });
        assert_report("mean_rows_masked", seed, &report);

        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let z = tape.zero_masked_rows(x, &keep).unwrap();
            weighted_sum(tape, z, &w)
        });
        assert_report("zero_masked_rows", seed, &report);
    }
}

#[test]
fn mul_col_vec_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[4, 3])).unwrap();
        let a = store.add("a", rand_tensor(&mut rng, &[4])).unwrap();
        let w = rand_tensor(&mut rng, &[4, 3]);
        let report = check(&mut store, |tape, st| {
            let x = tape.param(st, x);
            let a = tape.param(st, a);
            let out = tape.mul_col_vec(x, a).unwrap();
            weighted_sum(tape, out, &w)
        });
        assert_report("mul_col_vec", seed, &report);
    }
}

#[test]
fn cosine_score_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = store.add("f", rand_tensor(&mut rng, &[1, 6])).unwrap();
        let s = store.add("s", rand_tensor(&mut rng, &[5, 6])).unwrap();
        let valid = vec![true, true, false, true, true];
        let w = Tensor::from_vec(&[5], rand_vec(&mut rng, 5)).unwrap();
        let report = check(&mut store, |tape, st| {
            let f = tape.param(st, f);
            let s = tape.param(st, s);
            let scores = tape.cosine_scores(f, s, &valid, 1e-12).unwrap();
            weighted_sum(tape, scores, &w)
        });
        assert_report("cosine_scores", seed, &report);
    }
}

#[test]
fn sigmoid_bce_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let z = store.add("z", rand_tensor(&mut rng, &[4, 1])).unwrap();
        let labels: Vec<f64> = (0..4).map(|_| f64::from(rng.gen_range(0..2))).collect();
        let report = check(&mut store, |tape, st| {
            let z = tape.param(st, z);
            let p = tape.sigmoid(z);
            tape.bce_loss(p, &labels).unwrap()
        });
        assert_report("sigmoid+bce_loss", seed, &report);
    }
}

/// The straight-through gather's score gradient is checked against the
/// relaxed expression `Gather(S ⊙ A, I)` with the selection indices
/// frozen — the smooth surrogate the backward pass is defined to follow.
/// Its source-row gradient is checked against a plain row gather, which
/// is what the forward pass computes. Both reference routes are
/// themselves finite-difference verified here.
#[test]
fn ste_gather_matches_frozen_index_relaxed_expression() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = 6;
        let cols = 4;
        let idx = vec![1usize, 3, 4];

        let mut store = ParamStore::new();
        let s = store.add("s", rand_tensor(&mut rng, &[rows, cols])).unwrap();
        // Scores in (0,1), as the cosine op produces.
        let a_vals: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.05..0.95)).collect();
        let a = store
            .add("a", Tensor::from_vec(&[rows], a_vals).unwrap())
            .unwrap();
        let w = rand_tensor(&mut rng, &[idx.len(), cols]);

        // Relaxed expression Gather(S ⊙ A, I): smooth, FD-checkable.
        let relaxed = |tape: &mut Tape<f64>, st: &ParamStore<f64>| {
            let s = tape.param(st, s);
            let a = tape.param(st, a);
            let scaled = tape.mul_col_vec(s, a).unwrap();
            let gathered = tape.gather_rows(scaled, &idx).unwrap();
            weighted_sum(tape, gathered, &w)
        };
        let report = check(&mut store, relaxed);
        assert_report("ste relaxed expression", seed, &report);
        let grad_a_relaxed = store.grad(a).data().to_vec();

        // Hard gather: FD-checkable reference for the source-row path.
        let hard = |tape: &mut Tape<f64>, st: &ParamStore<f64>| {
            let s = tape.param(st, s);
            let gathered = tape.gather_rows(s, &idx).unwrap();
            weighted_sum(tape, gathered, &w)
        };
        let report = check(&mut store, hard);
        assert_report("ste hard gather", seed, &report);
        let grad_s_hard = store.grad(s).data().to_vec();

        // Fused op gradients.
        let mut tape = Tape::new();
        let sn = tape.param(&store, s);
        let an = tape.param(&store, a);
        let out = tape.ste_gather(sn, an, &idx, idx.len()).unwrap();
        let loss = weighted_sum(&mut tape, out, &w);
        let hard_forward = {
            let g = tape.gather_rows(sn, &idx).unwrap();
            tape.value(g).data().to_vec()
        };
        assert_eq!(tape.value(out).data(), &hard_forward[..]);
        tape.backward(loss, &mut store).unwrap();

        for j in 0..rows {
            let d = (store.grad(a).data()[j] - grad_a_relaxed[j]).abs();
            assert!(d < 1e-10, "score grad mismatch at {j}: {d}");
            if !idx.contains(&j) {
                assert_eq!(store.grad(a).data()[j], 0.0);
                assert_eq!(grad_a_relaxed[j], 0.0);
            }
        }
        for (g_fused, g_hard) in store.grad(s).data().iter().zip(&grad_s_hard) {
            assert!((g_fused - g_hard).abs() < 1e-12);
        }
    }
}
