//! Property tests for the engine's numeric invariants.

use cdnet_tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-50.0f64..50.0, rows * cols)
        .prop_map(move |data| Tensor::from_vec(&[rows, cols], data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one_and_stay_finite(t in finite_matrix(3, 6)) {
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.value(s);
        prop_assert!(v.is_finite());
        for r in 0..3 {
            let sum: f64 = v.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            prop_assert!(v.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn forward_ops_preserve_finiteness(a in finite_matrix(4, 4), b in finite_matrix(4, 4)) {
        let mut tape = Tape::new();
        let an = tape.constant(a);
        let bn = tape.constant(b);
        let mm = tape.matmul(an, bn).unwrap();
        let sum = tape.add(mm, an).unwrap();
        let act = tape.relu(sum);
        let sig = tape.sigmoid(act);
        let sm = tape.softmax_rows(sig).unwrap();
        prop_assert!(tape.value(sm).is_finite());
        let red = tape.mean_all(sm);
        prop_assert!(tape.value(red).is_finite());
    }

    #[test]
    fn stop_gradient_is_bitwise_zero_for_cut_branch(t in finite_matrix(2, 5)) {
        let mut store = ParamStore::new();
        let p = store.add("x", t).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, p);
        let sg = tape.stop_gradient(x);
        let squared = tape.mul(sg, sg).unwrap();
        let loss = tape.sum_all(squared);
        tape.backward(loss, &mut store).unwrap();
        for &g in store.grad(p).data() {
            prop_assert_eq!(g.to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn identical_forwards_are_bit_identical(t in finite_matrix(3, 4)) {
        let run = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let x = tape.constant(t.clone());
            let s = tape.softmax_rows(x).unwrap();
            let g = tape.sigmoid(s);
            tape.value(g).data().to_vec()
        };
        let a = run(&t);
        let b = run(&t);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}
