//! Property tests for pipeline and metric invariants.

use std::collections::HashSet;

use cdnet::data::{
    batches, build_samples, synth_generate, BehaviorType, InteractionRecord, PadMode, SynthConfig,
    Vocabulary, PAD,
};
use cdnet::metrics::{auc, gauc, EvalRecord};
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = InteractionRecord> {
    (
        0u32..12,
        0u32..40,
        0u32..8,
        prop_oneof![
            4 => Just(BehaviorType::Pv),
            1 => Just(BehaviorType::Buy),
            1 => Just(BehaviorType::Cart),
            1 => Just(BehaviorType::Fav),
        ],
        0u64..5_000,
    )
        .prop_map(|(u, i, c, behavior, timestamp)| InteractionRecord {
            user: format!("u{u}"),
            item: format!("i{i}"),
            category: format!("c{c}"),
            behavior,
            timestamp,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_samples_hold_pipeline_invariants(
        records in prop::collection::vec(record_strategy(), 0..400),
        l_max in 1usize..20,
        neg_ratio in 1usize..3,
        seed in 0u64..1000,
    ) {
        let (set, stats) = build_samples(&records, l_max, neg_ratio, seed).unwrap();

        // Count identities.
        prop_assert_eq!(stats.negatives, stats.positives * neg_ratio);
        let positives = set.samples.iter().filter(|s| s.label == 1).count();
        prop_assert_eq!(positives, stats.positives);
        prop_assert_eq!(set.samples.len(), stats.positives + stats.negatives);

        // Per-user full history for the negative-exclusion invariant.
        let mut vocab_check = Vocabulary::new();
        for r in &records {
            vocab_check.intern(&r.item);
        }
        let mut history: std::collections::HashMap<u32, HashSet<u32>> = Default::default();
        let mut user_vocab = Vocabulary::new();
        for r in &records {
            user_vocab.intern(&r.user);
        }
        for r in &records {
            history
                .entry(user_vocab.encode(&r.user))
                .or_default()
                .insert(vocab_check.encode(&r.item));
        }

        for s in &set.samples {
            prop_assert!(s.valid_len <= l_max);
            prop_assert_eq!(s.valid_len, s.seq_items.len());
            prop_assert!(s.label <= 1);
            if s.label == 0 {
                let target = s.target_item(&set.meta);
                prop_assert!(
                    !history[&s.user].contains(&target),
                    "negative target inside user history"
                );
            }
            for &id in &s.seq_items {
                prop_assert!(id != PAD, "padding id inside a real sequence prefix");
            }
        }
    }

    #[test]
    fn vocabulary_round_trips_every_interned_id(
        ids in prop::collection::vec("[a-z0-9]{1,8}", 1..60)
    ) {
        let mut vocab = Vocabulary::new();
        for id in &ids {
            vocab.intern(id);
        }
        for id in &ids {
            let enc = vocab.encode(id);
            prop_assert!(enc >= 2);
            prop_assert_eq!(vocab.decode(enc), Some(id.as_str()));
        }
        prop_assert_eq!(vocab.encode("…never-interned…"), cdnet::data::OOV);
    }

    #[test]
    fn batching_partitions_and_pads(
        n in 1usize..120,
        b in 1usize..40,
        seed in 0u64..100,
    ) {
        let set = synth_generate(
            &SynthConfig {
                n_samples: n,
                seq_len: 6,
                n_users: 10,
                n_items: 24,
                n_categories: 4,
                k_true: 2,
                max_relevant: 4,
                ..SynthConfig::default()
            },
            seed,
        )
        .unwrap();
        let bs = batches(&set.samples, b, seed, PadMode::BatchMax, 6);
        let total: usize = bs.iter().map(|x| x.len()).sum();
        prop_assert_eq!(total, n);
        for batch in &bs[..bs.len() - 1] {
            prop_assert_eq!(batch.len(), b.min(n));
        }
        // Every sample appears exactly once.
        let mut seen: Vec<u32> = bs
            .iter()
            .flat_map(|x| x.samples.iter().map(|s| s.group))
            .collect();
        seen.sort_unstable();
        let mut expect: Vec<u32> = set.samples.iter().map(|s| s.group).collect();
        expect.sort_unstable();
        prop_assert_eq!(seen, expect);
    }

    #[test]
    fn auc_invariant_under_monotone_transform_and_label_swap(
        scores in prop::collection::vec(0.0f64..1.0, 4..120),
        flips in prop::collection::vec(any::<bool>(), 4..120),
    ) {
        let n = scores.len().min(flips.len());
        let mut records: Vec<EvalRecord> = (0..n)
            .map(|i| EvalRecord::new(0, scores[i], u8::from(flips[i])))
            .collect();
        records[0].label = 1;
        records[1].label = 0;
        let base = auc(&records).unwrap();

        // Strictly monotone transform of the scores.
        let transformed: Vec<EvalRecord> = records
            .iter()
            .map(|r| EvalRecord::new(r.user, (r.score * 3.0 + 0.1).tanh(), r.label))
            .collect();
        prop_assert!((auc(&transformed).unwrap() - base).abs() < 1e-12);

        // Tie-free inputs: label swap flips the metric around 0.5.
        let tie_free: Vec<EvalRecord> = (0..n)
            .map(|i| EvalRecord::new(0, (i as f64 + 0.5) / (n as f64 + 1.0), records[i].label))
            .collect();
        let forward = auc(&tie_free).unwrap();
        let swapped: Vec<EvalRecord> = tie_free
            .iter()
            .map(|r| EvalRecord::new(r.user, r.score, 1 - r.label))
            .collect();
        prop_assert!((auc(&swapped).unwrap() - (1.0 - forward)).abs() < 1e-12);
    }

    #[test]
    fn gauc_with_equal_user_weights_is_plain_mean(
        per_user in 2usize..6,
        users in 2usize..8,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        let mut user_aucs = Vec::new();
        for u in 0..users {
            let mut recs: Vec<EvalRecord> = (0..per_user * 2)
                .map(|i| {
                    EvalRecord::new(
                        u as u32,
                        rng.gen_range(0.0..1.0),
                        u8::from(i % 2 == 0),
                    )
                })
                .collect();
            // Both classes guaranteed by construction.
            user_aucs.push(auc(&recs).unwrap());
            records.append(&mut recs);
        }
        let mean = user_aucs.iter().sum::<f64>() / user_aucs.len() as f64;
        prop_assert!((gauc(&records).unwrap() - mean).abs() < 1e-12);
    }
}
