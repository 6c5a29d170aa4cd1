use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reserved padding index (frozen all-zero embedding row).
pub const PAD: u32 = 0;
/// Reserved out-of-vocabulary index.
pub const OOV: u32 = 1;

/// Which embedding table a contextual field reads from. The target item
/// and category share tables with the behavior sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableRef {
    Own,
    Item,
    Category,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: u32,
    pub table: TableRef,
}

/// Everything a model needs to size its embedding tables and interpret
/// `Sample::contextual_ids`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub fields: Vec<FieldSpec>,
    /// Index of the target-item field within `fields`.
    pub item_field: usize,
    /// Index of the target-category field within `fields`.
    pub cat_field: usize,
    pub item_vocab: u32,
    pub cat_vocab: u32,
    pub l_max: u32,
}

impl DatasetMeta {
    pub fn n_f(&self) -> usize {
        self.fields.len()
    }
}

/// One labeled impression: contextual ids (one per field, including the
/// target item and category), the preceding click sequence, and a
/// binary label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub user: u32,
    /// Impression timestamp; orders a user's samples for the temporal split.
    pub time: u64,
    /// Impression group: a positive and its sampled negatives share one
    /// group so the split never separates them.
    pub group: u32,
    pub contextual_ids: Vec<u32>,
    pub seq_items: Vec<u32>,
    pub seq_cats: Vec<u32>,
    /// Number of real (non-padding) sequence positions.
    pub valid_len: usize,
    pub label: u8,
    /// Ground-truth relevant positions (synthetic data diagnostics only).
    pub relevant: Vec<u32>,
}

impl Sample {
    pub fn target_item(&self, meta: &DatasetMeta) -> u32 {
        self.contextual_ids[meta.item_field]
    }

    pub fn target_category(&self, meta: &DatasetMeta) -> u32 {
        self.contextual_ids[meta.cat_field]
    }

    pub fn seq_mask(&self) -> Vec<bool> {
        (0..self.seq_items.len()).map(|j| j < self.valid_len).collect()
    }

    fn pad_to(&mut self, len: usize) {
        debug_assert!(self.valid_len <= len);
        self.seq_items.resize(len, PAD);
        self.seq_cats.resize(len, PAD);
    }
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

/// Train/validation/test partition of a sample set.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Per user: the last 10% of impression groups go to test, the 10%
/// before those to validation, the rest to train. Groups are ordered by
/// time, so evaluation data always lies after the training data.
pub fn temporal_split(set: &SampleSet) -> Split {
    let mut by_user: BTreeMap<u32, Vec<&Sample>> = BTreeMap::new();
    for s in &set.samples {
        by_user.entry(s.user).or_default().push(s);
    }
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut samples) in by_user {
        samples.sort_by_key(|s| (s.time, s.group, s.label == 0));
        let mut groups: Vec<u32> = samples.iter().map(|s| s.group).collect();
        groups.dedup();
        let group_pos: BTreeMap<u32, usize> =
            groups.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let g = groups.len();
        let n_test = g / 10;
        let n_valid = g / 10;
        let test_start = g - n_test;
        let valid_start = test_start - n_valid;
        for s in samples {
            let gi = group_pos[&s.group];
            let bucket = if gi >= test_start {
                &mut split.test
            } else if gi >= valid_start {
                &mut split.valid
            } else {
                &mut split.train
            };
            bucket.push(s.clone());
        }
    }
    split
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Pad sequences to the longest valid length in the batch.
    BatchMax,
    /// Pad every sequence to `l_max`.
    ToLMax,
}

/// A batch of samples padded to a common sequence length.
#[derive(Clone, Debug)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels<F: cdnet_tensor::Real>(&self) -> Vec<F> {
        self.samples
            .iter()
            .map(|s| F::from_f64(f64::from(s.label)))
            .collect()
    }
}

/// Deterministically shuffle and cut into batches; the final partial
/// batch is emitted.
pub fn batches(
    samples: &[Sample],
    batch_size: usize,
    shuffle_seed: u64,
    pad: PadMode,
    l_max: usize,
) -> Vec<Batch> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(samples.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
        let target = match pad {
            PadMode::ToLMax => l_max,
            PadMode::BatchMax => batch.iter().map(|s| s.valid_len).max().unwrap_or(0),
        };
        for s in &mut batch {
            s.pad_to(target);
        }
        out.push(Batch { samples: batch });
    }
    out
}
