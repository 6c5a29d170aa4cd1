use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::{DatasetMeta, FieldSpec, Sample, SampleSet, TableRef};
use crate::error::{CdnetError, Result};

/// Planted-signal synthetic data.
///
/// Each sample gets a target item, a full-length behavior sequence with
/// `c ~ U{0..=max_relevant}` behaviors sharing the target's category
/// (the planted-relevant ones), and a label drawn with probability
/// `sigmoid(w_count*c + w_threshold*[c >= k_true] + bias + noise)`.
///
/// The count term rewards resolving how many relevant behaviors exist
/// across the whole sequence; the threshold term rewards resolving the
/// exact count near `k_true`. The two views of the model read these with
/// different acuity, which is what the ablation experiments probe.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Full sequence length L (every sample uses all of it).
    pub seq_len: usize,
    pub n_users: u32,
    pub n_items: u32,
    pub n_categories: u32,
    /// Threshold of the category-match indicator term.
    pub k_true: usize,
    /// Relevant-behavior count is uniform on 0..=max_relevant.
    pub max_relevant: usize,
    pub w_count: f64,
    pub w_threshold: f64,
    pub noise_std: f64,
    pub bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 10_000,
            seq_len: 32,
            n_users: 2_000,
            n_items: 600,
            n_categories: 40,
            k_true: 4,
            max_relevant: 16,
            w_count: 0.15,
            w_threshold: 1.6,
            noise_std: 0.4,
            bias: -2.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.seq_len == 0 {
            return Err(CdnetError::Config(
                "synth: n_samples and seq_len must be >= 1".into(),
            ));
        }
        if self.n_categories < 2 {
            return Err(CdnetError::Config("synth: need at least 2 categories".into()));
        }
        if self.n_items < self.n_categories || self.n_items % self.n_categories != 0 {
            return Err(CdnetError::Config(
                "synth: n_items must be a positive multiple of n_categories".into(),
            ));
        }
        if self.max_relevant > self.seq_len {
            return Err(CdnetError::Config(
                "synth: max_relevant cannot exceed seq_len".into(),
            ));
        }
        if self.k_true == 0 {
            return Err(CdnetError::Config("synth: k_true must be >= 1".into()));
        }
        if self.n_users == 0 {
            return Err(CdnetError::Config("synth: n_users must be >= 1".into()));
        }
        Ok(())
    }

    /// How the standard config keys map onto this struct; every field is
    /// addressable as `synth_<name>` in a config file.
    pub fn apply_map(
        &mut self,
        map: &mut std::collections::BTreeMap<String, String>,
    ) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:expr, $ty:ty) => {
                if let Some(v) = map.remove($key) {
                    $field = v.parse::<$ty>().map_err(|_| CdnetError::BadConfigValue {
                        key: $key.into(),
                        value: v.clone(),
                    })?;
                }
            };
        }
        take!("synth_samples", self.n_samples, usize);
        take!("synth_seq_len", self.seq_len, usize);
        take!("synth_users", self.n_users, u32);
        take!("synth_items", self.n_items, u32);
        take!("synth_categories", self.n_categories, u32);
        take!("synth_k_true", self.k_true, usize);
        take!("synth_max_relevant", self.max_relevant, usize);
        take!("synth_w_count", self.w_count, f64);
        take!("synth_w_threshold", self.w_threshold, f64);
        take!("synth_noise_std", self.noise_std, f64);
        take!("synth_bias", self.bias, f64);
        Ok(())
    }
}

/// Category of a raw item index under the fixed assignment.
fn category_of(item: u32, n_categories: u32) -> u32 {
    item % n_categories
}

pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SampleSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_cat = cfg.n_items / cfg.n_categories;
    let mut samples = Vec::with_capacity(cfg.n_samples);

    for idx in 0..cfg.n_samples {
        let user = rng.gen_range(0..cfg.n_users);
        let target_item = rng.gen_range(0..cfg.n_items);
        let target_cat = category_of(target_item, cfg.n_categories);

        let relevant_count = rng.gen_range(0..=cfg.max_relevant);
        // Choose distinct positions for the relevant behaviors.
        let mut positions: Vec<usize> = (0..cfg.seq_len).collect();
        for i in 0..relevant_count {
            let j = rng.gen_range(i..cfg.seq_len);
            positions.swap(i, j);
        }
        let mut relevant = positions[..relevant_count].to_vec();
        relevant.sort_unstable();

        let mut seq_items = vec![0u32; cfg.seq_len];
        let mut seq_cats = vec![0u32; cfg.seq_len];
        let mut rel_iter = relevant.iter().peekable();
        for pos in 0..cfg.seq_len {
            let is_relevant = rel_iter.peek() == Some(&&pos);
            if is_relevant {
                rel_iter.next();
            }
            let raw_item = if is_relevant {
                target_cat + cfg.n_categories * rng.gen_range(0..per_cat)
            } else {
                // Any item from a different category.
                loop {
                    let cand = rng.gen_range(0..cfg.n_items);
                    if category_of(cand, cfg.n_categories) != target_cat {
                        break cand;
                    }
                }
            };
            seq_items[pos] = 2 + raw_item;
            seq_cats[pos] = 2 + category_of(raw_item, cfg.n_categories);
        }

        let threshold_hit = relevant_count >= cfg.k_true;
        let z = cfg.w_count * relevant_count as f64
            + cfg.w_threshold * f64::from(threshold_hit)
            + cfg.bias
            + cfg.noise_std * gaussian(&mut rng);
        let p = 1.0 / (1.0 + (-z).exp());
        let label = u8::from(rng.gen_range(0.0..1.0) < p);

        let hour = 2 + rng.gen_range(0..24u32);
        let dow = 2 + rng.gen_range(0..7u32);
        samples.push(Sample {
            user: 2 + user,
            time: idx as u64,
            group: idx as u32,
            contextual_ids: vec![2 + user, 2 + target_item, 2 + target_cat, hour, dow],
            seq_items,
            seq_cats,
            valid_len: cfg.seq_len,
            label,
            relevant: relevant.iter().map(|&p| p as u32).collect(),
        });
    }

    let meta = DatasetMeta {
        fields: vec![
            FieldSpec {
                name: "user".into(),
                vocab_size: cfg.n_users + 2,
                table: TableRef::Own,
            },
            FieldSpec {
                name: "item".into(),
                vocab_size: cfg.n_items + 2,
                table: TableRef::Item,
            },
            FieldSpec {
                name: "category".into(),
                vocab_size: cfg.n_categories + 2,
                table: TableRef::Category,
            },
            FieldSpec {
                name: "hour".into(),
                vocab_size: 26,
                table: TableRef::Own,
            },
            FieldSpec {
                name: "dow".into(),
                vocab_size: 9,
                table: TableRef::Own,
            },
        ],
        item_field: 1,
        cat_field: 2,
        item_vocab: cfg.n_items + 2,
        cat_vocab: cfg.n_categories + 2,
        l_max: cfg.seq_len as u32,
    };
    Ok(SampleSet { meta, samples })
}

/// Standard normal via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
