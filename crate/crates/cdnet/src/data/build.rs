use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::{BehaviorType, InteractionRecord};
use super::sample::{DatasetMeta, FieldSpec, Sample, SampleSet, TableRef};
use super::vocab::Vocabulary;
use crate::error::{CdnetError, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildStats {
    pub users_total: usize,
    pub users_contributing: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Click events qualify as positives once the user has at least this
/// many prior clicks to form a sequence from.
const WARMUP_CLICKS: usize = 5;

struct Event {
    item: u32,
    category: u32,
    timestamp: u64,
}

/// Construct labeled samples from a behavior log.
///
/// Per user, events are time-sorted; every click with at least five
/// prior clicks yields one positive whose sequence is the preceding (up
/// to `l_max`) clicks. Each positive gets `neg_ratio` negatives by
/// swapping the target for an item sampled uniformly from the global
/// item vocabulary, excluding everything in that user's history.
pub fn build_samples(
    records: &[InteractionRecord],
    l_max: usize,
    neg_ratio: usize,
    seed: u64,
) -> Result<(SampleSet, BuildStats)> {
    if l_max == 0 {
        return Err(CdnetError::Config("l_max must be >= 1".into()));
    }
    if neg_ratio == 0 {
        return Err(CdnetError::Config("neg_ratio must be >= 1".into()));
    }

    let mut users = Vocabulary::new();
    let mut items = Vocabulary::new();
    let mut cats = Vocabulary::new();
    let mut hours = Vocabulary::new();
    let mut dows = Vocabulary::new();
    // Category of each item: first observation wins.
    let mut item_cat: HashMap<u32, u32> = HashMap::new();
    // Keyed by raw user string so iteration order is reproducible.
    let mut per_user: BTreeMap<String, Vec<Event>> = BTreeMap::new();

    for rec in records {
        users.intern(&rec.user);
        let item = items.intern(&rec.item);
        let category = cats.intern(&rec.category);
        item_cat.entry(item).or_insert(category);
        hours.intern(&hour_of_day(rec.timestamp).to_string());
        dows.intern(&day_of_week(rec.timestamp).to_string());
        if rec.behavior == BehaviorType::Pv {
            per_user.entry(rec.user.clone()).or_default().push(Event {
                item,
                category,
                timestamp: rec.timestamp,
            });
        }
    }
    // Full history (any behavior type) per user, for negative exclusion.
    let mut history: BTreeMap<String, HashSet<u32>> = BTreeMap::new();
    for rec in records {
        history
            .entry(rec.user.clone())
            .or_default()
            .insert(items.encode(&rec.item));
    }

    let n_items = items.real_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = BuildStats {
        users_total: per_user.len(),
        ..BuildStats::default()
    };
    let mut samples = Vec::new();
    let mut group: u32 = 0;

    for (user_raw, mut events) in per_user {
        // Stable sort keeps file order among equal timestamps.
        events.sort_by_key(|e| e.timestamp);
        if events.len() <= WARMUP_CLICKS {
            continue;
        }
        stats.users_contributing += 1;
        let user = users.encode(&user_raw);
        let user_history = &history[&user_raw];
        for i in WARMUP_CLICKS..events.len() {
            let target = &events[i];
            let start = i.saturating_sub(l_max);
            let seq_items: Vec<u32> = events[start..i].iter().map(|e| e.item).collect();
            let seq_cats: Vec<u32> = events[start..i].iter().map(|e| e.category).collect();
            let hour = hours.encode(&hour_of_day(target.timestamp).to_string());
            let dow = dows.encode(&day_of_week(target.timestamp).to_string());

            let make = |item: u32, category: u32, label: u8, group: u32| Sample {
                user,
                time: target.timestamp,
                group,
                contextual_ids: vec![user, item, category, hour, dow],
                seq_items: seq_items.clone(),
                seq_cats: seq_cats.clone(),
                valid_len: seq_items.len(),
                label,
                relevant: Vec::new(),
            };

            let mut impression = vec![make(target.item, target.category, 1, group)];
            let mut complete = true;
            for _ in 0..neg_ratio {
                match sample_negative(&mut rng, n_items, user_history) {
                    Some(neg) => impression.push(make(neg, item_cat[&neg], 0, group)),
                    None => {
                        // The user has interacted with every item; no
                        // valid negative exists, so drop the whole
                        // impression to keep negatives == neg_ratio x
                        // positives.
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                stats.positives += 1;
                stats.negatives += neg_ratio;
                samples.extend(impression);
                group += 1;
            }
        }
    }

    let meta = DatasetMeta {
        fields: vec![
            FieldSpec {
                name: "user".into(),
                vocab_size: users.table_size(),
                table: TableRef::Own,
            },
            FieldSpec {
                name: "item".into(),
                vocab_size: items.table_size(),
                table: TableRef::Item,
            },
            FieldSpec {
                name: "category".into(),
                vocab_size: cats.table_size(),
                table: TableRef::Category,
            },
            FieldSpec {
                name: "hour".into(),
                vocab_size: hours.table_size(),
                table: TableRef::Own,
            },
            FieldSpec {
                name: "dow".into(),
                vocab_size: dows.table_size(),
                table: TableRef::Own,
            },
        ],
        item_field: 1,
        cat_field: 2,
        item_vocab: items.table_size(),
        cat_vocab: cats.table_size(),
        l_max: l_max as u32,
    };
    Ok((SampleSet { meta, samples }, stats))
}

/// Uniform over the global item vocabulary minus the user's history.
/// Rejection sampling with a deterministic ordered fallback scan.
fn sample_negative(
    rng: &mut ChaCha8Rng,
    n_items: u32,
    history: &HashSet<u32>,
) -> Option<u32> {
    if n_items == 0 {
        return None;
    }
    for _ in 0..64 {
        let candidate = 2 + rng.gen_range(0..n_items);
        if !history.contains(&candidate) {
            return Some(candidate);
        }
    }
    let start = rng.gen_range(0..n_items);
    for off in 0..n_items {
        let candidate = 2 + (start + off) % n_items;
        if !history.contains(&candidate) {
            return Some(candidate);
        }
    }
    None
}

pub(crate) fn hour_of_day(ts: u64) -> u64 {
    (ts / 3600) % 24
}

pub(crate) fn day_of_week(ts: u64) -> u64 {
    (ts / 86_400 + 4) % 7
}
