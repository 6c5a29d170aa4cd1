//! Feature encoders: shared item/category embedding tables plus one
//! table per remaining contextual field. The target item and the
//! behavior sequence read the same tables, so target-side and
//! sequence-side representations live in one space.

use cdnet_tensor::{NodeId, ParamId, ParamStore, Real, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetMeta, Sample, TableRef};
use crate::error::Result;

pub struct FeatureEncoder {
    pub item_table: ParamId,
    pub cat_table: ParamId,
    /// One entry per contextual field; `None` when the field reads the
    /// shared item/category table.
    pub field_tables: Vec<Option<ParamId>>,
    pub item_field: usize,
    pub cat_field: usize,
    pub d: usize,
}

/// Uniform(-1/sqrt(d), 1/sqrt(d)) with the padding row frozen at zero.
pub fn init_embedding_table<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    rows: u32,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamId> {
    let bound = 1.0 / (d as f64).sqrt();
    let mut data = vec![F::ZERO; rows as usize * d];
    for (i, v) in data.iter_mut().enumerate() {
        if i >= d {
            // Row 0 stays zero (padding).
            *v = F::from_f64(rng.gen_range(-bound..bound));
        }
    }
    let t = Tensor::from_vec(&[rows as usize, d], data)?;
    Ok(store.add_with(name, t, true, true)?)
}

/// Plain dense init for weight matrices: uniform(-1/sqrt(fan_in), ..).
pub fn init_dense<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamId> {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    let t = Tensor::from_vec(&[rows, cols], data)?;
    Ok(store.add(name, t)?)
}

pub fn init_vector<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    len: usize,
    fill: f64,
) -> Result<ParamId> {
    let t = Tensor::from_vec(&[len], vec![F::from_f64(fill); len])?;
    Ok(store.add(name, t)?)
}

impl FeatureEncoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        meta: &DatasetMeta,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let item_table = init_embedding_table(store, "emb/item", meta.item_vocab, d, rng)?;
        let cat_table = init_embedding_table(store, "emb/category", meta.cat_vocab, d, rng)?;
        let mut field_tables = Vec::with_capacity(meta.fields.len());
        for f in &meta.fields {
            match f.table {
                TableRef::Item | TableRef::Category => field_tables.push(None),
                TableRef::Own => {
                    let id = init_embedding_table(
                        store,
                        &format!("emb/field/{}", f.name),
                        f.vocab_size,
                        d,
                        rng,
                    )?;
                    field_tables.push(Some(id));
                }
            }
        }
        Ok(FeatureEncoder {
            item_table,
            cat_table,
            field_tables,
            item_field: meta.item_field,
            cat_field: meta.cat_field,
            d,
        })
    }

    fn table_for(&self, field: usize, meta: &DatasetMeta) -> ParamId {
        match meta.fields[field].table {
            TableRef::Item => self.item_table,
            TableRef::Category => self.cat_table,
            TableRef::Own => self.field_tables[field].expect("own field has a table"),
        }
    }

    /// One token per contextual field: [N_f x d].
    pub fn encode_context<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        meta: &DatasetMeta,
        sample: &Sample,
    ) -> Result<NodeId> {
        let mut tokens = Vec::with_capacity(meta.fields.len());
        for (field, &id) in sample.contextual_ids.iter().enumerate() {
            let table = self.table_for(field, meta);
            tokens.push(tape.lookup(store, table, &[id])?);
        }
        Ok(tape.concat_rows(&tokens)?)
    }

    /// Behavior tokens s_j = emb(item_j) + emb(category_j): [L x d] plus
    /// the validity mask.
    pub fn encode_behaviors<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        sample: &Sample,
    ) -> Result<(NodeId, Vec<bool>)> {
        let items = tape.lookup(store, self.item_table, &sample.seq_items)?;
        let cats = tape.lookup(store, self.cat_table, &sample.seq_cats)?;
        let s = tape.add(items, cats)?;
        Ok((s, sample.seq_mask()))
    }

    /// Target representation f_i = emb(target item) + emb(target
    /// category): [1 x d].
    pub fn encode_target<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        meta: &DatasetMeta,
        sample: &Sample,
    ) -> Result<NodeId> {
        let item = tape.lookup(store, self.item_table, &[sample.target_item(meta)])?;
        let cat = tape.lookup(store, self.cat_table, &[sample.target_category(meta)])?;
        Ok(tape.add(item, cat)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use rand::SeedableRng;

    fn tiny_setup() -> (crate::data::SampleSet, ParamStore<f64>, FeatureEncoder) {
        let set = synth_generate(
            &SynthConfig {
                n_samples: 4,
                seq_len: 6,
                n_users: 5,
                n_items: 12,
                n_categories: 4,
                max_relevant: 3,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = FeatureEncoder::new(&mut store, &set.meta, 8, &mut rng).unwrap();
        (set, store, enc)
    }

    #[test]
    fn context_shape_and_determinism() {
        let (set, store, enc) = tiny_setup();
        let sample = &set.samples[0];
        let mut tape = Tape::new();
        let ctx = enc.encode_context(&mut tape, &store, &set.meta, sample).unwrap();
        assert_eq!(tape.value(ctx).shape(), &[5, 8]);
        let again = enc.encode_context(&mut tape, &store, &set.meta, sample).unwrap();
        assert_eq!(tape.value(ctx).data(), tape.value(again).data());
    }

    #[test]
    fn target_equals_behavior_token_for_matching_ids() {
        let (set, store, enc) = tiny_setup();
        let mut sample = set.samples[0].clone();
        // Make behavior 0 identical to the target item/category.
        sample.seq_items[0] = sample.target_item(&set.meta);
        sample.seq_cats[0] = sample.target_category(&set.meta);
        let mut tape = Tape::new();
        let f = enc.encode_target(&mut tape, &store, &set.meta, &sample).unwrap();
        let (s, mask) = enc.encode_behaviors(&mut tape, &store, &sample).unwrap();
        assert!(mask[0]);
        assert_eq!(tape.value(f).data(), tape.value(s).row(0));
    }

    #[test]
    fn target_encoding_is_finite_at_init() {
        let (set, store, enc) = tiny_setup();
        for sample in &set.samples {
            let mut tape = Tape::new();
            let f = enc.encode_target(&mut tape, &store, &set.meta, sample).unwrap();
            assert!(tape.value(f).is_finite());
            let norm: f64 = tape.value(f).data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm.is_finite());
        }
    }

    #[test]
    fn padding_positions_are_zero_and_masked() {
        let (set, store, enc) = tiny_setup();
        let mut sample = set.samples[0].clone();
        sample.valid_len = 3;
        for j in 3..sample.seq_items.len() {
            sample.seq_items[j] = crate::data::PAD;
            sample.seq_cats[j] = crate::data::PAD;
        }
        let mut tape = Tape::new();
        let (s, mask) = enc.encode_behaviors(&mut tape, &store, &sample).unwrap();
        for j in 3..sample.seq_items.len() {
            assert!(!mask[j]);
            assert!(tape.value(s).row(j).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn weight_sharing_moves_both_encoders() {
        let (set, mut store, enc) = tiny_setup();
        let mut sample = set.samples[0].clone();
        sample.seq_items[0] = sample.target_item(&set.meta);
        sample.seq_cats[0] = sample.target_category(&set.meta);

        let before = {
            let mut tape = Tape::new();
            let f = enc.encode_target(&mut tape, &store, &set.meta, &sample).unwrap();
            tape.value(f).data().to_vec()
        };
        // Mutate the shared item row.
        let row = sample.target_item(&set.meta) as usize;
        let d = enc.d;
        store.entry_mut(enc.item_table).value.data_mut()[row * d] += 1.0;
        let (after_f, after_s0) = {
            let mut tape = Tape::new();
            let f = enc.encode_target(&mut tape, &store, &set.meta, &sample).unwrap();
            let (s, _) = enc.encode_behaviors(&mut tape, &store, &sample).unwrap();
            (
                tape.value(f).data().to_vec(),
                tape.value(s).row(0).to_vec(),
            )
        };
        assert_ne!(before, after_f);
        assert_eq!(after_f, after_s0);
    }
}
