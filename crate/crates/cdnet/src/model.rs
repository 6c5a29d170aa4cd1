//! The assembled model: encode features, select core behaviors, build
//! the interest distribution, run the interaction stack, predict.

use cdnet_tensor::{NodeId, ParamStore, Real, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{TrainConfig, Variant};
use crate::core_behaviors::{score_sequence, ste_gather, top_k_select};
use crate::data::{DatasetMeta, Sample};
use crate::embed::FeatureEncoder;
use crate::error::{CdnetError, Result};
use crate::interaction::{
    block_forward, init_block, init_head, predict, BlockIds, HeadIds, MhaCost,
};
use crate::interest::{histogram, CountEmbedder};

/// How selected core behaviors enter the token matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreRoute {
    /// Production path: hard gather forward, straight-through backward.
    Hard,
    /// Differentiable surrogate Gather(S ⊙ A, I_k) with frozen indices.
    /// The straight-through backward is defined as the gradient of this
    /// expression, so gradient checkers run the model in this mode.
    Relaxed,
}

pub struct CdnetModel<F: Real> {
    pub store: ParamStore<F>,
    pub config: TrainConfig,
    pub meta: DatasetMeta,
    pub encoder: FeatureEncoder,
    pub count_embedder: Option<CountEmbedder>,
    pub blocks: Vec<BlockIds>,
    pub head: HeadIds,
    pub tokens: usize,
    pub score_route: ScoreRoute,
}

/// What one forward pass produced besides the prediction: the discrete
/// decisions (selection, histogram) for diagnostics and for
/// finite-difference piece detection.
pub struct ForwardTrace {
    pub yhat: NodeId,
    pub selected: Vec<usize>,
    pub counts: Vec<u32>,
}

impl ForwardTrace {
    /// Hash of the discrete decisions taken during the pass.
    pub fn signature(&self) -> u64 {
        let mut h = cdnet_tensor::gradcheck::SignatureHasher::new();
        for &i in &self.selected {
            h.push(i as u64 + 1);
        }
        h.push(u64::MAX);
        for &c in &self.counts {
            h.push(u64::from(c));
        }
        h.finish()
    }
}

impl<F: Real> CdnetModel<F> {
    pub fn new(config: TrainConfig, meta: DatasetMeta) -> Result<Self> {
        config.validate()?;
        if config.n_f != meta.n_f() {
            return Err(CdnetError::Config(format!(
                "config n_f = {} but dataset has {} contextual fields",
                config.n_f,
                meta.n_f()
            )));
        }
        if config.l_max < meta.l_max as usize {
            return Err(CdnetError::Config(format!(
                "config l_max = {} below dataset l_max = {}",
                config.l_max, meta.l_max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let encoder = FeatureEncoder::new(&mut store, &meta, d, &mut rng)?;
        let count_embedder = if config.variant.uses_distribution_token() {
            Some(CountEmbedder::new(&mut store, config.n, d, &mut rng)?)
        } else {
            None
        };
        let tokens = config.token_count();
        let mut blocks = Vec::with_capacity(config.blocks);
        for h in 0..config.blocks {
            blocks.push(init_block(
                &mut store,
                &format!("block{h}"),
                tokens,
                d,
                config.heads,
                config.ffn_mult,
                &mut rng,
            )?);
        }
        let head = init_head(&mut store, tokens, d, &config.mlp_hidden, &mut rng)?;
        Ok(CdnetModel {
            store,
            config,
            meta,
            encoder,
            count_embedder,
            blocks,
            head,
            tokens,
            score_route: ScoreRoute::Hard,
        })
    }

    /// Forward pass for one sample on the given tape. `attn_cost`, when
    /// present, accumulates attention multiply-adds.
    pub fn forward_with_cost(
        &self,
        tape: &mut Tape<F>,
        sample: &Sample,
        attn_cost: Option<&mut MhaCost>,
    ) -> Result<ForwardTrace> {
        self.forward_in(&self.store, tape, sample, attn_cost)
    }

    /// Forward pass reading parameter values from an explicit store
    /// (which must have this model's layout). Gradient checkers perturb
    /// the store while holding the model immutably, so the two borrows
    /// have to be separable.
    pub fn forward_in(
        &self,
        store: &ParamStore<F>,
        tape: &mut Tape<F>,
        sample: &Sample,
        mut attn_cost: Option<&mut MhaCost>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let (behaviors, seq_mask) = self.encoder.encode_behaviors(tape, store, sample)?;
        let ctx = self
            .encoder
            .encode_context(tape, store, &self.meta, sample)?;

        let needs_scores =
            cfg.variant.uses_core_tokens() || cfg.variant.uses_distribution_token();
        let scores = if needs_scores {
            let target = self
                .encoder
                .encode_target(tape, store, &self.meta, sample)?;
            Some(score_sequence(tape, target, behaviors, &seq_mask)?)
        } else {
            None
        };

        let mut token_parts: Vec<NodeId> = Vec::with_capacity(3);
        let mut token_mask: Vec<bool> = Vec::with_capacity(self.tokens);
        let mut selected = Vec::new();
        let mut counts = Vec::new();

        if cfg.variant.uses_core_tokens() {
            let sv = scores.as_ref().expect("scores required for core tokens");
            let selection = top_k_select(tape, sv, cfg.k);
            selected = selection.indices.clone();
            match self.score_route {
                ScoreRoute::Hard => {
                    let core = ste_gather(tape, behaviors, sv, &selection, cfg.k)?;
                    token_parts.push(core.node);
                    token_mask.extend_from_slice(&core.core_mask);
                }
                ScoreRoute::Relaxed => {
                    let scaled = tape.mul_col_vec(behaviors, sv.node)?;
                    let gathered = tape.gather_rows(scaled, &selection.indices)?;
                    let k_eff = selection.k_eff();
                    let node = if k_eff < cfg.k {
                        let pad = tape.constant(cdnet_tensor::Tensor::zeros(&[
                            cfg.k - k_eff,
                            cfg.d,
                        ]));
                        tape.concat_rows(&[gathered, pad])?
                    } else {
                        gathered
                    };
                    token_parts.push(node);
                    let mut core_mask = vec![false; cfg.k];
                    core_mask[..k_eff].fill(true);
                    token_mask.extend_from_slice(&core_mask);
                }
            }
        }
        if cfg.variant.uses_distribution_token() {
            let sv = scores.as_ref().expect("scores required for distribution");
            let embedder = self
                .count_embedder
                .as_ref()
                .expect("distribution variant has an embedder");
            counts = histogram(tape, sv, cfg.n);
            let gid = embedder.embed(tape, store, &counts)?;
            token_parts.push(gid);
            token_mask.push(true);
        }
        if cfg.variant == Variant::MeanPool {
            let pooled = tape.mean_rows_masked(behaviors, &seq_mask)?;
            token_parts.push(pooled);
            token_mask.push(true);
        }
        token_parts.push(ctx);
        token_mask.extend(std::iter::repeat_n(true, cfg.n_f));

        let x0 = tape.concat_rows(&token_parts)?;
        debug_assert_eq!(tape.value(x0).rows(), self.tokens);
        debug_assert_eq!(token_mask.len(), self.tokens);

        let mut x = tape.zero_masked_rows(x0, &token_mask)?;
        for block in &self.blocks {
            x = block_forward(tape, store, x, block, &token_mask, attn_cost.as_deref_mut())?;
        }
        let yhat = predict(tape, store, x, &self.head)?;
        Ok(ForwardTrace {
            yhat,
            selected,
            counts,
        })
    }

    pub fn forward(&self, tape: &mut Tape<F>, sample: &Sample) -> Result<ForwardTrace> {
        self.forward_with_cost(tape, sample, None)
    }

    /// Prediction as a plain number on a throwaway tape.
    pub fn predict_score(&self, sample: &Sample) -> Result<F> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, sample)?;
        Ok(tape.scalar(trace.yhat)?)
    }
}
