use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{CdnetError, Result};

/// Which token set the model assembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Core-behavior tokens + interest-distribution token + context.
    Cdnet,
    /// Interest-distribution token + context (no core behaviors).
    RCore,
    /// Core-behavior tokens + context (no interest distribution).
    RGid,
    /// Masked mean of all behavior embeddings + context.
    MeanPool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Cdnet,
        Variant::RCore,
        Variant::RGid,
        Variant::MeanPool,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cdnet => "cdnet",
            Variant::RCore => "rcore",
            Variant::RGid => "rgid",
            Variant::MeanPool => "meanpool",
        }
    }

    /// Token count for a given core budget and context width.
    pub fn token_count(self, k: usize, n_f: usize) -> usize {
        match self {
            Variant::Cdnet => k + 1 + n_f,
            Variant::RCore => 1 + n_f,
            Variant::RGid => k + n_f,
            Variant::MeanPool => 1 + n_f,
        }
    }

    pub fn uses_core_tokens(self) -> bool {
        matches!(self, Variant::Cdnet | Variant::RGid)
    }

    pub fn uses_distribution_token(self) -> bool {
        matches!(self, Variant::Cdnet | Variant::RCore)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CdnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdnet" => Ok(Variant::Cdnet),
            "rcore" => Ok(Variant::RCore),
            "rgid" => Ok(Variant::RGid),
            "meanpool" => Ok(Variant::MeanPool),
            other => Err(CdnetError::Config(format!(
                "unknown variant {other:?} (expected cdnet, rcore, rgid or meanpool)"
            ))),
        }
    }
}

/// Model and optimization hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Embedding width.
    pub d: usize,
    /// Number of core behaviors selected per sample.
    pub k: usize,
    /// Number of similarity bins in the interest distribution.
    pub n: usize,
    /// Interaction blocks (H).
    pub blocks: usize,
    pub heads: usize,
    /// Maximum behavior-sequence length.
    pub l_max: usize,
    /// Number of contextual feature tokens.
    pub n_f: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Hidden width multiplier of the per-token feed-forward nets.
    pub ffn_mult: usize,
    /// Hidden widths of the prediction MLP.
    pub mlp_hidden: Vec<usize>,
    /// Early-stopping patience (epochs without validation-AUC gain).
    pub patience: usize,
    /// Negatives per positive when building samples from logs.
    pub neg_ratio: usize,
    /// Pad every batch to `l_max` instead of the batch maximum.
    pub pad_to_l_max: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 32,
            k: 16,
            n: 5,
            blocks: 2,
            heads: 2,
            l_max: 600,
            n_f: 5,
            lr: 1e-3,
            batch_size: 256,
            epochs: 5,
            seed: 42,
            variant: Variant::Cdnet,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ffn_mult: 2,
            mlp_hidden: vec![128, 64],
            patience: 2,
            neg_ratio: 1,
            pad_to_l_max: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.l_max {
            return Err(CdnetError::Config(format!(
                "k must satisfy 1 <= k <= l_max, got k={} l_max={}",
                self.k, self.l_max
            )));
        }
        if self.n == 0 {
            return Err(CdnetError::Config("n must be >= 1".into()));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(CdnetError::Config(format!(
                "d ({}) must be a positive multiple of heads ({})",
                self.d, self.heads
            )));
        }
        if self.blocks == 0 || self.batch_size == 0 || self.n_f == 0 {
            return Err(CdnetError::Config(
                "blocks, batch_size and n_f must be >= 1".into(),
            ));
        }
        if self.ffn_mult == 0 {
            return Err(CdnetError::Config("ffn_mult must be >= 1".into()));
        }
        if self.neg_ratio == 0 {
            return Err(CdnetError::Config("neg_ratio must be >= 1".into()));
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.variant.token_count(self.k, self.n_f)
    }

    /// Consume the keys this struct understands from a parsed config
    /// map, leaving unrelated keys in place.
    pub fn apply_map(&mut self, map: &mut BTreeMap<String, String>) -> Result<()> {
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
        take!("d", self.d, usize);
        take!("k", self.k, usize);
        take!("n", self.n, usize);
        take!("blocks", self.blocks, usize);
        take!("heads", self.heads, usize);
        take!("l_max", self.l_max, usize);
        take!("n_f", self.n_f, usize);
        take!("lr", self.lr, f64);
        take!("batch_size", self.batch_size, usize);
        take!("epochs", self.epochs, usize);
        take!("seed", self.seed, u64);
        take!("beta1", self.beta1, f64);
        take!("beta2", self.beta2, f64);
        take!("epsilon", self.epsilon, f64);
        take!("ffn_mult", self.ffn_mult, usize);
        take!("patience", self.patience, usize);
        take!("neg_ratio", self.neg_ratio, usize);
        take!("pad_to_l_max", self.pad_to_l_max, bool);
        if let Some(v) = map.remove("variant") {
            self.variant = v.parse()?;
        }
        if let Some(v) = map.remove("mlp_hidden") {
            self.mlp_hidden = parse_usize_list("mlp_hidden", &v)?;
        }
        Ok(())
    }
}

pub fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| CdnetError::BadConfigValue {
                key: key.into(),
                value: value.into(),
            })
        })
        .collect()
}

/// Parse a flat `key = value` config file. `#` starts a comment; blank
/// lines are ignored. Later assignments win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CdnetError::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                ln + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Error out on any key no consumer claimed.
pub fn reject_unknown_keys(map: &BTreeMap<String, String>) -> Result<()> {
    if let Some(key) = map.keys().next() {
        return Err(CdnetError::UnknownConfigKey { key: key.clone() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_apply_round_trip() {
        let text = "k = 8\nvariant = rgid   # ablation\n\nmlp_hidden = 64, 32\n";
        let mut map = parse_config_text(text).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_map(&mut map).unwrap();
        reject_unknown_keys(&map).unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.variant, Variant::RGid);
        assert_eq!(cfg.mlp_hidden, vec![64, 32]);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut map = parse_config_text("bogus_key = 3").unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_map(&mut map).unwrap();
        let err = reject_unknown_keys(&map).unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn variant_token_arithmetic() {
        assert_eq!(Variant::Cdnet.token_count(16, 5), 22);
        assert_eq!(Variant::RCore.token_count(16, 5), 6);
        assert_eq!(Variant::RGid.token_count(16, 5), 21);
        assert_eq!(Variant::MeanPool.token_count(16, 5), 6);
    }

    #[test]
    fn k_greater_than_l_max_rejected() {
        let cfg = TrainConfig {
            k: 20,
            l_max: 10,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
