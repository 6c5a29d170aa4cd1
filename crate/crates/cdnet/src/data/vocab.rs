use std::collections::HashMap;

use super::sample::OOV;

/// Per-field map from raw string id to dense index. Index 0 is padding,
/// index 1 is out-of-vocabulary; real ids start at 2 in first-seen order.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    map: HashMap<String, u32>,
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert if absent; never returns the padding or OOV index.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&idx) = self.map.get(raw) {
            return idx;
        }
        let idx = 2 + self.names.len() as u32;
        self.map.insert(raw.to_string(), idx);
        self.names.push(raw.to_string());
        idx
    }

    /// Unseen ids map to the OOV index.
    pub fn encode(&self, raw: &str) -> u32 {
        self.map.get(raw).copied().unwrap_or(OOV)
    }

    pub fn decode(&self, idx: u32) -> Option<&str> {
        if idx < 2 {
            return None;
        }
        self.names.get((idx - 2) as usize).map(String::as_str)
    }

    /// Table size: reserved rows plus every interned id.
    pub fn table_size(&self) -> u32 {
        2 + self.names.len() as u32
    }

    pub fn real_ids(&self) -> u32 {
        self.names.len() as u32
    }
}

#[cfg(test)]
mod tests {
    use super::super::sample::PAD;
    use super::*;

    #[test]
    fn round_trip_and_oov() {
        let mut v = Vocabulary::new();
        let a = v.intern("alpha");
        let b = v.intern("beta");
        assert_eq!(a, 2);
        assert_eq!(b, 3);
        assert_eq!(v.intern("alpha"), a);
        assert_eq!(v.encode("alpha"), a);
        assert_eq!(v.decode(a), Some("alpha"));
        assert_eq!(v.encode("never-seen"), OOV);
        assert_ne!(v.encode("alpha"), PAD);
        assert_eq!(v.table_size(), 4);
    }
}
