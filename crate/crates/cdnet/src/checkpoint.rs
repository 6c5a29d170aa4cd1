//! Checkpoints: magic `CDNT`, a u32 format version, then uniform
//! records of (name, rank, little-endian u64 dims, little-endian f32
//! values). Model parameters are stored under their registered names;
//! the config, dataset meta, and optimizer state ride along as
//! `__`-prefixed records in the same format, with integers encoded
//! exactly in f32 (16-bit limbs for the seed).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cdnet_tensor::{Real, Tensor};

use crate::config::{TrainConfig, Variant};
use crate::data::{DatasetMeta, FieldSpec};
use crate::error::{CdnetError, Result};
use crate::model::CdnetModel;
use crate::trainer::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct RawRecord {
    pub name: String,
    pub dims: Vec<u64>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct CheckpointData {
    pub version: u32,
    pub records: Vec<RawRecord>,
}

fn write_record(w: &mut impl Write, name: &str, dims: &[u64], values: &[f32]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> CdnetError {
    CdnetError::Checkpoint(msg.into())
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0usize;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(corrupt("unexpected end of file")),
            Ok(n) => filled += n,
            Err(e) => return Err(corrupt(format!("read error: {e}"))),
        }
    }
    Ok(true)
}

fn read_record(r: &mut impl Read) -> Result<Option<RawRecord>> {
    let mut len4 = [0u8; 4];
    if !read_exact_or_eof(r, &mut len4)? {
        return Ok(None);
    }
    let name_len = u32::from_le_bytes(len4) as usize;
    if name_len > 4096 {
        return Err(corrupt(format!("implausible name length {name_len}")));
    }
    let mut name_buf = vec![0u8; name_len];
    if !read_exact_or_eof(r, &mut name_buf)? && name_len > 0 {
        return Err(corrupt("unexpected end of file"));
    }
    let name = String::from_utf8(name_buf).map_err(|_| corrupt("name is not UTF-8"))?;
    let mut rank4 = [0u8; 4];
    if !read_exact_or_eof(r, &mut rank4)? {
        return Err(corrupt("unexpected end of file"));
    }
    let rank = u32::from_le_bytes(rank4) as usize;
    if rank > 8 {
        return Err(corrupt(format!("implausible rank {rank} for {name:?}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d8 = [0u8; 8];
        if !read_exact_or_eof(r, &mut d8)? {
            return Err(corrupt("unexpected end of file"));
        }
        dims.push(u64::from_le_bytes(d8));
    }
    let numel: u64 = dims.iter().product();
    if numel > (1 << 32) {
        return Err(corrupt(format!("implausible size {numel} for {name:?}")));
    }
    let mut values = Vec::with_capacity(numel as usize);
    for _ in 0..numel {
        let mut v4 = [0u8; 4];
        if !read_exact_or_eof(r, &mut v4)? {
            return Err(corrupt("unexpected end of file"));
        }
        values.push(f32::from_le_bytes(v4));
    }
    Ok(Some(RawRecord { name, dims, values }))
}

const VARIANT_CODES: [(Variant, f32); 4] = [
    (Variant::Cdnet, 0.0),
    (Variant::RCore, 1.0),
    (Variant::RGid, 2.0),
    (Variant::MeanPool, 3.0),
];

fn encode_config(cfg: &TrainConfig) -> Vec<f32> {
    let variant_code = VARIANT_CODES
        .iter()
        .find(|(v, _)| *v == cfg.variant)
        .expect("all variants coded")
        .1;
    let mut out = vec![
        cfg.d as f32,
        cfg.k as f32,
        cfg.n as f32,
        cfg.blocks as f32,
        cfg.heads as f32,
        cfg.l_max as f32,
        cfg.n_f as f32,
        cfg.lr as f32,
        cfg.batch_size as f32,
        cfg.epochs as f32,
        (cfg.seed & 0xFFFF) as f32,
        ((cfg.seed >> 16) & 0xFFFF) as f32,
        ((cfg.seed >> 32) & 0xFFFF) as f32,
        ((cfg.seed >> 48) & 0xFFFF) as f32,
        variant_code,
        cfg.beta1 as f32,
        cfg.beta2 as f32,
        cfg.epsilon as f32,
        cfg.ffn_mult as f32,
        cfg.patience as f32,
        cfg.neg_ratio as f32,
        f32::from(cfg.pad_to_l_max),
        cfg.mlp_hidden.len() as f32,
    ];
    out.extend(cfg.mlp_hidden.iter().map(|&h| h as f32));
    out
}

fn decode_config(values: &[f32]) -> Result<TrainConfig> {
    if values.len() < 23 {
        return Err(corrupt("config record too short"));
    }
    let at = |i: usize| values[i] as f64;
    let seed = (values[10] as u64)
        | ((values[11] as u64) << 16)
        | ((values[12] as u64) << 32)
        | ((values[13] as u64) << 48);
    let variant = VARIANT_CODES
        .iter()
        .find(|(_, c)| *c == values[14])
        .map(|(v, _)| *v)
        .ok_or_else(|| corrupt(format!("unknown variant code {}", values[14])))?;
    let hidden_len = values[22] as usize;
    if values.len() != 23 + hidden_len {
        return Err(corrupt("config record length mismatch"));
    }
    Ok(TrainConfig {
        d: at(0) as usize,
        k: at(1) as usize,
        n: at(2) as usize,
        blocks: at(3) as usize,
        heads: at(4) as usize,
        l_max: at(5) as usize,
        n_f: at(6) as usize,
        lr: at(7),
        batch_size: at(8) as usize,
        epochs: at(9) as usize,
        seed,
        variant,
        beta1: at(15),
        beta2: at(16),
        epsilon: at(17),
        ffn_mult: at(18) as usize,
        patience: at(19) as usize,
        neg_ratio: at(20) as usize,
        pad_to_l_max: values[21] != 0.0,
        mlp_hidden: values[23..].iter().map(|&v| v as usize).collect(),
    })
}

fn encode_meta(meta: &DatasetMeta) -> Vec<f32> {
    let mut out = vec![
        meta.fields.len() as f32,
        meta.item_field as f32,
        meta.cat_field as f32,
        meta.l_max as f32,
        meta.item_vocab as f32,
        meta.cat_vocab as f32,
    ];
    for (i, f) in meta.fields.iter().enumerate() {
        out.push(crate::data::cache_field_name_code(&f.name, i) as f32);
        out.push(crate::data::cache_table_code(f.table) as f32);
        out.push(f.vocab_size as f32);
    }
    out
}

fn decode_meta(values: &[f32]) -> Result<DatasetMeta> {
    if values.len() < 6 {
        return Err(corrupt("meta record too short"));
    }
    let n_fields = values[0] as usize;
    if values.len() != 6 + 3 * n_fields {
        return Err(corrupt("meta record length mismatch"));
    }
    let mut fields = Vec::with_capacity(n_fields);
    for i in 0..n_fields {
        let base = 6 + 3 * i;
        fields.push(FieldSpec {
            name: crate::data::cache_field_name_from_code(values[base] as u32, i),
            table: crate::data::cache_table_from_code(values[base + 1] as u32)
                .map_err(|e| corrupt(e.to_string()))?,
            vocab_size: values[base + 2] as u32,
        });
    }
    Ok(DatasetMeta {
        fields,
        item_field: values[1] as usize,
        cat_field: values[2] as usize,
        l_max: values[3] as u32,
        item_vocab: values[4] as u32,
        cat_vocab: values[5] as u32,
    })
}

fn tensor_to_f32<F: Real>(t: &Tensor<F>) -> (Vec<u64>, Vec<f32>) {
    (
        t.shape().iter().map(|&d| d as u64).collect(),
        t.data().iter().map(|v| v.to_f64() as f32).collect(),
    )
}

/// Write model parameters (plus config, dataset meta, and optionally
/// optimizer state) to a checkpoint file. Values are stored as f32, so
/// the round trip is bit-exact for f32 models.
pub fn save_checkpoint<F: Real>(
    model: &CdnetModel<F>,
    optimizer: Option<&Adam<F>>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    };
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;

    let config_values = encode_config(&model.config);
    write_record(&mut w, "__config", &[config_values.len() as u64], &config_values)
        .map_err(io_err)?;
    let meta_values = encode_meta(&model.meta);
    write_record(&mut w, "__meta", &[meta_values.len() as u64], &meta_values).map_err(io_err)?;

    for entry in model.store.entries() {
        let (dims, values) = tensor_to_f32(&entry.value);
        write_record(&mut w, &entry.name, &dims, &values).map_err(io_err)?;
    }

    if let Some(adam) = optimizer {
        write_record(&mut w, "__opt/t", &[1], &[adam.t as f32]).map_err(io_err)?;
        for (entry, m) in model.store.entries().iter().zip(&adam.m) {
            let (dims, values) = tensor_to_f32(m);
            write_record(&mut w, &format!("__opt/m/{}", entry.name), &dims, &values)
                .map_err(io_err)?;
        }
        for (entry, v) in model.store.entries().iter().zip(&adam.v) {
            let (dims, values) = tensor_to_f32(v);
            write_record(&mut w, &format!("__opt/v/{}", entry.name), &dims, &values)
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let file = File::open(path).map_err(|source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    if !read_exact_or_eof(&mut r, &mut magic)? {
        return Err(corrupt("empty file"));
    }
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 4];
    if !read_exact_or_eof(&mut r, &mut ver)? {
        return Err(corrupt("unexpected end of file"));
    }
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut records = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        records.push(rec);
    }
    Ok(CheckpointData { version, records })
}

impl CheckpointData {
    pub fn find(&self, name: &str) -> Option<&RawRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let rec = self
            .find("__config")
            .ok_or_else(|| corrupt("missing __config record"))?;
        decode_config(&rec.values)
    }

    pub fn meta(&self) -> Result<DatasetMeta> {
        let rec = self
            .find("__meta")
            .ok_or_else(|| corrupt("missing __meta record"))?;
        decode_meta(&rec.values)
    }

    /// Copy stored parameter values into an existing model, validating
    /// every shape. The first mismatch is reported by tensor name.
    pub fn apply_params(&self, model: &mut CdnetModel<f32>) -> Result<()> {
        for idx in 0..model.store.len() {
            let (name, shape) = {
                let e = &model.store.entries()[idx];
                (e.name.clone(), e.value.shape().to_vec())
            };
            let rec = self
                .find(&name)
                .ok_or_else(|| corrupt(format!("tensor {name:?} missing from checkpoint")))?;
            let rec_shape: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
            if rec_shape != shape {
                return Err(corrupt(format!(
                    "tensor {name:?}: checkpoint shape {rec_shape:?} does not match model shape {shape:?}"
                )));
            }
            let entry = &mut model.store.entries_mut()[idx];
            entry.value = Tensor::from_vec(&shape, rec.values.clone())?;
        }
        Ok(())
    }

    /// Rebuild the model (and optimizer state, if stored) from scratch.
    pub fn build_model(&self) -> Result<(CdnetModel<f32>, Option<Adam<f32>>)> {
        let config = self.config()?;
        let meta = self.meta()?;
        let mut model = CdnetModel::<f32>::new(config, meta)?;
        self.apply_params(&mut model)?;
        let adam = match self.find("__opt/t") {
            None => None,
            Some(t_rec) => {
                let mut adam = Adam::new(
                    &model.store,
                    model.config.beta1,
                    model.config.beta2,
                    model.config.epsilon,
                );
                adam.t = t_rec.values.first().copied().unwrap_or(0.0) as u64;
                for (idx, entry) in model.store.entries().iter().enumerate() {
                    for (slot, prefix) in [(0, "__opt/m/"), (1, "__opt/v/")] {
                        let name = format!("{prefix}{}", entry.name);
                        let rec = self
                            .find(&name)
                            .ok_or_else(|| corrupt(format!("missing {name:?}")))?;
                        let shape: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
                        if shape != entry.value.shape() {
                            return Err(corrupt(format!("tensor {name:?}: bad shape")));
                        }
                        let t = Tensor::from_vec(&shape, rec.values.clone())?;
                        if slot == 0 {
                            adam.m[idx] = t;
                        } else {
                            adam.v[idx] = t;
                        }
                    }
                }
                Some(adam)
            }
        };
        Ok((model, adam))
    }
}
