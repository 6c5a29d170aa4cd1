use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::sample::{DatasetMeta, FieldSpec, Sample, SampleSet, TableRef};
use crate::error::{CdnetError, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"CDNS";
pub const CACHE_VERSION: u32 = 1;

// Known field names get stable codes; anything else round-trips as a
// positional name.
const FIELD_NAMES: [&str; 5] = ["user", "item", "category", "hour", "dow"];

pub(crate) fn field_name_code(name: &str, position: usize) -> u32 {
    FIELD_NAMES
        .iter()
        .position(|&n| n == name)
        .map(|i| i as u32)
        .unwrap_or(1000 + position as u32)
}

pub(crate) fn field_name_from_code(code: u32, position: usize) -> String {
    FIELD_NAMES
        .get(code as usize)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("f{position}"))
}

pub(crate) fn table_code(t: TableRef) -> u32 {
    match t {
        TableRef::Own => 0,
        TableRef::Item => 1,
        TableRef::Category => 2,
    }
}

pub(crate) fn table_from_code(code: u32) -> Result<TableRef> {
    match code {
        0 => Ok(TableRef::Own),
        1 => Ok(TableRef::Item),
        2 => Ok(TableRef::Category),
        other => Err(CdnetError::Cache(format!("unknown table code {other}"))),
    }
}

fn write_record(w: &mut impl Write, values: &[u32]) -> std::io::Result<()> {
    w.write_all(&(4 * values.len() as u32).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_record(r: &mut impl Read) -> Result<Option<Vec<u32>>> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(CdnetError::Cache(format!("read error: {e}"))),
    }
    let byte_len = u32::from_le_bytes(len_buf) as usize;
    if byte_len % 4 != 0 {
        return Err(CdnetError::Cache(format!(
            "record length {byte_len} is not a multiple of 4"
        )));
    }
    let mut buf = vec![0u8; byte_len];
    r.read_exact(&mut buf)
        .map_err(|_| CdnetError::Cache("truncated record".into()))?;
    Ok(Some(
        buf.chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    ))
}

/// Write a sample set as `CDNS` + version + length-prefixed records of
/// little-endian integer arrays. The first record carries the dataset
/// meta, the rest one sample each.
pub fn write_cache(path: &Path, set: &SampleSet) -> Result<()> {
    let file = File::create(path).map_err(|source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    };
    w.write_all(CACHE_MAGIC).map_err(io_err)?;
    w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io_err)?;

    let meta = &set.meta;
    let mut rec = vec![
        meta.fields.len() as u32,
        meta.item_field as u32,
        meta.cat_field as u32,
        meta.l_max,
        meta.item_vocab,
        meta.cat_vocab,
    ];
    for (i, f) in meta.fields.iter().enumerate() {
        rec.push(field_name_code(&f.name, i));
        rec.push(table_code(f.table));
        rec.push(f.vocab_size);
    }
    write_record(&mut w, &rec).map_err(io_err)?;

    for s in &set.samples {
        let mut rec = Vec::with_capacity(8 + s.contextual_ids.len() + 2 * s.seq_items.len());
        rec.push(s.user);
        rec.push((s.time & 0xFFFF_FFFF) as u32);
        rec.push((s.time >> 32) as u32);
        rec.push(s.group);
        rec.push(u32::from(s.label));
        rec.push(s.valid_len as u32);
        rec.push(s.contextual_ids.len() as u32);
        rec.extend_from_slice(&s.contextual_ids);
        rec.push(s.seq_items.len() as u32);
        rec.extend_from_slice(&s.seq_items);
        rec.extend_from_slice(&s.seq_cats);
        rec.push(s.relevant.len() as u32);
        rec.extend_from_slice(&s.relevant);
        write_record(&mut w, &rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<SampleSet> {
    let file = File::open(path).map_err(|source| CdnetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CdnetError::Cache("file too short for magic".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(CdnetError::Cache(format!(
            "bad magic {magic:?}, expected {CACHE_MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)
        .map_err(|_| CdnetError::Cache("file too short for version".into()))?;
    let version = u32::from_le_bytes(ver);
    if version != CACHE_VERSION {
        return Err(CdnetError::Cache(format!(
            "unsupported version {version}, expected {CACHE_VERSION}"
        )));
    }

    let meta_rec = read_record(&mut r)?
        .ok_or_else(|| CdnetError::Cache("missing meta record".into()))?;
    let meta = parse_meta(&meta_rec)?;

    let mut samples = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        samples.push(parse_sample(&rec)?);
    }
    Ok(SampleSet { meta, samples })
}

fn parse_meta(rec: &[u32]) -> Result<DatasetMeta> {
    if rec.len() < 6 {
        return Err(CdnetError::Cache("meta record too short".into()));
    }
    let n_fields = rec[0] as usize;
    if rec.len() != 6 + 3 * n_fields {
        return Err(CdnetError::Cache(format!(
            "meta record length {} does not match {} fields",
            rec.len(),
            n_fields
        )));
    }
    let mut fields = Vec::with_capacity(n_fields);
    for i in 0..n_fields {
        let base = 6 + 3 * i;
        fields.push(FieldSpec {
            name: field_name_from_code(rec[base], i),
            table: table_from_code(rec[base + 1])?,
            vocab_size: rec[base + 2],
        });
    }
    let meta = DatasetMeta {
        fields,
        item_field: rec[1] as usize,
        cat_field: rec[2] as usize,
        l_max: rec[3],
        item_vocab: rec[4],
        cat_vocab: rec[5],
    };
    if meta.item_field >= meta.fields.len() || meta.cat_field >= meta.fields.len() {
        return Err(CdnetError::Cache("meta field indices out of range".into()));
    }
    Ok(meta)
}

fn parse_sample(rec: &[u32]) -> Result<Sample> {
    let too_short = || CdnetError::Cache("sample record too short".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u32]> {
        if pos + n > rec.len() {
            return Err(too_short());
        }
        let s = &rec[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let head = take(7)?;
    let (user, time_lo, time_hi, group, label, valid_len, n_ctx) = (
        head[0], head[1], head[2], head[3], head[4], head[5], head[6] as usize,
    );
    let contextual_ids = take(n_ctx)?.to_vec();
    let seq_len = take(1)?[0] as usize;
    let seq_items = take(seq_len)?.to_vec();
    let seq_cats = take(seq_len)?.to_vec();
    let n_rel = take(1)?[0] as usize;
    let relevant = take(n_rel)?.to_vec();
    if pos != rec.len() {
        return Err(CdnetError::Cache("trailing bytes in sample record".into()));
    }
    if label > 1 {
        return Err(CdnetError::Cache(format!("label {label} not binary")));
    }
    Ok(Sample {
        user,
        time: (u64::from(time_hi) << 32) | u64::from(time_lo),
        group,
        contextual_ids,
        seq_items,
        seq_cats,
        valid_len: valid_len as usize,
        label: label as u8,
        relevant,
    })
}
