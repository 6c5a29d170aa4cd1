//! Data pipeline: behavior-log parsing, labeled-sample construction,
//! synthetic data with planted signal, batching, and the binary sample
//! cache.

mod build;
mod cache;
mod record;
mod sample;
mod synth;
mod vocab;

pub use build::{build_samples, BuildStats};
pub(crate) use cache::{
    field_name_code as cache_field_name_code, field_name_from_code as cache_field_name_from_code,
    table_code as cache_table_code, table_from_code as cache_table_from_code,
};
pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use record::{parse_log, BehaviorType, InteractionRecord, ParseLimits, ParsedLog};
pub use sample::{
    batches, temporal_split, Batch, DatasetMeta, FieldSpec, PadMode, Sample, SampleSet, Split,
    TableRef, PAD, OOV,
};
pub use synth::{synth_generate, SynthConfig};
pub use vocab::Vocabulary;
