//! Command-line driver: train/eval/ablate/sweep/bench over behavior-log
//! CSVs, binary sample caches, or generated synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cdnet::bench::run_bench;
use cdnet::checkpoint::{read_checkpoint, save_checkpoint};
use cdnet::config::{parse_config_text, reject_unknown_keys, TrainConfig};
use cdnet::data::{
    build_samples, parse_log, read_cache, synth_generate, temporal_split, write_cache,
    ParseLimits, SampleSet, SynthConfig,
};
use cdnet::model::CdnetModel;
use cdnet::trainer::{evaluate, restore_params, sweep, train, SweepAxis, TraceRecord};
use cdnet::Variant;

#[derive(Parser)]
#[command(name = "cdnet", version, about = "Dual-view CTR model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file; CLI flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model variant: cdnet, rcore, rgid or meanpool.
    #[arg(long)]
    variant: Option<String>,
    /// Core behaviors selected per sample.
    #[arg(long)]
    k: Option<usize>,
    /// Similarity bins of the interest distribution.
    #[arg(long)]
    n: Option<usize>,
    /// Maximum behavior-sequence length.
    #[arg(long = "L")]
    l_max: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + metric trace.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Behavior log (.csv) or binary sample cache.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split to score: train, valid, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train cdnet, rcore and rgid on identical data and seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per axis value; emit a machine-readable table.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sweep axis: k_ratio or n.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 0.125,0.25,0.5,1.0.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Count attention multiply-adds and time one layer at several
    /// sequence lengths.
    Bench {
        /// Comma-separated sequence lengths.
        #[arg(long = "L", value_delimiter = ',', default_value = "128,256,600")]
        l_values: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long = "n-f", default_value_t = 20)]
        n_f: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        /// Wall-time repetitions per configuration.
        #[arg(long, default_value_t = 9)]
        reps: usize,
        /// Optional output directory for the TSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate planted-signal synthetic data into a sample cache.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output cache file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Parse the config file (when given) into train + synth configs and
/// apply CLI overrides.
fn load_configs(args: &ConfigArgs) -> anyhow::Result<(TrainConfig, SynthConfig)> {
    let mut train_cfg = TrainConfig::default();
    let mut synth_cfg = SynthConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut map = parse_config_text(&text)?;
        train_cfg.apply_map(&mut map)?;
        synth_cfg.apply_map(&mut map)?;
        reject_unknown_keys(&map)?;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(variant) = &args.variant {
        train_cfg.variant = variant.parse()?;
    }
    if let Some(k) = args.k {
        train_cfg.k = k;
    }
    if let Some(n) = args.n {
        train_cfg.n = n;
    }
    if let Some(l) = args.l_max {
        train_cfg.l_max = l;
        synth_cfg.seq_len = l;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    Ok((train_cfg, synth_cfg))
}

/// Load samples from a binary cache or build them from a CSV log.
fn load_data(path: &Path, cfg: &TrainConfig) -> anyhow::Result<SampleSet> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let _ = f.read(&mut magic);
    }
    if &magic == cdnet::data::CACHE_MAGIC {
        return Ok(read_cache(path)?);
    }
    let log = parse_log(path, &ParseLimits::default())?;
    if log.malformed > 0 {
        eprintln!(
            "note: skipped {} malformed of {} lines",
            log.malformed, log.total_lines
        );
    }
    let (set, stats) = build_samples(&log.records, cfg.l_max, cfg.neg_ratio, cfg.seed)?;
    eprintln!(
        "built {} samples ({} positives, {} negatives) from {} users",
        set.samples.len(),
        stats.positives,
        stats.negatives,
        stats.users_contributing
    );
    Ok(set)
}

fn align_config(cfg: &mut TrainConfig, set: &SampleSet) {
    cfg.n_f = set.meta.n_f();
    if cfg.l_max < set.meta.l_max as usize {
        cfg.l_max = set.meta.l_max as usize;
    }
    if cfg.k > cfg.l_max {
        cfg.k = cfg.l_max;
    }
}

fn print_trace_line(rec: &TraceRecord) {
    println!("{}", serde_json::to_string(rec).expect("serializable"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, data, out } => {
            let (mut train_cfg, _) = load_configs(&cfg)?;
            let set = load_data(&data, &train_cfg)?;
            align_config(&mut train_cfg, &set);
            fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let split = temporal_split(&set);
            let mut model = CdnetModel::<f32>::new(train_cfg, set.meta.clone())?;
            let (outcome, adam) = train(&mut model, &split.train, &split.valid)?;
            restore_params(&mut model, &outcome.best_params);

            let mut trace = outcome.trace.clone();
            if !split.test.is_empty() {
                let (_, a, g, ll) = evaluate(&model, &split.test)?;
                trace.push(TraceRecord {
                    epoch: outcome.best_epoch,
                    split: "test".into(),
                    auc: a,
                    gauc: g,
                    logloss: ll,
                    loss: None,
                });
            }
            let mut trace_text = String::new();
            for rec in &trace {
                print_trace_line(rec);
                trace_text.push_str(&serde_json::to_string(rec)?);
                trace_text.push('\n');
            }
            fs::write(out.join("trace.jsonl"), trace_text)?;
            save_checkpoint(&model, Some(&adam), &out.join("model.cdnt"))?;
            println!(
                "saved checkpoint to {} (best epoch {}, valid auc {:.6})",
                out.join("model.cdnt").display(),
                outcome.best_epoch,
                outcome.best_auc
            );
            Ok(())
        }
        Command::Eval { checkpoint, data, split } => {
            let (model, _) = read_checkpoint(&checkpoint)?.build_model()?;
            let set = load_data(&data, &model.config)?;
            let parts = temporal_split(&set);
            let samples = match split.as_str() {
                "train" => parts.train,
                "valid" => parts.valid,
                "test" => parts.test,
                "all" => set.samples,
                other => bail!("unknown split {other:?} (train, valid, test or all)"),
            };
            if samples.is_empty() {
                bail!("split {split:?} is empty");
            }
            let (_, a, g, ll) = evaluate(&model, &samples)?;
            let rec = TraceRecord {
                epoch: 0,
                split,
                auc: a,
                gauc: g,
                logloss: ll,
                loss: None,
            };
            print_trace_line(&rec);
            Ok(())
        }
        Command::Ablate { cfg, data, out } => {
            let (mut base_cfg, _) = load_configs(&cfg)?;
            let set = load_data(&data, &base_cfg)?;
            align_config(&mut base_cfg, &set);
            fs::create_dir_all(&out)?;
            let split = temporal_split(&set);
            let mut table = String::from("variant\tauc\tgauc\tlogloss\n");
            for variant in [Variant::Cdnet, Variant::RCore, Variant::RGid] {
                let mut vcfg = base_cfg.clone();
                vcfg.variant = variant;
                let mut model = CdnetModel::<f32>::new(vcfg, set.meta.clone())?;
                let (outcome, _) = train(&mut model, &split.train, &split.valid)?;
                restore_params(&mut model, &outcome.best_params);
                let (_, a, g, ll) = evaluate(&model, &split.test)?;
                let line = format!(
                    "{variant}\t{a:.6}\t{}\t{ll:.6}",
                    g.map_or("null".to_string(), |v| format!("{v:.6}"))
                );
                println!("{line}");
                table.push_str(&line);
                table.push('\n');
            }
            fs::write(out.join("ablate.tsv"), table)?;
            Ok(())
        }
        Command::Sweep { cfg, data, out, axis, values } => {
            let (mut base_cfg, _) = load_configs(&cfg)?;
            let set = load_data(&data, &base_cfg)?;
            align_config(&mut base_cfg, &set);
            fs::create_dir_all(&out)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(axis, &values, &base_cfg, &set)?;
            let mut table = String::from("value\tk\tn\tauc\tgauc\tlogloss\terror\n");
            for row in &rows {
                println!("{}", serde_json::to_string(row)?);
                table.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    row.value,
                    row.k,
                    row.n,
                    row.auc.map_or("null".into(), |v| format!("{v:.6}")),
                    row.gauc.map_or("null".into(), |v| format!("{v:.6}")),
                    row.logloss.map_or("null".into(), |v| format!("{v:.6}")),
                    row.error.as_deref().unwrap_or("-"),
                ));
            }
            fs::write(out.join("sweep.tsv"), table)?;
            Ok(())
        }
        Command::Bench { l_values, k, n_f, d, heads, reps, out } => {
            let report = run_bench(&l_values, k, n_f, d, heads, reps)?;
            print!("{}", report.to_tsv());
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("bench.tsv"), report.to_tsv())?;
            }
            Ok(())
        }
        Command::Synth { cfg, out } => {
            let (train_cfg, synth_cfg) = load_configs(&cfg)?;
            let set = synth_generate(&synth_cfg, train_cfg.seed)?;
            write_cache(&out, &set)?;
            let positives = set.samples.iter().filter(|s| s.label == 1).count();
            println!(
                "wrote {} samples ({} positive) to {}",
                set.samples.len(),
                positives,
                out.display()
            );
            Ok(())
        }
    }
}

