//! The `l2d` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! error. Diagnostics go to stderr; data goes to files or stdout.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::aggregation::{global_representations, ItemRepTable};
use crate::bench::{bench_decode, render_latency_text, synth_dataset, Noise, SynthSpec};
use crate::decoder::{batch_decode, Backfill, DecodeConfig, Mode, Query, DEFAULT_EPSILON};
use crate::evaluation::{
    evaluate_cohorts, render_jsonl, render_sweep_jsonl, render_sweep_text, render_text, sweep_m,
    EvalSample, DEFAULT_SPARSE_THRESHOLD,
};
use crate::grounding::{ground_beams, BeamSet};
use crate::io::{read_jsonl, write_error, write_ranked, BeamRequest};
use crate::memory::{
    load_memory, load_reps, memory_stats, reservoir_sample, save_memory, save_reps, Dtype,
    MemoryBuilder, MemoryRecord, MemorySet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_KS: [usize; 3] = [20, 50, 100];
const DEFAULT_REPETITIONS: usize = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn internal<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Internal(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "l2d",
    version,
    about = "Latent-space item decoding over a hidden-state memory"
)]
struct Cli {
    /// TOML file with default option values; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 forces serial execution.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a memory file from line-delimited records.
    Build(BuildArgs),
    /// Print memory statistics as JSON.
    Stats { memory: PathBuf },
    /// Reservoir-sample an ingestion file.
    Sample(SampleArgs),
    /// Generate a synthetic record file and evaluation samples.
    Synth(SynthArgs),
    /// Decode top-K items for each query.
    Decode(DecodeArgs),
    /// Full-ranking Recall/NDCG evaluation with sparse/dense cohorts.
    Eval(EvalArgs),
    /// Local-mode evaluation across neighborhood sizes.
    Sweep(SweepArgs),
    /// Ground beam-generated item embeddings onto the catalog.
    Ground(GroundArgs),
    /// Measure decode latency.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum BackfillArg {
    GlobalBackfill,
    Truncate,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum DtypeArg {
    F32,
    F16,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    dtype: Option<DtypeArg>,
    /// Also export the global item representations.
    #[arg(long)]
    reps_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    capacity: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    items: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    samples_per_item: usize,
    /// Noise standard deviation per component.
    #[arg(long, default_value_t = 0.0)]
    sigma: f32,
    /// Read --sigma as a fraction of the mean centroid separation.
    #[arg(long)]
    sigma_relative: bool,
    #[arg(long, default_value_t = 0)]
    queries: usize,
    #[arg(long)]
    records_out: PathBuf,
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct DecodeOpts {
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Neighborhood size for local mode.
    #[arg(long = "M", visible_alias = "m")]
    m: Option<usize>,
    #[arg(long, value_enum)]
    backfill: Option<BackfillArg>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    opts: DecodeOpts,
    #[arg(long = "K", visible_alias = "k")]
    k: Option<usize>,
    #[arg(long)]
    queries: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    opts: DecodeOpts,
    #[arg(long)]
    samples: PathBuf,
    /// Cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Truth items with memory frequency <= threshold are "sparse".
    #[arg(long)]
    threshold: Option<u32>,
    /// Human-readable report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-delimited record per (cohort, K).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    ms: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    backfill: Option<BackfillArg>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GroundArgs {
    /// Candidates are the memory's global representations...
    #[arg(long, conflicts_with = "reps")]
    memory: Option<PathBuf>,
    /// ...or a previously exported representation table.
    #[arg(long)]
    reps: Option<PathBuf>,
    #[arg(long)]
    beams: PathBuf,
    #[arg(long = "K", visible_alias = "k")]
    k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    opts: DecodeOpts,
    #[arg(long = "K", visible_alias = "k")]
    k: Option<usize>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Line-delimited latency records.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Option values read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    memory: Option<PathBuf>,
    mode: Option<ModeArg>,
    k: Option<usize>,
    m: Option<usize>,
    backfill: Option<BackfillArg>,
    epsilon: Option<f64>,
    ks: Option<Vec<usize>>,
    threshold: Option<u32>,
    threads: Option<usize>,
    seed: Option<u64>,
    repetitions: Option<usize>,
    dtype: Option<DtypeArg>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// flag > config file > default
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn require_memory(flag: Option<PathBuf>, file: &FileConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.memory.clone())
        .ok_or_else(|| CliError::Usage("--memory is required".into()))
}

fn decode_config(
    opts: &DecodeOpts,
    k: Option<usize>,
    file: &FileConfig,
) -> Result<DecodeConfig, CliError> {
    let mode = pick(opts.mode, file.mode, ModeArg::Global);
    let m = opts.m.or(file.m);
    let k = pick(k, file.k, 20);
    let backfill = match pick(opts.backfill, file.backfill, BackfillArg::GlobalBackfill) {
        BackfillArg::GlobalBackfill => Backfill::GlobalBackfill,
        BackfillArg::Truncate => Backfill::Truncate,
    };
    let mode = match (mode, m) {
        (ModeArg::Global, _) => Mode::Global,
        (ModeArg::Local, Some(m)) => Mode::Local { neighbors: m },
        (ModeArg::Local, None) => {
            return Err(CliError::Usage(
                "--mode local requires --M <neighbors>".into(),
            ))
        }
    };
    let cfg = DecodeConfig {
        mode,
        k,
        backfill,
        epsilon: pick(opts.epsilon, file.epsilon, DEFAULT_EPSILON),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn read_all<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(open(path)?)
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<(MemorySet, ItemRepTable), CliError> {
    let memory = load_memory(path)
        .map_err(|e| CliError::Data(format!("{}: {e} (code {})", path.display(), e.code())))?;
    let global = global_representations(&memory).map_err(data(&path.display().to_string()))?;
    Ok((memory, global))
}

/// Writes to `path` or, when absent, to `stdout`.
fn emit(path: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut f = create(p)?;
            f.write_all(bytes)
                .and_then(|_| f.flush())
                .map_err(internal("write"))
        }
        None => stdout.write_all(bytes).map_err(internal("stdout")),
    }
}

fn mode_name(cfg: &DecodeConfig) -> &'static str {
    match cfg.mode {
        Mode::Global => "global",
        Mode::Local { .. } => "local",
    }
}

fn config_echo(command: &str, memory: &Path, cfg: &DecodeConfig, extra: Value) -> Value {
    let mut v = json!({
        "command": command,
        "memory": memory.display().to_string(),
        "decode": cfg,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, extra) {
        dst.extend(src);
    }
    v
}

struct Ctx<'a> {
    file: FileConfig,
    seed: u64,
    stdout: &'a mut (dyn Write + Send),
    stderr: &'a mut (dyn Write + Send),
}

fn cmd_build(a: BuildArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let dtype = match pick(a.dtype, ctx.file.dtype, DtypeArg::F32) {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::F16 => Dtype::F16,
    };
    let mut builder = MemoryBuilder::new(a.dim).map_err(|e| CliError::Usage(e.to_string()))?;
    let input = a.input.display().to_string();
    for rec in read_jsonl::<MemoryRecord, _>(open(&a.input)?) {
        let rec = rec.map_err(data(&input))?;
        builder.push(&rec).map_err(data(&input))?;
    }
    let memory = builder.finish();
    save_memory(&memory, &a.out, dtype).map_err(internal(&a.out.display().to_string()))?;
    if let Some(reps) = &a.reps_out {
        let table = global_representations(&memory).map_err(data("representations"))?;
        let keys: Vec<&str> = memory.catalog().keys().iter().map(String::as_str).collect();
        save_reps(&table, &keys, reps, dtype).map_err(internal(&reps.display().to_string()))?;
    }
    let _ = writeln!(
        ctx.stderr,
        "built {} rows over {} items (dim {})",
        memory.len(),
        memory.catalog().len(),
        memory.dim()
    );
    Ok(())
}

fn cmd_stats(path: PathBuf, ctx: &mut Ctx) -> Result<(), CliError> {
    let memory = load_memory(&path)
        .map_err(|e| CliError::Data(format!("{}: {e} (code {})", path.display(), e.code())))?;
    let stats = memory_stats(&memory);
    let line = serde_json::to_string(&stats).map_err(internal("stats"))?;
    writeln!(ctx.stdout, "{line}").map_err(internal("stdout"))
}

fn cmd_sample(a: SampleArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let records: Vec<MemoryRecord> = read_all(&a.input)?;
    let kept = reservoir_sample(records, a.capacity, ctx.seed)
        .ok_or_else(|| CliError::Usage("--capacity must be at least 1".into()))?;
    let mut out = create(&a.out)?;
    for r in &kept {
        serde_json::to_writer(&mut out, r).map_err(internal("write"))?;
        out.write_all(b"\n").map_err(internal("write"))?;
    }
    out.flush().map_err(internal("write"))
}

fn cmd_synth(a: SynthArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = SynthSpec {
        num_items: a.items,
        dim: a.dim,
        samples_per_item: a.samples_per_item,
        noise: if a.sigma_relative {
            Noise::RelativeToSeparation(a.sigma)
        } else {
            Noise::Absolute(a.sigma)
        },
        query_count: a.queries,
        seed: ctx.seed,
    };
    let d = synth_dataset(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = create(&a.records_out)?;
    for r in &d.records {
        serde_json::to_writer(&mut out, r).map_err(internal("write"))?;
        out.write_all(b"\n").map_err(internal("write"))?;
    }
    out.flush().map_err(internal("write"))?;
    if let Some(p) = &a.samples_out {
        let mut out = create(p)?;
        for s in &d.samples {
            serde_json::to_writer(&mut out, s).map_err(internal("write"))?;
            out.write_all(b"\n").map_err(internal("write"))?;
        }
        out.flush().map_err(internal("write"))?;
    }
    let _ = writeln!(
        ctx.stderr,
        "synthesized {} records, {} samples (separation {:.4}, sigma {:.4})",
        d.records.len(),
        d.samples.len(),
        d.separation,
        d.sigma
    );
    Ok(())
}

fn cmd_decode(a: DecodeArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = decode_config(&a.opts, a.k, &ctx.file)?;
    let path = require_memory(a.opts.memory.clone(), &ctx.file)?;
    let (memory, global) = load(&path)?;
    let queries: Vec<Query> = read_all(&a.queries)?;
    let results = batch_decode(&queries, &memory, &global, &cfg);
    let key_of = |id| memory.catalog().key(id).unwrap_or_default().to_owned();
    let local = matches!(cfg.mode, Mode::Local { .. });
    let mut buf = Vec::new();
    let mut failed = 0;
    for (q, r) in queries.iter().zip(&results) {
        match r {
            Ok(list) => write_ranked(&mut buf, list, mode_name(&cfg), local, key_of),
            Err(e) => {
                failed += 1;
                write_error(&mut buf, q.query_id, &e.to_string())
            }
        }
        .map_err(internal("format"))?;
    }
    emit(a.out.as_deref(), ctx.stdout, &buf)?;
    if failed > 0 {
        let _ = writeln!(ctx.stderr, "{failed} of {} queries failed", queries.len());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = decode_config(&a.opts, None, &ctx.file)?;
    let ks = a.ks.or(ctx.file.ks.clone()).unwrap_or(DEFAULT_KS.to_vec());
    let threshold = pick(a.threshold, ctx.file.threshold, DEFAULT_SPARSE_THRESHOLD);
    if threshold == 0 {
        return Err(CliError::Usage("--threshold must be at least 1".into()));
    }
    let path = require_memory(a.opts.memory.clone(), &ctx.file)?;
    let (memory, global) = load(&path)?;
    let samples: Vec<EvalSample> = read_all(&a.samples)?;
    let reports = evaluate_cohorts(&samples, &memory, &global, &cfg, &ks, threshold)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let echo = config_echo(
        "eval",
        &path,
        &cfg,
        json!({"ks": ks, "threshold": threshold, "samples": a.samples.display().to_string()}),
    );
    emit(
        a.out.as_deref(),
        ctx.stdout,
        render_text(&reports, &echo, Some(threshold)).as_bytes(),
    )?;
    if let Some(p) = &a.records {
        emit(Some(p), ctx.stdout, render_jsonl(&reports).as_bytes())?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let ks = a.ks.or(ctx.file.ks.clone()).unwrap_or(DEFAULT_KS.to_vec());
    let backfill = match pick(a.backfill, ctx.file.backfill, BackfillArg::GlobalBackfill) {
        BackfillArg::GlobalBackfill => Backfill::GlobalBackfill,
        BackfillArg::Truncate => Backfill::Truncate,
    };
    let epsilon = pick(a.epsilon, ctx.file.epsilon, DEFAULT_EPSILON);
    let path = require_memory(a.memory, &ctx.file)?;
    let (memory, global) = load(&path)?;
    let samples: Vec<EvalSample> = read_all(&a.samples)?;
    let rows = sweep_m(&samples, &memory, &global, &a.ms, &ks, backfill, epsilon)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let echo = json!({
        "command": "sweep",
        "memory": path.display().to_string(),
        "samples": a.samples.display().to_string(),
        "ms": a.ms,
        "ks": ks,
        "backfill": backfill,
        "epsilon": epsilon,
    });
    emit(
        a.out.as_deref(),
        ctx.stdout,
        render_sweep_text(&rows, &echo).as_bytes(),
    )?;
    if let Some(p) = &a.records {
        emit(Some(p), ctx.stdout, render_sweep_jsonl(&rows).as_bytes())?;
    }
    Ok(())
}

fn cmd_ground(a: GroundArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let k = pick(a.k, ctx.file.k, 20);
    let epsilon = pick(a.epsilon, ctx.file.epsilon, DEFAULT_EPSILON);
    if k == 0 {
        return Err(CliError::Usage("--K must be at least 1".into()));
    }
    let (keys, table) = match (a.reps, a.memory.or_else(|| ctx.file.memory.clone())) {
        (Some(reps), _) => load_reps(&reps)
            .map_err(|e| CliError::Data(format!("{}: {e} (code {})", reps.display(), e.code())))?,
        (None, Some(mem)) => {
            let (memory, global) = load(&mem)?;
            (memory.catalog().keys().to_vec(), global)
        }
        (None, None) => return Err(CliError::Usage("--memory or --reps is required".into())),
    };
    let requests: Vec<BeamRequest> = read_all(&a.beams)?;
    let key_of = |id: crate::memory::ItemId| keys[id.index()].clone();
    let mut buf = Vec::new();
    for req in &requests {
        let grounded = BeamSet::new(table.dim(), &req.beams)
            .and_then(|beams| ground_beams(req.query_id, &beams, &table, k, epsilon));
        match grounded {
            Ok(list) => write_ranked(&mut buf, &list, "grounding", false, key_of),
            Err(e) => write_error(&mut buf, req.query_id, &e.to_string()),
        }
        .map_err(internal("format"))?;
    }
    emit(a.out.as_deref(), ctx.stdout, &buf)
}

fn cmd_bench(a: BenchArgs, ctx: &mut Ctx, threads: usize) -> Result<(), CliError> {
    let cfg = decode_config(&a.opts, a.k, &ctx.file)?;
    let repetitions = pick(a.repetitions, ctx.file.repetitions, DEFAULT_REPETITIONS);
    let path = require_memory(a.opts.memory.clone(), &ctx.file)?;
    let (memory, global) = load(&path)?;
    let queries: Vec<Query> = read_all(&a.queries)?;
    let mut counts = vec![1];
    if threads > 1 {
        counts.push(threads);
    }
    let mut reports = Vec::new();
    for n in counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(internal("thread pool"))?;
        let outcome = pool
            .install(|| bench_decode(&memory, &global, &queries, &cfg, repetitions))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        reports.push(outcome.report);
    }
    emit(None, ctx.stdout, render_latency_text(&reports).as_bytes())?;
    if let Some(p) = &a.out {
        let mut lines = String::new();
        for r in &reports {
            lines.push_str(&serde_json::to_string(r).map_err(internal("format"))?);
            lines.push('\n');
        }
        emit(Some(p), ctx.stdout, lines.as_bytes())?;
    }
    Ok(())
}

fn dispatch(command: Command, ctx: &mut Ctx, threads: usize) -> Result<(), CliError> {
    match command {
        Command::Build(a) => cmd_build(a, ctx),
        Command::Stats { memory } => cmd_stats(memory, ctx),
        Command::Sample(a) => cmd_sample(a, ctx),
        Command::Synth(a) => cmd_synth(a, ctx),
        Command::Decode(a) => cmd_decode(a, ctx),
        Command::Eval(a) => cmd_eval(a, ctx),
        Command::Sweep(a) => cmd_sweep(a, ctx),
        Command::Ground(a) => cmd_ground(a, ctx),
        Command::Bench(a) => cmd_bench(a, ctx, threads),
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    let result = (|| {
        let file = load_config(cli.config.as_deref())?;
        let threads = cli
            .threads
            .or(file.threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        let seed = pick(cli.seed, file.seed, DEFAULT_SEED);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(internal("thread pool"))?;
        let mut ctx = Ctx {
            file,
            seed,
            stdout: &mut *stdout,
            stderr: &mut *stderr,
        };
        pool.install(|| dispatch(cli.command, &mut ctx, threads))
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "l2d: {e}");
            e.exit_code()
        }
    }
}
