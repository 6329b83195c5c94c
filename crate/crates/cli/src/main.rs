mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sethash::eval::{self, EvalConfig};
use sethash::index::is_code_file;
use sethash::io::{is_dataset_file, load_dataset, write_csv, write_dataset};
use sethash::kernels::cache::KernelCache;
use sethash::synth::{self, SynthConfig};
use sethash::trainer::train_with;
use sethash::{split_qr, CodeIndex, Error, HashCode, HashModel, Label, SetDataset, Side};

use config::RunConfig;

/// Set-to-set hashing: train hash functions on labeled point sets, encode
/// sets to binary codes, and search or evaluate in Hamming space.
#[derive(Parser, Debug)]
#[command(name = "sethash", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SETHASH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Train a hash model on a labeled dataset.
    Train(TrainArgs),
    /// Encode a dataset into a code file.
    Encode(EncodeArgs),
    /// Rank a code file for each query.
    Query(QueryArgs),
    /// Evaluate query codes against a database code file.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    sets_per_class: usize,
    #[arg(long, default_value_t = 20)]
    points_per_set: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    cluster_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    set_jitter: f64,
    #[arg(long, default_value_t = 1.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.85)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Move the last N sets of every class to `--test-out`.
    #[arg(long, default_value_t = 0, requires = "test_out")]
    test_per_class: usize,
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Write CSV instead of the binary format.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kernel_cache: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SideArg {
    Query,
    Database,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "database")]
    side: SideArg,
    /// Report encoding time per bit.
    #[arg(long)]
    bench: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Code file, or a dataset when `--model` is given.
    #[arg(long)]
    query: PathBuf,
    /// Model for encoding a query dataset with the query-side splits.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    radius: Option<Vec<u32>>,
    /// Leave queries with an empty radius bucket out of that radius' mean.
    #[arg(long)]
    skip_empty_buckets: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            code: 2,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self {
            kind: "invalid",
            code: 6,
            msg: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Io(_) => ("io", 3),
            Error::Format { .. } => ("format", 4),
            Error::Version { .. } => ("version", 4),
            Error::MissingAnchor(_) => ("format", 4),
            Error::DimensionMismatch { .. } | Error::CodeLength { .. } => ("dimension", 5),
            Error::InvalidInput(_) | Error::DuplicateId(_) | Error::Unlabeled(_) => ("invalid", 6),
        };
        Self {
            kind,
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn open_with_context(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError {
        kind: "io",
        code: 3,
        msg: format!("{}: {e}", path.display()),
    })
}

fn create_with_context(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError {
        kind: "io",
        code: 3,
        msg: format!("{}: {e}", path.display()),
    })
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    let mut bytes = Vec::new();
    open_with_context(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn load_data(path: &Path) -> CliResult<SetDataset> {
    open_with_context(path)?;
    Ok(load_dataset(path)?)
}

fn load_model(path: &Path) -> CliResult<HashModel> {
    Ok(HashModel::read(BufReader::new(open_with_context(path)?))?)
}

fn load_codes(path: &Path) -> CliResult<CodeIndex> {
    Ok(CodeIndex::read(BufReader::new(open_with_context(path)?))?)
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        classes: a.classes,
        sets_per_class: a.sets_per_class,
        points_per_set: a.points_per_set,
        dim: a.dim,
        cluster_spread: a.cluster_spread,
        set_jitter: a.set_jitter,
        center_scale: a.center_scale,
        decay: a.decay,
        seed: a.seed,
    };
    if a.test_per_class >= a.sets_per_class && a.test_per_class > 0 {
        return Err(CliError::invalid("test_per_class must leave training sets in every class"));
    }
    let data = synth::generate(&cfg)?;
    let keep = a.sets_per_class - a.test_per_class;
    let (train, test): (Vec<_>, Vec<_>) = data
        .into_sets()
        .into_iter()
        .partition(|s| (s.id().0 as usize) % a.sets_per_class < keep);
    let write = |sets, path: &Path| -> CliResult {
        let d = SetDataset::new(sets)?;
        if a.csv {
            write_csv(&d, create_with_context(path)?)?;
        } else {
            let mut w = create_with_context(path)?;
            write_dataset(&d, &mut w)?;
            w.flush()?;
        }
        println!("wrote {} sets ({} points) to {}", d.len(), d.total_points(), path.display());
        Ok(())
    };
    write(train, &a.out)?;
    if let Some(p) = &a.test_out {
        write(test, p)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.config {
        let text = String::from_utf8(read_bytes(p)?)
            .map_err(|_| CliError::invalid(format!("{} is not UTF-8 text", p.display())))?;
        cfg.apply_text(&text).map_err(CliError::invalid)?;
    }
    for kv in &a.overrides {
        cfg.apply_override(kv).map_err(CliError::invalid)?;
    }
    if let Some(b) = a.bits {
        cfg.trainer.bits = b;
    }
    if let Some(t) = a.rounds {
        cfg.trainer.rounds = t;
    }
    if let Some(s) = a.seed {
        cfg.trainer.seed = s;
    }
    if let Some(dir) = a.kernel_cache {
        cfg.kernel_cache = Some(dir);
    }
    cfg.validate().map_err(CliError::invalid)?;

    let data = load_data(&a.data)?;
    let split = split_qr(&data, cfg.split_fraction, cfg.trainer.seed, cfg.stratified)?;
    let cache = cfg.kernel_cache.as_ref().map(KernelCache::new).transpose()?;
    let started = Instant::now();
    let (model, report) = train_with(&split, &cfg.trainer, cache.as_ref())?;
    let mut out = create_with_context(&a.out)?;
    model.write(&mut out)?;
    out.flush()?;
    let changed: Vec<String> = report
        .iterations
        .iter()
        .map(|i| format!("{:.4}", i.changed_fraction))
        .collect();
    println!(
        "trained {} bits on {} q / {} r sets in {:.2}s: {} outer iterations, converged={}, changed=[{}]",
        model.bits(),
        split.q.len(),
        split.r.len(),
        started.elapsed().as_secs_f64(),
        report.iterations.len(),
        report.converged,
        changed.join(",")
    );
    println!(
        "kernel params: gamma_g={} gamma_s={} cov_ridge={}",
        report.params.gamma_g, report.params.gamma_s, report.params.cov_ridge
    );
    Ok(())
}

fn side(s: SideArg) -> Side {
    match s {
        SideArg::Query => Side::Query,
        SideArg::Database => Side::Database,
    }
}

fn cmd_encode(a: EncodeArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let encoder = model.encoder(side(a.side))?;
    let started = Instant::now();
    let codes = encoder.encode_all(data.sets())?;
    let elapsed = started.elapsed().as_secs_f64();
    let labels: Vec<Option<Label>> = data.sets().iter().map(|s| s.label()).collect();
    let index = CodeIndex::build(model.bits(), &codes, &data.ids(), &labels)?;
    let mut out = create_with_context(&a.out)?;
    index.write(&mut out)?;
    out.flush()?;
    println!("encoded {} sets to {} bits", data.len(), model.bits());
    if a.bench {
        let per_bit = elapsed / (data.len().max(1) * model.bits()) as f64;
        println!(
            "bench sets={} bits={} total_s={elapsed:.6} per_bit_s={per_bit:.3e} reference_per_bit_s=7.02e-5",
            data.len(),
            model.bits()
        );
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> CliResult {
    let index = load_codes(&a.index)?;
    let bytes = read_bytes(&a.query)?;
    let queries: Vec<(String, HashCode)> = if is_code_file(&bytes) {
        let q = CodeIndex::read(&bytes[..])?;
        q.ids().iter().map(|id| id.to_string()).zip(q.codes()).collect()
    } else {
        let model_path = a.model.as_ref().ok_or_else(|| {
            CliError::usage("--query is not a code file; pass --model to encode it as a dataset")
        })?;
        let data = if is_dataset_file(&bytes) {
            sethash::io::read_dataset(&bytes[..])?
        } else {
            sethash::io::read_csv(&bytes[..])?
        };
        let model = load_model(model_path)?;
        let codes = model.encode_all(Side::Query, data.sets())?;
        data.ids().iter().map(|id| id.to_string()).zip(codes).collect()
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (qid, code) in &queries {
        if queries.len() > 1 {
            writeln!(out, "# query {qid}")?;
        }
        for r in index.rank(code, a.k)? {
            writeln!(out, "{}\t{}", r.id, r.distance)?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let index = load_codes(&a.index)?;
    let q = load_codes(&a.queries)?;
    let queries = q
        .labels()
        .iter()
        .zip(q.ids())
        .zip(q.codes())
        .map(|((l, id), c)| l.map(|l| (c, l)).ok_or(Error::Unlabeled(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = EvalConfig::default();
    if let Some(c) = a.cutoffs {
        if c.contains(&0) {
            return Err(CliError::invalid("cutoffs must be positive"));
        }
        cfg.cutoffs = c;
    }
    if let Some(r) = a.radius {
        cfg.radii = r;
    }
    cfg.empty_bucket_as_zero = !a.skip_empty_buckets;
    let report = eval::evaluate(&index, &queries, &cfg)?;
    eval::write_curves(&report, create_with_context(&a.out)?)?;
    println!(
        "map={} queries={} database={}",
        report.map,
        queries.len(),
        index.len()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("sethash: error kind=usage code=2 msg={first:?}");
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "sethash: error kind={} code={} msg={:?}",
                e.kind, e.code, e.msg
            );
            ExitCode::from(e.code)
        }
    }
}
