//! Command-line front end for `lattice-core`.
//!
//! [`dispatch`] parses an argument list, runs one subcommand and returns the
//! process exit code: 0 on success, 1 on a usage error, 2 on a data error.
//! Primary output goes to `--out` (written atomically, with a
//! `<out>.manifest.json` next to it) or to stdout; diagnostics go to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lattice_core::datasets::{
    merge_domains, tasks_seen, window_routing_summary, zip_records, DatasetSchema, DomainRecord, ZipperConfig,
};
use lattice_core::filter::{select_features, ImportanceMatrix};
use lattice_core::ktap::{simulate, Workload};
use lattice_core::numerics::{self, Epsilon, Gate};
use lattice_core::partitioner::{self, DomainMeta, ObjectiveMeta, PartitionPolicy};
use lattice_core::sketch::{
    beam_search, dp_bootstrap_all_batches, ExecutionPlan, HyperparamSpace, ProfileTable, QualityModel,
    SearchConfig,
};
use lattice_core::{stable_hash, Error, Seed, TaskId};

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUT_DIR_ENV: &str = "LATTICE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<Seed>,
    pub version: String,
    pub wall_ms: u64,
}

#[derive(Debug, Parser)]
#[command(name = "lattice", version, about = "Multi-task consolidation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pareto-frontier feature selection over an importance matrix CSV.
    Filter(FilterArgs),
    /// Merge per-domain JSON-lines record files into one zero-padded stream.
    Merge(MergeArgs),
    /// Assign attribution windows and per-window labels to records.
    Zip(ZipArgs),
    /// Optimize an execution plan from a profile table.
    Sketch(SketchArgs),
    /// Simulate the teacher-embedding store under synthetic traffic.
    KtapSim(KtapArgs),
    /// Group domain/objective pairs into portfolios.
    Partition(PartitionArgs),
    /// Evaluate a numerics kernel on inline values.
    #[command(subcommand)]
    Kernels(KernelCommand),
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// CSV with a header of task names and one row per feature.
    matrix: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// JSON-lines record files; records are grouped by their `domain` field.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Where to write the merge summary (JSON); stderr when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ZipArgs {
    /// JSON-lines record file.
    input: PathBuf,
    /// Zipper configuration JSON (windows, probabilities, seed).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated task names; defaults to every task seen.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Where to write the routing summary (JSON); stderr when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SketchMode {
    Dp,
    Beam,
}

#[derive(Debug, Args)]
struct SketchArgs {
    #[arg(long)]
    profile: PathBuf,
    /// JSON with `search`, optional `space` and optional `quality`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "beam")]
    mode: SketchMode,
    /// Overrides `search.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct KtapArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Overrides the workload seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the per-epoch hit-rate CSV.
    #[arg(long)]
    series: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    /// JSON with `domains` and `objectives` arrays.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Where to write the text report; stderr when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GateArg {
    Sigmoid,
    HardSigmoid,
}

#[derive(Debug, Subcommand)]
enum KernelCommand {
    /// Correlation loss `1 - r`.
    Corr {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// RMS normalization.
    RmsNorm {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Gated SwishRN activation.
    SwishRn {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, value_enum, default_value = "sigmoid")]
        gate: GateArg,
    },
    /// Forward-mode derivative of SwishRN along a tangent.
    SwishRnJvp {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        tangent: Vec<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Clamp every value to `[-c, c]`.
    Clip {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long)]
        c: f64,
    },
    /// Label smoothing of binary labels.
    SmoothLabels {
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        #[arg(long)]
        eps: f64,
    },
    /// Stable 64-bit hash of a UTF-8 string.
    Hash {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(m) => CliError::Usage(m),
            Error::Data(m) => CliError::Data(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Data(m) => eprintln!("data error: {m}"),
            }
            e.code()
        }
    }
}

struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<Seed>,
}

impl Run {
    fn new(command: &'static str, inputs: &[&Path], seed: Option<Seed>) -> Self {
        Run {
            command,
            started: Instant::now(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: Vec::new(),
            seed,
        }
    }

    /// Writes `bytes` to `path` atomically, or to stdout when `path` is `None`.
    fn emit(&mut self, path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
        match path {
            Some(p) => {
                let p = resolve_out(p);
                write_atomic(&p, bytes)?;
                self.outputs.push(p);
                Ok(())
            }
            None => {
                let mut out = io::stdout().lock();
                out.write_all(bytes)
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::Data(format!("writing stdout: {e}")))
            }
        }
    }

    /// Writes a side output to `path`, or prints `fallback` to stderr.
    fn side(&mut self, path: Option<&Path>, bytes: &[u8], fallback: &str) -> CliResult<()> {
        match path {
            Some(_) => self.emit(path, bytes),
            None => {
                eprint!("{fallback}");
                Ok(())
            }
        }
    }

    /// Writes `<primary>.manifest.json` when the primary output went to a file.
    fn finish(self, primary: Option<&Path>) -> CliResult<()> {
        let Some(primary) = primary else { return Ok(()) };
        let primary = resolve_out(primary);
        let manifest = RunManifest {
            command: self.command.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        let mut name = primary.clone().into_os_string();
        name.push(".manifest.json");
        write_atomic(Path::new(&name), &to_json(&manifest)?)?;
        Ok(())
    }
}

fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Write to a temporary file in the target directory, then rename over the
/// target, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(format!("writing output: {e}"))
    }
}

fn open(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::Usage(format!("{}: no such file", path.display())),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_jsonl(path: &Path) -> CliResult<Vec<DomainRecord>> {
    let reader = BufReader::new(open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> CliResult<Vec<u8>> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item).map_err(|e| CliError::Data(e.to_string()))?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Filter(a) => run_filter(a),
        Command::Merge(a) => run_merge(a),
        Command::Zip(a) => run_zip(a),
        Command::Sketch(a) => run_sketch(a),
        Command::KtapSim(a) => run_ktap(a),
        Command::Partition(a) => run_partition(a),
        Command::Kernels(k) => run_kernel(k),
    }
}

fn run_filter(a: FilterArgs) -> CliResult<()> {
    let mut run = Run::new("filter", &[&a.matrix], Some(Seed(a.seed)));
    let matrix = ImportanceMatrix::from_csv(open(&a.matrix)?)?;
    let result = select_features(&matrix, a.budget, Seed(a.seed))?;
    run.emit(a.out.out.as_deref(), &to_json(&result)?)?;
    run.finish(a.out.out.as_deref())
}

#[derive(Serialize)]
struct MergeSummary {
    schema: DatasetSchema,
    domains: Vec<DomainCount>,
    records: usize,
}

#[derive(Serialize)]
struct DomainCount {
    domain: String,
    records: usize,
    features: usize,
}

fn run_merge(a: MergeArgs) -> CliResult<()> {
    let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    let mut run = Run::new("merge", &inputs, None);
    let mut groups: Vec<(String, Vec<DomainRecord>)> = Vec::new();
    for path in &a.inputs {
        for rec in read_jsonl(path)? {
            match groups.iter_mut().find(|(d, _)| *d == rec.domain) {
                Some((_, recs)) => recs.push(rec),
                None => groups.push((rec.domain.clone(), vec![rec])),
            }
        }
    }
    if groups.is_empty() {
        return Err(CliError::Data("no records in the input files".into()));
    }
    let domains: Vec<DomainCount> = groups
        .iter()
        .map(|(d, recs)| DomainCount {
            domain: d.clone(),
            records: recs.len(),
            features: DatasetSchema::infer(d.clone(), recs).features.len(),
        })
        .collect();
    let parts = groups
        .into_iter()
        .map(|(d, recs)| (DatasetSchema::infer(d, &recs), recs))
        .collect();
    let unified = merge_domains(parts)?;
    let summary = MergeSummary {
        schema: unified.schema.clone(),
        records: unified.records.len(),
        domains,
    };
    run.emit(a.out.out.as_deref(), &to_jsonl(&unified.records)?)?;
    let summary_json = to_json(&summary)?;
    let text = String::from_utf8_lossy(&summary_json).into_owned();
    run.side(a.summary.as_deref(), &summary_json, &text)?;
    run.finish(a.out.out.as_deref())
}

fn run_zip(a: ZipArgs) -> CliResult<()> {
    let mut config: ZipperConfig = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        config = ZipperConfig::new(config.windows, config.probabilities, Seed(seed))?;
    }
    let mut run = Run::new("zip", &[&a.input, &a.config], Some(config.seed));
    let records = read_jsonl(&a.input)?;
    let tasks = if a.tasks.is_empty() {
        tasks_seen(&records)
    } else {
        a.tasks
            .iter()
            .map(|t| TaskId::new(t.trim()))
            .collect::<lattice_core::Result<Vec<_>>>()?
    };
    let zipped = zip_records(&records, &tasks, &config)?;
    let summary = window_routing_summary(&zipped, &tasks, &config);
    run.emit(a.out.out.as_deref(), &to_jsonl(&zipped)?)?;

    let mut table = String::from("window\tcount");
    for t in &tasks {
        let _ = write!(table, "\t{t}");
    }
    table.push('\n');
    for s in &summary {
        let _ = write!(table, "{}\t{}", s.window, s.count);
        for t in &tasks {
            match s.positive_rate.get(t).copied().flatten() {
                Some(r) => {
                    let _ = write!(table, "\t{r:.4}");
                }
                None => table.push_str("\t-"),
            }
        }
        table.push('\n');
    }
    run.side(a.summary.as_deref(), &to_json(&summary)?, &table)?;
    run.finish(a.out.out.as_deref())
}

#[derive(Deserialize)]
struct SketchConfig {
    search: SearchConfig,
    #[serde(default)]
    space: HyperparamSpace,
    #[serde(default)]
    quality: Option<QualityModel>,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum SketchOutput<'a> {
    Dp {
        report: &'a lattice_core::sketch::BootstrapReport,
    },
    Beam {
        result: &'a lattice_core::sketch::BeamSearchResult,
    },
}

fn plan_row(out: &mut String, rank: usize, plan: &ExecutionPlan, extra: &str) {
    let strategies: Vec<&str> = plan.per_layer.iter().map(|s| s.0.as_str()).collect();
    let _ = writeln!(
        out,
        "{rank:>4}  {:>6}  {:>12.4}  {:>12.4}  {:>10}  {extra}{}",
        plan.batch,
        plan.total_latency,
        plan.throughput(),
        plan.memory_used,
        strategies.join(",")
    );
}

fn run_sketch(a: SketchArgs) -> CliResult<()> {
    let profile: ProfileTable = read_json(&a.profile)?;
    let mut config: SketchConfig = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        config.search.seed = Seed(seed);
    }
    let mut run = Run::new("sketch", &[&a.profile, &a.config], Some(config.search.seed));
    let mut table = String::new();
    let bytes = match a.mode {
        SketchMode::Dp => {
            let report = dp_bootstrap_all_batches(&profile, config.search.memory_capacity)?;
            let _ = writeln!(table, "batch  feasible  latency  throughput");
            for b in &report.per_batch {
                let _ = writeln!(
                    table,
                    "{:>5}  {:>8}  {}  {}",
                    b.batch,
                    b.feasible,
                    b.total_latency.map_or("-".into(), |v| format!("{v:.4}")),
                    b.throughput.map_or("-".into(), |v| format!("{v:.4}")),
                );
            }
            match &report.best {
                Some(p) => {
                    let _ = writeln!(table, "\nbest plan:");
                    plan_row(&mut table, 1, p, "");
                }
                None => table.push_str("\nno feasible plan\n"),
            }
            to_json(&SketchOutput::Dp { report: &report })?
        }
        SketchMode::Beam => {
            let quality = config.quality.unwrap_or(QualityModel {
                baseline_quality: 1.0,
                reference_flops: config.space.default_point().flops,
                exponent: config.search.scaling_exponent,
            });
            let result = beam_search(&profile, &config.space, &quality, &config.search)?;
            let _ = writeln!(
                table,
                "rank   batch       latency    throughput      memory  score        quality  strategies"
            );
            for (i, r) in result.ranked.iter().enumerate() {
                let extra = format!("{:<12.6} {:<8.5} ", r.score, r.quality);
                plan_row(&mut table, i + 1, &r.plan, &extra);
            }
            if result.ranked.is_empty() {
                table.push_str("no plan satisfies the latency, quality and memory constraints\n");
            }
            for d in &result.diagnostics {
                let _ = writeln!(table, "note: {d}");
            }
            to_json(&SketchOutput::Beam { result: &result })?
        }
    };
    run.emit(a.out.out.as_deref(), &bytes)?;
    eprint!("{table}");
    run.finish(a.out.out.as_deref())
}

fn run_ktap(a: KtapArgs) -> CliResult<()> {
    let mut workload: Workload = read_json(&a.workload)?;
    if let Some(seed) = a.seed {
        workload.seed = Seed(seed);
    }
    let mut run = Run::new("ktap-sim", &[&a.workload], Some(workload.seed));
    let report = simulate(&workload)?;
    run.emit(a.out.out.as_deref(), &to_json(&report.stats)?)?;
    if let Some(series) = a.series.as_deref() {
        run.emit(Some(series), report.series_csv().as_bytes())?;
    }
    run.finish(a.out.out.as_deref())
}

#[derive(Deserialize)]
struct PartitionInput {
    domains: Vec<DomainMeta>,
    objectives: Vec<ObjectiveMeta>,
}

fn run_partition(a: PartitionArgs) -> CliResult<()> {
    let mut run = Run::new("partition", &[&a.input, &a.policy], None);
    let input: PartitionInput = read_json(&a.input)?;
    let policy: PartitionPolicy = read_json(&a.policy)?;
    let portfolios = partitioner::partition(&input.domains, &input.objectives, &policy)?;
    let report = partitioner::report(&input.domains, &portfolios)?;
    run.emit(a.out.out.as_deref(), &to_json(&portfolios)?)?;
    run.side(a.report.as_deref(), report.as_bytes(), &report)?;
    run.finish(a.out.out.as_deref())
}

#[derive(Serialize)]
struct KernelOutput<T: Serialize> {
    op: &'static str,
    result: T,
}

fn eps(value: Option<f64>) -> CliResult<Epsilon> {
    Ok(value.map(Epsilon::new).transpose()?.unwrap_or_default())
}

fn print_kernel<T: Serialize>(op: &'static str, result: T) -> CliResult<()> {
    Run::new("kernels", &[], None).emit(None, &to_json(&KernelOutput { op, result })?)
}

fn run_kernel(k: KernelCommand) -> CliResult<()> {
    match k {
        KernelCommand::Corr { x, y, eps: e } => print_kernel("corr", numerics::correlation_loss(&x, &y, eps(e)?)?),
        KernelCommand::RmsNorm { x, eps: e } => print_kernel("rms-norm", numerics::rms_norm(&x, eps(e)?)?),
        KernelCommand::SwishRn { x, eps: e, gate } => {
            let gate = match gate {
                GateArg::Sigmoid => Gate::Sigmoid,
                GateArg::HardSigmoid => Gate::HardSigmoid,
            };
            print_kernel("swish-rn", numerics::swish_rn_gated(&x, eps(e)?, gate)?)
        }
        KernelCommand::SwishRnJvp { x, tangent, eps: e } => {
            print_kernel("swish-rn-jvp", numerics::swish_rn_jvp(&x, &tangent, eps(e)?)?)
        }
        KernelCommand::Clip { x, c } => print_kernel("clip", numerics::clip_features(&x, c)?),
        KernelCommand::SmoothLabels { y, eps } => print_kernel("smooth-labels", numerics::smooth_labels(&y, eps)?),
        KernelCommand::Hash { text, seed } => {
            print_kernel("hash", format!("{:#018x}", stable_hash(text.as_bytes(), Seed(seed))))
        }
    }
}
