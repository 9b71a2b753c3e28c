use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use foray_core::check::check_spec;
use foray_core::emit::{emit_c, emit_report};
use foray_core::model::{analyze_stream, FilterConfig, ForayModel, ModelStats};
use foray_core::synth::random::random_spec;
use foray_core::synth::{write_trace, GenerateError, ValidSpec, WorkloadSpec};
use foray_core::trace::TraceError;

/// Extract affine loop-nest models from memory-access traces.
#[derive(Parser)]
#[command(name = "foray", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a trace and emit the model.
    Analyze(AnalyzeArgs),
    /// Generate a trace from a workload spec.
    Synth(SynthArgs),
    /// Generate, analyze and compare against the expected model.
    Check(CheckArgs),
}

#[derive(Args)]
struct Thresholds {
    /// Minimum executions for a reference to survive.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    nexec: u64,
    /// Minimum distinct addresses for a reference to survive.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    nloc: u64,
}

impl Thresholds {
    fn config(&self) -> FilterConfig {
        FilterConfig::with_thresholds(self.nexec, self.nloc)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    C,
    Report,
    Both,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace file, or '-' for standard input.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = Emit::C)]
    emit: Emit,
    /// Write <prefix>.c and/or <prefix>.json instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    thresholds: Thresholds,
    /// Print filtering statistics to standard error.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trace file; standard output if omitted or '-'.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    spec: Option<PathBuf>,
    /// Check this many generated random specs instead of a spec file.
    #[arg(long)]
    random: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    thresholds: Thresholds,
}

/// An error plus the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    /// Analysis or validation failure.
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }

    /// I/O or trace format error.
    fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::io(e)
    }
}

impl From<GenerateError> for Failure {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Io(e) => Failure::io(e),
            e => Failure::invalid(e),
        }
    }
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn load_spec(path: &Path) -> Result<ValidSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)?;
    WorkloadSpec::from_toml(&text).map_err(|e| Failure::invalid(anyhow::anyhow!("{}: {e}", path.display())))
}

fn print_stats(stats: &ModelStats) {
    eprintln!(
        "references: {} total, {} included, {} purged, {} non-analyzable",
        stats.total.references, stats.included.references, stats.purged.references, stats.non_analyzable.references
    );
    eprintln!(
        "accesses:   {} total, {} included, {} purged, {} non-analyzable",
        stats.total.accesses, stats.included.accesses, stats.purged.accesses, stats.non_analyzable.accesses
    );
    for (reason, n) in &stats.purge_reasons {
        eprintln!("  {reason:?}: {n}");
    }
    eprintln!(
        "loops: {} static, {} contexts, {} in model; {} checkpoints; peak live state {}",
        stats.static_loops, stats.loop_nodes, stats.included_loop_nodes, stats.checkpoint_events, stats.peak_live_state
    );
}

fn write_artifact(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let cfg = args.thresholds.config();
    let model: ForayModel = if is_stdio(&args.trace) {
        analyze_stream(io::stdin().lock(), cfg)?
    } else {
        let file = File::open(&args.trace)
            .with_context(|| format!("cannot open {}", args.trace.display()))
            .map_err(Failure::io)?;
        analyze_stream(BufReader::new(file), cfg)?
    };
    log::info!(
        "{} records analyzed, {} references",
        model.stats.checkpoint_events + model.stats.access_events,
        model.references.len()
    );
    if args.stats {
        print_stats(&model.stats);
    }

    let mut artifacts = Vec::new();
    if matches!(args.emit, Emit::C | Emit::Both) {
        artifacts.push(("c", emit_c(&model)));
    }
    if matches!(args.emit, Emit::Report | Emit::Both) {
        artifacts.push(("json", emit_report(&model)));
    }
    match &args.out {
        Some(prefix) => {
            for (ext, text) in &artifacts {
                let mut path = prefix.clone().into_os_string();
                path.push(".");
                path.push(ext);
                write_artifact(Path::new(&path), text)?;
            }
        }
        None => {
            let mut out = io::stdout().lock();
            for (_, text) in &artifacts {
                out.write_all(text.as_bytes()).map_err(Failure::io)?;
            }
            out.flush().map_err(Failure::io)?;
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.spec)?;
    match args.out.as_deref().filter(|p| !is_stdio(p)) {
        Some(path) => {
            let file = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))
                .map_err(Failure::io)?;
            write_trace(&spec, args.seed, BufWriter::new(file))?;
        }
        None => write_trace(&spec, args.seed, BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}

/// Returns the number of mismatches found.
fn check_one(label: &str, spec: &ValidSpec, seed: u64, cfg: &FilterConfig) -> Result<usize, Failure> {
    let report = check_spec(spec, seed, cfg).map_err(Failure::invalid)?;
    for m in &report.mismatches {
        println!("{label}: {m}");
    }
    log::info!(
        "{label}: {} references, {} surviving, {} mismatches",
        report.model.references.len(),
        report.model.surviving().count(),
        report.mismatches.len()
    );
    Ok(report.mismatches.len())
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let cfg = args.thresholds.config();
    let mut mismatches = 0;
    let mut specs = 0;
    if let Some(path) = &args.spec {
        let spec = load_spec(path)?;
        mismatches += check_one(&path.display().to_string(), &spec, args.seed, &cfg)?;
        specs = 1;
    } else if let Some(n) = args.random {
        for i in 0..n {
            let shape = args.seed.wrapping_add(i);
            let spec = random_spec(shape).validate().map_err(Failure::invalid)?;
            mismatches += check_one(&format!("random spec {shape}"), &spec, shape, &cfg)?;
        }
        specs = n;
    }
    if mismatches > 0 {
        return Err(Failure::invalid(anyhow::anyhow!(
            "{mismatches} mismatches across {specs} specs"
        )));
    }
    eprintln!("{specs} specs checked, 0 mismatches");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORAY_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
