use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use beliefsim::beliefmetrics::{
    baseline_half_split, compare_cohorts, ComparisonConfig, MetricError,
};
use beliefsim::engine::{run_cohort_detailed, AgentEnv, EngineError, RunConfig};
use beliefsim::report::{
    export_histograms, fixed4, Comparison, HistogramKind, OutputFormat, ReportBundle, RunInfo,
};
use beliefsim::trace::{
    load_cohort_with, parse_trace_line, save_cohort, Cohort, LoadOptions, TraceError,
};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_ENDPOINT: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(
    name = "beliefsim",
    version,
    about = "Three-stage belief-dynamics simulation and cohort comparison"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an agent cohort over a stimulus plan and write the trace file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Overrides the config output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lenient_parse: bool,
        #[arg(long)]
        strict_schema: bool,
    },
    /// Compare a subject cohort against a reference cohort.
    Evaluate {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Output directory for the report bundle.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = beliefsim::beliefmetrics::DEFAULT_KL_PSEUDOCOUNT)]
        kl_pseudocount: f64,
        /// Group label for the table rows.
        #[arg(long, default_value = "all")]
        model_type: String,
        /// Recorded in report metadata; evaluation itself draws no randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict_schema: bool,
    },
    /// Half-split baseline: KL and Wasserstein between random halves.
    Baseline {
        #[arg(long)]
        cohort: PathBuf,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = beliefsim::beliefmetrics::DEFAULT_KL_PSEUDOCOUNT)]
        kl_pseudocount: f64,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict_schema: bool,
    },
    /// Export histogram and raw-value CSVs for figure reproduction.
    Export {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::All)]
        which: Which,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict_schema: bool,
    },
    /// Schema-check trace files and report every problem found.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        strict_schema: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Stage1,
    FollowSignal,
    Bnd,
    All,
}

impl Which {
    fn kinds(self) -> Vec<HistogramKind> {
        match self {
            Which::Stage1 => vec![HistogramKind::Stage1],
            Which::FollowSignal => vec![HistogramKind::FollowSignal],
            Which::Bnd => vec![HistogramKind::Bnd],
            Which::All => HistogramKind::ALL.to_vec(),
        }
    }
}

/// An error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

type CliResult = Result<(), Failure>;

fn load(path: &Path, strict: bool) -> Result<Cohort, Failure> {
    load_cohort_with(path, LoadOptions { strict }).map_err(|e: TraceError| {
        fail(
            EXIT_DATA,
            anyhow::Error::new(e).context(format!("loading {}", path.display())),
        )
    })
}

fn engine_failure(e: EngineError) -> Failure {
    let code = match e {
        EngineError::Config(_) => EXIT_CONFIG,
        EngineError::Io(_) => 1,
        _ => EXIT_DATA,
    };
    fail(code, e)
}

fn simulate(
    config: &Path,
    seed: Option<u64>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
    lenient_parse: bool,
    strict_schema: bool,
) -> CliResult {
    let mut cfg = RunConfig::load(config).map_err(engine_failure)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = out {
        cfg.output_path = o;
    }
    cfg.lenient_parse |= lenient_parse;
    cfg.validate().map_err(engine_failure)?;

    let plan = cfg.plan(strict_schema).map_err(engine_failure)?;
    let audit_path = cfg.audit_path();
    for p in [&cfg.output_path, &audit_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let env = AgentEnv {
        endpoint: cfg.endpoint.as_ref(),
        audit_path: Some(&audit_path),
        lenient_parse: cfg.lenient_parse,
        strict_schema,
    };
    let agent = cfg.agent.build(&env).map_err(engine_failure)?;
    let (cohort, summary) =
        run_cohort_detailed(&agent, &plan, &cfg.options()).map_err(engine_failure)?;
    save_cohort(&cohort, &cfg.output_path).context("writing cohort")?;

    println!(
        "wrote {} traces ({} complete, {} failed at stage 1, {} at stage 2, {} at stage 3) to {}",
        summary.n_total,
        summary.n_complete,
        summary.failed_stage1,
        summary.failed_stage2,
        summary.failed_stage3,
        cfg.output_path.display()
    );
    let fraction = summary.completion_fraction();
    if fraction < cfg.min_complete_fraction {
        let msg = format!(
            "only {:.1}% of traces complete (threshold {:.1}%)",
            100.0 * fraction,
            100.0 * cfg.min_complete_fraction
        );
        if summary.transport_failures > 0 {
            return Err(fail(
                EXIT_ENDPOINT,
                anyhow::anyhow!(
                    "{msg}; {} stage(s) failed to reach the endpoint",
                    summary.transport_failures
                ),
            ));
        }
        return Err(fail(EXIT_DATA, anyhow::anyhow!(msg)));
    }
    Ok(())
}

fn evaluate(
    subject: &Path,
    reference: &Path,
    out: &Path,
    kl_pseudocount: f64,
    model_type: &str,
    seed: u64,
    strict: bool,
) -> CliResult {
    if !(kl_pseudocount >= 0.0 && kl_pseudocount.is_finite()) {
        return Err(fail(
            EXIT_CONFIG,
            anyhow::anyhow!("--kl-pseudocount must be >= 0"),
        ));
    }
    let s = load(subject, strict)?;
    let r = load(reference, strict)?;
    let report =
        compare_cohorts(&s, &r, &ComparisonConfig { kl_pseudocount }).map_err(|e| match e {
            MetricError::NoComparableInstances => fail(
                EXIT_DATA,
                anyhow::anyhow!("{e}: {} vs {}", s.label, r.label),
            ),
            other => fail(EXIT_DATA, other),
        })?;
    let bundle = ReportBundle {
        comparisons: vec![Comparison {
            model_type: model_type.to_string(),
            report,
        }],
        cohorts: vec![&s, &r],
        formats: OutputFormat::ALL.to_vec(),
        out_dir: out.to_path_buf(),
        info: RunInfo {
            seeds: vec![seed],
            endpoints: Vec::new(),
        },
    };
    let mut failed = 0;
    for (format, result) in bundle.write() {
        match result {
            Ok(paths) => {
                for p in paths {
                    log::info!("wrote {}", p.display());
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {format:?} output: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(fail(1, anyhow::anyhow!("{failed} output format(s) failed")));
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn baseline(
    cohort: &Path,
    seed: u64,
    seeds: u64,
    kl_pseudocount: f64,
    out: Option<&Path>,
    strict: bool,
) -> CliResult {
    if seeds == 0 {
        return Err(fail(EXIT_CONFIG, anyhow::anyhow!("--seeds must be >= 1")));
    }
    let c = load(cohort, strict)?;
    let mut rows = Vec::new();
    for s in seed..seed + seeds {
        let (kl, w) = baseline_half_split(&c, s, kl_pseudocount).map_err(|e| fail(EXIT_DATA, e))?;
        rows.push((s.to_string(), kl, w));
    }
    let n = rows.len() as f64;
    let mean_kl = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_w = rows.iter().map(|r| r.2).sum::<f64>() / n;
    rows.push(("mean".into(), mean_kl, mean_w));

    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
    println!("{:<width$} | {:<6} | wasserstein", "seed", "kl");
    for (s, kl, w) in &rows {
        println!("{:<width$} | {} | {}", s, fixed4(*kl), fixed4(*w));
    }
    if let Some(path) = out {
        let mut text = String::from("seed,kl,wasserstein\n");
        for (s, kl, w) in &rows {
            text.push_str(&format!("{s},{kl},{w}\n"));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn export(
    subject: &Path,
    reference: Option<&Path>,
    out: &Path,
    which: Which,
    strict: bool,
) -> CliResult {
    let mut cohorts = vec![load(subject, strict)?];
    if let Some(r) = reference {
        cohorts.push(load(r, strict)?);
    }
    let refs: Vec<&Cohort> = cohorts.iter().collect();
    for kind in which.kinds() {
        let paths = export_histograms(&refs, kind, out).map_err(|e| fail(EXIT_DATA, e))?;
        for p in paths {
            println!("{}", p.display());
        }
    }
    Ok(())
}

/// Checks every line instead of stopping at the first problem.
fn validate_file(path: &Path, strict: bool) -> Result<Vec<String>, Failure> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(|e| fail(EXIT_DATA, e))?;
    let options = LoadOptions { strict };
    let mut problems = Vec::new();
    let mut cohort = Cohort::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| fail(EXIT_DATA, e))?;
        if text.trim().is_empty() {
            continue;
        }
        match parse_trace_line(&text, line_no, options) {
            Ok(t) => {
                if !seen.insert(t.key()) {
                    problems.push(format!("line {line_no}: duplicate trace {}", t.key()));
                } else {
                    cohort.traces.insert(t.key(), t);
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
    }
    if let Err(e) = cohort.validate() {
        problems.push(e.to_string());
    }
    if problems.is_empty() {
        println!("{}: ok ({} traces)", path.display(), cohort.len());
    }
    Ok(problems)
}

fn validate(paths: &[PathBuf], strict: bool) -> CliResult {
    let mut total = 0;
    for path in paths {
        let problems = validate_file(path, strict)?;
        for p in &problems {
            eprintln!("{}: {p}", path.display());
        }
        total += problems.len();
    }
    if total > 0 {
        return Err(fail(EXIT_DATA, anyhow::anyhow!("{total} problem(s) found")));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            parallelism,
            out,
            lenient_parse,
            strict_schema,
        } => simulate(
            &config,
            seed,
            parallelism,
            out,
            lenient_parse,
            strict_schema,
        ),
        Command::Evaluate {
            subject,
            reference,
            out,
            kl_pseudocount,
            model_type,
            seed,
            strict_schema,
        } => evaluate(
            &subject,
            &reference,
            &out,
            kl_pseudocount,
            &model_type,
            seed,
            strict_schema,
        ),
        Command::Baseline {
            cohort,
            seed,
            seeds,
            kl_pseudocount,
            out,
            strict_schema,
        } => baseline(
            &cohort,
            seed,
            seeds,
            kl_pseudocount,
            out.as_deref(),
            strict_schema,
        ),
        Command::Export {
            subject,
            reference,
            out,
            which,
            seed: _,
            strict_schema,
        } => export(&subject, reference.as_deref(), &out, which, strict_schema),
        Command::Validate {
            paths,
            strict_schema,
            seed: _,
        } => validate(&paths, strict_schema),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
