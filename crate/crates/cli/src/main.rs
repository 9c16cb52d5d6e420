use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use canqa_core::baseline::BaselineStats;
use canqa_core::eval::{
    read_records, run_eval, ChatEndpoint, EvalOptions, EvalSummary, HttpEndpoint, MockEndpoint, MockMode, Strategy,
};
use canqa_core::frame::{frames_digest, write_frames_jsonl};
use canqa_core::pipeline::{self, check_compatible};
use canqa_core::store::{manifest_path, read_dataset, split_eval_fewshot, DatasetManifest};
use canqa_core::{AttackLabel, FormatHint, RunConfig};

/// Build and score CAN-traffic question-answering benchmarks.
#[derive(Parser, Debug)]
#[command(name = "canqa", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frames per window.
    #[arg(long, global = true)]
    window_len: Option<usize>,
    /// Input log layout: auto, csv or txt.
    #[arg(long, global = true, default_value = "auto")]
    format: FormatHint,
    /// Prompting strategy: zero_shot, few_shot, cot or few_shot_cot.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Worker threads for generation and concurrent requests for evaluation.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and normalize traces, reporting frame and rejection counts.
    Ingest {
        paths: Vec<PathBuf>,
        /// Attack label for every input instead of inferring it from file names.
        #[arg(long)]
        label: Option<AttackLabel>,
        /// Directory for normalized `<name>.frames.jsonl` dumps.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn baseline statistics from an attack-free trace.
    Baseline {
        /// Attack-free trace; defaults to `paths.normal`.
        normal: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the question dataset from attack traces.
    Generate {
        /// Attack traces; default to `paths.inputs`.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        label: Option<AttackLabel>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add the extra templates so more categories get both formats.
        #[arg(long)]
        both_formats: bool,
        /// Questions per format per window.
        #[arg(long)]
        per_window: Option<usize>,
    },
    /// Ask a model every question and score the answers.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// JSONL record log; an existing log is resumed.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Examples per prompt for few-shot strategies.
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Offline endpoint: echo, anti, random[:seed] or fixed:<A-D>.
        #[arg(long)]
        mock: Option<MockMode>,
    },
    /// Render a record log as an accuracy table and CSV.
    Report {
        #[arg(long)]
        records: Option<PathBuf>,
        /// CSV output; defaults to `<records>.csv` next to the log.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Print a line to stdout; a closed pipe (`canqa ... | head`) ends the
/// process quietly.
macro_rules! say {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))
    };
}

fn emit(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{args}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("failed printing to stdout: {e}");
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(w) = g.window_len {
        cfg.window_len = w;
    }
    if let Some(s) = g.strategy {
        cfg.eval.strategy = s;
    }
    if let Some(p) = g.parallelism {
        cfg.plan.parallelism = p;
        cfg.eval.parallelism = p;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} path given on the command line or in the config"),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

/// `DoS_dataset.csv.gz` -> `DoS_dataset`.
fn trace_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("trace");
    let name = name.strip_suffix(".gz").unwrap_or(name);
    match name.rsplit_once('.') {
        Some((stem, _)) => stem.to_string(),
        None => name.to_string(),
    }
}

fn cmd_ingest(g: &GlobalArgs, paths: Vec<PathBuf>, label: Option<AttackLabel>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(g)?;
    let paths = if paths.is_empty() { cfg.paths.inputs.clone() } else { paths };
    let streams = pipeline::load_streams(&paths, g.format, label)?;
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for (path, stream) in paths.iter().zip(&streams) {
        say!(
            "{}: {} frames, {} rejected, {} attack, label {}, digest {}",
            path.display(),
            stream.len(),
            stream.rejected_count,
            stream.attack_frame_count(),
            stream.source_label,
            frames_digest(&stream.frames)
        );
        if let Some(dir) = &out {
            let dump = dir.join(format!("{}.frames.jsonl", trace_stem(path)));
            let file = File::create(&dump).with_context(|| format!("creating {}", dump.display()))?;
            write_frames_jsonl(&stream.frames, BufWriter::new(file))
                .with_context(|| format!("writing {}", dump.display()))?;
        }
    }
    Ok(())
}

fn cmd_baseline(g: &GlobalArgs, normal: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(g)?;
    let normal = required(normal, &cfg.paths.normal, "normal trace")?;
    let out = required(out, &cfg.paths.baseline, "baseline output")?;
    let stream = canqa_core::frame::parse_log_file(&normal, g.format, Some(AttackLabel::Normal))?;
    let baseline = pipeline::baseline_from_stream(&stream, &cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    baseline.save(&out)?;
    say!(
        "{}: {} frames in {} windows, {} expected IDs, digest {}",
        out.display(),
        baseline.config.frame_count,
        baseline.config.window_count,
        baseline.expected_ids.len(),
        baseline.digest()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    g: &GlobalArgs,
    inputs: Vec<PathBuf>,
    label: Option<AttackLabel>,
    baseline: Option<PathBuf>,
    out: Option<PathBuf>,
    both_formats: bool,
    per_window: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(g)?;
    cfg.plan.both_formats |= both_formats;
    if let Some(n) = per_window {
        cfg.plan.per_window = n;
    }
    cfg.validate()?;
    let baseline_path = required(baseline, &cfg.paths.baseline, "baseline")?;
    let out = required(out, &cfg.paths.dataset, "dataset output")?;
    let baseline = BaselineStats::load(&baseline_path)?;
    // Refuse before touching any trace.
    check_compatible(&baseline, &cfg)?;
    let inputs = if inputs.is_empty() { cfg.paths.inputs.clone() } else { inputs };
    let streams = pipeline::load_streams(&inputs, g.format, label)?;
    let generated = pipeline::generate(&streams, &baseline, &cfg)?;
    let manifest = pipeline::write_generated(&generated, &out, &baseline, &cfg)?;
    say!(
        "{}: {} items ({} TF, {} MCQ), {} skipped templates, digest {}",
        out.display(),
        manifest.total_items,
        manifest.per_format.tf,
        manifest.per_format.mcq,
        generated.report.skips.len(),
        manifest.dataset_digest
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    g: &GlobalArgs,
    dataset: Option<PathBuf>,
    records: Option<PathBuf>,
    shots: Option<usize>,
    url: Option<String>,
    model: Option<String>,
    mock: Option<MockMode>,
) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(u) = url {
        cfg.endpoint.url = u;
    }
    if let Some(m) = model {
        cfg.endpoint.model = m;
    }
    if let Some(k) = shots {
        cfg.eval.shots = k;
    }
    cfg.validate()?;
    let dataset = required(dataset, &cfg.paths.dataset, "dataset")?;
    let records = required(records, &cfg.paths.records, "records output")?;
    let manifest_file = manifest_path(&dataset);
    if manifest_file.exists() {
        let manifest = DatasetManifest::load(&manifest_file)?;
        let want = cfg.ground_truth().digest();
        if (g.config.is_some() || g.window_len.is_some())
            && manifest.config_digest.as_deref().is_some_and(|d| d != want)
        {
            bail!("dataset {} was generated with a different window length or thresholds", dataset.display());
        }
    }

    let items = read_dataset(&dataset)?;
    let strategy = cfg.eval.strategy;
    let k = if strategy.uses_shots() { cfg.eval.shots } else { 0 };
    let (eval_items, pool) = split_eval_fewshot(&items, k, cfg.seed)?;

    let endpoint: Box<dyn ChatEndpoint> = match mock {
        Some(mode) => Box::new(MockEndpoint::new(mode, &items)),
        None => Box::new(HttpEndpoint::from_config(&cfg.endpoint)?),
    };
    let opts = EvalOptions {
        strategy,
        parallelism: cfg.eval.parallelism,
        shots: k,
        pool: &pool,
        seed: cfg.seed,
        max_retries: cfg.endpoint.max_retries,
        backoff: Duration::from_millis(cfg.endpoint.backoff_ms),
    };
    info!("{} evaluation items, {} few-shot pool items", eval_items.len(), pool.len());
    let outcome = run_eval(&eval_items, endpoint.as_ref(), &opts, Some(&records))?;
    let summary_path = sibling(&records, ".summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&outcome.summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;
    say!("{}", outcome.summary.table().trim_end());
    say!("records: {} ({} resumed), summary: {}", records.display(), outcome.resumed, summary_path.display());
    Ok(())
}

fn cmd_report(g: &GlobalArgs, records: Option<PathBuf>, csv: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(g)?;
    let records = required(records, &cfg.paths.records, "records")?;
    let summary = EvalSummary::from_records(&read_records(&records)?);
    if summary.overall.total == 0 {
        bail!("{} holds no evaluation records", records.display());
    }
    let csv = csv.unwrap_or_else(|| sibling(&records, ".csv"));
    std::fs::write(&csv, summary.csv()).with_context(|| format!("writing {}", csv.display()))?;
    say!("{}", summary.table().trim_end());
    say!("csv: {}", csv.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let g = &cli.global;
    match cli.command {
        Command::Ingest { paths, label, out } => cmd_ingest(g, paths, label, out),
        Command::Baseline { normal, out } => cmd_baseline(g, normal, out),
        Command::Generate { inputs, label, baseline, out, both_formats, per_window } => {
            cmd_generate(g, inputs, label, baseline, out, both_formats, per_window)
        }
        Command::Evaluate { dataset, records, shots, url, model, mock } => {
            cmd_evaluate(g, dataset, records, shots, url, model, mock)
        }
        Command::Report { records, csv } => cmd_report(g, records, csv),
    }
}
