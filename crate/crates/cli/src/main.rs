//! `examgen`: generate, validate, curate and export exam questions, compute
//! survey statistics, and serve the HTTP API.
//!
//! Exit codes: 0 success, 2 bad input (spec, file, flags), 3 provider
//! failure, 4 validation failed. Data goes to stdout, diagnostics to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use examgen_core::bank::{export, Bank, ExamFilter, ExportFormat};
use examgen_core::gateway::{builtin_models, Gateway, ModelConfig, ProviderKind};
use examgen_core::job::JobState;
use examgen_core::pipeline::{create_job, job_prompt, revalidate_job, run_job, PipelineError};
use examgen_core::survey::{compute_stats, format_table, parse_csv, SdDivisor};
use examgen_core::taxonomy::{
    validate_spec, CurationStatus, Difficulty, ExamSpec, JobId, QuestionId, QuestionKind,
};
use examgen_core::validator::{default_parallelism, verify_all, FindingSeverity, SandboxConfig, ValidationReport};
use examgen_core::render_prompt;

#[derive(Parser)]
#[command(name = "examgen", version, about = "Generate and curate programming exam questions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the prompt for a spec, call the model and store the parsed questions.
    Generate(GenerateArgs),
    /// Re-run validation over every job in a bank.
    Validate(ValidateArgs),
    /// Accept or reject stored questions.
    Curate(CurateArgs),
    /// Assemble accepted questions into an exam document.
    Export(ExportArgs),
    /// Per-group Likert statistics from a survey CSV.
    Stats(StatsArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// TOML file with extra `[models.<name>]` tables.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Directory of `<prompt digest>.md` responses for the fixture provider.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Fixture,
    Live,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Model config name.
    #[arg(long, default_value = "fixture-default")]
    model: String,
    /// Bank file; required unless --dry-run.
    #[arg(long, required_unless_present = "dry_run")]
    out: Option<PathBuf>,
    /// Override the config's provider. --fixtures alone implies fixture.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Print the rendered prompt and stop.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Also execute code where an expected output can be derived.
    #[arg(long)]
    exec: bool,
    /// Per-run wall clock limit, e.g. `5s` or `500ms`.
    #[arg(long, default_value = "5s", value_parser = parse_duration)]
    sandbox_timeout: Duration,
    /// Print the reports as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    bank: PathBuf,
    #[command(subcommand)]
    action: CurateAction,
}

#[derive(Subcommand)]
enum CurateAction {
    Accept { ids: Vec<String> },
    Reject { ids: Vec<String> },
    /// Accept every Draft question, optionally of one job.
    AcceptAll {
        #[arg(long)]
        job: Option<String>,
    },
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    bank: PathBuf,
    /// markdown or json.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Kind slugs, repeatable: multiple-choice, short-answer, essay.
    #[arg(long = "kind")]
    kinds: Vec<String>,
    #[arg(long)]
    min_difficulty: Option<u8>,
    #[arg(long)]
    max_difficulty: Option<u8>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    answer_key_separate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsFormat {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Divide by n instead of n - 1.
    #[arg(long)]
    population: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: StatsFormat,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Bank file; in memory when omitted.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Success = 0,
    BadInput = 2,
    Provider = 3,
    ValidationFailed = 4,
}

struct Failure {
    exit: Exit,
    message: String,
}

fn fail<T>(exit: Exit, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        exit,
        message: message.into(),
    })
}

fn bad_input(message: impl Into<String>) -> Failure {
    Failure {
        exit: Exit::BadInput,
        message: message.into(),
    }
}

type CmdResult = Result<Exit, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Curate(a) => cmd_curate(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Serve(a) => cmd_serve(a),
    };
    let exit = result.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.exit
    });
    ExitCode::from(exit as u8)
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("ms") {
        (n, 1e-3)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad duration {s:?}"))?;
    Duration::try_from_secs_f64(v * scale).map_err(|e| e.to_string())
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| bad_input(format!("{}: {e}", path.display())))
}

fn open_bank(path: &Path) -> Result<Bank, Failure> {
    Bank::open(path).map_err(|e| bad_input(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
struct ModelsFile {
    #[serde(default)]
    models: BTreeMap<String, ModelConfig>,
}

fn load_models(path: Option<&Path>) -> Result<BTreeMap<String, ModelConfig>, Failure> {
    let mut models = builtin_models();
    if let Some(path) = path {
        let file: ModelsFile =
            toml::from_str(&read_file(path)?).map_err(|e| bad_input(format!("{}: {e}", path.display())))?;
        models.extend(file.models);
    }
    Ok(models)
}

fn load_gateway(fixtures: Option<&Path>, parallelism: usize) -> Result<Gateway, Failure> {
    let gateway = Gateway::new(parallelism);
    if let Some(dir) = fixtures {
        let n = gateway
            .fixtures()
            .load_dir(dir)
            .map_err(|e| bad_input(format!("{}: {e}", dir.display())))?;
        log::info!("loaded {n} fixture responses from {}", dir.display());
    }
    Ok(gateway)
}

fn print_findings(out: &mut impl Write, report: &ValidationReport) {
    for f in &report.findings {
        let severity = match f.severity {
            FindingSeverity::Error => "error",
            FindingSeverity::Warning => "warning",
            FindingSeverity::Info => "info",
        };
        let target = f.question_id.as_ref().map_or_else(|| "exam".to_string(), |q| q.to_string());
        let _ = writeln!(out, "  {severity:<7} {:<22} {target}  {}", f.code.as_str(), f.message);
    }
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let spec = ExamSpec::from_json(&read_file(&a.spec)?)
        .map_err(|e| bad_input(format!("{}: {e}", a.spec.display())))?;
    if let Err(errs) = validate_spec(&spec) {
        let lines: Vec<String> = errs.iter().map(|e| format!("{}: {e}", e.code())).collect();
        return fail(Exit::BadInput, format!("invalid spec {}\n  {}", a.spec.display(), lines.join("\n  ")));
    }
    if a.dry_run {
        let prompt = render_prompt(&spec).map_err(|e| bad_input(e.to_string()))?;
        print!("{}", prompt.text);
        eprintln!("prompt digest: {}", prompt.digest);
        return Ok(Exit::Success);
    }

    let models = load_models(a.model_args.models.as_deref())?;
    let mut cfg = models
        .get(&a.model)
        .cloned()
        .ok_or_else(|| bad_input(format!("unknown model config {:?}", a.model)))?;
    let provider = match (a.provider, &a.model_args.fixtures) {
        (Some(ProviderArg::Live), _) => ProviderKind::Live,
        (Some(ProviderArg::Fixture), _) | (None, Some(_)) => ProviderKind::Fixture,
        (None, None) => cfg.provider,
    };
    if provider != cfg.provider {
        cfg = match provider {
            ProviderKind::Fixture => ModelConfig::fixture(cfg.model_id),
            ProviderKind::Live => return fail(Exit::BadInput, format!("model config {:?} is not a live config", a.model)),
        };
    }

    let out = a.out.expect("clap enforces --out without --dry-run");
    let bank = open_bank(&out)?;
    let gateway = load_gateway(a.model_args.fixtures.as_deref(), 1)?;
    let job = create_job(&bank, spec, &a.model).map_err(|e| bad_input(e.to_string()))?;
    if let Ok(prompt) = job_prompt(&bank, &job) {
        log::info!("job {} prompt digest {}", job.id, prompt.digest);
    }
    let done = match run_job(&bank, &gateway, &job.id, &cfg) {
        Ok(done) => done,
        Err(e @ PipelineError::Gateway(_)) => {
            return fail(Exit::Provider, format!("job {} failed: {}: {e}", job.id, e.code()))
        }
        Err(e) => return fail(Exit::BadInput, format!("job {} failed: {}: {e}", job.id, e.code())),
    };
    for d in &done.diagnostics {
        eprintln!("{:?} {} at {}..{}: {}", d.severity, d.code, d.span.start, d.span.end, d.message);
    }
    let report = done.validation.clone().unwrap_or_default();
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "job {}: {} questions stored in {}; validation {}",
        done.id,
        done.question_ids.len(),
        out.display(),
        if report.passed { "passed" } else { "FAILED" }
    );
    print_findings(&mut stdout, &report);
    Ok(if report.passed { Exit::Success } else { Exit::ValidationFailed })
}

fn cmd_validate(a: ValidateArgs) -> CmdResult {
    let bank = open_bank(&a.bank)?;
    let sandbox = SandboxConfig::detect().with_timeout(a.sandbox_timeout);
    let mut reports = Vec::new();
    for job in bank.jobs() {
        if job.state != JobState::Validated {
            continue;
        }
        let mut report = revalidate_job(&bank, &job);
        if a.exec {
            let questions: Vec<_> = bank.list(Some(&job.id)).into_iter().map(|r| r.question).collect();
            report.add_execution(&verify_all(&questions, &sandbox, default_parallelism()));
        }
        reports.push((job, report));
    }
    let passed = reports.iter().all(|(_, r)| r.passed);
    let mut stdout = std::io::stdout().lock();
    if a.json {
        let value: Vec<_> = reports
            .iter()
            .map(|(job, r)| serde_json::json!({ "job": job.id, "report": r }))
            .collect();
        let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&value).expect("reports serialize"));
    } else {
        for (job, r) in &reports {
            let _ = writeln!(
                stdout,
                "job {} ({}, {} questions): {} [{}]",
                job.id,
                job.spec.kind.slug(),
                bank.list(Some(&job.id)).len(),
                if r.passed { "passed" } else { "FAILED" },
                r.checks_run.join(", ")
            );
            print_findings(&mut stdout, r);
        }
        let _ = writeln!(
            stdout,
            "{} job(s) checked, {} failed",
            reports.len(),
            reports.iter().filter(|(_, r)| !r.passed).count()
        );
    }
    Ok(if passed { Exit::Success } else { Exit::ValidationFailed })
}

fn cmd_curate(a: CurateArgs) -> CmdResult {
    let bank = open_bank(&a.bank)?;
    let (targets, status): (Vec<QuestionId>, _) = match a.action {
        CurateAction::Accept { ids } => (ids.iter().map(|s| QuestionId::from(s.as_str())).collect(), CurationStatus::Accepted),
        CurateAction::Reject { ids } => (ids.iter().map(|s| QuestionId::from(s.as_str())).collect(), CurationStatus::Rejected),
        CurateAction::AcceptAll { job } => {
            let job = job.map(|j| JobId::from(j.as_str()));
            let ids = bank
                .list(job.as_ref())
                .into_iter()
                .filter(|r| r.question.status == CurationStatus::Draft)
                .map(|r| r.question.id)
                .collect();
            (ids, CurationStatus::Accepted)
        }
    };
    for id in &targets {
        let rec = bank
            .set_status(id, status)
            .map_err(|e| bad_input(format!("{id}: {e}")))?;
        println!("{} {}", rec.question.id, rec.question.status);
    }
    Ok(Exit::Success)
}

fn difficulty_flag(name: &str, v: Option<u8>) -> Result<Option<Difficulty>, Failure> {
    v.map(|l| Difficulty::new(l).ok_or_else(|| bad_input(format!("--{name} must be 1..=5"))))
        .transpose()
}

fn cmd_export(a: ExportArgs) -> CmdResult {
    let format: ExportFormat = a.format.parse().map_err(bad_input)?;
    let kinds = a
        .kinds
        .iter()
        .map(|s| QuestionKind::from_slug(s).ok_or_else(|| bad_input(format!("unknown kind {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let filter = ExamFilter {
        kinds,
        min_difficulty: difficulty_flag("min-difficulty", a.min_difficulty)?,
        max_difficulty: difficulty_flag("max-difficulty", a.max_difficulty)?,
        target_language: a.language,
        limit: a.limit,
        title: a.title,
        answer_key_separate: a.answer_key_separate,
    };
    let bank = open_bank(&a.bank)?;
    let doc = bank.assemble(&filter);
    if doc.questions.is_empty() {
        log::warn!("no accepted questions match the filter");
    }
    let bytes = export(&doc, format);
    match a.out {
        Some(path) => fs::write(&path, bytes).map_err(|e| bad_input(format!("{}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| bad_input(format!("stdout: {e}")))?,
    }
    Ok(Exit::Success)
}

fn cmd_stats(a: StatsArgs) -> CmdResult {
    let file = fs::File::open(&a.csv).map_err(|e| bad_input(format!("{}: {e}", a.csv.display())))?;
    let rows = parse_csv(file).map_err(|e| bad_input(format!("{}: {e}", a.csv.display())))?;
    let divisor = if a.population { SdDivisor::Population } else { SdDivisor::Sample };
    let table = compute_stats(&rows, divisor).map_err(|e| bad_input(e.to_string()))?;
    let formatted = format_table(&table);
    match a.format {
        StatsFormat::Text => print!("{}", formatted.text),
        StatsFormat::Csv => print!("{}", formatted.csv),
        StatsFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&table.records()).expect("cells serialize")
        ),
    }
    Ok(Exit::Success)
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let models = load_models(a.model_args.models.as_deref())?;
    let gateway = load_gateway(a.model_args.fixtures.as_deref(), a.parallelism)?;
    let bank = match &a.bank {
        Some(path) => open_bank(path)?,
        None => Bank::in_memory(),
    };
    let state = examgen_server::AppState::new(Arc::new(bank), Arc::new(gateway)).with_models(models);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| bad_input(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| bad_input(format!("bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr().map_err(|e| bad_input(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        examgen_server::serve(listener, state)
            .await
            .map_err(|e| bad_input(format!("server: {e}")))?;
        Ok(Exit::Success)
    })
}
