//! `t2vscore`: score text-to-video generations and correlate the scores with
//! human ratings.
//!
//! Exit codes: 0 success, 2 validation failure, 3 backend failure, 4 some
//! videos skipped (without `--strict`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use t2vscore::backends::{
    AuditLog, Audited, BackendProfile, Capabilities, ChatBackend, HttpChatClient, MockBackend, ScoreSource,
};
use t2vscore::dataset::load_manifest;
use t2vscore::pipeline::{
    cmd_ablate, cmd_correlate, cmd_crossmodel, cmd_score, score_exit_code, AblationVariant, Backends, CorrelateOptions,
    ExtraMetric, PipelineError, QualityExperts, QualitySources, RemapScope, ScoreConfig, SemanticSource,
};
use t2vscore::qagen::QAGenConfig;
use t2vscore::report::{EvalTable, ScoreReport};
use t2vscore::vqa::{TrajectoryMode, VqaConfig};

#[derive(Parser)]
#[command(name = "t2vscore", version, about = "Text-to-video alignment and quality evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every video of a manifest.
    Score(RunArgs),
    /// Correlate a score report with the manifest's human ratings.
    Correlate(CorrelateArgs),
    /// Correlate per held-out generator set.
    Crossmodel(CorrelateArgs),
    /// Score component variants and correlate each.
    Ablate(AblateArgs),
    /// Re-run `score` from an audit directory without network access.
    Replay(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MockCaps {
    /// Text and images.
    All,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct RunArgs {
    /// Line-delimited JSON manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Profile of the multimodal backend (also used for text unless
    /// `--llm-profile` is given).
    #[arg(long)]
    backend_profile: Option<PathBuf>,
    /// Profile of the text backend used for decomposition and questions.
    #[arg(long)]
    llm_profile: Option<PathBuf>,
    /// Serve every model call from this fixture directory.
    #[arg(long, conflicts_with_all = ["backend_profile", "llm_profile"])]
    mock: Option<PathBuf>,
    /// Serve every model call from a previous run's audit directory.
    #[arg(long, conflicts_with_all = ["backend_profile", "llm_profile", "mock"])]
    replay: Option<PathBuf>,
    /// Capabilities the mock or replay backend declares.
    #[arg(long, value_enum, default_value = "all")]
    mock_caps: MockCaps,
    /// Write one JSON record per model request here.
    #[arg(long)]
    audit_dir: Option<PathBuf>,
    /// Technical-expert scores: a `video_id<TAB>score` file or an http(s) URL.
    #[arg(long)]
    tech_scores: String,
    /// Semantic-expert scores: a file, a URL, or `backend` to ask the
    /// multimodal backend.
    #[arg(long, default_value = "backend")]
    sem_scores: String,
    #[arg(long, default_value_t = 8)]
    frames_k: usize,
    /// Answer choices per generated question.
    #[arg(long, default_value_t = 4)]
    choices: usize,
    #[arg(long, default_value_t = 5)]
    min_questions: usize,
    #[arg(long, default_value_t = 12)]
    max_questions: usize,
    /// Directory caching question sets per prompt.
    #[arg(long)]
    qa_cache: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    trajectory: TrajectoryArg,
    #[arg(long, value_enum, default_value = "run")]
    remap_scope: ScopeArg,
    /// Leave errored and unparseable answers out of the score.
    #[arg(long)]
    skip_errored: bool,
    /// Ask all questions of a video in one request.
    #[arg(long)]
    batch_questions: bool,
    /// Save overlaid frames beside each frame directory.
    #[arg(long)]
    dump_overlays: bool,
    /// Fail (exit 2 or 3) when any video is skipped.
    #[arg(long)]
    strict: bool,
    /// Videos processed in parallel.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    /// Concurrent questions per video.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Auto,
    Overlay,
    Summary,
    Both,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Run,
    Generator,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Score report produced by `score`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Extra metric column, `name:dimension=path` (dimension is alignment or
    /// quality). Repeatable.
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// Also report the list-wise loss at this rank weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated subset of q-sem, q-tech, q-both, a-notraj, a-traj.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

/// The error and its causes, skipping causes whose text is already included.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !msg.contains(&s) {
            msg = format!("{msg}: {s}");
        }
    }
    msg
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn score_config(a: &RunArgs) -> ScoreConfig {
    ScoreConfig {
        qagen: QAGenConfig {
            min_questions: a.min_questions,
            max_questions: a.max_questions,
            choices: a.choices,
        },
        vqa: VqaConfig {
            frames_k: a.frames_k,
            skip_errored: a.skip_errored,
            trajectory: match a.trajectory {
                TrajectoryArg::Auto => TrajectoryMode::Auto,
                TrajectoryArg::Overlay => TrajectoryMode::Overlay,
                TrajectoryArg::Summary => TrajectoryMode::Summary,
                TrajectoryArg::Both => TrajectoryMode::Both,
                TrajectoryArg::Off => TrajectoryMode::Off,
            },
            batch_questions: a.batch_questions,
            max_in_flight: a.max_in_flight,
            ..VqaConfig::default()
        },
        remap_scope: match a.remap_scope {
            ScopeArg::Run => RemapScope::Run,
            ScopeArg::Generator => RemapScope::Generator,
        },
        quality_experts: QualityExperts::Both,
        jobs: a.jobs,
        qa_cache_dir: a.qa_cache.clone(),
        dump_overlays: a.dump_overlays,
    }
}

fn sources(a: &RunArgs, offline: bool) -> anyhow::Result<QualitySources> {
    let technical = ScoreSource::parse(&a.tech_scores);
    let semantic = match a.sem_scores.as_str() {
        "backend" => SemanticSource::Backend,
        s => SemanticSource::Scores(ScoreSource::parse(s)),
    };
    let is_service = |s: &ScoreSource| matches!(s, ScoreSource::Service(_));
    if offline && (is_service(&technical) || matches!(&semantic, SemanticSource::Scores(s) if is_service(s))) {
        bail!("replay runs without network access; use file score sources");
    }
    Ok(QualitySources { technical, semantic })
}

struct BackendPair {
    llm: Arc<dyn ChatBackend>,
    mllm: Arc<dyn ChatBackend>,
}

fn http_backend(path: &Path) -> anyhow::Result<Arc<dyn ChatBackend>> {
    let profile = BackendProfile::load(path).with_context(|| format!("backend profile {}", path.display()))?;
    Ok(Arc::new(HttpChatClient::new(profile)?))
}

fn build_backends(a: &RunArgs, replay_required: bool) -> anyhow::Result<BackendPair> {
    if replay_required && a.replay.is_none() {
        bail!("replay needs --replay <audit dir>");
    }
    let caps = match a.mock_caps {
        MockCaps::All => Capabilities::ALL,
        MockCaps::Text => Capabilities::TEXT_ONLY,
    };
    let (llm, mllm): (Arc<dyn ChatBackend>, Arc<dyn ChatBackend>) =
        if let Some(dir) = a.replay.as_ref().or(a.mock.as_ref()) {
            let m: Arc<dyn ChatBackend> =
                Arc::new(MockBackend::from_dir(dir, caps).with_context(|| format!("fixtures in {}", dir.display()))?);
            (m.clone(), m)
        } else {
            let Some(mp) = &a.backend_profile else {
                bail!("no backend: pass --backend-profile, --mock or --replay");
            };
            let mllm = http_backend(mp)?;
            let llm = match &a.llm_profile {
                Some(p) => http_backend(p)?,
                None => mllm.clone(),
            };
            (llm, mllm)
        };
    Ok(match &a.audit_dir {
        Some(dir) => {
            let log = AuditLog::create(dir)?;
            BackendPair {
                llm: Arc::new(Audited::new(llm, log.clone())),
                mllm: Arc::new(Audited::new(mllm, log)),
            }
        }
        None => BackendPair { llm, mllm },
    })
}

fn run_score(a: &RunArgs, replay: bool) -> Result<u8, Failure> {
    let manifest = load_manifest(&a.manifest).map_err(PipelineError::from)?;
    let pair = build_backends(a, replay)?;
    let offline = a.replay.is_some() || a.mock.is_some();
    let src = sources(a, offline)?;
    let backends = Backends {
        llm: pair.llm.as_ref(),
        mllm: pair.mllm.as_ref(),
    };
    let report = cmd_score(&manifest, &score_config(a), backends, &src)?;
    for s in &report.skipped {
        log::warn!("skipped {} at {}: {}", s.video_id, s.stage, s.reason);
    }
    write_output(a.out.as_deref(), &report.to_canonical_json())?;
    Ok(score_exit_code(&report, a.strict) as u8)
}

fn render(table: &EvalTable, format: Format) -> String {
    match format {
        Format::Json => table.to_canonical_json(),
        Format::Text => table.to_text(),
    }
}

fn run_correlate(a: &CorrelateArgs, cross: bool) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = ScoreReport::from_json(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let manifest = load_manifest(&a.manifest).map_err(PipelineError::from)?;
    let extras = a
        .metrics
        .iter()
        .map(|m| ExtraMetric::load(m))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = CorrelateOptions { lambda: a.lambda };
    let table = if cross {
        cmd_crossmodel(&report, &manifest, &extras, &opts)?
    } else {
        cmd_correlate(&report, &manifest, &extras, &opts)?
    };
    write_output(a.out.as_deref(), &render(&table, a.format))?;
    Ok(0)
}

fn run_ablate(a: &AblateArgs) -> Result<u8, Failure> {
    let variants: Vec<AblationVariant> = if a.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| v.parse().map_err(anyhow::Error::msg))
            .collect::<anyhow::Result<_>>()?
    };
    let manifest = load_manifest(&a.run.manifest).map_err(PipelineError::from)?;
    let pair = build_backends(&a.run, false)?;
    let src = sources(&a.run, a.run.replay.is_some() || a.run.mock.is_some())?;
    let backends = Backends {
        llm: pair.llm.as_ref(),
        mllm: pair.mllm.as_ref(),
    };
    let opts = CorrelateOptions { lambda: a.lambda };
    let outcome = cmd_ablate(&manifest, &score_config(&a.run), backends, &src, &variants, &opts)?;
    write_output(a.run.out.as_deref(), &render(&outcome.table, a.format))?;
    let worst = outcome
        .reports
        .values()
        .map(|r| score_exit_code(r, a.run.strict))
        .max()
        .unwrap_or(0);
    Ok(worst as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Score(a) => run_score(a, false),
        Command::Replay(a) => run_score(a, true),
        Command::Correlate(a) => run_correlate(a, false),
        Command::Crossmodel(a) => run_correlate(a, true),
        Command::Ablate(a) => run_ablate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
