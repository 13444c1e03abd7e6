//! End-to-end runs: scoring a manifest, correlating scores with human
//! ratings, the held-out-generator protocol, and component ablations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{fetch_scores, parse_score_tsv, sha256_hex, BackendError, ChatBackend, ScoreSource};
use crate::dataset::{cross_model_splits, mean_opinion_scores, DatasetError, Manifest, Mos, VideoRecord};
use crate::decomposition::{decompose, DecomposeError};
use crate::frames::encode_png;
use crate::parallel::map_bounded;
use crate::qagen::{cache_key, generate_qa, Aspect, CachedQa, QAGenConfig, QaCache, QaGenError};
use crate::quality::semantic::semantic_score;
use crate::quality::{fuse, remap, total_loss, QualityError, RawScoreBatch, ScoreLists};
use crate::report::{
    canonical_json_value, EvalGroup, EvalRow, EvalTable, Grouping, PromptQa, RemapRecord, ScoreReport, SkipCause,
    SkippedVideo, VideoScore, TOOL_VERSION,
};
use crate::stats::{CorrelationSummary, StatsError};
use crate::trajectory::{load_trajectory, render_overlay_at, summarize_motion};
use crate::vqa::{sample_frames, score_alignment, AlignmentResult, TrajectoryMode, VisualContext, VqaConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no records")]
    NoRecords,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("coverage mismatch: {0}")]
    Coverage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// 3 for backend failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Backend(_) => 3,
            _ => 2,
        }
    }
}

/// Which batch a raw score is standardized against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemapScope {
    /// All scored videos of the run.
    Run,
    /// Videos of the same generator.
    Generator,
}

/// Expert scores that make up the reported quality score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityExperts {
    Both,
    Technical,
    Semantic,
}

impl QualityExperts {
    pub fn pick(self, tech: f64, sem: f64, fused: f64) -> f64 {
        match self {
            QualityExperts::Both => fused,
            QualityExperts::Technical => tech,
            QualityExperts::Semantic => sem,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub qagen: QAGenConfig,
    pub vqa: VqaConfig,
    pub remap_scope: RemapScope,
    pub quality_experts: QualityExperts,
    /// Videos processed at once.
    pub jobs: usize,
    pub qa_cache_dir: Option<PathBuf>,
    /// Write overlaid frames next to each frame directory.
    pub dump_overlays: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            qagen: QAGenConfig::default(),
            vqa: VqaConfig::default(),
            remap_scope: RemapScope::Run,
            quality_experts: QualityExperts::Both,
            jobs: 4,
            qa_cache_dir: None,
            dump_overlays: false,
        }
    }
}

/// Semantic-expert scores: precomputed, or asked of the multimodal backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemanticSource {
    Scores(ScoreSource),
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualitySources {
    pub technical: ScoreSource,
    pub semantic: SemanticSource,
}

/// Text model for decomposition and question writing; multimodal model for
/// answering (and the semantic expert when it is backend-served).
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub llm: &'a dyn ChatBackend,
    pub mllm: &'a dyn ChatBackend,
}

fn config_value(cfg: &ScoreConfig, backends: &Backends<'_>, sources: &QualitySources) -> Value {
    json!({
        "qagen": cfg.qagen,
        "frames_k": cfg.vqa.frames_k,
        "skip_errored": cfg.vqa.skip_errored,
        "trajectory": cfg.vqa.trajectory,
        "overlay": cfg.vqa.overlay,
        "batch_questions": cfg.vqa.batch_questions,
        "remap_scope": cfg.remap_scope,
        "quality_experts": cfg.quality_experts,
        "semantic_expert": match sources.semantic {
            SemanticSource::Scores(_) => "scores",
            SemanticSource::Backend => "backend",
        },
        "llm_model": backends.llm.model_id(),
        "mllm_model": backends.mllm.model_id(),
        "mllm_images": backends.mllm.capabilities().image,
    })
}

/// Hash of the settings that influence scores. Paths, parallelism and score
/// source locations are left out so a replay fingerprints the same.
pub fn config_fingerprint(config: &Value) -> String {
    sha256_hex(canonical_json_value(config).as_bytes())
}

type Skip = (String, SkipCause, String);

fn prepare_qa(prompt: &str, llm: &dyn ChatBackend, cfg: &ScoreConfig) -> Result<PromptQa, Skip> {
    let key = cache_key(prompt, llm.model_id(), &cfg.qagen);
    let cache = cfg.qa_cache_dir.as_ref().map(QaCache::new);
    let cache_err = |e: QaGenError| ("qagen".to_string(), SkipCause::Validation, e.to_string());
    if let Some(c) = &cache {
        if let Some(hit) = c.get(&key).map_err(cache_err)? {
            return Ok(PromptQa {
                prompt_text: prompt.to_string(),
                cache_key: key,
                qaset: hit.qaset,
            });
        }
    }
    let d = decompose(prompt, llm).map_err(|e| {
        let cause = match e {
            DecomposeError::EmptyPrompt => SkipCause::Validation,
            _ => SkipCause::Backend,
        };
        ("decomposition".to_string(), cause, e.to_string())
    })?;
    let qa = generate_qa(&d.graph, llm, &cfg.qagen).map_err(|e| {
        let cause = match e {
            QaGenError::Config(_) | QaGenError::Cache { .. } => SkipCause::Validation,
            _ => SkipCause::Backend,
        };
        ("qagen".to_string(), cause, e.to_string())
    })?;
    if let Some(c) = &cache {
        let mut transcript = d.transcript;
        transcript.extend(qa.transcript);
        c.put(
            &key,
            &CachedQa {
                prompt_text: prompt.to_string(),
                qaset: qa.qaset.clone(),
                transcript,
            },
        )
        .map_err(cache_err)?;
    }
    Ok(PromptQa {
        prompt_text: prompt.to_string(),
        cache_key: key,
        qaset: qa.qaset,
    })
}

struct VideoOutcome {
    alignment: AlignmentResult,
    semantic: Option<f64>,
}

fn overlay_dir(frames: &Path) -> PathBuf {
    let name = frames
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    frames.with_file_name(format!("{name}.overlays"))
}

fn dump_overlays(dir: &Path, indices: &[usize], frames: &[RgbImage]) -> Result<(), Skip> {
    let err = |e: std::io::Error| {
        (
            "overlay".to_string(),
            SkipCause::Validation,
            format!("{}: {e}", dir.display()),
        )
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    for (i, f) in indices.iter().zip(frames) {
        std::fs::write(dir.join(format!("{i:05}.png")), encode_png(f)).map_err(err)?;
    }
    Ok(())
}

fn process_video(
    rec: &VideoRecord,
    manifest: &Manifest,
    qa: &PromptQa,
    backends: &Backends<'_>,
    cfg: &ScoreConfig,
    semantic_from_backend: bool,
) -> Result<VideoOutcome, Skip> {
    let invalid = |stage: &str, msg: String| (stage.to_string(), SkipCause::Validation, msg);
    let set = sample_frames(rec, manifest, cfg.vqa.frames_k).map_err(|e| invalid("frames", e.to_string()))?;
    let image_capable = backends.mllm.capabilities().image;
    let (want_overlay, want_summary) = cfg.vqa.trajectory.channels(image_capable);
    let mut ctx = VisualContext {
        frames: set.frames.clone(),
        motion_summary: None,
    };
    if let (Some(path), true) = (&rec.trajectory_path, want_overlay || want_summary) {
        let bundle = load_trajectory(&manifest.resolve(path)).map_err(|e| invalid("trajectory", e.to_string()))?;
        if bundle.frame_count as usize != set.total {
            return Err(invalid(
                "trajectory",
                format!(
                    "trajectory covers {} frames, video has {}",
                    bundle.frame_count, set.total
                ),
            ));
        }
        if want_overlay {
            ctx.frames = render_overlay_at(&set.frames, &set.indices, &bundle, &cfg.vqa.overlay)
                .map_err(|e| invalid("trajectory", e.to_string()))?;
            if cfg.dump_overlays {
                dump_overlays(
                    &overlay_dir(&manifest.resolve(&rec.frame_source)),
                    &set.indices,
                    &ctx.frames,
                )?;
            }
        }
        if want_summary {
            ctx.motion_summary = Some(summarize_motion(&bundle));
        }
    }
    let alignment = score_alignment(&rec.video_id, &ctx, &qa.qaset, backends.mllm, &cfg.vqa)
        .map_err(|e| invalid("vqa", e.to_string()))?;
    if alignment.verdicts.iter().all(|v| v.is_errored()) {
        let msg = match &alignment.verdicts[0].flag {
            Some(crate::vqa::VerdictFlag::Errored { message }) => message.clone(),
            _ => String::new(),
        };
        return Err((
            "vqa".to_string(),
            SkipCause::Backend,
            format!("every question failed: {msg}"),
        ));
    }
    let semantic = if semantic_from_backend {
        Some(
            semantic_score(&set.frames, backends.mllm)
                .map_err(|e| ("semantic".to_string(), SkipCause::Backend, e.to_string()))?,
        )
    } else {
        None
    };
    Ok(VideoOutcome { alignment, semantic })
}

/// Fetches scores for `ids`, moving ids without a usable score to `skipped`.
fn fetch_available(
    ids: &[String],
    source: &ScoreSource,
    provider: &str,
    skipped: &mut Vec<SkippedVideo>,
) -> Result<RawScoreBatch, BackendError> {
    let mut ids = ids.to_vec();
    loop {
        if ids.is_empty() {
            return Ok(RawScoreBatch {
                provider_id: provider.to_string(),
                entries: Vec::new(),
            });
        }
        let drop: Vec<(String, String)> = match fetch_scores(&ids, source, provider) {
            Ok(b) => return Ok(b),
            Err(BackendError::MissingScores(m)) => {
                m.into_iter().map(|id| (id, format!("no {provider} score"))).collect()
            }
            Err(BackendError::NonFiniteScore(id)) => vec![(id, format!("non-finite {provider} score"))],
            Err(e) => return Err(e),
        };
        for (id, reason) in drop {
            ids.retain(|x| *x != id);
            skipped.push(SkippedVideo {
                video_id: id,
                stage: "quality".into(),
                cause: SkipCause::Validation,
                reason,
            });
        }
    }
}

/// Scores every video of `manifest`. Per-video failures land in the
/// report's `skipped` list; only run-wide failures are errors.
pub fn cmd_score(
    manifest: &Manifest,
    cfg: &ScoreConfig,
    backends: Backends<'_>,
    sources: &QualitySources,
) -> Result<ScoreReport, PipelineError> {
    if manifest.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    cfg.qagen.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    if cfg.vqa.frames_k == 0 {
        return Err(PipelineError::Config("frames_k must be at least 1".into()));
    }
    let prompts: Vec<String> = manifest
        .records()
        .iter()
        .map(|r| r.prompt_text.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let qas = map_bounded(&prompts, cfg.jobs, |_, p| prepare_qa(p, backends.llm, cfg));
    let qa_by_prompt: HashMap<&str, &Result<PromptQa, Skip>> =
        prompts.iter().map(String::as_str).zip(qas.iter()).collect();

    let mut records: Vec<&VideoRecord> = manifest.records().iter().collect();
    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let semantic_from_backend = sources.semantic == SemanticSource::Backend;
    let outcomes = map_bounded(&records, cfg.jobs, |_, rec| {
        match qa_by_prompt[rec.prompt_text.as_str()] {
            Ok(qa) => process_video(rec, manifest, qa, &backends, cfg, semantic_from_backend),
            Err(skip) => Err(skip.clone()),
        }
    });

    let mut skipped = Vec::new();
    let mut alive: Vec<(&VideoRecord, VideoOutcome)> = Vec::new();
    for (rec, out) in records.iter().zip(outcomes) {
        match out {
            Ok(o) => alive.push((rec, o)),
            Err((stage, cause, reason)) => skipped.push(SkippedVideo {
                video_id: rec.video_id.clone(),
                stage,
                cause,
                reason,
            }),
        }
    }

    let ids: Vec<String> = alive.iter().map(|(r, _)| r.video_id.clone()).collect();
    let tech = fetch_available(&ids, &sources.technical, "technical", &mut skipped)?;
    let sem = match &sources.semantic {
        SemanticSource::Scores(src) => fetch_available(&ids, src, "semantic", &mut skipped)?,
        SemanticSource::Backend => RawScoreBatch {
            provider_id: "semantic".into(),
            entries: alive
                .iter()
                .map(|(r, o)| (r.video_id.clone(), o.semantic.expect("computed with the video")))
                .collect(),
        },
    };
    let skipped_ids: BTreeSet<String> = skipped.iter().map(|s| s.video_id.clone()).collect();
    alive.retain(|(r, _)| !skipped_ids.contains(&r.video_id));
    let keep: BTreeSet<String> = alive.iter().map(|(r, _)| r.video_id.clone()).collect();
    let (tech, sem) = (tech.subset(&keep), sem.subset(&keep));

    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (r, _) in &alive {
        let scope = match cfg.remap_scope {
            RemapScope::Run => "all".to_string(),
            RemapScope::Generator => r.generator_id.clone(),
        };
        groups.entry(scope).or_default().insert(r.video_id.clone());
    }
    let mut quality = BTreeMap::new();
    let mut remap_records = Vec::new();
    for (scope, ids) in &groups {
        let (t, tctx) = remap(&tech.subset(ids))?;
        let (s, sctx) = remap(&sem.subset(ids))?;
        for q in fuse(&t, &s)? {
            quality.insert(q.video_id.clone(), q);
        }
        remap_records.push(RemapRecord {
            scope: scope.clone(),
            technical: tctx,
            semantic: sctx,
        });
    }

    let per_video = alive
        .into_iter()
        .map(|(r, o)| {
            let q = quality.remove(&r.video_id).expect("fused for every kept video");
            VideoScore {
                video_id: r.video_id.clone(),
                generator_id: r.generator_id.clone(),
                t2vscore_a: o.alignment.score,
                t2vscore_q: cfg.quality_experts.pick(q.remapped_tech, q.remapped_sem, q.fused),
                alignment_detail: o.alignment,
                quality_detail: q,
            }
        })
        .collect();
    skipped.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let config = config_value(cfg, &backends, sources);
    Ok(ScoreReport {
        tool_version: TOOL_VERSION.to_string(),
        config_fingerprint: config_fingerprint(&config),
        config,
        per_video,
        skipped,
        remap: remap_records,
        prompts: qas.into_iter().filter_map(Result::ok).collect(),
    })
}

/// Exit status for a finished score run: 0 when complete, 4 when videos were
/// skipped, and under `strict` 3 (backend-caused skips) or 2 (otherwise).
pub fn score_exit_code(report: &ScoreReport, strict: bool) -> i32 {
    if report.skipped.is_empty() {
        0
    } else if !strict {
        4
    } else if report.skipped.iter().any(|s| s.cause == SkipCause::Backend) {
        3
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Alignment,
    Quality,
}

impl Dimension {
    fn of(self, m: &Mos) -> f64 {
        match self {
            Dimension::Alignment => m.alignment,
            Dimension::Quality => m.quality,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Alignment => "alignment",
            Dimension::Quality => "quality",
        })
    }
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alignment" | "a" => Ok(Dimension::Alignment),
            "quality" | "q" => Ok(Dimension::Quality),
            _ => Err(format!("unknown dimension {s:?}; use alignment or quality")),
        }
    }
}

/// An externally computed metric column, correlated alongside our scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraMetric {
    pub name: String,
    pub target: Dimension,
    pub scores: HashMap<String, f64>,
}

impl ExtraMetric {
    /// Loads `name:dimension=path`, where the file holds `video_id<TAB>score`.
    pub fn load(spec: &str) -> Result<Self, PipelineError> {
        let bad = || PipelineError::Config(format!("metric {spec:?}: expected name:dimension=path"));
        let (head, path) = spec.split_once('=').ok_or_else(bad)?;
        let (name, dim) = head.split_once(':').ok_or_else(bad)?;
        let target = dim.parse().map_err(PipelineError::Config)?;
        let path = Path::new(path);
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self {
            name: name.to_string(),
            target,
            scores: parse_score_tsv(&text, path)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorrelateOptions {
    /// Adds the list-wise loss at this rank weight to each row's extras.
    pub lambda: Option<f64>,
}

/// Scored video ids, after checking the report against the manifest.
fn covered_ids(report: &ScoreReport, manifest: &Manifest) -> Result<Vec<String>, PipelineError> {
    let in_manifest: BTreeSet<&str> = manifest.records().iter().map(|r| r.video_id.as_str()).collect();
    let mut accounted: BTreeSet<&str> = BTreeSet::new();
    let mut unknown = Vec::new();
    for id in report
        .per_video
        .iter()
        .map(|v| v.video_id.as_str())
        .chain(report.skipped.iter().map(|s| s.video_id.as_str()))
    {
        if !in_manifest.contains(id) {
            unknown.push(id.to_string());
        }
        accounted.insert(id);
    }
    let missing: Vec<&str> = in_manifest.difference(&accounted).copied().collect();
    if !unknown.is_empty() || !missing.is_empty() {
        return Err(PipelineError::Coverage(format!(
            "report videos not in manifest: [{}]; manifest videos not in report: [{}]",
            unknown.join(", "),
            missing.join(", ")
        )));
    }
    Ok(report.per_video.iter().map(|v| v.video_id.clone()).collect())
}

fn eval_row(
    name: &str,
    target: Dimension,
    ids: &[String],
    metric: &dyn Fn(&str) -> Option<f64>,
    mos: &BTreeMap<String, Mos>,
    opts: &CorrelateOptions,
) -> Result<EvalRow, PipelineError> {
    let mut xs = Vec::with_capacity(ids.len());
    let mut missing = Vec::new();
    for id in ids {
        match metric(id) {
            Some(v) => xs.push(v),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::Coverage(format!(
            "{name} has no value for [{}]",
            missing.join(", ")
        )));
    }
    let ys: Vec<f64> = ids.iter().map(|id| target.of(&mos[id])).collect();
    let mut extras = BTreeMap::new();
    let (spearman, kendall, pearson, flags) = if ids.len() < 2 {
        (None, None, None, vec![format!("undefined: {} videos", ids.len())])
    } else {
        let c = CorrelationSummary::compute(&xs, &ys)?;
        if let Some(lambda) = opts.lambda {
            extras.insert(
                "listwise_loss".to_string(),
                total_loss(&ScoreLists::new(&xs, &ys, lambda)?),
            );
        }
        let flags = c.undefined.iter().map(|s| format!("{s} undefined")).collect();
        (c.spearman, c.kendall, c.pearson, flags)
    };
    Ok(EvalRow {
        metric_name: name.to_string(),
        target: target.to_string(),
        n: ids.len(),
        spearman,
        kendall,
        pearson,
        flags,
        extras,
    })
}

fn rows_for(
    report: &ScoreReport,
    ids: &[String],
    extras: &[ExtraMetric],
    mos: &BTreeMap<String, Mos>,
    opts: &CorrelateOptions,
) -> Result<Vec<EvalRow>, PipelineError> {
    let by_id: HashMap<&str, &VideoScore> = report.per_video.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let mut rows = vec![
        eval_row(
            "T2VScore-A",
            Dimension::Alignment,
            ids,
            &|id| by_id.get(id).map(|v| v.t2vscore_a),
            mos,
            opts,
        )?,
        eval_row(
            "T2VScore-Q",
            Dimension::Quality,
            ids,
            &|id| by_id.get(id).map(|v| v.t2vscore_q),
            mos,
            opts,
        )?,
    ];
    for m in extras {
        rows.push(eval_row(
            &m.name,
            m.target,
            ids,
            &|id| m.scores.get(id).copied(),
            mos,
            opts,
        )?);
    }
    Ok(rows)
}

fn annotated_mos(manifest: &Manifest, ids: &[String]) -> Result<BTreeMap<String, Mos>, PipelineError> {
    let wanted: BTreeSet<&String> = ids.iter().collect();
    let records: Vec<VideoRecord> = manifest
        .records()
        .iter()
        .filter(|r| wanted.contains(&r.video_id))
        .cloned()
        .collect();
    Ok(mean_opinion_scores(&Manifest::new(records, manifest.base_dir())?)?)
}

/// Correlates both scores (and any extra columns) with human ratings over
/// every scored video.
pub fn cmd_correlate(
    report: &ScoreReport,
    manifest: &Manifest,
    extras: &[ExtraMetric],
    opts: &CorrelateOptions,
) -> Result<EvalTable, PipelineError> {
    let ids = covered_ids(report, manifest)?;
    let mos = annotated_mos(manifest, &ids)?;
    Ok(EvalTable {
        grouping: Grouping::Overall,
        groups: vec![EvalGroup {
            label: "overall".into(),
            rows: rows_for(report, &ids, extras, &mos, opts)?,
            video_ids: ids,
        }],
    })
}

/// One row group per generator, each computed over the videos of all the
/// other generators.
pub fn cmd_crossmodel(
    report: &ScoreReport,
    manifest: &Manifest,
    extras: &[ExtraMetric],
    opts: &CorrelateOptions,
) -> Result<EvalTable, PipelineError> {
    let splits = cross_model_splits(manifest)?;
    let ids = covered_ids(report, manifest)?;
    let mos = annotated_mos(manifest, &ids)?;
    let generator: HashMap<&str, &str> = report
        .per_video
        .iter()
        .map(|v| (v.video_id.as_str(), v.generator_id.as_str()))
        .collect();
    let mut groups = Vec::new();
    for split in splits {
        let held: Vec<String> = ids
            .iter()
            .filter(|id| split.held_out.contains(generator[id.as_str()]))
            .cloned()
            .collect();
        groups.push(EvalGroup {
            label: format!("except {}", split.held_in),
            rows: rows_for(report, &held, extras, &mos, opts)?,
            video_ids: held,
        });
    }
    Ok(EvalTable {
        grouping: Grouping::CrossModel,
        groups,
    })
}

/// One ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationVariant {
    Quality(QualityExperts),
    Alignment { trajectory: bool },
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Quality(QualityExperts::Semantic),
        AblationVariant::Quality(QualityExperts::Technical),
        AblationVariant::Quality(QualityExperts::Both),
        AblationVariant::Alignment { trajectory: false },
        AblationVariant::Alignment { trajectory: true },
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Quality(QualityExperts::Semantic) => "T2VScore-Q (semantic only)",
            AblationVariant::Quality(QualityExperts::Technical) => "T2VScore-Q (technical only)",
            AblationVariant::Quality(QualityExperts::Both) => "T2VScore-Q (both experts)",
            AblationVariant::Alignment { trajectory: false } => "T2VScore-A (no trajectory)",
            AblationVariant::Alignment { trajectory: true } => "T2VScore-A (with trajectory)",
        }
    }
}

impl FromStr for AblationVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "q-sem" => AblationVariant::Quality(QualityExperts::Semantic),
            "q-tech" => AblationVariant::Quality(QualityExperts::Technical),
            "q-both" => AblationVariant::Quality(QualityExperts::Both),
            "a-notraj" => AblationVariant::Alignment { trajectory: false },
            "a-traj" => AblationVariant::Alignment { trajectory: true },
            _ => {
                return Err(format!(
                    "unknown variant {s:?}; use q-sem, q-tech, q-both, a-notraj or a-traj"
                ))
            }
        })
    }
}

/// Pooled accuracy over all counted questions of the scored videos,
/// optionally restricted to one aspect.
pub fn pooled_accuracy(report: &ScoreReport, aspect: Option<Aspect>, skip_errored: bool) -> Option<f64> {
    let (mut correct, mut n) = (0usize, 0usize);
    for v in &report.per_video {
        for verdict in &v.alignment_detail.verdicts {
            if aspect.is_some_and(|a| a != verdict.aspect) || (skip_errored && verdict.flag.is_some()) {
                continue;
            }
            n += 1;
            correct += verdict.correct as usize;
        }
    }
    (n > 0).then(|| correct as f64 / n as f64)
}

pub struct AblationOutcome {
    pub table: EvalTable,
    /// Score reports the rows were computed from, keyed by trajectory on/off.
    pub reports: BTreeMap<bool, ScoreReport>,
}

/// Runs the requested variants and correlates each with its rating
/// dimension. Quality variants share one run; each trajectory setting
/// needs its own.
pub fn cmd_ablate(
    manifest: &Manifest,
    cfg: &ScoreConfig,
    backends: Backends<'_>,
    sources: &QualitySources,
    variants: &[AblationVariant],
    opts: &CorrelateOptions,
) -> Result<AblationOutcome, PipelineError> {
    if variants.is_empty() {
        return Err(PipelineError::Config("no ablation variants".into()));
    }
    let mut needed = BTreeSet::new();
    for v in variants {
        needed.insert(match v {
            AblationVariant::Quality(_) => true,
            AblationVariant::Alignment { trajectory } => *trajectory,
        });
    }
    let mut reports = BTreeMap::new();
    for traj in needed {
        let mut c = cfg.clone();
        c.quality_experts = QualityExperts::Both;
        c.vqa.trajectory = match (traj, cfg.vqa.trajectory) {
            (false, _) => TrajectoryMode::Off,
            (true, TrajectoryMode::Off) => TrajectoryMode::Auto,
            (true, m) => m,
        };
        reports.insert(traj, cmd_score(manifest, &c, backends, sources)?);
    }
    let mut rows = Vec::new();
    let mut all_ids = BTreeSet::new();
    for &v in variants {
        let traj = matches!(
            v,
            AblationVariant::Quality(_) | AblationVariant::Alignment { trajectory: true }
        );
        let mut report = reports[&traj].clone();
        let ids = covered_ids(&report, manifest)?;
        all_ids.extend(ids.iter().cloned());
        let mos = annotated_mos(manifest, &ids)?;
        let mut row = match v {
            AblationVariant::Quality(experts) => {
                for s in &mut report.per_video {
                    let q = &s.quality_detail;
                    s.t2vscore_q = experts.pick(q.remapped_tech, q.remapped_sem, q.fused);
                }
                let by_id: HashMap<&str, f64> = report
                    .per_video
                    .iter()
                    .map(|s| (s.video_id.as_str(), s.t2vscore_q))
                    .collect();
                eval_row(
                    v.label(),
                    Dimension::Quality,
                    &ids,
                    &|id| by_id.get(id).copied(),
                    &mos,
                    opts,
                )?
            }
            AblationVariant::Alignment { .. } => {
                let by_id: HashMap<&str, f64> = report
                    .per_video
                    .iter()
                    .map(|s| (s.video_id.as_str(), s.t2vscore_a))
                    .collect();
                let mut row = eval_row(
                    v.label(),
                    Dimension::Alignment,
                    &ids,
                    &|id| by_id.get(id).copied(),
                    &mos,
                    opts,
                )?;
                let skip = cfg.vqa.skip_errored;
                for (name, aspect) in [
                    ("vqa_accuracy", None),
                    ("spatial_accuracy", Some(Aspect::Spatial)),
                    ("temporal_accuracy", Some(Aspect::Temporal)),
                ] {
                    if let Some(a) = pooled_accuracy(&report, aspect, skip) {
                        row.extras.insert(name.to_string(), a);
                    }
                }
                row
            }
        };
        row.metric_name = v.label().to_string();
        rows.push(row);
    }
    Ok(AblationOutcome {
        table: EvalTable {
            grouping: Grouping::Ablation,
            groups: vec![EvalGroup {
                label: "ablation".into(),
                video_ids: all_ids.into_iter().collect(),
                rows,
            }],
        },
        reports,
    })
}
