//! Multiple-choice question answering over sampled frames, and the
//! alignment score: the fraction of questions answered correctly.

mod normalize;

pub use normalize::{match_answer, normalize_text, AnswerMatch};

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::LazyLock;
use thiserror::Error;

use crate::backends::{ChatBackend, ChatMessage, ChatRequest, ContentPart, Role};
use crate::dataset::{Manifest, VideoRecord};
use crate::frames::{encode_png, FrameError, FrameSet};
use crate::parallel::map_bounded;
use crate::qagen::{Aspect, QASet, QATuple, CHOICE_LABELS};
use crate::trajectory::OverlayConfig;

#[derive(Debug, Error)]
pub enum VqaError {
    #[error("{0}: question set is empty")]
    EmptyQaSet(String),
    #[error(transparent)]
    Frames(#[from] FrameError),
}

/// How point-track information reaches the answering model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    /// Overlays for image-capable backends, the text summary otherwise.
    Auto,
    Overlay,
    Summary,
    Both,
    Off,
}

impl TrajectoryMode {
    /// `(overlay, summary)` for a backend with or without image input.
    pub fn channels(self, image_capable: bool) -> (bool, bool) {
        match self {
            TrajectoryMode::Auto => (image_capable, !image_capable),
            TrajectoryMode::Overlay => (image_capable, false),
            TrajectoryMode::Summary => (false, true),
            TrajectoryMode::Both => (image_capable, true),
            TrajectoryMode::Off => (false, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqaConfig {
    pub frames_k: usize,
    /// Leave errored and unparseable answers out of the denominator.
    pub skip_errored: bool,
    pub trajectory: TrajectoryMode,
    pub overlay: OverlayConfig,
    /// Ask all of a video's questions in one request.
    pub batch_questions: bool,
    pub max_in_flight: usize,
}

impl Default for VqaConfig {
    fn default() -> Self {
        Self {
            frames_k: 8,
            skip_errored: false,
            trajectory: TrajectoryMode::Auto,
            overlay: OverlayConfig::default(),
            batch_questions: false,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictFlag {
    Unparseable,
    Errored { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VQAVerdict {
    pub question_id: u32,
    pub predicted_index: Option<usize>,
    pub correct: bool,
    pub raw_response: String,
    pub aspect: Aspect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<VerdictFlag>,
}

impl VQAVerdict {
    pub fn from_reply(q: &QATuple, reply: String) -> Self {
        let predicted_index = match_answer(&reply, &q.choices).index();
        Self {
            question_id: q.question_id,
            predicted_index,
            correct: predicted_index == Some(q.answer_index),
            raw_response: reply,
            aspect: q.aspect,
            flag: predicted_index.is_none().then_some(VerdictFlag::Unparseable),
        }
    }

    pub fn errored(q: &QATuple, message: String) -> Self {
        Self {
            question_id: q.question_id,
            predicted_index: None,
            correct: false,
            raw_response: String::new(),
            aspect: q.aspect,
            flag: Some(VerdictFlag::Errored { message }),
        }
    }

    pub fn is_errored(&self) -> bool {
        matches!(self.flag, Some(VerdictFlag::Errored { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub video_id: String,
    pub verdicts: Vec<VQAVerdict>,
    /// Correct answers over counted questions.
    pub score: f64,
    pub correct: usize,
    pub counted: usize,
    /// `None` when no counted question has that aspect.
    pub accuracy_spatial: Option<f64>,
    pub accuracy_temporal: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Aggregates verdicts. Errored verdicts count as incorrect unless
/// `skip_errored`, which drops them from every denominator. A video with no
/// counted verdict scores 0.
pub fn compute_alignment(video_id: &str, mut verdicts: Vec<VQAVerdict>, skip_errored: bool) -> AlignmentResult {
    verdicts.sort_by_key(|v| v.question_id);
    let counted: Vec<&VQAVerdict> = verdicts
        .iter()
        .filter(|v| !(skip_errored && v.flag.is_some()))
        .collect();
    let tally = |aspect: Option<Aspect>| {
        let sel: Vec<&&VQAVerdict> = counted
            .iter()
            .filter(|v| aspect.is_none_or(|a| v.aspect == a))
            .collect();
        (sel.iter().filter(|v| v.correct).count(), sel.len())
    };
    let (correct, n) = tally(None);
    let (cs, ns) = tally(Some(Aspect::Spatial));
    let (ct, nt) = tally(Some(Aspect::Temporal));
    AlignmentResult {
        video_id: video_id.to_string(),
        score: ratio(correct, n).unwrap_or(0.0),
        correct,
        counted: n,
        accuracy_spatial: ratio(cs, ns),
        accuracy_temporal: ratio(ct, nt),
        verdicts,
    }
}

/// What the answering model sees for one video.
#[derive(Debug, Clone, Default)]
pub struct VisualContext {
    /// Sampled frames, with overlays already drawn when that channel is on.
    pub frames: Vec<RgbImage>,
    pub motion_summary: Option<String>,
}

fn choice_block(q: &QATuple) -> String {
    q.choices
        .iter()
        .zip(CHOICE_LABELS)
        .map(|(c, l)| format!("{l}. {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn context_parts(ctx: &VisualContext, image_capable: bool) -> (Vec<ContentPart>, String) {
    let parts = if image_capable {
        ctx.frames.iter().map(|f| ContentPart::png(encode_png(f))).collect()
    } else {
        Vec::new()
    };
    let mut preface = String::new();
    if image_capable && !ctx.frames.is_empty() {
        preface.push_str("The images are frames of one video in temporal order.\n");
    }
    if let Some(s) = &ctx.motion_summary {
        preface.push_str(&format!("Motion measured by point tracking: {s}\n"));
    }
    (parts, preface)
}

const SYSTEM: &str = "You answer multiple-choice questions about a video.";

pub fn vqa_request(model_id: &str, ctx: &VisualContext, q: &QATuple, image_capable: bool) -> ChatRequest {
    let (mut parts, preface) = context_parts(ctx, image_capable);
    parts.push(ContentPart::Text(format!(
        "{preface}Question: {}\n{}\nReply with the letter of the correct choice.",
        q.question_text,
        choice_block(q)
    )));
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::text(Role::System, SYSTEM),
            ChatMessage {
                role: Role::User,
                parts,
            },
        ],
    )
}

pub fn batched_request(model_id: &str, ctx: &VisualContext, qs: &[QATuple], image_capable: bool) -> ChatRequest {
    let (mut parts, preface) = context_parts(ctx, image_capable);
    let body: Vec<String> = qs
        .iter()
        .map(|q| format!("Question {}: {}\n{}", q.question_id, q.question_text, choice_block(q)))
        .collect();
    parts.push(ContentPart::Text(format!(
        "{preface}{}\nReply with one line per question in the form `<question number>: <letter>`.",
        body.join("\n\n")
    )));
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::text(Role::System, SYSTEM),
            ChatMessage {
                role: Role::User,
                parts,
            },
        ],
    )
}

/// Asks one question; backend failures become errored verdicts.
pub fn answer_question<B: ChatBackend + ?Sized>(ctx: &VisualContext, q: &QATuple, backend: &B) -> VQAVerdict {
    let req = vqa_request(backend.model_id(), ctx, q, backend.capabilities().image);
    match backend.complete(&req) {
        Ok(c) => VQAVerdict::from_reply(q, c.text),
        Err(e) => VQAVerdict::errored(q, e.to_string()),
    }
}

static BATCH_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*(?:(?i:question)\s*)?(\d+)\s*[:.)-]\s*(.+?)\s*$").unwrap());

fn answer_batched<B: ChatBackend + ?Sized>(ctx: &VisualContext, qs: &[QATuple], backend: &B) -> Vec<VQAVerdict> {
    let req = batched_request(backend.model_id(), ctx, qs, backend.capabilities().image);
    let reply = match backend.complete(&req) {
        Ok(c) => c.text,
        Err(e) => return qs.iter().map(|q| VQAVerdict::errored(q, e.to_string())).collect(),
    };
    let mut lines: BTreeMap<u32, String> = BTreeMap::new();
    for c in BATCH_LINE.captures_iter(&reply) {
        if let Ok(id) = c[1].parse::<u32>() {
            lines.entry(id).or_insert_with(|| c[2].to_string());
        }
    }
    qs.iter()
        .map(|q| VQAVerdict::from_reply(q, lines.get(&q.question_id).cloned().unwrap_or_default()))
        .collect()
}

/// Answers every question of `qaset` for one video.
pub fn score_alignment<B: ChatBackend + ?Sized>(
    video_id: &str,
    ctx: &VisualContext,
    qaset: &QASet,
    backend: &B,
    cfg: &VqaConfig,
) -> Result<AlignmentResult, VqaError> {
    if qaset.tuples.is_empty() {
        return Err(VqaError::EmptyQaSet(video_id.to_string()));
    }
    let verdicts = if cfg.batch_questions {
        answer_batched(ctx, &qaset.tuples, backend)
    } else {
        map_bounded(&qaset.tuples, cfg.max_in_flight, |_, q| {
            answer_question(ctx, q, backend)
        })
    };
    Ok(compute_alignment(video_id, verdicts, cfg.skip_errored))
}

/// `k` evenly spaced frames of a manifest video.
pub fn sample_frames(video: &VideoRecord, manifest: &Manifest, k: usize) -> Result<FrameSet, FrameError> {
    crate::frames::sample_frames(&manifest.resolve(&video.frame_source), k)
}
