//! Semantic quality expert served by a multimodal chat backend: the model is
//! shown the frames and asked how confident it is that "good, high quality"
//! describes them better than "poor, low quality".

use image::RgbImage;
use regex::Regex;
use std::sync::LazyLock;

use super::RawScoreBatch;
use crate::backends::{BackendError, ChatBackend, ChatMessage, ChatRequest, ContentPart, Role};
use crate::frames::encode_png;

pub const POSITIVE_PROMPT: &str = "good, high quality";
pub const NEGATIVE_PROMPT: &str = "poor, low quality";

pub fn semantic_request(model_id: &str, frames: &[RgbImage]) -> ChatRequest {
    let mut parts: Vec<ContentPart> = frames.iter().map(|f| ContentPart::png(encode_png(f))).collect();
    parts.push(ContentPart::Text(format!(
        "The images are consecutive frames of one video. Which description fits its visual quality better?\n\
         A. {POSITIVE_PROMPT}\nB. {NEGATIVE_PROMPT}\n\
         Reply with only the probability, a number between 0 and 1, that description A fits better."
    )));
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::text(Role::System, "You are a careful video quality rater."),
            ChatMessage {
                role: Role::User,
                parts,
            },
        ],
    )
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+(?:\.\d+)?|\.\d+)\s*(%)?").unwrap());

/// Positive-class confidence from a free-text reply.
pub fn parse_confidence(reply: &str) -> Option<f64> {
    let t = reply.trim();
    if let Some(c) = NUMBER.captures(t) {
        let v: f64 = c[1].parse().ok()?;
        let v = if c.get(2).is_some() { v / 100.0 } else { v };
        return (0.0..=1.0).contains(&v).then_some(v);
    }
    let head = t.trim_start_matches(|c: char| !c.is_alphanumeric());
    match head.chars().next().map(|c| c.to_ascii_uppercase()) {
        Some('A') if head.len() == 1 || !head.as_bytes()[1].is_ascii_alphabetic() => Some(1.0),
        Some('B') if head.len() == 1 || !head.as_bytes()[1].is_ascii_alphabetic() => Some(0.0),
        _ => None,
    }
}

/// Positive-class confidence for one video's frames.
pub fn semantic_score<B: ChatBackend + ?Sized>(frames: &[RgbImage], backend: &B) -> Result<f64, BackendError> {
    let req = semantic_request(backend.model_id(), frames);
    let reply = backend.complete(&req)?.text;
    parse_confidence(&reply).ok_or_else(|| BackendError::InvalidResponse(format!("no confidence in {reply:?}")))
}

/// Scores each video by the backend's positive-class confidence.
pub fn semantic_scores<B: ChatBackend + ?Sized>(
    videos: &[(String, Vec<RgbImage>)],
    backend: &B,
) -> Result<RawScoreBatch, BackendError> {
    let mut entries = Vec::with_capacity(videos.len());
    for (id, frames) in videos {
        let conf = semantic_score(frames, backend).map_err(|e| match e {
            BackendError::InvalidResponse(m) => BackendError::InvalidResponse(format!("{id}: {m}")),
            other => other,
        })?;
        entries.push((id.clone(), conf));
    }
    Ok(RawScoreBatch {
        provider_id: "semantic".into(),
        entries,
    })
}
