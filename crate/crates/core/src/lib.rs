//! Evaluation harness for text-to-video generation.
//!
//! Two per-video scores are computed:
//!
//! * **T2VScore-A** (alignment): the prompt is decomposed into semantic
//!   elements, an LLM writes multiple-choice questions covering them, and a
//!   multimodal model answers each question from sampled frames (optionally
//!   with point-track overlays). The score is the fraction answered correctly.
//! * **T2VScore-Q** (quality): raw scores from a technical and a semantic
//!   expert are each squashed through a batch-standardized sigmoid and
//!   averaged.
//!
//! The [`pipeline`] module runs both, and correlates the results with human
//! mean opinion scores. All model inference sits behind [`backends`].

pub mod backends;
pub mod dataset;
pub mod decomposition;
pub mod frames;
pub mod parallel;
pub mod pipeline;
pub mod qagen;
pub mod quality;
pub mod report;
pub mod stats;
pub mod trajectory;
pub mod vqa;
