//! Point tracks from an external tracker, rendered as overlays for image
//! backends or condensed into a motion summary for text-only ones.
//!
//! File format (JSON):
//!
//! ```json
//! {"frame_count": 16, "frame_size": [320, 240],
//!  "tracks": [{"track_id": 0, "points": [[0, 12.5, 40.0, true], [1, 14.0, 40.2, true]]}]}
//! ```
//!
//! A track may also be given as a bare point array, in which case its id is
//! its position in the list.

mod motion;
mod overlay;

pub use motion::{
    analyze_motion, fit_similarity, summarize_motion, GlobalMotion, MotionAnalysis, RegionMotion, SimilarityFit,
    NO_MOTION,
};
pub use overlay::{render_overlay, render_overlay_at, tail_vertices, OverlayConfig, PALETTE};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-frame displacement below which the scene counts as static (px/frame).
pub const STATIC_THRESHOLD: f64 = 0.2;
/// `|scale - 1|` per frame above which motion counts as zoom.
pub const ZOOM_THRESHOLD: f64 = 0.01;
/// Per-frame rotation above which motion counts as rotation (degrees).
pub const ROTATION_THRESHOLD_DEG: f64 = 0.2;
/// Residual speed above which a grid region is reported separately (px/frame).
pub const REGION_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("track {track_id}: frame index {got} follows {prev}; indices must strictly increase")]
    NonMonotone { track_id: u32, prev: u32, got: u32 },
    #[error("track {track_id}: frame index {index} outside 0..{frame_count}")]
    FrameOutOfRange {
        track_id: u32,
        index: u32,
        frame_count: u32,
    },
    #[error("frames are {got:?} but the trajectory is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("{got} frames given, trajectory covers {expected}")]
    FrameCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame_index: u32,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
    /// Set on load when the coordinates fall outside the frame.
    pub out_of_frame: bool,
}

impl TrackPoint {
    pub fn new(frame_index: u32, x: f64, y: f64, visible: bool) -> Self {
        Self {
            frame_index,
            x,
            y,
            visible,
            out_of_frame: false,
        }
    }

    /// Visible and inside the frame.
    pub fn usable(&self) -> bool {
        self.visible && !self.out_of_frame
    }
}

impl Serialize for TrackPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.frame_index, self.x, self.y, self.visible).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrackPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (f, x, y, v) = <(u32, f64, f64, bool)>::deserialize(d)?;
        Ok(TrackPoint::new(f, x, y, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Track {
    pub track_id: u32,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn point_at(&self, frame: u32) -> Option<&TrackPoint> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame_index)
            .ok()
            .map(|i| &self.points[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryBundle {
    pub tracks: Vec<Track>,
    pub frame_count: u32,
    pub frame_size: (u32, u32),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireTrack {
    Full { track_id: u32, points: Vec<TrackPoint> },
    Bare(Vec<TrackPoint>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBundle {
    frame_count: u32,
    frame_size: (u32, u32),
    tracks: Vec<WireTrack>,
}

impl TrajectoryBundle {
    /// Validates the invariants and flags out-of-frame points.
    pub fn new(mut tracks: Vec<Track>, frame_count: u32, frame_size: (u32, u32)) -> Result<Self, TrajectoryError> {
        let (w, h) = (frame_size.0 as f64, frame_size.1 as f64);
        let mut ids = std::collections::BTreeSet::new();
        for t in &mut tracks {
            if !ids.insert(t.track_id) {
                return Err(TrajectoryError::Schema(format!("track id {} repeats", t.track_id)));
            }
            let mut prev: Option<u32> = None;
            for p in &mut t.points {
                if !p.x.is_finite() || !p.y.is_finite() {
                    return Err(TrajectoryError::Schema(format!(
                        "track {}: non-finite coordinate at frame {}",
                        t.track_id, p.frame_index
                    )));
                }
                if p.frame_index >= frame_count {
                    return Err(TrajectoryError::FrameOutOfRange {
                        track_id: t.track_id,
                        index: p.frame_index,
                        frame_count,
                    });
                }
                if let Some(prev) = prev {
                    if p.frame_index <= prev {
                        return Err(TrajectoryError::NonMonotone {
                            track_id: t.track_id,
                            prev,
                            got: p.frame_index,
                        });
                    }
                }
                prev = Some(p.frame_index);
                p.out_of_frame = p.x < 0.0 || p.y < 0.0 || p.x > w - 1.0 || p.y > h - 1.0;
            }
        }
        Ok(Self {
            tracks,
            frame_count,
            frame_size,
        })
    }

    pub fn empty(frame_count: u32, frame_size: (u32, u32)) -> Self {
        Self {
            tracks: Vec::new(),
            frame_count,
            frame_size,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        let wire: WireBundle = serde_json::from_str(text).map_err(|e| TrajectoryError::Schema(e.to_string()))?;
        let tracks = wire
            .tracks
            .into_iter()
            .enumerate()
            .map(|(i, t)| match t {
                WireTrack::Full { track_id, points } => Track { track_id, points },
                WireTrack::Bare(points) => Track {
                    track_id: i as u32,
                    points,
                },
            })
            .collect();
        Self::new(tracks, wire.frame_count, wire.frame_size)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryBundle, TrajectoryError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrajectoryError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    TrajectoryBundle::from_json(&text)
}
