use image::{Rgb, RgbImage};

use super::{Track, TrajectoryBundle, TrajectoryError};

/// Track colors, picked by `track_id % PALETTE.len()`.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OverlayConfig {
    /// Number of most recent positions drawn per track.
    pub tail_length: u32,
    /// Half-width of the square marking the current position; 0 is one pixel.
    pub dot_radius: u32,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            tail_length: 8,
            dot_radius: 1,
        }
    }
}

/// Positions of `track` drawn on frame `frame`: the usable points among the
/// last `tail` frames up to and including `frame`, oldest first.
pub fn tail_vertices(track: &Track, frame: u32, tail: u32) -> Vec<(f64, f64)> {
    let start = (frame + 1).saturating_sub(tail.max(1));
    track
        .points
        .iter()
        .filter(|p| p.frame_index >= start && p.frame_index <= frame && p.usable())
        .map(|p| (p.x, p.y))
        .collect()
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn px((x, y): (f64, f64)) -> (i64, i64) {
    (x.round() as i64, y.round() as i64)
}

fn draw_frame(img: &mut RgbImage, bundle: &TrajectoryBundle, frame: u32, cfg: &OverlayConfig) {
    for t in &bundle.tracks {
        let c = Rgb(PALETTE[t.track_id as usize % PALETTE.len()]);
        let verts = tail_vertices(t, frame, cfg.tail_length);
        for w in verts.windows(2) {
            line(img, px(w[0]), px(w[1]), c);
        }
        let head_now = t.point_at(frame).is_some_and(|p| p.usable());
        if let (true, Some(&last)) = (head_now, verts.last()) {
            let (x, y) = px(last);
            let r = cfg.dot_radius as i64;
            for dy in -r..=r {
                for dx in -r..=r {
                    put(img, x + dx, y + dy, c);
                }
            }
        }
    }
}

fn check_dims(frames: &[RgbImage], bundle: &TrajectoryBundle) -> Result<(), TrajectoryError> {
    for f in frames {
        if f.dimensions() != bundle.frame_size {
            return Err(TrajectoryError::DimensionMismatch {
                expected: bundle.frame_size,
                got: f.dimensions(),
            });
        }
    }
    Ok(())
}

/// Draws each track's recent path onto a copy of every frame.
pub fn render_overlay(
    frames: &[RgbImage],
    bundle: &TrajectoryBundle,
    cfg: &OverlayConfig,
) -> Result<Vec<RgbImage>, TrajectoryError> {
    if frames.len() != bundle.frame_count as usize {
        return Err(TrajectoryError::FrameCountMismatch {
            expected: bundle.frame_count as usize,
            got: frames.len(),
        });
    }
    let indices: Vec<usize> = (0..frames.len()).collect();
    render_overlay_at(frames, &indices, bundle, cfg)
}

/// Like [`render_overlay`] for a subset of frames; `indices[i]` is the
/// original frame index of `frames[i]`.
pub fn render_overlay_at(
    frames: &[RgbImage],
    indices: &[usize],
    bundle: &TrajectoryBundle,
    cfg: &OverlayConfig,
) -> Result<Vec<RgbImage>, TrajectoryError> {
    if frames.len() != indices.len() {
        return Err(TrajectoryError::FrameCountMismatch {
            expected: indices.len(),
            got: frames.len(),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= bundle.frame_count as usize) {
        return Err(TrajectoryError::FrameCountMismatch {
            expected: bundle.frame_count as usize,
            got: bad + 1,
        });
    }
    check_dims(frames, bundle)?;
    Ok(frames
        .iter()
        .zip(indices)
        .map(|(f, &i)| {
            let mut out = f.clone();
            draw_frame(&mut out, bundle, i as u32, cfg);
            out
        })
        .collect())
}
