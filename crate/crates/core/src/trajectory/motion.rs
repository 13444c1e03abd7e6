//! Dominant camera motion and local outliers from point tracks.
//!
//! Each pair of consecutive frames gets a least-squares similarity fit
//! (scale, rotation, translation) of the tracked points; medians over frame
//! pairs are then classified. Angles are measured in a y-up frame, so a
//! positive angle is counter-clockwise as seen on screen. A scene drifting
//! right is reported as the camera panning left.

use std::cmp::Ordering;

use super::{TrajectoryBundle, REGION_THRESHOLD, ROTATION_THRESHOLD_DEG, STATIC_THRESHOLD, ZOOM_THRESHOLD};

pub const NO_MOTION: &str = "no reliable motion detected";

/// `dst ≈ scale * R(angle) * src + (tx, ty)` in y-up coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFit {
    pub scale: f64,
    pub angle_rad: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityFit {
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.angle_rad.sin_cos();
        let (a, b) = (self.scale * c, self.scale * s);
        (a * x - b * y + self.tx, b * x + a * y + self.ty)
    }
}

/// A point in one frame and the same point in the next.
pub type PointPair = ((f64, f64), (f64, f64));

fn cmp_pair(a: &PointPair, b: &PointPair) -> Ordering {
    let ka = [a.0 .0, a.0 .1, a.1 .0, a.1 .1];
    let kb = [b.0 .0, b.0 .1, b.1 .0, b.1 .1];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Least-squares similarity transform mapping `pairs[i].0` onto `pairs[i].1`.
///
/// Points are sorted first so the result does not depend on input order. With
/// fewer than two distinct source points only a translation is fitted.
pub fn fit_similarity(pairs: &[PointPair]) -> Option<SimilarityFit> {
    if pairs.is_empty() {
        return None;
    }
    let mut p = pairs.to_vec();
    p.sort_by(cmp_pair);
    let n = p.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for ((a, b), (c, d)) in &p {
        sx += a;
        sy += b;
        dx += c;
        dy += d;
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);
    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for ((a, b), (c, d)) in &p {
        let (u, v) = (a - sx, b - sy);
        let (s, t) = (c - dx, d - dy);
        num_a += u * s + v * t;
        num_b += u * t - v * s;
        den += u * u + v * v;
    }
    if den < 1e-9 {
        return Some(SimilarityFit {
            scale: 1.0,
            angle_rad: 0.0,
            tx: dx - sx,
            ty: dy - sy,
        });
    }
    let (a, b) = (num_a / den, num_b / den);
    Some(SimilarityFit {
        scale: a.hypot(b),
        angle_rad: b.atan2(a),
        tx: dx - (a * sx - b * sy),
        ty: dy - (b * sx + a * sy),
    })
}

fn residual(fit: &SimilarityFit, &(src, dst): &PointPair) -> f64 {
    let (x, y) = fit.apply(src);
    (dst.0 - x).hypot(dst.1 - y)
}

/// Similarity fit refitted on inliers so that a few independently moving
/// points do not drag the global estimate.
fn robust_fit(pairs: &[PointPair]) -> SimilarityFit {
    let mut fit = fit_similarity(pairs).expect("non-empty");
    for _ in 0..3 {
        let mut res: Vec<f64> = pairs.iter().map(|p| residual(&fit, p)).collect();
        let cutoff = REGION_THRESHOLD.max(2.0 * median(&mut res));
        let inliers: Vec<_> = pairs.iter().copied().filter(|p| residual(&fit, p) <= cutoff).collect();
        if inliers.len() == pairs.len() || 2 * inliers.len() < pairs.len() {
            break;
        }
        fit = fit_similarity(&inliers).expect("non-empty");
    }
    fit
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlobalMotion {
    Static,
    /// Median scene displacement in image coordinates (y down), px/frame.
    Pan {
        dx: f64,
        dy: f64,
    },
    Zoom {
        scale: f64,
    },
    /// Degrees per frame, positive counter-clockwise on screen.
    Rotate {
        deg_per_frame: f64,
    },
}

impl GlobalMotion {
    pub fn phrase(&self) -> String {
        match *self {
            GlobalMotion::Static => "static camera, no global motion".into(),
            GlobalMotion::Pan { dx, dy } => {
                let dir = if dx.abs() >= dy.abs() {
                    if dx > 0.0 {
                        "scene pans from left to right (camera pans left)"
                    } else {
                        "scene pans from right to left (camera pans right)"
                    }
                } else if dy > 0.0 {
                    "scene pans from top to bottom (camera pans up)"
                } else {
                    "scene pans from bottom to top (camera pans down)"
                };
                format!("{dir}, {:.1} px/frame", dx.hypot(dy))
            }
            GlobalMotion::Zoom { scale } => {
                let pct = (scale - 1.0).abs() * 100.0;
                if scale > 1.0 {
                    format!("camera zooms in, scene grows {pct:.1}% per frame")
                } else {
                    format!("camera zooms out, scene shrinks {pct:.1}% per frame")
                }
            }
            GlobalMotion::Rotate { deg_per_frame } => {
                let dir = if deg_per_frame > 0.0 {
                    "counter-clockwise"
                } else {
                    "clockwise"
                };
                format!("scene rotating {dir}, {:.1} degrees/frame", deg_per_frame.abs())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMotion {
    pub region: &'static str,
    pub dx: f64,
    pub dy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionAnalysis {
    pub frame_pairs: usize,
    pub median_dx: f64,
    pub median_dy: f64,
    pub median_scale: f64,
    pub median_angle_deg: f64,
    pub global: GlobalMotion,
    pub regions: Vec<RegionMotion>,
}

const REGIONS: [[&str; 3]; 3] = [
    ["top-left", "top", "top-right"],
    ["left", "center", "right"],
    ["bottom-left", "bottom", "bottom-right"],
];

fn direction_word(dx: f64, dy: f64) -> &'static str {
    const WORDS: [&str; 8] = [
        "right",
        "up-right",
        "up",
        "up-left",
        "left",
        "down-left",
        "down",
        "down-right",
    ];
    let deg = (-dy).atan2(dx).to_degrees().rem_euclid(360.0);
    WORDS[((deg + 22.5) / 45.0) as usize % 8]
}

fn classify(dx: f64, dy: f64, scale: f64, angle_deg: f64) -> GlobalMotion {
    if (scale - 1.0).abs() > ZOOM_THRESHOLD {
        GlobalMotion::Zoom { scale }
    } else if angle_deg.abs() > ROTATION_THRESHOLD_DEG {
        GlobalMotion::Rotate {
            deg_per_frame: angle_deg,
        }
    } else if dx.hypot(dy) < STATIC_THRESHOLD {
        GlobalMotion::Static
    } else {
        GlobalMotion::Pan { dx, dy }
    }
}

/// Motion statistics, or `None` when no track spans two consecutive frames.
pub fn analyze_motion(t: &TrajectoryBundle) -> Option<MotionAnalysis> {
    let (w, h) = (t.frame_size.0.max(1) as f64, t.frame_size.1.max(1) as f64);
    let (mut dxs, mut dys, mut scales, mut angles) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut residuals: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 9];
    for f in 0..t.frame_count.saturating_sub(1) {
        // image coordinates
        let pairs: Vec<PointPair> = t
            .tracks
            .iter()
            .filter_map(|tr| {
                let a = tr.point_at(f).filter(|p| p.usable())?;
                let b = tr.point_at(f + 1).filter(|p| p.usable())?;
                Some(((a.x, a.y), (b.x, b.y)))
            })
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let up: Vec<_> = pairs.iter().map(|&((a, b), (c, d))| ((a, -b), (c, -d))).collect();
        let fit = robust_fit(&up);
        let mut fx: Vec<f64> = pairs.iter().map(|(a, b)| b.0 - a.0).collect();
        let mut fy: Vec<f64> = pairs.iter().map(|(a, b)| b.1 - a.1).collect();
        dxs.push(median(&mut fx));
        dys.push(median(&mut fy));
        scales.push(fit.scale);
        angles.push(fit.angle_rad.to_degrees());
        for &((a, b), (c, d)) in &pairs {
            let (px, py) = fit.apply((a, -b));
            let (rx, ry) = (c - px, -d - py);
            let col = ((3.0 * a / w).floor() as i64).clamp(0, 2) as usize;
            let row = ((3.0 * b / h).floor() as i64).clamp(0, 2) as usize;
            residuals[row * 3 + col].push((rx, -ry));
        }
    }
    if dxs.is_empty() {
        return None;
    }
    let frame_pairs = dxs.len();
    let (mdx, mdy) = (median(&mut dxs), median(&mut dys));
    let (ms, ma) = (median(&mut scales), median(&mut angles));
    let mut regions = Vec::new();
    for (i, r) in residuals.iter().enumerate() {
        if r.len() < 2 {
            continue;
        }
        let mut xs: Vec<f64> = r.iter().map(|p| p.0).collect();
        let mut ys: Vec<f64> = r.iter().map(|p| p.1).collect();
        let (dx, dy) = (median(&mut xs), median(&mut ys));
        if dx.hypot(dy) > REGION_THRESHOLD {
            regions.push(RegionMotion {
                region: REGIONS[i / 3][i % 3],
                dx,
                dy,
                samples: r.len(),
            });
        }
    }
    Some(MotionAnalysis {
        frame_pairs,
        median_dx: mdx,
        median_dy: mdy,
        median_scale: ms,
        median_angle_deg: ma,
        global: classify(mdx, mdy, ms, ma),
        regions,
    })
}

/// Deterministic one-paragraph description of the tracked motion.
pub fn summarize_motion(t: &TrajectoryBundle) -> String {
    let Some(a) = analyze_motion(t) else {
        return NO_MOTION.to_string();
    };
    let mut s = format!("Global motion: {}.", a.global.phrase());
    if a.regions.is_empty() {
        s.push_str(" No separate local motion.");
    } else {
        let parts: Vec<String> = a
            .regions
            .iter()
            .map(|r| {
                format!(
                    "the {} region moves {} at {:.1} px/frame",
                    r.region,
                    direction_word(r.dx, r.dy),
                    r.dx.hypot(r.dy)
                )
            })
            .collect();
        s.push_str(&format!(" Local motion: {}.", parts.join("; ")));
    }
    s
}
