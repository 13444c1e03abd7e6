//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and fails
//! if any criterion fails.
//!
//! Criterion 8 needs a real annotation manifest: set `T2V_TVGE_MANIFEST` to
//! its path to run it.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use t2vscore::dataset::{load_manifest, summarize_distribution, Manifest, RaterAnnotation, VideoRecord};
use t2vscore::pipeline::{cmd_crossmodel, CorrelateOptions};
use t2vscore::qagen::{Aspect, QATuple};
use t2vscore::quality::loss::{linear_loss, loss_gradients, rank_loss, total_loss, ScoreLists};
use t2vscore::quality::{fuse, remap, QualityResult, RawScoreBatch};
use t2vscore::report::{ScoreReport, VideoScore, TOOL_VERSION};
use t2vscore::stats::{kendall, pearson, spearman, PairedSeries};
use t2vscore::trajectory::{
    analyze_motion, render_overlay, summarize_motion, GlobalMotion, OverlayConfig, Track, TrackPoint, TrajectoryBundle,
};
use t2vscore::vqa::{compute_alignment, VQAVerdict};

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn within(start: Instant, limit: Duration) -> String {
    let took = start.elapsed();
    assert!(took < limit, "took {took:?}, limit {limit:?}");
    format!("{took:.2?} < {limit:?}")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// criterion 1: alignment score is one division of the correct count

fn question(id: u32) -> QATuple {
    QATuple {
        question_id: id,
        question_text: format!("q{id}"),
        choices: vec!["yes".into(), "no".into()],
        answer_index: 0,
        covered_elements: BTreeSet::from([1]),
        aspect: if id.is_multiple_of(2) {
            Aspect::Spatial
        } else {
            Aspect::Temporal
        },
    }
}

fn c1_alignment_exact() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(1..=40u32);
        let mut correct = 0usize;
        let verdicts: Vec<VQAVerdict> = (1..=n)
            .map(|id| {
                let right = rng.random_bool(0.6);
                correct += usize::from(right);
                VQAVerdict::from_reply(&question(id), if right { "A" } else { "B" }.into())
            })
            .collect();
        let r = compute_alignment("v", verdicts, false);
        assert_eq!(r.score.to_bits(), (correct as f64 / n as f64).to_bits());
        assert_eq!((r.correct, r.counted), (correct, n as usize));
    }
    Outcome::Pass(format!("200 sets bit-exact, {}", within(start, Duration::from_secs(1))))
}

// criterion 2: remap invariances

fn batch(xs: &[f64]) -> RawScoreBatch {
    RawScoreBatch::new(
        "p",
        xs.iter().enumerate().map(|(i, &x)| (format!("v{i:03}"), x)).collect(),
    )
    .unwrap()
}

fn remapped(xs: &[f64]) -> Vec<f64> {
    remap(&batch(xs)).unwrap().0.into_values().collect()
}

fn c2_remap_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = 10.0 * (1.0 - rng.random::<f64>()); // (0, 10]
        let b = rng.random_range(-10.0..=10.0);
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let (rx, ry) = (remapped(&xs), remapped(&ys));
        for (p, q) in rx.iter().zip(&ry) {
            assert!((p - q).abs() <= 1e-12, "affine: {p} vs {q} (a={a}, b={b})");
        }
        for i in 0..n {
            for j in 0..n {
                if xs[i] < xs[j] {
                    assert!(rx[i] < rx[j], "strict monotonicity");
                }
            }
        }
        let c = rng.random_range(-3.0..3.0);
        assert!(remapped(&vec![c; n]).iter().all(|&r| r == 0.5));
    }
    Outcome::Pass(format!("100 batches, {}", within(start, Duration::from_secs(1))))
}

// criterion 3: fusion bounds

fn c3_fusion_bounds() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..25);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fused = fuse(&remap(&batch(&t)).unwrap().0, &remap(&batch(&s)).unwrap().0).unwrap();
        assert!(fused.iter().all(|q| q.fused > 0.0 && q.fused < 1.0));

        // a video sitting at both batch means: symmetric batches around it,
        // built from dyadic values so the mean is computed exactly
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1..64) as f64 / 64.0).collect();
        let sym = |m: f64, k: f64| -> Vec<f64> {
            let mut v = vec![m];
            for x in &d {
                v.push(m - k * x);
                v.push(m + k * x);
            }
            v
        };
        let fused = fuse(
            &remap(&batch(&sym(0.5, 0.25))).unwrap().0,
            &remap(&batch(&sym(2.0, 1.5))).unwrap().0,
        )
        .unwrap();
        assert_eq!(fused[0].video_id, "v000");
        assert_eq!(fused[0].fused, 0.5);
    }
    Outcome::Pass("100 runs".into())
}

// criterion 4: loss suite

fn inversions_oracle(p: &[f64], g: &[f64]) -> bool {
    (0..p.len()).any(|i| (0..p.len()).any(|j| g[i] < g[j] && p[i] > p[j]))
}

fn grid_lists(len: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| [0.0, 0.5, 1.0].map(|x| [v.clone(), vec![x]].concat()))
            .collect();
    }
    out
}

fn c4_loss_suite() -> Outcome {
    let start = Instant::now();
    let mut pairs = 0usize;
    for len in 2..=6 {
        let lists = grid_lists(len);
        for p in &lists {
            for g in &lists {
                let l = ScoreLists::new(p, g, 0.3).unwrap();
                assert_eq!(rank_loss(&l) == 0.0, !inversions_oracle(p, g), "p={p:?} g={g:?}");
                pairs += 1;
            }
        }
    }

    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..500 {
        let g: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = linear_loss(&ScoreLists::new(&p, &g, 0.0).unwrap());
        assert!((0.0..=1.0).contains(&v));
        let a = rng.random_range(0.1..5.0);
        let b = rng.random_range(-5.0..5.0);
        let pos: Vec<f64> = g.iter().map(|x| a * x + b).collect();
        let neg: Vec<f64> = g.iter().map(|x| -a * x + b).collect();
        assert_eq!(
            linear_loss(&ScoreLists::new(&pos, &g, 0.0).unwrap()),
            0.0,
            "+linear a={a} b={b}"
        );
        assert_eq!(
            linear_loss(&ScoreLists::new(&neg, &g, 0.0).unwrap()),
            1.0,
            "-linear a={a} b={b}"
        );
    }

    let h = 1e-6;
    let mut checked = 0usize;
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..500 {
        let g: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let lambda = rng.random_range(0.0..1.0);
        let grad = loss_gradients(&ScoreLists::new(&p, &g, lambda).unwrap());
        for k in 0..8 {
            let shifted = |d: f64| {
                let mut q = p.clone();
                q[k] += d;
                total_loss(&ScoreLists::new(&q, &g, lambda).unwrap())
            };
            // a hinge kink inside the stencil has no derivative to compare
            let kink = (0..8).any(|j| j != k && (p[k] - p[j]).abs() < 2.0 * h);
            if kink {
                continue;
            }
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
            assert!(rel < 1e-4, "k={k} analytic {} numeric {fd}", grad[k]);
            checked += 1;
        }
    }
    Outcome::Pass(format!(
        "{pairs} grid pairs, 500 linear lists, {checked} gradient entries, {}",
        within(start, Duration::from_secs(10))
    ))
}

// criterion 5: correlation suite against brute-force oracles

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn oracle_kendall(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if x[i] == x[j] && y[i] == y[j] {
            } else if x[i] == x[j] {
                tx += 1.0;
            } else if y[i] == y[j] {
                ty += 1.0;
            } else if s > 0.0 {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

fn c5_correlation_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(6);
    let mut compared = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..=8);
        // small integer grids force ties in roughly half the cases
        let levels = if case % 2 == 0 { 3 } else { 1000 };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let Ok(p) = PairedSeries::new(&x, &y) else { continue };
        let checks = [
            (spearman(&p).ok(), oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))),
            (kendall(&p).ok(), oracle_kendall(&x, &y)),
            (pearson(&p).ok(), oracle_pearson(&x, &y)),
        ];
        for (got, want) in checks {
            match got {
                Some(g) => {
                    assert!((g - want).abs() <= 1e-12, "x={x:?} y={y:?}: {g} vs {want}");
                    compared += 1;
                }
                None => assert!(!want.is_finite(), "x={x:?} y={y:?}: undefined but oracle gives {want}"),
            }
        }
    }
    let up = [1.0, 2.0, 3.0, 4.0, 5.0];
    let down = [5.0, 4.0, 3.0, 2.0, 1.0];
    assert_eq!(spearman(&PairedSeries::new(&up, &down).unwrap()).unwrap(), -1.0);
    let k = kendall(&PairedSeries::new(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap()).unwrap();
    assert_eq!(k, 1.0 / 3.0);
    Outcome::Pass(format!(
        "{compared} values vs oracle, {}",
        within(start, Duration::from_secs(10))
    ))
}

// criterion 6: end-to-end determinism through the CLI binary

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_t2vscore"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "t2vscore {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn c6_end_to_end() -> Outcome {
    let start = Instant::now();
    let root = repo_root();
    let data = root.join("fixtures/minidata");
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let manifest = s(data.join("manifest.jsonl"));
    let tech = s(data.join("tech_scores.tsv"));
    let sem = s(data.join("sem_scores.tsv"));
    let golden_report = std::fs::read(data.join("golden/score_report.json")).unwrap();
    let golden_corr = std::fs::read(data.join("golden/correlate.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let audit = tmp.path().join("audit");

    let mut runs = Vec::new();
    for i in 0..4 {
        let report = tmp.path().join(format!("report{i}.json"));
        let corr = tmp.path().join(format!("correlate{i}.json"));
        let mut args = vec![
            "score",
            "--manifest",
            &manifest,
            "--tech-scores",
            &tech,
            "--sem-scores",
            &sem,
        ];
        let (audit_s, fixtures) = (s(audit.clone()), s(root.join("fixtures/backends/minidata")));
        let (report_s, corr_s) = (s(report.clone()), s(corr.clone()));
        if i < 3 {
            args.extend(["--mock", &fixtures]);
            if i == 0 {
                args.extend(["--audit-dir", &audit_s]);
            }
        } else {
            // the fourth run answers purely from what the first run recorded
            args[0] = "replay";
            args.extend(["--replay", &audit_s]);
        }
        args.extend(["--out", &report_s]);
        run_cli(&args);
        run_cli(&[
            "correlate",
            "--report",
            &report_s,
            "--manifest",
            &manifest,
            "--out",
            &corr_s,
        ]);
        runs.push((std::fs::read(&report).unwrap(), std::fs::read(&corr).unwrap()));
    }
    for (i, (r, c)) in runs.iter().enumerate() {
        let label = if i < 3 {
            format!("run {}", i + 1)
        } else {
            "replay".into()
        };
        assert!(*r == golden_report, "{label}: score report differs from golden");
        assert!(*c == golden_corr, "{label}: correlate table differs from golden");
    }
    Outcome::Pass(format!(
        "3 runs + replay byte-identical, {}",
        within(start, Duration::from_secs(30))
    ))
}

// criterion 7: cross-model protocol on five generators

fn c7_crossmodel() -> Outcome {
    let gens: Vec<String> = (1..=5).map(|g| format!("gen-{g}")).collect();
    let mut rng = StdRng::seed_from_u64(7);
    let mut records = Vec::new();
    let mut per_video = Vec::new();
    for (gi, g) in gens.iter().enumerate() {
        for p in 0..(4 + gi) {
            let id = format!("{g}-v{p}");
            let ann = (1..=3)
                .map(|r| RaterAnnotation {
                    rater_id: format!("r{r}"),
                    alignment_score: rng.random_range(1..=5),
                    quality_score: rng.random_range(1..=5),
                })
                .collect();
            records.push(VideoRecord {
                video_id: id.clone(),
                prompt_text: format!("prompt {p}"),
                generator_id: g.clone(),
                frame_source: PathBuf::from(format!("frames/{id}")),
                trajectory_path: None,
                annotations: ann,
            });
            let verdicts = (1..=6)
                .map(|q| VQAVerdict::from_reply(&question(q), if rng.random_bool(0.5) { "A" } else { "B" }.into()))
                .collect();
            let alignment = compute_alignment(&id, verdicts, false);
            let (t, s) = (rng.random::<f64>(), rng.random::<f64>());
            let quality = QualityResult {
                video_id: id.clone(),
                remapped_tech: t,
                remapped_sem: s,
                fused: (t + s) / 2.0,
            };
            per_video.push(VideoScore {
                video_id: id,
                generator_id: g.clone(),
                t2vscore_a: alignment.score,
                t2vscore_q: quality.fused,
                alignment_detail: alignment,
                quality_detail: quality,
            });
        }
    }
    let manifest = Manifest::new(records.clone(), ".").unwrap();
    let report = ScoreReport {
        tool_version: TOOL_VERSION.into(),
        config_fingerprint: String::new(),
        config: serde_json::json!({}),
        per_video,
        skipped: vec![],
        remap: vec![],
        prompts: vec![],
    };
    let table = cmd_crossmodel(&report, &manifest, &[], &CorrelateOptions::default()).unwrap();
    assert_eq!(table.groups.len(), 5, "row groups");

    // independent expectation: every video not generated by the held-in model
    let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for g in &gens {
        let set = records
            .iter()
            .filter(|r| &r.generator_id != g)
            .map(|r| r.video_id.clone())
            .collect();
        expected.insert(format!("except {g}"), set);
    }
    let mut seen_held_in = BTreeSet::new();
    for group in &table.groups {
        let got: BTreeSet<String> = group.video_ids.iter().cloned().collect();
        assert_eq!(got.len(), group.video_ids.len(), "duplicate ids in {}", group.label);
        let want = expected
            .get(&group.label)
            .unwrap_or_else(|| panic!("unexpected group {}", group.label));
        assert_eq!(&got, want, "{}", group.label);
        let all: BTreeSet<String> = records.iter().map(|r| r.video_id.clone()).collect();
        let held: BTreeSet<String> = all.difference(&got).cloned().collect();
        let held_gens: BTreeSet<&str> = records
            .iter()
            .filter(|r| held.contains(&r.video_id))
            .map(|r| r.generator_id.as_str())
            .collect();
        assert_eq!(held_gens.len(), 1, "{} holds out more than one generator", group.label);
        seen_held_in.extend(held_gens.into_iter().map(str::to_string));
        assert!(group.rows.iter().all(|r| r.n == got.len()));
    }
    assert_eq!(seen_held_in.into_iter().collect::<Vec<_>>(), gens);
    Outcome::Pass("5 groups, subsets match".into())
}

// criterion 8: distribution of the real annotation set, when supplied

fn c8_distribution() -> Outcome {
    let Ok(path) = std::env::var("T2V_TVGE_MANIFEST") else {
        return Outcome::Skip("set T2V_TVGE_MANIFEST to the annotation manifest".into());
    };
    let m = load_manifest(Path::new(&path)).unwrap();
    let d = summarize_distribution(&m).unwrap();
    let close = |got: f64, want: f64, tol: f64, what: &str| {
        assert!((got - want).abs() <= tol, "{what}: {got:.4}, expected {want} ± {tol}");
    };
    close(d.mean_alignment, 2.59, 0.01, "mean alignment");
    close(d.mean_quality, 2.77, 0.01, "mean quality");
    close(
        d.inter_dim_spearman.expect("spearman defined"),
        0.223,
        0.005,
        "spearman",
    );
    close(d.inter_dim_kendall.expect("kendall defined"), 0.152, 0.005, "kendall");
    Outcome::Pass(format!("{} videos", d.videos))
}

// criterion 9: trajectory module

fn c9_trajectory() -> Outcome {
    let start = Instant::now();
    let frames: Vec<image::RgbImage> = (0..4)
        .map(|f| image::RgbImage::from_fn(64, 48, |x, y| image::Rgb([(x * 4) as u8, (y * 5) as u8, f * 60])))
        .collect();
    let empty = TrajectoryBundle::empty(4, (64, 48));
    let out = render_overlay(&frames, &empty, &OverlayConfig::default()).unwrap();
    assert!(
        out.iter().zip(&frames).all(|(a, b)| a.as_raw() == b.as_raw()),
        "empty overlay changed pixels"
    );

    let grid: Vec<(f64, f64)> = (0..5)
        .flat_map(|i| (0..4).map(move |j| (40.0 + 60.0 * i as f64, 30.0 + 60.0 * j as f64)))
        .collect();
    let bundle = |paths: Vec<Vec<(f64, f64)>>| {
        let frames = paths[0].len() as u32;
        let tracks = paths
            .into_iter()
            .enumerate()
            .map(|(i, pts)| Track {
                track_id: i as u32,
                points: pts
                    .into_iter()
                    .enumerate()
                    .map(|(f, (x, y))| TrackPoint::new(f as u32, x, y, true))
                    .collect(),
            })
            .collect();
        TrajectoryBundle::new(tracks, frames, (320, 240)).unwrap()
    };

    // rotation by 0.5 degrees per frame, counter-clockwise as seen on screen
    let (cx, cy) = (160.0, 120.0);
    let step = 0.5f64.to_radians();
    let rot = bundle(
        grid.iter()
            .map(|&(x, y)| {
                (0..10)
                    .map(|f| {
                        let (u, v) = (x - cx, cy - y);
                        let (s, c) = (step * f as f64).sin_cos();
                        (cx + u * c - v * s, cy - (u * s + v * c))
                    })
                    .collect()
            })
            .collect(),
    );
    let text = summarize_motion(&rot);
    assert!(text.contains("rotating counter-clockwise"), "{text}");

    // scene content moves 8 px per frame to the right: the camera pans left
    let pan = bundle(
        grid.iter()
            .map(|&(x, y)| (0..6).map(|f| (x - 40.0 + 8.0 * f as f64, y)).collect())
            .collect(),
    );
    assert_eq!(
        analyze_motion(&pan).unwrap().global,
        GlobalMotion::Pan { dx: 8.0, dy: 0.0 }
    );
    let text = summarize_motion(&pan);
    assert!(
        text.contains("scene pans from left to right (camera pans left)"),
        "{text}"
    );
    Outcome::Pass(within(start, Duration::from_secs(5)))
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "alignment score exactness", c1_alignment_exact),
        (2, "remap properties", c2_remap_properties),
        (3, "fusion bounds", c3_fusion_bounds),
        (4, "loss suite", c4_loss_suite),
        (5, "correlation suite", c5_correlation_suite),
        (6, "end-to-end determinism", c6_end_to_end),
        (7, "cross-model protocol", c7_crossmodel),
        (8, "annotation distribution", c8_distribution),
        (9, "trajectory module", c9_trajectory),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Outcome::Pass(note)) => println!("criterion {n} PASS  {name}: {note}"),
            Ok(Outcome::Skip(note)) => println!("criterion {n} SKIP  {name}: {note}"),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {n} FAIL  {name}: {msg}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
