//! Checks the golden score report of the bundled mini-dataset against
//! independent recomputations from the fixture plan and the raw expert scores.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use t2vscore::backends::{Capabilities, MockBackend, ScoreSource};
use t2vscore::dataset::load_manifest;
use t2vscore::pipeline::{
    cmd_ablate, cmd_correlate, AblationVariant, Backends, CorrelateOptions, QualitySources, ScoreConfig, SemanticSource,
};
use t2vscore::report::ScoreReport;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/minidata")
}

fn golden() -> ScoreReport {
    ScoreReport::from_json(&std::fs::read_to_string(data_dir().join("golden/score_report.json")).unwrap()).unwrap()
}

fn plan() -> Value {
    serde_json::from_str(&std::fs::read_to_string(data_dir().join("plan.json")).unwrap()).unwrap()
}

fn tsv(name: &str) -> HashMap<String, f64> {
    std::fs::read_to_string(data_dir().join(name))
        .unwrap()
        .lines()
        .map(|l| {
            let (id, v) = l.split_once('\t').unwrap();
            (id.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn verdicts_follow_the_plan() {
    let report = golden();
    let plan = plan();
    assert_eq!(report.per_video.len(), 12);
    assert!(report.skipped.is_empty());
    for v in plan["videos"].as_array().unwrap() {
        let id = v["video_id"].as_str().unwrap();
        let questions = plan["prompts"][v["prompt_index"].as_u64().unwrap() as usize]["questions"]
            .as_array()
            .unwrap();
        let intents: Vec<char> = v["intents_with_trajectory"].as_str().unwrap().chars().collect();
        let scored = report.video(id).unwrap();
        let verdicts = &scored.alignment_detail.verdicts;
        assert_eq!(verdicts.len(), questions.len(), "{id}");
        let mut right = 0;
        for ((q, code), verdict) in questions.iter().zip(&intents).zip(verdicts) {
            let answer = q["answer_index"].as_u64().unwrap() as usize;
            let n = q["choices"].as_array().unwrap().len();
            let expected = match code {
                'L' | 'P' | 'T' => Some(answer),
                'x' => Some((answer + 1) % n),
                'd' => None,
                c => panic!("unknown intent {c}"),
            };
            assert_eq!(verdict.question_id as u64, q["question_id"].as_u64().unwrap());
            assert_eq!(verdict.predicted_index, expected, "{id} q{}", verdict.question_id);
            right += usize::from(expected == Some(answer));
        }
        assert_eq!(scored.alignment_detail.correct, right, "{id}");
        // the report carries six decimals
        assert!(
            (scored.t2vscore_a - right as f64 / questions.len() as f64).abs() <= 5e-7,
            "{id}"
        );
    }
}

#[test]
fn question_sets_match_the_plan() {
    let report = golden();
    let plan = plan();
    for (p, prompt) in plan["prompts"].as_array().unwrap().iter().enumerate() {
        let text = prompt["prompt"].as_str().unwrap();
        let qa = report
            .prompts
            .iter()
            .find(|q| q.prompt_text == text)
            .unwrap_or_else(|| panic!("prompt {p}"));
        let want = prompt["questions"].as_array().unwrap();
        assert_eq!(qa.qaset.tuples.len(), want.len());
        for (got, want) in qa.qaset.tuples.iter().zip(want) {
            assert_eq!(got.question_text, want["question"].as_str().unwrap());
            assert_eq!(got.answer_index as u64, want["answer_index"].as_u64().unwrap());
            assert_eq!(serde_json::to_value(got.aspect).unwrap(), want["aspect"]);
        }
    }
}

#[test]
fn quality_scores_recomputed_from_raw() {
    let report = golden();
    let remap = |raw: &HashMap<String, f64>| -> HashMap<String, f64> {
        let n = raw.len() as f64;
        let mean = raw.values().sum::<f64>() / n;
        let sd = (raw.values().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        raw.iter()
            .map(|(k, x)| (k.clone(), 1.0 / (1.0 + (-(x - mean) / sd).exp())))
            .collect()
    };
    let tech = remap(&tsv("tech_scores.tsv"));
    let sem = remap(&tsv("sem_scores.tsv"));
    for v in &report.per_video {
        let want = (tech[&v.video_id] + sem[&v.video_id]) / 2.0;
        // the report carries six decimals
        assert!(
            (v.t2vscore_q - want).abs() <= 5e-7,
            "{}: {} vs {want}",
            v.video_id,
            v.t2vscore_q
        );
    }
}

#[test]
fn correlate_golden_matches_report() {
    let manifest = load_manifest(&data_dir().join("manifest.jsonl")).unwrap();
    let table = cmd_correlate(&golden(), &manifest, &[], &CorrelateOptions::default()).unwrap();
    let golden = std::fs::read_to_string(data_dir().join("golden/correlate.json")).unwrap();
    assert_eq!(table.to_canonical_json(), golden);
}

#[test]
fn ablation_accuracy_matches_plan() {
    let plan = plan();
    // oracle: pooled accuracies straight from the intent codes
    let mut tally: HashMap<(bool, &str), (usize, usize)> = HashMap::new();
    for v in plan["videos"].as_array().unwrap() {
        let questions = plan["prompts"][v["prompt_index"].as_u64().unwrap() as usize]["questions"]
            .as_array()
            .unwrap();
        for (traj, key) in [(true, "intents_with_trajectory"), (false, "intents_without_trajectory")] {
            let codes: Vec<char> = v[key].as_str().unwrap().chars().collect();
            for (q, c) in questions.iter().zip(codes) {
                let right = usize::from("LPT".contains(c));
                for aspect in [q["aspect"].as_str().unwrap(), "all"] {
                    let e = tally.entry((traj, aspect)).or_default();
                    e.0 += right;
                    e.1 += 1;
                }
            }
        }
    }
    let acc = |traj: bool, aspect: &str| {
        let (r, n) = tally[&(traj, aspect)];
        r as f64 / n as f64
    };
    assert!(acc(true, "temporal") > acc(false, "temporal"));

    let dir = data_dir();
    let manifest = load_manifest(&dir.join("manifest.jsonl")).unwrap();
    let mock = MockBackend::from_dir(&dir.join("../backends/minidata"), Capabilities::ALL).unwrap();
    let sources = QualitySources {
        technical: ScoreSource::File(dir.join("tech_scores.tsv")),
        semantic: SemanticSource::Scores(ScoreSource::File(dir.join("sem_scores.tsv"))),
    };
    let variants = [
        AblationVariant::Alignment { trajectory: false },
        AblationVariant::Alignment { trajectory: true },
    ];
    let out = cmd_ablate(
        &manifest,
        &ScoreConfig::default(),
        Backends {
            llm: &mock,
            mllm: &mock,
        },
        &sources,
        &variants,
        &CorrelateOptions::default(),
    )
    .unwrap();
    let rows = &out.table.groups[0].rows;
    for (row, traj) in rows.iter().zip([false, true]) {
        for (extra, aspect) in [
            ("temporal_accuracy", "temporal"),
            ("spatial_accuracy", "spatial"),
            ("vqa_accuracy", "all"),
        ] {
            let got = row.extras[extra];
            assert!(
                (got - acc(traj, aspect)).abs() < 1e-12,
                "{} {extra}: {got}",
                row.metric_name
            );
        }
    }
}
