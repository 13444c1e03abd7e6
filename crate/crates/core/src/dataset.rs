//! Evaluation-set data model: videos, prompts, generator provenance and
//! per-rater annotations, stored as line-delimited JSON.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{CorrelationSummary, StatsError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate video_id {video_id:?} (line {line})")]
    DuplicateId { video_id: String, line: usize },
    #[error("record {video_id:?}: {message}")]
    InvalidRecord { video_id: String, message: String },
    #[error("no records")]
    Empty,
    #[error("record {0:?} has no annotations")]
    NoAnnotations(String),
    #[error("need at least 2 generators, found {0}")]
    TooFewGenerators(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterAnnotation {
    pub rater_id: String,
    pub alignment_score: u8,
    pub quality_score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub prompt_text: String,
    pub generator_id: String,
    /// Directory of ordered frame images, relative to the manifest directory.
    pub frame_source: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_path: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Vec<RaterAnnotation>,
}

impl VideoRecord {
    fn validate(&self) -> Result<(), String> {
        if self.video_id.trim().is_empty() {
            return Err("empty video_id".into());
        }
        if self.generator_id.trim().is_empty() {
            return Err("empty generator_id".into());
        }
        if self.prompt_text.trim().is_empty() {
            return Err("empty prompt_text".into());
        }
        let mut raters = HashSet::new();
        for a in &self.annotations {
            for (dim, s) in [
                ("alignment_score", a.alignment_score),
                ("quality_score", a.quality_score),
            ] {
                if !(1..=5).contains(&s) {
                    return Err(format!("rater {:?}: {dim}={s} outside 1..=5", a.rater_id));
                }
            }
            if !raters.insert(a.rater_id.as_str()) {
                return Err(format!("rater {:?} annotated twice", a.rater_id));
            }
        }
        Ok(())
    }
}

/// A validated set of video records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<VideoRecord>,
    generator_ids: BTreeSet<String>,
    base_dir: PathBuf,
}

impl Manifest {
    /// Validates `records` and derives the generator set. Relative paths in
    /// the records resolve against `base_dir`.
    pub fn new(records: Vec<VideoRecord>, base_dir: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|message| DatasetError::InvalidRecord {
                video_id: r.video_id.clone(),
                message,
            })?;
            if !seen.insert(r.video_id.clone()) {
                return Err(DatasetError::DuplicateId {
                    video_id: r.video_id.clone(),
                    line: i + 1,
                });
            }
        }
        let generator_ids = records.iter().map(|r| r.generator_id.clone()).collect();
        Ok(Self {
            records,
            generator_ids,
            base_dir: base_dir.into(),
        })
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn generator_ids(&self) -> &BTreeSet<String> {
        &self.generator_ids
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads a line-delimited manifest. Blank lines are ignored.
pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| DatasetError::InvalidRecord {
            video_id: rec.video_id.clone(),
            message: format!("line {line_no}: {message}"),
        })?;
        if !seen.insert(rec.video_id.clone()) {
            return Err(DatasetError::DuplicateId {
                video_id: rec.video_id,
                line: line_no,
            });
        }
        records.push(rec);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::new(records, base)
}

/// Writes one JSON record per line.
pub fn write_manifest(m: &Manifest, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    for r in &m.records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mos {
    pub alignment: f64,
    pub quality: f64,
}

/// Optional rater screening applied before averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MosOptions {
    /// Drop ratings whose z-score within the video exceeds this bound.
    pub zscore_screen: Option<f64>,
}

fn screened_mean(scores: &[f64], opts: MosOptions) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let Some(bound) = opts.zscore_screen else {
        return mean;
    };
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return mean;
    }
    let kept: Vec<f64> = scores
        .iter()
        .copied()
        .filter(|s| ((s - mean) / sd).abs() <= bound)
        .collect();
    if kept.is_empty() {
        mean
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

/// Per-video mean opinion scores on both dimensions.
pub fn mean_opinion_scores(m: &Manifest) -> Result<BTreeMap<String, Mos>, DatasetError> {
    mean_opinion_scores_with(m, MosOptions::default())
}

pub fn mean_opinion_scores_with(m: &Manifest, opts: MosOptions) -> Result<BTreeMap<String, Mos>, DatasetError> {
    let mut out = BTreeMap::new();
    for r in &m.records {
        if r.annotations.is_empty() {
            return Err(DatasetError::NoAnnotations(r.video_id.clone()));
        }
        // sorted so the float sum does not depend on annotation order
        let mut a: Vec<f64> = r.annotations.iter().map(|x| x.alignment_score as f64).collect();
        let mut q: Vec<f64> = r.annotations.iter().map(|x| x.quality_score as f64).collect();
        a.sort_by(f64::total_cmp);
        q.sort_by(f64::total_cmp);
        out.insert(
            r.video_id.clone(),
            Mos {
                alignment: screened_mean(&a, opts),
                quality: screened_mean(&q, opts),
            },
        );
    }
    Ok(out)
}

/// Grand means of the MOS columns and their mutual rank correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub videos: usize,
    pub mean_alignment: f64,
    pub mean_quality: f64,
    /// `None` when undefined (a column without variance).
    pub inter_dim_spearman: Option<f64>,
    pub inter_dim_kendall: Option<f64>,
}

pub fn summarize_distribution(m: &Manifest) -> Result<DistributionSummary, DatasetError> {
    let mos = mean_opinion_scores(m)?;
    if mos.len() < 2 {
        return Err(StatsError::TooShort(mos.len()).into());
    }
    let a: Vec<f64> = mos.values().map(|v| v.alignment).collect();
    let q: Vec<f64> = mos.values().map(|v| v.quality).collect();
    let n = a.len() as f64;
    let corr = CorrelationSummary::compute(&a, &q)?;
    Ok(DistributionSummary {
        videos: a.len(),
        mean_alignment: a.iter().sum::<f64>() / n,
        mean_quality: q.iter().sum::<f64>() / n,
        inter_dim_spearman: corr.spearman,
        inter_dim_kendall: corr.kendall,
    })
}

/// One generator held in for adaptation; the rest held out for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossModelSplit {
    pub held_in: String,
    pub held_out: BTreeSet<String>,
}

/// One split per generator, ordered by the held-in generator id.
pub fn cross_model_splits(m: &Manifest) -> Result<Vec<CrossModelSplit>, DatasetError> {
    let ids = &m.generator_ids;
    if ids.len() < 2 {
        return Err(DatasetError::TooFewGenerators(ids.len()));
    }
    Ok(ids
        .iter()
        .map(|held_in| CrossModelSplit {
            held_in: held_in.clone(),
            held_out: ids.iter().filter(|g| *g != held_in).cloned().collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ann(r: &str, a: u8, q: u8) -> RaterAnnotation {
        RaterAnnotation {
            rater_id: r.into(),
            alignment_score: a,
            quality_score: q,
        }
    }

    fn rec(id: &str, gen: &str, anns: Vec<RaterAnnotation>) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            prompt_text: "a dog".into(),
            generator_id: gen.into(),
            frame_source: PathBuf::from(format!("frames/{id}")),
            trajectory_path: None,
            annotations: anns,
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_three_records() {
        let lines: Vec<String> = ["v1", "v2", "v3"]
            .iter()
            .map(|id| serde_json::to_string(&rec(id, "g", vec![ann("r1", 3, 4)])).unwrap())
            .collect();
        let f = write_lines(&lines);
        let m = load_manifest(f.path()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.generator_ids().len(), 1);
        assert_eq!(m.base_dir(), f.path().parent().unwrap());
    }

    #[test]
    fn rejects_out_of_range_score() {
        let mut r = rec("bad", "g", vec![ann("r1", 3, 4)]);
        r.annotations[0].alignment_score = 6;
        let f = write_lines(&[serde_json::to_string(&r).unwrap()]);
        match load_manifest(f.path()) {
            Err(DatasetError::InvalidRecord { video_id, message }) => {
                assert_eq!(video_id, "bad");
                assert!(message.contains("alignment_score=6"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_id() {
        let l = serde_json::to_string(&rec("v1", "g", vec![])).unwrap();
        let f = write_lines(&[l.clone(), l]);
        assert!(matches!(
            load_manifest(f.path()),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn parse_error_reports_line() {
        let l = serde_json::to_string(&rec("v1", "g", vec![])).unwrap();
        let f = write_lines(&[l, "{not json".into()]);
        assert!(matches!(
            load_manifest(f.path()),
            Err(DatasetError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_double_annotation() {
        let r = rec("v1", "g", vec![ann("r1", 3, 3), ann("r1", 4, 4)]);
        assert!(Manifest::new(vec![r], ".").is_err());
    }

    #[test]
    fn mos_examples() {
        let m = Manifest::new(
            vec![
                rec("a", "g", vec![ann("1", 3, 3), ann("2", 4, 3), ann("3", 5, 3)]),
                rec("b", "g", vec![ann("1", 2, 5), ann("2", 2, 5)]),
                rec("c", "g", (0..10).map(|i| ann(&i.to_string(), 1, 1)).collect()),
            ],
            ".",
        )
        .unwrap();
        let mos = mean_opinion_scores(&m).unwrap();
        assert_eq!(mos["a"].alignment, 4.0);
        assert_eq!(
            mos["b"],
            Mos {
                alignment: 2.0,
                quality: 5.0
            }
        );
        assert_eq!(
            mos["c"],
            Mos {
                alignment: 1.0,
                quality: 1.0
            }
        );
    }

    #[test]
    fn mos_requires_annotations() {
        let m = Manifest::new(vec![rec("a", "g", vec![])], ".").unwrap();
        assert!(matches!(mean_opinion_scores(&m), Err(DatasetError::NoAnnotations(_))));
    }

    #[test]
    fn zscore_screen_drops_outlier() {
        let mut anns: Vec<_> = (0..9).map(|i| ann(&i.to_string(), 4, 4)).collect();
        anns.push(ann("x", 1, 4));
        let m = Manifest::new(vec![rec("a", "g", anns)], ".").unwrap();
        let plain = mean_opinion_scores(&m).unwrap()["a"].alignment;
        assert!((plain - 3.7).abs() < 1e-12);
        let screened = mean_opinion_scores_with(
            &m,
            MosOptions {
                zscore_screen: Some(2.0),
            },
        )
        .unwrap();
        assert_eq!(screened["a"].alignment, 4.0);
    }

    #[test]
    fn distribution_degenerate_and_identical() {
        let m = Manifest::new(
            vec![rec("a", "g", vec![ann("1", 3, 3)]), rec("b", "g", vec![ann("1", 3, 3)])],
            ".",
        )
        .unwrap();
        let s = summarize_distribution(&m).unwrap();
        assert_eq!((s.mean_alignment, s.mean_quality), (3.0, 3.0));
        assert!(s.inter_dim_spearman.is_none() && s.inter_dim_kendall.is_none());

        let recs = (1..=5u8)
            .map(|k| rec(&format!("v{k}"), "g", vec![ann("1", k, k)]))
            .collect();
        let s = summarize_distribution(&Manifest::new(recs, ".").unwrap()).unwrap();
        assert_eq!(s.inter_dim_spearman, Some(1.0));
        assert_eq!(s.inter_dim_kendall, Some(1.0));

        let one = Manifest::new(vec![rec("a", "g", vec![ann("1", 3, 3)])], ".").unwrap();
        assert!(summarize_distribution(&one).is_err());
    }

    #[test]
    fn splits() {
        let m = Manifest::new(
            (0..5)
                .map(|g| rec(&format!("v{g}"), &format!("gen{g}"), vec![]))
                .collect(),
            ".",
        )
        .unwrap();
        let s = cross_model_splits(&m).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s
            .iter()
            .all(|x| x.held_out.len() == 4 && !x.held_out.contains(&x.held_in)));

        let two = Manifest::new(vec![rec("1", "b", vec![]), rec("2", "a", vec![])], ".").unwrap();
        let s = cross_model_splits(&two).unwrap();
        assert_eq!(s[0].held_in, "a");
        assert_eq!(s[0].held_out, BTreeSet::from(["b".to_string()]));
        assert_eq!(s[1].held_in, "b");

        let one = Manifest::new(vec![rec("1", "a", vec![])], ".").unwrap();
        assert!(matches!(
            cross_model_splits(&one),
            Err(DatasetError::TooFewGenerators(1))
        ));
    }

    fn arb_record() -> impl Strategy<Value = VideoRecord> {
        (
            "[a-z0-9]{1,8}",
            "[ -~]{1,30}",
            "g[0-3]",
            proptest::option::of("[a-z]{1,5}\\.json"),
            proptest::collection::btree_map("[a-z]{1,4}", (1u8..=5, 1u8..=5), 0..5),
        )
            .prop_filter("non-blank prompt", |t| !t.1.trim().is_empty())
            .prop_map(|(id, prompt, gen, traj, anns)| VideoRecord {
                frame_source: PathBuf::from(format!("frames/{id}")),
                video_id: id,
                prompt_text: prompt,
                generator_id: gen,
                trajectory_path: traj.map(PathBuf::from),
                annotations: anns.into_iter().map(|(r, (a, q))| ann(&r, a, q)).collect(),
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trip(recs in proptest::collection::btree_map("[a-z0-9]{1,8}", arb_record(), 1..6)) {
            let records: Vec<VideoRecord> = recs
                .into_iter()
                .map(|(id, mut r)| { r.video_id = id; r })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.jsonl");
            let m = Manifest::new(records, dir.path()).unwrap();
            write_manifest(&m, &path).unwrap();
            prop_assert_eq!(load_manifest(&path).unwrap(), m);
        }

        #[test]
        fn mos_permutation_invariant(scores in proptest::collection::vec((1u8..=5, 1u8..=5), 1..12), seed in any::<u64>()) {
            let anns: Vec<_> = scores.iter().enumerate().map(|(i, &(a, q))| ann(&i.to_string(), a, q)).collect();
            let mut shuffled = anns.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let m1 = Manifest::new(vec![rec("a", "g", anns)], ".").unwrap();
            let m2 = Manifest::new(vec![rec("a", "g", shuffled)], ".").unwrap();
            prop_assert_eq!(mean_opinion_scores(&m1).unwrap(), mean_opinion_scores(&m2).unwrap());
        }

        #[test]
        fn splits_partition(gens in proptest::collection::btree_set("[a-z]{1,3}", 2..7)) {
            let recs = gens.iter().enumerate().map(|(i, g)| rec(&i.to_string(), g, vec![])).collect();
            let m = Manifest::new(recs, ".").unwrap();
            for s in cross_model_splits(&m).unwrap() {
                let mut all = s.held_out.clone();
                prop_assert!(all.insert(s.held_in.clone()));
                prop_assert_eq!(&all, m.generator_ids());
            }
        }
    }
}
