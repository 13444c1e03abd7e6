use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::http::with_retry;
use super::{BackendError, RetryPolicy};
use crate::quality::RawScoreBatch;

/// Where raw quality-expert scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreSource {
    /// `video_id<TAB>score` lines.
    File(PathBuf),
    /// Scoring service: POST `{"provider_id", "video_ids"}`, reply
    /// `{"entries": [{"video_id", "score"}]}`.
    Service(String),
}

impl ScoreSource {
    /// `http(s)://...` is a service, anything else a file path.
    pub fn parse(s: &str) -> Self {
        if s.starts_with("http://") || s.starts_with("https://") {
            ScoreSource::Service(s.to_string())
        } else {
            ScoreSource::File(PathBuf::from(s))
        }
    }
}

/// Parses TSV score lines. Blank lines and `#` comments are skipped.
pub fn parse_score_tsv(text: &str, origin: &Path) -> Result<HashMap<String, f64>, BackendError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| BackendError::InvalidResponse(format!("{}:{}: {msg}", origin.display(), i + 1));
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected video_id<TAB>score"))?;
        let score: f64 = score.trim().parse().map_err(|_| bad("score is not a number"))?;
        if out.insert(id.to_string(), score).is_some() {
            return Err(bad("duplicate video_id"));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireScore {
    Num(f64),
    Text(String),
    Null,
}

#[derive(Deserialize)]
struct WireEntry {
    video_id: String,
    score: WireScore,
}

#[derive(Deserialize)]
struct WireBatch {
    entries: Vec<WireEntry>,
}

fn fetch_service(url: &str, provider_id: &str, ids: &[String]) -> Result<HashMap<String, f64>, BackendError> {
    super::http::install_crypto_provider();
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(300))
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))?;
    let body = json!({"provider_id": provider_id, "video_ids": ids});
    let (text, _) = with_retry(RetryPolicy::default(), |_| {
        let resp = client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            })
        }
    })?;
    let batch: WireBatch =
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(format!("score service: {e}")))?;
    let mut out = HashMap::new();
    for e in batch.entries {
        let v = match e.score {
            WireScore::Num(v) => v,
            WireScore::Text(s) => s.trim().parse().unwrap_or(f64::NAN),
            WireScore::Null => f64::NAN,
        };
        out.insert(e.video_id, v);
    }
    Ok(out)
}

/// One finite score per requested id, in request order.
pub fn fetch_scores(ids: &[String], source: &ScoreSource, provider_id: &str) -> Result<RawScoreBatch, BackendError> {
    let all = match source {
        ScoreSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_score_tsv(&text, path)?
        }
        ScoreSource::Service(url) => fetch_service(url, provider_id, ids)?,
    };
    let missing: Vec<String> = ids.iter().filter(|id| !all.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(BackendError::MissingScores(missing));
    }
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let v = all[id];
        if !v.is_finite() {
            return Err(BackendError::NonFiniteScore(id.clone()));
        }
        entries.push((id.clone(), v));
    }
    Ok(RawScoreBatch {
        provider_id: provider_id.to_string(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn file_provider() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tech.tsv");
        std::fs::write(&p, "# comment\na\t0.5\nb\t-1.25\nc\t3\n").unwrap();
        let b = fetch_scores(&ids(&["b", "a"]), &ScoreSource::File(p.clone()), "technical").unwrap();
        assert_eq!(b.entries, vec![("b".to_string(), -1.25), ("a".to_string(), 0.5)]);

        match fetch_scores(&ids(&["a", "zz"]), &ScoreSource::File(p), "technical") {
            Err(BackendError::MissingScores(m)) => assert_eq!(m, vec!["zz".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_provider_rejects_nan_and_junk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        std::fs::write(&p, "a\tNaN\n").unwrap();
        assert!(matches!(
            fetch_scores(&ids(&["a"]), &ScoreSource::File(p.clone()), "t"),
            Err(BackendError::NonFiniteScore(_))
        ));
        std::fs::write(&p, "a 0.5\n").unwrap();
        assert!(fetch_scores(&ids(&["a"]), &ScoreSource::File(p), "t").is_err());
    }

    #[test]
    fn source_parse() {
        assert_eq!(
            ScoreSource::parse("http://h/x"),
            ScoreSource::Service("http://h/x".into())
        );
        assert_eq!(ScoreSource::parse("a.tsv"), ScoreSource::File("a.tsv".into()));
    }
}
