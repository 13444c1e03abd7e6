//! Multiple-choice question generation from a decomposed prompt.
//!
//! Questions depend only on the prompt, so one [`QASet`] serves every video
//! generated from it; [`QaCache`] keeps them on disk between runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{sha256_hex, BackendError, ChatBackend, ChatMessage, ChatRequest, Role};
use crate::decomposition::{json_object_span, EntityGraph, Exchange};

pub const TEMPLATE: &str = include_str!("../assets/qagen_v1.txt");
pub const TEMPLATE_VERSION: &str = "qagen-v1";
pub const MAX_REPAIRS: usize = 2;
pub const CHOICE_LABELS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATuple {
    pub question_id: u32,
    pub question_text: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub covered_elements: BTreeSet<u32>,
    pub aspect: Aspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASet {
    pub graph: EntityGraph,
    pub tuples: Vec<QATuple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAGenConfig {
    pub min_questions: usize,
    pub max_questions: usize,
    /// Requested choices per question; yes/no questions may use 2.
    pub choices: usize,
}

impl Default for QAGenConfig {
    fn default() -> Self {
        Self {
            min_questions: 5,
            max_questions: 12,
            choices: 4,
        }
    }
}

impl QAGenConfig {
    pub fn validate(&self) -> Result<(), QaGenError> {
        if !(2..=5).contains(&self.choices) {
            return Err(QaGenError::Config(format!(
                "choices must be in 2..=5, got {}",
                self.choices
            )));
        }
        if self.min_questions == 0 || self.min_questions > self.max_questions {
            return Err(QaGenError::Config(format!(
                "invalid question range {}..={}",
                self.min_questions, self.max_questions
            )));
        }
        Ok(())
    }
}

/// Case-fold, trim and collapse internal whitespace.
pub fn normalize_choice(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum QaViolation {
    EmptyQuestion {
        question_id: u32,
    },
    DuplicateQuestionId {
        question_id: u32,
    },
    ChoiceCount {
        question_id: u32,
        count: usize,
    },
    AnswerOutOfRange {
        question_id: u32,
        answer_index: usize,
        choices: usize,
    },
    DuplicateChoices {
        question_id: u32,
        first: usize,
        second: usize,
    },
    NoCoveredElements {
        question_id: u32,
    },
    UnknownElement {
        question_id: u32,
        element_id: u32,
    },
    Uncovered {
        element_id: u32,
    },
    MissingTemporal,
}

impl QaViolation {
    /// The question at fault, if the violation is local to one question.
    pub fn question_id(&self) -> Option<u32> {
        match *self {
            QaViolation::EmptyQuestion { question_id }
            | QaViolation::DuplicateQuestionId { question_id }
            | QaViolation::ChoiceCount { question_id, .. }
            | QaViolation::AnswerOutOfRange { question_id, .. }
            | QaViolation::DuplicateChoices { question_id, .. }
            | QaViolation::NoCoveredElements { question_id }
            | QaViolation::UnknownElement { question_id, .. } => Some(question_id),
            QaViolation::Uncovered { .. } | QaViolation::MissingTemporal => None,
        }
    }
}

impl fmt::Display for QaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QaViolation::EmptyQuestion { question_id } => write!(f, "question {question_id} is empty"),
            QaViolation::DuplicateQuestionId { question_id } => write!(f, "question id {question_id} repeats"),
            QaViolation::ChoiceCount { question_id, count } => {
                write!(f, "question {question_id} has {count} choices; 2 to 5 are allowed")
            }
            QaViolation::AnswerOutOfRange {
                question_id,
                answer_index,
                choices,
            } => write!(
                f,
                "question {question_id}: answer index {answer_index} does not name one of its {choices} choices"
            ),
            QaViolation::DuplicateChoices {
                question_id,
                first,
                second,
            } => write!(
                f,
                "question {question_id}: choices {} and {} are the same",
                CHOICE_LABELS.get(*first).copied().unwrap_or('?'),
                CHOICE_LABELS.get(*second).copied().unwrap_or('?')
            ),
            QaViolation::NoCoveredElements { question_id } => {
                write!(f, "question {question_id} does not list the element ids it checks")
            }
            QaViolation::UnknownElement {
                question_id,
                element_id,
            } => {
                write!(f, "question {question_id} lists unknown element {element_id}")
            }
            QaViolation::Uncovered { element_id } => write!(f, "element {element_id} is not covered by any question"),
            QaViolation::MissingTemporal => write!(f, "the prompt has motion elements but no temporal question"),
        }
    }
}

fn tuple_violations(t: &QATuple, known: &BTreeSet<u32>, out: &mut Vec<QaViolation>) {
    let qid = t.question_id;
    if t.question_text.trim().is_empty() {
        out.push(QaViolation::EmptyQuestion { question_id: qid });
    }
    if !(2..=5).contains(&t.choices.len()) {
        out.push(QaViolation::ChoiceCount {
            question_id: qid,
            count: t.choices.len(),
        });
    }
    if t.answer_index >= t.choices.len() {
        out.push(QaViolation::AnswerOutOfRange {
            question_id: qid,
            answer_index: t.answer_index,
            choices: t.choices.len(),
        });
    }
    let norm: Vec<String> = t.choices.iter().map(|c| normalize_choice(c)).collect();
    'outer: for i in 0..norm.len() {
        for j in i + 1..norm.len() {
            if norm[i] == norm[j] {
                out.push(QaViolation::DuplicateChoices {
                    question_id: qid,
                    first: i,
                    second: j,
                });
                break 'outer;
            }
        }
    }
    if t.covered_elements.is_empty() {
        out.push(QaViolation::NoCoveredElements { question_id: qid });
    }
    for &e in &t.covered_elements {
        if !known.contains(&e) {
            out.push(QaViolation::UnknownElement {
                question_id: qid,
                element_id: e,
            });
        }
    }
}

/// Checks tuple and set invariants. Empty means valid.
pub fn validate_qaset(s: &QASet) -> Vec<QaViolation> {
    let known = s.graph.element_ids();
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for t in &s.tuples {
        if !ids.insert(t.question_id) {
            out.push(QaViolation::DuplicateQuestionId {
                question_id: t.question_id,
            });
        }
        tuple_violations(t, &known, &mut out);
    }
    let covered: BTreeSet<u32> = s
        .tuples
        .iter()
        .flat_map(|t| t.covered_elements.iter().copied())
        .collect();
    for id in s.graph.non_global_ids() {
        if !covered.contains(&id) {
            out.push(QaViolation::Uncovered { element_id: id });
        }
    }
    if s.graph.has_temporal_elements() && !s.tuples.iter().any(|t| t.aspect == Aspect::Temporal) {
        out.push(QaViolation::MissingTemporal);
    }
    out
}

#[derive(Debug, Error)]
pub enum QaGenError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("question set still invalid after {attempts} attempts: {problems}")]
    Invalid { attempts: usize, problems: String },
    #[error("QA cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQa {
    pub qaset: QASet,
    pub transcript: Vec<Exchange>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireAnswer {
    Index(usize),
    Text(String),
}

#[derive(Deserialize)]
struct WireQuestion {
    #[serde(default)]
    question_id: Option<u32>,
    question: String,
    choices: Vec<String>,
    answer: WireAnswer,
    #[serde(default)]
    elements: Vec<u32>,
    aspect: Aspect,
}

#[derive(Deserialize)]
struct WireQuestions {
    questions: Vec<WireQuestion>,
}

/// Resolves an answer to a choice index. A letter, a 0-based integer or the
/// choice text are accepted; anything else yields `choices.len()`, which
/// validation reports as out of range.
fn resolve_answer(answer: &WireAnswer, choices: &[String]) -> usize {
    match answer {
        WireAnswer::Index(i) => *i,
        WireAnswer::Text(s) => {
            let t = s.trim().trim_matches(|c: char| c == '(' || c == ')' || c == '.');
            let mut chars = t.chars();
            if let (Some(c), None) = (chars.next(), chars.next()) {
                if c.is_ascii_alphabetic() {
                    return (c.to_ascii_uppercase() as u8 - b'A') as usize;
                }
            }
            let n = normalize_choice(s);
            choices
                .iter()
                .position(|c| normalize_choice(c) == n)
                .unwrap_or(choices.len())
        }
    }
}

fn parse_questions(reply: &str) -> Result<Vec<(Option<u32>, QATuple)>, String> {
    let span = json_object_span(reply).ok_or("no JSON object in the reply")?;
    let wire: WireQuestions = serde_json::from_str(span).map_err(|e| format!("malformed JSON: {e}"))?;
    Ok(wire
        .questions
        .into_iter()
        .map(|q| {
            let answer_index = resolve_answer(&q.answer, &q.choices);
            (
                q.question_id,
                QATuple {
                    question_id: 0,
                    question_text: q.question.trim().to_string(),
                    choices: q.choices.into_iter().map(|c| c.trim().to_string()).collect(),
                    answer_index,
                    covered_elements: q.elements.into_iter().collect(),
                    aspect: q.aspect,
                },
            )
        })
        .collect())
}

fn elements_json(g: &EntityGraph) -> String {
    let v: Vec<Value> = g
        .elements
        .iter()
        .map(|e| json!({"id": e.element_id, "text": e.surface_text, "kind": e.kind}))
        .collect();
    Value::Array(v).to_string()
}

pub fn qagen_request(model_id: &str, graph: &EntityGraph, cfg: &QAGenConfig) -> ChatRequest {
    let text = TEMPLATE
        .replace("{choices}", &cfg.choices.to_string())
        .replace("{min}", &cfg.min_questions.to_string())
        .replace("{max}", &cfg.max_questions.to_string())
        .replace("{prompt}", &graph.prompt_text)
        .replace("{elements}", &elements_json(graph));
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::text(Role::System, "You write evaluation questions. Reply with JSON only."),
            ChatMessage::text(Role::User, text),
        ],
    )
}

fn question_json(t: &QATuple) -> Value {
    json!({
        "question_id": t.question_id,
        "question": t.question_text,
        "choices": t.choices,
        "answer": CHOICE_LABELS.get(t.answer_index).map(|c| c.to_string()).unwrap_or_else(|| t.answer_index.to_string()),
        "elements": t.covered_elements,
        "aspect": t.aspect,
    })
}

fn repair_message(set: &QASet, violations: &[QaViolation], cfg: &QAGenConfig) -> String {
    let mut msg = String::from("Some questions need fixing.\n");
    let bad: BTreeSet<u32> = violations.iter().filter_map(QaViolation::question_id).collect();
    if !bad.is_empty() {
        msg.push_str("Replace these questions, keeping their question_id:\n");
        for t in set.tuples.iter().filter(|t| bad.contains(&t.question_id)) {
            let why: Vec<String> = violations
                .iter()
                .filter(|v| v.question_id() == Some(t.question_id))
                .map(ToString::to_string)
                .collect();
            msg.push_str(&format!("{}  problems: {}\n", question_json(t), why.join("; ")));
        }
    }
    let set_level: Vec<String> = violations
        .iter()
        .filter(|v| v.question_id().is_none())
        .map(ToString::to_string)
        .collect();
    if !set_level.is_empty() {
        msg.push_str(&format!(
            "Add new questions (without question_id) so that: {}\n",
            set_level.join("; ")
        ));
    }
    if set.tuples.len() < cfg.min_questions {
        msg.push_str(&format!(
            "Add new questions: at least {} are needed, there are {}.\n",
            cfg.min_questions,
            set.tuples.len()
        ));
    }
    msg.push_str("Reply with {\"questions\": [...]} holding only the replaced and added questions.");
    msg
}

fn renumber_new(set: &mut QASet, parsed: Vec<(Option<u32>, QATuple)>, replace: &BTreeSet<u32>) {
    let mut next = set.tuples.iter().map(|t| t.question_id).max().unwrap_or(0) + 1;
    for (qid, mut t) in parsed {
        match qid.filter(|q| replace.contains(q)) {
            Some(q) => {
                t.question_id = q;
                if let Some(slot) = set.tuples.iter_mut().find(|x| x.question_id == q) {
                    *slot = t;
                }
            }
            None => {
                t.question_id = next;
                next += 1;
                set.tuples.push(t);
            }
        }
    }
}

/// Drops trailing questions while above `max`, as long as the set stays valid.
fn trim_to_max(set: &mut QASet, max: usize) {
    let mut i = set.tuples.len();
    while set.tuples.len() > max && i > 0 {
        i -= 1;
        let removed = set.tuples.remove(i);
        if !validate_qaset(set).is_empty() {
            set.tuples.insert(i, removed);
        }
    }
}

fn remaining_problems(set: &QASet, cfg: &QAGenConfig) -> Vec<String> {
    let mut p: Vec<String> = validate_qaset(set).iter().map(ToString::to_string).collect();
    if set.tuples.len() < cfg.min_questions {
        p.push(format!(
            "{} questions, need at least {}",
            set.tuples.len(),
            cfg.min_questions
        ));
    }
    if set.tuples.len() > cfg.max_questions {
        p.push(format!(
            "{} questions, at most {} allowed",
            set.tuples.len(),
            cfg.max_questions
        ));
    }
    p
}

/// Generates and validates a question set for `graph`.
///
/// Invalid questions are sent back for replacement (and missing coverage for
/// additions) up to [`MAX_REPAIRS`] times; valid questions are kept as-is.
pub fn generate_qa<B: ChatBackend + ?Sized>(
    graph: &EntityGraph,
    backend: &B,
    cfg: &QAGenConfig,
) -> Result<GeneratedQa, QaGenError> {
    cfg.validate()?;
    let mut req = qagen_request(backend.model_id(), graph, cfg);
    let mut transcript = Vec::new();
    let mut set = QASet {
        graph: graph.clone(),
        tuples: Vec::new(),
    };
    let mut problems = Vec::new();
    for round in 0..=MAX_REPAIRS {
        let reply = backend.complete(&req)?.text;
        transcript.push(Exchange {
            request_hash: req.hash(),
            response: reply.clone(),
        });
        req.messages.push(ChatMessage::text(Role::Assistant, reply.clone()));
        match parse_questions(&reply) {
            Ok(parsed) => {
                if round == 0 {
                    renumber_new(&mut set, parsed, &BTreeSet::new());
                } else {
                    let replace: BTreeSet<u32> = set.tuples.iter().map(|t| t.question_id).collect();
                    renumber_new(&mut set, parsed, &replace);
                }
            }
            Err(e) => {
                problems = vec![e.clone()];
                req.messages.push(ChatMessage::text(
                    Role::User,
                    format!("{e}. Reply with the JSON object {{\"questions\": [...]}} only."),
                ));
                continue;
            }
        }
        trim_to_max(&mut set, cfg.max_questions);
        problems = remaining_problems(&set, cfg);
        if problems.is_empty() {
            return Ok(GeneratedQa { qaset: set, transcript });
        }
        let violations = validate_qaset(&set);
        req.messages
            .push(ChatMessage::text(Role::User, repair_message(&set, &violations, cfg)));
    }
    Err(QaGenError::Invalid {
        attempts: MAX_REPAIRS + 1,
        problems: problems.join("; "),
    })
}

/// Key under which a prompt's question set is cached.
pub fn cache_key(prompt: &str, model_id: &str, cfg: &QAGenConfig) -> String {
    let material = json!({
        "prompt": prompt.trim(),
        "model": model_id,
        "decompose": crate::decomposition::TEMPLATE_VERSION,
        "qagen": TEMPLATE_VERSION,
        "config": cfg,
    });
    sha256_hex(material.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedQa {
    pub prompt_text: String,
    pub qaset: QASet,
    pub transcript: Vec<Exchange>,
}

/// On-disk question sets, one JSON file per cache key.
#[derive(Debug, Clone)]
pub struct QaCache {
    dir: PathBuf,
}

impl QaCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedQa>, QaGenError> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let err = |message: String| QaGenError::Cache {
            path: path.clone(),
            message,
        };
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
        let cached: CachedQa = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Some(cached))
    }

    pub fn put(&self, key: &str, entry: &CachedQa) -> Result<(), QaGenError> {
        let path = self.path(key);
        let err = |message: String| QaGenError::Cache {
            path: path.clone(),
            message,
        };
        std::fs::create_dir_all(&self.dir).map_err(|e| err(e.to_string()))?;
        let text = serde_json::to_string_pretty(entry).expect("cache entry serializes");
        std::fs::write(&path, text).map_err(|e| err(e.to_string()))
    }
}

/// Per-aspect question counts.
pub fn aspect_counts(s: &QASet) -> BTreeMap<Aspect, usize> {
    let mut m = BTreeMap::new();
    for t in &s.tuples {
        *m.entry(t.aspect).or_insert(0) += 1;
    }
    m
}
