//! Prompt decomposition into semantic elements and dependency tuples.
//!
//! The LLM answers with a JSON object (`elements` + `tuples`) that is parsed
//! and validated here. Invalid answers are sent back with the list of
//! problems, at most [`MAX_REPAIRS`] times.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, ChatRequest, Role};

pub const TEMPLATE: &str = include_str!("../assets/decompose_v1.txt");
pub const TEMPLATE_VERSION: &str = "decompose-v1";
pub const MAX_REPAIRS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Object,
    Attribute,
    Action,
    Count,
    SpatialRelation,
    TemporalRelation,
    Camera,
    Style,
    Global,
}

impl ElementKind {
    /// Kinds that only make sense attached to a head element.
    pub fn needs_head(self) -> bool {
        matches!(
            self,
            ElementKind::Attribute
                | ElementKind::Action
                | ElementKind::Count
                | ElementKind::SpatialRelation
                | ElementKind::TemporalRelation
        )
    }

    /// Kinds whose presence requires temporal questions.
    pub fn is_temporal(self) -> bool {
        matches!(
            self,
            ElementKind::Action | ElementKind::TemporalRelation | ElementKind::Camera
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticElement {
    pub element_id: u32,
    pub surface_text: String,
    pub kind: ElementKind,
}

/// `dependent` is semantically attached to `head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityTuple {
    pub head: u32,
    pub dependent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub prompt_text: String,
    pub elements: Vec<SemanticElement>,
    pub tuples: Vec<EntityTuple>,
}

impl EntityGraph {
    pub fn element(&self, id: u32) -> Option<&SemanticElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }

    pub fn element_ids(&self) -> BTreeSet<u32> {
        self.elements.iter().map(|e| e.element_id).collect()
    }

    pub fn non_global_ids(&self) -> BTreeSet<u32> {
        self.elements
            .iter()
            .filter(|e| e.kind != ElementKind::Global)
            .map(|e| e.element_id)
            .collect()
    }

    pub fn has_temporal_elements(&self) -> bool {
        self.elements.iter().any(|e| e.kind.is_temporal())
    }

    /// Longest-path depth of each element below a root; roots are 0.
    /// Returns `None` for cyclic graphs.
    pub fn depths(&self) -> Option<BTreeMap<u32, usize>> {
        let order = topo_order(self)?;
        let mut depth: BTreeMap<u32, usize> = self.element_ids().into_iter().map(|id| (id, 0)).collect();
        for id in order {
            let d = depth[&id];
            for t in self.tuples.iter().filter(|t| t.head == id) {
                if let Some(x) = depth.get_mut(&t.dependent) {
                    *x = (*x).max(d + 1);
                }
            }
        }
        Some(depth)
    }
}

/// Kahn's algorithm over known ids; `None` when a cycle remains.
fn topo_order(g: &EntityGraph) -> Option<Vec<u32>> {
    let ids = g.element_ids();
    let mut indeg: BTreeMap<u32, usize> = ids.iter().map(|&id| (id, 0)).collect();
    let edges: BTreeSet<(u32, u32)> = g
        .tuples
        .iter()
        .filter(|t| ids.contains(&t.head) && ids.contains(&t.dependent))
        .map(|t| (t.head, t.dependent))
        .collect();
    for &(_, d) in &edges {
        *indeg.get_mut(&d).unwrap() += 1;
    }
    let mut ready: Vec<u32> = indeg.iter().filter(|(_, &n)| n == 0).map(|(&id, _)| id).collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(id) = ready.pop() {
        order.push(id);
        for &(_, d) in edges.iter().filter(|(h, _)| *h == id) {
            let n = indeg.get_mut(&d).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.push(d);
            }
        }
    }
    (order.len() == ids.len()).then_some(order)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum GraphViolation {
    EmptySurface { element_id: u32 },
    DuplicateElementId { element_id: u32 },
    SelfLoop { element_id: u32 },
    UnknownElement { tuple_index: usize, element_id: u32 },
    DuplicateTuple { head: u32, dependent: u32 },
    Cycle { element_ids: Vec<u32> },
    Dangling { element_id: u32 },
    UncoveredWord { word: String },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::EmptySurface { element_id } => write!(f, "element {element_id} has empty text"),
            GraphViolation::DuplicateElementId { element_id } => write!(f, "element id {element_id} is used twice"),
            GraphViolation::SelfLoop { element_id } => {
                write!(f, "tuple [{element_id}, {element_id}] relates an element to itself")
            }
            GraphViolation::UnknownElement {
                tuple_index,
                element_id,
            } => {
                write!(f, "tuple #{tuple_index} references unknown element {element_id}")
            }
            GraphViolation::DuplicateTuple { head, dependent } => {
                write!(f, "tuple [{head}, {dependent}] is listed twice")
            }
            GraphViolation::Cycle { element_ids } => write!(f, "tuples form a cycle through elements {element_ids:?}"),
            GraphViolation::Dangling { element_id } => {
                write!(f, "element {element_id} must be attached to a head element")
            }
            GraphViolation::UncoveredWord { word } => write!(f, "prompt word {word:?} is not covered by any element"),
        }
    }
}

/// Checks the structural invariants of a graph. Empty means valid.
pub fn validate_graph(g: &EntityGraph) -> Vec<GraphViolation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for e in &g.elements {
        if e.surface_text.trim().is_empty() {
            out.push(GraphViolation::EmptySurface {
                element_id: e.element_id,
            });
        }
        if !seen.insert(e.element_id) {
            out.push(GraphViolation::DuplicateElementId {
                element_id: e.element_id,
            });
        }
    }
    let mut tuple_seen = BTreeSet::new();
    for (i, t) in g.tuples.iter().enumerate() {
        if t.head == t.dependent {
            out.push(GraphViolation::SelfLoop { element_id: t.head });
        }
        for id in [t.head, t.dependent] {
            if !seen.contains(&id) {
                out.push(GraphViolation::UnknownElement {
                    tuple_index: i,
                    element_id: id,
                });
            }
        }
        if !tuple_seen.insert((t.head, t.dependent)) {
            out.push(GraphViolation::DuplicateTuple {
                head: t.head,
                dependent: t.dependent,
            });
        }
    }
    // self loops are reported above; look for longer cycles without them
    let acyclic_check = EntityGraph {
        prompt_text: String::new(),
        elements: g.elements.clone(),
        tuples: g.tuples.iter().copied().filter(|t| t.head != t.dependent).collect(),
    };
    if topo_order(&acyclic_check).is_none() {
        out.push(GraphViolation::Cycle {
            element_ids: cycle_members(&acyclic_check),
        });
    }
    let connected: BTreeSet<u32> = g.tuples.iter().flat_map(|t| [t.head, t.dependent]).collect();
    let non_global = g.non_global_ids().len();
    if non_global > 1 {
        for e in &g.elements {
            if e.kind.needs_head() && !connected.contains(&e.element_id) {
                out.push(GraphViolation::Dangling {
                    element_id: e.element_id,
                });
            }
        }
    }
    out
}

/// Elements left after repeatedly removing sources and sinks.
fn cycle_members(g: &EntityGraph) -> Vec<u32> {
    let mut alive = g.element_ids();
    let edges: Vec<(u32, u32)> = g.tuples.iter().map(|t| (t.head, t.dependent)).collect();
    loop {
        let before = alive.len();
        let keep: BTreeSet<u32> = alive
            .iter()
            .copied()
            .filter(|&id| {
                let has_in = edges.iter().any(|&(h, d)| d == id && alive.contains(&h));
                let has_out = edges.iter().any(|&(h, d)| h == id && alive.contains(&d));
                has_in && has_out
            })
            .collect();
        alive = keep;
        if alive.len() == before {
            return alive.into_iter().collect();
        }
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "with", "and", "or", "is", "are", "was", "were", "be", "by", "for",
    "from", "into", "onto", "its", "it", "their", "his", "her", "this", "that", "as", "while", "very",
];

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn stem(w: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(s) = w.strip_suffix(suffix) {
            if s.chars().count() >= 3 {
                return s.strip_suffix('e').filter(|r| r.chars().count() >= 3).unwrap_or(s);
            }
        }
    }
    w.strip_suffix('e').filter(|r| r.chars().count() >= 3).unwrap_or(w)
}

fn word_matches(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let (a, b) = (stem(a), stem(b));
    if a == b {
        return true;
    }
    let prefix = a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count();
    let shorter = a.chars().count().min(b.chars().count());
    prefix >= 3 && prefix + 1 >= shorter
}

/// Content words of the prompt that no element mentions.
pub fn uncovered_words(g: &EntityGraph) -> Vec<String> {
    let element_words: Vec<String> = g.elements.iter().flat_map(|e| tokens(&e.surface_text)).collect();
    let mut out: Vec<String> = Vec::new();
    for w in tokens(&g.prompt_text) {
        if STOPWORDS.contains(&w.as_str()) || out.contains(&w) {
            continue;
        }
        if !element_words.iter().any(|e| word_matches(&w, e)) {
            out.push(w);
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no valid decomposition after {attempts} attempts: {problems}")]
    Invalid { attempts: usize, problems: String },
}

/// One request/response exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request_hash: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub graph: EntityGraph,
    pub transcript: Vec<Exchange>,
}

#[derive(Deserialize)]
struct WireElement {
    id: u32,
    text: String,
    kind: ElementKind,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireTuple {
    Pair([u32; 2]),
    Named { head: u32, dependent: u32 },
}

#[derive(Deserialize)]
struct WireGraph {
    elements: Vec<WireElement>,
    #[serde(default)]
    tuples: Vec<WireTuple>,
}

/// The outermost `{...}` span of a reply, ignoring code fences and chatter.
pub(crate) fn json_object_span(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Parses a backend reply into a graph for `prompt`.
pub fn parse_graph(prompt: &str, reply: &str) -> Result<EntityGraph, String> {
    let span = json_object_span(reply).ok_or("no JSON object in the reply")?;
    let wire: WireGraph = serde_json::from_str(span).map_err(|e| format!("malformed JSON: {e}"))?;
    Ok(EntityGraph {
        prompt_text: prompt.to_string(),
        elements: wire
            .elements
            .into_iter()
            .map(|e| SemanticElement {
                element_id: e.id,
                surface_text: e.text.trim().to_string(),
                kind: e.kind,
            })
            .collect(),
        tuples: wire
            .tuples
            .into_iter()
            .map(|t| match t {
                WireTuple::Pair([head, dependent]) | WireTuple::Named { head, dependent } => {
                    EntityTuple { head, dependent }
                }
            })
            .collect(),
    })
}

pub fn decompose_request(model_id: &str, prompt: &str) -> ChatRequest {
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::text(
                Role::System,
                "You are a precise linguistic annotator. Reply with JSON only.",
            ),
            ChatMessage::text(Role::User, TEMPLATE.replace("{prompt}", prompt)),
        ],
    )
}

fn check(prompt: &str, reply: &str) -> Result<EntityGraph, Vec<String>> {
    let g = parse_graph(prompt, reply).map_err(|e| vec![e])?;
    let mut problems: Vec<String> = validate_graph(&g).iter().map(ToString::to_string).collect();
    problems.extend(
        uncovered_words(&g)
            .into_iter()
            .map(|word| GraphViolation::UncoveredWord { word }.to_string()),
    );
    if problems.is_empty() {
        Ok(g)
    } else {
        Err(problems)
    }
}

/// Asks the backend for a decomposition of `prompt`, repairing invalid
/// replies up to [`MAX_REPAIRS`] times.
pub fn decompose<B: ChatBackend + ?Sized>(prompt: &str, backend: &B) -> Result<Decomposition, DecomposeError> {
    let prompt = prompt.trim();
    if prompt.is_empty() {
        return Err(DecomposeError::EmptyPrompt);
    }
    let mut req = decompose_request(backend.model_id(), prompt);
    let mut transcript = Vec::new();
    let mut problems = Vec::new();
    for _ in 0..=MAX_REPAIRS {
        let reply = backend.complete(&req)?.text;
        transcript.push(Exchange {
            request_hash: req.hash(),
            response: reply.clone(),
        });
        match check(prompt, &reply) {
            Ok(graph) => return Ok(Decomposition { graph, transcript }),
            Err(p) => {
                log::debug!("decomposition of {prompt:?} rejected: {p:?}");
                req.messages.push(ChatMessage::text(Role::Assistant, reply));
                req.messages.push(ChatMessage::text(
                    Role::User,
                    format!(
                        "That answer has problems:\n- {}\nReply with the corrected JSON object only.",
                        p.join("\n- ")
                    ),
                ));
                problems = p;
            }
        }
    }
    Err(DecomposeError::Invalid {
        attempts: MAX_REPAIRS + 1,
        problems: problems.join("; "),
    })
}

/// Element ids by kind, for reporting.
pub fn kind_histogram(g: &EntityGraph) -> HashMap<ElementKind, usize> {
    let mut m = HashMap::new();
    for e in &g.elements {
        *m.entry(e.kind).or_insert(0) += 1;
    }
    m
}
