//! Mapping free-text model replies to a choice index.
//!
//! Steps, in order: a standalone choice label (`B`, `(c)`, `C.`, `answer is
//! D`), an exact match of the normalized choice text, a unique whole-word
//! substring match. Anything else is unparseable.

use regex::Regex;
use std::collections::BTreeSet;
use std::sync::LazyLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMatch {
    Label(usize),
    ExactText(usize),
    Substring(usize),
    Unparseable,
}

impl AnswerMatch {
    pub fn index(self) -> Option<usize> {
        match self {
            AnswerMatch::Label(i) | AnswerMatch::ExactText(i) | AnswerMatch::Substring(i) => Some(i),
            AnswerMatch::Unparseable => None,
        }
    }
}

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
pub fn normalize_text(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect::<String>()
        .to_lowercase();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

static PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Ea-e])\)").unwrap());
static LEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\(?([A-Ea-e])\s*[.):]").unwrap());
// case-sensitive on purpose: "the answer is a cat" is not label A
static STATED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:answer|option|choice)(?:\s+(?i:is))?\s*:?\s*\(?([A-E])\b").unwrap());

fn label_index(c: &str) -> usize {
    (c.as_bytes()[0].to_ascii_uppercase() - b'A') as usize
}

fn labels(reply: &str, n: usize) -> BTreeSet<usize> {
    let mut found = BTreeSet::new();
    let bare = normalize_text(reply);
    if bare.len() == 1 && bare.as_bytes()[0].is_ascii_lowercase() {
        found.insert(label_index(&bare));
    }
    for re in [&*PAREN, &*STATED] {
        for c in re.captures_iter(reply) {
            found.insert(label_index(&c[1]));
        }
    }
    if let Some(c) = LEADING.captures(reply) {
        found.insert(label_index(&c[1]));
    }
    found.retain(|&i| i < n);
    found
}

fn padded(s: &str) -> String {
    format!(" {s} ")
}

/// Resolves `reply` against `choices`.
pub fn match_answer(reply: &str, choices: &[String]) -> AnswerMatch {
    let found = labels(reply, choices.len().min(5));
    if found.len() == 1 {
        return AnswerMatch::Label(*found.iter().next().expect("one label"));
    }
    let norm_reply = normalize_text(reply);
    let norm_choices: Vec<String> = choices.iter().map(|c| normalize_text(c)).collect();
    if norm_reply.is_empty() {
        return AnswerMatch::Unparseable;
    }
    let exact: Vec<usize> = (0..choices.len()).filter(|&i| norm_choices[i] == norm_reply).collect();
    if let [i] = exact[..] {
        return AnswerMatch::ExactText(i);
    }
    // choices named in the reply, dropping any contained in a longer match
    let r = padded(&norm_reply);
    let hits: Vec<usize> = (0..choices.len())
        .filter(|&i| !norm_choices[i].is_empty() && r.contains(&padded(&norm_choices[i])))
        .collect();
    let maximal: BTreeSet<&str> = hits
        .iter()
        .map(|&i| norm_choices[i].as_str())
        .filter(|c| {
            !hits
                .iter()
                .any(|&j| norm_choices[j].len() > c.len() && padded(&norm_choices[j]).contains(&padded(c)))
        })
        .collect();
    if maximal.len() == 1 {
        let text = *maximal.iter().next().expect("one match");
        let idx: Vec<usize> = hits.iter().copied().filter(|&i| norm_choices[i] == text).collect();
        if let [i] = idx[..] {
            return AnswerMatch::Substring(i);
        }
    }
    if hits.is_empty() && norm_reply.len() >= 3 {
        let inside: Vec<usize> = (0..choices.len())
            .filter(|&i| padded(&norm_choices[i]).contains(&r))
            .collect();
        if let [i] = inside[..] {
            return AnswerMatch::Substring(i);
        }
    }
    AnswerMatch::Unparseable
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn label_forms() {
        let c = ch(&["a dog", "a cat", "a fox", "a cow"]);
        assert_eq!(match_answer("B", &c), AnswerMatch::Label(1));
        assert_eq!(match_answer(" b. ", &c), AnswerMatch::Label(1));
        assert_eq!(match_answer("(d)", &c), AnswerMatch::Label(3));
        assert_eq!(match_answer("C) a fox", &c), AnswerMatch::Label(2));
        assert_eq!(match_answer("The correct answer is A.", &c), AnswerMatch::Label(0));
        assert_eq!(match_answer("Option: (C)", &c), AnswerMatch::Label(2));
        assert_eq!(match_answer("E", &c), AnswerMatch::Unparseable);
    }

    #[test]
    fn article_is_not_a_label() {
        let c = ch(&["a dog", "a cat", "a fox", "a cow"]);
        assert_eq!(match_answer("the answer is a cat", &c), AnswerMatch::Substring(1));
        assert_eq!(match_answer("A cat.", &c), AnswerMatch::ExactText(1));
    }

    #[test]
    fn documented_reply() {
        let c = ch(&["stays still", "pans right", "pans left", "zooms in"]);
        assert_eq!(match_answer("The answer is (c) pans left.", &c), AnswerMatch::Label(2));
        assert_eq!(match_answer("It pans left", &c), AnswerMatch::Substring(2));
        assert_eq!(match_answer("left", &c), AnswerMatch::Substring(2));
        assert_eq!(match_answer("I cannot tell", &c), AnswerMatch::Unparseable);
    }

    #[test]
    fn conflicts_fall_through() {
        let c = ch(&["red", "blue", "light blue"]);
        assert_eq!(match_answer("light blue", &c), AnswerMatch::ExactText(2));
        assert_eq!(match_answer("it is light blue", &c), AnswerMatch::Substring(2));
        assert_eq!(match_answer("red or blue", &c), AnswerMatch::Unparseable);
        assert_eq!(match_answer("(A) or (B)?", &c), AnswerMatch::Unparseable);
        assert_eq!(match_answer("", &c), AnswerMatch::Unparseable);
    }

    #[test]
    fn yes_no() {
        let c = ch(&["yes", "no"]);
        assert_eq!(match_answer("Yes.", &c), AnswerMatch::ExactText(0));
        assert_eq!(match_answer("No, it is not.", &c), AnswerMatch::Substring(1));
        assert_eq!(match_answer("C", &c), AnswerMatch::Unparseable);
    }
}
