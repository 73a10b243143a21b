//! Multiple-choice question blocks:
//!
//! ```text
//! Q: Is there a crab in the image?
//! Choices: yes, no
//! A: yes
//! ```
//!
//! An optional `Element:` line names the prompt element the question covers.

use serde::{Deserialize, Serialize};

use super::ScoringError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuestionWire", into = "QuestionWire")]
pub struct McQuestion {
    question: String,
    choices: Vec<String>,
    answer: String,
    element: String,
}

#[derive(Serialize, Deserialize)]
struct QuestionWire {
    question: String,
    choices: Vec<String>,
    answer: String,
    element: String,
}

impl TryFrom<QuestionWire> for McQuestion {
    type Error = ScoringError;

    fn try_from(w: QuestionWire) -> Result<Self, Self::Error> {
        McQuestion::new(w.question, w.choices, w.answer, w.element)
    }
}

impl From<McQuestion> for QuestionWire {
    fn from(q: McQuestion) -> Self {
        QuestionWire { question: q.question, choices: q.choices, answer: q.answer, element: q.element }
    }
}

fn bad(msg: impl Into<String>) -> ScoringError {
    ScoringError::InvalidArgument(msg.into())
}

impl McQuestion {
    /// Checks: 2 to 4 pairwise distinct choices without commas, answer among
    /// them, nonempty single-line question and element.
    pub fn new(question: impl Into<String>, choices: Vec<String>, answer: impl Into<String>, element: impl Into<String>) -> Result<Self, ScoringError> {
        let (question, answer, element) = (question.into(), answer.into(), element.into());
        if question.trim().is_empty() || question.trim() != question || question.contains('\n') {
            return Err(bad("question must be a nonempty single line"));
        }
        if !(2..=4).contains(&choices.len()) {
            return Err(bad(format!("{} choices, expected 2 to 4", choices.len())));
        }
        for (i, c) in choices.iter().enumerate() {
            if c.trim().is_empty() || c.contains(',') || c.contains('\n') || c.trim() != c {
                return Err(bad(format!("bad choice {c:?}")));
            }
            if choices[..i].contains(c) {
                return Err(bad(format!("duplicate choice {c:?}")));
            }
        }
        if !choices.contains(&answer) {
            return Err(bad(format!("answer {answer:?} not among choices")));
        }
        if element.trim().is_empty() || element.trim() != element || element.contains('\n') {
            return Err(bad("element must be a nonempty single line"));
        }
        Ok(McQuestion { question, choices, answer, element })
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn choices(&self) -> &[String] {
        &self.choices
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }

    pub fn element(&self) -> &str {
        &self.element
    }
}

/// Parsed questions plus one message per dropped block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedQuestions {
    pub questions: Vec<McQuestion>,
    pub warnings: Vec<String>,
}

impl ParsedQuestions {
    pub fn warning_count(&self) -> usize {
        self.warnings.len()
    }
}

const YES_NO_PREFIXES: &[&str] = &[
    "is there an ",
    "is there a ",
    "is there ",
    "are there any ",
    "are there ",
    "is this an ",
    "is this a ",
    "is this ",
    "is the ",
    "are the ",
    "is it ",
    "does the ",
];
const YES_NO_SUFFIXES: &[&str] = &[" in the image", " in this image", " in the picture", " shown"];

/// Element covered by a question when the block does not name one: the
/// noun phrase of a yes/no existence question, otherwise the answer.
pub fn derive_element(question: &str, answer: &str) -> String {
    let is_yes_no = matches!(answer.to_lowercase().as_str(), "yes" | "no");
    if is_yes_no {
        let mut q = question.trim().trim_end_matches('?').trim().to_lowercase();
        if let Some(p) = YES_NO_PREFIXES.iter().find(|p| q.starts_with(*p)) {
            q = q[p.len()..].to_string();
        }
        if let Some(s) = YES_NO_SUFFIXES.iter().find(|s| q.ends_with(*s)) {
            q.truncate(q.len() - s.len());
        }
        let q = q.trim();
        if !q.is_empty() {
            return q.to_string();
        }
    }
    answer.to_string()
}

#[derive(Default)]
struct Block {
    question: String,
    choices: Option<String>,
    answer: Option<String>,
    element: Option<String>,
}

impl Block {
    fn finish(self) -> Result<McQuestion, String> {
        let q = self.question.trim().to_string();
        let choices_line = self.choices.ok_or_else(|| format!("{q:?}: missing Choices line"))?;
        let answer_raw = self.answer.ok_or_else(|| format!("{q:?}: missing A line"))?;
        let choices: Vec<String> = choices_line.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
        let answer_raw = answer_raw.trim().trim_end_matches('.');
        let answer =
            choices.iter().find(|c| c.eq_ignore_ascii_case(answer_raw)).cloned().ok_or_else(|| format!("{q:?}: answer {answer_raw:?} not among choices"))?;
        let element = self.element.map(|e| e.trim().to_string()).filter(|e| !e.is_empty()).unwrap_or_else(|| derive_element(&q, &answer));
        McQuestion::new(q.clone(), choices, answer, element).map_err(|e| format!("{q:?}: {e}"))
    }
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key).map(str::trim)
}

/// Splits a reply on `Q:` lines; blocks missing `Choices:` or `A:`, or
/// violating the question invariants, are dropped with a warning.
pub fn parse_mcq_block(raw: &str) -> ParsedQuestions {
    let mut out = ParsedQuestions::default();
    let mut current: Option<Block> = None;
    let flush = |b: Option<Block>, out: &mut ParsedQuestions| {
        if let Some(b) = b {
            match b.finish() {
                Ok(q) => out.questions.push(q),
                Err(w) => out.warnings.push(w),
            }
        }
    };
    for line in raw.lines().map(str::trim) {
        if let Some(q) = field(line, "Q:") {
            flush(current.take(), &mut out);
            current = Some(Block { question: q.to_string(), ..Block::default() });
            continue;
        }
        let Some(b) = current.as_mut() else { continue };
        if let Some(c) = field(line, "Choices:") {
            b.choices.get_or_insert_with(|| c.to_string());
        } else if let Some(a) = field(line, "A:") {
            b.answer.get_or_insert_with(|| a.to_string());
        } else if let Some(e) = field(line, "Element:") {
            b.element.get_or_insert_with(|| e.to_string());
        } else if field(line, "Image description:").is_some() {
            flush(current.take(), &mut out);
        }
    }
    flush(current, &mut out);
    out
}

/// Inverse of [`parse_mcq_block`].
pub fn serialize_questions(questions: &[McQuestion]) -> String {
    let mut s = String::new();
    for q in questions {
        s.push_str(&format!("Q: {}\nChoices: {}\nA: {}\nElement: {}\n", q.question, q.choices.join(", "), q.answer, q.element));
    }
    s
}

pub fn questions_to_jsonl(questions: &[McQuestion]) -> String {
    questions.iter().map(|q| serde_json::to_string(q).expect("question serializes") + "\n").collect()
}

pub fn questions_from_jsonl(text: &str) -> Result<Vec<McQuestion>, ScoringError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(format!("line {}: {e}", i + 1))))
        .collect()
}

fn normalize_words(s: &str) -> Vec<String> {
    s.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_string).collect()
}

fn longest_common_run(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            if x == y {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    best
}

/// Maps a free-text reply onto a choice: exact match after lowercasing and
/// punctuation removal, else the longest common word run (first choice wins
/// ties). With no overlap at all the first choice is returned unmatched.
pub fn match_choice(reply: &str, choices: &[String]) -> (String, bool) {
    let r = normalize_words(reply);
    if let Some(c) = choices.iter().find(|c| normalize_words(c) == r) {
        return (c.clone(), true);
    }
    let mut best: Option<(usize, &String)> = None;
    for c in choices {
        let n = longest_common_run(&r, &normalize_words(c));
        if n > 0 && best.is_none_or(|(b, _)| n > b) {
            best = Some((n, c));
        }
    }
    match best {
        Some((_, c)) => (c.clone(), true),
        None => (choices.first().cloned().unwrap_or_default(), false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn drops_bad_blocks() {
        let raw = "Q: Is there a cat?\nChoices: yes, no\nA: yes\nQ: Broken?\nChoices: yes, no\nQ: What color?\nChoices: red, blue\nA: red\n";
        let p = parse_mcq_block(raw);
        assert_eq!(p.questions.len(), 2);
        assert_eq!(p.warning_count(), 1);
        let p = parse_mcq_block("Q: x?\nChoices: a, b\nA: c\n");
        assert!(p.questions.is_empty());
        assert_eq!(p.warning_count(), 1);
        assert_eq!(parse_mcq_block(""), ParsedQuestions::default());
    }

    #[test]
    fn elements() {
        assert_eq!(derive_element("Is there a crab in the image?", "yes"), "crab");
        assert_eq!(derive_element("Is this a drawing?", "yes"), "drawing");
        assert_eq!(derive_element("What animal is this?", "crab"), "crab");
    }

    #[test]
    fn choice_matching() {
        let yn = s(&["yes", "no"]);
        assert_eq!(match_choice("yes", &yn), ("yes".into(), true));
        assert_eq!(match_choice("Yes, it can.", &yn), ("yes".into(), true));
        let animals = s(&["lobster", "fish", "crab", "eel"]);
        assert_eq!(match_choice("It is a crab", &animals), ("crab".into(), true));
        assert_eq!(match_choice("a mystery", &animals), ("lobster".into(), false));
        let colors = s(&["dark red", "red"]);
        assert_eq!(match_choice("Red.", &colors), ("red".into(), true));
        assert_eq!(match_choice("dark red paint", &colors), ("dark red".into(), true));
    }

    #[test]
    fn invariants() {
        assert!(McQuestion::new("q?", s(&["a"]), "a", "e").is_err());
        assert!(McQuestion::new("q?", s(&["a", "a"]), "a", "e").is_err());
        assert!(McQuestion::new("q?", s(&["a", "b", "c", "d", "e"]), "a", "e").is_err());
        assert!(McQuestion::new("q?", s(&["a", "b"]), "c", "e").is_err());
        assert!(McQuestion::new("q?", s(&["a", "b"]), "a", " ").is_err());
        assert!(McQuestion::new("q?", s(&["a", "b"]), "a", "e").is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let qs = vec![McQuestion::new("Is there a cat?", s(&["yes", "no"]), "yes", "cat").unwrap()];
        assert_eq!(questions_from_jsonl(&questions_to_jsonl(&qs)).unwrap(), qs);
        assert!(questions_from_jsonl("{\"question\":\"q\"}\n").is_err());
    }
}
