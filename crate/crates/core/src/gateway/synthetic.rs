//! Rule-free deterministic stand-in for the judge and the renderer.
//!
//! The chat side recognises the harness's own instructions by their system
//! text and answers in the expected reply format, so whole runs work offline.
//! Every choice it makes is drawn from a SHA-256 digest of its inputs.

use sha2::{Digest, Sha256};

use super::image::render_procedural;
use super::mock::{CallKind, FailKind, Fallback, MockRule, MockScript};
use super::{ChatTurn, GatewayError, LogprobMap, Role, TokenScore};
use crate::prompt::templates::{self, TemplateSet};
use crate::prompt::{existing_prompt_turn, SeedCategory};
use crate::scoring::{prompt_from_vqa_question, ANSWER_INSTRUCTION, QUESTION_DESCRIPTION_PREFIX};

/// Builtin seeds, four per category, in [`SeedCategory::ALL`] order.
pub const SEEDS: [[&str; 4]; 4] = [
    [
        "a bowl of green apples on a wooden kitchen table",
        "a red couch next to a small reading lamp",
        "a loaf of bread on a cutting board beside a knife",
        "a blue mug on a shelf above a white sink",
    ],
    [
        "a woman in a yellow raincoat holding an umbrella",
        "an old man reading a newspaper on a park bench",
        "a child with a red backpack walking to school",
        "two friends sitting at a small cafe table",
    ],
    [
        "a dog running through a park, chasing a ball",
        "a cat sleeping on a sunny windowsill",
        "a brown horse standing in a green field",
        "a duck swimming in a small pond",
    ],
    [
        "a lighthouse on a rocky coast at sunset",
        "a busy city street with a yellow taxi",
        "a snowy mountain cabin with smoke from the chimney",
        "a quiet beach with a wooden pier",
    ],
];

const TERMS: [&str; 16] = [
    "with a bird flying overhead",
    "and a red ball on the grass",
    "with a wooden bench nearby",
    "and a small tree in the background",
    "with a blue umbrella",
    "and a cat sitting nearby",
    "with two white clouds in the sky",
    "and a bicycle leaning against a wall",
    "with a green door behind it",
    "and a stack of books on the floor",
    "with a striped rug underneath",
    "and a person walking on a path",
    "with a yellow kite in the air",
    "and a clock on the wall",
    "with a basket of flowers",
    "and a puddle reflecting the light",
];

const STOPWORDS: &[&str] = &[
    "with", "from", "that", "this", "there", "their", "into", "onto", "over", "under", "next", "beside", "above", "below", "behind", "through", "while",
    "some", "small", "large", "each", "other", "against", "near", "nearby", "around", "about",
];

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    h.finalize().into()
}

pub fn seeds_for(category: SeedCategory) -> &'static [&'static str; 4] {
    let i = SeedCategory::ALL.iter().position(|c| *c == category).expect("category listed");
    &SEEDS[i]
}

fn term_for(prev: &str, salt: &str) -> &'static str {
    TERMS[digest(&[prev, salt])[0] as usize % TERMS.len()]
}

/// One iterative (or single-increase) step: appends one term.
pub fn append_one(prev: &str) -> String {
    format!("{prev} {}", term_for(prev, "1"))
}

pub fn append_two(prev: &str) -> String {
    let a = term_for(prev, "1");
    let mut b = term_for(prev, "2");
    if a == b {
        b = TERMS[(TERMS.iter().position(|t| *t == a).expect("term listed") + 1) % TERMS.len()];
    }
    format!("{prev} {a} {b}")
}

/// Drops the trailing clause, or the last word when there is no clause.
pub fn drop_clause(prev: &str) -> String {
    let cut = [" with ", " and ", ", "].iter().filter_map(|m| prev.rfind(m)).filter(|&i| i > 0).max();
    match cut {
        Some(i) => prev[..i].to_string(),
        None => {
            let words: Vec<&str> = prev.split_whitespace().collect();
            if words.len() > 1 {
                words[..words.len() - 1].join(" ")
            } else {
                prev.to_string()
            }
        }
    }
}

pub fn halve(prev: &str) -> String {
    let words: Vec<&str> = prev.split_whitespace().collect();
    words[..words.len().div_ceil(2).max(1).min(words.len())].join(" ")
}

/// Prompt chain the synthetic judge produces in iterative mode.
pub fn iterative_chain(seed: &str, len: usize) -> Vec<String> {
    let mut out = vec![seed.to_string()];
    while out.len() < len {
        let next = append_one(out.last().expect("nonempty"));
        out.push(next);
    }
    out.truncate(len.max(1));
    out
}

fn existing_prompt(turns: &[ChatTurn]) -> Option<String> {
    turns.iter().filter(|t| t.role == Role::User).find_map(|t| {
        let s = t.text.strip_prefix("Existing prompt: \"")?.strip_suffix('"')?;
        debug_assert_eq!(existing_prompt_turn(s), t.text);
        Some(s.to_string())
    })
}

fn content_words(prompt: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in prompt.split(|c: char| !c.is_alphabetic()).map(str::to_lowercase) {
        if w.len() > 3 && !STOPWORDS.contains(&w.as_str()) && !out.contains(&w) {
            out.push(w);
        }
        if out.len() == 4 {
            break;
        }
    }
    out
}

fn questions_for(prompt: &str) -> String {
    let mut words = content_words(prompt);
    if words.is_empty() {
        words.push(prompt.trim().to_string());
    }
    words.iter().map(|w| format!("Q: Is there a {w} in the image?\nChoices: yes, no\nA: yes\n")).collect()
}

fn image_hash(turns: &[ChatTurn]) -> String {
    turns.iter().rev().find_map(|t| t.image.as_ref().map(|i| i.content_hash().to_string())).unwrap_or_default()
}

/// Synthetic P(yes) for an image and the prompt it is checked against.
pub fn yes_prob(image_hash: &str, prompt: &str) -> f64 {
    let words = prompt.split_whitespace().count() as f64;
    let jitter = (digest(&[image_hash, prompt])[0] as f64 / 255.0 - 0.5) * 0.08;
    (0.97 * (-0.02 * words).exp() + jitter).clamp(0.01, 0.99)
}

fn seed_count(system: &str) -> usize {
    system.split_whitespace().skip_while(|w| *w != "Write").nth(1).and_then(|n| n.parse().ok()).unwrap_or(1)
}

pub fn chat(turns: &[ChatTurn]) -> Result<String, GatewayError> {
    let system = turns.first().filter(|t| t.role == Role::System).map(|t| t.text.as_str()).unwrap_or("");
    let last_user = turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.text.as_str()).unwrap_or("");

    if let Some(topic) =
        last_user.strip_prefix("Topic: ").or_else(|| turns.iter().find_map(|t| if t.role == Role::User { t.text.strip_prefix("Topic: ") } else { None }))
    {
        let cat = SeedCategory::ALL.into_iter().find(|c| c.description() == topic).unwrap_or(SeedCategory::Household);
        let seeds = seeds_for(cat);
        return Ok((0..seed_count(system)).map(|i| format!("Prompt: {}\n", seeds[i % seeds.len()])).collect());
    }
    if let Some(prev) = existing_prompt(turns) {
        let next = if system == templates::ITERATIVE.body() || system == templates::ADAPTIVE_INCREASE1.body() {
            append_one(&prev)
        } else if system == templates::ADAPTIVE_INCREASE2.body() {
            append_two(&prev)
        } else if system == templates::ADAPTIVE_REDUCE.body() {
            drop_clause(&prev)
        } else if system == templates::ADAPTIVE_HALVE.body() {
            halve(&prev)
        } else {
            prev
        };
        return Ok(format!("Prompt: {next}"));
    }
    let qgen = [TemplateSet::Llama, TemplateSet::Molmo, TemplateSet::Llava].iter().any(|s| s.question_generation().body() == system);
    if qgen {
        let prompt = last_user.strip_prefix(QUESTION_DESCRIPTION_PREFIX).unwrap_or(last_user);
        return Ok(questions_for(prompt));
    }
    if system == templates::AESTHETIC_SYSTEM.body() {
        let d = digest(&[&image_hash(turns), "aesthetic"]);
        return Ok(format!("{:.1}", 3.0 + (d[0] % 70) as f64 / 10.0));
    }
    if last_user.ends_with("Answer yes or no and state nothing else.") {
        return Ok("yes".into());
    }
    if let Some(body) = last_user.strip_suffix(ANSWER_INSTRUCTION) {
        let mut lines = body.lines();
        let question = lines.next().unwrap_or("");
        let choices: Vec<&str> = lines.find_map(|l| l.strip_prefix("Choices: ")).map(|c| c.split(',').map(str::trim).collect()).unwrap_or_default();
        let d = digest(&[&image_hash(turns), question]);
        let pick = if d[0] < 192 || choices.len() < 2 { 0 } else { 1 + d[1] as usize % (choices.len() - 1) };
        return Ok(choices.get(pick).copied().unwrap_or("yes").to_string());
    }
    if let Some(prompt) = prompt_from_vqa_question(last_user) {
        return Ok(if yes_prob(&image_hash(turns), prompt) >= 0.5 { "Yes" } else { "No" }.into());
    }
    Ok(last_user.to_string())
}

pub fn first_token_logprobs(turns: &[ChatTurn]) -> LogprobMap {
    let last_user = turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.text.as_str()).unwrap_or("");
    let p = match prompt_from_vqa_question(last_user) {
        Some(prompt) => yes_prob(&image_hash(turns), prompt),
        None => 0.5,
    };
    LogprobMap::from([("Yes".to_string(), p.ln()), ("No".to_string(), (1.0 - p).ln())])
}

pub fn token_logprobs(continuation: &str) -> TokenScore {
    let words: Vec<&str> = continuation.split_whitespace().collect();
    let sum = words.iter().map(|w| -(1.0 + digest(&[w])[0] as f64 / 64.0)).sum();
    TokenScore { logprob_sum: sum, token_count: words.len() }
}

pub fn image_bytes(model_id: &str, prompt: &str, seed: u64) -> Vec<u8> {
    render_procedural(format!("{model_id}\x1f{prompt}\x1f{seed}").as_bytes())
}

/// Chain and index at which [`fault_script`] fails.
pub const FAULT_CHAIN: SeedCategory = SeedCategory::Animals;
pub const FAULT_INDEX: usize = 3;

/// Synthetic fallback plus one transport failure: the image request for the
/// fourth prompt of the animals chain in a default iterative run.
pub fn fault_script() -> MockScript {
    let target = iterative_chain(seeds_for(FAULT_CHAIN)[0], FAULT_INDEX + 1).pop().expect("nonempty chain");
    MockScript {
        fallback: Fallback::Synthetic,
        rules: vec![MockRule { on: Some(CallKind::Image), equals: Some(target), fail: Some(FailKind::Transport), ..MockRule::default() }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edits() {
        let p = "a dog running through a park, chasing a ball";
        assert!(append_one(p).split_whitespace().count() > p.split_whitespace().count());
        assert!(append_two(p).split_whitespace().count() > append_one(p).split_whitespace().count());
        assert_eq!(drop_clause(p), "a dog running through a park");
        assert_eq!(drop_clause("cat"), "cat");
        assert_eq!(halve("a b c d e"), "a b c");
        assert_eq!(halve("a"), "a");
    }

    #[test]
    fn chain_grows() {
        let c = iterative_chain(SEEDS[2][0], 5);
        assert_eq!(c.len(), 5);
        for w in c.windows(2) {
            assert!(w[1].starts_with(&w[0]));
        }
    }

    #[test]
    fn seeds_follow_requested_count() {
        let sys = crate::prompt::seed_instruction(3);
        let turns = [ChatTurn::system(sys), ChatTurn::user(crate::prompt::seed_request(SeedCategory::Animals))];
        let reply = chat(&turns).unwrap();
        assert_eq!(reply.lines().count(), 3);
        assert!(reply.starts_with("Prompt: a dog running"));
    }

    #[test]
    fn probabilities_are_valid() {
        let m = first_token_logprobs(&[ChatTurn::user(crate::scoring::vqa_question("a cat"))]);
        let total: f64 = m.values().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.values().all(|l| *l <= 0.0));
    }

    #[test]
    fn questions_parse() {
        let parsed = crate::scoring::parse_mcq_block(&questions_for("a red crab on the sand"));
        assert_eq!(parsed.warning_count(), 0);
        assert_eq!(parsed.questions.len(), 2);
        assert_eq!(parsed.questions[0].element(), "crab");
    }
}
