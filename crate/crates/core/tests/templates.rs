use t2ijudge::prompt::parse_prompt_reply;
use t2ijudge::prompt::templates::{self, recorded_digest, TemplateSet};
use t2ijudge::scoring::{parse_mcq_block, serialize_questions};

/// The first example block of the llava question template.
pub fn crab_block() -> String {
    let body = TemplateSet::Llava.question_generation().body();
    let start = body.find("Image description: a drawing of a red crab").expect("crab example");
    let rest = &body[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    rest[..end].to_string()
}

#[test]
fn every_template_matches_its_recorded_digest() {
    assert_eq!(templates::ALL.len(), 13);
    for t in templates::ALL {
        assert_eq!(Some(t.digest().as_str()), recorded_digest(t.file), "{}", t.file);
    }
}

#[test]
fn crab_block_parses_to_four_questions() {
    let parsed = parse_mcq_block(&crab_block());
    assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
    let q = &parsed.questions;
    assert_eq!(q.len(), 4);
    assert_eq!(q[0].question(), "Is there a crab in the image?");
    assert_eq!(q[1].choices(), ["lobster", "fish", "crab", "eel"]);
    assert_eq!(q[1].answer(), "crab");
    assert_eq!(q[3].answer(), "red");
    assert!(q.iter().all(|x| x.choices().iter().any(|c| c == x.answer())));
    assert_eq!(parse_mcq_block(&serialize_questions(q)).questions, *q);
}

#[test]
fn template_examples_round_trip_through_reply_parser() {
    let mut seen = 0;
    for t in [templates::ITERATIVE, templates::ADAPTIVE_REDUCE, templates::ADAPTIVE_INCREASE1, templates::ADAPTIVE_INCREASE2] {
        for line in t.body().lines().filter(|l| l.starts_with("Prompt: ")) {
            let expected = line["Prompt: ".len()..].trim();
            assert_eq!(parse_prompt_reply(line).unwrap(), expected);
            assert_eq!(parse_prompt_reply(&format!("Sure.\n{line}\n")).unwrap(), expected);
            seen += 1;
        }
    }
    assert!(seen >= 6);
}
