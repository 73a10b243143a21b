mod common;

use t2ijudge::lingmetrics::{count_syllables, difficulty_profile, flesch_kincaid, sentence_count, words, Syntax};

fn lexicon() -> Vec<(String, usize)> {
    let text = std::fs::read_to_string(common::fixture("syllable_lexicon.tsv")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (w, n) = l.split_once('\t').unwrap();
            (w.to_string(), n.trim().parse().unwrap())
        })
        .collect()
}

#[test]
fn lexicon_counts_match() {
    let lex = lexicon();
    assert!(lex.len() >= 200, "lexicon has {} words", lex.len());
    let wrong: Vec<_> = lex.iter().filter(|(w, n)| count_syllables(w) != *n).map(|(w, n)| format!("{w}: {} vs {n}", count_syllables(w))).collect();
    assert!(wrong.is_empty(), "{wrong:?}");
}

#[test]
fn case_and_punctuation_do_not_matter() {
    for (w, n) in lexicon() {
        assert_eq!(count_syllables(&w.to_uppercase()), n, "{w}");
        assert_eq!(count_syllables(&format!("\"{w},")), n, "{w}");
    }
}

// Dictionary counts the vowel-group rule gets wrong. Kept to document the
// heuristic's limits; if one starts passing, move it into the lexicon.
#[test]
fn known_heuristic_misses() {
    for (w, dict) in [("bracelet", 2), ("poem", 2), ("lion", 2), ("piano", 3), ("create", 2), ("video", 3), ("quiet", 2)] {
        assert_ne!(count_syllables(w), dict, "{w} now matches the dictionary");
    }
}

#[test]
fn hand_worked_grade_levels() {
    let text = std::fs::read_to_string(common::fixture("flesch_kincaid.tsv")).unwrap();
    let mut n = 0;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let cols: Vec<&str> = line.split('\t').collect();
        let (sentence, w, s, y, grade): (&str, usize, usize, usize, f64) =
            (cols[0], cols[1].parse().unwrap(), cols[2].parse().unwrap(), cols[3].parse().unwrap(), cols[4].parse().unwrap());
        assert_eq!(words(sentence).len(), w, "{sentence}");
        assert_eq!(sentence_count(sentence), s, "{sentence}");
        let p = difficulty_profile(sentence, Syntax::None, None).unwrap();
        assert_eq!(p.syllable_count, y, "{sentence}");
        let got = flesch_kincaid(sentence).unwrap();
        assert!((got - grade).abs() < 0.01, "{sentence}: {got} vs {grade}");
        n += 1;
    }
    assert_eq!(n, 20);
}

#[test]
fn grade_is_case_invariant() {
    let s = "The Refrigerator is in the Kitchen. The television is on the wall.";
    assert_eq!(flesch_kincaid(s).unwrap(), flesch_kincaid(&s.to_lowercase()).unwrap());
    assert_eq!(flesch_kincaid(s).unwrap(), flesch_kincaid(&s.to_uppercase()).unwrap());
}

#[test]
fn later_chain_prompts_are_longer() {
    let first = "a dog running through a park, chasing a ball";
    let last = "a dog running through a park chasing a ball with a frisbee in the air a bird flying overhead and a person walking on a path in the background with a small wooden bench on the side of the path";
    let a = difficulty_profile(first, Syntax::Fallback, None).unwrap();
    let b = difficulty_profile(last, Syntax::Fallback, None).unwrap();
    assert!(a.word_count < b.word_count);
    assert!(a.yngve.unwrap() < b.yngve.unwrap());
    assert_eq!(a.avg_word_length, a.char_count as f64 / a.word_count as f64);
}
