//! BLEU over whitespace tokens with a single reference per candidate.

use std::collections::HashMap;

use super::StatsError;

fn ngrams(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w.iter().map(|s| s.to_string()).collect()).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and total candidate n-grams.
pub fn modified_precision(candidate: &str, reference: &str, n: usize) -> (usize, usize) {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let cand = ngrams(&c, n);
    let refs = ngrams(&r, n);
    let matched = cand.iter().map(|(g, k)| (*k).min(refs.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.values().sum())
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len > ref_len {
        1.0
    } else if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

fn check(candidates: &[String], references: &[String], max_n: usize) -> Result<(), StatsError> {
    if candidates.is_empty() || references.is_empty() {
        return Err(StatsError::Empty("BLEU needs at least one candidate and reference".into()));
    }
    if candidates.len() != references.len() {
        return Err(StatsError::InvalidArgument(format!("{} candidates vs {} references", candidates.len(), references.len())));
    }
    if max_n == 0 {
        return Err(StatsError::InvalidArgument("max-n must be >= 1".into()));
    }
    Ok(())
}

/// Corpus BLEU, uniform weights over orders 1..=max_n, no smoothing.
/// Orders for which the candidates contain no n-grams at all (texts shorter
/// than n) are left out of the geometric mean.
pub fn corpus_bleu(candidates: &[String], references: &[String], max_n: usize) -> Result<f64, StatsError> {
    check(candidates, references, max_n)?;
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let (mut m, mut t) = (0, 0);
        for (c, r) in candidates.iter().zip(references) {
            let (mi, ti) = modified_precision(c, r, n);
            m += mi;
            t += ti;
        }
        if t == 0 {
            continue;
        }
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Err(StatsError::Empty("candidates contain no tokens".into()));
    }
    let c_len: usize = candidates.iter().map(|c| c.split_whitespace().count()).sum();
    let r_len: usize = references.iter().map(|r| r.split_whitespace().count()).sum();
    Ok((brevity_penalty(c_len, r_len) * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}

/// Sentence BLEU with add-one smoothing on orders above 1.
pub fn sentence_bleu(candidate: &str, reference: &str, max_n: usize) -> Result<f64, StatsError> {
    check(&[candidate.to_string()], &[reference.to_string()], max_n)?;
    let c_len = candidate.split_whitespace().count();
    if c_len == 0 {
        return Err(StatsError::Empty("candidate contains no tokens".into()));
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = modified_precision(candidate, reference, n);
        let p = if n == 1 { m as f64 / t as f64 } else { (m as f64 + 1.0) / (t as f64 + 1.0) };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let bp = brevity_penalty(c_len, reference.split_whitespace().count());
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}

/// Mean sentence BLEU of paired strings.
pub fn mean_sentence_bleu(candidates: &[String], references: &[String], max_n: usize) -> Result<f64, StatsError> {
    check(candidates, references, max_n)?;
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        total += sentence_bleu(c, r, max_n)?;
    }
    Ok(total / candidates.len() as f64)
}
