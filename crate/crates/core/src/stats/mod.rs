//! Rank correlations, rankings, BLEU and summary statistics.

mod bleu;

pub use bleu::{corpus_bleu, mean_sentence_bleu, modified_precision, sentence_bleu};

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lingmetrics::{DifficultyProfile, Metric};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model sets differ: {0}")]
    MismatchedIds(String),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: {0}")]
    Undefined(String),
}

/// Models with scores. Rank 1 is the highest score; tied scores share the
/// mean of the ranks they span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RankEntry>", into = "Vec<RankEntry>")]
pub struct RankVector {
    entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model: String,
    pub score: f64,
}

impl TryFrom<Vec<RankEntry>> for RankVector {
    type Error = StatsError;

    fn try_from(entries: Vec<RankEntry>) -> Result<Self, StatsError> {
        RankVector::new(entries.into_iter().map(|e| (e.model, e.score)).collect())
    }
}

impl From<RankVector> for Vec<RankEntry> {
    fn from(r: RankVector) -> Self {
        r.entries
    }
}

/// Average ranks, ascending: the smallest value gets rank 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

impl RankVector {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, StatsError> {
        let mut seen = HashSet::new();
        for (m, s) in &entries {
            if !seen.insert(m.as_str()) {
                return Err(StatsError::InvalidArgument(format!("duplicate model id {m:?}")));
            }
            if !s.is_finite() {
                return Err(StatsError::InvalidArgument(format!("score of {m:?} is not finite")));
            }
        }
        Ok(RankVector { entries: entries.into_iter().map(|(model, score)| RankEntry { model, score }).collect() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RankEntry] {
        &self.entries
    }

    pub fn models(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.model.as_str()).collect()
    }

    pub fn score(&self, model: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.model == model).map(|e| e.score)
    }

    /// Ranks in entry order.
    pub fn ranks(&self) -> Vec<f64> {
        let neg: Vec<f64> = self.entries.iter().map(|e| -e.score).collect();
        average_ranks(&neg)
    }

    pub fn rank(&self, model: &str) -> Option<f64> {
        let i = self.entries.iter().position(|e| e.model == model)?;
        Some(self.ranks()[i])
    }

    /// Model ids from best to worst (stable on ties).
    pub fn ordering(&self) -> Vec<&str> {
        let mut e: Vec<&RankEntry> = self.entries.iter().collect();
        e.sort_by(|a, b| b.score.total_cmp(&a.score));
        e.into_iter().map(|e| e.model.as_str()).collect()
    }

    /// `model<TAB>score<TAB>rank` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\tscore\trank\n");
        for (e, r) in self.entries.iter().zip(self.ranks()) {
            s.push_str(&format!("{}\t{}\t{}\n", e.model, e.score, r));
        }
        s
    }

    /// Reads `model<TAB>score[<TAB>...]` lines; a header starting with
    /// `model` and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, StatsError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("model")) {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(m), Some(s)) = (cols.next(), cols.next()) else {
                return Err(StatsError::InvalidArgument(format!("line {}: expected model<TAB>score", i + 1)));
            };
            let score: f64 = s.trim().parse().map_err(|e| StatsError::InvalidArgument(format!("line {}: {e}", i + 1)))?;
            entries.push((m.trim().to_string(), score));
        }
        Self::new(entries)
    }

    /// Scores of `other` in this vector's entry order.
    fn aligned(&self, other: &RankVector) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
        if self.len() != other.len() {
            return Err(StatsError::MismatchedIds(format!("{} vs {} models", self.len(), other.len())));
        }
        let mut ys = Vec::with_capacity(self.len());
        for e in &self.entries {
            ys.push(other.score(&e.model).ok_or_else(|| StatsError::MismatchedIds(format!("{:?} missing from second ranking", e.model)))?);
        }
        Ok((self.entries.iter().map(|e| e.score).collect(), ys))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    KendallTau,
    SpearmanRho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub statistic: Statistic,
    pub value: f64,
    pub n: usize,
}

impl fmt::Display for CorrelationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.statistic {
            Statistic::KendallTau => "kendall_tau",
            Statistic::SpearmanRho => "spearman_rho",
        };
        write!(f, "{name}\t{:.6}\tn={}", self.value, self.n)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<usize, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidArgument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidArgument("non-finite value".into()));
    }
    Ok(x.len())
}

fn tie_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

// Merge sort on `v`, returning the number of inversions.
fn count_swaps(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid]) + count_swaps(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = check_pair(x, y)? as i64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0i64;
    let mut run = 1i64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = count_swaps(&mut ys);
    let n2 = tie_pairs(&ys);

    let numer = n0 - n1 - n2 + n3 - 2 * swaps;
    if n0 == n1 || n0 == n2 {
        return Err(StatsError::Undefined("one side is constant".into()));
    }
    Ok((numer as f64 / ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt()).clamp(-1.0, 1.0))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn kendall_tau(a: &RankVector, b: &RankVector) -> Result<CorrelationResult, StatsError> {
    let (x, y) = a.aligned(b)?;
    Ok(CorrelationResult { statistic: Statistic::KendallTau, value: kendall_tau_b(&x, &y)?, n: x.len() })
}

pub fn spearman_rho(a: &RankVector, b: &RankVector) -> Result<CorrelationResult, StatsError> {
    let (x, y) = a.aligned(b)?;
    Ok(CorrelationResult { statistic: Statistic::SpearmanRho, value: spearman(&x, &y)?, n: x.len() })
}

/// Mean and sample standard deviation (absent for a single value).
pub fn mean_std(values: &[f64]) -> Result<(f64, Option<f64>), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, Some(var.sqrt())))
}

/// Ranks models by mean score.
pub fn rank_models(scores: &BTreeMap<String, Vec<f64>>) -> Result<RankVector, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::Empty("no models".into()));
    }
    let mut entries = Vec::with_capacity(scores.len());
    for (m, v) in scores {
        let (mean, _) = mean_std(v).map_err(|_| StatsError::Empty(format!("model {m:?} has no scores")))?;
        entries.push((m.clone(), mean));
    }
    RankVector::new(entries)
}

/// Correlations of one profile metric with the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: Metric,
    /// Rows where the metric is present.
    pub n: usize,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
}

/// Per-metric tau and rho against `scores`, over rows where the metric is
/// present. Metrics absent from every row are omitted; undefined values
/// (fewer than two rows, constant columns) are `None`.
pub fn metric_score_correlation(profiles: &[DifficultyProfile], scores: &[f64]) -> Result<Vec<MetricCorrelation>, StatsError> {
    if profiles.len() != scores.len() {
        return Err(StatsError::InvalidArgument(format!("{} profiles vs {} scores", profiles.len(), scores.len())));
    }
    if profiles.len() < 2 {
        return Err(StatsError::TooFew(profiles.len()));
    }
    let mut out = Vec::new();
    for m in Metric::ALL {
        let (xs, ys): (Vec<f64>, Vec<f64>) = profiles.iter().zip(scores).filter_map(|(p, s)| p.metric(m).map(|v| (v, *s))).unzip();
        if xs.is_empty() {
            continue;
        }
        out.push(MetricCorrelation { metric: m, n: xs.len(), kendall_tau: kendall_tau_b(&xs, &ys).ok(), spearman_rho: spearman(&xs, &ys).ok() });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

pub fn correlations_to_tsv(rows: &[MetricCorrelation]) -> String {
    let mut s = String::from("metric\tn\tkendall_tau\tspearman_rho\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", r.metric.name(), r.n, opt(r.kendall_tau), opt(r.spearman_rho)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(pairs: &[(&str, f64)]) -> RankVector {
        RankVector::new(pairs.iter().map(|(m, s)| (m.to_string(), *s)).collect()).unwrap()
    }

    #[test]
    fn ranks_and_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0, 2.0]), vec![4.0, 1.0, 2.5, 2.5]);
        let r = rank_models(&BTreeMap::from([("A".into(), vec![1.0]), ("B".into(), vec![0.5])])).unwrap();
        assert_eq!(r.rank("A"), Some(1.0));
        assert_eq!(r.rank("B"), Some(2.0));
        let r = rank_models(&BTreeMap::from([("A".into(), vec![0.5]), ("B".into(), vec![0.5])])).unwrap();
        assert_eq!(r.ranks(), vec![1.5, 1.5]);
        assert!(rank_models(&BTreeMap::from([("A".into(), vec![])])).is_err());
    }

    #[test]
    fn identity_and_reverse() {
        let ids: Vec<(String, f64)> = (0..8).map(|i| (format!("m{i}"), i as f64)).collect();
        let a = RankVector::new(ids.clone()).unwrap();
        let b = RankVector::new(ids.iter().map(|(m, s)| (m.clone(), -s)).collect()).unwrap();
        assert_eq!(kendall_tau(&a, &a).unwrap().value, 1.0);
        assert_eq!(kendall_tau(&a, &b).unwrap().value, -1.0);
        assert!((spearman_rho(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&a, &b).unwrap().value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = rv(&[("a", 1.0), ("b", 2.0)]);
        assert!(matches!(kendall_tau(&a, &rv(&[("a", 1.0), ("c", 2.0)])), Err(StatsError::MismatchedIds(_))));
        assert!(matches!(kendall_tau(&rv(&[("a", 1.0)]), &rv(&[("a", 1.0)])), Err(StatsError::TooFew(1))));
        assert!(matches!(spearman_rho(&a, &rv(&[("a", 1.0), ("b", 1.0)])), Err(StatsError::Undefined(_))));
        assert!(RankVector::new(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]).unwrap(), (2.0, Some(0.0)));
        assert_eq!(mean_std(&[1.0, 2.0, 3.0]).unwrap(), (2.0, Some(1.0)));
        assert_eq!(mean_std(&[5.0]).unwrap(), (5.0, None));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let a = rv(&[("x", 0.25), ("y", 0.75)]);
        assert_eq!(RankVector::from_tsv(&a.to_tsv()).unwrap(), a);
        assert!(RankVector::from_tsv("x\tnope\n").is_err());
        assert_eq!(a.ordering(), vec!["y", "x"]);
    }
}
