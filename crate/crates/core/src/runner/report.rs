//! Aggregation of ledgers into model rankings, per-iteration series and
//! metric correlations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ledger::RunLedger;
use super::{svg, RunError};
use crate::lingmetrics::DifficultyProfile;
use crate::stats::{self, correlations_to_tsv, kendall_tau, mean_std, metric_score_correlation, rank_models, CorrelationResult, MetricCorrelation, RankVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean: f64,
    /// Sample standard deviation over repeats; absent for one repeat.
    pub std: Option<f64>,
    pub repeats: usize,
    pub rank: f64,
}

/// Per-iteration means, one line per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub title: String,
    pub y_label: String,
    pub iterations: Vec<u32>,
    pub lines: BTreeMap<String, Vec<Option<f64>>>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

impl Series {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration");
        for m in self.lines.keys() {
            s.push('\t');
            s.push_str(m);
        }
        s.push('\n');
        for (k, it) in self.iterations.iter().enumerate() {
            s.push_str(&it.to_string());
            for v in self.lines.values() {
                s.push('\t');
                s.push_str(&cell(v[k]));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let xs: Vec<f64> = self.iterations.iter().map(|&i| i as f64).collect();
        let lines: Vec<(String, Vec<Option<f64>>)> = self.lines.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        svg::line_chart(&self.title, "iteration", &self.y_label, &xs, &lines)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summaries: Vec<ModelSummary>,
    pub ranking: RankVector,
    pub reference_tau: Option<CorrelationResult>,
    pub reference_rho: Option<CorrelationResult>,
    pub score_series: Series,
    pub difficulty_series: Series,
    /// Absent when the ledgers hold fewer than two records.
    pub correlations: Option<Vec<MetricCorrelation>>,
    pub warnings: Vec<String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean final score over the chains of one ledger that have one.
pub fn ledger_score(l: &RunLedger) -> Option<f64> {
    let finals: Vec<f64> = l.chains.iter().filter_map(|c| c.final_score.as_ref().map(|f| f.value)).collect();
    mean(&finals)
}

fn difficulty_value(p: &DifficultyProfile) -> f64 {
    p.yngve.unwrap_or(p.word_count as f64)
}

fn series(ledgers: &[RunLedger], title: &str, y_label: &str, value: impl Fn(&super::IterationRecord) -> f64) -> Series {
    let mut acc: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for l in ledgers {
        let per = acc.entry(l.model.clone()).or_default();
        for r in l.records() {
            per.entry(r.index).or_default().push(value(r));
        }
    }
    let iterations: Vec<u32> = acc.values().flat_map(|m| m.keys().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let lines = acc.into_iter().map(|(model, per)| (model, iterations.iter().map(|i| per.get(i).and_then(|v| mean(v))).collect())).collect();
    Series { title: title.into(), y_label: y_label.into(), iterations, lines }
}

fn check_model_sets(ledgers: &[RunLedger]) -> Result<(), RunError> {
    let mut by_repeat: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
    for l in ledgers {
        if !by_repeat.entry(l.repeat).or_default().insert(&l.model) {
            return Err(RunError::Inconsistent(format!("model {:?} appears twice in repeat {}", l.model, l.repeat)));
        }
    }
    let mut sets = by_repeat.iter();
    if let Some((r0, first)) = sets.next() {
        for (r, s) in sets {
            if s != first {
                let a: Vec<_> = first.iter().collect();
                let b: Vec<_> = s.iter().collect();
                return Err(RunError::Inconsistent(format!("repeat {r0} has models {a:?}, repeat {r} has {b:?}")));
            }
        }
    }
    Ok(())
}

/// Aggregates ledgers (any mix of models and repeats) into a report.
pub fn report(ledgers: &[RunLedger], reference: Option<&RankVector>) -> Result<Report, RunError> {
    if ledgers.is_empty() {
        return Err(RunError::InvalidArgument("no ledgers".into()));
    }
    check_model_sets(ledgers)?;
    let mut warnings = Vec::new();
    let mut per_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for l in ledgers {
        let entry = per_model.entry(l.model.clone()).or_default();
        match ledger_score(l) {
            Some(s) => entry.push(s),
            None => warnings.push(format!("{} repeat {}: no complete chain, ledger ignored", l.model, l.repeat)),
        }
    }
    let ranking = rank_models(&per_model)?;
    let mut summaries = Vec::new();
    for (model, v) in &per_model {
        let (m, sd) = mean_std(v)?;
        summaries.push(ModelSummary { model: model.clone(), mean: m, std: sd, repeats: v.len(), rank: ranking.rank(model).expect("ranked") });
    }
    summaries.sort_by(|a, b| a.rank.total_cmp(&b.rank).then_with(|| a.model.cmp(&b.model)));
    let (reference_tau, reference_rho) = match reference {
        Some(r) => (Some(kendall_tau(&ranking, r)?), Some(stats::spearman_rho(&ranking, r)?)),
        None => (None, None),
    };
    let score_series = series(ledgers, "Score by iteration", "mean score", |r| r.score.value());
    let difficulty_series = series(ledgers, "Prompt difficulty by iteration", "mean yngve (word count if absent)", |r| difficulty_value(&r.difficulty));
    let (profiles, scores): (Vec<DifficultyProfile>, Vec<f64>) =
        ledgers.iter().flat_map(|l| l.records()).map(|r| (r.difficulty.clone(), r.score.value())).unzip();
    let correlations = if profiles.len() >= 2 { Some(metric_score_correlation(&profiles, &scores)?) } else { None };
    Ok(Report { summaries, ranking, reference_tau, reference_rho, score_series, difficulty_series, correlations, warnings })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), RunError> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))
}

impl Report {
    pub fn model_scores_tsv(&self) -> String {
        let mut s = String::from("model\tmean\tstd\trepeats\trank\n");
        for m in &self.summaries {
            s.push_str(&format!("{}\t{:.6}\t{}\t{}\t{}\n", m.model, m.mean, cell(m.std), m.repeats, m.rank));
        }
        s
    }

    pub fn rank_correlation_tsv(&self) -> Option<String> {
        let (t, r) = (self.reference_tau?, self.reference_rho?);
        Some(format!("statistic\tvalue\tn\nkendall_tau\t{:.6}\t{}\nspearman_rho\t{:.6}\t{}\n", t.value, t.n, r.value, r.n))
    }

    pub fn correlations_tsv(&self) -> String {
        correlations_to_tsv(self.correlations.as_deref().unwrap_or_default())
    }

    /// Series tables and charts plus the metric correlation table.
    pub fn write_analysis(&self, dir: &Path) -> Result<Vec<String>, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        let files = [
            ("score_by_iteration.tsv", self.score_series.to_tsv()),
            ("score_by_iteration.svg", self.score_series.to_svg()),
            ("difficulty_by_iteration.tsv", self.difficulty_series.to_tsv()),
            ("difficulty_by_iteration.svg", self.difficulty_series.to_svg()),
            ("metric_correlations.tsv", self.correlations_tsv()),
        ];
        for (name, body) in &files {
            write(dir, name, body)?;
        }
        Ok(files.iter().map(|(n, _)| n.to_string()).collect())
    }

    /// Model scores (loadable as a ranking) and the reference comparison.
    pub fn write_ranking(&self, dir: &Path) -> Result<Vec<String>, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        let mut names = vec!["model_scores.tsv".to_string(), "ranking.tsv".to_string()];
        write(dir, "model_scores.tsv", &self.model_scores_tsv())?;
        write(dir, "ranking.tsv", &self.ranking.to_tsv())?;
        if let Some(t) = self.rank_correlation_tsv() {
            write(dir, "rank_correlation.tsv", &t)?;
            names.push("rank_correlation.tsv".into());
        }
        Ok(names)
    }
}
