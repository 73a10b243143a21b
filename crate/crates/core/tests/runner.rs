mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use t2ijudge::gateway::mock::{CallKind, MockAction, MockBackend, MockScript};
use t2ijudge::gateway::synthetic::{self, FAULT_CHAIN, FAULT_INDEX};
use t2ijudge::gateway::{EndpointKind, Gateway, ModelEndpoint};
use t2ijudge::prompt::{ScoreBin, SeedCategory};
use t2ijudge::runner::report::ledger_score;
use t2ijudge::runner::{
    image_seed, parse_ledger, read_ledger, report, run_adaptive, run_all, run_iterative, run_one, weighted_final_score, write_ledger, Gateways, Mode,
    RunConfig, RunError, RunLedger, Stage,
};
use t2ijudge::stats::{mean_std, RankVector};

fn mocked(script: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_mock(script);
    c
}

const CUTLERY: [&str; 5] = [
    "a set of knives and forks leaning against each other on a table",
    "a set of knives and forks leaning against each other on a table with a white tablecloth and a vase of flowers in the background",
    "a set of knives and forks leaning against each other on a table with a white tablecloth and a vase of flowers in the background with a small wooden bowl of fruit on the table and a cat sitting on the floor next to the table",
    "a set of knives and forks leaning against each other on a table with a white tablecloth and a vase of flowers in the background with a small wooden bowl of fruit on the table and a cat sitting on the floor next to the table and a bird perched on the tablecloth",
    "a set of knives and forks leaning against each other on a table with a white tablecloth and a vase of flowers in the background",
];
const CUTLERY_SCORES: [f64; 5] = [0.912, 0.939, 0.835, 0.386, 0.911];

#[test]
fn default_run_is_twenty_records_and_replays() {
    let t = Instant::now();
    let c = mocked("scripted");
    let gw = Gateways::connect(&c).unwrap();
    let a = run_iterative(&c, &gw).unwrap();
    let b = run_iterative(&c, &Gateways::connect(&c).unwrap()).unwrap();
    assert_eq!(a.record_count(), 20);
    assert_eq!(a.chains.len(), 4);
    assert!(a.chains.iter().all(|ch| ch.records.len() == 5 && ch.final_score.is_some()));
    assert_eq!(a.without_timestamps().to_jsonl(), b.without_timestamps().to_jsonl());
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn streamed_file_matches_in_memory_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let c = mocked("scripted-fault");
    let gw = Gateways::connect(&c).unwrap();
    let mut f = std::fs::File::create(&path).unwrap();
    let l = run_one(&c, &gw, 0, 0, Some(&mut f)).unwrap();
    drop(f);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), l.to_jsonl());
    assert_eq!(read_ledger(&path).unwrap(), l);
}

#[test]
fn fault_stays_in_its_chain() {
    let c = mocked("scripted-fault");
    let l = run_iterative(&c, &Gateways::connect(&c).unwrap()).unwrap();
    let faulty = SeedCategory::ALL.iter().position(|&k| k == FAULT_CHAIN).unwrap();
    for ch in &l.chains {
        if ch.index == faulty {
            assert_eq!(ch.records.len(), FAULT_INDEX);
            assert_eq!(ch.errors.len(), 1);
            assert_eq!(ch.errors[0].stage, Stage::Image);
            assert_eq!(ch.errors[0].iteration as usize, FAULT_INDEX);
            assert!(ch.final_score.is_none());
            assert!(matches!(weighted_final_score(&l, ch.index), Err(RunError::IncompleteChain(_))));
        } else {
            assert_eq!(ch.records.len(), 5, "chain {}", ch.index);
            assert!(ch.errors.is_empty());
            assert!(ch.final_score.is_some());
        }
    }
}

#[test]
fn ledger_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let c = mocked("scripted-fault");
    let l = run_iterative(&c, &Gateways::connect(&c).unwrap()).unwrap();
    let path = dir.path().join("l.jsonl");
    write_ledger(&l, &path).unwrap();
    assert_eq!(read_ledger(&path).unwrap(), l);

    let text = l.to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    let last = lines.len();
    let cut = format!("{}\n{}", lines[..last - 1].join("\n"), &lines[last - 1][..10]);
    match parse_ledger(&cut) {
        Err(RunError::Ledger { line, .. }) => assert_eq!(line, last),
        other => panic!("{other:?}"),
    }
    let without_footer = lines[..last - 1].join("\n");
    assert!(matches!(parse_ledger(&without_footer), Err(RunError::Ledger { .. })));
    let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
    assert!(matches!(parse_ledger(&bumped), Err(RunError::Schema { .. })));
}

#[test]
fn cutlery_chain_replay() {
    let mut c = RunConfig::from_toml(&std::fs::read_to_string(common::fixture("cutlery_config.toml")).unwrap()).unwrap();
    c.apply_mock(common::fixture("cutlery_mock.toml").to_str().unwrap());
    // The fixture pins the fifth image by its generation seed.
    assert_eq!(image_seed(c.random_seed, 0, 4), 4);
    let l = run_adaptive(&c, &Gateways::connect(&c).unwrap()).unwrap();
    assert_eq!(l.chains.len(), 1);
    let ch = &l.chains[0];
    assert!(ch.errors.is_empty(), "{:?}", ch.errors);
    let prompts: Vec<&str> = ch.records.iter().map(|r| r.prompt.text()).collect();
    assert_eq!(prompts, CUTLERY);
    for (r, s) in ch.records.iter().zip(CUTLERY_SCORES) {
        assert!((r.score.value() - s).abs() < 1e-12, "{} vs {s}", r.score.value());
    }
    use ScoreBin::*;
    let bins: Vec<_> = ch.records.iter().map(|r| r.bin_applied).collect();
    assert_eq!(bins, vec![None, Some(Increase2), Some(Increase2), Some(Increase2), Some(Reduce)]);
    assert_eq!(ch.records[4].prompt.parent(), Some(CUTLERY[3]));
}

fn scripted_scores(scores: Vec<f64>, rephrase_to: &'static str) -> Gateways {
    let calls = Arc::new(AtomicUsize::new(0));
    let backend = MockBackend::synthetic().with_handler(move |call| match call.kind {
        CallKind::Logprobs => {
            let s = scores[calls.fetch_add(1, Ordering::SeqCst).min(scores.len() - 1)];
            Some(MockAction::Logprobs(BTreeMap::from([("Yes".into(), s.ln()), ("No".into(), (1.0 - s).ln())])))
        }
        CallKind::Chat if call.transcript.contains("rewrite to make more clear and simple") => Some(MockAction::Reply(format!("Prompt: {rephrase_to}"))),
        _ => None,
    });
    let b: Arc<MockBackend> = Arc::new(backend);
    Gateways {
        mllm: Gateway::with_backend(ModelEndpoint::mocked(EndpointKind::Mllm, "judge", "inline"), b.clone()),
        t2i: vec![Gateway::with_backend(ModelEndpoint::mocked(EndpointKind::T2i, "t2i", "inline"), b)],
        lm: None,
    }
}

#[test]
fn adaptive_bins_track_scripted_scores() {
    let mut c = mocked("scripted");
    c.mode = Mode::Adaptive;
    c.seed_prompts = Some(vec!["a red cat".into()]);
    let l = run_adaptive(&c, &scripted_scores(vec![0.9, 0.9, 0.8, 0.4, 0.7], "a red cat")).unwrap();
    use ScoreBin::*;
    let bins: Vec<_> = l.chains[0].records.iter().map(|r| r.bin_applied).collect();
    assert_eq!(bins, vec![None, Some(Increase2), Some(Increase2), Some(Increase2), Some(Reduce)]);

    let l = run_adaptive(&c, &scripted_scores(vec![0.5], "a red cat on a mat")).unwrap();
    assert!(l.chains[0].records[1..].iter().all(|r| r.bin_applied == Some(Rephrase)));
}

#[test]
fn weighting_uses_yngve_in_adaptive_runs() {
    let mut c = mocked("scripted");
    c.mode = Mode::Adaptive;
    let l = run_adaptive(&c, &Gateways::connect(&c).unwrap()).unwrap();
    for ch in &l.chains {
        let f = weighted_final_score(&l, ch.index).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for r in &ch.records {
            let y = r.difficulty.yngve.unwrap();
            num += r.score.value() * y;
            den += y;
        }
        assert!((f.value - num / den).abs() < 1e-12);
        assert_eq!(ch.final_score.as_ref().unwrap(), &f);
    }
}

fn two_model_config() -> RunConfig {
    let mut c = RunConfig { iterations_per_seed: 2, categories: vec![SeedCategory::People], repeat_count: 2, ..RunConfig::default() };
    c.endpoints.mllm = Some(ModelEndpoint::mocked(EndpointKind::Mllm, "judge", "scripted"));
    c.endpoints.t2i = vec![ModelEndpoint::mocked(EndpointKind::T2i, "strong", "scripted"), ModelEndpoint::mocked(EndpointKind::T2i, "weak", "scripted")];
    c
}

fn two_model_gateways(c: &RunConfig) -> Gateways {
    let script = r#"
fallback = "synthetic"
[[rules]]
on = "image"
model = "strong"
reply = "strong-render"
[[rules]]
on = "image"
model = "weak"
reply = "weak-render"
[[rules]]
on = "logprobs"
image = "strong-render"
probs = { Yes = 0.9, No = 0.1 }
[[rules]]
on = "logprobs"
image = "weak-render"
probs = { Yes = 0.3, No = 0.7 }
"#;
    let b = Arc::new(MockBackend::new(MockScript::from_toml(script).unwrap()).unwrap());
    let eps = &c.endpoints;
    Gateways {
        mllm: Gateway::with_backend(eps.mllm.clone().unwrap(), b.clone()),
        t2i: eps.t2i.iter().map(|e| Gateway::with_backend(e.clone(), b.clone())).collect(),
        lm: None,
    }
}

#[test]
fn report_ranks_dominant_model_first() {
    let c = two_model_config();
    let ledgers = run_all(&c, &two_model_gateways(&c)).unwrap();
    assert_eq!(ledgers.len(), 4);
    let r = report(&ledgers, None).unwrap();
    assert_eq!(r.ranking.rank("strong"), Some(1.0));
    assert_eq!(r.ranking.rank("weak"), Some(2.0));
    assert!((r.summaries[0].mean - 0.9).abs() < 1e-9);
    let again = report(&ledgers, Some(&r.ranking)).unwrap();
    assert_eq!(again.reference_tau.unwrap().value, 1.0);
    assert_eq!(again.reference_rho.unwrap().value, 1.0);
    let reversed = RankVector::new(vec![("strong".into(), 0.0), ("weak".into(), 1.0)]).unwrap();
    assert_eq!(report(&ledgers, Some(&reversed)).unwrap().reference_tau.unwrap().value, -1.0);
}

#[test]
fn report_rejects_inconsistent_model_sets() {
    let c = two_model_config();
    let mut ledgers = run_all(&c, &two_model_gateways(&c)).unwrap();
    ledgers.remove(3);
    assert!(matches!(report(&ledgers, None), Err(RunError::Inconsistent(_))));
    assert!(report(&[], None).is_err());
}

#[test]
fn eight_models_five_repeats_match_aggregation_oracle() {
    let mut c = RunConfig { iterations_per_seed: 2, categories: vec![SeedCategory::Household, SeedCategory::Animals], repeat_count: 5, ..RunConfig::default() };
    c.endpoints.mllm = Some(ModelEndpoint::mocked(EndpointKind::Mllm, "judge", "scripted"));
    c.endpoints.t2i = (0..8).map(|i| ModelEndpoint::mocked(EndpointKind::T2i, format!("t2i-{i}"), "scripted")).collect();
    let ledgers = run_all(&c, &Gateways::connect(&c).unwrap()).unwrap();
    assert_eq!(ledgers.len(), 40);
    let r = report(&ledgers, None).unwrap();
    for s in &r.summaries {
        // Oracle: plain mean of records per chain, chains per ledger, then
        // sample mean/std over repeats.
        let per_repeat: Vec<f64> = ledgers
            .iter()
            .filter(|l| l.model == s.model)
            .map(|l| {
                let chains: Vec<f64> = l.chains.iter().map(|ch| ch.records.iter().map(|x| x.score.value()).sum::<f64>() / ch.records.len() as f64).collect();
                chains.iter().sum::<f64>() / chains.len() as f64
            })
            .collect();
        let m = per_repeat.iter().sum::<f64>() / 5.0;
        let sd = (per_repeat.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0).sqrt();
        assert!((s.mean - m).abs() < 1e-12);
        assert!((s.std.unwrap() - sd).abs() < 1e-12);
        assert_eq!(s.repeats, 5);
        let (mm, ss) = mean_std(&per_repeat).unwrap();
        assert!((mm - m).abs() < 1e-12 && (ss.unwrap() - sd).abs() < 1e-12);
    }
    let ledger_means: Vec<Option<f64>> = ledgers.iter().map(ledger_score).collect();
    assert!(ledger_means.iter().all(Option::is_some));
}

#[test]
fn analysis_files_and_correlation_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let c = mocked("scripted");
    let l = run_iterative(&c, &Gateways::connect(&c).unwrap()).unwrap();
    let r = report(std::slice::from_ref(&l), None).unwrap();
    let files = r.write_analysis(dir.path()).unwrap();
    assert_eq!(files.iter().filter(|f| f.ends_with(".svg")).count(), 2);
    assert_eq!(files.iter().filter(|f| f.ends_with(".tsv")).count(), 3);
    for f in &files {
        assert!(dir.path().join(f).is_file());
    }
    let profiles: Vec<_> = l.records().map(|x| x.difficulty.clone()).collect();
    let scores: Vec<f64> = l.records().map(|x| x.score.value()).collect();
    let oracle = t2ijudge::stats::metric_score_correlation(&profiles, &scores).unwrap();
    assert_eq!(r.correlations.as_ref().unwrap(), &oracle);
    let table = std::fs::read_to_string(dir.path().join("metric_correlations.tsv")).unwrap();
    assert!(table.contains("yngve"));
    assert!(!table.contains("perplexity"));
    let series = std::fs::read_to_string(dir.path().join("score_by_iteration.tsv")).unwrap();
    assert_eq!(series.lines().count(), 6);
}

#[test]
fn synthetic_fault_target_is_in_the_default_chain() {
    let chain = synthetic::iterative_chain(synthetic::seeds_for(FAULT_CHAIN)[0], 5);
    assert_eq!(chain.len(), 5);
    let c = mocked("scripted");
    let l: RunLedger = run_iterative(&c, &Gateways::connect(&c).unwrap()).unwrap();
    let faulty = SeedCategory::ALL.iter().position(|&k| k == FAULT_CHAIN).unwrap();
    let texts: Vec<&str> = l.chains[faulty].records.iter().map(|r| r.prompt.text()).collect();
    assert_eq!(texts, chain.iter().map(String::as_str).collect::<Vec<_>>());
}
