mod common;

use common::oracles;
use proptest::prelude::*;
use t2ijudge::gateway::LogprobMap;
use t2ijudge::lingmetrics::{fallback_tree, parse_bracketed_tree, yngve_score};
use t2ijudge::prompt::{select_bin, ScoreBin};
use t2ijudge::runner::weighted_mean;
use t2ijudge::scoring::yes_probability;
use t2ijudge::stats::{kendall_tau_b, spearman};

#[test]
fn tau_matches_enumerator_on_all_permutation_pairs() {
    let perms = oracles::permutations(5);
    assert_eq!(perms.len(), 120);
    for p in &perms {
        let x: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        for q in &perms {
            let y: Vec<f64> = q.iter().map(|&v| v as f64).collect();
            assert_eq!(kendall_tau_b(&x, &y).unwrap(), oracles::kendall_tau_b(&x, &y), "{p:?} {q:?}");
        }
    }
}

#[test]
fn yngve_matches_brute_force_on_small_binary_trees() {
    for n in 1..=5 {
        for shape in oracles::all_shapes(n) {
            let t = parse_bracketed_tree(&oracles::bracketed(&shape)).unwrap();
            assert_eq!(yngve_score(&t), oracles::yngve(&shape), "{}", oracles::bracketed(&shape));
        }
    }
}

#[test]
fn right_branching_closed_form_and_minimum() {
    for n in 1..=10usize {
        let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let y = yngve_score(&fallback_tree(&toks).unwrap());
        assert!((y - (n as f64 - 1.0) / n as f64).abs() < 1e-15, "n={n}");
        if n <= 6 {
            for shape in oracles::all_shapes(n) {
                assert!(oracles::yngve(&shape) >= y - 1e-15);
            }
        }
    }
}

#[test]
fn bin_boundaries_and_grid() {
    use ScoreBin::*;
    let expect = [(0.0, Halve), (0.2, Halve), (0.4, Reduce), (0.6, Increase1), (0.8, Increase2), (1.0, Increase2)];
    for (s, b) in expect {
        assert_eq!(select_bin(s).unwrap(), b, "{s}");
    }
    for k in 0..=10_000 {
        let s = k as f64 / 10_000.0;
        assert_eq!(ScoreBin::ALL.iter().filter(|b| b.interval().contains(s)).count(), 1, "{s}");
    }
    assert!(select_bin(-0.01).is_err());
    assert!(select_bin(1.01).is_err());
}

fn tied_vec() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..30)
        .prop_flat_map(|n| (prop::collection::vec(0u8..6, n), prop::collection::vec(0u8..6, n)))
        .prop_map(|(a, b)| (a.into_iter().map(f64::from).collect(), b.into_iter().map(f64::from).collect()))
}

proptest! {
    #[test]
    fn spearman_is_pearson_on_average_ranks((x, y) in tied_vec()) {
        let want = oracles::spearman(&x, &y);
        match spearman(&x, &y) {
            Ok(got) => prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}"),
            Err(_) => prop_assert!(!want.is_finite()),
        }
    }

    #[test]
    fn tau_with_ties_matches_enumerator((x, y) in tied_vec()) {
        let want = oracles::kendall_tau_b(&x, &y);
        match kendall_tau_b(&x, &y) {
            Ok(got) => prop_assert!((got - want).abs() < 1e-12, "{got} vs {want}"),
            Err(_) => prop_assert!(!want.is_finite()),
        }
    }

    #[test]
    fn tau_is_symmetric_and_bounded((x, y) in tied_vec()) {
        if let (Ok(a), Ok(b)) = (kendall_tau_b(&x, &y), kendall_tau_b(&y, &x)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn yes_probability_is_shift_invariant(v in prop::array::uniform4(-30.0f64..0.0), shift in -50.0f64..50.0) {
        let map = |d: f64| -> LogprobMap {
            ["Yes", "yes", "No", "no"].iter().zip(v).map(|(k, l)| (k.to_string(), l + d)).collect()
        };
        let a = yes_probability(&map(0.0)).unwrap();
        let b = yes_probability(&map(shift)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - oracles::yes_share(&v[..2], &v[2..])).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_is_convex(pairs in prop::collection::vec((0.0f64..=1.0, 0.01f64..20.0), 1..12)) {
        let (s, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = weighted_mean(&s, &w).unwrap();
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= r && r <= hi, "{lo} {r} {hi}");
    }

    #[test]
    fn tree_round_trip_and_relabel(n in 1usize..7, pick in any::<prop::sample::Index>()) {
        let shapes = oracles::all_shapes(n);
        let shape = &shapes[pick.index(shapes.len())];
        let t = parse_bracketed_tree(&oracles::bracketed(shape)).unwrap();
        prop_assert_eq!(parse_bracketed_tree(&t.to_bracketed()).unwrap(), t.clone());
        let r = t.relabel(&|l| format!("{l}-X")).unwrap();
        prop_assert_eq!(yngve_score(&r), yngve_score(&t));
        prop_assert_eq!(r.leaves(), t.leaves());
    }
}
