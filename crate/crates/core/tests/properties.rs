use proptest::collection::vec;
use proptest::prelude::*;

use rulemine::dataset::{
    evaluate_predicate, interval_predicates, is_ordered_subsequence, Domain, Feature, FeatureKind, FeatureSchema,
    PredicateKind, PredicateMatrix, PredicateRegistry, Sample, SampleRef, Target, Value,
};
use rulemine::mcts::{SearchConfig, Searcher};
use rulemine::ruleeval::{
    body_coverage, dominance_prune, Provenance, RewardMetric, Rule, RuleMetrics, Rulebook, RulebookEntry,
    RulebookMetadata, ScoredRule,
};
use rulemine::Bits;

fn matrix_from(cols: &[Vec<bool>], target: &[bool]) -> PredicateMatrix {
    let kinds = (0..cols.len())
        .map(|i| PredicateKind::Flag { feature: format!("f{i}") })
        .collect();
    let reg = PredicateRegistry::from_kinds(kinds).unwrap();
    PredicateMatrix::from_columns(
        reg,
        cols.iter().map(|c| Bits::from_bools(c.iter().copied())).collect(),
        Bits::from_bools(target.iter().copied()),
        Target::label("1"),
    )
    .unwrap()
}

/// (columns, target) with `p` predicates over `n` samples.
fn arb_matrix(p: usize, n: usize) -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<bool>)> {
    (vec(vec(any::<bool>(), n), p), vec(any::<bool>(), n))
}

fn arb_rule_set() -> impl Strategy<Value = Vec<ScoredRule>> {
    vec(
        (
            proptest::sample::subsequence((0..6usize).collect::<Vec<_>>(), 1..=4),
            0..2usize,
            0u32..=10,
        ),
        0..12,
    )
    .prop_map(|items| {
        items
            .into_iter()
            .map(|(body, t, r)| ScoredRule {
                rule: Rule::new(body, format!("t{t}"), Provenance::Searched),
                metrics: RuleMetrics::from_counts(10, r as usize, 10, 100),
                reward: f64::from(r) / 10.0,
            })
            .collect()
    })
}

fn dominates(a: &ScoredRule, b: &ScoredRule) -> bool {
    a.rule.target == b.rule.target && a.reward >= b.reward && a.rule.body_strict_subset_of(&b.rule)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prune_is_idempotent_and_complete(rules in arb_rule_set()) {
        let once = dominance_prune(rules.clone());
        prop_assert_eq!(dominance_prune(once.clone()), once.clone());
        for b in &once {
            prop_assert!(!once.iter().any(|a| dominates(a, b)));
        }
        for b in &rules {
            if !once.contains(b) {
                prop_assert!(once.iter().any(|a| dominates(a, b)), "{:?} removed without a dominating survivor", b.rule);
            }
        }
    }
}

proptest! {
    #[test]
    fn intervals_partition_the_range(
        min in -100.0f64..100.0,
        width in 0.0f64..50.0,
        cuts in vec(0.0f64..1.0, 0..8),
        probe in 0.0f64..=1.0,
    ) {
        let max = min + width;
        let thresholds: Vec<f64> = cuts.iter().map(|c| min + c * width).collect();
        let preds = interval_predicates("x", min, max, &thresholds);
        let schema = FeatureSchema::new(vec![Feature {
            name: "x".into(),
            kind: FeatureKind::Continuous,
            domain: Domain::Unbounded,
        }])
        .unwrap();
        let x = (min + probe * width).min(max);
        let sample = Sample { values: vec![Value::Num(x)], label: String::new() };
        let hits = preds
            .iter()
            .filter(|p| evaluate_predicate(p, SampleRef::Row { schema: &schema, sample: &sample }).unwrap())
            .count();
        prop_assert_eq!(hits, 1, "value {} in {:?}", x, preds);
    }

    #[test]
    fn patterns_survive_insertions(
        events in vec(0u8..5, 0..10),
        pattern_idx in vec(any::<prop::sample::Index>(), 1..3),
        inserts in vec((any::<prop::sample::Index>(), 0u8..5), 0..5),
    ) {
        prop_assume!(!events.is_empty());
        let to_s = |v: &[u8]| v.iter().map(|e| format!("E{e}")).collect::<Vec<_>>();
        let mut idx: Vec<usize> = pattern_idx.iter().map(|i| i.index(events.len())).collect();
        idx.sort_unstable();
        idx.dedup();
        let pattern: Vec<u8> = idx.iter().map(|&i| events[i]).collect();
        prop_assert!(is_ordered_subsequence(&to_s(&pattern), &to_s(&events)));
        let mut longer = events.clone();
        for (at, e) in inserts {
            let pos = at.index(longer.len() + 1);
            longer.insert(pos, e);
        }
        prop_assert!(is_ordered_subsequence(&to_s(&pattern), &to_s(&longer)));
        prop_assert!(is_ordered_subsequence(&to_s(&pattern[..1]), &to_s(&events)));
    }

    #[test]
    fn coverage_is_anti_monotone((cols, target) in arb_matrix(6, 40), body in proptest::sample::subsequence((0..6usize).collect::<Vec<_>>(), 0..=5), extra in 0..6usize) {
        let m = matrix_from(&cols, &target);
        let small = body_coverage(&body, &m).unwrap();
        let mut bigger = body.clone();
        bigger.push(extra);
        bigger.sort_unstable();
        bigger.dedup();
        let large = body_coverage(&bigger, &m).unwrap();
        prop_assert_eq!(large.and_count(&small), large.count_ones());
    }

    #[test]
    fn precision_times_coverage_is_positives((cols, target) in arb_matrix(4, 60), body in proptest::sample::subsequence((0..4usize).collect::<Vec<_>>(), 1..=3)) {
        let m = matrix_from(&cols, &target);
        let cov = body_coverage(&body, &m).unwrap();
        let metrics = RuleMetrics::from_coverage(&cov, m.target());
        let pos = (0..60).filter(|&i| cov.get(i) && target[i]).count();
        prop_assert_eq!(metrics.positive_count, pos);
        prop_assert_eq!((metrics.precision * metrics.coverage_count as f64).round() as usize, pos);
    }

    #[test]
    fn rulebook_round_trips(rules in arb_rule_set(), reward_pick in 0..3usize) {
        let m = matrix_from(&vec![vec![true; 3]; 6], &[true, false, true]);
        let metric = [RewardMetric::Precision, RewardMetric::F1, RewardMetric::PrecisionPlusRecall][reward_pick];
        let entries: Vec<RulebookEntry> = rules
            .iter()
            .map(|r| RulebookEntry::from_scored(r, &m, metric).unwrap())
            .collect();
        let book = Rulebook::new(RulebookMetadata { notes: vec!["n".into()], ..Default::default() }, entries);
        let text = book.to_text();
        let back = Rulebook::from_text(&text).unwrap();
        prop_assert_eq!(&back, &book);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn visits_are_conserved((cols, target) in arb_matrix(5, 30), rollouts in 1usize..120, seed in any::<u64>()) {
        let m = matrix_from(&cols, &target);
        let cfg = SearchConfig {
            total_rollouts: rollouts,
            max_body_predicates: 3,
            min_support_to_expand: 1,
            rng_seed: seed,
            ..SearchConfig::default()
        };
        let mut s = Searcher::new(&m, cfg).unwrap();
        s.run().unwrap();
        let tree = s.tree();
        prop_assert_eq!(tree.root().visits, rollouts as u64);
        for node in tree.nodes() {
            let child_sum: u64 = node.children.iter().map(|&c| tree.node(c).visits).sum();
            prop_assert!(node.visits >= child_sum);
            if let Some(p) = node.parent {
                prop_assert!(tree.node(p).visits >= node.visits);
            }
        }
    }
}
