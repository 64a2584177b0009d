use std::sync::Arc;

use gramprompt::corpus::{Dataset, MinimalPair};
use gramprompt::llm::{LlmClient, MockBackend, MockPolicy, ReplayBackend};
use gramprompt::runner::{
    execute, judgments_to_jsonl, plan_trials, read_judgments, read_manifest, run_id, Choice,
    ConditionInputs, RunError, RunSpec,
};
use gramprompt::templates::{ConditionSpec, Order, TemplateSet};
use proptest::prelude::*;

fn slice(n: usize) -> Vec<MinimalPair> {
    (0..n)
        .map(|i| MinimalPair {
            id: format!("agr:{i:05}"),
            dataset: Dataset::Blimp,
            language: "en".into(),
            paradigm: format!("agr_{}", i % 2),
            category: "agreement".into(),
            good: format!("Pair {i} dogs bark."),
            bad: format!("Pair {i} dogs barks."),
        })
        .collect()
}

fn spec(condition: ConditionSpec, seed: u64) -> RunSpec {
    RunSpec {
        run_id: run_id("mock", &condition),
        condition,
        target_model: "mock".into(),
        run_seed: seed,
        corpus_digest: "d".into(),
        config_fingerprint: "f".into(),
        sampling: None,
        workers: 4,
    }
}

proptest! {
    #[test]
    fn every_pair_sees_both_orders(id in "[a-z_]{1,12}:[0-9]{1,5}", seed in any::<u64>()) {
        let mut p = slice(1).remove(0);
        p.id = id;
        let plans = plan_trials(&p, seed);
        prop_assert!(plans.iter().any(|t| t.order == Order::GoodFirst));
        prop_assert!(plans.iter().any(|t| t.order == Order::BadFirst));
        prop_assert_eq!(plans.map(|t| t.trial_index), [1, 2, 3]);
    }

    #[test]
    fn grading_matches_truth_table(a in any::<bool>(), good_first in any::<bool>()) {
        let choice = if a { Choice::A } else { Choice::B };
        let order = if good_first { Order::GoodFirst } else { Order::BadFirst };
        prop_assert_eq!(choice.is_correct(order), a == good_first);
        prop_assert!(!Choice::Unparseable.is_correct(order));
    }
}

#[test]
fn fifty_pairs_give_150_judgments() {
    let pairs = slice(50);
    let client = LlmClient::new(Arc::new(MockBackend::new(MockPolicy::oracle(0.8, 1), &pairs).unwrap()));
    let out = execute(&pairs, &spec(ConditionSpec::base(), 9), &ConditionInputs::default(), &TemplateSet::bundled(), &client, None)
        .unwrap();
    assert_eq!(out.judgments.len(), 150);
    assert!(out.judgments.iter().all(|j| j.run_id == out.manifest.run_id));
    assert_eq!(out.manifest.judgment_count, Some(150));
}

#[test]
fn oracle_runs_are_pure_in_seed() {
    let pairs = slice(30);
    let run = |seed: u64| {
        let client = LlmClient::new(Arc::new(MockBackend::new(MockPolicy::oracle(0.6, 4), &pairs).unwrap()));
        let out = execute(&pairs, &spec(ConditionSpec::cot(), seed), &ConditionInputs::default(), &TemplateSet::bundled(), &client, None)
            .unwrap();
        judgments_to_jsonl(&out.judgments)
    };
    assert_eq!(run(11), run(11));
}

#[test]
fn replay_is_offline_and_identical() {
    let pairs = slice(20);
    let runs = tempfile::tempdir().unwrap();
    let live = LlmClient::new(Arc::new(MockBackend::new(MockPolicy::oracle(0.7, 2), &pairs).unwrap()));
    let recorded = execute(&pairs, &spec(ConditionSpec::base(), 5), &ConditionInputs::default(), &TemplateSet::bundled(), &live, Some(runs.path()))
        .unwrap();
    let id = recorded.manifest.run_id.clone();
    assert_eq!(read_manifest(&runs.path().join(&id)).unwrap().judgment_count, Some(60));

    let replay_backend = ReplayBackend::load(&runs.path().join(&id).join("transcript.jsonl")).unwrap();
    assert_eq!(replay_backend.len(), 60);
    let replay = LlmClient::new(Arc::new(replay_backend));
    let replayed = execute(&pairs, &spec(ConditionSpec::base(), 5), &ConditionInputs::default(), &TemplateSet::bundled(), &replay, None)
        .unwrap();
    assert_eq!(judgments_to_jsonl(&recorded.judgments), judgments_to_jsonl(&replayed.judgments));
    let on_disk = read_judgments(&runs.path().join(&id).join("judgments.jsonl")).unwrap();
    assert_eq!(on_disk, recorded.judgments);

    // A different seed reorders trial 3 for some pairs, so replay misses.
    let miss = execute(&pairs, &spec(ConditionSpec::base(), 6), &ConditionInputs::default(), &TemplateSet::bundled(), &replay, None);
    assert!(matches!(miss, Err(RunError::Backend(_))));
}

#[test]
fn finished_run_is_not_rewritten() {
    let pairs = slice(4);
    let runs = tempfile::tempdir().unwrap();
    let client = LlmClient::new(Arc::new(MockBackend::new(MockPolicy::always("B"), &pairs).unwrap()));
    let s = spec(ConditionSpec::base(), 1);
    execute(&pairs, &s, &ConditionInputs::default(), &TemplateSet::bundled(), &client, Some(runs.path())).unwrap();
    let path = runs.path().join(&s.run_id).join("judgments.jsonl");
    let before = std::fs::read(&path).unwrap();
    let again = execute(&pairs, &s, &ConditionInputs::default(), &TemplateSet::bundled(), &client, Some(runs.path()));
    assert!(matches!(again, Err(RunError::AlreadyFinished(_))));
    assert_eq!(std::fs::read(&path).unwrap(), before);
}
