use std::collections::BTreeMap;
use std::sync::Arc;

use gramprompt::analysis::Group;
use gramprompt::corpus::{Dataset, MinimalPair};
use gramprompt::explain::GrammarExplanation;
use gramprompt::llm::{LlmClient, MockBackend, MockPolicy};
use gramprompt::report::{build_report, load_runs, LoadedRun, ReportError, ReportOptions};
use gramprompt::runner::{execute, run_id, ConditionInputs, RunSpec};
use gramprompt::templates::{ConditionSpec, TemplateSet};

fn corpus(dataset: Dataset, language: &str) -> Vec<MinimalPair> {
    let mut out = Vec::new();
    for (p, category) in [("p0", "agreement"), ("p1", "agreement"), ("p2", "islands")] {
        for i in 0..12 {
            out.push(MinimalPair {
                id: format!("{p}:{i:05}"),
                dataset,
                language: language.into(),
                paradigm: p.into(),
                category: category.into(),
                good: format!("{language} {p} good {i}."),
                bad: format!("{language} {p} bad {i}."),
            });
        }
    }
    out
}

fn populate(dir: &std::path::Path) {
    let templates = TemplateSet::bundled();
    for (dataset, language) in [(Dataset::Blimp, "en"), (Dataset::Sling, "zh")] {
        let pairs = corpus(dataset, language);
        let mut inputs = ConditionInputs::default();
        for p in ["p0", "p1", "p2"] {
            inputs.explanations.insert(p.into(), GrammarExplanation::for_test(p, "A rule."));
        }
        for (model, accuracy) in [("small", 0.6), ("large", 0.9)] {
            for cond in ["base", "gp:gen"] {
                let condition: ConditionSpec = cond.parse().unwrap();
                let spec = RunSpec {
                    run_id: format!("{}__{}", dataset.as_str().to_lowercase(), run_id(model, &condition)),
                    condition,
                    target_model: model.into(),
                    run_seed: 3,
                    corpus_digest: format!("corpus-{language}"),
                    config_fingerprint: "fp".into(),
                    sampling: None,
                    workers: 2,
                };
                let mock = MockBackend::new(MockPolicy::oracle(accuracy, 17), &pairs).unwrap();
                let client = LlmClient::new(Arc::new(mock));
                execute(&pairs, &spec, &inputs, &templates, &client, Some(dir)).unwrap();
            }
        }
    }
}

fn options() -> ReportOptions {
    ReportOptions {
        groups: [("small".to_string(), Group::Slm), ("large".to_string(), Group::Llm)]
            .into_iter()
            .collect(),
        gap: true,
        compare: vec![("gp".into(), "base".into())],
        ..Default::default()
    }
}

/// Dataset average recomputed straight from judgment logs.
fn oracle_average(runs: &[LoadedRun], model: &str, dataset: Dataset, condition: &str) -> f64 {
    let mut by_paradigm: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for run in runs {
        for j in &run.judgments {
            if j.target_model == model && j.dataset == dataset && j.condition.label() == condition {
                let e = by_paradigm.entry((j.category.clone(), j.paradigm.clone())).or_default();
                e.0 += j.correct as usize;
                e.1 += 1;
            }
        }
    }
    let mut by_category: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((cat, _), (c, n)) in by_paradigm {
        by_category.entry(cat).or_default().push(100.0 * c as f64 / n as f64);
    }
    let cats: Vec<f64> = by_category.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    cats.iter().sum::<f64>() / cats.len() as f64
}

#[test]
fn gap_matches_log_oracle_and_order_is_irrelevant() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let runs = load_runs(dir.path()).unwrap();
    assert_eq!(runs.len(), 8);
    let report = build_report(&runs, &options()).unwrap();

    let base_gap = report.gaps.iter().find(|g| g.condition.label() == "base").unwrap();
    let mut expected = Vec::new();
    for (dataset, language) in [(Dataset::Blimp, "en"), (Dataset::Sling, "zh")] {
        let gap = oracle_average(&runs, "large", dataset, "base") - oracle_average(&runs, "small", dataset, "base");
        let got = base_gap.report.languages.iter().find(|l| l.language == language).unwrap();
        assert!((got.gap - gap).abs() < 1e-9);
        expected.push(gap);
    }
    let cross = expected.iter().sum::<f64>() / 2.0;
    assert!((base_gap.report.cross_language_gap - cross).abs() < 1e-9);
    assert_eq!(report.comparisons.len(), 1);

    let mut shuffled = runs.clone();
    shuffled.reverse();
    shuffled.swap(1, 5);
    let again = build_report(&shuffled, &options()).unwrap();
    assert_eq!(report.markdown, again.markdown);
    assert_eq!(report.paradigm_csv, again.paradigm_csv);
    assert_eq!(report.category_csv, again.category_csv);
    assert_eq!(report.dataset_csv, again.dataset_csv);

    let out = tempfile::tempdir().unwrap();
    report.write_to(out.path()).unwrap();
    for f in ["paradigm_scores.csv", "category_scores.csv", "dataset_scores.csv", "report.md"] {
        assert!(out.path().join(f).is_file());
    }
}

#[test]
fn mixed_corpora_need_force() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let mut runs = load_runs(dir.path()).unwrap();
    let i = runs.iter().position(|r| r.judgments[0].dataset == Dataset::Blimp).unwrap();
    runs[i].manifest.corpus_digest = "something-else".into();
    assert!(matches!(build_report(&runs, &options()), Err(ReportError::MixedCorpus { .. })));
    let forced = ReportOptions {
        force_mix: true,
        ..options()
    };
    assert!(build_report(&runs, &forced).is_ok());
}
