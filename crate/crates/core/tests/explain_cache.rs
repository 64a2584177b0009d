use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use gramprompt::corpus::{Dataset, MinimalPair};
use gramprompt::explain::{
    check_hygiene, export_explanations, generate_explanation, import_explanations, instruction_for,
    ExplanationCache, GenerationSettings, GrammarExplanation,
};
use gramprompt::llm::{BackendError, BackendKind, ChatBackend, ChatRequest, LlmClient};
use gramprompt::templates::{Audience, TemplateSet};
use proptest::prelude::*;

struct Counting {
    calls: AtomicUsize,
}

impl ChatBackend for Counting {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_millis(5));
        Ok(format!("Explanation {n} for {}.", request.model_label))
    }
}

fn pairs(paradigm: &str, n: usize) -> Vec<MinimalPair> {
    (0..n)
        .map(|i| MinimalPair {
            id: format!("{paradigm}:{i:05}"),
            dataset: Dataset::Blimp,
            language: "en".into(),
            paradigm: paradigm.into(),
            category: "c".into(),
            good: format!("The {i} cats sleep soundly."),
            bad: format!("The {i} cats sleeps soundly."),
        })
        .collect()
}

fn counting_client() -> (Arc<Counting>, LlmClient) {
    let backend = Arc::new(Counting {
        calls: AtomicUsize::new(0),
    });
    (backend.clone(), LlmClient::new(backend))
}

#[test]
fn one_call_per_key_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ExplanationCache::open(dir.path()).unwrap();
    let templates = TemplateSet::bundled();
    let (backend, client) = counting_client();
    let reference = pairs("wh_island", 3);
    let spec = instruction_for(&templates, "wh_island", "en", Audience::Beginner, &reference, 250);
    let texts: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                s.spawn(|| {
                    generate_explanation(
                        &client,
                        &cache,
                        &templates,
                        &spec,
                        (Dataset::Blimp, "wh_island"),
                        "son",
                        GenerationSettings::default(),
                    )
                    .unwrap()
                    .explanation
                    .text
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    assert!(texts.iter().all(|t| t == &texts[0]));
}

#[test]
fn audiences_and_generators_get_separate_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ExplanationCache::open(dir.path()).unwrap();
    let templates = TemplateSet::bundled();
    let (backend, client) = counting_client();
    let reference = pairs("wh_island", 3);
    for generator in ["son", "o1"] {
        for audience in [Audience::Beginner, Audience::Expert] {
            let spec = instruction_for(&templates, "wh_island", "en", audience, &reference, 250);
            generate_explanation(&client, &cache, &templates, &spec, (Dataset::Blimp, "wh_island"), generator, GenerationSettings::default())
                .unwrap();
        }
    }
    let keys: BTreeSet<String> = cache.entries().unwrap().into_iter().map(|e| e.cache_key).collect();
    assert_eq!(keys.len(), 4);
    assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn template_edit_changes_cache_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("instruction.txt"), "Explain {paradigm} in {language}.\n{examples}\n").unwrap();
    let custom = TemplateSet::from_dir(dir.path()).unwrap();
    let bundled = TemplateSet::bundled();
    assert_ne!(custom.version(), bundled.version());
    let cache_dir = tempfile::tempdir().unwrap();
    let cache = ExplanationCache::open(cache_dir.path()).unwrap();
    let (_, client) = counting_client();
    let reference = pairs("wh_island", 3);
    let mut keys = BTreeSet::new();
    for t in [&bundled, &custom] {
        let spec = instruction_for(t, "wh_island", "en", Audience::Beginner, &reference, 250);
        let g = generate_explanation(&client, &cache, t, &spec, (Dataset::Blimp, "wh_island"), "son", GenerationSettings::default())
            .unwrap();
        assert!(g.fetched);
        keys.insert(g.explanation.cache_key);
    }
    assert_eq!(keys.len(), 2);
}

#[test]
fn export_import_export_is_byte_identical() {
    let src_dir = tempfile::tempdir().unwrap();
    let src = ExplanationCache::open(src_dir.path()).unwrap();
    for i in 0..5 {
        src.put(&GrammarExplanation::for_test(&format!("paradigm_{i}"), &format!("Rule {i}.\nSecond line.")))
            .unwrap();
    }
    let mut first = Vec::new();
    assert_eq!(export_explanations(&src, &mut first).unwrap(), 5);
    let archive = src_dir.path().join("archive.jsonl.out");
    std::fs::write(&archive, &first).unwrap();

    let dst_dir = tempfile::tempdir().unwrap();
    let dst = ExplanationCache::open(dst_dir.path()).unwrap();
    assert_eq!(import_explanations(&dst, &archive).unwrap(), 5);
    let mut second = Vec::new();
    export_explanations(&dst, &mut second).unwrap();
    assert_eq!(first, second);
    // Importing again collides and writes nothing.
    assert!(import_explanations(&dst, &archive).is_err());
    assert_eq!(dst.entries().unwrap().len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn injected_sentences_are_all_found(
        n in 1usize..20,
        picks in prop::collection::btree_set(0usize..40, 0..10),
    ) {
        let ps = pairs("agreement", n);
        let sentences: Vec<&String> = ps.iter().flat_map(|p| [&p.good, &p.bad]).collect();
        let chosen: Vec<&String> = picks.iter().filter(|&&i| i < sentences.len()).map(|&i| sentences[i]).collect();
        let mut text = String::from("Subjects and verbs agree in number.");
        for s in &chosen {
            text.push_str("\nFor example:  ");
            text.push_str(&s.replace(' ', "  "));
        }
        let e = GrammarExplanation::for_test("agreement", &text);
        let report = check_hygiene(&e, &ps);
        let found: BTreeSet<&String> = report.leaked_sentences.iter().collect();
        let expected: BTreeSet<&String> = chosen.iter().copied().collect();
        prop_assert_eq!(found, expected);
        prop_assert_eq!(report.passed, chosen.is_empty());
    }
}
