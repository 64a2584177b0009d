//! Corpora loaded from a config, with their evaluation slices and the
//! held-out pairs used as instruction examples and few-shot shots.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{anyhow, Context};
use gramprompt::corpus::{
    filter_challenging, ingest, select_slice, tail_pairs, CorpusManifest, Dataset, MinimalPair,
};
use gramprompt::templates::{ConditionKind, ConditionSpec, DEFAULT_SHOTS};

use crate::config::{ParadigmSelection, RunConfig};
use crate::error::CliError;

/// Number of sentences per paradigm used as instruction reference examples.
pub const REFERENCE_EXAMPLES: usize = 3;

pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub pairs: Vec<MinimalPair>,
    /// Selected paradigms in corpus order.
    pub selected: Vec<String>,
    pub slice: Vec<MinimalPair>,
    /// paradigm → last `held_out` pairs, excluded from the slice.
    pub held_out: BTreeMap<String, Vec<MinimalPair>>,
}

impl LoadedCorpus {
    pub fn dataset(&self) -> Dataset {
        self.manifest.dataset
    }

    pub fn all_paradigms(&self) -> Vec<String> {
        self.manifest.paradigms.iter().map(|p| p.name.clone()).collect()
    }

    pub fn language(&self) -> &str {
        self.pairs.first().map(|p| p.language.as_str()).unwrap_or("en")
    }

    pub fn references(&self, paradigm: &str) -> Vec<MinimalPair> {
        let held = &self.held_out[paradigm];
        held[held.len().saturating_sub(REFERENCE_EXAMPLES)..].to_vec()
    }

    /// Pairs of `paradigm` that may appear in evaluation prompts.
    pub fn evaluation_pool(&self, paradigm: &str) -> Vec<MinimalPair> {
        let held: BTreeSet<&str> = self.held_out[paradigm].iter().map(|p| p.id.as_str()).collect();
        self.pairs
            .iter()
            .filter(|p| p.paradigm == paradigm && !held.contains(p.id.as_str()))
            .cloned()
            .collect()
    }
}

/// Pairs held out per paradigm: enough for the largest few-shot condition and
/// never fewer than the instruction needs.
pub fn held_out_count(conditions: &[ConditionSpec]) -> usize {
    conditions
        .iter()
        .filter(|c| c.kind == ConditionKind::FewShot)
        .map(|c| c.shots.unwrap_or(DEFAULT_SHOTS) as usize)
        .chain([DEFAULT_SHOTS as usize, REFERENCE_EXAMPLES])
        .max()
        .unwrap_or(REFERENCE_EXAMPLES)
}

fn baseline_selection(cfg: &RunConfig) -> Result<Option<Vec<String>>, CliError> {
    match &cfg.paradigms {
        None => Ok(None),
        Some(ParadigmSelection::List(names)) => Ok(Some(names.clone())),
        Some(ParadigmSelection::Challenging {
            baseline_scores,
            threshold,
            mode,
        }) => {
            let text = std::fs::read_to_string(baseline_scores)
                .with_context(|| format!("cannot read baseline scores {}", baseline_scores.display()))
                .map_err(CliError::usage)?;
            let scores: BTreeMap<String, f64> = serde_json::from_str(&text)
                .with_context(|| format!("{} must map paradigm names to accuracies", baseline_scores.display()))
                .map_err(CliError::usage)?;
            Ok(Some(filter_challenging(&scores, *threshold, (*mode).into())))
        }
    }
}

pub fn load_corpora(cfg: &RunConfig, conditions: &[ConditionSpec]) -> Result<Vec<LoadedCorpus>, CliError> {
    if cfg.corpora.is_empty() {
        return Err(CliError::usage(anyhow!("the config lists no corpora")));
    }
    let wanted = baseline_selection(cfg)?;
    let held = held_out_count(conditions);
    let mut out = Vec::new();
    let mut matched: BTreeSet<String> = BTreeSet::new();
    for source in &cfg.corpora {
        let ingested = ingest(&source.path, source.source_format()?)?;
        for r in &ingested.rejected {
            log::warn!("rejected record {r}");
        }
        let all: Vec<String> = ingested.manifest.paradigms.iter().map(|p| p.name.clone()).collect();
        let selected: Vec<String> = match &wanted {
            None => all.clone(),
            Some(names) => all.iter().filter(|n| names.contains(n)).cloned().collect(),
        };
        matched.extend(selected.iter().cloned());
        let mut held_out = BTreeMap::new();
        for name in &all {
            held_out.insert(name.clone(), tail_pairs(&ingested.pairs, name, held));
        }
        let mut corpus = LoadedCorpus {
            manifest: ingested.manifest,
            pairs: ingested.pairs,
            selected,
            slice: Vec::new(),
            held_out,
        };
        let mut pool = Vec::new();
        for name in &corpus.selected {
            let eval = corpus.evaluation_pool(name);
            if eval.is_empty() {
                return Err(CliError::data(anyhow!(
                    "paradigm `{name}` has no pairs left after holding out {held} for examples"
                )));
            }
            pool.extend(eval);
        }
        if !corpus.selected.is_empty() {
            let slice = select_slice(&pool, &corpus.selected, cfg.per_paradigm_n)?;
            for w in &slice.warnings {
                log::warn!("{}: {w}", corpus.dataset());
            }
            corpus.slice = slice.pairs;
        }
        out.push(corpus);
    }
    if let Some(ParadigmSelection::List(names)) = &cfg.paradigms {
        if let Some(missing) = names.iter().find(|n| !matched.contains(*n)) {
            return Err(gramprompt::corpus::CorpusError::UnknownParadigm(missing.clone()).into());
        }
    }
    Ok(out)
}
