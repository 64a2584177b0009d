//! Accuracy rollups, SLM/LLM gaps and paired condition comparisons.
//!
//! Everything here works on unrounded values; rounding to one decimal place
//! happens only when a report is rendered.

mod matrix;
pub mod stats;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::runner::{Choice, Judgment};

pub use matrix::{condition_matrix, condition_order, ConditionMatrix, Flag, MatrixCell};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no judgments to score")]
    EmptyJudgmentSet,
    #[error("judgments mix {0}")]
    MixedGroup(String),
    #[error("no {group} model has a score for language `{language}`")]
    MissingGroup { language: String, group: Group },
    #[error("vectors differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("paired comparison needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("baseline gap must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmScore {
    pub paradigm: String,
    pub category: String,
    pub dataset: Dataset,
    pub language: String,
    /// Condition label, e.g. `gp+cot:o1`.
    pub condition: String,
    pub target_model: String,
    /// Percent of trials answered correctly; unparseable answers count as wrong.
    pub accuracy: f64,
    pub n_pairs: usize,
    pub n_trials: usize,
    pub unparse_rate: f64,
}

/// Scores one (paradigm, condition, model) group of judgments.
pub fn score_paradigm(judgments: &[Judgment]) -> Result<ParadigmScore, AnalysisError> {
    let first = judgments.first().ok_or(AnalysisError::EmptyJudgmentSet)?;
    let condition = first.condition.label();
    for j in judgments {
        if j.paradigm != first.paradigm || j.dataset != first.dataset {
            return Err(AnalysisError::MixedGroup("paradigms".into()));
        }
        if j.target_model != first.target_model {
            return Err(AnalysisError::MixedGroup("target models".into()));
        }
        if j.condition.label() != condition {
            return Err(AnalysisError::MixedGroup("conditions".into()));
        }
    }
    let n = judgments.len();
    let correct = judgments.iter().filter(|j| j.correct).count();
    let unparsed = judgments.iter().filter(|j| j.choice == Choice::Unparseable).count();
    let mut pair_ids: Vec<&str> = judgments.iter().map(|j| j.pair_id.as_str()).collect();
    pair_ids.sort_unstable();
    pair_ids.dedup();
    Ok(ParadigmScore {
        paradigm: first.paradigm.clone(),
        category: first.category.clone(),
        dataset: first.dataset,
        language: first.language.clone(),
        condition,
        target_model: first.target_model.clone(),
        accuracy: 100.0 * correct as f64 / n as f64,
        n_pairs: pair_ids.len(),
        n_trials: n,
        unparse_rate: 100.0 * unparsed as f64 / n as f64,
    })
}

/// Splits judgments by (model, condition, dataset, paradigm) and scores each
/// group, returning scores in that sort order.
pub fn score_judgments(judgments: &[Judgment]) -> Vec<ParadigmScore> {
    let mut groups: BTreeMap<(String, String, Dataset, String), Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        groups
            .entry((j.target_model.clone(), j.condition.label(), j.dataset, j.paradigm.clone()))
            .or_default()
            .push(j.clone());
    }
    groups
        .values()
        .map(|g| score_paradigm(g).expect("groups are non-empty and homogeneous"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    /// Unweighted mean of the category's paradigm accuracies.
    pub accuracy: f64,
    pub paradigm_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    /// In order of first appearance.
    pub categories: Vec<CategoryScore>,
    /// Unweighted mean over categories.
    pub dataset_average: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Macro-averages (category, paradigm accuracy) items: paradigms are averaged
/// within each category, then categories are averaged with equal weight.
pub fn macro_average_values<'a>(
    items: impl IntoIterator<Item = (&'a str, f64)>,
) -> Option<MacroAverage> {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<f64>> = HashMap::new();
    for (category, accuracy) in items {
        members
            .entry(category)
            .or_insert_with(|| {
                order.push(category);
                Vec::new()
            })
            .push(accuracy);
    }
    if order.is_empty() {
        return None;
    }
    let categories: Vec<CategoryScore> = order
        .iter()
        .map(|c| CategoryScore {
            category: c.to_string(),
            accuracy: mean(&members[c]),
            paradigm_count: members[c].len(),
        })
        .collect();
    let dataset_average = dataset_average(&categories);
    Some(MacroAverage {
        categories,
        dataset_average,
    })
}

/// Macro-average of paradigm scores that share one (model, condition, dataset).
pub fn macro_average(scores: &[ParadigmScore]) -> Option<MacroAverage> {
    macro_average_values(scores.iter().map(|s| (s.category.as_str(), s.accuracy)))
}

/// Unweighted mean over category accuracies.
pub fn dataset_average(categories: &[CategoryScore]) -> f64 {
    mean(&categories.iter().map(|c| c.accuracy).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Group {
    #[serde(alias = "slm")]
    Slm,
    #[serde(alias = "llm")]
    Llm,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Slm => "SLM",
            Group::Llm => "LLM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageGap {
    pub language: String,
    pub slm_avg: f64,
    pub llm_avg: f64,
    /// llm_avg − slm_avg
    pub gap: f64,
    pub slm_models: Vec<String>,
    pub llm_models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub languages: Vec<LanguageGap>,
    /// Mean of the per-language SLM averages.
    pub cross_language_slm: f64,
    /// Mean of the per-language LLM averages.
    pub cross_language_llm: f64,
    /// Mean of the per-language gaps.
    pub cross_language_gap: f64,
    pub groups: BTreeMap<String, Group>,
}

/// Per-language LLM−SLM gaps from (language, model, dataset average) triples.
///
/// Languages keep their order of first appearance; models without a group
/// are ignored. Group means are unweighted over models.
pub fn compute_gap(
    dataset_averages: &[(String, String, f64)],
    groups: &BTreeMap<String, Group>,
) -> Result<GapReport, AnalysisError> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_lang: HashMap<&str, Vec<(&str, Group, f64)>> = HashMap::new();
    for (language, model, avg) in dataset_averages {
        let entry = by_lang.entry(language.as_str()).or_insert_with(|| {
            order.push(language.as_str());
            Vec::new()
        });
        match groups.get(model) {
            Some(g) => entry.push((model.as_str(), *g, *avg)),
            None => log::warn!("model `{model}` has no SLM/LLM group; left out of the gap"),
        }
    }
    let mut languages = Vec::with_capacity(order.len());
    for language in order {
        let rows = &by_lang[language];
        let side = |group: Group| -> Result<(f64, Vec<String>), AnalysisError> {
            let picked: Vec<&(&str, Group, f64)> = rows.iter().filter(|r| r.1 == group).collect();
            if picked.is_empty() {
                return Err(AnalysisError::MissingGroup {
                    language: language.to_string(),
                    group,
                });
            }
            let values: Vec<f64> = picked.iter().map(|r| r.2).collect();
            Ok((mean(&values), picked.iter().map(|r| r.0.to_string()).collect()))
        };
        let (slm_avg, slm_models) = side(Group::Slm)?;
        let (llm_avg, llm_models) = side(Group::Llm)?;
        languages.push(LanguageGap {
            language: language.to_string(),
            slm_avg,
            llm_avg,
            gap: llm_avg - slm_avg,
            slm_models,
            llm_models,
        });
    }
    let across = |f: fn(&LanguageGap) -> f64| mean(&languages.iter().map(f).collect::<Vec<_>>());
    Ok(GapReport {
        cross_language_slm: across(|l| l.slm_avg),
        cross_language_llm: across(|l| l.llm_avg),
        cross_language_gap: across(|l| l.gap),
        languages,
        groups: groups.clone(),
    })
}

/// Percent of the baseline gap closed by the treatment.
pub fn gap_reduction(baseline_gap: f64, treated_gap: f64) -> Result<f64, AnalysisError> {
    if !(baseline_gap > 0.0) {
        return Err(AnalysisError::NonPositiveBaseline(baseline_gap));
    }
    Ok(100.0 * (baseline_gap - treated_gap) / baseline_gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub n: usize,
    pub mean_diff: f64,
    /// Sample standard deviation of the differences (n − 1 denominator).
    pub sd_diff: f64,
    /// `None` when sd_diff is zero.
    pub t_statistic: Option<f64>,
    /// Two-sided, n − 1 degrees of freedom; `None` when sd_diff is zero.
    pub p_value: Option<f64>,
    /// mean_diff / sd_diff; `None` (undefined) when sd_diff is zero.
    pub cohens_d: Option<f64>,
}

/// Paired t-test on a_i − b_i.
pub fn paired_comparison(a: &[f64], b: &[f64]) -> Result<PairedComparison, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&diffs);
    let ss: f64 = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum();
    let sd_diff = (ss / (n - 1) as f64).sqrt();
    let (t_statistic, p_value, cohens_d) = if sd_diff > 0.0 {
        let t = mean_diff / (sd_diff / (n as f64).sqrt());
        (
            Some(t),
            Some(stats::t_two_sided_p(t, (n - 1) as f64)),
            Some(mean_diff / sd_diff),
        )
    } else {
        (None, None, None)
    };
    Ok(PairedComparison {
        n,
        mean_diff,
        sd_diff,
        t_statistic,
        p_value,
        cohens_d,
    })
}

/// Pairs two keyed score maps. Both must cover exactly the same keys.
pub fn align<K: Ord + Clone>(
    a: &BTreeMap<K, f64>,
    b: &BTreeMap<K, f64>,
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        return Err(AnalysisError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    Ok((a.values().copied().collect(), a.keys().map(|k| b[k]).collect()))
}

/// Rounds for display: one decimal place, half away from zero.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
