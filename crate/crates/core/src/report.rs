//! Turns finished runs into CSV tables and a Markdown report.
//!
//! Output depends only on the judgment logs and manifests (timestamps are
//! left out), so regenerating a report from unchanged runs is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    align, compute_gap, condition_matrix, condition_order, gap_reduction, macro_average,
    paired_comparison, score_judgments, AnalysisError, ConditionMatrix, Flag, GapReport, Group,
    MacroAverage, MatrixCell, PairedComparison, ParadigmScore,
};
use crate::corpus::Dataset;
use crate::runner::{read_judgments, read_manifest, Judgment, RunError, RunManifest};
use crate::templates::{Audience, ConditionKind, ConditionSpec};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no finished runs found under {0}")]
    NoRuns(PathBuf),
    #[error("runs over {dataset} use different corpora ({digests}); pass --force-mix to combine them")]
    MixedCorpus { dataset: Dataset, digests: String },
    #[error("condition selector `{0}` matches no run")]
    UnknownCondition(String),
    #[error("condition selector `{selector}` is ambiguous: {matches}")]
    AmbiguousCondition { selector: String, matches: String },
    #[error("gap report needs SLM/LLM group tags for the target models")]
    NoGroups,
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("cannot write {path}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub judgments: Vec<Judgment>,
}

/// Loads every finished run directory under `runs_dir`, sorted by run id.
/// Unfinished runs are skipped with a warning.
pub fn load_runs(runs_dir: &Path) -> Result<Vec<LoadedRun>, ReportError> {
    let entries = fs::read_dir(runs_dir).map_err(|_| ReportError::NoRuns(runs_dir.to_path_buf()))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    for dir in dirs {
        let manifest = read_manifest(&dir)?;
        let log = dir.join("judgments.jsonl");
        if !manifest.is_finished() || !log.is_file() {
            log::warn!("skipping unfinished run {}", manifest.run_id);
            continue;
        }
        runs.push(LoadedRun {
            judgments: read_judgments(&log)?,
            manifest,
        });
    }
    if runs.is_empty() {
        return Err(ReportError::NoRuns(runs_dir.to_path_buf()));
    }
    Ok(runs)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Target models in display order.
    pub model_order: Vec<String>,
    /// Generator labels in display order.
    pub generator_order: Vec<String>,
    /// SLM/LLM tags; required for the gap section.
    pub groups: BTreeMap<String, Group>,
    pub gap: bool,
    /// Pairs of condition selectors to compare.
    pub compare: Vec<(String, String)>,
    pub force_mix: bool,
}

/// Dataset-level average for one (dataset, model, condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset: Dataset,
    pub language: String,
    pub target_model: String,
    pub condition: ConditionSpec,
    pub macro_average: MacroAverage,
    pub unparse_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionGap {
    pub condition: ConditionSpec,
    pub report: GapReport,
    /// Percent of the base-condition cross-language gap removed; `None` for
    /// the base condition itself or when base is absent.
    pub reduction_vs_base: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub comparison: PairedComparison,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub paradigm_scores: Vec<ParadigmScore>,
    pub dataset_scores: Vec<DatasetScore>,
    pub gaps: Vec<ConditionGap>,
    pub comparisons: Vec<Comparison>,
    pub paradigm_csv: String,
    pub category_csv: String,
    pub dataset_csv: String,
    pub markdown: String,
}

impl ReportBundle {
    /// Writes `paradigm_scores.csv`, `category_scores.csv`,
    /// `dataset_scores.csv` and `report.md` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ReportError> {
        let write = |name: &str, text: &str| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|source| ReportError::Write { path, source })
        };
        fs::create_dir_all(dir).map_err(|source| ReportError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        write("paradigm_scores.csv", &self.paradigm_csv)?;
        write("category_scores.csv", &self.category_csv)?;
        write("dataset_scores.csv", &self.dataset_csv)?;
        write("report.md", &self.markdown)
    }
}

fn check_corpora(runs: &[LoadedRun]) -> Result<(), ReportError> {
    let mut by_dataset: BTreeMap<Dataset, BTreeSet<&str>> = BTreeMap::new();
    for run in runs {
        for dataset in run.judgments.iter().map(|j| j.dataset).collect::<BTreeSet<_>>() {
            by_dataset
                .entry(dataset)
                .or_default()
                .insert(&run.manifest.corpus_digest);
        }
    }
    for (dataset, digests) in by_dataset {
        if digests.len() > 1 {
            let digests = digests.iter().map(|d| &d[..d.len().min(12)]).collect::<Vec<_>>().join(", ");
            return Err(ReportError::MixedCorpus { dataset, digests });
        }
    }
    Ok(())
}

fn order_models(present: impl IntoIterator<Item = String>, preferred: &[String]) -> Vec<String> {
    let present: BTreeSet<String> = present.into_iter().collect();
    let mut out: Vec<String> = preferred.iter().filter(|m| present.contains(*m)).cloned().collect();
    out.extend(present.into_iter().filter(|m| !preferred.contains(m)));
    out
}

/// Resolves a selector (an exact label, or `gpb`, `gpx`, `gpb+cot`,
/// `gpx+cot` for any generator) against the conditions present.
pub fn resolve_condition(selector: &str, present: &[ConditionSpec]) -> Result<ConditionSpec, ReportError> {
    let wildcard = match selector.to_ascii_lowercase().as_str() {
        "gpb" | "gp" => Some((ConditionKind::Gp, Audience::Beginner)),
        "gpx" => Some((ConditionKind::Gp, Audience::Expert)),
        "gpb+cot" | "gp+cot" => Some((ConditionKind::GpCot, Audience::Beginner)),
        "gpx+cot" => Some((ConditionKind::GpCot, Audience::Expert)),
        _ => None,
    };
    let matches: Vec<&ConditionSpec> = match wildcard {
        Some((kind, audience)) => present
            .iter()
            .filter(|c| c.kind == kind && c.audience == Some(audience))
            .collect(),
        None => {
            let label = selector
                .parse::<ConditionSpec>()
                .map(|c| c.label())
                .unwrap_or_else(|_| selector.to_string());
            present.iter().filter(|c| c.label() == label).collect()
        }
    };
    match matches.as_slice() {
        [] => Err(ReportError::UnknownCondition(selector.to_string())),
        [one] => Ok((*one).clone()),
        many => Err(ReportError::AmbiguousCondition {
            selector: selector.to_string(),
            matches: many.iter().map(|c| c.label()).collect::<Vec<_>>().join(", "),
        }),
    }
}

pub fn build_report(runs: &[LoadedRun], options: &ReportOptions) -> Result<ReportBundle, ReportError> {
    if !options.force_mix {
        check_corpora(runs)?;
    }
    let mut sorted: Vec<&LoadedRun> = runs.iter().collect();
    sorted.sort_by(|a, b| a.manifest.run_id.cmp(&b.manifest.run_id));
    let runs: Vec<LoadedRun> = sorted.into_iter().cloned().collect();
    let runs = runs.as_slice();
    let judgments: Vec<Judgment> = runs.iter().flat_map(|r| r.judgments.iter().cloned()).collect();
    let paradigm_scores = score_judgments(&judgments);

    let mut conditions: Vec<ConditionSpec> = Vec::new();
    for j in &judgments {
        if !conditions.iter().any(|c| c.label() == j.condition.label()) {
            conditions.push(j.condition.clone());
        }
    }
    conditions.sort_by(|a, b| condition_order(a, b, &options.generator_order));
    let models = order_models(judgments.iter().map(|j| j.target_model.clone()), &options.model_order);

    let dataset_scores = dataset_scores(&paradigm_scores, &judgments);

    let gaps = if options.gap {
        if options.groups.is_empty() {
            return Err(ReportError::NoGroups);
        }
        gap_section(&dataset_scores, &conditions, &options.groups)?
    } else {
        Vec::new()
    };

    let mut comparisons = Vec::new();
    for (a, b) in &options.compare {
        let ca = resolve_condition(a, &conditions)?;
        let cb = resolve_condition(b, &conditions)?;
        comparisons.push(Comparison {
            a: ca.label(),
            b: cb.label(),
            comparison: compare_conditions(&paradigm_scores, &ca, &cb)?,
        });
    }

    let markdown = render_markdown(
        runs,
        &paradigm_scores,
        &dataset_scores,
        &conditions,
        &models,
        &options.generator_order,
        &gaps,
        &comparisons,
    );
    Ok(ReportBundle {
        paradigm_csv: paradigm_csv(&paradigm_scores),
        category_csv: category_csv(&dataset_scores),
        dataset_csv: dataset_csv(&dataset_scores),
        markdown,
        paradigm_scores,
        dataset_scores,
        gaps,
        comparisons,
    })
}

fn dataset_scores(scores: &[ParadigmScore], judgments: &[Judgment]) -> Vec<DatasetScore> {
    let mut groups: BTreeMap<(Dataset, String, String), Vec<ParadigmScore>> = BTreeMap::new();
    for s in scores {
        groups
            .entry((s.dataset, s.target_model.clone(), s.condition.clone()))
            .or_default()
            .push(s.clone());
    }
    groups
        .into_iter()
        .map(|((dataset, model, label), members)| {
            let condition = judgments
                .iter()
                .find(|j| j.condition.label() == label)
                .map(|j| j.condition.clone())
                .expect("scored condition comes from a judgment");
            let trials: usize = members.iter().map(|m| m.n_trials).sum();
            let unparsed: f64 = members.iter().map(|m| m.unparse_rate * m.n_trials as f64).sum();
            DatasetScore {
                dataset,
                language: members[0].language.clone(),
                target_model: model,
                condition,
                macro_average: macro_average(&members).expect("group is non-empty"),
                unparse_rate: unparsed / trials as f64,
            }
        })
        .collect()
}

fn gap_section(
    scores: &[DatasetScore],
    conditions: &[ConditionSpec],
    groups: &BTreeMap<String, Group>,
) -> Result<Vec<ConditionGap>, ReportError> {
    let mut out: Vec<ConditionGap> = Vec::new();
    for condition in conditions {
        let label = condition.label();
        let averages: Vec<(String, String, f64)> = scores
            .iter()
            .filter(|s| s.condition.label() == label && groups.contains_key(&s.target_model))
            .map(|s| (s.language.clone(), s.target_model.clone(), s.macro_average.dataset_average))
            .collect();
        if averages.is_empty() {
            continue;
        }
        let report = compute_gap(&averages, groups)?;
        out.push(ConditionGap {
            condition: condition.clone(),
            report,
            reduction_vs_base: None,
        });
    }
    let base_gap = out
        .iter()
        .find(|g| g.condition.kind == ConditionKind::Base)
        .map(|g| g.report.cross_language_gap);
    if let Some(base) = base_gap {
        for g in &mut out {
            if g.condition.kind != ConditionKind::Base {
                g.reduction_vs_base = gap_reduction(base, g.report.cross_language_gap).ok();
            }
        }
    }
    Ok(out)
}

/// Pairs category accuracies keyed by (dataset, category, model) between two
/// conditions and runs the paired t-test.
fn compare_conditions(
    scores: &[ParadigmScore],
    a: &ConditionSpec,
    b: &ConditionSpec,
) -> Result<PairedComparison, ReportError> {
    let vector = |c: &ConditionSpec| -> BTreeMap<(Dataset, String, String), f64> {
        let label = c.label();
        let mut grouped: BTreeMap<(Dataset, String), Vec<ParadigmScore>> = BTreeMap::new();
        for s in scores.iter().filter(|s| s.condition == label) {
            grouped
                .entry((s.dataset, s.target_model.clone()))
                .or_default()
                .push(s.clone());
        }
        let mut out = BTreeMap::new();
        for ((dataset, model), members) in grouped {
            let avg = macro_average(&members).expect("non-empty");
            for cat in avg.categories {
                out.insert((dataset, cat.category, model.clone()), cat.accuracy);
            }
        }
        out
    };
    let (va, vb) = align(&vector(a), &vector(b))?;
    Ok(paired_comparison(&va, &vb)?)
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 input")
}

fn paradigm_csv(scores: &[ParadigmScore]) -> String {
    let rows = scores
        .iter()
        .map(|s| {
            vec![
                s.dataset.to_string(),
                s.language.clone(),
                s.target_model.clone(),
                s.condition.clone(),
                s.category.clone(),
                s.paradigm.clone(),
                s.accuracy.to_string(),
                s.n_pairs.to_string(),
                s.n_trials.to_string(),
                s.unparse_rate.to_string(),
            ]
        })
        .collect();
    csv_string(
        &[
            "dataset", "language", "target_model", "condition", "category", "paradigm", "accuracy",
            "n_pairs", "n_trials", "unparse_rate",
        ],
        rows,
    )
}

fn category_csv(scores: &[DatasetScore]) -> String {
    let mut rows = Vec::new();
    for s in scores {
        for c in &s.macro_average.categories {
            rows.push(vec![
                s.dataset.to_string(),
                s.language.clone(),
                s.target_model.clone(),
                s.condition.label(),
                c.category.clone(),
                c.accuracy.to_string(),
                c.paradigm_count.to_string(),
            ]);
        }
    }
    csv_string(
        &["dataset", "language", "target_model", "condition", "category", "accuracy", "paradigm_count"],
        rows,
    )
}

fn dataset_csv(scores: &[DatasetScore]) -> String {
    let rows = scores
        .iter()
        .map(|s| {
            vec![
                s.dataset.to_string(),
                s.language.clone(),
                s.target_model.clone(),
                s.condition.label(),
                s.macro_average.dataset_average.to_string(),
                s.macro_average.categories.len().to_string(),
                s.unparse_rate.to_string(),
            ]
        })
        .collect();
    csv_string(
        &[
            "dataset", "language", "target_model", "condition", "dataset_average", "category_count",
            "unparse_rate",
        ],
        rows,
    )
}

fn fmt_cell(value: Option<f64>, flag: Flag) -> String {
    match value {
        None => "-".into(),
        Some(v) => match flag {
            Flag::Best => format!("**{v:.1}**"),
            Flag::Second => format!("_{v:.1}_"),
            Flag::None => format!("{v:.1}"),
        },
    }
}

fn write_matrix(md: &mut String, first_col: &str, m: &ConditionMatrix, row_labels: &BTreeMap<String, String>) {
    let header: Vec<String> = m.conditions.iter().map(|c| c.label()).collect();
    let _ = writeln!(md, "| {first_col} | {} |", header.join(" | "));
    let _ = writeln!(md, "|---|{}", "---:|".repeat(header.len()));
    for (i, row) in m.rows.iter().enumerate() {
        let label = row_labels.get(row).unwrap_or(row);
        let cells: Vec<String> = m.values[i]
            .iter()
            .zip(&m.flags[i])
            .map(|(v, f)| fmt_cell(*v, *f))
            .collect();
        let _ = writeln!(md, "| {label} | {} |", cells.join(" | "));
    }
    md.push('\n');
}

#[allow(clippy::too_many_arguments)]
fn render_markdown(
    runs: &[LoadedRun],
    paradigm_scores: &[ParadigmScore],
    dataset_scores: &[DatasetScore],
    conditions: &[ConditionSpec],
    models: &[String],
    generator_order: &[String],
    gaps: &[ConditionGap],
    comparisons: &[Comparison],
) -> String {
    let mut md = String::from("# Grammar prompting report\n\n");
    md.push_str("Accuracy is in percent: the mean over three counterbalanced trials per pair, ");
    md.push_str("averaged over paradigms within a category and then over categories. ");
    md.push_str("**Bold** marks the best condition in a row and _italics_ the second best.\n\n");

    let datasets: BTreeSet<Dataset> = dataset_scores.iter().map(|s| s.dataset).collect();
    for dataset in &datasets {
        let _ = writeln!(md, "## {dataset}\n");
        for model in models {
            let mine: Vec<&ParadigmScore> = paradigm_scores
                .iter()
                .filter(|s| s.dataset == *dataset && &s.target_model == model)
                .collect();
            if mine.is_empty() {
                continue;
            }
            let _ = writeln!(md, "### {model}\n");
            let mut cells = Vec::new();
            let mut row_order: Vec<String> = Vec::new();
            let mut labels = BTreeMap::new();
            for ds in dataset_scores
                .iter()
                .filter(|s| s.dataset == *dataset && &s.target_model == model)
            {
                for c in &ds.macro_average.categories {
                    if !row_order.contains(&c.category) {
                        row_order.push(c.category.clone());
                        labels.insert(c.category.clone(), format!("{} ({})", c.category, c.paradigm_count));
                    }
                    cells.push(MatrixCell {
                        row: c.category.clone(),
                        condition: ds.condition.clone(),
                        value: c.accuracy,
                    });
                }
                cells.push(MatrixCell {
                    row: "Average".into(),
                    condition: ds.condition.clone(),
                    value: ds.macro_average.dataset_average,
                });
            }
            row_order.sort();
            row_order.push("Average".into());
            let m = condition_matrix(&cells, &row_order, generator_order);
            write_matrix(&mut md, "category", &m, &labels);
        }

        let _ = writeln!(md, "### Dataset averages\n");
        let cells: Vec<MatrixCell> = dataset_scores
            .iter()
            .filter(|s| s.dataset == *dataset)
            .map(|s| MatrixCell {
                row: s.target_model.clone(),
                condition: s.condition.clone(),
                value: s.macro_average.dataset_average,
            })
            .collect();
        write_matrix(&mut md, "model", &condition_matrix(&cells, models, generator_order), &BTreeMap::new());
    }

    md.push_str("## Unparse rates\n\n");
    md.push_str("Percent of trials with no extractable A/B answer (counted as incorrect above).\n\n");
    let header: Vec<String> = conditions.iter().map(|c| c.label()).collect();
    let _ = writeln!(md, "| dataset | model | {} |", header.join(" | "));
    let _ = writeln!(md, "|---|---|{}", "---:|".repeat(header.len()));
    for dataset in &datasets {
        for model in models {
            let row: Vec<String> = conditions
                .iter()
                .map(|c| {
                    dataset_scores
                        .iter()
                        .find(|s| s.dataset == *dataset && &s.target_model == model && s.condition.label() == c.label())
                        .map(|s| format!("{:.1}", s.unparse_rate))
                        .unwrap_or_else(|| "-".into())
                })
                .collect();
            if row.iter().all(|c| c == "-") {
                continue;
            }
            let _ = writeln!(md, "| {dataset} | {model} | {} |", row.join(" | "));
        }
    }
    md.push('\n');

    if !gaps.is_empty() {
        render_gaps(&mut md, gaps);
    }

    for c in comparisons {
        let p = &c.comparison;
        let opt = |v: Option<f64>, digits: usize| match v {
            Some(v) => format!("{v:.digits$}"),
            None => "undefined".into(),
        };
        let _ = writeln!(md, "## Paired comparison: {} vs {}\n", c.a, c.b);
        md.push_str("Differences are per (dataset, category, model) accuracy, first minus second.\n\n");
        md.push_str("| n | mean diff | sd | t | p (two-sided) | Cohen's d |\n|---:|---:|---:|---:|---:|---:|\n");
        let _ = writeln!(
            md,
            "| {} | {:.2} | {:.2} | {} | {} | {} |\n",
            p.n,
            p.mean_diff,
            p.sd_diff,
            opt(p.t_statistic, 3),
            opt(p.p_value, 4),
            opt(p.cohens_d, 3)
        );
    }

    md.push_str("## Runs\n\n");
    md.push_str("| run | target | condition | pairs | judgments | seed | templates | backend | corpus | config |\n");
    md.push_str("|---|---|---|---:|---:|---:|---|---|---|---|\n");
    for r in runs {
        let m = &r.manifest;
        let backends: Vec<String> = m.backend_kinds.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            m.run_id,
            m.target_models.join(", "),
            m.conditions.iter().map(|c| c.label()).collect::<Vec<_>>().join(", "),
            m.pair_count,
            r.judgments.len(),
            m.run_seed,
            m.template_version,
            backends.join(", "),
            &m.corpus_digest[..m.corpus_digest.len().min(12)],
            &m.config_fingerprint[..m.config_fingerprint.len().min(12)],
        );
    }
    md
}

fn render_gaps(md: &mut String, gaps: &[ConditionGap]) {
    md.push_str("## LLM-SLM gap\n\n");
    md.push_str("Group means are unweighted over models; the gap is LLM minus SLM.\n\n");
    md.push_str("| language | condition | SLM | LLM | gap |\n|---|---|---:|---:|---:|\n");
    let languages: Vec<String> = {
        let mut seen = Vec::new();
        for g in gaps {
            for l in &g.report.languages {
                if !seen.contains(&l.language) {
                    seen.push(l.language.clone());
                }
            }
        }
        seen
    };
    for language in &languages {
        for g in gaps {
            if let Some(l) = g.report.languages.iter().find(|l| &l.language == language) {
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.1} | {:.1} | {:.1} |",
                    language,
                    g.condition.label(),
                    l.slm_avg,
                    l.llm_avg,
                    l.gap
                );
            }
        }
    }
    for g in gaps {
        let _ = writeln!(
            md,
            "| average | {} | {:.1} | {:.1} | {:.1} |",
            g.condition.label(),
            g.report.cross_language_slm,
            g.report.cross_language_llm,
            g.report.cross_language_gap
        );
    }
    md.push('\n');
    let reductions: Vec<&ConditionGap> = gaps.iter().filter(|g| g.reduction_vs_base.is_some()).collect();
    if !reductions.is_empty() {
        md.push_str("| condition | gap reduction vs base |\n|---|---:|\n");
        for g in reductions {
            let _ = writeln!(md, "| {} | {:.1}% [^rounding] |", g.condition.label(), g.reduction_vs_base.unwrap_or_default());
        }
        md.push('\n');
        md.push_str(
            "[^rounding]: Reductions are computed from unrounded gaps. Recomputing them from the \
             rounded gaps shown above can differ by about a point: a gap falling from 13.0 to 5.8 \
             is a 55.4% reduction on the displayed values, while the unrounded gaps behind those \
             figures can give 56%.\n\n",
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selectors() {
        let present: Vec<ConditionSpec> = ["base", "gp:son", "gpx:son", "gp:o1"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(resolve_condition("gpx", &present).unwrap().label(), "gpx:son");
        assert_eq!(resolve_condition("gp:o1", &present).unwrap().label(), "gp:o1");
        assert!(matches!(
            resolve_condition("gpb", &present),
            Err(ReportError::AmbiguousCondition { .. })
        ));
        assert!(matches!(
            resolve_condition("cot", &present),
            Err(ReportError::UnknownCondition(_))
        ));
    }

    #[test]
    fn flagged_cells() {
        assert_eq!(fmt_cell(Some(78.44), Flag::Best), "**78.4**");
        assert_eq!(fmt_cell(Some(77.86), Flag::Second), "_77.9_");
        assert_eq!(fmt_cell(None, Flag::None), "-");
    }
}
