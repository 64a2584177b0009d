//! Row × condition tables with best / second-best flags per row.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::templates::{Audience, ConditionKind, ConditionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    None,
    Best,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: String,
    pub condition: ConditionSpec,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMatrix {
    pub rows: Vec<String>,
    pub conditions: Vec<ConditionSpec>,
    /// `values[row][condition]`; `None` where no run exists.
    pub values: Vec<Vec<Option<f64>>>,
    pub flags: Vec<Vec<Flag>>,
}

fn kind_rank(kind: ConditionKind) -> u8 {
    match kind {
        ConditionKind::Base => 0,
        ConditionKind::Cot => 1,
        ConditionKind::Gp => 2,
        ConditionKind::GpCot => 3,
        ConditionKind::Control => 4,
        ConditionKind::Textbook => 5,
        ConditionKind::FewShot => 6,
    }
}

/// Canonical column order: base, CoT, GP, GP+CoT, control, textbook,
/// few-shot. GP columns put beginner before expert, then follow
/// `generator_order`; unknown generators sort after known ones by name.
pub fn condition_order(a: &ConditionSpec, b: &ConditionSpec, generator_order: &[String]) -> Ordering {
    let gen_rank = |c: &ConditionSpec| {
        let g = c.explanation_source.as_deref().unwrap_or_default();
        let pos = generator_order.iter().position(|x| x == g).unwrap_or(usize::MAX);
        (pos, g.to_string())
    };
    let audience_rank = |c: &ConditionSpec| match c.audience {
        Some(Audience::Expert) => 1,
        _ => 0,
    };
    kind_rank(a.kind)
        .cmp(&kind_rank(b.kind))
        .then_with(|| audience_rank(a).cmp(&audience_rank(b)))
        .then_with(|| gen_rank(a).cmp(&gen_rank(b)))
        .then_with(|| a.shots.cmp(&b.shots))
}

/// Lays `cells` out as a table. Rows follow `row_order`, with rows missing
/// from it appended by name. Within each row the highest value is flagged
/// best and the next distinct value second; ties share a flag.
pub fn condition_matrix(cells: &[MatrixCell], row_order: &[String], generator_order: &[String]) -> ConditionMatrix {
    let mut rows: Vec<String> = row_order
        .iter()
        .filter(|r| cells.iter().any(|c| &c.row == *r))
        .cloned()
        .collect();
    let mut extra: Vec<String> = cells
        .iter()
        .map(|c| c.row.clone())
        .filter(|r| !row_order.contains(r))
        .collect();
    extra.sort();
    extra.dedup();
    rows.extend(extra);

    let mut conditions: Vec<ConditionSpec> = Vec::new();
    for c in cells {
        if !conditions.iter().any(|x| x.label() == c.condition.label()) {
            conditions.push(c.condition.clone());
        }
    }
    conditions.sort_by(|a, b| condition_order(a, b, generator_order));

    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|row| {
            conditions
                .iter()
                .map(|cond| {
                    let label = cond.label();
                    cells
                        .iter()
                        .find(|c| &c.row == row && c.condition.label() == label)
                        .map(|c| c.value)
                })
                .collect()
        })
        .collect();
    let flags = values.iter().map(|row| flag_row(row)).collect();
    ConditionMatrix {
        rows,
        conditions,
        values,
        flags,
    }
}

fn flag_row(row: &[Option<f64>]) -> Vec<Flag> {
    let mut distinct: Vec<f64> = row.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let best = distinct.first().copied();
    let second = distinct.get(1).copied();
    row.iter()
        .map(|v| match v {
            Some(v) if Some(*v) == best => Flag::Best,
            Some(v) if Some(*v) == second => Flag::Second,
            _ => Flag::None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(row: &str, cond: &str, value: f64) -> MatrixCell {
        MatrixCell {
            row: row.into(),
            condition: cond.parse().unwrap(),
            value,
        }
    }

    #[test]
    fn single_condition_is_best() {
        let m = condition_matrix(&[cell("m", "base", 50.0)], &[], &[]);
        assert_eq!(m.flags, vec![vec![Flag::Best]]);
    }

    #[test]
    fn canonical_column_order() {
        let cells = [
            cell("m", "gp+cot:o1", 1.0),
            cell("m", "gpx:son", 1.0),
            cell("m", "gp:o1", 1.0),
            cell("m", "cot", 1.0),
            cell("m", "gp:son", 1.0),
            cell("m", "base", 1.0),
            cell("m", "fewshot3", 1.0),
            cell("m", "gp+cot:son", 1.0),
        ];
        let m = condition_matrix(&cells, &[], &["son".into(), "o1".into()]);
        let labels: Vec<String> = m.conditions.iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            ["base", "cot", "gp:son", "gp:o1", "gpx:son", "gp+cot:son", "gp+cot:o1", "fewshot3"]
        );
    }

    #[test]
    fn ties_share_flags() {
        let row = [Some(3.0), Some(5.0), None, Some(5.0), Some(4.0)];
        assert_eq!(
            flag_row(&row),
            vec![Flag::None, Flag::Best, Flag::None, Flag::Best, Flag::Second]
        );
    }
}
