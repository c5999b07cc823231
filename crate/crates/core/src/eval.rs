//! Filtered ranking of hard answers, MRR, and per-type report tables.
//!
//! Candidate lists are ranked in backend output order. A hard answer missing
//! from the list is ABSENT and scores 0 unless the worst-case policy is
//! selected, in which case it is placed after every non-filtered entity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::kg::EntityId;
use crate::query::QueryType;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("duplicate candidate {0}")]
    DuplicateCandidate(EntityId),
    #[error("target {0} is also listed as an easy or other hard answer")]
    TargetFiltered(EntityId),
    #[error("no rank records")]
    Empty,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Rank {
    At(usize),
    Absent,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum AbsentPolicy {
    #[default]
    Zero,
    WorstCase,
}

impl AbsentPolicy {
    pub fn describe(self) -> &'static str {
        match self {
            Self::Zero => "absent hard answers contribute 0",
            Self::WorstCase => "absent hard answers take the worst possible filtered rank",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankRecord {
    pub query_id: String,
    pub answer: EntityId,
    pub rank: Rank,
    /// Filtered rank of an answer placed last among all entities.
    pub worst_rank: usize,
}

fn check_unique(candidates: &[EntityId]) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    match candidates.iter().find(|e| !seen.insert(**e)) {
        Some(dup) => Err(EvalError::DuplicateCandidate(*dup)),
        None => Ok(()),
    }
}

/// One plus the number of candidates ahead of `target` that are neither easy
/// nor other hard answers.
pub fn filtered_rank(
    candidates: &[EntityId],
    target: EntityId,
    easy: &BTreeSet<EntityId>,
    other_hard: &BTreeSet<EntityId>,
) -> Result<Rank, EvalError> {
    check_unique(candidates)?;
    if easy.contains(&target) || other_hard.contains(&target) {
        return Err(EvalError::TargetFiltered(target));
    }
    let Some(pos) = candidates.iter().position(|&c| c == target) else {
        return Ok(Rank::Absent);
    };
    let ahead = candidates[..pos]
        .iter()
        .filter(|c| !easy.contains(c) && !other_hard.contains(c))
        .count();
    Ok(Rank::At(ahead + 1))
}

/// Rank records for every hard answer of one query, in ascending id order.
pub fn rank_query(
    query_id: &str,
    candidates: &[EntityId],
    easy: &BTreeSet<EntityId>,
    hard: &BTreeSet<EntityId>,
    entity_count: usize,
) -> Result<Vec<RankRecord>, EvalError> {
    check_unique(candidates)?;
    let filtered = easy.union(hard).count();
    let worst_rank = entity_count
        .saturating_sub(filtered.saturating_sub(1))
        .max(1);
    let mut ahead = 0usize;
    let mut ranks: BTreeMap<EntityId, usize> = BTreeMap::new();
    for c in candidates {
        if hard.contains(c) {
            ranks.insert(*c, ahead + 1);
        } else if !easy.contains(c) {
            ahead += 1;
        }
    }
    Ok(hard
        .iter()
        .map(|&answer| RankRecord {
            query_id: query_id.to_string(),
            answer,
            rank: ranks.get(&answer).map_or(Rank::Absent, |&r| Rank::At(r)),
            worst_rank,
        })
        .collect())
}

/// Mean reciprocal rank over `records`, dividing by the record count.
pub fn mrr(records: &[RankRecord], policy: AbsentPolicy) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = records
        .iter()
        .map(|r| match (r.rank, policy) {
            (Rank::At(p), _) => 1.0 / p as f64,
            (Rank::Absent, AbsentPolicy::Zero) => 0.0,
            (Rank::Absent, AbsentPolicy::WorstCase) => 1.0 / r.worst_rank as f64,
        })
        .sum();
    Ok(total / records.len() as f64)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    Typical,
    Negation,
}

impl Layout {
    pub fn columns(self) -> &'static [QueryType] {
        match self {
            Self::Typical => &QueryType::TYPICAL,
            Self::Negation => &QueryType::NEGATION,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeRow {
    /// `None` when no hard answers were evaluated.
    pub mrr: Option<f64>,
    pub n: usize,
    pub absent: usize,
    pub queries: usize,
    pub failed: usize,
}

/// Row key: (dataset, model).
pub type RowKey = (String, String);

#[derive(Clone, Debug, Default)]
pub struct MrrReport {
    pub rows: BTreeMap<RowKey, BTreeMap<QueryType, TypeRow>>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
pub struct ReportRecord<'a> {
    pub dataset: &'a str,
    pub model: &'a str,
    #[serde(rename = "type")]
    pub query_type: &'static str,
    pub mrr: Option<f64>,
    pub n: usize,
    pub absent: usize,
    pub queries: usize,
    pub failed: usize,
}

impl MrrReport {
    pub fn records(&self) -> Vec<ReportRecord<'_>> {
        self.rows
            .iter()
            .flat_map(|((dataset, model), types)| {
                types.iter().map(move |(qt, row)| ReportRecord {
                    dataset,
                    model,
                    query_type: qt.tag(),
                    mrr: row.mrr,
                    n: row.n,
                    absent: row.absent,
                    queries: row.queries,
                    failed: row.failed,
                })
            })
            .collect()
    }

    pub fn has_any(&self, layout: Layout) -> bool {
        self.rows
            .values()
            .any(|types| layout.columns().iter().any(|qt| types.contains_key(qt)))
    }
}

/// Records, query count and failed count for one table cell.
type Group = (Vec<RankRecord>, usize, usize);

/// Accumulates rank records per (dataset, model, type).
#[derive(Debug, Default)]
pub struct ReportBuilder {
    groups: BTreeMap<RowKey, BTreeMap<QueryType, Group>>,
}

impl ReportBuilder {
    pub fn add_query(
        &mut self,
        dataset: &str,
        model: &str,
        query_type: QueryType,
        records: Vec<RankRecord>,
        failed: bool,
    ) {
        let slot = self
            .groups
            .entry((dataset.to_string(), model.to_string()))
            .or_default()
            .entry(query_type)
            .or_default();
        slot.0.extend(records);
        slot.1 += 1;
        slot.2 += usize::from(failed);
    }

    pub fn finish(self, policy: AbsentPolicy) -> MrrReport {
        let rows = self
            .groups
            .into_iter()
            .map(|(key, types)| {
                let types = types
                    .into_iter()
                    .map(|(qt, (records, queries, failed))| {
                        let row = TypeRow {
                            mrr: mrr(&records, policy).ok(),
                            n: records.len(),
                            absent: records.iter().filter(|r| r.rank == Rank::Absent).count(),
                            queries,
                            failed,
                        };
                        (qt, row)
                    })
                    .collect();
                (key, types)
            })
            .collect();
        MrrReport {
            rows,
            notes: vec![
                "ranking: candidates in backend output order (vote order under consensus), filtered".into(),
                policy.describe().into(),
            ],
        }
    }
}

/// Cell text: value times 100 with one decimal, or `–` when missing.
pub fn format_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "–".to_string(),
    }
}

/// Aligned text table in the given column layout. Notes are emitted as
/// leading `#` lines.
pub fn render_table(report: &MrrReport, layout: Layout) -> String {
    let mut header = vec!["Dataset".to_string(), "Model".to_string()];
    header.extend(layout.columns().iter().map(|qt| qt.tag().to_string()));
    let mut rows = vec![header];
    for ((dataset, model), types) in &report.rows {
        let mut row = vec![dataset.clone(), model.clone()];
        row.extend(
            layout
                .columns()
                .iter()
                .map(|qt| format_cell(types.get(qt).and_then(|r| r.mrr))),
        );
        rows.push(row);
    }
    let width = |c: usize| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..rows[0].len()).map(width).collect();

    let mut out = String::new();
    for note in &report.notes {
        let _ = writeln!(out, "# {note}");
    }
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c < 2 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
