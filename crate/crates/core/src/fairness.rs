//! Per-group aggregation and fairness statistics.
//!
//! A group's error is `1 - mean IoU`, where the group mean is the unweighted
//! mean of per-image mean IoU. Dispersion across groups is the standard
//! deviation of the group means; skew is the skewed error ratio (SER), the
//! largest group error over the smallest.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CohortTable, MaskPair};
use crate::metrics::{mask_scores, pass_rate_at_iou, ClassScores, MetricsError};
use crate::model::{AuditConfig, CohortRecord, GroupKey, GroupingAttribute, SdMode};

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// How per-image scores are pooled into a group mean. Recorded in reports.
pub const POOLING: &str = "unweighted mean of per-image foreground mean IoU";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FairnessError {
    #[error("no scored images to aggregate")]
    EmptyInput,
    #[error("fairness statistics need at least two groups, found {0}")]
    TooFewGroups(usize),
    #[error("record {id:?}: {source}")]
    Scoring {
        id: String,
        #[source]
        source: MetricsError,
    },
    #[error("pairs and cohort disagree: expected id {expected:?}, found {found:?}")]
    PairOrder { expected: String, found: String },
    #[error("iou threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("reports cannot share a table: {0}")]
    IncompatibleReports(String),
    #[error("unsupported report schema_version {0:?}")]
    SchemaMismatch(String),
    #[error("malformed report JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: GroupKey,
    pub n: usize,
    pub mean_iou: f64,
    /// Always `1 - mean_iou`.
    pub error: f64,
    pub pass_rate: f64,
}

impl GroupMetrics {
    pub fn new(group: GroupKey, n: usize, mean_iou: f64, pass_rate: f64) -> Self {
        Self {
            group,
            n,
            mean_iou,
            error: 1.0 - mean_iou,
            pass_rate,
        }
    }
}

/// Scores every mask pair. `pairs` must be in the same order as
/// `table.records` (as returned by [`crate::ingest::resolve_pairs`]).
pub fn score_cohort(
    table: &CohortTable,
    pairs: &[MaskPair],
    cfg: &AuditConfig,
) -> Result<Vec<(CohortRecord, ClassScores)>, FairnessError> {
    if table.records.len() != pairs.len() {
        return Err(FairnessError::PairOrder {
            expected: format!("{} records", table.records.len()),
            found: format!("{} pairs", pairs.len()),
        });
    }
    let scored: Vec<Result<(CohortRecord, ClassScores), FairnessError>> = table
        .records
        .par_iter()
        .zip(pairs.par_iter())
        .map(|(record, pair)| {
            if record.id != pair.id {
                return Err(FairnessError::PairOrder {
                    expected: record.id.clone(),
                    found: pair.id.clone(),
                });
            }
            let scores = mask_scores(&pair.gt, &pair.pred, cfg).map_err(|source| {
                FairnessError::Scoring {
                    id: record.id.clone(),
                    source,
                }
            })?;
            Ok((record.clone(), scores))
        })
        .collect();
    scored.into_iter().collect()
}

/// One entry per observed level of `grouping`, in canonical level order.
pub fn group_means(
    pairs: &[(CohortRecord, ClassScores)],
    grouping: GroupingAttribute,
    tau: f64,
) -> Result<Vec<GroupMetrics>, FairnessError> {
    if pairs.is_empty() {
        return Err(FairnessError::EmptyInput);
    }
    let mut buckets: Vec<Vec<ClassScores>> = vec![Vec::new(); grouping.levels().len()];
    for (record, scores) in pairs {
        buckets[record.level_index(grouping)].push(scores.clone());
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(level, scores)| {
            let mean = scores.iter().map(|s| s.mean_iou).sum::<f64>() / scores.len() as f64;
            let pass_rate =
                pass_rate_at_iou(&scores, tau).map_err(|_| FairnessError::InvalidThreshold(tau))?;
            let key = GroupKey::new(grouping, grouping.levels()[level]).expect("canonical level");
            Ok(GroupMetrics::new(key, scores.len(), mean, pass_rate))
        })
        .collect()
}

/// Standard deviation of `values` around their mean.
pub fn standard_deviation(values: &[f64], mode: SdMode) -> Result<f64, FairnessError> {
    let g = values.len();
    if g < 2 {
        return Err(FairnessError::TooFewGroups(g));
    }
    let mean = values.iter().sum::<f64>() / g as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let divisor = match mode {
        SdMode::Sample => g - 1,
        SdMode::Population => g,
    };
    Ok((ss / divisor as f64).sqrt())
}

/// Dispersion of group mean IoU values.
pub fn group_sd(groups: &[GroupMetrics], mode: SdMode) -> Result<f64, FairnessError> {
    let means: Vec<f64> = groups.iter().map(|g| g.mean_iou).collect();
    standard_deviation(&means, mode)
}

/// Largest group error over smallest group error. `Ok(None)` when the
/// smallest error is zero.
pub fn skewed_error_ratio(groups: &[GroupMetrics]) -> Result<Option<f64>, FairnessError> {
    if groups.len() < 2 {
        return Err(FairnessError::TooFewGroups(groups.len()));
    }
    let (lo, hi) = groups
        .iter()
        .map(|g| g.error)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
    Ok((lo > 0.0).then(|| hi / lo))
}

/// A fairness statistic that may not be computable for a given report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Value(f64),
    /// SER with a zero minimum error.
    Undefined,
    /// Fewer than two groups.
    NotApplicable,
}

impl Statistic {
    pub fn value(self) -> Option<f64> {
        match self {
            Statistic::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Statistic::Value(v) => write!(f, "{v:.3}"),
            Statistic::Undefined => f.write_str("undefined"),
            Statistic::NotApplicable => f.write_str("n/a"),
        }
    }
}

/// One row of a fairness table: group means plus SD and SER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub schema_version: String,
    pub model_name: String,
    pub grouping: GroupingAttribute,
    pub groups: Vec<GroupMetrics>,
    pub sd: Statistic,
    pub ser: Statistic,
    pub n_images: usize,
    pub pass_rate: f64,
    pub pooling: String,
    pub config: AuditConfig,
}

impl FairnessReport {
    pub fn group_mean(&self, value: &str) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.group.value == value)
            .map(|g| g.mean_iou)
    }
}

/// Aggregates scored images into a report grouped by `cfg.grouping`. With a
/// single observed group the row is still produced and SD/SER are marked
/// not applicable.
pub fn build_report(
    model_name: &str,
    pairs: &[(CohortRecord, ClassScores)],
    cfg: &AuditConfig,
) -> Result<FairnessReport, FairnessError> {
    let tau = cfg.iou_pass_threshold;
    cfg.validate()
        .map_err(|_| FairnessError::InvalidThreshold(tau))?;
    let groups = group_means(pairs, cfg.grouping, tau)?;
    let (sd, ser) = match (group_sd(&groups, cfg.sd_mode), skewed_error_ratio(&groups)) {
        (Ok(sd), Ok(ser)) => (
            Statistic::Value(sd),
            ser.map_or(Statistic::Undefined, Statistic::Value),
        ),
        (Err(FairnessError::TooFewGroups(_)), _) | (_, Err(FairnessError::TooFewGroups(_))) => {
            (Statistic::NotApplicable, Statistic::NotApplicable)
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let scores: Vec<ClassScores> = pairs.iter().map(|(_, s)| s.clone()).collect();
    let pass_rate = pass_rate_at_iou(&scores, tau).map_err(|_| FairnessError::InvalidThreshold(tau))?;
    Ok(FairnessReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        model_name: model_name.into(),
        grouping: cfg.grouping,
        groups,
        sd,
        ser,
        n_images: pairs.len(),
        pass_rate,
        pooling: POOLING.into(),
        config: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub fn render_report(report: &FairnessReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string(report).expect("report serializes");
            s.push('\n');
            s
        }
        _ => render_table(std::slice::from_ref(report), format).expect("one report is compatible"),
    }
}

/// Renders several reports as one table with a row per model. All reports
/// must share the same grouping and group columns.
pub fn render_table(reports: &[FairnessReport], format: ReportFormat) -> Result<String, FairnessError> {
    let first = reports
        .first()
        .ok_or_else(|| FairnessError::IncompatibleReports("no reports".into()))?;
    let columns: Vec<&GroupKey> = first.groups.iter().map(|g| &g.group).collect();
    for r in &reports[1..] {
        let cols: Vec<&GroupKey> = r.groups.iter().map(|g| &g.group).collect();
        if r.grouping != first.grouping || cols != columns {
            return Err(FairnessError::IncompatibleReports(format!(
                "{:?} has groups {:?}, {:?} has {:?}",
                first.model_name,
                columns.iter().map(|k| &k.value).collect::<Vec<_>>(),
                r.model_name,
                cols.iter().map(|k| &k.value).collect::<Vec<_>>(),
            )));
        }
    }

    let row_cells = |r: &FairnessReport| -> Vec<String> {
        let mut cells = vec![r.model_name.clone()];
        cells.extend(r.groups.iter().map(|g| format!("{:.3}", g.mean_iou)));
        cells.push(r.sd.to_string());
        cells.push(r.ser.to_string());
        cells
    };

    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string(reports).expect("reports serialize");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            let mut header = vec!["model".to_string()];
            header.extend(columns.iter().map(|k| k.value.clone()));
            header.extend(["sd".to_string(), "ser".to_string()]);
            w.write_record(&header).expect("in-memory csv");
            for r in reports {
                w.write_record(row_cells(r)).expect("in-memory csv");
            }
            Ok(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 cells"))
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "**Average IoU and fairness scores by {}**\n",
                first.grouping.display_name()
            );
            let mut header = vec!["Model".to_string()];
            header.extend(columns.iter().map(|k| k.display_label()));
            header.extend(["SD".to_string(), "SER".to_string()]);
            let _ = writeln!(s, "| {} |", header.join(" | "));
            let _ = writeln!(s, "|---|{}", "---:|".repeat(header.len() - 1));
            for r in reports {
                let _ = writeln!(s, "| {} |", row_cells(r).join(" | "));
            }
            Ok(s)
        }
    }
}

/// Parses a JSON report or an array of reports, checking `schema_version`.
pub fn parse_reports(text: &str) -> Result<Vec<FairnessReport>, FairnessError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| FairnessError::Json(e.to_string()))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .map(|item| {
            let version = item.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
            if version != REPORT_SCHEMA_VERSION {
                return Err(FairnessError::SchemaMismatch(version.to_string()));
            }
            serde_json::from_value(item).map_err(|e| FairnessError::Json(e.to_string()))
        })
        .collect()
}

/// Cohort composition by protected attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub attribute: GroupingAttribute,
    pub total: usize,
    pub rows: Vec<DistributionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub group: GroupKey,
    pub count: usize,
    /// Exact share of the cohort, in percent.
    pub percent: f64,
}

pub fn distribution(table: &CohortTable, attribute: GroupingAttribute) -> Distribution {
    let total = table.len();
    let rows = table
        .group_counts(attribute)
        .into_iter()
        .map(|(group, count)| DistributionRow {
            group,
            count,
            percent: 100.0 * count as f64 / total as f64,
        })
        .collect();
    Distribution {
        attribute,
        total,
        rows,
    }
}

impl Distribution {
    /// Markdown table with percentages to one decimal.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Group | Patients | Percentage |");
        let _ = writeln!(s, "|---|---:|---:|");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.1}% |",
                row.group.display_label(),
                row.count,
                row.percent
            );
        }
        let _ = writeln!(s, "| Total | {} | 100.0% |", self.total);
        s
    }
}
