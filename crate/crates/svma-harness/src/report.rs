//! Report emission: the model-wise ASR breakdown, judge score table,
//! and agreement statistics, in markdown, CSV, and JSON.
//!
//! Every report carries the dataset and template hashes in a footer so
//! the numbers stay traceable to the exact inputs that produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{AttackOutcome, OutcomeStatus, RunSnapshot};
use crate::gateway::Usage;
use crate::judge::JudgeVerdict;
use crate::metrics::{
    asr_breakdown, judge_aggregates, model_agreement, reference, round2, AgreementReport,
    AsrBreakdown, CellValue, JudgeAggregateRow, ModelAsrRow,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] =
        [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "report.md",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!(
                "unknown report format `{other}` (expected markdown, csv, or json)"
            )),
        }
    }
}

/// Outcome counters across the whole journal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryCounters {
    pub outcomes: usize,
    pub predicted: usize,
    pub refusals: usize,
    pub unparseable: usize,
    pub transport_failures: usize,
}

/// Everything a report needs, assembled from finished journals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub snapshot: RunSnapshot,
    pub breakdown: AsrBreakdown,
    pub judge: Vec<JudgeAggregateRow>,
    pub agreement: AgreementReport,
    pub reference_checks: Vec<ReferenceCheckRow>,
    pub counters: SummaryCounters,
    pub usage: Usage,
    /// Span between the earliest and latest response timestamps, when
    /// outcomes carry them.
    pub wall_clock_ms: Option<u64>,
}

/// One published-table consistency row: per-class rates recombined with
/// the published class split versus the published overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheckRow {
    pub model: String,
    pub recombined: f64,
    pub published: f64,
    pub delta: f64,
}

pub fn build_summary(
    snapshot: RunSnapshot,
    outcomes: &[AttackOutcome],
    verdicts: &[JudgeVerdict],
    model_groups: &BTreeMap<String, Vec<String>>,
) -> CampaignSummary {
    let mut counters = SummaryCounters::default();
    let mut usage = Usage::default();
    let mut first_ms: Option<u64> = None;
    let mut last_ms: Option<u64> = None;
    for outcome in outcomes {
        counters.outcomes += 1;
        match outcome.status {
            OutcomeStatus::Predicted => counters.predicted += 1,
            OutcomeStatus::Refusal => counters.refusals += 1,
            OutcomeStatus::Unparseable => counters.unparseable += 1,
            OutcomeStatus::TransportFailure => counters.transport_failures += 1,
        }
        usage.prompt_tokens = add_opt(usage.prompt_tokens, outcome.usage.prompt_tokens);
        usage.completion_tokens = add_opt(usage.completion_tokens, outcome.usage.completion_tokens);
        for ms in [outcome.stage1_unix_ms, outcome.stage2_unix_ms].into_iter().flatten() {
            first_ms = Some(first_ms.map_or(ms, |f| f.min(ms)));
            last_ms = Some(last_ms.map_or(ms, |l| l.max(ms)));
        }
    }
    let judge = judge_aggregates(verdicts).unwrap_or_default();
    CampaignSummary {
        snapshot,
        breakdown: asr_breakdown(outcomes),
        judge,
        agreement: model_agreement(outcomes, model_groups),
        reference_checks: reference::recombination_checks()
            .into_iter()
            .map(|c| ReferenceCheckRow {
                model: c.model,
                recombined: c.recombined,
                published: c.published,
                delta: c.delta,
            })
            .collect(),
        counters,
        usage,
        wall_clock_ms: match (first_ms, last_ms) {
            (Some(f), Some(l)) => Some(l - f),
            _ => None,
        },
    }
}

fn add_opt(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (a, b) => a.or(b),
    }
}

/// Write one file per requested format into `out_dir`; returns the
/// paths written.
pub fn emit_report(
    summary: &CampaignSummary,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for format in formats {
        let path = out_dir.join(format.file_name());
        let body = match format {
            ReportFormat::Markdown => render_markdown(summary),
            ReportFormat::Csv => render_csv(summary),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
                s.push('\n');
                s
            }
        };
        fs::write(&path, body).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

type ColumnGetter = fn(&ModelAsrRow) -> &Option<CellValue>;

/// Fixed breakdown column order, mirroring the published table layout.
const ASR_COLUMNS: [(&str, ColumnGetter); 6] = [
    ("Video", |r| &r.video),
    ("Audio", |r| &r.audio),
    ("Percept.", |r| &r.perception),
    ("Pos.(1)", |r| &r.positive),
    ("Neg.(0)", |r| &r.negative),
    ("Overall", |r| &r.overall),
];

/// Which rows hold the unique best (highest) and worst (lowest) percent
/// in a column. Ties get no annotation.
fn best_worst(values: &[Option<f64>]) -> (Option<usize>, Option<usize>) {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if present.len() < 2 {
        return (None, None);
    }
    let max = present.iter().map(|&(_, v)| v).fold(f64::MIN, f64::max);
    let min = present.iter().map(|&(_, v)| v).fold(f64::MAX, f64::min);
    if max == min {
        return (None, None);
    }
    let unique = |target: f64| {
        let hits: Vec<usize> = present
            .iter()
            .filter(|&&(_, v)| v == target)
            .map(|&(i, _)| i)
            .collect();
        if hits.len() == 1 { Some(hits[0]) } else { None }
    };
    (unique(max), unique(min))
}

fn fmt2(value: f64) -> String {
    format!("{:.2}", round2(value))
}

fn asr_table_cells(breakdown: &AsrBreakdown) -> Vec<Vec<String>> {
    let mut grid: Vec<Vec<String>> = breakdown
        .rows
        .iter()
        .map(|row| {
            let mut cells = vec![row.model.clone()];
            cells.extend(ASR_COLUMNS.iter().map(|(_, get)| {
                get(row)
                    .as_ref()
                    .map(|c| fmt2(c.percent))
                    .unwrap_or_else(|| "—".to_string())
            }));
            cells
        })
        .collect();
    for (col, (_, get)) in ASR_COLUMNS.iter().enumerate() {
        let values: Vec<Option<f64>> = breakdown
            .rows
            .iter()
            .map(|row| get(row).as_ref().map(|c| round2(c.percent)))
            .collect();
        let (best, worst) = best_worst(&values);
        if let Some(i) = best {
            grid[i][col + 1].push_str(" (best)");
        }
        if let Some(i) = worst {
            grid[i][col + 1].push_str(" (worst)");
        }
    }
    grid
}

fn markdown_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
}

fn kappa_cell(result: &Option<crate::metrics::KappaResult>) -> String {
    match result {
        Some(k) if k.degenerate => format!("{} (single category; by convention)", fmt2(k.kappa)),
        Some(k) => fmt2(k.kappa),
        None => "—".to_string(),
    }
}

pub fn render_markdown(summary: &CampaignSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Campaign report\n");

    let _ = writeln!(out, "## Attack success rate by model (%)\n");
    let mut header = vec!["Model"];
    header.extend(ASR_COLUMNS.iter().map(|(name, _)| *name));
    let has_baseline = summary.breakdown.rows.iter().any(|r| r.baseline.is_some());
    let mut grid = asr_table_cells(&summary.breakdown);
    if has_baseline {
        header.push("Baseline*");
        for (row, cells) in summary.breakdown.rows.iter().zip(&mut grid) {
            cells.push(
                row.baseline
                    .as_ref()
                    .map(|c| fmt2(c.percent))
                    .unwrap_or_else(|| "—".to_string()),
            );
        }
    }
    markdown_table(&mut out, &header, &grid);
    if has_baseline {
        let _ = writeln!(
            out,
            "\n\\* Baseline is a no-attack sanity check added by this harness; \
             it is not part of the published table layout."
        );
    }

    if !summary.judge.is_empty() {
        let _ = writeln!(out, "\n## Judge scores by model (means)\n");
        let rows: Vec<Vec<String>> = summary
            .judge
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    fmt2(r.mean_d1),
                    fmt2(r.mean_d2),
                    fmt2(r.mean_d3),
                    fmt2(r.mean_d4),
                    fmt2(r.mean_total),
                    fmt2(r.hallucination_factor),
                    fmt2(r.mean_confidence),
                    r.verdict_count.to_string(),
                ]
            })
            .collect();
        markdown_table(
            &mut out,
            &[
                "Model",
                "Harm Rec.",
                "Context.",
                "Precaution.",
                "Vulnerable",
                "Total",
                "Halluc. factor",
                "Confidence",
                "N",
            ],
            &rows,
        );
    }

    let _ = writeln!(out, "\n## Inter-model agreement (Fleiss' kappa)\n");
    let mut rows = vec![vec![
        "all models".to_string(),
        kappa_cell(&summary.agreement.overall),
    ]];
    for (group, result) in &summary.agreement.groups {
        rows.push(vec![group.clone(), kappa_cell(result)]);
    }
    markdown_table(&mut out, &["Raters", "Kappa"], &rows);
    let _ = writeln!(
        out,
        "\nSubjects with a verdict from every model: {}; dropped for missing verdicts: {}.",
        summary.agreement.subjects_used, summary.agreement.subjects_dropped
    );

    let _ = writeln!(out, "\n## Published-table consistency check\n");
    let _ = writeln!(
        out,
        "Per-class published rates recombined with the published class split \
         ({} positive / {} negative of {}), versus the published overall:\n",
        reference::POSITIVE_RECORDS,
        reference::NEGATIVE_RECORDS,
        reference::TOTAL_RECORDS
    );
    let rows: Vec<Vec<String>> = summary
        .reference_checks
        .iter()
        .map(|c| {
            vec![
                c.model.clone(),
                fmt2(c.recombined),
                fmt2(c.published),
                format!("{:+.2}", round2(c.delta)),
            ]
        })
        .collect();
    markdown_table(&mut out, &["Model", "Recombined", "Published", "Delta"], &rows);

    let _ = writeln!(out, "\n## Counters\n");
    let c = &summary.counters;
    let _ = writeln!(out, "- outcomes: {}", c.outcomes);
    let _ = writeln!(out, "- predicted: {}", c.predicted);
    let _ = writeln!(out, "- refusals: {}", c.refusals);
    let _ = writeln!(out, "- unparseable: {}", c.unparseable);
    let _ = writeln!(out, "- transport failures (excluded): {}", c.transport_failures);
    if let Some(p) = summary.usage.prompt_tokens {
        let _ = writeln!(out, "- prompt tokens: {p}");
    }
    if let Some(ct) = summary.usage.completion_tokens {
        let _ = writeln!(out, "- completion tokens: {ct}");
    }
    if let Some(ms) = summary.wall_clock_ms {
        let _ = writeln!(out, "- wall clock span: {ms} ms");
    }

    let _ = writeln!(out, "\n---\n");
    let _ = writeln!(out, "dataset sha256: `{}`  ", summary.snapshot.dataset_hash);
    let _ = writeln!(out, "template set sha256: `{}`  ", summary.snapshot.template_hash);
    let _ = writeln!(
        out,
        "k = {}; endpoints: {}",
        summary.snapshot.k,
        summary.snapshot.endpoint_names.join(", ")
    );
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn render_csv(summary: &CampaignSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model,video,audio,perception,positive,negative,overall,baseline,\
         dataset_sha256,template_sha256"
    );
    for row in &summary.breakdown.rows {
        let cell = |c: &Option<CellValue>| {
            c.as_ref().map(|c| fmt2(c.percent)).unwrap_or_default()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_escape(&row.model),
            cell(&row.video),
            cell(&row.audio),
            cell(&row.perception),
            cell(&row.positive),
            cell(&row.negative),
            cell(&row.overall),
            cell(&row.baseline),
            summary.snapshot.dataset_hash,
            summary.snapshot.template_hash,
        );
    }
    out
}
