//! Paper-style tables, CSV/text/JSON outputs and histogram exports.
//!
//! Every numeric cell goes through [`fixed4`], so the text tables and the
//! formatted CSV columns always agree; CSVs also carry full-precision columns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::beliefmetrics::{belief_network_distance, follow_signal, MeanStd, MetricReport};
use crate::trace::{Cohort, Stage};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("p-value {0} is outside (0, 1]")]
    PValueOutOfRange(f64),
    #[error("nothing to report: {0}")]
    Empty(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05, otherwise empty.
pub fn significance_stars(p: f64) -> Result<&'static str, ReportError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(ReportError::PValueOutOfRange(p));
    }
    Ok(if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    })
}

/// Four decimals, period separator, no negative zero.
pub fn fixed4(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub const NA: &str = "N/A";

fn starred(v: f64, p: f64) -> Result<String, ReportError> {
    Ok(format!("{}{}", fixed4(v), significance_stars(p)?))
}

fn mean_sd(m: &MeanStd) -> String {
    format!("{} (sd: {})", fixed4(m.mean), fixed4(m.std))
}

/// A rendered cell plus the full-precision value it was formatted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub text: String,
    pub raw: Option<f64>,
}

impl Cell {
    fn na() -> Self {
        Cell {
            text: NA.into(),
            raw: None,
        }
    }

    fn blank() -> Self {
        Cell {
            text: String::new(),
            raw: None,
        }
    }

    fn value(v: f64) -> Self {
        Cell {
            text: fixed4(v),
            raw: Some(v),
        }
    }

    fn with_p(v: f64, p: f64) -> Result<Self, ReportError> {
        Ok(Cell {
            text: starred(v, p)?,
            raw: Some(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model_type: String,
    pub model: String,
    pub cells: Vec<Cell>,
    pub is_average: bool,
}

impl TableRow {
    /// Model name followed by the value cells, joined by `sep`.
    pub fn line(&self, sep: &str) -> String {
        std::iter::once(self.model.as_str())
            .chain(self.cells.iter().map(|c| c.text.as_str()))
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Value cells only, joined by `sep`.
    pub fn values_line(&self, sep: &str) -> String {
        self.cells
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(sep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    /// Value column headers (after Model Type and Model).
    pub columns: Vec<String>,
    /// Short machine names for the CSV header.
    pub keys: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Model Type".to_string(), "Model".to_string()];
        header.extend(self.columns.iter().cloned());
        let body: Vec<Vec<&str>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![r.model_type.as_str(), r.model.as_str()];
                v.extend(r.cells.iter().map(|c| c.text.as_str()));
                v
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(header[i].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let render = |cells: &[&str]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 3 * (widths.len() - 1));
        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        writeln!(out, "{rule}").unwrap();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        writeln!(out, "{}", render(&header_refs)).unwrap();
        writeln!(out, "{rule}").unwrap();
        for (row, cells) in self.rows.iter().zip(&body) {
            writeln!(out, "{}", render(cells)).unwrap();
            if row.is_average {
                writeln!(out, "{rule}").unwrap();
            }
        }
        out
    }

    /// CSV with the formatted cells followed by full-precision columns.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model_type".to_string(), "model".to_string()];
        header.extend(self.keys.iter().cloned());
        header.extend(self.keys.iter().map(|k| format!("{k}_full")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.model_type.clone(), r.model.clone()];
            rec.extend(r.cells.iter().map(|c| c.text.clone()));
            rec.extend(
                r.cells
                    .iter()
                    .map(|c| c.raw.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Which value columns are averaged in a group's Average row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AverageRule {
    Mean,
    Blank,
}

/// Appends an Average row after each group, groups in first-appearance
/// order. Averages are over full-precision values, skipping N/A cells.
fn group_rows(rows: Vec<TableRow>, rules: &[AverageRule]) -> Vec<TableRow> {
    let mut groups: Vec<(String, Vec<TableRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(g, _)| *g == row.model_type) {
            Some((_, members)) => members.push(row),
            None => groups.push((row.model_type.clone(), vec![row])),
        }
    }
    let mut out = Vec::new();
    for (group, members) in groups {
        let cells = rules
            .iter()
            .enumerate()
            .map(|(i, rule)| {
                let values: Vec<f64> = members.iter().filter_map(|r| r.cells[i].raw).collect();
                match rule {
                    AverageRule::Blank => Cell::blank(),
                    AverageRule::Mean if values.is_empty() => Cell::na(),
                    AverageRule::Mean => {
                        Cell::value(values.iter().sum::<f64>() / values.len() as f64)
                    }
                }
            })
            .collect();
        out.extend(members);
        out.push(TableRow {
            model_type: group,
            model: "Average".into(),
            cells,
            is_average: true,
        });
    }
    out
}

fn require_rows<T>(rows: &[T], what: &str) -> Result<(), ReportError> {
    if rows.is_empty() {
        Err(ReportError::Empty(format!("no rows for the {what} table")))
    } else {
        Ok(())
    }
}

/// Stage-1 distribution comparison for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Row {
    pub model_type: String,
    pub model: String,
    pub kl: Option<f64>,
    pub wasserstein: Option<f64>,
    pub mwu_p: Option<f64>,
}

impl Stage1Row {
    pub fn from_report(model_type: &str, r: &MetricReport) -> Self {
        Stage1Row {
            model_type: model_type.into(),
            model: r.label_pair.0.clone(),
            kl: r.stage1.kl.value().copied(),
            wasserstein: r.stage1.wasserstein.value().copied(),
            mwu_p: r.stage1.mwu.value().map(|t| t.p_value),
        }
    }
}

pub fn emit_stage1_table(rows: &[Stage1Row]) -> Result<Table, ReportError> {
    require_rows(rows, "stage-1")?;
    let body = rows
        .iter()
        .map(|r| {
            Ok(TableRow {
                model_type: r.model_type.clone(),
                model: r.model.clone(),
                cells: vec![
                    r.kl.map_or_else(Cell::na, Cell::value),
                    r.wasserstein.map_or_else(Cell::na, Cell::value),
                    match r.mwu_p {
                        Some(p) => Cell::with_p(p, p)?,
                        None => Cell::na(),
                    },
                ],
                is_average: false,
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(Table {
        title: "Stage 1: belief distribution".into(),
        columns: vec![
            "KL Divergence".into(),
            "Wasserstein Dist".into(),
            "Mann-Whitney U p-value".into(),
        ],
        keys: vec!["kl".into(), "wasserstein".into(), "mwu_p".into()],
        rows: group_rows(
            body,
            &[AverageRule::Mean, AverageRule::Mean, AverageRule::Blank],
        ),
    })
}

/// Stage-1 means and standard deviations for one model and its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanStdRow {
    pub model_type: String,
    pub model: String,
    pub subject: Option<MeanStd>,
    pub reference: Option<MeanStd>,
}

impl MeanStdRow {
    pub fn from_report(model_type: &str, r: &MetricReport) -> Self {
        MeanStdRow {
            model_type: model_type.into(),
            model: r.label_pair.0.clone(),
            subject: r.stage1.subject.value().copied(),
            reference: r.stage1.reference.value().copied(),
        }
    }
}

pub fn emit_mean_std_table(rows: &[MeanStdRow]) -> Result<Table, ReportError> {
    require_rows(rows, "mean/std")?;
    let pair = |m: Option<MeanStd>| match m {
        Some(m) => [Cell::value(m.mean), Cell::value(m.std)],
        None => [Cell::na(), Cell::na()],
    };
    let body = rows
        .iter()
        .map(|r| {
            let mut cells = pair(r.subject).to_vec();
            cells.extend(pair(r.reference));
            TableRow {
                model_type: r.model_type.clone(),
                model: r.model.clone(),
                cells,
                is_average: false,
            }
        })
        .collect();
    Ok(Table {
        title: "Stage 1: mean and standard deviation of initial ratings".into(),
        columns: vec![
            "Subject Mean".into(),
            "Subject Std".into(),
            "Reference Mean".into(),
            "Reference Std".into(),
        ],
        keys: vec![
            "subject_mean".into(),
            "subject_std".into(),
            "reference_mean".into(),
            "reference_std".into(),
        ],
        rows: group_rows(body, &[AverageRule::Mean; 4]),
    })
}

/// Social influence of the reference and the subject, and the Fisher test
/// between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Row {
    pub model_type: String,
    pub model: String,
    /// `(rho, p)` for the reference cohort.
    pub reference: Option<(f64, f64)>,
    /// `(rho, p)` for the subject cohort.
    pub subject: Option<(f64, f64)>,
    pub fisher_p: Option<f64>,
}

impl Stage2Row {
    pub fn from_report(model_type: &str, r: &MetricReport) -> Self {
        let corr = |c: &crate::beliefmetrics::Computed<crate::beliefmetrics::Correlation>| {
            c.value().map(|c| (c.rho, c.test.p_value))
        };
        Stage2Row {
            model_type: model_type.into(),
            model: r.label_pair.0.clone(),
            reference: corr(&r.stage2.social_influence_reference),
            subject: corr(&r.stage2.social_influence_subject),
            fisher_p: r.stage2.fisher.value().map(|t| t.p_value),
        }
    }
}

pub fn emit_stage2_table(rows: &[Stage2Row]) -> Result<Table, ReportError> {
    require_rows(rows, "stage-2")?;
    let corr = |c: Option<(f64, f64)>| match c {
        Some((rho, p)) => Cell::with_p(rho, p),
        None => Ok(Cell::na()),
    };
    let body = rows
        .iter()
        .map(|r| {
            Ok(TableRow {
                model_type: r.model_type.clone(),
                model: r.model.clone(),
                cells: vec![
                    corr(r.reference)?,
                    corr(r.subject)?,
                    match r.fisher_p {
                        Some(p) => Cell::with_p(p, p)?,
                        None => Cell::na(),
                    },
                ],
                is_average: false,
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(Table {
        title: "Stage 2: social influence".into(),
        columns: vec![
            "Reference Social Influence (Spearman)".into(),
            "Subject Social Influence (Spearman)".into(),
            "Fisher p-value".into(),
        ],
        keys: vec![
            "reference_rho".into(),
            "subject_rho".into(),
            "fisher_p".into(),
        ],
        rows: group_rows(body, &[AverageRule::Mean; 3]),
    })
}

/// Belief network distance summaries and the MWU test between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage3Row {
    pub model_type: String,
    pub model: String,
    pub subject: Option<MeanStd>,
    pub reference: Option<MeanStd>,
    pub mwu_p: Option<f64>,
}

impl Stage3Row {
    pub fn from_report(model_type: &str, r: &MetricReport) -> Self {
        Stage3Row {
            model_type: model_type.into(),
            model: r.label_pair.0.clone(),
            subject: r.stage3.bnd_subject.value().copied(),
            reference: r.stage3.bnd_reference.value().copied(),
            mwu_p: r.stage3.bnd_mwu.value().map(|t| t.p_value),
        }
    }
}

pub fn emit_stage3_table(rows: &[Stage3Row]) -> Result<Table, ReportError> {
    require_rows(rows, "stage-3")?;
    let summary = |m: Option<MeanStd>| match m {
        Some(m) => Cell {
            text: mean_sd(&m),
            raw: Some(m.mean),
        },
        None => Cell::na(),
    };
    let body = rows
        .iter()
        .map(|r| {
            Ok(TableRow {
                model_type: r.model_type.clone(),
                model: r.model.clone(),
                cells: vec![
                    summary(r.subject),
                    summary(r.reference),
                    match r.mwu_p {
                        Some(p) => Cell::with_p(p, p)?,
                        None => Cell::na(),
                    },
                ],
                is_average: false,
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(Table {
        title: "Stage 3: belief network distance".into(),
        columns: vec![
            "Mean Subject Belief Network Distance".into(),
            "Mean Reference Belief Network Distance".into(),
            "MWU p".into(),
        ],
        keys: vec!["subject_bnd".into(), "reference_bnd".into(), "mwu_p".into()],
        rows: group_rows(
            body,
            &[AverageRule::Mean, AverageRule::Mean, AverageRule::Blank],
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramKind {
    Stage1,
    FollowSignal,
    Bnd,
}

impl HistogramKind {
    pub const ALL: [HistogramKind; 3] = [
        HistogramKind::Stage1,
        HistogramKind::FollowSignal,
        HistogramKind::Bnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HistogramKind::Stage1 => "stage1",
            HistogramKind::FollowSignal => "follow_signal",
            HistogramKind::Bnd => "bnd",
        }
    }

    /// Per-trace values: initial ratings, or the stage-3 metrics over
    /// complete traces.
    pub fn values(self, cohort: &Cohort) -> Vec<(String, u32, f64)> {
        let pick = |t: &crate::trace::RoundTrace| -> Option<f64> {
            match self {
                HistogramKind::Stage1 => t
                    .supports(Stage::One)
                    .then(|| t.initial_rating())
                    .flatten()
                    .map(|r| r.as_f64()),
                HistogramKind::FollowSignal => t
                    .supports(Stage::Three)
                    .then(|| follow_signal(t).ok())
                    .flatten(),
                HistogramKind::Bnd => t
                    .supports(Stage::Three)
                    .then(|| belief_network_distance(t).ok())
                    .flatten(),
            }
        };
        cohort
            .iter()
            .filter_map(|t| pick(t).map(|v| (t.participant_id.clone(), t.round, v)))
            .collect()
    }
}

pub const CONTINUOUS_BINS: usize = 20;

/// `(label, count)` per bin: one bin per rating for stage 1, otherwise 20
/// equal bins over [0, 4] (the top edge belongs to the last bin).
pub fn histogram(kind: HistogramKind, values: &[f64]) -> Vec<(String, usize)> {
    match kind {
        HistogramKind::Stage1 => (0..5)
            .map(|b| {
                (
                    b.to_string(),
                    values.iter().filter(|v| **v == b as f64).count(),
                )
            })
            .collect(),
        _ => {
            let mut counts = [0usize; CONTINUOUS_BINS];
            for v in values {
                let bin = ((v * 5.0 + 1e-9).floor().max(0.0) as usize).min(CONTINUOUS_BINS - 1);
                counts[bin] += 1;
            }
            counts
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    (
                        format!("{:.1}-{:.1}", i as f64 * 0.2, (i + 1) as f64 * 0.2),
                        *c,
                    )
                })
                .collect()
        }
    }
}

fn file_label(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "cohort".into()
    } else {
        s
    }
}

/// Writes `hist_<kind>_<label>.csv` (bin, count, proportion) and
/// `hist_<kind>_<label>_raw.csv` (participant_id, round, value) per cohort.
pub fn export_histograms(
    cohorts: &[&Cohort],
    kind: HistogramKind,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    if cohorts.is_empty() {
        return Err(ReportError::Empty("no cohorts selected".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for cohort in cohorts {
        let rows = kind.values(cohort);
        if rows.is_empty() {
            return Err(ReportError::Empty(format!(
                "cohort `{}` has no {} values",
                cohort.label,
                kind.name()
            )));
        }
        let values: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let stem = format!("hist_{}_{}", kind.name(), file_label(&cohort.label));

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin", "count", "proportion"])?;
        for (bin, count) in histogram(kind, &values) {
            let proportion = count as f64 / values.len() as f64;
            w.write_record([bin, count.to_string(), proportion.to_string()])?;
        }
        let path = out_dir.join(format!("{stem}.csv"));
        fs::write(
            &path,
            w.into_inner()
                .map_err(|e| std::io::Error::other(e.to_string()))?,
        )?;
        written.push(path);

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["participant_id", "round", "value"])?;
        for (pid, round, v) in rows {
            w.write_record([pid, round.to_string(), v.to_string()])?;
        }
        let path = out_dir.join(format!("{stem}_raw.csv"));
        fs::write(
            &path,
            w.into_inner()
                .map_err(|e| std::io::Error::other(e.to_string()))?,
        )?;
        written.push(path);
    }
    Ok(written)
}

/// A comparison and the model-type group its table rows belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub model_type: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Text,
    Json,
    Histograms,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 4] = [
        OutputFormat::Csv,
        OutputFormat::Text,
        OutputFormat::Json,
        OutputFormat::Histograms,
    ];
}

/// Run-level facts recorded in `report_meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunInfo {
    pub seeds: Vec<u64>,
    pub endpoints: Vec<String>,
}

pub struct ReportBundle<'a> {
    pub comparisons: Vec<Comparison>,
    /// Cohorts whose histograms are exported.
    pub cohorts: Vec<&'a Cohort>,
    pub formats: Vec<OutputFormat>,
    pub out_dir: PathBuf,
    pub info: RunInfo,
}

/// Outcome per requested format: the files written or the error hit.
pub type BundleOutcome = Vec<(OutputFormat, Result<Vec<PathBuf>, ReportError>)>;

#[derive(Serialize)]
struct MetaComparison<'a> {
    label_pair: &'a (String, String),
    n_aligned: usize,
    metadata: &'a crate::beliefmetrics::ReportMetadata,
}

#[derive(Serialize)]
struct Meta<'a> {
    comparisons: Vec<MetaComparison<'a>>,
    #[serde(flatten)]
    info: &'a RunInfo,
}

impl ReportBundle<'_> {
    pub fn tables(&self) -> Result<[Table; 4], ReportError> {
        let c = &self.comparisons;
        Ok([
            emit_stage1_table(
                &c.iter()
                    .map(|c| Stage1Row::from_report(&c.model_type, &c.report))
                    .collect::<Vec<_>>(),
            )?,
            emit_mean_std_table(
                &c.iter()
                    .map(|c| MeanStdRow::from_report(&c.model_type, &c.report))
                    .collect::<Vec<_>>(),
            )?,
            emit_stage2_table(
                &c.iter()
                    .map(|c| Stage2Row::from_report(&c.model_type, &c.report))
                    .collect::<Vec<_>>(),
            )?,
            emit_stage3_table(
                &c.iter()
                    .map(|c| Stage3Row::from_report(&c.model_type, &c.report))
                    .collect::<Vec<_>>(),
            )?,
        ])
    }

    fn write_csv(&self) -> Result<Vec<PathBuf>, ReportError> {
        let [s1, ms, s2, s3] = self.tables()?;
        let mut written = Vec::new();
        for (name, table) in [
            ("stage1", s1),
            ("stage1_mean_std", ms),
            ("stage2", s2),
            ("stage3", s3),
        ] {
            let path = self.out_dir.join(format!("{name}.csv"));
            fs::write(&path, table.to_csv()?)?;
            written.push(path);
        }
        Ok(written)
    }

    fn write_text(&self) -> Result<Vec<PathBuf>, ReportError> {
        let text = self
            .tables()?
            .iter()
            .map(Table::to_text)
            .collect::<Vec<_>>()
            .join("\n");
        let path = self.out_dir.join("report.txt");
        fs::write(&path, text)?;
        Ok(vec![path])
    }

    fn write_json(&self) -> Result<Vec<PathBuf>, ReportError> {
        let meta = Meta {
            comparisons: self
                .comparisons
                .iter()
                .map(|c| MetaComparison {
                    label_pair: &c.report.label_pair,
                    n_aligned: c.report.n_aligned,
                    metadata: &c.report.metadata,
                })
                .collect(),
            info: &self.info,
        };
        let meta_path = self.out_dir.join("report_meta.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        let reports: Vec<&MetricReport> = self.comparisons.iter().map(|c| &c.report).collect();
        let metrics_path = self.out_dir.join("metrics.json");
        fs::write(
            &metrics_path,
            serde_json::to_string_pretty(&reports)? + "\n",
        )?;
        Ok(vec![meta_path, metrics_path])
    }

    fn write_histograms(&self) -> Result<Vec<PathBuf>, ReportError> {
        let mut written = Vec::new();
        for kind in HistogramKind::ALL {
            let with_values: Vec<&Cohort> = self
                .cohorts
                .iter()
                .copied()
                .filter(|c| !kind.values(c).is_empty())
                .collect();
            if kind != HistogramKind::Stage1 && with_values.is_empty() {
                log::warn!("no {} values in any cohort; skipping", kind.name());
                continue;
            }
            written.extend(export_histograms(&with_values, kind, &self.out_dir)?);
        }
        Ok(written)
    }

    /// Writes every requested format. A failing format does not stop the
    /// others.
    pub fn write(&self) -> BundleOutcome {
        if let Err(e) = fs::create_dir_all(&self.out_dir) {
            let msg = e.to_string();
            return self
                .formats
                .iter()
                .map(|f| (*f, Err(ReportError::Io(std::io::Error::other(msg.clone())))))
                .collect();
        }
        self.formats
            .iter()
            .map(|f| {
                let result = match f {
                    OutputFormat::Csv => self.write_csv(),
                    OutputFormat::Text => self.write_text(),
                    OutputFormat::Json => self.write_json(),
                    OutputFormat::Histograms => self.write_histograms(),
                };
                (*f, result)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stars_at_boundaries() {
        assert_eq!(significance_stars(0.05).unwrap(), "");
        assert_eq!(significance_stars(0.0499).unwrap(), "*");
        assert_eq!(significance_stars(0.01).unwrap(), "*");
        assert_eq!(significance_stars(0.001).unwrap(), "**");
        assert_eq!(significance_stars(0.0009).unwrap(), "***");
        assert_eq!(significance_stars(1.0).unwrap(), "");
        assert!(significance_stars(0.0).is_err());
        assert!(significance_stars(1.5).is_err());
        assert!(significance_stars(f64::NAN).is_err());
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(fixed4(-0.00001), "0.0000");
        assert_eq!(fixed4(-0.0221), "-0.0221");
        assert_eq!(fixed4(1.0), "1.0000");
    }

    fn s1(model: &str, group: &str, kl: f64, w: f64, p: f64) -> Stage1Row {
        Stage1Row {
            model_type: group.into(),
            model: model.into(),
            kl: Some(kl),
            wasserstein: Some(w),
            mwu_p: Some(p),
        }
    }

    #[test]
    fn group_average_rows() {
        let t = emit_stage1_table(&[
            s1("a", "Non-Thinking", 0.1, 0.25, 0.5),
            s1("x", "Thinking", 1.0, 1.0, 0.5),
            s1("b", "Non-Thinking", 0.2, 0.5, 0.01),
        ])
        .unwrap();
        let models: Vec<&str> = t.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(models, ["a", "b", "Average", "x", "Average"]);
        assert_eq!(t.rows[2].line(", "), "Average, 0.1500, 0.3750, ");
        assert_eq!(t.rows[1].line(", "), "b, 0.2000, 0.5000, 0.0100*");
    }

    #[test]
    fn averages_skip_na() {
        let row = |m: &str, v: Option<f64>| Stage3Row {
            model_type: "g".into(),
            model: m.into(),
            subject: v.map(|mean| MeanStd { mean, std: 0.5 }),
            reference: Some(MeanStd {
                mean: 0.9530,
                std: 0.7705,
            }),
            mwu_p: v.map(|_| 0.2),
        };
        let t = emit_stage3_table(&[
            row("a", None),
            row("b", Some(0.8554)),
            row("c", Some(1.6004)),
        ])
        .unwrap();
        assert_eq!(
            t.rows[0].values_line(" | "),
            "N/A | 0.9530 (sd: 0.7705) | N/A"
        );
        assert_eq!(t.rows[3].values_line(" | "), "1.2279 | 0.9530 | ");
    }

    #[test]
    fn text_and_csv_share_cells() {
        let t = emit_stage1_table(&[s1("m,1", "g", 0.123456, 0.5, 0.2)]).unwrap();
        let text = t.to_text();
        let csv = t.to_csv().unwrap();
        for cell in &t.rows[0].cells {
            assert!(text.contains(&cell.text) && csv.contains(&cell.text));
        }
        assert!(csv.starts_with(
            "model_type,model,kl,wasserstein,mwu_p,kl_full,wasserstein_full,mwu_p_full\n"
        ));
        assert!(csv.contains("g,\"m,1\",0.1235,0.5000,0.2000,0.123456,0.5,0.2\n"));
    }

    #[test]
    fn continuous_bins() {
        let h = histogram(
            HistogramKind::FollowSignal,
            &[0.0, 0.2, 0.6, 4.0, 3.99, 1.0 / 3.0 * 3.0],
        );
        assert_eq!(h.len(), 20);
        assert_eq!(h[0], ("0.0-0.2".to_string(), 1));
        assert_eq!(h[1].1, 1);
        assert_eq!(h[3].1, 1);
        assert_eq!(h[5].1, 1);
        assert_eq!(h[19], ("3.8-4.0".to_string(), 2));
    }
}
