//! Output files of a run: `summary.json`, `cases.jsonl`, `table.txt`,
//! `config.resolved` and optional `contexts/` dumps.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{edit_metrics, CaseLog, CkaRow, CkaSummary, RunConfig, Suite, Summary, TemporalRow, TemporalSummary};
use crate::error::RunError;
use crate::metrics::{round1, Pooling};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub(super) fn write_config(out: &Path, config: &RunConfig) -> Result<(), RunError> {
    write_file(&out.join("config.resolved"), &config.render())
}

pub(super) fn write_cases<T: Serialize>(out: &Path, cases: &[T]) -> Result<(), RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("cases.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for case in cases {
        let line = serde_json::to_string(case).map_err(|source| RunError::Json {
            path: path.clone(),
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

pub(super) fn dump_contexts(out: &Path, contexts: &[super::CaseContexts]) -> Result<(), RunError> {
    let dir = out.join("contexts");
    for (case_id, items) in contexts {
        let mut text = String::new();
        for (label, context) in items {
            let _ = write!(text, "=== {label}\n{context}\n\n");
        }
        write_file(&dir.join(format!("{case_id}.txt")), &text)?;
    }
    Ok(())
}

/// Writes `summary.json`, `cases.jsonl` and `table.txt` under `out`.
pub fn emit_reports<T: Serialize>(summary: &Summary, cases: &[T], out: &Path) -> Result<(), RunError> {
    if cases.is_empty() {
        return Err(RunError::NoCases);
    }
    write_cases(out, cases)?;
    let path = out.join("summary.json");
    let mut json = serde_json::to_string_pretty(summary).map_err(|source| RunError::Json {
        path: path.clone(),
        source,
    })?;
    json.push('\n');
    write_file(&path, &json)?;
    write_file(&out.join("table.txt"), &render_table(summary))
}

fn method_label(summary: &Summary) -> String {
    let m = &summary.metadata;
    match (summary.suite, m.k) {
        (Suite::Ablation, _) => format!("IKE ({}, k={})", m.ablation, m.k),
        (_, 0) => "PROMPT".to_string(),
        (_, k) => format!("IKE (k={k})"),
    }
}

/// Fixed-width text table with one-decimal values.
pub fn render_table(summary: &Summary) -> String {
    let mut t = String::new();
    let label = method_label(summary);
    let width = label.len().max(6);
    if let Some(r) = &summary.metrics {
        let _ = writeln!(
            t,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "Method", "S", "ES", "PS", "NS", "EM", "PM", "NM"
        );
        let _ = writeln!(
            t,
            "{:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}",
            label,
            round1(r.s),
            round1(r.es),
            round1(r.ps),
            round1(r.ns),
            round1(r.em),
            round1(r.pm),
            round1(r.nm)
        );
        if let (Some(drop), Some(rate)) = (r.prob_drop, r.forgetting_rate) {
            let _ = writeln!(t, "\nprob drop {:.1}  forgetting rate {:.1}%", round1(drop), round1(rate));
        }
    }
    if let Some(c) = &summary.cka {
        let mut header = format!("{:<width$}  {:>9}", "Method", "CKA");
        let mut row = format!("{:<width$}  {:>9.2}", label, c.mean);
        for a in &c.false_rates {
            let col = format!("FR@{:?}", a.alpha);
            let _ = write!(header, "  {col:>9}");
            let _ = write!(row, "  {:>8.1}%", round1(a.false_rate));
        }
        let _ = writeln!(t, "{header}\n{row}");
    }
    if let Some(m) = &summary.temporal {
        let _ = writeln!(t, "{:<width$}  {:>11}", "Method", "Memorized");
        let _ = writeln!(t, "{:<width$}  {:>10.1}%", label, round1(m.memorization_ratio));
    }
    t
}

pub fn read_summary(path: &Path) -> Result<Summary, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| RunError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_case_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RunError::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

/// Recomputes the summary of a finished run directory from its case log and
/// rewrites `summary.json` and `table.txt`. Pooling and alphas default to the
/// values recorded in the run.
pub fn rerender(run_dir: &Path, pooling: Option<Pooling>, alphas: Option<&[f64]>) -> Result<Summary, RunError> {
    let mut summary = read_summary(&run_dir.join("summary.json"))?;
    let cases_path = run_dir.join("cases.jsonl");
    match summary.suite {
        Suite::Edit | Suite::Ablation => {
            let cases: Vec<CaseLog> = read_case_lines(&cases_path)?;
            if cases.is_empty() {
                return Err(RunError::NoCases);
            }
            let pooling = match pooling {
                Some(p) => p,
                None => summary.metadata.pooling.parse().map_err(RunError::Config)?,
            };
            summary.metadata.pooling = pooling.as_str().into();
            summary.metadata.cases = cases.len();
            summary.metrics = Some(edit_metrics(&cases, pooling)?);
            emit_reports(&summary, &cases, run_dir)?;
        }
        Suite::Cka => {
            let rows: Vec<CkaRow> = read_case_lines(&cases_path)?;
            let alphas: Vec<f64> = match alphas {
                Some(a) => a.to_vec(),
                None => summary
                    .cka
                    .as_ref()
                    .map(|c| c.false_rates.iter().map(|a| a.alpha).collect())
                    .unwrap_or_default(),
            };
            summary.metadata.cases = rows.len();
            summary.cka = Some(CkaSummary::from_rows(&rows, &alphas)?);
            emit_reports(&summary, &rows, run_dir)?;
        }
        Suite::Temporal => {
            let rows: Vec<TemporalRow> = read_case_lines(&cases_path)?;
            summary.metadata.cases = rows.len();
            summary.temporal = Some(TemporalSummary::from_rows(&rows)?);
            emit_reports(&summary, &rows, run_dir)?;
        }
    }
    Ok(summary)
}
