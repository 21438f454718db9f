use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentReport, LeakReport};
use crate::evalmetrics::format_percent;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    /// `.md` selects markdown, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("md") | Some("markdown") => ReportFormat::Markdown,
            _ => ReportFormat::Csv,
        }
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_id: String,
    pub ap: f64,
    pub ssim: f64,
    pub backend: String,
    pub attack: String,
    pub transform: String,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
}

const HEADER: [&str; 9] = ["query_id", "ap", "ssim", "backend", "attack", "transform", "T", "epsilon", "seed"];

pub fn report_rows(report: &ExperimentReport) -> Vec<ReportRow> {
    let c = &report.config;
    report
        .rows
        .iter()
        .map(|r| ReportRow {
            query_id: r.query_id.clone(),
            ap: r.ap,
            ssim: r.ssim,
            backend: c.backend.name().into(),
            attack: c.attack.name().into(),
            transform: c.transform.label(),
            iterations: c.iterations(),
            epsilon: c.pire.epsilon,
            seed: c.seed,
        })
        .collect()
}

fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != HEADER {
        return Err(Error::Data(format!("unexpected report header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn render_markdown(report: &ExperimentReport) -> String {
    let c = &report.config;
    let mut s = format!(
        "### {}: {} backend, {} queries, attack {}, transform {}\n\n",
        report.dataset,
        c.backend.name(),
        match c.queries {
            super::QueryMode::Bb => "BB",
            super::QueryMode::Wi => "WI",
        },
        c.attack.name(),
        c.transform.label()
    );
    s.push_str("| query | AP (%) | SSIM |\n|---|---:|---:|\n");
    for r in &report.rows {
        s.push_str(&format!("| {} | {} | {:.4} |\n", r.query_id, format_percent(r.ap), r.ssim));
    }
    s.push_str(&format!("| **mAP** | {} | {:.4} |\n", format_percent(report.map), report.mean_ssim));
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => write(path, &csv_bytes(&report_rows(report))?),
        ReportFormat::Markdown => write(path, render_markdown(report).as_bytes()),
    }
}

pub fn emit_leak_report(report: &LeakReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["query_id", "background", "query", "ap"])?;
            for r in &report.rows {
                w.write_record([report.query_id.as_str(), &r.background, &r.query, &r.ap.to_string()])?;
            }
            write(path, &w.into_inner().map_err(|e| Error::Data(e.to_string()))?)
        }
        ReportFormat::Markdown => {
            let mut s = format!("### {}: leak test for {}\n\n| background | query | AP (%) |\n|---|---|---:|\n", report.dataset, report.query_id);
            for r in &report.rows {
                s.push_str(&format!("| {} | {} | {} |\n", r.background, r.query, format_percent(r.ap)));
            }
            write(path, s.as_bytes())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Attack, Backend, ExperimentConfig, QueryMode, QueryResult};

    fn report(n: usize) -> ExperimentReport {
        let rows: Vec<QueryResult> = (0..n)
            .map(|i| QueryResult {
                query_id: format!("q{i}"),
                image_id: format!("img{i}"),
                ap: 1.0 / (i as f64 + 3.0),
                ssim: 0.9 - 0.01 * i as f64,
                note: String::new(),
            })
            .collect();
        ExperimentReport {
            config: ExperimentConfig::new(Backend::Cedd, QueryMode::Bb, Attack::PireRefined, 5),
            dataset: "t".into(),
            map: rows.iter().map(|r| r.ap).sum::<f64>() / n.max(1) as f64,
            mean_ssim: 0.9,
            rows,
            runtime_secs: 0.0,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_report(&report(0), &p, ReportFormat::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "query_id,ap,ssim,backend,attack,transform,T,epsilon,seed\n");
        assert!(parse_report_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = report(7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_report(&r, &p, ReportFormat::Csv).unwrap();
        let back = parse_report_csv(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back, report_rows(&r));
        assert_eq!(back[0].iterations, 500);
    }

    #[test]
    fn markdown_has_one_row_per_query_plus_summary() {
        let md = render_markdown(&report(4));
        let body = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| query")).count();
        assert_eq!(body, 5);
        assert!(md.contains("| q0 | 33.33 |"));
    }
}
