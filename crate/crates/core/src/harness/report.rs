use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::RunOutcome;
use crate::error::Result;
use crate::solvers::TraceRecord;

/// One (image, scenario, method) run. The CSV columns follow the field
/// order; absent values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub scenario: String,
    pub method: String,
    pub psnr: Option<f64>,
    pub selected_iteration: Option<usize>,
    /// Best-PSNR iteration seen by the ground-truth monitor.
    pub oracle_iteration: Option<usize>,
    pub oracle_psnr: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    /// `WxH->wxh` when the image was center-cropped.
    pub crop: Option<String>,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn new(image: &str, scenario: &str, method: &str, seed: u64) -> Self {
        Self {
            image: image.to_string(),
            scenario: scenario.to_string(),
            method: method.to_string(),
            psnr: None,
            selected_iteration: None,
            oracle_iteration: None,
            oracle_psnr: None,
            wall_time_s: 0.0,
            seed,
            crop: None,
            error: None,
        }
    }

    pub(crate) fn fill(&mut self, o: &RunOutcome) {
        self.psnr = Some(o.psnr);
        self.wall_time_s = o.wall_time_s;
        if let Some(r) = &o.result {
            self.selected_iteration = Some(r.selected_iteration);
            if let Some(best) = &r.oracle {
                self.oracle_iteration = Some(best.iteration);
                self.oracle_psnr = Some(best.psnr);
            }
        }
    }

    fn key(&self) -> (&str, &str, &str) {
        (&self.image, &self.scenario, &self.method)
    }
}

/// Mean PSNR of one (scenario, method) pair over the images that succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub method: String,
    pub mean_psnr: Option<f64>,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    /// Snapshot of the configuration that produced the rows.
    pub config: serde_json::Value,
}

impl Report {
    /// Sorts rows by (image, scenario, method) and computes the aggregates.
    pub fn new(mut rows: Vec<ReportRow>, config: serde_json::Value) -> Self {
        rows.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut pairs: Vec<(&str, &str)> = rows
            .iter()
            .map(|r| (r.scenario.as_str(), r.method.as_str()))
            .collect();
        pairs.sort();
        pairs.dedup();
        let aggregates = pairs
            .into_iter()
            .map(|(scenario, method)| {
                let group: Vec<&ReportRow> = rows
                    .iter()
                    .filter(|r| r.scenario == scenario && r.method == method)
                    .collect();
                let ok: Vec<f64> = group.iter().filter_map(|r| r.psnr).collect();
                Aggregate {
                    scenario: scenario.to_string(),
                    method: method.to_string(),
                    mean_psnr: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                    runs: group.len(),
                    failures: group.len() - ok.len(),
                }
            })
            .collect();
        Self {
            rows,
            aggregates,
            config,
        }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn normalized(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.wall_time_s = 0.0;
        }
        r
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for a in &self.aggregates {
            w.serialize(a)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    /// Plain-text table of the aggregates.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<14} {:<10} {:>8} {:>5} {:>6}\n",
            "scenario", "method", "psnr", "runs", "failed"
        );
        for a in &self.aggregates {
            let p = a
                .mean_psnr
                .map_or_else(|| "-".to_string(), |p| format!("{p:.2}"));
            out.push_str(&format!(
                "{:<14} {:<10} {:>8} {:>5} {:>6}\n",
                a.scenario, a.method, p, a.runs, a.failures
            ));
        }
        out
    }
}

/// Append-only CSV of finished runs, flushed after every row so that an
/// interrupted sweep leaves a readable file.
#[derive(Debug)]
pub struct RunLog {
    writer: csv::Writer<File>,
}

impl RunLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
        })
    }

    pub fn append(&mut self, row: &ReportRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_trace_csv(traces: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in traces {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}
