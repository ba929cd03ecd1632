//! Benchmark reports: per-pair corner errors, their mean, and the fraction
//! of pairs below a fixed set of error thresholds.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "ihn-report/1";
pub const TIMING_SCHEMA: &str = "ihn-timing/1";
pub const TRACE_SCHEMA: &str = "ihn-trace/1";

/// Error thresholds of the fraction curve, in pixels.
pub const THRESHOLDS: [f64; 8] = [0.05, 0.1, 0.5, 1.0, 3.0, 5.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub index: u64,
    /// Average corner error; infinite when the estimator failed.
    pub ace: f64,
    pub wall_ms: f64,
    /// `(scale, ace)` after every iteration, when traced.
    pub trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub method: String,
    pub fingerprint: String,
    /// In pair-index order.
    pub rows: Vec<PairResult>,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        k => Error::Config(format!("csv: {k:?}")),
    }
}

impl BenchReport {
    pub fn new(method: impl Into<String>, fingerprint: impl Into<String>, mut rows: Vec<PairResult>) -> Self {
        rows.sort_by_key(|r| r.index);
        BenchReport {
            method: method.into(),
            fingerprint: fingerprint.into(),
            rows,
        }
    }

    pub fn aces(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ace).collect()
    }

    /// Arithmetic mean of the per-pair errors (0 for an empty report).
    pub fn mace(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.ace).sum::<f64>() / self.rows.len() as f64
    }

    /// Fraction of pairs with error at most each threshold.
    pub fn fraction_curve(&self) -> [f64; 8] {
        let n = self.rows.len().max(1) as f64;
        THRESHOLDS.map(|t| self.rows.iter().filter(|r| r.ace <= t).count() as f64 / n)
    }

    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = ["kind", "index", "ace", "mace", "count"].map(String::from).to_vec();
        h.extend(THRESHOLDS.iter().map(|t| format!("le_{t}")));
        h
    }

    /// Schema line, header, one row per pair, then the summary row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let pad = THRESHOLDS.len() + 2;
        w.write_record(["schema", REPORT_SCHEMA, "method", &self.method, "fingerprint", &self.fingerprint])
            .map_err(csv_err)?;
        w.write_record(Self::header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec!["pair".to_string(), r.index.to_string(), r.ace.to_string()];
            rec.extend(std::iter::repeat_n(String::new(), pad));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let mut rec = vec![
            "summary".to_string(),
            String::new(),
            String::new(),
            self.mace().to_string(),
            self.rows.len().to_string(),
        ];
        rec.extend(self.fraction_curve().iter().map(|f| f.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }

    /// Per-pair wall-clock times, kept apart so the main report stays
    /// reproducible.
    pub fn write_timings<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["schema", TIMING_SCHEMA]).map_err(csv_err)?;
        w.write_record(["index", "wall_ms"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.index.to_string(), format!("{:.4}", r.wall_ms)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-iteration errors of every traced pair.
    pub fn write_traces<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["schema", TRACE_SCHEMA]).map_err(csv_err)?;
        w.write_record(["index", "iteration", "scale", "ace"]).map_err(csv_err)?;
        for r in &self.rows {
            for (k, (scale, ace)) in r.trace.iter().enumerate() {
                w.write_record([r.index.to_string(), (k + 1).to_string(), scale.to_string(), ace.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back a report written by [`BenchReport::write_csv`]. Timings
    /// and traces are not part of the file and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<BenchReport> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_reader(input);
        let mut recs = r.records();
        let bad = |m: &str| Error::Config(format!("report: {m}"));
        let schema = recs.next().ok_or_else(|| bad("empty file"))?.map_err(csv_err)?;
        if schema.get(0) != Some("schema") || schema.get(1) != Some(REPORT_SCHEMA) {
            return Err(bad("missing or unknown schema line"));
        }
        let method = schema.get(3).unwrap_or("").to_string();
        let fingerprint = schema.get(5).unwrap_or("").to_string();
        recs.next().ok_or_else(|| bad("missing header"))?.map_err(csv_err)?;
        let mut rows = Vec::new();
        let mut summary = false;
        for rec in recs {
            let rec = rec.map_err(csv_err)?;
            match rec.get(0) {
                Some("pair") => {
                    let index = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad index"))?;
                    let ace = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad ace"))?;
                    rows.push(PairResult {
                        index,
                        ace,
                        wall_ms: 0.0,
                        trace: Vec::new(),
                    });
                }
                Some("summary") => summary = true,
                _ => return Err(bad("unknown row kind")),
            }
        }
        if !summary {
            return Err(bad("missing summary row"));
        }
        Ok(BenchReport::new(method, fingerprint, rows))
    }
}
