//! CSV and plain-text serialization of [`RunTrace`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::RunTrace;
use crate::vecops::{fmt_f64, norm};

pub const TRACE_HEADER: &str = "n,f_value,grad_sq_norm,d_norm,v_norm,wallclock_s,assumption_violated";

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub f_value: f64,
    pub grad_sq_norm: f64,
    pub d_norm: f64,
    pub v_norm: f64,
    pub wallclock_s: f64,
    pub assumption_violated: bool,
}

pub fn trace_rows(trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            n: r.n,
            f_value: r.f_value,
            grad_sq_norm: r.grad_sq_norm,
            d_norm: norm(&r.displacement),
            v_norm: norm(&r.momentum),
            wallclock_s: r.wallclock_s,
            assumption_violated: r.left_domain,
        })
        .collect()
}

pub fn trace_csv_string(trace: &RunTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for row in trace_rows(trace) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.n,
            fmt_f64(row.f_value),
            fmt_f64(row.grad_sq_norm),
            fmt_f64(row.d_norm),
            fmt_f64(row.v_norm),
            fmt_f64(row.wallclock_s),
            row.assumption_violated
        );
    }
    out
}

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv_string(trace))?;
    Ok(())
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(Error::parse(1, format!("expected header '{TRACE_HEADER}'")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad number '{}'", &rec[i])))
        };
        rows.push(TraceRow {
            n: rec[0]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad index '{}'", &rec[0])))?,
            f_value: num(1)?,
            grad_sq_norm: num(2)?,
            d_norm: num(3)?,
            v_norm: num(4)?,
            wallclock_s: num(5)?,
            assumption_violated: rec[6]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad flag '{}'", &rec[6])))?,
        });
    }
    Ok(rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    parse_trace_csv(&std::fs::read_to_string(path)?)
}

fn vector_lines<'a>(vectors: impl Iterator<Item = &'a Vec<f64>>) -> String {
    let mut out = String::new();
    for v in vectors {
        let line: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.weights.txt` (w̃_n), `<stem>.displacement.txt` (d_n) and
/// `<stem>.momentum.txt` (v_{n+1}), one line per meta iteration with 17
/// significant digits per entry.
pub fn write_vector_sidecars(trace: &RunTrace, dir: &Path, stem: &str) -> Result<()> {
    let files = [
        ("weights", vector_lines(trace.records.iter().map(|r| &r.weights))),
        ("displacement", vector_lines(trace.records.iter().map(|r| &r.displacement))),
        ("momentum", vector_lines(trace.records.iter().map(|r| &r.momentum))),
    ];
    for (kind, body) in files {
        std::fs::write(dir.join(format!("{stem}.{kind}.txt")), body)?;
    }
    Ok(())
}

pub fn parse_vector_lines(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(i as u64 + 1, format!("bad number '{t}'"))))
                .collect()
        })
        .collect()
}
