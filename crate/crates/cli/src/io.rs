//! Trace and summary files.
//!
//! CSV traces carry the per-sample diagnostics only
//! (`t,step,constraint_violation,kkt_total,dist_to_opt`); step counters and
//! wall time live in the summary. JSON traces carry the whole [`Trace`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use piflow::bench::{BenchSummary, FlowStats, RunRecord};
use piflow::{Trace, TraceSample};

use crate::config::Format;
use crate::CliError;

pub const TRACE_HEADER: [&str; 5] = ["t", "step", "constraint_violation", "kkt_total", "dist_to_opt"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    t: f64,
    step: usize,
    constraint_violation: f64,
    kkt_total: f64,
    dist_to_opt: Option<f64>,
}

pub fn write_trace_csv<W: Write>(samples: &[TraceSample], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for s in samples {
        out.write_record([
            fmt_f64(s.t),
            s.step.to_string(),
            fmt_f64(s.constraint_violation),
            fmt_f64(s.kkt_residual),
            fmt_opt(s.dist_to_opt),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceSample>, CliError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(CliError::config(format!("unexpected trace header {header:?}")));
    }
    rdr.deserialize::<TraceRow>()
        .map(|row| {
            let row = row?;
            Ok(TraceSample {
                t: row.t,
                step: row.step,
                x: None,
                lambda: None,
                constraint_violation: row.constraint_violation,
                kkt_residual: row.kkt_total,
                dist_to_opt: row.dist_to_opt,
            })
        })
        .collect()
}

pub fn write_trace_json<W: Write>(trace: &Trace, w: W) -> Result<(), CliError> {
    serde_json::to_writer(w, trace)?;
    Ok(())
}

pub fn read_trace_json<R: Read>(r: R) -> Result<Trace, CliError> {
    Ok(serde_json::from_reader(r)?)
}

pub fn write_trace(trace: &Trace, format: Format, path: &Path) -> Result<(), CliError> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_trace_csv(&trace.samples, w),
        Format::Json => write_trace_json(trace, w),
    }
}

/// Reads a trace file written by [`write_trace`]. CSV files yield a trace
/// whose counters are reconstructed from the last sample.
pub fn read_trace(format: Format, path: &Path) -> Result<Trace, CliError> {
    let r = BufReader::new(File::open(path)?);
    match format {
        Format::Json => read_trace_json(r),
        Format::Csv => {
            let samples = read_trace_csv(r)?;
            Ok(Trace {
                accepted_steps: samples.last().map_or(0, |s| s.step),
                samples,
                rejected_steps: 0,
                wall_time: 0.0,
            })
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    seed: u64,
    flow: piflow::FlowKind,
    accepted_steps: usize,
    rejected_steps: usize,
    wall_time: f64,
    final_kkt: f64,
    final_violation: f64,
    final_dist: Option<f64>,
    stop_reason: piflow::StopReason,
}

pub const RECORD_HEADER: [&str; 9] = [
    "seed",
    "flow",
    "accepted_steps",
    "rejected_steps",
    "wall_time",
    "final_kkt",
    "final_violation",
    "final_dist",
    "stop_reason",
];

pub const AGGREGATE_HEADER: [&str; 8] = ["flow", "runs", "n_mean", "n_std", "n_worst", "t_mean", "t_std", "t_worst"];

fn stop_name(r: piflow::StopReason) -> &'static str {
    match r {
        piflow::StopReason::HorizonReached => "horizon_reached",
        piflow::StopReason::KktToleranceMet => "kkt_tolerance_met",
        piflow::StopReason::StepUnderflow => "step_underflow",
    }
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.seed.to_string(),
            r.flow.to_string(),
            r.accepted_steps.to_string(),
            r.rejected_steps.to_string(),
            fmt_f64(r.wall_time),
            fmt_f64(r.final_kkt),
            fmt_f64(r.final_violation),
            fmt_opt(r.final_dist),
            stop_name(r.stop_reason).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<RunRecord>, CliError> {
    csv::Reader::from_reader(r)
        .deserialize::<RecordRow>()
        .map(|row| {
            let r = row?;
            Ok(RunRecord {
                seed: r.seed,
                flow: r.flow,
                accepted_steps: r.accepted_steps,
                rejected_steps: r.rejected_steps,
                wall_time: r.wall_time,
                final_kkt: r.final_kkt,
                final_violation: r.final_violation,
                final_dist: r.final_dist,
                stop_reason: r.stop_reason,
            })
        })
        .collect()
}

pub fn write_aggregates_csv<W: Write>(stats: &[FlowStats], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(AGGREGATE_HEADER)?;
    for s in stats {
        out.write_record([
            s.flow.to_string(),
            s.runs.to_string(),
            fmt_f64(s.n_mean),
            fmt_f64(s.n_std),
            fmt_f64(s.n_worst),
            fmt_f64(s.t_mean),
            fmt_f64(s.t_std),
            fmt_f64(s.t_worst),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_aggregates_csv<R: Read>(r: R) -> Result<Vec<FlowStats>, CliError> {
    Ok(csv::Reader::from_reader(r)
        .deserialize::<FlowStats>()
        .collect::<Result<_, _>>()?)
}

/// Writes `summary.{csv,json}`; CSV output also gets `aggregates.csv`.
pub fn write_summary(summary: &BenchSummary, format: Format, dir: &Path) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            write_records_csv(&summary.records, BufWriter::new(File::create(dir.join("summary.csv"))?))?;
            write_aggregates_csv(&summary.aggregates, BufWriter::new(File::create(dir.join("aggregates.csv"))?))
        }
        Format::Json => write_json(summary, &dir.join("summary.json")),
    }
}

pub fn read_summary(format: Format, dir: &Path) -> Result<BenchSummary, CliError> {
    match format {
        Format::Csv => Ok(BenchSummary {
            records: read_records_csv(BufReader::new(File::open(dir.join("summary.csv"))?))?,
            aggregates: read_aggregates_csv(BufReader::new(File::open(dir.join("aggregates.csv"))?))?,
        }),
        Format::Json => Ok(serde_json::from_reader(BufReader::new(File::open(dir.join("summary.json"))?))?),
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn header_is_fixed() {
        let mut buf = Vec::new();
        write_trace_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,step,constraint_violation,kkt_total,dist_to_opt\n");
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
