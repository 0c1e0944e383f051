//! Versioned, line-delimited output formats. Every emitted file starts with
//! its format version line.
//!
//! `trace_v1` records: `tick kind seq lane addr hit [k=v ...]`, with `-` for
//! fields that do not apply. `mld_v1` records: `tick name seq lane detail`.

use std::io::{self, Write};

use crate::isa::AccessKind;
use crate::memhier::LatencyTable;
use crate::mld::MldReport;
use crate::pipeline::{SquashReason, TraceEvent};

pub const TRACE_VERSION: &str = "trace_v1";
pub const MLD_VERSION: &str = "mld_v1";
pub const SWEEP_VERSION: &str = "sweep_v1";
pub const MATRIX_VERSION: &str = "matrix_v1";

pub fn render_trace_line(event: &TraceEvent) -> String {
    match event {
        TraceEvent::MemAccess { tick, seq, lane, kind, addr, hit, .. } => {
            let k = match kind {
                AccessKind::Load => "load",
                AccessKind::Store => "store",
            };
            format!("{tick} {k} {seq} {lane} {addr:#x} {}", hit.label())
        }
        TraceEvent::Alu { tick, seq, stmt, lanes } => {
            format!("{tick} alu {seq} - - - stmt={stmt} lanes={lanes}")
        }
        TraceEvent::Fence { tick, seq } => format!("{tick} fence {seq} - - -"),
        TraceEvent::RegionStart { tick, seq, chunk } => {
            format!("{tick} region_start {seq} - - - chunk={chunk}")
        }
        TraceEvent::ReplayDecision { tick, seq, lane, vob, hob } => {
            format!("{tick} replay_decision {seq} {lane} - - vob={vob} hob={hob}")
        }
        TraceEvent::RegionEnd { tick, seq, chunk, pass, taint } => {
            format!("{tick} region_end {seq} - - - chunk={chunk} pass={pass} taint={taint}")
        }
        TraceEvent::RegionCommit { tick, chunk, replays } => {
            format!("{tick} region_commit - - - - chunk={chunk} replays={replays}")
        }
        TraceEvent::BranchResolve { tick, site, predicted, actual } => {
            let p = match predicted {
                Some(true) => "taken",
                Some(false) => "not_taken",
                None => "none",
            };
            let a = if *actual { "taken" } else { "not_taken" };
            format!("{tick} branch - - {site:#x} - predicted={p} actual={a}")
        }
        TraceEvent::Squash { tick, reason } => {
            let r = match reason {
                SquashReason::MemOrder => "mem_order",
                SquashReason::Branch => "branch",
            };
            format!("{tick} squash - - - - reason={r}")
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, events: &[TraceEvent]) -> io::Result<()> {
    writeln!(w, "{TRACE_VERSION}")?;
    for ev in events {
        writeln!(w, "{}", render_trace_line(ev))?;
    }
    Ok(())
}

pub fn write_mld_report<W: Write>(mut w: W, report: &MldReport) -> io::Result<()> {
    writeln!(w, "{MLD_VERSION}")?;
    for f in &report.firings {
        writeln!(w, "{} {} {} {} {}", f.tick, f.predicate, f.instr_seq, f.lane, f.detail)?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, table: &LatencyTable) -> io::Result<()> {
    writeln!(w, "{SWEEP_VERSION}")?;
    writeln!(w, "size_bytes,mean_ticks,samples")?;
    for row in &table.rows {
        writeln!(w, "{},{:.3},{}", row.array_size, row.mean_latency, row.samples)?;
    }
    Ok(())
}

/// Wide-format matrix: one row per scenario, one accuracy column per
/// mitigation.
pub fn write_matrix_csv<W: Write>(
    mut w: W,
    mitigations: &[&str],
    rows: &[(String, Vec<f64>)],
) -> io::Result<()> {
    writeln!(w, "{MATRIX_VERSION}")?;
    writeln!(w, "scenario,{}", mitigations.join(","))?;
    for (name, cells) in rows {
        let cells: Vec<String> = cells.iter().map(|a| format!("{a:.4}")).collect();
        writeln!(w, "{},{}", name, cells.join(","))?;
    }
    Ok(())
}

pub fn write_matrix_report<W: Write>(
    mut w: W,
    mitigations: &[&str],
    rows: &[(String, Vec<f64>)],
    leak_threshold: f64,
) -> io::Result<()> {
    writeln!(w, "mitigation matrix (accuracy per cell; leak when > {leak_threshold:.4})")?;
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
    write!(w, "{:name_w$}", "scenario")?;
    for m in mitigations {
        write!(w, "  {m:>22}")?;
    }
    writeln!(w)?;
    for (name, cells) in rows {
        write!(w, "{name:name_w$}")?;
        for a in cells {
            let verdict = if *a > leak_threshold { "leak" } else { "ok" };
            write!(w, "  {:>17} {verdict:>4}", format!("{a:.4}"))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memhier::{HitLevel, LatencyRow};

    #[test]
    fn trace_starts_with_version_line() {
        let events = vec![TraceEvent::MemAccess {
            tick: 3,
            seq: 1,
            lane: 2,
            kind: AccessKind::Load,
            addr: 0x1040,
            size: 4,
            value: 9,
            hit: HitLevel::Level(0),
            latency: 40,
        }];
        let mut out = Vec::new();
        write_trace(&mut out, &events).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("trace_v1"));
        assert_eq!(lines.next(), Some("3 load 1 2 0x1040 L1"));
    }

    #[test]
    fn sweep_csv_has_header_and_rows() {
        let table = LatencyTable {
            rows: vec![LatencyRow { array_size: 4096, mean_latency: 40.0, samples: 10 }],
        };
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &table).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("sweep_v1\nsize_bytes,mean_ticks,samples\n4096,40.000,10\n"));
    }
}
