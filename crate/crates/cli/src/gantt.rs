//! Gantt data from a trace: execution intervals, releases, deadlines,
//! masks and alarms as `task,start,end,kind` rows, or an SVG chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use envelope_core::{RecordKind, Tick, Trace};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Row {
    pub task: String,
    pub start: Tick,
    pub end: Tick,
    pub kind: String,
}

impl Row {
    fn new(task: &str, start: Tick, end: Tick, kind: impl Into<String>) -> Self {
        Row {
            task: task.to_string(),
            start,
            end,
            kind: kind.into(),
        }
    }
}

/// Rows in trace order; execution intervals are emitted when they close.
pub fn rows(trace: &Trace) -> Vec<Row> {
    let end_of_trace = trace.records().last().map_or(0, |r| r.time);
    let mut out = Vec::new();
    let mut running: BTreeMap<(String, u64), Tick> = BTreeMap::new();
    let mut masks: BTreeMap<String, (Tick, usize)> = BTreeMap::new();
    for r in trace.records() {
        let Some(task) = r.task.as_deref() else {
            continue;
        };
        let job = r.job.map(|j| (task.to_string(), j));
        match r.kind {
            RecordKind::Release => {
                out.push(Row::new(task, r.time, r.time, "release"));
                if let Some(d) = r.detail_value("deadline").and_then(|d| d.parse().ok()) {
                    out.push(Row::new(task, d, d, "deadline"));
                }
            }
            RecordKind::Start => {
                running.insert(job.expect("START names a job"), r.time);
            }
            RecordKind::Preempt | RecordKind::Complete | RecordKind::Drop | RecordKind::Miss => {
                if let Some(start) = job.as_ref().and_then(|j| running.remove(j)) {
                    if r.time > start {
                        out.push(Row::new(task, start, r.time, "exec"));
                    }
                }
                match r.kind {
                    RecordKind::Drop => out.push(Row::new(task, r.time, r.time, "drop")),
                    RecordKind::Miss => out.push(Row::new(task, r.time, r.time, "miss")),
                    _ => {}
                }
            }
            RecordKind::Mask => {
                let entry = masks.entry(task.to_string()).or_insert((r.time, 0));
                if entry.1 == 0 {
                    entry.0 = r.time;
                }
                entry.1 += 1;
            }
            RecordKind::Unmask => {
                if let Some(entry) = masks.get_mut(task) {
                    entry.1 = entry.1.saturating_sub(1);
                    if entry.1 == 0 && r.time > entry.0 {
                        out.push(Row::new(task, entry.0, r.time, "mask"));
                    }
                }
            }
            RecordKind::Alarm => {
                let kind = r.detail_value("kind").unwrap_or("unknown");
                out.push(Row::new(task, r.time, r.time, format!("alarm:{kind}")));
            }
            _ => {}
        }
    }
    for ((task, _), start) in running {
        if end_of_trace > start {
            out.push(Row::new(&task, start, end_of_trace, "exec"));
        }
    }
    for (task, (start, open)) in masks {
        if open > 0 && end_of_trace > start {
            out.push(Row::new(&task, start, end_of_trace, "mask"));
        }
    }
    out
}

pub fn to_csv(rows: &[Row]) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["task", "start", "end", "kind"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

const TICK_PX: u64 = 24;
const ROW_PX: u64 = 36;
const LABEL_PX: u64 = 90;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One lane per task: execution bars, hatched mask bars above them, release
/// and deadline ticks, and markers for drops, misses and alarms.
pub fn to_svg(rows: &[Row]) -> String {
    let mut lanes: Vec<&str> = Vec::new();
    for r in rows {
        if !lanes.contains(&r.task.as_str()) {
            lanes.push(&r.task);
        }
    }
    let span = rows.iter().map(|r| r.end).max().unwrap_or(0);
    let width = LABEL_PX + (span + 1) * TICK_PX;
    let height = (lanes.len() as u64 + 1) * ROW_PX;
    let x = |t: Tick| LABEL_PX + t * TICK_PX;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    s.push_str(
        r##"<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse"><path d="M0,4 L4,0" stroke="#888"/></pattern></defs>
"##,
    );
    for t in 0..=span {
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="0" x2="{0}" y2="{1}" stroke="#eee"/><text x="{0}" y="{2}" fill="#666">{3}</text>"##,
            x(t),
            height - 14,
            height - 2,
            t
        );
    }
    for (i, lane) in lanes.iter().enumerate() {
        let top = i as u64 * ROW_PX + 6;
        let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, top + 18, escape(lane));
        for r in rows.iter().filter(|r| r.task == *lane) {
            let (x0, x1) = (x(r.start), x(r.end));
            let _ = match r.kind.as_str() {
                "exec" => writeln!(
                    s,
                    r##"<rect x="{x0}" y="{}" width="{}" height="16" fill="#4a7fb5"/>"##,
                    top + 8,
                    x1 - x0
                ),
                "mask" => writeln!(
                    s,
                    r##"<rect x="{x0}" y="{top}" width="{}" height="6" fill="url(#hatch)" stroke="#888"/>"##,
                    x1 - x0
                ),
                "release" => writeln!(
                    s,
                    r##"<line x1="{x0}" y1="{top}" x2="{x0}" y2="{}" stroke="#2a2" stroke-width="2"/>"##,
                    top + 26
                ),
                "deadline" => writeln!(
                    s,
                    r##"<line x1="{x0}" y1="{top}" x2="{x0}" y2="{}" stroke="#a22" stroke-dasharray="3,2"/>"##,
                    top + 26
                ),
                "drop" | "miss" => writeln!(
                    s,
                    r##"<text x="{}" y="{}" fill="#c00" font-weight="bold">{}</text>"##,
                    x0 - 4,
                    top + 22,
                    if r.kind == "drop" { "D" } else { "X" }
                ),
                kind => writeln!(
                    s,
                    r##"<circle cx="{x0}" cy="{}" r="3" fill="#e90"><title>{}</title></circle>"##,
                    top + 28,
                    escape(kind)
                ),
            };
        }
    }
    s.push_str("</svg>\n");
    s
}
