//! Simulation trace records, their CSV form, and run metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::model::Tick;
use crate::monitor::{Alarm, LineClass};

pub const CSV_HEADER: &str = "time,kind,line,task,job,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    Raise,
    Internalize,
    Suppress,
    Mask,
    Unmask,
    IplSet,
    TimerSet,
    Release,
    Notify,
    Start,
    Preempt,
    Complete,
    Miss,
    Drop,
    Alarm,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Raise => "RAISE",
            RecordKind::Internalize => "INTERNALIZE",
            RecordKind::Suppress => "SUPPRESS",
            RecordKind::Mask => "MASK",
            RecordKind::Unmask => "UNMASK",
            RecordKind::IplSet => "IPL_SET",
            RecordKind::TimerSet => "TIMER_SET",
            RecordKind::Release => "RELEASE",
            RecordKind::Notify => "NOTIFY",
            RecordKind::Start => "START",
            RecordKind::Preempt => "PREEMPT",
            RecordKind::Complete => "COMPLETE",
            RecordKind::Miss => "MISS",
            RecordKind::Drop => "DROP",
            RecordKind::Alarm => "ALARM",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trace row. `job` is the 1-based job number within its task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub time: Tick,
    pub kind: RecordKind,
    pub line: Option<u32>,
    pub task: Option<String>,
    pub job: Option<u64>,
    pub detail: String,
}

impl Record {
    /// Value of `key` in a `key=value;key=value` detail string.
    pub fn detail_value(&self, key: &str) -> Option<&str> {
        self.detail.split(';').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.detail.split(';').any(|kv| kv == flag)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<Record>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn from_records(records: Vec<Record>) -> Self {
        Trace { records }
    }

    pub fn push(&mut self, record: Record) {
        debug_assert!(
            self.records
                .last()
                .is_none_or(|last| last.time <= record.time),
            "trace time went backwards"
        );
        self.records.push(record);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("trace CSV is UTF-8")
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, csv::Error> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let records = r.deserialize().collect::<Result<Vec<Record>, _>>()?;
        Ok(Trace { records })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub released: u64,
    pub completed: u64,
    pub misses: u64,
    pub drops: u64,
    pub notifications: u64,
    /// Live at the end of the run.
    pub unfinished: u64,
    pub max_response: Option<Tick>,
    pub avg_response: Option<f64>,
    /// Top-half ticks that held off this task's jobs.
    pub interference: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMetrics {
    pub raised: u64,
    pub internalized: u64,
    /// Internalizations back-filled after a deferral.
    pub deferred: u64,
    /// Occurrences only ever seen by the device counter.
    pub suppressed: u64,
    pub top_half_time: Tick,
    pub final_state: LineClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub horizon: Tick,
    pub tasks: BTreeMap<String, TaskMetrics>,
    pub lines: BTreeMap<u32, LineMetrics>,
    pub alarms: Vec<Alarm>,
    pub total_top_half_time: Tick,
    pub mask_updates: u64,
    pub ipl_changes: u64,
}

impl Metrics {
    pub fn misses(&self) -> u64 {
        self.tasks.values().map(|t| t.misses).sum()
    }

    pub fn drops(&self) -> u64 {
        self.tasks.values().map(|t| t.drops).sum()
    }

    pub fn alarms_of(&self, kind: crate::monitor::AlarmKind) -> usize {
        self.alarms.iter().filter(|a| a.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace::from_records(vec![
            Record {
                time: 0,
                kind: RecordKind::Raise,
                line: Some(2),
                task: Some("tau_h".into()),
                job: None,
                detail: "counter=1".into(),
            },
            Record {
                time: 3,
                kind: RecordKind::Alarm,
                line: Some(2),
                task: Some("tau_h".into()),
                job: None,
                detail: "kind=OutOfEnvelopeEntered;note=a,b".into(),
            },
            Record {
                time: 3,
                kind: RecordKind::IplSet,
                line: None,
                task: None,
                job: None,
                detail: String::new(),
            },
        ])
    }

    #[test]
    fn csv_header_and_line_endings() {
        let csv = sample().to_csv_string();
        assert!(csv.starts_with("time,kind,line,task,job,detail\n"));
        assert!(!csv.contains('\r'));
        assert!(csv.contains("0,RAISE,2,tau_h,,counter=1\n"));
        assert!(csv.contains("3,IPL_SET,,,,\n"));
    }

    #[test]
    fn csv_round_trip() {
        let trace = sample();
        let back = Trace::read_csv(trace.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn detail_lookup() {
        let trace = sample();
        let r = &trace.records()[1];
        assert_eq!(r.detail_value("kind"), Some("OutOfEnvelopeEntered"));
        assert_eq!(r.detail_value("missing"), None);
    }
}
