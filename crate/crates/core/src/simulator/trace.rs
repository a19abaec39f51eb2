use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::payload::{Bin, Payload};
use crate::detectors::DetectorValue;
use crate::model::{ProcessId, Time};

/// One trace line: `{"step": 3, "ev": "deliver", ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: Time,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
pub enum EventKind {
    Send {
        p: ProcessId,
        msg: u64,
        payload: Payload,
    },
    Deliver {
        p: ProcessId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<ProcessId>,
        msg: u64,
        payload: Payload,
    },
    Crash {
        p: ProcessId,
    },
    /// Detector reading used by the step that follows.
    Oracle {
        p: ProcessId,
        value: DetectorValue,
    },
    Round {
        p: ProcessId,
        round: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v: Option<Bin>,
    },
    Decide {
        p: ProcessId,
        value: Bin,
        round: u32,
    },
    Output {
        p: ProcessId,
        value: DetectorValue,
    },
    Halt {
        p: ProcessId,
    },
}

impl EventKind {
    pub fn process(&self) -> ProcessId {
        match *self {
            EventKind::Send { p, .. }
            | EventKind::Deliver { p, .. }
            | EventKind::Crash { p }
            | EventKind::Oracle { p, .. }
            | EventKind::Round { p, .. }
            | EventKind::Decide { p, .. }
            | EventKind::Output { p, .. }
            | EventKind::Halt { p } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub algorithm: String,
    pub n: usize,
    pub f: usize,
    pub inputs: Vec<Bin>,
    pub crash: BTreeMap<ProcessId, Time>,
    pub oracle: String,
    pub policy: String,
    pub seed: u64,
    pub horizon: Time,
    pub identified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndReason {
    /// Nothing left to deliver or step, and the oracle and pattern are final.
    Quiescent,
    /// The step budget ran out.
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEnd {
    pub step: Time,
    pub reason: EndReason,
    /// Horizon reached with some live process unfinished.
    pub truncated: bool,
    /// Messages still in flight to live processes.
    pub pending: usize,
    pub crashed: BTreeSet<ProcessId>,
    pub decisions: BTreeMap<ProcessId, Bin>,
    pub rounds: Vec<u32>,
}

/// Complete record of one execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
    pub end: TraceEnd,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
enum Frame {
    Start {
        step: Time,
        #[serde(flatten)]
        header: TraceHeader,
    },
    End(TraceEnd),
}

impl Trace {
    pub fn truncated(&self) -> bool {
        self.end.truncated
    }

    /// Line-delimited JSON: a start line, one line per event, an end line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let start = Frame::Start {
            step: 0,
            header: self.header.clone(),
        };
        serde_json::to_writer(&mut w, &start)?;
        writeln!(w)?;
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &Frame::End(self.end.clone()))?;
        writeln!(w)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let parse_err = |i: usize, e: &dyn std::fmt::Display| format!("line {}: {e}", i + 1);
        let (i, first) = lines.next().ok_or("empty trace")?;
        let first = first.map_err(|e| parse_err(i, &e))?;
        let header = match serde_json::from_str::<Frame>(&first).map_err(|e| parse_err(i, &e))? {
            Frame::Start { header, .. } => header,
            Frame::End(_) => return Err("trace must begin with a start line".into()),
        };
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| parse_err(i, &e))?;
            let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(i, &e))?;
            if v.get("ev").and_then(|e| e.as_str()) == Some("end") {
                let Frame::End(end) = serde_json::from_value(v).map_err(|e| parse_err(i, &e))?
                else {
                    unreachable!()
                };
                return Ok(Trace {
                    header,
                    events,
                    end,
                });
            }
            events.push(serde_json::from_value(v).map_err(|e| parse_err(i, &e))?);
        }
        Err("trace has no end line".into())
    }

    /// Decisions in event order as `(event index, process, value, round)`.
    pub fn decisions(&self) -> impl Iterator<Item = (usize, ProcessId, Bin, u32)> + '_ {
        self.events
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e.kind {
                EventKind::Decide { p, value, round } => Some((i, p, value, round)),
                _ => None,
            })
    }

    pub fn correct(&self) -> BTreeSet<ProcessId> {
        ProcessId::all(self.header.n)
            .filter(|p| !self.end.crashed.contains(p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_json_shape() {
        let e = Event {
            step: 3,
            kind: EventKind::Deliver {
                p: ProcessId::new(2),
                from: None,
                msg: 7,
                payload: Payload::Propose { r: 1, v: 0 },
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"step":3,"ev":"deliver","p":2,"msg":7,"payload":["Propose",1,0]}"#
        );
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), e);
        let o = Event {
            step: 1,
            kind: EventKind::Oracle {
                p: ProcessId::new(1),
                value: DetectorValue::Count(2),
            },
        };
        let s = serde_json::to_string(&o).unwrap();
        assert_eq!(s, r#"{"step":1,"ev":"oracle","p":1,"value":2}"#);
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), o);
    }
}
