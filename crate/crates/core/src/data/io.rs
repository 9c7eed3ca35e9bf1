//! JSON-lines dataset files, one trial per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Action, AgentKind, AgentStream, InteractionTrial, PairType, Role};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    kind: AgentKind,
    dims: usize,
    frames: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    trial_id: String,
    action: Action,
    pair_type: PairType,
    rate_hz: f64,
    leader: Option<Role>,
    a1: StreamRecord,
    a2: StreamRecord,
}

fn to_record(t: &InteractionTrial) -> TrialRecord {
    let s = |a: &AgentStream| StreamRecord {
        kind: a.kind,
        dims: a.dims,
        frames: a.frames.clone(),
    };
    TrialRecord {
        trial_id: t.trial_id.clone(),
        action: t.action,
        pair_type: t.pair_type,
        rate_hz: t.rate_hz(),
        leader: t.leader,
        a1: s(&t.a1),
        a2: s(&t.a2),
    }
}

/// Serializes one trial as a single JSON line (no trailing newline).
pub fn trial_to_line(t: &InteractionTrial) -> Result<String> {
    Ok(serde_json::to_string(&to_record(t))?)
}

/// Parses one dataset line; `line_no` is 1-based and only used in errors.
pub fn trial_from_line(line: &str, line_no: usize) -> Result<InteractionTrial> {
    let de = &mut serde_json::Deserializer::from_str(line);
    let rec: TrialRecord = serde_path_to_error::deserialize(de).map_err(|e| Error::Dataset {
        line: line_no,
        msg: format!("field `{}`: {}", e.path(), e.inner()),
    })?;
    let stream = |r: StreamRecord, role: &str| -> Result<AgentStream> {
        let s = AgentStream {
            kind: r.kind,
            dims: r.dims,
            frames: r.frames,
            rate_hz: rec.rate_hz,
        };
        s.validate().map_err(|e| Error::Dataset {
            line: line_no,
            msg: format!("field `{role}`: {e}"),
        })?;
        Ok(s)
    };
    let trial = InteractionTrial {
        trial_id: rec.trial_id,
        action: rec.action,
        pair_type: rec.pair_type,
        a1: stream(rec.a1, "a1")?,
        a2: stream(rec.a2, "a2")?,
        leader: rec.leader,
    };
    trial.validate().map_err(|e| Error::Dataset {
        line: line_no,
        msg: e.to_string(),
    })?;
    Ok(trial)
}

pub fn write_dataset<W: Write>(trials: &[InteractionTrial], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for t in trials {
        w.write_all(trial_to_line(t)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: std::io::Read>(input: R) -> Result<Vec<InteractionTrial>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(trial_from_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(trials: &[InteractionTrial], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_dataset(trials, f)
}

pub fn load_dataset(path: &Path) -> Result<Vec<InteractionTrial>> {
    read_dataset(std::fs::File::open(path)?)
}
