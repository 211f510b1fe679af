//! Line-oriented output records: fused track states, collision alerts,
//! engine counters, and simulator ground truth.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Alert {
        a: u64,
        b: u64,
        t: f64,
        d: f64,
    },
    Track {
        id: u64,
        t: f64,
        lat: f64,
        lon: f64,
        vn: f64,
        ve: f64,
    },
    /// End-of-stream counters. `sent` is only known when the stream was
    /// generated in the same run.
    Stats {
        sent: Option<u64>,
        delivered: u64,
        accepted: u64,
        late: u64,
        degenerate: u64,
    },
}

/// An event together with the engine clock at which it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub at: f64,
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "truth")]
pub struct TruthRecord {
    pub t: f64,
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub vn: f64,
    pub ve: f64,
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    let mut s = serde_json::to_string(record).expect("records are always serializable");
    s.push('\n');
    s
}

pub fn write_lines<'a, T, W, I>(mut w: W, records: I) -> std::io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for r in records {
        w.write_all(to_line(r).as_bytes())?;
    }
    w.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads one JSON record per non-empty line.
pub fn read_lines<T, R>(r: R) -> Result<Vec<T>, ReadError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReadError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
