//! Tracklets and the line-oriented wire format that carries them to the edge.
//!
//! One message is one UTF-8 JSON object on one line:
//!
//! ```text
//! {"v":1,"sent_at":1.5,"camera_id":"cam0","object_id":3,"class":"vehicle","points":[{"t":1.5,"lat":41.0,"lon":2.0}]}
//! ```
//!
//! Keys are written in that order. Decoders accept any order. Floats are written
//! as the shortest decimal that parses back to the same value.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, METERS_PER_DEGREE};

pub const SCHEMA_VERSION: u32 = 1;

/// Sanity bound on the spread of a single tracklet.
pub const MAX_TRACKLET_SPREAD_M: f64 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Vehicle,
    Pedestrian,
    Camera,
    Unknown,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Vehicle,
        ClassLabel::Pedestrian,
        ClassLabel::Camera,
        ClassLabel::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassLabel::Vehicle => "vehicle",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::Camera => "camera",
            ClassLabel::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    /// Scenario clock, seconds.
    pub t: f64,
    pub pos: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub camera_id: String,
    pub local_object_id: u64,
    pub class_label: ClassLabel,
    pub points: Vec<TrackPoint>,
}

impl Tracklet {
    pub fn last_time(&self) -> Option<f64> {
        self.points.last().map(|p| p.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletMessage {
    pub schema_version: u32,
    pub sent_at: f64,
    pub tracklet: Tracklet,
}

impl TrackletMessage {
    pub fn new(sent_at: f64, tracklet: Tracklet) -> Self {
        TrackletMessage {
            schema_version: SCHEMA_VERSION,
            sent_at,
            tracklet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("empty points")]
    EmptyPoints,
    #[error("non-increasing timestamps at point {index}")]
    NonIncreasingTimestamps { index: usize },
    #[error("invalid timestamp {t} at point {index}")]
    InvalidTimestamp { index: usize, t: f64 },
    #[error("out-of-range coordinates at point {index}")]
    CoordinateOutOfRange { index: usize },
    #[error("points spread over more than 100 km")]
    SpreadTooLarge,
    #[error("sent_at {sent_at} precedes last point time {last}")]
    SentBeforeLastPoint { sent_at: f64, last: f64 },
}

/// Checks every tracklet invariant and reports all violations found.
pub fn validate_tracklet(t: Tracklet) -> Result<Tracklet, Vec<Violation>> {
    let mut violations = Vec::new();
    if t.points.is_empty() {
        violations.push(Violation::EmptyPoints);
    }
    for (index, p) in t.points.iter().enumerate() {
        if !p.t.is_finite() || p.t < 0.0 {
            violations.push(Violation::InvalidTimestamp { index, t: p.t });
        }
        if index > 0 && !(p.t > t.points[index - 1].t) {
            violations.push(Violation::NonIncreasingTimestamps { index });
        }
        if !p.pos.is_valid() {
            violations.push(Violation::CoordinateOutOfRange { index });
        }
    }
    if violations.is_empty() && exceeds_spread(&t.points) {
        violations.push(Violation::SpreadTooLarge);
    }
    if violations.is_empty() {
        Ok(t)
    } else {
        Err(violations)
    }
}

fn exceeds_spread(points: &[TrackPoint]) -> bool {
    points.iter().enumerate().any(|(i, a)| {
        points[i + 1..].iter().any(|b| {
            let mut dlon = b.pos.lon - a.pos.lon;
            if dlon > 180.0 {
                dlon -= 360.0;
            } else if dlon < -180.0 {
                dlon += 360.0;
            }
            let mean_lat = 0.5 * (a.pos.lat + b.pos.lat);
            let north = (b.pos.lat - a.pos.lat) * METERS_PER_DEGREE;
            let east = dlon * METERS_PER_DEGREE * mean_lat.to_radians().cos();
            north.hypot(east) > MAX_TRACKLET_SPREAD_M
        })
    })
}

pub fn validate_message(m: TrackletMessage) -> Result<TrackletMessage, Vec<Violation>> {
    let TrackletMessage {
        schema_version,
        sent_at,
        tracklet,
    } = m;
    let mut violations = match validate_tracklet(tracklet.clone()) {
        Ok(_) => Vec::new(),
        Err(v) => v,
    };
    if let Some(last) = tracklet.last_time() {
        if !sent_at.is_finite() || sent_at < last {
            violations.push(Violation::SentBeforeLastPoint { sent_at, last });
        }
    }
    if violations.is_empty() {
        Ok(TrackletMessage {
            schema_version,
            sent_at,
            tracklet,
        })
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("malformed message: {0}")]
    Syntax(String),
    #[error("unknown schema version {0}")]
    UnknownSchemaVersion(u64),
    #[error("invalid message: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

// Field order here is the canonical key order on the wire.
#[derive(Serialize, Deserialize)]
struct WireMessage {
    v: u32,
    sent_at: f64,
    camera_id: String,
    object_id: u64,
    class: ClassLabel,
    points: Vec<WirePoint>,
}

#[derive(Serialize, Deserialize)]
struct WirePoint {
    t: f64,
    lat: f64,
    lon: f64,
}

/// Canonical single-line encoding, newline-terminated.
pub fn encode_message(m: &TrackletMessage) -> Vec<u8> {
    let wire = WireMessage {
        v: m.schema_version,
        sent_at: m.sent_at,
        camera_id: m.tracklet.camera_id.clone(),
        object_id: m.tracklet.local_object_id,
        class: m.tracklet.class_label,
        points: m
            .tracklet
            .points
            .iter()
            .map(|p| WirePoint {
                t: p.t,
                lat: p.pos.lat,
                lon: p.pos.lon,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&wire).expect("wire message is always serializable");
    out.push(b'\n');
    out
}

/// Parses one line (trailing newline optional) into a validated message.
pub fn decode_message(bytes: &[u8]) -> Result<TrackletMessage, DecodeError> {
    let line = match bytes {
        [rest @ .., b'\n'] => rest,
        other => other,
    };
    let line = match line {
        [rest @ .., b'\r'] => rest,
        other => other,
    };
    let value: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let version = value
        .get("v")
        .ok_or_else(|| DecodeError::Syntax("missing field `v`".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| DecodeError::Syntax("field `v` is not an unsigned integer".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(DecodeError::UnknownSchemaVersion(version));
    }
    let wire: WireMessage =
        serde_json::from_value(value).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let msg = TrackletMessage {
        schema_version: wire.v,
        sent_at: wire.sent_at,
        tracklet: Tracklet {
            camera_id: wire.camera_id,
            local_object_id: wire.object_id,
            class_label: wire.class,
            points: wire
                .points
                .into_iter()
                .map(|p| TrackPoint {
                    t: p.t,
                    pos: GeoPoint {
                        lat: p.lat,
                        lon: p.lon,
                    },
                })
                .collect(),
        },
    };
    validate_message(msg).map_err(DecodeError::Invalid)
}
