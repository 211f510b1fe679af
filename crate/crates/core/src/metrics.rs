//! Scoring recorded streams against ground truth.
//!
//! Everything here is a pure function of the truth and event streams, so a
//! report recomputed from the written files matches the one produced during
//! the run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::events::{Event, TruthRecord};
use crate::geo::{geo_to_enu, GeoPoint, ReferenceOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Seconds after a track's first event excluded from error statistics.
    pub burn_in: f64,
    /// Largest time gap between a track sample and the truth sample it is scored against.
    pub align_tolerance: f64,
    pub collision_distance: f64,
    pub horizon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            burn_in: 1.0,
            align_tolerance: 0.05,
            collision_distance: 2.5,
            horizon: 3.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("burn_in", self.burn_in),
            ("align_tolerance", self.align_tolerance),
            ("collision_distance", self.collision_distance),
            ("horizon", self.horizon),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("metrics.{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub id: u64,
    pub t: f64,
    pub pos: GeoPoint,
}

/// Track-state samples from an event stream.
pub fn track_samples(events: &[Event]) -> Vec<TrackSample> {
    events
        .iter()
        .filter_map(|e| match *e {
            Event::Track {
                id, t, lat, lon, ..
            } => Some(TrackSample {
                id,
                t,
                pos: GeoPoint { lat, lon },
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRmse {
    pub object_id: u64,
    pub track_id: Option<u64>,
    pub rmse: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseResult {
    pub per_object: Vec<ObjectRmse>,
    pub overall: Option<f64>,
    /// Track id to true object id.
    pub matching: BTreeMap<u64, u64>,
    pub false_tracks: Vec<u64>,
}

fn distance_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let reference = ReferenceOrigin { origin: *b };
    let d = geo_to_enu(a, &reference);
    d.east.hypot(d.north)
}

struct TruthIndex {
    by_object: BTreeMap<u64, Vec<TruthRecord>>,
}

impl TruthIndex {
    fn new(truth: &[TruthRecord]) -> Self {
        let mut by_object: BTreeMap<u64, Vec<TruthRecord>> = BTreeMap::new();
        for r in truth {
            by_object.entry(r.id).or_default().push(*r);
        }
        for v in by_object.values_mut() {
            v.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        TruthIndex { by_object }
    }

    fn nearest(&self, object: u64, t: f64, tolerance: f64) -> Option<&TruthRecord> {
        let samples = self.by_object.get(&object)?;
        let i = samples.partition_point(|r| r.t < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| samples.get(j))
            .filter(|r| (r.t - t).abs() <= tolerance)
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// Position errors of `samples` against `object`, for samples that align.
    fn errors(&self, object: u64, samples: &[TrackSample], tolerance: f64) -> Vec<f64> {
        samples
            .iter()
            .filter_map(|s| {
                self.nearest(object, s.t, tolerance).map(|r| {
                    distance_m(
                        &s.pos,
                        &GeoPoint {
                            lat: r.lat,
                            lon: r.lon,
                        },
                    )
                })
            })
            .collect()
    }
}

fn post_burn_in(samples: &[TrackSample], burn_in: f64) -> BTreeMap<u64, Vec<TrackSample>> {
    let mut by_track: BTreeMap<u64, Vec<TrackSample>> = BTreeMap::new();
    for s in samples {
        by_track.entry(s.id).or_default().push(*s);
    }
    for v in by_track.values_mut() {
        let start = v.iter().map(|s| s.t).fold(f64::INFINITY, f64::min);
        v.retain(|s| s.t >= start + burn_in);
    }
    by_track
}

/// Matches each track to the true object with the smallest mean distance
/// (greedily, one track per object) and reports per-object RMSE.
pub fn compute_rmse(
    samples: &[TrackSample],
    truth: &[TruthRecord],
    cfg: &MetricsConfig,
) -> RmseResult {
    let index = TruthIndex::new(truth);
    let by_track = post_burn_in(samples, cfg.burn_in);
    let all_tracks: BTreeSet<u64> = samples.iter().map(|s| s.id).collect();

    let mut candidates = Vec::new();
    let mut errors: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for (&track, ts) in &by_track {
        for &object in index.by_object.keys() {
            let e = index.errors(object, ts, cfg.align_tolerance);
            if e.is_empty() {
                continue;
            }
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            candidates.push((mean, track, object));
            errors.insert((track, object), e);
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut matching = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for (_, track, object) in candidates {
        if matching.contains_key(&track) || taken.contains(&object) {
            continue;
        }
        matching.insert(track, object);
        taken.insert(object);
    }

    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let per_object = index
        .by_object
        .keys()
        .map(|&object| {
            let track = matching.iter().find(|(_, &o)| o == object).map(|(&t, _)| t);
            let e = track
                .map(|t| errors[&(t, object)].as_slice())
                .unwrap_or(&[]);
            let sq: f64 = e.iter().map(|x| x * x).sum();
            sum_sq += sq;
            count += e.len();
            ObjectRmse {
                object_id: object,
                track_id: track,
                rmse: (!e.is_empty()).then(|| (sq / e.len() as f64).sqrt()),
                samples: e.len(),
            }
        })
        .collect();
    let false_tracks = all_tracks
        .into_iter()
        .filter(|t| !matching.contains_key(t))
        .collect();

    RmseResult {
        per_object,
        overall: (count > 0).then(|| (sum_sq / count as f64).sqrt()),
        matching,
        false_tracks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertScore {
    pub precision: f64,
    pub recall: f64,
    /// No alerts were raised; precision is defined as 1.
    pub precision_vacuous: bool,
    /// No true near-miss exists; recall is defined as 1.
    pub recall_vacuous: bool,
    pub alerts: usize,
    pub true_positive_alerts: usize,
    pub near_miss_pairs: usize,
}

/// Instants at which each pair of true objects is within `collision_distance`.
pub fn near_misses(
    truth: &[TruthRecord],
    collision_distance: f64,
) -> BTreeMap<(u64, u64), Vec<f64>> {
    let mut sorted = truth.to_vec();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)));
    let mut out: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for group in sorted.chunk_by(|a, b| a.t == b.t) {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                let d = distance_m(
                    &GeoPoint {
                        lat: a.lat,
                        lon: a.lon,
                    },
                    &GeoPoint {
                        lat: b.lat,
                        lon: b.lon,
                    },
                );
                if d <= collision_distance {
                    out.entry((a.id.min(b.id), a.id.max(b.id)))
                        .or_default()
                        .push(a.t);
                }
            }
        }
    }
    out
}

/// Precision and recall of alerts `(track_a, track_b, t_closest)` against the
/// truth near-misses, through the track-to-object `matching`.
pub fn score_alerts(
    alerts: &[(u64, u64, f64)],
    truth: &[TruthRecord],
    matching: &BTreeMap<u64, u64>,
    collision_distance: f64,
    horizon: f64,
) -> AlertScore {
    let misses = near_misses(truth, collision_distance);
    let mut hit_pairs = BTreeSet::new();
    let mut tp = 0;
    for &(a, b, t) in alerts {
        let (Some(&oa), Some(&ob)) = (matching.get(&a), matching.get(&b)) else {
            continue;
        };
        if oa == ob {
            continue;
        }
        let pair = (oa.min(ob), oa.max(ob));
        let hit = misses
            .get(&pair)
            .is_some_and(|times| times.iter().any(|&tm| (tm - t).abs() <= horizon));
        if hit {
            tp += 1;
            hit_pairs.insert(pair);
        }
    }
    let precision_vacuous = alerts.is_empty();
    let recall_vacuous = misses.is_empty();
    AlertScore {
        precision: if precision_vacuous {
            1.0
        } else {
            tp as f64 / alerts.len() as f64
        },
        recall: if recall_vacuous {
            1.0
        } else {
            hit_pairs.len() as f64 / misses.len() as f64
        },
        precision_vacuous,
        recall_vacuous,
        alerts: alerts.len(),
        true_positive_alerts: tp,
        near_miss_pairs: misses.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_object: Vec<ObjectRmse>,
    pub overall_rmse: Option<f64>,
    pub true_objects: usize,
    pub tracks_created: usize,
    pub track_count_error: i64,
    pub false_tracks: usize,
    pub alert_precision: f64,
    pub alert_recall: f64,
    pub precision_vacuous: bool,
    pub recall_vacuous: bool,
    pub alerts: usize,
    pub near_miss_pairs: usize,
    pub messages_sent: Option<u64>,
    pub messages_delivered: Option<u64>,
    pub accepted_points: Option<u64>,
    pub late_dropped: Option<u64>,
    pub degeneracy_events: Option<u64>,
    /// Wall-clock time. Left out of the written metrics file so that the file
    /// is reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

pub fn compute_report(
    truth: &[TruthRecord],
    events: &[Event],
    cfg: &MetricsConfig,
) -> MetricsReport {
    let samples = track_samples(events);
    let rmse = compute_rmse(&samples, truth, cfg);
    let alerts: Vec<(u64, u64, f64)> = events
        .iter()
        .filter_map(|e| match *e {
            Event::Alert { a, b, t, .. } => Some((a, b, t)),
            _ => None,
        })
        .collect();
    let score = score_alerts(
        &alerts,
        truth,
        &rmse.matching,
        cfg.collision_distance,
        cfg.horizon,
    );
    let stats = events.iter().rev().find_map(|e| match *e {
        Event::Stats {
            sent,
            delivered,
            accepted,
            late,
            degenerate,
        } => Some((sent, delivered, accepted, late, degenerate)),
        _ => None,
    });
    let true_objects = truth.iter().map(|r| r.id).collect::<BTreeSet<_>>().len();
    let tracks_created = samples.iter().map(|s| s.id).collect::<BTreeSet<_>>().len();
    MetricsReport {
        per_object: rmse.per_object,
        overall_rmse: rmse.overall,
        true_objects,
        tracks_created,
        track_count_error: tracks_created as i64 - true_objects as i64,
        false_tracks: rmse.false_tracks.len(),
        alert_precision: score.precision,
        alert_recall: score.recall,
        precision_vacuous: score.precision_vacuous,
        recall_vacuous: score.recall_vacuous,
        alerts: score.alerts,
        near_miss_pairs: score.near_miss_pairs,
        messages_sent: stats.and_then(|s| s.0),
        messages_delivered: stats.map(|s| s.1),
        accepted_points: stats.map(|s| s.2),
        late_dropped: stats.map(|s| s.3),
        degeneracy_events: stats.map(|s| s.4),
        runtime_seconds: None,
    }
}
