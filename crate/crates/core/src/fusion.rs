//! The edge service.
//!
//! Tracklet points from any number of cameras enter a reorder buffer keyed by
//! observation time. The engine clock is the latest `sent_at` seen; points older
//! than `clock - watermark_delay` on arrival are dropped as late. Each call to
//! [`FusionEngine::advance`] releases every buffered point at or before the
//! watermark in a total order `(t, camera_id, object_id, position)`, so the
//! applied sequence, and with it every random draw, depends only on the set of
//! points and never on arrival order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{AssociationConfig, Track, TrackId, TrackSet};
use crate::events::{Event, TimedEvent};
use crate::filter::{FilterConfig, FilterError, KinematicState, Observation};
use crate::geo::{enu_distance, enu_to_geo, geo_to_enu, EnuPoint, GeoError, ReferenceOrigin};
use crate::model::{ClassLabel, TrackletMessage};

/// RNG stream reserved for the engine; simulator cameras use low stream numbers.
pub const ENGINE_RNG_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Seconds.
    pub watermark_delay: f64,
    pub prediction_horizon: f64,
    pub prediction_step: f64,
    /// Meters.
    pub collision_distance: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            watermark_delay: 0.5,
            prediction_horizon: 3.0,
            prediction_step: 0.25,
            collision_distance: 2.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("watermark_delay", self.watermark_delay),
            ("prediction_horizon", self.prediction_horizon),
            ("prediction_step", self.prediction_step),
            ("collision_distance", self.collision_distance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("fusion.{name} must be positive"));
            }
        }
        if self.prediction_step > self.prediction_horizon {
            return Err("fusion.prediction_step must not exceed fusion.prediction_horizon".into());
        }
        Ok(())
    }

    /// Number of grid instants from now to now + horizon inclusive.
    pub fn grid_len(&self) -> usize {
        (self.prediction_horizon / self.prediction_step + 1e-9).floor() as usize + 1
    }
}

/// All tunables of the edge service.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub filter: FilterConfig,
    pub association: AssociationConfig,
    pub fusion: FusionConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.filter.validate().map_err(|e| e.to_string())?;
        self.association.validate()?;
        self.fusion.validate()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngineStats {
    pub messages: u64,
    pub accepted: u64,
    pub late_dropped: u64,
    pub applied: u64,
    pub degeneracy_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub late: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    t: f64,
    pos: EnuPoint,
    camera_id: String,
    local_object_id: u64,
    class_label: ClassLabel,
}

impl Pending {
    fn order(&self, other: &Self) -> std::cmp::Ordering {
        self.t
            .total_cmp(&other.t)
            .then_with(|| self.camera_id.cmp(&other.camera_id))
            .then_with(|| self.local_object_id.cmp(&other.local_object_id))
            .then_with(|| self.pos.east.total_cmp(&other.pos.east))
            .then_with(|| self.pos.north.total_cmp(&other.pos.north))
            .then_with(|| self.class_label.cmp(&other.class_label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedObservation {
    pub obs: Observation,
    pub track_id: TrackId,
    pub spawned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPrediction {
    pub track_id: TrackId,
    pub points: Vec<(f64, EnuPoint)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionAlert {
    pub track_a: TrackId,
    pub track_b: TrackId,
    pub t_closest: f64,
    pub min_distance: f64,
}

/// Constant-velocity roll-out of `state` (valid at `state_time`) over the
/// grid `now + i * step`, `i = 0..grid_len`.
pub fn predict_trajectory(
    track_id: TrackId,
    state: &KinematicState,
    state_time: f64,
    now: f64,
    cfg: &FusionConfig,
) -> TrajectoryPrediction {
    let points = (0..cfg.grid_len())
        .map(|i| {
            let t = now + i as f64 * cfg.prediction_step;
            (t, state.propagated(t - state_time).position())
        })
        .collect();
    TrajectoryPrediction { track_id, points }
}

/// Pairwise minimum separation on the shared grid. One alert per pair whose
/// minimum is within `collision_distance`; ties go to the earliest instant.
pub fn detect_collisions(
    predictions: &[TrajectoryPrediction],
    cfg: &FusionConfig,
) -> Vec<CollisionAlert> {
    let mut alerts = Vec::new();
    for (i, p) in predictions.iter().enumerate() {
        for q in &predictions[i + 1..] {
            let mut best: Option<(f64, f64)> = None;
            for ((t, a), (tq, b)) in p.points.iter().zip(&q.points) {
                debug_assert!((t - tq).abs() < 1e-9, "predictions must share a grid");
                let d = enu_distance(a, b);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((*t, d));
                }
            }
            if let Some((t_closest, min_distance)) = best {
                if min_distance <= cfg.collision_distance {
                    let (track_a, track_b) = if p.track_id < q.track_id {
                        (p.track_id, q.track_id)
                    } else {
                        (q.track_id, p.track_id)
                    };
                    alerts.push(CollisionAlert {
                        track_a,
                        track_b,
                        t_closest,
                        min_distance,
                    });
                }
            }
        }
    }
    alerts.sort_by_key(|a| (a.track_a, a.track_b));
    alerts
}

pub struct FusionEngine {
    config: EngineConfig,
    origin: ReferenceOrigin,
    tracks: TrackSet,
    retired: Vec<Track>,
    buffer: Vec<Pending>,
    clock: Option<f64>,
    stats: EngineStats,
    rng: ChaCha8Rng,
}

impl FusionEngine {
    pub fn new(
        config: EngineConfig,
        origin: ReferenceOrigin,
        seed: u64,
    ) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENGINE_RNG_STREAM);
        Ok(FusionEngine {
            config,
            origin,
            tracks: TrackSet::new(),
            retired: Vec::new(),
            buffer: Vec::new(),
            clock: None,
            stats: EngineStats::default(),
            rng,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn origin(&self) -> &ReferenceOrigin {
        &self.origin
    }

    pub fn clock(&self) -> Option<f64> {
        self.clock
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn tracks(&self) -> &[Track] {
        self.tracks.tracks()
    }

    pub fn retired_tracks(&self) -> &[Track] {
        &self.retired
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    fn watermark(&self) -> Option<f64> {
        self.clock.map(|c| c - self.config.fusion.watermark_delay)
    }

    /// Buffers the message's points, dropping those already behind the watermark.
    pub fn ingest(&mut self, msg: &TrackletMessage) -> IngestReport {
        self.stats.messages += 1;
        let clock = self.clock.map_or(msg.sent_at, |c| c.max(msg.sent_at));
        self.clock = Some(clock);
        let cutoff = clock - self.config.fusion.watermark_delay;
        let mut report = IngestReport::default();
        for p in &msg.tracklet.points {
            if p.t < cutoff {
                report.late += 1;
                continue;
            }
            report.accepted += 1;
            self.buffer.push(Pending {
                t: p.t,
                pos: geo_to_enu(&p.pos, &self.origin),
                camera_id: msg.tracklet.camera_id.clone(),
                local_object_id: msg.tracklet.local_object_id,
                class_label: msg.tracklet.class_label,
            });
        }
        self.stats.accepted += report.accepted as u64;
        self.stats.late_dropped += report.late as u64;
        report
    }

    /// Applies every buffered observation at or before the watermark, then
    /// retires stale tracks.
    pub fn advance(&mut self) -> Result<Vec<AppliedObservation>, EngineError> {
        let Some(watermark) = self.watermark() else {
            return Ok(Vec::new());
        };
        let (ready, waiting): (Vec<Pending>, Vec<Pending>) = std::mem::take(&mut self.buffer)
            .into_iter()
            .partition(|p| p.t <= watermark);
        self.buffer = waiting;
        let applied = self.apply(ready)?;
        let clock = self.clock.expect("watermark implies a clock");
        self.retire_stale(clock);
        Ok(applied)
    }

    /// Applies everything still buffered, as if the watermark had moved past
    /// the last point. Used at end of stream.
    pub fn flush(&mut self) -> Result<Vec<AppliedObservation>, EngineError> {
        let ready = std::mem::take(&mut self.buffer);
        self.apply(ready)
    }

    fn apply(&mut self, mut ready: Vec<Pending>) -> Result<Vec<AppliedObservation>, EngineError> {
        ready.sort_by(Pending::order);
        let mut applied = Vec::with_capacity(ready.len());
        for p in ready {
            let obs = Observation { t: p.t, pos: p.pos };
            let decision = self.tracks.associate(&obs, &self.config.association);
            let outcome = self.tracks.apply_decision(
                decision,
                &obs,
                p.class_label,
                &self.config.filter,
                &self.config.association,
                &mut self.rng,
            )?;
            if outcome.step.degenerate {
                self.stats.degeneracy_events += 1;
            }
            self.stats.applied += 1;
            applied.push(AppliedObservation {
                obs,
                track_id: outcome.track_id,
                spawned: outcome.spawned,
            });
        }
        Ok(applied)
    }

    fn retire_stale(&mut self, now: f64) {
        let retired = self.tracks.gc_tracks(now, &self.config.association);
        self.retired.extend(retired);
    }

    /// Constant-velocity predictions of every confirmed track over the grid
    /// starting at the engine clock.
    pub fn predict_trajectories(&self) -> Vec<TrajectoryPrediction> {
        let Some(now) = self.clock else {
            return Vec::new();
        };
        self.tracks
            .tracks()
            .iter()
            .filter(|t| t.is_confirmed())
            .map(|t| {
                predict_trajectory(
                    t.track_id,
                    &t.filter.estimate(),
                    t.filter.last_time(),
                    now,
                    &self.config.fusion,
                )
            })
            .collect()
    }

    pub fn detect_collisions(&self) -> Vec<CollisionAlert> {
        detect_collisions(&self.predict_trajectories(), &self.config.fusion)
    }

    /// Ingest, advance, and report the resulting track states and alerts.
    pub fn process(&mut self, msg: &TrackletMessage) -> Result<Vec<TimedEvent>, EngineError> {
        self.ingest(msg);
        let applied = self.advance()?;
        self.events_for(&applied)
    }

    /// Flush at end of stream and report the resulting events.
    pub fn finish(&mut self) -> Result<Vec<TimedEvent>, EngineError> {
        let applied = self.flush()?;
        self.events_for(&applied)
    }

    /// Track-state events for every confirmed track touched by `applied`,
    /// followed by the current collision alerts.
    pub fn events_for(
        &self,
        applied: &[AppliedObservation],
    ) -> Result<Vec<TimedEvent>, EngineError> {
        if applied.is_empty() {
            return Ok(Vec::new());
        }
        let at = self.clock.unwrap_or(0.0);
        let mut touched: Vec<TrackId> = applied.iter().map(|a| a.track_id).collect();
        touched.sort();
        touched.dedup();
        let mut events = Vec::new();
        for id in touched {
            let Some(track) = self.tracks.get(id).filter(|t| t.is_confirmed()) else {
                continue;
            };
            events.push(TimedEvent {
                at,
                event: self.track_event(track)?,
            });
        }
        for alert in self.detect_collisions() {
            events.push(TimedEvent {
                at,
                event: Event::Alert {
                    a: alert.track_a.0,
                    b: alert.track_b.0,
                    t: alert.t_closest,
                    d: alert.min_distance,
                },
            });
        }
        Ok(events)
    }

    pub fn track_event(&self, track: &Track) -> Result<Event, EngineError> {
        let est = track.filter.estimate();
        let geo = enu_to_geo(&est.position(), &self.origin)?;
        Ok(Event::Track {
            id: track.track_id.0,
            t: track.filter.last_time(),
            lat: geo.lat,
            lon: geo.lon,
            vn: est.dx_lat,
            ve: est.dx_lon,
        })
    }
}
