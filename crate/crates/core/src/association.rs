//! Routing observations to tracks by position alone.
//!
//! Each observation is gated against every live track's estimate, propagated
//! to the observation time with the constant-velocity model. The nearest track
//! inside the gate absorbs the observation; otherwise a new tentative track is
//! spawned. Source identity never enters the decision.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::filter::{FilterConfig, FilterError, Observation, ParticleFilter, StepOutcome};
use crate::geo::{enu_distance, EnuPoint};
use crate::model::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    /// Meters.
    pub gate_radius: f64,
    /// Observations needed before a track is confirmed.
    pub confirm_after: u32,
    /// Seconds without observations before a track is retired.
    pub stale_after: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            gate_radius: 10.0,
            confirm_after: 3,
            stale_after: 3.0,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gate_radius > 0.0) {
            return Err("association.gate_radius must be positive".into());
        }
        if self.confirm_after == 0 {
            return Err("association.confirm_after must be positive".into());
        }
        if !(self.stale_after > 0.0) {
            return Err("association.stale_after must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: TrackId,
    pub filter: ParticleFilter,
    pub last_obs_time: f64,
    pub obs_count: u32,
    pub class_votes: [u32; 4],
    status: TrackStatus,
}

impl Track {
    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == TrackStatus::Confirmed
    }

    /// Majority class across contributing observations; ties give `Unknown`.
    pub fn class_label(&self) -> ClassLabel {
        let best = *self.class_votes.iter().max().unwrap_or(&0);
        let mut winners = ClassLabel::ALL
            .iter()
            .filter(|c| self.class_votes[c.index()] == best);
        match (winners.next(), winners.next()) {
            (Some(&c), None) => c,
            _ => ClassLabel::Unknown,
        }
    }

    /// Filter estimate moved to `t` by the deterministic constant-velocity model.
    pub fn predicted_position(&self, t: f64) -> EnuPoint {
        let est = self.filter.estimate();
        est.propagated(t - self.filter.last_time()).position()
    }

    fn promote(&mut self, confirm_after: u32) {
        if self.status == TrackStatus::Tentative && self.obs_count >= confirm_after {
            self.status = TrackStatus::Confirmed;
        }
    }

    fn retire(&mut self) {
        self.status = TrackStatus::Retired;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Matched(TrackId),
    SpawnNew,
}

/// Nearest live track within the gate, ties broken by lower track id.
pub fn associate(tracks: &[Track], obs: &Observation, cfg: &AssociationConfig) -> Decision {
    let mut best: Option<(f64, TrackId)> = None;
    for track in tracks.iter().filter(|t| t.status != TrackStatus::Retired) {
        let d = enu_distance(&track.predicted_position(obs.t), &obs.pos);
        if !(d <= cfg.gate_radius) {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && track.track_id < bid),
        };
        if better {
            best = Some((d, track.track_id));
        }
    }
    match best {
        Some((_, id)) => Decision::Matched(id),
        None => Decision::SpawnNew,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Applied {
    pub track_id: TrackId,
    pub spawned: bool,
    pub step: StepOutcome,
}

/// The live track collection. Track ids are handed out in increasing order
/// and never reused.
#[derive(Debug, Clone, Default)]
pub struct TrackSet {
    tracks: Vec<Track>,
    next_id: u64,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn get(&self, id: TrackId) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn associate(&self, obs: &Observation, cfg: &AssociationConfig) -> Decision {
        associate(&self.tracks, obs, cfg)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn apply_decision<R: Rng + ?Sized>(
        &mut self,
        decision: Decision,
        obs: &Observation,
        class_label: ClassLabel,
        filter_cfg: &FilterConfig,
        assoc_cfg: &AssociationConfig,
        rng: &mut R,
    ) -> Result<Applied, FilterError> {
        match decision {
            Decision::Matched(id) => {
                let track = self
                    .tracks
                    .iter_mut()
                    .find(|t| t.track_id == id && t.status != TrackStatus::Retired)
                    .expect("matched track must be live");
                let step = track.filter.step(obs, filter_cfg, rng)?;
                track.obs_count += 1;
                track.last_obs_time = obs.t;
                track.class_votes[class_label.index()] += 1;
                track.promote(assoc_cfg.confirm_after);
                Ok(Applied {
                    track_id: id,
                    spawned: false,
                    step,
                })
            }
            Decision::SpawnNew => {
                let id = TrackId(self.next_id);
                self.next_id += 1;
                let mut class_votes = [0; 4];
                class_votes[class_label.index()] = 1;
                let mut track = Track {
                    track_id: id,
                    filter: ParticleFilter::init(obs, filter_cfg, rng),
                    last_obs_time: obs.t,
                    obs_count: 1,
                    class_votes,
                    status: TrackStatus::Tentative,
                };
                track.promote(assoc_cfg.confirm_after);
                self.tracks.push(track);
                Ok(Applied {
                    track_id: id,
                    spawned: true,
                    step: StepOutcome::default(),
                })
            }
        }
    }

    /// Removes every track idle for longer than `stale_after` and returns them
    /// marked retired.
    pub fn gc_tracks(&mut self, now: f64, cfg: &AssociationConfig) -> Vec<Track> {
        let (stale, live): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| now - t.last_obs_time > cfg.stale_after);
        self.tracks = live;
        stale
            .into_iter()
            .map(|mut t| {
                t.retire();
                t
            })
            .collect()
    }
}
