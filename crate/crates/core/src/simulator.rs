//! Desk-scale scenario generator: ground-truth motion, per-camera noisy
//! detections, and a lossy, jittery delivery channel.
//!
//! Every camera draws from its own ChaCha stream of the scenario seed, so
//! adding or removing a camera leaves the detections of the others untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::TruthRecord;
use crate::geo::{
    enu_distance, enu_to_geo, geo_to_enu, EnuPoint, GeoPoint, ReferenceOrigin, MAX_REFERENCE_LAT,
};
use crate::model::{ClassLabel, TrackPoint, Tracklet, TrackletMessage};

pub const MAX_SPEED: f64 = 60.0;
pub const TRUTH_PERIOD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("time {t} outside waypoint span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub pos: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    ConstantVelocity { vn: f64, ve: f64 },
    Waypoints(Vec<Waypoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub object_id: u64,
    #[serde(default = "default_class")]
    pub class_label: ClassLabel,
    /// Required for constant-velocity motion; waypoint motion starts at its
    /// first waypoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_position: Option<GeoPoint>,
    pub motion: Motion,
}

fn default_class() -> ClassLabel {
    ClassLabel::Vehicle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub camera_id: String,
    /// Fixed mounting point. Ignored when `mounted_on` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<GeoPoint>,
    /// Meters.
    pub range: f64,
    /// Seconds.
    pub frame_period: f64,
    #[serde(default = "one")]
    pub p_detect: f64,
    #[serde(default = "default_meas_noise")]
    pub meas_noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mounted_on: Option<u64>,
    /// Detections of one object collected into each tracklet message.
    #[serde(default = "one_point")]
    pub points_per_message: usize,
}

fn one_point() -> usize {
    1
}

fn one() -> f64 {
    1.0
}

fn default_meas_noise() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub base_latency: f64,
    pub jitter_std: f64,
    pub loss_prob: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            base_latency: 0.05,
            jitter_std: 0.02,
            loss_prob: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub origin: ReferenceOrigin,
    pub objects: Vec<ObjectSpec>,
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        if let Err(e) = self.origin.origin.check() {
            return bad(format!("origin: {e}"));
        }
        if self.origin.origin.lat.abs() >= MAX_REFERENCE_LAT {
            return bad("origin latitude must be within (-89, 89)".into());
        }
        if self.objects.is_empty() {
            return bad("at least one object is required".into());
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        let mut ids: Vec<u64> = self.objects.iter().map(|o| o.object_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("object ids must be unique".into());
        }
        for obj in &self.objects {
            obj.validate(&self.origin).map_err(SimError::Config)?;
        }
        let mut cam_ids: Vec<&str> = self.cameras.iter().map(|c| c.camera_id.as_str()).collect();
        cam_ids.sort_unstable();
        if cam_ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("camera ids must be unique".into());
        }
        for cam in &self.cameras {
            let name = &cam.camera_id;
            if !(cam.range.is_finite() && cam.range > 0.0) {
                return bad(format!("camera {name}: range must be positive"));
            }
            if !(cam.frame_period.is_finite() && cam.frame_period > 0.0) {
                return bad(format!("camera {name}: frame_period must be positive"));
            }
            if cam.points_per_message == 0 {
                return bad(format!(
                    "camera {name}: points_per_message must be at least 1"
                ));
            }
            if !(0.0..=1.0).contains(&cam.p_detect) {
                return bad(format!("camera {name}: p_detect must be in [0, 1]"));
            }
            if !(cam.meas_noise_std.is_finite() && cam.meas_noise_std >= 0.0) {
                return bad(format!(
                    "camera {name}: meas_noise_std must be non-negative"
                ));
            }
            match (cam.mounted_on, cam.position) {
                (Some(carrier), _) if !ids.contains(&carrier) => {
                    return bad(format!(
                        "camera {name}: mounted_on references unknown object {carrier}"
                    ));
                }
                (None, None) => {
                    return bad(format!("camera {name}: fixed cameras need a position"))
                }
                (None, Some(p)) if !p.is_valid() => {
                    return bad(format!("camera {name}: invalid position"));
                }
                _ => {}
            }
        }
        let ch = &self.channel;
        if !(ch.base_latency.is_finite() && ch.base_latency >= 0.0) {
            return bad("channel.base_latency must be non-negative".into());
        }
        if !(ch.jitter_std.is_finite() && ch.jitter_std >= 0.0) {
            return bad("channel.jitter_std must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&ch.loss_prob) {
            return bad("channel.loss_prob must be in [0, 1]".into());
        }
        Ok(())
    }
}

impl ObjectSpec {
    fn validate(&self, origin: &ReferenceOrigin) -> Result<(), String> {
        let id = self.object_id;
        if let Some(p) = self.initial_position {
            p.check().map_err(|e| format!("object {id}: {e}"))?;
        }
        match &self.motion {
            Motion::ConstantVelocity { vn, ve } => {
                if self.initial_position.is_none() {
                    return Err(format!(
                        "object {id}: constant_velocity needs initial_position"
                    ));
                }
                if !(vn.is_finite() && ve.is_finite()) || vn.hypot(*ve) > MAX_SPEED {
                    return Err(format!("object {id}: speed exceeds {MAX_SPEED} m/s"));
                }
            }
            Motion::Waypoints(wps) => {
                if wps.is_empty() {
                    return Err(format!("object {id}: waypoints must not be empty"));
                }
                if wps.iter().any(|w| !w.t.is_finite() || !w.pos.is_valid()) {
                    return Err(format!("object {id}: invalid waypoint"));
                }
                if wps.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(format!(
                        "object {id}: waypoint times must strictly increase"
                    ));
                }
                for w in wps.windows(2) {
                    let a = geo_to_enu(&w[0].pos, origin);
                    let b = geo_to_enu(&w[1].pos, origin);
                    if enu_distance(&a, &b) / (w[1].t - w[0].t) > MAX_SPEED {
                        return Err(format!("object {id}: speed exceeds {MAX_SPEED} m/s"));
                    }
                }
                if let Some(p) = self.initial_position {
                    let first = geo_to_enu(&wps[0].pos, origin);
                    if enu_distance(&geo_to_enu(&p, origin), &first) > 1e-6 {
                        return Err(format!(
                            "object {id}: initial_position differs from first waypoint"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// True position and (north, east) velocity of `obj` at `t`.
pub fn truth_at(
    obj: &ObjectSpec,
    t: f64,
    origin: &ReferenceOrigin,
) -> Result<(EnuPoint, (f64, f64)), SimError> {
    match &obj.motion {
        Motion::ConstantVelocity { vn, ve } => {
            let p0 = geo_to_enu(
                &obj.initial_position
                    .expect("validated constant-velocity object"),
                origin,
            );
            Ok((
                EnuPoint::new(p0.east + ve * t, p0.north + vn * t),
                (*vn, *ve),
            ))
        }
        Motion::Waypoints(wps) => {
            let (start, end) = (wps[0].t, wps[wps.len() - 1].t);
            if !(t >= start && t <= end) {
                return Err(SimError::OutOfSpan { t, start, end });
            }
            if wps.len() == 1 {
                return Ok((geo_to_enu(&wps[0].pos, origin), (0.0, 0.0)));
            }
            // Segment whose half-open interval holds t; the final instant uses the last one.
            let i = wps[1..]
                .iter()
                .position(|w| t < w.t)
                .unwrap_or(wps.len() - 2);
            let (a, b) = (&wps[i], &wps[i + 1]);
            let (pa, pb) = (geo_to_enu(&a.pos, origin), geo_to_enu(&b.pos, origin));
            let span = b.t - a.t;
            let ve = (pb.east - pa.east) / span;
            let vn = (pb.north - pa.north) / span;
            let dt = t - a.t;
            Ok((
                EnuPoint::new(pa.east + ve * dt, pa.north + vn * dt),
                (vn, ve),
            ))
        }
    }
}

/// One detection attempt. Out of range never detects; in range detects with
/// probability `p_detect` and adds per-axis Gaussian position noise.
pub fn camera_observe<R: Rng + ?Sized>(
    cam: &CameraSpec,
    camera_pos: &EnuPoint,
    object_pos: &EnuPoint,
    t: f64,
    origin: &ReferenceOrigin,
    rng: &mut R,
) -> Option<TrackPoint> {
    if enu_distance(camera_pos, object_pos) > cam.range {
        return None;
    }
    if !(rng.random::<f64>() < cam.p_detect) {
        return None;
    }
    let de: f64 = rng.sample(StandardNormal);
    let dn: f64 = rng.sample(StandardNormal);
    let noisy = EnuPoint::new(
        object_pos.east + cam.meas_noise_std * de,
        object_pos.north + cam.meas_noise_std * dn,
    );
    let pos = enu_to_geo(&noisy, origin).expect("origin validated away from the poles");
    Some(TrackPoint { t, pos })
}

/// Delivery time for a message sent at `send_t`, or `None` if lost.
pub fn channel_deliver<R: Rng + ?Sized>(
    send_t: f64,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Option<f64> {
    if rng.random::<f64>() < spec.loss_prob {
        return None;
    }
    let jitter: f64 = rng.sample(StandardNormal);
    Some(send_t + spec.base_latency + (spec.jitter_std * jitter).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimCounters {
    pub frames: u64,
    pub detections: u64,
    /// Messages handed to the channel.
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveredMessage {
    pub delivered_at: f64,
    pub message: TrackletMessage,
    /// True object behind the detection.
    pub object_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub truth: Vec<TruthRecord>,
    /// Sorted by delivery time.
    pub messages: Vec<DeliveredMessage>,
    pub counters: SimCounters,
}

impl ScenarioOutput {
    pub fn tracklet_messages(&self) -> impl Iterator<Item = &TrackletMessage> {
        self.messages.iter().map(|m| &m.message)
    }
}

/// Number of grid instants `k * period` strictly before `duration`.
fn frame_count(duration: f64, period: f64) -> u64 {
    (duration / period - 1e-9).ceil().max(0.0) as u64
}

pub fn camera_rng(seed: u64, camera_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(camera_index as u64);
    rng
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, SimError> {
    cfg.validate()?;
    let origin = &cfg.origin;
    let truth_of = |id: u64, t: f64| {
        let obj = cfg
            .objects
            .iter()
            .find(|o| o.object_id == id)
            .expect("validated carrier");
        truth_at(obj, t, origin).ok().map(|(p, _)| p)
    };

    let mut counters = SimCounters::default();
    // (delivery, send time, camera index, object index, message, object id)
    let mut scheduled = Vec::new();
    for (ci, cam) in cfg.cameras.iter().enumerate() {
        let mut rng = camera_rng(cfg.seed, ci);
        let fixed = cam.position.map(|p| geo_to_enu(&p, origin));
        let mut pending: Vec<Vec<TrackPoint>> = vec![Vec::new(); cfg.objects.len()];
        let mut send = |oi: usize, points: Vec<TrackPoint>, rng: &mut ChaCha8Rng| {
            let obj = &cfg.objects[oi];
            let t = points.last().expect("non-empty tracklet").t;
            let message = TrackletMessage::new(
                t,
                Tracklet {
                    camera_id: cam.camera_id.clone(),
                    local_object_id: obj.object_id,
                    class_label: obj.class_label,
                    points,
                },
            );
            counters.sent += 1;
            match channel_deliver(t, &cfg.channel, rng) {
                Some(at) => scheduled.push((at, t, ci, oi, message, obj.object_id)),
                None => counters.dropped += 1,
            }
        };
        for k in 0..frame_count(cfg.duration, cam.frame_period) {
            let t = k as f64 * cam.frame_period;
            counters.frames += 1;
            let camera_pos = match cam.mounted_on {
                Some(carrier) => match truth_of(carrier, t) {
                    Some(p) => p,
                    None => continue,
                },
                None => fixed.expect("validated fixed camera"),
            };
            for (oi, obj) in cfg.objects.iter().enumerate() {
                if cam.mounted_on == Some(obj.object_id) {
                    continue;
                }
                let Ok((object_pos, _)) = truth_at(obj, t, origin) else {
                    continue;
                };
                let Some(point) =
                    camera_observe(cam, &camera_pos, &object_pos, t, origin, &mut rng)
                else {
                    continue;
                };
                counters.detections += 1;
                pending[oi].push(point);
                if pending[oi].len() == cam.points_per_message {
                    send(oi, std::mem::take(&mut pending[oi]), &mut rng);
                }
            }
        }
        for (oi, points) in pending.into_iter().enumerate() {
            if !points.is_empty() {
                send(oi, points, &mut rng);
            }
        }
    }
    scheduled.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    counters.delivered = scheduled.len() as u64;
    let messages = scheduled
        .into_iter()
        .map(
            |(delivered_at, _, _, _, message, object_id)| DeliveredMessage {
                delivered_at,
                message,
                object_id,
            },
        )
        .collect();

    let mut truth = Vec::new();
    let samples = (cfg.duration / TRUTH_PERIOD + 1e-9).floor() as u64;
    for k in 0..=samples {
        let t = k as f64 * TRUTH_PERIOD;
        for obj in &cfg.objects {
            let Ok((p, (vn, ve))) = truth_at(obj, t, origin) else {
                continue;
            };
            let g = enu_to_geo(&p, origin).expect("origin validated away from the poles");
            truth.push(TruthRecord {
                t,
                id: obj.object_id,
                lat: g.lat,
                lon: g.lon,
                vn,
                ve,
            });
        }
    }

    Ok(ScenarioOutput {
        truth,
        messages,
        counters,
    })
}
