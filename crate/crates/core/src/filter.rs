//! Per-object particle filter.
//!
//! Each particle carries a constant-velocity kinematic state in the local
//! tangent plane plus an importance weight. A step predicts every particle
//! forward with the constant-velocity transition and additive Gaussian process
//! noise, multiplies each weight by a Gaussian likelihood of the distance to
//! the observed position, renormalizes, and resamples systematically when the
//! effective sample size falls below a configured fraction of N.
//!
//! Weights are kept normalized to sum to one, so the state estimate is the
//! plain weighted sum of particle states.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{enu_distance, EnuPoint};

/// Tolerance on the time match between a prediction and the following update.
pub const UPDATE_TIME_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("time regression: filter at {last_time}, asked for {requested}")]
    TimeRegression { last_time: f64, requested: f64 },
    #[error("observation at {obs_time} does not match filter time {last_time}")]
    TimeMismatch { last_time: f64, obs_time: f64 },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

/// Constant-velocity state in meters and meters/second.
///
/// `x_lat`/`dx_lat` are the north component and `x_lon`/`dx_lon` the east
/// component of the tangent-plane frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub x_lat: f64,
    pub dx_lat: f64,
    pub x_lon: f64,
    pub dx_lon: f64,
}

impl KinematicState {
    pub fn new(x_lat: f64, dx_lat: f64, x_lon: f64, dx_lon: f64) -> Self {
        KinematicState {
            x_lat,
            dx_lat,
            x_lon,
            dx_lon,
        }
    }

    pub fn position(&self) -> EnuPoint {
        EnuPoint {
            east: self.x_lon,
            north: self.x_lat,
        }
    }

    /// Applies the constant-velocity transition for `dt` seconds.
    pub fn propagated(&self, dt: f64) -> KinematicState {
        KinematicState {
            x_lat: self.x_lat + self.dx_lat * dt,
            dx_lat: self.dx_lat,
            x_lon: self.x_lon + self.dx_lon * dt,
            dx_lon: self.dx_lon,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x_lat.is_finite()
            && self.dx_lat.is_finite()
            && self.x_lon.is_finite()
            && self.dx_lon.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub state: KinematicState,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Measurement variance k, meters squared.
    pub meas_variance: f64,
    /// Position process noise, m/sqrt(s).
    pub process_noise_pos: f64,
    /// Velocity process noise, (m/s)/sqrt(s).
    pub process_noise_vel: f64,
    pub init_pos_std: f64,
    pub init_vel_std: f64,
    pub ess_threshold_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 1000,
            meas_variance: 4.0,
            process_noise_pos: 0.5,
            process_noise_vel: 1.0,
            init_pos_std: 3.0,
            init_vel_std: 5.0,
            ess_threshold_fraction: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |msg: &str| Err(FilterError::InvalidConfig(msg.to_string()));
        if self.n_particles == 0 {
            return bad("n_particles must be positive");
        }
        if !(self.meas_variance.is_finite() && self.meas_variance > 0.0) {
            return bad("meas_variance must be positive");
        }
        for (name, v) in [
            ("process_noise_pos", self.process_noise_pos),
            ("process_noise_vel", self.process_noise_vel),
            ("init_pos_std", self.init_pos_std),
            ("init_vel_std", self.init_vel_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FilterError::InvalidConfig(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
            return bad("ess_threshold_fraction must be in (0, 1]");
        }
        Ok(())
    }
}

/// A position fix in the tangent plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub pos: EnuPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateOutcome {
    /// Every weight underflowed to zero and the weights were reset to uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub degenerate: bool,
    pub resampled: bool,
}

/// Gaussian likelihood of the position distance between `state` and `obs`,
/// with variance `k` in square meters.
pub fn likelihood(state: &KinematicState, obs: &Observation, k: f64) -> f64 {
    let d = enu_distance(&state.position(), &obs.pos);
    (-d * d / (2.0 * k)).exp() / (2.0 * std::f64::consts::PI * k).sqrt()
}

/// Systematic resampling indices for normalized `weights`.
///
/// `offset` must lie in `[0, 1)`; output position `i` samples the cumulative
/// weight at `(offset + i) / N`.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1);
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut cumulative = weights[0];
    for i in 0..n {
        let position = (offset + i as f64) / n as f64;
        while cumulative <= position && j < n - 1 {
            j += 1;
            cumulative += weights[j];
        }
        // Round-off can leave the final cumulative sum just below the last position.
        if cumulative <= position {
            j = last_positive;
        }
        out.push(j);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilter {
    particles: Vec<Particle>,
    last_time: f64,
}

impl ParticleFilter {
    /// Spreads N particles around the first observation.
    pub fn init<R: Rng + ?Sized>(obs: &Observation, cfg: &FilterConfig, rng: &mut R) -> Self {
        let n = cfg.n_particles;
        let weight = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let n_pos: f64 = rng.sample(StandardNormal);
                let e_pos: f64 = rng.sample(StandardNormal);
                let n_vel: f64 = rng.sample(StandardNormal);
                let e_vel: f64 = rng.sample(StandardNormal);
                Particle {
                    state: KinematicState {
                        x_lat: obs.pos.north + cfg.init_pos_std * n_pos,
                        dx_lat: cfg.init_vel_std * n_vel,
                        x_lon: obs.pos.east + cfg.init_pos_std * e_pos,
                        dx_lon: cfg.init_vel_std * e_vel,
                    },
                    weight,
                }
            })
            .collect();
        ParticleFilter {
            particles,
            last_time: obs.t,
        }
    }

    /// Builds a filter from explicit particles. Weights are used as given.
    pub fn from_particles(particles: Vec<Particle>, last_time: f64) -> Self {
        assert!(
            !particles.is_empty(),
            "a filter needs at least one particle"
        );
        ParticleFilter {
            particles,
            last_time,
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Moves every particle to `t_now` under the constant-velocity model with
    /// process noise whose standard deviation grows with the square root of
    /// the elapsed time. Weights are not touched.
    pub fn predict<R: Rng + ?Sized>(
        &mut self,
        t_now: f64,
        cfg: &FilterConfig,
        rng: &mut R,
    ) -> Result<(), FilterError> {
        if !(t_now >= self.last_time) {
            return Err(FilterError::TimeRegression {
                last_time: self.last_time,
                requested: t_now,
            });
        }
        let dt = t_now - self.last_time;
        if dt > 0.0 {
            let pos_std = cfg.process_noise_pos * dt.sqrt();
            let vel_std = cfg.process_noise_vel * dt.sqrt();
            for p in &mut self.particles {
                let mut s = p.state.propagated(dt);
                s.x_lat += pos_std * rng.sample::<f64, _>(StandardNormal);
                s.dx_lat += vel_std * rng.sample::<f64, _>(StandardNormal);
                s.x_lon += pos_std * rng.sample::<f64, _>(StandardNormal);
                s.dx_lon += vel_std * rng.sample::<f64, _>(StandardNormal);
                p.state = s;
            }
        }
        self.last_time = t_now;
        Ok(())
    }

    /// Multiplies each weight by the observation likelihood and renormalizes.
    pub fn update(&mut self, obs: &Observation, k: f64) -> Result<UpdateOutcome, FilterError> {
        if (obs.t - self.last_time).abs() > UPDATE_TIME_EPSILON {
            return Err(FilterError::TimeMismatch {
                last_time: self.last_time,
                obs_time: obs.t,
            });
        }
        let mut total = 0.0;
        for p in &mut self.particles {
            p.weight *= likelihood(&p.state, obs, k);
            total += p.weight;
        }
        if total > 0.0 && total.is_finite() {
            for p in &mut self.particles {
                p.weight /= total;
            }
            Ok(UpdateOutcome { degenerate: false })
        } else {
            self.reset_weights();
            Ok(UpdateOutcome { degenerate: true })
        }
    }

    /// Weighted mean of the particle states.
    pub fn estimate(&self) -> KinematicState {
        // Accumulated as offsets from the first particle so that a cloud of
        // identical states returns that state bit for bit.
        let total = self.weight_sum();
        let base = self.particles[0].state;
        let mut acc = KinematicState::default();
        for p in &self.particles {
            let w = p.weight / total;
            acc.x_lat += w * (p.state.x_lat - base.x_lat);
            acc.dx_lat += w * (p.state.dx_lat - base.dx_lat);
            acc.x_lon += w * (p.state.x_lon - base.x_lon);
            acc.dx_lon += w * (p.state.dx_lon - base.dx_lon);
        }
        KinematicState {
            x_lat: base.x_lat + acc.x_lat,
            dx_lat: base.dx_lat + acc.dx_lat,
            x_lon: base.x_lon + acc.x_lon,
            dx_lon: base.dx_lon + acc.dx_lon,
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        1.0 / sum_sq
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let offset: f64 = rng.random();
        let weights: Vec<f64> = self.particles.iter().map(|p| p.weight).collect();
        let indices = systematic_indices(&weights, offset);
        let uniform = 1.0 / self.particles.len() as f64;
        self.particles = indices
            .into_iter()
            .map(|i| Particle {
                state: self.particles[i].state,
                weight: uniform,
            })
            .collect();
    }

    /// Predict to the observation time, update, and resample on low ESS.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        obs: &Observation,
        cfg: &FilterConfig,
        rng: &mut R,
    ) -> Result<StepOutcome, FilterError> {
        self.predict(obs.t, cfg, rng)?;
        let UpdateOutcome { degenerate } = self.update(obs, cfg.meas_variance)?;
        let threshold = cfg.ess_threshold_fraction * self.particles.len() as f64;
        let resampled = self.effective_sample_size() < threshold;
        if resampled {
            self.resample(rng);
        }
        Ok(StepOutcome {
            degenerate,
            resampled,
        })
    }

    fn reset_weights(&mut self) {
        let uniform = 1.0 / self.particles.len() as f64;
        for p in &mut self.particles {
            p.weight = uniform;
        }
    }
}
