//! Constant-velocity Kalman filter used as a reference for the particle
//! filter. Each axis is an independent `[position, velocity]` filter with the
//! same transition, diffusion, and measurement model as the particle filter.

#[derive(Debug, Clone, Copy)]
pub struct KalmanParams {
    pub process_noise_pos: f64,
    pub process_noise_vel: f64,
    pub meas_variance: f64,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    x: [f64; 2],
    p: [[f64; 2]; 2],
}

impl Axis {
    fn new(z: f64, params: &KalmanParams) -> Self {
        Axis {
            x: [z, 0.0],
            p: [[params.init_pos_var, 0.0], [0.0, params.init_vel_var]],
        }
    }

    fn predict(&mut self, dt: f64, params: &KalmanParams) {
        let [x, v] = self.x;
        self.x = [x + v * dt, v];
        let [[a, b], [c, d]] = self.p;
        // F P F^T with F = [[1, dt], [0, 1]].
        let p00 = a + dt * (b + c) + dt * dt * d;
        let p01 = b + dt * d;
        let p10 = c + dt * d;
        self.p = [
            [p00 + params.process_noise_pos.powi(2) * dt, p01],
            [p10, d + params.process_noise_vel.powi(2) * dt],
        ];
    }

    fn update(&mut self, z: f64, params: &KalmanParams) {
        let [[a, b], [c, d]] = self.p;
        let s = a + params.meas_variance;
        let k0 = a / s;
        let k1 = c / s;
        let r = z - self.x[0];
        self.x = [self.x[0] + k0 * r, self.x[1] + k1 * r];
        self.p = [[(1.0 - k0) * a, (1.0 - k0) * b], [c - k1 * a, d - k1 * b]];
    }
}

/// Runs the filter over `(t, east, north)` measurements and returns the
/// filtered `(east, north)` after each one. The first measurement only
/// initializes the state.
pub fn kalman_track(measurements: &[(f64, f64, f64)], params: &KalmanParams) -> Vec<(f64, f64)> {
    let Some(&(t0, e0, n0)) = measurements.first() else {
        return Vec::new();
    };
    let mut east = Axis::new(e0, params);
    let mut north = Axis::new(n0, params);
    let mut last = t0;
    let mut out = vec![(e0, n0)];
    for &(t, e, n) in &measurements[1..] {
        let dt = t - last;
        last = t;
        east.predict(dt, params);
        north.predict(dt, params);
        east.update(e, params);
        north.update(n, params);
        out.push((east.x[0], north.x[0]));
    }
    out
}
