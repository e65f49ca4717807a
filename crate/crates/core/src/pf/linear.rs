//! Linearized single-machine swing system with an exact Kalman filter,
//! used to validate the particle filter.
//!
//! State is the angle `δ` and speed `ω` around the operating point `(0, 1)`:
//!
//! ```text
//! δ' = δ + a (ω - 1)
//! ω' = ω - b δ - c (ω - 1) - q z
//! y  = g (δ' - δ) + r η
//! ```

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TransitionModel;
use crate::sim::GeneratorState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSwing {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Process-noise std on speed.
    pub q: f64,
    /// Output gain.
    pub g: f64,
    /// Output-noise std.
    pub r: f64,
}

impl LinearSwing {
    /// Linearization of a classical machine with inertia `m`, damping `d` and
    /// synchronizing coefficient `k`, sampled every `dt` at `f0` Hz.
    pub fn from_machine(m: f64, d: f64, k: f64, f0: f64, dt: f64, q: f64, r: f64) -> Self {
        let omega_s = 2.0 * std::f64::consts::PI * f0;
        Self {
            a: dt * omega_s,
            b: dt * k / m,
            c: dt * d / m,
            q,
            g: k,
            r,
        }
    }

    fn step(&self, x: GeneratorState, z: f64) -> GeneratorState {
        let slip = x.omega - 1.0;
        GeneratorState::new(
            x.delta + self.a * slip,
            x.omega - self.b * x.delta - self.c * slip - self.q * z,
        )
    }

    /// Draws a state path of `steps` samples from `x0` and its outputs
    /// `y[k - 1]` for `k = 1..steps`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        x0: GeneratorState,
        steps: usize,
        rng: &mut R,
    ) -> (Vec<GeneratorState>, Vec<f64>) {
        let mut xs = vec![x0];
        let mut ys = Vec::with_capacity(steps.saturating_sub(1));
        for _ in 1..steps {
            let prev = *xs.last().expect("nonempty");
            let next = self.step(prev, StandardNormal.sample(rng));
            let eta: f64 = StandardNormal.sample(rng);
            ys.push(self.g * (next.delta - prev.delta) + self.r * eta);
            xs.push(next);
        }
        (xs, ys)
    }
}

impl TransitionModel for LinearSwing {
    fn dim(&self) -> usize {
        1
    }

    fn propagate(&self, _k: usize, x: &[GeneratorState], z: &[f64], out: &mut [GeneratorState]) {
        out[0] = self.step(x[0], z[0]);
    }

    fn output(&self, _k: usize, prev: &[GeneratorState], curr: &[GeneratorState], out: &mut [f64]) {
        out[0] = self.g * (curr[0].delta - prev[0].delta);
    }
}

/// Kalman filter on the augmented state `(δ_k, ω_k - 1, δ_{k-1})`.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    f: Matrix3<f64>,
    q: Matrix3<f64>,
    h: Vector3<f64>,
    r2: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Posterior moments of angle and speed after one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub delta: f64,
    pub omega: f64,
    pub delta_std: f64,
    pub omega_std: f64,
}

impl KalmanFilter {
    pub fn new(sys: &LinearSwing, delta: f64, omega: f64, delta_std: f64, omega_std: f64) -> Self {
        #[rustfmt::skip]
        let f = Matrix3::new(
            1.0, sys.a, 0.0,
            -sys.b, 1.0 - sys.c, 0.0,
            1.0, 0.0, 0.0,
        );
        Self {
            f,
            q: Matrix3::from_diagonal(&Vector3::new(0.0, sys.q * sys.q, 0.0)),
            h: Vector3::new(sys.g, 0.0, -sys.g),
            r2: sys.r * sys.r,
            mean: Vector3::new(delta, omega - 1.0, delta),
            cov: Matrix3::from_diagonal(&Vector3::new(
                delta_std * delta_std,
                omega_std * omega_std,
                0.0,
            )),
        }
    }

    pub fn moments(&self) -> Moments {
        Moments {
            delta: self.mean[0],
            omega: self.mean[1] + 1.0,
            delta_std: self.cov[(0, 0)].sqrt(),
            omega_std: self.cov[(1, 1)].sqrt(),
        }
    }

    pub fn step(&mut self, y: f64) -> Moments {
        let m = self.f * self.mean;
        let p = self.f * self.cov * self.f.transpose() + self.q;
        let ph = p * self.h;
        let s = self.h.dot(&ph) + self.r2;
        let gain = ph / s;
        self.mean = m + gain * (y - self.h.dot(&m));
        self.cov = p - gain * ph.transpose();
        self.cov = 0.5 * (self.cov + self.cov.transpose());
        self.moments()
    }
}
