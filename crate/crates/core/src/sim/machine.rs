use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::network::Generator;

/// Rotor angle (rad, against the synchronous reference) and speed (p.u.).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorState {
    pub delta: f64,
    pub omega: f64,
}

impl GeneratorState {
    pub fn new(delta: f64, omega: f64) -> Self {
        Self { delta, omega }
    }

    pub fn synchronous(delta: f64) -> Self {
        Self { delta, omega: 1.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.omega.is_finite()
    }
}

/// Swing-equation coefficients of one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingParams {
    /// Inertia coefficient M in `M dω/dt = Pm - Pg - D(ω - 1)`, seconds.
    pub inertia: f64,
    pub damping: f64,
    pub mech_power: f64,
    /// Synchronous speed 2πf0, rad/s.
    pub omega_s: f64,
}

impl SwingParams {
    pub fn new(inertia: f64, damping: f64, mech_power: f64, f0: f64) -> Self {
        Self {
            inertia,
            damping,
            mech_power,
            omega_s: 2.0 * PI * f0,
        }
    }

    pub fn from_generator(g: &Generator, mech_power: f64, f0: f64) -> Self {
        Self::new(g.inertia, g.damping, mech_power, f0)
    }
}

/// Active power delivered by a classical machine, `(E V / X'd) sin(δ - θ)`.
#[inline]
pub fn generator_electrical_power(e: f64, v: f64, xd: f64, delta: f64, theta: f64) -> f64 {
    e * v / xd * (delta - theta).sin()
}

/// Reactive power delivered by a classical machine, `(E V cos(δ - θ) - V²) / X'd`.
#[inline]
pub fn generator_reactive_power(e: f64, v: f64, xd: f64, delta: f64, theta: f64) -> f64 {
    (e * v * (delta - theta).cos() - v * v) / xd
}

/// One forward-Euler step of the swing equation for a single machine.
/// `noise` is subtracted from the new speed as is, in p.u. speed.
#[inline]
pub fn step_machine(
    state: GeneratorState,
    pg: f64,
    p: &SwingParams,
    dt: f64,
    noise: f64,
) -> GeneratorState {
    let slip = state.omega - 1.0;
    let accel = p.mech_power - pg - p.damping * slip;
    GeneratorState {
        delta: state.delta + dt * p.omega_s * slip,
        omega: state.omega + dt / p.inertia * accel - noise,
    }
}

/// Advances every machine by one step. `step` only labels errors.
pub fn step_generator_states(
    states: &[GeneratorState],
    pg: &[f64],
    params: &[SwingParams],
    dt: f64,
    noise: &[f64],
    step: usize,
) -> Result<Vec<GeneratorState>> {
    let m = states.len();
    for (what, len) in [
        ("electrical power", pg.len()),
        ("swing parameters", params.len()),
        ("process noise", noise.len()),
    ] {
        if len != m {
            return Err(Error::DimensionMismatch {
                what,
                expected: m,
                found: len,
            });
        }
    }
    let next: Vec<GeneratorState> = (0..m)
        .map(|i| step_machine(states[i], pg[i], &params[i], dt, noise[i]))
        .collect();
    if next.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "generator state",
            step,
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn electrical_power_values() {
        assert_eq!(generator_electrical_power(1.1, 1.0, 0.3, 0.4, 0.4), 0.0);
        assert_relative_eq!(
            generator_electrical_power(1.1, 0.98, 0.3, FRAC_PI_2 + 0.1, 0.1),
            1.1 * 0.98 / 0.3,
            epsilon = 1e-15
        );
        // 1.05 / 0.3 * sin(0.2) evaluated to 7 digits
        assert_relative_eq!(
            generator_electrical_power(1.05, 1.0, 0.3, 0.25, 0.05),
            0.695342,
            epsilon = 1e-6
        );
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = SwingParams::new(10.0, 2.0, 0.8, 60.0);
        let s = GeneratorState::synchronous(0.3);
        let next = step_generator_states(&[s], &[0.8], &[p], 1.0 / 30.0, &[0.0], 0).unwrap();
        assert_eq!(next[0], s);
    }

    #[test]
    fn angle_advance_from_slip() {
        let p = SwingParams::new(10.0, 0.0, 0.0, 60.0);
        let s = GeneratorState::new(0.0, 1.001);
        let next = step_machine(s, 0.0, &p, 1.0 / 30.0, 0.0);
        assert_relative_eq!(next.delta, 0.0125664, epsilon = 5e-8);
        assert_relative_eq!(next.delta, 2.0 * PI * 60.0 * 0.001 / 30.0, epsilon = 1e-14);
    }

    #[test]
    fn noise_enters_speed_only() {
        let p = SwingParams::new(10.0, 1.0, 0.5, 60.0);
        let s = GeneratorState::new(0.2, 1.0);
        let a = step_machine(s, 0.5, &p, 0.01, 0.0);
        let b = step_machine(s, 0.5, &p, 0.01, 1e-4);
        assert_eq!(a.delta, b.delta);
        assert_relative_eq!(a.omega - b.omega, 1e-4, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_and_dimension_errors() {
        let p = SwingParams::new(10.0, 1.0, 0.5, 60.0);
        let s = GeneratorState::synchronous(0.0);
        assert!(matches!(
            step_generator_states(&[s], &[f64::NAN], &[p], 0.01, &[0.0], 4),
            Err(Error::NonFinite { step: 4, .. })
        ));
        assert!(matches!(
            step_generator_states(&[s], &[0.5], &[p], 0.01, &[], 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
