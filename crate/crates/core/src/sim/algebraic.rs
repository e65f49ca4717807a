//! Network solve for fixed machine internal sources.
//!
//! Every bus balances its network injection against classical-machine output
//! and load demand; the machines' internal angles provide the angle
//! reference, so all bus angles and magnitudes are unknowns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::machine::{generator_electrical_power, generator_reactive_power};
use crate::error::{Error, Result};
use crate::network::{injection_jacobian, injections, AdmittanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadModel {
    /// Demand stays at its scheduled value whatever the voltage.
    #[default]
    ConstantPower,
    /// Demand scales with `(V / V0)²`, `V0` the pre-disturbance voltage.
    ConstantImpedance,
}

#[derive(Debug, Clone)]
pub struct Loads {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v0: Vec<f64>,
    pub model: LoadModel,
}

impl Loads {
    #[inline]
    fn scale(&self, i: usize, v: f64) -> (f64, f64) {
        match self.model {
            LoadModel::ConstantPower => (1.0, 0.0),
            LoadModel::ConstantImpedance => {
                let r = v / self.v0[i];
                (r * r, 2.0 * r / self.v0[i])
            }
        }
    }
}

/// Internal source of a classical machine attached at bus index `bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSource {
    pub bus: usize,
    pub e: f64,
    pub xd: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AlgebraicOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AlgebraicOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the bus voltages for machine angles `delta`, warm-started from
/// (`v_start`, `theta_start`). `step` labels errors.
#[allow(clippy::too_many_arguments)]
pub fn solve_network_algebraic(
    delta: &[f64],
    machines: &[MachineSource],
    y: &AdmittanceMatrix,
    loads: &Loads,
    v_start: &[f64],
    theta_start: &[f64],
    opts: AlgebraicOptions,
    step: usize,
) -> Result<NetworkSolution> {
    let n = y.dim();
    if delta.len() != machines.len() {
        return Err(Error::DimensionMismatch {
            what: "machine angles",
            expected: machines.len(),
            found: delta.len(),
        });
    }
    if machines.is_empty() {
        return Err(Error::Config(
            "network solve needs at least one machine for an angle reference".into(),
        ));
    }
    let mut v = v_start.to_vec();
    let mut theta = theta_start.to_vec();
    let mut iterations = 0;

    loop {
        let (p, q) = injections(&v, &theta, y);
        let mut f = DVector::zeros(2 * n);
        for i in 0..n {
            let (s, _) = loads.scale(i, v[i]);
            f[i] = p[i] + loads.p[i] * s;
            f[n + i] = q[i] + loads.q[i] * s;
        }
        for (m, src) in machines.iter().enumerate() {
            let i = src.bus;
            f[i] -= generator_electrical_power(src.e, v[i], src.xd, delta[m], theta[i]);
            f[n + i] -= generator_reactive_power(src.e, v[i], src.xd, delta[m], theta[i]);
        }
        let residual = f.amax();
        if !residual.is_finite() {
            return Err(Error::AlgebraicDiverged {
                step,
                iterations,
                mismatch: residual,
            });
        }
        if residual < opts.tolerance {
            if v.iter().any(|&x| x <= 0.0) {
                return Err(Error::AlgebraicDiverged {
                    step,
                    iterations,
                    mismatch: residual,
                });
            }
            return Ok(NetworkSolution {
                v,
                theta,
                iterations,
                residual,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::AlgebraicDiverged {
                step,
                iterations,
                mismatch: residual,
            });
        }

        let jac = injection_jacobian(&v, &theta, y, &p, &q);
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = jac.dp_dtheta[r * n + c];
                j[(r, n + c)] = jac.dp_dv[r * n + c];
                j[(n + r, c)] = jac.dq_dtheta[r * n + c];
                j[(n + r, n + c)] = jac.dq_dv[r * n + c];
            }
            let (_, ds) = loads.scale(r, v[r]);
            j[(r, n + r)] += loads.p[r] * ds;
            j[(n + r, n + r)] += loads.q[r] * ds;
        }
        for (m, src) in machines.iter().enumerate() {
            let i = src.bus;
            let (s, c) = (delta[m] - theta[i]).sin_cos();
            let k = src.e / src.xd;
            // d/dθ and d/dV of the machine's P and Q output
            j[(i, i)] -= -k * v[i] * c;
            j[(i, n + i)] -= k * s;
            j[(n + i, i)] -= k * v[i] * s;
            j[(n + i, n + i)] -= k * c - 2.0 * v[i] / src.xd;
        }
        let dx = j.lu().solve(&f).ok_or(Error::AlgebraicDiverged {
            step,
            iterations,
            mismatch: residual,
        })?;
        for i in 0..n {
            theta[i] -= dx[i];
            v[i] -= dx[n + i];
        }
        iterations += 1;
    }
}
