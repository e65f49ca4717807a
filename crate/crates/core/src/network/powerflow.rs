//! Full-Newton AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::admittance::{injection_jacobian, injections, AdmittanceMatrix};
use super::case::{BusKind, NetworkCase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Solved operating point.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net active injection per bus.
    pub p: Vec<f64>,
    /// Net reactive injection per bus.
    pub q: Vec<f64>,
    /// Active output of each generator, in case generator order.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Solves the AC power flow for `case` on the admittance matrix `y`.
///
/// Slack and PV buses start from their voltage setpoint, PQ buses from 1 p.u.;
/// all angles start at zero. The slack bus absorbs the generation/load
/// imbalance including losses.
pub fn solve_power_flow(case: &NetworkCase, y: &AdmittanceMatrix) -> Result<SteadyState> {
    solve_power_flow_with(case, y, PowerFlowOptions::default())
}

pub fn solve_power_flow_with(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    opts: PowerFlowOptions,
) -> Result<SteadyState> {
    let n = case.bus_count();
    let reachable = case.reachable_from_slack(y.revision().outages());
    if reachable != n {
        return Err(Error::Disconnected {
            reachable,
            total: n,
        });
    }

    let mut p_sched = vec![0.0; n];
    let mut q_sched = vec![0.0; n];
    for (i, bus) in case.buses.iter().enumerate() {
        p_sched[i] = -bus.load_p;
        q_sched[i] = -bus.load_q;
    }
    for g in &case.generators {
        p_sched[case.bus_index(g.bus).expect("validated")] += g.mech_power;
    }

    let mut v: Vec<f64> = case
        .buses
        .iter()
        .map(|b| {
            b.voltage_setpoint
                .filter(|_| b.kind != BusKind::Pq)
                .unwrap_or(1.0)
        })
        .collect();
    let mut theta = vec![0.0; n];

    // unknown ordering: angles of all non-slack buses, then magnitudes of PQ buses
    let ang_idx: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind != BusKind::Slack)
        .collect();
    let mag_idx: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind == BusKind::Pq)
        .collect();
    let na = ang_idx.len();
    let dim = na + mag_idx.len();

    let mut iterations = 0;
    loop {
        let (p, q) = injections(&v, &theta, y);
        let mut mismatch = DVector::zeros(dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            mismatch[r] = p_sched[i] - p[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            mismatch[na + r] = q_sched[i] - q[i];
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: worst,
            });
        }
        if worst < opts.tolerance {
            return Ok(finish(case, v, theta, p, q, iterations, worst));
        }
        if iterations >= opts.max_iterations {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch: worst,
            });
        }

        let jac = injection_jacobian(&v, &theta, y, &p, &q);
        let mut j = DMatrix::zeros(dim, dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                j[(r, c)] = jac.dp_dtheta[i * n + k];
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                j[(r, na + c)] = jac.dp_dv[i * n + k];
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                j[(na + r, c)] = jac.dq_dtheta[i * n + k];
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                j[(na + r, na + c)] = jac.dq_dv[i * n + k];
            }
        }
        let dx = j.lu().solve(&mismatch).ok_or(Error::PowerFlowDiverged {
            iterations,
            mismatch: worst,
        })?;
        for (r, &i) in ang_idx.iter().enumerate() {
            theta[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            v[i] += dx[na + r];
        }
        iterations += 1;
    }
}

fn finish(
    case: &NetworkCase,
    v: Vec<f64>,
    theta: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    iterations: usize,
    max_mismatch: f64,
) -> SteadyState {
    let (gen_p, gen_q) = case
        .generators
        .iter()
        .map(|g| {
            let i = case.bus_index(g.bus).expect("validated");
            let bus = &case.buses[i];
            (p[i] + bus.load_p, q[i] + bus.load_q)
        })
        .unzip();
    SteadyState {
        v,
        theta,
        p,
        q,
        gen_p,
        gen_q,
        iterations,
        max_mismatch,
    }
}

/// Internal EMF of a classical machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalEmf {
    pub e: f64,
    pub delta: f64,
}

/// Internal voltage `E` and rotor angle `delta0` of every generator, from the
/// terminal phasor and the generator's output at the operating point:
/// `E∠δ = V∠θ + jX'd · conj(S / V∠θ)`.
pub fn init_generator_emf(ss: &SteadyState, case: &NetworkCase) -> Result<Vec<InternalEmf>> {
    case.generators
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let i = case.bus_index(g.bus).expect("validated");
            emf_behind_reactance(
                ss.v[i],
                ss.theta[i],
                ss.gen_p[k],
                ss.gen_q[k],
                g.transient_reactance,
            )
            .ok_or(Error::ZeroVoltage { bus: g.bus })
        })
        .collect()
}

pub fn emf_behind_reactance(v: f64, theta: f64, p: f64, q: f64, xd: f64) -> Option<InternalEmf> {
    if v == 0.0 || !v.is_finite() {
        return None;
    }
    let terminal = Complex64::from_polar(v, theta);
    let current = (Complex64::new(p, q) / terminal).conj();
    let e = terminal + Complex64::new(0.0, xd) * current;
    Some(InternalEmf {
        e: e.norm(),
        delta: e.arg(),
    })
}
