use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use super::algebraic::{
    solve_network_algebraic, AlgebraicOptions, LoadModel, Loads, MachineSource,
};
use super::machine::{
    generator_electrical_power, step_generator_states, GeneratorState, SwingParams,
};
use crate::error::{Error, Result};
use crate::network::{
    build_admittance, init_generator_emf, solve_power_flow, AdmittanceMatrix, BranchId, BusId,
    NetworkCase, SteadyState, TopologyRevision,
};
use crate::rng;

/// A case prepared for time-domain simulation: pre-disturbance operating
/// point, machine sources and swing coefficients.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub case: NetworkCase,
    pub y_base: AdmittanceMatrix,
    pub steady: SteadyState,
    pub machines: Vec<MachineSource>,
    pub params: Vec<SwingParams>,
    pub loads: Loads,
    /// Equilibrium rotor angles.
    pub delta0: Vec<f64>,
    /// Bus voltages of the equilibrium the machines start from.
    pub v0: Vec<f64>,
    pub theta0: Vec<f64>,
}

impl DynamicModel {
    pub fn new(case: &NetworkCase, load_model: LoadModel) -> Result<Self> {
        let y_base = build_admittance(case, &BTreeSet::new())?;
        let steady = solve_power_flow(case, &y_base)?;
        let emf = init_generator_emf(&steady, case)?;
        let machines: Vec<MachineSource> = case
            .generators
            .iter()
            .zip(&emf)
            .map(|(g, e)| MachineSource {
                bus: case.bus_index(g.bus).expect("validated"),
                e: e.e,
                xd: g.transient_reactance,
            })
            .collect();
        let delta0: Vec<f64> = emf.iter().map(|e| e.delta).collect();
        let loads = Loads {
            p: case.buses.iter().map(|b| b.load_p).collect(),
            q: case.buses.iter().map(|b| b.load_q).collect(),
            v0: steady.v.clone(),
            model: load_model,
        };
        // Re-solve the network at the initial angles so that mechanical power
        // balances the machines exactly at the simulator's own tolerance.
        let sol = solve_network_algebraic(
            &delta0,
            &machines,
            &y_base,
            &loads,
            &steady.v,
            &steady.theta,
            AlgebraicOptions::default(),
            0,
        )?;
        let params = case
            .generators
            .iter()
            .zip(&machines)
            .zip(&delta0)
            .map(|((g, m), &d)| {
                let pm = generator_electrical_power(m.e, sol.v[m.bus], m.xd, d, sol.theta[m.bus]);
                SwingParams::from_generator(g, pm, case.f0)
            })
            .collect();
        Ok(Self {
            case: case.clone(),
            y_base,
            steady,
            machines,
            params,
            loads,
            delta0,
            v0: sol.v,
            theta0: sol.theta,
        })
    }

    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    pub fn generator_buses(&self) -> Vec<BusId> {
        self.case.generators.iter().map(|g| g.bus).collect()
    }

    pub fn equilibrium(&self) -> Vec<GeneratorState> {
        self.delta0
            .iter()
            .map(|&d| GeneratorState::synchronous(d))
            .collect()
    }

    /// Electrical output of every machine at bus voltages (`v`, `theta`).
    pub fn electrical_power(
        &self,
        states: &[GeneratorState],
        v: &[f64],
        theta: &[f64],
    ) -> Vec<f64> {
        self.machines
            .iter()
            .zip(states)
            .map(|(m, s)| generator_electrical_power(m.e, v[m.bus], m.xd, s.delta, theta[m.bus]))
            .collect()
    }

    /// Admittance matrix after removing `outage`, rejecting outages that split the network.
    pub fn outage_admittance(&self, outage: BranchId) -> Result<AdmittanceMatrix> {
        if self.case.branch(outage).is_none() {
            return Err(Error::UnknownBranch(outage));
        }
        let set = BTreeSet::from([outage]);
        if !self.case.is_connected(&set) {
            return Err(Error::Islanding { branch: outage });
        }
        build_admittance(&self.case, &set)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Sampling rate, Hz.
    pub rate: f64,
    /// Euler steps per sampling interval; each one re-solves the network.
    pub substeps: usize,
    pub duration: f64,
    pub outage: Option<BranchId>,
    pub onset: f64,
    pub seed: u64,
    /// Process-noise std as a fraction of each machine's electrical power.
    pub process_noise: f64,
    pub delta_bound: f64,
    pub algebraic: AlgebraicOptions,
    /// Starting machine states; the equilibrium when absent.
    pub initial_states: Option<Vec<GeneratorState>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rate: 30.0,
            substeps: 10,
            duration: 10.0,
            outage: None,
            onset: 3.0,
            seed: 0,
            process_noise: 1e-4,
            delta_bound: TAU * 10.0,
            algebraic: AlgebraicOptions::default(),
            initial_states: None,
        }
    }
}

impl ScenarioConfig {
    pub fn steps(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.rate
    }

    /// First step whose time is at or after the onset.
    pub fn onset_step(&self) -> usize {
        (self.onset * self.rate - 1e-9).ceil().max(0.0) as usize
    }
}

/// Sampled output of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub seed: u64,
    pub outage: Option<BranchId>,
    pub onset: f64,
    /// Step at which the post-outage network takes effect, when an outage is scheduled.
    pub onset_step: Option<usize>,
    pub buses: Vec<BusId>,
    pub generator_buses: Vec<BusId>,
    pub t: Vec<f64>,
    pub states: Vec<Vec<GeneratorState>>,
    pub v: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub pg: Vec<Vec<f64>>,
    pub revisions: Vec<TopologyRevision>,
    pub load_model: LoadModel,
    /// Scheduled active demand per bus and the voltages it is referred to.
    pub load_p: Vec<f64>,
    pub load_v0: Vec<f64>,
}

impl Trajectory {
    /// Active demand at bus index `i` and step `k`.
    pub fn demand(&self, k: usize, i: usize) -> f64 {
        match self.load_model {
            LoadModel::ConstantPower => self.load_p[i],
            LoadModel::ConstantImpedance => {
                self.load_p[i] * (self.v[k][i] / self.load_v0[i]).powi(2)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Columnar CSV: time, per-machine angle, speed and power, per-bus voltage.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["delta", "omega", "pg"] {
            header.extend(self.generator_buses.iter().map(|b| format!("{prefix}_{b}")));
        }
        for prefix in ["V", "theta"] {
            header.extend(self.buses.iter().map(|b| format!("{prefix}_{b}")));
        }
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k].to_string()];
            row.extend(self.states[k].iter().map(|s| s.delta.to_string()));
            row.extend(self.states[k].iter().map(|s| s.omega.to_string()));
            row.extend(self.pg[k].iter().map(f64::to_string));
            row.extend(self.v[k].iter().map(f64::to_string));
            row.extend(self.theta[k].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the dynamic model for `case` and simulates one scenario.
pub fn simulate_scenario(
    case: &NetworkCase,
    load_model: LoadModel,
    cfg: &ScenarioConfig,
) -> Result<Trajectory> {
    DynamicModel::new(case, load_model)?.simulate(cfg)
}

impl DynamicModel {
    /// Forward-Euler integration of the swing equations, with the network
    /// re-solved at every sample. The outage admittance applies from the
    /// first sample at or after the onset.
    pub fn simulate(&self, cfg: &ScenarioConfig) -> Result<Trajectory> {
        if !(cfg.rate > 0.0 && cfg.duration > 0.0) {
            return Err(Error::Config("rate and duration must be positive".into()));
        }
        let onset_step = match cfg.outage {
            Some(_) if cfg.onset >= cfg.duration => {
                return Err(Error::Config(format!(
                    "onset {} s is not before the end {} s",
                    cfg.onset, cfg.duration
                )))
            }
            Some(_) => Some(cfg.onset_step()),
            None => None,
        };
        let y_post = cfg
            .outage
            .map(|id| self.outage_admittance(id))
            .transpose()?;

        let m = self.machine_count();
        let steps = cfg.steps();
        let dt = cfg.dt();
        let mut states = match &cfg.initial_states {
            Some(s) if s.len() != m => {
                return Err(Error::DimensionMismatch {
                    what: "initial machine states",
                    expected: m,
                    found: s.len(),
                })
            }
            Some(s) => s.clone(),
            None => self.equilibrium(),
        };
        let mut rng = rng::stream(cfg.seed, &[0x5157]);
        let mut v = self.v0.clone();
        let mut theta = self.theta0.clone();
        let gen_buses = self.generator_buses();

        let mut traj = Trajectory {
            dt,
            seed: cfg.seed,
            outage: cfg.outage,
            onset: cfg.onset,
            onset_step,
            buses: self.case.buses.iter().map(|b| b.id).collect(),
            generator_buses: gen_buses.clone(),
            t: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps),
            v: Vec::with_capacity(steps),
            theta: Vec::with_capacity(steps),
            pg: Vec::with_capacity(steps),
            revisions: Vec::with_capacity(steps),
            load_model: self.loads.model,
            load_p: self.loads.p.clone(),
            load_v0: self.loads.v0.clone(),
        };
        let mut noise = vec![0.0; m];
        let zeros = vec![0.0; m];
        let substeps = cfg.substeps.max(1);
        let h = dt / substeps as f64;
        for k in 0..steps {
            let y = match (&y_post, onset_step) {
                (Some(y), Some(ko)) if k >= ko => y,
                _ => &self.y_base,
            };
            if let Some((i, s)) = states
                .iter()
                .enumerate()
                .find(|(_, s)| s.delta.abs() > cfg.delta_bound)
            {
                return Err(Error::LossOfSynchronism {
                    step: k,
                    bus: gen_buses[i],
                    delta: s.delta,
                });
            }
            let delta: Vec<f64> = states.iter().map(|s| s.delta).collect();
            let sol = solve_network_algebraic(
                &delta,
                &self.machines,
                y,
                &self.loads,
                &v,
                &theta,
                cfg.algebraic,
                k,
            )?;
            v = sol.v;
            theta = sol.theta;
            let pg = self.electrical_power(&states, &v, &theta);

            traj.t.push(cfg.time(k));
            traj.states.push(states.clone());
            traj.v.push(v.clone());
            traj.theta.push(theta.clone());
            traj.pg.push(pg.clone());
            traj.revisions.push(y.revision().clone());

            if k + 1 == steps {
                break;
            }
            // Power disturbance with std proportional to output, mapped to
            // speed units, applied once per sampling interval.
            for (i, eps) in noise.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *eps = if cfg.process_noise > 0.0 {
                    dt / self.params[i].inertia * cfg.process_noise * pg[i].abs() * z
                } else {
                    0.0
                };
            }
            states = step_generator_states(&states, &pg, &self.params, h, &noise, k)?;
            for _ in 1..substeps {
                let delta: Vec<f64> = states.iter().map(|s| s.delta).collect();
                let sol = solve_network_algebraic(
                    &delta,
                    &self.machines,
                    y,
                    &self.loads,
                    &v,
                    &theta,
                    cfg.algebraic,
                    k,
                )?;
                let pg = self.electrical_power(&states, &sol.v, &sol.theta);
                v = sol.v;
                theta = sol.theta;
                states = step_generator_states(&states, &pg, &self.params, h, &zeros, k)?;
            }
        }
        Ok(traj)
    }
}
