//! One monitored scenario end to end: simulate, measure, filter, detect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mewma::{
    channel_std, detect_with_breakdown, ChannelBreakdown, DetectConfig, DetectionRecord,
};
use crate::network::{BranchId, BusId};
use crate::pf::{run_filter_bank, FilterRun, MachinePrior, MachineSpec};
use crate::pmu::{
    add_output_noise, matched_phasor_noise, observable_buses, output_series,
    synthesize_measurements, ObservableSet, OutputNoise, PhasorNoise,
};
use crate::rng;
use crate::sim::{DynamicModel, ScenarioConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhasorNoiseLevel {
    Off,
    /// Equal magnitude and angle noise sized so that load channels see this
    /// fraction of their demand as `ΔP` noise.
    Matched {
        demand_fraction: f64,
    },
    Fixed(PhasorNoise),
}

/// Monitoring settings shared by every scenario of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub particles: usize,
    /// Noise on every PMU phasor sample.
    pub phasor_noise: PhasorNoiseLevel,
    /// Extra noise on the differenced power signal.
    pub output_noise: Option<OutputNoise>,
    /// Process-noise level the filter assumes.
    pub filter_process_noise: f64,
    /// Prior std of each rotor angle, rad.
    pub prior_delta_std: f64,
    pub prior_omega_std: f64,
    /// Seconds of pre-onset data used to estimate channel standard deviations.
    pub warmup: f64,
    /// Crossings before this time are ignored, s.
    pub arm_after: f64,
}

impl MonitorConfig {
    /// Phasor noise in effect for `model`.
    pub fn resolved_phasor_noise(
        &self,
        model: &DynamicModel,
        obs: &ObservableSet,
    ) -> Result<PhasorNoise> {
        match self.phasor_noise {
            PhasorNoiseLevel::Off => Ok(PhasorNoise::NONE),
            PhasorNoiseLevel::Fixed(n) => Ok(n),
            PhasorNoiseLevel::Matched { demand_fraction } => matched_phasor_noise(
                &model.case,
                &model.y_base,
                obs,
                &model.v0,
                &model.theta0,
                demand_fraction,
            ),
        }
    }
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            phasor_noise: PhasorNoiseLevel::Off,
            output_noise: Some(OutputNoise::default()),
            filter_process_noise: 1e-4,
            prior_delta_std: 0.01,
            prior_omega_std: 1e-4,
            warmup: 2.0,
            arm_after: 1.0,
        }
    }
}

/// Everything a detection run produced for one scenario.
#[derive(Debug, Clone)]
pub struct MonitoredScenario {
    pub trajectory: Trajectory,
    pub observable: ObservableSet,
    pub filter: FilterRun,
    /// `Y` per step `k = 1..len`.
    pub outputs: Vec<Vec<f64>>,
    /// Channel standard deviations of `Y` and of the residual over the warm-up.
    pub output_sigma: Vec<f64>,
    pub residual_sigma: Vec<f64>,
    pub breakdown: ChannelBreakdown,
}

impl MonitoredScenario {
    /// Runs the chart with smoothing `lambda` and threshold `h`.
    pub fn detect(&self, lambda: f64, h: f64, monitor: &MonitorConfig) -> Result<DetectionRecord> {
        let dt = self.trajectory.dt;
        let cfg = DetectConfig {
            lambda,
            sigma: self.residual_sigma.clone(),
            h,
            first_step: 1,
            dt,
            arm_step: (monitor.arm_after / dt - 1e-9).ceil() as usize,
            onset_step: self.trajectory.onset_step,
        };
        detect_with_breakdown(self.breakdown.clone(), &cfg)
    }
}

/// Seeds of the independent stages of one scenario.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    rng::derive_seed(seed, &[0x5CE, stage])
}

/// Simulates the scenario, synthesizes its PMU data, runs the filter bank
/// and assembles residuals ready for the chart.
pub fn monitor_scenario(
    model: &DynamicModel,
    scenario: &ScenarioConfig,
    monitor: &MonitorConfig,
) -> Result<MonitoredScenario> {
    let case = &model.case;
    let obs = observable_buses(case)?;
    let dt = scenario.dt();
    let warm_steps = (monitor.warmup / dt).round() as usize;
    if scenario.outage.is_some() && warm_steps + 1 > scenario.onset_step() {
        return Err(Error::Config(format!(
            "warm-up of {} s overlaps the onset at {} s",
            monitor.warmup, scenario.onset
        )));
    }
    if warm_steps < 2 || warm_steps >= scenario.steps() {
        return Err(Error::Config(format!(
            "warm-up of {} s leaves no usable window",
            monitor.warmup
        )));
    }
    let mut sim_cfg = scenario.clone();
    sim_cfg.seed = stage_seed(scenario.seed, 0);
    let traj = model.simulate(&sim_cfg)?;
    let snaps = synthesize_measurements(
        &traj,
        case,
        monitor.resolved_phasor_noise(model, &obs)?,
        stage_seed(scenario.seed, 1),
    );
    // The operator keeps evaluating with the topology it believes in.
    let mut signals = output_series(&snaps, &model.y_base, &obs, case)?;
    if let Some(noise) = monitor.output_noise {
        add_output_noise(
            &mut signals,
            &traj,
            &obs,
            noise,
            stage_seed(scenario.seed, 2),
        );
    }
    let outputs: Vec<Vec<f64>> = signals.into_iter().map(|s| s.values).collect();
    let output_sigma = channel_std(&outputs[..warm_steps])?;

    let gen_channels: Vec<(usize, usize)> = obs.generator_channels().collect();
    let machines: Vec<MachineSpec> = gen_channels
        .iter()
        .map(|&(_, m)| MachineSpec {
            bus: case.generators[m].bus,
            params: model.params[m],
            e: model.machines[m].e,
            xd: model.machines[m].xd,
        })
        .collect();
    let priors: Vec<MachinePrior> = gen_channels
        .iter()
        .map(|&(_, m)| MachinePrior {
            delta: model.delta0[m],
            omega: 1.0,
            delta_std: monitor.prior_delta_std,
            omega_std: monitor.prior_omega_std,
        })
        .collect();
    let terminal: Vec<Vec<(f64, f64)>> = snaps
        .iter()
        .map(|s| {
            machines
                .iter()
                .map(|m| s.get(m.bus).expect("generator channels are instrumented"))
                .collect()
        })
        .collect();
    let y_gen: Vec<Vec<f64>> = outputs
        .iter()
        .map(|row| gen_channels.iter().map(|&(c, _)| row[c]).collect())
        .collect();
    let sigma_gen: Vec<f64> = gen_channels.iter().map(|&(c, _)| output_sigma[c]).collect();
    if let Some(c) = sigma_gen.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Config(format!(
            "zero output variance on generator channel {c}; add measurement noise"
        )));
    }
    let filter = run_filter_bank(
        &machines,
        &priors,
        &terminal,
        &y_gen,
        &sigma_gen,
        dt,
        monitor.filter_process_noise,
        monitor.particles,
        stage_seed(scenario.seed, 3),
    )?;

    let dim = obs.dim();
    let dpg_hat: Vec<Vec<f64>> = filter.estimates[1..]
        .iter()
        .map(|e| {
            let mut row = vec![0.0; dim];
            for (j, &(c, _)) in gen_channels.iter().enumerate() {
                row[c] = e.dpg[j];
            }
            row
        })
        .collect();
    let breakdown = ChannelBreakdown::new(&obs, dpg_hat, &outputs);
    let residual_sigma = channel_std(&breakdown.residuals()[..warm_steps])?;
    if residual_sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(
            "zero residual variance on a channel; add measurement noise".into(),
        ));
    }
    Ok(MonitoredScenario {
        trajectory: traj,
        observable: obs,
        filter,
        outputs,
        output_sigma,
        residual_sigma,
        breakdown,
    })
}

/// Whether either endpoint of `branch` carries a PMU.
pub fn near_pmu(model: &DynamicModel, branch: BranchId) -> bool {
    model.case.branch(branch).is_some_and(|b| {
        [b.from, b.to]
            .iter()
            .any(|bus: &BusId| model.case.pmu_buses.contains(bus))
    })
}
