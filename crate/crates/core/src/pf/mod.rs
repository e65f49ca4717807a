//! Bootstrap particle filter over classical-machine rotor states.
//!
//! A [`ParticleSet`] carries `n` particles of `dim` machines each. Transition
//! and output maps come from a [`TransitionModel`], so the same filter runs the
//! swing model and linear test systems. Randomness is drawn from streams keyed
//! by (seed, step, block), which makes every result independent of how the
//! blocks are scheduled across threads.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::BusId;
use crate::rng;
use crate::sim::{generator_electrical_power, step_machine, GeneratorState, SwingParams};

pub mod linear;

const BLOCK: usize = 256;

pub trait TransitionModel: Sync {
    /// Machines per particle.
    fn dim(&self) -> usize;

    /// Advances one particle from step `k - 1` to `k`. `z` holds one standard
    /// normal draw per machine.
    fn propagate(&self, k: usize, x: &[GeneratorState], z: &[f64], out: &mut [GeneratorState]);

    /// Predicted output at step `k`, one channel per machine, for the move
    /// from `prev` to `curr`.
    fn output(&self, k: usize, prev: &[GeneratorState], curr: &[GeneratorState], out: &mut [f64]);
}

/// Gaussian prior for one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachinePrior {
    pub delta: f64,
    pub omega: f64,
    pub delta_std: f64,
    pub omega_std: f64,
}

impl MachinePrior {
    pub fn around(delta: f64) -> Self {
        Self {
            delta,
            omega: 1.0,
            delta_std: 0.01,
            omega_std: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub k: usize,
    pub dim: usize,
    /// Particle `i` occupies `states[i * dim..(i + 1) * dim]`.
    pub states: Vec<GeneratorState>,
    /// States one step earlier, kept for the differenced output.
    pub prev: Vec<GeneratorState>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[GeneratorState] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// Weighted mean state per machine.
    pub fn mean(&self) -> Vec<GeneratorState> {
        let mut out = vec![GeneratorState::new(0.0, 0.0); self.dim];
        for (i, &w) in self.weights.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(self.particle(i)) {
                o.delta += w * s.delta;
                o.omega += w * s.omega;
            }
        }
        out
    }

    /// Weighted variance of angle and speed per machine.
    pub fn variance(&self) -> Vec<(f64, f64)> {
        let mean = self.mean();
        let mut out = vec![(0.0, 0.0); self.dim];
        for (i, &w) in self.weights.iter().enumerate() {
            for ((o, s), m) in out.iter_mut().zip(self.particle(i)).zip(&mean) {
                o.0 += w * (s.delta - m.delta).powi(2);
                o.1 += w * (s.omega - m.omega).powi(2);
            }
        }
        out
    }
}

/// Draws `n` particles from independent Gaussian priors, equally weighted.
///
/// The output is a difference of consecutive states and carries no
/// information at the first sample, so the initial weights stay uniform.
pub fn initialize(prior: &[MachinePrior], n: usize, seed: u64) -> Result<ParticleSet> {
    if n < 2 {
        return Err(Error::Config(format!(
            "particle count must be at least 2, got {n}"
        )));
    }
    if prior.iter().any(|p| p.delta_std < 0.0 || p.omega_std < 0.0) {
        return Err(Error::Config(
            "prior standard deviations must be nonnegative".into(),
        ));
    }
    let dim = prior.len();
    let mut states = vec![GeneratorState::new(0.0, 0.0); n * dim];
    states
        .par_chunks_mut(BLOCK * dim)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut rng = rng::stream(seed, &[u64::MAX, b as u64]);
            for (j, s) in chunk.iter_mut().enumerate() {
                let p = &prior[j % dim];
                let (zd, zw): (f64, f64) = (
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                *s = GeneratorState::new(p.delta + p.delta_std * zd, p.omega + p.omega_std * zw);
            }
        });
    Ok(ParticleSet {
        k: 0,
        dim,
        prev: states.clone(),
        states,
        weights: vec![1.0 / n as f64; n],
    })
}

/// Moves every particle one step through the model; weights are unchanged.
pub fn predict<M: TransitionModel>(ps: &ParticleSet, model: &M, seed: u64) -> Result<ParticleSet> {
    let dim = ps.dim;
    if model.dim() != dim {
        return Err(Error::DimensionMismatch {
            what: "model machines",
            expected: dim,
            found: model.dim(),
        });
    }
    let k = ps.k + 1;
    let mut next = vec![GeneratorState::new(0.0, 0.0); ps.states.len()];
    next.par_chunks_mut(BLOCK * dim)
        .zip(ps.states.par_chunks(BLOCK * dim))
        .enumerate()
        .for_each(|(b, (out, inp))| {
            let mut rng = rng::stream(seed, &[k as u64, b as u64]);
            let mut z = vec![0.0; dim];
            for (o, x) in out.chunks_mut(dim).zip(inp.chunks(dim)) {
                z.iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(&mut rng));
                model.propagate(k, x, &z, o);
            }
        });
    if next.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "particle state",
            step: k,
        });
    }
    Ok(ParticleSet {
        k,
        dim,
        prev: ps.states.clone(),
        states: next,
        weights: ps.weights.clone(),
    })
}

/// Result of a weight update.
#[derive(Debug, Clone)]
pub struct Correction {
    pub set: ParticleSet,
    /// Every likelihood vanished; weights were reset to uniform.
    pub degenerate: bool,
}

/// Multiplies the weights by the Gaussian output likelihood, in log space.
pub fn correct<M: TransitionModel>(
    ps: &ParticleSet,
    model: &M,
    y: &[f64],
    sigma: &[f64],
) -> Result<Correction> {
    let dim = ps.dim;
    for (what, len) in [
        ("output channels", y.len()),
        ("channel sigmas", sigma.len()),
    ] {
        if len != dim {
            return Err(Error::DimensionMismatch {
                what,
                expected: dim,
                found: len,
            });
        }
    }
    let inv_var: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let n = ps.len();
    let mut logw = vec![0.0; n];
    logw.par_chunks_mut(BLOCK).enumerate().for_each(|(b, out)| {
        let mut h = vec![0.0; dim];
        for (j, lw) in out.iter_mut().enumerate() {
            let i = b * BLOCK + j;
            let (lo, hi) = (i * dim, (i + 1) * dim);
            model.output(ps.k, &ps.prev[lo..hi], &ps.states[lo..hi], &mut h);
            let ll: f64 = (0..dim)
                .map(|c| -0.5 * (y[c] - h[c]).powi(2) * inv_var[c])
                .sum();
            *lw = ps.weights[i].ln() + ll;
        }
    });
    let max = logw
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut set = ps.clone();
    if !max.is_finite() {
        set.weights = vec![1.0 / n as f64; n];
        return Ok(Correction {
            set,
            degenerate: true,
        });
    }
    let mut total = 0.0;
    for (w, lw) in set.weights.iter_mut().zip(&logw) {
        *w = if lw.is_nan() { 0.0 } else { (lw - max).exp() };
        total += *w;
    }
    set.weights.iter_mut().for_each(|w| *w /= total);
    Ok(Correction {
        set,
        degenerate: false,
    })
}

/// Effective sample size `1 / Σ w²`.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Offspring counts of systematic resampling with `draws` points
/// `U_j = u1 + (j - 1)/draws`, `u1 ∈ (0, 1/draws]`. Particle `i` receives the
/// points in `(Σ_{s<i} w_s, Σ_{s≤i} w_s]`.
pub fn systematic_offspring(weights: &[f64], draws: usize, u1: f64) -> Vec<usize> {
    let n = weights.len();
    let mut counts = vec![0; n];
    let step = 1.0 / draws as f64;
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..draws {
        let u = u1 + j as f64 * step;
        // Points within rounding of a boundary belong to the lower interval;
        // the last interval closes at 1 whatever the rounding of the sum.
        while u > cum + 1e-12 && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        counts[i] += 1;
    }
    counts
}

/// Systematic resampling; all weights become `1/n`.
pub fn systematic_resample<R: Rng + ?Sized>(ps: &ParticleSet, rng: &mut R) -> ParticleSet {
    let n = ps.len();
    let u1 = (1.0 - rng.random::<f64>()) / n as f64;
    let counts = systematic_offspring(&ps.weights, n, u1);
    let dim = ps.dim;
    let mut states = Vec::with_capacity(ps.states.len());
    let mut prev = Vec::with_capacity(ps.prev.len());
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            states.extend_from_slice(ps.particle(i));
            prev.extend_from_slice(&ps.prev[i * dim..(i + 1) * dim]);
        }
    }
    ParticleSet {
        k: ps.k,
        dim,
        states,
        prev,
        weights: vec![1.0 / n as f64; n],
    }
}

/// Bookkeeping of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub k: usize,
    /// ESS after the weight update.
    pub ess: f64,
    pub resampled: bool,
    pub degenerate: bool,
    pub mean: Vec<GeneratorState>,
}

/// Resample when ESS ≤ n/2, then predict and correct.
pub fn filter_step<M: TransitionModel>(
    ps: &ParticleSet,
    model: &M,
    y: &[f64],
    sigma: &[f64],
    seed: u64,
) -> Result<(ParticleSet, StepInfo)> {
    let n = ps.len() as f64;
    let resampled = ess(&ps.weights) <= n / 2.0;
    let resampled_set;
    let base = if resampled {
        let mut r = rng::stream(seed, &[ps.k as u64, u64::MAX - 1]);
        resampled_set = systematic_resample(ps, &mut r);
        &resampled_set
    } else {
        ps
    };
    let predicted = predict(base, model, seed)?;
    let Correction { set, degenerate } = correct(&predicted, model, y, sigma)?;
    let info = StepInfo {
        k: set.k,
        ess: ess(&set.weights),
        resampled,
        degenerate,
        mean: set.mean(),
    };
    Ok((set, info))
}

/// A classical machine driven by the measured voltage at its terminal bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSpec {
    pub bus: BusId,
    pub params: SwingParams,
    pub e: f64,
    pub xd: f64,
}

/// Swing model of one or more machines whose electrical power is evaluated
/// at measured terminal voltages `terminal[k][machine] = (V, θ)`.
pub struct SwingModel<'a> {
    pub machines: Vec<MachineSpec>,
    pub terminal: &'a [Vec<(f64, f64)>],
    pub dt: f64,
    /// Process-noise std as a fraction of electrical power.
    pub process_noise: f64,
}

impl SwingModel<'_> {
    #[inline]
    fn pg(&self, k: usize, m: usize, s: GeneratorState) -> f64 {
        let (v, theta) = self.terminal[k][m];
        let spec = &self.machines[m];
        generator_electrical_power(spec.e, v, spec.xd, s.delta, theta)
    }
}

impl TransitionModel for SwingModel<'_> {
    fn dim(&self) -> usize {
        self.machines.len()
    }

    fn propagate(&self, k: usize, x: &[GeneratorState], z: &[f64], out: &mut [GeneratorState]) {
        for m in 0..x.len() {
            let pg = self.pg(k - 1, m, x[m]);
            let p = &self.machines[m].params;
            let eps = self.dt / p.inertia * self.process_noise * pg.abs() * z[m];
            out[m] = step_machine(x[m], pg, p, self.dt, eps);
        }
    }

    fn output(&self, k: usize, prev: &[GeneratorState], curr: &[GeneratorState], out: &mut [f64]) {
        for m in 0..curr.len() {
            out[m] = self.pg(k, m, curr[m]) - self.pg(k - 1, m, prev[m]);
        }
    }
}

/// Per-step output of the filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    pub k: usize,
    pub mean: Vec<GeneratorState>,
    /// Electrical power at the posterior mean.
    pub pg: Vec<f64>,
    /// Change of `pg` from the previous step.
    pub dpg: Vec<f64>,
    pub ess: Vec<f64>,
    pub resampled: Vec<bool>,
    pub degenerate: Vec<bool>,
}

/// Filter run over a whole measurement series.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub buses: Vec<BusId>,
    pub particles: usize,
    pub estimates: Vec<FilterEstimate>,
}

impl FilterRun {
    pub fn degenerate_steps(&self) -> usize {
        self.estimates
            .iter()
            .filter(|e| e.degenerate.iter().any(|&d| d))
            .count()
    }

    /// Diagnostics as `k,ESS,resampled,posterior_delta_*,posterior_omega_*`;
    /// ESS is the smallest over machines and `resampled` counts machines
    /// that resampled.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "ESS".to_string(), "resampled".to_string()];
        header.extend(self.buses.iter().map(|b| format!("posterior_delta_{b}")));
        header.extend(self.buses.iter().map(|b| format!("posterior_omega_{b}")));
        w.write_record(&header)?;
        for e in &self.estimates {
            let mut row = vec![
                e.k.to_string(),
                e.ess
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
                    .to_string(),
                e.resampled.iter().filter(|&&r| r).count().to_string(),
            ];
            row.extend(e.mean.iter().map(|s| s.delta.to_string()));
            row.extend(e.mean.iter().map(|s| s.omega.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one single-machine filter per entry of `machines`.
///
/// Given the measured terminal voltages, each machine's dynamics and its
/// generator channel involve no other machine, so the joint posterior is the
/// product of the per-machine posteriors and each factor keeps its own
/// particle population. `y[k - 1][m]` and `sigma[m]` are machine `m`'s
/// channel at step `k ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn run_filter_bank(
    machines: &[MachineSpec],
    priors: &[MachinePrior],
    terminal: &[Vec<(f64, f64)>],
    y: &[Vec<f64>],
    sigma: &[f64],
    dt: f64,
    process_noise: f64,
    n: usize,
    seed: u64,
) -> Result<FilterRun> {
    let dim = machines.len();
    if priors.len() != dim || sigma.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "filter bank machines",
            expected: dim,
            found: priors.len().min(sigma.len()),
        });
    }
    if y.len() + 1 != terminal.len() {
        return Err(Error::DimensionMismatch {
            what: "output samples",
            expected: terminal.len().saturating_sub(1),
            found: y.len(),
        });
    }
    let columns: Vec<Vec<(f64, f64)>> = (0..dim)
        .map(|m| terminal.iter().map(|row| row[m]).collect())
        .collect();
    let steps = terminal.len();
    let mut per_machine = Vec::with_capacity(dim);
    for m in 0..dim {
        let single: Vec<Vec<(f64, f64)>> = columns[m].iter().map(|&t| vec![t]).collect();
        let model = SwingModel {
            machines: vec![machines[m]],
            terminal: &single,
            dt,
            process_noise,
        };
        let mseed = rng::derive_seed(seed, &[m as u64]);
        let mut ps = initialize(&priors[m..=m], n, mseed)?;
        let mut trace = Vec::with_capacity(steps);
        trace.push(StepInfo {
            k: 0,
            ess: n as f64,
            resampled: false,
            degenerate: false,
            mean: ps.mean(),
        });
        for k in 1..steps {
            let (next, info) = filter_step(&ps, &model, &[y[k - 1][m]], &[sigma[m]], mseed)?;
            ps = next;
            trace.push(info);
        }
        per_machine.push(trace);
    }

    let mut estimates = Vec::with_capacity(steps);
    let mut last_pg: Option<Vec<f64>> = None;
    for k in 0..steps {
        let mean: Vec<GeneratorState> = per_machine.iter().map(|t| t[k].mean[0]).collect();
        let pg: Vec<f64> = (0..dim)
            .map(|m| {
                let (v, theta) = terminal[k][m];
                generator_electrical_power(machines[m].e, v, machines[m].xd, mean[m].delta, theta)
            })
            .collect();
        let dpg = match &last_pg {
            Some(prev) => pg.iter().zip(prev).map(|(a, b)| a - b).collect(),
            None => vec![0.0; dim],
        };
        estimates.push(FilterEstimate {
            k,
            mean,
            dpg,
            ess: per_machine.iter().map(|t| t[k].ess).collect(),
            resampled: per_machine.iter().map(|t| t[k].resampled).collect(),
            degenerate: per_machine.iter().map(|t| t[k].degenerate).collect(),
            pg: pg.clone(),
        });
        last_pg = Some(pg);
    }
    Ok(FilterRun {
        buses: machines.iter().map(|m| m.bus).collect(),
        particles: n,
        estimates,
    })
}
