//! MEWMA chart on standardized residuals, threshold calibration and the
//! stopping rule.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::pmu::{ChannelKind, ObservableSet};
use crate::rng;

/// `ΔP̂_g − Y`; `dpg_hat` is zero on load channels.
pub fn residual(dpg_hat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if dpg_hat.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "residual channels",
            expected: y.len(),
            found: dpg_hat.len(),
        });
    }
    Ok(dpg_hat.iter().zip(y).map(|(g, y)| g - y).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MewmaState {
    pub z: Vec<f64>,
    pub k: usize,
    pub lambda: f64,
    pub sigma: Vec<f64>,
    pub h: f64,
}

impl MewmaState {
    pub fn new(lambda: f64, sigma: Vec<f64>, h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "smoothing parameter {lambda} outside [0, 1]"
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(
                "channel standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            z: vec![0.0; sigma.len()],
            k: 0,
            lambda,
            sigma,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// `Z_k = λ r + (1 − λ) Z_{k−1}`.
    pub fn update(&mut self, r: &[f64]) {
        let l = self.lambda;
        for (z, r) in self.z.iter_mut().zip(r) {
            *z = l * r + (1.0 - l) * *z;
        }
        self.k += 1;
    }

    /// Variance factor of `Z_k` relative to `σ²`.
    pub fn variance_factor(&self) -> f64 {
        covariance_factor(self.lambda, self.k)
    }

    /// `Zᵀ Σ_Z⁻¹ Z` with the exact diagonal covariance at step `k`.
    pub fn t2(&self) -> Result<f64> {
        let f = self.variance_factor();
        if self.k == 0 || f <= 0.0 {
            return Err(Error::StatisticUndefined);
        }
        Ok(self
            .z
            .iter()
            .zip(&self.sigma)
            .map(|(z, s)| (z / s).powi(2))
            .sum::<f64>()
            / f)
    }
}

/// `(λ / (2 − λ)) (1 − (1 − λ)^{2k})`.
pub fn covariance_factor(lambda: f64, k: usize) -> f64 {
    lambda / (2.0 - lambda) * (1.0 - (1.0 - lambda).powi(2 * k.min(i32::MAX as usize / 2) as i32))
}

/// Threshold calibration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    /// Closed form for `λ = 1`: the chart is a sequence of i.i.d. χ² draws.
    ChiSquare,
    /// Simulated in-control run lengths with common random numbers.
    MonteCarlo,
    /// Markov-chain approximation of the in-control run length.
    MarkovChain,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub streams: usize,
    /// Targets above this use the Markov chain when `λ < 1`.
    pub monte_carlo_limit: f64,
    pub chain_states: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            streams: 10_000,
            monte_carlo_limit: 1e5,
            chain_states: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub lambda: f64,
    pub dim: usize,
    pub target: f64,
    pub h: f64,
    /// In-control ARL at `h` according to `method`.
    pub arl: f64,
    /// 95% interval of `arl` for Monte Carlo estimates.
    pub ci: Option<(f64, f64)>,
    pub method: CalibrationMethod,
}

/// Finds `H` whose in-control average run length matches `target` samples.
/// The chart is scale invariant, so residuals are simulated standardized.
pub fn calibrate_threshold(
    lambda: f64,
    target: f64,
    dim: usize,
    seed: u64,
    opts: CalibrationOptions,
) -> Result<Calibration> {
    if target < 10.0 {
        return Err(Error::Calibration(format!("target ARL {target} below 10")));
    }
    if dim == 0 {
        return Err(Error::Calibration("dimension must be at least 1".into()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Calibration(format!(
            "smoothing parameter {lambda} outside (0, 1]"
        )));
    }
    if lambda == 1.0 {
        let h = chi2_quantile(dim, 1.0 - 1.0 / target)?;
        return Ok(Calibration {
            lambda,
            dim,
            target,
            h,
            arl: target,
            ci: None,
            method: CalibrationMethod::ChiSquare,
        });
    }
    if target > opts.monte_carlo_limit {
        return calibrate_markov(lambda, target, dim, opts.chain_states);
    }
    calibrate_monte_carlo(lambda, target, dim, seed, opts.streams)
}

fn chi2_quantile(dim: usize, p: f64) -> Result<f64> {
    let chi = ChiSquared::new(dim as f64).map_err(|e| Error::Calibration(e.to_string()))?;
    Ok(chi.inverse_cdf(p))
}

/// Running record of one in-control stream: the step of every new maximum
/// of `T²`, so that the run length at any threshold below the last record
/// is read off without re-simulating.
struct RecordStream {
    rng: rand_chacha::ChaCha8Rng,
    z: Vec<f64>,
    k: usize,
    records: Vec<(usize, f64)>,
}

impl RecordStream {
    fn new(seed: u64, i: usize, dim: usize) -> Self {
        Self {
            rng: rng::stream(seed, &[0xA21, i as u64]),
            z: vec![0.0; dim],
            k: 0,
            records: Vec::new(),
        }
    }

    fn best(&self) -> f64 {
        self.records.last().map_or(f64::NEG_INFINITY, |r| r.1)
    }

    /// Advances until `T² ≥ h` or `cap` steps.
    fn run_until(&mut self, lambda: f64, h: f64, cap: usize) {
        while self.best() < h && self.k < cap {
            self.k += 1;
            let mut q = 0.0;
            for z in self.z.iter_mut() {
                let r: f64 = StandardNormal.sample(&mut self.rng);
                *z = lambda * r + (1.0 - lambda) * *z;
                q += *z * *z;
            }
            let t2 = q / covariance_factor(lambda, self.k);
            if t2 > self.best() {
                self.records.push((self.k, t2));
            }
        }
    }

    /// Run length at threshold `h`, `None` if not reached yet.
    fn run_length(&self, h: f64) -> Option<usize> {
        self.records.iter().find(|r| r.1 >= h).map(|r| r.0)
    }
}

/// Mean run length and its standard error over streams that all reached `h`.
fn arl_at(streams: &[RecordStream], h: f64) -> Option<(f64, f64)> {
    let n = streams.len() as f64;
    let mut s = 0.0;
    let mut s2 = 0.0;
    for st in streams {
        let rl = st.run_length(h)? as f64;
        s += rl;
        s2 += rl * rl;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

fn calibrate_monte_carlo(
    lambda: f64,
    target: f64,
    dim: usize,
    seed: u64,
    streams: usize,
) -> Result<Calibration> {
    if streams < 2 {
        return Err(Error::Calibration(
            "need at least two simulated streams".into(),
        ));
    }
    let cap = (target * 1e3) as usize;
    let mut pool: Vec<RecordStream> = (0..streams)
        .map(|i| RecordStream::new(seed, i, dim))
        .collect();
    // The memoryless chart's threshold gives a run length at least the target
    // for any smaller λ; grow the bracket if a stream shows otherwise.
    let mut hi = chi2_quantile(dim, 1.0 - 1.0 / target)?;
    let mut lo = 0.0;
    loop {
        pool.par_iter_mut()
            .for_each(|s| s.run_until(lambda, hi, cap));
        if pool.iter().any(|s| s.best() < hi) {
            return Err(Error::Calibration(format!(
                "streams did not reach H = {hi:.3} within {cap} samples"
            )));
        }
        let (arl, _) = arl_at(&pool, hi).expect("all streams reached hi");
        if arl >= target {
            break;
        }
        lo = hi;
        hi *= 1.25;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (arl, _) = arl_at(&pool, mid).expect("below hi");
        if arl < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * hi {
            break;
        }
    }
    let (arl, se) = arl_at(&pool, hi).expect("below hi");
    if (arl - target).abs() > 0.05 * target {
        return Err(Error::Calibration(format!(
            "bisection ended at ARL {arl:.1}, more than 5% from {target}"
        )));
    }
    Ok(Calibration {
        lambda,
        dim,
        target,
        h: hi,
        arl,
        ci: Some((arl - 1.96 * se, arl + 1.96 * se)),
        method: CalibrationMethod::MonteCarlo,
    })
}

/// Regularized lower incomplete gamma via the central χ² CDF.
fn noncentral_chi2_cdf(x: f64, dim: usize, ncp: f64, central: &[ChiSquared]) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if ncp <= 0.0 {
        return central[0].cdf(x);
    }
    // Poisson mixture of central χ² with dim + 2j degrees of freedom.
    let half = 0.5 * ncp;
    let j0 = half.floor() as usize;
    let logp0 = -half + j0 as f64 * half.ln() - ln_factorial(j0);
    let mut total = 0.0;
    let term = |j: usize, logp: f64| -> f64 {
        let c = central.get(j).map_or_else(
            || {
                ChiSquared::new((dim + 2 * j) as f64)
                    .expect("positive")
                    .cdf(x)
            },
            |d| d.cdf(x),
        );
        logp.exp() * c
    };
    let mut logp = logp0;
    let mut j = j0;
    loop {
        let t = term(j, logp);
        total += t;
        if logp.exp() < 1e-16 || j > j0 + 10_000 {
            break;
        }
        j += 1;
        logp += half.ln() - (j as f64).ln();
    }
    if j0 > 0 {
        let mut logp = logp0;
        let mut j = j0;
        while j > 0 {
            logp += (j as f64).ln() - half.ln();
            j -= 1;
            total += term(j, logp);
            if logp.exp() < 1e-16 {
                break;
            }
        }
    }
    total.clamp(0.0, 1.0)
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

/// In-control ARL by a Markov chain on `u = ‖Z‖² / λ²`, which moves as a
/// noncentral χ² with noncentrality `(1 − λ)² u` and signals once
/// `u ≥ H / (λ (2 − λ))`. The chart uses the asymptotic covariance here.
pub fn markov_chain_arl(lambda: f64, h: f64, dim: usize, states: usize) -> f64 {
    let ucl = h / (lambda * (2.0 - lambda));
    let m = states;
    let width = ucl / (m as f64 - 0.5);
    let central: Vec<ChiSquared> = (0..64)
        .map(|j| ChiSquared::new((dim + 2 * j) as f64).expect("positive"))
        .collect();
    let scale = 1.0;
    let mut p = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let ui = i as f64 * width;
        let ncp = (1.0 - lambda).powi(2) * ui / scale;
        let mut prev = 0.0;
        for j in 0..m {
            let upper = (j as f64 + 0.5) * width;
            let c = noncentral_chi2_cdf(upper, dim, ncp, &central);
            p[(i, j)] = c - prev;
            prev = c;
        }
    }
    let a = DMatrix::<f64>::identity(m, m) - p;
    let ones = DVector::from_element(m, 1.0);
    let sol = a.lu().solve(&ones).expect("transient chain");
    sol[0]
}

fn calibrate_markov(lambda: f64, target: f64, dim: usize, states: usize) -> Result<Calibration> {
    let mut lo = 0.0;
    let mut hi = chi2_quantile(dim, 1.0 - 1.0 / target)?;
    while markov_chain_arl(lambda, hi, dim, states) < target {
        lo = hi;
        hi *= 1.25;
        if hi > 1e4 {
            return Err(Error::Calibration("no threshold bracket found".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if markov_chain_arl(lambda, mid, dim, states) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    let arl = markov_chain_arl(lambda, hi, dim, states);
    if (arl - target).abs() > 0.05 * target {
        return Err(Error::Calibration(format!(
            "Markov-chain bisection ended at ARL {arl:.1}"
        )));
    }
    Ok(Calibration {
        lambda,
        dim,
        target,
        h: hi,
        arl,
        ci: None,
        method: CalibrationMethod::MarkovChain,
    })
}

/// Estimates the in-control mean run length at `h` from `streams` fresh
/// simulated streams (seeded independently of calibration).
pub fn empirical_arl(
    lambda: f64,
    h: f64,
    dim: usize,
    streams: usize,
    seed: u64,
    cap: usize,
) -> (f64, f64, usize) {
    let results: Vec<(usize, bool)> = (0..streams)
        .into_par_iter()
        .map(|i| {
            let mut s = RecordStream::new(rng::derive_seed(seed, &[0xE0A]), i, dim);
            s.run_until(lambda, h, cap);
            match s.run_length(h) {
                Some(rl) => (rl, false),
                None => (cap, true),
            }
        })
        .collect();
    let n = streams as f64;
    let mean = results.iter().map(|r| r.0 as f64).sum::<f64>() / n;
    let var = results
        .iter()
        .map(|r| (r.0 as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (
        mean,
        (var / n).sqrt(),
        results.iter().filter(|r| r.1).count(),
    )
}

/// Which part of the residual a channel contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelGroup {
    /// Filter-estimated generation change on generator channels.
    Gen,
    /// Measured net-power change on generator channels.
    GenBus,
    /// Measured net-power change on load channels.
    Load,
}

/// Residual components per step: `gen[k][c]` is the estimated generation
/// change on generator channels (zero elsewhere) and `net[k][c] = −Y`.
/// The residual is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBreakdown {
    pub kinds: Vec<ChannelKind>,
    pub gen: Vec<Vec<f64>>,
    pub net: Vec<Vec<f64>>,
}

impl ChannelBreakdown {
    pub fn new(obs: &ObservableSet, dpg_hat: Vec<Vec<f64>>, y: &[Vec<f64>]) -> Self {
        let net = y
            .iter()
            .map(|row| row.iter().map(|v| -v).collect())
            .collect();
        Self {
            kinds: obs.kinds.clone(),
            gen: dpg_hat,
            net,
        }
    }

    pub fn residuals(&self) -> Vec<Vec<f64>> {
        self.gen
            .iter()
            .zip(&self.net)
            .map(|(g, n)| g.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// Component of group `g` at step index `i`, zero outside the group.
    pub fn component(&self, g: ChannelGroup, i: usize) -> Vec<f64> {
        self.kinds
            .iter()
            .enumerate()
            .map(|(c, kind)| match (g, kind) {
                (ChannelGroup::Gen, ChannelKind::Generator) => self.gen[i][c],
                (ChannelGroup::GenBus, ChannelKind::Generator) => self.net[i][c],
                (ChannelGroup::Load, ChannelKind::Load) => self.net[i][c],
                _ => 0.0,
            })
            .collect()
    }

    /// Euclidean magnitude of a group's component.
    pub fn magnitude(&self, g: ChannelGroup, i: usize) -> f64 {
        self.component(g, i)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DetectConfig {
    pub lambda: f64,
    pub sigma: Vec<f64>,
    pub h: f64,
    /// Step index of the first residual.
    pub first_step: usize,
    pub dt: f64,
    /// Crossings before this step are ignored.
    pub arm_step: usize,
    pub onset_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub lambda: f64,
    pub h: f64,
    pub dt: f64,
    /// Step index of each entry.
    pub steps: Vec<usize>,
    pub t2: Vec<f64>,
    pub alarm: Option<usize>,
    pub onset_step: Option<usize>,
    pub breakdown: Option<ChannelBreakdown>,
}

impl DetectionRecord {
    /// Seconds from onset to alarm.
    pub fn delay(&self) -> Option<f64> {
        match (self.alarm, self.onset_step) {
            (Some(d), Some(o)) if d >= o => Some((d - o) as f64 * self.dt),
            _ => None,
        }
    }

    pub fn false_alarm(&self) -> bool {
        match (self.alarm, self.onset_step) {
            (Some(d), Some(o)) => d < o,
            (Some(_), None) => true,
            _ => false,
        }
    }

    pub fn missed(&self) -> bool {
        self.onset_step.is_some() && self.delay().is_none()
    }

    /// `k,t,T2,H,alarm,group_gen,group_genbus,group_load` rows and a trailing
    /// `# D=…,delay=…,missed=…` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                "k",
                "t",
                "T2",
                "H",
                "alarm",
                "group_gen",
                "group_genbus",
                "group_load",
            ])?;
            for (i, (&k, &t2)) in self.steps.iter().zip(&self.t2).enumerate() {
                let groups =
                    [ChannelGroup::Gen, ChannelGroup::GenBus, ChannelGroup::Load].map(|g| {
                        self.breakdown
                            .as_ref()
                            .map_or(String::new(), |b| b.magnitude(g, i).to_string())
                    });
                let alarm = u8::from(self.alarm == Some(k));
                w.write_record([
                    k.to_string(),
                    (k as f64 * self.dt).to_string(),
                    t2.to_string(),
                    self.h.to_string(),
                    alarm.to_string(),
                    groups[0].clone(),
                    groups[1].clone(),
                    groups[2].clone(),
                ])?;
            }
            w.flush()?;
        }
        let d = self.alarm.map_or("none".to_string(), |d| d.to_string());
        let delay = self.delay().map_or("none".to_string(), |d| d.to_string());
        writeln!(out, "# D={d},delay={delay},missed={}", self.missed())?;
        Ok(())
    }
}

/// Runs the chart over `residuals` and stops at the first armed crossing;
/// `T²` is still recorded for every step.
pub fn detect(residuals: &[Vec<f64>], cfg: &DetectConfig) -> Result<DetectionRecord> {
    if residuals.is_empty() {
        return Err(Error::Config("empty residual stream".into()));
    }
    let mut state = MewmaState::new(cfg.lambda, cfg.sigma.clone(), cfg.h)?;
    let mut t2 = Vec::with_capacity(residuals.len());
    let mut steps = Vec::with_capacity(residuals.len());
    let mut alarm = None;
    for (i, r) in residuals.iter().enumerate() {
        if r.len() != state.dim() {
            return Err(Error::DimensionMismatch {
                what: "residual channels",
                expected: state.dim(),
                found: r.len(),
            });
        }
        let k = cfg.first_step + i;
        state.update(r);
        let stat = state.t2()?;
        if alarm.is_none() && k >= cfg.arm_step && stat >= cfg.h {
            alarm = Some(k);
        }
        steps.push(k);
        t2.push(stat);
    }
    Ok(DetectionRecord {
        lambda: cfg.lambda,
        h: cfg.h,
        dt: cfg.dt,
        steps,
        t2,
        alarm,
        onset_step: cfg.onset_step,
        breakdown: None,
    })
}

/// [`detect`] on the residuals of `breakdown`, keeping the breakdown.
pub fn detect_with_breakdown(
    breakdown: ChannelBreakdown,
    cfg: &DetectConfig,
) -> Result<DetectionRecord> {
    let mut rec = detect(&breakdown.residuals(), cfg)?;
    rec.breakdown = Some(breakdown);
    Ok(rec)
}

/// Per-channel sample standard deviation over `rows`.
pub fn channel_std(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Config(
            "need at least two samples to estimate a standard deviation".into(),
        ));
    }
    let dim = rows[0].len();
    Ok((0..dim)
        .map(|c| {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        })
        .collect())
}
