//! Batch study: outage sweeps, null runs, per-line and per-λ aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mewma::{calibrate_threshold, Calibration, CalibrationOptions};
use crate::network::{BranchId, NetworkCase};
use crate::pipeline::{monitor_scenario, near_pmu, MonitorConfig};
use crate::pmu::observable_buses;
use crate::rng;
use crate::sim::{DynamicModel, LoadModel, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSelection {
    /// Every branch whose removal keeps the network connected.
    All,
    List(Vec<BranchId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Case file; the bundled 39-bus case when absent.
    pub case: Option<PathBuf>,
    pub lines: LineSelection,
    pub replications: usize,
    /// Outage-free runs used to count false alarms.
    pub null_runs: usize,
    pub duration: f64,
    pub onset: f64,
    pub lambdas: Vec<f64>,
    /// Smoothing value used for the per-line report.
    pub report_lambda: f64,
    /// In-control average run length, samples.
    pub arl0: f64,
    pub seed: u64,
    pub load_model: LoadModel,
    pub substeps: usize,
    pub process_noise: f64,
    pub calibration_streams: usize,
    pub monitor: MonitorConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: None,
            lines: LineSelection::All,
            replications: 50,
            null_runs: 0,
            duration: 10.0,
            onset: 3.0,
            lambdas: vec![0.1, 0.3, 0.5, 0.8],
            report_lambda: 0.5,
            arl0: 1e6,
            seed: 0,
            load_model: LoadModel::ConstantImpedance,
            substeps: 10,
            process_noise: 1e-4,
            calibration_streams: 10_000,
            monitor: MonitorConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The config without its output location, which never affects results.
    pub fn canonical_toml(&self) -> String {
        Self {
            output_dir: None,
            ..self.clone()
        }
        .to_toml()
    }

    /// SHA-256 of the canonical TOML form, hex.
    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical_toml())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.onset < self.duration) {
            return Err(Error::Config(format!(
                "onset {} must precede the end {}",
                self.onset, self.duration
            )));
        }
        if self.lambdas.is_empty()
            || self
                .lambdas
                .iter()
                .any(|l| !(0.0..=1.0).contains(l) || *l == 0.0)
        {
            return Err(Error::Config("smoothing values must lie in (0, 1]".into()));
        }
        if !self.lambdas.contains(&self.report_lambda) {
            return Err(Error::Config(format!(
                "report λ {} is not in the λ list",
                self.report_lambda
            )));
        }
        if self.monitor.particles < 2 {
            return Err(Error::Config("need at least two particles".into()));
        }
        Ok(())
    }

    pub fn load_case(&self) -> Result<NetworkCase> {
        match &self.case {
            Some(p) => NetworkCase::from_path(p),
            None => Ok(NetworkCase::ieee39()),
        }
    }

    /// Scenario settings of one run.
    pub fn scenario(&self, outage: Option<BranchId>, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            duration: self.duration,
            onset: self.onset,
            outage,
            seed,
            substeps: self.substeps,
            process_noise: self.process_noise,
            ..ScenarioConfig::default()
        }
    }

    /// Seed of replication `rep` of `outage`, logged with every run.
    pub fn run_seed(&self, outage: Option<BranchId>, rep: usize) -> u64 {
        rng::derive_seed(
            self.seed,
            &[outage.map_or(0, |l| u64::from(l) + 1), rep as u64],
        )
    }
}

pub fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Detected,
    Missed,
    /// Alarm before the onset; counted as a missed detection.
    FalseAlarm,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Detected => "detected",
            RunStatus::Missed => "missed",
            RunStatus::FalseAlarm => "false-alarm",
            RunStatus::Failed => "failed",
        }
    }
}

/// Outcome of one scenario at one smoothing value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub line: Option<BranchId>,
    pub rep: usize,
    pub seed: u64,
    pub near_pmu: bool,
    pub lambda: f64,
    pub status: RunStatus,
    pub alarm_step: Option<usize>,
    pub delay: Option<f64>,
    pub error: Option<String>,
}

/// Aggregates for one line at one smoothing value.
#[derive(Debug, Clone, PartialEq)]
pub struct LineStats {
    pub line: Option<BranchId>,
    pub lambda: f64,
    pub near_pmu: bool,
    pub replications: usize,
    pub detected: usize,
    /// Includes false alarms.
    pub missed: usize,
    pub false_alarms: usize,
    pub failed: usize,
    pub zero_delay: usize,
    pub mean_delay: Option<f64>,
    pub std_delay: Option<f64>,
}

impl LineStats {
    /// Detected share of the runs that completed.
    pub fn detection_rate(&self) -> f64 {
        let ran = self.replications - self.failed;
        if ran == 0 {
            0.0
        } else {
            self.detected as f64 / ran as f64
        }
    }
}

/// Sweep-wide aggregates for one smoothing value.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStats {
    pub lambda: f64,
    pub h: f64,
    pub runs: usize,
    pub detected: usize,
    pub zero_delay: usize,
    pub mean_delay: Option<f64>,
    pub near: GroupStats,
    pub far: GroupStats,
    pub null_runs: usize,
    pub null_alarms: usize,
}

impl LambdaStats {
    /// Share of completed outage runs that alarmed at the onset sample.
    pub fn zero_delay_share(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.zero_delay as f64 / self.runs as f64
        }
    }
}

/// Lines with at least one PMU endpoint (`near`) against the rest.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupStats {
    pub runs: usize,
    pub detected: usize,
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub calibrations: Vec<Calibration>,
    pub runs: Vec<RunRecord>,
    pub lines: Vec<LineStats>,
    pub lambdas: Vec<LambdaStats>,
    /// Lines excluded before simulation because they island the network.
    pub skipped: Vec<BranchId>,
}

/// Seed of the threshold calibration for smoothing value `lambda`, so that a
/// single scenario replayed on its own sees the study's threshold.
pub fn calibration_seed(seed: u64, lambda: f64) -> u64 {
    rng::derive_seed(seed, &[0xCA1, lambda.to_bits()])
}

/// Threshold for each smoothing value, calibrated once per study.
pub fn calibrate_all(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<Calibration>> {
    let opts = CalibrationOptions {
        streams: cfg.calibration_streams,
        ..CalibrationOptions::default()
    };
    cfg.lambdas
        .iter()
        .map(|&l| calibrate_threshold(l, cfg.arl0, dim, calibration_seed(cfg.seed, l), opts))
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let case = cfg.load_case()?;
    let model = DynamicModel::new(&case, cfg.load_model)?;
    let dim = observable_buses(&case)?.dim();
    let calibrations = calibrate_all(cfg, dim)?;

    let connected = case.non_islanding_branches();
    let (lines, skipped): (Vec<BranchId>, Vec<BranchId>) = match &cfg.lines {
        LineSelection::All => (connected, Vec::new()),
        LineSelection::List(list) => {
            for l in list {
                if case.branch(*l).is_none() {
                    return Err(Error::UnknownBranch(*l));
                }
            }
            list.iter().partition(|l| connected.contains(l))
        }
    };
    let mut jobs: Vec<(Option<BranchId>, usize)> = lines
        .iter()
        .flat_map(|&l| (0..cfg.replications).map(move |r| (Some(l), r)))
        .collect();
    jobs.extend((0..cfg.null_runs).map(|r| (None, r)));

    let runs: Vec<Vec<RunRecord>> = jobs
        .par_iter()
        .map(|&(line, rep)| run_one(cfg, &model, &calibrations, line, rep))
        .collect();
    let runs: Vec<RunRecord> = runs.into_iter().flatten().collect();
    let line_stats = aggregate_lines(&runs);
    let lambda_stats = aggregate_lambdas(&runs, &calibrations);
    let summary = ExperimentSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        dim,
        calibrations,
        runs,
        lines: line_stats,
        lambdas: lambda_stats,
        skipped,
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&summary, cfg, dir)?;
    }
    Ok(summary)
}

fn run_one(
    cfg: &ExperimentConfig,
    model: &DynamicModel,
    cals: &[Calibration],
    line: Option<BranchId>,
    rep: usize,
) -> Vec<RunRecord> {
    let seed = cfg.run_seed(line, rep);
    let near = line.is_some_and(|l| near_pmu(model, l));
    let base = RunRecord {
        line,
        rep,
        seed,
        near_pmu: near,
        lambda: 0.0,
        status: RunStatus::Failed,
        alarm_step: None,
        delay: None,
        error: None,
    };
    let monitored = match monitor_scenario(model, &cfg.scenario(line, seed), &cfg.monitor) {
        Ok(m) => m,
        Err(e) => {
            return cals
                .iter()
                .map(|c| RunRecord {
                    lambda: c.lambda,
                    error: Some(e.to_string()),
                    ..base.clone()
                })
                .collect();
        }
    };
    cals.iter()
        .map(|c| match monitored.detect(c.lambda, c.h, &cfg.monitor) {
            Ok(rec) => {
                let status = if rec.false_alarm() {
                    RunStatus::FalseAlarm
                } else if rec.delay().is_some() {
                    RunStatus::Detected
                } else {
                    RunStatus::Missed
                };
                RunRecord {
                    lambda: c.lambda,
                    status,
                    alarm_step: rec.alarm,
                    delay: rec.delay(),
                    ..base.clone()
                }
            }
            Err(e) => RunRecord {
                lambda: c.lambda,
                error: Some(e.to_string()),
                ..base.clone()
            },
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        Some(0.0)
    };
    (Some(mean), std)
}

/// One [`LineStats`] per (line, λ), outage lines first then null runs.
pub fn aggregate_lines(runs: &[RunRecord]) -> Vec<LineStats> {
    // Null runs (line None) sort after every outage line.
    let mut groups: BTreeMap<(u64, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        let key = r.line.map_or(u64::MAX, u64::from);
        groups.entry((key, r.lambda.to_bits())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let count = |s: RunStatus| rs.iter().filter(|r| r.status == s).count();
            let delays: Vec<f64> = rs.iter().filter_map(|r| r.delay).collect();
            let (mean_delay, std_delay) = mean_std(&delays);
            LineStats {
                line: rs[0].line,
                lambda: rs[0].lambda,
                near_pmu: rs[0].near_pmu,
                replications: rs.len(),
                detected: count(RunStatus::Detected),
                missed: count(RunStatus::Missed) + count(RunStatus::FalseAlarm),
                false_alarms: count(RunStatus::FalseAlarm),
                failed: count(RunStatus::Failed),
                zero_delay: delays.iter().filter(|&&d| d == 0.0).count(),
                mean_delay,
                std_delay,
            }
        })
        .collect()
}

fn group(runs: &[&RunRecord]) -> GroupStats {
    let delays: Vec<f64> = runs.iter().filter_map(|r| r.delay).collect();
    GroupStats {
        runs: runs
            .iter()
            .filter(|r| r.status != RunStatus::Failed)
            .count(),
        detected: delays.len(),
        mean_delay: mean_std(&delays).0,
    }
}

pub fn aggregate_lambdas(runs: &[RunRecord], cals: &[Calibration]) -> Vec<LambdaStats> {
    cals.iter()
        .map(|c| {
            let at: Vec<&RunRecord> = runs.iter().filter(|r| r.lambda == c.lambda).collect();
            let outage: Vec<&RunRecord> = at.iter().copied().filter(|r| r.line.is_some()).collect();
            let null: Vec<&RunRecord> = at
                .iter()
                .copied()
                .filter(|r| r.line.is_none() && r.status != RunStatus::Failed)
                .collect();
            let near: Vec<&RunRecord> = outage.iter().copied().filter(|r| r.near_pmu).collect();
            let far: Vec<&RunRecord> = outage.iter().copied().filter(|r| !r.near_pmu).collect();
            let all = group(&outage);
            LambdaStats {
                lambda: c.lambda,
                h: c.h,
                runs: all.runs,
                detected: all.detected,
                zero_delay: outage.iter().filter(|r| r.delay == Some(0.0)).count(),
                mean_delay: all.mean_delay,
                near: group(&near),
                far: group(&far),
                null_runs: null.len(),
                null_alarms: null.iter().filter(|r| r.alarm_step.is_some()).count(),
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn line_label(l: Option<BranchId>) -> String {
    l.map_or("none".to_string(), |l| l.to_string())
}

pub fn write_runs_csv<W: Write>(runs: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "line",
        "rep",
        "seed",
        "near_pmu",
        "lambda",
        "status",
        "alarm_step",
        "delay",
        "error",
    ])?;
    for r in runs {
        w.write_record([
            line_label(r.line),
            r.rep.to_string(),
            r.seed.to_string(),
            r.near_pmu.to_string(),
            r.lambda.to_string(),
            r.status.as_str().to_string(),
            r.alarm_step.map_or(String::new(), |k| k.to_string()),
            opt(r.delay),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(lines: &[LineStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "line",
        "lambda",
        "near_pmu",
        "replications",
        "detected",
        "missed",
        "false_alarms",
        "failed",
        "detection_rate",
        "zero_delay",
        "mean_delay",
        "std_delay",
    ])?;
    for s in lines {
        w.write_record([
            line_label(s.line),
            s.lambda.to_string(),
            s.near_pmu.to_string(),
            s.replications.to_string(),
            s.detected.to_string(),
            s.missed.to_string(),
            s.false_alarms.to_string(),
            s.failed.to_string(),
            s.detection_rate().to_string(),
            s.zero_delay.to_string(),
            opt(s.mean_delay),
            opt(s.std_delay),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_delay(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.3} ({s:.3})"),
        _ => "-".to_string(),
    }
}

pub fn summary_text(summary: &ExperimentSummary, cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", summary.seed);
    let _ = writeln!(s, "config hash {}", summary.config_hash);
    let _ = writeln!(s, "observable channels {}", summary.dim);
    for c in &summary.calibrations {
        let ci =
            c.ci.map_or(String::new(), |(a, b)| format!(" 95% CI [{a:.0}, {b:.0}]"));
        let _ = writeln!(
            s,
            "lambda {} H {:.4} ARL0 {:.0}{} via {:?}",
            c.lambda, c.h, c.arl, ci, c.method
        );
    }
    if !summary.skipped.is_empty() {
        let _ = writeln!(s, "skipped (islanding): {:?}", summary.skipped);
    }
    let _ = writeln!(
        s,
        "\nper line at lambda {}: mean delay s (std) over detected runs",
        cfg.report_lambda
    );
    let _ = writeln!(
        s,
        "{:>5} {:>5} {:>9} {:>7} {:>6} {:>6} {:>6} {:>16}",
        "line", "pmu", "detected", "missed", "false", "failed", "rate", "delay"
    );
    for l in summary
        .lines
        .iter()
        .filter(|l| l.lambda == cfg.report_lambda)
    {
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>9} {:>7} {:>6} {:>6} {:>6.2} {:>16}",
            line_label(l.line),
            if l.near_pmu { "near" } else { "far" },
            l.detected,
            l.missed,
            l.false_alarms,
            l.failed,
            l.detection_rate(),
            fmt_delay(l.mean_delay, l.std_delay)
        );
    }
    let _ = writeln!(s, "\nby lambda");
    let _ = writeln!(
        s,
        "{:>6} {:>9} {:>10} {:>10} {:>11} {:>11} {:>11}",
        "lambda", "rate", "zero-delay", "mean delay", "near rate", "far rate", "null alarms"
    );
    for l in &summary.lambdas {
        let rate = |g: &GroupStats| {
            if g.runs == 0 {
                0.0
            } else {
                g.detected as f64 / g.runs as f64
            }
        };
        let _ = writeln!(
            s,
            "{:>6} {:>9.3} {:>10.3} {:>10} {:>11.3} {:>11.3} {:>7}/{:<3}",
            l.lambda,
            if l.runs == 0 {
                0.0
            } else {
                l.detected as f64 / l.runs as f64
            },
            l.zero_delay_share(),
            l.mean_delay.map_or("-".to_string(), |d| format!("{d:.3}")),
            rate(&l.near),
            rate(&l.far),
            l.null_alarms,
            l.null_runs
        );
    }
    s
}

pub fn write_outputs(
    summary: &ExperimentSummary,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_runs_csv(&summary.runs, fs::File::create(dir.join("runs.csv"))?)?;
    write_summary_csv(&summary.lines, fs::File::create(dir.join("summary.csv"))?)?;
    fs::write(dir.join("summary.txt"), summary_text(summary, cfg))?;
    fs::write(dir.join("config.toml"), cfg.canonical_toml())?;
    Ok(())
}
