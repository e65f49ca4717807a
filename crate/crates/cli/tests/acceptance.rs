//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line and
//! then asserts it. Tolerances are fixed here.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use linewatch_core::experiment::{run_experiment, ExperimentConfig, ExperimentSummary, RunStatus};
use linewatch_core::mewma::{
    calibrate_threshold, empirical_arl, CalibrationMethod, CalibrationOptions,
};
use linewatch_core::network::{build_admittance, net_active_power, solve_power_flow, BusKind};
use linewatch_core::pf::linear::{KalmanFilter, LinearSwing};
use linewatch_core::pf::{self, MachinePrior, ParticleSet};
use linewatch_core::pmu::observable_buses;
use linewatch_core::sim::{
    solve_network_algebraic, AlgebraicOptions, DynamicModel, ScenarioConfig,
};
use linewatch_core::{rng, BranchId, GeneratorState, LoadModel, NetworkCase};
use num_complex::Complex64;
use rand::Rng;

/// Writes past the test harness's output capture so every line reaches the log.
macro_rules! show {
    ($($arg:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout().lock(), $($arg)*).unwrap();
    }};
}

fn report(n: u32, pass: bool, detail: &str) {
    show!(
        "criterion {n}: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

// Linear-Gaussian single machine shared by criteria 1 and 2.
const TOY_DT: f64 = 1.0 / 30.0;
const TOY_NOISE: f64 = 0.1;
const TOY_STEPS: usize = 100;

fn toy() -> (LinearSwing, MachinePrior) {
    let sys = LinearSwing::from_machine(50.0, 100.0, 2.0, 60.0, TOY_DT, 1e-4, TOY_NOISE);
    (
        sys,
        MachinePrior {
            delta: 0.0,
            omega: 1.0,
            delta_std: 0.005,
            omega_std: 1e-4,
        },
    )
}

/// Largest standardized deviation of the particle posterior mean from the
/// Kalman mean over the run, and the RMS deviation in posterior stds.
fn toy_run(n: usize, path_seed: u64, filter_seed: u64) -> (f64, f64) {
    let (sys, prior) = toy();
    let (_, ys) = sys.sample_path(
        GeneratorState::new(0.0, 1.0),
        TOY_STEPS + 1,
        &mut rng::stream(path_seed, &[7]),
    );
    let mut kf = KalmanFilter::new(
        &sys,
        prior.delta,
        prior.omega,
        prior.delta_std,
        prior.omega_std,
    );
    let mut ps: ParticleSet = pf::initialize(&[prior], n, filter_seed).unwrap();
    let (mut worst, mut sq) = (0.0f64, 0.0);
    for &y in &ys {
        let m = kf.step(y);
        let (next, info) = pf::filter_step(&ps, &sys, &[y], &[TOY_NOISE], filter_seed).unwrap();
        ps = next;
        let root_n = (n as f64).sqrt();
        let dd = (info.mean[0].delta - m.delta).abs() / (m.delta_std / root_n);
        let dw = (info.mean[0].omega - m.omega).abs() / (m.omega_std / root_n);
        worst = worst.max(dd).max(dw);
        sq += ((info.mean[0].delta - m.delta) / m.delta_std).powi(2);
    }
    (worst, (sq / ys.len() as f64).sqrt())
}

#[test]
fn criterion_1_kalman_oracle() {
    let start = Instant::now();
    let (worst, _) = toy_run(10_000, 2024, 2024);
    let elapsed = start.elapsed();
    let pass = worst < 3.0 && elapsed < Duration::from_secs(30);
    report(1, pass, &format!("max |PF - KF| = {worst:.3} posterior std/sqrt(n) over {TOY_STEPS} steps (bound 3), n = 1e4, {elapsed:.1?}"));
}

#[test]
fn criterion_2_monte_carlo_rate() {
    let sizes = [100usize, 1_000, 10_000];
    let reps = 12u64;
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            (0..reps)
                .map(|r| toy_run(n, 500 + r, rng::derive_seed(r, &[n as u64])).1)
                .sum::<f64>()
                / reps as f64
        })
        .collect();
    let sizes_f: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let slope = log_slope(&sizes_f, &errors);
    report(
        2,
        (slope + 0.5).abs() <= 0.15,
        &format!("log-log slope {slope:.3} (target -0.5 ± 0.15), errors {errors:.4?}"),
    );
}

#[test]
fn criterion_3_resampling() {
    let mut weights = vec![0.0; 10];
    weights[..3].copy_from_slice(&[0.5, 0.3, 0.2]);
    let mut r = rng::stream(3, &[]);
    let mut grid_ok = true;
    for _ in 0..100 {
        let u1: f64 = r.random_range(f64::EPSILON..0.1);
        grid_ok &= pf::systematic_offspring(&weights, 10, u1)[..3] == [5, 3, 2];
    }

    let w = [0.31, 0.02, 0.17, 0.005, 0.235, 0.09, 0.13, 0.04];
    let n = w.len();
    let states: Vec<GeneratorState> = (0..n).map(|i| GeneratorState::new(i as f64, 1.0)).collect();
    let ps = ParticleSet {
        k: 0,
        dim: 1,
        prev: states.clone(),
        states,
        weights: w.to_vec(),
    };
    let seeds = 10_000;
    let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
    for seed in 0..seeds {
        let out = pf::systematic_resample(&ps, &mut rng::stream(seed, &[0x5E5]));
        let mut c = vec![0.0; n];
        out.states.iter().for_each(|s| c[s.delta as usize] += 1.0);
        for i in 0..n {
            sum[i] += c[i];
            sum_sq[i] += c[i] * c[i];
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        let mean = sum[i] / seeds as f64;
        let se = ((sum_sq[i] / seeds as f64 - mean * mean) / seeds as f64).sqrt();
        let dev = (mean - n as f64 * w[i]).abs();
        worst = worst.max(if se > 0.0 {
            dev / se
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    report(3, grid_ok && worst <= 3.0, &format!("(5,3,2) on 100 random U1: {grid_ok}; worst offspring bias {worst:.2} SE over 1e4 seeds"));
}

#[test]
fn criterion_4_arl_calibration() {
    let start = Instant::now();
    let dim = observable_buses(&NetworkCase::ieee39()).unwrap().dim();
    let target = 1e4;
    let cal = calibrate_threshold(0.5, target, dim, 41, CalibrationOptions::default()).unwrap();
    let (arl, se, censored) = empirical_arl(0.5, cal.h, dim, 20_000, 4242, 10_000_000);
    let within = (arl / target - 1.0).abs() <= 0.1 && censored == 0;

    let chi = calibrate_threshold(1.0, target, dim, 0, CalibrationOptions::default()).unwrap();
    let (arl1, se1, _) = empirical_arl(1.0, chi.h, dim, 20_000, 4343, 10_000_000);
    let closed = chi.method == CalibrationMethod::ChiSquare && (arl1 - target).abs() <= 3.0 * se1;
    let elapsed = start.elapsed();
    let pass = within && closed && elapsed < Duration::from_secs(300);
    report(
        4,
        pass,
        &format!(
            "dim {dim}: H {:.3} gives ARL {arl:.0} ± {se:.0} over 2e4 streams (target 1e4 ± 10%); lambda 1 H {:.3} gives {arl1:.0} ± {se1:.0}; {elapsed:.1?}",
            cal.h, chi.h
        ),
    );
}

fn complex_injection(
    v: &[f64],
    theta: &[f64],
    y: &linewatch_core::AdmittanceMatrix,
    i: usize,
) -> Complex64 {
    let vi = Complex64::from_polar(v[i], theta[i]);
    let current: Complex64 = (0..v.len())
        .map(|j| y.get(i, j) * Complex64::from_polar(v[j], theta[j]))
        .sum();
    vi * current.conj()
}

#[test]
fn criterion_5_power_flow() {
    let case = NetworkCase::ieee39();
    let y = build_admittance(&case, &Default::default()).unwrap();
    let ss = solve_power_flow(&case, &y).unwrap();
    let mut sched_p: Vec<f64> = case.buses.iter().map(|b| -b.load_p).collect();
    for g in &case.generators {
        sched_p[case.bus_index(g.bus).unwrap()] += g.mech_power;
    }
    let mut mismatch = 0.0f64;
    for (i, bus) in case.buses.iter().enumerate() {
        let s = complex_injection(&ss.v, &ss.theta, &y, i);
        if bus.kind != BusKind::Slack {
            mismatch = mismatch.max((s.re - sched_p[i]).abs());
        }
        if bus.kind == BusKind::Pq {
            mismatch = mismatch.max((s.im + bus.load_q).abs());
        }
    }

    let mut r = rng::stream(5, &[]);
    let n = case.bus_count();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0.85..1.15)).collect();
        let theta: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let i = r.random_range(0..n);
        let oracle = complex_injection(&v, &theta, &y, i).re;
        let scale = oracle.abs().max(1.0);
        worst = worst.max((net_active_power(&v, &theta, &y, i) - oracle).abs() / scale);
    }
    let pass = mismatch < 1e-8 && worst <= 1e-12;
    report(5, pass, &format!("39-bus mismatch {mismatch:.2e} (bound 1e-8); net power vs complex oracle worst relative {worst:.2e} over 1000 draws"));
}

const TWO_MACHINE: &str = "
[base]
mva = 100
f0 = 60
[bus]
1 slack 0.0 0.0 1.02
2 PV    0.0 0.0 1.01
3 PQ    1.6 0.4
[branch]
1 1 3 0.002 0.05 0.02
2 2 3 0.002 0.08 0.02
3 1 2 0.004 0.20 0.04
[gen]
1 200.0 40.0 0.9 0.25
2 160.0 30.0 0.7 0.30
";

fn rk4_reference(
    model: &DynamicModel,
    x0: &[GeneratorState],
    h: f64,
    steps: usize,
) -> Vec<GeneratorState> {
    let mut guess = (model.v0.clone(), model.theta0.clone());
    let mut f = |x: &[GeneratorState]| -> Vec<(f64, f64)> {
        let delta: Vec<f64> = x.iter().map(|s| s.delta).collect();
        let sol = solve_network_algebraic(
            &delta,
            &model.machines,
            &model.y_base,
            &model.loads,
            &guess.0,
            &guess.1,
            AlgebraicOptions::default(),
            0,
        )
        .unwrap();
        let pg = model.electrical_power(x, &sol.v, &sol.theta);
        guess = (sol.v, sol.theta);
        x.iter()
            .zip(&model.params)
            .zip(&pg)
            .map(|((s, p), &pg)| {
                (
                    p.omega_s * (s.omega - 1.0),
                    (p.mech_power - pg - p.damping * (s.omega - 1.0)) / p.inertia,
                )
            })
            .collect()
    };
    let shift = |x: &[GeneratorState], k: &[(f64, f64)], a: f64| -> Vec<GeneratorState> {
        x.iter()
            .zip(k)
            .map(|(s, d)| GeneratorState::new(s.delta + a * d.0, s.omega + a * d.1))
            .collect()
    };
    let mut x = x0.to_vec();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&shift(&x, &k1, h / 2.0));
        let k3 = f(&shift(&x, &k2, h / 2.0));
        let k4 = f(&shift(&x, &k3, h));
        for (i, s) in x.iter_mut().enumerate() {
            s.delta += h / 6.0 * (k1[i].0 + 2.0 * k2[i].0 + 2.0 * k3[i].0 + k4[i].0);
            s.omega += h / 6.0 * (k1[i].1 + 2.0 * k2[i].1 + 2.0 * k3[i].1 + k4[i].1);
        }
    }
    x
}

#[test]
fn criterion_6_simulator() {
    let model = DynamicModel::new(&NetworkCase::ieee39(), LoadModel::ConstantImpedance).unwrap();
    let traj = model
        .simulate(&ScenarioConfig {
            process_noise: 0.0,
            ..ScenarioConfig::default()
        })
        .unwrap();
    let x0 = &traj.states[0];
    let drift = traj
        .states
        .iter()
        .flat_map(|s| s.iter().zip(x0))
        .map(|(a, b)| (a.delta - b.delta).abs().max((a.omega - b.omega).abs()))
        .fold(0.0, f64::max);

    let toy = DynamicModel::new(
        &NetworkCase::parse(TWO_MACHINE).unwrap(),
        LoadModel::ConstantPower,
    )
    .unwrap();
    let mut start = toy.equilibrium();
    start[0].delta += 0.15;
    start[1].omega += 2e-3;
    let reference = rk4_reference(&toy, &start, 1.0 / 7680.0, 7680);
    let rates = [30.0, 60.0, 120.0, 240.0];
    let errors: Vec<f64> = rates
        .iter()
        .map(|&rate| {
            let cfg = ScenarioConfig {
                rate,
                substeps: 1,
                duration: 1.0 + 1.0 / rate,
                process_noise: 0.0,
                initial_states: Some(start.clone()),
                ..ScenarioConfig::default()
            };
            let t = toy.simulate(&cfg).unwrap();
            t.states[rate as usize]
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a.delta - b.delta).abs().max((a.omega - b.omega).abs()))
                .fold(0.0, f64::max)
        })
        .collect();
    let dts: Vec<f64> = rates.iter().map(|r| 1.0 / r).collect();
    let slope = log_slope(&dts, &errors);
    let pass = traj.len() == 300 && drift < 1e-9 && (slope - 1.0).abs() <= 0.1;
    report(6, pass, &format!("equilibrium drift {drift:.1e} over {} steps (bound 1e-9); Euler slope {slope:.3} (1 ± 0.1)", traj.len()));
}

struct Sweep {
    summary: ExperimentSummary,
    elapsed: Duration,
    flows: Vec<(BranchId, f64)>,
}

/// Full 35-line × 50-replication sweep with 100 null runs, shared by
/// criteria 7 and 8.
fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = ExperimentConfig {
            replications: 50,
            null_runs: 100,
            lambdas: vec![0.1, 0.3, 0.5, 0.8],
            arl0: 1e6,
            ..ExperimentConfig::default()
        };
        let start = Instant::now();
        let summary = run_experiment(&cfg).unwrap();
        let elapsed = start.elapsed();
        let case = NetworkCase::ieee39();
        let model = DynamicModel::new(&case, cfg.load_model).unwrap();
        let flows = case
            .non_islanding_branches()
            .into_iter()
            .map(|id| {
                let b = case.branch(id).unwrap();
                let (i, j) = (
                    case.bus_index(b.from).unwrap(),
                    case.bus_index(b.to).unwrap(),
                );
                let vi = Complex64::from_polar(model.steady.v[i], model.steady.theta[i]);
                let vj = Complex64::from_polar(model.steady.v[j], model.steady.theta[j]);
                let series = Complex64::new(1.0, 0.0) / Complex64::new(b.r, b.x);
                let current = (vi - vj) * series + vi * Complex64::new(0.0, b.b / 2.0);
                (id, (vi * current.conj()).re)
            })
            .collect();
        Sweep {
            summary,
            elapsed,
            flows,
        }
    })
}

fn binomial_upper_tail(n: usize, p: f64, x: usize) -> f64 {
    let mut log_c = 0.0;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= x {
            total += (log_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
        }
    }
    total.min(1.0)
}

#[test]
fn criterion_7_outage_sweep() {
    let s = sweep();
    let lambda = 0.5;
    let at = |line: BranchId| {
        s.summary
            .lines
            .iter()
            .find(|l| l.line == Some(line) && l.lambda == lambda)
            .unwrap()
    };

    let strong: Vec<BranchId> = vec![11, 15];
    let strong_delays: Vec<String> = strong
        .iter()
        .map(|&l| {
            format!(
                "line {l}: {:?} s, rate {:.2}",
                at(l).mean_delay,
                at(l).detection_rate()
            )
        })
        .collect();
    let strong_ok = strong
        .iter()
        .all(|&l| at(l).mean_delay.is_some_and(|d| d <= 0.2));

    let light: Vec<(BranchId, f64)> = s
        .flows
        .iter()
        .copied()
        .filter(|(_, f)| f.abs() < 0.5)
        .collect();
    let light_rates: Vec<String> = light
        .iter()
        .map(|&(l, f)| format!("{l} ({f:.2} pu): {:.2}", at(l).detection_rate()))
        .collect();
    let light_ok = light.iter().any(|&(l, _)| at(l).detection_rate() < 0.5);

    let cal = s
        .summary
        .calibrations
        .iter()
        .find(|c| c.lambda == lambda)
        .unwrap();
    let cfg = ExperimentConfig::default();
    let dt = 1.0 / 30.0;
    let armed =
        (cfg.duration / dt).round() as usize - (cfg.monitor.arm_after / dt - 1e-9).ceil() as usize;
    let p_run = 1.0 - (1.0 - 1.0 / cfg.arl0).powi(armed as i32);
    let null: Vec<_> = s
        .summary
        .runs
        .iter()
        .filter(|r| r.line.is_none() && r.lambda == lambda)
        .collect();
    let alarms = null
        .iter()
        .filter(|r| r.status == RunStatus::FalseAlarm)
        .count();
    let p_value = binomial_upper_tail(null.len(), p_run, alarms);
    let null_ok = null.len() == 100 && p_value > 0.01;

    let within: usize = s
        .summary
        .runs
        .iter()
        .filter(|r| r.lambda == lambda && r.delay.is_some_and(|d| d <= 0.2))
        .count();
    let outage_runs = s
        .summary
        .runs
        .iter()
        .filter(|r| r.lambda == lambda && r.line.is_some())
        .count();
    let time_ok = s.elapsed < Duration::from_secs(3600);

    let mut heavy = s.flows.clone();
    heavy.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    let heavy: Vec<String> = heavy
        .iter()
        .take(6)
        .map(|&(l, f)| {
            format!(
                "{l} ({f:.2} pu): {:?} s, rate {:.2}",
                at(l).mean_delay,
                at(l).detection_rate()
            )
        })
        .collect();
    show!("  strong lines at lambda 0.5: {}", strong_delays.join("; "));
    show!("  most loaded lines: {}", heavy.join("; "));
    show!(
        "  near-zero-load lines (|flow| < 0.5 pu) detection rate: {}",
        light_rates.join("; ")
    );
    show!("  null runs: {alarms}/{} alarms at H {:.3}, expected per run {p_run:.2e}, upper-tail p {p_value:.3}", null.len(), cal.h);
    show!(
        "  all outage runs detected within 0.2 s: {within}/{outage_runs}; sweep time {:.1?}",
        s.elapsed
    );
    report(
        7,
        strong_ok && light_ok && null_ok && time_ok,
        &format!("strong lines <= 0.2 s: {strong_ok}; a near-zero-load line below 50%: {light_ok}; null binomial p > 0.01: {null_ok}; under 1 h: {time_ok}"),
    );
}

#[test]
fn criterion_8_lambda_direction() {
    let s = sweep();
    let shares: Vec<(f64, f64, f64)> = [0.1, 0.5, 0.8]
        .iter()
        .map(|&lambda| {
            let st = s
                .summary
                .lambdas
                .iter()
                .find(|l| l.lambda == lambda)
                .unwrap();
            let runs: Vec<_> = s
                .summary
                .runs
                .iter()
                .filter(|r| r.lambda == lambda && r.line.is_some() && r.status != RunStatus::Failed)
                .collect();
            let one = runs
                .iter()
                .filter(|r| r.delay.is_some_and(|d| d <= 1.5 / 30.0))
                .count() as f64
                / runs.len() as f64;
            (lambda, st.zero_delay_share(), one)
        })
        .collect();
    let ordered = shares.windows(2).all(|w| w[1].1 >= w[0].1);
    let vacuous = shares.iter().all(|s| s.1 == 0.0);
    for (l, z, o) in &shares {
        show!("  lambda {l}: zero-delay share {z:.3}, within one sample {o:.3}");
    }
    let note = if vacuous {
        " (holds only vacuously: no run alarms at the onset sample)"
    } else {
        ""
    };
    report(
        8,
        ordered,
        &format!("zero-delay share nondecreasing over lambda 0.1, 0.5, 0.8: {ordered}{note}"),
    );
}

fn case_arg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/case39")
}

fn run_twice(args: &[&str], files: &[&Path]) -> bool {
    let once = || {
        let out = Command::new(env!("CARGO_BIN_EXE_linewatch"))
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let contents: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        (out.stdout, out.stderr, contents)
    };
    once() == once()
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_arg();
    let case = case.to_str().unwrap();
    let path = |n: &str| dir.path().join(n);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (traj, meas, rec, filt, exp) = (
        path("traj.csv"),
        path("meas.csv"),
        path("rec.csv"),
        path("filt.csv"),
        path("exp"),
    );
    let exp_files: Vec<PathBuf> = ["runs.csv", "summary.csv", "summary.txt", "config.toml"]
        .iter()
        .map(|f| exp.join(f))
        .collect();
    let checks = [
        (
            "simulate",
            run_twice(
                &[
                    "simulate",
                    "--case",
                    case,
                    "--line",
                    "10",
                    "--seed",
                    "7",
                    "--out",
                    &s(&traj),
                    "--measurements",
                    &s(&meas),
                ],
                &[&traj, &meas],
            ),
        ),
        (
            "simulate to stdout",
            run_twice(
                &["simulate", "--case", case, "--seed", "7", "--duration", "3"],
                &[],
            ),
        ),
        (
            "detect",
            run_twice(
                &[
                    "detect",
                    "--case",
                    case,
                    "--line",
                    "35",
                    "--seed",
                    "7",
                    "--out",
                    &s(&rec),
                    "--dump-filter",
                    &s(&filt),
                ],
                &[&rec, &filt],
            ),
        ),
        (
            "calibrate",
            run_twice(
                &[
                    "calibrate",
                    "--lambda",
                    "0.5",
                    "--arl0",
                    "10000",
                    "--seed",
                    "7",
                ],
                &[],
            ),
        ),
        (
            "experiment",
            run_twice(
                &[
                    "experiment",
                    "--case",
                    case,
                    "--lines",
                    "11",
                    "--reps",
                    "5",
                    "--seed",
                    "7",
                    "--out",
                    &s(&exp),
                ],
                &exp_files.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
            ),
        ),
        ("case-info", run_twice(&["case-info", case], &[])),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        9,
        failed.is_empty(),
        &format!(
            "byte-identical reruns for {} entry points; differing: {failed:?}",
            checks.len()
        ),
    );
}
