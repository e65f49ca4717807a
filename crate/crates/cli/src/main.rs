use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use linewatch_core::experiment::{
    calibration_seed, run_experiment, sha256_hex, summary_text, ExperimentConfig, LineSelection,
};
use linewatch_core::mewma::{calibrate_threshold, CalibrationOptions};
use linewatch_core::pipeline::{monitor_scenario, near_pmu, stage_seed, PhasorNoiseLevel};
use linewatch_core::pmu::{
    observable_buses, synthesize_measurements, write_measurements, OutputNoise,
};
use linewatch_core::sim::DynamicModel;
use linewatch_core::{BranchId, LoadModel, NetworkCase};

#[derive(Parser)]
#[command(
    name = "linewatch",
    version,
    about = "Line-outage detection from partial PMU data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trajectory.
    Simulate(SimulateArgs),
    /// Run the filter and chart on one scenario.
    Detect(DetectArgs),
    /// Calibrate the chart threshold for a target in-control run length.
    Calibrate(CalibrateArgs),
    /// Sweep outages and replications and write aggregate tables.
    Experiment(ExperimentArgs),
    /// Print the size of a case and its PMU coverage.
    CaseInfo(CaseInfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadArg {
    ConstantPower,
    ConstantImpedance,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    /// 1% demand-scale noise on the power signal only.
    Output,
    /// Phasor noise matched to 1% of load-channel demand.
    Phasor,
    /// No measurement noise beyond the output floor.
    Floor,
}

/// Settings shared by every study command; flags override the config file.
#[derive(Args)]
struct StudyArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case file (defaults to the bundled 39-bus case).
    #[arg(long)]
    case: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    particles: Option<usize>,
    /// In-control average run length, samples.
    #[arg(long)]
    arl0: Option<f64>,
    #[arg(long, value_enum)]
    load_model: Option<LoadArg>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Outage time, seconds.
    #[arg(long)]
    onset: Option<f64>,
}

impl StudyArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(c) = &self.case {
            cfg.case = Some(c.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.particles {
            cfg.monitor.particles = n;
        }
        if let Some(a) = self.arl0 {
            cfg.arl0 = a;
        }
        if let Some(l) = self.load_model {
            cfg.load_model = match l {
                LoadArg::ConstantPower => LoadModel::ConstantPower,
                LoadArg::ConstantImpedance => LoadModel::ConstantImpedance,
            };
        }
        if let Some(n) = self.noise {
            match n {
                NoiseArg::Output => {
                    cfg.monitor.phasor_noise = PhasorNoiseLevel::Off;
                    cfg.monitor.output_noise = Some(OutputNoise::default());
                }
                NoiseArg::Phasor => {
                    cfg.monitor.phasor_noise = PhasorNoiseLevel::Matched {
                        demand_fraction: 0.01,
                    };
                    cfg.monitor.output_noise = None;
                }
                NoiseArg::Floor => {
                    cfg.monitor.phasor_noise = PhasorNoiseLevel::Off;
                    cfg.monitor.output_noise = Some(OutputNoise {
                        relative: 0.0,
                        ..OutputNoise::default()
                    });
                }
            }
        }
        if let Some(d) = self.duration {
            cfg.duration = d;
        }
        if let Some(o) = self.onset {
            cfg.onset = o;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Branch to trip; none simulates an outage-free run.
    #[arg(long)]
    line: Option<BranchId>,
    /// Scenario seed as logged in runs.csv (defaults to replication 0).
    #[arg(long)]
    run_seed: Option<u64>,
    /// Trajectory CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the synthesized PMU samples here.
    #[arg(long)]
    measurements: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    line: Option<BranchId>,
    #[arg(long)]
    run_seed: Option<u64>,
    /// Smoothing value (defaults to the config's report value).
    #[arg(long)]
    lambda: Option<f64>,
    /// Detection record CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the ground-truth trajectory here.
    #[arg(long)]
    dump_trajectory: Option<PathBuf>,
    /// Write filter diagnostics here.
    #[arg(long)]
    dump_filter: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1e4)]
    arl0: f64,
    /// Chart dimension (defaults to the observable channels of the case).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated in-control streams.
    #[arg(long, default_value_t = 10_000)]
    streams: usize,
    /// Use Monte Carlo up to this target and the Markov chain above it.
    #[arg(long, default_value_t = 1e5)]
    monte_carlo_limit: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Comma-separated branch ids or `all`.
    #[arg(long)]
    lines: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    null_runs: Option<usize>,
    /// Comma-separated smoothing values.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaseInfoArgs {
    /// Case file (defaults to the bundled 39-bus case).
    path: Option<PathBuf>,
}

fn load_case(path: Option<&PathBuf>) -> Result<NetworkCase> {
    Ok(match path {
        Some(p) => NetworkCase::from_path(p)?,
        None => NetworkCase::ieee39(),
    })
}

fn header(out: &mut impl Write, seed: u64, description: &str) -> Result<()> {
    writeln!(out, "seed {seed}")?;
    writeln!(out, "config hash {}", sha256_hex(description))?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.study.resolve()?;
    let run_seed = args.run_seed.unwrap_or_else(|| cfg.run_seed(args.line, 0));
    let description = format!(
        "{}\n[simulate]\nline = {:?}\nrun_seed = {run_seed}\n",
        cfg.canonical_toml(),
        args.line
    );
    let mut stdout = io::stdout().lock();
    let case = cfg.load_case()?;
    let model = DynamicModel::new(&case, cfg.load_model)?;
    let mut scenario = cfg.scenario(args.line, run_seed);
    scenario.seed = stage_seed(run_seed, 0);
    let traj = model.simulate(&scenario)?;
    match &args.out {
        Some(p) => {
            header(&mut stdout, cfg.seed, &description)?;
            writeln!(stdout, "run seed {run_seed}")?;
            traj.write_csv(BufWriter::new(File::create(p)?))?;
            writeln!(stdout, "wrote {} samples to {}", traj.len(), p.display())?;
        }
        None => {
            // keep stdout a clean CSV; the header goes to stderr
            let mut err = io::stderr().lock();
            header(&mut err, cfg.seed, &description)?;
            writeln!(err, "run seed {run_seed}")?;
            traj.write_csv(&mut stdout)?;
        }
    }
    if let Some(p) = &args.measurements {
        let obs = observable_buses(&case)?;
        let noise = cfg.monitor.resolved_phasor_noise(&model, &obs)?;
        let snaps = synthesize_measurements(&traj, &case, noise, stage_seed(run_seed, 1));
        write_measurements(&snaps, BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let cfg = args.study.resolve()?;
    cfg.validate()?;
    let lambda = args.lambda.unwrap_or(cfg.report_lambda);
    let run_seed = args.run_seed.unwrap_or_else(|| cfg.run_seed(args.line, 0));
    let description = format!(
        "{}\n[detect]\nline = {:?}\nrun_seed = {run_seed}\nlambda = {lambda}\n",
        cfg.canonical_toml(),
        args.line
    );
    let mut out = io::stdout().lock();
    header(&mut out, cfg.seed, &description)?;
    writeln!(out, "run seed {run_seed}")?;

    let case = cfg.load_case()?;
    let model = DynamicModel::new(&case, cfg.load_model)?;
    let dim = observable_buses(&case)?.dim();
    let opts = CalibrationOptions {
        streams: cfg.calibration_streams,
        ..CalibrationOptions::default()
    };
    let cal = calibrate_threshold(
        lambda,
        cfg.arl0,
        dim,
        calibration_seed(cfg.seed, lambda),
        opts,
    )?;
    let monitored = monitor_scenario(&model, &cfg.scenario(args.line, run_seed), &cfg.monitor)?;
    let rec = monitored.detect(lambda, cal.h, &cfg.monitor)?;

    if let Some(p) = &args.dump_trajectory {
        monitored
            .trajectory
            .write_csv(BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &args.dump_filter {
        monitored
            .filter
            .write_csv(BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &args.out {
        rec.write_csv(BufWriter::new(File::create(p)?))?;
    }
    writeln!(
        out,
        "line {}",
        args.line.map_or("none".to_string(), |l| l.to_string())
    )?;
    if let Some(l) = args.line {
        writeln!(out, "near pmu {}", near_pmu(&model, l))?;
    }
    writeln!(out, "channels {dim}")?;
    writeln!(out, "lambda {lambda} H {:.6}", cal.h)?;
    writeln!(
        out,
        "alarm step {}",
        rec.alarm.map_or("none".to_string(), |k| k.to_string())
    )?;
    writeln!(
        out,
        "delay {}",
        rec.delay().map_or("none".to_string(), |d| format!("{d}"))
    )?;
    writeln!(out, "missed {}", rec.missed())?;
    writeln!(out, "false alarm {}", rec.false_alarm())?;
    writeln!(
        out,
        "degenerate filter steps {}",
        monitored.filter.degenerate_steps()
    )?;
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let dim = match args.dim {
        Some(d) => d,
        None => observable_buses(&load_case(args.case.as_ref())?)?.dim(),
    };
    let description = format!(
        "[calibrate]\nlambda = {}\narl0 = {}\ndim = {dim}\nseed = {}\nstreams = {}\nmonte_carlo_limit = {}\n",
        args.lambda, args.arl0, args.seed, args.streams, args.monte_carlo_limit
    );
    let mut out = io::stdout().lock();
    header(&mut out, args.seed, &description)?;
    let opts = CalibrationOptions {
        streams: args.streams,
        monte_carlo_limit: args.monte_carlo_limit,
        ..CalibrationOptions::default()
    };
    let cal = calibrate_threshold(args.lambda, args.arl0, dim, args.seed, opts)?;
    writeln!(out, "lambda {} dim {dim} target {}", cal.lambda, cal.target)?;
    writeln!(out, "method {:?}", cal.method)?;
    writeln!(out, "H {:.6}", cal.h)?;
    match cal.ci {
        Some((lo, hi)) => writeln!(
            out,
            "estimated ARL0 {:.1} 95% CI [{lo:.1}, {hi:.1}]",
            cal.arl
        )?,
        None => writeln!(out, "estimated ARL0 {:.1}", cal.arl)?,
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = args.study.resolve()?;
    if let Some(l) = &args.lines {
        cfg.lines = if l == "all" {
            LineSelection::All
        } else {
            let ids = l
                .split(',')
                .map(|s| s.trim().parse::<BranchId>())
                .collect::<Result<Vec<_>, _>>();
            LineSelection::List(ids.with_context(|| format!("invalid line list {l:?}"))?)
        };
    }
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    if let Some(n) = args.null_runs {
        cfg.null_runs = n;
    }
    if let Some(ls) = &args.lambdas {
        cfg.lambdas = ls.clone();
        if !cfg.lambdas.contains(&cfg.report_lambda) {
            cfg.report_lambda = cfg.lambdas[0];
        }
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    if cfg.output_dir.is_none() {
        bail!("an output directory is required (--out or output_dir in the config)");
    }
    let mut out = io::stdout().lock();
    // the summary opens with the seed and config hash
    let summary = run_experiment(&cfg)?;
    let failed = summary.lines.iter().map(|l| l.failed).sum::<usize>();
    write!(out, "{}", summary_text(&summary, &cfg))?;
    if failed > 0 {
        writeln!(out, "{failed} scenario evaluations failed; see runs.csv")?;
    }
    Ok(())
}

fn case_info(args: CaseInfoArgs) -> Result<()> {
    let case = load_case(args.path.as_ref())?;
    let description = format!("[case-info]\npath = {:?}\n", args.path);
    let mut out = io::stdout().lock();
    header(&mut out, 0, &description)?;
    let obs = observable_buses(&case)?;
    let connected = case.non_islanding_branches();
    let islanding: Vec<BranchId> = case
        .branches
        .iter()
        .map(|b| b.id)
        .filter(|id| !connected.contains(id))
        .collect();
    writeln!(out, "base MVA {} frequency {} Hz", case.base_mva, case.f0)?;
    writeln!(out, "buses {}", case.bus_count())?;
    writeln!(out, "branches {}", case.branches.len())?;
    writeln!(out, "generators {}", case.generators.len())?;
    writeln!(out, "pmus {}", case.pmu_buses.len())?;
    writeln!(
        out,
        "pmu buses {:?}",
        case.pmu_buses.iter().collect::<Vec<_>>()
    )?;
    writeln!(out, "observable channels {} {:?}", obs.dim(), obs.buses)?;
    writeln!(out, "non-islanding branches {}", connected.len())?;
    writeln!(out, "islanding branches {islanding:?}")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Experiment(a) => experiment(a),
        Command::CaseInfo(a) => case_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
