//! PMU measurement synthesis and the differenced net-power output signal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{net_active_power, AdmittanceMatrix, BusId, NetworkCase};
use crate::rng;
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Bus with a monitored generator.
    Generator,
    Load,
}

/// Buses whose net active power can be computed from PMU data alone, in
/// ascending id order. That order is the channel order of every output
/// signal, residual and detection record.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSet {
    pub buses: Vec<BusId>,
    /// Position of each channel bus in the case bus list.
    pub bus_index: Vec<usize>,
    pub kinds: Vec<ChannelKind>,
    /// Index into `case.generators` for generator channels.
    pub machine: Vec<Option<usize>>,
    /// Every instrumented bus, ascending.
    pub instrumented: Vec<BusId>,
}

impl ObservableSet {
    pub fn dim(&self) -> usize {
        self.buses.len()
    }

    pub fn generator_channels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.machine
            .iter()
            .enumerate()
            .filter_map(|(c, m)| m.map(|m| (c, m)))
    }

    pub fn channel_of(&self, bus: BusId) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }
}

/// PMU buses whose every neighbor also carries a PMU. Buses with a
/// generator are marked as generator channels.
pub fn observable_buses(case: &NetworkCase) -> Result<ObservableSet> {
    let none = BTreeSet::new();
    let mut set = ObservableSet {
        buses: Vec::new(),
        bus_index: Vec::new(),
        kinds: Vec::new(),
        machine: Vec::new(),
        instrumented: case.pmu_buses.iter().copied().collect(),
    };
    for &bus in &case.pmu_buses {
        if !case
            .neighbors(bus, &none)
            .iter()
            .all(|nb| case.pmu_buses.contains(nb))
        {
            continue;
        }
        let machine = case.generators.iter().position(|g| g.bus == bus);
        set.buses.push(bus);
        set.bus_index.push(case.bus_index(bus).expect("validated"));
        set.kinds.push(if machine.is_some() {
            ChannelKind::Generator
        } else {
            ChannelKind::Load
        });
        set.machine.push(machine);
    }
    if set.buses.is_empty() {
        return Err(Error::EmptyObservableSet);
    }
    Ok(set)
}

/// Voltage phasors at the instrumented buses for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuSnapshot {
    pub k: usize,
    pub buses: Arc<[BusId]>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl PmuSnapshot {
    /// Bus-indexed voltage vectors, zero at uninstrumented buses.
    fn scatter(&self, case: &NetworkCase) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = case.bus_count();
        let (mut v, mut theta) = (vec![0.0; n], vec![0.0; n]);
        for (j, &bus) in self.buses.iter().enumerate() {
            let i = case.bus_index(bus).ok_or_else(|| {
                Error::Measurement(format!("snapshot {} refers to unknown bus {bus}", self.k))
            })?;
            v[i] = self.v[j];
            theta[i] = self.theta[j];
        }
        Ok((v, theta))
    }

    pub fn get(&self, bus: BusId) -> Option<(f64, f64)> {
        self.buses
            .iter()
            .position(|&b| b == bus)
            .map(|j| (self.v[j], self.theta[j]))
    }
}

/// Phasor noise: independent Gaussian errors on magnitude and angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasorNoise {
    pub sigma_v: f64,
    pub sigma_theta: f64,
}

impl PhasorNoise {
    pub const NONE: Self = Self {
        sigma_v: 0.0,
        sigma_theta: 0.0,
    };
}

impl Default for PhasorNoise {
    fn default() -> Self {
        Self {
            sigma_v: 1e-4,
            sigma_theta: 1e-4,
        }
    }
}

/// Standard deviation of `ΔP` on each observable channel caused by phasor
/// noise, linearized at the bus voltages (`v`, `theta`).
pub fn induced_output_std(
    y: &AdmittanceMatrix,
    obs: &ObservableSet,
    v: &[f64],
    theta: &[f64],
    noise: PhasorNoise,
) -> Vec<f64> {
    const H: f64 = 1e-6;
    let mut v = v.to_vec();
    let mut theta = theta.to_vec();
    obs.bus_index
        .iter()
        .map(|&i| {
            let mut var = 0.0;
            for j in y.row_support(i) {
                let v0 = v[j];
                v[j] = v0 + H;
                let up = net_active_power(&v, &theta, y, i);
                v[j] = v0 - H;
                let dn = net_active_power(&v, &theta, y, i);
                v[j] = v0;
                var += ((up - dn) / (2.0 * H) * noise.sigma_v).powi(2);
                let t0 = theta[j];
                theta[j] = t0 + H;
                let up = net_active_power(&v, &theta, y, i);
                theta[j] = t0 - H;
                let dn = net_active_power(&v, &theta, y, i);
                theta[j] = t0;
                var += ((up - dn) / (2.0 * H) * noise.sigma_theta).powi(2);
            }
            // two independent samples enter each difference
            (2.0 * var).sqrt()
        })
        .collect()
}

/// Equal magnitude and angle noise under which the load channels' `ΔP`
/// standard deviation averages `relative` times their demand.
pub fn matched_phasor_noise(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    obs: &ObservableSet,
    v: &[f64],
    theta: &[f64],
    relative: f64,
) -> Result<PhasorNoise> {
    let unit = induced_output_std(
        y,
        obs,
        v,
        theta,
        PhasorNoise {
            sigma_v: 1.0,
            sigma_theta: 1.0,
        },
    );
    let ratios: Vec<f64> = obs
        .kinds
        .iter()
        .zip(&obs.bus_index)
        .zip(&unit)
        .filter(|((kind, _), _)| **kind == ChannelKind::Load)
        .map(|((_, &i), &u)| relative * case.buses[i].load_p.abs() / u)
        .collect();
    if ratios.is_empty() {
        return Err(Error::Config(
            "no load channel to match the phasor noise against".into(),
        ));
    }
    let s = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if !(s > 0.0) {
        return Err(Error::Config("load channels carry no demand".into()));
    }
    Ok(PhasorNoise {
        sigma_v: s,
        sigma_theta: s,
    })
}

/// Samples every trajectory step at the instrumented buses.
pub fn synthesize_measurements(
    traj: &Trajectory,
    case: &NetworkCase,
    noise: PhasorNoise,
    seed: u64,
) -> Vec<PmuSnapshot> {
    let buses: Arc<[BusId]> = case.pmu_buses.iter().copied().collect();
    let idx: Vec<usize> = buses
        .iter()
        .map(|&b| case.bus_index(b).expect("validated"))
        .collect();
    let mut rng = rng::stream(seed, &[0x9A0]);
    (0..traj.len())
        .map(|k| {
            let mut v = Vec::with_capacity(idx.len());
            let mut theta = Vec::with_capacity(idx.len());
            for &i in &idx {
                let (zv, zt): (f64, f64) = (
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                v.push(traj.v[k][i] + noise.sigma_v * zv);
                theta.push(traj.theta[k][i] + noise.sigma_theta * zt);
            }
            PmuSnapshot {
                k,
                buses: buses.clone(),
                v,
                theta,
            }
        })
        .collect()
}

/// Net active power at every observable bus for one snapshot.
pub fn observable_power(
    snap: &PmuSnapshot,
    y: &AdmittanceMatrix,
    obs: &ObservableSet,
    case: &NetworkCase,
) -> Result<Vec<f64>> {
    let (v, theta) = snap.scatter(case)?;
    if v.len() != y.dim() {
        return Err(Error::DimensionMismatch {
            what: "admittance matrix",
            expected: v.len(),
            found: y.dim(),
        });
    }
    Ok(obs
        .bus_index
        .iter()
        .map(|&i| net_active_power(&v, &theta, y, i))
        .collect())
}

/// Differenced net power over the observable channels at sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSignal {
    pub k: usize,
    pub values: Vec<f64>,
}

/// `ΔP` between consecutive snapshots, evaluated with the admittance matrix
/// the operator believes in.
pub fn compute_output_signal(
    prev: &PmuSnapshot,
    curr: &PmuSnapshot,
    y: &AdmittanceMatrix,
    obs: &ObservableSet,
    case: &NetworkCase,
) -> Result<OutputSignal> {
    if prev.buses != curr.buses {
        return Err(Error::SnapshotMismatch {
            prev: prev.k,
            curr: curr.k,
        });
    }
    let a = observable_power(prev, y, obs, case)?;
    let b = observable_power(curr, y, obs, case)?;
    Ok(OutputSignal {
        k: curr.k,
        values: b.iter().zip(&a).map(|(b, a)| b - a).collect(),
    })
}

/// Output signals for samples `1..len`, computing each bus power once.
pub fn output_series(
    snaps: &[PmuSnapshot],
    y: &AdmittanceMatrix,
    obs: &ObservableSet,
    case: &NetworkCase,
) -> Result<Vec<OutputSignal>> {
    let powers = snaps
        .iter()
        .map(|s| observable_power(s, y, obs, case))
        .collect::<Result<Vec<_>>>()?;
    (1..snaps.len())
        .map(|k| {
            if snaps[k].buses != snaps[k - 1].buses {
                return Err(Error::SnapshotMismatch {
                    prev: snaps[k - 1].k,
                    curr: snaps[k].k,
                });
            }
            let values = powers[k]
                .iter()
                .zip(&powers[k - 1])
                .map(|(b, a)| b - a)
                .collect();
            Ok(OutputSignal {
                k: snaps[k].k,
                values,
            })
        })
        .collect()
}

/// Output-level noise: std `relative·|P_g − P|` at each channel plus `floor`,
/// `P_g − P` taken from the noise-free trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputNoise {
    pub relative: f64,
    pub floor: f64,
}

impl Default for OutputNoise {
    fn default() -> Self {
        Self {
            relative: 0.01,
            floor: 1e-3,
        }
    }
}

/// Adds output-level noise to `signals` in place.
pub fn add_output_noise(
    signals: &mut [OutputSignal],
    traj: &Trajectory,
    obs: &ObservableSet,
    noise: OutputNoise,
    seed: u64,
) {
    let mut rng = rng::stream(seed, &[0x0E7A]);
    for sig in signals.iter_mut() {
        for (c, value) in sig.values.iter_mut().enumerate() {
            // generation minus net injection is the bus demand
            let demand = traj.demand(sig.k, obs.bus_index[c]);
            let z: f64 = StandardNormal.sample(&mut rng);
            *value += (noise.relative * demand.abs() + noise.floor) * z;
        }
    }
}

/// Writes snapshots as `k,bus,V,theta` rows.
pub fn write_measurements<W: Write>(snaps: &[PmuSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "bus", "V", "theta"])?;
    for s in snaps {
        for (j, bus) in s.buses.iter().enumerate() {
            w.write_record([
                s.k.to_string(),
                bus.to_string(),
                s.v[j].to_string(),
                s.theta[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads snapshots written by [`write_measurements`].
pub fn read_measurements<R: Read>(input: R) -> Result<Vec<PmuSnapshot>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["k", "bus", "V", "theta"] {
        return Err(Error::Measurement(format!(
            "expected header k,bus,V,theta, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: BTreeMap<usize, Vec<(BusId, f64, f64)>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |what: &str| Error::Measurement(format!("row {}: invalid {what}", line + 2));
        let k: usize = field(0).parse().map_err(|_| bad("k"))?;
        let bus: BusId = field(1).parse().map_err(|_| bad("bus"))?;
        let v: f64 = field(2).parse().map_err(|_| bad("V"))?;
        let theta: f64 = field(3).parse().map_err(|_| bad("theta"))?;
        rows.entry(k).or_default().push((bus, v, theta));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut shared: Option<Arc<[BusId]>> = None;
    for (k, mut row) in rows {
        row.sort_by_key(|r| r.0);
        let buses: Vec<BusId> = row.iter().map(|r| r.0).collect();
        let buses = match &shared {
            Some(s) if **s == buses[..] => s.clone(),
            _ => {
                let s: Arc<[BusId]> = buses.into();
                shared = Some(s.clone());
                s
            }
        };
        out.push(PmuSnapshot {
            k,
            buses,
            v: row.iter().map(|r| r.1).collect(),
            theta: row.iter().map(|r| r.2).collect(),
        });
    }
    Ok(out)
}
