//! Case file model and parser.
//!
//! The format is plain text with `[section]` headers. `[base]` holds
//! `key = value` pairs, the remaining sections are whitespace-separated
//! tables, one record per line. `#` starts a comment anywhere on a line.
//!
//! ```text
//! [base]
//! mva = 100           # reporting only
//! f0 = 60             # Hz
//!
//! [bus]
//! # id  type   pd     qd     vset
//! 1     slack  0.0    0.0    1.0
//! 2     PQ     0.5    0.2
//!
//! [branch]
//! # id  from  to  r      x     b     [status]
//! 1     1     2   0.01   0.1   0.0
//!
//! [gen]
//! # bus  M     D     pm    xd
//! 1      10.0  2.0   0.5   0.3
//!
//! [pmu]
//! 1 2
//! ```
//!
//! Bus `type` is one of `slack`, `PV`, `PQ` (case-insensitive); `vset` is
//! required for slack and PV buses. Loads, impedances and powers are per
//! unit on the `mva` base. `M` is the swing-equation inertia coefficient in
//! seconds (2H), `D` the damping in p.u. power per p.u. speed. A branch with
//! `status` 0 is out of service.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type BusId = u32;
pub type BranchId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::Pv),
            "pq" => Ok(BusKind::Pq),
            other => Err(format!("unknown bus type `{other}`")),
        }
    }
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "PV",
            BusKind::Pq => "PQ",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub load_p: f64,
    pub load_q: f64,
    pub voltage_setpoint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: BranchId,
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance; half is placed at each end.
    pub b: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: BusId,
    pub inertia: f64,
    pub damping: f64,
    pub mech_power: f64,
    pub transient_reactance: f64,
}

/// Validated static network description.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub f0: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub pmu_buses: BTreeSet<BusId>,
    bus_index: HashMap<BusId, usize>,
}

const IEEE39: &str = include_str!("../../../../data/case39");

impl NetworkCase {
    /// The bundled IEEE 39-bus New England case.
    pub fn ieee39() -> Self {
        Self::parse(IEEE39).expect("bundled case39 is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_case(text)
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn generator_at(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    /// Branches that are in service and not listed in `outages`.
    pub fn active_branches<'a>(
        &'a self,
        outages: &'a BTreeSet<BranchId>,
    ) -> impl Iterator<Item = &'a Branch> + 'a {
        self.branches
            .iter()
            .filter(move |br| br.in_service && !outages.contains(&br.id))
    }

    /// Bus ids adjacent to `bus` over active branches.
    pub fn neighbors(&self, bus: BusId, outages: &BTreeSet<BranchId>) -> BTreeSet<BusId> {
        self.active_branches(outages)
            .filter_map(|br| {
                if br.from == bus {
                    Some(br.to)
                } else if br.to == bus {
                    Some(br.from)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Number of buses reachable from the slack over active branches.
    pub fn reachable_from_slack(&self, outages: &BTreeSet<BranchId>) -> usize {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.active_branches(outages) {
            let (f, t) = (self.bus_index[&br.from], self.bus_index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack_index()]);
        seen[self.slack_index()] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count
    }

    pub fn is_connected(&self, outages: &BTreeSet<BranchId>) -> bool {
        self.reachable_from_slack(outages) == self.buses.len()
    }

    /// In-service branches whose single outage leaves the network connected.
    pub fn non_islanding_branches(&self) -> Vec<BranchId> {
        self.branches
            .iter()
            .filter(|br| br.in_service)
            .filter(|br| self.is_connected(&BTreeSet::from([br.id])))
            .map(|br| br.id)
            .collect()
    }

    fn validate(&mut self) -> Result<()> {
        let invalid = |path: String, message: String| Error::Validation { path, message };

        self.bus_index.clear();
        for (i, bus) in self.buses.iter().enumerate() {
            if self.bus_index.insert(bus.id, i).is_some() {
                return Err(invalid(
                    format!("bus[{}].id", bus.id),
                    "duplicate bus id".into(),
                ));
            }
            if bus.kind != BusKind::Pq {
                match bus.voltage_setpoint {
                    Some(v) if v > 0.0 && v.is_finite() => {}
                    Some(_) => {
                        return Err(invalid(
                            format!("bus[{}].vset", bus.id),
                            "voltage setpoint must be positive".into(),
                        ))
                    }
                    None => {
                        return Err(invalid(
                            format!("bus[{}].vset", bus.id),
                            format!("{} bus requires a voltage setpoint", bus.kind),
                        ))
                    }
                }
            }
        }
        if self.buses.is_empty() {
            return Err(invalid("bus".into(), "case has no buses".into()));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slacks != 1 {
            return Err(invalid(
                "bus.type".into(),
                format!("exactly one slack bus required, found {slacks}"),
            ));
        }

        let mut branch_ids = HashSet::new();
        for br in &self.branches {
            let path = |field: &str| format!("branch[{}].{field}", br.id);
            if !branch_ids.insert(br.id) {
                return Err(invalid(path("id"), "duplicate branch id".into()));
            }
            for (field, bus) in [("from", br.from), ("to", br.to)] {
                if !self.bus_index.contains_key(&bus) {
                    return Err(invalid(
                        path(field),
                        format!("references unknown bus {bus}"),
                    ));
                }
            }
            if br.from == br.to {
                return Err(invalid(
                    path("to"),
                    "branch connects a bus to itself".into(),
                ));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invalid(path("x"), "series impedance is zero".into()));
            }
        }

        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            let path = |field: &str| format!("gen[{}].{field}", g.bus);
            let Some(&idx) = self.bus_index.get(&g.bus) else {
                return Err(invalid(
                    path("bus"),
                    format!("references unknown bus {}", g.bus),
                ));
            };
            if !gen_buses.insert(g.bus) {
                return Err(invalid(
                    path("bus"),
                    "more than one generator on bus".into(),
                ));
            }
            if self.buses[idx].kind == BusKind::Pq {
                return Err(invalid(path("bus"), "generator sits on a PQ bus".into()));
            }
            if !(g.inertia > 0.0) {
                return Err(invalid(path("M"), "inertia must be positive".into()));
            }
            if !(g.transient_reactance > 0.0) {
                return Err(invalid(
                    path("xd"),
                    "transient reactance must be positive".into(),
                ));
            }
            if !(g.damping >= 0.0) {
                return Err(invalid(path("D"), "damping must be non-negative".into()));
            }
        }

        for &p in &self.pmu_buses {
            if !self.bus_index.contains_key(&p) {
                return Err(invalid(
                    format!("pmu[{p}]"),
                    format!("references unknown bus {p}"),
                ));
            }
        }
        if !(self.f0 > 0.0) {
            return Err(invalid(
                "base.f0".into(),
                "base frequency must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Base,
    Bus,
    Branch,
    Gen,
    Pmu,
}

struct Row<'a> {
    line: usize,
    section: &'static str,
    fields: Vec<&'a str>,
}

impl Row<'_> {
    fn err(&self, column: &str, message: impl Into<String>) -> Error {
        let key = self.fields.first().copied().unwrap_or("?");
        Error::Parse {
            line: self.line,
            path: format!("{}[{key}].{column}", self.section),
            message: message.into(),
        }
    }

    fn get<T: FromStr>(&self, idx: usize, column: &str) -> Result<T> {
        let raw = self
            .fields
            .get(idx)
            .ok_or_else(|| self.err(column, "missing column"))?;
        raw.parse()
            .map_err(|_| self.err(column, format!("cannot parse `{raw}`")))
    }

    fn opt<T: FromStr>(&self, idx: usize, column: &str) -> Result<Option<T>> {
        if idx < self.fields.len() {
            self.get(idx, column).map(Some)
        } else {
            Ok(None)
        }
    }

    fn expect_at_most(&self, n: usize) -> Result<()> {
        if self.fields.len() > n {
            Err(self.err(
                "",
                format!("expected at most {n} columns, found {}", self.fields.len()),
            ))
        } else {
            Ok(())
        }
    }
}

fn parse_case(text: &str) -> Result<NetworkCase> {
    let mut section = Section::None;
    let mut base_mva = 100.0;
    let mut f0 = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut generators = Vec::new();
    let mut pmu_buses = BTreeSet::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "base" => Section::Base,
                "bus" => Section::Bus,
                "branch" => Section::Branch,
                "gen" => Section::Gen,
                "pmu" => Section::Pmu,
                other => {
                    return Err(Error::Parse {
                        line,
                        path: other.to_string(),
                        message: "unknown section".into(),
                    })
                }
            };
            continue;
        }

        match section {
            Section::None => {
                return Err(Error::Parse {
                    line,
                    path: String::new(),
                    message: "data before the first section header".into(),
                })
            }
            Section::Base => {
                let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                    line,
                    path: "base".into(),
                    message: "expected `key = value`".into(),
                })?;
                let key = key.trim();
                let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
                    line,
                    path: format!("base.{key}"),
                    message: format!("cannot parse `{}`", value.trim()),
                })?;
                match key {
                    "mva" => base_mva = value,
                    "f0" => f0 = Some(value),
                    other => {
                        return Err(Error::Parse {
                            line,
                            path: format!("base.{other}"),
                            message: "unknown key".into(),
                        })
                    }
                }
            }
            Section::Pmu => {
                for tok in content.split_whitespace() {
                    let id = tok.parse().map_err(|_| Error::Parse {
                        line,
                        path: "pmu".into(),
                        message: format!("cannot parse bus id `{tok}`"),
                    })?;
                    pmu_buses.insert(id);
                }
            }
            Section::Bus => {
                let row = Row {
                    line,
                    section: "bus",
                    fields: content.split_whitespace().collect(),
                };
                row.expect_at_most(5)?;
                let kind: String = row.get(1, "type")?;
                buses.push(Bus {
                    id: row.get(0, "id")?,
                    kind: kind.parse().map_err(|m: String| row.err("type", m))?,
                    load_p: row.get(2, "pd")?,
                    load_q: row.get(3, "qd")?,
                    voltage_setpoint: row.opt(4, "vset")?,
                });
            }
            Section::Branch => {
                let row = Row {
                    line,
                    section: "branch",
                    fields: content.split_whitespace().collect(),
                };
                row.expect_at_most(7)?;
                let status: Option<u8> = row.opt(6, "status")?;
                branches.push(Branch {
                    id: row.get(0, "id")?,
                    from: row.get(1, "from")?,
                    to: row.get(2, "to")?,
                    r: row.get(3, "r")?,
                    x: row.get(4, "x")?,
                    b: row.get(5, "b")?,
                    in_service: status != Some(0),
                });
            }
            Section::Gen => {
                let row = Row {
                    line,
                    section: "gen",
                    fields: content.split_whitespace().collect(),
                };
                row.expect_at_most(5)?;
                generators.push(Generator {
                    bus: row.get(0, "bus")?,
                    inertia: row.get(1, "M")?,
                    damping: row.get(2, "D")?,
                    mech_power: row.get(3, "pm")?,
                    transient_reactance: row.get(4, "xd")?,
                });
            }
        }
    }

    let mut case = NetworkCase {
        base_mva,
        f0: f0.unwrap_or(60.0),
        buses,
        branches,
        generators,
        pmu_buses,
        bus_index: HashMap::new(),
    };
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "
[base]
f0 = 50
[bus]
1 slack 0 0 1.0
2 PQ 0.5 0.1
[branch]
1 1 2 0.0 0.1 0.0
";

    #[test]
    fn bundled_case39_counts() {
        let case = NetworkCase::ieee39();
        assert_eq!(case.buses.len(), 39);
        assert_eq!(case.generators.len(), 10);
        assert_eq!(case.branches.len(), 46);
        assert_eq!(case.pmu_buses.len(), 10);
        assert_eq!(case.buses[case.slack_index()].id, 31);
        assert_eq!(case.f0, 60.0);
    }

    #[test]
    fn minimal_two_bus() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.f0, 50.0);
        assert!(case.generators.is_empty());
        assert!(case.is_connected(&BTreeSet::new()));
    }

    #[test]
    fn dangling_branch_reference() {
        let text = TWO_BUS.replace("1 1 2 0.0 0.1 0.0", "1 1 99 0.0 0.1 0.0");
        let err = NetworkCase::parse(&text).unwrap_err();
        match err {
            Error::Validation { path, message } => {
                assert_eq!(path, "branch[1].to");
                assert!(message.contains("99"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = TWO_BUS.replace("2 PQ 0.5 0.1", "1 PQ 0.5 0.1");
        assert!(matches!(
            NetworkCase::parse(&text),
            Err(Error::Validation { .. })
        ));
        let text = format!("{TWO_BUS}1 2 1 0.0 0.2 0.0\n");
        let err = NetworkCase::parse(&text).unwrap_err().to_string();
        assert!(err.contains("branch[1].id"), "{err}");
    }

    #[test]
    fn nonpositive_machine_parameters() {
        for (row, field) in [
            ("1 0.0 1.0 0.5 0.3", "gen[1].M"),
            ("1 10.0 1.0 0.5 -0.1", "gen[1].xd"),
        ] {
            let text = format!("{TWO_BUS}[gen]\n{row}\n");
            let err = NetworkCase::parse(&text).unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let text = TWO_BUS.replace("2 PQ 0.5 0.1", "2 PQ abc 0.1");
        match NetworkCase::parse(&text).unwrap_err() {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 6);
                assert_eq!(path, "bus[2].pd");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn slack_count_and_setpoints() {
        let text = TWO_BUS.replace("1 slack 0 0 1.0", "1 PV 0 0 1.0");
        assert!(NetworkCase::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("slack"));
        let text = TWO_BUS.replace("1 slack 0 0 1.0", "1 slack 0 0");
        assert!(NetworkCase::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("vset"));
    }

    #[test]
    fn pmu_must_reference_buses() {
        let text = format!("{TWO_BUS}[pmu]\n1 7\n");
        assert!(NetworkCase::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("pmu[7]"));
    }

    #[test]
    fn case39_islanding_lines() {
        let case = NetworkCase::ieee39();
        let ok = case.non_islanding_branches();
        assert_eq!(ok.len(), 35);
        // generator step-up transformers and the 16-19 tie island part of the grid
        for radial in [5, 14, 20, 27, 32, 33, 34, 37, 39, 41, 46] {
            assert!(!ok.contains(&radial), "branch {radial}");
        }
    }
}
