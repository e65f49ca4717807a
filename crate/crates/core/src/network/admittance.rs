use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;

use super::case::{BranchId, NetworkCase};
use crate::error::{Error, Result};

/// Identifies the outage set an admittance matrix was assembled for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopologyRevision(BTreeSet<BranchId>);

impl TopologyRevision {
    pub fn base() -> Self {
        Self::default()
    }

    pub fn outages(&self) -> &BTreeSet<BranchId> {
        &self.0
    }

    pub fn is_base(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TopologyRevision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("base");
        }
        let ids: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        write!(f, "out:{}", ids.join("+"))
    }
}

/// Dense bus admittance matrix, indexed by bus position in the case.
///
/// Entries are kept both rectangular (for Jacobians) and polar
/// (`Y_ij`, `alpha_ij`) for the power-flow expression.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    rect: Vec<Complex64>,
    mag: Vec<f64>,
    ang: Vec<f64>,
    revision: TopologyRevision,
}

impl AdmittanceMatrix {
    pub fn from_complex(n: usize, entries: Vec<Complex64>, revision: TopologyRevision) -> Self {
        assert_eq!(entries.len(), n * n, "admittance entries must be n*n");
        let mag = entries.iter().map(|y| y.norm()).collect();
        let ang = entries
            .iter()
            .map(|y| {
                if *y == Complex64::new(0.0, 0.0) {
                    0.0
                } else {
                    y.arg()
                }
            })
            .collect();
        Self {
            n,
            rect: entries,
            mag,
            ang,
            revision,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rect[i * self.n + j]
    }

    #[inline]
    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.mag[i * self.n + j]
    }

    #[inline]
    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.ang[i * self.n + j]
    }

    pub fn revision(&self) -> &TopologyRevision {
        &self.revision
    }

    /// Column indices with a nonzero entry in row `i`.
    pub fn row_support(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.mag[i * self.n + j] != 0.0)
    }
}

/// Assembles the bus admittance matrix with the branches in `outages` removed.
///
/// Each active branch contributes its series admittance `1/(r + jx)` and half
/// of its charging susceptance at each end.
pub fn build_admittance(
    case: &NetworkCase,
    outages: &BTreeSet<BranchId>,
) -> Result<AdmittanceMatrix> {
    for id in outages {
        if case.branch(*id).is_none() {
            return Err(Error::UnknownBranch(*id));
        }
    }
    let n = case.bus_count();
    let mut y = vec![Complex64::new(0.0, 0.0); n * n];
    for br in case.active_branches(outages) {
        let f = case.bus_index(br.from).expect("validated");
        let t = case.bus_index(br.to).expect("validated");
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b / 2.0);
        y[f * n + f] += ys + ysh;
        y[t * n + t] += ys + ysh;
        y[f * n + t] -= ys;
        y[t * n + f] -= ys;
    }
    Ok(AdmittanceMatrix::from_complex(
        n,
        y,
        TopologyRevision(outages.clone()),
    ))
}

/// Net active power injected at bus index `i`:
/// `V_i * sum_j V_j Y_ij cos(theta_i - theta_j - alpha_ij)`.
pub fn net_active_power(v: &[f64], theta: &[f64], y: &AdmittanceMatrix, i: usize) -> f64 {
    let mut acc = 0.0;
    for j in y.row_support(i) {
        acc += v[j] * y.magnitude(i, j) * (theta[i] - theta[j] - y.angle(i, j)).cos();
    }
    v[i] * acc
}

/// Net reactive power injected at bus index `i`.
pub fn net_reactive_power(v: &[f64], theta: &[f64], y: &AdmittanceMatrix, i: usize) -> f64 {
    let mut acc = 0.0;
    for j in y.row_support(i) {
        acc += v[j] * y.magnitude(i, j) * (theta[i] - theta[j] - y.angle(i, j)).sin();
    }
    v[i] * acc
}

/// Active and reactive injections at every bus, computed in rectangular form.
pub(crate) fn injections(v: &[f64], theta: &[f64], y: &AdmittanceMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.dim();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for j in y.row_support(i) {
            let yij = y.get(i, j);
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            pi += v[j] * (yij.re * c + yij.im * s);
            qi += v[j] * (yij.re * s - yij.im * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Partial derivatives of the bus injections with respect to bus angles and
/// magnitudes, as four dense `n x n` row-major blocks.
pub(crate) struct InjectionJacobian {
    pub dp_dtheta: Vec<f64>,
    pub dp_dv: Vec<f64>,
    pub dq_dtheta: Vec<f64>,
    pub dq_dv: Vec<f64>,
}

pub(crate) fn injection_jacobian(
    v: &[f64],
    theta: &[f64],
    y: &AdmittanceMatrix,
    p: &[f64],
    q: &[f64],
) -> InjectionJacobian {
    let n = y.dim();
    let mut jac = InjectionJacobian {
        dp_dtheta: vec![0.0; n * n],
        dp_dv: vec![0.0; n * n],
        dq_dtheta: vec![0.0; n * n],
        dq_dv: vec![0.0; n * n],
    };
    for i in 0..n {
        let yii = y.get(i, i);
        for j in y.row_support(i) {
            if j == i {
                continue;
            }
            let yij = y.get(i, j);
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            let a = yij.re * s - yij.im * c;
            let b = yij.re * c + yij.im * s;
            jac.dp_dtheta[i * n + j] = v[i] * v[j] * a;
            jac.dp_dv[i * n + j] = v[i] * b;
            jac.dq_dtheta[i * n + j] = -v[i] * v[j] * b;
            jac.dq_dv[i * n + j] = v[i] * a;
        }
        jac.dp_dtheta[i * n + i] = -q[i] - yii.im * v[i] * v[i];
        jac.dp_dv[i * n + i] = p[i] / v[i] + yii.re * v[i];
        jac.dq_dtheta[i * n + i] = p[i] - yii.re * v[i] * v[i];
        jac.dq_dv[i * n + i] = q[i] / v[i] - yii.im * v[i];
    }
    jac
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    const TWO_BUS: &str = "
[bus]
1 slack 0 0 1.0
2 PQ 0.5 0.1
[branch]
7 1 2 0.0 0.1 0.0
";

    fn three_bus(r: [f64; 3], x: [f64; 3], b: [f64; 3]) -> NetworkCase {
        let text = format!(
            "[bus]\n1 slack 0 0 1.0\n2 PQ 0.3 0.1\n3 PQ 0.2 0.05\n[branch]\n\
             1 1 2 {} {} {}\n2 2 3 {} {} {}\n3 1 3 {} {} {}\n",
            r[0], x[0], b[0], r[1], x[1], b[1], r[2], x[2], b[2]
        );
        NetworkCase::parse(&text).unwrap()
    }

    #[test]
    fn two_bus_hand_assembly() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        let y = build_admittance(&case, &BTreeSet::new()).unwrap();
        assert_relative_eq!(y.magnitude(0, 1), 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.angle(0, 1), FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(y.magnitude(0, 0), 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.magnitude(1, 1), 10.0, epsilon = 1e-12);
        assert!(y.revision().is_base());
    }

    #[test]
    fn full_disconnection_zeroes_off_diagonals() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        let y = build_admittance(&case, &BTreeSet::from([7])).unwrap();
        assert_eq!(y.magnitude(0, 1), 0.0);
        assert_eq!(y.magnitude(1, 0), 0.0);
        assert_eq!(y.revision().to_string(), "out:7");
    }

    #[test]
    fn unknown_outage_rejected() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        assert!(matches!(
            build_admittance(&case, &BTreeSet::from([3])),
            Err(Error::UnknownBranch(3))
        ));
    }

    /// Element-by-element oracle: Y_ij = -sum of series admittances between i
    /// and j, Y_ii = sum of everything incident on i.
    fn brute_force(case: &NetworkCase) -> Vec<Vec<Complex64>> {
        let n = case.bus_count();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in 0..n {
                let (bi, bj) = (case.buses[i].id, case.buses[j].id);
                let mut acc = Complex64::new(0.0, 0.0);
                for br in &case.branches {
                    let z = Complex64::new(br.r, br.x);
                    let touches_i = br.from == bi || br.to == bi;
                    if i == j && touches_i {
                        acc += z.inv() + Complex64::new(0.0, br.b * 0.5);
                    } else if i != j && touches_i && (br.from == bj || br.to == bj) {
                        acc -= z.inv();
                    }
                }
                out[i][j] = acc;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn random_three_bus_matches_oracle(
            r in prop::array::uniform3(0.0f64..0.05),
            x in prop::array::uniform3(0.01f64..0.5),
            b in prop::array::uniform3(0.0f64..0.5),
        ) {
            let case = three_bus(r, x, b);
            let y = build_admittance(&case, &BTreeSet::new()).unwrap();
            let oracle = brute_force(&case);
            for i in 0..3 {
                for j in 0..3 {
                    let d = (y.get(i, j) - oracle[i][j]).norm();
                    prop_assert!(d <= 1e-12 * oracle[i][j].norm().max(1.0));
                    // exact symmetry
                    prop_assert_eq!(y.get(i, j), y.get(j, i));
                }
            }
        }

        #[test]
        fn net_active_power_matches_complex_oracle(
            r in prop::array::uniform3(0.0f64..0.05),
            x in prop::array::uniform3(0.01f64..0.5),
            b in prop::array::uniform3(0.0f64..0.5),
            v in prop::array::uniform3(0.8f64..1.2),
            th in prop::array::uniform3(-0.5f64..0.5),
        ) {
            let case = three_bus(r, x, b);
            let y = build_admittance(&case, &BTreeSet::new()).unwrap();
            let phasor: Vec<Complex64> = (0..3).map(|i| Complex64::from_polar(v[i], th[i])).collect();
            for i in 0..3 {
                let current: Complex64 = (0..3).map(|j| y.get(i, j) * phasor[j]).sum();
                let s = phasor[i] * current.conj();
                let p = net_active_power(&v, &th, &y, i);
                let q = net_reactive_power(&v, &th, &y, i);
                prop_assert!((p - s.re).abs() <= 1e-12 * s.re.abs().max(1.0));
                prop_assert!((q - s.im).abs() <= 1e-12 * s.im.abs().max(1.0));
            }
        }
    }

    #[test]
    fn isolated_bus_has_no_injection() {
        let case = NetworkCase::parse(TWO_BUS).unwrap();
        let y = build_admittance(&case, &BTreeSet::from([7])).unwrap();
        assert_eq!(net_active_power(&[1.0, 0.9], &[0.0, -0.2], &y, 1), 0.0);
    }

    #[test]
    fn outage_locality_case39() {
        let case = NetworkCase::ieee39();
        let base = build_admittance(&case, &BTreeSet::new()).unwrap();
        for br in &case.branches {
            let out = build_admittance(&case, &BTreeSet::from([br.id])).unwrap();
            let f = case.bus_index(br.from).unwrap();
            let t = case.bus_index(br.to).unwrap();
            for i in 0..base.dim() {
                for j in 0..base.dim() {
                    let in_block = (i == f || i == t) && (j == f || j == t);
                    if !in_block {
                        assert_eq!(
                            base.get(i, j),
                            out.get(i, j),
                            "branch {} entry ({i},{j})",
                            br.id
                        );
                    }
                }
            }
            assert_eq!(out.get(f, t), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn rectangular_injections_agree_with_polar() {
        let case = NetworkCase::ieee39();
        let y = build_admittance(&case, &BTreeSet::new()).unwrap();
        let n = y.dim();
        let v: Vec<f64> = (0..n).map(|i| 0.95 + 0.003 * i as f64).collect();
        let th: Vec<f64> = (0..n).map(|i| -0.2 + 0.01 * i as f64).collect();
        let (p, q) = injections(&v, &th, &y);
        for i in 0..n {
            assert_relative_eq!(p[i], net_active_power(&v, &th, &y, i), epsilon = 1e-9);
            assert_relative_eq!(q[i], net_reactive_power(&v, &th, &y, i), epsilon = 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let case = NetworkCase::ieee39();
        let y = build_admittance(&case, &BTreeSet::new()).unwrap();
        let n = y.dim();
        let v: Vec<f64> = (0..n).map(|i| 0.97 + 0.002 * i as f64).collect();
        let th: Vec<f64> = (0..n).map(|i| -0.3 + 0.013 * i as f64).collect();
        let (p, q) = injections(&v, &th, &y);
        let jac = injection_jacobian(&v, &th, &y, &p, &q);
        let h = 1e-6;
        for j in [0usize, 5, 19, 30] {
            let mut th2 = th.clone();
            th2[j] += h;
            let (p2, q2) = injections(&v, &th2, &y);
            let mut v2 = v.clone();
            v2[j] += h;
            let (p3, q3) = injections(&v2, &th, &y);
            for i in 0..n {
                assert!((jac.dp_dtheta[i * n + j] - (p2[i] - p[i]) / h).abs() < 1e-3);
                assert!((jac.dq_dtheta[i * n + j] - (q2[i] - q[i]) / h).abs() < 1e-3);
                assert!((jac.dp_dv[i * n + j] - (p3[i] - p[i]) / h).abs() < 1e-3);
                assert!((jac.dq_dv[i * n + j] - (q3[i] - q[i]) / h).abs() < 1e-3);
            }
        }
    }
}
