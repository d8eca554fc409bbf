//! Grid topology, admittance assembly, the AC power-flow equations, and the
//! observability metric. Everything downstream (solver, estimators, loss)
//! builds on the primitives here.
//!
//! Conventions used throughout the crate:
//! - all electrical quantities are per-unit; conversion to volts/VA happens
//!   only at report boundaries,
//! - bus indices are 0-based internally (reports print 1-based labels),
//! - a complex vector of length `n` flattens to `2n` reals as interleaved
//!   pairs `[re_0, im_0, re_1, im_1, ...]`.

use std::ops::Deref;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed-length vector of complex per-unit phasors (injections or voltages).
///
/// Construction validates that every entry is finite; the length is fixed
/// afterwards. Read access goes through `Deref<Target = [Complex64]>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec(Vec<Complex64>);

impl ComplexVec {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("ComplexVec entry"));
        }
        Ok(ComplexVec(entries))
    }

    pub fn zeros(n: usize) -> Self {
        ComplexVec(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn constant(n: usize, value: Complex64) -> Self {
        ComplexVec(vec![value; n])
    }

    /// Flatten to interleaved real pairs `[re_0, im_0, re_1, im_1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.0.len());
        for z in &self.0 {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    /// Inverse of [`ComplexVec::flatten`]; the slice length must be even.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::DimensionMismatch {
                what: "interleaved real pairs",
                expected: flat.len() + 1,
                got: flat.len(),
            });
        }
        let entries = flat
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        ComplexVec::new(entries)
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// Infinity norm over complex magnitudes.
    pub fn norm_inf(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Deref for ComplexVec {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl FromIterator<Complex64> for ComplexVec {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        ComplexVec(iter.into_iter().collect())
    }
}

/// One branch of the network: series admittance plus half of the total shunt
/// admittance lumped at each terminal (pi model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub series: Complex64,
    pub shunt_half: Complex64,
}

/// Source data for admittance assembly.
#[derive(Debug, Clone, Default)]
pub struct BranchList {
    pub branches: Vec<Branch>,
}

impl BranchList {
    pub fn new(branches: Vec<Branch>) -> Self {
        BranchList { branches }
    }

    fn validate(&self, n_buses: usize) -> Result<()> {
        for b in &self.branches {
            if b.from >= n_buses || b.to >= n_buses {
                return Err(Error::invalid(format!(
                    "branch {}-{} references a bus >= n_buses ({})",
                    b.from, b.to, n_buses
                )));
            }
            if b.from == b.to {
                return Err(Error::invalid(format!("self-loop at bus {}", b.from)));
            }
        }
        // Connectivity over the undirected branch graph.
        let mut seen = vec![false; n_buses];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for b in &self.branches {
                let other = if b.from == i {
                    b.to
                } else if b.to == i {
                    b.from
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        let connected = seen.iter().filter(|&&s| s).count();
        if connected != n_buses {
            return Err(Error::Disconnected {
                connected,
                total: n_buses,
            });
        }
        Ok(())
    }
}

/// Assemble the dense bus-admittance matrix (row-major, n x n).
///
/// Diagonal entries accumulate incident series admittances plus shunts;
/// off-diagonals get the negated series admittance. Parallel branches between
/// the same pair of buses have their admittances summed.
pub fn build_admittance(branches: &BranchList, n_buses: usize) -> Result<Vec<Complex64>> {
    if n_buses == 0 {
        return Err(Error::invalid("n_buses must be positive"));
    }
    branches.validate(n_buses)?;
    let mut y = vec![Complex64::new(0.0, 0.0); n_buses * n_buses];
    for b in &branches.branches {
        y[b.from * n_buses + b.from] += b.series + b.shunt_half;
        y[b.to * n_buses + b.to] += b.series + b.shunt_half;
        y[b.from * n_buses + b.to] -= b.series;
        y[b.to * n_buses + b.from] -= b.series;
    }
    Ok(y)
}

/// Network model: bus count, slack index, dense admittance matrix, and the
/// per-unit bases used at report boundaries.
#[derive(Debug, Clone)]
pub struct GridModel {
    n_buses: usize,
    slack_index: usize,
    /// Row-major n x n admittance matrix in per-unit siemens.
    y: Vec<Complex64>,
    pub base_voltage_kv: f64,
    pub base_power_mva: f64,
}

impl GridModel {
    pub fn from_branches(
        branches: &BranchList,
        n_buses: usize,
        slack_index: usize,
        base_voltage_kv: f64,
        base_power_mva: f64,
    ) -> Result<Self> {
        if slack_index >= n_buses {
            return Err(Error::invalid(format!(
                "slack_index {slack_index} out of range for {n_buses} buses"
            )));
        }
        if base_voltage_kv <= 0.0 || base_power_mva <= 0.0 {
            return Err(Error::invalid("per-unit bases must be positive"));
        }
        let y = build_admittance(branches, n_buses)?;
        Ok(GridModel {
            n_buses,
            slack_index,
            y,
            base_voltage_kv,
            base_power_mva,
        })
    }

    /// Build a model from an explicit row-major admittance matrix. Unlike
    /// [`GridModel::from_branches`] this does not require a connected branch
    /// graph; callers own the physical plausibility of `y`.
    pub fn from_admittance(
        n_buses: usize,
        slack_index: usize,
        y: Vec<Complex64>,
        base_voltage_kv: f64,
        base_power_mva: f64,
    ) -> Result<Self> {
        if y.len() != n_buses * n_buses {
            return Err(Error::DimensionMismatch {
                what: "admittance matrix",
                expected: n_buses * n_buses,
                got: y.len(),
            });
        }
        if slack_index >= n_buses {
            return Err(Error::invalid(format!(
                "slack_index {slack_index} out of range for {n_buses} buses"
            )));
        }
        Ok(GridModel {
            n_buses,
            slack_index,
            y,
            base_voltage_kv,
            base_power_mva,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn slack_index(&self) -> usize {
        self.slack_index
    }

    pub fn y(&self, i: usize, j: usize) -> Complex64 {
        self.y[i * self.n_buses + j]
    }

    pub fn y_row(&self, i: usize) -> &[Complex64] {
        &self.y[i * self.n_buses..(i + 1) * self.n_buses]
    }

    fn check_len(&self, v: &[Complex64], what: &'static str) -> Result<()> {
        if v.len() != self.n_buses {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.n_buses,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Bus current injections `w = Y v`.
    fn y_times(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n_buses)
            .map(|i| {
                self.y_row(i)
                    .iter()
                    .zip(v)
                    .map(|(y, vj)| y * vj)
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// Complex power injections `s_i = v_i (Y* v*)_i`, i.e. the power-flow
    /// equations evaluated at `v`.
    pub fn pfe_injections(&self, v: &ComplexVec) -> Result<ComplexVec> {
        self.check_len(v, "pfe_injections voltage vector")?;
        let w = self.y_times(v);
        Ok(v.iter().zip(&w).map(|(vi, wi)| vi * wi.conj()).collect())
    }

    /// Power-flow residual `f_i = s_target_i - v_i (Y* v*)_i`; zero exactly
    /// when `(s_target, v)` satisfy the power-flow equations.
    pub fn pfe_residual(&self, s_target: &ComplexVec, v: &ComplexVec) -> Result<ComplexVec> {
        self.check_len(s_target, "pfe_residual target vector")?;
        let s = self.pfe_injections(v)?;
        Ok(s_target
            .iter()
            .zip(s.iter())
            .map(|(t, s)| t - s)
            .collect())
    }

    /// Partial derivatives of the injections `S_i(v) = v_i conj((Y v)_i)` with
    /// respect to the rectangular voltage coordinates.
    ///
    /// Returns two row-major n x n complex matrices `(d_re, d_im)` with
    /// `d_re[i][j] = dS_i/d(Re v_j)` and `d_im[i][j] = dS_i/d(Im v_j)`.
    /// Shared by the Newton power-flow Jacobian, the WLS Jacobian, and the
    /// physics term of the training loss.
    pub fn injection_derivatives(&self, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n_buses;
        let w = self.y_times(v);
        let mut d_re = vec![Complex64::new(0.0, 0.0); n * n];
        let mut d_im = vec![Complex64::new(0.0, 0.0); n * n];
        let i_unit = Complex64::new(0.0, 1.0);
        for i in 0..n {
            let wi_conj = w[i].conj();
            for j in 0..n {
                let yij_conj = self.y(i, j).conj();
                let mut re = v[i] * yij_conj;
                let mut im = -i_unit * v[i] * yij_conj;
                if i == j {
                    re += wi_conj;
                    im += i_unit * wi_conj;
                }
                d_re[i * n + j] = re;
                d_im[i * n + j] = im;
            }
        }
        (d_re, d_im)
    }
}

/// Degree of observability `(n_s + n_v) / (2 n_buses)`.
pub fn observability(n_s: usize, n_v: usize, n_buses: usize) -> Result<f64> {
    if n_buses == 0 {
        return Err(Error::invalid("n_buses must be positive"));
    }
    if n_s > n_buses || n_v > n_buses {
        return Err(Error::invalid(format!(
            "observable counts ({n_s}, {n_v}) exceed n_buses {n_buses}"
        )));
    }
    Ok((n_s + n_v) as f64 / (2.0 * n_buses as f64))
}

/// Which buses report power/voltage phasors at the masked time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservabilityMask {
    pub power_observed: Vec<bool>,
    pub voltage_observed: Vec<bool>,
}

impl ObservabilityMask {
    pub fn new(power_observed: Vec<bool>, voltage_observed: Vec<bool>) -> Result<Self> {
        if power_observed.len() != voltage_observed.len() {
            return Err(Error::DimensionMismatch {
                what: "observability mask",
                expected: power_observed.len(),
                got: voltage_observed.len(),
            });
        }
        Ok(ObservabilityMask {
            power_observed,
            voltage_observed,
        })
    }

    /// Mask where the first `n_s` buses report power and the first `n_v`
    /// report voltage. Observability is lost from the highest bus index
    /// downwards, mirroring how outages spread from the feeder end toward
    /// the reference bus.
    pub fn prefix_observed(n_buses: usize, n_s: usize, n_v: usize) -> Result<Self> {
        if n_s > n_buses || n_v > n_buses {
            return Err(Error::invalid(format!(
                "mask counts ({n_s}, {n_v}) exceed n_buses {n_buses}"
            )));
        }
        Ok(ObservabilityMask {
            power_observed: (0..n_buses).map(|i| i < n_s).collect(),
            voltage_observed: (0..n_buses).map(|i| i < n_v).collect(),
        })
    }

    pub fn full(n_buses: usize) -> Self {
        ObservabilityMask {
            power_observed: vec![true; n_buses],
            voltage_observed: vec![true; n_buses],
        }
    }

    pub fn n_buses(&self) -> usize {
        self.power_observed.len()
    }

    pub fn n_s(&self) -> usize {
        self.power_observed.iter().filter(|&&b| b).count()
    }

    pub fn n_v(&self) -> usize {
        self.voltage_observed.iter().filter(|&&b| b).count()
    }

    pub fn observability(&self) -> f64 {
        observability(self.n_s(), self.n_v(), self.n_buses()).expect("mask counts bounded")
    }
}

/// On-disk case description (structured JSON). Admittances are given as
/// rectangular per-unit values per branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub n_buses: usize,
    pub slack_index: usize,
    pub base_kv: f64,
    pub base_mva: f64,
    pub branches: Vec<CaseBranch>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseBranch {
    pub from: usize,
    pub to: usize,
    /// Series conductance, per-unit.
    pub g: f64,
    /// Series susceptance, per-unit.
    pub b: f64,
    /// Half of the total shunt susceptance lumped at each terminal, per-unit.
    #[serde(default)]
    pub shunt_b: f64,
}

impl CaseFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let case: CaseFile = serde_json::from_str(text)?;
        Ok(case)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn branch_list(&self) -> BranchList {
        BranchList::new(
            self.branches
                .iter()
                .map(|b| Branch {
                    from: b.from,
                    to: b.to,
                    series: Complex64::new(b.g, b.b),
                    shunt_half: Complex64::new(0.0, b.shunt_b),
                })
                .collect(),
        )
    }

    /// Build the validated grid model; reports the offending field on error.
    pub fn to_grid(&self) -> Result<GridModel> {
        for (k, b) in self.branches.iter().enumerate() {
            if !b.g.is_finite() || !b.b.is_finite() || !b.shunt_b.is_finite() {
                return Err(Error::invalid(format!(
                    "branches[{k}]: non-finite admittance"
                )));
            }
        }
        GridModel::from_branches(
            &self.branch_list(),
            self.n_buses,
            self.slack_index,
            self.base_kv,
            self.base_mva,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(y: Complex64) -> GridModel {
        let branches = BranchList::new(vec![Branch {
            from: 0,
            to: 1,
            series: y,
            shunt_half: Complex64::new(0.0, 0.0),
        }]);
        GridModel::from_branches(&branches, 2, 0, 4.8, 2.5).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_branch_assembly() {
        let g = two_bus(c(1.0, 0.0));
        assert_eq!(g.y(0, 0), c(1.0, 0.0));
        assert_eq!(g.y(0, 1), c(-1.0, 0.0));
        assert_eq!(g.y(1, 0), c(-1.0, 0.0));
        assert_eq!(g.y(1, 1), c(1.0, 0.0));
    }

    #[test]
    fn parallel_branches_sum() {
        let branches = BranchList::new(vec![
            Branch {
                from: 0,
                to: 1,
                series: c(1.0, 0.0),
                shunt_half: c(0.0, 0.0),
            },
            Branch {
                from: 0,
                to: 1,
                series: c(2.0, 0.0),
                shunt_half: c(0.0, 0.0),
            },
        ]);
        let y = build_admittance(&branches, 2).unwrap();
        assert_eq!(y[0], c(3.0, 0.0));
        assert_eq!(y[1], c(-3.0, 0.0));
        assert_eq!(y[2], c(-3.0, 0.0));
        assert_eq!(y[3], c(3.0, 0.0));
    }

    #[test]
    fn row_sums_vanish_without_shunts() {
        let g = crate::cases::ieee37().unwrap();
        for i in 0..g.n_buses() {
            let sum: Complex64 = g.y_row(i).iter().sum();
            assert!(sum.norm() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        let branches = BranchList::new(vec![Branch {
            from: 0,
            to: 1,
            series: c(1.0, 0.0),
            shunt_half: c(0.0, 0.0),
        }]);
        let err = build_admittance(&branches, 3).unwrap_err();
        assert!(matches!(err, Error::Disconnected { connected: 2, total: 3 }));
    }

    #[test]
    fn self_loop_rejected() {
        let branches = BranchList::new(vec![Branch {
            from: 1,
            to: 1,
            series: c(1.0, 0.0),
            shunt_half: c(0.0, 0.0),
        }]);
        assert!(build_admittance(&branches, 2).is_err());
    }

    #[test]
    fn injections_flat_voltage() {
        let g = two_bus(c(1.0, 0.0));
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let s = g.pfe_injections(&v).unwrap();
        assert!(s.norm_inf() < 1e-15);
    }

    #[test]
    fn injections_hand_evaluated() {
        let g = two_bus(c(1.0, 0.0));
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.5, 0.0)]).unwrap();
        let s = g.pfe_injections(&v).unwrap();
        assert!((s[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((s[1] - c(-0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn injections_reactive_line() {
        // Inductive line y = 1/(jx) = -j/x, so Y = [[-10j, 10j], [10j, -10j]].
        let g = two_bus(c(0.0, -10.0));
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.0, -1.0)]).unwrap();
        let s = g.pfe_injections(&v).unwrap();
        assert!((s[0] - c(10.0, 10.0)).norm() < 1e-12);
        assert!((s[1] - c(-10.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn residual_subtracts_injections() {
        let g = two_bus(c(1.0, 0.0));
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.5, 0.0)]).unwrap();
        let s_target = ComplexVec::new(vec![c(0.6, 0.0), c(-0.25, 0.0)]).unwrap();
        let f = g.pfe_residual(&s_target, &v).unwrap();
        assert!((f[0] - c(0.1, 0.0)).norm() < 1e-15);
        assert!(f[1].norm() < 1e-15);
    }

    #[test]
    fn residual_zero_at_consistency() {
        let g = two_bus(c(2.0, -1.0));
        let v = ComplexVec::new(vec![c(1.02, 0.01), c(0.97, -0.03)]).unwrap();
        let s = g.pfe_injections(&v).unwrap();
        let f = g.pfe_residual(&s, &v).unwrap();
        assert!(f.norm_inf() < 1e-14);
    }

    #[test]
    fn observability_paper_points() {
        assert!((observability(35, 0, 36).unwrap() - 0.4861).abs() < 5e-5);
        assert!((observability(6, 0, 36).unwrap() - 0.0833).abs() < 5e-5);
        assert_eq!(observability(36, 36, 36).unwrap(), 1.0);
        assert_eq!(observability(0, 0, 36).unwrap(), 0.0);
        assert!(observability(37, 0, 36).is_err());
    }

    #[test]
    fn injections_scale_quadratically() {
        let g = two_bus(c(1.5, -0.5));
        let v = ComplexVec::new(vec![c(1.0, 0.1), c(0.9, -0.2)]).unwrap();
        let s1 = g.pfe_injections(&v).unwrap();
        let alpha = 1.7;
        let v2: ComplexVec = v.iter().map(|z| z * alpha).collect();
        let s2 = g.pfe_injections(&v2).unwrap();
        for i in 0..2 {
            assert!((s2[i] - s1[i] * alpha * alpha).norm() < 1e-12);
        }
    }

    #[test]
    fn mask_prefix_counts() {
        let m = ObservabilityMask::prefix_observed(36, 28, 0).unwrap();
        assert_eq!(m.n_s(), 28);
        assert_eq!(m.n_v(), 0);
        assert!(m.power_observed[27]);
        assert!(!m.power_observed[28]);
        assert!((m.observability() - 28.0 / 72.0).abs() < 1e-15);
    }

    #[test]
    fn flatten_round_trip() {
        let v = ComplexVec::new(vec![c(1.0, -2.0), c(3.5, 0.25)]).unwrap();
        let flat = v.flatten();
        assert_eq!(flat, vec![1.0, -2.0, 3.5, 0.25]);
        let back = ComplexVec::from_flat(&flat).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ComplexVec::new(vec![c(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = two_bus(c(1.0, 0.0));
        let v = ComplexVec::zeros(3);
        assert!(g.pfe_injections(&v).is_err());
    }
}
