//! Newton-Raphson AC power flow in rectangular coordinates.
//!
//! The network has one slack bus (fixed voltage phasor) and N-1 PQ buses.
//! Unknowns are the rectangular voltage components of the PQ buses; the
//! mismatch is the power-flow residual stacked as `[Re f_i, Im f_i]` per
//! PQ bus. Used to synthesize ground-truth voltage trajectories from
//! injection time series.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::{ComplexVec, GridModel};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    /// Infinity-norm tolerance on the stacked real/imaginary residual.
    pub tolerance: f64,
    pub slack_voltage: Complex64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            max_iterations: 50,
            tolerance: 1e-10,
            slack_voltage: Complex64::new(1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Voltages at all buses; the slack entry equals `slack_voltage`.
    pub v: ComplexVec,
    /// Injections at all buses: the requested values at PQ buses and the
    /// slack injection back-computed from the power-flow equations.
    pub injections: ComplexVec,
    /// Accepted Newton steps taken.
    pub iterations: usize,
    pub final_mismatch: f64,
}

/// Real Jacobian of the PQ-bus mismatch with respect to the PQ-bus
/// rectangular voltages, shape 2(N-1) x 2(N-1).
///
/// Row 2k/2k+1 is the Re/Im residual of the k-th PQ bus; column 2k/2k+1 is
/// the Re/Im voltage of the k-th PQ bus (PQ buses in ascending index order).
pub fn pf_jacobian(grid: &GridModel, v: &ComplexVec) -> Result<DMatrix<f64>> {
    if v.len() != grid.n_buses() {
        return Err(Error::DimensionMismatch {
            what: "pf_jacobian voltage vector",
            expected: grid.n_buses(),
            got: v.len(),
        });
    }
    let active: Vec<usize> = (0..grid.n_buses())
        .filter(|&i| i != grid.slack_index())
        .collect();
    Ok(residual_jacobian(grid, v, &active))
}

/// Jacobian of the stacked residual rows `active` with respect to the
/// rectangular voltages of the same `active` buses.
pub(crate) fn residual_jacobian(
    grid: &GridModel,
    v: &[Complex64],
    active: &[usize],
) -> DMatrix<f64> {
    let n = grid.n_buses();
    let (d_re, d_im) = grid.injection_derivatives(v);
    let m = active.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            // f = s_target - S(v), so df/dx = -dS/dx.
            let dre = d_re[i * n + j];
            let dim = d_im[i * n + j];
            jac[(2 * r, 2 * c)] = -dre.re;
            jac[(2 * r, 2 * c + 1)] = -dim.re;
            jac[(2 * r + 1, 2 * c)] = -dre.im;
            jac[(2 * r + 1, 2 * c + 1)] = -dim.im;
        }
    }
    jac
}

pub(crate) fn stacked_residual(
    grid: &GridModel,
    s_target: &ComplexVec,
    v: &ComplexVec,
    active: &[usize],
) -> Result<DVector<f64>> {
    let f = grid.pfe_residual(s_target, v)?;
    let mut out = DVector::zeros(2 * active.len());
    for (r, &i) in active.iter().enumerate() {
        out[2 * r] = f[i].re;
        out[2 * r + 1] = f[i].im;
    }
    Ok(out)
}

/// Solve the power flow from a flat start (all voltages at `slack_voltage`).
pub fn solve_power_flow(
    grid: &GridModel,
    injections: &ComplexVec,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let flat = ComplexVec::constant(grid.n_buses(), opts.slack_voltage);
    solve_power_flow_from(grid, injections, &flat, opts)
}

/// Solve the power flow starting from `initial` (used for warm starts).
/// The slack entry of `injections` is ignored and back-computed.
pub fn solve_power_flow_from(
    grid: &GridModel,
    injections: &ComplexVec,
    initial: &ComplexVec,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = grid.n_buses();
    if injections.len() != n {
        return Err(Error::DimensionMismatch {
            what: "power flow injections",
            expected: n,
            got: injections.len(),
        });
    }
    if initial.len() != n {
        return Err(Error::DimensionMismatch {
            what: "power flow initial guess",
            expected: n,
            got: initial.len(),
        });
    }
    let slack = grid.slack_index();
    let active: Vec<usize> = (0..n).filter(|&i| i != slack).collect();

    let mut v: Vec<Complex64> = initial.to_vec();
    v[slack] = opts.slack_voltage;
    let mut v = ComplexVec::new(v)?;

    let mut mismatch = stacked_residual(grid, injections, &v, &active)?;
    let mut norm = mismatch.amax();
    let mut iterations = 0;

    while norm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let jac = residual_jacobian(grid, &v, &active);
        let lu = jac.lu();
        let delta = lu
            .solve(&(-&mismatch))
            .ok_or(Error::SingularJacobian("power flow"))?;
        let mut next: Vec<Complex64> = v.to_vec();
        for (k, &i) in active.iter().enumerate() {
            next[i] += Complex64::new(delta[2 * k], delta[2 * k + 1]);
        }
        v = ComplexVec::new(next)?;
        mismatch = stacked_residual(grid, injections, &v, &active)?;
        norm = mismatch.amax();
        iterations += 1;
    }

    // Back-compute the slack injection so the returned pair satisfies the
    // power-flow equations at every bus.
    let s_full = grid.pfe_injections(&v)?;
    let mut s_out: Vec<Complex64> = injections.to_vec();
    s_out[slack] = s_full[slack];

    Ok(PowerFlowSolution {
        v,
        injections: ComplexVec::new(s_out)?,
        iterations,
        final_mismatch: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, BranchList};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus_conductance() -> GridModel {
        let branches = BranchList::new(vec![Branch {
            from: 0,
            to: 1,
            series: c(1.0, 0.0),
            shunt_half: c(0.0, 0.0),
        }]);
        GridModel::from_branches(&branches, 2, 0, 4.8, 2.5).unwrap()
    }

    #[test]
    fn two_bus_closed_form() {
        let grid = two_bus_conductance();
        let s = ComplexVec::new(vec![c(0.0, 0.0), c(-0.1, 0.0)]).unwrap();
        let sol = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap();
        let expected = (1.0 + 0.6f64.sqrt()) / 2.0;
        assert!((sol.v[1].re - expected).abs() < 1e-10, "v2 = {}", sol.v[1]);
        assert!(sol.v[1].im.abs() < 1e-10);
        // slack injection balances the line flow
        assert!((sol.injections[0] - c(1.0 - expected, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn zero_injections_flat_profile() {
        let grid = crate::cases::ieee37().unwrap();
        let s = ComplexVec::zeros(36);
        let sol = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap();
        for i in 0..36 {
            assert!((sol.v[i] - c(1.0, 0.0)).norm() < 1e-12);
        }
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn round_trip_injections() {
        let grid = crate::cases::ieee37().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s: ComplexVec = (0..36)
            .map(|i| {
                if i == 0 {
                    c(0.0, 0.0)
                } else {
                    c(
                        rng.random_range(-0.05..0.0),
                        rng.random_range(-0.02..0.0),
                    )
                }
            })
            .collect();
        let sol = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap();
        let f = grid.pfe_residual(&sol.injections, &sol.v).unwrap();
        assert!(f.norm_inf() < 1e-9, "residual {}", f.norm_inf());
        assert!(sol.iterations <= 10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = crate::cases::case4().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let v: ComplexVec = (0..4)
                .map(|_| {
                    c(
                        1.0 + rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    )
                })
                .collect();
            let jac = pf_jacobian(&grid, &v).unwrap();
            let fd = fd_jacobian(&grid, &v);
            let denom = jac.amax().max(1.0);
            let diff = (&jac - &fd).amax();
            assert!(diff / denom < 1e-6, "fd mismatch {diff:.3e}");
        }
    }

    fn fd_jacobian(grid: &GridModel, v: &ComplexVec) -> DMatrix<f64> {
        let active: Vec<usize> = (0..grid.n_buses())
            .filter(|&i| i != grid.slack_index())
            .collect();
        let s = ComplexVec::zeros(grid.n_buses());
        let h = 1e-6;
        let m = active.len();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for (col, &j) in active.iter().enumerate() {
            for part in 0..2 {
                let mut plus = v.to_vec();
                let mut minus = v.to_vec();
                if part == 0 {
                    plus[j] += c(h, 0.0);
                    minus[j] -= c(h, 0.0);
                } else {
                    plus[j] += c(0.0, h);
                    minus[j] -= c(0.0, h);
                }
                let rp = stacked_residual(grid, &s, &ComplexVec::new(plus).unwrap(), &active)
                    .unwrap();
                let rm = stacked_residual(grid, &s, &ComplexVec::new(minus).unwrap(), &active)
                    .unwrap();
                let d = (rp - rm) / (2.0 * h);
                out.set_column(2 * col + part, &d);
            }
        }
        out
    }

    #[test]
    fn two_bus_symbolic_entry() {
        // At a real operating point on a conductance-only network,
        // d(Re f_1)/d(Re v_1) = -(2 Re v_1 G_11 + Re(sum_{j!=1} Y_1j v_j)).
        let grid = two_bus_conductance();
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.97, 0.0)]).unwrap();
        let jac = pf_jacobian(&grid, &v).unwrap();
        let g11 = grid.y(1, 1).re;
        let expected = -(2.0 * v[1].re * g11 + (grid.y(1, 0) * v[0]).re);
        assert!((jac[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn decoupled_islands_block_diagonal() {
        // Two identical 2-bus islands glued into one 4-bus admittance matrix.
        let y2 = [c(1.5, -0.5), c(-1.5, 0.5), c(-1.5, 0.5), c(1.5, -0.5)];
        let mut y = vec![c(0.0, 0.0); 16];
        for i in 0..2 {
            for j in 0..2 {
                y[i * 4 + j] = y2[i * 2 + j];
                y[(i + 2) * 4 + (j + 2)] = y2[i * 2 + j];
            }
        }
        let grid = GridModel::from_admittance(4, 0, y, 4.8, 2.5).unwrap();
        let v = ComplexVec::new(vec![
            c(1.0, 0.0),
            c(0.98, -0.01),
            c(1.0, 0.0),
            c(0.98, -0.01),
        ])
        .unwrap();
        // Active buses are 1, 2, 3; bus 1 is in island 0, buses 2-3 in island 1.
        let jac = pf_jacobian(&grid, &v).unwrap();
        for r in 0..2 {
            for cidx in 2..6 {
                assert_eq!(jac[(r, cidx)], 0.0);
                assert_eq!(jac[(cidx, r)], 0.0);
            }
        }
    }

    #[test]
    fn deterministic_given_inputs() {
        let grid = crate::cases::ieee37().unwrap();
        let s: ComplexVec = (0..36)
            .map(|i| c(-(i as f64) * 1e-3, -(i as f64) * 4e-4))
            .collect();
        let a = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap();
        let b = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap();
        assert_eq!(a.v.to_vec(), b.v.to_vec());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn nonconvergence_reported() {
        let grid = two_bus_conductance();
        // Load far beyond the feeder's deliverable power: no real solution.
        let s = ComplexVec::new(vec![c(0.0, 0.0), c(-10.0, 0.0)]).unwrap();
        let err = solve_power_flow(&grid, &s, &PowerFlowOptions::default()).unwrap_err();
        match err {
            Error::NonConvergence { .. } | Error::SingularJacobian(_) => {}
            other => panic!("unexpected error {other:?}"),
        }
    }
}
