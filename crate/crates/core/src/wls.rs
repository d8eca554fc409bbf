//! Weighted-least-squares baseline estimator.
//!
//! Missing power phasors at the estimation step are completed by persistence
//! (their last known values), every bus gets an inverse-fluctuation weight
//! from the history window, and a Levenberg-Marquardt solver minimizes the
//! weighted power-flow residual over the rectangular voltages of all buses,
//! starting from the previous step's voltages.
//!
//! The power-flow equations are invariant under a global phase rotation, so
//! the residual rows alone leave one direction undetermined. A single anchor
//! row pins the slack bus's imaginary voltage to zero (the reference angle is
//! known by convention), which restores full rank without perturbing any
//! power-consistent solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::{ComplexVec, GridModel, ObservabilityMask};
use crate::lm::{levenberg_marquardt, LmOptions};
use crate::pipeline::SequenceView;
use crate::powerflow::residual_jacobian;
use crate::{Error, Result};

/// Weight floor: buses whose power history never fluctuates (for example
/// zero-injection buses) are the most trustworthy and carry the largest
/// finite weight, 1/denominator with the denominator floored here.
pub const WEIGHT_DENOM_FLOOR: f64 = 1e-6;

/// Per-bus inverse-fluctuation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsWeights {
    pub w: Vec<f64>,
}

/// Complete the estimation-step power vector: observed entries come from the
/// measurement, unobserved ones are copied from the previous step.
///
/// `measured` entries at unobserved buses are never read.
pub fn persistence_complete(
    measured: &ComplexVec,
    previous: &ComplexVec,
    mask: &ObservabilityMask,
) -> Result<ComplexVec> {
    let n = mask.n_buses();
    if measured.len() != n || previous.len() != n {
        return Err(Error::DimensionMismatch {
            what: "persistence_complete vectors",
            expected: n,
            got: measured.len().min(previous.len()),
        });
    }
    Ok((0..n)
        .map(|i| {
            if mask.power_observed[i] {
                measured[i]
            } else {
                previous[i]
            }
        })
        .collect())
}

/// `W_i = 1 / (std(Re s_i) + std(Im s_i))` over the history window,
/// population convention, denominator floored at [`WEIGHT_DENOM_FLOOR`].
pub fn compute_weights(history_powers: &[&ComplexVec]) -> Result<WlsWeights> {
    if history_powers.len() < 2 {
        return Err(Error::invalid(
            "weight computation needs at least two history frames",
        ));
    }
    let n = history_powers[0].len();
    for f in history_powers {
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                what: "weight history frame",
                expected: n,
                got: f.len(),
            });
        }
    }
    let count = history_powers.len() as f64;
    let std_of = |extract: &dyn Fn(&Complex64) -> f64, i: usize| {
        let mean = history_powers.iter().map(|f| extract(&f[i])).sum::<f64>() / count;
        let var = history_powers
            .iter()
            .map(|f| {
                let d = extract(&f[i]) - mean;
                d * d
            })
            .sum::<f64>()
            / count;
        var.sqrt()
    };
    let w = (0..n)
        .map(|i| {
            let denom = std_of(&|z| z.re, i) + std_of(&|z| z.im, i);
            1.0 / denom.max(WEIGHT_DENOM_FLOOR)
        })
        .collect();
    Ok(WlsWeights { w })
}

/// WLS objective `F = 0.5 sum_i W_i (Re f_i^2 + Im f_i^2)` with `f` the
/// power-flow residual of `(s_hat, v_hat)`.
pub fn wls_objective(
    v_hat: &ComplexVec,
    s_hat: &ComplexVec,
    grid: &GridModel,
    weights: &WlsWeights,
) -> Result<f64> {
    let f = grid.pfe_residual(s_hat, v_hat)?;
    Ok(0.5
        * f.iter()
            .zip(&weights.w)
            .map(|(fi, wi)| wi * (fi.re * fi.re + fi.im * fi.im))
            .sum::<f64>())
}

/// Residual rows fed to the LM solver: `[Re f_i, Im f_i]` for every bus plus
/// the reference-angle anchor row `Im v_slack`.
fn wls_residual(grid: &GridModel, s_hat: &ComplexVec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let v = ComplexVec::from_flat(x.as_slice())?;
    let f = grid.pfe_residual(s_hat, &v)?;
    let n = grid.n_buses();
    let mut out = DVector::zeros(2 * n + 1);
    for i in 0..n {
        out[2 * i] = f[i].re;
        out[2 * i + 1] = f[i].im;
    }
    out[2 * n] = v[grid.slack_index()].im;
    Ok(out)
}

/// Analytic Jacobian of [`wls_residual`], shape (2N + 1) x 2N.
fn wls_jacobian(grid: &GridModel, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let v: Vec<Complex64> = x
        .as_slice()
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let n = grid.n_buses();
    let all: Vec<usize> = (0..n).collect();
    let core = residual_jacobian(grid, &v, &all);
    let mut jac = DMatrix::zeros(2 * n + 1, 2 * n);
    jac.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&core);
    jac[(2 * n, 2 * grid.slack_index() + 1)] = 1.0;
    Ok(jac)
}

/// Estimate the voltage phasors of one sequence's masked step.
pub fn wls_estimate(
    grid: &GridModel,
    seq: &SequenceView<'_>,
    mask: &ObservabilityMask,
) -> Result<ComplexVec> {
    wls_estimate_with(grid, seq, mask, &LmOptions::default())
}

pub fn wls_estimate_with(
    grid: &GridModel,
    seq: &SequenceView<'_>,
    mask: &ObservabilityMask,
    opts: &LmOptions,
) -> Result<ComplexVec> {
    let (s_prev, v_prev) = seq.prev();
    let s_hat = persistence_complete(seq.target_s(), s_prev, mask)?;
    let history: Vec<&ComplexVec> = seq.history().map(|(s, _)| s).collect();
    let weights = compute_weights(&history)?;

    // One weight per residual row: W_i for the Re and Im rows of bus i, and
    // the largest bus weight for the reference-angle anchor.
    let mut row_weights = Vec::with_capacity(2 * grid.n_buses() + 1);
    for &wi in &weights.w {
        row_weights.push(wi);
        row_weights.push(wi);
    }
    let anchor = weights.w.iter().cloned().fold(1.0f64, f64::max);
    row_weights.push(anchor);

    let x0 = DVector::from_vec(v_prev.flatten());
    let outcome = levenberg_marquardt(
        |x| wls_residual(grid, &s_hat, x),
        |x| wls_jacobian(grid, x),
        x0,
        &row_weights,
        opts,
    )?;
    ComplexVec::from_flat(outcome.x.as_slice())
}
