//! Physics-informed training loss.
//!
//! `L = ||v_std - v_hat_std||^2 + lambda * ||s - diag(v_hat) Y* v_hat*||^2`
//!
//! The squared-error term lives in standardized space (where the network
//! operates); the power-flow penalty is evaluated in physical per-unit space
//! after inverting the voltage scaler, because the power-flow equations only
//! hold for physical quantities. Gradients flow through the affine scaler
//! inversion. `||z||^2` over a complex vector means `sum_i |z_i|^2`, which
//! equals the sum of squares of the interleaved real components.

use ndarray::Array2;
use num_complex::Complex64;

use crate::grid::{ComplexVec, GridModel};
use crate::standardize::Standardizer;
use crate::{Error, Result};

/// Invert the voltage-block scaler and pair into complex phasors.
pub fn destandardize_voltage(v_std: &[f64], voltage_scaler: &Standardizer) -> Result<ComplexVec> {
    let phys = voltage_scaler.invert(v_std)?;
    ComplexVec::from_flat(&phys)
}

/// Squared power-flow residual of the (physical) estimate against the true
/// injections, plus its gradient with respect to the flattened physical
/// voltage coordinates.
fn physics_term(
    grid: &GridModel,
    s_true: &ComplexVec,
    v_hat_phys: &ComplexVec,
) -> Result<(f64, Vec<f64>)> {
    let n = grid.n_buses();
    let r = grid.pfe_residual(s_true, v_hat_phys)?;
    let value = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let (d_re, d_im) = grid.injection_derivatives(v_hat_phys);
    let mut grad = vec![0.0; 2 * n];
    for j in 0..n {
        let mut g_re = 0.0;
        let mut g_im = 0.0;
        for i in 0..n {
            // d|r_i|^2/dx = -2 Re(conj(r_i) dS_i/dx)
            let rc = r[i].conj();
            g_re += (rc * d_re[i * n + j]).re;
            g_im += (rc * d_im[i * n + j]).re;
        }
        grad[2 * j] = -2.0 * g_re;
        grad[2 * j + 1] = -2.0 * g_im;
    }
    Ok((value, grad))
}

/// Loss for one example. `v_true_std` and `v_hat_std` are the standardized
/// 2N-vectors; `voltage_scaler` covers the 2N voltage features.
pub fn pi_loss(
    grid: &GridModel,
    s_true: &ComplexVec,
    v_true_std: &[f64],
    v_hat_std: &[f64],
    lambda: f64,
    voltage_scaler: &Standardizer,
) -> Result<f64> {
    let (value, _) = pi_loss_grad(grid, s_true, v_true_std, v_hat_std, lambda, voltage_scaler)?;
    Ok(value)
}

/// Loss and its gradient with respect to `v_hat_std` for one example.
pub fn pi_loss_grad(
    grid: &GridModel,
    s_true: &ComplexVec,
    v_true_std: &[f64],
    v_hat_std: &[f64],
    lambda: f64,
    voltage_scaler: &Standardizer,
) -> Result<(f64, Vec<f64>)> {
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let dim = 2 * grid.n_buses();
    if v_true_std.len() != dim || v_hat_std.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "pi_loss voltage vectors",
            expected: dim,
            got: v_true_std.len().min(v_hat_std.len()),
        });
    }

    let mut term1 = 0.0;
    let mut grad: Vec<f64> = vec![0.0; dim];
    for k in 0..dim {
        let d = v_hat_std[k] - v_true_std[k];
        term1 += d * d;
        grad[k] = 2.0 * d;
    }

    let mut value = term1;
    if lambda > 0.0 {
        let v_phys = destandardize_voltage(v_hat_std, voltage_scaler)?;
        let (term2, g_phys) = physics_term(grid, s_true, &v_phys)?;
        value += lambda * term2;
        let sigma = voltage_scaler.std();
        for k in 0..dim {
            // chain rule through v_phys = v_std * sigma + mu
            grad[k] += lambda * g_phys[k] * sigma[k];
        }
    }
    Ok((value, grad))
}

/// Mean loss over a batch of standardized outputs plus dL/d(output).
/// `targets` pairs each output row with its standardized true voltage and
/// the true injections.
pub fn batch_loss_grad(
    grid: &GridModel,
    v_hat_std: &Array2<f64>,
    targets: &[(&[f64], &ComplexVec)],
    lambda: f64,
    voltage_scaler: &Standardizer,
) -> Result<(f64, Array2<f64>)> {
    let batch = v_hat_std.nrows();
    if targets.len() != batch {
        return Err(Error::DimensionMismatch {
            what: "batch targets",
            expected: batch,
            got: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(v_hat_std.dim());
    let scale = 1.0 / batch as f64;
    for (b, (v_true_std, s_true)) in targets.iter().enumerate() {
        let row: Vec<f64> = v_hat_std.row(b).to_vec();
        let (value, g) = pi_loss_grad(grid, s_true, v_true_std, &row, lambda, voltage_scaler)?;
        total += value * scale;
        for (k, gk) in g.iter().enumerate() {
            grad[(b, k)] = gk * scale;
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, BranchList};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus() -> GridModel {
        let branches = BranchList::new(vec![Branch {
            from: 0,
            to: 1,
            series: c(1.0, 0.0),
            shunt_half: c(0.0, 0.0),
        }]);
        GridModel::from_branches(&branches, 2, 0, 4.8, 2.5).unwrap()
    }

    #[test]
    fn hand_evaluated_loss() {
        let grid = two_bus();
        let scaler = Standardizer::identity(4);
        let v2 = (1.0 + 0.6f64.sqrt()) / 2.0;
        let v_true = [1.0, 0.0, v2, 0.0];
        let s_true = ComplexVec::new(vec![c(1.0 - v2, 0.0), c(-0.1, 0.0)]).unwrap();
        let v_hat = [1.0, 0.0, 0.9, 0.0];

        let term1 = (0.9 - v2) * (0.9 - v2);
        // residual at v_hat = [1, 0.9]: s(v_hat) = [0.1, -0.09]
        let r1 = (1.0 - v2) - 0.1;
        let r2 = -0.1 + 0.09;
        let term2 = r1 * r1 + r2 * r2;

        let loss = pi_loss(&grid, &s_true, &v_true, &v_hat, 2.0, &scaler).unwrap();
        assert!((loss - (term1 + 2.0 * term2)).abs() < 1e-15);
        assert!((loss - 6.8394e-4).abs() < 1e-7);

        let loss0 = pi_loss(&grid, &s_true, &v_true, &v_hat, 0.0, &scaler).unwrap();
        assert!((loss0 - term1).abs() < 1e-15);
        assert!((loss0 - 1.6133e-4).abs() < 1e-7);
    }

    #[test]
    fn zero_at_consistent_truth() {
        let grid = two_bus();
        let scaler = Standardizer::identity(4);
        let v = ComplexVec::new(vec![c(1.0, 0.0), c(0.95, -0.01)]).unwrap();
        let s = grid.pfe_injections(&v).unwrap();
        let flat = v.flatten();
        for lambda in [0.0, 1.0, 2.0, 20.0] {
            let loss = pi_loss(&grid, &s, &flat, &flat, lambda, &scaler).unwrap();
            assert!(loss < 1e-24);
        }
    }

    #[test]
    fn monotone_in_lambda() {
        let grid = two_bus();
        let scaler = Standardizer::identity(4);
        let v_true = [1.0, 0.0, 0.95, 0.0];
        let s_true = ComplexVec::new(vec![c(0.05, 0.0), c(-0.05, 0.0)]).unwrap();
        let v_hat = [1.0, 0.01, 0.93, -0.02];
        let mut prev = -1.0;
        for lambda in [0.0, 1.0, 2.0, 20.0] {
            let loss = pi_loss(&grid, &s_true, &v_true, &v_hat, lambda, &scaler).unwrap();
            assert!(loss >= prev);
            prev = loss;
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let grid = two_bus();
        let scaler = Standardizer::identity(4);
        let s = ComplexVec::zeros(2);
        assert!(pi_loss(&grid, &s, &[0.0; 4], &[0.0; 4], -1.0, &scaler).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_through_scaler() {
        // Non-identity scaler so the chain rule through the inversion is
        // exercised.
        let grid = two_bus();
        let rows = [
            [0.9, -0.02, 0.88, -0.05],
            [1.1, 0.02, 0.98, 0.01],
            [1.0, 0.0, 0.93, -0.02],
        ];
        let scaler = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let s_true = ComplexVec::new(vec![c(0.06, 0.01), c(-0.055, -0.01)]).unwrap();
        let v_true_std = [0.3, -0.4, 0.2, 0.9];
        let v_hat_std = [0.1, 0.5, -0.3, 0.4];
        let lambda = 2.0;
        let (_, grad) =
            pi_loss_grad(&grid, &s_true, &v_true_std, &v_hat_std, lambda, &scaler).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut p = v_hat_std;
            let mut m = v_hat_std;
            p[k] += h;
            m[k] -= h;
            let lp = pi_loss(&grid, &s_true, &v_true_std, &p, lambda, &scaler).unwrap();
            let lm = pi_loss(&grid, &s_true, &v_true_std, &m, lambda, &scaler).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-7 * fd.abs().max(1.0),
                "coord {k}: fd {fd} vs {}",
                grad[k]
            );
        }
    }
}
