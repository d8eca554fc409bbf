//! Damped Gauss-Newton (Levenberg-Marquardt) solver for weighted nonlinear
//! least squares, `min 0.5 * sum_k w_k r_k(x)^2`.
//!
//! Damping follows the gain-ratio scheme: the initial damping is a fraction
//! of the largest normal-matrix diagonal, rejected steps grow it by a fixed
//! factor, accepted steps shrink it based on how well the quadratic model
//! predicted the actual reduction. A step with a gain ratio of exactly one
//! (affine residuals) drops the damping to zero, so linear problems finish
//! with a pure Gauss-Newton step.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the infinity norm of the weighted gradient J^T W r drops
    /// below this.
    pub gradient_tolerance: f64,
    /// Stop when the proposed step is this small relative to |x|.
    pub step_tolerance: f64,
    /// Initial damping = factor * max diag(J^T W J).
    pub damping_init_factor: f64,
    /// Damping growth on rejected steps.
    pub damping_growth: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            damping_init_factor: 1e-3,
            damping_growth: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    /// Accepted steps taken.
    pub iterations: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

fn weighted_objective(r: &DVector<f64>, w: &[f64]) -> f64 {
    0.5 * r
        .iter()
        .zip(w)
        .map(|(ri, wi)| wi * ri * ri)
        .sum::<f64>()
}

/// Minimize `0.5 * sum w_k r_k(x)^2` starting from `x0`.
///
/// `weights` has one entry per residual row. Returns after the gradient or
/// step tolerance is met, or after `max_iterations`; the objective never
/// increases across accepted steps.
pub fn levenberg_marquardt<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    x0: DVector<f64>,
    weights: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let n = x0.len();
    let mut x = x0;
    let mut r = residual_fn(&x)?;
    if r.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            what: "LM residual/weights",
            expected: weights.len(),
            got: r.len(),
        });
    }
    let mut objective = weighted_objective(&r, weights);

    // A = J^T W J, g = J^T W r
    let normal = |jac: &DMatrix<f64>, r: &DVector<f64>| {
        let mut jw = jac.clone();
        for (k, &wk) in weights.iter().enumerate() {
            jw.row_mut(k).scale_mut(wk);
        }
        let a = jac.transpose() * &jw;
        let g = jw.transpose() * r;
        (a, g)
    };

    let mut jac = jacobian_fn(&x)?;
    let (mut a, mut g) = normal(&jac, &r);
    let max_diag = |a: &DMatrix<f64>| a.diagonal().amax().max(f64::MIN_POSITIVE);
    let seed_mu = opts.damping_init_factor * max_diag(&a);
    let mut mu = seed_mu;
    let mut iterations = 0usize;

    for _ in 0..opts.max_iterations {
        if g.amax() <= opts.gradient_tolerance {
            break;
        }
        let mut augmented = a.clone();
        for i in 0..n {
            augmented[(i, i)] += mu;
        }
        let delta = match augmented.lu().solve(&(-&g)) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                // Singular or non-finite solve: raise damping and retry.
                mu = if mu == 0.0 { seed_mu } else { mu * opts.damping_growth };
                if mu > 1e32 * max_diag(&a) {
                    return Err(Error::SingularAtMaxDamping { mu });
                }
                continue;
            }
        };
        if delta.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
            break;
        }

        let x_new = &x + &delta;
        let r_new = residual_fn(&x_new)?;
        let obj_new = weighted_objective(&r_new, weights);
        // Model reduction L(0) - L(delta) = 0.5 delta^T (mu delta - g) > 0.
        let predicted = 0.5 * delta.dot(&(&delta * mu - &g));

        if obj_new.is_finite() && obj_new < objective {
            let gain = if predicted > 0.0 {
                (objective - obj_new) / predicted
            } else {
                0.5
            };
            x = x_new;
            r = r_new;
            objective = obj_new;
            jac = jacobian_fn(&x)?;
            let (a2, g2) = normal(&jac, &r);
            a = a2;
            g = g2;
            iterations += 1;
            if gain >= 1.0 - 1e-12 {
                // Quadratic model was exact: next step is pure Gauss-Newton.
                mu = 0.0;
            } else {
                mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
            }
        } else {
            mu = if mu == 0.0 { seed_mu } else { mu * opts.damping_growth };
            if mu > 1e32 * max_diag(&a) {
                return Err(Error::SingularAtMaxDamping { mu });
            }
        }
    }

    Ok(LmOutcome {
        gradient_norm: g.amax(),
        x,
        iterations,
        objective,
    })
}
