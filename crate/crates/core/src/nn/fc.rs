//! Fully connected layers with hand-derived backward passes.
//!
//! All activations are hyperbolic tangent; regression outputs use a linear
//! final layer. Batches are row-major: one example per row.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcLayer {
    /// Weight matrix, shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Apply tanh after the affine map.
    pub tanh: bool,
}

pub struct FcCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

impl FcLayer {
    pub fn zeros(input: usize, output: usize, tanh: bool) -> Self {
        FcLayer {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
            tanh,
        }
    }

    /// Uniform init in +-1/sqrt(fan_in), zero bias.
    pub fn init(input: usize, output: usize, tanh: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = Array2::from_shape_fn((output, input), |_| rng.random_range(-bound..bound));
        FcLayer {
            w,
            b: Array1::zeros(output),
            tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Forward over a batch (rows are examples), returning the output and the
    /// cache needed for the backward pass.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, FcCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "fc layer input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        if self.tanh {
            y.mapv_inplace(f64::tanh);
        }
        Ok((
            y.clone(),
            FcCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    /// Backward: given dL/dy, return dL/dx and accumulate parameter
    /// gradients into `grad`.
    pub fn backward(
        &self,
        cache: &FcCache,
        grad_out: &Array2<f64>,
        grad: &mut FcLayer,
    ) -> Array2<f64> {
        let pre_grad = if self.tanh {
            let mut g = grad_out.clone();
            g.zip_mut_with(&cache.output, |gi, &yi| *gi *= 1.0 - yi * yi);
            g
        } else {
            grad_out.clone()
        };
        grad.w += &pre_grad.t().dot(&cache.input);
        grad.b += &pre_grad.sum_axis(Axis(0));
        pre_grad.dot(&self.w)
    }
}

/// A stack of FC layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcStack {
    pub layers: Vec<FcLayer>,
}

pub struct FcStackCache {
    caches: Vec<FcCache>,
}

impl FcStack {
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, FcStackCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, FcStackCache { caches }))
    }

    pub fn backward(
        &self,
        cache: &FcStackCache,
        grad_out: &Array2<f64>,
        grad: &mut FcStack,
    ) -> Array2<f64> {
        let mut g = grad_out.clone();
        for ((layer, lc), gl) in self
            .layers
            .iter()
            .zip(&cache.caches)
            .zip(&mut grad.layers)
            .rev()
        {
            g = layer.backward(lc, &g, gl);
        }
        g
    }

    pub fn zeros_like(&self) -> FcStack {
        FcStack {
            layers: self
                .layers
                .iter()
                .map(|l| FcLayer::zeros(l.input_dim(), l.output_dim(), l.tanh))
                .collect(),
        }
    }
}
