//! Neural estimator: an LSTM feature extractor over the fully observable
//! history, an FC feature extractor over the partial frame, and a regressor
//! that scales and shifts a base estimate into the final voltage vector.
//! Training minimizes the squared voltage error plus a weighted power-flow
//! residual penalty, with gradients from the hand-derived backward passes in
//! this module (no autodiff framework).

pub mod adam;
pub mod checkpoint;
pub mod fc;
pub mod loss;
pub mod lstm;
pub mod train;

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use fc::{FcLayer, FcStack, FcStackCache};
use lstm::{LstmCache, LstmLayer};

pub use train::{predict, train, TrainConfig, TrainedModel};

/// Layer sizes derived from the bus count and the masked-frame observable
/// counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnnArchitecture {
    pub n_buses: usize,
    pub n_s: usize,
    pub n_v: usize,
    /// History feature size, ceil(N/3).
    pub fo_feature_dim: usize,
    /// Partial-frame feature size, ceil(N/6).
    pub po_feature_dim: usize,
    /// Concatenated feature size.
    pub joint_dim: usize,
    /// First LSTM hidden size, 2N.
    pub lstm1_hidden: usize,
    /// Regressor output size, 2N.
    pub output_dim: usize,
}

impl DnnArchitecture {
    pub fn new(n_buses: usize, n_s: usize, n_v: usize) -> Result<Self> {
        if n_buses == 0 {
            return Err(Error::invalid("n_buses must be positive"));
        }
        if n_s > n_buses || n_v > n_buses {
            return Err(Error::invalid(format!(
                "observable counts ({n_s}, {n_v}) exceed n_buses {n_buses}"
            )));
        }
        if n_s + n_v == 0 {
            return Err(Error::invalid(
                "the partial frame must contain at least one observed phasor",
            ));
        }
        let fo = n_buses.div_ceil(3);
        let po = n_buses.div_ceil(6);
        Ok(DnnArchitecture {
            n_buses,
            n_s,
            n_v,
            fo_feature_dim: fo,
            po_feature_dim: po,
            joint_dim: fo + po,
            lstm1_hidden: 2 * n_buses,
            output_dim: 2 * n_buses,
        })
    }

    /// Length of one history frame row: 2N power + 2N voltage features.
    pub fn frame_dim(&self) -> usize {
        4 * self.n_buses
    }

    /// Length of the partial-frame input row.
    pub fn po_input_dim(&self) -> usize {
        2 * (self.n_s + self.n_v)
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnParams {
    /// 4N -> 2N, emits the full hidden sequence.
    pub lstm1: LstmLayer,
    /// 2N -> ceil(N/3), only the final hidden state is used.
    pub lstm2: LstmLayer,
    /// 2(Ns+Nv) -> 2(Ns+Nv) -> ceil(N/6), tanh throughout.
    pub po_fc: FcStack,
    /// joint -> four ceil(N/2) tanh layers -> 2N linear.
    pub base_fc: FcStack,
    /// joint -> 2N linear (elementwise scale coefficients).
    pub scale_fc: FcStack,
    /// joint -> 2N linear (elementwise shift coefficients).
    pub shift_fc: FcStack,
}

impl DnnParams {
    pub fn init(arch: &DnnArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.n_buses;
        let hidden = n.div_ceil(2);
        let po_in = arch.po_input_dim();
        DnnParams {
            lstm1: LstmLayer::init(arch.frame_dim(), arch.lstm1_hidden, &mut rng),
            lstm2: LstmLayer::init(arch.lstm1_hidden, arch.fo_feature_dim, &mut rng),
            po_fc: FcStack {
                layers: vec![
                    FcLayer::init(po_in, po_in, true, &mut rng),
                    FcLayer::init(po_in, arch.po_feature_dim, true, &mut rng),
                ],
            },
            base_fc: FcStack {
                layers: vec![
                    FcLayer::init(arch.joint_dim, hidden, true, &mut rng),
                    FcLayer::init(hidden, hidden, true, &mut rng),
                    FcLayer::init(hidden, hidden, true, &mut rng),
                    FcLayer::init(hidden, hidden, true, &mut rng),
                    FcLayer::init(hidden, arch.output_dim, false, &mut rng),
                ],
            },
            scale_fc: FcStack {
                layers: vec![FcLayer::init(arch.joint_dim, arch.output_dim, false, &mut rng)],
            },
            shift_fc: FcStack {
                layers: vec![FcLayer::init(arch.joint_dim, arch.output_dim, false, &mut rng)],
            },
        }
    }

    pub fn zeros_like(&self) -> DnnParams {
        let zero_lstm = |l: &LstmLayer| LstmLayer::zeros(l.input_dim(), l.hidden_dim());
        DnnParams {
            lstm1: zero_lstm(&self.lstm1),
            lstm2: zero_lstm(&self.lstm2),
            po_fc: self.po_fc.zeros_like(),
            base_fc: self.base_fc.zeros_like(),
            scale_fc: self.scale_fc.zeros_like(),
            shift_fc: self.shift_fc.zeros_like(),
        }
    }

    /// Flat views of every tensor, in a fixed traversal order shared with
    /// [`DnnParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in [&self.lstm1, &self.lstm2] {
            for g in [&l.input_gate, &l.forget_gate, &l.cell_gate, &l.output_gate] {
                out.push(g.w_x.as_slice().expect("contiguous"));
                out.push(g.w_h.as_slice().expect("contiguous"));
                out.push(g.b.as_slice().expect("contiguous"));
            }
        }
        for stack in [&self.po_fc, &self.base_fc, &self.scale_fc, &self.shift_fc] {
            for layer in &stack.layers {
                out.push(layer.w.as_slice().expect("contiguous"));
                out.push(layer.b.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in [&mut self.lstm1, &mut self.lstm2] {
            for g in [
                &mut l.input_gate,
                &mut l.forget_gate,
                &mut l.cell_gate,
                &mut l.output_gate,
            ] {
                out.push(g.w_x.as_slice_mut().expect("contiguous"));
                out.push(g.w_h.as_slice_mut().expect("contiguous"));
                out.push(g.b.as_slice_mut().expect("contiguous"));
            }
        }
        for stack in [
            &mut self.po_fc,
            &mut self.base_fc,
            &mut self.scale_fc,
            &mut self.shift_fc,
        ] {
            for layer in &mut stack.layers {
                out.push(layer.w.as_slice_mut().expect("contiguous"));
                out.push(layer.b.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Model = architecture + parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub arch: DnnArchitecture,
    pub params: DnnParams,
}

pub struct ModelCache {
    lstm1: LstmCache,
    lstm2: LstmCache,
    po: FcStackCache,
    base: FcStackCache,
    scale: FcStackCache,
    shift: FcStackCache,
    n_steps: usize,
    batch: usize,
    v_tilde: Array2<f64>,
    w_coef: Array2<f64>,
}

impl DnnModel {
    pub fn init(arch: DnnArchitecture, seed: u64) -> Self {
        DnnModel {
            params: DnnParams::init(&arch, seed),
            arch,
        }
    }

    /// Joint feature vector: LSTM features of the history concatenated with
    /// FC features of the partial frame.
    pub fn feature_extract(
        &self,
        fo_seq: &[Array2<f64>],
        po: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let (h, _) = self.feature_extract_cached(fo_seq, po)?;
        Ok(h)
    }

    fn feature_extract_cached(
        &self,
        fo_seq: &[Array2<f64>],
        po: &Array2<f64>,
    ) -> Result<(Array2<f64>, (LstmCache, LstmCache, FcStackCache))> {
        if po.ncols() != self.arch.po_input_dim() {
            return Err(Error::DimensionMismatch {
                what: "partial-frame input",
                expected: self.arch.po_input_dim(),
                got: po.ncols(),
            });
        }
        let (hs1, c1) = self.params.lstm1.forward(fo_seq)?;
        let (hs2, c2) = self.params.lstm2.forward(&hs1)?;
        let h_fo = hs2.last().expect("nonempty sequence").clone();
        let (h_po, cp) = self.params.po_fc.forward(po)?;
        let batch = h_fo.nrows();
        let mut h = Array2::zeros((batch, self.arch.joint_dim));
        h.slice_mut(s![.., ..self.arch.fo_feature_dim]).assign(&h_fo);
        h.slice_mut(s![.., self.arch.fo_feature_dim..]).assign(&h_po);
        Ok((h, (c1, c2, cp)))
    }

    /// Regressor: `v_hat = w .* v_tilde + b` with all three heads computed
    /// from the joint feature vector.
    pub fn regress(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        let (v_tilde, _) = self.params.base_fc.forward(h)?;
        let (w_coef, _) = self.params.scale_fc.forward(h)?;
        let (b_coef, _) = self.params.shift_fc.forward(h)?;
        Ok(&w_coef * &v_tilde + &b_coef)
    }

    /// Full forward pass over a batch. `fo_seq` holds T-1 standardized
    /// history frames (each batch x 4N), `po` the standardized partial frame
    /// (batch x 2(Ns+Nv)). Returns the standardized voltage estimate
    /// (batch x 2N).
    pub fn forward(
        &self,
        fo_seq: &[Array2<f64>],
        po: &Array2<f64>,
    ) -> Result<(Array2<f64>, ModelCache)> {
        let (h, (lstm1, lstm2, po_cache)) = self.feature_extract_cached(fo_seq, po)?;
        let (v_tilde, base) = self.params.base_fc.forward(&h)?;
        let (w_coef, scale) = self.params.scale_fc.forward(&h)?;
        let (b_coef, shift) = self.params.shift_fc.forward(&h)?;
        let out = &w_coef * &v_tilde + &b_coef;
        Ok((
            out,
            ModelCache {
                lstm1,
                lstm2,
                po: po_cache,
                base,
                scale,
                shift,
                n_steps: fo_seq.len(),
                batch: po.nrows(),
                v_tilde,
                w_coef,
            },
        ))
    }

    /// Backward pass from dL/d(output); returns gradients for every
    /// parameter tensor.
    pub fn backward(&self, cache: &ModelCache, grad_out: &Array2<f64>) -> DnnParams {
        let mut grads = self.params.zeros_like();

        // v_hat = w .* v_tilde + b
        let d_w = grad_out * &cache.v_tilde;
        let d_v_tilde = grad_out * &cache.w_coef;
        let d_b = grad_out.clone();

        let mut d_h = self
            .params
            .base_fc
            .backward(&cache.base, &d_v_tilde, &mut grads.base_fc);
        d_h += &self
            .params
            .scale_fc
            .backward(&cache.scale, &d_w, &mut grads.scale_fc);
        d_h += &self
            .params
            .shift_fc
            .backward(&cache.shift, &d_b, &mut grads.shift_fc);

        let d_h_fo = d_h.slice(s![.., ..self.arch.fo_feature_dim]).to_owned();
        let d_h_po = d_h.slice(s![.., self.arch.fo_feature_dim..]).to_owned();

        self.params
            .po_fc
            .backward(&cache.po, &d_h_po, &mut grads.po_fc);

        let mut grad_hs2: Vec<Array2<f64>> = (0..cache.n_steps)
            .map(|_| Array2::zeros((cache.batch, self.arch.fo_feature_dim)))
            .collect();
        *grad_hs2.last_mut().expect("nonempty") = d_h_fo;
        let grad_hs1 = self
            .params
            .lstm2
            .backward(&cache.lstm2, &grad_hs2, &mut grads.lstm2);
        self.params
            .lstm1
            .backward(&cache.lstm1, &grad_hs1, &mut grads.lstm1);
        grads
    }
}
