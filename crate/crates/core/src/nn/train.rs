//! Mini-batch training with Adam, seeded shuffling, and early stopping on a
//! validation slice of the training split.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{ComplexVec, GridModel, ObservabilityMask};
use crate::pipeline::{SequenceView, SfseDataset};
use crate::standardize::Standardizer;
use crate::{Error, Result};

use super::adam::{AdamConfig, AdamState};
use super::loss::batch_loss_grad;
use super::{DnnArchitecture, DnnModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the power-flow residual penalty.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fraction of the training split held out for early stopping;
    /// zero disables early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            batch_size: 50,
            epochs: 300,
            adam: AdamConfig::default(),
            seed: 0,
            validation_fraction: 0.1,
            patience: 30,
        }
    }
}

impl TrainConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        TrainConfig {
            lambda,
            ..TrainConfig::default()
        }
    }
}

/// A trained estimator: parameters plus everything needed to rebuild its
/// input pipeline (mask, scaler) and to audit the run (curves, config echo).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: DnnModel,
    pub mask: ObservabilityMask,
    /// Frame scaler (4N features: powers then voltages).
    pub scaler: Standardizer,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub config: TrainConfig,
    /// Label of the network case the model was trained against.
    pub case_label: String,
}

/// Standardized history rows for one sequence: T-1 rows of 4N features.
pub fn fo_rows(scaler: &Standardizer, seq: &SequenceView<'_>) -> Result<Vec<Vec<f64>>> {
    seq.history()
        .map(|(s, v)| {
            let mut row = s.flatten();
            row.extend(v.flatten());
            scaler.apply(&row)
        })
        .collect()
}

/// Standardized partial-frame row: observed power features then observed
/// voltage features, in ascending bus order.
pub fn po_row(
    scaler: &Standardizer,
    mask: &ObservabilityMask,
    s_t: &ComplexVec,
    v_t: &ComplexVec,
) -> Vec<f64> {
    let n = mask.n_buses();
    let mut row = Vec::with_capacity(2 * (mask.n_s() + mask.n_v()));
    for i in 0..n {
        if mask.power_observed[i] {
            row.push(scaler.apply_at(2 * i, s_t[i].re));
            row.push(scaler.apply_at(2 * i + 1, s_t[i].im));
        }
    }
    for i in 0..n {
        if mask.voltage_observed[i] {
            row.push(scaler.apply_at(2 * n + 2 * i, v_t[i].re));
            row.push(scaler.apply_at(2 * n + 2 * i + 1, v_t[i].im));
        }
    }
    row
}

/// Standardized target voltages (the last 2N features of the frame scaler).
pub fn target_v_std(scaler: &Standardizer, v_t: &ComplexVec) -> Vec<f64> {
    let n = v_t.len();
    v_t.flatten()
        .iter()
        .enumerate()
        .map(|(k, &x)| scaler.apply_at(2 * n + k, x))
        .collect()
}

/// Per-sequence tensors precomputed once so epochs only copy rows.
struct Prepared {
    fo: Vec<Vec<Vec<f64>>>,
    po: Vec<Vec<f64>>,
    v_std: Vec<Vec<f64>>,
    s_true: Vec<ComplexVec>,
    n_steps: usize,
}

fn prepare(dataset: &SfseDataset, starts: &[usize]) -> Result<Prepared> {
    let mut fo = Vec::with_capacity(starts.len());
    let mut po = Vec::with_capacity(starts.len());
    let mut v_std = Vec::with_capacity(starts.len());
    let mut s_true = Vec::with_capacity(starts.len());
    for &start in starts {
        let seq = dataset.sequence(start);
        fo.push(fo_rows(&dataset.scaler, &seq)?);
        po.push(po_row(
            &dataset.scaler,
            &dataset.mask,
            seq.target_s(),
            seq.target_v(),
        ));
        v_std.push(target_v_std(&dataset.scaler, seq.target_v()));
        s_true.push(seq.target_s().clone());
    }
    Ok(Prepared {
        fo,
        po,
        v_std,
        s_true,
        n_steps: dataset.t_window - 1,
    })
}

fn assemble_batch(prep: &Prepared, indices: &[usize]) -> (Vec<Array2<f64>>, Array2<f64>) {
    let batch = indices.len();
    let frame_dim = prep.fo[0][0].len();
    let po_dim = prep.po[0].len();
    let mut fo_seq = vec![Array2::zeros((batch, frame_dim)); prep.n_steps];
    let mut po = Array2::zeros((batch, po_dim));
    for (b, &idx) in indices.iter().enumerate() {
        for (t, step) in fo_seq.iter_mut().enumerate() {
            step.row_mut(b)
                .assign(&ndarray::ArrayView1::from(&prep.fo[idx][t][..]));
        }
        po.row_mut(b)
            .assign(&ndarray::ArrayView1::from(&prep.po[idx][..]));
    }
    (fo_seq, po)
}

fn mean_loss(
    model: &DnnModel,
    grid: &GridModel,
    prep: &Prepared,
    indices: &[usize],
    lambda: f64,
    voltage_scaler: &Standardizer,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size) {
        let (fo_seq, po) = assemble_batch(prep, chunk);
        let (out, _) = model.forward(&fo_seq, &po)?;
        let targets: Vec<(&[f64], &ComplexVec)> = chunk
            .iter()
            .map(|&i| (prep.v_std[i].as_slice(), &prep.s_true[i]))
            .collect();
        let (loss, _) = batch_loss_grad(grid, &out, &targets, lambda, voltage_scaler)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Train on the dataset's training split. Mini-batches are reshuffled every
/// epoch from a seeded generator; when a validation slice is configured the
/// best-validation parameters are restored at the end.
pub fn train(
    dataset: &SfseDataset,
    grid: &GridModel,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    train_labeled(dataset, grid, config, "unnamed")
}

pub fn train_labeled(
    dataset: &SfseDataset,
    grid: &GridModel,
    config: &TrainConfig,
    case_label: &str,
) -> Result<TrainedModel> {
    if config.lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid("batch_size and epochs must be positive"));
    }
    let arch = DnnArchitecture::new(
        dataset.n_buses(),
        dataset.mask.n_s(),
        dataset.mask.n_v(),
    )?;
    let mut model = DnnModel::init(arch, config.seed);
    let voltage_scaler = dataset
        .scaler
        .slice(2 * dataset.n_buses()..4 * dataset.n_buses());

    let prep = prepare(dataset, &dataset.train_starts)?;
    let n = prep.po.len();
    if n == 0 {
        return Err(Error::invalid("empty training split"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let val_count = ((n as f64 * config.validation_fraction).round() as usize).min(n - 1);
    let (fit_idx, val_idx) = order.split_at(n - val_count);
    let fit_idx = fit_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut adam = AdamState::new(&model.params);
    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, super::DnnParams)> = None;
    let mut epochs_since_best = 0usize;

    let mut shuffled = fit_idx.clone();
    for epoch in 0..config.epochs {
        shuffled.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in shuffled.chunks(config.batch_size) {
            let (fo_seq, po) = assemble_batch(&prep, chunk);
            let (out, cache) = model.forward(&fo_seq, &po)?;
            let targets: Vec<(&[f64], &ComplexVec)> = chunk
                .iter()
                .map(|&i| (prep.v_std[i].as_slice(), &prep.s_true[i]))
                .collect();
            let (loss, grad_out) =
                batch_loss_grad(grid, &out, &targets, config.lambda, &voltage_scaler)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = model.backward(&cache, &grad_out);
            adam.step(&mut model.params, &grads, &config.adam);
            epoch_loss += loss * chunk.len() as f64;
        }
        train_curve.push(epoch_loss / fit_idx.len() as f64);

        if !val_idx.is_empty() {
            let val_loss = mean_loss(
                &model,
                grid,
                &prep,
                &val_idx,
                config.lambda,
                &voltage_scaler,
                config.batch_size,
            )?;
            val_curve.push(val_loss);
            let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
            if improved {
                best = Some((val_loss, model.params.clone()));
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if epochs_since_best > config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, params)) = best {
        model.params = params;
    }

    Ok(TrainedModel {
        model,
        mask: dataset.mask.clone(),
        scaler: dataset.scaler.clone(),
        train_curve,
        val_curve,
        config: config.clone(),
        case_label: case_label.to_string(),
    })
}

/// Voltage estimate for one sequence: standardize, extract features, regress,
/// de-standardize, and pair into complex phasors.
pub fn predict(model: &TrainedModel, seq: &SequenceView<'_>) -> Result<ComplexVec> {
    let n = model.model.arch.n_buses;
    let rows = fo_rows(&model.scaler, seq)?;
    if rows.is_empty() {
        return Err(Error::invalid("sequence has an empty history"));
    }
    let fo_seq: Vec<Array2<f64>> = rows
        .into_iter()
        .map(|r| Array2::from_shape_vec((1, r.len()), r).expect("row shape"))
        .collect();
    let po = po_row(&model.scaler, &model.mask, seq.target_s(), seq.target_v());
    let po = Array2::from_shape_vec((1, po.len()), po).expect("row shape");
    let (out, _) = model.model.forward(&fo_seq, &po)?;
    let v_std: Vec<f64> = out.row(0).to_vec();
    let voltage_scaler = model.scaler.slice(2 * n..4 * n);
    super::loss::destandardize_voltage(&v_std, &voltage_scaler)
}
