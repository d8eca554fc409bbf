//! Evaluation: polar-space MSE metrics, the persistence baseline, scenario
//! sweeps over (T, N_s, lambda, estimator), repetition statistics, and
//! CSV/SVG report generation.
//!
//! Magnitude MSE is in per-unit squared; angle MSE is in radians squared
//! (also stated in the report header). Angles are compared after wrapping
//! the difference into (-pi, pi].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

use crate::grid::{observability, ComplexVec, GridModel, ObservabilityMask};
use crate::nn::{predict, train_labeled, TrainConfig, TrainedModel};
use crate::pipeline::{SequenceView, SfseDataset};
use crate::svg::{line_chart, Series};
use crate::wls::wls_estimate;
use crate::{Error, Result};

/// Persistence estimate: carry the previous step's voltages forward.
/// Reads nothing from the masked step.
pub fn persistence_estimate(seq: &SequenceView<'_>) -> ComplexVec {
    seq.prev().1.clone()
}

/// Wrap an angle difference into (-pi, pi].
pub fn wrap_angle(d: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let y = d.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y - two_pi
    } else {
        y
    }
}

/// Mean squared magnitude and angle errors over the buses of one estimate.
/// Buses whose true voltage has zero magnitude are excluded from the angle
/// mean (their angle is undefined) with a logged warning.
pub fn polar_mse(v_hat: &ComplexVec, v_true: &ComplexVec) -> Result<(f64, f64)> {
    if v_hat.len() != v_true.len() {
        return Err(Error::DimensionMismatch {
            what: "polar_mse vectors",
            expected: v_true.len(),
            got: v_hat.len(),
        });
    }
    let n = v_true.len();
    let mut mag = 0.0;
    let mut ang = 0.0;
    let mut ang_count = 0usize;
    for i in 0..n {
        let dm = v_hat[i].norm() - v_true[i].norm();
        mag += dm * dm;
        if v_true[i].norm() == 0.0 {
            log::warn!("bus {i}: zero-magnitude true voltage, angle term excluded");
            continue;
        }
        let da = wrap_angle(v_hat[i].arg() - v_true[i].arg());
        ang += da * da;
        ang_count += 1;
    }
    Ok((
        mag / n as f64,
        if ang_count > 0 {
            ang / ang_count as f64
        } else {
            0.0
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Dnn,
    Wls,
    Persistence,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Dnn => write!(f, "dnn"),
            Estimator::Wls => write!(f, "wls"),
            Estimator::Persistence => write!(f, "persistence"),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnn" => Ok(Estimator::Dnn),
            "wls" => Ok(Estimator::Wls),
            "persistence" => Ok(Estimator::Persistence),
            other => Err(Error::invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub t_window: usize,
    pub n_s: usize,
    pub n_v: usize,
    pub lambda: f64,
    pub estimator: Estimator,
    pub repetitions: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn id(&self) -> String {
        format!(
            "T{}_ns{}_nv{}_lam{}_{}",
            self.t_window, self.n_s, self.n_v, self.lambda, self.estimator
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario_id: String,
    pub estimator: String,
    pub t_window: usize,
    pub n_s: usize,
    pub n_v: usize,
    pub lambda: f64,
    /// Degree of observability as a rounded percentage.
    pub observability_pct: u32,
    pub mse_mag_mean: f64,
    pub mse_mag_std: f64,
    pub mse_ang_mean: f64,
    pub mse_ang_std: f64,
    /// Successful repetitions aggregated in this row.
    pub repetitions: usize,
    pub runtime_s: f64,
}

/// One persisted per-bus prediction (written when prediction dumping is on;
/// reports can be recomputed from these records exactly).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub repetition: usize,
    pub window_start: usize,
    pub bus: usize,
    pub v_hat_re: f64,
    pub v_hat_im: f64,
    pub v_true_re: f64,
    pub v_true_im: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub row: ReportRow,
    /// Per-repetition (mag, ang) test MSEs, successful runs only.
    pub repetition_mses: Vec<(f64, f64)>,
    pub predictions: Vec<PredictionRecord>,
    /// Trained models (DNN scenarios only), one per successful repetition.
    pub models: Vec<TrainedModel>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Evaluate one estimate set over the test split: mean of per-sequence MSEs
/// plus the raw estimates (for prediction dumps).
pub fn test_split_mse<F>(
    dataset: &SfseDataset,
    mut estimate: F,
) -> Result<(f64, f64, Vec<ComplexVec>)>
where
    F: FnMut(&SequenceView<'_>) -> Result<ComplexVec>,
{
    let mut mags = Vec::with_capacity(dataset.test_starts.len());
    let mut angs = Vec::with_capacity(dataset.test_starts.len());
    let mut estimates = Vec::with_capacity(dataset.test_starts.len());
    for seq in dataset.test_sequences() {
        let v_hat = estimate(&seq)?;
        let (m, a) = polar_mse(&v_hat, seq.target_v())?;
        mags.push(m);
        angs.push(a);
        estimates.push(v_hat);
    }
    Ok((
        mags.iter().sum::<f64>() / mags.len().max(1) as f64,
        angs.iter().sum::<f64>() / angs.len().max(1) as f64,
        estimates,
    ))
}

fn record_predictions(
    out: &mut Vec<PredictionRecord>,
    scenario_id: &str,
    repetition: usize,
    dataset: &SfseDataset,
    estimates: &[ComplexVec],
) {
    for (k, &start) in dataset.test_starts.iter().enumerate() {
        let seq = dataset.sequence(start);
        let v_true = seq.target_v();
        for bus in 0..v_true.len() {
            out.push(PredictionRecord {
                scenario_id: scenario_id.to_string(),
                repetition,
                window_start: start,
                bus,
                v_hat_re: estimates[k][bus].re,
                v_hat_im: estimates[k][bus].im,
                v_true_re: v_true[bus].re,
                v_true_im: v_true[bus].im,
            });
        }
    }
}

/// Run one scenario: per repetition, train (DNN) or configure (WLS /
/// persistence) the estimator and evaluate it on the full test split; then
/// aggregate mean/std of both MSEs across repetitions. Repetition failures
/// are logged and skipped; the scenario continues.
///
/// `train_base` supplies the non-scenario training knobs (epochs, batch
/// size, learning rate, early stopping); lambda and seeds come from `spec`.
pub fn run_scenario(
    spec: &ScenarioSpec,
    dataset: &SfseDataset,
    grid: &GridModel,
    train_base: &TrainConfig,
    case_label: &str,
    dump_predictions: bool,
) -> Result<ScenarioOutcome> {
    let started = Instant::now();
    let mask = ObservabilityMask::prefix_observed(grid.n_buses(), spec.n_s, spec.n_v)?;
    let ds = dataset.with_mask(mask)?;
    if ds.t_window != spec.t_window {
        return Err(Error::invalid(format!(
            "dataset window T={} does not match scenario T={}",
            ds.t_window, spec.t_window
        )));
    }
    let scenario_id = spec.id();
    let mut repetition_mses = Vec::new();
    let mut predictions = Vec::new();
    let mut models = Vec::new();

    match spec.estimator {
        Estimator::Dnn => {
            // Repetitions differ only by seed; run them in parallel and
            // aggregate in repetition order.
            let results: Vec<(usize, Result<(TrainedModel, f64, f64, Vec<ComplexVec>)>)> = (0
                ..spec.repetitions)
                .into_par_iter()
                .map(|rep| {
                    let config = TrainConfig {
                        lambda: spec.lambda,
                        seed: spec.seed.wrapping_add(rep as u64),
                        ..train_base.clone()
                    };
                    let run = || -> Result<(TrainedModel, f64, f64, Vec<ComplexVec>)> {
                        let model = train_labeled(&ds, grid, &config, case_label)?;
                        let (m, a, est) = test_split_mse(&ds, |seq| predict(&model, seq))?;
                        Ok((model, m, a, est))
                    };
                    (rep, run())
                })
                .collect();
            for (rep, result) in results {
                match result {
                    Ok((model, m, a, est)) => {
                        repetition_mses.push((m, a));
                        if dump_predictions {
                            record_predictions(&mut predictions, &scenario_id, rep, &ds, &est);
                        }
                        models.push(model);
                    }
                    Err(err) => {
                        log::warn!("{scenario_id}: repetition {rep} failed: {err}");
                    }
                }
            }
        }
        Estimator::Wls | Estimator::Persistence => {
            // Deterministic estimators: evaluate once, report zero variance
            // across the configured repetition count.
            let result = match spec.estimator {
                Estimator::Wls => test_split_mse(&ds, |seq| wls_estimate(grid, seq, &ds.mask)),
                _ => test_split_mse(&ds, |seq| Ok(persistence_estimate(seq))),
            };
            match result {
                Ok((m, a, est)) => {
                    for rep in 0..spec.repetitions.max(1) {
                        repetition_mses.push((m, a));
                        if dump_predictions && rep == 0 {
                            record_predictions(&mut predictions, &scenario_id, rep, &ds, &est);
                        }
                    }
                }
                Err(err) => log::warn!("{scenario_id}: evaluation failed: {err}"),
            }
        }
    }

    let mags: Vec<f64> = repetition_mses.iter().map(|&(m, _)| m).collect();
    let angs: Vec<f64> = repetition_mses.iter().map(|&(_, a)| a).collect();
    let (mag_mean, mag_std) = mean_std(&mags);
    let (ang_mean, ang_std) = mean_std(&angs);
    let obs = observability(spec.n_s, spec.n_v, grid.n_buses())?;

    Ok(ScenarioOutcome {
        row: ReportRow {
            scenario_id,
            estimator: spec.estimator.to_string(),
            t_window: spec.t_window,
            n_s: spec.n_s,
            n_v: spec.n_v,
            lambda: spec.lambda,
            observability_pct: (100.0 * obs).round() as u32,
            mse_mag_mean: mag_mean,
            mse_mag_std: mag_std,
            mse_ang_mean: ang_mean,
            mse_ang_std: ang_std,
            repetitions: repetition_mses.len(),
            runtime_s: started.elapsed().as_secs_f64(),
        },
        repetition_mses,
        predictions,
        models,
    })
}

// ---------------------------------------------------------------------------
// Report CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "scenario_id,estimator,T,n_s,n_v,lambda,observability_pct,\
mse_mag_mean,mse_mag_std,mse_ang_mean,mse_ang_std,repetitions,runtime_s";

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# units: mse_mag in per-unit^2, mse_ang in radians^2\n");
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{:.3}\n",
                r.scenario_id,
                r.estimator,
                r.t_window,
                r.n_s,
                r.n_v,
                r.lambda,
                r.observability_pct,
                r.mse_mag_mean,
                r.mse_mag_std,
                r.mse_ang_mean,
                r.mse_ang_std,
                r.repetitions,
                r.runtime_s
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("scenario_id") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::invalid(format!(
                    "report row has {} fields, expected 13: {line}",
                    f.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("bad number '{s}'")))
            };
            rows.push(ReportRow {
                scenario_id: f[0].to_string(),
                estimator: f[1].to_string(),
                t_window: f[2].parse().map_err(|_| Error::invalid("bad T"))?,
                n_s: f[3].parse().map_err(|_| Error::invalid("bad n_s"))?,
                n_v: f[4].parse().map_err(|_| Error::invalid("bad n_v"))?,
                lambda: parse(f[5])?,
                observability_pct: f[6]
                    .parse()
                    .map_err(|_| Error::invalid("bad observability"))?,
                mse_mag_mean: parse(f[7])?,
                mse_mag_std: parse(f[8])?,
                mse_ang_mean: parse(f[9])?,
                mse_ang_std: parse(f[10])?,
                repetitions: f[11].parse().map_err(|_| Error::invalid("bad reps"))?,
                runtime_s: parse(f[12])?,
            });
        }
        Ok(EvaluationReport { rows })
    }
}

/// Prediction dump CSV (the oracle file for recomputing report MSEs).
pub fn predictions_to_csv(records: &[PredictionRecord]) -> String {
    let mut out =
        String::from("scenario_id,repetition,window_start,bus,v_hat_re,v_hat_im,v_true_re,v_true_im\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e},{:e}\n",
            r.scenario_id,
            r.repetition,
            r.window_start,
            r.bus,
            r.v_hat_re,
            r.v_hat_im,
            r.v_true_re,
            r.v_true_im
        ));
    }
    out
}

/// Comparison artifacts: aligned CSV plus one SVG per metric.
pub struct Comparison {
    pub csv: String,
    pub svg_magnitude: String,
    pub svg_angle: String,
}

/// Align several reports on the observability axis and emit one MSE series
/// per (estimator, lambda). Every series must cover the same axis values.
pub fn compare_report(reports: &[EvaluationReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::invalid(
            "comparison needs at least two reports over a shared scenario axis",
        ));
    }
    // series key -> sorted (observability, mag, ang)
    let mut keys: Vec<String> = Vec::new();
    let mut series: std::collections::BTreeMap<String, Vec<(u32, f64, f64)>> =
        std::collections::BTreeMap::new();
    for report in reports {
        for row in &report.rows {
            let key = if row.estimator == "dnn" {
                format!("dnn lambda={}", row.lambda)
            } else {
                row.estimator.clone()
            };
            if !keys.contains(&key) {
                keys.push(key.clone());
            }
            series
                .entry(key)
                .or_default()
                .push((row.observability_pct, row.mse_mag_mean, row.mse_ang_mean));
        }
    }
    let mut axis: Option<Vec<u32>> = None;
    for (key, pts) in series.iter_mut() {
        pts.sort_by_key(|&(o, _, _)| o);
        let xs: Vec<u32> = pts.iter().map(|&(o, _, _)| o).collect();
        match &axis {
            None => axis = Some(xs),
            Some(a) if *a == xs => {}
            Some(a) => {
                return Err(Error::invalid(format!(
                    "misaligned observability axes: series '{key}' covers {xs:?}, expected {a:?}"
                )));
            }
        }
    }
    let axis = axis.ok_or_else(|| Error::invalid("no rows to compare"))?;

    let mut csv = String::from("# units: mse_mag in per-unit^2, mse_ang in radians^2\n");
    csv.push_str("observability_pct");
    for key in &keys {
        let k = key.replace(' ', "_");
        csv.push_str(&format!(",{k}_mse_mag,{k}_mse_ang"));
    }
    csv.push('\n');
    for (i, &obs) in axis.iter().enumerate() {
        csv.push_str(&obs.to_string());
        for key in &keys {
            let (_, m, a) = series[key][i];
            csv.push_str(&format!(",{m:e},{a:e}"));
        }
        csv.push('\n');
    }

    let mk_series = |pick: &dyn Fn(&(u32, f64, f64)) -> f64| -> Vec<Series> {
        keys.iter()
            .map(|key| Series {
                label: key.clone(),
                points: series[key]
                    .iter()
                    .map(|p| (p.0 as f64, pick(p)))
                    .collect(),
            })
            .collect()
    };
    let svg_magnitude = line_chart(
        "Voltage magnitude MSE vs observability",
        "observability [%]",
        "MSE [p.u.^2, log10]",
        &mk_series(&|p| p.1),
        true,
    );
    let svg_angle = line_chart(
        "Voltage angle MSE vs observability",
        "observability [%]",
        "MSE [rad^2, log10]",
        &mk_series(&|p| p.2),
        true,
    );
    Ok(Comparison {
        csv,
        svg_magnitude,
        svg_angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn polar_mse_hand_values() {
        let v_true = ComplexVec::new(vec![c(1.0, 0.0)]).unwrap();
        let v_hat = ComplexVec::new(vec![c(0.9, 0.0)]).unwrap();
        let (m, a) = polar_mse(&v_hat, &v_true).unwrap();
        assert!((m - 0.01).abs() < 1e-15);
        assert_eq!(a, 0.0);

        let same = polar_mse(&v_true, &v_true).unwrap();
        assert_eq!(same, (0.0, 0.0));
    }

    #[test]
    fn angle_error_small_rotation() {
        let v_true = ComplexVec::new(vec![Complex64::from_polar(1.0, 0.01)]).unwrap();
        let v_hat = ComplexVec::new(vec![Complex64::from_polar(1.0, 0.0)]).unwrap();
        let (m, a) = polar_mse(&v_hat, &v_true).unwrap();
        assert!(m < 1e-20);
        assert!((a - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn wrap_at_pi_boundary() {
        let eps = 1e-6;
        let a = std::f64::consts::PI - eps;
        let b = -std::f64::consts::PI + eps;
        assert!(wrap_angle(a - b).abs() < 3.0 * eps);
        assert!((wrap_angle(std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-15);

        let v_true = ComplexVec::new(vec![Complex64::from_polar(1.0, a)]).unwrap();
        let v_hat = ComplexVec::new(vec![Complex64::from_polar(1.0, b)]).unwrap();
        let (_, ang) = polar_mse(&v_hat, &v_true).unwrap();
        assert!(ang < 1e-10, "wrapped angle error {ang}");
    }

    #[test]
    fn polar_mse_invariant_under_bus_permutation() {
        let v_true =
            ComplexVec::new(vec![c(1.0, 0.1), c(0.95, -0.05), c(1.02, 0.0)]).unwrap();
        let v_hat = ComplexVec::new(vec![c(0.99, 0.12), c(0.96, -0.03), c(1.0, 0.01)]).unwrap();
        let (m1, a1) = polar_mse(&v_hat, &v_true).unwrap();
        let perm = [2usize, 0, 1];
        let vt: ComplexVec = perm.iter().map(|&i| v_true[i]).collect();
        let vh: ComplexVec = perm.iter().map(|&i| v_hat[i]).collect();
        let (m2, a2) = polar_mse(&vh, &vt).unwrap();
        assert!((m1 - m2).abs() < 1e-18);
        assert!((a1 - a2).abs() < 1e-18);
    }

    #[test]
    fn zero_magnitude_bus_excluded_from_angle() {
        let v_true = ComplexVec::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let v_hat = ComplexVec::new(vec![c(0.1, 0.0), c(1.0, 0.01)]).unwrap();
        let (_, a) = polar_mse(&v_hat, &v_true).unwrap();
        // only bus 1 contributes to the angle mean
        assert!((a - 0.01f64.atan2(1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn report_csv_round_trip() {
        let report = EvaluationReport {
            rows: vec![ReportRow {
                scenario_id: "T5_ns28_nv0_lam2_dnn".into(),
                estimator: "dnn".into(),
                t_window: 5,
                n_s: 28,
                n_v: 0,
                lambda: 2.0,
                observability_pct: 39,
                mse_mag_mean: 1.25e-7,
                mse_mag_std: 3e-8,
                mse_ang_mean: 4.5e-7,
                mse_ang_std: 1e-7,
                repetitions: 5,
                runtime_s: 12.0,
            }],
        };
        let csv = report.to_csv();
        let back = EvaluationReport::from_csv(&csv).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn comparison_misaligned_axes_rejected() {
        let mk = |obs: &[u32], est: &str| EvaluationReport {
            rows: obs
                .iter()
                .map(|&o| ReportRow {
                    scenario_id: format!("x{o}"),
                    estimator: est.into(),
                    t_window: 5,
                    n_s: 0,
                    n_v: 0,
                    lambda: 0.0,
                    observability_pct: o,
                    mse_mag_mean: 1e-6,
                    mse_mag_std: 0.0,
                    mse_ang_mean: 1e-6,
                    mse_ang_std: 0.0,
                    repetitions: 1,
                    runtime_s: 0.0,
                })
                .collect(),
        };
        let a = mk(&[8, 25, 49], "wls");
        let b = mk(&[8, 25], "persistence");
        assert!(compare_report(&[a.clone(), b]).is_err());

        let c_rep = mk(&[8, 25, 49], "persistence");
        let cmp = compare_report(&[a, c_rep]).unwrap();
        assert!(cmp.csv.contains("observability_pct"));
        assert!(cmp.svg_magnitude.starts_with("<svg"));
        // deterministic
        assert!(cmp.svg_angle.starts_with("<svg"));
    }
}
