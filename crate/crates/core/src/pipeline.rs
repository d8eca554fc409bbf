//! Dataset synthesis: assign load/PV profiles to buses, solve the power flow
//! per time step, window the resulting trajectories into estimation
//! sequences, and standardize.
//!
//! A sequence covers `T` consecutive steps: `T - 1` fully observable frames
//! followed by one masked frame at estimation time `t`. Ground-truth power
//! and voltage phasors for all buses are kept for every frame (the mask only
//! restricts what estimators may read at step `t`).

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::grid::{ComplexVec, GridModel, ObservabilityMask};
use crate::powerflow::{solve_power_flow, PowerFlowOptions};
use crate::profiles::{
    downsample, reactive_from_pf, smooth, synth_profiles, LoadProfileConfig,
};
use crate::standardize::Standardizer;
use crate::{Error, Result};

/// Which buses carry which household profile, and which carry the PV array.
/// Overlaps between load and PV buses are allowed; their phasors sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusAssignment {
    /// `(bus, household)` pairs; households repeat circularly over the
    /// shuffled bus list.
    pub load_bus_map: Vec<(usize, usize)>,
    pub pv_buses: Vec<usize>,
}

impl BusAssignment {
    pub fn random(
        grid: &GridModel,
        n_load_buses: usize,
        n_pv_buses: usize,
        n_households: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = grid.n_buses();
        let candidates: Vec<usize> = (0..n).filter(|&i| i != grid.slack_index()).collect();
        if n_load_buses > candidates.len() || n_pv_buses > candidates.len() {
            return Err(Error::invalid(format!(
                "cannot place {n_load_buses} load and {n_pv_buses} PV buses on {} non-slack buses",
                candidates.len()
            )));
        }
        if n_households == 0 {
            return Err(Error::invalid("n_households must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut load_order = candidates.clone();
        load_order.shuffle(&mut rng);
        let load_bus_map = load_order[..n_load_buses]
            .iter()
            .enumerate()
            .map(|(k, &bus)| (bus, k % n_households))
            .collect();
        let mut pv_order = candidates;
        pv_order.shuffle(&mut rng);
        let pv_buses = pv_order[..n_pv_buses].to_vec();
        Ok(BusAssignment {
            load_bus_map,
            pv_buses,
        })
    }

    fn validate(&self, grid: &GridModel) -> Result<()> {
        for &(bus, _) in &self.load_bus_map {
            if bus == grid.slack_index() {
                return Err(Error::invalid("load assigned to the slack bus"));
            }
            if bus >= grid.n_buses() {
                return Err(Error::invalid(format!("load bus {bus} out of range")));
            }
        }
        for &bus in &self.pv_buses {
            if bus == grid.slack_index() {
                return Err(Error::invalid("PV assigned to the slack bus"));
            }
            if bus >= grid.n_buses() {
                return Err(Error::invalid(format!("PV bus {bus} out of range")));
            }
        }
        Ok(())
    }
}

/// Build per-step bus injection frames from household and PV phasor series.
///
/// Load buses receive their household's phasor; PV buses receive the negated
/// PV phasor (generation carries a negative sign in this data convention);
/// buses holding both get the sum; remaining non-slack buses inject zero.
pub fn assign_buses(
    household_phasors: &[Vec<Complex64>],
    pv_phasor: &[Complex64],
    grid: &GridModel,
    assignment: &BusAssignment,
) -> Result<Vec<ComplexVec>> {
    assignment.validate(grid)?;
    let steps = pv_phasor.len();
    for (k, h) in household_phasors.iter().enumerate() {
        if h.len() != steps {
            return Err(Error::invalid(format!(
                "household {k} series length {} != {steps}",
                h.len()
            )));
        }
    }
    for &(_, hh) in &assignment.load_bus_map {
        if hh >= household_phasors.len() {
            return Err(Error::invalid(format!("household index {hh} out of range")));
        }
    }
    let n = grid.n_buses();
    let mut frames = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        for &(bus, hh) in &assignment.load_bus_map {
            s[bus] += household_phasors[hh][t];
        }
        for &bus in &assignment.pv_buses {
            s[bus] -= pv_phasor[t];
        }
        frames.push(ComplexVec::new(s)?);
    }
    Ok(frames)
}

/// Ground-truth trajectory: per-step injections (slack back-computed) and the
/// matching power-flow voltages.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub n_buses: usize,
    pub injections: Vec<ComplexVec>,
    pub voltages: Vec<ComplexVec>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.injections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }

    /// Flattened 4N feature row of step `t`: powers then voltages, each as
    /// interleaved real pairs.
    pub fn frame_features(&self, t: usize) -> Vec<f64> {
        let mut row = self.injections[t].flatten();
        row.extend(self.voltages[t].flatten());
        row
    }
}

/// Solve the power flow for every injection frame (flat start, steps solved
/// independently and in parallel).
pub fn solve_timeline(
    grid: &GridModel,
    injection_frames: &[ComplexVec],
    opts: &PowerFlowOptions,
) -> Result<Timeline> {
    let solutions: Vec<_> = injection_frames
        .par_iter()
        .map(|s| solve_power_flow(grid, s, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut injections = Vec::with_capacity(solutions.len());
    let mut voltages = Vec::with_capacity(solutions.len());
    for sol in solutions {
        injections.push(sol.injections);
        voltages.push(sol.v);
    }
    Ok(Timeline {
        n_buses: grid.n_buses(),
        injections,
        voltages,
    })
}

/// One estimation sample: a window `[start, start + T - 1]` of the timeline.
/// The first `T - 1` frames are the fully observable history; the last step
/// is the masked estimation step `t`.
#[derive(Debug, Clone, Copy)]
pub struct SequenceView<'a> {
    timeline: &'a Timeline,
    start: usize,
    t_window: usize,
}

impl<'a> SequenceView<'a> {
    pub fn t_index(&self) -> usize {
        self.start + self.t_window - 1
    }

    pub fn t_window(&self) -> usize {
        self.t_window
    }

    /// History frames `(s, v)`, oldest first; exactly `T - 1` of them.
    pub fn history(&self) -> impl Iterator<Item = (&'a ComplexVec, &'a ComplexVec)> + '_ {
        (self.start..self.t_index())
            .map(|t| (&self.timeline.injections[t], &self.timeline.voltages[t]))
    }

    /// Last fully observable frame, at `t - 1`.
    pub fn prev(&self) -> (&'a ComplexVec, &'a ComplexVec) {
        let t = self.t_index() - 1;
        (&self.timeline.injections[t], &self.timeline.voltages[t])
    }

    /// Ground-truth injections at the masked step (all buses).
    pub fn target_s(&self) -> &'a ComplexVec {
        &self.timeline.injections[self.t_index()]
    }

    /// Ground-truth voltages at the masked step (all buses).
    pub fn target_v(&self) -> &'a ComplexVec {
        &self.timeline.voltages[self.t_index()]
    }
}

/// Windowed dataset over a shared timeline, with the observability mask of
/// the estimation step, the feature scaler fitted on the training time range,
/// and the sampled window starts.
#[derive(Debug, Clone)]
pub struct SfseDataset {
    pub timeline: Timeline,
    pub t_window: usize,
    pub mask: ObservabilityMask,
    pub scaler: Standardizer,
    pub train_starts: Vec<usize>,
    pub test_starts: Vec<usize>,
    pub seed: u64,
}

impl SfseDataset {
    pub fn sequence(&self, start: usize) -> SequenceView<'_> {
        SequenceView {
            timeline: &self.timeline,
            start,
            t_window: self.t_window,
        }
    }

    pub fn train_sequences(&self) -> impl Iterator<Item = SequenceView<'_>> + '_ {
        self.train_starts.iter().map(|&s| self.sequence(s))
    }

    pub fn test_sequences(&self) -> impl Iterator<Item = SequenceView<'_>> + '_ {
        self.test_starts.iter().map(|&s| self.sequence(s))
    }

    pub fn n_buses(&self) -> usize {
        self.timeline.n_buses
    }

    /// Same dataset viewed under a different estimation-step mask.
    pub fn with_mask(&self, mask: ObservabilityMask) -> Result<SfseDataset> {
        if mask.n_buses() != self.n_buses() {
            return Err(Error::DimensionMismatch {
                what: "dataset mask",
                expected: self.n_buses(),
                got: mask.n_buses(),
            });
        }
        Ok(SfseDataset {
            mask,
            ..self.clone()
        })
    }
}

/// Draw window start positions and fit the scaler. Train windows lie entirely
/// in the first six sevenths of the timeline, test windows entirely in the
/// final seventh; starts are sampled with replacement.
pub fn build_dataset(
    timeline: Timeline,
    t_window: usize,
    mask: ObservabilityMask,
    n_sequences: usize,
    split_fraction: f64,
    seed: u64,
) -> Result<SfseDataset> {
    if t_window < 2 {
        return Err(Error::invalid("window length T must be >= 2"));
    }
    if mask.n_buses() != timeline.n_buses {
        return Err(Error::DimensionMismatch {
            what: "mask bus count",
            expected: timeline.n_buses,
            got: mask.n_buses(),
        });
    }
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(Error::invalid("split_fraction outside [0, 1]"));
    }
    let steps = timeline.len();
    let train_end = steps - steps / 7;
    if train_end < t_window || steps - train_end < t_window {
        return Err(Error::invalid(format!(
            "timeline of {steps} steps too short for T={t_window} windows on both splits"
        )));
    }
    let n_train = (n_sequences as f64 * split_fraction).round() as usize;
    let n_test = n_sequences - n_train;
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "split {split_fraction} leaves an empty side ({n_train} train / {n_test} test)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_starts: Vec<usize> = (0..n_train)
        .map(|_| rng.random_range(0..=train_end - t_window))
        .collect();
    let test_starts: Vec<usize> = (0..n_test)
        .map(|_| rng.random_range(train_end..=steps - t_window))
        .collect();

    let rows: Vec<Vec<f64>> = (0..train_end).map(|t| timeline.frame_features(t)).collect();
    let scaler = Standardizer::fit(rows.iter().map(|r| r.as_slice()))?;

    Ok(SfseDataset {
        timeline,
        t_window,
        mask,
        scaler,
        train_starts,
        test_starts,
        seed,
    })
}

/// End-to-end generation settings (profiles through windowing).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub profiles: LoadProfileConfig,
    pub smooth_window: usize,
    pub downsample_factor: usize,
    pub n_load_buses: usize,
    pub n_pv_buses: usize,
    pub power_factor_min: f64,
    pub power_factor_max: f64,
    pub t_window: usize,
    pub n_s: usize,
    pub n_v: usize,
    pub n_sequences: usize,
    pub split_fraction: f64,
    pub seed: u64,
}

impl GenerateConfig {
    /// Paper-scale defaults for the 36-bus feeder.
    pub fn default_for(grid: &GridModel) -> Self {
        let n = grid.n_buses();
        GenerateConfig {
            profiles: LoadProfileConfig::default(),
            smooth_window: 60,
            downsample_factor: 60,
            n_load_buses: (25 * n / 36).max(1).min(n - 1),
            n_pv_buses: (18 * n / 36).max(1).min(n - 1),
            power_factor_min: 0.96,
            power_factor_max: 0.98,
            t_window: 5,
            n_s: 28 * n / 36,
            n_v: 0,
            n_sequences: 9000,
            split_fraction: 0.9,
            seed: 1,
        }
    }
}

/// Run the full synthesis pipeline:
/// profiles -> smooth/downsample -> phasors -> bus assignment ->
/// per-step power flow -> windowed dataset.
///
/// Smoothing/downsampling is applied to the source series before bus
/// assignment; both operations are linear, so this commutes with assignment
/// and avoids materializing per-bus series at the source resolution.
pub fn generate_dataset(config: &GenerateConfig, grid: &GridModel) -> Result<SfseDataset> {
    let mut profile_cfg = config.profiles.clone();
    profile_cfg.seed = config.seed;
    let src = synth_profiles(&profile_cfg)?;

    let mut pf_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut households = Vec::with_capacity(src.households.len());
    for p in &src.households {
        let pf = pf_rng.random_range(config.power_factor_min..=config.power_factor_max);
        let filtered = downsample(&smooth(p, config.smooth_window)?, config.downsample_factor)?;
        households.push(reactive_from_pf(&filtered, pf)?);
    }
    let pv_filtered = downsample(
        &smooth(&src.pv, config.smooth_window)?,
        config.downsample_factor,
    )?;
    let pv: Vec<Complex64> = pv_filtered
        .iter()
        .map(|&p| Complex64::new(p, 0.0))
        .collect();

    let assignment = BusAssignment::random(
        grid,
        config.n_load_buses,
        config.n_pv_buses,
        profile_cfg.n_households,
        config.seed.wrapping_add(1),
    )?;
    let frames = assign_buses(&households, &pv, grid, &assignment)?;
    let timeline = solve_timeline(grid, &frames, &PowerFlowOptions::default())?;
    let mask = ObservabilityMask::prefix_observed(grid.n_buses(), config.n_s, config.n_v)?;
    build_dataset(
        timeline,
        config.t_window,
        mask,
        config.n_sequences,
        config.split_fraction,
        config.seed.wrapping_add(2),
    )
}

// ---------------------------------------------------------------------------
// Persistence: meta.json + timeline.bin (little-endian f64 frame rows)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format: String,
    n_buses: usize,
    steps: usize,
    t_window: usize,
    seed: u64,
    mask: ObservabilityMask,
    scaler: Standardizer,
    train_starts: Vec<usize>,
    test_starts: Vec<usize>,
}

const DATASET_FORMAT: &str = "sfse-dataset-v1";

pub fn save_dataset(dataset: &SfseDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        n_buses: dataset.n_buses(),
        steps: dataset.timeline.len(),
        t_window: dataset.t_window,
        seed: dataset.seed,
        mask: dataset.mask.clone(),
        scaler: dataset.scaler.clone(),
        train_starts: dataset.train_starts.clone(),
        test_starts: dataset.test_starts.clone(),
    };
    let meta_text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(dir.join("meta.json"), meta_text)?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("timeline.bin"))?);
    for t in 0..dataset.timeline.len() {
        for x in dataset.timeline.frame_features(t) {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SfseDataset> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
    if meta.format != DATASET_FORMAT {
        return Err(Error::invalid(format!(
            "unsupported dataset format '{}'",
            meta.format
        )));
    }
    let mut raw = Vec::new();
    std::fs::File::open(dir.join("timeline.bin"))?.read_to_end(&mut raw)?;
    let row_len = 4 * meta.n_buses;
    let expected = meta.steps * row_len * 8;
    if raw.len() != expected {
        return Err(Error::invalid(format!(
            "timeline.bin has {} bytes, expected {expected}",
            raw.len()
        )));
    }
    let mut injections = Vec::with_capacity(meta.steps);
    let mut voltages = Vec::with_capacity(meta.steps);
    for t in 0..meta.steps {
        let base = t * row_len * 8;
        let floats: Vec<f64> = raw[base..base + row_len * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        injections.push(ComplexVec::from_flat(&floats[..2 * meta.n_buses])?);
        voltages.push(ComplexVec::from_flat(&floats[2 * meta.n_buses..])?);
    }
    Ok(SfseDataset {
        timeline: Timeline {
            n_buses: meta.n_buses,
            injections,
            voltages,
        },
        t_window: meta.t_window,
        mask: meta.mask,
        scaler: meta.scaler,
        train_starts: meta.train_starts,
        test_starts: meta.test_starts,
        seed: meta.seed,
    })
}
