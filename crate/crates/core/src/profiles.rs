//! Synthetic household-load and PV-generation profiles.
//!
//! Stand-in for recorded feeder data: per-household active power with a
//! diurnal base shape, a bounded random walk, and white noise, plus one PV
//! active-power series shaped as a daytime bell. Everything is generated at
//! the source resolution (1 s by default), then smoothed and downsampled the
//! same way field recordings would be preprocessed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadProfileConfig {
    pub n_households: usize,
    /// Number of samples at the source resolution.
    pub duration_steps: usize,
    pub source_resolution_s: f64,
    /// Samples per day at the source resolution.
    pub daily_period_steps: usize,
    /// White-noise amplitude relative to the household peak.
    pub noise_level: f64,
    /// Bound of the slow random-walk component relative to the household peak.
    pub walk_amplitude: f64,
    /// Household peak active power, per-unit.
    pub load_peak: f64,
    /// PV array peak active power, per-unit.
    pub pv_peak: f64,
    pub seed: u64,
}

impl Default for LoadProfileConfig {
    fn default() -> Self {
        LoadProfileConfig {
            n_households: 8,
            duration_steps: 604_800,
            source_resolution_s: 1.0,
            daily_period_steps: 86_400,
            noise_level: 0.04,
            walk_amplitude: 0.20,
            load_peak: 0.012,
            pv_peak: 0.035,
            seed: 1,
        }
    }
}

/// Active-power series for each household plus the shared PV array.
/// All values are nonnegative; sign conventions are applied at bus
/// assignment time.
#[derive(Debug, Clone)]
pub struct SourceProfiles {
    pub households: Vec<Vec<f64>>,
    pub pv: Vec<f64>,
}

/// Diurnal load shape over the day fraction `u` in [0, 1): a base level with
/// morning and evening bumps. Strictly positive.
fn load_shape(u: f64, morning: f64, evening: f64) -> f64 {
    let bump = |center: f64, width: f64| {
        let mut d = (u - center).abs();
        d = d.min(1.0 - d); // periodic distance
        (-(d * d) / (width * width)).exp()
    };
    0.35 + 0.45 * bump(morning, 0.055) + 0.75 * bump(evening, 0.075)
}

/// Solar bell over the day fraction: zero outside [sunrise, sunset].
fn solar_shape(u: f64) -> f64 {
    const SUNRISE: f64 = 0.27;
    const SUNSET: f64 = 0.80;
    if u <= SUNRISE || u >= SUNSET {
        return 0.0;
    }
    let x = (u - SUNRISE) / (SUNSET - SUNRISE);
    (std::f64::consts::PI * x).sin().powf(1.5)
}

pub fn synth_profiles(config: &LoadProfileConfig) -> Result<SourceProfiles> {
    if config.duration_steps == 0 {
        return Err(Error::invalid("duration_steps must be positive"));
    }
    if config.n_households == 0 {
        return Err(Error::invalid("n_households must be positive"));
    }
    if config.daily_period_steps == 0 {
        return Err(Error::invalid("daily_period_steps must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps = config.duration_steps;
    let day = config.daily_period_steps as f64;

    let mut households = Vec::with_capacity(config.n_households);
    for _ in 0..config.n_households {
        let scale = config.load_peak * rng.random_range(0.7..1.3);
        let morning = rng.random_range(0.28..0.38);
        let evening = rng.random_range(0.72..0.85);
        let walk_bound = config.walk_amplitude * config.load_peak;
        let walk_step = walk_bound / 600.0; // reshuffles over ~10 minutes
        let noise = config.noise_level * config.load_peak;

        let mut series = Vec::with_capacity(steps);
        let mut walk = 0.0f64;
        for t in 0..steps {
            let u = (t as f64 / day).fract();
            if walk_bound > 0.0 {
                walk = (walk + rng.random_range(-walk_step..walk_step))
                    .clamp(-walk_bound, walk_bound);
            }
            let eps = if noise > 0.0 {
                rng.random_range(-noise..noise)
            } else {
                0.0
            };
            series.push((scale * load_shape(u, morning, evening) + walk + eps).max(0.0));
        }
        households.push(series);
    }

    // PV: bell shape modulated by a slow cloud factor; stays exactly zero at
    // night because both the walk and the noise multiply the bell.
    let mut pv = Vec::with_capacity(steps);
    let mut cloud = 0.0f64;
    let cloud_bound = config.walk_amplitude;
    let cloud_step = cloud_bound / 900.0;
    for t in 0..steps {
        let u = (t as f64 / day).fract();
        let bell = solar_shape(u);
        if cloud_bound > 0.0 {
            cloud = (cloud + rng.random_range(-cloud_step..cloud_step))
                .clamp(-cloud_bound, cloud_bound);
        }
        let eps = if config.noise_level > 0.0 {
            rng.random_range(-config.noise_level..config.noise_level)
        } else {
            0.0
        };
        pv.push((config.pv_peak * bell * (1.0 + cloud + eps)).max(0.0));
    }

    Ok(SourceProfiles { households, pv })
}

/// Attach reactive power at a fixed power factor:
/// `Q(t) = P(t) tan(acos(pf))`.
pub fn reactive_from_pf(p_series: &[f64], power_factor: f64) -> Result<Vec<Complex64>> {
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(Error::invalid(format!(
            "power factor {power_factor} outside (0, 1]"
        )));
    }
    let tan_phi = power_factor.acos().tan();
    Ok(p_series
        .iter()
        .map(|&p| Complex64::new(p, p * tan_phi))
        .collect())
}

/// Trailing moving average of length `window`; the first `window - 1` outputs
/// average the available prefix. Output has the same length as the input.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("smoothing window must be >= 1"));
    }
    if window > series.len() {
        return Err(Error::invalid(format!(
            "smoothing window {} exceeds series length {}",
            window,
            series.len()
        )));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0f64;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        let count = (i + 1).min(window);
        out.push(acc / count as f64);
    }
    Ok(out)
}

/// Keep every `factor`-th sample, starting at index `factor - 1`.
/// Paired with a trailing moving average of the same length this yields
/// non-overlapping window means.
pub fn downsample(series: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    Ok(series
        .iter()
        .skip(factor - 1)
        .step_by(factor)
        .copied()
        .collect())
}

/// Complex-valued variants used by the pipeline (smoothing and decimation act
/// independently on the real and imaginary parts).
pub fn smooth_complex(series: &[Complex64], window: usize) -> Result<Vec<Complex64>> {
    let re: Vec<f64> = series.iter().map(|z| z.re).collect();
    let im: Vec<f64> = series.iter().map(|z| z.im).collect();
    let re = smooth(&re, window)?;
    let im = smooth(&im, window)?;
    Ok(re
        .into_iter()
        .zip(im)
        .map(|(r, i)| Complex64::new(r, i))
        .collect())
}

pub fn downsample_complex(series: &[Complex64], factor: usize) -> Result<Vec<Complex64>> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    Ok(series
        .iter()
        .skip(factor - 1)
        .step_by(factor)
        .copied()
        .collect())
}
