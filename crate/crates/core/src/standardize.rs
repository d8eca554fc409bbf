//! Per-feature standardization (zero mean, unit variance on the fitting set).
//!
//! One scaler covers a full flattened frame: every bus x {Re, Im} x
//! {power, voltage} coordinate is standardized independently. Population
//! (biased) standard deviation is used, consistent with every other std in
//! the crate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to per-feature standard deviations so constant features map
/// to zero instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fit on rows of equal dimension (the training split only). Uses
    /// Welford's streaming moments; the returned std is the population one,
    /// floored at [`STD_FLOOR`].
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for row in rows {
            if count == 0 {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            } else if row.len() != mean.len() {
                return Err(Error::DimensionMismatch {
                    what: "standardizer fit row",
                    expected: mean.len(),
                    got: row.len(),
                });
            }
            count += 1;
            for (k, &x) in row.iter().enumerate() {
                let delta = x - mean[k];
                mean[k] += delta / count as f64;
                m2[k] += delta * (x - mean[k]);
            }
        }
        if count == 0 {
            return Err(Error::invalid("standardizer fit on an empty set"));
        }
        let std = m2
            .iter()
            .map(|&s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Standardizer { mean, std })
    }

    /// Identity scaler (mean 0, std 1) of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                what: "standardizer input",
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `x -> (x - mean) / std`, elementwise.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.mean[k]) / self.std[k])
            .collect())
    }

    /// Exact inverse of [`Standardizer::apply`].
    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, &v)| v * self.std[k] + self.mean[k])
            .collect())
    }

    /// Standardize a single feature by its index.
    pub fn apply_at(&self, index: usize, value: f64) -> f64 {
        (value - self.mean[index]) / self.std[index]
    }

    /// Restrict to a contiguous feature range (e.g. the voltage block of a
    /// frame scaler).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Standardizer {
        Standardizer {
            mean: self.mean[range.clone()].to_vec(),
            std: self.std[range].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_convention() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert!((s.mean()[0] - 2.0).abs() < 1e-15);
        assert!((s.std()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = s.apply(&[1.0]).unwrap();
        assert!((z[0] + 1.2247448).abs() < 1e-6);
        let z = s.apply(&[3.0]).unwrap();
        assert!((z[0] - 1.2247448).abs() < 1e-6);
    }

    #[test]
    fn constant_feature_floored() {
        let rows: Vec<Vec<f64>> = vec![vec![5.0, 1.0], vec![5.0, 3.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.std()[0], STD_FLOOR);
        let z = s.apply(&[5.0, 2.0]).unwrap();
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn round_trip_exact() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.1, (i as f64).sin(), 42.0])
            .collect();
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let x = vec![1.25, -0.7, 42.0];
        let back = s.invert(&s.apply(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fitted_split_has_zero_mean_unit_variance() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i as f64 * 0.7).sin() * 3.0 + 5.0])
            .collect();
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let z: Vec<f64> = rows.iter().map(|r| s.apply(r).unwrap()[0]).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_fit_rejected() {
        let rows: Vec<Vec<f64>> = vec![];
        assert!(Standardizer::fit(rows.iter().map(|r| r.as_slice())).is_err());
    }
}
