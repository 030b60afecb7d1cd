use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Weighted cloud of velocities standing in for a probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    samples: Vec<Vec3>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    pub fn uniform(samples: Vec<Vec3>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParam("empirical measure needs at least one sample".into()));
        }
        let w = 1.0 / samples.len() as f64;
        let weights = vec![w; samples.len()];
        Ok(EmpiricalMeasure { samples, weights, uniform: true })
    }

    /// Weights are rescaled to sum to one.
    pub fn weighted(samples: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.len() != weights.len() {
            return Err(Error::InvalidParam(format!(
                "{} samples with {} weights",
                samples.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParam("weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let uniform = weights.iter().all(|w| *w == weights[0]);
        Ok(EmpiricalMeasure { samples, weights, uniform })
    }

    pub fn samples(&self) -> &[Vec3] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        self.samples.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Vec3 {
        self.iter().map(|(v, w)| v * w).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `n` i.i.d. draws from the measure, as an unweighted cloud.
    pub fn resample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
        let mut cdf = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let out = (0..n)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() * acc;
                let i = cdf.partition_point(|c| *c <= u).min(self.samples.len() - 1);
                self.samples[i]
            })
            .collect();
        EmpiricalMeasure::uniform(out)
    }

    /// One draw from the measure.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec3 {
        let n = self.samples.len();
        if self.is_uniform() {
            return self.samples[rng.gen_range(0..n)];
        }
        let mut u: f64 = rng.gen();
        for (v, w) in self.iter() {
            if u < w {
                return v;
            }
            u -= w;
        }
        self.samples[n - 1]
    }

    /// Weighted mass of the samples satisfying `pred`.
    pub fn mass_where(&self, mut pred: impl FnMut(Vec3) -> bool) -> f64 {
        self.iter().filter(|(v, _)| pred(*v)).map(|(_, w)| w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn weights_are_normalized() {
        let m = EmpiricalMeasure::weighted(vec![Vec3::X, Vec3::Y], vec![1.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(!m.is_uniform());
    }

    #[test]
    fn rejects_empty_and_negative() {
        assert!(EmpiricalMeasure::uniform(vec![]).is_err());
        assert!(EmpiricalMeasure::weighted(vec![Vec3::X], vec![-1.0]).is_err());
        assert!(EmpiricalMeasure::weighted(vec![Vec3::X], vec![0.0]).is_err());
    }

    #[test]
    fn resample_respects_weights() {
        let m = EmpiricalMeasure::weighted(vec![Vec3::X, Vec3::Y], vec![0.2, 0.8]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = m.resample(20_000, &mut rng).unwrap();
        let frac = r.mass_where(|v| v == Vec3::Y);
        assert!((frac - 0.8).abs() < 0.02);
    }
}
