//! A mixture of Gaussians on a circle and the mode-coverage metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::sample_categorical;
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingTarget {
    pub radius: f64,
    pub std: f64,
    pub weights: Vec<f64>,
}

impl Default for RingTarget {
    fn default() -> Self {
        RingTarget::uniform(10, 3.0, 0.05)
    }
}

impl RingTarget {
    pub fn uniform(modes: usize, radius: f64, std: f64) -> Self {
        RingTarget {
            radius,
            std,
            weights: vec![1.0 / modes as f64; modes],
        }
    }

    pub fn with_weights(radius: f64, std: f64, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("ring weights must be non-negative and sum to 1".into()));
        }
        Ok(RingTarget { radius, std, weights })
    }

    pub fn modes(&self) -> usize {
        self.weights.len()
    }

    /// `(r cos(2πk/K), r sin(2πk/K))`.
    pub fn center(&self, k: usize) -> [f64; 2] {
        let a = k as f64 * 2.0 * std::f64::consts::PI / self.modes() as f64;
        [self.radius * a.cos(), self.radius * a.sin()]
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let mut out = Tensor::zeros(&[n, 2]);
        for i in 0..n {
            let c = self.center(sample_categorical(&self.weights, rng));
            let row = out.row_mut(i);
            row[0] = c[0] + self.std * rng.normal();
            row[1] = c[1] + self.std * rng.normal();
        }
        out
    }
}

/// `k` leading modes at weight 10⁻³ and the rest equal, renormalized.
pub fn imbalanced_weights(k: usize, modes: usize) -> Result<Vec<f64>> {
    if k >= modes {
        return Err(Error::Config(format!("imbalance index {k} must be below the mode count {modes}")));
    }
    let rest = (1.0 - 1e-3 * k as f64) / (modes - k) as f64;
    let raw: Vec<f64> = (0..modes).map(|i| if i < k { 1e-3 } else { rest }).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeCoverage {
    pub modes_covered: usize,
    /// Fraction of all samples assigned to each mode.
    pub proportions: Vec<f64>,
    pub unassigned: f64,
    /// `KL(assigned ‖ target)`; `+∞` when nothing is assigned.
    #[serde(serialize_with = "serialize_kl")]
    pub kl: f64,
    pub assign_radius: f64,
    pub min_fraction: f64,
}

fn serialize_kl<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

pub const DEFAULT_ASSIGN_RADIUS: f64 = 0.5;
pub const DEFAULT_MIN_FRACTION: f64 = 0.02;
const KL_SMOOTHING: f64 = 1e-10;

pub fn mode_coverage(samples: &Tensor, target: &RingTarget, assign_radius: f64, min_fraction: f64) -> ModeCoverage {
    let k = target.modes();
    let n = samples.rows();
    let centers: Vec<[f64; 2]> = (0..k).map(|j| target.center(j)).collect();
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let x = samples.row(i);
        let (best, dist) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, (x[0] - c[0]).hypot(x[1] - c[1])))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if dist <= assign_radius {
            counts[best] += 1;
        }
    }
    let assigned: usize = counts.iter().sum();
    let proportions: Vec<f64> = counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect();
    let kl = if assigned == 0 {
        f64::INFINITY
    } else {
        let p: Vec<f64> = counts.iter().map(|&c| c as f64 / assigned as f64 + KL_SMOOTHING).collect();
        let q: Vec<f64> = target.weights.iter().map(|w| w + KL_SMOOTHING).collect();
        let (zp, zq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter()
            .zip(&q)
            .map(|(pi, qi)| (pi / zp) * ((pi / zp) / (qi / zq)).ln())
            .sum::<f64>()
            .max(0.0)
    };
    ModeCoverage {
        modes_covered: proportions.iter().filter(|&&p| p >= min_fraction && p > 0.0).count(),
        unassigned: (n - assigned) as f64 / n.max(1) as f64,
        proportions,
        kl,
        assign_radius,
        min_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_center_is_on_the_x_axis() {
        assert_eq!(RingTarget::default().center(0), [3.0, 0.0]);
    }

    #[test]
    fn imbalance_schedule() {
        assert!(imbalanced_weights(0, 10).unwrap().iter().all(|w| (w - 0.1).abs() < 1e-15));
        let w = imbalanced_weights(1, 10).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - 1e-3).abs() < 1e-12 && (w[1] - 0.999 / 9.0).abs() < 1e-12);
        assert!(imbalanced_weights(10, 10).is_err());
    }

    #[test]
    fn self_samples_cover_every_mode() {
        let t = RingTarget::default();
        let x = t.sample(5000, &mut Rng::seed(1));
        let c = mode_coverage(&x, &t, DEFAULT_ASSIGN_RADIUS, DEFAULT_MIN_FRACTION);
        assert_eq!(c.modes_covered, 10);
        assert!(c.kl < 0.01);
        let se = 3.0 * (0.09f64 / 5000.0).sqrt();
        assert!(c.proportions.iter().all(|p| (p - 0.1).abs() < se));
    }

    #[test]
    fn point_mass_and_empty_assignment() {
        let t = RingTarget::default();
        let one = Tensor::from_rows(&vec![vec![3.0, 0.0]; 20]).unwrap();
        let c = mode_coverage(&one, &t, 0.5, 0.02);
        assert_eq!(c.modes_covered, 1);
        assert!((c.kl - 10f64.ln()).abs() < 1e-6);
        let far = Tensor::from_rows(&vec![vec![0.0, 0.0]; 20]).unwrap();
        let c = mode_coverage(&far, &t, 0.5, 0.02);
        assert_eq!(c.modes_covered, 0);
        assert!(c.kl.is_infinite());
    }
}
