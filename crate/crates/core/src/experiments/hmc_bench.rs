//! Moment and reversibility checks for the HMC sampler on Gaussian targets.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hmc::{gaussian_target, hmc_sample, leapfrog, HmcConfig, StepSize};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcBenchConfig {
    pub chains: usize,
    pub hmc: HmcConfig,
    /// Correlation of the 2-D target.
    pub rho: f64,
    pub reversibility_steps: usize,
}

impl Default for HmcBenchConfig {
    fn default() -> Self {
        HmcBenchConfig {
            chains: 100,
            hmc: HmcConfig {
                steps: 100,
                burn_in: 1000,
                ..HmcConfig::default()
            },
            rho: 0.8,
            reversibility_steps: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentCheck {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Largest absolute error of the mean.
    pub mean_error: f64,
    /// Largest absolute error of the covariance entries.
    pub cov_error: f64,
    pub acceptance: f64,
    pub step_size: f64,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HmcBenchReport {
    pub standard_normal: MomentCheck,
    pub correlated: MomentCheck,
    /// Largest coordinate error after integrating forward, flipping the
    /// momentum and integrating back.
    pub reversibility_error: f64,
}

fn moments(prec: Vec<Vec<f64>>, cov: &[Vec<f64>], cfg: &HmcBenchConfig, rng: &mut Rng) -> Result<MomentCheck> {
    let d = prec.len();
    let mut target = gaussian_target(prec);
    let z0 = rng.normal_tensor(&[cfg.chains, d]);
    let mut step = StepSize::new(cfg.hmc.step_size);
    let out = hmc_sample(&mut target, &z0, &cfg.hmc, &mut step, rng)?;
    let diag = out.diagnostics.clone();
    let s = out.stacked().unwrap_or_else(|| z0.clone());
    let n = s.rows() as f64;
    let mut mean = vec![0.0; d];
    for i in 0..s.rows() {
        for (m, v) in mean.iter_mut().zip(s.row(i)) {
            *m += v / n;
        }
    }
    let mut emp = vec![vec![0.0; d]; d];
    for i in 0..s.rows() {
        let r = s.row(i);
        for a in 0..d {
            for b in 0..d {
                emp[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
            }
        }
    }
    let mean_error = mean.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cov_error = (0..d)
        .flat_map(|a| (0..d).map(move |b| (a, b)))
        .fold(0.0_f64, |m, (a, b)| m.max((emp[a][b] - cov[a][b]).abs()));
    Ok(MomentCheck {
        samples: s.rows(),
        mean,
        cov: emp,
        mean_error,
        cov_error,
        acceptance: diag.sample_accept,
        step_size: diag.step_size,
        warning: diag.warning,
    })
}

pub fn run_hmc_bench(cfg: &HmcBenchConfig, seed: u64) -> Result<HmcBenchReport> {
    cfg.hmc.validate()?;
    let mut rng = Rng::seed(seed);
    let standard_normal = moments(vec![vec![1.0]], &[vec![1.0]], cfg, &mut rng)?;
    let r = cfg.rho;
    let c = 1.0 / (1.0 - r * r);
    let prec = vec![vec![c, -r * c], vec![-r * c, c]];
    let correlated = moments(prec.clone(), &[vec![1.0, r], vec![r, 1.0]], cfg, &mut rng)?;

    let mut target = gaussian_target(prec);
    let z = rng.normal_tensor(&[cfg.chains, 2]);
    let p = rng.normal_tensor(&[cfg.chains, 2]);
    let (z1, p1, _) = leapfrog(&mut target, &z, &p, 0.1, cfg.reversibility_steps)?;
    let (z2, _, _) = leapfrog(&mut target, &z1, &p1.scale(-1.0), 0.1, cfg.reversibility_steps)?;
    let reversibility_error = z2.sub(&z)?.max_abs();
    Ok(HmcBenchReport {
        standard_normal,
        correlated,
        reversibility_error,
    })
}
