//! PresGAN (or the plain noised GAN at `λ = 0`) on the ring of Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::presgan::{train_presgan_with, Discriminator, Generator, PresganConfig, PresganLogRow};
use crate::tensor::Tensor;
use crate::Rng;

use super::ring::{imbalanced_weights, mode_coverage, ModeCoverage, RingTarget};
use super::ring::{DEFAULT_ASSIGN_RADIUS, DEFAULT_MIN_FRACTION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingsimConfig {
    #[serde(flatten)]
    pub presgan: PresganConfig,
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    /// Number of modes downweighted to 1e-3 (0 keeps the ring uniform).
    pub imbalance: usize,
    pub data_samples: usize,
    pub eval_samples: usize,
    pub assign_radius: f64,
    pub min_fraction: f64,
}

impl Default for RingsimConfig {
    fn default() -> Self {
        RingsimConfig {
            presgan: PresganConfig::default(),
            modes: 10,
            radius: 3.0,
            std: 0.05,
            imbalance: 0,
            data_samples: 5000,
            eval_samples: 5000,
            assign_radius: DEFAULT_ASSIGN_RADIUS,
            min_fraction: DEFAULT_MIN_FRACTION,
        }
    }
}

impl RingsimConfig {
    pub fn target(&self) -> Result<RingTarget> {
        RingTarget::with_weights(self.radius, self.std, imbalanced_weights(self.imbalance, self.modes)?)
    }
}

#[derive(Clone, Debug)]
pub struct RingsimResult {
    pub coverage: ModeCoverage,
    /// Generated `x = μ(z) + σ ⊙ ε`.
    pub samples: Tensor,
    pub log: Vec<PresganLogRow>,
    pub generator: Generator,
}

/// Trains on `data_samples` ring draws and scores `eval_samples`
/// generated points. `on_epoch` sees every log row.
pub fn run_ringsim(cfg: &RingsimConfig, mut on_epoch: impl FnMut(&PresganLogRow) -> Result<()>) -> Result<RingsimResult> {
    cfg.presgan.validate()?;
    let target = cfg.target()?;
    let p = &cfg.presgan;
    let mut rng = Rng::seed(p.seed);
    let data = target.sample(cfg.data_samples, &mut rng);
    let mut gen = Generator::mlp(p.latent_dim, &p.hidden, 2, p.sigma_init_log, (p.sigma_low, p.sigma_high), &mut rng)?;
    let mut disc = Discriminator::new(2, &p.hidden, &mut rng)?;
    let mut eval_rng = rng.split();
    let log = train_presgan_with(&mut gen, &mut disc, &data, p, &mut rng, |row, _| on_epoch(row))?;
    let z = eval_rng.normal_tensor(&[cfg.eval_samples, p.latent_dim]);
    let eps = eval_rng.normal_tensor(&[cfg.eval_samples, 2]);
    let samples = gen.generate(&z, &eps)?;
    let coverage = mode_coverage(&samples, &target, cfg.assign_radius, cfg.min_fraction);
    Ok(RingsimResult {
        coverage,
        samples,
        log,
        generator: gen,
    })
}
