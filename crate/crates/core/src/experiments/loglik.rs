//! Importance-sampled log-likelihood of a linear generator, checked against
//! its closed-form marginal.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{Encoder, LinearGaussian};
use crate::presgan::{fit_encoder, is_loglik, Generator, IsConfig};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoglikConfig {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub sigma: f64,
    pub train: usize,
    pub test: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_epochs: usize,
    pub encoder_batch: usize,
    pub encoder_lr: f64,
    pub is: IsConfig,
}

impl Default for LoglikConfig {
    fn default() -> Self {
        LoglikConfig {
            latent_dim: 2,
            data_dim: 5,
            sigma: 0.5,
            train: 1000,
            test: 100,
            encoder_hidden: Vec::new(),
            encoder_epochs: 50,
            encoder_batch: 100,
            encoder_lr: 1e-2,
            is: IsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointLoglik {
    pub estimate: f64,
    pub truth: f64,
    pub ess: f64,
    pub map_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoglikReport {
    pub samples: usize,
    pub gamma: f64,
    pub encoder_elbo: f64,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    /// Largest `|estimate − truth| / |truth|` over test points.
    pub max_rel_error: f64,
    pub mean_ess: f64,
    pub points: Vec<PointLoglik>,
}

pub fn run_loglik(cfg: &LoglikConfig, seed: u64, threads: usize) -> Result<LoglikReport> {
    let mut rng = Rng::seed(seed);
    let lg = LinearGaussian::random(cfg.latent_dim, cfg.data_dim, cfg.sigma, &mut rng);
    let sigma: Vec<f64> = lg.log_sigma.iter().map(|l| l.exp()).collect();
    let gen = Generator::linear(lg.w.clone(), lg.b.clone(), &sigma)?;
    let (train, _) = lg.sample(cfg.train, &mut rng);
    let (test, _) = lg.sample(cfg.test, &mut rng);
    let mut encoder = Encoder::new(cfg.data_dim, &cfg.encoder_hidden, cfg.latent_dim, &mut rng)?;
    let encoder_elbo = fit_encoder(
        &gen,
        &mut encoder,
        &train,
        cfg.encoder_epochs,
        cfg.encoder_batch,
        cfg.encoder_lr,
        &mut rng,
    )?;
    let jobs: Vec<(usize, Rng)> = (0..test.rows()).map(|i| (i, rng.split())).collect();
    let points = super::parallel_map(jobs, threads, |(i, mut r)| {
        let x = test.row(i);
        let est = is_loglik(&gen, &encoder, x, &cfg.is, &mut r)?;
        Ok(PointLoglik {
            estimate: est.log_lik,
            truth: lg.log_marginal(x),
            ess: est.ess,
            map_converged: est.map_converged,
        })
    })?;
    let n = points.len() as f64;
    Ok(LoglikReport {
        samples: cfg.is.samples,
        gamma: cfg.is.gamma,
        encoder_elbo,
        mean_estimate: points.iter().map(|p| p.estimate).sum::<f64>() / n,
        mean_truth: points.iter().map(|p| p.truth).sum::<f64>() / n,
        max_rel_error: points
            .iter()
            .map(|p| (p.estimate - p.truth).abs() / p.truth.abs())
            .fold(0.0, f64::max),
        mean_ess: points.iter().map(|p| p.ess).sum::<f64>() / n,
        points,
    })
}
