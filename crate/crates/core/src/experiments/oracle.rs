//! VAE, REM and IWAE fitted to data from a linear-Gaussian model whose
//! marginal likelihood is known in closed form.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{Encoder, LatentModel, LinearGaussian};
use crate::rem::{iwae_objective, train_rem, RemConfig, RemVariant};
use crate::tensor::Tensor;
use crate::vi::{elbo_estimate, train_vae, VaeConfig};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub sigma: f64,
    pub train: usize,
    pub test: usize,
    /// Particles for the IWAE evaluation bound.
    pub k_particles: usize,
    pub encoder_hidden: Vec<usize>,
    pub vae: VaeConfig,
    pub rem: RemConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            latent_dim: 2,
            data_dim: 5,
            sigma: 0.5,
            train: 500,
            test: 100,
            k_particles: 50,
            encoder_hidden: Vec::new(),
            vae: VaeConfig {
                epochs: 100,
                batch: 50,
                ..VaeConfig::default()
            },
            rem: RemConfig::default(),
        }
    }
}

/// One fitted method, scored on held-out data. All values are means per
/// test point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub method: String,
    /// ELBO with the method's encoder, averaged over `k_particles` draws.
    pub elbo: f64,
    /// `IWAE_K` with the method's encoder as proposal.
    pub iwae: f64,
    /// Closed-form `log p(x)` under the fitted model.
    pub exact_loglik: f64,
    /// Closed-form `log p(x)` under the generating model.
    pub truth: f64,
}

pub fn oracle_rows_to_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("method,elbo,iwae,exact_loglik,truth\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.method, r.elbo, r.iwae, r.exact_loglik, r.truth));
    }
    out
}

fn score(
    method: &str,
    model: &LatentModel,
    encoder: &Encoder,
    test: &Tensor,
    truth: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<OracleRow> {
    let n = test.rows() as f64;
    let elbo = elbo_estimate(model, encoder, test, k, rng)?.value;
    let q = encoder.encode(test)?;
    let mut iwae = 0.0;
    for i in 0..test.rows() {
        iwae += iwae_objective(model, &q.row(i), &test.select_rows(&[i]), k, rng)? / n;
    }
    let lg = LinearGaussian::from_model(model)?;
    let exact = (0..test.rows()).map(|i| lg.log_marginal(test.row(i))).sum::<f64>() / n;
    Ok(OracleRow {
        method: method.into(),
        elbo,
        iwae,
        exact_loglik: exact,
        truth,
    })
}

/// Per-epoch training objectives of every method, as `method,epoch,value`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleLog {
    pub rows: Vec<(String, usize, f64)>,
}

impl OracleLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,epoch,objective\n");
        for (m, e, v) in &self.rows {
            out.push_str(&format!("{m},{e},{v}\n"));
        }
        out
    }
}

pub fn run_oracle(cfg: &OracleConfig, seed: u64) -> Result<(Vec<OracleRow>, OracleLog)> {
    let mut rng = Rng::seed(seed);
    let truth_model = LinearGaussian::diagonal_posterior(cfg.latent_dim, cfg.data_dim, cfg.sigma, &mut rng);
    let (train, _) = truth_model.sample(cfg.train, &mut rng);
    let (test, _) = truth_model.sample(cfg.test, &mut rng);
    let truth = (0..test.rows()).map(|i| truth_model.log_marginal(test.row(i))).sum::<f64>() / test.rows() as f64;

    let mut rows = vec![score(
        "generating_model",
        &truth_model.to_model(),
        &truth_model.exact_encoder()?,
        &test,
        truth,
        cfg.k_particles,
        &mut rng,
    )?];
    let mut log = OracleLog::default();

    let init = LinearGaussian::random(cfg.latent_dim, cfg.data_dim, 1.0, &mut rng);
    let mut model = init.to_model();
    let mut encoder = Encoder::new(cfg.data_dim, &cfg.encoder_hidden, cfg.latent_dim, &mut rng)?;
    for r in train_vae(&mut model, &mut encoder, &train, &cfg.vae, &mut rng)? {
        log.rows.push(("vae".into(), r.epoch, r.elbo));
    }
    rows.push(score("vae", &model, &encoder, &test, truth, cfg.k_particles, &mut rng)?);

    for (name, variant) in [("rem_v1", RemVariant::V1), ("rem_v2", RemVariant::V2)] {
        let mut model = init.to_model();
        let mut encoder = Encoder::new(cfg.data_dim, &cfg.encoder_hidden, cfg.latent_dim, &mut rng)?;
        let rem = RemConfig {
            variant,
            ..cfg.rem.clone()
        };
        for r in train_rem(&mut model, &mut encoder, &train, &rem, &mut rng)? {
            log.rows.push((name.into(), r.epoch, r.iwae_bound));
        }
        rows.push(score(name, &model, &encoder, &test, truth, cfg.k_particles, &mut rng)?);
    }
    Ok((rows, log))
}
