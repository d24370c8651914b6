//! Variational inference: ELBO estimation, score-function and
//! reparameterization gradients, VAE training and the latent-collapse
//! metrics (KL of the aggregated posterior to the prior, mutual information,
//! active units).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ln_2pi, std_normal_log_density};
use crate::models::{EncoderVars, Encoder, GaussianDiag, LatentModel, LatentVars, Likelihood};
use crate::tensor::{logsumexp, Adam, AdamConfig, Tape, Tensor, Var};
use crate::Rng;

/// `KL(q_i ‖ N(0, I))` per row.
pub fn gaussian_kl(q: &GaussianDiag) -> Vec<f64> {
    q.kl_std_normal_rows()
}

/// Closed-form `½ Σ (σ² + μ² − log σ² − 1)` per row on a tape.
pub fn gaussian_kl_rows(tape: &mut Tape, mu: Var, var: Var) -> Result<Var> {
    let m2 = tape.square(mu)?;
    let a = tape.add(var, m2)?;
    let lv = tape.log(var)?;
    let b = tape.sub(a, lv)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.sum_last(c)?;
    tape.scale(s, 0.5)
}

/// `z = μ + √var ⊙ ε` on a tape, with `ε` fixed.
pub fn reparameterize(tape: &mut Tape, mu: Var, var: Var, eps: &Tensor) -> Result<Var> {
    let sd = tape.sqrt(var)?;
    let e = tape.constant(eps.clone());
    let noise = tape.mul(sd, e)?;
    tape.add(mu, noise)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElboEstimate {
    /// Mean over data rows of `reconstruction − kl`.
    pub value: f64,
    pub samples: usize,
    pub reconstruction: f64,
    pub kl: f64,
    pub per_row: Vec<f64>,
}

/// Per-row `(reconstruction, kl)` nodes for one reparameterized draw.
pub fn elbo_terms(
    tape: &mut Tape,
    model: &LatentVars,
    encoder: &EncoderVars,
    x: Var,
    eps: &Tensor,
) -> Result<(Var, Var)> {
    let (mu, var) = encoder.encode(tape, x)?;
    let z = reparameterize(tape, mu, var, eps)?;
    let recon = model.log_lik_rows(tape, x, z)?;
    let kl = gaussian_kl_rows(tape, mu, var)?;
    Ok((recon, kl))
}

/// `(1/S) Σ_s log p_θ(x | z⁽ˢ⁾) − KL(q(z|x) ‖ p(z))` with reparameterized
/// draws and the closed-form KL.
pub fn elbo_estimate(
    model: &LatentModel,
    encoder: &Encoder,
    x: &Tensor,
    samples: usize,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    if samples == 0 {
        return Err(Error::domain("elbo_estimate needs S ≥ 1"));
    }
    let q = encoder.encode(x)?;
    let kl = gaussian_kl(&q);
    let n = x.rows();
    let mut recon = vec![0.0; n];
    for _ in 0..samples {
        let (z, _) = q.sample(rng);
        let lj = model.log_joint(x, &z)?;
        for i in 0..n {
            recon[i] += (lj[i] - std_normal_log_density(z.row(i))) / samples as f64;
        }
    }
    let per_row: Vec<f64> = recon.iter().zip(&kl).map(|(r, k)| r - k).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    Ok(ElboEstimate {
        value: mean(&per_row),
        samples,
        reconstruction: mean(&recon),
        kl: mean(&kl),
        per_row,
    })
}

/// Gradient with respect to the parameters `λ = (μ, log σ²)` of a single
/// (non-amortized) diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGradient {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LocalGradient {
    pub fn flat(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.log_var).cloned().collect()
    }
}

fn check_single_row(q: &GaussianDiag, x: &Tensor) -> Result<()> {
    if q.rows() != 1 || x.rows() != 1 {
        return Err(Error::shape("local_gradient", q.mean.shape(), x.shape()));
    }
    Ok(())
}

/// Score-function estimator
/// `(1/S) Σ (log p(x, z⁽ˢ⁾) − log q(z⁽ˢ⁾)) ∇_λ log q(z⁽ˢ⁾)`.
pub fn score_gradient(
    model: &LatentModel,
    q: &GaussianDiag,
    x: &Tensor,
    samples: usize,
    rng: &mut Rng,
) -> Result<LocalGradient> {
    check_single_row(q, x)?;
    let d = q.dim();
    let (mu, lv) = (q.mean.row(0), q.log_var.row(0));
    let mut g = LocalGradient {
        mean: vec![0.0; d],
        log_var: vec![0.0; d],
    };
    for _ in 0..samples {
        let (z, _) = q.sample(rng);
        let f = model.log_joint(x, &z)?[0] - q.log_density_rows(&z)[0];
        for k in 0..d {
            let diff = z.data()[k] - mu[k];
            let inv = (-lv[k]).exp();
            g.mean[k] += f * diff * inv / samples as f64;
            g.log_var[k] += f * 0.5 * (diff * diff * inv - 1.0) / samples as f64;
        }
    }
    Ok(g)
}

/// Reparameterization estimator of the same gradient, on
/// `log p(x, μ + σ ⊙ ε) + H[q]`.
pub fn reparam_gradient_local(
    model: &LatentModel,
    q: &GaussianDiag,
    x: &Tensor,
    samples: usize,
    rng: &mut Rng,
) -> Result<LocalGradient> {
    check_single_row(q, x)?;
    let d = q.dim();
    let mut g = LocalGradient {
        mean: vec![0.0; d],
        log_var: vec![0.5; d],
    };
    for _ in 0..samples {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let mu = tape.leaf(q.mean.clone());
        let lv = tape.leaf(q.log_var.clone());
        let half = tape.scale(lv, 0.5)?;
        let sd = tape.exp(half)?;
        let eps = tape.constant(rng.normal_tensor(q.mean.shape()));
        let noise = tape.mul(sd, eps)?;
        let z = tape.add(mu, noise)?;
        let xv = tape.constant(x.clone());
        let lj = vars.log_joint_rows(&mut tape, xv, z)?;
        let total = tape.sum(lj)?;
        let grads = tape.grad(total)?;
        let (gm, gl) = (grads.wrt(mu), grads.wrt(lv));
        for k in 0..d {
            g.mean[k] += gm.data()[k] / samples as f64;
            g.log_var[k] += gl.data()[k] / samples as f64;
        }
    }
    Ok(g)
}

/// Gradients of the S-sample ELBO (mean over rows) with respect to the
/// encoder and model parameters, in their `params()` order.
pub struct ElboGradients {
    pub elbo: f64,
    pub encoder: Vec<Tensor>,
    pub model: Vec<Tensor>,
}

pub fn reparam_gradient(
    model: &LatentModel,
    encoder: &Encoder,
    x: &Tensor,
    samples: usize,
    rng: &mut Rng,
) -> Result<ElboGradients> {
    let eps: Vec<Tensor> = (0..samples)
        .map(|_| rng.normal_tensor(&[x.rows(), encoder.latent_dim()]))
        .collect();
    elbo_gradients_fixed(model, encoder, x, &eps, false)
}

/// ELBO gradients for given noise draws, so the estimate is a
/// deterministic function of the parameters.
pub fn elbo_gradients_fixed(
    model: &LatentModel,
    encoder: &Encoder,
    x: &Tensor,
    eps: &[Tensor],
    check_finite: bool,
) -> Result<ElboGradients> {
    let mut tape = Tape::new().with_finite_checks(check_finite);
    let mv = model.bind(&mut tape, true);
    let ev = encoder.bind(&mut tape, true);
    let obj = elbo_objective(&mut tape, &mv, &ev, x, eps)?;
    let grads = tape.grad(obj)?;
    Ok(ElboGradients {
        elbo: tape.scalar(obj),
        encoder: grads.wrt_all(&ev.vars()),
        model: grads.wrt_all(&mv.vars()),
    })
}

/// Mean over rows and draws of `reconstruction − kl`.
pub fn elbo_objective(
    tape: &mut Tape,
    mv: &LatentVars,
    ev: &EncoderVars,
    x: &Tensor,
    eps: &[Tensor],
) -> Result<Var> {
    let xv = tape.constant(x.clone());
    let mut acc: Option<Var> = None;
    for e in eps {
        let (recon, kl) = elbo_terms(tape, mv, ev, xv, e)?;
        let row = tape.sub(recon, kl)?;
        let m = tape.mean(row)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, m)?,
            None => m,
        });
    }
    let total = acc.ok_or_else(|| Error::domain("ELBO needs at least one draw"))?;
    tape.scale(total, 1.0 / eps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Monte Carlo draws per ELBO estimate during training.
    pub samples: usize,
    /// Monte Carlo draws per point for the KL/MI metrics.
    pub metric_samples: usize,
    /// Points used for the per-epoch collapse metrics.
    pub metric_points: usize,
    pub active_threshold: f64,
    pub learn_noise: bool,
    pub check_finite: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 50,
            batch: 64,
            lr: 1e-2,
            samples: 1,
            metric_samples: 20,
            metric_points: 500,
            active_threshold: 0.01,
            learn_noise: true,
            check_finite: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VaeLogRow {
    pub epoch: usize,
    pub elbo: f64,
    pub kl: f64,
    pub mi: f64,
    pub au: usize,
    pub wallclock_s: f64,
}

pub fn log_to_csv(rows: &[VaeLogRow]) -> String {
    let mut out = String::from("epoch,elbo,kl,mi,au\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.elbo, r.kl, r.mi, r.au));
    }
    out
}

/// Joint Adam ascent on the ELBO for the decoder and the encoder.
pub fn train_vae(
    model: &mut LatentModel,
    encoder: &mut Encoder,
    data: &Tensor,
    config: &VaeConfig,
    rng: &mut Rng,
) -> Result<Vec<VaeLogRow>> {
    let n = data.rows();
    if config.batch == 0 || config.batch > n {
        return Err(Error::Config(format!(
            "batch size {} must be in 1..={n}",
            config.batch
        )));
    }
    let adam_cfg = AdamConfig {
        lr: config.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt_model = Adam::new(adam_cfg, &model.params());
    let mut opt_enc = Adam::new(adam_cfg, &encoder.params());
    let gaussian_noise = matches!(model.likelihood, Likelihood::Gaussian { .. });
    let metric_data = data.select_rows(&(0..n.min(config.metric_points)).collect::<Vec<_>>());
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = rng.permutation(n);
        let (mut elbo_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0);
        for idx in order.chunks(config.batch) {
            let xb = data.select_rows(idx);
            let eps: Vec<Tensor> = (0..config.samples)
                .map(|_| rng.normal_tensor(&[idx.len(), encoder.latent_dim()]))
                .collect();
            let mut tape = Tape::new().with_finite_checks(config.check_finite);
            let mv = model.bind(&mut tape, true);
            let ev = encoder.bind(&mut tape, true);
            let obj = elbo_objective(&mut tape, &mv, &ev, &xb, &eps)
                .map_err(|e| abort(epoch, &e.to_string()))?;
            let elbo = tape.scalar(obj);
            if !elbo.is_finite() {
                return Err(abort(epoch, &format!("ELBO = {elbo}")));
            }
            let neg = tape.neg(obj)?;
            let grads = tape.grad(neg)?;
            let mut gm = grads.wrt_all(&mv.vars());
            if gaussian_noise && !config.learn_noise {
                let last = gm.len() - 1;
                gm[last] = Tensor::zeros(gm[last].shape());
            }
            let ge = grads.wrt_all(&ev.vars());
            opt_model.step(&mut model.params_mut(), &gm)?;
            opt_enc.step(&mut encoder.params_mut(), &ge)?;
            let q = encoder.encode(&xb)?;
            kl_sum += gaussian_kl(&q).iter().sum::<f64>() / idx.len() as f64;
            elbo_sum += elbo;
            batches += 1;
        }
        let q = encoder.encode(&metric_data)?;
        let mi = mutual_information_metric(&q, config.metric_samples, rng).value;
        let au = active_units(&q.mean, config.active_threshold)?;
        log.push(VaeLogRow {
            epoch,
            elbo: elbo_sum / batches as f64,
            kl: kl_sum / batches as f64,
            mi,
            au,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

fn abort(epoch: usize, detail: &str) -> Error {
    Error::Numerical(format!("VAE training aborted in epoch {epoch}: {detail}"))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        McEstimate {
            value: mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// For draws `z ~ q(z | x_i)`, returns per-draw `(log q(z | x_i), log q(z))`
/// with `q(z)` the uniform mixture of all rows of `q`.
fn aggregate_draws(q: &GaussianDiag, samples: usize, rng: &mut Rng) -> Vec<(f64, f64, f64)> {
    let n = q.rows();
    let log_n = (n as f64).ln();
    let mut out = Vec::with_capacity(n * samples);
    for _ in 0..samples {
        let (z, _) = q.sample(rng);
        let own = q.log_density_rows(&z);
        for i in 0..n {
            let zi = z.row(i);
            let agg = logsumexp(&q.log_density_each(zi)) - log_n;
            out.push((own[i], agg, std_normal_log_density(zi)));
        }
    }
    out
}

/// `KL(q(z) ‖ p(z))` for the aggregated posterior
/// `q(z) = (1/N) Σ_i q(z | x_i)`.
pub fn kl_q_prior_metric(q: &GaussianDiag, samples: usize, rng: &mut Rng) -> McEstimate {
    let terms: Vec<f64> = aggregate_draws(q, samples, rng)
        .into_iter()
        .map(|(_, agg, prior)| agg - prior)
        .collect();
    McEstimate::from_samples(&terms)
}

/// `I_q(x, z) = E[log q(z | x)] − E[log q(z)]` under the variational joint.
pub fn mutual_information_metric(q: &GaussianDiag, samples: usize, rng: &mut Rng) -> McEstimate {
    let terms: Vec<f64> = aggregate_draws(q, samples, rng)
        .into_iter()
        .map(|(own, agg, _)| own - agg)
        .collect();
    McEstimate::from_samples(&terms)
}

/// Number of latent dimensions whose posterior mean varies across the data
/// by at least `threshold` (population variance).
pub fn active_units(means: &Tensor, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0) {
        return Err(Error::domain("active-unit threshold must be positive"));
    }
    let (n, d) = (means.rows(), means.cols());
    let mut count = 0;
    for k in 0..d {
        let col: Vec<f64> = (0..n).map(|i| means.get2(i, k)).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        if var >= threshold {
            count += 1;
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub kl_q_prior: f64,
    pub mutual_information: f64,
    pub active_units: usize,
    pub threshold: f64,
}

pub fn collapse_report(
    encoder: &Encoder,
    data: &Tensor,
    samples: usize,
    threshold: f64,
    rng: &mut Rng,
) -> Result<CollapseReport> {
    if data.is_empty() {
        return Err(Error::domain("collapse metrics need data"));
    }
    let q = encoder.encode(data)?;
    Ok(CollapseReport {
        kl_q_prior: kl_q_prior_metric(&q, samples, rng).value,
        mutual_information: mutual_information_metric(&q, samples, rng).value,
        active_units: active_units(&q.mean, threshold)?,
        threshold,
    })
}

/// `log N(z; μ, diag(var))` summed, for tests and oracles.
pub fn diag_normal_log_density(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(var)
        .map(|((z, m), v)| -0.5 * ((z - m).powi(2) / v + v.ln() + ln_2pi()))
        .sum()
}
