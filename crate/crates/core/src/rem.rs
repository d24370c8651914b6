//! Reweighted expectation maximization and its relatives.
//!
//! All estimators share the self-normalized importance set
//! `α_k ∝ p_θ(x, z_k) / r(z_k)`. The model gradient `Σ_k α_k ∇_θ log p_θ(x, z_k)`
//! is the IWAE gradient; the proposal gradient
//! `−Σ_k β_k ∇_η log r_η(z_k | x)`, with particles and weights from a
//! hyperproposal `s`, fits `r_η` by the inclusive KL (and is the RWS gradient
//! when `s = r_η`). The hyperproposal comes from moment matching.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, MvNormal};
use crate::models::{Encoder, GaussianDiag, LatentModel};
use crate::tensor::{logsumexp, Adam, AdamConfig, Tape, Tensor, Var};
use crate::vi::gaussian_kl;
use crate::Rng;

/// A sampling distribution over latents with a tractable density.
pub trait Proposal {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut Rng) -> Vec<f64>;
    fn log_density(&self, z: &[f64]) -> f64;
}

/// Uses row 0 of the diagonal Gaussian.
impl Proposal for GaussianDiag {
    fn dim(&self) -> usize {
        GaussianDiag::dim(self)
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let (m, lv) = (self.mean.row(0), self.log_var.row(0));
        m.iter()
            .zip(lv)
            .map(|(m, l)| m + (0.5 * l).exp() * rng.normal())
            .collect()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.log_density_each(z)[0]
    }
}

impl Proposal for MvNormal {
    fn dim(&self) -> usize {
        MvNormal::dim(self)
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        MvNormal::sample(self, rng).iter().cloned().collect()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        MvNormal::log_density(self, z)
    }
}

/// Particles with raw and self-normalized log-space weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceSet {
    /// `[K, d_z]`
    pub particles: Tensor,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl ImportanceSet {
    pub fn new(particles: Tensor, log_weights: Vec<f64>) -> Result<Self> {
        if particles.rows() != log_weights.len() {
            return Err(Error::shape(
                "importance_set",
                particles.shape(),
                &[log_weights.len()],
            ));
        }
        let lse = logsumexp(&log_weights);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "importance weights are degenerate (log-sum-exp = {lse})"
            )));
        }
        let weights: Vec<f64> = log_weights.iter().map(|l| (l - lse).exp()).collect();
        let ess = 1.0 / weights.iter().map(|a| a * a).sum::<f64>();
        Ok(ImportanceSet {
            particles,
            log_weights,
            weights,
            ess,
        })
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// `log (1/K) Σ_k w_k`, the IWAE bound for these particles.
    pub fn log_mean_weight(&self) -> f64 {
        logsumexp(&self.log_weights) - (self.len() as f64).ln()
    }
}

/// Draws `K` particles from `proposal` and weighs them by
/// `log p_θ(x, z) − log r(z)`. `x` is a single row.
pub fn importance_weights(
    model: &LatentModel,
    proposal: &dyn Proposal,
    x: &Tensor,
    k: usize,
    rng: &mut Rng,
) -> Result<ImportanceSet> {
    if k == 0 {
        return Err(Error::domain("importance sampling needs K ≥ 1"));
    }
    let d = proposal.dim();
    let mut data = Vec::with_capacity(k * d);
    let mut log_q = Vec::with_capacity(k);
    for _ in 0..k {
        let z = proposal.sample(rng);
        log_q.push(proposal.log_density(&z));
        data.extend(z);
    }
    let particles = Tensor::from_vec(vec![k, d], data)?;
    weigh_particles(model, x, particles, &log_q)
}

/// Importance set for given particles and their proposal log-densities.
pub fn weigh_particles(
    model: &LatentModel,
    x: &Tensor,
    particles: Tensor,
    log_q: &[f64],
) -> Result<ImportanceSet> {
    let xs = repeat_row(x, particles.rows());
    let lj = model.log_joint(&xs, &particles)?;
    let log_w = lj.iter().zip(log_q).map(|(a, b)| a - b).collect();
    ImportanceSet::new(particles, log_w)
}

pub fn iwae_objective(
    model: &LatentModel,
    proposal: &dyn Proposal,
    x: &Tensor,
    k: usize,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(importance_weights(model, proposal, x, k, rng)?.log_mean_weight())
}

pub(crate) fn repeat_row(x: &Tensor, k: usize) -> Tensor {
    x.select_rows(&vec![0; k])
}

/// `Σ_k α_k ∇_θ log p_θ(x, z_k)`, in `model.params()` order.
pub fn rem_model_gradient(iset: &ImportanceSet, model: &LatentModel, x: &Tensor) -> Result<Vec<Tensor>> {
    let xs = repeat_row(x, iset.len());
    weighted_model_gradient(model, &xs, &iset.particles, &iset.weights)
}

/// `Σ_j c_j ∇_θ log p_θ(x_j, z_j)` over rows of `xs` and `zs`.
pub fn weighted_model_gradient(
    model: &LatentModel,
    xs: &Tensor,
    zs: &Tensor,
    coef: &[f64],
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let mv = model.bind(&mut tape, true);
    let (xv, zv) = (tape.constant(xs.clone()), tape.constant(zs.clone()));
    let lj = mv.log_joint_rows(&mut tape, xv, zv)?;
    let c = tape.constant(Tensor::vector(coef.to_vec()));
    let w = tape.mul(lj, c)?;
    let total = tape.sum(w)?;
    Ok(tape.grad(total)?.wrt_all(&mv.vars()))
}

/// Autodiff of `log (1/K) Σ_k p_θ(x, z_k) / r(z_k)` with the particles held
/// fixed; equals [`rem_model_gradient`].
pub fn iwae_gradient(model: &LatentModel, x: &Tensor, particles: &Tensor, log_q: &[f64]) -> Result<Vec<Tensor>> {
    let k = particles.rows();
    let mut tape = Tape::new();
    let mv = model.bind(&mut tape, true);
    let xv = tape.constant(repeat_row(x, k));
    let zv = tape.constant(particles.clone());
    let lj = mv.log_joint_rows(&mut tape, xv, zv)?;
    let lq = tape.constant(Tensor::vector(log_q.to_vec()));
    let lw = tape.sub(lj, lq)?;
    let lse = tape.logsumexp(lw)?;
    let bound = tape.add_scalar(lse, -(k as f64).ln())?;
    Ok(tape.grad(bound)?.wrt_all(&mv.vars()))
}

/// Full-covariance Gaussian hyperproposal.
#[derive(Clone, Debug)]
pub struct MomentProposal {
    pub normal: MvNormal,
    /// Jitter actually added to the diagonal.
    pub jitter: f64,
}

impl Proposal for MomentProposal {
    fn dim(&self) -> usize {
        self.normal.dim()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        Proposal::sample(&self.normal, rng)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.normal.log_density(z)
    }
}

pub const JITTER_MAX: f64 = 1e-1;

/// Gaussian with the (α-weighted, unless `weighted` is false) mean and
/// covariance of the particles plus `jitter · I`. The jitter doubles on
/// Cholesky failure up to [`JITTER_MAX`].
pub fn moment_match(iset: &ImportanceSet, jitter: f64, weighted: bool) -> Result<MomentProposal> {
    let k = iset.len();
    if k < 2 {
        return Err(Error::domain("moment matching needs K ≥ 2 particles"));
    }
    let d = iset.particles.cols();
    let w: Vec<f64> = if weighted {
        iset.weights.clone()
    } else {
        vec![1.0 / k as f64; k]
    };
    let mut mean = DVector::zeros(d);
    for (j, wj) in w.iter().enumerate() {
        for a in 0..d {
            mean[a] += wj * iset.particles.get2(j, a);
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (j, wj) in w.iter().enumerate() {
        let z = iset.particles.row(j);
        for a in 0..d {
            for b in a..d {
                let v = wj * (z[a] - mean[a]) * (z[b] - mean[b]);
                cov[(a, b)] += v;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    let mut eps = jitter;
    loop {
        let mut c = cov.clone();
        for a in 0..d {
            c[(a, a)] += eps;
        }
        match MvNormal::new(mean.clone(), c.clone()) {
            Ok(normal) => return Ok(MomentProposal { normal, jitter: eps }),
            Err(_) if eps == 0.0 => eps = 1e-10,
            Err(_) if eps * 2.0 <= JITTER_MAX => eps *= 2.0,
            Err(_) => {
                return Err(Error::Numerical(format!(
                    "moment-matched covariance is not PD at jitter {eps:e} (min eigenvalue {:e})",
                    min_eigenvalue(&c)
                )))
            }
        }
    }
}

/// `log N(z_j; μ_j, diag(var_j))` per row on a tape, `z` fixed.
pub fn diag_log_density_rows(tape: &mut Tape, z: &Tensor, mu: Var, var: Var) -> Result<Var> {
    let d = z.cols();
    let zv = tape.constant(z.clone());
    let diff = tape.sub(zv, mu)?;
    let sq = tape.square(diff)?;
    let r = tape.div(sq, var)?;
    let lv = tape.log(var)?;
    let s = tape.add(r, lv)?;
    let rows = tape.sum_last(s)?;
    let h = tape.scale(rows, -0.5)?;
    tape.add_scalar(h, -0.5 * d as f64 * crate::expfam::ln_2pi())
}

/// `−Σ_j c_j ∇_η log r_η(z_j | x_j)`, in `encoder.params()` order. This is
/// the descent direction for the inclusive KL.
pub fn weighted_proposal_gradient(
    encoder: &Encoder,
    xs: &Tensor,
    zs: &Tensor,
    coef: &[f64],
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let ev = encoder.bind(&mut tape, true);
    let xv = tape.constant(xs.clone());
    let (mu, var) = ev.encode(&mut tape, xv)?;
    let lr = diag_log_density_rows(&mut tape, zs, mu, var)?;
    let c = tape.constant(Tensor::vector(coef.iter().map(|v| -v).collect()));
    let w = tape.mul(lr, c)?;
    let total = tape.sum(w)?;
    Ok(tape.grad(total)?.wrt_all(&ev.vars()))
}

/// Proposal gradient with particles and β-weights from the hyperproposal
/// `s`. With `s = r_η` this is the RWS gradient.
pub fn proposal_gradient(
    model: &LatentModel,
    encoder: &Encoder,
    s: &dyn Proposal,
    x: &Tensor,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    let iset = importance_weights(model, s, x, k, rng)?;
    weighted_proposal_gradient(encoder, &repeat_row(x, k), &iset.particles, &iset.weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemVariant {
    V1,
    V2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemConfig {
    pub variant: RemVariant,
    pub epochs: usize,
    pub batch: usize,
    pub particles: usize,
    pub lr_model: f64,
    pub lr_proposal: f64,
    pub jitter: f64,
    pub weighted_moments: bool,
}

impl Default for RemConfig {
    fn default() -> Self {
        RemConfig {
            variant: RemVariant::V1,
            epochs: 50,
            batch: 50,
            particles: 50,
            lr_model: 1e-2,
            lr_proposal: 1e-2,
            jitter: 1e-4,
            weighted_moments: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemLogRow {
    pub epoch: usize,
    pub iwae_bound: f64,
    pub ess_mean: f64,
    pub kl_proposal_prior: f64,
    pub wallclock_s: f64,
}

pub fn rem_log_to_csv(rows: &[RemLogRow]) -> String {
    let mut out = String::from("epoch,iwae_bound,ess_mean,kl_proposal_prior\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.iwae_bound, r.ess_mean, r.kl_proposal_prior
        ));
    }
    out
}

/// One REM step's particles and weights for a single data point.
struct PointUpdate {
    model_z: Tensor,
    model_w: Vec<f64>,
    prop_z: Tensor,
    prop_w: Vec<f64>,
    iwae: f64,
    ess: f64,
}

fn rem_point(
    model: &LatentModel,
    q: &GaussianDiag,
    x: &Tensor,
    config: &RemConfig,
    rng: &mut Rng,
) -> Result<PointUpdate> {
    let r_set = importance_weights(model, q, x, config.particles, rng)?;
    let s = moment_match(&r_set, config.jitter, config.weighted_moments)?;
    let s_set = importance_weights(model, &s, x, config.particles, rng)?;
    let (iwae, ess) = (r_set.log_mean_weight(), r_set.ess);
    Ok(match config.variant {
        RemVariant::V1 => PointUpdate {
            model_z: r_set.particles,
            model_w: r_set.weights,
            prop_z: s_set.particles,
            prop_w: s_set.weights,
            iwae,
            ess,
        },
        RemVariant::V2 => PointUpdate {
            model_z: s_set.particles.clone(),
            model_w: s_set.weights.clone(),
            prop_z: s_set.particles,
            prop_w: s_set.weights,
            iwae,
            ess,
        },
    })
}

/// Trains the model and the amortized proposal `r_η` (the encoder).
pub fn train_rem(
    model: &mut LatentModel,
    encoder: &mut Encoder,
    data: &Tensor,
    config: &RemConfig,
    rng: &mut Rng,
) -> Result<Vec<RemLogRow>> {
    let n = data.rows();
    if config.particles < 2 {
        return Err(Error::Config("REM needs at least 2 particles".into()));
    }
    if config.batch == 0 || config.batch > n {
        return Err(Error::Config(format!("batch size {} must be in 1..={n}", config.batch)));
    }
    let adam = |lr| AdamConfig {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt_model = Adam::new(adam(config.lr_model), &model.params());
    let mut opt_prop = Adam::new(adam(config.lr_proposal), &encoder.params());
    let start = Instant::now();
    let mut log = Vec::new();
    for epoch in 0..config.epochs {
        let (mut iwae_sum, mut ess_sum, mut count) = (0.0, 0.0, 0usize);
        for idx in rng.permutation(n).chunks(config.batch) {
            let xb = data.select_rows(idx);
            let q = encoder.encode(&xb)?;
            let k = config.particles;
            let mut mx = Vec::new();
            let (mut mz, mut mw) = (Vec::new(), Vec::new());
            let (mut pz, mut pw) = (Vec::new(), Vec::new());
            for i in 0..idx.len() {
                let xi = xb.select_rows(&[i]);
                let u = rem_point(model, &q.row(i), &xi, config, rng)
                    .map_err(|e| Error::Numerical(format!("REM aborted in epoch {epoch}: {e}")))?;
                mx.extend_from_slice(repeat_row(&xi, k).data());
                mz.extend_from_slice(u.model_z.data());
                mw.extend(u.model_w.iter().map(|w| w / idx.len() as f64));
                pz.extend_from_slice(u.prop_z.data());
                pw.extend(u.prop_w.iter().map(|w| w / idx.len() as f64));
                iwae_sum += u.iwae;
                ess_sum += u.ess;
                count += 1;
            }
            let rows = idx.len() * k;
            let xs = Tensor::from_vec(vec![rows, data.cols()], mx)?;
            let mzs = Tensor::from_vec(vec![rows, encoder.latent_dim()], mz)?;
            let pzs = Tensor::from_vec(vec![rows, encoder.latent_dim()], pz)?;
            let gm: Vec<Tensor> = weighted_model_gradient(model, &xs, &mzs, &mw)?
                .into_iter()
                .map(|g| g.scale(-1.0))
                .collect();
            let gp = weighted_proposal_gradient(encoder, &xs, &pzs, &pw)?;
            if gm.iter().chain(&gp).any(|g| !g.all_finite()) {
                return Err(Error::Numerical(format!(
                    "REM aborted in epoch {epoch}: non-finite gradient"
                )));
            }
            opt_model.step(&mut model.params_mut(), &gm)?;
            opt_prop.step(&mut encoder.params_mut(), &gp)?;
        }
        let q = encoder.encode(data)?;
        let kl = gaussian_kl(&q).iter().sum::<f64>() / n as f64;
        log.push(RemLogRow {
            epoch,
            iwae_bound: iwae_sum / count as f64,
            ess_mean: ess_sum / count as f64,
            kl_proposal_prior: kl,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}
