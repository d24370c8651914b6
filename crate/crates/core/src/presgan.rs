//! Entropy-regularized adversarial learning.
//!
//! The generator is a Gaussian latent-variable model
//! `x = μ_η(z) + σ ⊙ ε`. The discriminator sees real data noised with the
//! same `σ`. The generator minimizes the adversarial loss minus `λ` times
//! the entropy of its marginal, whose gradient is estimated with the
//! posterior score `E_{p(z|x)}[∇_x log p(x|z)]` from a short HMC run started
//! at the `z` that produced `x`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::expfam::ln_2pi;
use crate::hmc::{hmc_sample, HmcConfig, HmcDiagnostics, StepSize};
use crate::linalg::{logdet_spd, to_matrix};
use crate::models::{
    gaussian_log_lik_rows, std_normal_log_density_rows, Activation, Decoder, Encoder, LatentModel,
    Likelihood, Mlp, MlpSpec,
};
use crate::tensor::{logsumexp, Adam, AdamConfig, Tape, Tensor, Var};
use crate::vi::elbo_objective;
use crate::Rng;

/// Draws biases from the same range as the weights instead of zero.
fn uniform_biases(mlp: &mut Mlp, rng: &mut Rng) {
    for (w, b) in mlp.weights.iter().zip(mlp.biases.iter_mut()) {
        let bound = 1.0 / (w.rows() as f64).sqrt();
        *b = rng.uniform_tensor(b.shape(), -bound, bound);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub mean: Mlp,
    pub log_sigma: Tensor,
    pub sigma_low: f64,
    pub sigma_high: f64,
}

impl Generator {
    pub fn new(mean: Mlp, sigma_init_log: f64, sigma_low: f64, sigma_high: f64) -> Result<Self> {
        if !(sigma_low > 0.0 && sigma_low <= sigma_high) {
            return Err(Error::Config(format!(
                "need 0 < sigma_low <= sigma_high, got [{sigma_low}, {sigma_high}]"
            )));
        }
        let d = mean.output_dim();
        let mut g = Generator {
            mean,
            log_sigma: Tensor::full(&[d], sigma_init_log),
            sigma_low,
            sigma_high,
        };
        g.clamp_sigma();
        Ok(g)
    }

    /// Tanh MLP `latent → hidden… → data` with a linear output.
    pub fn mlp(
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        sigma_init_log: f64,
        bounds: (f64, f64),
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let mut mean = Mlp::new(MlpSpec::new(&widths, Activation::Tanh, Activation::Identity), rng)?;
        uniform_biases(&mut mean, rng);
        Self::new(mean, sigma_init_log, bounds.0, bounds.1)
    }

    /// `μ(z) = z W + b`, with no bounds on `σ`.
    pub fn linear(w: Tensor, b: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        let spec = MlpSpec::new(&[w.rows(), w.cols()], Activation::Identity, Activation::Identity);
        let mut mean = Mlp::zeros(spec)?;
        if b.len() != w.cols() || sigma.len() != w.cols() {
            return Err(Error::shape("Generator::linear", w.shape(), &[b.len(), sigma.len()]));
        }
        mean.weights[0] = w;
        mean.biases[0] = Tensor::vector(b);
        Ok(Generator {
            mean,
            log_sigma: Tensor::vector(sigma.iter().map(|s| s.ln()).collect()),
            sigma_low: 0.0,
            sigma_high: f64::INFINITY,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.data().iter().map(|l| l.exp()).collect()
    }

    /// Truncates `σ` elementwise into `[sigma_low, sigma_high]`.
    pub fn clamp_sigma(&mut self) {
        let (lo, hi) = (self.sigma_low.ln(), self.sigma_high.ln());
        for l in self.log_sigma.data_mut() {
            *l = l.clamp(lo, hi);
        }
    }

    pub fn generate(&self, z: &Tensor, eps: &Tensor) -> Result<Tensor> {
        let mu = self.mean.forward(z)?;
        if eps.shape() != mu.shape() {
            return Err(Error::shape("generate", mu.shape(), eps.shape()));
        }
        add_scaled_noise(&mu, &self.sigma(), eps)
    }

    /// The same model as a [`LatentModel`], for the VI and IS tooling.
    pub fn to_model(&self) -> LatentModel {
        LatentModel::new(
            Decoder::Mlp(self.mean.clone()),
            Likelihood::Gaussian {
                log_sigma: self.log_sigma.clone(),
            },
        )
        .expect("consistent shapes")
    }

    /// `log p(x, z)` per row and its gradient in `z`, weights held fixed.
    pub fn log_joint_grad_z(&self, x: &Tensor, z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let net = self.mean.bind(&mut tape, false);
        let ls = tape.constant(self.log_sigma.clone());
        let xv = tape.constant(x.clone());
        let zv = tape.leaf(z.clone());
        let mu = net.forward(&mut tape, zv)?;
        let lik = gaussian_log_lik_rows(&mut tape, xv, mu, ls)?;
        let prior = std_normal_log_density_rows(&mut tape, zv)?;
        let lj = tape.add(lik, prior)?;
        let total = tape.sum(lj)?;
        let g = tape.grad(total)?;
        Ok((tape.value(lj).data().to_vec(), g.wrt(zv)))
    }
}

fn add_scaled_noise(x: &Tensor, sigma: &[f64], eps: &Tensor) -> Result<Tensor> {
    if eps.shape() != x.shape() || x.cols() != sigma.len() {
        return Err(Error::shape("noise", x.shape(), eps.shape()));
    }
    let d = sigma.len();
    let mut out = x.clone();
    for (k, (o, e)) in out.data_mut().iter_mut().zip(eps.data()).enumerate() {
        *o += sigma[k % d] * e;
    }
    Ok(out)
}

/// `x̂ = x + σ ⊙ ε`.
pub fn noise_real(x: &Tensor, sigma: &[f64], eps: &Tensor) -> Result<Tensor> {
    add_scaled_noise(x, sigma, eps)
}

/// Tanh MLP with a single logit output; `D(x) = sigmoid(logit)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new(data_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![data_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut net = Mlp::new(MlpSpec::new(&widths, Activation::Tanh, Activation::Identity), rng)?;
        uniform_biases(&mut net, rng);
        Ok(Discriminator { net })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 || net.spec.output != Activation::Identity {
            return Err(Error::Config("discriminator needs one linear logit output".into()));
        }
        Ok(Discriminator { net })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?.into_data())
    }

    pub fn prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .logits(x)?
            .into_iter()
            .map(|l| 1.0 / (1.0 + (-l).exp()))
            .collect())
    }
}

/// `mean log D(real) + mean log(1 − D(fake))` on a bound discriminator.
pub(crate) fn gan_objective(tape: &mut Tape, net: &crate::models::BoundMlp, real: Var, fake: Var) -> Result<Var> {
    let lr = net.forward(tape, real)?;
    let lf = net.forward(tape, fake)?;
    let a = tape.log_sigmoid(lr)?;
    let a = tape.mean(a)?;
    let nf = tape.neg(lf)?;
    let b = tape.log_sigmoid(nf)?;
    let b = tape.mean(b)?;
    tape.add(a, b)
}

/// The adversarial objective and its gradient with respect to the
/// discriminator parameters (to be ascended).
pub fn gan_loss(disc: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    if real.rows() == 0 || fake.rows() == 0 {
        return Err(Error::domain("gan_loss needs nonempty batches"));
    }
    let mut tape = Tape::new();
    let net = disc.net.bind(&mut tape, true);
    let rv = tape.constant(real.clone());
    let fv = tape.constant(fake.clone());
    let obj = gan_objective(&mut tape, &net, rv, fv)?;
    let g = tape.grad(obj)?;
    Ok((tape.scalar(obj), g.wrt_all(net.vars())))
}

/// `D*(x) = t(x) / (t(x) + f(x))`.
pub fn optimal_discriminator(t: f64, f: f64) -> Result<f64> {
    if !(t >= 0.0 && f >= 0.0) || t + f == 0.0 {
        return Err(Error::domain(format!(
            "optimal discriminator undefined for densities t = {t}, f = {f}"
        )));
    }
    Ok(t / (t + f))
}

/// `∫ t log D* + f log(1 − D*)` by a Riemann sum over a grid with spacing
/// `dx`. Terms with zero density contribute nothing.
pub fn gan_value_at_optimum(t: &[f64], f: &[f64], dx: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (&ti, &fi) in t.iter().zip(f) {
        if ti + fi == 0.0 {
            continue;
        }
        let d = optimal_discriminator(ti, fi)?;
        if ti > 0.0 {
            acc += ti * d.ln();
        }
        if fi > 0.0 {
            acc += fi * (1.0 - d).ln();
        }
    }
    Ok(acc * dx)
}

/// Jensen–Shannon divergence of two gridded densities.
pub fn js_divergence(t: &[f64], f: &[f64], dx: f64) -> f64 {
    let kl = |p: f64, m: f64| if p > 0.0 { p * (p / m).ln() } else { 0.0 };
    t.iter()
        .zip(f)
        .map(|(&ti, &fi)| {
            let m = 0.5 * (ti + fi);
            0.5 * (kl(ti, m) + kl(fi, m))
        })
        .sum::<f64>()
        * dx
}

#[derive(Clone, Debug)]
pub struct EntropyScore {
    /// Estimate of `∇_x log p(x)` per row.
    pub score: Tensor,
    pub diagnostics: HmcDiagnostics,
}

/// `(1/M) Σ_m −(x − μ(z_m)) / σ²` with `z_m` drawn by HMC from
/// `p(z | x)` started at `z_init`.
pub fn entropy_score(
    gen: &Generator,
    x: &Tensor,
    z_init: &Tensor,
    cfg: &HmcConfig,
    step: &mut StepSize,
    rng: &mut Rng,
) -> Result<EntropyScore> {
    if cfg.steps == 0 {
        return Err(Error::Config("entropy_score needs at least one HMC sample".into()));
    }
    let mut target = |z: &Tensor| gen.log_joint_grad_z(x, z);
    let out = hmc_sample(&mut target, z_init, cfg, step, rng)?;
    let var: Vec<f64> = gen.sigma().iter().map(|s| s * s).collect();
    let d = var.len();
    let mut score = Tensor::zeros(x.shape());
    let m = out.samples.len() as f64;
    for zs in &out.samples {
        let mu = gen.mean.forward(zs)?;
        for (k, (s, (xv, mv))) in score
            .data_mut()
            .iter_mut()
            .zip(x.data().iter().zip(mu.data()))
            .enumerate()
        {
            *s -= (xv - mv) / var[k % d] / m;
        }
    }
    Ok(EntropyScore {
        score,
        diagnostics: out.diagnostics,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// `−log D(x̃)`
    #[default]
    NonSaturating,
    /// `log(1 − D(x̃))`
    Minimax,
}

#[derive(Clone, Debug)]
pub struct GeneratorGradients {
    /// In `gen.mean.params()` order.
    pub mean: Vec<Tensor>,
    pub log_sigma: Tensor,
    pub adversarial: f64,
    pub loss: f64,
}

/// Gradients of
/// `adv(x̃) − λ Ĥ + λ̃ Σ_d log σ_d²` with `x̃ = μ(z) + σ ⊙ ε`, where the
/// entropy gradient enters through the surrogate `λ · mean_b(s_b · x̃_b)`
/// with the score estimate `s` held fixed. Gradients are with respect to
/// the mean-network parameters and `log σ`. Pass `score = None` (or
/// `λ = 0`) for the plain noised GAN.
pub fn generator_gradients(
    gen: &Generator,
    disc: &Discriminator,
    z: &Tensor,
    eps: &Tensor,
    score: Option<&Tensor>,
    lambda: f64,
    lambda_tilde: f64,
    loss: GeneratorLoss,
) -> Result<GeneratorGradients> {
    let b = z.rows() as f64;
    let mut tape = Tape::new();
    let mean = gen.mean.bind(&mut tape, true);
    let ls = tape.leaf(gen.log_sigma.clone());
    let dnet = disc.net.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let ev = tape.constant(eps.clone());
    let mu = mean.forward(&mut tape, zv)?;
    let sigma = tape.exp(ls)?;
    let noise = tape.mul_row(ev, sigma)?;
    let x = tape.add(mu, noise)?;
    let logits = dnet.forward(&mut tape, x)?;
    let adv = match loss {
        GeneratorLoss::NonSaturating => {
            let l = tape.log_sigmoid(logits)?;
            let m = tape.mean(l)?;
            tape.neg(m)?
        }
        GeneratorLoss::Minimax => {
            let nl = tape.neg(logits)?;
            let l = tape.log_sigmoid(nl)?;
            tape.mean(l)?
        }
    };
    let mut total = adv;
    if lambda != 0.0 {
        if let Some(s) = score {
            if s.shape() != tape.shape(x) {
                return Err(Error::shape("generator_gradients", tape.shape(x), s.shape()));
            }
            let sv = tape.constant(s.clone());
            let sx = tape.mul(sv, x)?;
            let sx = tape.sum(sx)?;
            let ent = tape.scale(sx, lambda / b)?;
            total = tape.add(total, ent)?;
        }
    }
    if lambda_tilde != 0.0 {
        let s = tape.sum(ls)?;
        let reg = tape.scale(s, 2.0 * lambda_tilde)?;
        total = tape.add(total, reg)?;
    }
    let g = tape.grad(total)?;
    let grads = GeneratorGradients {
        mean: g.wrt_all(mean.vars()),
        log_sigma: g.wrt(ls),
        adversarial: tape.scalar(adv),
        loss: tape.scalar(total),
    };
    if !grads.log_sigma.all_finite() || grads.mean.iter().any(|t| !t.all_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite generator gradient (adversarial loss {}, sigma {:?})",
            grads.adversarial,
            gen.sigma()
        )));
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub disc: f64,
    pub gen: f64,
    pub sigma: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            disc: 1e-3,
            gen: 1e-4,
            sigma: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresganConfig {
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub sigma_init_log: f64,
    pub hmc: HmcConfig,
    pub lr: LearningRates,
    pub adam_beta1: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub generator_loss: GeneratorLoss,
}

impl Default for PresganConfig {
    fn default() -> Self {
        PresganConfig {
            lambda: 0.1,
            lambda_tilde: 0.0,
            sigma_low: 1e-2,
            sigma_high: 0.3,
            sigma_init_log: 0.0,
            hmc: HmcConfig::default(),
            lr: LearningRates::default(),
            adam_beta1: 0.5,
            batch: 100,
            epochs: 500,
            seed: 2019,
            latent_dim: 10,
            hidden: vec![128, 128],
            generator_loss: GeneratorLoss::NonSaturating,
        }
    }
}

impl PresganConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.lambda_tilde >= 0.0) {
            return Err(Error::Config("lambda and lambda_tilde must be non-negative".into()));
        }
        if !(self.sigma_low > 0.0 && self.sigma_low <= self.sigma_high) {
            return Err(Error::Config("need 0 < sigma_low <= sigma_high".into()));
        }
        if self.batch == 0 || self.latent_dim == 0 {
            return Err(Error::Config("batch and latent_dim must be positive".into()));
        }
        for lr in [self.lr.disc, self.lr.gen, self.lr.sigma] {
            if !(lr > 0.0) {
                return Err(Error::Config("learning rates must be positive".into()));
            }
        }
        if self.lambda > 0.0 && self.hmc.steps == 0 {
            return Err(Error::Config("entropy regularization needs hmc.steps >= 1".into()));
        }
        self.hmc.validate()
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PresganLogRow {
    pub epoch: usize,
    pub disc_objective: f64,
    pub gen_adversarial: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub hmc_accept: f64,
    pub hmc_step: f64,
    pub hmc_stalled: usize,
    pub wallclock_s: f64,
}

pub fn presgan_log_to_csv(rows: &[PresganLogRow]) -> String {
    let mut out = String::from(
        "epoch,disc_objective,gen_adversarial,sigma_min,sigma_max,hmc_accept,hmc_step,hmc_stalled\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.disc_objective,
            r.gen_adversarial,
            r.sigma_min,
            r.sigma_max,
            r.hmc_accept,
            r.hmc_step,
            r.hmc_stalled
        ));
    }
    out
}

pub fn train_presgan(
    gen: &mut Generator,
    disc: &mut Discriminator,
    data: &Tensor,
    cfg: &PresganConfig,
    rng: &mut Rng,
) -> Result<Vec<PresganLogRow>> {
    train_presgan_with(gen, disc, data, cfg, rng, |_, _| Ok(()))
}

/// As [`train_presgan`], calling `on_epoch` after every epoch.
pub fn train_presgan_with(
    gen: &mut Generator,
    disc: &mut Discriminator,
    data: &Tensor,
    cfg: &PresganConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&PresganLogRow, &Generator) -> Result<()>,
) -> Result<Vec<PresganLogRow>> {
    cfg.validate()?;
    let n = data.rows();
    if n == 0 || data.cols() != gen.data_dim() || disc.net.input_dim() != gen.data_dim() {
        return Err(Error::shape("train_presgan", data.shape(), &[n, gen.data_dim()]));
    }
    let dz = gen.latent_dim();
    let dx = gen.data_dim();
    let mut opt_d = Adam::new(cfg.adam(cfg.lr.disc), &disc.net.params());
    let mut opt_g = Adam::new(cfg.adam(cfg.lr.gen), &gen.mean.params());
    let mut opt_s = Adam::new(cfg.adam(cfg.lr.sigma), &[&gen.log_sigma]);
    let mut step = StepSize::new(cfg.hmc.step_size);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(n);
        let (mut d_sum, mut g_sum, mut acc_sum, mut batches, mut stalled) = (0.0, 0.0, 0.0, 0, 0);
        for (it, idx) in order.chunks(cfg.batch).enumerate() {
            let b = idx.len();
            let sigma = gen.sigma();
            let real = noise_real(&data.select_rows(idx), &sigma, &rng.normal_tensor(&[b, dx]))?;
            let z = rng.normal_tensor(&[b, dz]);
            let eps = rng.normal_tensor(&[b, dx]);
            let fake = gen.generate(&z, &eps)?;

            let (d_obj, d_grad) = gan_loss(disc, &real, &fake)?;
            if !d_obj.is_finite() {
                return Err(abort(epoch, it, gen, &step, &format!("discriminator objective {d_obj}")));
            }
            let ascent: Vec<Tensor> = d_grad.iter().map(|g| g.scale(-1.0)).collect();
            opt_d.step(&mut disc.net.params_mut(), &ascent)?;

            let score = if cfg.lambda > 0.0 {
                let es = entropy_score(gen, &fake, &z, &cfg.hmc, &mut step, rng)
                    .map_err(|e| abort(epoch, it, gen, &step, &e.to_string()))?;
                acc_sum += es.diagnostics.acceptance_rate();
                if es.diagnostics.warning.is_some() {
                    stalled += 1;
                }
                Some(es.score)
            } else {
                None
            };
            let grads = generator_gradients(
                gen,
                disc,
                &z,
                &eps,
                score.as_ref(),
                cfg.lambda,
                cfg.lambda_tilde,
                cfg.generator_loss,
            )
            .map_err(|e| abort(epoch, it, gen, &step, &e.to_string()))?;
            opt_g.step(&mut gen.mean.params_mut(), &grads.mean)?;
            opt_s.step(&mut [&mut gen.log_sigma], &[grads.log_sigma])?;
            gen.clamp_sigma();

            d_sum += d_obj;
            g_sum += grads.adversarial;
            batches += 1;
        }
        let sigma = gen.sigma();
        let row = PresganLogRow {
            epoch,
            disc_objective: d_sum / batches as f64,
            gen_adversarial: g_sum / batches as f64,
            sigma_min: sigma.iter().cloned().fold(f64::INFINITY, f64::min),
            sigma_max: sigma.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            hmc_accept: if cfg.lambda > 0.0 { acc_sum / batches as f64 } else { f64::NAN },
            hmc_step: step.value,
            hmc_stalled: stalled,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row, gen)?;
        log.push(row);
    }
    Ok(log)
}

fn abort(epoch: usize, iter: usize, gen: &Generator, step: &StepSize, detail: &str) -> Error {
    Error::Numerical(format!(
        "PresGAN training aborted at epoch {epoch}, batch {iter}: {detail} (sigma {:?}, hmc step {:.3e})",
        gen.sigma(),
        step.value
    ))
}

/// Both sides of `I(x, z) = H(p(x)) − ½ Σ_d log σ_d² − (D/2)(1 + log 2π)`
/// for a linear generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MiIdentity {
    /// `I(x, z)` from the latent side: `½ log det(I + W diag(σ⁻²) Wᵀ)`.
    pub mutual_information: f64,
    /// `H(p(x))` of the Gaussian marginal.
    pub marginal_entropy: f64,
    /// The right-hand side of the identity.
    pub rhs: f64,
}

pub fn mutual_information_identity_check(gen: &Generator) -> Result<MiIdentity> {
    if gen.mean.spec.layers() != 1 || gen.mean.spec.output != Activation::Identity {
        return Err(Error::domain("the mutual-information identity needs a linear generator"));
    }
    let w = to_matrix(&gen.mean.weights[0]);
    let var: Vec<f64> = gen.sigma().iter().map(|s| s * s).collect();
    let d = var.len() as f64;
    let k = w.nrows();
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v)));
    let latent = DMatrix::identity(k, k) + &w * inv * w.transpose();
    let mi = 0.5 * logdet_spd(&latent)?;
    let cov = w.transpose() * &w + DMatrix::from_diagonal(&DVector::from_vec(var.clone()));
    let entropy = 0.5 * d * (1.0 + ln_2pi()) + 0.5 * logdet_spd(&cov)?;
    let log_var_sum: f64 = var.iter().map(|v| v.ln()).sum();
    Ok(MiIdentity {
        mutual_information: mi,
        marginal_entropy: entropy,
        rhs: entropy - 0.5 * log_var_sum - 0.5 * d * (1.0 + ln_2pi()),
    })
}

/// Adam ascent on the ELBO of a frozen generator, updating the encoder only.
pub fn fit_encoder(
    gen: &Generator,
    encoder: &mut Encoder,
    data: &Tensor,
    epochs: usize,
    batch: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if batch == 0 || data.rows() == 0 {
        return Err(Error::Config("fit_encoder needs data and a positive batch".into()));
    }
    let model = gen.to_model();
    let adam = AdamConfig {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(adam, &encoder.params());
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let order = rng.permutation(data.rows());
        let mut sum = 0.0;
        for idx in order.chunks(batch) {
            let xb = data.select_rows(idx);
            let eps = [rng.normal_tensor(&[idx.len(), encoder.latent_dim()])];
            let mut tape = Tape::new();
            let mv = model.bind(&mut tape, false);
            let ev = encoder.bind(&mut tape, true);
            let obj = elbo_objective(&mut tape, &mv, &ev, &xb, &eps)?;
            let neg = tape.neg(obj)?;
            let g = tape.grad(neg)?;
            opt.step(&mut encoder.params_mut(), &g.wrt_all(&ev.vars()))?;
            sum += tape.scalar(obj) * idx.len() as f64;
        }
        last = sum / data.rows() as f64;
        if !last.is_finite() {
            return Err(Error::Numerical("encoder fitting produced a non-finite ELBO".into()));
        }
    }
    Ok(last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsConfig {
    pub samples: usize,
    /// Overdispersion of the encoder covariance.
    pub gamma: f64,
    pub map_steps: usize,
    pub map_lr: f64,
    pub map_tol: f64,
    /// Renormalize the Gaussian likelihood to `[−1, 1]` per dimension.
    pub truncate: bool,
}

impl Default for IsConfig {
    fn default() -> Self {
        IsConfig {
            samples: 2000,
            gamma: 1.2,
            map_steps: 200,
            map_lr: 1e-2,
            map_tol: 1e-4,
            truncate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsEstimate {
    pub log_lik: f64,
    pub log_weights: Vec<f64>,
    pub map: Vec<f64>,
    pub map_converged: bool,
    pub map_grad_norm: f64,
    pub ess: f64,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `Σ_d log P(−1 ≤ N(μ_d, σ_d²) ≤ 1)` per row of `mu`.
fn truncation_log_mass(mu: &Tensor, sigma: &[f64]) -> Vec<f64> {
    let d = sigma.len();
    mu.data()
        .chunks(d)
        .map(|row| {
            row.iter()
                .zip(sigma)
                .map(|(m, s)| (std_normal_cdf((1.0 - m) / s) - std_normal_cdf((-1.0 - m) / s)).ln())
                .sum()
        })
        .collect()
}

/// Maximizes `log p(x, z)` over `z` by Adam from `z0`.
fn map_estimate(gen: &Generator, x: &Tensor, z0: &[f64], cfg: &IsConfig) -> Result<(Vec<f64>, bool, f64)> {
    let mut z = Tensor::from_vec(vec![1, z0.len()], z0.to_vec())?;
    let start = gen.log_joint_grad_z(x, &z)?.0[0];
    let adam = AdamConfig {
        lr: cfg.map_lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(adam, &[&z]);
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..=cfg.map_steps {
        let (_, g) = gen.log_joint_grad_z(x, &z)?;
        grad_norm = g.norm();
        if grad_norm < cfg.map_tol {
            converged = true;
            break;
        }
        opt.step(&mut [&mut z], &[g.scale(-1.0)])?;
    }
    let end = gen.log_joint_grad_z(x, &z)?.0[0];
    if !end.is_finite() || !z.all_finite() || end < start - 1e-8 * start.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "MAP ascent diverged: log joint went from {start} to {end}"
        )));
    }
    Ok((z.into_data(), converged, grad_norm))
}

/// Importance-sampling estimate of `log p(x*)` with proposal
/// `N(z_MAP, γ Σ_enc(x*))`, the MAP started at the encoder mean.
pub fn is_loglik(
    gen: &Generator,
    encoder: &Encoder,
    x: &[f64],
    cfg: &IsConfig,
    rng: &mut Rng,
) -> Result<IsEstimate> {
    if cfg.samples == 0 || !(cfg.gamma > 0.0) {
        return Err(Error::Config("is_loglik needs samples >= 1 and gamma > 0".into()));
    }
    let dx = gen.data_dim();
    if x.len() != dx || encoder.data_dim() != dx {
        return Err(Error::shape("is_loglik", &[x.len()], &[dx]));
    }
    let xt = Tensor::from_vec(vec![1, dx], x.to_vec())?;
    let q = encoder.encode(&xt)?;
    let (map, converged, grad_norm) = map_estimate(gen, &xt, q.mean.row(0), cfg)?;
    let dz = map.len();
    let std: Vec<f64> = q.var().data().iter().map(|v| (cfg.gamma * v).sqrt()).collect();
    let s = cfg.samples;
    let e = rng.normal_tensor(&[s, dz]);
    let mut z = e.clone();
    for (k, v) in z.data_mut().iter_mut().enumerate() {
        *v = map[k % dz] + std[k % dz] * *v;
    }
    let log_q: Vec<f64> = e
        .data()
        .chunks(dz)
        .map(|r| {
            r.iter()
                .zip(&std)
                .map(|(ei, si)| -0.5 * ei * ei - si.ln() - 0.5 * ln_2pi())
                .sum()
        })
        .collect();
    let mu = gen.mean.forward(&z)?;
    let sigma = gen.sigma();
    let norm: f64 = sigma.iter().map(|s| -s.ln() - 0.5 * ln_2pi()).sum();
    let trunc = if cfg.truncate {
        Some(truncation_log_mass(&mu, &sigma))
    } else {
        None
    };
    let mut log_w = Vec::with_capacity(s);
    for i in 0..s {
        let zi = z.row(i);
        let mut lj = -0.5 * zi.iter().map(|v| v * v).sum::<f64>() - 0.5 * dz as f64 * ln_2pi() + norm;
        for (d, (xd, md)) in x.iter().zip(mu.row(i)).enumerate() {
            let r = (xd - md) / sigma[d];
            lj -= 0.5 * r * r;
        }
        if let Some(t) = &trunc {
            lj -= t[i];
        }
        log_w.push(lj - log_q[i]);
    }
    let lse = logsumexp(&log_w);
    let ess = 1.0 / log_w.iter().map(|l| (2.0 * (l - lse)).exp()).sum::<f64>();
    Ok(IsEstimate {
        log_lik: lse - (s as f64).ln(),
        log_weights: log_w,
        map,
        map_converged: converged,
        map_grad_norm: grad_norm,
        ess,
    })
}
