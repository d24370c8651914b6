//! Latent-variable models `p(z) p_θ(x | z)` with a standard normal prior,
//! and the diagonal-Gaussian amortized encoder.
//!
//! Everything acts on row batches: `z` is `[n, d_z]` and `x` is `[n, d_x]`.
//! Parameters live in plain tensors between optimizer steps; `bind` copies
//! them onto a tape as leaves (trainable) or constants.

mod checkpoint;
mod nn;
mod oracle;

pub use checkpoint::Checkpoint;
pub use nn::{bind_params, init_weight, Activation, BoundMlp, BoundSkip, Mlp, MlpSpec, SkipMlp};
pub use oracle::LinearGaussian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ln_2pi, Family};
use crate::tensor::{Tape, Tensor, Var};
use crate::Rng;

/// `η = z β`, one row per latent draw (`βᵀz` per column vector).
pub fn efpca_decode(beta: &Tensor, z: &Tensor) -> Result<Tensor> {
    z.matmul(beta)
}

pub fn mlp_decode(mlp: &Mlp, z: &Tensor) -> Result<Tensor> {
    mlp.forward(z)
}

pub fn skip_decode(net: &SkipMlp, z: &Tensor) -> Result<Tensor> {
    net.forward(z)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    /// Exponential-family PCA: a single `[d_z, d_x]` matrix, no bias.
    Linear(Tensor),
    Mlp(Mlp),
    Skip(SkipMlp),
}

impl Decoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Linear(b) => b.shape()[0],
            Decoder::Mlp(m) => m.input_dim(),
            Decoder::Skip(s) => s.mlp.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Decoder::Linear(b) => b.shape()[1],
            Decoder::Mlp(m) => m.output_dim(),
            Decoder::Skip(s) => s.mlp.output_dim(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Decoder::Linear(b) => vec![b],
            Decoder::Mlp(m) => m.params(),
            Decoder::Skip(s) => s.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Decoder::Linear(b) => vec![b],
            Decoder::Mlp(m) => m.params_mut(),
            Decoder::Skip(s) => s.params_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDecoder {
        match self {
            Decoder::Linear(b) => {
                BoundDecoder::Linear(bind_params(tape, &[b], trainable)[0])
            }
            Decoder::Mlp(m) => BoundDecoder::Mlp(m.bind(tape, trainable)),
            Decoder::Skip(s) => BoundDecoder::Skip(s.bind(tape, trainable)),
        }
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            Decoder::Linear(b) => efpca_decode(b, z),
            Decoder::Mlp(m) => mlp_decode(m, z),
            Decoder::Skip(s) => skip_decode(s, z),
        }
    }
}

#[derive(Clone, Debug)]
pub enum BoundDecoder {
    Linear(Var),
    Mlp(BoundMlp),
    Skip(BoundSkip),
}

impl BoundDecoder {
    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        match self {
            BoundDecoder::Linear(b) => tape.matmul(z, *b),
            BoundDecoder::Mlp(m) => m.forward(tape, z),
            BoundDecoder::Skip(s) => s.forward(tape, z),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        match self {
            BoundDecoder::Linear(b) => vec![*b],
            BoundDecoder::Mlp(m) => m.vars().to_vec(),
            BoundDecoder::Skip(s) => s.vars(),
        }
    }
}

/// Observation model. The Gaussian variance is a learnable per-dimension
/// vector stored as `log σ`; Bernoulli works on logits throughout.
#[derive(Clone, Debug, PartialEq)]
pub enum Likelihood {
    Gaussian { log_sigma: Tensor },
    Bernoulli,
}

impl Likelihood {
    pub fn family(&self) -> Family {
        match self {
            Likelihood::Gaussian { .. } => Family::Gaussian,
            Likelihood::Bernoulli => Family::Bernoulli,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    pub decoder: Decoder,
    pub likelihood: Likelihood,
}

impl LatentModel {
    pub fn new(decoder: Decoder, likelihood: Likelihood) -> Result<Self> {
        if let Likelihood::Gaussian { log_sigma } = &likelihood {
            if log_sigma.len() != decoder.output_dim() {
                return Err(Error::shape(
                    "latent_model",
                    &[decoder.output_dim()],
                    log_sigma.shape(),
                ));
            }
        }
        Ok(LatentModel {
            decoder,
            likelihood,
        })
    }

    /// Gaussian likelihood with a shared initial noise scale.
    pub fn gaussian(decoder: Decoder, sigma: f64) -> Result<Self> {
        let d = decoder.output_dim();
        Self::new(
            decoder,
            Likelihood::Gaussian {
                log_sigma: Tensor::full(&[d], sigma.ln()),
            },
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// Decoder parameters, then `log σ` for a Gaussian likelihood.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.decoder.params();
        if let Likelihood::Gaussian { log_sigma } = &self.likelihood {
            p.push(log_sigma);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.decoder.params_mut();
        if let Likelihood::Gaussian { log_sigma } = &mut self.likelihood {
            p.push(log_sigma);
        }
        p
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LatentVars {
        let decoder = self.decoder.bind(tape, trainable);
        let log_sigma = match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => {
                Some(bind_params(tape, &[log_sigma], trainable)[0])
            }
            Likelihood::Bernoulli => None,
        };
        LatentVars { decoder, log_sigma }
    }

    /// `log p(z) + log p_θ(x | z)` per row.
    pub fn log_joint(&self, x: &Tensor, z: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (xv, zv) = (tape.constant(x.clone()), tape.constant(z.clone()));
        let lj = vars.log_joint_rows(&mut tape, xv, zv)?;
        Ok(tape.value(lj).data().to_vec())
    }

    /// Per-row log joint together with `∇_z` of their sum.
    pub fn log_joint_grad_z(&self, x: &Tensor, z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let zv = tape.leaf(z.clone());
        let lj = vars.log_joint_rows(&mut tape, xv, zv)?;
        let total = tape.sum(lj)?;
        let g = tape.grad(total)?;
        Ok((tape.value(lj).data().to_vec(), g.wrt(zv)))
    }

    /// Ancestral sample of `n` pairs `(x, z)`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        let z = rng.normal_tensor(&[n, self.latent_dim()]);
        let eta = self.decoder.forward(&z)?;
        let x = match &self.likelihood {
            Likelihood::Gaussian { log_sigma } => {
                let d = log_sigma.len();
                let mut x = eta;
                for (k, v) in x.data_mut().iter_mut().enumerate() {
                    *v += log_sigma.data()[k % d].exp() * rng.normal();
                }
                x
            }
            Likelihood::Bernoulli => {
                let mut x = eta;
                for v in x.data_mut() {
                    let p = 1.0 / (1.0 + (-*v).exp());
                    *v = if rng.uniform() < p { 1.0 } else { 0.0 };
                }
                x
            }
        };
        Ok((x, z))
    }
}

/// A [`LatentModel`] bound to a tape.
#[derive(Clone, Debug)]
pub struct LatentVars {
    pub decoder: BoundDecoder,
    pub log_sigma: Option<Var>,
}

impl LatentVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.decoder.vars();
        v.extend(self.log_sigma);
        v
    }

    /// `log p_θ(x | z)` per row.
    pub fn log_lik_rows(&self, tape: &mut Tape, x: Var, z: Var) -> Result<Var> {
        let eta = self.decoder.forward(tape, z)?;
        match self.log_sigma {
            Some(ls) => gaussian_log_lik_rows(tape, x, eta, ls),
            None => bernoulli_log_lik_rows(tape, x, eta),
        }
    }

    pub fn log_joint_rows(&self, tape: &mut Tape, x: Var, z: Var) -> Result<Var> {
        let prior = std_normal_log_density_rows(tape, z)?;
        let lik = self.log_lik_rows(tape, x, z)?;
        tape.add(prior, lik)
    }
}

/// `Σ_d log N(x_d; μ_d, σ_d²)` per row with `σ = exp(log_sigma)`.
pub fn gaussian_log_lik_rows(tape: &mut Tape, x: Var, mean: Var, log_sigma: Var) -> Result<Var> {
    let d = tape.value(log_sigma).len();
    let diff = tape.sub(x, mean)?;
    let neg_ls = tape.neg(log_sigma)?;
    let inv = tape.exp(neg_ls)?;
    let r = tape.mul_row(diff, inv)?;
    let sq = tape.square(r)?;
    let half = tape.scale(sq, -0.5)?;
    let per = tape.add_bias(half, neg_ls)?;
    let rows = tape.sum_last(per)?;
    tape.add_scalar(rows, -0.5 * d as f64 * ln_2pi())
}

/// `Σ_d x_d η_d − softplus(η_d)` per row, on logits.
pub fn bernoulli_log_lik_rows(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    let xe = tape.mul(x, logits)?;
    let sp = tape.softplus(logits)?;
    let ll = tape.sub(xe, sp)?;
    tape.sum_last(ll)
}

/// `log N(z; 0, I)` per row.
pub fn std_normal_log_density_rows(tape: &mut Tape, z: Var) -> Result<Var> {
    let d = tape.value(z).cols();
    let sq = tape.square(z)?;
    let s = tape.sum_last(sq)?;
    let h = tape.scale(s, -0.5)?;
    tape.add_scalar(h, -0.5 * d as f64 * ln_2pi())
}

/// Diagonal Gaussians, one per row: `N(mean_i, diag(exp(log_var_i)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianDiag {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::shape("gaussian_diag", mean.shape(), log_var.shape()));
        }
        if !mean.all_finite() || !log_var.all_finite() {
            return Err(Error::Numerical("gaussian_diag: non-finite parameters".into()));
        }
        Ok(GaussianDiag { mean, log_var })
    }

    pub fn standard(n: usize, d: usize) -> Self {
        GaussianDiag {
            mean: Tensor::zeros(&[n, d]),
            log_var: Tensor::zeros(&[n, d]),
        }
    }

    pub fn rows(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    pub fn var(&self) -> Tensor {
        self.log_var.map(f64::exp)
    }

    pub fn std(&self) -> Tensor {
        self.log_var.map(|v| (0.5 * v).exp())
    }

    /// Row `i` as its own single-row distribution.
    pub fn row(&self, i: usize) -> GaussianDiag {
        GaussianDiag {
            mean: self.mean.select_rows(&[i]),
            log_var: self.log_var.select_rows(&[i]),
        }
    }

    /// `z = μ + σ ⊙ ε`; returns `(z, ε)`.
    pub fn sample(&self, rng: &mut Rng) -> (Tensor, Tensor) {
        let eps = rng.normal_tensor(self.mean.shape());
        let z = self.reparameterize(&eps);
        (z, eps)
    }

    pub fn reparameterize(&self, eps: &Tensor) -> Tensor {
        let mut z = self.mean.clone();
        for ((zi, lv), e) in z.data_mut().iter_mut().zip(self.log_var.data()).zip(eps.data()) {
            *zi += (0.5 * lv).exp() * e;
        }
        z
    }

    /// `log q(z_i)` for each row `i` against row `i` of `z`.
    pub fn log_density_rows(&self, z: &Tensor) -> Vec<f64> {
        let d = self.dim();
        (0..self.rows())
            .map(|i| self.log_density_at(i, z.row(i)))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|v| v - 0.5 * d as f64 * ln_2pi())
            .collect()
    }

    /// `log N(z; μ_i, Σ_i)` without the `−d/2 log 2π` constant.
    fn log_density_at(&self, i: usize, z: &[f64]) -> f64 {
        let (m, lv) = (self.mean.row(i), self.log_var.row(i));
        let mut acc = 0.0;
        for k in 0..z.len() {
            let diff = z[k] - m[k];
            acc += -0.5 * (diff * diff * (-lv[k]).exp() + lv[k]);
        }
        acc
    }

    /// `log N(z; μ_i, Σ_i)` for a single point against every row `i`.
    pub fn log_density_each(&self, z: &[f64]) -> Vec<f64> {
        let c = -0.5 * self.dim() as f64 * ln_2pi();
        (0..self.rows()).map(|i| self.log_density_at(i, z) + c).collect()
    }

    /// `KL(q_i ‖ N(0, I))` per row, closed form.
    pub fn kl_std_normal_rows(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| {
                let (m, lv) = (self.mean.row(i), self.log_var.row(i));
                0.5 * m
                    .iter()
                    .zip(lv)
                    .map(|(mu, l)| l.exp() + mu * mu - l - 1.0)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Amortized diagonal-Gaussian encoder: a shared tanh trunk followed by a
/// linear mean head and a variance head mapped through softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub trunk: Option<Mlp>,
    pub mean_head: Mlp,
    pub var_head: Mlp,
}

impl Encoder {
    /// `hidden` may be empty, giving linear heads on the raw input.
    pub fn new(data_dim: usize, hidden: &[usize], latent_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![data_dim];
        widths.extend_from_slice(hidden);
        let trunk = if hidden.is_empty() {
            None
        } else {
            Some(Mlp::new(
                MlpSpec::new(&widths, Activation::Tanh, Activation::Tanh),
                rng,
            )?)
        };
        let top = *widths.last().expect("non-empty");
        let head = MlpSpec::new(&[top, latent_dim], Activation::Identity, Activation::Identity);
        Ok(Encoder {
            trunk,
            mean_head: Mlp::new(head.clone(), rng)?,
            var_head: Mlp::new(head, rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.output_dim()
    }

    pub fn data_dim(&self) -> usize {
        match &self.trunk {
            Some(t) => t.input_dim(),
            None => self.mean_head.input_dim(),
        }
    }

    /// Trunk, mean head, variance head.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.as_ref().map(Mlp::params).unwrap_or_default();
        p.extend(self.mean_head.params());
        p.extend(self.var_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.as_mut().map(Mlp::params_mut).unwrap_or_default();
        p.extend(self.mean_head.params_mut());
        p.extend(self.var_head.params_mut());
        p
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            trunk: self.trunk.as_ref().map(|t| t.bind(tape, trainable)),
            mean_head: self.mean_head.bind(tape, trainable),
            var_head: self.var_head.bind(tape, trainable),
        }
    }

    pub fn encode(&self, x: &Tensor) -> Result<GaussianDiag> {
        if x.cols() != self.data_dim() {
            return Err(Error::shape("encode", x.shape(), &[self.data_dim()]));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (mu, var) = vars.encode(&mut tape, xv)?;
        GaussianDiag::new(
            tape.value(mu).clone(),
            tape.value(var).map(f64::ln),
        )
    }
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub trunk: Option<BoundMlp>,
    pub mean_head: BoundMlp,
    pub var_head: BoundMlp,
}

impl EncoderVars {
    /// Rebinds an encoder's architecture to variables in [`Encoder::params`]
    /// order.
    pub fn from_vars(encoder: &Encoder, vars: Vec<Var>) -> Self {
        let mut rest = vars.into_iter();
        let mut take = |m: &Mlp| BoundMlp::from_vars(m.spec.clone(), rest.by_ref().take(2 * m.spec.layers()).collect());
        EncoderVars {
            trunk: encoder.trunk.as_ref().map(&mut take),
            mean_head: take(&encoder.mean_head),
            var_head: take(&encoder.var_head),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.trunk.as_ref().map(|t| t.vars().to_vec()).unwrap_or_default();
        v.extend(self.mean_head.vars());
        v.extend(self.var_head.vars());
        v
    }

    /// Returns `(μ, Σ_diag)`, both `[n, d_z]`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = match &self.trunk {
            Some(t) => t.forward(tape, x)?,
            None => x,
        };
        let mu = self.mean_head.forward(tape, h)?;
        let raw = self.var_head.forward(tape, h)?;
        let var = tape.softplus(raw)?;
        Ok((mu, var))
    }
}

/// Serializable description of a [`LatentModel`], stored in checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "decoder", rename_all = "lowercase")]
pub enum DecoderSpec {
    Linear { latent_dim: usize, data_dim: usize },
    Mlp { spec: MlpSpec },
    Skip { spec: MlpSpec },
}

impl Decoder {
    pub fn spec(&self) -> DecoderSpec {
        match self {
            Decoder::Linear(b) => DecoderSpec::Linear {
                latent_dim: b.shape()[0],
                data_dim: b.shape()[1],
            },
            Decoder::Mlp(m) => DecoderSpec::Mlp {
                spec: m.spec.clone(),
            },
            Decoder::Skip(s) => DecoderSpec::Skip {
                spec: s.mlp.spec.clone(),
            },
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Decoder::Linear(b) => vec![("decoder.beta".to_string(), b)],
            Decoder::Mlp(m) => m.named_params("decoder"),
            Decoder::Skip(s) => s.named_params("decoder"),
        }
    }
}
