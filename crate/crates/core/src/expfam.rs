//! Exponential families `p(x) = ν(x) exp(ηᵀt(x) − A(η))`.
//!
//! The public API takes mean parameters and converts them to natural
//! parameters internally:
//!
//! | family      | mean params θ      | η                    | t(x)          |
//! |-------------|--------------------|----------------------|---------------|
//! | Bernoulli   | `[p]`              | `log p/(1−p)`        | `x`           |
//! | Gaussian    | `[μ, σ²]`          | `(μ/σ², −1/(2σ²))`   | `(x, x²)`     |
//! | Poisson     | `[λ]`              | `log λ`              | `x`           |
//! | Categorical | `[p_1..p_K]`       | `log p`              | one-hot(x)    |
//! | Dirichlet   | `[α_1..α_K]`       | `α − 1`              | `log x`       |
//! | Gamma       | `[α, β]` (rate β)  | `(α − 1, −β)`        | `(log x, x)`  |
//!
//! Dirichlet uses the `α − 1` convention so that the base measure is 1 on the
//! simplex. Categorical observations are a single class index `x = [k]`.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tensor::{logsumexp, Tape, Var};
use crate::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Family {
    Bernoulli,
    Gaussian,
    Poisson,
    Categorical(usize),
    Dirichlet(usize),
    Gamma,
}

impl Family {
    /// Number of natural parameters.
    pub fn dim(self) -> usize {
        match self {
            Family::Bernoulli | Family::Poisson => 1,
            Family::Gaussian | Family::Gamma => 2,
            Family::Categorical(k) | Family::Dirichlet(k) => k,
        }
    }

    fn check_len(self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::domain(format!(
                "{self:?}: expected {} {what}, got {}",
                self.dim(),
                v.len()
            )));
        }
        Ok(())
    }

    pub fn natural_param(self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_mean(theta)?;
        Ok(match self {
            Family::Bernoulli => vec![(theta[0] / (1.0 - theta[0])).ln()],
            Family::Gaussian => vec![theta[0] / theta[1], -0.5 / theta[1]],
            Family::Poisson => vec![theta[0].ln()],
            Family::Categorical(_) => theta.iter().map(|p| p.ln()).collect(),
            Family::Dirichlet(_) => theta.iter().map(|a| a - 1.0).collect(),
            Family::Gamma => vec![theta[0] - 1.0, -theta[1]],
        })
    }

    /// Inverse of [`Family::natural_param`].
    pub fn mean_param(self, eta: &[f64]) -> Result<Vec<f64>> {
        self.check_natural(eta)?;
        Ok(match self {
            Family::Bernoulli => vec![1.0 / (1.0 + (-eta[0]).exp())],
            Family::Gaussian => {
                let var = -0.5 / eta[1];
                vec![eta[0] * var, var]
            }
            Family::Poisson => vec![eta[0].exp()],
            Family::Categorical(_) => eta.iter().map(|e| e.exp()).collect(),
            Family::Dirichlet(_) => eta.iter().map(|e| e + 1.0).collect(),
            Family::Gamma => vec![eta[0] + 1.0, -eta[1]],
        })
    }

    fn check_mean(self, theta: &[f64]) -> Result<()> {
        self.check_len("mean parameters", theta)?;
        let bad = |c: &str| Err(Error::domain(format!("{self:?}: requires {c}")));
        match self {
            Family::Bernoulli if !(theta[0] > 0.0 && theta[0] < 1.0) => bad("p in (0, 1)"),
            Family::Gaussian if !(theta[1] > 0.0) || !theta[0].is_finite() => {
                bad("finite μ and σ² > 0")
            }
            Family::Poisson if !(theta[0] > 0.0) => bad("λ > 0"),
            Family::Categorical(_)
                if theta.iter().any(|p| !(*p > 0.0)) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-9 =>
            {
                bad("strictly positive probabilities summing to 1")
            }
            Family::Dirichlet(_) if theta.iter().any(|a| !(*a > 0.0)) => bad("α > 0"),
            Family::Gamma if !(theta[0] > 0.0 && theta[1] > 0.0) => bad("α > 0 and β > 0"),
            _ => Ok(()),
        }
    }

    fn check_natural(self, eta: &[f64]) -> Result<()> {
        self.check_len("natural parameters", eta)?;
        let bad = |c: &str| Err(Error::domain(format!("{self:?}: requires {c}")));
        match self {
            _ if eta.iter().any(|e| !e.is_finite()) => bad("finite η"),
            Family::Gaussian if eta[1] >= 0.0 => bad("η₂ < 0"),
            Family::Categorical(_) if logsumexp(eta).abs() > 1e-9 => {
                bad("η = log p with Σp = 1")
            }
            Family::Dirichlet(_) if eta.iter().any(|e| *e <= -1.0) => bad("α = η + 1 > 0"),
            Family::Gamma if eta[0] <= -1.0 || eta[1] >= 0.0 => bad("α = η₁ + 1 > 0 and β = −η₂ > 0"),
            _ => Ok(()),
        }
    }

    pub fn log_normalizer(self, eta: &[f64]) -> Result<f64> {
        self.check_natural(eta)?;
        Ok(match self {
            Family::Bernoulli => crate::tensor::softplus(eta[0]),
            Family::Gaussian => -eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * (-2.0 * eta[1]).ln(),
            Family::Poisson => eta[0].exp(),
            Family::Categorical(_) => 0.0,
            Family::Dirichlet(_) => {
                let alphas: Vec<f64> = eta.iter().map(|e| e + 1.0).collect();
                alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alphas.iter().sum())
            }
            Family::Gamma => {
                let (a, b) = (eta[0] + 1.0, -eta[1]);
                ln_gamma(a) - a * b.ln()
            }
        })
    }

    /// `A(η)` recorded on a tape, for the families whose normalizer is built
    /// from tape primitives.
    pub fn log_normalizer_var(self, tape: &mut Tape, eta: Var) -> Result<Var> {
        if tape.value(eta).len() != self.dim() {
            return Err(Error::shape("log_normalizer", tape.shape(eta), &[self.dim()]));
        }
        match self {
            Family::Bernoulli => {
                let a = tape.softplus(eta)?;
                tape.sum(a)
            }
            Family::Poisson => {
                let a = tape.exp(eta)?;
                tape.sum(a)
            }
            Family::Gaussian => {
                let e1 = tape.slice(eta, 0, 0, 1)?;
                let e2 = tape.slice(eta, 0, 1, 2)?;
                let num = tape.square(e1)?;
                let den = tape.scale(e2, 4.0)?;
                let quad = tape.div(num, den)?;
                let m2 = tape.scale(e2, -2.0)?;
                let lg = tape.log(m2)?;
                let half = tape.scale(lg, 0.5)?;
                let neg_quad = tape.neg(quad)?;
                let a = tape.sub(neg_quad, half)?;
                tape.sum(a)
            }
            Family::Categorical(_) => tape.logsumexp(eta),
            Family::Dirichlet(_) | Family::Gamma => Err(Error::domain(format!(
                "{self:?}: log-gamma is not a tape primitive"
            ))),
        }
    }

    pub fn sufficient_stat(self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_support(x)?;
        Ok(match self {
            Family::Bernoulli | Family::Poisson => vec![x[0]],
            Family::Gaussian => vec![x[0], x[0] * x[0]],
            Family::Categorical(k) => {
                let mut t = vec![0.0; k];
                t[x[0] as usize] = 1.0;
                t
            }
            Family::Dirichlet(_) => x.iter().map(|v| v.ln()).collect(),
            Family::Gamma => vec![x[0].ln(), x[0]],
        })
    }

    pub fn log_base_measure(self, x: &[f64]) -> Result<f64> {
        self.check_support(x)?;
        Ok(match self {
            Family::Gaussian => -0.5 * LN_2PI,
            Family::Poisson => -ln_gamma(x[0] + 1.0),
            _ => 0.0,
        })
    }

    fn check_support(self, x: &[f64]) -> Result<()> {
        let n = match self {
            Family::Dirichlet(k) => k,
            _ => 1,
        };
        if x.len() != n {
            return Err(Error::domain(format!("{self:?}: observation must have {n} entries")));
        }
        let is_count = |v: f64| v >= 0.0 && v.fract() == 0.0;
        let ok = match self {
            Family::Bernoulli => x[0] == 0.0 || x[0] == 1.0,
            Family::Gaussian => x[0].is_finite(),
            Family::Poisson => is_count(x[0]) && x[0].is_finite(),
            Family::Categorical(k) => is_count(x[0]) && (x[0] as usize) < k,
            Family::Dirichlet(_) => {
                x.iter().all(|v| *v > 0.0) && (x.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
            Family::Gamma => x[0] > 0.0 && x[0].is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("{self:?}: {x:?} is outside the support")))
        }
    }

    /// `log ν(x) + ηᵀt(x) − A(η)`.
    pub fn log_density(self, eta: &[f64], x: &[f64]) -> Result<f64> {
        let t = self.sufficient_stat(x)?;
        let a = self.log_normalizer(eta)?;
        let dot: f64 = eta.iter().zip(&t).map(|(e, s)| e * s).sum();
        Ok(self.log_base_measure(x)? + dot - a)
    }

    /// Log-density from mean parameters.
    pub fn log_prob(self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.log_density(&self.natural_param(theta)?, x)
    }

    pub fn sample(self, theta: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_mean_for_sampling(theta)?;
        Ok(match self {
            Family::Bernoulli => vec![if rng.uniform() < theta[0] { 1.0 } else { 0.0 }],
            Family::Gaussian => vec![theta[0] + theta[1].sqrt() * rng.normal()],
            Family::Poisson => vec![sample_poisson(theta[0], rng) as f64],
            Family::Categorical(_) => vec![sample_categorical(theta, rng) as f64],
            Family::Dirichlet(_) => sample_dirichlet(theta, rng),
            Family::Gamma => vec![sample_gamma(theta[0], rng) / theta[1]],
        })
    }

    /// Sampling accepts the closed endpoints `p ∈ {0, 1}` and degenerate
    /// categorical vectors that the natural parameterization excludes.
    fn check_mean_for_sampling(self, theta: &[f64]) -> Result<()> {
        match self {
            Family::Bernoulli => {
                self.check_len("mean parameters", theta)?;
                if (0.0..=1.0).contains(&theta[0]) {
                    Ok(())
                } else {
                    Err(Error::domain("Bernoulli: requires p in [0, 1]"))
                }
            }
            Family::Categorical(_) => {
                self.check_len("mean parameters", theta)?;
                if theta.iter().all(|p| *p >= 0.0) && (theta.iter().sum::<f64>() - 1.0).abs() < 1e-9 {
                    Ok(())
                } else {
                    Err(Error::domain("Categorical: requires a probability vector"))
                }
            }
            _ => self.check_mean(theta),
        }
    }
}

/// Inverse-CDF draw of a class index.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Marsaglia–Tsang draw from Gamma(shape, 1).
pub fn sample_gamma(shape: f64, rng: &mut Rng) -> f64 {
    if shape < 1.0 {
        // boost: Gamma(a) = Gamma(a + 1) · U^{1/a}
        let u = rng.uniform();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn sample_dirichlet(alpha: &[f64], rng: &mut Rng) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| sample_gamma(a, rng)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Knuth's multiplication method for small rates, Hörmann's transformed
/// rejection (PTRS) otherwise.
pub fn sample_poisson(lambda: f64, rng: &mut Rng) -> u64 {
    if lambda < 30.0 {
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut p = rng.uniform();
        while p > limit {
            k += 1;
            p *= rng.uniform();
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        if lhs <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// Standard normal log-density summed over a slice.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LN_2PI
}

pub(crate) fn ln_2pi() -> f64 {
    LN_2PI
}
