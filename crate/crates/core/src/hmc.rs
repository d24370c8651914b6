//! Hamiltonian Monte Carlo over batches of independent chains.
//!
//! Each row of the state is its own chain; all rows share one step size,
//! which is tuned toward a target acceptance rate during burn-in only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    /// Posterior samples kept per chain.
    pub steps: usize,
    pub leapfrog: usize,
    pub step_size: f64,
    pub burn_in: usize,
    pub target_accept: f64,
    /// Robbins–Monro gain on `log step_size`.
    pub adapt_gain: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            steps: 2,
            leapfrog: 5,
            step_size: 0.02,
            burn_in: 2,
            target_accept: 0.67,
            adapt_gain: 0.02,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leapfrog == 0 {
            return Err(Error::Config("hmc.leapfrog must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("hmc.step_size must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("hmc.target_accept must lie in (0, 1)".into()));
        }
        if !(self.adapt_gain >= 0.0) {
            return Err(Error::Config("hmc.adapt_gain must be non-negative".into()));
        }
        Ok(())
    }
}

/// Log density and its gradient for every row of `z`.
pub trait Target {
    fn log_density_grad(&mut self, z: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

impl<F> Target for F
where
    F: FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)>,
{
    fn log_density_grad(&mut self, z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self(z)
    }
}

/// Step size carried across calls so adaptation can continue where it
/// stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSize {
    pub value: f64,
    pub updates: usize,
}

impl StepSize {
    pub fn new(value: f64) -> Self {
        StepSize { value, updates: 0 }
    }

    fn adapt(&mut self, accept: f64, cfg: &HmcConfig) {
        self.value *= (cfg.adapt_gain * (accept - cfg.target_accept)).exp();
        self.updates += 1;
    }
}

/// `n_steps` leapfrog steps from `(z, p)`. Returns the end point, the end
/// momentum and the log density there.
pub fn leapfrog<T: Target + ?Sized>(
    target: &mut T,
    z: &Tensor,
    p: &Tensor,
    step: f64,
    n_steps: usize,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    if z.shape() != p.shape() {
        return Err(Error::shape("leapfrog", z.shape(), p.shape()));
    }
    let (logp, g) = target.log_density_grad(z)?;
    let end = integrate(target, z, p, &logp, &g, step, n_steps)?;
    Ok((end.z, end.p, end.logp))
}

struct Endpoint {
    z: Tensor,
    p: Tensor,
    logp: Vec<f64>,
    grad: Tensor,
}

/// Leapfrog given the log density and gradient at the start, so a chain
/// pays for `n_steps` gradient evaluations per transition.
fn integrate<T: Target + ?Sized>(
    target: &mut T,
    z: &Tensor,
    p: &Tensor,
    logp: &[f64],
    grad: &Tensor,
    step: f64,
    n_steps: usize,
) -> Result<Endpoint> {
    let mut z = z.clone();
    let mut p = p.clone();
    let mut logp = logp.to_vec();
    let mut g = grad.clone();
    p.axpy(0.5 * step, &g)?;
    for i in 0..n_steps {
        z.axpy(step, &p)?;
        let (lp, gn) = target.log_density_grad(&z)?;
        logp = lp;
        g = gn;
        let coef = if i + 1 == n_steps { 0.5 * step } else { step };
        p.axpy(coef, &g)?;
    }
    if n_steps == 0 {
        p.axpy(-0.5 * step, &g)?;
    }
    Ok(Endpoint { z, p, logp, grad: g })
}

fn kinetic_rows(p: &Tensor) -> Vec<f64> {
    let d = p.cols();
    p.data()
        .chunks(d)
        .map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HmcDiagnostics {
    pub proposed: usize,
    pub accepted: usize,
    pub burn_in_accept: f64,
    pub sample_accept: f64,
    pub step_size: f64,
    pub max_abs_delta_h: f64,
    pub warning: Option<String>,
}

impl HmcDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct HmcOutput {
    /// One `[chains, d]` tensor per kept iteration.
    pub samples: Vec<Tensor>,
    pub last: Tensor,
    pub diagnostics: HmcDiagnostics,
}

impl HmcOutput {
    /// Per-chain average over kept samples.
    pub fn sample_mean(&self) -> Option<Tensor> {
        let first = self.samples.first()?;
        let mut acc = Tensor::zeros(first.shape());
        for s in &self.samples {
            acc.axpy(1.0, s).ok()?;
        }
        Some(acc.scale(1.0 / self.samples.len() as f64))
    }

    /// All kept samples stacked into `[chains * steps, d]`.
    pub fn stacked(&self) -> Option<Tensor> {
        let first = self.samples.first()?;
        let d = first.cols();
        let data: Vec<f64> = self.samples.iter().flat_map(|s| s.data().iter().copied()).collect();
        let n = data.len() / d;
        Tensor::from_vec(vec![n, d], data).ok()
    }
}

/// Runs `burn_in + steps` HMC transitions from `z0` (shape `[chains, d]`).
/// The step size is adapted during burn-in only. With `steps == 0` nothing
/// runs and `z0` and `step` are returned untouched.
pub fn hmc_sample<T: Target + ?Sized>(
    target: &mut T,
    z0: &Tensor,
    cfg: &HmcConfig,
    step: &mut StepSize,
    rng: &mut Rng,
) -> Result<HmcOutput> {
    cfg.validate()?;
    if z0.shape().len() != 2 {
        return Err(Error::shape("hmc_sample", z0.shape(), &[0, 0]));
    }
    let mut diag = HmcDiagnostics {
        step_size: step.value,
        ..Default::default()
    };
    if cfg.steps == 0 {
        return Ok(HmcOutput {
            samples: Vec::new(),
            last: z0.clone(),
            diagnostics: diag,
        });
    }
    let (n, d) = (z0.rows(), z0.cols());
    let mut z = z0.clone();
    let (mut logp, mut grad) = target.log_density_grad(&z)?;
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("hmc_sample: initial state has non-finite log density".into()));
    }
    let mut samples = Vec::with_capacity(cfg.steps);
    let (mut burn_acc, mut burn_prop, mut keep_acc, mut keep_prop) = (0usize, 0usize, 0usize, 0usize);
    for it in 0..cfg.burn_in + cfg.steps {
        let p0 = rng.normal_tensor(&[n, d]);
        let end = integrate(target, &z, &p0, &logp, &grad, step.value, cfg.leapfrog)?;
        let k0 = kinetic_rows(&p0);
        let k1 = kinetic_rows(&end.p);
        let mut accepted = 0usize;
        let mut prob_sum = 0.0;
        for i in 0..n {
            let dh = (logp[i] - k0[i]) - (end.logp[i] - k1[i]);
            let log_a = if dh.is_finite() { (-dh).min(0.0) } else { f64::NEG_INFINITY };
            if dh.is_finite() {
                diag.max_abs_delta_h = diag.max_abs_delta_h.max(dh.abs());
            }
            prob_sum += log_a.exp();
            if rng.uniform().ln() < log_a {
                z.row_mut(i).copy_from_slice(end.z.row(i));
                grad.row_mut(i).copy_from_slice(end.grad.row(i));
                logp[i] = end.logp[i];
                accepted += 1;
            }
        }
        if it < cfg.burn_in {
            burn_acc += accepted;
            burn_prop += n;
            step.adapt(prob_sum / n as f64, cfg);
        } else {
            keep_acc += accepted;
            keep_prop += n;
            samples.push(z.clone());
        }
    }
    diag.proposed = burn_prop + keep_prop;
    diag.accepted = burn_acc + keep_acc;
    diag.burn_in_accept = if burn_prop > 0 { burn_acc as f64 / burn_prop as f64 } else { 0.0 };
    diag.sample_accept = keep_acc as f64 / keep_prop as f64;
    diag.step_size = step.value;
    if diag.accepted == 0 {
        diag.warning = Some(format!(
            "hmc: no proposals accepted in {} transitions (step size {:.3e}, max |dH| {:.3e})",
            diag.proposed, step.value, diag.max_abs_delta_h
        ));
    }
    Ok(HmcOutput {
        samples,
        last: z,
        diagnostics: diag,
    })
}

/// Zero-mean Gaussian target with precision matrix `prec`, handy for tests
/// and benchmarks.
pub fn gaussian_target(prec: Vec<Vec<f64>>) -> impl FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)> {
    move |z: &Tensor| {
        let d = z.cols();
        let mut g = Tensor::zeros(z.shape());
        let mut lp = Vec::with_capacity(z.rows());
        for i in 0..z.rows() {
            let zi = z.row(i);
            let mut quad = 0.0;
            for a in 0..d {
                let pz: f64 = (0..d).map(|b| prec[a][b] * zi[b]).sum();
                g.row_mut(i)[a] = -pz;
                quad += zi[a] * pz;
            }
            lp.push(-0.5 * quad);
        }
        Ok((lp, g))
    }
}
