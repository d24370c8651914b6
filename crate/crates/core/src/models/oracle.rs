//! The linear-Gaussian latent model
//! `z ~ N(0, I)`, `x | z ~ N(z W + b, diag(s²))`,
//! whose posterior and marginal are available in closed form.

use nalgebra::{DMatrix, DVector};

use super::{Activation, Decoder, Encoder, LatentModel, Likelihood, Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::expfam::std_normal_log_density;
use crate::linalg::{inverse_spd, to_matrix, MvNormal};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    /// `[d_z, d_x]`
    pub w: Tensor,
    pub b: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl LinearGaussian {
    pub fn new(w: Tensor, b: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let dx = w.cols();
        if w.shape().len() != 2 || b.len() != dx || sigma.len() != dx {
            return Err(Error::shape("linear_gaussian", w.shape(), &[b.len(), sigma.len()]));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::domain("linear_gaussian: noise scales must be positive"));
        }
        Ok(LinearGaussian {
            w,
            b,
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
        })
    }

    pub fn random(latent_dim: usize, data_dim: usize, sigma: f64, rng: &mut Rng) -> Self {
        let w = rng.normal_tensor(&[latent_dim, data_dim]);
        let b = rng.normal_vec(data_dim).into_iter().map(|v| 0.5 * v).collect();
        Self::new(w, b, vec![sigma; data_dim]).expect("valid by construction")
    }

    pub fn latent_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn data_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn noise_var(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| (2.0 * l).exp()).collect()
    }

    /// Same model as a [`LatentModel`] with a one-layer identity decoder.
    pub fn to_model(&self) -> LatentModel {
        let spec = MlpSpec::new(
            &[self.latent_dim(), self.data_dim()],
            Activation::Identity,
            Activation::Identity,
        );
        let mut mlp = Mlp::zeros(spec).expect("positive dims");
        mlp.weights[0] = self.w.clone();
        mlp.biases[0] = Tensor::vector(self.b.clone());
        LatentModel::new(
            Decoder::Mlp(mlp),
            Likelihood::Gaussian {
                log_sigma: Tensor::vector(self.log_sigma.clone()),
            },
        )
        .expect("consistent shapes")
    }

    /// Reads `W`, `b` and `log σ` back out of a one-layer identity model.
    pub fn from_model(model: &LatentModel) -> Result<Self> {
        let (Decoder::Mlp(m), Likelihood::Gaussian { log_sigma }) = (&model.decoder, &model.likelihood)
        else {
            return Err(Error::domain("not a linear-Gaussian model"));
        };
        if m.spec.layers() != 1 || m.spec.output != Activation::Identity {
            return Err(Error::domain("not a linear-Gaussian model"));
        }
        Ok(LinearGaussian {
            w: m.weights[0].clone(),
            b: m.biases[0].data().to_vec(),
            log_sigma: log_sigma.data().to_vec(),
        })
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> (Tensor, Tensor) {
        let z = rng.normal_tensor(&[n, self.latent_dim()]);
        let mut x = z.matmul(&self.w).expect("shapes agree");
        let dx = self.data_dim();
        for (k, v) in x.data_mut().iter_mut().enumerate() {
            *v += self.b[k % dx] + self.log_sigma[k % dx].exp() * rng.normal();
        }
        (x, z)
    }

    /// `N(b, WᵀW + diag(s²))`.
    pub fn marginal(&self) -> MvNormal {
        let w = to_matrix(&self.w);
        let mut cov = w.transpose() * &w;
        for (d, v) in self.noise_var().into_iter().enumerate() {
            cov[(d, d)] += v;
        }
        MvNormal::new(DVector::from_vec(self.b.clone()), cov).expect("positive definite")
    }

    pub fn log_marginal(&self, x: &[f64]) -> f64 {
        self.marginal().log_density(x)
    }

    /// Posterior precision `I + W diag(1/s²) Wᵀ`.
    fn posterior_precision(&self) -> DMatrix<f64> {
        let w = to_matrix(&self.w);
        let inv: Vec<f64> = self.noise_var().iter().map(|v| 1.0 / v).collect();
        let scaled = &w * DMatrix::from_diagonal(&DVector::from_vec(inv));
        DMatrix::identity(self.latent_dim(), self.latent_dim()) + scaled * w.transpose()
    }

    /// Posterior covariance, the same for every `x`.
    pub fn posterior_cov(&self) -> DMatrix<f64> {
        inverse_spd(&self.posterior_precision()).expect("precision is PD")
    }

    /// The affine map `x ↦ x A + c` giving the posterior mean, with `A` of
    /// shape `[d_x, d_z]`.
    pub fn posterior_mean_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let cov = self.posterior_cov();
        let w = to_matrix(&self.w);
        let inv: Vec<f64> = self.noise_var().iter().map(|v| 1.0 / v).collect();
        let gain = &cov * &w * DMatrix::from_diagonal(&DVector::from_vec(inv));
        let a = gain.transpose();
        let c = -(a.transpose() * DVector::from_vec(self.b.clone()));
        (a, c)
    }

    pub fn posterior(&self, x: &[f64]) -> MvNormal {
        let (a, c) = self.posterior_mean_map();
        let mean = a.transpose() * DVector::from_column_slice(x) + c;
        MvNormal::new(mean, self.posterior_cov()).expect("posterior covariance is PD")
    }

    pub fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        let mut ll = std_normal_log_density(z);
        for d in 0..self.data_dim() {
            let mean: f64 = self.b[d] + (0..self.latent_dim()).map(|k| z[k] * self.w.get2(k, d)).sum::<f64>();
            let s = self.log_sigma[d].exp();
            let r = (x[d] - mean) / s;
            ll += -0.5 * r * r - self.log_sigma[d] - 0.5 * crate::expfam::ln_2pi();
        }
        ll
    }

    /// `KL(q ‖ p(z | x))` for a diagonal Gaussian `q`.
    pub fn kl_to_posterior(&self, q_mean: &[f64], q_var: &[f64], x: &[f64]) -> f64 {
        let post = self.posterior(x);
        let prec = self.posterior_precision();
        let d = self.latent_dim();
        let diff = &post.mean - DVector::from_column_slice(q_mean);
        let mut trace = 0.0;
        for k in 0..d {
            trace += prec[(k, k)] * q_var[k];
        }
        let quad = (diff.transpose() * &prec * &diff)[(0, 0)];
        let logdet_q: f64 = q_var.iter().map(|v| v.ln()).sum();
        0.5 * (trace + quad - d as f64 + post.log_det_cov() - logdet_q)
    }

    /// Encoder with linear heads computing the exact posterior. Only
    /// possible when the posterior covariance is diagonal.
    pub fn exact_encoder(&self) -> Result<Encoder> {
        let cov = self.posterior_cov();
        let d = self.latent_dim();
        for i in 0..d {
            for j in 0..d {
                if i != j && cov[(i, j)].abs() > 1e-12 {
                    return Err(Error::domain(
                        "posterior covariance is not diagonal; no diagonal encoder is exact",
                    ));
                }
            }
        }
        let (a, c) = self.posterior_mean_map();
        let mut rng = Rng::seed(0);
        let mut enc = Encoder::new(self.data_dim(), &[], d, &mut rng)?;
        enc.mean_head.weights[0] = crate::linalg::from_matrix(&a);
        enc.mean_head.biases[0] = Tensor::vector(c.iter().cloned().collect());
        enc.var_head.weights[0] = Tensor::zeros(&[self.data_dim(), d]);
        enc.var_head.biases[0] =
            Tensor::vector((0..d).map(|k| inverse_softplus(cov[(k, k)])).collect());
        Ok(enc)
    }

    /// A model whose posterior is diagonal: orthogonal rows in `W` and a
    /// shared noise scale.
    pub fn diagonal_posterior(latent_dim: usize, data_dim: usize, sigma: f64, rng: &mut Rng) -> Self {
        assert!(latent_dim <= data_dim);
        let g = to_matrix(&rng.normal_tensor(&[data_dim, latent_dim]));
        let q = g.qr().q();
        let mut w = Tensor::zeros(&[latent_dim, data_dim]);
        for k in 0..latent_dim {
            let scale = 0.5 + k as f64 * 0.5;
            for d in 0..data_dim {
                w.set2(k, d, scale * q[(d, k)]);
            }
        }
        let b = rng.normal_vec(data_dim).into_iter().map(|v| 0.5 * v).collect();
        Self::new(w, b, vec![sigma; data_dim]).expect("valid by construction")
    }
}

pub(crate) fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
