//! The pieces behind PresGAN's entropy term on a linear generator, where
//! everything has a closed form: the HMC score estimate of ∇ₓ log p(x)
//! and the mutual-information identity.

use dpgm::hmc::{HmcConfig, StepSize};
use dpgm::models::LinearGaussian;
use dpgm::presgan::{entropy_score, mutual_information_identity_check, Generator};
use dpgm::{Rng, Tensor};

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(5);
    let lg = LinearGaussian::random(2, 4, 0.5, &mut rng);
    let sigma: Vec<f64> = lg.log_sigma.iter().map(|l| l.exp()).collect();
    let gen = Generator::linear(lg.w.clone(), lg.b.clone(), &sigma)?;

    let (x, _) = lg.sample(1, &mut rng);
    let n = 5000;
    let xs = Tensor::from_rows(&vec![x.row(0).to_vec(); n])?;
    // Chains start from posterior draws, as they would after the latent
    // that produced x is reused during training.
    let post = lg.posterior(x.row(0));
    let z0: Vec<Vec<f64>> = (0..n).map(|_| post.sample(&mut rng).iter().cloned().collect()).collect();
    let zs = Tensor::from_rows(&z0)?;
    let cfg = HmcConfig::default();
    let est = entropy_score(&gen, &xs, &zs, &cfg, &mut StepSize::new(cfg.step_size), &mut rng)?;
    let mut mean = vec![0.0; 4];
    for i in 0..n {
        for (m, s) in mean.iter_mut().zip(est.score.row(i)) {
            *m += s / n as f64;
        }
    }
    let truth = lg.marginal().score(x.row(0));
    println!("score estimate {mean:.4?}");
    println!("analytic score {:.4?}", truth.as_slice());
    println!("HMC acceptance {:.3}", est.diagnostics.sample_accept);

    let id = mutual_information_identity_check(&gen)?;
    println!(
        "I(x, z) = {:.6}; H(p(x)) - sum log sigma^2 / 2 - const = {:.6}",
        id.mutual_information, id.rhs
    );
    Ok(())
}
