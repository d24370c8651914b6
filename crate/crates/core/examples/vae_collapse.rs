//! Trains a VAE on data from a linear-Gaussian model and tracks the ELBO
//! against the exact log-likelihood, plus the collapse metrics
//! (KL to prior, mutual information, active units) per epoch.
//!
//! cargo run --release --example vae_collapse

use dpgm::models::{Decoder, Encoder, LatentModel, LinearGaussian, Mlp, MlpSpec, Activation};
use dpgm::vi::{elbo_estimate, train_vae, VaeConfig};
use dpgm::Rng;

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(3);
    let truth = LinearGaussian::random(2, 6, 0.4, &mut rng);
    let (train, _) = truth.sample(2000, &mut rng);
    let (test, _) = truth.sample(200, &mut rng);
    let exact = (0..test.rows()).map(|i| truth.log_marginal(test.row(i))).sum::<f64>() / test.rows() as f64;

    // A latent space larger than needed: two of the four units are expected to stay inactive.
    let spec = MlpSpec::new(&[4, 32, 6], Activation::Tanh, Activation::Identity);
    let mut model = LatentModel::gaussian(Decoder::Mlp(Mlp::new(spec, &mut rng)?), 1.0)?;
    let mut encoder = Encoder::new(6, &[32], 4, &mut rng)?;
    let cfg = VaeConfig { epochs: 60, batch: 100, ..VaeConfig::default() };
    for row in train_vae(&mut model, &mut encoder, &train, &cfg, &mut rng)? {
        if row.epoch % 10 == 9 {
            println!(
                "epoch {:3}  elbo {:8.4}  KL(q(z)||p(z)) {:.3}  MI {:.3}  active units {}",
                row.epoch + 1,
                row.elbo,
                row.kl,
                row.mi,
                row.au
            );
        }
    }
    let elbo = elbo_estimate(&model, &encoder, &test, 50, &mut rng)?;
    println!("held-out ELBO {:.4} vs exact log p(x) {exact:.4} under the generating model", elbo.value);
    Ok(())
}
