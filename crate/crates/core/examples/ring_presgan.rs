//! Fits PresGAN (or a plain noised GAN with lambda set to 0) to the ring of
//! ten Gaussians and prints mode coverage as training goes.
//!
//! cargo run --release --example ring_presgan -- [lambda] [seed] [epochs]

use dpgm::experiments::ring::{mode_coverage, RingTarget, DEFAULT_ASSIGN_RADIUS, DEFAULT_MIN_FRACTION};
use dpgm::presgan::{train_presgan_with, Discriminator, Generator, PresganConfig};
use dpgm::Rng;

fn main() -> dpgm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = PresganConfig::default();
    if let Some(l) = args.first() {
        cfg.lambda = l.parse().expect("lambda");
    }
    if let Some(s) = args.get(1) {
        cfg.seed = s.parse().expect("seed");
    }
    if let Some(e) = args.get(2) {
        cfg.epochs = e.parse().expect("epochs");
    }

    let target = RingTarget::default();
    let mut rng = Rng::seed(cfg.seed);
    let data = target.sample(5000, &mut rng);
    let bounds = (cfg.sigma_low, cfg.sigma_high);
    let mut gen = Generator::mlp(cfg.latent_dim, &cfg.hidden, 2, cfg.sigma_init_log, bounds, &mut rng)?;
    let mut disc = Discriminator::new(2, &cfg.hidden, &mut rng)?;
    let mut eval_rng = rng.split();

    train_presgan_with(&mut gen, &mut disc, &data, &cfg, &mut rng, |row, gen| {
        if row.epoch % 25 == 24 || row.epoch + 1 == cfg.epochs {
            let z = eval_rng.normal_tensor(&[5000, cfg.latent_dim]);
            let x = gen.mean.forward(&z)?;
            let cov = mode_coverage(&x, &target, DEFAULT_ASSIGN_RADIUS, DEFAULT_MIN_FRACTION);
            let props: Vec<String> = cov.proportions.iter().map(|p| format!("{p:.3}")).collect();
            println!(
                "epoch {:4}  {:6.1}s  modes {:2}  kl {:.3}  sigma [{:.3}, {:.3}]  hmc acc {:.2} step {:.4}  [{}]",
                row.epoch + 1,
                row.wallclock_s,
                cov.modes_covered,
                cov.kl,
                row.sigma_min,
                row.sigma_max,
                row.hmc_accept,
                row.hmc_step,
                props.join(" ")
            );
        }
        Ok(())
    })?;
    Ok(())
}
