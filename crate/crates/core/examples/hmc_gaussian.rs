//! HMC on a correlated 2-D Gaussian with step-size adaptation during
//! burn-in.

use dpgm::hmc::{gaussian_target, hmc_sample, HmcConfig, StepSize};
use dpgm::Rng;

fn main() -> dpgm::Result<()> {
    let rho: f64 = 0.9;
    let c = 1.0 / (1.0 - rho * rho);
    let mut target = gaussian_target(vec![vec![c, -rho * c], vec![-rho * c, c]]);
    let mut rng = Rng::seed(4);
    let chains = 50;
    let z0 = rng.normal_tensor(&[chains, 2]);
    let cfg = HmcConfig { steps: 200, burn_in: 500, ..HmcConfig::default() };
    let mut step = StepSize::new(cfg.step_size);
    let out = hmc_sample(&mut target, &z0, &cfg, &mut step, &mut rng)?;

    let s = out.stacked().expect("samples were kept");
    let n = s.rows() as f64;
    let (mut m, mut cov) = ([0.0; 2], [[0.0; 2]; 2]);
    for i in 0..s.rows() {
        let r = s.row(i);
        for a in 0..2 {
            m[a] += r[a] / n;
            for b in 0..2 {
                cov[a][b] += r[a] * r[b] / n;
            }
        }
    }
    println!("{} samples, step size {:.4}, acceptance {:.3}", s.rows(), step.value, out.diagnostics.sample_accept);
    println!("mean {m:.3?}");
    println!("second moments {cov:.3?} (target [[1, {rho}], [{rho}, 1]])");
    Ok(())
}
