//! Importance-sampled log-likelihood for a generator with Gaussian noise:
//! MAP latent, overdispersed encoder covariance, compared against the
//! closed form.

use dpgm::experiments::loglik::{run_loglik, LoglikConfig};

fn main() -> dpgm::Result<()> {
    let cfg = LoglikConfig::default();
    let r = run_loglik(&cfg, 0, dpgm::experiments::threads()?)?;
    for p in r.points.iter().take(5) {
        println!("estimate {:9.4}  exact {:9.4}  ESS {:7.1}", p.estimate, p.truth, p.ess);
    }
    println!(
        "{} points, S = {}, gamma = {}: mean {:.4} vs {:.4}, worst relative error {:.2e}",
        r.points.len(),
        r.samples,
        r.gamma,
        r.mean_estimate,
        r.mean_truth,
        r.max_rel_error
    );
    Ok(())
}
