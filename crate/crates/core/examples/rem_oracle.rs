//! Reweighted EM (both proposal variants) next to a VAE on a model whose
//! marginal likelihood is known, via the same runner as `dpgm oracle`.

use dpgm::experiments::oracle::{run_oracle, OracleConfig};

fn main() -> dpgm::Result<()> {
    let cfg = OracleConfig::default();
    let (rows, _) = run_oracle(&cfg, 0)?;
    println!("{:<18} {:>10} {:>10} {:>12}", "method", "ELBO", "IWAE_50", "log p(x)");
    for r in &rows {
        println!("{:<18} {:>10.4} {:>10.4} {:>12.4}", r.method, r.elbo, r.iwae, r.exact_loglik);
    }
    println!("generating model: {:.4}", rows[0].truth);
    Ok(())
}
