//! Mean/natural parameter conversions and the identity dA/dη = E[t(x)],
//! checked by Monte Carlo for three families.

use dpgm::expfam::Family;
use dpgm::{Rng, Tape, Tensor};

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(2);
    let n = 100_000;
    for (fam, theta) in [
        (Family::Bernoulli, vec![0.3]),
        (Family::Poisson, vec![3.5]),
        (Family::Gaussian, vec![0.7, 2.0]),
        (Family::Categorical(3), vec![0.2, 0.5, 0.3]),
    ] {
        let eta = fam.natural_param(&theta)?;
        let mut t = Tape::new();
        let v = t.leaf(Tensor::vector(eta.clone()));
        let a = fam.log_normalizer_var(&mut t, v)?;
        let grad = t.grad(a)?.wrt(v).data().to_vec();

        let mut mean = vec![0.0; grad.len()];
        for _ in 0..n {
            let stat = fam.sufficient_stat(&fam.sample(&theta, &mut rng)?)?;
            for (m, s) in mean.iter_mut().zip(stat) {
                *m += s / n as f64;
            }
        }
        println!("{fam:?}");
        println!("  theta {theta:?} -> eta {eta:.4?} -> theta {:.4?}", fam.mean_param(&eta)?);
        println!("  dA/deta {grad:.4?}");
        println!("  E[t(x)] {mean:.4?}  ({n} samples)");
    }

    let total: f64 = (0..60)
        .map(|k| Family::Poisson.log_prob(&[3.5], &[k as f64]).map(f64::exp))
        .sum::<dpgm::Result<f64>>()?;
    println!("Poisson mass on 0..60: {total:.15}");
    Ok(())
}
