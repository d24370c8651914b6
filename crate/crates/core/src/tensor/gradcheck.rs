use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares tape gradients of a scalar-valued graph against central finite
/// differences with step `h`, returning the worst elementwise relative error
/// over all inputs.
///
/// `build` receives a fresh tape and one leaf per input, and must return a
/// scalar node.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::shape("check_gradients", tape.shape(out), &[1]));
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.grad(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let ad = grads.wrt(*v);
        for k in 0..probe[i].len() {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(ad.data()[k], fd));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn linear_map_is_exact() {
        let mut rng = Rng::seed(1);
        let w = rng.normal_tensor(&[3, 4]);
        let x = rng.normal_tensor(&[4, 2]);
        let err = check_gradients(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                t.sum(y)
            },
            &[w, x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_scalar_output_rejected() {
        let r = check_gradients(|t, v| t.exp(v[0]), &[Tensor::vector(vec![1.0, 2.0])], 1e-5);
        assert!(r.is_err());
    }
}
