//! Builds a small graph on the tape, checks its gradient against finite
//! differences, then fits a logistic regression with Adam.

use dpgm::tensor::{check_gradients, Adam, AdamConfig};
use dpgm::{Rng, Tape, Tensor};

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(1);

    let err = check_gradients(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.tanh(h)?;
            let s = t.log_softmax(h)?;
            t.sum(s)
        },
        &[rng.normal_tensor(&[4, 3]), rng.normal_tensor(&[3, 5])],
        1e-5,
    )?;
    println!("tanh + log_softmax graph: max relative error {err:.2e}");

    // Labels from a planted weight vector.
    let w_true = Tensor::from_vec(vec![3, 1], vec![2.0, -1.0, 0.5])?;
    let x = rng.normal_tensor(&[500, 3]);
    let logits = x.matmul(&w_true)?;
    let u: Vec<f64> = (0..500).map(|_| rng.uniform()).collect();
    let y = Tensor::from_vec(
        vec![500, 1],
        logits.data().iter().zip(&u).map(|(l, u)| if *u < 1.0 / (1.0 + (-l).exp()) { 1.0 } else { 0.0 }).collect(),
    )?;

    let mut w = Tensor::zeros(&[3, 1]);
    let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..AdamConfig::with_lr(0.05) }, &[&w]);
    for step in 0..300 {
        let mut t = Tape::new();
        let wv = t.leaf(w.clone());
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let l = t.matmul(xv, wv)?;
        // Bernoulli log-likelihood on logits: y·l − softplus(l).
        let yl = t.mul(yv, l)?;
        let sp = t.softplus(l)?;
        let ll = t.sub(yl, sp)?;
        let ll = t.mean(ll)?;
        let loss = t.neg(ll)?;
        let g = t.grad(loss)?.wrt(wv).clone();
        adam.step(&mut [&mut w], &[g])?;
        if step % 100 == 0 {
            println!("step {step:3}  loss {:.4}", t.scalar(loss));
        }
    }
    println!("fitted {:?}, planted {:?}", w.data(), w_true.data());
    Ok(())
}
