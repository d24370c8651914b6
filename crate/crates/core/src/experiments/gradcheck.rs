//! Finite-difference sweep over every computation graph the crate builds.

use serde::Serialize;

use crate::error::Result;
use crate::etm::{cbow_loss, etm_elbo_graph};
use crate::expfam::Family;
use crate::models::{
    Activation, BoundDecoder, BoundMlp, BoundSkip, Encoder, EncoderVars, LatentVars, Mlp, MlpSpec, SkipMlp,
};
use crate::presgan::gan_objective;
use crate::rem::diag_log_density_rows;
use crate::tensor::{check_gradients, Tape, Tensor, Var};
use crate::vi::{elbo_objective, gaussian_kl_rows, reparameterize};
use crate::Rng;

const H_LINEAR: f64 = 1e-3;
const H: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphCheck {
    pub name: &'static str,
    /// The graph is linear in all of its inputs.
    pub linear: bool,
    pub max_rel_error: f64,
}

type Check = fn(&mut Rng) -> Result<f64>;

/// `Σ c ⊙ v` with fixed random `c`, turning any node into a scalar.
fn project(tape: &mut Tape, v: Var, rng: &mut Rng) -> Result<Var> {
    let c = rng.normal_tensor(tape.shape(v));
    let c = tape.constant(c);
    let p = tape.mul(v, c)?;
    tape.sum(p)
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.uniform_tensor(shape, 0.5, 2.0)
}

/// Runs `f` on leaves for `inputs`, projecting its output with weights
/// drawn once from `seed`.
fn unary(
    inputs: Vec<Tensor>,
    h: f64,
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    check_gradients(
        |tape, v| {
            let out = f(tape, v)?;
            project(tape, out, &mut Rng::seed(seed))
        },
        &inputs,
        h,
    )
}

fn linear_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("add_sub", |r| {
            let s = r.next_u64();
            let inputs = vec![r.normal_tensor(&[3, 4]), r.normal_tensor(&[3, 4]), r.normal_tensor(&[3, 4])];
            unary(inputs, H_LINEAR, s, |t, v| {
                let a = t.add(v[0], v[1])?;
                t.sub(a, v[2])
            })
        }),
        ("matmul_const", |r| {
            let s = r.next_u64();
            let w = r.normal_tensor(&[4, 5]);
            unary(vec![r.normal_tensor(&[3, 4])], H_LINEAR, s, move |t, v| {
                let c = t.constant(w.clone());
                t.matmul(v[0], c)
            })
        }),
        ("add_bias", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4]), r.normal_tensor(&[4])], H_LINEAR, s, |t, v| {
                t.add_bias(v[0], v[1])
            })
        }),
        ("scale_neg_shift", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[2, 3])], H_LINEAR, s, |t, v| {
                let a = t.scale(v[0], 2.5)?;
                let b = t.neg(a)?;
                t.add_scalar(b, 0.7)
            })
        }),
        ("sum_mean_sum_last", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4])], H_LINEAR, s, |t, v| {
                let rows = t.sum_last(v[0])?;
                let m = t.mean(rows)?;
                let all = t.sum(v[0])?;
                t.add(m, all)
            })
        }),
        ("concat_slice", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 2]), r.normal_tensor(&[3, 4])], H_LINEAR, s, |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let a = t.slice(c, 1, 1, 5)?;
                let b = t.concat(&[a, v[0]], 1)?;
                t.slice(b, 0, 1, 3)
            })
        }),
        ("transpose_reshape", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4])], H_LINEAR, s, |t, v| {
                let a = t.transpose(v[0])?;
                t.reshape(a, &[2, 6])
            })
        }),
    ]
}

fn elementwise_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("mul_div", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 3]), positive(r, &[3, 3])], H, s, |t, v| {
                let m = t.mul(v[0], v[1])?;
                let d = t.div(v[0], v[1])?;
                t.add(m, d)
            })
        }),
        ("mul_row", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4]), r.normal_tensor(&[4])], H, s, |t, v| t.mul_row(v[0], v[1]))
        }),
        ("tanh_sigmoid", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4])], H, s, |t, v| {
                let a = t.tanh(v[0])?;
                let b = t.sigmoid(v[0])?;
                t.mul(a, b)
            })
        }),
        ("softplus_log_sigmoid", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 4]).scale(3.0)], H, s, |t, v| {
                let a = t.softplus(v[0])?;
                let b = t.log_sigmoid(v[0])?;
                t.add(a, b)
            })
        }),
        ("exp_log_sqrt_square", |r| {
            let s = r.next_u64();
            unary(vec![positive(r, &[2, 5])], H, s, |t, v| {
                let a = t.exp(v[0])?;
                let b = t.log(v[0])?;
                let c = t.sqrt(v[0])?;
                let d = t.square(v[0])?;
                let ab = t.add(a, b)?;
                let cd = t.add(c, d)?;
                t.add(ab, cd)
            })
        }),
        ("softmax_log_softmax_logsumexp", |r| {
            let s = r.next_u64();
            unary(vec![r.normal_tensor(&[3, 5])], H, s, |t, v| {
                let a = t.softmax(v[0])?;
                let b = t.log_softmax(v[0])?;
                let c = t.add(a, b)?;
                let l = t.logsumexp(v[0])?;
                let rows = t.sum_last(c)?;
                t.add(rows, l)
            })
        }),
    ]
}

fn expfam_checks() -> Vec<(&'static str, Check)> {
    fn family(fam: Family, eta: Tensor) -> Result<f64> {
        check_gradients(|t, v| fam.log_normalizer_var(t, v[0]), &[eta], H)
    }
    vec![
        ("log_normalizer_bernoulli", |r| family(Family::Bernoulli, r.normal_tensor(&[1]))),
        ("log_normalizer_poisson", |r| family(Family::Poisson, r.normal_tensor(&[1]))),
        ("log_normalizer_gaussian", |r| {
            family(Family::Gaussian, Tensor::vector(vec![r.normal(), -0.5 * r.uniform_tensor(&[1], 0.5, 2.0).item()]))
        }),
        ("log_normalizer_categorical", |r| family(Family::Categorical(4), r.normal_tensor(&[4]))),
    ]
}

fn mlp_spec(widths: &[usize]) -> MlpSpec {
    MlpSpec::new(widths, Activation::Tanh, Activation::Identity)
}

fn model_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("mlp_tanh", |r| {
            let s = r.next_u64();
            let spec = mlp_spec(&[3, 5, 4, 2]);
            let mlp = Mlp::new(spec.clone(), r).unwrap();
            let mut inputs = vec![r.normal_tensor(&[4, 3])];
            inputs.extend(mlp.params().into_iter().cloned());
            unary(inputs, H, s, move |t, v| BoundMlp::from_vars(spec.clone(), v[1..].to_vec()).forward(t, v[0]))
        }),
        ("skip_decoder", |r| {
            let s = r.next_u64();
            let net = SkipMlp::new(mlp_spec(&[2, 4, 3, 3]), r).unwrap();
            let spec = net.mlp.spec.clone();
            let n_mlp = net.mlp.params().len();
            let mut inputs = vec![r.normal_tensor(&[3, 2])];
            inputs.extend(net.params().into_iter().cloned());
            unary(inputs, H, s, move |t, v| {
                let bound = BoundSkip {
                    mlp: BoundMlp::from_vars(spec.clone(), v[1..1 + n_mlp].to_vec()),
                    skips: v[1 + n_mlp..].to_vec(),
                };
                bound.forward(t, v[0])
            })
        }),
        ("encoder", |r| {
            let s = r.next_u64();
            let enc = Encoder::new(4, &[6, 5], 2, r)?;
            let mut inputs = vec![r.normal_tensor(&[3, 4])];
            inputs.extend(enc.params().into_iter().cloned());
            unary(inputs, H, s, move |t, v| {
                let ev = EncoderVars::from_vars(&enc, v[1..].to_vec());
                let (mu, var) = ev.encode(t, v[0])?;
                let lv = t.log(var)?;
                t.add(mu, lv)
            })
        }),
        ("gaussian_kl_reparameterize", |r| {
            let s = r.next_u64();
            let eps = r.normal_tensor(&[3, 2]);
            unary(vec![r.normal_tensor(&[3, 2]), positive(r, &[3, 2])], H, s, move |t, v| {
                let kl = gaussian_kl_rows(t, v[0], v[1])?;
                let z = reparameterize(t, v[0], v[1], &eps)?;
                let zs = t.sum_last(z)?;
                t.add(kl, zs)
            })
        }),
        ("vae_elbo", |r| {
            let enc = Encoder::new(3, &[5], 2, r)?;
            let dec = Mlp::new(mlp_spec(&[2, 5, 3]), r)?;
            let x = r.normal_tensor(&[4, 3]);
            let eps = vec![r.normal_tensor(&[4, 2]), r.normal_tensor(&[4, 2])];
            let n_dec = dec.params().len();
            let spec = dec.spec.clone();
            let mut inputs: Vec<Tensor> = dec.params().into_iter().cloned().collect();
            inputs.push(r.normal_tensor(&[3]).scale(0.3));
            inputs.extend(enc.params().into_iter().cloned());
            check_gradients(
                |t, v| {
                    let mv = LatentVars {
                        decoder: BoundDecoder::Mlp(BoundMlp::from_vars(spec.clone(), v[..n_dec].to_vec())),
                        log_sigma: Some(v[n_dec]),
                    };
                    let ev = EncoderVars::from_vars(&enc, v[n_dec + 1..].to_vec());
                    elbo_objective(t, &mv, &ev, &x, &eps)
                },
                &inputs,
                H,
            )
        }),
        ("bernoulli_efpca_log_joint", |r| {
            let x = Tensor::from_vec(vec![3, 4], (0..12).map(|i| (i % 2) as f64).collect())?;
            let inputs = vec![r.normal_tensor(&[3, 2]), r.normal_tensor(&[2, 4])];
            check_gradients(
                |t, v| {
                    let mv = LatentVars {
                        decoder: BoundDecoder::Linear(v[1]),
                        log_sigma: None,
                    };
                    let xv = t.constant(x.clone());
                    let lj = mv.log_joint_rows(t, xv, v[0])?;
                    t.sum(lj)
                },
                &inputs,
                H,
            )
        }),
        ("proposal_log_density", |r| {
            let z = r.normal_tensor(&[4, 3]);
            check_gradients(
                |t, v| {
                    let l = diag_log_density_rows(t, &z, v[0], v[1])?;
                    t.sum(l)
                },
                &[r.normal_tensor(&[4, 3]), positive(r, &[4, 3])],
                H,
            )
        }),
        ("iwae_bound", |r| {
            let k = 5;
            let dec = r.normal_tensor(&[2, 3]);
            let x = r.normal_tensor(&[1, 3]);
            let eps = r.normal_tensor(&[k, 2]);
            let inputs = vec![dec, r.normal_tensor(&[1, 2]), positive(r, &[1, 2]), r.normal_tensor(&[3]).scale(0.2)];
            check_gradients(
                |t, v| {
                    let ones = t.constant(Tensor::ones(&[k, 1]));
                    let mu = t.matmul(ones, v[1])?;
                    let var = t.matmul(ones, v[2])?;
                    let z = reparameterize(t, mu, var, &eps)?;
                    let mv = LatentVars {
                        decoder: BoundDecoder::Linear(v[0]),
                        log_sigma: Some(v[3]),
                    };
                    let xs = t.constant(x.select_rows(&vec![0; k]));
                    let lj = mv.log_joint_rows(t, xs, z)?;
                    let zval = t.value(z).clone();
                    // log q with the sample held as a function of (μ, σ²)
                    let diff = t.sub(z, mu)?;
                    let sq = t.square(diff)?;
                    let r2 = t.div(sq, var)?;
                    let lv = t.log(var)?;
                    let s = t.add(r2, lv)?;
                    let rows = t.sum_last(s)?;
                    let lq = t.scale(rows, -0.5)?;
                    let lq = t.add_scalar(lq, -(zval.cols() as f64) * 0.5 * crate::expfam::ln_2pi())?;
                    let lw = t.sub(lj, lq)?;
                    let row = t.reshape(lw, &[1, k])?;
                    let lse = t.logsumexp(row)?;
                    let lse = t.sum(lse)?;
                    t.add_scalar(lse, -(k as f64).ln())
                },
                &inputs,
                H,
            )
        }),
    ]
}

fn adversarial_and_topic_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("gan_objective", |r| {
            let net = Mlp::new(mlp_spec(&[2, 6, 6, 1]), r)?;
            let spec = net.spec.clone();
            let mut inputs = vec![r.normal_tensor(&[5, 2]), r.normal_tensor(&[4, 2])];
            inputs.extend(net.params().into_iter().cloned());
            check_gradients(
                |t, v| gan_objective(t, &BoundMlp::from_vars(spec.clone(), v[2..].to_vec()), v[0], v[1]),
                &inputs,
                H,
            )
        }),
        ("presgan_generator_surrogate", |r| {
            let gen = Mlp::new(mlp_spec(&[3, 5, 2]), r)?;
            let disc = Mlp::new(mlp_spec(&[2, 5, 1]), r)?;
            let (gspec, dspec) = (gen.spec.clone(), disc.spec.clone());
            let n_gen = gen.params().len();
            let z = r.normal_tensor(&[4, 3]);
            let eps = r.normal_tensor(&[4, 2]);
            let score = r.normal_tensor(&[4, 2]);
            let mut inputs: Vec<Tensor> = gen.params().into_iter().cloned().collect();
            inputs.push(r.normal_tensor(&[2]).scale(0.3));
            inputs.extend(disc.params().into_iter().cloned());
            check_gradients(
                |t, v| {
                    let g = BoundMlp::from_vars(gspec.clone(), v[..n_gen].to_vec());
                    let d = BoundMlp::from_vars(dspec.clone(), v[n_gen + 1..].to_vec());
                    let zv = t.constant(z.clone());
                    let ev = t.constant(eps.clone());
                    let mu = g.forward(t, zv)?;
                    let sigma = t.exp(v[n_gen])?;
                    let noise = t.mul_row(ev, sigma)?;
                    let x = t.add(mu, noise)?;
                    let logits = d.forward(t, x)?;
                    let l = t.log_sigmoid(logits)?;
                    let adv = t.mean(l)?;
                    let sv = t.constant(score.clone());
                    let sx = t.mul(sv, x)?;
                    let sx = t.sum(sx)?;
                    let ent = t.scale(sx, 0.1 / 4.0)?;
                    let ls = t.sum(v[n_gen])?;
                    let reg = t.scale(ls, 0.2)?;
                    let a = t.sub(ent, adv)?;
                    t.add(a, reg)
                },
                &inputs,
                H,
            )
        }),
        ("etm_elbo", |r| {
            let enc = Encoder::new(6, &[5, 4], 2, r)?;
            let mut counts = Tensor::zeros(&[3, 6]);
            for d in 0..3 {
                for _ in 0..8 {
                    counts.row_mut(d)[r.below(6)] += 1.0;
                }
            }
            let eps = r.normal_tensor(&[3, 2]);
            let mut inputs = vec![r.normal_tensor(&[3, 6]), r.normal_tensor(&[2, 3])];
            inputs.extend(enc.params().into_iter().cloned());
            check_gradients(
                |t, v| {
                    let ev = EncoderVars::from_vars(&enc, v[2..].to_vec());
                    Ok(etm_elbo_graph(t, v[0], v[1], &ev, &counts, &eps, 4.0)?.elbo)
                },
                &inputs,
                H,
            )
        }),
        ("cbow", |r| {
            let mut ctx = Tensor::zeros(&[4, 5]);
            let mut tgt = Tensor::zeros(&[4, 5]);
            for i in 0..4 {
                tgt.row_mut(i)[r.below(5)] = 1.0;
                ctx.row_mut(i)[r.below(5)] += 1.0;
                ctx.row_mut(i)[r.below(5)] += 1.0;
            }
            check_gradients(
                |t, v| cbow_loss(t, v[0], v[1], &ctx, &tgt),
                &[r.normal_tensor(&[5, 3]), r.normal_tensor(&[3, 5])],
                H,
            )
        }),
    ]
}

/// Names and linearity of every registered graph.
pub fn registry() -> Vec<(&'static str, bool)> {
    all().into_iter().map(|(n, l, _)| (n, l)).collect()
}

fn all() -> Vec<(&'static str, bool, Check)> {
    let mut out: Vec<_> = linear_checks().into_iter().map(|(n, c)| (n, true, c)).collect();
    for group in [elementwise_checks(), expfam_checks(), model_checks(), adversarial_and_topic_checks()] {
        out.extend(group.into_iter().map(|(n, c)| (n, false, c)));
    }
    out
}

/// Checks every registered graph on inputs drawn from `seed`, spreading the
/// graphs over `threads` workers.
pub fn run_gradcheck(seed: u64, threads: usize) -> Result<Vec<GraphCheck>> {
    let entries = all();
    let mut root = Rng::seed(seed);
    let rngs: Vec<Rng> = entries.iter().map(|_| root.split()).collect();
    let jobs: Vec<_> = entries.into_iter().zip(rngs).collect();
    super::parallel_map(jobs, threads, |((name, linear, check), mut rng)| {
        Ok(GraphCheck {
            name,
            linear,
            max_rel_error: check(&mut rng)?,
        })
    })
}
