use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dpgm::etm::{topic_coherence, topic_diversity, topics, Corpus};
use dpgm::experiments::parallel_map;
use dpgm::experiments::ring::{mode_coverage, RingTarget};
use dpgm::expfam::Family;
use dpgm::models::{Activation, Encoder, LinearGaussian, Mlp, MlpSpec};
use dpgm::presgan::{generator_gradients, is_loglik, Discriminator, Generator, GeneratorLoss, IsConfig};
use dpgm::rem::{moment_match, ImportanceSet};
use dpgm::tensor::check_gradients;
use dpgm::vi::active_units;
use dpgm::{Result, Rng, Tape, Tensor, Var};

fn unary(tape: &mut Tape, op: usize, v: Var) -> Result<Var> {
    match op {
        0 => tape.tanh(v),
        1 => tape.sigmoid(v),
        2 => tape.softplus(v),
        3 => tape.log_sigmoid(v),
        4 => tape.exp(v),
        5 => tape.square(v),
        6 => tape.softmax(v),
        7 => tape.log_softmax(v),
        _ => tape.logsumexp(v),
    }
}

/// `Σ c ⊙ v` with weights fixed by `seed`.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let c = tape.constant(Rng::seed(seed).normal_tensor(tape.shape(v)));
    let p = tape.mul(v, c)?;
    tape.sum(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn primitive_gradients_match_finite_differences(
        rows in 1usize..4, cols in 1usize..5, op in 0usize..9, seed in any::<u64>()
    ) {
        let mut rng = Rng::seed(seed);
        let x = rng.normal_tensor(&[rows, cols]);
        let err = check_gradients(|t, v| {
            let y = unary(t, op, v[0])?;
            project(t, y, seed)
        }, &[x], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "op {op}: {err}");
    }

    #[test]
    fn binary_gradients_match_finite_differences(
        n in 1usize..4, k in 1usize..4, m in 1usize..4, seed in any::<u64>()
    ) {
        let mut rng = Rng::seed(seed);
        let a = rng.normal_tensor(&[n, k]);
        let b = rng.normal_tensor(&[k, m]);
        let c = rng.uniform_tensor(&[n, m], 0.5, 2.0);
        let err = check_gradients(|t, v| {
            let p = t.matmul(v[0], v[1])?;
            let q = t.div(p, v[2])?;
            let r = t.mul(q, v[2])?;
            let s = t.add(r, q)?;
            project(t, s, seed)
        }, &[a, b, c], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn backward_is_linear_and_replay_is_deterministic(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let x = Rng::seed(seed).normal_tensor(&[3, 4]);
        let run = |wf: f64, wg: f64| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let f = t.tanh(v).unwrap();
            let f = project(&mut t, f, 1).unwrap();
            let g = t.softmax(v).unwrap();
            let g = project(&mut t, g, 2).unwrap();
            let fs = t.scale(f, wf).unwrap();
            let gs = t.scale(g, wg).unwrap();
            let h = t.add(fs, gs).unwrap();
            (t.scalar(h), t.grad(h).unwrap().wrt(v).clone())
        };
        let (vf, gf) = run(1.0, 0.0);
        let (vg, gg) = run(0.0, 1.0);
        let (vh, gh) = run(a, b);
        let (vh2, gh2) = run(a, b);
        prop_assert_eq!(vh.to_bits(), vh2.to_bits());
        prop_assert_eq!(gh.data(), gh2.data());
        prop_assert!((vh - (a * vf + b * vg)).abs() < 1e-12);
        for ((h, f), g) in gh.data().iter().zip(gf.data()).zip(gg.data()) {
            prop_assert!((h - (a * f + b * g)).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_density_matches_direct_formula(mu in -5.0f64..5.0, var in 0.01f64..10.0, x in -10.0f64..10.0) {
        let got = Family::Gaussian.log_prob(&[mu, var], &[x]).unwrap();
        let s = var.sqrt();
        let want = -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        prop_assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn mean_and_natural_parameters_roundtrip(p in 0.01f64..0.99, rate in 0.1f64..20.0, mu in -3.0f64..3.0, var in 0.1f64..5.0) {
        for (fam, theta) in [
            (Family::Bernoulli, vec![p]),
            (Family::Poisson, vec![rate]),
            (Family::Gaussian, vec![mu, var]),
            (Family::Categorical(3), vec![p / 2.0, p / 2.0, 1.0 - p]),
        ] {
            let eta = fam.natural_param(&theta).unwrap();
            let back = fam.mean_param(&eta).unwrap();
            for (a, b) in theta.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{fam:?}");
            }
            let again = fam.natural_param(&back).unwrap();
            for (a, b) in eta.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{fam:?}");
            }
        }
    }

    #[test]
    fn joint_factorizes_into_posterior_and_marginal(seed in any::<u64>(), dz in 1usize..4, extra in 0usize..3) {
        let mut rng = Rng::seed(seed);
        let lg = LinearGaussian::random(dz, dz + extra + 1, 0.3 + rng.uniform(), &mut rng);
        let (x, z) = lg.sample(1, &mut rng);
        let (x, z) = (x.row(0), z.row(0));
        let lhs = lg.log_joint(x, z);
        let rhs = lg.posterior(x).log_density(z) + lg.log_marginal(x);
        prop_assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn normalized_weights_are_shift_invariant(seed in any::<u64>(), k in 1usize..40, shift in -500.0f64..500.0) {
        let mut rng = Rng::seed(seed);
        let particles = rng.normal_tensor(&[k, 2]);
        let logw: Vec<f64> = rng.normal_vec(k).iter().map(|v| 5.0 * v).collect();
        let a = ImportanceSet::new(particles.clone(), logw.clone()).unwrap();
        let b = ImportanceSet::new(particles, logw.iter().map(|l| l + shift).collect()).unwrap();
        prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.weights.iter().all(|w| *w >= 0.0));
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(a.ess >= 1.0 - 1e-12 && a.ess <= k as f64 + 1e-9);
    }

    #[test]
    fn moment_matched_covariance_is_symmetric_pd(seed in any::<u64>(), k in 2usize..30, d in 1usize..5) {
        let mut rng = Rng::seed(seed);
        let set = ImportanceSet::new(rng.normal_tensor(&[k, d]), rng.normal_vec(k)).unwrap();
        let mp = moment_match(&set, 1e-4, true).unwrap();
        let c = &mp.normal.cov;
        prop_assert!((c - c.transpose()).abs().max() < 1e-12);
        prop_assert!(c.clone().cholesky().is_some());
    }

    #[test]
    fn active_units_are_bounded(seed in any::<u64>(), n in 1usize..20, d in 1usize..6) {
        let mut rng = Rng::seed(seed);
        let means = rng.normal_tensor(&[n, d]);
        let au = active_units(&means, 0.1).unwrap();
        prop_assert!(au <= d);
    }

    #[test]
    fn topics_are_simplex_rows(seed in any::<u64>(), k in 1usize..5, l in 1usize..6, v in 2usize..30, scale in 0.1f64..30.0) {
        let mut rng = Rng::seed(seed);
        let beta = topics(&rng.normal_tensor(&[l, v]).scale(scale), &rng.normal_tensor(&[k, l])).unwrap();
        for r in 0..k {
            let row = beta.row(r);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn coherence_and_diversity_stay_in_range(seed in any::<u64>(), k in 1usize..5, v in 4usize..12, docs in 1usize..15) {
        let mut rng = Rng::seed(seed);
        let corpus_docs: Vec<Vec<(usize, u32)>> = (0..docs)
            .map(|_| {
                let mut ids: Vec<usize> = (0..v).filter(|_| rng.uniform() < 0.4).collect();
                if ids.is_empty() {
                    ids.push(rng.below(v));
                }
                ids.into_iter().map(|i| (i, 1 + rng.below(3) as u32)).collect()
            })
            .collect();
        let corpus = Corpus::new((0..v).map(|i| format!("w{i}")).collect(), corpus_docs).unwrap();
        let beta = rng.uniform_tensor(&[k, v], 0.0, 1.0);
        let top = 2 + rng.below(v - 1);
        let tc = topic_coherence(&beta, &corpus, top).unwrap();
        let td = topic_diversity(&beta, top).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&tc), "TC {tc}");
        prop_assert!(td >= 1.0 / k as f64 - 1e-12 && td <= 1.0, "TD {td}");
    }

    #[test]
    fn mode_coverage_ignores_sample_order(seed in any::<u64>(), n in 1usize..300, spread in 0.01f64..2.0) {
        let mut rng = Rng::seed(seed);
        let target = RingTarget::default();
        let noisy = RingTarget::uniform(10, 3.0, spread);
        let samples = noisy.sample(n, &mut rng);
        let perm = rng.permutation(n);
        let shuffled = samples.select_rows(&perm);
        let a = mode_coverage(&samples, &target, 0.5, 0.02);
        let b = mode_coverage(&shuffled, &target, 0.5, 0.02);
        prop_assert_eq!(a.modes_covered, b.modes_covered);
        for (x, y) in a.proportions.iter().zip(&b.proportions) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(a.modes_covered <= 10);
        prop_assert!(a.kl >= 0.0);
    }

    #[test]
    fn ring_centers_and_weights(k in 1usize..20, r in 0.1f64..10.0) {
        let t = RingTarget::uniform(k, r, 0.1);
        prop_assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..k {
            let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            let c = t.center(j);
            prop_assert!((c[0] - r * a.cos()).abs() < 1e-12 && (c[1] - r * a.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_clamp_holds_for_any_log_sigma(seed in any::<u64>(), low in 0.001f64..0.5, width in 0.0f64..1.0) {
        let mut rng = Rng::seed(seed);
        let high = low + width;
        let mut gen = Generator::mlp(2, &[4], 3, 0.0, (low, high), &mut rng).unwrap();
        gen.log_sigma = rng.normal_tensor(&[3]).scale(5.0);
        gen.clamp_sigma();
        prop_assert!(gen.sigma().iter().all(|s| *s >= low * (1.0 - 1e-12) && *s <= high * (1.0 + 1e-12)));
    }

    #[test]
    fn parallel_map_result_ignores_thread_count(n in 0usize..50, threads in 1usize..8) {
        let items: Vec<u64> = (0..n as u64).collect();
        let f = |i: u64| -> Result<f64> { Ok(Rng::seed(i).normal()) };
        let serial = parallel_map(items.clone(), 1, f).unwrap();
        let parallel = parallel_map(items, threads, f).unwrap();
        prop_assert_eq!(serial, parallel);
    }
}

#[test]
fn zero_lambda_generator_gradient_is_the_gan_pathwise_gradient() {
    let mut rng = Rng::seed(31);
    let gen = Generator::mlp(3, &[6], 2, -1.0, (0.01, 0.3), &mut rng).unwrap();
    let disc = Discriminator::new(2, &[5], &mut rng).unwrap();
    let z = rng.normal_tensor(&[7, 3]);
    let eps = rng.normal_tensor(&[7, 2]);
    let score = rng.normal_tensor(&[7, 2]);
    let with_score =
        generator_gradients(&gen, &disc, &z, &eps, Some(&score), 0.0, 0.0, GeneratorLoss::NonSaturating).unwrap();
    let without = generator_gradients(&gen, &disc, &z, &eps, None, 0.0, 0.0, GeneratorLoss::NonSaturating).unwrap();

    // −mean log D(μ(z) + σ ⊙ ε), built directly.
    let mut t = Tape::new();
    let mean = gen.mean.bind(&mut t, true);
    let dnet = disc.net.bind(&mut t, false);
    let zv = t.constant(z.clone());
    let mu = mean.forward(&mut t, zv).unwrap();
    let noise = t.constant(Tensor::from_vec(
        vec![7, 2],
        eps.data().iter().enumerate().map(|(i, e)| e * gen.sigma()[i % 2]).collect(),
    ).unwrap());
    let x = t.add(mu, noise).unwrap();
    let logits = dnet.forward(&mut t, x).unwrap();
    let l = t.log_sigmoid(logits).unwrap();
    let m = t.mean(l).unwrap();
    let loss = t.neg(m).unwrap();
    let g = t.grad(loss).unwrap();
    let direct = g.wrt_all(mean.vars());

    for grads in [&with_score, &without] {
        assert!((grads.loss - t.scalar(loss)).abs() < 1e-12);
        for (a, b) in grads.mean.iter().zip(&direct) {
            assert!(a.sub(b).unwrap().max_abs() < 1e-12);
        }
    }
    assert_eq!(with_score.log_sigma.data(), without.log_sigma.data());
}

#[test]
fn importance_sampling_variance_shrinks_with_samples() {
    let mut rng = Rng::seed(32);
    let lg = LinearGaussian::diagonal_posterior(2, 5, 0.5, &mut rng);
    let sigma: Vec<f64> = lg.log_sigma.iter().map(|l| l.exp()).collect();
    let gen = Generator::linear(lg.w.clone(), lg.b.clone(), &sigma).unwrap();
    let encoder: Encoder = lg.exact_encoder().unwrap();
    let (x, _) = lg.sample(1, &mut rng);
    let mut variances = Vec::new();
    for s in [10, 100, 2000] {
        let cfg = IsConfig { samples: s, ..IsConfig::default() };
        let est: Vec<f64> = (0..40).map(|_| is_loglik(&gen, &encoder, x.row(0), &cfg, &mut rng).unwrap().log_lik).collect();
        let m = est.iter().sum::<f64>() / est.len() as f64;
        variances.push(est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64);
    }
    assert!(variances[0] > variances[1] && variances[1] > variances[2], "{variances:?}");
}

#[test]
fn exact_em_never_decreases_the_oracle_likelihood() {
    // Factor-analysis EM with the closed-form posterior as the E-step.
    let mut rng = Rng::seed(33);
    let truth = LinearGaussian::random(2, 5, 0.4, &mut rng);
    let (data, _) = truth.sample(300, &mut rng);
    let n = data.rows();
    let b: Vec<f64> = (0..5).map(|d| (0..n).map(|i| data.get2(i, d)).sum::<f64>() / n as f64).collect();
    let mut model = LinearGaussian::new(rng.normal_tensor(&[2, 5]), b.clone(), vec![1.0; 5]).unwrap();
    let loglik = |m: &LinearGaussian| (0..n).map(|i| m.log_marginal(data.row(i))).sum::<f64>();
    let mut last = loglik(&model);
    for _ in 0..30 {
        let s = model.posterior_cov();
        let mut ezz = DMatrix::<f64>::zeros(2, 2);
        let mut xez = DMatrix::<f64>::zeros(5, 2);
        let mut xx = DVector::<f64>::zeros(5);
        for i in 0..n {
            let x = data.row(i);
            let m = model.posterior(x).mean;
            let xc = DVector::from_iterator(5, x.iter().zip(&b).map(|(a, c)| a - c));
            ezz += &s + &m * m.transpose();
            xez += &xc * m.transpose();
            xx += xc.component_mul(&xc);
        }
        let lambda = &xez * ezz.try_inverse().unwrap();
        let psi: Vec<f64> = (0..5)
            .map(|d| (xx[d] - (lambda.row(d) * xez.row(d).transpose())[(0, 0)]) / n as f64)
            .collect();
        let w = Tensor::from_rows(&(0..2).map(|k| (0..5).map(|d| lambda[(d, k)]).collect()).collect::<Vec<_>>())
            .unwrap();
        model = LinearGaussian::new(w, b.clone(), psi.iter().map(|p| p.sqrt()).collect()).unwrap();
        let now = loglik(&model);
        assert!(now >= last - 1e-8, "likelihood fell from {last} to {now}");
        last = now;
    }
    assert!(last > loglik(&LinearGaussian::new(Tensor::zeros(&[2, 5]), b, vec![1.0; 5]).unwrap()));
}

#[test]
fn hmc_transitions_are_reversible_on_a_grid() {
    use dpgm::hmc::{gaussian_target, hmc_sample, HmcConfig, StepSize};
    let mut rng = Rng::seed(34);
    let mut target = gaussian_target(vec![vec![1.0]]);
    let chains = 200;
    let z0 = rng.normal_tensor(&[chains, 1]);
    let cfg = HmcConfig { steps: 500, burn_in: 0, leapfrog: 5, step_size: 0.4, adapt_gain: 0.0, ..HmcConfig::default() };
    let out = hmc_sample(&mut target, &z0, &cfg, &mut StepSize::new(cfg.step_size), &mut rng).unwrap();
    let edges = [-1.0, -0.4, 0.0, 0.4, 1.0];
    let bin = |v: f64| edges.iter().filter(|e| v > **e).count();
    let mut counts = [[0.0f64; 6]; 6];
    for pair in out.samples.windows(2) {
        for c in 0..chains {
            counts[bin(pair[0].data()[c])][bin(pair[1].data()[c])] += 1.0;
        }
    }
    let mut stat = 0.0;
    let mut df = 0;
    for i in 0..6 {
        for j in i + 1..6 {
            let (a, b) = (counts[i][j], counts[j][i]);
            if a + b > 0.0 {
                stat += (a - b).powi(2) / (a + b);
                df += 1;
            }
        }
    }
    // 0.999 quantile of χ² with 15 degrees of freedom.
    assert_eq!(df, 15);
    assert!(stat < 37.7, "asymmetry statistic {stat}");
}

#[test]
fn discriminator_probabilities_lie_in_the_open_interval() {
    let mut rng = Rng::seed(35);
    let mut disc = Discriminator::new(2, &[4], &mut rng).unwrap();
    let spec = MlpSpec::new(&[2, 4, 1], Activation::Tanh, Activation::Identity);
    disc.net = Mlp::new(spec, &mut rng).unwrap();
    for w in disc.net.weights.iter_mut() {
        *w = w.scale(5.0);
    }
    let p = disc.prob(&rng.normal_tensor(&[100, 2]).scale(3.0)).unwrap();
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
}
