use dpgm::etm::*;
use dpgm::vi::{gaussian_kl, gaussian_kl_rows};
use dpgm::models::GaussianDiag;
use dpgm::{Rng, Tape, Tensor};

fn vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

fn mean_cosine(learned: &Tensor, truth: &Tensor) -> f64 {
    let m = greedy_topic_match(learned, truth);
    m.iter().map(|t| t.2).sum::<f64>() / m.len() as f64
}

fn planted_config() -> EtmConfig {
    EtmConfig {
        topics: 3,
        epochs: 150,
        ..EtmConfig::default()
    }
}

#[test]
fn planted_topics_are_recovered() {
    let mut rng = Rng::seed(11);
    let planted = planted_corpus(3, 50, 500, (40, 80), &mut rng).unwrap();
    let (model, log) = train_etm(&planted.corpus, None, &planted_config(), &mut rng).unwrap();
    let cos = mean_cosine(&model.topics().unwrap(), &planted.beta);
    assert!(cos > 0.9, "mean matched cosine {cos}");
    assert!(log.last().unwrap().elbo > log[0].elbo);
}

#[test]
fn shuffled_words_destroy_recovery() {
    let mut rng = Rng::seed(11);
    let planted = planted_corpus(3, 50, 500, (40, 80), &mut rng).unwrap();
    // Pool every token and deal them back out at random: no document
    // carries topic structure any more.
    let tokens = planted.corpus.tokens.clone().unwrap();
    let mut pool: Vec<usize> = tokens.iter().flatten().copied().collect();
    let perm = rng.permutation(pool.len());
    pool = perm.iter().map(|&i| pool[i]).collect();
    let mut it = pool.into_iter();
    let shuffled: Vec<Vec<usize>> = tokens.iter().map(|d| it.by_ref().take(d.len()).collect()).collect();
    let corpus = Corpus::from_tokens(planted.corpus.vocab.clone(), shuffled).unwrap();
    let (model, _) = train_etm(&corpus, None, &planted_config(), &mut rng).unwrap();
    let cos = mean_cosine(&model.topics().unwrap(), &planted.beta);
    assert!(cos < 0.9, "shuffled corpus still matched with cosine {cos}");
}

#[test]
fn heldout_elbo_trends_upward() {
    let mut rng = Rng::seed(12);
    let planted = planted_corpus(3, 50, 600, (40, 80), &mut rng).unwrap();
    let (train, test) = planted.corpus.split(1.0 / 6.0, &mut rng);
    let cfg = EtmConfig {
        epochs: 80,
        ..planted_config()
    };
    let (_, log) = train_etm(&train, Some(&test), &cfg, &mut rng).unwrap();
    let h: Vec<f64> = log.iter().map(|r| r.heldout_elbo.unwrap()).collect();
    let avg: Vec<f64> = h.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 0.05, "moving average fell at window {i}: {} -> {}", w[0], w[1]);
    }
    assert!(avg.last().unwrap() > &avg[0]);
}

#[test]
fn identity_embeddings_give_softmax_of_alpha() {
    let mut rng = Rng::seed(13);
    let mut model = EtmModel::with_rho(Tensor::eye(6), 2, &[4], false, &mut rng).unwrap();
    model.alpha = rng.normal_tensor(&[2, 6]);
    let beta = model.topics().unwrap();
    for k in 0..2 {
        let row = model.alpha.row(k);
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|a| (a - m).exp()).sum();
        for v in 0..6 {
            assert!((beta.get2(k, v) - (row[v] - m).exp() / z).abs() < 1e-15);
        }
    }
}

#[test]
fn kl_term_matches_shared_formula() {
    let mut rng = Rng::seed(14);
    let mean = rng.normal_tensor(&[4, 3]);
    let log_var = rng.normal_tensor(&[4, 3]).scale(0.5);
    let q = GaussianDiag::new(mean.clone(), log_var.clone()).unwrap();
    let mut tape = Tape::new();
    let mu = tape.constant(mean);
    let var = tape.constant(log_var.map(f64::exp));
    let kl = gaussian_kl_rows(&mut tape, mu, var).unwrap();
    for (a, b) in tape.value(kl).data().iter().zip(gaussian_kl(&q)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cbow_learns_deterministic_successor() {
    let docs = vec![vec![0, 1]; 50];
    let cfg = CbowConfig {
        window: 1,
        epochs: 200,
        lr: 5e-2,
        batch: 100,
    };
    let cbow = train_cbow(&docs, 2, 4, &cfg, &mut Rng::seed(15)).unwrap();
    let p = cbow.predict(&[0]).unwrap();
    assert!(p[1] > 0.99, "{p:?}");
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn cbow_synonyms_share_embeddings() {
    // Words 0 and 1 are interchangeable; the rest fall in two clusters
    // that 0/1 appear within.
    let mut rng = Rng::seed(16);
    let clusters = [vec![2, 3, 4, 5], vec![6, 7, 8, 9]];
    let docs: Vec<Vec<usize>> = (0..2000)
        .map(|d| {
            let c = &clusters[d % 2];
            (0..12)
                .map(|_| {
                    if rng.uniform() < 0.25 {
                        rng.below(2)
                    } else {
                        c[rng.below(c.len())]
                    }
                })
                .collect()
        })
        .collect();
    let cfg = CbowConfig {
        window: 2,
        epochs: 10,
        lr: 1e-2,
        batch: 128,
    };
    let cbow = train_cbow(&docs, 10, 4, &cfg, &mut rng).unwrap();
    let col = |v: usize| (0..4).map(|l| cbow.rho.get2(l, v)).collect::<Vec<_>>();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let (a, b) = (col(0), col(1));
    assert!(cos(&a, &b) > 0.9, "synonym cosine {}", cos(&a, &b));
    assert!(cos(&a, &col(2)) < 0.5);
}

#[test]
fn coherence_matches_hand_counts() {
    // doc 0: a b c, doc 1: a b, doc 2: b d, doc 3: a c d
    let corpus = Corpus::new(
        vocab(4),
        vec![
            vec![(0, 1), (1, 2), (2, 1)],
            vec![(0, 3), (1, 1)],
            vec![(1, 1), (3, 1)],
            vec![(0, 1), (2, 2), (3, 1)],
        ],
    )
    .unwrap();
    let beta = Tensor::from_rows(&[vec![0.4, 0.3, 0.2, 0.1]]).unwrap();
    // top 3 = a, b, c. P(a)=3/4 P(b)=3/4 P(c)=2/4; P(ab)=2/4 P(ac)=2/4 P(bc)=1/4
    let f = |pij: f64, pi: f64, pj: f64| (pij / (pi * pj)).ln() / -pij.ln();
    let want = (f(0.5, 0.75, 0.75) + f(0.5, 0.75, 0.5) + f(0.25, 0.75, 0.5)) / 3.0;
    let got = topic_coherence(&beta, &corpus, 3).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn diversity_extremes() {
    let mut rng = Rng::seed(17);
    let row = rng.normal_tensor(&[1, 30]).into_data();
    let same = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
    assert!((topic_diversity(&same, 25).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let mut disjoint = Tensor::zeros(&[2, 50]);
    for i in 0..25 {
        disjoint.set2(0, i, 1.0);
        disjoint.set2(1, 25 + i, 1.0);
    }
    assert_eq!(topic_diversity(&disjoint, 25).unwrap(), 1.0);
}

#[test]
fn single_topic_completion_ignores_first_half() {
    let mut rng = Rng::seed(18);
    let planted = planted_corpus(2, 20, 30, (6, 12), &mut rng).unwrap();
    let model = EtmModel::new(20, 1, 4, &[8], &mut rng).unwrap();
    let a = document_completion(&model, &planted.corpus).unwrap();
    let mut other = model.clone();
    other.encoder = EtmModel::new(20, 1, 4, &[8], &mut rng).unwrap().encoder;
    let b = document_completion(&other, &planted.corpus).unwrap();
    assert!((a.loglik_per_word - b.loglik_per_word).abs() < 1e-12);
}

#[test]
fn oracle_topics_beat_uniform_completion() {
    let mut rng = Rng::seed(19);
    let planted = planted_corpus(3, 50, 200, (40, 80), &mut rng).unwrap();
    let mut oracle = EtmModel::with_rho(Tensor::eye(50), 3, &[16], false, &mut rng).unwrap();
    oracle.alpha = planted.beta.map(f64::ln);
    let mut uniform = oracle.clone();
    uniform.alpha = Tensor::zeros(&[3, 50]);
    let o = document_completion(&oracle, &planted.corpus).unwrap();
    let u = document_completion(&uniform, &planted.corpus).unwrap();
    assert!(o.loglik_per_word > u.loglik_per_word, "{o:?} vs {u:?}");
    assert!((u.perplexity - 50.0).abs() < 1e-9);
}

#[test]
fn prefit_mode_needs_tokens_and_keeps_rho() {
    let mut rng = Rng::seed(20);
    let planted = planted_corpus(3, 30, 120, (20, 40), &mut rng).unwrap();
    let bow_only = Corpus::new(planted.corpus.vocab.clone(), planted.corpus.docs.clone()).unwrap();
    let cfg = EtmConfig {
        epochs: 3,
        rho_mode: RhoMode::Prefit,
        cbow: CbowConfig {
            epochs: 2,
            ..CbowConfig::default()
        },
        ..EtmConfig::default()
    };
    assert!(train_etm(&bow_only, None, &cfg, &mut rng).is_err());
    let (model, log) = train_etm(&planted.corpus, None, &cfg, &mut rng).unwrap();
    assert!(!model.learn_rho);
    assert_eq!(log.len(), 3);
}
