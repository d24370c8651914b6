//! The embedded topic model.
//!
//! Words and topics share an embedding space: topic `k` is the
//! distribution `β_k = softmax(ρᵀ α_k)` over the vocabulary, documents mix
//! topics with logistic-normal proportions `θ = softmax(δ)`, `δ ~ N(0, I)`,
//! and `q(δ | w)` comes from an inference network fed the normalized
//! bag of words.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{sample_categorical, sample_dirichlet};
use crate::models::{Encoder, EncoderVars};
use crate::tensor::{softmax_last, write_atomic, Adam, AdamConfig, Tape, Tensor, Var};
use crate::vi::{gaussian_kl_rows, reparameterize};
use crate::Rng;

/// Sparse documents over a fixed vocabulary, optionally with the original
/// token order.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vec<String>,
    /// `(term id, count)` pairs sorted by id.
    pub docs: Vec<Vec<(usize, u32)>>,
    pub tokens: Option<Vec<Vec<usize>>>,
}

fn bag_of_words(tokens: &[usize]) -> Vec<(usize, u32)> {
    let mut m = BTreeMap::new();
    for &t in tokens {
        *m.entry(t).or_insert(0u32) += 1;
    }
    m.into_iter().collect()
}

impl Corpus {
    pub fn new(vocab: Vec<String>, docs: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        let v = vocab.len();
        let mut clean = Vec::with_capacity(docs.len());
        for (d, doc) in docs.into_iter().enumerate() {
            let mut m = BTreeMap::new();
            for (id, c) in doc {
                if id >= v {
                    return Err(Error::Parse(format!("document {d}: term id {id} outside vocabulary of {v}")));
                }
                if c == 0 {
                    return Err(Error::Parse(format!("document {d}: zero count for term {id}")));
                }
                *m.entry(id).or_insert(0) += c;
            }
            clean.push(m.into_iter().collect());
        }
        Ok(Corpus {
            vocab,
            docs: clean,
            tokens: None,
        })
    }

    pub fn from_tokens(vocab: Vec<String>, tokens: Vec<Vec<usize>>) -> Result<Self> {
        let docs = tokens.iter().map(|t| bag_of_words(t)).collect();
        let mut c = Self::new(vocab, docs)?;
        c.tokens = Some(tokens);
        Ok(c)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_len(&self, d: usize) -> u32 {
        self.docs[d].iter().map(|&(_, c)| c).sum()
    }

    pub fn total_words(&self) -> u64 {
        (0..self.len()).map(|d| self.doc_len(d) as u64).sum()
    }

    /// Dense `[idx.len(), V]` count matrix.
    pub fn bow(&self, idx: &[usize]) -> Tensor {
        let v = self.vocab_size();
        let mut t = Tensor::zeros(&[idx.len(), v]);
        for (r, &d) in idx.iter().enumerate() {
            let row = t.row_mut(r);
            for &(id, c) in &self.docs[d] {
                row[id] = c as f64;
            }
        }
        t
    }

    /// The token sequence of a document: the original order when known,
    /// otherwise the bag of words expanded and interleaved so that each
    /// half sees about half of every term's occurrences.
    pub fn doc_tokens(&self, d: usize) -> Vec<usize> {
        if let Some(t) = &self.tokens {
            return t[d].clone();
        }
        let expanded: Vec<usize> = self.docs[d]
            .iter()
            .flat_map(|&(id, c)| std::iter::repeat(id).take(c as usize))
            .collect();
        let (even, odd): (Vec<_>, Vec<_>) = expanded.iter().enumerate().partition(|(i, _)| i % 2 == 0);
        even.into_iter().chain(odd).map(|(_, &w)| w).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            vocab: self.vocab.clone(),
            docs: idx.iter().map(|&d| self.docs[d].clone()).collect(),
            tokens: self.tokens.as_ref().map(|t| idx.iter().map(|&d| t[d].clone()).collect()),
        }
    }

    /// Drops documents with fewer than `min_len` words.
    pub fn without_short_docs(&self, min_len: u32) -> Corpus {
        let keep: Vec<usize> = (0..self.len()).filter(|&d| self.doc_len(d) >= min_len).collect();
        self.subset(&keep)
    }

    /// Random split into `(train, test)` with `test_fraction` of the
    /// documents held out.
    pub fn split(&self, test_fraction: f64, rng: &mut Rng) -> (Corpus, Corpus) {
        let order = rng.permutation(self.len());
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let (test, train) = order.split_at(n_test.min(self.len()));
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    /// Number of documents containing each term.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0; self.vocab_size()];
        for doc in &self.docs {
            for &(id, _) in doc {
                df[id] += 1;
            }
        }
        df
    }

    /// Reads a vocabulary (one term per line) plus documents as `id:count`
    /// lines and/or raw whitespace-separated token lines.
    pub fn load(vocab: impl AsRef<Path>, docs: Option<&Path>, tokens: Option<&Path>) -> Result<Self> {
        let vocab: Vec<String> = fs::read_to_string(vocab)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let token_docs = match tokens {
            Some(p) => {
                let mut out = Vec::new();
                for (n, line) in fs::read_to_string(p)?.lines().enumerate() {
                    let ids = line
                        .split_whitespace()
                        .map(|w| {
                            index.get(w).copied().ok_or_else(|| {
                                Error::Parse(format!("token file line {}: `{w}` is not in the vocabulary", n + 1))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if !ids.is_empty() {
                        out.push(ids);
                    }
                }
                Some(out)
            }
            None => None,
        };
        match (docs, token_docs) {
            (Some(p), tokens) => {
                let mut parsed = Vec::new();
                for (n, line) in fs::read_to_string(p)?.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let doc = line
                        .split_whitespace()
                        .map(|pair| parse_pair(pair, n + 1))
                        .collect::<Result<Vec<_>>>()?;
                    parsed.push(doc);
                }
                let mut c = Corpus::new(vocab, parsed)?;
                if let Some(t) = tokens {
                    if t.len() != c.len() {
                        return Err(Error::Parse(format!(
                            "{} token lines but {} bag-of-words lines",
                            t.len(),
                            c.len()
                        )));
                    }
                    c.tokens = Some(t);
                }
                Ok(c)
            }
            (None, Some(t)) => Corpus::from_tokens(vocab, t),
            (None, None) => Err(Error::Config("a corpus needs a documents file or a token file".into())),
        }
    }

    /// Writes `vocab.txt`, `docs.txt` and, when present, `tokens.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("vocab.txt"), (self.vocab.join("\n") + "\n").as_bytes())?;
        let docs: String = self
            .docs
            .iter()
            .map(|d| {
                let pairs: Vec<String> = d.iter().map(|(i, c)| format!("{i}:{c}")).collect();
                pairs.join(" ") + "\n"
            })
            .collect();
        write_atomic(&dir.join("docs.txt"), docs.as_bytes())?;
        if let Some(t) = &self.tokens {
            let lines: String = t
                .iter()
                .map(|d| {
                    let words: Vec<&str> = d.iter().map(|&i| self.vocab[i].as_str()).collect();
                    words.join(" ") + "\n"
                })
                .collect();
            write_atomic(&dir.join("tokens.txt"), lines.as_bytes())?;
        }
        Ok(())
    }
}

fn parse_pair(pair: &str, line: usize) -> Result<(usize, u32)> {
    let bad = || Error::Parse(format!("documents line {line}: expected `id:count`, got `{pair}`"));
    let (a, b) = pair.split_once(':').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

/// A corpus drawn from known topics.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    /// `[K, V]`
    pub beta: Tensor,
    /// `[D, K]`
    pub theta: Tensor,
}

/// Topics `β_k ~ Dir(0.1)`, proportions `θ_d ~ Dir(0.5)` and document
/// lengths uniform in `lengths`.
pub fn planted_corpus(
    topics: usize,
    vocab_size: usize,
    docs: usize,
    lengths: (usize, usize),
    rng: &mut Rng,
) -> Result<PlantedCorpus> {
    if topics == 0 || vocab_size == 0 || lengths.0 == 0 || lengths.0 > lengths.1 {
        return Err(Error::Config("planted corpus needs K, V >= 1 and 1 <= min length <= max length".into()));
    }
    let mut beta = Tensor::zeros(&[topics, vocab_size]);
    for k in 0..topics {
        beta.row_mut(k).copy_from_slice(&sample_dirichlet(&vec![0.1; vocab_size], rng));
    }
    let mut theta = Tensor::zeros(&[docs, topics]);
    let mut tokens = Vec::with_capacity(docs);
    for d in 0..docs {
        let th = sample_dirichlet(&vec![0.5; topics], rng);
        theta.row_mut(d).copy_from_slice(&th);
        let n = lengths.0 + rng.below(lengths.1 - lengths.0 + 1);
        tokens.push(
            (0..n)
                .map(|_| sample_categorical(beta.row(sample_categorical(&th, rng)), rng))
                .collect(),
        );
    }
    let vocab = (0..vocab_size).map(|v| format!("w{v:03}")).collect();
    Ok(PlantedCorpus {
        corpus: Corpus::from_tokens(vocab, tokens)?,
        beta,
        theta,
    })
}

/// `β = softmax(α ρ)` row-wise, with `α` of shape `[K, L]` and `ρ` of
/// shape `[L, V]`.
pub fn topics(rho: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    Ok(softmax_last(&alpha.matmul(rho)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbowConfig {
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            window: 2,
            epochs: 20,
            lr: 1e-2,
            batch: 256,
        }
    }
}

/// Context vectors `[V, L]` and word embeddings `ρ` `[L, V]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cbow {
    pub context: Tensor,
    pub rho: Tensor,
}

impl Cbow {
    /// `softmax(ρᵀ Σ_c α_c)` for the given context words.
    pub fn predict(&self, context: &[usize]) -> Result<Vec<f64>> {
        let l = self.rho.rows();
        let mut h = Tensor::zeros(&[1, l]);
        for &c in context {
            for (a, b) in h.data_mut().iter_mut().zip(self.context.row(c)) {
                *a += b;
            }
        }
        Ok(softmax_last(&h.matmul(&self.rho)?).into_data())
    }
}

/// Mean negative log-likelihood of `targets` given context count rows.
pub(crate) fn cbow_loss(tape: &mut Tape, context: Var, rho: Var, ctx_counts: &Tensor, targets: &Tensor) -> Result<Var> {
    let c = tape.constant(ctx_counts.clone());
    let h = tape.matmul(c, context)?;
    let logits = tape.matmul(h, rho)?;
    let lp = tape.log_softmax(logits)?;
    let t = tape.constant(targets.clone());
    let picked = tape.mul(lp, t)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / ctx_counts.rows() as f64)
}

/// Full-softmax CBOW fitted with Adam.
pub fn train_cbow(tokens: &[Vec<usize>], vocab_size: usize, dim: usize, cfg: &CbowConfig, rng: &mut Rng) -> Result<Cbow> {
    let longest = tokens.iter().map(Vec::len).max().unwrap_or(0);
    if cfg.window == 0 || cfg.window >= longest {
        return Err(Error::Config(format!(
            "CBOW window {} must be positive and shorter than the longest document ({longest} tokens)",
            cfg.window
        )));
    }
    if dim == 0 || cfg.batch == 0 {
        return Err(Error::Config("CBOW needs a positive dimension and batch".into()));
    }
    let mut examples: Vec<(usize, Vec<usize>)> = Vec::new();
    for doc in tokens {
        for (n, &w) in doc.iter().enumerate() {
            if w >= vocab_size {
                return Err(Error::Parse(format!("token id {w} outside vocabulary of {vocab_size}")));
            }
            let lo = n.saturating_sub(cfg.window);
            let hi = (n + cfg.window + 1).min(doc.len());
            let ctx: Vec<usize> = (lo..hi).filter(|&j| j != n).map(|j| doc[j]).collect();
            if !ctx.is_empty() {
                examples.push((w, ctx));
            }
        }
    }
    // Output embeddings start at zero as in word2vec, so directions never
    // touched by a context keep no initialization noise.
    let mut model = Cbow {
        context: rng.normal_tensor(&[vocab_size, dim]).scale(0.1),
        rho: Tensor::zeros(&[dim, vocab_size]),
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(adam, &[&model.context, &model.rho]);
    for _ in 0..cfg.epochs {
        let order = rng.permutation(examples.len());
        for idx in order.chunks(cfg.batch) {
            let mut ctx = Tensor::zeros(&[idx.len(), vocab_size]);
            let mut tgt = Tensor::zeros(&[idx.len(), vocab_size]);
            for (r, &e) in idx.iter().enumerate() {
                let (w, c) = &examples[e];
                tgt.row_mut(r)[*w] = 1.0;
                for &v in c {
                    ctx.row_mut(r)[v] += 1.0;
                }
            }
            let mut tape = Tape::new();
            let cv = tape.leaf(model.context.clone());
            let rv = tape.leaf(model.rho.clone());
            let loss = cbow_loss(&mut tape, cv, rv, &ctx, &tgt)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Numerical("CBOW loss is not finite".into()));
            }
            let g = tape.grad(loss)?;
            opt.step(&mut [&mut model.context, &mut model.rho], &[g.wrt(cv), g.wrt(rv)])?;
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtmModel {
    /// `[L, V]`
    pub rho: Tensor,
    /// `[K, L]`
    pub alpha: Tensor,
    pub encoder: Encoder,
    pub learn_rho: bool,
}

impl EtmModel {
    pub fn new(vocab_size: usize, topics: usize, dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let rho = rng.normal_tensor(&[dim, vocab_size]);
        Self::with_rho(rho, topics, hidden, true, rng)
    }

    pub fn with_rho(rho: Tensor, topics: usize, hidden: &[usize], learn_rho: bool, rng: &mut Rng) -> Result<Self> {
        if topics == 0 || rho.shape().len() != 2 {
            return Err(Error::Config("ETM needs K >= 1 and a 2-D embedding matrix".into()));
        }
        let dim = rho.rows();
        let alpha = rng.normal_tensor(&[topics, dim]).scale(1.0 / (dim as f64).sqrt());
        let encoder = Encoder::new(rho.cols(), hidden, topics, rng)?;
        Ok(EtmModel {
            rho,
            alpha,
            encoder,
            learn_rho,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.rho.cols()
    }

    pub fn topics(&self) -> Result<Tensor> {
        topics(&self.rho, &self.alpha)
    }

    /// `ρ`, `α`, then the inference network.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.rho, &self.alpha];
        p.extend(self.encoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.rho, &mut self.alpha];
        p.extend(self.encoder.params_mut());
        p
    }

    /// Variational mean of the topic proportions, `softmax(μ(w / N))`.
    pub fn theta_mean(&self, counts: &Tensor) -> Result<Tensor> {
        let q = self.encoder.encode(&normalize_rows(counts)?)?;
        Ok(softmax_last(&q.mean))
    }
}

fn normalize_rows(counts: &Tensor) -> Result<Tensor> {
    let v = counts.cols();
    let mut out = counts.clone();
    for row in out.data_mut().chunks_mut(v) {
        let n: f64 = row.iter().sum();
        if n <= 0.0 {
            return Err(Error::domain("empty document"));
        }
        row.iter_mut().for_each(|c| *c /= n);
    }
    Ok(out)
}

/// Reconstruction and KL per document, summed, on bound variables.
pub(crate) struct EtmTerms {
    pub elbo: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

pub(crate) fn etm_elbo_graph(
    tape: &mut Tape,
    rho: Var,
    alpha: Var,
    enc: &EncoderVars,
    counts: &Tensor,
    eps: &Tensor,
    scale: f64,
) -> Result<EtmTerms> {
    let x = tape.constant(normalize_rows(counts)?);
    let c = tape.constant(counts.clone());
    let (mu, var) = enc.encode(tape, x)?;
    let delta = reparameterize(tape, mu, var, eps)?;
    let theta = tape.softmax(delta)?;
    let logits = tape.matmul(alpha, rho)?;
    let beta = tape.softmax(logits)?;
    let p = tape.matmul(theta, beta)?;
    let lp = tape.log(p)?;
    let wl = tape.mul(c, lp)?;
    let reconstruction = tape.sum(wl)?;
    let kl_rows = gaussian_kl_rows(tape, mu, var)?;
    let kl = tape.sum(kl_rows)?;
    let diff = tape.sub(reconstruction, kl)?;
    let elbo = tape.scale(diff, scale)?;
    Ok(EtmTerms {
        elbo,
        reconstruction,
        kl,
    })
}

#[derive(Clone, Debug)]
pub struct EtmElbo {
    /// `(D / |B|) Σ_{d ∈ B} (reconstruction_d − KL_d)`.
    pub elbo: f64,
    /// Unscaled batch sums.
    pub reconstruction: f64,
    pub kl: f64,
    /// In [`EtmModel::params`] order; the `ρ` entry is zero when `ρ` is
    /// fixed.
    pub grads: Vec<Tensor>,
}

/// Minibatch ELBO with one reparameterized draw per document, given the
/// standard-normal noise `eps` (`[|B|, K]`).
pub fn etm_elbo(model: &EtmModel, corpus: &Corpus, batch: &[usize], eps: &Tensor) -> Result<EtmElbo> {
    if batch.is_empty() {
        return Err(Error::domain("ETM ELBO needs a nonempty batch"));
    }
    if corpus.vocab_size() != model.vocab_size() {
        return Err(Error::shape("etm_elbo", &[corpus.vocab_size()], &[model.vocab_size()]));
    }
    let counts = corpus.bow(batch);
    let scale = corpus.len() as f64 / batch.len() as f64;
    let mut tape = Tape::new();
    let rho = if model.learn_rho {
        tape.leaf(model.rho.clone())
    } else {
        tape.constant(model.rho.clone())
    };
    let alpha = tape.leaf(model.alpha.clone());
    let enc = model.encoder.bind(&mut tape, true);
    let terms = etm_elbo_graph(&mut tape, rho, alpha, &enc, &counts, eps, scale)?;
    let g = tape.grad(terms.elbo)?;
    let mut grads = vec![g.wrt(rho), g.wrt(alpha)];
    grads.extend(g.wrt_all(&enc.vars()));
    Ok(EtmElbo {
        elbo: tape.scalar(terms.elbo),
        reconstruction: tape.scalar(terms.reconstruction),
        kl: tape.scalar(terms.kl),
        grads,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoMode {
    /// Fit CBOW embeddings first and keep them fixed.
    Prefit,
    /// Learn the embeddings together with the topics.
    #[default]
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtmConfig {
    pub topics: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub rho_mode: RhoMode,
    pub cbow: CbowConfig,
}

impl Default for EtmConfig {
    fn default() -> Self {
        EtmConfig {
            topics: 3,
            embedding_dim: 16,
            hidden: vec![64, 64],
            epochs: 200,
            batch: 100,
            lr: 5e-3,
            rho_mode: RhoMode::Joint,
            cbow: CbowConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtmLogRow {
    pub epoch: usize,
    /// Mean per-document ELBO on the training documents.
    pub elbo: f64,
    /// Mean per-document ELBO on held-out documents, if any.
    pub heldout_elbo: Option<f64>,
    /// `exp(−reconstruction / words)` on the training documents.
    pub perplexity: f64,
    pub wallclock_s: f64,
}

pub fn etm_log_to_csv(rows: &[EtmLogRow]) -> String {
    let mut out = String::from("epoch,elbo,heldout_elbo,perplexity\n");
    for r in rows {
        let h = r.heldout_elbo.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.elbo, h, r.perplexity));
    }
    out
}

/// Mean per-document ELBO with noise from a fixed seed, so successive
/// evaluations share their randomness.
pub fn mean_elbo(model: &EtmModel, corpus: &Corpus, seed: u64) -> Result<f64> {
    let mut rng = Rng::seed(seed);
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(500) {
        let eps = rng.normal_tensor(&[chunk.len(), model.num_topics()]);
        let mut tape = Tape::new();
        let rho = tape.constant(model.rho.clone());
        let alpha = tape.constant(model.alpha.clone());
        let enc = model.encoder.bind(&mut tape, false);
        let terms = etm_elbo_graph(&mut tape, rho, alpha, &enc, &corpus.bow(chunk), &eps, 1.0)?;
        total += tape.scalar(terms.elbo);
    }
    Ok(total / corpus.len() as f64)
}

fn check_simplex(beta: &Tensor) -> Result<()> {
    for k in 0..beta.rows() {
        let s: f64 = beta.row(k).iter().sum();
        if (s - 1.0).abs() > 1e-10 || beta.row(k).iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Numerical(format!("topic {k} left the simplex (row sum {s})")));
        }
    }
    Ok(())
}

/// Adam ascent on the minibatch ELBO. In `prefit` mode the corpus must
/// carry token order for CBOW.
pub fn train_etm(
    corpus: &Corpus,
    heldout: Option<&Corpus>,
    cfg: &EtmConfig,
    rng: &mut Rng,
) -> Result<(EtmModel, Vec<EtmLogRow>)> {
    if corpus.is_empty() || cfg.batch == 0 || cfg.topics == 0 || cfg.embedding_dim == 0 {
        return Err(Error::Config("ETM needs documents, batch >= 1, topics >= 1, embedding_dim >= 1".into()));
    }
    if (0..corpus.len()).any(|d| corpus.doc_len(d) == 0) {
        return Err(Error::domain("empty document in training corpus"));
    }
    let v = corpus.vocab_size();
    let mut model = match cfg.rho_mode {
        RhoMode::Joint => EtmModel::new(v, cfg.topics, cfg.embedding_dim, &cfg.hidden, rng)?,
        RhoMode::Prefit => {
            let tokens = corpus
                .tokens
                .as_ref()
                .ok_or_else(|| Error::Config("prefit embeddings need token sequences".into()))?;
            let cbow = train_cbow(tokens, v, cfg.embedding_dim, &cfg.cbow, rng)?;
            EtmModel::with_rho(cbow.rho, cfg.topics, &cfg.hidden, false, rng)?
        }
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(adam, &model.params());
    let words = corpus.total_words() as f64;
    let eval_seed = rng.next_u64();
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(corpus.len());
        let (mut elbo_sum, mut recon_sum) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch) {
            let eps = rng.normal_tensor(&[idx.len(), cfg.topics]);
            let e = etm_elbo(&model, corpus, idx, &eps)?;
            if !e.elbo.is_finite() {
                return Err(Error::Numerical(format!("ETM ELBO is {} in epoch {epoch}", e.elbo)));
            }
            let descent: Vec<Tensor> = e.grads.iter().map(|g| g.scale(-1.0)).collect();
            opt.step(&mut model.params_mut(), &descent)?;
            check_simplex(&model.topics()?)?;
            elbo_sum += e.reconstruction - e.kl;
            recon_sum += e.reconstruction;
        }
        let heldout_elbo = match heldout {
            Some(h) if !h.is_empty() => Some(mean_elbo(&model, h, eval_seed)?),
            _ => None,
        };
        log.push(EtmLogRow {
            epoch,
            elbo: elbo_sum / corpus.len() as f64,
            heldout_elbo,
            perplexity: (-recon_sum / words).exp(),
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((model, log))
}

/// Indices of the `n` largest entries, ties broken by lower index.
pub fn top_words(row: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Normalized pointwise mutual information from document probabilities.
/// Pairs that never co-occur score −1; pairs present in every document
/// score 1.
pub fn npmi(p_ij: f64, p_i: f64, p_j: f64) -> f64 {
    if p_ij <= 0.0 {
        -1.0
    } else if p_ij >= 1.0 {
        1.0
    } else {
        (p_ij / (p_i * p_j)).ln() / -p_ij.ln()
    }
}

/// Average NPMI over all pairs of each topic's `top_n` words, averaged over
/// topics, with probabilities from document co-occurrence.
pub fn topic_coherence(beta: &Tensor, corpus: &Corpus, top_n: usize) -> Result<f64> {
    if top_n < 2 || top_n > beta.cols() || corpus.is_empty() {
        return Err(Error::Config(format!(
            "coherence needs 2 <= top_n <= V and a nonempty corpus (top_n = {top_n})"
        )));
    }
    let d = corpus.len() as f64;
    let sets: Vec<Vec<bool>> = {
        let mut s = vec![vec![false; corpus.len()]; corpus.vocab_size()];
        for (i, doc) in corpus.docs.iter().enumerate() {
            for &(id, _) in doc {
                s[id][i] = true;
            }
        }
        s
    };
    let df: Vec<f64> = sets.iter().map(|s| s.iter().filter(|&&b| b).count() as f64).collect();
    let mut total = 0.0;
    for k in 0..beta.rows() {
        let top = top_words(beta.row(k), top_n);
        let mut acc = 0.0;
        let mut pairs = 0;
        for a in 0..top.len() {
            for b in a + 1..top.len() {
                let (i, j) = (top[a], top[b]);
                let co = sets[i].iter().zip(&sets[j]).filter(|(x, y)| **x && **y).count() as f64;
                acc += npmi(co / d, df[i] / d, df[j] / d);
                pairs += 1;
            }
        }
        total += acc / pairs as f64;
    }
    Ok(total / beta.rows() as f64)
}

/// Fraction of unique words among the `top_n` words of all topics.
pub fn topic_diversity(beta: &Tensor, top_n: usize) -> Result<f64> {
    if top_n == 0 || top_n > beta.cols() {
        return Err(Error::Config(format!("diversity needs 1 <= top_n <= V (top_n = {top_n})")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..beta.rows() {
        seen.extend(top_words(beta.row(k), top_n));
    }
    Ok(seen.len() as f64 / (top_n * beta.rows()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicReport {
    pub top_words: Vec<Vec<String>>,
    pub coherence: f64,
    pub diversity: f64,
    /// `exp(TC · TD)`.
    pub quality: f64,
    /// `TC · TD`.
    pub quality_product: f64,
}

/// Coherence over the top 10 words, diversity over the top 25 (or `V` if
/// smaller), and the ten most likely words of each topic.
pub fn topic_report(beta: &Tensor, corpus: &Corpus) -> Result<TopicReport> {
    let v = beta.cols();
    let tc = topic_coherence(beta, corpus, 10.min(v))?;
    let td = topic_diversity(beta, 25.min(v))?;
    let top_words = (0..beta.rows())
        .map(|k| {
            top_words(beta.row(k), 10.min(v))
                .into_iter()
                .map(|i| corpus.vocab[i].clone())
                .collect()
        })
        .collect();
    Ok(TopicReport {
        top_words,
        coherence: tc,
        diversity: td,
        quality: (tc * td).exp(),
        quality_product: tc * td,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Completion {
    pub loglik_per_word: f64,
    pub perplexity: f64,
    pub scored_words: usize,
}

/// Scores the second half of each document under `θ` set to the variational
/// mean given the first half.
pub fn document_completion(model: &EtmModel, corpus: &Corpus) -> Result<Completion> {
    let beta = model.topics()?;
    let v = model.vocab_size();
    let (mut total, mut count) = (0.0, 0usize);
    for d in 0..corpus.len() {
        let tokens = corpus.doc_tokens(d);
        if tokens.len() < 2 {
            return Err(Error::domain(format!("document {d} has fewer than two words")));
        }
        let (first, second) = tokens.split_at(tokens.len() / 2);
        let mut counts = Tensor::zeros(&[1, v]);
        for &w in first {
            counts.data_mut()[w] += 1.0;
        }
        let theta = model.theta_mean(&counts)?;
        let pred = theta.matmul(&beta)?;
        for &w in second {
            total += pred.data()[w].ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::domain("no words to score"));
    }
    let mean = total / count as f64;
    Ok(Completion {
        loglik_per_word: mean,
        perplexity: (-mean).exp(),
        scored_words: count,
    })
}

/// Greedy one-to-one matching of learned to true topics by cosine
/// similarity. Returns `(learned, true, cosine)` triples.
pub fn greedy_topic_match(learned: &Tensor, truth: &Tensor) -> Vec<(usize, usize, f64)> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..learned.rows() {
        for j in 0..truth.rows() {
            cands.push((i, j, cos(learned.row(i), truth.row(j))));
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut used_l = vec![false; learned.rows()];
    let mut used_t = vec![false; truth.rows()];
    let mut out = Vec::new();
    for (i, j, c) in cands {
        if !used_l[i] && !used_t[j] {
            used_l[i] = true;
            used_t[j] = true;
            out.push((i, j, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn zero_topic_embedding_is_uniform() {
        let mut rng = Rng::seed(1);
        let rho = rng.normal_tensor(&[4, 7]);
        let beta = topics(&rho, &Tensor::zeros(&[2, 4])).unwrap();
        assert!(beta.data().iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn scaling_topic_embedding_sharpens() {
        let mut rng = Rng::seed(2);
        let rho = rng.normal_tensor(&[4, 9]);
        let alpha = rng.normal_tensor(&[1, 4]);
        let entropy = |b: &Tensor| -b.data().iter().map(|p| p * p.ln()).sum::<f64>();
        let b1 = topics(&rho, &alpha).unwrap();
        let b2 = topics(&rho, &alpha.scale(2.0)).unwrap();
        assert!(entropy(&b2) < entropy(&b1));
        let logits = alpha.matmul(&rho).unwrap();
        assert_eq!(top_words(b1.row(0), 1), top_words(logits.row(0), 1));
    }

    #[test]
    fn single_topic_reconstruction_is_count_weighted_log_beta() {
        let mut rng = Rng::seed(3);
        let corpus = Corpus::new(vocab(5), vec![vec![(0, 2), (3, 1)], vec![(1, 4), (4, 2)]]).unwrap();
        let model = EtmModel::new(5, 1, 3, &[6], &mut rng).unwrap();
        let eps = rng.normal_tensor(&[2, 1]);
        let e = etm_elbo(&model, &corpus, &[0, 1], &eps).unwrap();
        let beta = model.topics().unwrap();
        let expect: f64 = corpus
            .docs
            .iter()
            .flat_map(|d| d.iter().map(|&(id, c)| c as f64 * beta.data()[id].ln()))
            .sum();
        assert!((e.reconstruction - expect).abs() < 1e-12);
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let mut rng = Rng::seed(4);
        let corpus = Corpus::new(
            vocab(6),
            vec![
                vec![(0, 2), (1, 1)],
                vec![(2, 3), (5, 1)],
                vec![(1, 1), (3, 2), (4, 1)],
                vec![(0, 1), (5, 2)],
                vec![(4, 3)],
            ],
        )
        .unwrap();
        let model = EtmModel::new(6, 2, 3, &[4], &mut rng).unwrap();
        let eps = rng.normal_tensor(&[5, 2]);
        let counts = corpus.bow(&[0, 1, 2, 3, 4]);
        let inputs: Vec<Tensor> = model.params().into_iter().cloned().collect();
        let enc = model.encoder.clone();
        let err = check_gradients(
            |tape, vars| {
                let ev = encoder_vars_from(&enc, &vars[2..]);
                Ok(etm_elbo_graph(tape, vars[0], vars[1], &ev, &counts, &eps, 2.0)?.elbo)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    pub(crate) fn encoder_vars_from(enc: &Encoder, vars: &[Var]) -> EncoderVars {
        EncoderVars::from_vars(enc, vars.to_vec())
    }

    #[test]
    fn coherence_edge_cases() {
        assert_eq!(npmi(0.5, 0.5, 0.5), 1.0);
        assert!(npmi(0.25, 0.5, 0.5).abs() < 1e-15);
        assert_eq!(npmi(0.0, 0.3, 0.2), -1.0);
    }

    #[test]
    fn diversity_set_arithmetic() {
        let v = 60;
        let mut beta = Tensor::zeros(&[2, v]);
        for i in 0..25 {
            beta.row_mut(0)[i] = 100.0 - i as f64;
            beta.row_mut(1)[20 + i] = 100.0 - i as f64;
        }
        assert!((topic_diversity(&beta, 25).unwrap() - 0.9).abs() < 1e-15);
        let same = Tensor::from_rows(&[beta.row(0).to_vec(), beta.row(0).to_vec()]).unwrap();
        assert!((topic_diversity(&same, 25).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_topics_have_perplexity_v() {
        let mut rng = Rng::seed(5);
        let corpus = planted_corpus(2, 12, 10, (4, 9), &mut rng).unwrap().corpus;
        let mut model = EtmModel::new(12, 2, 3, &[5], &mut rng).unwrap();
        model.alpha = Tensor::zeros(&[2, 3]);
        let c = document_completion(&model, &corpus).unwrap();
        assert!((c.perplexity - 12.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_roundtrip() {
        let mut rng = Rng::seed(6);
        let corpus = planted_corpus(2, 10, 5, (3, 6), &mut rng).unwrap().corpus;
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        let back = Corpus::load(
            dir.path().join("vocab.txt"),
            Some(&dir.path().join("docs.txt")),
            Some(&dir.path().join("tokens.txt")),
        )
        .unwrap();
        assert_eq!(back, corpus);
        assert!(Corpus::new(vocab(3), vec![vec![(3, 1)]]).is_err());
    }

    #[test]
    fn window_must_fit_some_document() {
        let cfg = CbowConfig { window: 5, ..Default::default() };
        assert!(train_cbow(&[vec![0, 1, 2]], 3, 2, &cfg, &mut Rng::seed(7)).is_err());
    }
}
