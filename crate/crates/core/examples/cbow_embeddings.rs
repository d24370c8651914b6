//! Word embeddings with CBOW, then an ETM that keeps them fixed.

use dpgm::etm::{planted_corpus, train_cbow, train_etm, CbowConfig, EtmConfig, RhoMode};
use dpgm::Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(7);
    let planted = planted_corpus(3, 40, 800, (30, 60), &mut rng)?;
    let corpus = planted.corpus;
    let tokens: Vec<Vec<usize>> = (0..corpus.len()).map(|d| corpus.doc_tokens(d)).collect();
    let cbow = train_cbow(&tokens, corpus.vocab_size(), 8, &CbowConfig { epochs: 5, ..CbowConfig::default() }, &mut rng)?;

    // Words that share a dominant planted topic should sit closer together.
    let top = |k: usize| {
        let row = planted.beta.row(k);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|a, b| row[*b].total_cmp(&row[*a]));
        idx
    };
    let (a, b) = (top(0), top(1));
    let col = |w: usize| cbow.context.row(w).to_vec();
    println!("same topic:      cosine {:.3}", cosine(&col(a[0]), &col(a[1])));
    println!("different topic: cosine {:.3}", cosine(&col(a[0]), &col(b[0])));

    let cfg = EtmConfig { rho_mode: RhoMode::Prefit, embedding_dim: 8, epochs: 60, ..EtmConfig::default() };
    let (model, log) = train_etm(&corpus, None, &cfg, &mut rng)?;
    println!(
        "ETM with prefit embeddings: final ELBO {:.2}, rho learned: {}",
        log.last().map(|r| r.elbo).unwrap_or(f64::NAN),
        model.learn_rho
    );
    Ok(())
}
