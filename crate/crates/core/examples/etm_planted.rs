//! Embedded topic model on a synthetic corpus with known topics: trains
//! jointly, matches learned topics to the planted ones and prints
//! coherence, diversity and document-completion perplexity.

use dpgm::etm::{
    document_completion, greedy_topic_match, planted_corpus, topic_report, train_etm, EtmConfig,
};
use dpgm::Rng;

fn main() -> dpgm::Result<()> {
    let mut rng = Rng::seed(6);
    let planted = planted_corpus(4, 60, 600, (40, 80), &mut rng)?;
    let (train, test) = planted.corpus.split(0.1, &mut rng);
    let cfg = EtmConfig { topics: 4, epochs: 150, ..EtmConfig::default() };
    let (model, log) = train_etm(&train, Some(&test), &cfg, &mut rng)?;
    if let Some(last) = log.last() {
        println!("final ELBO {:.2}, held-out perplexity {:.2}", last.elbo, last.perplexity);
    }

    let beta = model.topics()?;
    for (learned, truth, cos) in greedy_topic_match(&beta, &planted.beta) {
        println!("learned topic {learned} ~ planted topic {truth}  cosine {cos:.4}");
    }
    let report = topic_report(&beta, &planted.corpus)?;
    for (k, words) in report.top_words.iter().enumerate() {
        println!("topic {k}: {}", words.join(" "));
    }
    let completion = document_completion(&model, &test)?;
    println!(
        "TC {:.3}  TD {:.3}  completion perplexity {:.2} (vocabulary {})",
        report.coherence,
        report.diversity,
        completion.perplexity,
        train.vocab_size()
    );
    Ok(())
}
