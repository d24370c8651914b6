//! Trains an ETM on a corpus from disk or a planted synthetic corpus and
//! reports topic quality and document completion.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::etm::{
    document_completion, greedy_topic_match, planted_corpus, topic_report, train_etm, Completion, Corpus, EtmConfig,
    EtmLogRow, EtmModel, TopicReport,
};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub vocab: PathBuf,
    pub docs: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub topics: usize,
    pub vocab: usize,
    pub docs: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            topics: 3,
            vocab: 50,
            docs: 500,
            min_len: 40,
            max_len: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtmRunConfig {
    #[serde(flatten)]
    pub etm: EtmConfig,
    /// Corpus files; the planted corpus is used when absent.
    pub corpus: Option<CorpusPaths>,
    pub planted: PlantedConfig,
    pub test_fraction: f64,
    /// Documents shorter than this are dropped before splitting.
    pub min_doc_len: u32,
}

impl Default for EtmRunConfig {
    fn default() -> Self {
        EtmRunConfig {
            etm: EtmConfig::default(),
            corpus: None,
            planted: PlantedConfig::default(),
            test_fraction: 0.1,
            min_doc_len: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantedMatch {
    pub learned: usize,
    pub planted: usize,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtmRunReport {
    #[serde(flatten)]
    pub topics: TopicReport,
    pub completion: Completion,
    pub train_docs: usize,
    pub test_docs: usize,
    /// Matching against the planted topics, when the corpus is synthetic.
    pub planted_match: Option<Vec<PlantedMatch>>,
    pub planted_mean_cosine: Option<f64>,
}

pub fn run_etm(cfg: &EtmRunConfig, seed: u64) -> Result<(EtmModel, EtmRunReport, Vec<EtmLogRow>)> {
    let mut rng = Rng::seed(seed);
    let (corpus, planted_beta) = match &cfg.corpus {
        Some(p) => (Corpus::load(&p.vocab, p.docs.as_deref(), p.tokens.as_deref())?, None),
        None => {
            let pc = &cfg.planted;
            let planted = planted_corpus(pc.topics, pc.vocab, pc.docs, (pc.min_len, pc.max_len), &mut rng)?;
            (planted.corpus, Some(planted.beta))
        }
    };
    let corpus = corpus.without_short_docs(cfg.min_doc_len.max(2));
    let (train, test) = corpus.split(cfg.test_fraction, &mut rng);
    let heldout = (!test.is_empty()).then_some(&test);
    let (model, log) = train_etm(&train, heldout, &cfg.etm, &mut rng)?;
    let beta = model.topics()?;
    let topics = topic_report(&beta, &corpus)?;
    let completion = document_completion(&model, if test.is_empty() { &train } else { &test })?;
    let planted_match = planted_beta.as_ref().map(|b| {
        greedy_topic_match(&beta, b)
            .into_iter()
            .map(|(learned, planted, cosine)| PlantedMatch {
                learned,
                planted,
                cosine,
            })
            .collect::<Vec<_>>()
    });
    let planted_mean_cosine = planted_match
        .as_ref()
        .map(|m| m.iter().map(|p| p.cosine).sum::<f64>() / m.len() as f64);
    Ok((
        model,
        EtmRunReport {
            topics,
            completion,
            train_docs: train.len(),
            test_docs: test.len(),
            planted_match,
            planted_mean_cosine,
        },
        log,
    ))
}
