//! Word-frequency distributions and Jensen–Shannon divergence between domain corpora.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::DomainId;
use crate::stats::KahanSum;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("corpus {0} has no tokens after filtering")]
    EmptyAfterFiltering(DomainId),
    #[error("distributions are defined over different supports")]
    SupportMismatch,
    #[error("need at least 2 corpora, got {0}")]
    TooFewCorpora(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DivergenceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub domain: DomainId,
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "e")]
    E,
}

impl LogBase {
    fn ln_scale(self) -> f64 {
        match self {
            LogBase::Two => std::f64::consts::LN_2,
            LogBase::E => 1.0,
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "2" => Ok(LogBase::Two),
            "e" => Ok(LogBase::E),
            other => Err(format!("unknown log base `{other}` (2, e)")),
        }
    }
}

/// The bundled English stopword list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(BUNDLED_STOPWORDS)
}

/// One word per line; blank lines ignored, words lowercased.
pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub top_k: usize,
    pub stopwords: BTreeSet<String>,
    pub min_token_length: usize,
    pub log_base: LogBase,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self { top_k: 10_000, stopwords: default_stopwords(), min_token_length: 1, log_base: LogBase::Two }
    }
}

impl DivergenceConfig {
    fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(DivergenceError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.min_token_length == 0 {
            return Err(DivergenceError::InvalidConfig("min_token_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Lowercased maximal alphanumeric runs of at least `min_len` characters.
pub fn tokenize(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().count() >= min_len)
        .map(str::to_lowercase)
        .collect()
}

/// Stopword-filtered token counts of one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct WordCounts {
    pub domain: DomainId,
    pub counts: BTreeMap<String, u64>,
}

pub fn word_counts(corpus: &Corpus, cfg: &DivergenceConfig) -> Result<WordCounts> {
    cfg.validate()?;
    let mut counts = BTreeMap::new();
    for doc in &corpus.documents {
        for tok in tokenize(doc, cfg.min_token_length) {
            if !cfg.stopwords.contains(&tok) {
                *counts.entry(tok).or_insert(0u64) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(DivergenceError::EmptyAfterFiltering(corpus.domain.clone()));
    }
    Ok(WordCounts { domain: corpus.domain.clone(), counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub support: Vec<String>,
    pub probs: Vec<f64>,
}

fn restrict(wc: &WordCounts, support: &[String]) -> Result<TokenDistribution> {
    let raw: Vec<u64> = support.iter().map(|w| wc.counts.get(w).copied().unwrap_or(0)).collect();
    let total: u64 = raw.iter().sum();
    if total == 0 {
        return Err(DivergenceError::EmptyAfterFiltering(wc.domain.clone()));
    }
    Ok(TokenDistribution {
        support: support.to_vec(),
        probs: raw.iter().map(|&c| c as f64 / total as f64).collect(),
    })
}

/// Shared top-k support by combined frequency (ties lexicographic), then per-corpus renormalization.
pub fn pair_distributions_from_counts(
    a: &WordCounts,
    b: &WordCounts,
    top_k: usize,
) -> Result<(TokenDistribution, TokenDistribution)> {
    let mut combined: BTreeMap<&str, u64> = BTreeMap::new();
    for (w, c) in a.counts.iter().chain(&b.counts) {
        *combined.entry(w.as_str()).or_insert(0) += c;
    }
    let mut ranked: Vec<(&str, u64)> = combined.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    ranked.truncate(top_k);
    let support: Vec<String> = ranked.into_iter().map(|(w, _)| w.to_owned()).collect();
    Ok((restrict(a, &support)?, restrict(b, &support)?))
}

pub fn pair_distributions(
    a: &Corpus,
    b: &Corpus,
    cfg: &DivergenceConfig,
) -> Result<(TokenDistribution, TokenDistribution)> {
    pair_distributions_from_counts(&word_counts(a, cfg)?, &word_counts(b, cfg)?, cfg.top_k)
}

/// `JSD(P, Q) = KL(P || M)/2 + KL(Q || M)/2` with `M = (P + Q)/2`; zero-probability terms vanish.
pub fn js_divergence(p: &TokenDistribution, q: &TokenDistribution, base: LogBase) -> Result<f64> {
    if p.support != q.support || p.probs.len() != q.probs.len() {
        return Err(DivergenceError::SupportMismatch);
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let acc: KahanSum = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pi, &qi)| {
            let m = (pi + qi) / 2.0;
            term(pi, m) + term(qi, m)
        })
        .collect();
    let jsd = 0.5 * acc.value() / base.ln_scale();
    Ok(jsd.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub pair: (DomainId, DomainId),
    pub jsd: f64,
    pub vocab_size_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair: (DomainId, DomainId),
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMatrix {
    pub log_base: LogBase,
    pub top_k: usize,
    pub results: Vec<DivergenceResult>,
    pub failures: Vec<PairFailure>,
}

impl DivergenceMatrix {
    pub fn as_map(&self) -> BTreeMap<(DomainId, DomainId), f64> {
        self.results.iter().map(|r| (r.pair.clone(), r.jsd)).collect()
    }

    pub fn get(&self, a: &DomainId, b: &DomainId) -> Option<&DivergenceResult> {
        self.results
            .iter()
            .find(|r| (&r.pair.0 == a && &r.pair.1 == b) || (&r.pair.0 == b && &r.pair.1 == a))
    }
}

/// JSD for every unordered pair of corpora, keyed in corpus order.
///
/// Per-pair failures (for example a corpus with no mass on the pair's support)
/// are collected instead of aborting the whole matrix.
pub fn divergence_matrix(corpora: &[Corpus], cfg: &DivergenceConfig) -> Result<DivergenceMatrix> {
    if corpora.len() < 2 {
        return Err(DivergenceError::TooFewCorpora(corpora.len()));
    }
    cfg.validate()?;
    let counts: Vec<std::result::Result<WordCounts, DivergenceError>> =
        corpora.iter().map(|c| word_counts(c, cfg)).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for i in 0..corpora.len() {
        for j in i + 1..corpora.len() {
            let pair = (corpora[i].domain.clone(), corpora[j].domain.clone());
            let outcome = match (&counts[i], &counts[j]) {
                (Ok(a), Ok(b)) => pair_distributions_from_counts(a, b, cfg.top_k).and_then(|(p, q)| {
                    let jsd = js_divergence(&p, &q, cfg.log_base)?;
                    Ok(DivergenceResult { pair: pair.clone(), jsd, vocab_size_used: p.support.len() })
                }),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => failures.push(PairFailure { pair, error: e.to_string() }),
            }
        }
    }
    Ok(DivergenceMatrix { log_base: cfg.log_base, top_k: cfg.top_k, results, failures })
}
