//! Okapi BM25 lexical retrieval over rules, stored mistakes and past samples.
//!
//! Score of document D for query Q (query tokens counted with multiplicity):
//!
//! ```text
//! score(D, Q) = Σ_{q ∈ Q} IDF(q) · tf(q, D) · (k1 + 1) / (tf(q, D) + k1 · (1 − b + b · |D| / avgdl))
//! IDF(q)      = ln((N − df(q) + 0.5) / (df(q) + 0.5) + 1)
//! ```
//!
//! The `+ 1` inside the logarithm keeps IDF non-negative for terms present in
//! most documents.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::store::{MistakeCollection, MistakeEntry, Rule, RuleCollection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Document<Id> {
    id: Id,
    len: usize,
    term_freq: HashMap<String, u32>,
}

/// An in-memory BM25 index. Documents keep their insertion order, which is
/// the tie-break for equal scores.
#[derive(Debug, Clone)]
pub struct Corpus<Id> {
    docs: Vec<Document<Id>>,
    doc_freq: HashMap<String, u32>,
    total_len: usize,
    params: Bm25Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored<Id> {
    pub id: Id,
    pub score: f64,
}

impl<Id: Clone> Default for Corpus<Id> {
    fn default() -> Self {
        Self::new(Bm25Params::default())
    }
}

impl<Id: Clone> Corpus<Id> {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            docs: Vec::new(),
            doc_freq: HashMap::new(),
            total_len: 0,
            params,
        }
    }

    pub fn from_texts<'a>(items: impl IntoIterator<Item = (Id, &'a str)>) -> Self {
        let mut corpus = Self::default();
        for (id, text) in items {
            corpus.add(id, text);
        }
        corpus
    }

    pub fn add(&mut self, id: Id, text: &str) {
        self.add_tokens(id, tokenize(text));
    }

    pub fn add_tokens(&mut self, id: Id, tokens: Vec<String>) {
        let mut term_freq: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *term_freq.entry(t.clone()).or_default() += 1;
        }
        for term in term_freq.keys() {
            *self.doc_freq.entry(term.clone()).or_default() += 1;
        }
        self.total_len += tokens.len();
        self.docs.push(Document {
            id,
            len: tokens.len(),
            term_freq,
        });
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_doc(&self, doc: &Document<Id>, query: &[String], idf: &[f64], avgdl: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let length_ratio = if avgdl > 0.0 {
            doc.len as f64 / avgdl
        } else {
            1.0
        };
        query
            .iter()
            .zip(idf)
            .map(|(term, idf)| match doc.term_freq.get(term) {
                Some(&tf) => {
                    let tf = tf as f64;
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length_ratio))
                }
                None => 0.0,
            })
            .sum()
    }

    /// Scores every document, in insertion order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let query = tokenize(query);
        let idf: Vec<f64> = query.iter().map(|t| self.idf(t)).collect();
        let avgdl = self.avgdl();
        self.docs
            .iter()
            .map(|d| self.score_doc(d, &query, &idf, avgdl))
            .collect()
    }

    /// The `k` best documents by descending score, ties by insertion order.
    /// Zero-score documents fill the result when fewer than `k` match.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<Scored<Id>> {
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(k)
            .map(|i| Scored {
                id: self.docs[i].id.clone(),
                score: scores[i],
            })
            .collect()
    }

    /// Like [`Corpus::top_k`] but drops documents with zero score.
    pub fn top_k_positive(&self, query: &str, k: usize) -> Vec<Scored<Id>> {
        let mut hits = self.top_k(query, k);
        hits.retain(|s| s.score > 0.0);
        hits
    }
}

/// Top-`k` rules for `query`; rules with no lexical overlap are excluded.
pub fn retrieve_rules<'a>(rules: &'a RuleCollection, query: &str, k: usize) -> Vec<&'a Rule> {
    let corpus = Corpus::from_texts(rules.iter().map(|r| (r.id, r.text.as_str())));
    corpus
        .top_k_positive(query, k)
        .into_iter()
        .filter_map(|s| rules.get(s.id))
        .collect()
}

/// Top-`m` stored mistakes for `query`, skipping entries recorded at
/// `exclude_step` (the mistake currently being processed).
pub fn retrieve_mistakes<'a>(
    mistakes: &'a MistakeCollection,
    query: &str,
    m: usize,
    exclude_step: Option<u64>,
) -> Vec<&'a MistakeEntry> {
    let entries = mistakes.entries();
    let corpus = Corpus::from_texts(
        entries
            .iter()
            .enumerate()
            .filter(|(_, e)| Some(e.step) != exclude_step)
            .map(|(i, e)| (i, e.document.as_str())),
    );
    corpus
        .top_k_positive(query, m)
        .into_iter()
        .map(|s| &entries[s.id])
        .collect()
}
