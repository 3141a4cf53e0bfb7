//! Corpus-level captioning metrics: BLEU-1..4, ROUGE-L, CIDEr-D and an
//! exact-match-only METEOR variant.
//!
//! Items are scored in `video_id` order so results do not depend on the
//! order in which the corpus was assembled.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use crate::error::{Result, V2cError};

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub video_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    items: Vec<CorpusItem>,
}

impl Corpus {
    /// Validates and lowercases; items are kept sorted by id.
    pub fn new(mut items: Vec<CorpusItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(V2cError::Usage("corpus has no items".into()));
        }
        let mut ids = HashSet::new();
        for item in &mut items {
            if item.references.is_empty() {
                return Err(V2cError::Usage(format!("item `{}` has no reference", item.video_id)));
            }
            if !ids.insert(item.video_id.clone()) {
                return Err(V2cError::Usage(format!("duplicate corpus item `{}`", item.video_id)));
            }
            lowercase(&mut item.candidate);
            item.references.iter_mut().for_each(|r| lowercase(r));
        }
        items.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Ok(Corpus { items })
    }

    /// Convenience constructor from whitespace-separated strings.
    pub fn from_strs(items: &[(&str, &str, &[&str])]) -> Result<Self> {
        let tok = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        Corpus::new(
            items
                .iter()
                .map(|(id, cand, refs)| CorpusItem {
                    video_id: (*id).to_owned(),
                    candidate: tok(cand),
                    references: refs.iter().map(|r| tok(r)).collect(),
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn lowercase(tokens: &mut [String]) {
    tokens.iter_mut().for_each(|t| *t = t.to_lowercase());
}

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Ngram<'_>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// BLEU

/// Corpus BLEU for orders `1..=max_n`, no smoothing.
pub fn bleu(corpus: &Corpus, max_n: usize) -> Vec<f64> {
    let mut clipped = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for item in corpus.items() {
        let c = item.candidate.len();
        cand_len += c;
        ref_len += closest_ref_len(c, &item.references);
        for n in 1..=max_n {
            let cand = ngram_counts(&item.candidate, n);
            let mut max_ref: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
            for r in &item.references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            clipped[n - 1] += cand.iter().map(|(g, &k)| k.min(*max_ref.get(g).unwrap_or(&0))).sum::<usize>();
            total[n - 1] += c.saturating_sub(n - 1);
        }
    }

    if cand_len == 0 {
        return vec![0.0; max_n];
    }
    let bp = if cand_len < ref_len { (1.0 - ref_len as f64 / cand_len as f64).exp() } else { 1.0 };
    let mut log_sum = 0.0;
    let mut zero = false;
    (1..=max_n)
        .map(|k| {
            let p = if total[k - 1] == 0 { 0.0 } else { clipped[k - 1] as f64 / total[k - 1] as f64 };
            if p == 0.0 {
                zero = true;
            } else {
                log_sum += p.ln();
            }
            if zero {
                0.0
            } else {
                bp * (log_sum / k as f64).exp()
            }
        })
        .collect()
}

/// Reference length closest to `c`; the shorter one on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(c), r)).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// ROUGE-L

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(cand: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(cand, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over items of the best per-reference LCS F-measure (β = 1.2).
pub fn rouge_l(corpus: &Corpus) -> f64 {
    mean(corpus.items().iter().map(|it| it.references.iter().map(|r| rouge_l_pair(&it.candidate, r)).fold(0.0, f64::max)))
}

// ---------------------------------------------------------------------------
// METEOR (exact match only)

/// Alignment statistics for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeteorAlignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Leftmost-greedy exact-match unigram alignment.
pub fn meteor_align(cand: &[String], reference: &[String]) -> MeteorAlignment {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, tok) in cand.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && &reference[j] == tok) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    let chunks = pairs.iter().enumerate().filter(|&(k, &(i, j))| k == 0 || !(pairs[k - 1].0 + 1 == i && pairs[k - 1].1 + 1 == j)).count();
    MeteorAlignment { matches: pairs.len(), chunks }
}

pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let MeteorAlignment { matches, chunks } = meteor_align(cand, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// METEOR restricted to exact unigram matches; best reference per item.
pub fn meteor_exact(corpus: &Corpus) -> f64 {
    mean(corpus.items().iter().map(|it| it.references.iter().map(|r| meteor_pair(&it.candidate, r)).fold(0.0, f64::max)))
}

// ---------------------------------------------------------------------------
// CIDEr-D

struct TfIdf<'a> {
    vecs: Vec<BTreeMap<Ngram<'a>, f64>>,
    norms: Vec<f64>,
    length: usize,
}

fn tfidf<'a>(tokens: &'a [String], df: &BTreeMap<Ngram<'a>, usize>, log_docs: f64) -> TfIdf<'a> {
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for n in 1..=CIDER_MAX_N {
        let v: BTreeMap<Ngram<'a>, f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = (*df.get(g).unwrap_or(&0)).max(1) as f64;
                (g, tf as f64 * (log_docs - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf { vecs, norms, length: tokens.len() }
}

fn cider_sim(hyp: &TfIdf<'_>, reference: &TfIdf<'_>) -> f64 {
    let delta = hyp.length as f64 - reference.length as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut val: f64 = hyp.vecs[n]
            .iter()
            .map(|(g, &h)| {
                let r = *reference.vecs[n].get(g).unwrap_or(&0.0);
                h.min(r) * r
            })
            .sum();
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            val /= hyp.norms[n] * reference.norms[n];
        }
        total += val * penalty;
    }
    total / CIDER_MAX_N as f64
}

/// CIDEr-D (σ = 6, clipped tf-idf, ×10), document frequencies taken over
/// the reference sets of the corpus.
pub fn cider(corpus: &Corpus) -> f64 {
    let mut df: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
    for item in corpus.items() {
        let mut seen: BTreeSet<Ngram<'_>> = BTreeSet::new();
        for r in &item.references {
            for n in 1..=CIDER_MAX_N {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (corpus.len() as f64).ln();
    mean(corpus.items().iter().map(|item| {
        let hyp = tfidf(&item.candidate, &df, log_docs);
        let sum: f64 = item.references.iter().map(|r| cider_sim(&hyp, &tfidf(r, &df, log_docs))).sum();
        10.0 * sum / item.references.len() as f64
    }))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub meteor_exact: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub items: usize,
    pub warnings: Vec<String>,
}

pub fn evaluate(corpus: &Corpus) -> EvalReport {
    let b = bleu(corpus, 4);
    let mut warnings = Vec::new();
    if corpus.len() < 2 {
        warnings.push("CIDEr is degenerate on a single-item corpus (every idf is zero)".to_owned());
    }
    EvalReport {
        bleu: [b[0], b[1], b[2], b[3]],
        meteor_exact: meteor_exact(corpus),
        rouge_l: rouge_l(corpus),
        cider: cider(corpus),
        items: corpus.len(),
        warnings,
    }
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("Bleu_1", self.bleu[0]),
            ("Bleu_2", self.bleu[1]),
            ("Bleu_3", self.bleu[2]),
            ("Bleu_4", self.bleu[3]),
            ("METEOR_exact", self.meteor_exact),
            ("ROUGE_L", self.rouge_l),
            ("CIDEr", self.cider),
        ]
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# items\t{}", self.items)?;
        writeln!(f, "# METEOR_exact is the exact-match-only METEOR variant (no stemming, no synonyms)")?;
        for w in &self.warnings {
            writeln!(f, "# warning: {w}")?;
        }
        for (name, value) in self.rows() {
            writeln!(f, "{name}\t{value:.3}")?;
        }
        Ok(())
    }
}
