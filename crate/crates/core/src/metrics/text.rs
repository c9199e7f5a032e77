use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{check_len, MetricsError};

/// Floor applied to n-gram match counts and totals so short answers do not
/// zero out higher-order BLEU.
pub const BLEU_EPSILON: f64 = 1e-9;
/// Recall weight of the ROUGE-L F-measure.
pub const ROUGE_BETA: f64 = 1.2;
/// Width of the CIDEr-D length penalty.
pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

/// Lowercases, splits on whitespace, and splits every ASCII punctuation
/// character into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

type Counts = BTreeMap<Vec<String>, usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts {
    let mut counts = Counts::new();
    for w in tokens.windows(n) {
        *counts.entry(w.to_vec()).or_default() += 1;
    }
    counts
}

fn tokenize_nonempty(text: &str, what: &'static str) -> Result<Vec<String>, MetricsError> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(MetricsError::Empty(what));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuScores {
    /// BLEU-1 through BLEU-4.
    pub per_n: [f64; MAX_N],
    /// Arithmetic mean of `per_n`.
    pub aggregate: f64,
}

/// Clipped matches and candidate totals per order, plus lengths.
#[derive(Debug, Default, Clone, Copy)]
struct BleuStats {
    matches: [f64; MAX_N],
    totals: [f64; MAX_N],
    cand_len: f64,
    ref_len: f64,
}

fn bleu_stats(cand: &[String], refs: &[Vec<String>]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: cand.len() as f64,
        ..Default::default()
    };
    // closest reference length, shorter one on ties
    s.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand.len()), r))
        .unwrap_or(0) as f64;
    for n in 1..=MAX_N {
        let mut max_ref = Counts::new();
        for r in refs {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_default();
                *e = (*e).max(c);
            }
        }
        let cand_counts = ngrams(cand, n);
        let matched: usize = cand_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        s.matches[n - 1] = matched as f64;
        s.totals[n - 1] = cand_counts.values().sum::<usize>() as f64;
    }
    s
}

fn bleu_from_stats(s: &BleuStats) -> BleuScores {
    let bp = if s.cand_len > s.ref_len {
        1.0
    } else {
        (1.0 - s.ref_len / s.cand_len).exp()
    };
    let mut per_n = [0.0; MAX_N];
    let mut log_sum = 0.0;
    for n in 0..MAX_N {
        let p = s.matches[n].max(BLEU_EPSILON) / s.totals[n].max(BLEU_EPSILON);
        log_sum += p.ln();
        per_n[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    BleuScores {
        per_n,
        aggregate: per_n.iter().sum::<f64>() / MAX_N as f64,
    }
}

fn tokenize_refs(references: &[String]) -> Result<Vec<Vec<String>>, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::Empty("reference list"));
    }
    references
        .iter()
        .map(|r| tokenize_nonempty(r, "reference"))
        .collect()
}

/// Sentence-level BLEU-1..4 with clipping and brevity penalty.
pub fn bleu(candidate: &str, references: &[String]) -> Result<BleuScores, MetricsError> {
    let cand = tokenize_nonempty(candidate, "candidate")?;
    let refs = tokenize_refs(references)?;
    Ok(bleu_from_stats(&bleu_stats(&cand, &refs)))
}

/// Corpus-level BLEU: counts and lengths are summed over the corpus before
/// the precisions and brevity penalty are formed.
pub fn corpus_bleu(candidates: &[String], references: &[Vec<String>]) -> Result<BleuScores, MetricsError> {
    check_len(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(MetricsError::Empty("corpus"));
    }
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        let s = bleu_stats(&tokenize_nonempty(c, "candidate")?, &tokenize_refs(r)?);
        for n in 0..MAX_N {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.cand_len += s.cand_len;
        total.ref_len += s.ref_len;
    }
    Ok(bleu_from_stats(&total))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS-based F-measure, best over the references.
pub fn rouge_l(candidate: &str, references: &[String]) -> Result<f64, MetricsError> {
    let cand = tokenize_nonempty(candidate, "candidate")?;
    let refs = tokenize_refs(references)?;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(refs
        .iter()
        .map(|r| {
            let lcs = lcs_len(&cand, r) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / cand.len() as f64;
            let rec = lcs / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiderScores {
    /// Corpus mean of the per-sample scores.
    pub raw: f64,
    /// `log10(raw + 1)`.
    pub rescaled: f64,
    pub per_sample: Vec<f64>,
}

pub fn rescale_cider(raw: f64) -> f64 {
    (raw + 1.0).log10()
}

struct TfIdf {
    vecs: Vec<BTreeMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    /// Bigram count, which is what the reference toolkit uses as length.
    length: f64,
}

/// CIDEr-D: TF-IDF n-gram vectors with clipped cosine similarity, a Gaussian
/// penalty on the length gap, averaged over orders and references, times 10.
pub fn cider(candidates: &[String], references: &[Vec<String>]) -> Result<CiderScores, MetricsError> {
    check_len(candidates.len(), references.len())?;
    if candidates.len() < 2 {
        return Err(MetricsError::CorpusTooSmall(candidates.len()));
    }
    let cands: Vec<Vec<String>> = candidates
        .iter()
        .map(|c| tokenize_nonempty(c, "candidate"))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|r| tokenize_refs(r))
        .collect::<Result<_, _>>()?;

    // document frequency: number of samples whose references contain the n-gram
    let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for sample in &refs {
        let mut seen = BTreeSet::new();
        for r in sample {
            for n in 1..=MAX_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_default() += 1.0;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let vectorize = |tokens: &[String]| {
        let mut vecs = Vec::with_capacity(MAX_N);
        let mut norms = Vec::with_capacity(MAX_N);
        for n in 1..=MAX_N {
            let v: BTreeMap<Vec<String>, f64> = ngrams(tokens, n)
                .into_iter()
                .map(|(g, tf)| {
                    let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                    let w = tf as f64 * (log_n - d.ln());
                    (g, w)
                })
                .collect();
            norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
            vecs.push(v);
        }
        TfIdf {
            vecs,
            norms,
            length: tokens.len().saturating_sub(1) as f64,
        }
    };

    let mut per_sample = Vec::with_capacity(cands.len());
    for (c, rs) in cands.iter().zip(&refs) {
        let hv = vectorize(c);
        let mut total = 0.0;
        for r in rs {
            let rv = vectorize(r);
            let delta = hv.length - rv.length;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut score = 0.0;
            for n in 0..MAX_N {
                let mut val: f64 = hv.vecs[n]
                    .iter()
                    .map(|(g, &h)| {
                        let r = rv.vecs[n].get(g).copied().unwrap_or(0.0);
                        h.min(r) * r
                    })
                    .sum();
                if hv.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                    val /= hv.norms[n] * rv.norms[n];
                }
                score += val * penalty;
            }
            total += score / MAX_N as f64;
        }
        per_sample.push(10.0 * total / rs.len() as f64);
    }
    let raw = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScores {
        raw,
        rescaled: rescale_cider(raw),
        per_sample,
    })
}

/// Distinct n-grams over total n-grams across the whole corpus.
pub fn ngram_diversity(corpus: &[String], n: usize) -> Result<f64, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::Empty("corpus"));
    }
    if n == 0 {
        return Err(MetricsError::NoNgrams(0));
    }
    let mut distinct = BTreeSet::new();
    let mut total = 0usize;
    for s in corpus {
        for (g, c) in ngrams(&tokenize(s), n) {
            total += c;
            distinct.insert(g);
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams(n));
    }
    Ok(distinct.len() as f64 / total as f64)
}
