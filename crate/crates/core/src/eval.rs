//! ROUGE, abstractiveness, repetition and saliency metrics.
//!
//! Texts are lowercased and split on whitespace; there is no stemming or
//! stopword removal, so scores follow the ROUGE definitions but are not
//! byte-identical to the Perl package.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Lowercase whitespace tokenization.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hit: usize, cand: usize, refn: usize) -> Self {
        let p = if cand == 0 { 0.0 } else { hit as f64 / cand as f64 };
        let r = if refn == 0 { 0.0 } else { hit as f64 / refn as f64 };
        // 2PR/(P+R) reduced to counts, so simple cases come out exact
        let f1 = if hit == 0 { 0.0 } else { 2.0 * hit as f64 / (cand + refn) as f64 };
        Prf { p, r, f1 }
    }
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> Vec<Vec<&str>> {
    if n == 0 || toks.len() < n {
        return Vec::new();
    }
    toks.windows(n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
        .collect()
}

fn counts<'a>(grams: &'a [Vec<&'a str>]) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    for g in grams {
        *m.entry(g.as_slice()).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> Prf {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let rc = counts(&r);
    let hit: usize = counts(&c)
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(hit, c.len(), r.len())
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Prf {
    Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}

/// Position-wise matches over the longer of the two sequences, so missing
/// and extra tokens both count as errors. Returns `(matches, denominator)`.
pub fn token_matches<T: PartialEq>(hyp: &[T], reference: &[T]) -> (usize, usize) {
    let hit = hyp.iter().zip(reference).filter(|(a, b)| a == b).count();
    (hit, hyp.len().max(reference.len()))
}

/// Percentage of summary n-grams (counted per occurrence) absent from the
/// source. `None` when the summary has fewer than `n` tokens.
pub fn novel_ngram_pct<S: AsRef<str>>(summary: &[S], source: &[S], n: usize) -> Option<f64> {
    let s = ngrams(summary, n);
    if s.is_empty() {
        return None;
    }
    let src = ngrams(source, n);
    let src: HashSet<&[&str]> = src.iter().map(Vec::as_slice).collect();
    let novel = s.iter().filter(|g| !src.contains(g.as_slice())).count();
    Some(100.0 * novel as f64 / s.len() as f64)
}

/// Fraction of n-gram occurrences whose n-gram occurs more than once.
pub fn repetition_rate<S: AsRef<str>>(text: &[S], n: usize) -> f64 {
    let g = ngrams(text, n);
    if g.is_empty() {
        return 0.0;
    }
    let c = counts(&g);
    let rep = g.iter().filter(|x| c[x.as_slice()] > 1).count();
    rep as f64 / g.len() as f64
}

/// Percentage of distinct keywords present in the candidate (type level,
/// case-insensitive). `None` for an empty keyword list.
pub fn saliency_match<S: AsRef<str>, K: AsRef<str>>(keywords: &[K], cand: &[S]) -> Option<f64> {
    let kw: HashSet<String> = keywords.iter().map(|k| k.as_ref().to_lowercase()).collect();
    if kw.is_empty() {
        return None;
    }
    let c: HashSet<String> = cand.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let hit = kw.iter().filter(|k| c.contains(*k)).count();
    Some(100.0 * hit as f64 / kw.len() as f64)
}

/// Metrics for one hypothesis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub index: usize,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    /// Novel 2/3/4-gram percentages against the source, when one is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel: Option<[Option<f64>; 3]>,
    pub repetition: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<f64>,
}

/// One evaluation item; texts are raw strings.
#[derive(Clone, Debug, Default)]
pub struct EvalItem<'a> {
    pub hypothesis: &'a str,
    pub reference: &'a str,
    pub source: Option<&'a str>,
    pub keywords: Option<&'a [String]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: Vec<ExampleScores>,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    /// Means over examples long enough to have n-grams, with how many were skipped.
    pub novel: [Option<f64>; 3],
    pub novel_skipped: [usize; 3],
    pub repetition: f64,
    pub saliency: Option<f64>,
    pub saliency_skipped: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn mean_prf(xs: &[Prf]) -> Prf {
    Prf {
        p: mean(xs.iter().map(|x| x.p)).unwrap_or(0.0),
        r: mean(xs.iter().map(|x| x.r)).unwrap_or(0.0),
        f1: mean(xs.iter().map(|x| x.f1)).unwrap_or(0.0),
    }
}

pub fn evaluate(items: &[EvalItem<'_>]) -> EvalReport {
    let examples: Vec<ExampleScores> = items
        .iter()
        .enumerate()
        .map(|(index, it)| {
            let h = tokens(it.hypothesis);
            let r = tokens(it.reference);
            let novel = it.source.map(|s| {
                let s = tokens(s);
                [2, 3, 4].map(|n| novel_ngram_pct(&h, &s, n))
            });
            ExampleScores {
                index,
                rouge1: rouge_n(&h, &r, 1),
                rouge2: rouge_n(&h, &r, 2),
                rouge_l: rouge_l(&h, &r),
                novel,
                repetition: repetition_rate(&h, 2),
                saliency: it.keywords.and_then(|k| saliency_match(k, &h)),
            }
        })
        .collect();
    let pick = |f: fn(&ExampleScores) -> Prf| -> Prf { mean_prf(&examples.iter().map(f).collect::<Vec<_>>()) };
    let mut novel = [None; 3];
    let mut novel_skipped = [0; 3];
    for k in 0..3 {
        let vals: Vec<f64> = examples.iter().filter_map(|e| e.novel.and_then(|n| n[k])).collect();
        novel_skipped[k] = examples
            .iter()
            .filter(|e| e.novel.is_some_and(|n| n[k].is_none()))
            .count();
        novel[k] = mean(vals.into_iter());
    }
    let with_kw = items.iter().filter(|i| i.keywords.is_some()).count();
    let sal: Vec<f64> = examples.iter().filter_map(|e| e.saliency).collect();
    EvalReport {
        rouge1: pick(|e| e.rouge1),
        rouge2: pick(|e| e.rouge2),
        rouge_l: pick(|e| e.rouge_l),
        novel,
        novel_skipped,
        repetition: mean(examples.iter().map(|e| e.repetition)).unwrap_or(0.0),
        saliency: mean(sal.iter().copied()),
        saliency_skipped: with_kw - sal.len(),
        examples,
    }
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "examples     {}", self.examples.len());
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8}", "metric", "P", "R", "F1");
        for (name, m) in [("ROUGE-1", self.rouge1), ("ROUGE-2", self.rouge2), ("ROUGE-L", self.rouge_l)] {
            let _ = writeln!(s, "{name:<12} {:>8.4} {:>8.4} {:>8.4}", m.p, m.r, m.f1);
        }
        for (k, n) in [2, 3, 4].iter().enumerate() {
            if let Some(v) = self.novel[k] {
                let _ = writeln!(s, "novel-{n}gram  {v:>7.2}%  (skipped {})", self.novel_skipped[k]);
            }
        }
        let _ = writeln!(s, "repeat-2gram {:>8.4}", self.repetition);
        if let Some(v) = self.saliency {
            let _ = writeln!(s, "saliency     {v:>7.2}%  (skipped {})", self.saliency_skipped);
        }
        s
    }
}
