//! Metrics for generative evaluation: the unbiased pass@k estimator, corpus
//! BLEU, minimum-length decoding, and length/comment statistics of
//! generations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{GenParams, Scorer, ScorerError, Step};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("invalid pass@k counts: n={n}, c={c}, k={k}")]
    InvalidCounts { n: u64, c: u64, k: u64 },
    #[error("{hypotheses} hypotheses but {references} reference lists")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("hypothesis {0} has no references")]
    EmptyReferences(usize),
    #[error("BLEU order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAtKInput {
    /// Samples generated for the problem.
    pub n: u64,
    /// Samples that passed.
    pub c: u64,
    pub k: u64,
}

impl PassAtKInput {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.n == 0 || self.c > self.n || self.k == 0 || self.k > self.n {
            return Err(MetricError::InvalidCounts {
                n: self.n,
                c: self.c,
                k: self.k,
            });
        }
        Ok(())
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `C(n-c, k) / C(n, k)` as a reduced fraction, or `None` on overflow.
fn miss_ratio(n: u64, c: u64, k: u64) -> Option<(u128, u128)> {
    let (mut num, mut den) = (1u128, 1u128);
    for i in 0..k {
        let a = u128::from(n - c - i);
        let b = u128::from(n - i);
        num = num.checked_mul(a)?;
        den = den.checked_mul(b)?;
        let g = gcd(num, den);
        if g > 1 {
            num /= g;
            den /= g;
        }
    }
    Some((num, den))
}

/// Probability that at least one of `k` samples drawn without replacement
/// from `n` (of which `c` are correct) is correct: `1 - C(n-c,k)/C(n,k)`.
///
/// Small inputs are evaluated as an exact reduced fraction with a single final
/// rounding; when that would overflow, the product
/// `1 - prod_{i=n-c+1..=n} (1 - k/i)` is used instead.
pub fn pass_at_k(inp: PassAtKInput) -> Result<f64, MetricError> {
    inp.validate()?;
    let PassAtKInput { n, c, k } = inp;
    if n - c < k {
        return Ok(1.0);
    }
    if c == 0 {
        return Ok(0.0);
    }
    if let Some((num, den)) = miss_ratio(n, c, k) {
        return Ok((den - num) as f64 / den as f64);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Mean pass@k over problems given as `(n, c)` pairs.
pub fn mean_pass_at_k(problems: &[(u64, u64)], k: u64) -> Result<f64, MetricError> {
    if problems.is_empty() {
        return Ok(0.0);
    }
    let total = problems
        .iter()
        .map(|&(n, c)| pass_at_k(PassAtKInput { n, c, k }))
        .sum::<Result<f64, _>>()?;
    Ok(total / problems.len() as f64)
}

/// Table with one `pass@k` row per requested `k` and one column per model.
/// Values are percentages; models whose problems have fewer than `k` samples
/// show `-`.
pub fn render_pass_at_k_table(models: &[(String, Vec<(u64, u64)>)], ks: &[u64]) -> String {
    let mut out = format!("{:<10}", "");
    for (name, _) in models {
        let _ = write!(out, " {name:>12}");
    }
    out.push('\n');
    for &k in ks {
        let _ = write!(out, "{:<10}", format!("pass@{k}"));
        for (_, problems) in models {
            match mean_pass_at_k(problems, k) {
                Ok(v) if !problems.is_empty() => {
                    let _ = write!(out, " {:>12.2}", v * 100.0);
                }
                _ => {
                    let _ = write!(out, " {:>12}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to matches and totals of orders above 1.
    AddOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub max_order: usize,
    pub smoothing: Smoothing,
}

fn ngram_counts(tokens: &[&str], max_order: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    for order in 1..=max_order {
        for gram in tokens.windows(order) {
            let key: Vec<String> = gram.iter().map(|t| t.to_string()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU over whitespace-tokenized text: clipped n-gram
/// precisions pooled over the corpus, geometric mean, and brevity penalty
/// `exp(1 - r/h)` when the total hypothesis length `h` is below the
/// effective reference length `r` (closest reference per sentence, shorter on
/// ties).
pub fn corpus_bleu(
    hypotheses: &[String],
    references: &[Vec<String>],
    max_order: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, MetricError> {
    if max_order == 0 {
        return Err(MetricError::ZeroOrder);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut matches = vec![0usize; max_order];
    let mut possible = vec![0usize; max_order];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (i, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(MetricError::EmptyReferences(i));
        }
        let hyp_tokens: Vec<&str> = hyp.split_whitespace().collect();
        let ref_tokens: Vec<Vec<&str>> = refs.iter().map(|r| r.split_whitespace().collect()).collect();
        hyp_len += hyp_tokens.len();
        ref_len += ref_tokens
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(hyp_tokens.len()), len))
            .expect("non-empty references");

        let mut max_ref: HashMap<Vec<String>, usize> = HashMap::new();
        for r in &ref_tokens {
            for (gram, count) in ngram_counts(r, max_order) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        for (gram, count) in ngram_counts(&hyp_tokens, max_order) {
            matches[gram.len() - 1] += count.min(max_ref.get(&gram).copied().unwrap_or(0));
        }
        for order in 1..=max_order {
            possible[order - 1] += hyp_tokens.len().saturating_sub(order - 1);
        }
    }

    let precisions: Vec<f64> = (0..max_order)
        .map(|i| {
            let (m, p) = match smoothing {
                Smoothing::AddOne if i > 0 => (matches[i] + 1, possible[i] + 1),
                _ => (matches[i], possible[i]),
            };
            if p == 0 {
                0.0
            } else {
                m as f64 / p as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_order as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
        max_order,
        smoothing,
    })
}

/// Token-by-token decoding. End-of-sequence is suppressed until `min_tokens`
/// tokens exist; stop strings are honoured only after that point.
pub fn decode_tokens<S: Scorer + ?Sized>(
    scorer: &S,
    context: &str,
    params: &GenParams,
    min_tokens: usize,
) -> Result<Vec<String>, ScorerError> {
    params.validate().map_err(ScorerError::InvalidParams)?;
    let mut generated: Vec<String> = Vec::new();
    while generated.len() < params.max_new_tokens {
        let suppress = generated.len() < min_tokens;
        match scorer.next_token(context, &generated, params, suppress)? {
            Step::Eos if suppress => return Err(ScorerError::EosWhileSuppressed),
            Step::Eos => break,
            Step::Token(t) => generated.push(t),
        }
        if generated.len() >= min_tokens && !params.stop.is_empty() {
            let text = generated.join(" ");
            if params.stop.iter().any(|s| !s.is_empty() && text.contains(s.as_str())) {
                break;
            }
        }
    }
    Ok(generated)
}

fn cut_at_stop(text: String, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}

pub(crate) fn decode<S: Scorer + ?Sized>(
    scorer: &S,
    context: &str,
    params: &GenParams,
    min_tokens: usize,
) -> Result<String, ScorerError> {
    let tokens = decode_tokens(scorer, context, params, min_tokens)?;
    Ok(cut_at_stop(tokens.join(" "), &params.stop))
}

/// Generation that ignores end-of-sequence until `params.min_new_tokens`
/// tokens have been produced. With a minimum of 0 this is exactly
/// [`Scorer::generate`].
pub fn generate_with_min_tokens<S: Scorer + ?Sized>(
    scorer: &S,
    context: &str,
    params: &GenParams,
) -> Result<String, ScorerError> {
    params.validate().map_err(ScorerError::InvalidParams)?;
    if params.min_new_tokens == 0 {
        return scorer.generate(context, params);
    }
    decode(scorer, context, params, params.min_new_tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub count: usize,
    pub avg_chars: f64,
    pub avg_comment_markers: f64,
    pub comment_marker: String,
    /// Set when the input list was empty; both averages are then 0.
    pub empty: bool,
}

/// Counts lines whose first non-whitespace characters are `marker`.
pub fn count_comment_lines(text: &str, marker: &str) -> usize {
    if marker.is_empty() {
        return 0;
    }
    text.lines().filter(|l| l.trim_start().starts_with(marker)).count()
}

/// Mean character count (Unicode scalar values) and mean number of comment
/// lines per output.
pub fn generation_stats(outputs: &[String], comment_marker: &str) -> GenStats {
    if outputs.is_empty() {
        return GenStats {
            count: 0,
            avg_chars: 0.0,
            avg_comment_markers: 0.0,
            comment_marker: comment_marker.to_string(),
            empty: true,
        };
    }
    let n = outputs.len() as f64;
    let chars: usize = outputs.iter().map(|o| o.chars().count()).sum();
    let comments: usize = outputs.iter().map(|o| count_comment_lines(o, comment_marker)).sum();
    GenStats {
        count: outputs.len(),
        avg_chars: chars as f64 / n,
        avg_comment_markers: comments as f64 / n,
        comment_marker: comment_marker.to_string(),
        empty: false,
    }
}

/// Side-by-side statistics table, one column per labelled output set.
pub fn render_generation_stats_table(columns: &[(String, GenStats)]) -> String {
    let marker = columns.first().map_or("#", |(_, s)| s.comment_marker.as_str());
    let mut out = format!("{:<32}", "");
    for (label, _) in columns {
        let _ = write!(out, " {label:>10}");
    }
    out.push('\n');
    let _ = write!(out, "{:<32}", "Average characters");
    for (_, s) in columns {
        let _ = write!(out, " {:>10.0}", s.avg_chars);
    }
    out.push('\n');
    let _ = write!(out, "{:<32}", format!("Average comments ({marker})"));
    for (_, s) in columns {
        let _ = write!(out, " {:>10.2}", s.avg_comment_markers);
    }
    out.push('\n');
    out
}

/// `k -> pass@k` for each `k` that every problem supports.
pub fn pass_at_k_report(problems: &[(u64, u64)], ks: &[u64]) -> BTreeMap<u64, f64> {
    ks.iter()
        .filter(|&&k| problems.iter().all(|&(n, _)| n >= k))
        .filter_map(|&k| mean_pass_at_k(problems, k).ok().map(|v| (k, v)))
        .collect()
}
