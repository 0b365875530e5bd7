//! Corpus language audit and premise/hypothesis edit distances.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tag for sentences whose identification confidence is below the threshold.
pub const UNDETERMINED: &str = "und";
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("language identification failed: {0}")]
pub struct LidError(pub String);

/// Sentence-level language identification. Must be deterministic.
pub trait LanguageIdentifier: Send + Sync {
    /// Language tag and confidence in `[0, 1]`.
    fn identify(&self, sentence: &str) -> Result<(String, f64), LidError>;
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("sample rate must be in (0, 1], got {0}")]
    InvalidSampleRate(f64),
    #[error("confidence threshold must be in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("corpus token total must be positive")]
    InvalidTokenTotal,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("no samples")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditDoc {
    pub meta_language: String,
    pub text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, AuditError> {
    let io = |source| AuditError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| AuditError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Reads `{"meta_language", "text"}` lines.
pub fn read_corpus(path: &Path) -> Result<Vec<AuditDoc>, AuditError> {
    read_jsonl(path)
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '\n')
}

/// Splits after a terminator (`.!?。！？` or newline) that is followed by
/// whitespace or the end of the text. Pieces with fewer than three
/// non-whitespace characters are dropped; the rest are trimmed.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_terminator(c) {
            continue;
        }
        let at_boundary = match chars.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if at_boundary {
            let end = i + c.len_utf8();
            out.push(&text[start..end]);
            start = end;
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|s| s.chars().filter(|c| !c.is_whitespace()).count() >= 3)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub sample_rate: f64,
    pub seed: u64,
    pub confidence_threshold: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            sample_rate: 1.0,
            seed: 0,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(AuditError::InvalidSampleRate(self.sample_rate));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(AuditError::InvalidThreshold(self.confidence_threshold));
        }
        Ok(())
    }
}

pub const EXTRAPOLATION_NOTE: &str =
    "token estimates assume the sentence fraction of a language equals its token fraction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub documents_total: usize,
    pub documents_sampled: usize,
    /// Share of documents that were scanned.
    pub sample_fraction: f64,
    pub sentences: u64,
    /// Sentences the identifier failed on; they are not in `matrix`.
    pub lid_errors: u64,
    /// meta language -> detected language -> sentence count.
    pub matrix: BTreeMap<String, BTreeMap<String, u64>>,
    /// Detected language -> share of all classified sentences.
    pub fractions: BTreeMap<String, f64>,
    #[serde(default)]
    pub extrapolated_tokens: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_total_tokens: Option<f64>,
    pub note: String,
}

impl AuditReport {
    pub fn detected_totals(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for row in self.matrix.values() {
            for (lang, n) in row {
                *out.entry(lang.clone()).or_insert(0) += n;
            }
        }
        out
    }

    pub fn meta_totals(&self) -> BTreeMap<String, u64> {
        self.matrix
            .iter()
            .map(|(meta, row)| (meta.clone(), row.values().sum()))
            .collect()
    }
}

type Tally = (BTreeMap<String, BTreeMap<String, u64>>, u64, u64);

fn merge(mut a: Tally, b: Tally) -> Tally {
    for (meta, row) in b.0 {
        let dst = a.0.entry(meta).or_default();
        for (lang, n) in row {
            *dst.entry(lang).or_insert(0) += n;
        }
    }
    (a.0, a.1 + b.1, a.2 + b.2)
}

/// Samples documents with a seeded Bernoulli draw per document, splits them
/// into sentences, identifies each sentence and tallies it against the
/// document's meta language.
pub fn audit_corpus<L: LanguageIdentifier + ?Sized>(
    docs: &[AuditDoc],
    lid: &L,
    config: &AuditConfig,
) -> Result<AuditReport, AuditError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sampled: Vec<&AuditDoc> = docs.iter().filter(|_| rng.gen_bool(config.sample_rate)).collect();

    let (matrix, sentences, lid_errors) = sampled
        .par_iter()
        .map(|doc| {
            let mut row: BTreeMap<String, u64> = BTreeMap::new();
            let (mut seen, mut errors) = (0u64, 0u64);
            for sentence in split_sentences(&doc.text) {
                match lid.identify(sentence) {
                    Ok((lang, conf)) => {
                        let tag = if conf < config.confidence_threshold {
                            UNDETERMINED.to_string()
                        } else {
                            lang
                        };
                        *row.entry(tag).or_insert(0) += 1;
                        seen += 1;
                    }
                    Err(e) => {
                        log::debug!("{e}");
                        errors += 1;
                    }
                }
            }
            let mut m = BTreeMap::new();
            if !row.is_empty() {
                m.insert(doc.meta_language.clone(), row);
            }
            (m, seen, errors)
        })
        .reduce(|| (BTreeMap::new(), 0, 0), merge);

    if lid_errors > 0 {
        log::warn!("language identification failed on {lid_errors} sentences");
    }
    let mut report = AuditReport {
        config: *config,
        documents_total: docs.len(),
        documents_sampled: sampled.len(),
        sample_fraction: if docs.is_empty() {
            0.0
        } else {
            sampled.len() as f64 / docs.len() as f64
        },
        sentences,
        lid_errors,
        matrix,
        fractions: BTreeMap::new(),
        extrapolated_tokens: BTreeMap::new(),
        corpus_total_tokens: None,
        note: EXTRAPOLATION_NOTE.to_string(),
    };
    report.fractions = report
        .detected_totals()
        .into_iter()
        .map(|(lang, n)| (lang, n as f64 / sentences as f64))
        .collect();
    Ok(report)
}

/// `fraction * corpus_total_tokens`, rounded, per detected language.
pub fn extrapolate_tokens(
    report: &AuditReport,
    corpus_total_tokens: f64,
) -> Result<BTreeMap<String, u64>, AuditError> {
    if !(corpus_total_tokens > 0.0 && corpus_total_tokens.is_finite()) {
        return Err(AuditError::InvalidTokenTotal);
    }
    Ok(report
        .fractions
        .iter()
        .map(|(lang, f)| (lang.clone(), (f * corpus_total_tokens).round() as u64))
        .collect())
}

/// Percentage with at most three decimals and no trailing zeros.
pub fn format_percent(fraction: f64) -> String {
    let s = format!("{:.3}", fraction * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

/// Per-language share table, largest share first.
pub fn render_fraction_table(fractions: &BTreeMap<String, f64>) -> String {
    let mut rows: Vec<(&String, &f64)> = fractions.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = format!("{:<10} {:>10}\n", "language", "share");
    for (lang, f) in rows {
        let _ = writeln!(out, "{lang:<10} {:>10}", format_percent(*f));
    }
    out
}

/// Edit distance over Unicode scalar values with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (long, short) = if a.len() >= b.len() { (&a, &b) } else { (&b, &a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, &lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let next = (diag + usize::from(lc != sc)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[short.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accepts the label names and the XNLI integer encoding 0/1/2.
impl FromStr for NliLabel {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" | "0" => Ok(NliLabel::Entailment),
            "neutral" | "1" => Ok(NliLabel::Neutral),
            "contradiction" | "2" => Ok(NliLabel::Contradiction),
            _ => Err(AuditError::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSample {
    pub language: String,
    pub label: String,
    pub premise: String,
    pub hypothesis: String,
}

/// Reads label samples; integer labels are accepted and converted to text.
pub fn read_label_samples(path: &Path) -> Result<Vec<LabelSample>, AuditError> {
    let raw: Vec<serde_json::Map<String, serde_json::Value>> = read_jsonl(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, mut obj)| {
            if let Some(serde_json::Value::Number(n)) = obj.get("label") {
                let text = n.to_string();
                obj.insert("label".into(), serde_json::Value::String(text));
            }
            serde_json::from_value(serde_json::Value::Object(obj)).map_err(|source| AuditError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCell {
    pub language: String,
    pub label: NliLabel,
    pub mean_distance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistanceReport {
    /// Sorted by language, then label.
    pub cells: Vec<LabelCell>,
}

impl LabelDistanceReport {
    pub fn get(&self, language: &str, label: NliLabel) -> Option<&LabelCell> {
        self.cells.iter().find(|c| c.language == language && c.label == label)
    }
}

/// Mean premise/hypothesis edit distance per (language, label) cell.
pub fn label_distance_report(samples: &[LabelSample]) -> Result<LabelDistanceReport, AuditError> {
    if samples.is_empty() {
        return Err(AuditError::NoSamples);
    }
    let labels: Vec<NliLabel> = samples.iter().map(|s| s.label.parse()).collect::<Result<_, _>>()?;
    let distances: Vec<usize> = samples
        .par_iter()
        .map(|s| levenshtein(&s.premise, &s.hypothesis))
        .collect();
    let mut cells: BTreeMap<(String, NliLabel), (u64, usize)> = BTreeMap::new();
    for ((sample, label), d) in samples.iter().zip(labels).zip(distances) {
        let cell = cells.entry((sample.language.clone(), label)).or_insert((0, 0));
        cell.0 += d as u64;
        cell.1 += 1;
    }
    Ok(LabelDistanceReport {
        cells: cells
            .into_iter()
            .map(|((language, label), (sum, count))| LabelCell {
                language,
                label,
                mean_distance: sum as f64 / count as f64,
                count,
            })
            .collect(),
    })
}

/// One row per language, one column per label, two decimals.
pub fn render_label_distance_table(report: &LabelDistanceReport) -> String {
    let mut out = format!("{:<10}", "language");
    for label in NliLabel::ALL {
        let _ = write!(out, " {:>14}", label.as_str());
    }
    out.push('\n');
    let languages: std::collections::BTreeSet<&str> = report.cells.iter().map(|c| c.language.as_str()).collect();
    for lang in languages {
        let _ = write!(out, "{lang:<10}");
        for label in NliLabel::ALL {
            match report.get(lang, label) {
                Some(c) => {
                    let _ = write!(out, " {:>14.2}", c.mean_distance);
                }
                None => {
                    let _ = write!(out, " {:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
