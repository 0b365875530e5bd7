//! Deterministic scorers and language identifiers for tests, fixtures and
//! smoke runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{LanguageIdentifier, LidError};
use crate::eval::{GenParams, Scorer, ScorerError, Step};

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid n-gram parameters: {0}")]
    InvalidNGram(String),
}

fn read_file(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Fixed log-likelihoods for listed `(context, continuation)` pairs, and a
/// default for everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct TableScorer {
    entries: HashMap<(String, String), f64>,
    default: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    pub context: String,
    pub continuation: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableFixture {
    pub default: f64,
    #[serde(default)]
    pub entries: Vec<TableEntry>,
}

impl TableScorer {
    pub fn new(entries: impl IntoIterator<Item = ((String, String), f64)>, default: f64) -> Self {
        Self {
            entries: entries.into_iter().collect(),
            default,
        }
    }

    pub fn from_fixture(fixture: TableFixture) -> Self {
        Self::new(
            fixture.entries.into_iter().map(|e| ((e.context, e.continuation), e.score)),
            fixture.default,
        )
    }

    /// Loads `{"default": .., "entries": [{"context", "continuation", "score"}]}`.
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = read_file(path)?;
        let fixture: TableFixture = serde_json::from_str(&text).map_err(|source| FixtureError::Json {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_fixture(fixture))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Scorer for TableScorer {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64, ScorerError> {
        Ok(self
            .entries
            .get(&(context.to_string(), continuation.to_string()))
            .copied()
            .unwrap_or(self.default))
    }
}

/// Same score for every continuation; rank classification then always picks
/// the first option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn loglikelihood(&self, _context: &str, _continuation: &str) -> Result<f64, ScorerError> {
        Ok(self.0)
    }
}

/// Scores each pair with a pseudo-random value in `(-1, 0]` derived from a
/// hash of the seed, context and continuation. Every option is equally likely
/// to win, so accuracy converges to the random baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformRandomScorer {
    pub seed: u64,
}

impl UniformRandomScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Scorer for UniformRandomScorer {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64, ScorerError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((context.len() as u64).to_le_bytes());
        h.update(context.as_bytes());
        h.update(continuation.as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let u = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
        Ok(-u)
    }
}

/// Emits end-of-sequence whenever allowed, and `filler` when it is not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlwaysEosScorer {
    pub filler: String,
}

impl Default for AlwaysEosScorer {
    fn default() -> Self {
        Self { filler: "x".into() }
    }
}

impl Scorer for AlwaysEosScorer {
    fn loglikelihood(&self, _context: &str, _continuation: &str) -> Result<f64, ScorerError> {
        Ok(0.0)
    }

    fn next_token(&self, _: &str, _: &[String], _: &GenParams, suppress_eos: bool) -> Result<Step, ScorerError> {
        Ok(if suppress_eos {
            Step::Token(self.filler.clone())
        } else {
            Step::Eos
        })
    }
}

/// Plays back a fixed token script followed by end-of-sequence. Once the
/// script is exhausted and EOS is suppressed, `fallback` is emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedScorer {
    script: Vec<String>,
    fallback: String,
}

impl ScriptedScorer {
    pub fn new(script: &[&str], fallback: &str) -> Self {
        Self {
            script: script.iter().map(|s| s.to_string()).collect(),
            fallback: fallback.to_string(),
        }
    }
}

impl Scorer for ScriptedScorer {
    fn loglikelihood(&self, _context: &str, _continuation: &str) -> Result<f64, ScorerError> {
        Ok(0.0)
    }

    fn next_token(&self, _: &str, generated: &[String], _: &GenParams, suppress_eos: bool) -> Result<Step, ScorerError> {
        Ok(match self.script.get(generated.len()) {
            Some(t) => Step::Token(t.clone()),
            None if suppress_eos => Step::Token(self.fallback.clone()),
            None => Step::Eos,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NGramMode {
    /// One token per Unicode scalar value.
    #[default]
    Char,
    /// One token per whitespace-separated word.
    Whitespace,
}

impl NGramMode {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            NGramMode::Char => text.chars().map(String::from).collect(),
            NGramMode::Whitespace => text.split_whitespace().map(String::from).collect(),
        }
    }
}

/// Padding symbol for histories that reach before the start of the text. It
/// never occurs as a prediction target.
pub const BOS: &str = "\u{2}";

/// Add-alpha smoothed n-gram model.
///
/// `P(t | h) = (c(h, t) + alpha) / (c(h) + alpha * |V|)` where `V` is the set
/// of training tokens and `h` the previous `n - 1` tokens. Tokens outside `V`
/// get `alpha / (c(h) + alpha * |V|)`.
#[derive(Debug, Clone)]
pub struct NGramScorer {
    order: usize,
    alpha: f64,
    mode: NGramMode,
    vocab: BTreeSet<String>,
    counts: HashMap<Vec<String>, BTreeMap<String, u64>>,
    totals: HashMap<Vec<String>, u64>,
}

/// Trains an n-gram scorer on `text`.
pub fn ngram_train(text: &str, order: usize, alpha: f64, mode: NGramMode) -> Result<NGramScorer, FixtureError> {
    if order == 0 {
        return Err(FixtureError::InvalidNGram("order must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FixtureError::InvalidNGram(format!("alpha must be positive, got {alpha}")));
    }
    let tokens = mode.tokenize(text);
    if tokens.is_empty() {
        return Err(FixtureError::InvalidNGram("training text has no tokens".into()));
    }
    let mut scorer = NGramScorer {
        order,
        alpha,
        mode,
        vocab: tokens.iter().cloned().collect(),
        counts: HashMap::new(),
        totals: HashMap::new(),
    };
    let mut padded: Vec<String> = vec![BOS.to_string(); order - 1];
    padded.extend(tokens);
    for window in padded.windows(order) {
        let (hist, target) = window.split_at(order - 1);
        *scorer
            .counts
            .entry(hist.to_vec())
            .or_default()
            .entry(target[0].clone())
            .or_insert(0) += 1;
        *scorer.totals.entry(hist.to_vec()).or_insert(0) += 1;
    }
    Ok(scorer)
}

impl NGramScorer {
    pub fn train_file(path: &Path, order: usize, alpha: f64, mode: NGramMode) -> Result<Self, FixtureError> {
        ngram_train(&read_file(path)?, order, alpha, mode)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mode(&self) -> NGramMode {
        self.mode
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str)
    }

    /// Last `n - 1` tokens of `history`, BOS-padded on the left.
    fn key(&self, history: &[String]) -> Vec<String> {
        let need = self.order - 1;
        let take = history.len().min(need);
        let mut key = vec![BOS.to_string(); need - take];
        key.extend_from_slice(&history[history.len() - take..]);
        key
    }

    pub fn prob(&self, history: &[String], token: &str) -> f64 {
        let key = self.key(history);
        let seen = self
            .counts
            .get(&key)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0);
        let total = self.totals.get(&key).copied().unwrap_or(0);
        (seen as f64 + self.alpha) / (total as f64 + self.alpha * self.vocab.len() as f64)
    }

    /// Sum of `ln P(t_i | history ++ t_<i)` over `tokens`.
    pub fn token_loglikelihood(&self, history: &[String], tokens: &[String]) -> f64 {
        let mut hist = history.to_vec();
        let mut total = 0.0;
        for t in tokens {
            total += self.prob(&hist, t).ln();
            hist.push(t.clone());
        }
        total
    }

    fn greedy(&self, history: &[String]) -> Option<String> {
        let key = self.key(history);
        match self.counts.get(&key) {
            Some(m) => m
                .iter()
                .fold(None::<(&String, u64)>, |best, (t, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((t, c)),
                })
                .map(|(t, _)| t.clone()),
            None => self.vocab.iter().next().cloned(),
        }
    }
}

impl Scorer for NGramScorer {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64, ScorerError> {
        let ll = self.token_loglikelihood(&self.mode.tokenize(context), &self.mode.tokenize(continuation));
        if ll.is_finite() {
            Ok(ll)
        } else {
            Err(ScorerError::NonFinite(continuation.to_string()))
        }
    }

    fn continuation_tokens(&self, _context: &str, continuation: &str) -> usize {
        self.mode.tokenize(continuation).len().max(1)
    }

    /// Greedy decoding. The model has no end-of-sequence symbol, so output
    /// runs until `max_new_tokens` or a stop string.
    fn next_token(&self, context: &str, generated: &[String], _: &GenParams, _: bool) -> Result<Step, ScorerError> {
        let mut history = self.mode.tokenize(context);
        history.extend_from_slice(generated);
        self.greedy(&history)
            .map(Step::Token)
            .ok_or(ScorerError::Backend("empty vocabulary".into()))
    }
}

/// Looks sentences up in a table; unknown sentences get the fallback, or an
/// error when there is none.
#[derive(Debug, Clone, Default)]
pub struct LookupIdentifier {
    table: HashMap<String, (String, f64)>,
    fallback: Option<(String, f64)>,
}

impl LookupIdentifier {
    pub fn new(entries: impl IntoIterator<Item = (String, String, f64)>) -> Self {
        Self {
            table: entries.into_iter().map(|(s, l, c)| (s, (l, c))).collect(),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, language: &str, confidence: f64) -> Self {
        self.fallback = Some((language.to_string(), confidence));
        self
    }

    pub fn insert(&mut self, sentence: &str, language: &str, confidence: f64) {
        self.table.insert(sentence.to_string(), (language.to_string(), confidence));
    }
}

impl LanguageIdentifier for LookupIdentifier {
    fn identify(&self, sentence: &str) -> Result<(String, f64), LidError> {
        self.table
            .get(sentence)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| LidError(format!("no entry for {sentence:?}")))
    }
}

/// Guesses the language from the dominant Unicode script. Confidence is the
/// share of alphabetic characters in that script. Latin text is reported as
/// `latin_language`.
#[derive(Debug, Clone)]
pub struct ScriptIdentifier {
    pub latin_language: String,
}

impl Default for ScriptIdentifier {
    fn default() -> Self {
        Self {
            latin_language: "en".into(),
        }
    }
}

fn script_of(c: char) -> Option<&'static str> {
    let tag = match u32::from(c) {
        0x0370..=0x03FF | 0x1F00..=0x1FFF => "el",
        0x0400..=0x04FF => "ru",
        0x0590..=0x05FF => "he",
        0x0600..=0x06FF | 0x0750..=0x077F => "ar",
        0x0900..=0x097F => "hi",
        0x0980..=0x09FF => "bn",
        0x0B80..=0x0BFF => "ta",
        0x0E00..=0x0E7F => "th",
        0x3040..=0x30FF => "ja",
        0x4E00..=0x9FFF => "zh",
        0xAC00..=0xD7AF => "ko",
        _ if c.is_alphabetic() => "latin",
        _ => return None,
    };
    Some(tag)
}

impl LanguageIdentifier for ScriptIdentifier {
    fn identify(&self, sentence: &str) -> Result<(String, f64), LidError> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in sentence.chars() {
            if let Some(s) = script_of(c) {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(LidError(format!("no letters in {sentence:?}")));
        }
        // Kana outweighs Han: mixed text is Japanese.
        if let Some(&kana) = counts.get("ja") {
            *counts.entry("ja").or_insert(0) = kana + counts.remove("zh").unwrap_or(0);
        }
        let (script, n) = counts
            .iter()
            .fold(("", 0), |best, (&s, &n)| if n > best.1 { (s, n) } else { best });
        let tag = if script == "latin" { self.latin_language.as_str() } else { script };
        Ok((tag.to_string(), n as f64 / total as f64))
    }
}
