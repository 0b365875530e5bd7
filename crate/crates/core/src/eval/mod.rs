//! Evaluation: the scorer interface, zero-shot rank classification, and the
//! metrics used for generative tasks.

pub mod gen;
pub mod rank;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer does not support {0}")]
    Unsupported(&'static str),
    #[error("scorer returned a non-finite log-likelihood for `{0}`")]
    NonFinite(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("scorer emitted end-of-sequence while it was suppressed")]
    EosWhileSuppressed,
    #[error("{0}")]
    Backend(String),
}

/// One decoding step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Token(String),
    Eos,
}

/// Decoding parameters. Reference scorers ignore `temperature` and `top_k`;
/// they are carried for backends that sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_new_tokens: usize,
    #[serde(default)]
    pub min_new_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub top_k: usize,
    /// Generation stops after the first occurrence of any of these strings,
    /// which is cut from the output.
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 256,
            min_new_tokens: 0,
            temperature: 0.0,
            top_k: 0,
            stop: Vec::new(),
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_new_tokens > self.max_new_tokens {
            return Err(format!(
                "min_new_tokens {} exceeds max_new_tokens {}",
                self.min_new_tokens, self.max_new_tokens
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Conditional log-likelihood and generation provider.
///
/// Implementations must be deterministic for fixed inputs. Generated tokens
/// are joined with single spaces.
pub trait Scorer: Send + Sync {
    /// Summed log-likelihood of `continuation` given `context`.
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64, ScorerError>;

    /// Number of tokens in `continuation`, used for length normalization.
    fn continuation_tokens(&self, _context: &str, continuation: &str) -> usize {
        continuation.split_whitespace().count().max(1)
    }

    /// Next decoding step. When `suppress_eos` is set the scorer must not
    /// return [`Step::Eos`]; it returns its best non-EOS token instead.
    fn next_token(
        &self,
        _context: &str,
        _generated: &[String],
        _params: &GenParams,
        _suppress_eos: bool,
    ) -> Result<Step, ScorerError> {
        Err(ScorerError::Unsupported("stepwise generation"))
    }

    /// Unconstrained generation.
    fn generate(&self, context: &str, params: &GenParams) -> Result<String, ScorerError> {
        gen::decode(self, context, params, 0)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn loglikelihood(&self, context: &str, continuation: &str) -> Result<f64, ScorerError> {
        (**self).loglikelihood(context, continuation)
    }

    fn continuation_tokens(&self, context: &str, continuation: &str) -> usize {
        (**self).continuation_tokens(context, continuation)
    }

    fn next_token(
        &self,
        context: &str,
        generated: &[String],
        params: &GenParams,
        suppress_eos: bool,
    ) -> Result<Step, ScorerError> {
        (**self).next_token(context, generated, params, suppress_eos)
    }

    fn generate(&self, context: &str, params: &GenParams) -> Result<String, ScorerError> {
        (**self).generate(context, params)
    }
}

/// Median of a non-empty list; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}
