//! Zero-shot rank classification: score every candidate completion with the
//! scorer's log-likelihood and pick the best. Tasks are evaluated under each
//! of their prompts and summarized by the median and maximum accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, Scorer, ScorerError};
use crate::template::{CompiledTemplate, PromptTemplate, PromptVariant, Record, RenderError, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("rank classification needs at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("option {0} is empty")]
    EmptyOption(usize),
    #[error("scoring option {index}: {source}")]
    Scorer {
        index: usize,
        #[source]
        source: ScorerError,
    },
    #[error("task `{0}` has no records")]
    EmptyRecords(String),
    #[error("task `{0}` has no prompts")]
    NoPrompts(String),
    #[error("prompt `{0}` has no answer choices")]
    NoAnswerChoices(String),
    #[error("record {record}: gold label {label} is not below the {options} rendered options")]
    InvalidLabel {
        record: usize,
        label: String,
        options: usize,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("record {record}, prompt `{prompt}`: {source}")]
    Render {
        record: usize,
        prompt: String,
        #[source]
        source: RenderError,
    },
    #[error("prompt variants do not share the same records")]
    MismatchedRecords,
    #[error("no prompt variants given")]
    NoVariants,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOptions {
    /// Divide each option's log-likelihood by its token count.
    pub length_normalize: bool,
    /// Appended to the rendered input to form the scoring context, mirroring
    /// the space that separates inputs from targets in training.
    pub separator: String,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            length_normalize: false,
            separator: " ".to_string(),
        }
    }
}

/// Returns the index of the highest-scoring option; ties go to the lowest
/// index.
pub fn rank_classify<S: Scorer + ?Sized>(
    scorer: &S,
    context: &str,
    options: &[String],
    opts: &RankOptions,
) -> Result<usize, EvalError> {
    if options.len() < 2 {
        return Err(EvalError::TooFewOptions(options.len()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, option) in options.iter().enumerate() {
        if option.is_empty() {
            return Err(EvalError::EmptyOption(i));
        }
        let mut score = scorer
            .loglikelihood(context, option)
            .map_err(|source| EvalError::Scorer { index: i, source })?;
        if !score.is_finite() {
            return Err(EvalError::Scorer {
                index: i,
                source: ScorerError::NonFinite(option.clone()),
            });
        }
        if opts.length_normalize {
            score /= scorer.continuation_tokens(context, option).max(1) as f64;
        }
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    Ok(best.expect("at least two options").0)
}

/// A classification task evaluated under several prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub dataset: String,
    pub language: String,
    pub prompts: Vec<PromptTemplate>,
    pub records: Vec<Record>,
    /// Record field holding the 0-based gold option index.
    #[serde(default = "default_label_field")]
    pub label_field: String,
}

fn default_label_field() -> String {
    "label".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAccuracy {
    pub prompt: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSummary {
    pub median_accuracy: f64,
    pub max_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub language: String,
    pub per_prompt: Vec<PromptAccuracy>,
    pub median_accuracy: f64,
    pub max_accuracy: f64,
    pub per_language: BTreeMap<String, LanguageSummary>,
    /// Expected accuracy of uniform guessing: mean over records of
    /// `1 / number of options`.
    pub random_baseline: f64,
    pub length_normalize: bool,
}

fn gold_label(record: &Record, field: &str, index: usize, options: usize) -> Result<usize, EvalError> {
    let invalid = |label: String| EvalError::InvalidLabel {
        record: index,
        label,
        options,
    };
    let value = record.get(field).ok_or_else(|| invalid("<missing>".into()))?;
    let label = match value {
        serde_json::Value::Number(n) => n.as_u64().map(|v| v as usize),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    match label {
        Some(l) if l < options => Ok(l),
        _ => Err(invalid(value.to_string())),
    }
}

/// One record rendered under one prompt.
struct Item {
    context: String,
    options: Vec<String>,
    gold: usize,
}

fn render_items(task: &EvalTask, prompt: &CompiledTemplate, opts: &RankOptions) -> Result<Vec<Item>, EvalError> {
    let name = &prompt.template.name;
    task.records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            let render_err = |source| EvalError::Render {
                record: i,
                prompt: name.clone(),
                source,
            };
            let options = prompt
                .render_choices(record)
                .map_err(render_err)?
                .ok_or_else(|| EvalError::NoAnswerChoices(name.clone()))?;
            let context = prompt.input.render(record, Some(&options)).map_err(render_err)?;
            let gold = gold_label(record, &task.label_field, i, options.len())?;
            Ok(Item {
                context: format!("{context}{}", opts.separator),
                options,
                gold,
            })
        })
        .collect()
}

/// Evaluates every prompt of `task` and aggregates per-prompt accuracies.
pub fn evaluate_task<S: Scorer + ?Sized>(scorer: &S, task: &EvalTask, opts: &RankOptions) -> Result<EvalReport, EvalError> {
    if task.records.is_empty() {
        return Err(EvalError::EmptyRecords(task.dataset.clone()));
    }
    if task.prompts.is_empty() {
        return Err(EvalError::NoPrompts(task.dataset.clone()));
    }
    let mut per_prompt = Vec::with_capacity(task.prompts.len());
    let mut inverse_options = 0.0;
    let mut baseline_items = 0usize;
    for prompt in &task.prompts {
        let compiled = prompt.compile()?;
        let items = render_items(task, &compiled, opts)?;
        let correct = items
            .par_iter()
            .map(|item| {
                rank_classify(scorer, &item.context, &item.options, opts).map(|c| usize::from(c == item.gold))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        inverse_options += items.iter().map(|it| 1.0 / it.options.len() as f64).sum::<f64>();
        baseline_items += items.len();
        per_prompt.push(PromptAccuracy {
            prompt: prompt.name.clone(),
            correct,
            total: items.len(),
            accuracy: correct as f64 / items.len() as f64,
        });
    }
    let accuracies: Vec<f64> = per_prompt.iter().map(|p| p.accuracy).collect();
    let median_accuracy = median(&accuracies).expect("at least one prompt");
    let max_accuracy = accuracies.iter().copied().fold(f64::MIN, f64::max);
    let per_language = [(
        task.language.clone(),
        LanguageSummary {
            median_accuracy,
            max_accuracy,
        },
    )]
    .into_iter()
    .collect();
    Ok(EvalReport {
        dataset: task.dataset.clone(),
        language: task.language.clone(),
        per_prompt,
        median_accuracy,
        max_accuracy,
        per_language,
        random_baseline: inverse_options / baseline_items as f64,
        length_normalize: opts.length_normalize,
    })
}

/// Collects the per-language summaries of several reports, keyed by dataset.
pub fn merge_language_splits(reports: &[EvalReport]) -> BTreeMap<String, BTreeMap<String, LanguageSummary>> {
    let mut out: BTreeMap<String, BTreeMap<String, LanguageSummary>> = BTreeMap::new();
    for r in reports {
        out.entry(r.dataset.clone())
            .or_default()
            .extend(r.per_language.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTable {
    pub dataset: String,
    pub language: String,
    pub model: String,
    pub rows: Vec<(PromptVariant, EvalReport)>,
}

/// Evaluates the same records under different prompt collections (English,
/// machine-translated, human-translated).
pub fn compare_prompt_variants<S: Scorer + ?Sized>(
    scorer: &S,
    model: &str,
    tasks: &BTreeMap<PromptVariant, EvalTask>,
    opts: &RankOptions,
) -> Result<VariantTable, EvalError> {
    let (_, first) = tasks.iter().next().ok_or(EvalError::NoVariants)?;
    if tasks
        .values()
        .any(|t| t.records != first.records || t.label_field != first.label_field)
    {
        return Err(EvalError::MismatchedRecords);
    }
    let rows = tasks
        .iter()
        .map(|(&variant, task)| Ok((variant, evaluate_task(scorer, task, opts)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(VariantTable {
        dataset: first.dataset.clone(),
        language: first.language.clone(),
        model: model.to_string(),
        rows,
    })
}

/// Text table with one row per (task, prompt variant) and median / max
/// accuracy columns per model.
pub fn render_variant_tables(tables: &[VariantTable]) -> String {
    let mut models: Vec<&str> = tables.iter().map(|t| t.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<20} {:<6} {:<7}", "Task", "Lang", "Prompt");
    for m in &models {
        let _ = write!(out, " {:>14} {:>14}", format!("{m} median"), format!("{m} max"));
    }
    out.push('\n');
    let mut keys: Vec<(&str, &str, PromptVariant)> = tables
        .iter()
        .flat_map(|t| t.rows.iter().map(move |(v, _)| (t.dataset.as_str(), t.language.as_str(), *v)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    for (dataset, language, variant) in keys {
        let _ = write!(out, "{dataset:<20} {language:<6} {variant:<7}");
        for m in &models {
            let report = tables
                .iter()
                .filter(|t| t.model == *m && t.dataset == dataset && t.language == language)
                .flat_map(|t| t.rows.iter())
                .find(|(v, _)| *v == variant)
                .map(|(_, r)| r);
            match report {
                Some(r) => {
                    let _ = write!(out, " {:>14.2} {:>14.2}", r.median_accuracy * 100.0, r.max_accuracy * 100.0);
                }
                None => {
                    let _ = write!(out, " {:>14} {:>14}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
