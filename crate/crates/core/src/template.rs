//! Prompt templates: a minimal curly-brace grammar that maps a dataset record
//! to an `(input, target)` text pair.
//!
//! Two expression forms are accepted inside `{{ ... }}`:
//!
//! * `{{field}}` substitutes the record value of `field`.
//! * `{{Choices[field]}}` substitutes `answer_choices[record[field]]`.
//!
//! Anything else between double braces is rejected at parse time. Whitespace
//! directly inside the braces is ignored, so `{{ label }}` and `{{label}}` are
//! the same expression. The AST keeps the raw source of every node so that
//! [`TemplateAst::serialize`] reproduces the input byte-for-byte.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A dataset record as read from JSON-lines input.
pub type Record = serde_json::Map<String, Value>;

const OPEN: &str = "{{";
const CLOSE: &str = "}}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unbalanced braces at byte offset {offset}")]
    UnbalancedBraces { offset: usize },
    #[error("unknown construct `{text}` at byte offset {offset}")]
    UnknownConstruct { offset: usize, text: String },
    #[error("empty expression at byte offset {offset}")]
    EmptyExpression { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("record has no field `{0}`")]
    MissingField(String),
    #[error("choice index {index} out of range for {len} answer choices")]
    ChoiceIndexOutOfRange { index: i64, len: usize },
    #[error("field `{field}` is not a valid choice index: {value}")]
    InvalidChoiceIndex { field: String, value: String },
    #[error("field `{field}` must be a string or integer, found {found}")]
    InvalidFieldType { field: String, found: String },
    #[error("template references Choices[...] but has no answer choices")]
    NoAnswerChoices,
    #[error("template `{0}` rendered an empty target")]
    EmptyTarget(String),
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{name}` ({side} side): {source}")]
    Parse {
        name: String,
        side: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("template `{0}` references Choices[...] but answer_choices is missing or empty")]
    MissingChoices(String),
    #[error("answer choices of `{0}` may not reference Choices[...]")]
    NestedChoices(String),
    #[error("duplicate template name `{name}` for dataset `{dataset}` variant {variant}")]
    DuplicateName {
        dataset: String,
        variant: PromptVariant,
        name: String,
    },
    #[error("reading template file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("decoding template file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One node of a parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Literal(String),
    /// `{{field}}`; `raw` is the full source span including braces.
    VarRef { field: String, raw: String },
    /// `{{Choices[field]}}`; `raw` is the full source span including braces.
    ChoiceRef { field: String, raw: String },
}

impl Node {
    pub fn literal(text: impl Into<String>) -> Self {
        Node::Literal(text.into())
    }

    /// `{{field}}` with canonical spelling.
    pub fn var(field: impl Into<String>) -> Self {
        let field = field.into();
        let raw = format!("{{{{{field}}}}}");
        Node::VarRef { field, raw }
    }

    /// `{{Choices[field]}}` with canonical spelling.
    pub fn choice(field: impl Into<String>) -> Self {
        let field = field.into();
        let raw = format!("{{{{Choices[{field}]}}}}");
        Node::ChoiceRef { field, raw }
    }

    pub fn source(&self) -> &str {
        match self {
            Node::Literal(text) => text,
            Node::VarRef { raw, .. } | Node::ChoiceRef { raw, .. } => raw,
        }
    }

    pub fn is_expression(&self) -> bool {
        !matches!(self, Node::Literal(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateAst {
    nodes: Vec<Node>,
}

impl TemplateAst {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Concatenates the raw source of every node.
    pub fn serialize(&self) -> String {
        self.nodes.iter().map(Node::source).collect()
    }

    pub fn references_choices(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::ChoiceRef { .. }))
    }

    /// Raw `{{...}}` spans in source order.
    pub fn expression_spans(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.is_expression())
            .map(Node::source)
            .collect()
    }

    /// True when the template consists of exactly one `{{Choices[...]}}`.
    pub fn is_single_choice(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::ChoiceRef { .. }])
    }

    pub fn render(&self, record: &Record, choices: Option<&[String]>) -> Result<String, RenderError> {
        let mut out = String::new();
        for node in &self.nodes {
            match node {
                Node::Literal(text) => out.push_str(text),
                Node::VarRef { field, .. } => out.push_str(&field_text(record, field)?),
                Node::ChoiceRef { field, .. } => {
                    let choices = choices
                        .filter(|c| !c.is_empty())
                        .ok_or(RenderError::NoAnswerChoices)?;
                    let index = choice_index(record, field)?;
                    let chosen = usize::try_from(index)
                        .ok()
                        .and_then(|i| choices.get(i))
                        .ok_or(RenderError::ChoiceIndexOutOfRange {
                            index,
                            len: choices.len(),
                        })?;
                    out.push_str(chosen);
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for TemplateAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn parse_expression(inner: &str, offset: usize, raw: &str) -> Result<Node, ParseError> {
    let expr = inner.trim();
    if expr.is_empty() {
        return Err(ParseError::EmptyExpression { offset });
    }
    let unknown = || ParseError::UnknownConstruct {
        offset,
        text: raw.to_string(),
    };
    if let Some(rest) = expr
        .strip_prefix("Choices")
        .map(str::trim_start)
        .filter(|r| r.starts_with('['))
    {
        let field = rest[1..]
            .strip_suffix(']')
            .map(str::trim)
            .ok_or_else(unknown)?;
        if !is_identifier(field) {
            return Err(unknown());
        }
        return Ok(Node::ChoiceRef {
            field: field.to_string(),
            raw: raw.to_string(),
        });
    }
    if is_identifier(expr) {
        return Ok(Node::VarRef {
            field: expr.to_string(),
            raw: raw.to_string(),
        });
    }
    Err(unknown())
}

/// Parses a template source string.
pub fn parse_template(src: &str) -> Result<TemplateAst, ParseError> {
    let mut nodes = Vec::new();
    let mut pos = 0;
    while pos < src.len() {
        let rest = &src[pos..];
        let next_open = rest.find(OPEN);
        let next_close = rest.find(CLOSE);
        match (next_open, next_close) {
            (None, None) => {
                nodes.push(Node::Literal(rest.to_string()));
                break;
            }
            // A `}}` before any `{{` closes nothing.
            (open, Some(close)) if open.is_none_or(|o| close < o) => {
                return Err(ParseError::UnbalancedBraces { offset: pos + close });
            }
            (Some(open), _) => {
                if open > 0 {
                    nodes.push(Node::Literal(rest[..open].to_string()));
                }
                let start = pos + open;
                let body_start = start + OPEN.len();
                let close = src[body_start..]
                    .find(CLOSE)
                    .ok_or(ParseError::UnbalancedBraces { offset: start })?;
                let body_end = body_start + close;
                let end = body_end + CLOSE.len();
                let inner = &src[body_start..body_end];
                if inner.contains(OPEN) {
                    return Err(ParseError::UnbalancedBraces { offset: start });
                }
                nodes.push(parse_expression(inner, start, &src[start..end])?);
                pos = end;
            }
            (None, Some(_)) => unreachable!("handled by the close-before-open arm"),
        }
    }
    Ok(TemplateAst { nodes })
}

fn value_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "non-integer number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn field_text(record: &Record, field: &str) -> Result<String, RenderError> {
    let value = record
        .get(field)
        .ok_or_else(|| RenderError::MissingField(field.to_string()))?;
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) if n.is_i64() || n.is_u64() => Ok(n.to_string()),
        other => Err(RenderError::InvalidFieldType {
            field: field.to_string(),
            found: value_kind(other).to_string(),
        }),
    }
}

fn choice_index(record: &Record, field: &str) -> Result<i64, RenderError> {
    let value = record
        .get(field)
        .ok_or_else(|| RenderError::MissingField(field.to_string()))?;
    let invalid = || RenderError::InvalidChoiceIndex {
        field: field.to_string(),
        value: value.to_string(),
    };
    match value {
        Value::Number(n) => n.as_i64().ok_or_else(invalid),
        Value::String(s) => s.trim().parse::<i64>().map_err(|_| invalid()),
        _ => Err(invalid()),
    }
}

/// Which prompt collection a template belongs to: original English,
/// machine-translated, or human-translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "MT")]
    Mt,
    #[serde(rename = "HT")]
    Ht,
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::En => "EN",
            PromptVariant::Mt => "MT",
            PromptVariant::Ht => "HT",
        })
    }
}

fn default_variant() -> PromptVariant {
    PromptVariant::En
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub dataset: String,
    #[serde(default = "default_prompt_language")]
    pub prompt_language: String,
    #[serde(default = "default_variant")]
    pub variant: PromptVariant,
    #[serde(default)]
    pub inverted: bool,
    pub input_src: String,
    pub target_src: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_choices: Option<Vec<String>>,
}

fn default_prompt_language() -> String {
    "en".to_string()
}

/// A template with both sides parsed and validated.
#[derive(Debug, Clone)]
pub struct CompiledTemplate {
    pub template: PromptTemplate,
    pub input: TemplateAst,
    pub target: TemplateAst,
    /// Answer choices may reference record fields, e.g. story endings.
    pub choices: Vec<TemplateAst>,
}

impl PromptTemplate {
    pub fn compile(&self) -> Result<CompiledTemplate, TemplateError> {
        let parse = |src: &str, side| {
            parse_template(src).map_err(|source| TemplateError::Parse {
                name: self.name.clone(),
                side,
                source,
            })
        };
        let input = parse(&self.input_src, "input")?;
        let target = parse(&self.target_src, "target")?;
        let has_choices = self.answer_choices.as_ref().is_some_and(|c| !c.is_empty());
        if (input.references_choices() || target.references_choices()) && !has_choices {
            return Err(TemplateError::MissingChoices(self.name.clone()));
        }
        let choices = self
            .answer_choices
            .iter()
            .flatten()
            .map(|c| parse(c, "answer choice"))
            .collect::<Result<Vec<_>, _>>()?;
        if choices.iter().any(TemplateAst::references_choices) {
            return Err(TemplateError::NestedChoices(self.name.clone()));
        }
        Ok(CompiledTemplate {
            template: self.clone(),
            input,
            target,
            choices,
        })
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        self.compile().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub input_text: String,
    pub target_text: String,
    pub language: String,
    pub dataset: String,
    pub prompt_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_choices_rendered: Option<Vec<String>>,
}

impl CompiledTemplate {
    /// Renders `record`. `language` is the language tag stamped on the
    /// example (the dataset's language, not the prompt's).
    pub fn render_as(&self, record: &Record, language: &str) -> Result<RenderedExample, RenderError> {
        let rendered_choices = self.render_choices(record)?;
        let choices = rendered_choices.as_deref();
        let input_text = self.input.render(record, choices)?;
        let target_text = self.target.render(record, choices)?;
        if target_text.is_empty() {
            return Err(RenderError::EmptyTarget(self.template.name.clone()));
        }
        // Only classification-style targets carry their option list.
        let answer_choices_rendered = if self.target.is_single_choice() {
            choices.map(<[String]>::to_vec)
        } else {
            None
        };
        Ok(RenderedExample {
            input_text,
            target_text,
            language: language.to_string(),
            dataset: self.template.dataset.clone(),
            prompt_name: self.template.name.clone(),
            answer_choices_rendered,
        })
    }

    pub fn render(&self, record: &Record) -> Result<RenderedExample, RenderError> {
        self.render_as(record, &self.template.prompt_language)
    }

    /// Renders the answer choices against `record`; `None` when the template
    /// has none.
    pub fn render_choices(&self, record: &Record) -> Result<Option<Vec<String>>, RenderError> {
        if self.template.answer_choices.is_none() {
            return Ok(None);
        }
        self.choices
            .iter()
            .map(|c| c.render(record, None))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

/// Parses and renders in one step. Inversion needs no special handling: it is
/// authored into the template text.
pub fn render(tpl: &PromptTemplate, record: &Record) -> Result<RenderedExample, RenderTemplateError> {
    let compiled = tpl.compile().map_err(RenderTemplateError::Template)?;
    compiled.render(record).map_err(RenderTemplateError::Render)
}

/// Error of the one-shot [`render`] helper.
#[derive(Debug, thiserror::Error)]
pub enum RenderTemplateError {
    #[error(transparent)]
    Template(TemplateError),
    #[error(transparent)]
    Render(RenderError),
}

/// Checks the per-collection invariants: every template compiles and names
/// are unique within `(dataset, variant)`.
pub fn validate_templates(templates: &[PromptTemplate]) -> Result<(), TemplateError> {
    let mut seen = HashSet::new();
    for tpl in templates {
        tpl.validate()?;
        if !seen.insert((tpl.dataset.as_str(), tpl.variant, tpl.name.as_str())) {
            return Err(TemplateError::DuplicateName {
                dataset: tpl.dataset.clone(),
                variant: tpl.variant,
                name: tpl.name.clone(),
            });
        }
    }
    Ok(())
}

/// Loads a template file: one JSON array of [`PromptTemplate`] objects.
pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, TemplateError> {
    let text = fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let templates: Vec<PromptTemplate> =
        serde_json::from_str(&text).map_err(|source| TemplateError::Json {
            path: path.display().to_string(),
            source,
        })?;
    validate_templates(&templates)?;
    Ok(templates)
}
