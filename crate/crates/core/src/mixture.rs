//! Multitask mixture construction: language-proportional sampling over
//! rendered datasets, plus derivation of machine-translated prompt siblings.
//!
//! Sampling procedure, fixed so that manifests can be reproduced elsewhere:
//!
//! 1. Per-language counts come from `target * total` by largest remainder
//!    (ties broken by language tag order), so they sum to `total` exactly.
//! 2. A single ChaCha8 stream seeded with `seed` drives everything. Languages
//!    are visited in tag order; for each example three indices are drawn with
//!    `gen_range`: dataset (uniform over the language's non-holdout datasets
//!    in input order), record, then template.
//! 3. The concatenated stream is shuffled with the same generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::template::{
    load_templates, parse_template, validate_templates, CompiledTemplate, PromptTemplate,
    PromptVariant, Record, RenderError, RenderedExample, TemplateError,
};

/// Language tag for datasets whose prompts stay in English because the task
/// spans languages (translation, crosslingual summarization).
pub const CROSSLINGUAL: &str = "crosslingual";
pub const ENGLISH: &str = "en";

const PROPORTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MixtureError {
    #[error("invalid mixture config: {0}")]
    InvalidConfig(String),
    #[error("language `{0}` has a nonzero target proportion but no usable training data")]
    EmptyLanguage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: record is not a JSON object")]
    NotAnObject { path: PathBuf, line: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("rendering record {record} of `{dataset}` with `{template}`: {source}")]
    Render {
        dataset: String,
        template: String,
        record: usize,
        #[source]
        source: RenderError,
    },
    #[error("translator does not support {source_lang} -> {target_lang}")]
    UnsupportedLanguagePair {
        source_lang: String,
        target_lang: String,
    },
    #[error("translation failed: {0}")]
    Translation(String),
    #[error("manifest contains no examples")]
    EmptyManifest,
}

/// Task clusters of the training and evaluation collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCluster {
    MultipleChoiceQa,
    ExtractiveQa,
    ClosedBookQa,
    Sentiment,
    TopicClassification,
    StructureToText,
    Summarization,
    ParaphraseIdentification,
    Translation,
    Simplification,
    ProgramSynthesis,
    CodeMisc,
    CoreferenceResolution,
    SentenceCompletion,
    NaturalLanguageInference,
    WordSense,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    /// BCP-47 tag, or [`CROSSLINGUAL`].
    pub language: String,
    pub task_cluster: TaskCluster,
    pub records_path: PathBuf,
    #[serde(default)]
    pub templates: Vec<PromptTemplate>,
    /// Optional template file merged into `templates` by [`load_dataset_specs`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_path: Option<PathBuf>,
    #[serde(default)]
    pub holdout: bool,
}

impl DatasetSpec {
    pub fn is_crosslingual(&self) -> bool {
        self.language == CROSSLINGUAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MixtureVariant {
    /// English prompts only.
    EnOnly,
    /// English prompts plus their machine-translated siblings.
    EnPlusMt,
}

impl MixtureVariant {
    pub fn admits(self, variant: PromptVariant) -> bool {
        match self {
            MixtureVariant::EnOnly => variant == PromptVariant::En,
            MixtureVariant::EnPlusMt => matches!(variant, PromptVariant::En | PromptVariant::Mt),
        }
    }
}

impl fmt::Display for MixtureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixtureVariant::EnOnly => "EN_ONLY",
            MixtureVariant::EnPlusMt => "EN_PLUS_MT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub target_proportions: BTreeMap<String, f64>,
    pub total_examples: usize,
    pub seed: u64,
    pub variant: MixtureVariant,
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.total_examples == 0 {
            return Err(MixtureError::InvalidConfig("total_examples must be positive".into()));
        }
        if self.target_proportions.is_empty() {
            return Err(MixtureError::InvalidConfig("target_proportions is empty".into()));
        }
        for (lang, &p) in &self.target_proportions {
            if !(0.0..=1.0).contains(&p) {
                return Err(MixtureError::InvalidConfig(format!(
                    "proportion for `{lang}` is {p}, outside [0, 1]"
                )));
            }
        }
        let sum: f64 = self.target_proportions.values().sum();
        if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
            return Err(MixtureError::InvalidConfig(format!(
                "target proportions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `total_examples` over languages.
    pub fn allocate(&self) -> BTreeMap<String, usize> {
        let total = self.total_examples;
        let mut counts = BTreeMap::new();
        let mut remainders = Vec::new();
        let mut assigned = 0usize;
        for (lang, &p) in &self.target_proportions {
            let exact = p * total as f64;
            let floor = exact.floor() as usize;
            assigned += floor;
            counts.insert(lang.clone(), floor);
            remainders.push((exact - floor as f64, lang.clone()));
        }
        // Stable sort keeps tag order among equal remainders.
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (_, lang) in remainders.into_iter().take(total.saturating_sub(assigned)) {
            *counts.get_mut(&lang).expect("allocated above") += 1;
        }
        counts
    }
}

/// Reproducibility record of a built mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub seed: u64,
    pub variant: MixtureVariant,
    pub total_examples: usize,
    pub target_proportions: BTreeMap<String, f64>,
    pub dataset_counts: BTreeMap<String, usize>,
    pub language_counts: BTreeMap<String, usize>,
    pub language_proportions: BTreeMap<String, f64>,
    pub prompt_variant_counts: BTreeMap<String, usize>,
    /// Languages present in the inputs but not in the target distribution.
    pub excluded_languages: Vec<String>,
    pub sampling: String,
    /// SHA-256 of the emitted JSON-lines stream, hex.
    pub checksum: String,
}

pub const SAMPLING_POLICY: &str = "with-replacement; uniform over datasets within a language, \
then uniform over records, then uniform over admitted templates; largest-remainder language \
counts; seeded global shuffle (ChaCha8)";

/// A dataset with its records loaded and templates compiled.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub records: Vec<Record>,
}

pub fn read_jsonl_records(path: &Path) -> Result<Vec<Record>, MixtureError> {
    let file = fs::File::open(path).map_err(|source| MixtureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| MixtureError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
        match value {
            serde_json::Value::Object(map) => out.push(map),
            _ => {
                return Err(MixtureError::NotAnObject {
                    path: path.to_path_buf(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(out)
}

/// Reads a JSON array of dataset specs. Relative `records_path` and
/// `templates_path` entries resolve against the spec file's directory, and
/// `templates_path` files are merged into `templates`.
pub fn load_dataset_specs(path: &Path) -> Result<Vec<DatasetSpec>, MixtureError> {
    let text = fs::read_to_string(path).map_err(|source| MixtureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut specs: Vec<DatasetSpec> =
        serde_json::from_str(&text).map_err(|source| MixtureError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for spec in &mut specs {
        if spec.records_path.is_relative() {
            spec.records_path = base.join(&spec.records_path);
        }
        if let Some(tp) = spec.templates_path.take() {
            let tp = if tp.is_relative() { base.join(tp) } else { tp };
            spec.templates.extend(load_templates(&tp)?);
            spec.templates_path = Some(tp);
        }
        validate_templates(&spec.templates)?;
    }
    Ok(specs)
}

pub fn load_datasets(specs: &[DatasetSpec]) -> Result<Vec<LoadedDataset>, MixtureError> {
    specs
        .iter()
        .map(|spec| {
            Ok(LoadedDataset {
                spec: spec.clone(),
                records: read_jsonl_records(&spec.records_path)?,
            })
        })
        .collect()
}

/// Serializes examples as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn stream_checksum(examples: &[RenderedExample]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, examples).expect("writing to memory");
    let digest = Sha256::digest(&buf);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Pool<'a> {
    dataset: &'a LoadedDataset,
    templates: Vec<CompiledTemplate>,
}

/// One sampled draw, before rendering.
#[derive(Debug, Clone, Copy)]
struct Draw {
    pool: usize,
    record: usize,
    template: usize,
}

/// Builds the mixture from specs on disk.
pub fn build_mixture(
    specs: &[DatasetSpec],
    cfg: &MixtureConfig,
) -> Result<(Vec<RenderedExample>, MixtureManifest), MixtureError> {
    cfg.validate()?;
    let datasets = load_datasets(specs)?;
    build_mixture_from(&datasets, cfg)
}

/// Builds the mixture from already-loaded datasets.
pub fn build_mixture_from(
    datasets: &[LoadedDataset],
    cfg: &MixtureConfig,
) -> Result<(Vec<RenderedExample>, MixtureManifest), MixtureError> {
    cfg.validate()?;

    let mut pools: BTreeMap<&str, Vec<Pool<'_>>> = BTreeMap::new();
    let mut excluded = BTreeSet::new();
    for ds in datasets.iter().filter(|d| !d.spec.holdout) {
        let lang = ds.spec.language.as_str();
        if !cfg.target_proportions.contains_key(lang) {
            excluded.insert(lang.to_string());
            continue;
        }
        let templates = ds
            .spec
            .templates
            .iter()
            .filter(|t| cfg.variant.admits(t.variant))
            .map(PromptTemplate::compile)
            .collect::<Result<Vec<_>, _>>()?;
        if templates.is_empty() || ds.records.is_empty() {
            log::warn!("dataset `{}` has no records or admitted templates; skipped", ds.spec.name);
            continue;
        }
        pools.entry(lang).or_default().push(Pool { dataset: ds, templates });
    }
    for lang in &excluded {
        log::warn!("language `{lang}` is not in the target distribution; its datasets are excluded");
    }

    let allocation = cfg.allocate();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws: Vec<(&str, Draw)> = Vec::with_capacity(cfg.total_examples);
    for (lang, &count) in &allocation {
        if count == 0 {
            continue;
        }
        let lang_pools = pools
            .get(lang.as_str())
            .ok_or_else(|| MixtureError::EmptyLanguage(lang.clone()))?;
        for _ in 0..count {
            let pool = rng.gen_range(0..lang_pools.len());
            let record = rng.gen_range(0..lang_pools[pool].dataset.records.len());
            let template = rng.gen_range(0..lang_pools[pool].templates.len());
            draws.push((lang_pools[pool].dataset.spec.language.as_str(), Draw { pool, record, template }));
        }
    }

    let mut examples = draws
        .par_iter()
        .map(|&(lang, d)| {
            let pool = &pools[lang][d.pool];
            let tpl = &pool.templates[d.template];
            tpl.render_as(&pool.dataset.records[d.record], lang)
                .map_err(|source| MixtureError::Render {
                    dataset: pool.dataset.spec.name.clone(),
                    template: tpl.template.name.clone(),
                    record: d.record,
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let variant_of: Vec<PromptVariant> = draws
        .iter()
        .map(|&(lang, d)| pools[lang][d.pool].templates[d.template].template.variant)
        .collect();

    let mut prompt_variant_counts = BTreeMap::new();
    for v in &variant_of {
        *prompt_variant_counts.entry(v.to_string()).or_insert(0) += 1;
    }

    examples.shuffle(&mut rng);

    let mut dataset_counts = BTreeMap::new();
    let mut language_counts = BTreeMap::new();
    for ex in &examples {
        *dataset_counts.entry(ex.dataset.clone()).or_insert(0) += 1;
        *language_counts.entry(ex.language.clone()).or_insert(0) += 1;
    }
    let language_proportions = proportions(&language_counts);
    let manifest = MixtureManifest {
        seed: cfg.seed,
        variant: cfg.variant,
        total_examples: examples.len(),
        target_proportions: cfg.target_proportions.clone(),
        dataset_counts,
        language_counts,
        language_proportions,
        prompt_variant_counts,
        excluded_languages: excluded.into_iter().collect(),
        sampling: SAMPLING_POLICY.to_string(),
        checksum: stream_checksum(&examples),
    };
    Ok((examples, manifest))
}

fn proportions(counts: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageShare {
    pub language: String,
    pub count: usize,
    pub fraction: f64,
}

/// Per-language counts and fractions, largest share first.
pub fn report_language_distribution(manifest: &MixtureManifest) -> Result<Vec<LanguageShare>, MixtureError> {
    let total: usize = manifest.language_counts.values().sum();
    if total == 0 {
        return Err(MixtureError::EmptyManifest);
    }
    let mut rows: Vec<LanguageShare> = manifest
        .language_counts
        .iter()
        .map(|(lang, &count)| LanguageShare {
            language: lang.clone(),
            count,
            fraction: count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.language.cmp(&b.language)));
    Ok(rows)
}

pub fn render_distribution_table(rows: &[LanguageShare]) -> String {
    let mut out = String::from("language      count   percent\n");
    for r in rows {
        let _ = writeln!(out, "{:<10} {:>8} {:>8.2}%", r.language, r.count, r.fraction * 100.0);
    }
    out
}

// Machine-translated prompt variants.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub source_lang: String,
    pub target_lang: String,
    pub segments: Vec<String>,
}

/// A machine-translation backend. Must return exactly one output segment per
/// input segment and tolerate concurrent calls.
pub trait Translator: Send + Sync {
    fn supports(&self, _source_lang: &str, _target_lang: &str) -> bool {
        true
    }

    fn translate(&self, req: &TranslationRequest) -> Result<Vec<String>, String>;
}

const MASK_OPEN: char = '\u{E000}';
const MASK_CLOSE: char = '\u{E001}';

/// Replaces every `{{...}}` span with an opaque placeholder. Returns the
/// masked text and the spans in order.
pub fn mask_expressions(src: &str) -> Result<(String, Vec<String>), crate::template::ParseError> {
    let ast = parse_template(src)?;
    let mut masked = String::new();
    let mut spans = Vec::new();
    for node in ast.nodes() {
        if node.is_expression() {
            let _ = write!(masked, "{MASK_OPEN}{}{MASK_CLOSE}", spans.len());
            spans.push(node.source().to_string());
        } else {
            masked.push_str(node.source());
        }
    }
    Ok((masked, spans))
}

/// Restores placeholders; every placeholder must occur exactly once.
pub fn unmask_expressions(masked: &str, spans: &[String]) -> Result<String, String> {
    let mut out = String::new();
    let mut used = vec![false; spans.len()];
    let mut chars = masked.chars();
    while let Some(c) = chars.next() {
        match c {
            MASK_OPEN => {
                let mut digits = String::new();
                loop {
                    match chars.next() {
                        Some(MASK_CLOSE) => break,
                        Some(d) if d.is_ascii_digit() => digits.push(d),
                        _ => return Err("placeholder mangled".into()),
                    }
                }
                let i: usize = digits.parse().map_err(|_| "placeholder lost its index".to_string())?;
                match used.get_mut(i) {
                    Some(seen) if !*seen => *seen = true,
                    Some(_) => return Err(format!("placeholder {i} duplicated")),
                    None => return Err(format!("unknown placeholder {i}")),
                }
                out.push_str(&spans[i]);
            }
            MASK_CLOSE => return Err("stray placeholder terminator".into()),
            c => out.push(c),
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(format!("placeholder {i} dropped"));
    }
    Ok(out)
}

/// A machine-translated sibling that could not be kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTemplate {
    pub dataset: String,
    pub template: String,
    /// Why the translated template was rejected.
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtOutcome {
    pub specs: Vec<DatasetSpec>,
    pub dropped: Vec<DroppedTemplate>,
}

fn translate_template(
    tpl: &PromptTemplate,
    target_lang: &str,
    translator: &dyn Translator,
) -> Result<Result<PromptTemplate, String>, MixtureError> {
    let (input_masked, input_spans) = match mask_expressions(&tpl.input_src) {
        Ok(m) => m,
        Err(e) => return Ok(Err(format!("source template does not parse: {e}"))),
    };
    let (target_masked, target_spans) = match mask_expressions(&tpl.target_src) {
        Ok(m) => m,
        Err(e) => return Ok(Err(format!("source template does not parse: {e}"))),
    };
    let mut choice_spans = Vec::new();
    let mut segments = vec![input_masked, target_masked];
    for choice in tpl.answer_choices.iter().flatten() {
        match mask_expressions(choice) {
            Ok((masked, spans)) => {
                segments.push(masked);
                choice_spans.push(spans);
            }
            Err(e) => return Ok(Err(format!("answer choice does not parse: {e}"))),
        }
    }
    let req = TranslationRequest {
        source_lang: tpl.prompt_language.clone(),
        target_lang: target_lang.to_string(),
        segments,
    };
    let out = translator.translate(&req).map_err(MixtureError::Translation)?;
    if out.len() != req.segments.len() {
        return Ok(Err(format!(
            "translator returned {} segments for {}",
            out.len(),
            req.segments.len()
        )));
    }
    let input_src = match unmask_expressions(&out[0], &input_spans) {
        Ok(s) => s,
        Err(e) => return Ok(Err(format!("input side: {e}"))),
    };
    let target_src = match unmask_expressions(&out[1], &target_spans) {
        Ok(s) => s,
        Err(e) => return Ok(Err(format!("target side: {e}"))),
    };
    let mut choices = Vec::with_capacity(choice_spans.len());
    for (text, spans) in out[2..].iter().zip(&choice_spans) {
        match unmask_expressions(text, spans) {
            Ok(c) => choices.push(c),
            Err(e) => return Ok(Err(format!("answer choice: {e}"))),
        }
    }
    let sibling = PromptTemplate {
        name: tpl.name.clone(),
        dataset: tpl.dataset.clone(),
        prompt_language: target_lang.to_string(),
        variant: PromptVariant::Mt,
        inverted: tpl.inverted,
        input_src,
        target_src,
        answer_choices: tpl.answer_choices.as_ref().map(|_| choices),
    };
    if let Err(e) = sibling.validate() {
        return Ok(Err(e.to_string()));
    }
    Ok(Ok(sibling))
}

/// Adds a machine-translated sibling for every English template of every
/// monolingual non-English dataset. English and crosslingual datasets pass
/// through unchanged. Siblings whose translation breaks the template are
/// dropped and reported; the English original is kept either way.
pub fn derive_mt_variant(specs: &[DatasetSpec], translator: &dyn Translator) -> Result<MtOutcome, MixtureError> {
    let mut out_specs = Vec::with_capacity(specs.len());
    let mut dropped = Vec::new();
    for spec in specs {
        if spec.is_crosslingual() || spec.language == ENGLISH {
            out_specs.push(spec.clone());
            continue;
        }
        let has_mt: BTreeSet<&str> = spec
            .templates
            .iter()
            .filter(|t| t.variant == PromptVariant::Mt)
            .map(|t| t.name.as_str())
            .collect();
        let todo: Vec<&PromptTemplate> = spec
            .templates
            .iter()
            .filter(|t| t.variant == PromptVariant::En && !has_mt.contains(t.name.as_str()))
            .collect();
        for t in &todo {
            if !translator.supports(&t.prompt_language, &spec.language) {
                return Err(MixtureError::UnsupportedLanguagePair {
                    source_lang: t.prompt_language.clone(),
                    target_lang: spec.language.clone(),
                });
            }
        }
        let results = todo
            .par_iter()
            .map(|t| translate_template(t, &spec.language, translator))
            .collect::<Result<Vec<_>, _>>()?;
        let mut new_spec = spec.clone();
        for (t, result) in todo.iter().zip(results) {
            match result {
                Ok(sibling) => new_spec.templates.push(sibling),
                Err(reason) => {
                    log::warn!(
                        "dropping MT sibling of `{}` for `{}`: {reason}",
                        t.name,
                        spec.name
                    );
                    dropped.push(DroppedTemplate {
                        dataset: spec.name.clone(),
                        template: t.name.clone(),
                        reason,
                    });
                }
            }
        }
        out_specs.push(new_spec);
    }
    Ok(MtOutcome {
        specs: out_specs,
        dropped,
    })
}

/// Test translator that upper-cases every segment.
#[derive(Debug, Clone, Copy, Default)]
pub struct UppercaseTranslator;

impl Translator for UppercaseTranslator {
    fn translate(&self, req: &TranslationRequest) -> Result<Vec<String>, String> {
        Ok(req.segments.iter().map(|s| s.to_uppercase()).collect())
    }
}
