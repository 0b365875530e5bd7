use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use xmtf::audit::{self, AuditConfig, LanguageIdentifier};
use xmtf::eval::gen::{self, PassAtKInput, Smoothing};
use xmtf::eval::rank::{self, EvalTask, RankOptions};
use xmtf::eval::Scorer;
use xmtf::mixture::{self, MixtureConfig, MixtureVariant, UppercaseTranslator};
use xmtf::pack::{self, AttentionPolicy, SeparatorPolicy};
use xmtf::scorers::{
    ConstantScorer, LookupIdentifier, NGramMode, NGramScorer, ScriptIdentifier, TableScorer, UniformRandomScorer,
};
use xmtf::shard;
use xmtf::template::{self, PromptVariant, RenderedExample};
use xmtf::tokenizer::{ByteTokenizer, Tokenizer, WhitespaceTokenizer};

#[derive(Parser, Debug)]
#[command(name = "xmtf", version, about = "Multilingual prompted finetuning data and evaluation toolkit")]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores). Output does not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Render every record of a dataset under every template.
    Render(RenderArgs),
    /// Sample a multilingual prompted mixture.
    Mix(MixArgs),
    /// Tokenize, pack and shard a rendered mixture.
    Pack(PackArgs),
    /// Rank-classification accuracy per prompt.
    Eval(EvalArgs),
    /// Sentence-level language audit of a corpus.
    Audit(AuditArgs),
    /// Mean premise/hypothesis edit distance per language and label.
    Labeldist(LabeldistArgs),
    /// Unbiased pass@k from per-problem sample counts.
    Passk(PasskArgs),
    /// Corpus BLEU.
    Bleu(BleuArgs),
    /// Length and comment statistics of generations.
    Genstats(GenstatsArgs),
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    /// Write the JSON report here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report to stdout instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Serialize)]
struct RenderArgs {
    /// JSON array of prompt templates.
    #[arg(long)]
    templates: PathBuf,
    /// JSON-lines records.
    #[arg(long)]
    records: PathBuf,
    /// Language tag stamped on each example.
    #[arg(long, default_value = "en")]
    language: String,
    /// Output JSON-lines file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    EnOnly,
    EnPlusMt,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TranslatorArg {
    None,
    /// Upper-cases prompt text; for smoke tests of the MT path.
    Uppercase,
}

#[derive(Args, Debug, Serialize)]
struct MixArgs {
    /// JSON array of dataset specs.
    #[arg(long)]
    specs: PathBuf,
    /// Target language proportions, e.g. `en=0.39,fr=0.61`.
    #[arg(long, value_delimiter = ',', required = true)]
    proportions: Vec<String>,
    #[arg(long)]
    total: usize,
    #[arg(long, env = "XMTF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "en-only")]
    variant: VariantArg,
    /// Derive machine-translated templates before sampling.
    #[arg(long, value_enum, default_value = "none")]
    translator: TranslatorArg,
    /// Output JSON-lines mixture.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TokenizerArg {
    Byte,
    Whitespace,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SeparatorArg {
    Space,
    EosToken,
    NewSpecial,
    EncoderDecoder,
}

impl From<SeparatorArg> for SeparatorPolicy {
    fn from(s: SeparatorArg) -> Self {
        match s {
            SeparatorArg::Space => SeparatorPolicy::Space,
            SeparatorArg::EosToken => SeparatorPolicy::EosToken,
            SeparatorArg::NewSpecial => SeparatorPolicy::NewSpecial,
            SeparatorArg::EncoderDecoder => SeparatorPolicy::EncoderDecoder,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AttentionArg {
    Causal,
    Prefix,
}

#[derive(Args, Debug, Serialize)]
struct PackArgs {
    /// JSON-lines of rendered examples.
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long, value_enum, default_value = "byte")]
    tokenizer: TokenizerArg,
    #[arg(long, default_value_t = pack::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, value_enum, default_value = "space")]
    separator: SeparatorArg,
    #[arg(long, value_enum, default_value = "causal")]
    attention: AttentionArg,
    #[arg(long, default_value_t = 4096)]
    shard_size: usize,
    /// Directory receiving shards, `index.json` and `pack.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScorerArg {
    /// Same score for every option.
    Constant,
    /// Hash-based uniform scores.
    Random,
    /// Fixed scores from a JSON fixture (`--scorer-file`).
    Table,
    /// Add-alpha n-gram model trained on `--scorer-file`.
    Ngram,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NGramModeArg {
    Char,
    Whitespace,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// JSON-lines records with a gold label field.
    #[arg(long)]
    records: PathBuf,
    /// JSON array of prompt templates; several prompt variants are reported
    /// side by side.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "en")]
    language: String,
    #[arg(long, default_value = "label")]
    label_field: String,
    #[arg(long, value_enum, default_value = "random")]
    scorer: ScorerArg,
    #[arg(long)]
    scorer_file: Option<PathBuf>,
    /// Name shown in the model column.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, env = "XMTF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    ngram_order: usize,
    #[arg(long, default_value_t = 0.1)]
    ngram_alpha: f64,
    #[arg(long, value_enum, default_value = "char")]
    ngram_mode: NGramModeArg,
    /// Divide each option's log-likelihood by its token count.
    #[arg(long)]
    length_normalize: bool,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LidArg {
    /// Dominant Unicode script.
    Script,
    /// Exact sentence lookup from `--lid-table`.
    Lookup,
}

#[derive(Args, Debug, Serialize)]
struct AuditArgs {
    /// JSON-lines of `{meta_language, text}`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    sample_rate: f64,
    #[arg(long, env = "XMTF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = audit::DEFAULT_CONFIDENCE_THRESHOLD)]
    confidence_threshold: f64,
    /// Total corpus tokens for the extrapolated per-language estimates.
    #[arg(long)]
    corpus_total_tokens: Option<f64>,
    #[arg(long, value_enum, default_value = "script")]
    lid: LidArg,
    /// JSON-lines of `{sentence, language, confidence}` for `--lid lookup`.
    #[arg(long)]
    lid_table: Option<PathBuf>,
    /// Tag reported for Latin-script text by `--lid script`.
    #[arg(long, default_value = "en")]
    latin_language: String,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct LabeldistArgs {
    /// JSON-lines of `{language, label, premise, hypothesis}`.
    #[arg(long)]
    samples: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct PasskArgs {
    /// JSON-lines of `{model, n, c}`, one line per problem.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    k: Vec<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Args, Debug, Serialize)]
struct BleuArgs {
    /// Hypotheses, one per line.
    #[arg(long)]
    hyps: PathBuf,
    /// References, one per line; repeat for multiple references.
    #[arg(long = "refs", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct GenstatsArgs {
    /// JSON-lines of generations (strings or `{"text": ...}`); one column
    /// per file, labelled by file stem.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "#")]
    comment_marker: String,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

fn io_error(err: &anyhow::Error) -> bool {
    err.chain().any(|c| c.downcast_ref::<io::Error>().is_some())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if io_error(&e) { 2 } else { 1 })
        }
    }
}

fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Render(a) => cmd_render(a),
        Command::Mix(a) => cmd_mix(cmd, a),
        Command::Pack(a) => cmd_pack(cmd, a),
        Command::Eval(a) => cmd_eval(cmd, a),
        Command::Audit(a) => cmd_audit(cmd, a),
        Command::Labeldist(a) => cmd_labeldist(cmd, a),
        Command::Passk(a) => cmd_passk(cmd, a),
        Command::Bleu(a) => cmd_bleu(cmd, a),
        Command::Genstats(a) => cmd_genstats(cmd, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes `{"run": <flags>, key: value}` to `--out`, then prints either that
/// document or the text table.
fn emit<T: Serialize>(run: &Command, out: &OutputArgs, key: &str, value: &T, table: &str) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("run".into(), serde_json::to_value(run)?);
    doc.insert(key.into(), serde_json::to_value(value)?);
    let doc = serde_json::Value::Object(doc);
    if let Some(path) = &out.out {
        write_json(path, &doc)?;
    }
    let mut stdout = io::stdout().lock();
    if out.json {
        serde_json::to_writer_pretty(&mut stdout, &doc)?;
        writeln!(stdout)?;
    } else {
        write!(stdout, "{table}")?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))
}

/// Non-blank lines parsed as JSON.
fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let templates = template::load_templates(&a.templates)?;
    let compiled = templates
        .iter()
        .map(|t| t.compile())
        .collect::<Result<Vec<_>, _>>()?;
    let records = mixture::read_jsonl_records(&a.records)?;
    let rendered: Vec<Vec<RenderedExample>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            compiled
                .iter()
                .map(|t| {
                    t.render_as(r, &a.language)
                        .with_context(|| format!("record {} under template `{}`", i + 1, t.template.name))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<RenderedExample> = rendered.into_iter().flatten().collect();
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            mixture::write_jsonl(&mut w, &flat)?;
            w.flush()?;
        }
        None => mixture::write_jsonl(io::stdout().lock(), &flat)?,
    }
    log::info!("rendered {} examples", flat.len());
    Ok(())
}

fn parse_proportions(items: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (lang, p) = item
            .split_once('=')
            .with_context(|| format!("proportion `{item}` is not LANG=VALUE"))?;
        let p: f64 = p.trim().parse().with_context(|| format!("proportion `{item}`"))?;
        ensure!(
            out.insert(lang.trim().to_string(), p).is_none(),
            "language `{lang}` listed twice"
        );
    }
    Ok(out)
}

fn cmd_mix(run: &Command, a: &MixArgs) -> Result<()> {
    let cfg = MixtureConfig {
        target_proportions: parse_proportions(&a.proportions)?,
        total_examples: a.total,
        seed: a.seed,
        variant: match a.variant {
            VariantArg::EnOnly => MixtureVariant::EnOnly,
            VariantArg::EnPlusMt => MixtureVariant::EnPlusMt,
        },
    };
    cfg.validate()?;
    let mut specs = mixture::load_dataset_specs(&a.specs)?;
    let mut dropped = Vec::new();
    if let TranslatorArg::Uppercase = a.translator {
        let outcome = mixture::derive_mt_variant(&specs, &UppercaseTranslator)?;
        specs = outcome.specs;
        dropped = outcome.dropped;
    }
    let (examples, manifest) = mixture::build_mixture(&specs, &cfg)?;

    let mut w = create(&a.out)?;
    mixture::write_jsonl(&mut w, &examples)?;
    w.flush().with_context(|| format!("writing {}", a.out.display()))?;

    let manifest_path = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    write_json(
        &manifest_path,
        &serde_json::json!({ "run": run, "manifest": manifest, "dropped_templates": dropped }),
    )?;
    let rows = mixture::report_language_distribution(&manifest)?;
    print!("{}", mixture::render_distribution_table(&rows));
    Ok(())
}

fn cmd_pack(run: &Command, a: &PackArgs) -> Result<()> {
    let examples: Vec<RenderedExample> = read_json_lines(&a.mixture)?;
    // The word vocabulary is fixed up front, in input order, so ids do not
    // depend on scheduling.
    let tok: Box<dyn Tokenizer> = match a.tokenizer {
        TokenizerArg::Byte => Box::new(ByteTokenizer),
        TokenizerArg::Whitespace => Box::new(WhitespaceTokenizer::with_vocab(
            examples
                .iter()
                .flat_map(|e| e.input_text.split_whitespace().chain(e.target_text.split_whitespace())),
        )),
    };
    let policy = SeparatorPolicy::from(a.separator);
    let pairs = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| pack::serialize_pair(e, tok.as_ref(), policy).with_context(|| format!("example {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let attention = match a.attention {
        AttentionArg::Causal => AttentionPolicy::Causal,
        AttentionArg::Prefix => AttentionPolicy::PrefixNoncausal,
    };
    let (seqs, stats) = pack::pack(&pairs, a.max_len, attention)?;
    let index = shard::write_shards(&seqs, &a.out_dir, a.shard_size, a.max_len)?;
    write_json(
        &a.out_dir.join("pack.json"),
        &serde_json::json!({ "run": run, "stats": stats, "index": index }),
    )?;
    println!(
        "pairs {} packed {} skipped {} sequences {} tokens {} fill {:.4} shards {}",
        stats.pairs_seen,
        stats.pairs_packed,
        stats.skipped,
        stats.num_sequences,
        stats.total_tokens,
        stats.fill_ratio(),
        index.shards.len()
    );
    Ok(())
}

fn build_scorer(a: &EvalArgs) -> Result<Box<dyn Scorer>> {
    let file = || a.scorer_file.as_deref().context("--scorer-file is required for this scorer");
    Ok(match a.scorer {
        ScorerArg::Constant => Box::new(ConstantScorer(0.0)),
        ScorerArg::Random => Box::new(UniformRandomScorer::new(a.seed)),
        ScorerArg::Table => Box::new(TableScorer::load(file()?)?),
        ScorerArg::Ngram => {
            let mode = match a.ngram_mode {
                NGramModeArg::Char => NGramMode::Char,
                NGramModeArg::Whitespace => NGramMode::Whitespace,
            };
            Box::new(NGramScorer::train_file(file()?, a.ngram_order, a.ngram_alpha, mode)?)
        }
    })
}

fn cmd_eval(run: &Command, a: &EvalArgs) -> Result<()> {
    let records = mixture::read_jsonl_records(&a.records)?;
    let prompts = template::load_templates(&a.prompts)?;
    let mut by_variant: BTreeMap<PromptVariant, Vec<_>> = BTreeMap::new();
    for p in prompts {
        by_variant.entry(p.variant).or_default().push(p);
    }
    let tasks: BTreeMap<PromptVariant, EvalTask> = by_variant
        .into_iter()
        .map(|(variant, prompts)| {
            let task = EvalTask {
                dataset: a.dataset.clone(),
                language: a.language.clone(),
                prompts,
                records: records.clone(),
                label_field: a.label_field.clone(),
            };
            (variant, task)
        })
        .collect();
    let scorer = build_scorer(a)?;
    let model = a
        .model
        .clone()
        .unwrap_or_else(|| format!("{:?}", a.scorer).to_lowercase());
    let opts = RankOptions {
        length_normalize: a.length_normalize,
        ..RankOptions::default()
    };
    let table = rank::compare_prompt_variants(scorer.as_ref(), &model, &tasks, &opts)?;
    let text = rank::render_variant_tables(std::slice::from_ref(&table));
    emit(run, &a.output, "report", &table, &text)
}

#[derive(serde::Deserialize)]
struct LidRow {
    sentence: String,
    language: String,
    confidence: f64,
}

fn cmd_audit(run: &Command, a: &AuditArgs) -> Result<()> {
    let cfg = AuditConfig {
        sample_rate: a.sample_rate,
        seed: a.seed,
        confidence_threshold: a.confidence_threshold,
    };
    cfg.validate()?;
    let lid: Box<dyn LanguageIdentifier> = match a.lid {
        LidArg::Script => Box::new(ScriptIdentifier {
            latin_language: a.latin_language.clone(),
        }),
        LidArg::Lookup => {
            let path = a.lid_table.as_deref().context("--lid lookup needs --lid-table")?;
            let rows: Vec<LidRow> = read_json_lines(path)?;
            Box::new(LookupIdentifier::new(
                rows.into_iter().map(|r| (r.sentence, r.language, r.confidence)),
            ))
        }
    };
    let docs = audit::read_corpus(&a.corpus)?;
    let mut report = audit::audit_corpus(&docs, lid.as_ref(), &cfg)?;
    let mut text = format!(
        "documents {} sampled {} sentences {} lid_errors {}\n",
        report.documents_total, report.documents_sampled, report.sentences, report.lid_errors
    );
    text.push_str(&audit::render_fraction_table(&report.fractions));
    if let Some(total) = a.corpus_total_tokens {
        report.extrapolated_tokens = audit::extrapolate_tokens(&report, total)?;
        report.corpus_total_tokens = Some(total);
        text.push_str(&format!("\nestimated tokens of {total:.0}\n"));
        for (lang, n) in &report.extrapolated_tokens {
            text.push_str(&format!("{lang:<10} {n:>16}\n"));
        }
        text.push_str(&format!("note: {}\n", report.note));
    }
    emit(run, &a.output, "report", &report, &text)
}

fn cmd_labeldist(run: &Command, a: &LabeldistArgs) -> Result<()> {
    let samples = audit::read_label_samples(&a.samples)?;
    let report = audit::label_distance_report(&samples)?;
    let text = audit::render_label_distance_table(&report);
    emit(run, &a.output, "report", &report, &text)
}

#[derive(serde::Deserialize)]
struct PasskRow {
    #[serde(default = "default_model")]
    model: String,
    n: u64,
    c: u64,
}

fn default_model() -> String {
    "model".into()
}

fn cmd_passk(run: &Command, a: &PasskArgs) -> Result<()> {
    ensure!(!a.k.is_empty(), "--k is empty");
    let rows: Vec<PasskRow> = read_json_lines(&a.input)?;
    let mut models: Vec<(String, Vec<(u64, u64)>)> = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        PassAtKInput { n: row.n, c: row.c, k: 1 }
            .validate()
            .with_context(|| format!("{}:{}", a.input.display(), i + 1))?;
        match models.iter_mut().find(|(m, _)| *m == row.model) {
            Some((_, problems)) => problems.push((row.n, row.c)),
            None => models.push((row.model, vec![(row.n, row.c)])),
        }
    }
    let report: BTreeMap<&str, BTreeMap<String, f64>> = models
        .iter()
        .map(|(m, problems)| {
            let per_k = gen::pass_at_k_report(problems, &a.k)
                .into_iter()
                .map(|(k, v)| (format!("pass@{k}"), v))
                .collect();
            (m.as_str(), per_k)
        })
        .collect();
    let text = gen::render_pass_at_k_table(&models, &a.k);
    emit(run, &a.output, "report", &report, &text)
}

fn cmd_bleu(run: &Command, a: &BleuArgs) -> Result<()> {
    let hyps = read_lines(&a.hyps)?;
    let mut references: Vec<Vec<String>> = vec![Vec::new(); hyps.len()];
    for path in &a.refs {
        let lines = read_lines(path)?;
        if lines.len() != hyps.len() {
            bail!(
                "{} has {} lines but {} has {}",
                path.display(),
                lines.len(),
                a.hyps.display(),
                hyps.len()
            );
        }
        for (slot, line) in references.iter_mut().zip(lines) {
            slot.push(line);
        }
    }
    let smoothing = match a.smoothing {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    };
    let score = gen::corpus_bleu(&hyps, &references, a.order, smoothing)?;
    let precisions: Vec<String> = score.precisions.iter().map(|p| format!("{:.1}", p * 100.0)).collect();
    let text = format!(
        "BLEU = {:.2} {} (BP = {:.3}, hyp_len = {}, ref_len = {})\n",
        score.score * 100.0,
        precisions.join("/"),
        score.brevity_penalty,
        score.hypothesis_length,
        score.reference_length
    );
    emit(run, &a.output, "report", &score, &text)
}

fn generation_text(value: serde_json::Value) -> Result<String> {
    match value {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Object(mut o) => match o.remove("text") {
            Some(serde_json::Value::String(s)) => Ok(s),
            _ => bail!("object without a string `text` field"),
        },
        other => bail!("expected a string or an object, got {other}"),
    }
}

fn cmd_genstats(run: &Command, a: &GenstatsArgs) -> Result<()> {
    let mut columns = Vec::new();
    for path in &a.inputs {
        let values: Vec<serde_json::Value> = read_json_lines(path)?;
        let texts = values
            .into_iter()
            .map(generation_text)
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("reading generations from {}", path.display()))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        columns.push((label, gen::generation_stats(&texts, &a.comment_marker)));
    }
    let text = gen::render_generation_stats_table(&columns);
    let report: BTreeMap<&str, _> = columns.iter().map(|(l, s)| (l.as_str(), s)).collect();
    emit(run, &a.output, "report", &report, &text)
}
