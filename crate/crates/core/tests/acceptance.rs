//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

// `!(x <= tol)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use xmtf::audit::{self, AuditConfig, AuditDoc, AuditReport, LabelSample, NliLabel};
use xmtf::eval::gen::{self, PassAtKInput, Smoothing};
use xmtf::eval::rank::{self, EvalTask, RankOptions};
use xmtf::eval::{GenParams, Scorer};
use xmtf::mixture::{self, DatasetSpec, LoadedDataset, MixtureConfig, MixtureVariant, TaskCluster};
use xmtf::pack::{self, AttentionPolicy, PackedSequence, SeparatorPolicy, SerializedPair};
use xmtf::scorers::{
    ngram_train, AlwaysEosScorer, ConstantScorer, LookupIdentifier, NGramMode, ScriptedScorer, TableScorer,
    UniformRandomScorer,
};
use xmtf::shard;
use xmtf::template::{parse_template, PromptTemplate, PromptVariant, Record};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn record(v: serde_json::Value) -> Record {
    v.as_object().expect("object").clone()
}

fn random_pair(rng: &mut ChaCha8Rng, max_input: usize, max_target: usize) -> SerializedPair {
    let n_in = rng.gen_range(1..=max_input);
    let n_tg = rng.gen_range(1..=max_target);
    SerializedPair {
        input_ids: (0..n_in).map(|_| rng.gen_range(0..50_000)).collect(),
        target_ids: (0..n_tg).map(|_| rng.gen_range(0..50_000)).collect(),
        separator_policy: SeparatorPolicy::Space,
    }
}

fn check_weights(seq: &PackedSequence) -> Result<(), String> {
    for (input, target) in seq.segment_spans() {
        if let Some(w) = seq.loss_weights[input].iter().find(|&&w| w != 0.0) {
            return Err(format!("input weight {w} is not 0"));
        }
        let sum: f64 = seq.loss_weights[target].iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("target weights sum to {sum}"));
        }
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut segments = 0usize;
    for _ in 0..10_000 {
        let max_len = rng.gen_range(16..=256);
        let n_pairs = rng.gen_range(1..=12);
        let pairs: Vec<SerializedPair> = (0..n_pairs).map(|_| random_pair(&mut rng, 40, 60)).collect();
        let attention = if rng.gen_bool(0.5) {
            AttentionPolicy::Causal
        } else {
            AttentionPolicy::PrefixNoncausal
        };
        let (seqs, _) = pack::pack(&pairs, max_len, attention).map_err(|e| e.to_string())?;
        let bytes = shard::encode_shard(&seqs, max_len).map_err(|e| e.to_string())?;
        let (_, decoded) = shard::decode_shard(&bytes, Path::new("mem")).map_err(|e| e.to_string())?;
        for seq in seqs.iter().chain(&decoded) {
            check_weights(seq)?;
            segments += seq.num_segments();
        }
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("10000 shards, {segments} segments checked in memory and after decoding, {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut skipped_total = 0usize;
    let mut round_trips = 0usize;
    for stream in 0..5_000 {
        let max_len = rng.gen_range(8..=128);
        let n = rng.gen_range(0..=40);
        let pairs: Vec<SerializedPair> = (0..n).map(|_| random_pair(&mut rng, 48, 48)).collect();
        let (seqs, stats) = pack::pack(&pairs, max_len, AttentionPolicy::Causal).map_err(|e| e.to_string())?;

        let kept: Vec<&SerializedPair> = pairs.iter().filter(|p| p.len() <= max_len).collect();
        let expect_skipped = pairs.len() - kept.len();
        check!(stats.skipped == expect_skipped, "stream {stream}: skipped {} vs {expect_skipped}", stats.skipped);
        skipped_total += expect_skipped;

        let mut emitted = Vec::new();
        for seq in &seqs {
            check!(seq.len() <= max_len, "stream {stream}: sequence of {} > {max_len}", seq.len());
            seq.check(max_len).map_err(|e| format!("stream {stream}: {e}"))?;
            for (input, target) in seq.segment_spans() {
                emitted.push((seq.token_ids[input].to_vec(), seq.token_ids[target].to_vec()));
            }
        }
        check!(emitted.len() == kept.len(), "stream {stream}: {} segments for {} pairs", emitted.len(), kept.len());
        for (got, want) in emitted.iter().zip(&kept) {
            check!(
                got.0 == want.input_ids && got.1 == want.target_ids,
                "stream {stream}: a segment differs from its pair"
            );
        }

        if stream % 25 == 0 {
            let sub = dir.path().join(format!("s{stream}"));
            let shard_size = rng.gen_range(1..=4);
            shard::write_shards(&seqs, &sub, shard_size, max_len).map_err(|e| e.to_string())?;
            let (_, back) = shard::read_shards(&sub).map_err(|e| e.to_string())?;
            check!(back.len() == seqs.len(), "stream {stream}: read back {} of {}", back.len(), seqs.len());
            for (a, b) in seqs.iter().zip(&back) {
                let bits = |s: &PackedSequence| s.loss_weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
                check!(a == b && bits(a) == bits(b), "stream {stream}: shard round trip differs");
            }
            round_trips += 1;
        }
    }
    Ok(format!("5000 streams, {skipped_total} oversize pairs skipped exactly, {round_trips} shard round trips"))
}

fn option_prompt(name: &str, choices: &[&str]) -> PromptTemplate {
    PromptTemplate {
        name: name.into(),
        dataset: "synthetic".into(),
        prompt_language: "en".into(),
        variant: PromptVariant::En,
        inverted: false,
        input_src: format!("[{name}] {{{{text}}}}"),
        target_src: "{{Choices[label]}}".into(),
        answer_choices: Some(choices.iter().map(|c| c.to_string()).collect()),
    }
}

fn synthetic_task(options: usize, n: usize, seed: u64) -> EvalTask {
    let choices: Vec<String> = (0..options).map(|i| format!("option{i}")).collect();
    let refs: Vec<&str> = choices.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EvalTask {
        dataset: format!("synthetic-{options}"),
        language: "en".into(),
        prompts: (0..5).map(|i| option_prompt(&format!("p{i}"), &refs)).collect(),
        records: (0..n)
            .map(|i| record(json!({"text": format!("item {i}"), "label": rng.gen_range(0..options)})))
            .collect(),
        label_field: "label".into(),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let scorer = UniformRandomScorer::new(3);
    let mut parts = Vec::new();
    for (options, expected) in [(2usize, 0.50), (3, 0.333)] {
        let task = synthetic_task(options, 10_000, options as u64);
        let report = rank::evaluate_task(&scorer, &task, &RankOptions::default()).map_err(|e| e.to_string())?;
        check!(
            (report.median_accuracy - expected).abs() <= 0.02,
            "{options} options: median accuracy {} outside {expected} +/- 0.02",
            report.median_accuracy
        );
        parts.push(format!("{options} options median {:.4}", report.median_accuracy));
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{}, {elapsed:.2?}", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    let choices = ["Yes", "Maybe", "No"];
    let labels: Vec<usize> = (0..40).map(|i| (i * 7 + i / 3) % 3).collect();
    let task = EvalTask {
        dataset: "fixture".into(),
        language: "en".into(),
        prompts: vec![option_prompt("a", &choices), option_prompt("b", &choices)],
        records: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| record(json!({"text": format!("premise {i}"), "label": l})))
            .collect(),
        label_field: "label".into(),
    };
    let mut entries = Vec::new();
    for prompt in &task.prompts {
        let compiled = prompt.compile().map_err(|e| e.to_string())?;
        for (r, &gold) in task.records.iter().zip(&labels) {
            let context = format!("{} ", compiled.input.render(r, None).map_err(|e| e.to_string())?);
            for (i, c) in choices.iter().enumerate() {
                let score = if i == gold { -1.0 + 0.1 } else { -1.0 };
                entries.push(((context.clone(), c.to_string()), score));
            }
        }
    }
    let opts = RankOptions::default();
    let oracle = rank::evaluate_task(&TableScorer::new(entries, -100.0), &task, &opts).map_err(|e| e.to_string())?;
    for p in &oracle.per_prompt {
        check!(p.accuracy == 1.0, "table scorer accuracy {} on {}", p.accuracy, p.prompt);
    }

    let zeros = labels.iter().filter(|&&l| l == 0).count();
    let predicted = zeros as f64 / labels.len() as f64;
    let constant = rank::evaluate_task(&ConstantScorer(-2.0), &task, &opts).map_err(|e| e.to_string())?;
    for p in &constant.per_prompt {
        check!(p.accuracy == predicted, "constant scorer accuracy {} vs {predicted}", p.accuracy);
    }
    Ok(format!("table scorer 1.0 on every prompt; constant scorer {zeros}/{} = {predicted}", labels.len()))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut cases = 0usize;
    for n in 1..=12u64 {
        for c in 0..=n {
            for k in 1..=n {
                let (mut hit, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if u64::from(mask.count_ones()) != k {
                        continue;
                    }
                    total += 1;
                    if mask & ((1u32 << c) - 1) != 0 {
                        hit += 1;
                    }
                }
                let exact = Ratio::new(hit, total);
                let want = *exact.numer() as f64 / *exact.denom() as f64;
                let got = gen::pass_at_k(PassAtKInput { n, c, k }).map_err(|e| e.to_string())?;
                check!(got == want, "n={n} c={c} k={k}: {got} vs {want}");
                cases += 1;
            }
            let p1 = gen::pass_at_k(PassAtKInput { n, c, k: 1 }).map_err(|e| e.to_string())?;
            check!(p1 == c as f64 / n as f64, "pass@1 n={n} c={c} is {p1}");
        }
    }
    let spot = gen::pass_at_k(PassAtKInput { n: 5, c: 2, k: 2 }).map_err(|e| e.to_string())?;
    check!(spot == 0.7, "pass@2 for n=5, c=2 is {spot}");
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{cases} (n, c, k) cases equal enumeration exactly, (5, 2, 2) = {spot}, {elapsed:.2?}"))
}

fn criterion_6() -> Outcome {
    let s = |v: &str| vec![v.to_string()];
    let bleu = |h: &str, r: &str, order| gen::corpus_bleu(&s(h), &[s(r)], order, Smoothing::None).map_err(|e| e.to_string());
    let same = bleu("a quick brown fox jumps over the lazy dog", "a quick brown fox jumps over the lazy dog", 4)?;
    check!(same.score == 1.0, "BLEU(h, h) = {}", same.score);
    let zero = bleu("one two three four", "five six seven eight", 4)?;
    check!(zero.score == 0.0, "zero overlap gives {}", zero.score);
    let brevity = bleu("the cat", "the cat sat", 2)?;
    let want = (-0.5f64).exp();
    check!((brevity.score - want).abs() <= 1e-6, "brevity case {} vs {want}", brevity.score);
    Ok(format!("identity 1, disjoint 0, brevity case {:.9}", brevity.score))
}

/// Edit distance from the recursive definition, memoized on suffix offsets.
fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: [char; 6] = ['a', 'b', 'c', 'é', 'ก', 'α'];
    let len = rng.gen_range(0..=8);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

/// Published per-language mean label distances.
const REFERENCE_MEANS: [(&str, [f64; 3]); 3] = [
    ("th", [79.08, 82.64, 81.52]),
    ("tr", [76.93, 80.59, 80.24]),
    ("el", [90.90, 95.10, 93.93]),
];

fn table_8(dir: &Path) -> Result<String, String> {
    let mut samples = Vec::new();
    for (lang, _) in REFERENCE_MEANS {
        let path = dir.join(format!("{lang}.jsonl"));
        let mut part = audit::read_label_samples(&path).map_err(|e| e.to_string())?;
        for s in &mut part {
            s.language = lang.to_string();
        }
        samples.extend(part);
    }
    let report = audit::label_distance_report(&samples).map_err(|e| e.to_string())?;
    for (lang, means) in REFERENCE_MEANS {
        for (label, want) in NliLabel::ALL.iter().zip(means) {
            let cell = report
                .get(lang, *label)
                .ok_or_else(|| format!("no {lang}/{label} samples"))?;
            check!((cell.mean_distance - want).abs() <= 0.01, "{lang} {label}: {} vs {want}", cell.mean_distance);
        }
    }
    Ok("reference means reproduced".into())
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let (a, b, c) = (random_string(&mut rng), random_string(&mut rng), random_string(&mut rng));
        let ab = audit::levenshtein(&a, &b);
        let ca: Vec<char> = a.chars().collect();
        let cb: Vec<char> = b.chars().collect();
        check!(ab == lev_oracle(&ca, &cb), "d({a:?}, {b:?}) = {ab} disagrees with the oracle");
        check!(audit::levenshtein(&a, &a) == 0, "d({a:?}, {a:?}) != 0");
        check!(ab == audit::levenshtein(&b, &a), "asymmetric on {a:?}, {b:?}");
        check!(
            audit::levenshtein(&a, &c) <= ab + audit::levenshtein(&b, &c),
            "triangle inequality fails on {a:?}, {b:?}, {c:?}"
        );
    }
    check!(audit::levenshtein("kitten", "sitting") == 3, "kitten/sitting");
    let one = audit::label_distance_report(&[LabelSample {
        language: "th".into(),
        label: "entailment".into(),
        premise: "kitten".into(),
        hypothesis: "sitting".into(),
    }])
    .map_err(|e| e.to_string())?;
    check!(one.cells[0].mean_distance == 3.0, "single-sample cell mean");

    let table = match std::env::var_os("XMTF_XNLI_DIR") {
        Some(dir) => table_8(&PathBuf::from(dir))?,
        None => "XNLI splits not supplied (set XMTF_XNLI_DIR), reference comparison not run".into(),
    };
    Ok(format!("10000 triples agree with the recursive oracle; {table}"))
}

fn language_dataset(lang: &str, n: usize) -> LoadedDataset {
    LoadedDataset {
        spec: DatasetSpec {
            name: format!("ds-{lang}"),
            language: lang.into(),
            task_cluster: TaskCluster::ParaphraseIdentification,
            records_path: PathBuf::new(),
            templates: vec![
                option_prompt("yes_no", &["no", "yes"]),
                option_prompt("true_false", &["false", "true"]),
            ],
            templates_path: None,
            holdout: false,
        },
        records: (0..n)
            .map(|i| record(json!({"text": format!("{lang} text {i}"), "label": i % 2})))
            .collect(),
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let datasets: Vec<LoadedDataset> = ["en", "fr", "zh", "sw", "hi"]
        .iter()
        .map(|l| language_dataset(l, 200))
        .collect();
    let cfg = MixtureConfig {
        target_proportions: BTreeMap::from([
            ("en".to_string(), 0.39),
            ("fr".to_string(), 0.20),
            ("zh".to_string(), 0.18),
            ("sw".to_string(), 0.08),
            ("hi".to_string(), 0.15),
        ]),
        total_examples: 100_000,
        seed: 39,
        variant: MixtureVariant::EnOnly,
    };
    let (examples, manifest) = mixture::build_mixture_from(&datasets, &cfg).map_err(|e| e.to_string())?;
    let en = examples.iter().filter(|e| e.language == "en").count() as f64 / examples.len() as f64;
    check!((0.38..=0.40).contains(&en), "English fraction {en}");
    let (_, again) = mixture::build_mixture_from(&datasets, &cfg).map_err(|e| e.to_string())?;
    check!(manifest.checksum == again.checksum, "checksums differ across equal seeds");
    check!(
        manifest.checksum == mixture::stream_checksum(&examples),
        "manifest checksum does not match the stream"
    );
    Ok(format!(
        "English fraction {en:.4} of {}, checksum {}.., {:.2?}",
        examples.len(),
        &manifest.checksum[..12],
        start.elapsed()
    ))
}

fn criterion_9() -> Outcome {
    let mut lid = LookupIdentifier::default().with_fallback("en", 0.99);
    let mut docs = Vec::new();
    for d in 0..100 {
        let mut sentences: Vec<String> = (0..9).map(|s| format!("This is English sentence {s} of document {d}.")).collect();
        let last = if d % 10 == 3 {
            let ru = format!("Это русское предложение номер {d}.");
            lid.insert(&ru, "ru", 0.98);
            ru
        } else {
            format!("This is English sentence 9 of document {d}.")
        };
        sentences.push(last);
        docs.push(AuditDoc {
            meta_language: "en".into(),
            text: sentences.join(" "),
        });
    }
    let report = audit::audit_corpus(&docs, &lid, &AuditConfig::default()).map_err(|e| e.to_string())?;
    check!(report.sentences == 1000, "{} sentences", report.sentences);
    let ru = report.fractions.get("ru").copied().unwrap_or(0.0);
    check!(ru == 0.01, "detected ru fraction {ru}");
    check!(format!("{ru:.4}") == "0.0100", "formatted {ru:.4}");

    let thai = AuditReport {
        fractions: BTreeMap::from([("th".to_string(), 0.00006)]),
        ..report.clone()
    };
    let est = audit::extrapolate_tokens(&thai, 366e9).map_err(|e| e.to_string())?["th"];
    check!(est == 21_960_000, "Thai estimate {est}");
    check!((est as f64).log10().floor() == 7.0, "estimate {est} is not of order 1e7");
    Ok(format!("ru fraction {ru:.4}; 0.00006 x 366e9 = {est} tokens"))
}

fn criterion_10() -> Outcome {
    let always = AlwaysEosScorer::default();
    for min in [1usize, 5, 64] {
        let params = GenParams {
            min_new_tokens: min,
            max_new_tokens: 128,
            ..GenParams::default()
        };
        let out = gen::generate_with_min_tokens(&always, "Translate: bonjour", &params).map_err(|e| e.to_string())?;
        let len = out.split_whitespace().count();
        check!(len >= min, "min {min}: emitted {len} tokens");
    }
    let params = GenParams {
        max_new_tokens: 32,
        ..GenParams::default()
    };
    let ngram = ngram_train("the cat sat on the mat and the dog sat on the log", 2, 0.5, NGramMode::Whitespace)
        .map_err(|e| e.to_string())?;
    let scripted = ScriptedScorer::new(&["a", "b"], "z");
    let scorers: [&dyn Scorer; 3] = [&always, &ngram, &scripted];
    for scorer in scorers {
        for ctx in ["", "the", "Translate: bonjour"] {
            let wrapped = gen::generate_with_min_tokens(scorer, ctx, &params).map_err(|e| e.to_string())?;
            let plain = scorer.generate(ctx, &params).map_err(|e| e.to_string())?;
            check!(wrapped.as_bytes() == plain.as_bytes(), "min=0 differs for context {ctx:?}");
        }
    }
    Ok("lengths >= min for min in {1, 5, 64}; min=0 byte-identical on three scorers".into())
}

fn criterion_11() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/templates.json");
    let templates = xmtf::template::load_templates(&path).map_err(|e| e.to_string())?;
    let spec = |name: &str, lang: &str| DatasetSpec {
        name: name.into(),
        language: lang.into(),
        task_cluster: TaskCluster::Other,
        records_path: PathBuf::from("unused.jsonl"),
        templates: templates.clone(),
        templates_path: None,
        holdout: false,
    };
    let specs = vec![spec("fixture-fr", "fr"), spec("fixture-x", mixture::CROSSLINGUAL), spec("fixture-en", "en")];
    let outcome = mixture::derive_mt_variant(&specs, &mixture::UppercaseTranslator).map_err(|e| e.to_string())?;
    check!(outcome.dropped.is_empty(), "dropped: {:?}", outcome.dropped);
    check!(outcome.specs[1] == specs[1], "crosslingual spec changed");
    check!(outcome.specs[2] == specs[2], "English spec changed");

    let derived: Vec<&PromptTemplate> = outcome.specs[0]
        .templates
        .iter()
        .filter(|t| t.variant == PromptVariant::Mt)
        .collect();
    check!(derived.len() == templates.len(), "{} siblings for {} templates", derived.len(), templates.len());
    let mut spans = 0usize;
    for (orig, mt) in templates.iter().zip(derived) {
        let pairs = [(&orig.input_src, &mt.input_src), (&orig.target_src, &mt.target_src)];
        let choice_pairs = orig.answer_choices.iter().flatten().zip(mt.answer_choices.iter().flatten());
        for (a, b) in pairs.into_iter().chain(choice_pairs) {
            let ea = parse_template(a).map_err(|e| e.to_string())?;
            let eb = parse_template(b).map_err(|e| e.to_string())?;
            check!(
                ea.expression_spans() == eb.expression_spans(),
                "{}: spans {:?} became {:?}",
                orig.name,
                ea.expression_spans(),
                eb.expression_spans()
            );
            spans += ea.expression_spans().len();
        }
        let literal = orig.input_src.split("{{").map(|p| p.rsplit("}}").next().unwrap_or(p)).collect::<String>();
        if literal.chars().any(char::is_lowercase) {
            check!(mt.input_src != orig.input_src, "{}: input was not translated", orig.name);
        }
        check!(mt.prompt_language == "fr", "{}: prompt language {}", orig.name, mt.prompt_language);
    }
    Ok(format!("{spans} spans over {} templates preserved byte-for-byte; crosslingual and English specs unchanged", templates.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("loss weights", criterion_1),
        ("packing safety", criterion_2),
        ("random baseline", criterion_3),
        ("oracle accuracy", criterion_4),
        ("pass@k exactness", criterion_5),
        ("BLEU", criterion_6),
        ("Levenshtein", criterion_7),
        ("mixture proportions", criterion_8),
        ("contamination audit", criterion_9),
        ("min-token forcing", criterion_10),
        ("MT span preservation", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("acceptance {:>2} {name:<22} PASS  {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} {name:<22} FAIL  {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
