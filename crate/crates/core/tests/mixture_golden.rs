use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use xmtf::mixture::{build_mixture_from, DatasetSpec, LoadedDataset, MixtureConfig, MixtureVariant, TaskCluster};
use xmtf::template::{PromptTemplate, PromptVariant};

const RECORDS: usize = 4;

fn template(name: &str) -> PromptTemplate {
    PromptTemplate {
        name: name.into(),
        dataset: "toy".into(),
        prompt_language: "en".into(),
        variant: PromptVariant::En,
        inverted: false,
        input_src: format!("{name}: {{{{id}}}}"),
        target_src: "{{id}}".into(),
        answer_choices: None,
    }
}

fn dataset(lang: &str) -> LoadedDataset {
    LoadedDataset {
        spec: DatasetSpec {
            name: format!("toy-{lang}"),
            language: lang.into(),
            task_cluster: TaskCluster::Other,
            records_path: PathBuf::new(),
            templates: vec![template("t0"), template("t1")],
            templates_path: None,
            holdout: false,
        },
        records: (0..RECORDS)
            .map(|i| json!({ "id": format!("{lang}{i}") }).as_object().unwrap().clone())
            .collect(),
    }
}

fn config() -> MixtureConfig {
    MixtureConfig {
        target_proportions: BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]),
        total_examples: 10,
        seed: 7,
        variant: MixtureVariant::EnOnly,
    }
}

/// Straight re-derivation of the documented draw order: five draws per
/// language in tag order (dataset, record, template), then one shuffle on the
/// same stream.
fn oracle() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    for lang in ["a", "b"] {
        for _ in 0..5 {
            let _dataset: usize = rng.gen_range(0..1);
            let record = rng.gen_range(0..RECORDS);
            let tpl: usize = rng.gen_range(0..2);
            out.push(format!("t{tpl}: {lang}{record}"));
        }
    }
    out.shuffle(&mut rng);
    out
}

#[test]
fn seeded_mixture_matches_independent_draw() {
    let (examples, manifest) = build_mixture_from(&[dataset("a"), dataset("b")], &config()).unwrap();
    let inputs: Vec<String> = examples.iter().map(|e| e.input_text.clone()).collect();
    assert_eq!(inputs, oracle());
    assert_eq!(manifest.language_counts["a"], 5);
    assert_eq!(manifest.language_counts["b"], 5);
}

#[test]
fn seeded_mixture_golden_sequence() {
    let (examples, _) = build_mixture_from(&[dataset("a"), dataset("b")], &config()).unwrap();
    let inputs: Vec<&str> = examples.iter().map(|e| e.input_text.as_str()).collect();
    assert_eq!(inputs, GOLDEN);
}

const GOLDEN: [&str; 10] = [
    "t1: b0", "t0: a1", "t0: b3", "t0: a3", "t1: a2", "t0: a2", "t1: b2", "t0: a0", "t0: b1", "t1: b0",
];
