//! Deterministic mock scoring: rule tables, preset behaviors and what a
//! scored request looks like.
//!
//! `cargo run --example mock_scoring -- [DIR]` additionally writes the preset
//! rule tables for the bundled corpus into DIR (used by the CLI walkthrough).

use std::path::{Path, PathBuf};

use ike::corpus::{load_counterfact, load_templama};
use ike::lm::mock::{presets, write_mock_rules};
use ike::lm::{probability, score, MockBackend, MockRule, Normalization, ScoreRequest, DEFAULT_FLOOR};

fn main() -> anyhow::Result<()> {
    let rules = vec![MockRule::new(
        "They play jazz",
        "Bussotti play? They play",
        "jazz",
        0.9,
    )];
    let backend = MockBackend::new(rules, DEFAULT_FLOOR)?;
    let request = ScoreRequest::new(
        "New Fact: What does Sylvano Bussotti play? They play jazz.\n\
         Prompt: What does Sylvano Bussotti play? They play",
        vec![" jazz".into(), " opera".into()],
    );
    let result = score(&backend, &request)?;
    println!("backend {}", ike::Backend::id(&backend));
    for (i, c) in request.continuations.iter().enumerate() {
        println!(
            "  {c:>8}: logprob {:>8.4}  p {:.3}",
            result.logprobs[i],
            probability(&result, i, Normalization::None)
        );
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        write_presets(&dir)?;
    }
    Ok(())
}

fn write_presets(dir: &Path) -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let edits = load_counterfact(data.join("counterfact.jsonl"), true)?.records;
    let timelines = load_templama(data.join("templama.jsonl"), true)?.records;
    std::fs::create_dir_all(dir)?;
    let tables = [
        ("scope_aware.rules.jsonl", presets::scope_aware(&edits)),
        ("copier.rules.jsonl", presets::copier(&edits)),
        ("temporal_persistent.rules.jsonl", presets::temporal_persistent(&timelines)),
        ("temporal_last_fact.rules.jsonl", presets::temporal_last_fact_only(&timelines)),
    ];
    for (name, rules) in tables {
        let path = dir.join(name);
        write_mock_rules(&path, &rules)?;
        println!("wrote {} rule(s) to {}", rules.len(), path.display());
    }
    Ok(())
}
