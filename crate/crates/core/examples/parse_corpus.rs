//! Loading the edit corpus and temporal timelines.
//!
//! Counterfact records are read leniently here: malformed lines are reported
//! and skipped instead of failing the load.

use std::path::Path;

use ike::corpus::{load_counterfact, load_templama, parse_counterfact_str, split_at};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");

    let report = load_counterfact(data.join("counterfact.jsonl"), false)?;
    let split = split_at(report.records, 25);
    println!(
        "counterfact: {} test / {} train, {} rejected",
        split.test.len(),
        split.train.len(),
        report.rejected.len()
    );
    let first = &split.test[0];
    println!("  case {}: {} -> {} (was {})", first.case_id, first.target_prompt(), first.target_new, first.target_true);

    // the upstream array layout with a nested requested_rewrite also parses
    let upstream = r#"[{"case_id": 0,
        "requested_rewrite": {"prompt": "The mother tongue of {} is", "relation_id": "P103",
            "subject": "Danielle Darrieux", "target_new": {"str": "English"}, "target_true": {"str": "French"}},
        "paraphrase_prompts": ["Danielle Darrieux, a native"],
        "neighborhood_prompts": ["The mother tongue of Léon Blum is"]}]"#;
    let parsed = parse_counterfact_str(upstream, true)?;
    println!("  upstream layout: {}", parsed.records[0].target_prompt());

    let bad = "{\"case_id\": 1, \"subject\": \"x\"}\n";
    let lenient = parse_counterfact_str(bad, false)?;
    println!("  lenient load of a bad line: {} rejected", lenient.rejected.len());
    if let Err(e) = parse_counterfact_str(bad, true) {
        println!("  strict load: {e}");
    }

    let temporal = load_templama(data.join("templama.jsonl"), true)?;
    println!("templama: {} timelines", temporal.records.len());
    let t = &temporal.records[0];
    for i in 0..t.timeline.len() {
        let (probe, object) = t.fact(i);
        println!("  {probe} {object}");
    }
    Ok(())
}
