//! Sequential edits along a timeline: how much of the first fact survives
//! after every later fact is injected.

use std::path::Path;

use ike::corpus::load_templama;
use ike::runner::{render_table, run_temporal_suite, ConfigPairs, RunConfig};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let timelines = load_templama(data.join("templama.jsonl"), true)?.records;
    let out = tempfile::tempdir()?;
    for rules in ["temporal_persistent.rules.jsonl", "temporal_last_fact.rules.jsonl"] {
        let mut pairs = ConfigPairs::default();
        pairs.set("k", "0")?;
        pairs.set("mock_rules", &data.join(rules).to_string_lossy())?;
        pairs.set("out", &out.path().join(rules).to_string_lossy())?;
        let outcome = run_temporal_suite(&RunConfig::from_pairs(&pairs)?, &timelines)?;
        println!("{rules}\n{}", render_table(&outcome.summary));
        let row = &outcome.cases[0];
        println!(
            "{} / {}: {} edits, p(first) {:.3} after one, {:.3} after all\n",
            row.subject, row.relation_id, row.edits, row.p_first, row.p_all
        );
    }
    Ok(())
}
