//! Full editing suite over the bundled corpus with mock backends: a model
//! that respects the edit scope and one that copies the new object everywhere.

use std::path::Path;

use ike::runner::{render_table, run_edit_suite, ConfigPairs, RunConfig};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let out = tempfile::tempdir()?;
    for rules in ["scope_aware.rules.jsonl", "copier.rules.jsonl"] {
        let mut pairs = ConfigPairs::default();
        pairs.set("corpus", &data.join("counterfact.jsonl").to_string_lossy())?;
        pairs.set("test_size", "25")?;
        pairs.set("k", "16")?;
        pairs.set("mock_rules", &data.join(rules).to_string_lossy())?;
        pairs.set("out", &out.path().join(rules).to_string_lossy())?;
        let config = RunConfig::from_pairs(&pairs)?;

        let outcome = run_edit_suite(&config)?;
        println!("{rules}\n{}", render_table(&outcome.summary));
        let case = &outcome.cases[0];
        println!(
            "case {}: {} demonstrations, kinds {:?}\n",
            case.case_id,
            case.neighbors.len(),
            &case.kinds[..4]
        );
    }
    Ok(())
}
