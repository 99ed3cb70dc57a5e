//! Contrastive knowledge assessment: is the new object preferred under the
//! edited relation more than under unrelated ones?

use std::path::Path;

use ike::runner::{render_table, run_cka_suite, ConfigPairs, RunConfig};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let out = tempfile::tempdir()?;
    let mut pairs = ConfigPairs::default();
    pairs.set("corpus", &data.join("counterfact.jsonl").to_string_lossy())?;
    pairs.set("test_size", "25")?;
    pairs.set("k", "8")?;
    pairs.set("cka_m", "5")?;
    pairs.set("alpha", "1.0,1.1")?;
    pairs.set("mock_rules", &data.join("scope_aware.rules.jsonl").to_string_lossy())?;
    pairs.set("out", &out.path().to_string_lossy())?;

    let outcome = run_cka_suite(&RunConfig::from_pairs(&pairs)?)?;
    print!("{}", render_table(&outcome.summary));
    let row = &outcome.cases[0];
    println!("\ncase {}: p(true relation) = {:.3}", row.case_id, row.p_true);
    for c in &row.contrastive {
        println!("  {:<6} {:.3}  {}", c.relation_id, c.p, c.probe);
    }
    Ok(())
}
