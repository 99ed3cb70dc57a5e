//! Demonstration kinds and context assembly under a length budget.

use std::path::Path;

use ike::corpus::{load_counterfact, split_at};
use ike::demo::{allocate_kinds, assemble, assign_kinds, build_demonstration, ContextPlan, LengthMode};

fn main() -> anyhow::Result<()> {
    for k in [32, 16, 8] {
        let a = allocate_kinds(k)?;
        println!("k = {k:>2}: copy {} / update {} / retain {}", a.copy_count, a.update_count, a.retain_count);
    }
    let kinds = assign_kinds(8)?;
    println!("k = 8 sequence: {}", kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(" "));

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let split = split_at(load_counterfact(data.join("counterfact.jsonl"), true)?.records, 25);
    let demos = split
        .train
        .iter()
        .zip(&kinds)
        .enumerate()
        .map(|(slot, (r, &kind))| build_demonstration(r, kind, slot as u64))
        .collect::<Result<Vec<_>, _>>()?;

    let edit = &split.test[0];
    let plan = ContextPlan::new(demos, edit.target_prompt(), &edit.target_new, &edit.paraphrase_prompts[0]);
    let full = assemble(&plan, 8000, LengthMode::Chars.measure_fn())?;
    println!("\n{}\n", full.text);
    let tight = assemble(&plan, 400, LengthMode::Chars.measure_fn())?;
    println!("budget 400 chars keeps {} of {} demonstrations", tight.kept, plan.demonstrations.len());
    Ok(())
}
