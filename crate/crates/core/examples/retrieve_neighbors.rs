//! Exact cosine retrieval of demonstration records.

use std::path::Path;

use ike::corpus::{load_counterfact, split_at};
use ike::retrieval::{encode_key, knn, order_for_context, Embedder, EmbeddingIndex, StubEmbedder};

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let split = split_at(load_counterfact(data.join("counterfact.jsonl"), true)?.records, 25);

    let embedder = StubEmbedder { dimension: 64, seed: 0 };
    let keys: Vec<String> = split.train.iter().map(encode_key).collect();
    let index = EmbeddingIndex::build(
        64,
        split.train.iter().map(|r| r.case_id).zip(embedder.embed(&keys)?),
    )?;

    let query = &split.test[0];
    let key = encode_key(query);
    println!("query key: {key:?}");
    let q = embedder.embed(&[key])?.remove(0);
    let found = knn(&index, &q, 5)?;
    for n in &found {
        let r = split.train.iter().find(|r| r.case_id == n.case_id).unwrap();
        println!("  {:>3}  {:+.4}  {}", n.case_id, n.similarity, encode_key(r));
    }
    println!("context order (least similar first): {:?}", order_for_context(&found));
    Ok(())
}
