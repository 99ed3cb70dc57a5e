//! Scoring against a live completion-scoring service.
//!
//! `cargo run --example remote_scoring -- http://host:port/score`
//! The bearer token, if any, is read from `IKE_API_TOKEN`. Responses are
//! cached under a temporary directory so a repeated request is served locally.

use ike::lm::{score, CachedBackend, RemoteBackend, ScoreCache, ScoreRequest, TransportConfig};

fn main() -> anyhow::Result<()> {
    let Some(url) = std::env::args().nth(1) else {
        eprintln!("usage: remote_scoring <score-endpoint-url>");
        return Ok(());
    };
    let cache_dir = tempfile::tempdir()?;
    let backend = CachedBackend::new(
        RemoteBackend::new(TransportConfig::new(url)),
        ScoreCache::open(cache_dir.path())?,
    );
    let request = ScoreRequest::new(
        "New Fact: The mother tongue of Danielle Darrieux is English.\n\
         Prompt: The mother tongue of Danielle Darrieux is",
        vec![" English".into(), " French".into()],
    );
    let first = score(&backend, &request)?;
    let second = score(&backend, &request)?;
    assert_eq!(first, second);
    for (c, lp) in request.continuations.iter().zip(&first.logprobs) {
        println!("{c:>10}: {lp:.4}");
    }
    Ok(())
}
