mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ike::lm::{score, Backend, RemoteBackend, RemoteEmbedder, ScoreRequest, TransportConfig};
use ike::retrieval::Embedder;
use ike::runner::{run_edit_suite, ConfigPairs, RunConfig};
use ike::{LmError, RunError};

#[derive(Debug, Clone)]
struct Seen {
    headers: Vec<String>,
    body: String,
}

/// Minimal HTTP/1.1 server answering each connection with the next scripted
/// response; the last response repeats.
struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        headers.push(line);
    }
    let header = |name: &str| {
        headers.iter().find_map(|h| {
            let (k, v) = h.split_once(':')?;
            k.eq_ignore_ascii_case(name).then(|| v.trim().to_string())
        })
    };
    let mut body = Vec::new();
    if let Some(len) = header("content-length") {
        body.resize(len.parse().ok()?, 0);
        reader.read_exact(&mut body).ok()?;
    } else if header("transfer-encoding").is_some_and(|v| v.eq_ignore_ascii_case("chunked")) {
        loop {
            let mut size = String::new();
            reader.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim(), 16).ok()?;
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    }
    Some(Seen {
        headers,
        body: String::from_utf8(body).ok()?,
    })
}

impl Server {
    fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/score", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                log.lock().unwrap().push(req);
                let (status, body) = &script[i.min(script.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Self { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn transport(url: &str, token_env: &str) -> TransportConfig {
    TransportConfig {
        backoff: Duration::from_millis(1),
        token_env: token_env.to_string(),
        ..TransportConfig::new(url)
    }
}

fn request() -> ScoreRequest {
    ScoreRequest::new("Prompt: Ada lives in", vec![" Rome".into(), " Paris".into()])
}

#[test]
fn scores_and_sends_protocol_body_with_bearer_token() {
    let server = Server::start(vec![(200, r#"{"logprobs": [-0.5, -2.0]}"#.into())]);
    std::env::set_var("IKE_TEST_TOKEN_A", "secret");
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_A"));
    let result = score(&backend, &request()).unwrap();
    assert_eq!(result.logprobs, vec![-0.5, -2.0]);
    assert_eq!(result.token_counts, vec![1, 1]);

    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["context"], "Prompt: Ada lives in");
    assert_eq!(body["continuations"], serde_json::json!([" Rome", " Paris"]));
    assert!(seen[0].headers.iter().any(|h| h == "authorization: Bearer secret"
        || h == "Authorization: Bearer secret"));
}

#[test]
fn no_token_means_no_authorization_header() {
    let server = Server::start(vec![(200, r#"{"logprobs": [-0.5, -2.0]}"#.into())]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    score(&backend, &request()).unwrap();
    let seen = server.requests();
    assert!(!seen[0].headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn misaligned_logprobs_are_a_protocol_error() {
    let server = Server::start(vec![(200, r#"{"logprobs": [-0.5, -2.0, -3.0]}"#.into())]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let err = score(&backend, &request()).unwrap_err();
    assert!(matches!(err, LmError::Protocol { .. }), "{err}");
}

#[test]
fn null_logprob_is_probability_zero() {
    let server = Server::start(vec![(200, r#"{"logprobs": [null, "-inf"]}"#.into())]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let r = score(&backend, &request()).unwrap();
    assert_eq!(r.logprobs, vec![f64::NEG_INFINITY; 2]);
    assert_eq!(ike::lm::probability(&r, 0, ike::lm::Normalization::None), 0.0);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let server = Server::start(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, r#"{"logprobs": [-1.0, -1.5]}"#.into()),
    ]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let r = score(&backend, &request()).unwrap();
    assert_eq!(r.logprobs, vec![-1.0, -1.5]);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn gives_up_after_three_attempts() {
    let server = Server::start(vec![(500, "{}".into())]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let err = score(&backend, &request()).unwrap_err();
    assert!(matches!(err, LmError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = Server::start(vec![(400, r#"{"error": "bad"}"#.into())]);
    let backend = RemoteBackend::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let err = score(&backend, &request()).unwrap_err();
    assert!(matches!(err, LmError::Protocol { .. }), "{err}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn embedder_decodes_vectors() {
    let server = Server::start(vec![(200, r#"{"vectors": [[1, 0], [0.5, 0.5]]}"#.into())]);
    let embedder = RemoteEmbedder::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    let v = embedder.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(v[0].values(), &[1.0, 0.0]);
    assert_eq!(v[1].values(), &[0.5, 0.5]);
    let body: serde_json::Value = serde_json::from_str(&server.requests()[0].body).unwrap();
    assert_eq!(body["texts"], serde_json::json!(["a", "b"]));
}

#[test]
fn embedder_rejects_short_responses() {
    let server = Server::start(vec![(200, r#"{"vectors": [[1, 0]]}"#.into())]);
    let embedder = RemoteEmbedder::new(transport(&server.url, "IKE_TEST_TOKEN_UNSET"));
    assert!(embedder.embed(&["a".into(), "b".into()]).is_err());
}

fn remote_config(url: &str, out: &std::path::Path, cache: &std::path::Path) -> RunConfig {
    let mut pairs = ConfigPairs::default();
    for (k, v) in [
        ("corpus", common::data("counterfact.jsonl")),
        ("test_size", "3".into()),
        ("k", "4".into()),
        ("backend_url", url.into()),
        ("out", out.to_string_lossy().into_owned()),
        ("cache_dir", cache.to_string_lossy().into_owned()),
        ("token_env", "IKE_TEST_TOKEN_UNSET".into()),
        ("workers", "2".into()),
    ] {
        pairs.set(k, &v).unwrap();
    }
    RunConfig::from_pairs(&pairs).unwrap()
}

#[test]
fn edit_suite_over_http_uses_the_cache_on_rerun() {
    let server = Server::start(vec![(200, r#"{"logprobs": [-0.1, -3.0]}"#.into())]);
    let dir = tempfile::tempdir().unwrap();
    let config = remote_config(&server.url, &dir.path().join("out"), &dir.path().join("cache"));
    let first = run_edit_suite(&config).unwrap();
    let calls = server.requests().len();
    // 3 cases, each 1 target + 2 paraphrase + 3 neighborhood + 1 pre-edit
    assert_eq!(calls, 21);
    assert_eq!(first.summary.metrics.as_ref().unwrap().es, 100.0);
    assert_eq!(first.summary.metrics.as_ref().unwrap().ns, 0.0);

    let second = run_edit_suite(&config).unwrap();
    assert_eq!(server.requests().len(), calls);
    assert_eq!(first.summary, second.summary);
}

#[test]
fn unreachable_backend_aborts_and_keeps_partial_logs() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = remote_config(&format!("http://127.0.0.1:{port}/score"), &out, &dir.path().join("cache"));
    let err = run_edit_suite(&config).unwrap_err();
    match err {
        RunError::Aborted { completed, .. } => assert_eq!(completed, 0),
        other => panic!("expected abort, got {other}"),
    }
    assert!(out.join("cases.jsonl").exists());
    assert!(out.join("config.resolved").exists());
    assert!(!out.join("summary.json").exists());
}

#[test]
fn backend_id_names_the_endpoint() {
    let backend = RemoteBackend::new(TransportConfig::new("http://localhost:1/x"));
    assert_eq!(backend.id(), "remote:http://localhost:1/x");
    assert_eq!(backend.with_id("gpt-j").id(), "gpt-j");
}
