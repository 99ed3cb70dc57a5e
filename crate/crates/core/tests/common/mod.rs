#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Mutex;

use ike::lm::{Backend, ScoreRequest};
use ike::LmError;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data")
}

pub fn data(name: &str) -> String {
    data_dir().join(name).to_string_lossy().into_owned()
}

/// Runs the `ike` binary and fails with its stderr on a non-zero exit.
pub fn ike(args: &[&str]) -> Output {
    let out = ike_raw(args);
    assert!(
        out.status.success(),
        "ike {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn ike_raw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ike"))
        .args(args)
        .env_remove("IKE_CACHE_DIR")
        .output()
        .expect("spawn ike")
}

pub fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    let text = std::fs::read_to_string(path.as_ref()).expect("read json");
    serde_json::from_str(&text).expect("valid json")
}

/// Records every context sent to the wrapped backend.
pub struct Recording<B> {
    pub inner: B,
    pub contexts: Mutex<Vec<String>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            contexts: Mutex::new(Vec::new()),
        }
    }
}

impl<B: Backend> Backend for Recording<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        self.contexts.lock().unwrap().push(request.context.clone());
        self.inner.fetch(request)
    }
}
