//! Scoring interface over black-box language models.
//!
//! A backend maps `(context, continuations)` to the total log-probability of
//! each continuation. Backends return their raw wire payload so that the disk
//! cache can store responses verbatim; decoding is shared.

mod cache;
pub mod mock;
pub mod remote;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::LmError;

pub use cache::{CachedBackend, ScoreCache};
pub use mock::{mock_score, MockBackend, MockRule, DEFAULT_FLOOR};
pub use remote::{RemoteBackend, RemoteEmbedder, TransportConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuations: Vec<String>,
}

impl ScoreRequest {
    pub fn new(context: impl Into<String>, continuations: Vec<String>) -> Self {
        Self {
            context: context.into(),
            continuations,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.continuations.is_empty() {
            return Err(LmError::EmptyCandidates);
        }
        if let Some(i) = self.continuations.iter().position(|c| c.is_empty()) {
            return Err(LmError::EmptyCandidate(i));
        }
        Ok(())
    }
}

/// Per-candidate total log-probabilities, aligned with the request.
/// `f64::NEG_INFINITY` marks an impossible candidate and travels as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    #[serde(with = "neg_inf_as_null")]
    pub logprobs: Vec<f64>,
    pub token_counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Geometric mean over the candidate's tokens.
    PerToken,
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "per_token" => Ok(Self::PerToken),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerToken => "per_token",
        }
    }
}

/// Probability of candidate `index`: `exp(logprob)`, or `exp(logprob / n)`
/// under per-token normalization.
pub fn probability(result: &ScoreResult, index: usize, norm: Normalization) -> f64 {
    let lp = result.logprobs[index];
    if lp == f64::NEG_INFINITY {
        return 0.0;
    }
    match norm {
        Normalization::None => lp.exp(),
        Normalization::PerToken => {
            let n = result.token_counts.get(index).copied().unwrap_or(1).max(1);
            (lp / f64::from(n)).exp()
        }
    }
}

pub trait Backend: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> &str;

    /// Raw response payload for a validated request.
    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError>;

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
        request.validate()?;
        let raw = self.fetch(request)?;
        decode_response(request, &raw)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        (**self).fetch(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        (**self).fetch(request)
    }
}

pub fn score(backend: &dyn Backend, request: &ScoreRequest) -> Result<ScoreResult, LmError> {
    backend.score(request)
}

/// Decodes `{"logprobs": [...], "token_counts": [...]?}`. Log-probabilities
/// may be numbers, `null` or `"-inf"`; missing token counts default to the
/// candidate's whitespace word count.
pub fn decode_response(request: &ScoreRequest, raw: &str) -> Result<ScoreResult, LmError> {
    let protocol = |message: String| LmError::Protocol {
        message,
        raw: raw.to_string(),
    };
    let v: Value = serde_json::from_str(raw).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
    let items = v
        .get("logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("missing `logprobs` array".into()))?;
    if items.len() != request.continuations.len() {
        return Err(protocol(format!(
            "{} logprobs for {} continuations",
            items.len(),
            request.continuations.len()
        )));
    }
    let logprobs = items
        .iter()
        .map(|item| match item {
            Value::Null => Ok(f64::NEG_INFINITY),
            Value::String(s) if s == "-inf" || s == "-Infinity" => Ok(f64::NEG_INFINITY),
            Value::Number(n) => n
                .as_f64()
                .filter(|x| x.is_finite() && *x <= 1e-9)
                .map(|x| x.min(0.0))
                .ok_or_else(|| protocol(format!("logprob {n} out of range"))),
            other => Err(protocol(format!("bad logprob {other}"))),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let token_counts = match v.get("token_counts") {
        None | Some(Value::Null) => request
            .continuations
            .iter()
            .map(|c| word_count(c))
            .collect(),
        Some(Value::Array(counts)) if counts.len() == request.continuations.len() => counts
            .iter()
            .map(|c| {
                c.as_u64()
                    .and_then(|n| u32::try_from(n).ok())
                    .ok_or_else(|| protocol(format!("bad token count {c}")))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(protocol("`token_counts` not aligned with continuations".into())),
    };
    Ok(ScoreResult {
        logprobs,
        token_counts,
    })
}

pub(crate) fn word_count(text: &str) -> u32 {
    (text.split_whitespace().count() as u32).max(1)
}

mod neg_inf_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mapped: Vec<Option<f64>> = values
            .iter()
            .map(|&v| (v != f64::NEG_INFINITY).then_some(v))
            .collect();
        mapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|v| v.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(n: usize) -> ScoreRequest {
        ScoreRequest::new("ctx", (0..n).map(|i| format!("c{i}")).collect())
    }

    #[test]
    fn probability_examples() {
        let r = ScoreResult {
            logprobs: vec![0.0, f64::NEG_INFINITY, 0.25f64.ln()],
            token_counts: vec![1, 1, 2],
        };
        assert_eq!(probability(&r, 0, Normalization::None), 1.0);
        assert_eq!(probability(&r, 1, Normalization::None), 0.0);
        assert_eq!(probability(&r, 1, Normalization::PerToken), 0.0);
        assert!((probability(&r, 2, Normalization::PerToken) - 0.5).abs() < 1e-12);
        assert!((probability(&r, 2, Normalization::None) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn decode_checks_alignment() {
        let err = decode_response(&req(2), r#"{"logprobs": [-1.0, -2.0, -3.0]}"#).unwrap_err();
        match err {
            LmError::Protocol { raw, .. } => assert!(raw.contains("-3.0")),
            other => panic!("{other}"),
        }
        let ok = decode_response(&req(2), r#"{"logprobs": [-1.0, null]}"#).unwrap();
        assert_eq!(ok.logprobs[1], f64::NEG_INFINITY);
        assert_eq!(ok.token_counts, vec![1, 1]);
        assert!(decode_response(&req(1), "not json").is_err());
        assert!(decode_response(&req(1), r#"{"logprobs": [0.5]}"#).is_err());
    }

    #[test]
    fn request_validation() {
        assert!(matches!(req(0).validate(), Err(LmError::EmptyCandidates)));
        let bad = ScoreRequest::new("x", vec!["a".into(), "".into()]);
        assert!(matches!(bad.validate(), Err(LmError::EmptyCandidate(1))));
    }

    #[test]
    fn neg_inf_round_trips_as_null() {
        let r = ScoreResult {
            logprobs: vec![-0.5, f64::NEG_INFINITY],
            token_counts: vec![1, 1],
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("null"));
        let back: ScoreResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
