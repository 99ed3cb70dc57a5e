//! Rule-table language model for offline runs and tests.
//!
//! A rule fires for a candidate when its fact pattern occurs anywhere in the
//! context, the context (trailing whitespace trimmed) ends with its probe
//! pattern, and the candidate equals its answer. The first firing rule sets
//! the candidate's probability; everything else gets the floor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{word_count, Backend, ScoreRequest, ScoreResult};
use crate::error::LmError;

pub const DEFAULT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub fact_pattern: String,
    pub probe_pattern: String,
    pub answer: String,
    pub probability: f64,
}

impl MockRule {
    pub fn new(
        fact_pattern: impl Into<String>,
        probe_pattern: impl Into<String>,
        answer: impl Into<String>,
        probability: f64,
    ) -> Self {
        Self {
            fact_pattern: fact_pattern.into(),
            probe_pattern: probe_pattern.into(),
            answer: answer.into(),
            probability,
        }
    }

    fn matches(&self, context: &str, candidate: &str) -> bool {
        candidate.trim() == self.answer.trim()
            && context.contains(&self.fact_pattern)
            && context.trim_end().ends_with(self.probe_pattern.trim_end())
    }
}

/// Pure rule-table scoring.
pub fn mock_score(rules: &[MockRule], default_floor: f64, request: &ScoreRequest) -> ScoreResult {
    let logprobs = request
        .continuations
        .iter()
        .map(|cand| {
            rules
                .iter()
                .find(|r| r.matches(&request.context, cand))
                .map_or(default_floor, |r| r.probability)
                .ln()
        })
        .collect();
    ScoreResult {
        logprobs,
        token_counts: request.continuations.iter().map(|c| word_count(c)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    floor: f64,
    id: String,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>, floor: f64) -> Result<Self, LmError> {
        if !(floor > 0.0 && floor < 1.0) {
            return Err(LmError::MockRule {
                line: 0,
                message: format!("floor {floor} outside (0, 1)"),
            });
        }
        for (i, r) in rules.iter().enumerate() {
            if !(r.probability > 0.0 && r.probability <= 1.0) {
                return Err(LmError::MockRule {
                    line: i + 1,
                    message: format!("probability {} outside (0, 1]", r.probability),
                });
            }
            if r.probability <= floor {
                return Err(LmError::MockRule {
                    line: i + 1,
                    message: format!("probability {} not above floor {floor}", r.probability),
                });
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(floor.to_le_bytes());
        for r in &rules {
            hasher.update(serde_json::to_vec(r).expect("rule serializes"));
            hasher.update([0u8]);
        }
        let id = format!("mock-{}", &hex::encode(hasher.finalize())[..16]);
        Ok(Self { rules, floor, id })
    }

    pub fn from_file(path: impl AsRef<Path>, floor: f64) -> Result<Self, LmError> {
        Self::new(read_mock_rules(path)?, floor)
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        let result = mock_score(&self.rules, self.floor, request);
        Ok(serde_json::to_string(&result).expect("result serializes"))
    }
}

/// Reads one JSON rule object per line.
pub fn read_mock_rules(path: impl AsRef<Path>) -> Result<Vec<MockRule>, LmError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LmError::MockRule {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_mock_rules(path: impl AsRef<Path>, rules: &[MockRule]) -> Result<(), LmError> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in rules {
        text.push_str(&serde_json::to_string(r).expect("rule serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| LmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rule tables that force known outcomes for edit, temporal and CKA runs.
pub mod presets {
    use super::MockRule;
    use crate::corpus::{EditRecord, TemporalFactRecord};
    use crate::demo::fact_line;

    /// Probability assigned by preset rules.
    pub const HIT: f64 = 0.9;

    fn probe_suffix(probe: &str) -> String {
        format!("Prompt: {probe}")
    }

    /// With the record's new fact in context: the new object on the target
    /// and paraphrase prompts, the original object on neighborhood prompts.
    pub fn scope_aware(records: &[EditRecord]) -> Vec<MockRule> {
        let mut rules = Vec::new();
        for r in records {
            let fact = fact_line(&r.target_prompt(), &r.target_new);
            for p in std::iter::once(r.target_prompt()).chain(r.paraphrase_prompts.iter().cloned()) {
                rules.push(MockRule::new(&fact, probe_suffix(&p), &r.target_new, HIT));
            }
            for p in &r.neighborhood_prompts {
                rules.push(MockRule::new(&fact, probe_suffix(p), &r.target_true, HIT));
            }
        }
        rules
    }

    /// Answers the new object on every probe of the record, in scope or not.
    pub fn copier(records: &[EditRecord]) -> Vec<MockRule> {
        let mut rules = Vec::new();
        for r in records {
            let fact = fact_line(&r.target_prompt(), &r.target_new);
            let probes = std::iter::once(r.target_prompt())
                .chain(r.paraphrase_prompts.iter().cloned())
                .chain(r.neighborhood_prompts.iter().cloned());
            for p in probes {
                rules.push(MockRule::new(&fact, probe_suffix(&p), &r.target_new, HIT));
            }
        }
        rules
    }

    /// Recalls the oldest fact whenever it is anywhere in context.
    pub fn temporal_persistent(records: &[TemporalFactRecord]) -> Vec<MockRule> {
        records
            .iter()
            .map(|r| {
                let (probe, object) = r.fact(0);
                MockRule::new(fact_line(&probe, &object), probe_suffix(&probe), object, HIT)
            })
            .collect()
    }

    /// Recalls the oldest fact only while it is the most recent fact block.
    pub fn temporal_last_fact_only(records: &[TemporalFactRecord]) -> Vec<MockRule> {
        records
            .iter()
            .map(|r| {
                let (probe, object) = r.fact(0);
                let fact = format!("{}\nPrompt: ", fact_line(&probe, &object));
                MockRule::new(fact, probe_suffix(&probe), object, HIT)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jazz_rule(p: f64) -> MockRule {
        MockRule::new("They play jazz", "Bussotti play? They play", "jazz", p)
    }

    #[test]
    fn bussotti_rule_scores() {
        let req = ScoreRequest::new(
            "New Fact: What does Sylvano Bussotti play? They play jazz.\nPrompt: What does Sylvano Bussotti play? They play",
            vec!["jazz".into(), "opera".into()],
        );
        let r = mock_score(&[jazz_rule(0.9)], DEFAULT_FLOOR, &req);
        assert_eq!(r.logprobs, vec![0.9f64.ln(), DEFAULT_FLOOR.ln()]);
    }

    #[test]
    fn same_candidate_same_score() {
        let req = ScoreRequest::new("ctx", vec!["a".into(), "a".into()]);
        let r = mock_score(&[MockRule::new("", "ctx", "a", 0.5)], 0.1, &req);
        assert_eq!(r.logprobs[0], r.logprobs[1]);
    }

    #[test]
    fn no_rules_gives_floor() {
        let req = ScoreRequest::new("anything", vec!["x".into(), "y z".into()]);
        let r = mock_score(&[], 0.05, &req);
        assert_eq!(r.logprobs, vec![0.05f64.ln(); 2]);
        assert_eq!(r.token_counts, vec![1, 2]);
    }

    #[test]
    fn first_matching_rule_wins() {
        let req = ScoreRequest::new(
            "They play jazz. What does Bussotti play? They play",
            vec!["jazz".into()],
        );
        let r = mock_score(&[jazz_rule(0.7), jazz_rule(0.9)], DEFAULT_FLOOR, &req);
        assert_eq!(r.logprobs, vec![0.7f64.ln()]);
    }

    #[test]
    fn probe_must_end_the_context() {
        let rule = MockRule::new("", "president of the US is", "Biden", 0.9);
        let req = ScoreRequest::new(
            "The president of the US is somebody. Prompt: the capital is",
            vec!["Biden".into()],
        );
        assert_eq!(mock_score(std::slice::from_ref(&rule), 0.01, &req).logprobs, vec![0.01f64.ln()]);
        let req = ScoreRequest::new("Prompt: The president of the US is  \n", vec![" Biden".into()]);
        assert_eq!(mock_score(&[rule], 0.01, &req).logprobs, vec![0.9f64.ln()]);
    }

    #[test]
    fn backend_validates_rules() {
        assert!(MockBackend::new(vec![jazz_rule(1.5)], 0.01).is_err());
        assert!(MockBackend::new(vec![jazz_rule(0.005)], 0.01).is_err());
        assert!(MockBackend::new(vec![], 0.0).is_err());
        let a = MockBackend::new(vec![jazz_rule(0.9)], 0.01).unwrap();
        let b = MockBackend::new(vec![jazz_rule(0.8)], 0.01).unwrap();
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn rule_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        let rules = vec![jazz_rule(0.9), MockRule::new("a\nb", "c", "d", 0.5)];
        write_mock_rules(&path, &rules).unwrap();
        assert_eq!(read_mock_rules(&path).unwrap(), rules);
    }
}
