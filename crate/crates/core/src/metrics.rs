//! Knowledge-editing metrics.
//!
//! All scores are percentages. Success indicators use strict inequalities, so
//! a tie between the new and original object counts as a failure.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Target,
    Paraphrase,
    Neighborhood,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Target => "target",
            Scope::Paraphrase => "paraphrase",
            Scope::Neighborhood => "neighborhood",
        }
    }
}

/// Probabilities of the new (`p_new`) and original (`p_old`) object for one
/// probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub p_new: f64,
    pub p_old: f64,
    pub scope: Scope,
}

impl ProbePair {
    pub fn new(p_new: f64, p_old: f64, scope: Scope) -> Self {
        Self {
            p_new,
            p_old,
            scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: u64,
    pub target_pairs: Vec<ProbePair>,
    pub paraphrase_pairs: Vec<ProbePair>,
    pub neighborhood_pairs: Vec<ProbePair>,
}

/// Whether expectations are taken over prompts or over records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every prompt counts once.
    #[default]
    Flat,
    /// Per-record means, then the mean over records.
    PerRecord,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Flat => "flat",
            Pooling::PerRecord => "per_record",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Self::Flat),
            "per_record" => Ok(Self::PerRecord),
            other => Err(format!("unknown pooling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRate {
    pub alpha: f64,
    pub false_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub es: f64,
    pub em: f64,
    pub ps: f64,
    pub pm: f64,
    pub ns: f64,
    pub nm: f64,
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cka_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cka_false_rates: Option<Vec<AlphaRate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_drop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgetting_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memorization_ratio: Option<f64>,
}

fn valid(p: f64) -> bool {
    p.is_finite() && p >= 0.0
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

fn check(pairs: &[ProbePair], what: &'static str) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty(what));
    }
    let bad = |p: f64| !p.is_finite() || p < 0.0;
    if pairs.iter().any(|p| bad(p.p_new) || bad(p.p_old)) {
        return Err(MetricsError::InvalidProbability(what));
    }
    Ok(())
}

/// Success score and magnitude for in-scope probes:
/// `100·E[p_new > p_old]`, `100·E[p_new − p_old]`.
pub fn efficacy(pairs: &[ProbePair]) -> Result<(f64, f64), MetricsError> {
    check(pairs, "efficacy")?;
    let score = mean(pairs.iter().map(|p| f64::from(u8::from(p.p_new > p.p_old))));
    let magnitude = mean(pairs.iter().map(|p| p.p_new - p.p_old));
    Ok((100.0 * score, 100.0 * magnitude))
}

/// Generalization uses the efficacy formulas on paraphrase probes.
pub fn generalization(pairs: &[ProbePair]) -> Result<(f64, f64), MetricsError> {
    efficacy(pairs)
}

/// Specificity: `100·E[p_old > p_new]`, `100·E[p_old − p_new]`.
pub fn specificity(pairs: &[ProbePair]) -> Result<(f64, f64), MetricsError> {
    check(pairs, "specificity")?;
    let score = mean(pairs.iter().map(|p| f64::from(u8::from(p.p_old > p.p_new))));
    let magnitude = mean(pairs.iter().map(|p| p.p_old - p.p_new));
    Ok((100.0 * score, 100.0 * magnitude))
}

/// Harmonic mean of ES, PS and NS; zero if any component is non-positive.
pub fn harmonic_score(es: f64, ps: f64, ns: f64) -> f64 {
    if es <= 0.0 || ps <= 0.0 || ns <= 0.0 {
        return 0.0;
    }
    3.0 / (1.0 / es + 1.0 / ps + 1.0 / ns)
}

/// True-relation probability over the mean contrastive-relation probability.
pub fn cka_score(p_true: f64, p_contrastive: &[f64]) -> Result<f64, MetricsError> {
    if p_contrastive.is_empty() {
        return Err(MetricsError::Empty("cka_score"));
    }
    if !valid(p_true) || !p_contrastive.iter().copied().all(valid) {
        return Err(MetricsError::InvalidProbability("cka_score"));
    }
    let denom = p_contrastive.iter().sum::<f64>() / p_contrastive.len() as f64;
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator("cka_score"));
    }
    Ok(p_true / denom)
}

/// Percentage of scores strictly below `alpha`; zero for no scores.
pub fn cka_false_rate(scores: &[f64], alpha: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    100.0 * scores.iter().filter(|&&s| s < alpha).count() as f64 / scores.len() as f64
}

/// Mean probability drop of the original object and the share of facts
/// forgotten (drop greater than half the pre-edit probability), both as
/// percentages.
pub fn forgetting(pre: &[f64], post: &[f64]) -> Result<(f64, f64), MetricsError> {
    if pre.len() != post.len() {
        return Err(MetricsError::LengthMismatch("forgetting", pre.len(), post.len()));
    }
    if pre.is_empty() {
        return Err(MetricsError::Empty("forgetting"));
    }
    if !pre.iter().chain(post).copied().all(valid) {
        return Err(MetricsError::InvalidProbability("forgetting"));
    }
    let drops = pre.iter().zip(post).map(|(a, b)| a - b);
    let prob_drop = mean(drops.clone());
    let forgotten = pre
        .iter()
        .zip(drops)
        .filter(|(p, d)| *d > 0.5 * **p)
        .count();
    Ok((100.0 * prob_drop, 100.0 * forgotten as f64 / pre.len() as f64))
}

/// Retained probability of the oldest fact after all edits relative to just
/// after its own injection, as a percentage.
pub fn memorization_ratio(p_after_first: f64, p_after_all: f64) -> Result<f64, MetricsError> {
    if p_after_first == 0.0 {
        return Err(MetricsError::ZeroDenominator("memorization_ratio"));
    }
    if !valid(p_after_first) || !valid(p_after_all) {
        return Err(MetricsError::InvalidProbability("memorization_ratio"));
    }
    Ok(100.0 * p_after_all / p_after_first)
}

pub fn aggregate(results: &[CaseResult]) -> Result<MetricsReport, MetricsError> {
    aggregate_with(results, Pooling::Flat)
}

pub fn aggregate_with(results: &[CaseResult], pooling: Pooling) -> Result<MetricsReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty("aggregate"));
    }
    type Metric = fn(&[ProbePair]) -> Result<(f64, f64), MetricsError>;
    let scope = |get: fn(&CaseResult) -> &[ProbePair], f: Metric, scope: Scope| {
        match pooling {
            Pooling::Flat => {
                let pooled: Vec<ProbePair> = results.iter().flat_map(|r| get(r).iter().copied()).collect();
                if pooled.is_empty() {
                    return Err(MetricsError::EmptyScope(scope.as_str()));
                }
                f(&pooled)
            }
            Pooling::PerRecord => {
                let per: Vec<(f64, f64)> = results
                    .iter()
                    .filter(|r| !get(r).is_empty())
                    .map(|r| f(get(r)))
                    .collect::<Result<_, _>>()?;
                if per.is_empty() {
                    return Err(MetricsError::EmptyScope(scope.as_str()));
                }
                Ok((
                    mean(per.iter().map(|p| p.0)),
                    mean(per.iter().map(|p| p.1)),
                ))
            }
        }
    };
    let (es, em) = scope(|r| &r.target_pairs, efficacy, Scope::Target)?;
    let (ps, pm) = scope(|r| &r.paraphrase_pairs, generalization, Scope::Paraphrase)?;
    let (ns, nm) = scope(|r| &r.neighborhood_pairs, specificity, Scope::Neighborhood)?;
    Ok(MetricsReport {
        es,
        em,
        ps,
        pm,
        ns,
        nm,
        s: harmonic_score(es, ps, ns),
        cka_mean: None,
        cka_false_rates: None,
        prob_drop: None,
        forgetting_rate: None,
        memorization_ratio: None,
    })
}

/// Rounds to the one decimal used in reported tables.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
