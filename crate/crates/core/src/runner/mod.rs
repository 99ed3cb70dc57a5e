//! End-to-end experiment orchestration.
//!
//! A [`Harness`] owns the loaded corpus split, the demonstration index and the
//! scoring backend. Suites process test cases on a bounded worker pool; every
//! case is a pure function of (config, corpus, embeddings, backend responses),
//! and results are sorted by case id before aggregation.

pub mod config;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, render_target_prompt, CorpusSplit, EditRecord, TemporalFactRecord};
use crate::demo::{
    allocate_kinds_among, assemble, build_demonstration, spread_kinds, ContextPlan, Demonstration,
    Kind,
};
use crate::error::{LmError, RetrievalError, RunError};
use crate::lm::{
    self, probability, Backend, CachedBackend, MockBackend, RemoteBackend, RemoteEmbedder,
    ScoreCache, ScoreRequest, ScoreResult,
};
use crate::metrics::{
    self, cka_false_rate, cka_score, forgetting, memorization_ratio, AlphaRate, CaseResult,
    MetricsReport, ProbePair, Scope,
};
use crate::retrieval::{
    encode_key, knn, order_for_context, read_embeddings, Embedder, EmbeddingIndex,
    EmbeddingVector, Neighbor, StubEmbedder,
};

pub use config::{Ablation, BackendSpec, ConfigPairs, EmbeddingSource, RunConfig};
pub use report::{emit_reports, read_case_lines, read_summary, render_table, rerender};

/// Derives an independent RNG seed from the run seed, a purpose label and
/// integer coordinates.
pub fn derive_seed(seed: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Candidate continuation for an object: the context ends without a trailing
/// space, so the object is scored with its leading separator.
pub fn continuation(object: &str) -> String {
    format!(" {object}")
}

/// One scored probe of a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLog {
    pub scope: Scope,
    pub probe: String,
    pub context_sha256: String,
    /// Demonstrations kept after budget truncation.
    pub demonstrations: usize,
    /// `[new object, original object]`, scored under one context.
    pub candidates: Vec<String>,
    pub score: ScoreResult,
    pub p_new: f64,
    pub p_old: f64,
}

/// Everything needed to audit and re-aggregate one edit case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLog {
    pub case_id: u64,
    /// Demonstration records in context order with their similarity.
    pub neighbors: Vec<Neighbor>,
    pub kinds: Vec<Kind>,
    pub probes: Vec<ProbeLog>,
    /// Original-object probe without any edit in context.
    pub pre_edit: ProbeLog,
}

impl CaseLog {
    pub fn to_case_result(&self) -> CaseResult {
        let pairs = |scope| {
            self.probes
                .iter()
                .filter(|p| p.scope == scope)
                .map(|p| ProbePair::new(p.p_new, p.p_old, scope))
                .collect()
        };
        CaseResult {
            case_id: self.case_id,
            target_pairs: pairs(Scope::Target),
            paraphrase_pairs: pairs(Scope::Paraphrase),
            neighborhood_pairs: pairs(Scope::Neighborhood),
        }
    }

    fn post_edit_p_old(&self) -> Option<f64> {
        self.probes
            .iter()
            .find(|p| p.scope == Scope::Target)
            .map(|p| p.p_old)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveProbe {
    pub relation_id: String,
    pub probe: String,
    pub context_sha256: String,
    pub p: f64,
}

/// Over-editing assessment for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaRow {
    pub case_id: u64,
    pub p_true: f64,
    pub contrastive: Vec<ContrastiveProbe>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaSummary {
    pub mean: f64,
    pub false_rates: Vec<AlphaRate>,
    pub records: usize,
}

impl CkaSummary {
    pub fn from_rows(rows: &[CkaRow], alphas: &[f64]) -> Result<Self, RunError> {
        if rows.is_empty() {
            return Err(RunError::NoCases);
        }
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        Ok(Self {
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            false_rates: alphas
                .iter()
                .map(|&alpha| AlphaRate {
                    alpha,
                    false_rate: cka_false_rate(&scores, alpha),
                })
                .collect(),
            records: rows.len(),
        })
    }
}

/// Sequential-editing memory for one (subject, relation) timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRow {
    pub index: u64,
    pub subject: String,
    pub relation_id: String,
    pub edits: usize,
    pub probe: String,
    pub object: String,
    pub p_first: f64,
    pub p_all: f64,
    pub memorization_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSummary {
    pub memorization_ratio: f64,
    pub records: usize,
}

impl TemporalSummary {
    pub fn from_rows(rows: &[TemporalRow]) -> Result<Self, RunError> {
        if rows.is_empty() {
            return Err(RunError::NoCases);
        }
        Ok(Self {
            memorization_ratio: rows.iter().map(|r| r.memorization_ratio).sum::<f64>()
                / rows.len() as f64,
            records: rows.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub backend_id: String,
    pub k: usize,
    pub seed: u64,
    pub normalization: String,
    pub pooling: String,
    pub length_mode: String,
    pub budget: usize,
    pub ablation: String,
    pub config_hash: String,
    pub cases: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Edit,
    Ablation,
    Cka,
    Temporal,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub suite: Suite,
    pub metadata: RunMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cka: Option<CkaSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<TemporalSummary>,
}

/// Summary plus the per-case rows it was computed from.
#[derive(Debug)]
pub struct Outcome<T> {
    pub summary: Summary,
    pub cases: Vec<T>,
    pub errors: Vec<RunError>,
}

/// Neighbors in context order, their kinds and the built demonstrations.
type Selection = (Vec<Neighbor>, Vec<Kind>, Vec<Demonstration>);

/// Labeled contexts sent for one case, kept for optional dumps.
type CaseContexts = (u64, Vec<(String, String)>);

/// Loaded corpus, retrieval index and backend for one configuration.
pub struct Harness {
    config: RunConfig,
    split: CorpusSplit,
    train_pos: HashMap<u64, usize>,
    index: Option<EmbeddingIndex>,
    queries: HashMap<u64, EmbeddingVector>,
    embedder: Option<Box<dyn Embedder>>,
    backend: Box<dyn Backend>,
    /// Corpus-wide relation templates for contrastive probes.
    relations: Vec<(String, String, String)>,
}

/// Builds the configured scoring backend, wrapped in the response cache when
/// a cache directory is configured (always for remote backends).
pub fn build_backend(config: &RunConfig) -> Result<Box<dyn Backend>, RunError> {
    Ok(match &config.backend {
        BackendSpec::Mock { rules, floor } => {
            let mock = MockBackend::from_file(rules, *floor)?;
            match &config.cache_dir {
                Some(dir) => Box::new(CachedBackend::new(mock, ScoreCache::open(dir)?)),
                None => Box::new(mock),
            }
        }
        BackendSpec::Remote(url) => {
            let remote = RemoteBackend::new(config.transport(url));
            let dir = config
                .cache_dir
                .clone()
                .unwrap_or_else(|| config.out.join("cache"));
            Box::new(CachedBackend::new(remote, ScoreCache::open(dir)?))
        }
    })
}

impl Harness {
    /// Loads everything the config names and builds its backend.
    pub fn from_config(config: RunConfig) -> Result<Self, RunError> {
        let backend = build_backend(&config)?;
        Self::with_backend(config, backend)
    }

    /// Like [`from_config`](Self::from_config) with an explicit backend.
    pub fn with_backend(config: RunConfig, backend: Box<dyn Backend>) -> Result<Self, RunError> {
        let records = match &config.corpus {
            Some(path) => {
                let report = corpus::load_counterfact(path, config.strict)?;
                if !report.rejected.is_empty() {
                    warn!("{} corpus record(s) rejected", report.rejected.len());
                }
                report.records
            }
            None => Vec::new(),
        };
        Self::with_records(config, records, backend)
    }

    pub fn with_records(
        config: RunConfig,
        records: Vec<EditRecord>,
        backend: Box<dyn Backend>,
    ) -> Result<Self, RunError> {
        let mut relations: Vec<(String, String, String)> = records
            .iter()
            .map(|r| (r.relation_id.clone(), r.prompt_template.clone(), r.subject.clone()))
            .collect();
        relations.sort();
        relations.dedup();

        let split = corpus::split_at(records, config.test_size);
        let train_pos = split
            .train
            .iter()
            .enumerate()
            .map(|(i, r)| (r.case_id, i))
            .collect();

        let embedder: Option<Box<dyn Embedder>> = match &config.embedding {
            EmbeddingSource::Stub { dimension, seed } => Some(Box::new(StubEmbedder {
                dimension: *dimension,
                seed: *seed,
            })),
            EmbeddingSource::Endpoint(url) => Some(Box::new(RemoteEmbedder::new(config.transport(url)))),
            EmbeddingSource::File(_) => None,
        };

        let mut harness = Self {
            config,
            split,
            train_pos,
            index: None,
            queries: HashMap::new(),
            embedder,
            backend,
            relations,
        };
        if harness.config.k > 0 && !harness.split.train.is_empty() {
            harness.build_index()?;
        }
        Ok(harness)
    }

    fn build_index(&mut self) -> Result<(), RunError> {
        let (train_vecs, test_vecs) = match (&self.config.embedding, &self.embedder) {
            (EmbeddingSource::File(path), _) => {
                let mut table = read_embeddings(path)?;
                let train = self
                    .split
                    .train
                    .iter()
                    .map(|r| {
                        table
                            .remove(&r.case_id)
                            .ok_or(RetrievalError::MissingId(r.case_id))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let test = self
                    .split
                    .test
                    .iter()
                    .filter_map(|r| table.remove(&r.case_id).map(|v| (r.case_id, v)))
                    .collect::<Vec<_>>();
                (train, test)
            }
            (_, Some(embedder)) => {
                let keys: Vec<String> = self.split.train.iter().map(encode_key).collect();
                let train = embedder.embed(&keys)?;
                let keys: Vec<String> = self.split.test.iter().map(encode_key).collect();
                let test = embedder.embed(&keys)?;
                let test = self.split.test.iter().map(|r| r.case_id).zip(test).collect();
                (train, test)
            }
            (_, None) => unreachable!("non-file sources carry an embedder"),
        };
        let dimension = train_vecs.first().map_or(1, EmbeddingVector::dim);
        let index = EmbeddingIndex::build(
            dimension,
            self.split.train.iter().map(|r| r.case_id).zip(train_vecs),
        )?;
        info!("indexed {} training records (d = {dimension})", index.len());
        self.index = Some(index);
        self.queries = test_vecs.into_iter().collect();
        Ok(())
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn split(&self) -> &CorpusSplit {
        &self.split
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    fn train_record(&self, case_id: u64) -> &EditRecord {
        &self.split.train[self.train_pos[&case_id]]
    }

    /// Demonstration records in context order (least similar first).
    fn select(&self, key: u64, query: &EmbeddingVector) -> Result<Vec<Neighbor>, RunError> {
        let index = self
            .index
            .as_ref()
            .ok_or(RunError::Retrieval(RetrievalError::EmptyIndex))?;
        let k = self.config.k;
        let seed = self.config.seed;
        match self.config.ablation {
            Some(Ablation::RandomSelection) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "select", &[key]));
                let chosen: Vec<u64> = index
                    .ids()
                    .choose_multiple(&mut rng, k.min(index.len()))
                    .copied()
                    .collect();
                let sims: HashMap<u64, f64> = index
                    .similarities(query)?
                    .into_iter()
                    .map(|n| (n.case_id, n.similarity))
                    .collect();
                Ok(chosen
                    .into_iter()
                    .map(|case_id| Neighbor {
                        case_id,
                        similarity: sims[&case_id],
                    })
                    .collect())
            }
            ablation => {
                let found = knn(index, query, k)?;
                let sims: HashMap<u64, f64> =
                    found.iter().map(|n| (n.case_id, n.similarity)).collect();
                let mut order = order_for_context(&found);
                if ablation == Some(Ablation::RandomOrdering) {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "order", &[key]));
                    order.shuffle(&mut rng);
                }
                Ok(order
                    .into_iter()
                    .map(|case_id| Neighbor {
                        case_id,
                        similarity: sims[&case_id],
                    })
                    .collect())
            }
        }
    }

    /// Neighbors, kind sequence and demonstrations for one query.
    fn demonstrations(
        &self,
        key: u64,
        query: Option<&EmbeddingVector>,
    ) -> Result<Selection, RunError> {
        if self.config.k == 0 {
            return Ok(Default::default());
        }
        let query = query.ok_or(RunError::Retrieval(RetrievalError::MissingId(key)))?;
        let neighbors = self.select(key, query)?;
        let kinds = spread_kinds(allocate_kinds_among(
            neighbors.len(),
            &Ablation::kinds(self.config.ablation),
        )?);
        let demos = neighbors
            .iter()
            .zip(&kinds)
            .enumerate()
            .map(|(slot, (n, &kind))| {
                let selector = derive_seed(self.config.seed, "probe", &[key, n.case_id, slot as u64]);
                build_demonstration(self.train_record(n.case_id), kind, selector)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((neighbors, kinds, demos))
    }

    fn score(&self, context: String, candidates: Vec<String>) -> Result<(String, ScoreResult), RunError> {
        let request = ScoreRequest::new(context, candidates);
        let result = lm::score(self.backend.as_ref(), &request)?;
        Ok((request.context, result))
    }

    fn probe_log(
        &self,
        scope: Scope,
        plan: &ContextPlan,
        record: &EditRecord,
        contexts: &mut Vec<(String, String)>,
    ) -> Result<ProbeLog, RunError> {
        let assembled = assemble(plan, self.config.budget, self.config.length_mode.measure_fn())?;
        let candidates = vec![continuation(&record.target_new), continuation(&record.target_true)];
        let (context, score) = self.score(assembled.text, candidates.clone())?;
        let norm = self.config.normalization;
        let log = ProbeLog {
            scope,
            probe: plan.query_probe.clone(),
            context_sha256: sha256_hex(&context),
            demonstrations: assembled.kept,
            candidates,
            p_new: probability(&score, 0, norm),
            p_old: probability(&score, 1, norm),
            score,
        };
        contexts.push((format!("{}: {}", scope.as_str(), plan.query_probe), context));
        Ok(log)
    }

    /// Builds, scores and logs every probe of one test record.
    pub fn edit_case(&self, record: &EditRecord) -> Result<(CaseLog, Vec<(String, String)>), RunError> {
        record.validate_for_test()?;
        let (neighbors, kinds, demos) =
            self.demonstrations(record.case_id, self.queries.get(&record.case_id))?;
        let target = render_target_prompt(record);
        let mut contexts = Vec::new();
        let probes = std::iter::once((Scope::Target, target.clone()))
            .chain(record.paraphrase_prompts.iter().map(|p| (Scope::Paraphrase, p.clone())))
            .chain(record.neighborhood_prompts.iter().map(|p| (Scope::Neighborhood, p.clone())))
            .map(|(scope, probe)| {
                let plan = ContextPlan::new(demos.clone(), &target, &record.target_new, probe);
                self.probe_log(scope, &plan, record, &mut contexts)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let candidates = vec![continuation(&record.target_new), continuation(&record.target_true)];
        let (context, score) = self.score(format!("Prompt: {target}"), candidates.clone())?;
        let norm = self.config.normalization;
        let pre_edit = ProbeLog {
            scope: Scope::Target,
            probe: target,
            context_sha256: sha256_hex(&context),
            demonstrations: 0,
            candidates,
            p_new: probability(&score, 0, norm),
            p_old: probability(&score, 1, norm),
            score,
        };
        contexts.push(("pre-edit".into(), context));
        Ok((
            CaseLog {
                case_id: record.case_id,
                neighbors,
                kinds,
                probes,
                pre_edit,
            },
            contexts,
        ))
    }

    /// Contrastive-relation probes for one test record.
    pub fn cka_case(&self, record: &EditRecord) -> Result<CkaRow, RunError> {
        record.validate()?;
        let (_, _, demos) = self.demonstrations(record.case_id, self.queries.get(&record.case_id))?;
        let target = render_target_prompt(record);
        let foreign = self.foreign_relations(record);
        if foreign.is_empty() {
            return Err(RunError::Config(format!(
                "case {}: no contrastive relations available",
                record.case_id
            )));
        }
        let candidate = vec![continuation(&record.target_new)];
        let p_of = |probe: &str| -> Result<(String, f64), RunError> {
            let plan = ContextPlan::new(demos.clone(), &target, &record.target_new, probe);
            let assembled = assemble(&plan, self.config.budget, self.config.length_mode.measure_fn())?;
            let (context, score) = self.score(assembled.text, candidate.clone())?;
            Ok((sha256_hex(&context), probability(&score, 0, self.config.normalization)))
        };
        let (_, p_true) = p_of(&target)?;
        let contrastive = foreign
            .into_iter()
            .map(|(relation_id, template)| {
                let probe = template.replacen("{}", &record.subject, 1);
                let (context_sha256, p) = p_of(&probe)?;
                Ok(ContrastiveProbe {
                    relation_id,
                    probe,
                    context_sha256,
                    p,
                })
            })
            .collect::<Result<Vec<_>, RunError>>()?;
        let ps: Vec<f64> = contrastive.iter().map(|c| c.p).collect();
        let score = cka_score(p_true, &ps)?;
        Ok(CkaRow {
            case_id: record.case_id,
            p_true,
            contrastive,
            score,
        })
    }

    /// Up to `cka_m` relation templates (one per relation) from records that
    /// share neither the relation nor the subject, sampled with the run seed.
    fn foreign_relations(&self, record: &EditRecord) -> Vec<(String, String)> {
        let mut per_relation: BTreeMap<&str, &str> = BTreeMap::new();
        for (rel, template, subject) in &self.relations {
            if rel != &record.relation_id && subject != &record.subject {
                per_relation.entry(rel).or_insert(template);
            }
        }
        let pool: Vec<(String, String)> = per_relation
            .into_iter()
            .map(|(r, t)| (r.to_string(), t.to_string()))
            .collect();
        let m = self.config.cka_m;
        if pool.len() <= m {
            if pool.len() < m {
                warn!(
                    "case {}: {} contrastive relation(s) available, wanted {m}",
                    record.case_id,
                    pool.len()
                );
            }
            return pool;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "cka", &[record.case_id]));
        let mut chosen: Vec<(String, String)> = pool.choose_multiple(&mut rng, m).cloned().collect();
        chosen.sort();
        chosen
    }

    /// Injects a timeline's facts in order and measures recall of the oldest.
    pub fn temporal_case(&self, index: u64, record: &TemporalFactRecord) -> Result<TemporalRow, RunError> {
        let (probe, object) = record.fact(0);
        let demos = if self.config.k > 0 && self.index.is_some() {
            let embedder = self.embedder.as_ref().ok_or(RunError::Retrieval(
                RetrievalError::Unsupported("temporal queries need a stub or endpoint embedder"),
            ))?;
            let query = embedder.embed(&[format!("{probe} {object}")])?.remove(0);
            self.demonstrations(index, Some(&query))?.2
        } else {
            Vec::new()
        };
        let candidate = vec![continuation(&object)];
        let p_for = |plan: &ContextPlan| -> Result<f64, RunError> {
            let assembled = assemble(plan, self.config.budget, self.config.length_mode.measure_fn())?;
            let (_, score) = self.score(assembled.text, candidate.clone())?;
            Ok(probability(&score, 0, self.config.normalization))
        };
        let first = ContextPlan::new(demos.clone(), &probe, &object, &probe);
        let p_first = p_for(&first)?;

        let last = record.timeline.len() - 1;
        let (last_prompt, last_object) = record.fact(last);
        let mut all = ContextPlan::new(demos, last_prompt, last_object, &probe);
        all.earlier_facts = (0..last).map(|i| record.fact(i)).collect();
        let p_all = p_for(&all)?;

        Ok(TemporalRow {
            index,
            subject: record.subject.clone(),
            relation_id: record.relation_id.clone(),
            edits: record.timeline.len(),
            probe,
            object,
            p_first,
            p_all,
            memorization_ratio: memorization_ratio(p_first, p_all)?,
        })
    }

    fn metadata(&self, cases: usize, skipped: usize) -> RunMetadata {
        let c = &self.config;
        RunMetadata {
            backend_id: self.backend.id().to_string(),
            k: c.k,
            seed: c.seed,
            normalization: c.normalization.as_str().into(),
            pooling: c.pooling.as_str().into(),
            length_mode: format!("{:?}", c.length_mode).to_lowercase(),
            budget: c.budget,
            ablation: c.ablation.map_or("none", Ablation::as_str).into(),
            config_hash: c.hash(),
            cases,
            skipped,
        }
    }

    /// Runs `f` over `items` on the worker pool. Transport failures stop
    /// further cases; other case errors are collected.
    fn run_cases<I, T, F>(&self, items: &[I], id: impl Fn(&I) -> u64 + Sync, f: F) -> (Vec<T>, Vec<(u64, RunError)>)
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> Result<T, RunError> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .expect("thread pool");
        let stop = AtomicBool::new(false);
        let outcomes: Vec<(u64, Result<T, RunError>)> = pool.install(|| {
            items
                .par_iter()
                .map(|item| {
                    let key = id(item);
                    if stop.load(Ordering::SeqCst) {
                        return (key, Err(RunError::Config("skipped after abort".into())));
                    }
                    let out = f(item);
                    if let Err(e) = &out {
                        if is_fatal(e) || self.config.strict {
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                    (key, out)
                })
                .collect()
        });
        let mut ok = Vec::new();
        let mut errors = Vec::new();
        for (key, out) in outcomes {
            match out {
                Ok(v) => ok.push(v),
                Err(e) => errors.push((key, e)),
            }
        }
        (ok, errors)
    }

    fn finish<T: Serialize>(
        &self,
        summary: impl FnOnce(&[T]) -> Result<Summary, RunError>,
        cases: Vec<T>,
        errors: Vec<(u64, RunError)>,
        contexts: Option<Vec<CaseContexts>>,
    ) -> Result<Outcome<T>, RunError> {
        let out = &self.config.out;
        report::write_config(out, &self.config)?;
        if let Some(contexts) = contexts {
            report::dump_contexts(out, &contexts)?;
        }
        let fatal = errors
            .iter()
            .position(|(_, e)| is_fatal(e))
            .or_else(|| (self.config.strict && !errors.is_empty()).then_some(0));
        if let Some(i) = fatal {
            report::write_cases(out, &cases)?;
            let (case_id, source) = errors.into_iter().nth(i).expect("index in range");
            return Err(RunError::Aborted {
                completed: cases.len(),
                source: Box::new(RunError::Case {
                    case_id,
                    source: Box::new(source),
                }),
            });
        }
        for (case_id, e) in &errors {
            warn!("case {case_id} skipped: {e}");
        }
        if cases.is_empty() {
            report::write_cases(out, &cases)?;
            return Err(RunError::NoCases);
        }
        let summary = summary(&cases)?;
        emit_reports(&summary, &cases, out)?;
        Ok(Outcome {
            summary,
            cases,
            errors: errors
                .into_iter()
                .map(|(case_id, e)| RunError::Case {
                    case_id,
                    source: Box::new(e),
                })
                .collect(),
        })
    }

    pub fn run_edit(&self, suite: Suite) -> Result<Outcome<CaseLog>, RunError> {
        let (results, errors) = self.run_cases(&self.split.test, |r| r.case_id, |r| self.edit_case(r));
        let (mut cases, mut contexts): (Vec<CaseLog>, Vec<_>) = results
            .into_iter()
            .map(|(log, ctx)| {
                let id = log.case_id;
                (log, (id, ctx))
            })
            .unzip();
        cases.sort_by_key(|c| c.case_id);
        contexts.sort_by_key(|c: &(u64, _)| c.0);
        let skipped = errors.len();
        let contexts = self.config.dump_contexts.then_some(contexts);
        self.finish(
            |cases| {
                Ok(Summary {
                    suite,
                    metadata: self.metadata(cases.len(), skipped),
                    metrics: Some(edit_metrics(cases, self.config.pooling)?),
                    cka: None,
                    temporal: None,
                })
            },
            cases,
            errors,
            contexts,
        )
    }

    pub fn run_cka(&self) -> Result<Outcome<CkaRow>, RunError> {
        let (mut rows, errors) = self.run_cases(&self.split.test, |r| r.case_id, |r| self.cka_case(r));
        rows.sort_by_key(|r| r.case_id);
        let skipped = errors.len();
        self.finish(
            |rows| {
                Ok(Summary {
                    suite: Suite::Cka,
                    metadata: self.metadata(rows.len(), skipped),
                    metrics: None,
                    cka: Some(CkaSummary::from_rows(rows, &self.config.alphas)?),
                    temporal: None,
                })
            },
            rows,
            errors,
            None,
        )
    }

    pub fn run_temporal(&self, records: &[TemporalFactRecord]) -> Result<Outcome<TemporalRow>, RunError> {
        let indexed: Vec<(u64, &TemporalFactRecord)> =
            records.iter().enumerate().map(|(i, r)| (i as u64, r)).collect();
        let (mut rows, errors) =
            self.run_cases(&indexed, |(i, _)| *i, |(i, r)| self.temporal_case(*i, r));
        rows.sort_by_key(|r| r.index);
        let skipped = errors.len();
        self.finish(
            |rows| {
                Ok(Summary {
                    suite: Suite::Temporal,
                    metadata: self.metadata(rows.len(), skipped),
                    metrics: None,
                    cka: None,
                    temporal: Some(TemporalSummary::from_rows(rows)?),
                })
            },
            rows,
            errors,
            None,
        )
    }
}

fn is_fatal(e: &RunError) -> bool {
    match e {
        RunError::Lm(LmError::Transport { .. }) => true,
        RunError::Retrieval(RetrievalError::Lm(LmError::Transport { .. })) => true,
        RunError::Case { source, .. } => is_fatal(source),
        _ => false,
    }
}

/// Edit metrics plus forgetting statistics from case logs.
pub fn edit_metrics(cases: &[CaseLog], pooling: metrics::Pooling) -> Result<MetricsReport, RunError> {
    let results: Vec<CaseResult> = cases.iter().map(CaseLog::to_case_result).collect();
    let mut report = metrics::aggregate_with(&results, pooling)?;
    let (pre, post): (Vec<f64>, Vec<f64>) = cases
        .iter()
        .filter_map(|c| c.post_edit_p_old().map(|post| (c.pre_edit.p_old, post)))
        .unzip();
    let (drop, rate) = forgetting(&pre, &post)?;
    report.prob_drop = Some(drop);
    report.forgetting_rate = Some(rate);
    Ok(report)
}

/// Loads the corpus named in the config and runs every test record through
/// retrieval, context assembly and scoring. Writes the summary, per-case log
/// and table to the configured output directory.
pub fn run_edit_suite(config: &RunConfig) -> Result<Outcome<CaseLog>, RunError> {
    require_corpus(config)?;
    Harness::from_config(config.clone())?.run_edit(Suite::Edit)
}

/// [`run_edit_suite`] under the configured ablation switch.
pub fn run_ablation(config: &RunConfig) -> Result<Outcome<CaseLog>, RunError> {
    require_corpus(config)?;
    if config.ablation.is_none() {
        return Err(RunError::Config("no ablation switch set".into()));
    }
    Harness::from_config(config.clone())?.run_edit(Suite::Ablation)
}

pub fn run_cka_suite(config: &RunConfig) -> Result<Outcome<CkaRow>, RunError> {
    require_corpus(config)?;
    Harness::from_config(config.clone())?.run_cka()
}

pub fn run_temporal_suite(
    config: &RunConfig,
    records: &[TemporalFactRecord],
) -> Result<Outcome<TemporalRow>, RunError> {
    Harness::from_config(config.clone())?.run_temporal(records)
}

fn require_corpus(config: &RunConfig) -> Result<(), RunError> {
    if config.corpus.is_none() {
        return Err(RunError::Config("`corpus` is required".into()));
    }
    Ok(())
}
