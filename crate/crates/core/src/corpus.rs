//! Edit benchmark loading: Counterfact-style edit records and Templama-style
//! temporal fact chains.
//!
//! The canonical on-disk format is one JSON object per line. The Counterfact
//! loader also accepts the upstream array layout, where each element nests the
//! edit under `requested_rewrite`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CorpusError;

/// Number of leading records reserved for evaluation.
pub const TEST_SPLIT_SIZE: usize = 2000;

const SUBJECT_SLOT: &str = "{}";
const TIME_SLOT: &str = "_X_";

/// One counterfactual edit case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub case_id: u64,
    pub subject: String,
    pub relation_id: String,
    pub prompt_template: String,
    pub target_true: String,
    pub target_new: String,
    pub paraphrase_prompts: Vec<String>,
    pub neighborhood_prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_prompts: Option<Vec<String>>,
}

impl EditRecord {
    /// Target prompt with the subject filled in.
    pub fn target_prompt(&self) -> String {
        render_target_prompt(self)
    }

    /// Checks the per-record invariants that hold for every split.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let loc = format!("case_id {}", self.case_id);
        let slots = self.prompt_template.matches(SUBJECT_SLOT).count();
        if slots != 1 {
            return Err(CorpusError::parse(
                loc,
                "prompt_template",
                format!("expected exactly one `{{}}` placeholder, found {slots}"),
            ));
        }
        if self.target_true.trim() == self.target_new.trim() {
            return Err(CorpusError::parse(
                loc,
                "target_new",
                "target_new equals target_true",
            ));
        }
        Ok(())
    }

    /// Test-split records must carry both in-scope and out-of-scope probes.
    pub fn validate_for_test(&self) -> Result<(), CorpusError> {
        self.validate()?;
        let loc = format!("case_id {}", self.case_id);
        if self.paraphrase_prompts.is_empty() {
            return Err(CorpusError::parse(loc, "paraphrase_prompts", "empty list"));
        }
        if self.neighborhood_prompts.is_empty() {
            return Err(CorpusError::parse(loc, "neighborhood_prompts", "empty list"));
        }
        Ok(())
    }
}

/// Fills the subject into the record's prompt template.
pub fn render_target_prompt(record: &EditRecord) -> String {
    record.prompt_template.replacen(SUBJECT_SLOT, &record.subject, 1)
}

/// A time-ordered chain of objects for one (subject, relation) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFactRecord {
    pub subject: String,
    pub relation_id: String,
    pub query_template: String,
    pub timeline: Vec<TimedObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedObject {
    pub time_label: String,
    pub object: String,
}

impl TemporalFactRecord {
    /// Query text preceding the `_X_` slot, e.g. "Tom Brady plays for".
    pub fn query_prefix(&self) -> &str {
        let end = self.query_template.find(TIME_SLOT).unwrap_or(self.query_template.len());
        self.query_template[..end].trim()
    }

    /// Time-qualified probe, e.g. "In 2019, Tom Brady plays for".
    pub fn probe(&self, time_label: &str) -> String {
        format!("In {time_label}, {}", self.query_prefix())
    }

    /// Time-qualified fact sentence for timeline entry `i`.
    pub fn fact(&self, i: usize) -> (String, String) {
        let entry = &self.timeline[i];
        (self.probe(&entry.time_label), entry.object.clone())
    }
}

/// Test/train partition of an edit corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub test: Vec<EditRecord>,
    pub train: Vec<EditRecord>,
}

/// Splits off the first [`TEST_SPLIT_SIZE`] records as the test set.
pub fn split(records: Vec<EditRecord>) -> CorpusSplit {
    split_at(records, TEST_SPLIT_SIZE)
}

/// Like [`split`] with an explicit test size.
pub fn split_at(mut records: Vec<EditRecord>, test_size: usize) -> CorpusSplit {
    let cut = test_size.min(records.len());
    let train = records.split_off(cut);
    CorpusSplit {
        test: records,
        train,
    }
}

/// Outcome of a lenient load: accepted records plus per-record rejections.
#[derive(Debug)]
pub struct LoadReport<T> {
    pub records: Vec<T>,
    pub rejected: Vec<CorpusError>,
    pub warnings: Vec<String>,
}

/// Strict Counterfact load: any rejected record fails the whole load.
pub fn parse_counterfact(path: impl AsRef<Path>) -> Result<Vec<EditRecord>, CorpusError> {
    Ok(load_counterfact(path, true)?.records)
}

/// Loads a Counterfact file. With `strict`, the first rejection is returned
/// as an error; otherwise rejections are collected in the report.
pub fn load_counterfact(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<LoadReport<EditRecord>, CorpusError> {
    let path = path.as_ref();
    let text = read(path)?;
    parse_counterfact_str(&text, strict)
}

pub fn parse_counterfact_str(
    text: &str,
    strict: bool,
) -> Result<LoadReport<EditRecord>, CorpusError> {
    let parsed: Vec<Result<EditRecord, CorpusError>> = if text.trim_start().starts_with('[') {
        let items: Vec<Value> = serde_json::from_str(text)
            .map_err(|e| CorpusError::parse("array", "<document>", e.to_string()))?;
        items
            .par_iter()
            .enumerate()
            .map(|(i, v)| record_from_value(v, &format!("element {}", i + 1)))
            .collect()
    } else {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        lines
            .par_iter()
            .map(|(i, line)| {
                let loc = format!("line {}", i + 1);
                let v: Value = serde_json::from_str(line)
                    .map_err(|e| CorpusError::parse(&loc, "<record>", e.to_string()))?;
                record_from_value(&v, &loc)
            })
            .collect()
    };

    let mut report = LoadReport {
        records: Vec::with_capacity(parsed.len()),
        rejected: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = HashSet::new();
    for item in parsed {
        let outcome = item.and_then(|r| {
            if seen.insert(r.case_id) {
                Ok(r)
            } else {
                Err(CorpusError::validation(
                    format!("case_id {}", r.case_id),
                    "duplicate case_id",
                ))
            }
        });
        match outcome {
            Ok(r) => report.records.push(r),
            Err(e) if strict => return Err(e),
            Err(e) => {
                warn!("rejected record: {e}");
                report.rejected.push(e);
            }
        }
    }
    Ok(report)
}

/// Writes records in the canonical one-per-line format.
pub fn write_counterfact(path: impl AsRef<Path>, records: &[EditRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("EditRecord serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn record_from_value(v: &Value, loc: &str) -> Result<EditRecord, CorpusError> {
    let obj = v
        .as_object()
        .ok_or_else(|| CorpusError::parse(loc, "<record>", "expected an object"))?;
    let case_id = obj
        .get("case_id")
        .ok_or_else(|| CorpusError::parse(loc, "case_id", "missing"))?
        .as_u64()
        .ok_or_else(|| CorpusError::parse(loc, "case_id", "expected a non-negative integer"))?;
    let loc = format!("case_id {case_id}");

    let record = match obj.get("requested_rewrite") {
        Some(rw) => upstream_record(case_id, obj, rw, &loc)?,
        None => EditRecord {
            case_id,
            subject: text_field(obj, "subject", &loc)?,
            relation_id: text_field(obj, "relation_id", &loc)?,
            prompt_template: text_field(obj, "prompt_template", &loc)?,
            target_true: text_field(obj, "target_true", &loc)?,
            target_new: text_field(obj, "target_new", &loc)?,
            paraphrase_prompts: list_field(obj, "paraphrase_prompts", &loc)?,
            neighborhood_prompts: list_field(obj, "neighborhood_prompts", &loc)?,
            generation_prompts: optional_list(obj, "generation_prompts", &loc)?,
        },
    };
    record.validate()?;
    Ok(record)
}

fn upstream_record(
    case_id: u64,
    obj: &Map<String, Value>,
    rewrite: &Value,
    loc: &str,
) -> Result<EditRecord, CorpusError> {
    let rw = rewrite
        .as_object()
        .ok_or_else(|| CorpusError::parse(loc, "requested_rewrite", "expected an object"))?;
    let target = |key: &str| -> Result<String, CorpusError> {
        match rw.get(key) {
            Some(Value::Object(t)) => text_field(t, "str", loc)
                .map_err(|_| CorpusError::parse(loc, key, "expected {\"str\": ...}")),
            Some(Value::String(s)) => Ok(s.trim().to_string()),
            Some(_) => Err(CorpusError::parse(loc, key, "expected an object or string")),
            None => Err(CorpusError::parse(loc, key, "missing")),
        }
    };
    Ok(EditRecord {
        case_id,
        subject: text_field(rw, "subject", loc)?,
        relation_id: text_field(rw, "relation_id", loc)?,
        prompt_template: text_field(rw, "prompt", loc)
            .map_err(|_| CorpusError::parse(loc, "prompt_template", "missing or not text"))?,
        target_true: target("target_true")?,
        target_new: target("target_new")?,
        paraphrase_prompts: list_field(obj, "paraphrase_prompts", loc)?,
        neighborhood_prompts: list_field(obj, "neighborhood_prompts", loc)?,
        generation_prompts: optional_list(obj, "generation_prompts", loc)?,
    })
}

fn text_field(obj: &Map<String, Value>, key: &str, loc: &str) -> Result<String, CorpusError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(_) => Err(CorpusError::parse(loc, key, "expected text")),
        None => Err(CorpusError::parse(loc, key, "missing")),
    }
}

fn list_field(obj: &Map<String, Value>, key: &str, loc: &str) -> Result<Vec<String>, CorpusError> {
    match obj.get(key) {
        Some(v) => text_list(v, key, loc),
        None => Err(CorpusError::parse(loc, key, "missing")),
    }
}

fn optional_list(
    obj: &Map<String, Value>,
    key: &str,
    loc: &str,
) -> Result<Option<Vec<String>>, CorpusError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => text_list(v, key, loc).map(Some),
    }
}

fn text_list(v: &Value, key: &str, loc: &str) -> Result<Vec<String>, CorpusError> {
    let items = v
        .as_array()
        .ok_or_else(|| CorpusError::parse(loc, key, "expected a list of text"))?;
    items
        .iter()
        .map(|item| {
            item.as_str()
                .map(|s| s.trim().to_string())
                .ok_or_else(|| CorpusError::parse(loc, key, "expected a list of text"))
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct TemporalLine {
    subject: String,
    relation_id: String,
    query_template: String,
    time_label: Value,
    object: String,
}

/// Strict Templama load; groups with a single timestamp are skipped with a
/// warning even in strict mode since they cannot be evaluated.
pub fn parse_templama(path: impl AsRef<Path>) -> Result<Vec<TemporalFactRecord>, CorpusError> {
    Ok(load_templama(path, true)?.records)
}

pub fn load_templama(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<LoadReport<TemporalFactRecord>, CorpusError> {
    let text = read(path.as_ref())?;
    parse_templama_str(&text, strict)
}

pub fn parse_templama_str(
    text: &str,
    strict: bool,
) -> Result<LoadReport<TemporalFactRecord>, CorpusError> {
    let mut report = LoadReport {
        records: Vec::new(),
        rejected: Vec::new(),
        warnings: Vec::new(),
    };
    // (subject, relation) groups in order of first appearance
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<(usize, TemporalLine)>> = HashMap::new();

    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let parsed = serde_json::from_str::<TemporalLine>(line)
            .map_err(|e| CorpusError::parse(&loc, "<record>", e.to_string()))
            .and_then(|mut l| {
                l.subject = l.subject.trim().to_string();
                l.relation_id = l.relation_id.trim().to_string();
                l.query_template = l.query_template.trim().to_string();
                l.object = l.object.trim().to_string();
                l.time_label = Value::String(time_text(&l.time_label, &loc)?);
                if l.query_template.matches(TIME_SLOT).count() != 1 {
                    return Err(CorpusError::parse(
                        &loc,
                        "query_template",
                        "expected exactly one `_X_` placeholder",
                    ));
                }
                Ok(l)
            });
        match parsed {
            Ok(l) => {
                let key = (l.subject.clone(), l.relation_id.clone());
                if !groups.contains_key(&key) {
                    order.push(key.clone());
                }
                groups.entry(key).or_default().push((i + 1, l));
            }
            Err(e) if strict => return Err(e),
            Err(e) => report.rejected.push(e),
        }
    }

    for key in order {
        let lines = groups.remove(&key).expect("group recorded");
        match build_timeline(key, lines) {
            Ok(Some(record)) => report.records.push(record),
            Ok(None) => {}
            Err(GroupOutcome::Skip(msg)) => {
                warn!("{msg}");
                report.warnings.push(msg);
            }
            Err(GroupOutcome::Invalid(e)) if strict => return Err(e),
            Err(GroupOutcome::Invalid(e)) => report.rejected.push(e),
        }
    }
    Ok(report)
}

enum GroupOutcome {
    Skip(String),
    Invalid(CorpusError),
}

fn build_timeline(
    (subject, relation_id): (String, String),
    lines: Vec<(usize, TemporalLine)>,
) -> Result<Option<TemporalFactRecord>, GroupOutcome> {
    let loc = format!("{subject} / {relation_id}");
    let query_template = lines[0].1.query_template.clone();
    if let Some((n, _)) = lines.iter().find(|(_, l)| l.query_template != query_template) {
        return Err(GroupOutcome::Invalid(CorpusError::validation(
            format!("{loc} (line {n})"),
            "query_template differs within the group",
        )));
    }
    let mut entries: Vec<TimedObject> = lines
        .into_iter()
        .map(|(_, l)| TimedObject {
            time_label: l.time_label.as_str().unwrap_or_default().to_string(),
            object: l.object,
        })
        .collect();
    entries.sort_by(|a, b| natural_cmp(&a.time_label, &b.time_label));
    if let Some(w) = entries
        .windows(2)
        .find(|w| natural_cmp(&w[0].time_label, &w[1].time_label) == Ordering::Equal)
    {
        return Err(GroupOutcome::Invalid(CorpusError::validation(
            loc,
            format!("duplicate time_label {}", w[0].time_label),
        )));
    }
    // an object that persists across consecutive labels is one fact
    entries.dedup_by(|later, earlier| later.object == earlier.object);
    let mut objects = HashSet::new();
    if let Some(dup) = entries.iter().find(|e| !objects.insert(e.object.as_str())) {
        return Err(GroupOutcome::Invalid(CorpusError::validation(
            loc,
            format!("object `{}` recurs after a change", dup.object),
        )));
    }
    if entries.len() < 2 {
        return Err(GroupOutcome::Skip(format!(
            "{loc}: timeline has a single entry, skipped"
        )));
    }
    Ok(Some(TemporalFactRecord {
        subject,
        relation_id,
        query_template,
        timeline: entries,
    }))
}

fn time_text(v: &Value, loc: &str) -> Result<String, CorpusError> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CorpusError::parse(loc, "time_label", "expected text or number")),
    }
}

/// Orders labels chunk-wise: digit runs compare numerically, other runs
/// lexicographically. "2019" < "2020", "2019-2" < "2019-10".
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut xs, mut ys) = (chunks(a), chunks(b));
    loop {
        match (xs.next(), ys.next()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) => {
                let ord = match (is_digits(x), is_digits(y)) {
                    (true, true) => {
                        let (tx, ty) = (x.trim_start_matches('0'), y.trim_start_matches('0'));
                        tx.len().cmp(&ty.len()).then_with(|| tx.cmp(ty))
                    }
                    _ => x.cmp(y),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

fn is_digits(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_digit())
}

fn chunks(s: &str) -> impl Iterator<Item = &str> {
    let mut rest = s;
    std::iter::from_fn(move || {
        let first = rest.chars().next()?;
        let digit = first.is_ascii_digit();
        let end = rest
            .char_indices()
            .find(|(_, c)| c.is_ascii_digit() != digit)
            .map_or(rest.len(), |(i, _)| i);
        let (head, tail) = rest.split_at(end);
        rest = tail;
        Some(head)
    })
}
