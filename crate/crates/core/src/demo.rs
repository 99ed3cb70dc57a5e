//! Demonstration construction and context assembly.
//!
//! Each demonstration pairs a retrieved record's new fact with one probe:
//!
//! * copy: the fact's own prompt, answered with the new object;
//! * update: an in-scope paraphrase, answered with the new object;
//! * retain: an out-of-scope neighborhood prompt, answered with the original
//!   object.
//!
//! Rendered demonstrations are a fact line and a prompt line followed by a
//! blank line. The query block repeats the fact line and leaves the answer
//! slot open.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{render_target_prompt, EditRecord};
use crate::error::DemoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Copy,
    Update,
    Retain,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Copy, Kind::Update, Kind::Retain];

    /// Relative weight in the default 1:3:4 mix.
    pub fn weight(self) -> usize {
        match self {
            Kind::Copy => 1,
            Kind::Update => 3,
            Kind::Retain => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Copy => "copy",
            Kind::Update => "update",
            Kind::Retain => "retain",
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindAllocation {
    pub copy_count: usize,
    pub update_count: usize,
    pub retain_count: usize,
}

impl KindAllocation {
    pub fn count(&self, kind: Kind) -> usize {
        match kind {
            Kind::Copy => self.copy_count,
            Kind::Update => self.update_count,
            Kind::Retain => self.retain_count,
        }
    }

    pub fn total(&self) -> usize {
        self.copy_count + self.update_count + self.retain_count
    }

    fn set(&mut self, kind: Kind, n: usize) {
        match kind {
            Kind::Copy => self.copy_count = n,
            Kind::Update => self.update_count = n,
            Kind::Retain => self.retain_count = n,
        }
    }
}

/// Splits `k` slots 1:3:4 across copy/update/retain.
pub fn allocate_kinds(k: usize) -> Result<KindAllocation, DemoError> {
    allocate_kinds_among(k, &Kind::ALL)
}

/// Largest-remainder apportionment of `k` slots over the enabled kinds,
/// weighted 1:3:4, with every enabled kind receiving at least one slot.
pub fn allocate_kinds_among(k: usize, enabled: &[Kind]) -> Result<KindAllocation, DemoError> {
    let mut kinds: Vec<Kind> = enabled.to_vec();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(DemoError::NoKinds);
    }
    if k < kinds.len() {
        return Err(DemoError::TooFewSlots {
            k,
            kinds: kinds.len(),
        });
    }
    let total_weight: usize = kinds.iter().map(|k| k.weight()).sum();
    let mut alloc = KindAllocation {
        copy_count: 0,
        update_count: 0,
        retain_count: 0,
    };
    // integer arithmetic: share = k * w / W, remainder = (k * w) mod W
    let mut remainders = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let scaled = k * kind.weight();
        alloc.set(kind, scaled / total_weight);
        remainders.push((scaled % total_weight, kind));
    }
    // largest remainder first; equal remainders go to the heavier kind
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.weight().cmp(&a.1.weight())));
    let mut left = k - alloc.total();
    for &(_, kind) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc.set(kind, alloc.count(kind) + 1);
        left -= 1;
    }
    for &kind in &kinds {
        if alloc.count(kind) == 0 {
            let donor = *kinds
                .iter()
                .max_by_key(|&&d| (alloc.count(d), d.weight()))
                .expect("non-empty");
            alloc.set(donor, alloc.count(donor) - 1);
            alloc.set(kind, 1);
        }
    }
    Ok(alloc)
}

/// Position-by-position kind sequence for `k` context slots.
pub fn assign_kinds(k: usize) -> Result<Vec<Kind>, DemoError> {
    Ok(spread_kinds(allocate_kinds(k)?))
}

/// Spreads an allocation evenly over its slots. Kinds are placed in the order
/// copy, update, retain; the j-th of `c` slots for a kind goes to the slot
/// holding the centre point `(j + 0.5) * k / c`, moving right (cyclically) to
/// the next free slot on collision.
pub fn spread_kinds(alloc: KindAllocation) -> Vec<Kind> {
    let k = alloc.total();
    let mut slots: Vec<Option<Kind>> = vec![None; k];
    for kind in Kind::ALL {
        let c = alloc.count(kind);
        for j in 0..c {
            // ceil((2j + 1) k / 2c) - 1
            let mut pos = ((2 * j + 1) * k).div_ceil(2 * c) - 1;
            while slots[pos].is_some() {
                pos = (pos + 1) % k;
            }
            slots[pos] = Some(kind);
        }
    }
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// One in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub kind: Kind,
    pub fact_prompt: String,
    pub fact_answer: String,
    pub probe: String,
    pub answer: String,
}

/// Turns a record into a demonstration of the given kind. Update and retain
/// probes are drawn uniformly from the record's prompt lists using
/// `selector_seed`.
pub fn build_demonstration(
    record: &EditRecord,
    kind: Kind,
    selector_seed: u64,
) -> Result<Demonstration, DemoError> {
    let fact_prompt = render_target_prompt(record);
    let pick = |list: &[String], field: &'static str| -> Result<String, DemoError> {
        if list.is_empty() {
            return Err(DemoError::MissingPrompts {
                case_id: record.case_id,
                kind: kind.as_str(),
                field,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(selector_seed);
        Ok(list[rng.random_range(0..list.len())].clone())
    };
    let (probe, answer) = match kind {
        Kind::Copy => (fact_prompt.clone(), record.target_new.clone()),
        Kind::Update => (
            pick(&record.paraphrase_prompts, "paraphrase_prompts")?,
            record.target_new.clone(),
        ),
        Kind::Retain => (
            pick(&record.neighborhood_prompts, "neighborhood_prompts")?,
            record.target_true.clone(),
        ),
    };
    Ok(Demonstration {
        kind,
        fact_prompt,
        fact_answer: record.target_new.clone(),
        probe,
        answer,
    })
}

/// Joins prompt and answer with a space and closes the sentence.
fn sentence(prompt: &str, answer: &str) -> String {
    let mut s = if answer.is_empty() {
        prompt.trim_end().to_string()
    } else {
        format!("{prompt} {answer}")
    };
    if !s.ends_with(['.', '?', '!']) {
        s.push('.');
    }
    s
}

/// `New Fact: <prompt> <answer>.`
pub fn fact_line(prompt: &str, answer: &str) -> String {
    format!("New Fact: {}", sentence(prompt, answer))
}

pub fn render_demonstration(d: &Demonstration) -> String {
    format!(
        "{}\nPrompt: {}\n\n",
        fact_line(&d.fact_prompt, &d.fact_answer),
        sentence(&d.probe, &d.answer)
    )
}

/// Fact line plus open query line that closes every context.
pub fn render_query_tail(new_fact_prompt: &str, new_fact_answer: &str, query_probe: &str) -> String {
    format!(
        "{}\nPrompt: {}",
        fact_line(new_fact_prompt, new_fact_answer),
        query_probe
    )
}

/// Everything needed to assemble one query context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPlan {
    /// Left to right, least similar first.
    pub demonstrations: Vec<Demonstration>,
    /// Facts injected before the new fact, oldest first, as (prompt, answer).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub earlier_facts: Vec<(String, String)>,
    pub new_fact_prompt: String,
    pub new_fact_answer: String,
    pub query_probe: String,
}

impl ContextPlan {
    pub fn new(
        demonstrations: Vec<Demonstration>,
        new_fact_prompt: impl Into<String>,
        new_fact_answer: impl Into<String>,
        query_probe: impl Into<String>,
    ) -> Self {
        Self {
            demonstrations,
            earlier_facts: Vec::new(),
            new_fact_prompt: new_fact_prompt.into(),
            new_fact_answer: new_fact_answer.into(),
            query_probe: query_probe.into(),
        }
    }

    /// Mandatory part of the context: earlier fact lines, then the new fact
    /// and the open query.
    pub fn tail(&self) -> String {
        let mut tail = String::new();
        for (prompt, answer) in &self.earlier_facts {
            tail.push_str(&fact_line(prompt, answer));
            tail.push('\n');
        }
        tail.push_str(&render_query_tail(
            &self.new_fact_prompt,
            &self.new_fact_answer,
            &self.query_probe,
        ));
        tail
    }
}

/// How context length is measured against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMode {
    #[default]
    Chars,
    Words,
}

impl LengthMode {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthMode::Chars => text.chars().count(),
            LengthMode::Words => text.split_whitespace().count(),
        }
    }

    pub fn measure_fn(self) -> impl Fn(&str) -> usize {
        move |s| self.measure(s)
    }
}

pub const DEFAULT_BUDGET: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledContext {
    pub text: String,
    /// Demonstrations kept after budget truncation.
    pub kept: usize,
}

/// Renders the plan, dropping whole demonstrations from the left until the
/// context fits `budget`. Fact lines and the query are never dropped.
pub fn assemble(
    plan: &ContextPlan,
    budget: usize,
    length_fn: impl Fn(&str) -> usize,
) -> Result<AssembledContext, DemoError> {
    let tail = plan.tail();
    let tail_len = length_fn(&tail);
    if tail_len > budget {
        return Err(DemoError::TailOverBudget {
            tail: tail_len,
            budget,
        });
    }
    let rendered: Vec<String> = plan.demonstrations.iter().map(render_demonstration).collect();
    for start in 0..=rendered.len() {
        let mut text = rendered[start..].concat();
        text.push_str(&tail);
        if length_fn(&text) <= budget {
            return Ok(AssembledContext {
                text,
                kept: rendered.len() - start,
            });
        }
    }
    unreachable!("tail alone fits the budget")
}

pub fn assemble_context(
    plan: &ContextPlan,
    budget: usize,
    length_fn: impl Fn(&str) -> usize,
) -> Result<String, DemoError> {
    assemble(plan, budget, length_fn).map(|a| a.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Kind::*;

    fn bussotti() -> EditRecord {
        EditRecord {
            case_id: 42,
            subject: "Sylvano Bussotti".into(),
            relation_id: "P136".into(),
            prompt_template: "What does {} play? They play".into(),
            target_true: "violin".into(),
            target_new: "jazz".into(),
            paraphrase_prompts: vec!["Sylvano Bussotti performs".into()],
            neighborhood_prompts: vec!["The genre played by Fritz Kreisler is".into()],
            generation_prompts: None,
        }
    }

    #[test]
    fn allocation_examples() {
        let a = allocate_kinds(32).unwrap();
        assert_eq!((a.copy_count, a.update_count, a.retain_count), (4, 12, 16));
        let a = allocate_kinds(16).unwrap();
        assert_eq!((a.copy_count, a.update_count, a.retain_count), (2, 6, 8));
        // exact shares 1.125, 3.375, 4.5: the single leftover slot goes to retain
        let a = allocate_kinds(9).unwrap();
        assert_eq!((a.copy_count, a.update_count, a.retain_count), (1, 3, 5));
        let a = allocate_kinds(3).unwrap();
        assert_eq!((a.copy_count, a.update_count, a.retain_count), (1, 1, 1));
        assert!(matches!(
            allocate_kinds(2),
            Err(DemoError::TooFewSlots { k: 2, kinds: 3 })
        ));
    }

    #[test]
    fn allocation_with_dropped_kind() {
        // copy:retain = 1:4 over 8 slots -> shares 1.6, 6.4
        let a = allocate_kinds_among(8, &[Copy, Retain]).unwrap();
        assert_eq!((a.copy_count, a.update_count, a.retain_count), (2, 0, 6));
        assert!(allocate_kinds_among(4, &[]).is_err());
    }

    #[test]
    fn kind_sequence_for_eight() {
        assert_eq!(
            assign_kinds(8).unwrap(),
            [Retain, Update, Retain, Copy, Update, Retain, Update, Retain]
        );
    }

    #[test]
    fn kind_sequence_is_periodic_in_blocks_of_eight() {
        let eight = assign_kinds(8).unwrap();
        for blocks in [2, 4] {
            let seq = assign_kinds(8 * blocks).unwrap();
            for (i, kind) in seq.iter().enumerate() {
                assert_eq!(*kind, eight[i % 8], "k = {}, slot {i}", 8 * blocks);
            }
        }
    }

    #[test]
    fn bussotti_demonstrations() {
        let r = bussotti();
        let copy = build_demonstration(&r, Copy, 0).unwrap();
        assert_eq!(copy.probe, copy.fact_prompt);
        assert_eq!(copy.answer, "jazz");
        assert_eq!(
            render_demonstration(&copy),
            "New Fact: What does Sylvano Bussotti play? They play jazz.\nPrompt: What does Sylvano Bussotti play? They play jazz.\n\n"
        );
        let update = build_demonstration(&r, Update, 0).unwrap();
        assert_eq!(update.probe, "Sylvano Bussotti performs");
        assert_eq!(update.answer, "jazz");
        let retain = build_demonstration(&r, Retain, 0).unwrap();
        assert_eq!(retain.probe, "The genre played by Fritz Kreisler is");
        assert_eq!(retain.answer, "violin");
        assert_eq!(retain.fact_answer, "jazz");
    }

    #[test]
    fn missing_prompt_lists() {
        let mut r = bussotti();
        r.paraphrase_prompts.clear();
        let err = build_demonstration(&r, Update, 0).unwrap_err();
        assert!(err.to_string().contains("case 42"));
        assert!(err.to_string().contains("update"));
        assert!(build_demonstration(&r, Copy, 0).is_ok());
    }

    #[test]
    fn empty_answer_has_no_trailing_space() {
        let d = Demonstration {
            kind: Copy,
            fact_prompt: "A is".into(),
            fact_answer: "".into(),
            probe: "A is ".into(),
            answer: "".into(),
        };
        let text = render_demonstration(&d);
        assert_eq!(text, "New Fact: A is.\nPrompt: A is.\n\n");
    }

    fn plan(n: usize) -> ContextPlan {
        let r = bussotti();
        ContextPlan::new(
            (0..n)
                .map(|i| {
                    let mut d = build_demonstration(&r, Copy, 0).unwrap();
                    d.fact_prompt = format!("Demo {i} is");
                    d
                })
                .collect(),
            "The mother tongue of Danielle Darrieux is",
            "English",
            "Danielle Darrieux, a native",
        )
    }

    #[test]
    fn prompt_baseline_context() {
        let text = assemble_context(&plan(0), DEFAULT_BUDGET, |s| s.len()).unwrap();
        assert_eq!(
            text,
            "New Fact: The mother tongue of Danielle Darrieux is English.\nPrompt: Danielle Darrieux, a native"
        );
    }

    #[test]
    fn budget_drops_leftmost_demonstrations() {
        let p = plan(4);
        let full = assemble(&p, usize::MAX, LengthMode::Chars.measure_fn()).unwrap();
        assert_eq!(full.kept, 4);
        assert_eq!(full.text.matches("New Fact:").count(), 5);
        let two = render_demonstration(&p.demonstrations[2]).len()
            + render_demonstration(&p.demonstrations[3]).len();
        let tail = p.tail();
        let got = assemble(&p, two + tail.len(), |s| s.len()).unwrap();
        assert_eq!(got.kept, 2);
        assert!(!got.text.contains("Demo 0") && !got.text.contains("Demo 1"));
        assert!(got.text.contains("Demo 2") && got.text.contains("Demo 3"));
        assert!(got.text.ends_with("Prompt: Danielle Darrieux, a native"));
    }

    #[test]
    fn earlier_facts_precede_the_new_fact() {
        let mut p = plan(1);
        p.earlier_facts = vec![("In 2019, Tom Brady plays for".into(), "New England Patriots".into())];
        p.new_fact_prompt = "In 2020, Tom Brady plays for".into();
        p.new_fact_answer = "Tampa Bay Buccaneers".into();
        p.query_probe = "In 2019, Tom Brady plays for".into();
        let text = assemble_context(&p, usize::MAX, |s| s.len()).unwrap();
        assert!(text.ends_with(
            "New Fact: In 2019, Tom Brady plays for New England Patriots.\n\
             New Fact: In 2020, Tom Brady plays for Tampa Bay Buccaneers.\n\
             Prompt: In 2019, Tom Brady plays for"
        ));
        // facts survive a budget that only fits the tail
        let tight = assemble(&p, p.tail().len(), |s| s.len()).unwrap();
        assert_eq!(tight.kept, 0);
        assert_eq!(tight.text, p.tail());
    }

    #[test]
    fn tail_over_budget_is_an_error() {
        assert!(matches!(
            assemble_context(&plan(0), 10, |s| s.len()),
            Err(DemoError::TailOverBudget { .. })
        ));
    }
}
