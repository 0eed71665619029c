//! Match rules, stopping criteria, and match-plan execution over a scan
//! cursor — the environment the learning agent acts in.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::FieldId;
use crate::error::{Error, Result};
use crate::index::{FieldedIndex, ScanCursor};

pub const MASK_UT: u8 = FieldId::Url.mask() | FieldId::Title.mask();
pub const MASK_AUT: u8 = FieldId::Anchor.mask() | FieldId::Url.mask() | FieldId::Title.mask();
pub const MASK_AUBT: u8 = 0x0f;

/// A conjunction over required query term positions, each allowed to match
/// within a disjunction of document fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub rule_id: usize,
    /// Term positions that must match.
    pub required_terms: Vec<usize>,
    /// Allowed field mask per required term, parallel to `required_terms`.
    pub allowed_fields: Vec<u8>,
}

impl MatchRule {
    pub fn new(rule_id: usize, required_terms: Vec<usize>, allowed_fields: Vec<u8>) -> Result<Self> {
        if required_terms.is_empty() {
            return Err(Error::InvalidArgument(
                "match rule requires at least one term".into(),
            ));
        }
        if required_terms.len() != allowed_fields.len() {
            return Err(Error::InvalidArgument(
                "required_terms and allowed_fields length mismatch".into(),
            ));
        }
        if allowed_fields.iter().any(|&m| m == 0) {
            return Err(Error::InvalidArgument(
                "every required term needs a non-empty field set".into(),
            ));
        }
        Ok(MatchRule {
            rule_id,
            required_terms,
            allowed_fields,
        })
    }

    /// Uniform field mask across all required terms.
    pub fn uniform(rule_id: usize, required_terms: Vec<usize>, mask: u8) -> Result<Self> {
        let n = required_terms.len();
        MatchRule::new(rule_id, required_terms, vec![mask; n])
    }
}

/// True iff every required term's observed field set intersects the rule's
/// allowed fields. `field_masks` holds one mask per query term position
/// (0 = absent).
pub fn rule_matches(rule: &MatchRule, field_masks: &[u8]) -> bool {
    rule.required_terms
        .iter()
        .zip(&rule.allowed_fields)
        .all(|(&pos, &allowed)| field_masks[pos] & allowed != 0)
}

/// Per-rule-execution budgets on the growth of the u and v accumulators.
/// `None` means unbounded in that dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingCondition {
    pub max_blocks_delta: Option<u64>,
    pub max_matches_delta: Option<u64>,
}

impl StoppingCondition {
    /// At least one budget must be present.
    pub fn new(max_blocks_delta: Option<u64>, max_matches_delta: Option<u64>) -> Result<Self> {
        if max_blocks_delta.is_none() && max_matches_delta.is_none() {
            return Err(Error::InvalidArgument(
                "stopping condition needs at least one budget".into(),
            ));
        }
        Ok(StoppingCondition {
            max_blocks_delta,
            max_matches_delta,
        })
    }

    /// No budget in either dimension; the rule runs to cursor exhaustion.
    /// Used by oracle tests and tiny indexes.
    pub fn unbounded() -> Self {
        StoppingCondition {
            max_blocks_delta: None,
            max_matches_delta: None,
        }
    }

    fn met(&self, u_delta: u64, v_delta: u64) -> bool {
        self.max_blocks_delta.is_some_and(|b| u_delta >= b)
            || self.max_matches_delta.is_some_and(|m| v_delta >= m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Continue,
    Reset,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub rule: MatchRule,
    pub stop: StoppingCondition,
    pub transition: Transition,
}

/// A sequence of match rules with stopping criteria and transitions. The
/// last step must carry the Stop transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPlan {
    pub steps: Vec<PlanStep>,
}

impl MatchPlan {
    pub fn new(steps: Vec<PlanStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("match plan has no steps".into()));
        }
        if steps.last().unwrap().transition != Transition::Stop {
            return Err(Error::InvalidArgument(
                "last plan step must carry the Stop transition".into(),
            ));
        }
        Ok(MatchPlan { steps })
    }
}

/// Cumulative scan accumulators and the collected candidate set.
#[derive(Debug, Clone, Default)]
pub struct ScanState {
    /// Cumulative blocks accessed.
    pub u: u64,
    /// Cumulative (term, document) field-present matches among inspected
    /// documents, counted over the terms the active rule consults.
    pub v: u64,
    /// Candidates in discovery order, duplicate-free.
    pub candidates: Vec<u32>,
    seen: HashSet<u32>,
}

impl ScanState {
    pub fn new() -> Self {
        ScanState::default()
    }

    pub fn contains(&self, doc_ordinal: u32) -> bool {
        self.seen.contains(&doc_ordinal)
    }

    fn record(&mut self, doc_ordinal: u32) -> bool {
        if self.seen.insert(doc_ordinal) {
            self.candidates.push(doc_ordinal);
            true
        } else {
            false
        }
    }
}

/// Execute one match rule against the cursor until a budget is met or the
/// scan exhausts. Returns the documents newly added to the candidate set,
/// in scan order.
pub fn execute_rule(
    cursor: &mut ScanCursor<'_>,
    rule: &MatchRule,
    stop: &StoppingCondition,
    state: &mut ScanState,
) -> Vec<u32> {
    cursor.set_active_terms(&rule.required_terms);
    let u0 = state.u;
    let v0 = state.v;
    let mut new_docs = Vec::new();
    loop {
        if stop.met(state.u - u0, state.v - v0) {
            break;
        }
        let Some(scanned) = cursor.advance() else {
            break;
        };
        state.u = cursor.blocks_accessed();
        state.v += scanned.term_masks.iter().filter(|&&m| m != 0).count() as u64;
        if rule_matches(rule, &scanned.term_masks) && state.record(scanned.doc_ordinal) {
            new_docs.push(scanned.doc_ordinal);
        }
    }
    state.u = cursor.blocks_accessed();
    new_docs
}

/// Run a static match plan: execute each step, applying the
/// continue/reset/stop transition, recording (u, v) after every rule
/// execution. Returns the deduplicated candidate set and the trace.
pub fn run_plan(
    index: &FieldedIndex,
    terms: &[String],
    plan: &MatchPlan,
) -> Result<(Vec<u32>, Vec<(u64, u64)>)> {
    let detailed = run_plan_detailed(index, terms, plan)?;
    Ok((detailed.candidates, detailed.trace))
}

/// Per-step products of a plan run, used for baseline reward traces.
#[derive(Debug, Clone)]
pub struct PlanRun {
    pub candidates: Vec<u32>,
    /// (u, v) after every rule execution.
    pub trace: Vec<(u64, u64)>,
    /// Newly discovered docs per step, in scan order.
    pub step_new_docs: Vec<Vec<u32>>,
}

pub fn run_plan_detailed(
    index: &FieldedIndex,
    terms: &[String],
    plan: &MatchPlan,
) -> Result<PlanRun> {
    let mut cursor = crate::index::open_cursor(index, terms)?;
    let mut state = ScanState::new();
    let mut trace = Vec::with_capacity(plan.steps.len());
    let mut step_new_docs = Vec::with_capacity(plan.steps.len());
    for step in &plan.steps {
        let new_docs = execute_rule(&mut cursor, &step.rule, &step.stop, &mut state);
        trace.push((state.u, state.v));
        step_new_docs.push(new_docs);
        match step.transition {
            Transition::Continue => {}
            Transition::Reset => cursor.reset(),
            Transition::Stop => break,
        }
    }
    Ok(PlanRun {
        candidates: state.candidates,
        trace,
        step_new_docs,
    })
}

pub const DEFAULT_RULE_COUNT: usize = 5;

/// The fixed k = 5 nested rule ladder, ordered from strictest to most
/// relaxed:
///
/// - R0: all terms in URL or title
/// - R1: all terms in anchor, URL, or title
/// - R2: all terms in any field
/// - R3: all but the highest-df term, any field
/// - R4: the lowest-df term only, any field
///
/// Nesting (R0 => R1 => R2 => R3 => R4 on matched docs) gives the agent a
/// clean cost/recall ladder. For single-term queries R3 and R4 degenerate to
/// R2 semantics.
pub fn default_rule_set(term_dfs: &[u64]) -> Result<Vec<MatchRule>> {
    let n = term_dfs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("rule set needs at least one term".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let r0 = MatchRule::uniform(0, all.clone(), MASK_UT)?;
    let r1 = MatchRule::uniform(1, all.clone(), MASK_AUT)?;
    let r2 = MatchRule::uniform(2, all.clone(), MASK_AUBT)?;

    // Highest-df position (first on ties) and lowest-df position (last on
    // ties), chosen so the two never coincide for n >= 2.
    let hi = (0..n).max_by_key(|&i| (term_dfs[i], std::cmp::Reverse(i))).unwrap();
    let lo = (0..n).min_by_key(|&i| (term_dfs[i], std::cmp::Reverse(i))).unwrap();

    let r3_terms: Vec<usize> = if n == 1 {
        all.clone()
    } else {
        (0..n).filter(|&i| i != hi).collect()
    };
    let r3 = MatchRule::uniform(3, r3_terms, MASK_AUBT)?;
    let r4_terms = if n == 1 { all } else { vec![lo] };
    let r4 = MatchRule::uniform(4, r4_terms, MASK_AUBT)?;
    Ok(vec![r0, r1, r2, r3, r4])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize, Document, FieldId, NUM_FIELDS};
    use crate::index::{build_index, open_cursor};

    fn doc4(id: &str, rank: f64, anchor: &str, url: &str, body: &str, title: &str) -> Document {
        let mut fields: [Vec<String>; NUM_FIELDS] = Default::default();
        fields[FieldId::Anchor as usize] = tokenize(anchor);
        fields[FieldId::Url as usize] = tokenize(url);
        fields[FieldId::Body as usize] = tokenize(body);
        fields[FieldId::Title as usize] = tokenize(title);
        Document {
            doc_id: id.to_string(),
            static_rank: rank,
            fields,
        }
    }

    #[test]
    fn rule_matches_conjunction_and_relaxation() {
        // mr_A: both terms anywhere.
        let mr_a = MatchRule::uniform(0, vec![0, 1], MASK_AUBT).unwrap();
        let b = FieldId::Body.mask();
        let t = FieldId::Title.mask();
        assert!(rule_matches(&mr_a, &[b, t]));
        assert!(!rule_matches(&mr_a, &[b, 0]));
        // mr_B: only "facebook" required, in URL or title.
        let mr_b = MatchRule::uniform(1, vec![0], MASK_UT).unwrap();
        let u = FieldId::Url.mask();
        assert!(rule_matches(&mr_b, &[u, 0]));
        assert!(!rule_matches(&mr_b, &[b, 0]));
    }

    #[test]
    fn zero_budget_stops_immediately() {
        let corpus = vec![doc4("a", 0.9, "", "", "foo", "")];
        let idx = build_index(&corpus, 4).unwrap();
        let terms = tokenize("foo");
        let mut cursor = open_cursor(&idx, &terms).unwrap();
        let mut state = ScanState::new();
        let rule = MatchRule::uniform(0, vec![0], MASK_AUBT).unwrap();
        let stop = StoppingCondition::new(None, Some(0)).unwrap();
        let new_docs = execute_rule(&mut cursor, &rule, &stop, &mut state);
        assert!(new_docs.is_empty());
        assert_eq!(state.u, 0);
        assert_eq!(state.v, 0);
    }

    #[test]
    fn unlimited_budget_collects_all_matching_in_rank_order() {
        let corpus = vec![
            doc4("a", 0.9, "", "", "foo bar", ""),
            doc4("b", 0.7, "", "", "foo", ""),
            doc4("c", 0.5, "", "", "bar foo", ""),
        ];
        let idx = build_index(&corpus, 4).unwrap();
        let terms = tokenize("foo bar");
        let mut cursor = open_cursor(&idx, &terms).unwrap();
        let mut state = ScanState::new();
        let rule = MatchRule::uniform(0, vec![0, 1], MASK_AUBT).unwrap();
        let new_docs = execute_rule(&mut cursor, &rule, &StoppingCondition::unbounded(), &mut state);
        assert_eq!(new_docs, vec![0, 2]);
        // Second execution without reset: exhausted, nothing new.
        let again = execute_rule(&mut cursor, &rule, &StoppingCondition::unbounded(), &mut state);
        assert!(again.is_empty());
    }

    #[test]
    fn v_counts_term_document_matches() {
        // doc a has both terms, doc b has one: v = 2 + 1.
        let corpus = vec![
            doc4("a", 0.9, "", "", "foo bar", ""),
            doc4("b", 0.7, "", "", "foo", ""),
        ];
        let idx = build_index(&corpus, 4).unwrap();
        let terms = tokenize("foo bar");
        let mut cursor = open_cursor(&idx, &terms).unwrap();
        let mut state = ScanState::new();
        let rule = MatchRule::uniform(0, vec![0, 1], MASK_AUBT).unwrap();
        execute_rule(&mut cursor, &rule, &StoppingCondition::unbounded(), &mut state);
        assert_eq!(state.v, 3);
    }

    #[test]
    fn plan_with_reset_superset_of_single_rule() {
        let corpus = vec![
            doc4("a", 0.9, "", "facebook com", "", "facebook"),
            doc4("b", 0.7, "", "", "facebook login", ""),
            doc4("c", 0.5, "", "login portal", "facebook", "login"),
        ];
        let idx = build_index(&corpus, 4).unwrap();
        let terms = tokenize("facebook login");
        let mr_b = MatchRule::uniform(0, vec![0], MASK_UT).unwrap();
        let mr_a = MatchRule::uniform(2, vec![0, 1], MASK_AUBT).unwrap();

        let single = MatchPlan::new(vec![PlanStep {
            rule: mr_a.clone(),
            stop: StoppingCondition::unbounded(),
            transition: Transition::Stop,
        }])
        .unwrap();
        let (cand_a, trace_a) = run_plan(&idx, &terms, &single).unwrap();
        assert_eq!(trace_a.len(), 1);

        let combo = MatchPlan::new(vec![
            PlanStep {
                rule: mr_b,
                stop: StoppingCondition::new(Some(1), None).unwrap(),
                transition: Transition::Reset,
            },
            PlanStep {
                rule: mr_a,
                stop: StoppingCondition::unbounded(),
                transition: Transition::Stop,
            },
        ])
        .unwrap();
        let (cand_combo, trace_combo) = run_plan(&idx, &terms, &combo).unwrap();
        assert_eq!(trace_combo.len(), 2);
        for c in &cand_a {
            assert!(cand_combo.contains(c));
        }
    }

    #[test]
    fn empty_posting_query_yields_empty_candidates() {
        let corpus = vec![doc4("a", 0.9, "", "", "foo", "")];
        let idx = build_index(&corpus, 4).unwrap();
        let terms = tokenize("zzz yyy");
        let plan = MatchPlan::new(vec![PlanStep {
            rule: MatchRule::uniform(0, vec![0, 1], MASK_AUBT).unwrap(),
            stop: StoppingCondition::unbounded(),
            transition: Transition::Stop,
        }])
        .unwrap();
        let (cands, trace) = run_plan(&idx, &terms, &plan).unwrap();
        assert!(cands.is_empty());
        assert_eq!(trace, vec![(0, 0)]);
    }

    #[test]
    fn default_rules_are_nested() {
        let rules = default_rule_set(&[100, 5, 20]).unwrap();
        assert_eq!(rules.len(), DEFAULT_RULE_COUNT);
        // R3 drops position 0 (highest df), R4 keeps position 1 (lowest df).
        assert_eq!(rules[3].required_terms, vec![1, 2]);
        assert_eq!(rules[4].required_terms, vec![1]);
        // Field masks widen along R0..R2.
        assert_eq!(rules[0].allowed_fields[0], MASK_UT);
        assert_eq!(rules[1].allowed_fields[0], MASK_AUT);
        assert_eq!(rules[2].allowed_fields[0], MASK_AUBT);
        // Any doc matched by a stricter rule is matched by every laxer one.
        let masks = [MASK_UT, MASK_UT, MASK_UT];
        for w in [0, 1, 2, 3] {
            assert!(rule_matches(&rules[w], &masks));
        }
    }

    #[test]
    fn single_term_rules_degenerate() {
        let rules = default_rule_set(&[7]).unwrap();
        assert_eq!(rules[3].required_terms, vec![0]);
        assert_eq!(rules[4].required_terms, vec![0]);
        assert_eq!(rules[3].allowed_fields, rules[2].allowed_fields);
    }

    #[test]
    fn equal_dfs_keep_r3_r4_distinct() {
        let rules = default_rule_set(&[10, 10]).unwrap();
        // hi picks position 0, lo picks position 1.
        assert_eq!(rules[3].required_terms, vec![1]);
        assert_eq!(rules[4].required_terms, vec![1]);
    }
}
