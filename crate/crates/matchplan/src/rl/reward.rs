//! Agent reward and baseline-relative reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::FieldedIndex;
use crate::matching::MatchPlan;
use crate::ranker::{rank_candidates, L1Weights};

/// How the production baseline term enters the training reward. The paper
/// defines the reward as the agent reward minus the production reward but
/// leaves the alignment open; per-step alignment is the default reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineAlignment {
    /// Subtract the baseline's step-t reward at agent step t; steps beyond
    /// the baseline trace use 0.
    #[default]
    PerStep,
    /// Subtract the baseline's whole discounted return at the terminal step.
    TerminalReturn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Number of top-ranked new documents entering the reward numerator.
    pub top_n: usize,
    /// Discount rate, in (0, 1].
    pub gamma: f64,
    /// Reward when an action selects no new documents.
    pub no_new_docs_penalty: f64,
    pub alignment: BaselineAlignment,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            top_n: 5,
            gamma: 0.9,
            no_new_docs_penalty: -0.01,
            alignment: BaselineAlignment::PerStep,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("reward top_n must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (0, 1]".into()));
        }
        if self.no_new_docs_penalty >= 0.0 {
            return Err(Error::Config("no_new_docs_penalty must be negative".into()));
        }
        Ok(())
    }
}

/// Reward for one action: the sum of the top min(n, m) L1 scores of the
/// newly discovered documents, divided by n * u_next. `scores_desc` must be
/// sorted descending. Returns 0 for an empty score list; the caller
/// substitutes the no-new-docs penalty in that case.
pub fn agent_reward(scores_desc: &[f64], u_next: u64, n: usize) -> Result<f64> {
    if scores_desc.is_empty() {
        return Ok(0.0);
    }
    if u_next == 0 {
        return Err(Error::Accounting(
            "new documents discovered with zero blocks accessed".into(),
        ));
    }
    let top: f64 = scores_desc.iter().take(n).sum();
    Ok(top / (n as f64 * u_next as f64))
}

/// Per-step baseline-relative reward: agent reward minus the baseline's
/// reward at the same step index, zero-extended beyond the baseline trace.
pub fn baseline_relative_reward(r_agent: f64, baseline_trace_rewards: &[f64], t: usize) -> f64 {
    r_agent - baseline_trace_rewards.get(t).copied().unwrap_or(0.0)
}

/// Run the category's production plan on a query and score each step with
/// the agent reward, producing the baseline reward trace of Eq.-4 style
/// comparisons.
pub fn baseline_reward_trace(
    index: &FieldedIndex,
    terms: &[String],
    plan: &MatchPlan,
    weights: &L1Weights,
    reward: &RewardConfig,
) -> Result<Vec<f64>> {
    let run = crate::matching::run_plan_detailed(index, terms, plan)?;
    let mut out = Vec::with_capacity(run.trace.len());
    for (step, new_docs) in run.step_new_docs.iter().enumerate() {
        let (u_after, _) = run.trace[step];
        if new_docs.is_empty() {
            out.push(reward.no_new_docs_penalty);
        } else {
            let ranked = rank_candidates(index, terms, new_docs, weights, reward.top_n);
            let scores: Vec<f64> = ranked.iter().map(|&(_, s)| s).collect();
            out.push(agent_reward(&scores, u_after, reward.top_n)?);
        }
    }
    Ok(out)
}
