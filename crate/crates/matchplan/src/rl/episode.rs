//! The scan environment the agent acts in, and episode execution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::index::{open_cursor, FieldedIndex, ScanCursor};
use crate::matching::{execute_rule, MatchRule, ScanState, StoppingCondition};
use crate::ranker::{rank_candidates, L1Weights};
use crate::rl::qtable::{Action, QTable};
use crate::rl::reward::{agent_reward, RewardConfig};
use crate::rl::StateBinner;

/// Episode termination caps: a step ceiling and a hard budget on total
/// blocks accessed, the deterministic stand-in for a maximum execution time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeCaps {
    pub max_steps: usize,
    pub max_blocks: u64,
}

impl Default for EpisodeCaps {
    fn default() -> Self {
        EpisodeCaps {
            max_steps: 16,
            max_blocks: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Greedy,
    EpsilonGreedy(f64),
}

/// One agent-environment interaction.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state_bin: usize,
    pub action: Action,
    /// Agent reward before baseline subtraction.
    pub r_agent: f64,
    pub u_after: u64,
    pub v_after: u64,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub steps: Vec<StepRecord>,
    pub candidates: Vec<u32>,
    pub total_u: u64,
    pub total_v: u64,
}

pub(crate) struct StepOutcome {
    pub r_agent: f64,
    pub terminal: bool,
}

/// The candidate-generation environment: a scan cursor plus accumulators,
/// stepped one action at a time. Every rule action runs under the fixed
/// per-step budget so the agent regains control frequently.
pub(crate) struct ScanEnv<'a> {
    index: &'a FieldedIndex,
    terms: &'a [String],
    rules: &'a [MatchRule],
    cursor: ScanCursor<'a>,
    state: ScanState,
    step_budget: StoppingCondition,
    caps: EpisodeCaps,
    weights: &'a L1Weights,
    reward: &'a RewardConfig,
    steps_taken: usize,
    done: bool,
}

impl<'a> ScanEnv<'a> {
    pub fn new(
        index: &'a FieldedIndex,
        terms: &'a [String],
        rules: &'a [MatchRule],
        step_budget: StoppingCondition,
        caps: EpisodeCaps,
        weights: &'a L1Weights,
        reward: &'a RewardConfig,
    ) -> Result<Self> {
        let cursor = open_cursor(index, terms)?;
        Ok(ScanEnv {
            index,
            terms,
            rules,
            cursor,
            state: ScanState::new(),
            step_budget,
            caps,
            weights,
            reward,
            steps_taken: 0,
            done: false,
        })
    }

    pub fn uv(&self) -> (u64, u64) {
        (self.state.u, self.state.v)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn into_outputs(self) -> (Vec<u32>, u64, u64) {
        let u = self.state.u;
        let v = self.state.v;
        (self.state.candidates, u, v)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        debug_assert!(!self.done);
        self.steps_taken += 1;
        let r_agent;
        match action {
            Action::Stop => {
                self.done = true;
                r_agent = 0.0;
            }
            Action::Reset => {
                self.cursor.reset();
                r_agent = self.reward.no_new_docs_penalty;
            }
            Action::UseRule(i) => {
                let rule = &self.rules[i];
                let new_docs =
                    execute_rule(&mut self.cursor, rule, &self.step_budget, &mut self.state);
                if new_docs.is_empty() {
                    r_agent = self.reward.no_new_docs_penalty;
                } else {
                    let ranked = rank_candidates(
                        self.index,
                        self.terms,
                        &new_docs,
                        self.weights,
                        self.reward.top_n,
                    );
                    let scores: Vec<f64> = ranked.iter().map(|&(_, s)| s).collect();
                    r_agent = agent_reward(&scores, self.state.u, self.reward.top_n)?;
                }
            }
        }
        if self.steps_taken >= self.caps.max_steps || self.state.u >= self.caps.max_blocks {
            self.done = true;
        }
        Ok(StepOutcome {
            r_agent,
            terminal: self.done,
        })
    }
}

pub(crate) fn select_action<R: Rng>(
    table: &QTable,
    state: usize,
    policy: Policy,
    rng: &mut R,
) -> Action {
    match policy {
        Policy::Greedy => table.greedy_action(state),
        Policy::EpsilonGreedy(eps) => {
            if rng.random::<f64>() < eps {
                Action::from_index(rng.random_range(0..table.num_actions()), table.k)
            } else {
                table.greedy_action(state)
            }
        }
    }
}

/// Run one episode under the given policy: observe (u, v), bin, act, until
/// the policy stops, the step cap is reached, or the block hard cap trips.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng>(
    index: &FieldedIndex,
    terms: &[String],
    rules: &[MatchRule],
    table: &QTable,
    binner: &StateBinner,
    policy: Policy,
    step_budget: StoppingCondition,
    caps: EpisodeCaps,
    weights: &L1Weights,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let mut env = ScanEnv::new(index, terms, rules, step_budget, caps, weights, reward)?;
    let mut steps = Vec::new();
    while !env.is_done() {
        let (u, v) = env.uv();
        let bin = binner.bin_state(u, v);
        let action = select_action(table, bin, policy, rng);
        let out = env.step(action)?;
        let (u_after, v_after) = env.uv();
        steps.push(StepRecord {
            state_bin: bin,
            action,
            r_agent: out.r_agent,
            u_after,
            v_after,
            terminal: out.terminal,
        });
    }
    let (candidates, total_u, total_v) = env.into_outputs();
    Ok(EpisodeResult {
        steps,
        candidates,
        total_u,
        total_v,
    })
}
