//! The per-category Q-learning training loop.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Query;
use crate::error::{Error, Result};
use crate::index::FieldedIndex;
use crate::matching::{default_rule_set, MatchPlan, StoppingCondition, DEFAULT_RULE_COUNT};
use crate::ranker::L1Weights;
use crate::rl::episode::{select_action, EpisodeCaps, Policy, ScanEnv};
use crate::rl::qtable::{q_update, QTable};
use crate::rl::reward::{
    baseline_relative_reward, baseline_reward_trace, BaselineAlignment, RewardConfig,
};
use crate::rl::StateBinner;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Constant learning rate used when `alpha_visit_decay` is off.
    pub alpha: f64,
    /// When on, the effective learning rate is 1 / (1 + visits(s, a)).
    pub alpha_visit_decay: bool,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per-rule-execution budgets handed to every UseRule action.
    pub step_blocks_budget: u64,
    pub step_matches_budget: u64,
    pub caps: EpisodeCaps,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 100_000,
            alpha: 0.1,
            alpha_visit_decay: true,
            epsilon_start: 0.5,
            epsilon_end: 0.05,
            step_blocks_budget: 200,
            step_matches_budget: 500,
            caps: EpisodeCaps::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("alpha must be in (0, 1]".into()));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config("epsilon must be in [0, 1]".into()));
            }
        }
        if self.caps.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Exponential decay from epsilon_start to epsilon_end over the first
    /// half of training, then flat.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.episodes == 0 || self.epsilon_start <= self.epsilon_end {
            return self.epsilon_end;
        }
        let half = (self.episodes as f64 / 2.0).max(1.0);
        let progress = (episode as f64 / half).min(1.0);
        self.epsilon_start * (self.epsilon_end / self.epsilon_start).powf(progress)
    }

    pub fn step_budget(&self) -> StoppingCondition {
        StoppingCondition {
            max_blocks_delta: Some(self.step_blocks_budget),
            max_matches_delta: Some(self.step_matches_budget),
        }
    }
}

/// Baseline reward traces keyed by (query_id, plan_id), precomputed or
/// filled lazily during training.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BaselineTraceCache {
    pub traces: HashMap<String, Vec<f64>>,
}

impl BaselineTraceCache {
    fn key(query_id: &str, plan_id: &str) -> String {
        format!("{query_id}\u{1f}{plan_id}")
    }

    pub fn get(&self, query_id: &str, plan_id: &str) -> Option<&Vec<f64>> {
        self.traces.get(&Self::key(query_id, plan_id))
    }

    pub fn insert(&mut self, query_id: &str, plan_id: &str, trace: Vec<f64>) {
        self.traces.insert(Self::key(query_id, plan_id), trace);
    }

    pub fn get_or_compute(
        &mut self,
        query: &Query,
        plan_id: &str,
        index: &FieldedIndex,
        plan: &MatchPlan,
        weights: &L1Weights,
        reward: &RewardConfig,
    ) -> Result<Vec<f64>> {
        if let Some(t) = self.get(&query.query_id, plan_id) {
            return Ok(t.clone());
        }
        let trace = baseline_reward_trace(index, &query.terms, plan, weights, reward)?;
        self.insert(&query.query_id, plan_id, trace.clone());
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        // BTreeMap view for a stable on-disk ordering.
        let ordered: std::collections::BTreeMap<_, _> = self.traces.iter().collect();
        serde_json::to_writer(&mut w, &ordered)
            .map_err(|e| Error::Config(format!("serialize trace cache: {e}")))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let traces: HashMap<String, Vec<f64>> = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("parse trace cache {}: {e}", path.display())))?;
        Ok(BaselineTraceCache { traces })
    }
}

/// Train a tabular Q-learning policy for one query category against its
/// production baseline plan. Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    index: &FieldedIndex,
    queries: &[&Query],
    baseline_plan: &MatchPlan,
    baseline_plan_id: &str,
    binner: &StateBinner,
    train: &TrainConfig,
    reward: &RewardConfig,
    weights: &L1Weights,
    cache: &mut BaselineTraceCache,
) -> Result<QTable> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty query category".into(),
        ));
    }
    train.validate()?;
    reward.validate()?;
    let mut table = QTable::zeros(binner.p, DEFAULT_RULE_COUNT);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let step_budget = train.step_budget();

    for episode in 0..train.episodes {
        let query = queries[rng.random_range(0..queries.len())];
        let baseline = cache.get_or_compute(
            query,
            baseline_plan_id,
            index,
            baseline_plan,
            weights,
            reward,
        )?;
        let baseline_return: f64 = baseline
            .iter()
            .enumerate()
            .map(|(t, r)| reward.gamma.powi(t as i32) * r)
            .sum();

        let dfs: Vec<u64> = query.terms.iter().map(|t| index.df(t)).collect();
        let rules = default_rule_set(&dfs)?;
        let policy = Policy::EpsilonGreedy(train.epsilon_at(episode));
        let mut env = ScanEnv::new(
            index,
            &query.terms,
            &rules,
            step_budget,
            train.caps,
            weights,
            reward,
        )?;

        let mut t = 0usize;
        while !env.is_done() {
            let (u, v) = env.uv();
            let s = binner.bin_state(u, v);
            let action = select_action(&table, s, policy, &mut rng);
            let out = env.step(action)?;
            let r = match reward.alignment {
                BaselineAlignment::PerStep => {
                    baseline_relative_reward(out.r_agent, &baseline, t)
                }
                BaselineAlignment::TerminalReturn => {
                    if out.terminal {
                        out.r_agent - baseline_return
                    } else {
                        out.r_agent
                    }
                }
            };
            let (u2, v2) = env.uv();
            let s_next = binner.bin_state(u2, v2);
            let alpha = if train.alpha_visit_decay {
                1.0 / (1.0 + table.visits(s, action) as f64)
            } else {
                train.alpha
            };
            q_update(
                &mut table,
                s,
                action,
                r,
                s_next,
                out.terminal,
                alpha,
                reward.gamma,
            );
            t += 1;
        }
    }
    Ok(table)
}
