//! Experiment configuration: one TOML file describing corpus generation,
//! indexing, baseline plans, training, and evaluation. Every artifact-writing
//! stage stamps the configuration hash so mixed-config artifacts are
//! detectable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CategoryThresholds;
use crate::error::{Error, Result};
use crate::matching::{
    MatchPlan, MatchRule, PlanStep, StoppingCondition, Transition, DEFAULT_RULE_COUNT,
};
use crate::ranker::L1Weights;
use crate::rl::{RewardConfig, TrainConfig};
use crate::synth::SynthConfig;

/// One baseline plan step, referencing the fixed rule ladder by index so a
/// single plan applies to every query in a category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStepSpec {
    /// Index into the default rule ladder (0..5).
    pub rule: usize,
    pub max_blocks: Option<u64>,
    pub max_matches: Option<u64>,
    pub transition: Transition,
}

/// Instantiate a plan spec against a query's concrete rule ladder.
pub fn instantiate_plan(spec: &[PlanStepSpec], rules: &[MatchRule]) -> Result<MatchPlan> {
    let steps = spec
        .iter()
        .map(|s| {
            let rule = rules
                .get(s.rule)
                .ok_or_else(|| {
                    Error::Config(format!("plan references rule {} of {}", s.rule, rules.len()))
                })?
                .clone();
            Ok(PlanStep {
                rule,
                stop: StoppingCondition::new(s.max_blocks, s.max_matches)?,
                transition: s.transition,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MatchPlan::new(steps)
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("runs/experiment")
}

fn default_block_size() -> usize {
    64
}

fn default_bins() -> usize {
    256
}

fn default_binner_trace_queries() -> usize {
    2_000
}

fn default_eval_sample() -> usize {
    500
}

fn default_ncg_k() -> usize {
    100
}

fn default_resamples() -> usize {
    crate::eval::PERMUTATION_RESAMPLES
}

fn default_eval_seed() -> u64 {
    17
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexConfig {
    #[serde(default = "default_block_size")]
    pub block_size: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            block_size: default_block_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinnerConfig {
    /// Number of state bins p.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Queries per category sampled when collecting baseline (u, v) traces
    /// to fit the binner.
    #[serde(default = "default_binner_trace_queries")]
    pub trace_queries: usize,
}

impl Default for BinnerConfig {
    fn default() -> Self {
        BinnerConfig {
            bins: default_bins(),
            trace_queries: default_binner_trace_queries(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Queries sampled per category for the final comparison.
    #[serde(default = "default_eval_sample")]
    pub sample_per_category: usize,
    #[serde(default = "default_ncg_k")]
    pub ncg_k: usize,
    #[serde(default = "default_resamples")]
    pub permutation_resamples: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sample_per_category: default_eval_sample(),
            ncg_k: default_ncg_k(),
            permutation_resamples: default_resamples(),
            seed: default_eval_seed(),
        }
    }
}

/// Hand-crafted production plans the learned policies are compared against:
/// CAT1 matches all terms anywhere then relaxes the highest-df term; CAT2
/// probes URL/title, resets, then matches all terms anywhere.
pub fn default_baselines() -> BTreeMap<String, Vec<PlanStepSpec>> {
    let mut m = BTreeMap::new();
    m.insert(
        "cat1".to_string(),
        vec![
            PlanStepSpec {
                rule: 2,
                max_blocks: None,
                max_matches: Some(2_000),
                transition: Transition::Continue,
            },
            PlanStepSpec {
                rule: 3,
                max_blocks: None,
                max_matches: Some(2_000),
                transition: Transition::Stop,
            },
        ],
    );
    m.insert(
        "cat2".to_string(),
        vec![
            PlanStepSpec {
                rule: 0,
                max_blocks: Some(500),
                max_matches: None,
                transition: Transition::Reset,
            },
            PlanStepSpec {
                rule: 2,
                max_blocks: None,
                max_matches: Some(4_000),
                transition: Transition::Stop,
            },
        ],
    );
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default)]
    pub corpus: SynthConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub l1: L1Weights,
    #[serde(default)]
    pub thresholds: CategoryThresholds,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub binner: BinnerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_baselines")]
    pub baselines: BTreeMap<String, Vec<PlanStepSpec>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            work_dir: default_work_dir(),
            corpus: SynthConfig::default(),
            index: IndexConfig::default(),
            l1: L1Weights::default(),
            thresholds: CategoryThresholds::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            binner: BinnerConfig::default(),
            eval: EvalConfig::default(),
            baselines: default_baselines(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.l1.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        if self.index.block_size == 0 {
            return Err(Error::Config("block_size must be >= 1".into()));
        }
        if self.binner.bins == 0 || self.binner.trace_queries == 0 {
            return Err(Error::Config("binner bins and trace_queries must be >= 1".into()));
        }
        if self.eval.sample_per_category == 0 || self.eval.ncg_k == 0 {
            return Err(Error::Config("eval sample and ncg_k must be >= 1".into()));
        }
        if self.eval.permutation_resamples < 100 {
            return Err(Error::Config("permutation_resamples must be >= 100".into()));
        }
        for (cat, spec) in &self.baselines {
            if spec.is_empty() {
                return Err(Error::Config(format!("baseline plan for {cat} is empty")));
            }
            if spec.last().unwrap().transition != Transition::Stop {
                return Err(Error::Config(format!(
                    "baseline plan for {cat} must end with a stop transition"
                )));
            }
            for step in spec {
                if step.rule >= DEFAULT_RULE_COUNT {
                    return Err(Error::Config(format!(
                        "baseline plan for {cat} references rule {} outside the ladder",
                        step.rule
                    )));
                }
                StoppingCondition::new(step.max_blocks, step.max_matches)?;
            }
        }
        for key in self.baselines.keys() {
            if key != "cat1" && key != "cat2" {
                return Err(Error::Config(format!("unknown baseline category {key:?}")));
            }
        }
        Ok(())
    }

    pub fn baseline_spec(&self, category: &str) -> Result<&Vec<PlanStepSpec>> {
        self.baselines.get(category).ok_or_else(|| {
            Error::Config(format!("no baseline plan configured for {category:?}"))
        })
    }

    /// Hash of the canonical JSON rendering, stamped into artifacts.
    pub fn hash(&self) -> String {
        let canonical =
            serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}
