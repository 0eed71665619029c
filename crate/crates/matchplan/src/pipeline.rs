//! The experiment pipeline: corpus generation, index build, baseline
//! tracing, state-binner fitting, per-category training, evaluation, and
//! reporting. Every stage reads its inputs from and writes its outputs to
//! the configured work directory, stamping the configuration hash so that
//! artifacts from different configurations cannot be mixed silently.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{instantiate_plan, RunConfig};
use crate::data::{
    categorize, load_corpus, load_queries, sample_queries, write_corpus_file,
    write_queries_file, Query, QueryCategory, SampleMode,
};
use crate::error::{Error, Result};
use crate::eval::{compare, emit_blocks_profile, format_report, ncg_at_k, EvalReport, QueryRun};
use crate::index::{build_index, load_index, save_index, FieldedIndex};
use crate::matching::{default_rule_set, run_plan};
use crate::par::batch_map;
use crate::ranker::rank_candidates;
use crate::rl::{
    fit_binner, run_episode, BaselineTraceCache, Policy, QTable, StateBinner, train_policy,
};
use crate::synth::generate;

/// Artifact locations under the work directory.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub work_dir: PathBuf,
}

impl ArtifactPaths {
    pub fn new(work_dir: &Path) -> Self {
        ArtifactPaths {
            work_dir: work_dir.to_path_buf(),
        }
    }

    pub fn corpus(&self) -> PathBuf {
        self.work_dir.join("corpus.tsv")
    }

    pub fn queries(&self) -> PathBuf {
        self.work_dir.join("queries.tsv")
    }

    pub fn index(&self) -> PathBuf {
        self.work_dir.join("index.bin")
    }

    pub fn uv_points(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("uv_points_{category}.json"))
    }

    pub fn traces(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("baseline_traces_{category}.json"))
    }

    pub fn binner(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("binner_{category}.json"))
    }

    pub fn qtable(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("qtable_{category}.json"))
    }

    pub fn runs(&self, category: &str, arm: &str) -> PathBuf {
        self.work_dir.join(format!("runs_{category}_{arm}.jsonl"))
    }

    pub fn report(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("report_{category}.json"))
    }

    pub fn blocks_profile(&self, category: &str) -> PathBuf {
        self.work_dir.join(format!("blocks_profile_{category}.tsv"))
    }

    pub fn meta(&self, stage: &str) -> PathBuf {
        self.work_dir.join(format!("meta_{stage}.json"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub config_hash: String,
}

/// Write a file atomically: serialize to a sibling temp path, then rename.
fn atomic_write<F>(path: &Path, write_fn: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let tmp = path.with_extension("tmp");
    write_fn(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |tmp| {
        let file = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, value)
            .map_err(|e| Error::Config(format!("serialize {}: {e}", path.display())))?;
        w.flush().map_err(|e| Error::io(tmp, e))
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Config(format!("parse {}: {e}", path.display())))
}

fn write_stage_meta(paths: &ArtifactPaths, stage: &str, cfg: &RunConfig) -> Result<()> {
    write_json(
        &paths.meta(stage),
        &StageMeta {
            stage: stage.to_string(),
            config_hash: cfg.hash(),
        },
    )
}

fn require_artifact(path: &Path, producing_stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage: producing_stage.to_string(),
            path: path.to_path_buf(),
        })
    }
}

/// Warn when a consumed artifact was produced under a different config.
fn check_config_hash(paths: &ArtifactPaths, stage: &str, cfg: &RunConfig) {
    let meta_path = paths.meta(stage);
    if let Ok(meta) = read_json::<StageMeta>(&meta_path) {
        if meta.config_hash != cfg.hash() {
            eprintln!(
                "warning: artifacts from stage {stage} were produced under config {} but the current config hashes to {}",
                meta.config_hash,
                cfg.hash()
            );
        }
    }
}

fn parse_category(category: &str) -> Result<QueryCategory> {
    match category {
        "cat1" => Ok(QueryCategory::Cat1),
        "cat2" => Ok(QueryCategory::Cat2),
        other => Err(Error::InvalidArgument(format!(
            "category must be cat1 or cat2, got {other:?}"
        ))),
    }
}

/// Generate the synthetic corpus and query log.
pub fn cmd_gen_corpus(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let paths = ArtifactPaths::new(&cfg.work_dir);
    let (docs, queries) = generate(&cfg.corpus)?;
    atomic_write(&paths.corpus(), |tmp| write_corpus_file(&docs, tmp))?;
    atomic_write(&paths.queries(), |tmp| write_queries_file(&queries, tmp))?;
    write_stage_meta(&paths, "gen-corpus", cfg)
}

/// Build and persist the fielded static-rank-ordered index.
pub fn cmd_build_index(cfg: &RunConfig) -> Result<()> {
    let paths = ArtifactPaths::new(&cfg.work_dir);
    require_artifact(&paths.corpus(), "gen-corpus")?;
    check_config_hash(&paths, "gen-corpus", cfg);
    let docs = load_corpus(&paths.corpus())?;
    let index = build_index(&docs, cfg.index.block_size)?;
    atomic_write(&paths.index(), |tmp| save_index(&index, tmp))?;
    write_stage_meta(&paths, "build-index", cfg)
}

/// Shared loaded state for the later stages.
pub struct Loaded {
    pub index: FieldedIndex,
    pub queries: Vec<Query>,
}

pub fn load_stage_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let paths = ArtifactPaths::new(&cfg.work_dir);
    require_artifact(&paths.index(), "build-index")?;
    require_artifact(&paths.queries(), "gen-corpus")?;
    let index = load_index(&paths.index())?;
    let queries = load_queries(&paths.queries())?;
    Ok(Loaded { index, queries })
}

/// Indices of queries that the rule-based categorizer puts in `category`.
pub fn category_population(
    index: &FieldedIndex,
    queries: &[Query],
    cfg: &RunConfig,
    category: QueryCategory,
) -> Vec<usize> {
    queries
        .iter()
        .enumerate()
        .filter(|(_, q)| {
            let dfs: Vec<f64> = q.terms.iter().map(|t| index.df_fraction(t)).collect();
            categorize(q, &dfs, &cfg.thresholds) == category
        })
        .map(|(i, _)| i)
        .collect()
}

/// Run the category baseline plan over a training sample, persisting both
/// the per-step reward traces (reused by training) and the (u, v) state
/// points (consumed by the binner fit).
pub fn cmd_trace_baseline(cfg: &RunConfig, category: &str) -> Result<()> {
    let cat = parse_category(category)?;
    let paths = ArtifactPaths::new(&cfg.work_dir);
    check_config_hash(&paths, "build-index", cfg);
    let loaded = load_stage_inputs(cfg)?;
    let spec = cfg.baseline_spec(category)?;
    let population = category_population(&loaded.index, &loaded.queries, cfg, cat);
    if population.is_empty() {
        return Err(Error::Sampling(format!(
            "no queries categorize as {category}"
        )));
    }
    let take = cfg.binner.trace_queries.min(population.len());
    // Deterministic prefix of the categorized population: baseline traces
    // and binner points must cover the same queries training will see.
    let sample: Vec<&Query> = population[..take]
        .iter()
        .map(|&i| &loaded.queries[i])
        .collect();

    let results: Vec<Result<(String, Vec<f64>, Vec<(u64, u64)>)>> = batch_map(&sample, |q| {
        let dfs: Vec<u64> = q.terms.iter().map(|t| loaded.index.df(t)).collect();
        let rules = default_rule_set(&dfs)?;
        let plan = instantiate_plan(spec, &rules)?;
        let trace = crate::rl::baseline_reward_trace(
            &loaded.index,
            &q.terms,
            &plan,
            &cfg.l1,
            &cfg.reward,
        )?;
        let (_, uv) = run_plan(&loaded.index, &q.terms, &plan)?;
        Ok((q.query_id.clone(), trace, uv))
    });

    let mut cache = BaselineTraceCache::default();
    let mut points: Vec<(u64, u64)> = vec![(0, 0)];
    for r in results {
        let (qid, trace, uv) = r?;
        cache.insert(&qid, category, trace);
        points.extend(uv);
    }
    atomic_write(&paths.traces(category), |tmp| cache.save(tmp))?;
    write_json(&paths.uv_points(category), &points)?;
    write_stage_meta(&paths, &format!("trace-baseline-{category}"), cfg)
}

/// Fit the equal-mass (u, v) state binner from the baseline trace points.
pub fn cmd_fit_bins(cfg: &RunConfig, category: &str) -> Result<()> {
    parse_category(category)?;
    let paths = ArtifactPaths::new(&cfg.work_dir);
    require_artifact(&paths.uv_points(category), "trace-baseline")?;
    check_config_hash(&paths, &format!("trace-baseline-{category}"), cfg);
    let points: Vec<(u64, u64)> = read_json(&paths.uv_points(category))?;
    let binner = fit_binner(&points, cfg.binner.bins)?;
    atomic_write(&paths.binner(category), |tmp| binner.save(tmp))?;
    write_stage_meta(&paths, &format!("fit-bins-{category}"), cfg)
}

/// Train the category policy against its baseline plan.
pub fn cmd_train(cfg: &RunConfig, category: &str) -> Result<()> {
    let cat = parse_category(category)?;
    let paths = ArtifactPaths::new(&cfg.work_dir);
    require_artifact(&paths.binner(category), "fit-bins")?;
    require_artifact(&paths.traces(category), "trace-baseline")?;
    check_config_hash(&paths, &format!("fit-bins-{category}"), cfg);
    let loaded = load_stage_inputs(cfg)?;
    let binner = StateBinner::load(&paths.binner(category))?;
    let mut cache = BaselineTraceCache::load(&paths.traces(category))?;
    let spec = cfg.baseline_spec(category)?;
    let population = category_population(&loaded.index, &loaded.queries, cfg, cat);
    if population.is_empty() {
        return Err(Error::Sampling(format!(
            "no queries categorize as {category}"
        )));
    }
    let take = cfg.binner.trace_queries.min(population.len());
    let train_queries: Vec<&Query> = population[..take]
        .iter()
        .map(|&i| &loaded.queries[i])
        .collect();

    // The plan spec instantiates differently per query (the rule ladder is
    // df-dependent), but budgets and transitions are shared; training
    // re-instantiates per query inside the cache fill path. To keep
    // train_policy's interface simple, the cache is pre-filled here for any
    // query missing a trace.
    for q in &train_queries {
        if cache.get(&q.query_id, category).is_none() {
            let dfs: Vec<u64> = q.terms.iter().map(|t| loaded.index.df(t)).collect();
            let rules = default_rule_set(&dfs)?;
            let plan = instantiate_plan(spec, &rules)?;
            let trace = crate::rl::baseline_reward_trace(
                &loaded.index,
                &q.terms,
                &plan,
                &cfg.l1,
                &cfg.reward,
            )?;
            cache.insert(&q.query_id, category, trace);
        }
    }

    // Any representative plan works for train_policy's lazy path since the
    // cache is already complete; use the first query's instantiation.
    let dfs0: Vec<u64> = train_queries[0]
        .terms
        .iter()
        .map(|t| loaded.index.df(t))
        .collect();
    let plan0 = instantiate_plan(spec, &default_rule_set(&dfs0)?)?;

    let mut train_cfg = cfg.train.clone();
    // Distinct per-category randomness.
    train_cfg.seed = cfg.train.seed.wrapping_add(match cat {
        QueryCategory::Cat1 => 1,
        QueryCategory::Cat2 => 2,
        QueryCategory::Other => 3,
    });

    let table = train_policy(
        &loaded.index,
        &train_queries,
        &plan0,
        category,
        &binner,
        &train_cfg,
        &cfg.reward,
        &cfg.l1,
        &mut cache,
    )?;
    atomic_write(&paths.qtable(category), |tmp| table.save(tmp))?;
    write_stage_meta(&paths, &format!("train-{category}"), cfg)
}

fn make_query_run(
    index: &FieldedIndex,
    query: &Query,
    category: &str,
    candidates: &[u32],
    u: u64,
    v: u64,
    cfg: &RunConfig,
) -> Result<QueryRun> {
    let ncg = ncg_at_k(index, query, candidates, &cfg.l1, cfg.eval.ncg_k)?;
    let retained = rank_candidates(index, &query.terms, candidates, &cfg.l1, cfg.eval.ncg_k);
    Ok(QueryRun {
        query_id: query.query_id.clone(),
        category: category.to_string(),
        u,
        v,
        candidates: retained
            .into_iter()
            .map(|(d, _)| index.doc(d).doc_id.clone())
            .collect(),
        cum_gain: ncg.cum_gain,
        ideal_cum_gain: ncg.ideal_cum_gain,
        ncg: ncg.ncg,
    })
}

fn eval_baseline_query(
    index: &FieldedIndex,
    query: &Query,
    category: &str,
    cfg: &RunConfig,
) -> Result<QueryRun> {
    let dfs: Vec<u64> = query.terms.iter().map(|t| index.df(t)).collect();
    let rules = default_rule_set(&dfs)?;
    let plan = instantiate_plan(cfg.baseline_spec(category)?, &rules)?;
    let run = crate::matching::run_plan_detailed(index, &query.terms, &plan)?;
    let (u, v) = run.trace.last().copied().unwrap_or((0, 0));
    make_query_run(index, query, category, &run.candidates, u, v, cfg)
}

fn eval_policy_query(
    index: &FieldedIndex,
    query: &Query,
    category: &str,
    table: &QTable,
    binner: &StateBinner,
    cfg: &RunConfig,
) -> Result<QueryRun> {
    let dfs: Vec<u64> = query.terms.iter().map(|t| index.df(t)).collect();
    let rules = default_rule_set(&dfs)?;
    // Greedy execution is deterministic; the rng only feeds the (unused)
    // exploration branch.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let episode = run_episode(
        index,
        &query.terms,
        &rules,
        table,
        binner,
        Policy::Greedy,
        cfg.train.step_budget(),
        cfg.train.caps,
        &cfg.l1,
        &cfg.reward,
        &mut rng,
    )?;
    make_query_run(
        index,
        query,
        category,
        &episode.candidates,
        episode.total_u,
        episode.total_v,
        cfg,
    )
}

fn write_jsonl(path: &Path, runs: &[QueryRun]) -> Result<()> {
    atomic_write(path, |tmp| {
        let file = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let mut w = BufWriter::new(file);
        for r in runs {
            serde_json::to_writer(&mut w, r)
                .map_err(|e| Error::Config(format!("serialize run: {e}")))?;
            writeln!(w).map_err(|e| Error::io(tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(tmp, e))
    })
}

pub fn read_runs(path: &Path) -> Result<Vec<QueryRun>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let run: QueryRun = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad run record: {e}")))?;
        out.push(run);
    }
    Ok(out)
}

/// Evaluate the trained policy against the baseline on a fresh query sample
/// from the category, writing per-query runs, the comparison report, and the
/// blocks profile.
pub fn cmd_evaluate(cfg: &RunConfig, category: &str, mode: SampleMode) -> Result<EvalReport> {
    let cat = parse_category(category)?;
    let paths = ArtifactPaths::new(&cfg.work_dir);
    require_artifact(&paths.qtable(category), "train")?;
    require_artifact(&paths.binner(category), "fit-bins")?;
    check_config_hash(&paths, &format!("train-{category}"), cfg);
    let loaded = load_stage_inputs(cfg)?;
    let table = QTable::load(&paths.qtable(category))?;
    let binner = StateBinner::load(&paths.binner(category))?;

    let population_idx = category_population(&loaded.index, &loaded.queries, cfg, cat);
    if population_idx.is_empty() {
        return Err(Error::Sampling(format!(
            "no queries categorize as {category}"
        )));
    }
    let population: Vec<Query> = population_idx
        .iter()
        .map(|&i| loaded.queries[i].clone())
        .collect();
    let count = cfg.eval.sample_per_category.min(population.len());
    let sample_idx = sample_queries(&population, mode, count, cfg.eval.seed)?;
    let sample: Vec<&Query> = sample_idx.iter().map(|&i| &population[i]).collect();

    let policy_runs: Vec<Result<QueryRun>> = batch_map(&sample, |q| {
        eval_policy_query(&loaded.index, q, category, &table, &binner, cfg)
    });
    let baseline_runs: Vec<Result<QueryRun>> = batch_map(&sample, |q| {
        eval_baseline_query(&loaded.index, q, category, cfg)
    });
    let policy_runs: Vec<QueryRun> = policy_runs.into_iter().collect::<Result<_>>()?;
    let baseline_runs: Vec<QueryRun> = baseline_runs.into_iter().collect::<Result<_>>()?;

    let report = compare(
        category,
        &policy_runs,
        &baseline_runs,
        cfg.eval.permutation_resamples,
        cfg.eval.seed,
    )?;
    write_jsonl(&paths.runs(category, "policy"), &policy_runs)?;
    write_jsonl(&paths.runs(category, "baseline"), &baseline_runs)?;
    write_json(&paths.report(category), &report)?;
    atomic_write(&paths.blocks_profile(category), |tmp| {
        emit_blocks_profile(&policy_runs, &baseline_runs, tmp)
    })?;
    write_stage_meta(&paths, &format!("evaluate-{category}"), cfg)?;
    Ok(report)
}

/// Render all per-category reports present in the work directory.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let paths = ArtifactPaths::new(&cfg.work_dir);
    let mut out = String::new();
    let mut found = false;
    for category in ["cat1", "cat2"] {
        let path = paths.report(category);
        if path.exists() {
            let report: EvalReport = read_json(&path)?;
            out.push_str(&format_report(&report));
            out.push('\n');
            found = true;
        }
    }
    if !found {
        return Err(Error::MissingArtifact {
            stage: "evaluate".to_string(),
            path: paths.report("cat1"),
        });
    }
    Ok(out)
}

/// Run the whole pipeline for both categories. Returns the per-category
/// evaluation reports.
pub fn run_all(cfg: &RunConfig, mode: SampleMode) -> Result<BTreeMap<String, EvalReport>> {
    cmd_gen_corpus(cfg)?;
    cmd_build_index(cfg)?;
    let mut reports = BTreeMap::new();
    for category in ["cat1", "cat2"] {
        cmd_trace_baseline(cfg, category)?;
        cmd_fit_bins(cfg, category)?;
        cmd_train(cfg, category)?;
        let report = cmd_evaluate(cfg, category, mode)?;
        reports.insert(category.to_string(), report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.work_dir = dir.to_path_buf();
        cfg.corpus = SynthConfig {
            num_docs: 1_500,
            num_queries: 240,
            vocab_size: 1_500,
            num_topics: 12,
            seed: 5,
            ..Default::default()
        };
        cfg.index.block_size = 16;
        cfg.binner.bins = 16;
        cfg.binner.trace_queries = 60;
        cfg.train.episodes = 300;
        cfg.eval.sample_per_category = 40;
        cfg.eval.permutation_resamples = 200;
        cfg
    }

    #[test]
    fn full_pipeline_runs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let reports = run_all(&cfg, SampleMode::Unweighted).unwrap();
        assert!(reports.contains_key("cat1"));
        assert!(reports.contains_key("cat2"));

        let dir2 = tempfile::tempdir().unwrap();
        let cfg2 = tiny_config(dir2.path());
        let reports2 = run_all(&cfg2, SampleMode::Unweighted).unwrap();
        for cat in ["cat1", "cat2"] {
            assert_eq!(reports[cat].mean_u_policy, reports2[cat].mean_u_policy);
            assert_eq!(reports[cat].mean_ncg_policy, reports2[cat].mean_ncg_policy);
            let a = read_runs(&ArtifactPaths::new(dir.path()).runs(cat, "policy")).unwrap();
            let b = read_runs(&ArtifactPaths::new(dir2.path()).runs(cat, "policy")).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.query_id, y.query_id);
                assert_eq!(x.u, y.u);
                assert_eq!(x.candidates, y.candidates);
            }
        }

        let text = cmd_report(&cfg).unwrap();
        assert!(text.contains("cat1"));
        assert!(text.contains("cat2"));
    }

    #[test]
    fn stages_fail_cleanly_on_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let err = cmd_build_index(&cfg).unwrap_err();
        match err {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "gen-corpus"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(cmd_train(&cfg, "cat1").is_err());
        assert!(cmd_evaluate(&cfg, "cat1", SampleMode::Unweighted).is_err());
        assert!(cmd_report(&cfg).is_err());
    }

    #[test]
    fn unknown_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        assert!(cmd_trace_baseline(&cfg, "cat9").is_err());
    }
}
