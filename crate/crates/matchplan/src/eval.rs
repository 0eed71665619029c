//! Candidate-set quality (NCG@100) and efficiency (blocks accessed)
//! measurement, policy-vs-baseline comparison, and significance testing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Query, MAX_GRADE};
use crate::error::{Error, Result};
use crate::index::FieldedIndex;
use crate::ranker::{rank_candidates, L1Weights};

/// Exponential gain, the standard graded-relevance convention.
pub fn gain(grade: u8) -> Result<f64> {
    if grade > MAX_GRADE {
        return Err(Error::Eval(format!("grade {grade} out of the 0..=4 scale")));
    }
    Ok((1u32 << grade) as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcgResult {
    pub query_id: String,
    pub cum_gain: f64,
    pub ideal_cum_gain: f64,
    /// cum_gain / ideal_cum_gain; 0 when the query has no judged gain.
    pub ncg: f64,
}

/// Normalized cumulative gain over an unordered candidate set, capped at
/// `k` documents. When more than `k` candidates were generated, the `k`
/// retained are the highest by L1 score (mirroring the rank-and-prune step);
/// unjudged candidates contribute zero gain. The ideal takes the top-k gains
/// over all judged documents.
pub fn ncg_at_k(
    index: &FieldedIndex,
    query: &Query,
    candidates: &[u32],
    weights: &L1Weights,
    k: usize,
) -> Result<NcgResult> {
    if k == 0 {
        return Err(Error::Eval("ncg_at_k requires k >= 1".into()));
    }
    let retained: Vec<u32> = if candidates.len() > k {
        rank_candidates(index, &query.terms, candidates, weights, k)
            .into_iter()
            .map(|(d, _)| d)
            .collect()
    } else {
        candidates.to_vec()
    };

    let mut cum_gain = 0.0;
    for &ord in &retained {
        if let Some(&g) = query.judgments.get(&index.doc(ord).doc_id) {
            cum_gain += gain(g)?;
        }
    }

    let mut gains: Vec<f64> = query
        .judgments
        .values()
        .map(|&g| gain(g))
        .collect::<Result<_>>()?;
    gains.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let ideal_cum_gain: f64 = gains.iter().take(k).sum();

    let ncg = if ideal_cum_gain > 0.0 {
        cum_gain / ideal_cum_gain
    } else {
        0.0
    };
    Ok(NcgResult {
        query_id: query.query_id.clone(),
        cum_gain,
        ideal_cum_gain,
        ncg,
    })
}

/// One evaluated query under one treatment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRun {
    pub query_id: String,
    pub category: String,
    pub u: u64,
    pub v: u64,
    pub candidates: Vec<String>,
    pub cum_gain: f64,
    pub ideal_cum_gain: f64,
    pub ncg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub segment: String,
    pub num_queries: usize,
    /// Queries with positive ideal gain, the NCG-average population.
    pub num_ncg_queries: usize,
    pub mean_ncg_policy: f64,
    pub mean_ncg_baseline: f64,
    pub mean_u_policy: f64,
    pub mean_u_baseline: f64,
    /// (policy - baseline) / baseline, as a fraction.
    pub rel_delta_ncg: f64,
    pub rel_delta_u: f64,
    pub p_value_ncg: f64,
    pub p_value_u: f64,
    /// Set when the segment has fewer than 50 queries, mirroring segments
    /// whose coverage is too low to report.
    pub low_coverage: bool,
}

pub const LOW_COVERAGE_THRESHOLD: usize = 50;
pub const PERMUTATION_RESAMPLES: usize = 10_000;

/// Paired two-sided sign-flip permutation test on the mean difference.
fn permutation_p_value(deltas: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> f64 {
    if deltas.is_empty() {
        return 1.0;
    }
    let observed = deltas.iter().sum::<f64>().abs() / deltas.len() as f64;
    if observed == 0.0 {
        return 1.0;
    }
    let mut at_least = 0usize;
    for _ in 0..resamples {
        let sum: f64 = deltas
            .iter()
            .map(|&d| if rng.random::<bool>() { d } else { -d })
            .sum();
        if (sum / deltas.len() as f64).abs() >= observed {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (resamples + 1) as f64
}

/// Compare policy and baseline runs over the identical query sample.
pub fn compare(
    segment: &str,
    policy: &[QueryRun],
    baseline: &[QueryRun],
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if policy.len() != baseline.len()
        || policy
            .iter()
            .zip(baseline)
            .any(|(a, b)| a.query_id != b.query_id)
    {
        return Err(Error::Eval(
            "policy and baseline runs cover different query samples".into(),
        ));
    }
    let n = policy.len();

    // Queries with no judged gain are excluded from NCG averages but kept
    // for the u statistics.
    let ncg_pairs: Vec<(f64, f64)> = policy
        .iter()
        .zip(baseline)
        .filter(|(p, _)| p.ideal_cum_gain > 0.0)
        .map(|(p, b)| (p.ncg, b.ncg))
        .collect();
    let num_ncg = ncg_pairs.len();
    let mean = |xs: &[f64]| -> f64 {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let ncg_p: Vec<f64> = ncg_pairs.iter().map(|&(p, _)| p).collect();
    let ncg_b: Vec<f64> = ncg_pairs.iter().map(|&(_, b)| b).collect();
    let u_p: Vec<f64> = policy.iter().map(|r| r.u as f64).collect();
    let u_b: Vec<f64> = baseline.iter().map(|r| r.u as f64).collect();

    let mean_ncg_policy = mean(&ncg_p);
    let mean_ncg_baseline = mean(&ncg_b);
    let mean_u_policy = mean(&u_p);
    let mean_u_baseline = mean(&u_b);

    let rel = |p: f64, b: f64| if b != 0.0 { (p - b) / b } else { 0.0 };

    let ncg_deltas: Vec<f64> = ncg_pairs.iter().map(|&(p, b)| p - b).collect();
    let u_deltas: Vec<f64> = u_p.iter().zip(&u_b).map(|(p, b)| p - b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_value_ncg = permutation_p_value(&ncg_deltas, resamples, &mut rng);
    let p_value_u = permutation_p_value(&u_deltas, resamples, &mut rng);

    Ok(EvalReport {
        segment: segment.to_string(),
        num_queries: n,
        num_ncg_queries: num_ncg,
        mean_ncg_policy,
        mean_ncg_baseline,
        mean_u_policy,
        mean_u_baseline,
        rel_delta_ncg: rel(mean_ncg_policy, mean_ncg_baseline),
        rel_delta_u: rel(mean_u_policy, mean_u_baseline),
        p_value_ncg,
        p_value_u,
        low_coverage: n < LOW_COVERAGE_THRESHOLD,
    })
}

/// Write per-query u values as two independently sorted columns, one per
/// treatment, as plot-ready tab-separated text.
pub fn emit_blocks_profile(
    policy: &[QueryRun],
    baseline: &[QueryRun],
    path: &Path,
) -> Result<()> {
    if policy.is_empty() || baseline.is_empty() {
        return Err(Error::Eval("blocks profile needs non-empty results".into()));
    }
    let mut u_p: Vec<u64> = policy.iter().map(|r| r.u).collect();
    let mut u_b: Vec<u64> = baseline.iter().map(|r| r.u).collect();
    u_p.sort_unstable();
    u_b.sort_unstable();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "policy\tbaseline").map_err(|e| Error::io(path, e))?;
    for i in 0..u_p.len().max(u_b.len()) {
        let p = u_p.get(i).map(|v| v.to_string()).unwrap_or_default();
        let b = u_b.get(i).map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{p}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Render a report in a human-readable block.
pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("segment: {}\n", report.segment));
    s.push_str(&format!(
        "queries: {} (ncg population: {})\n",
        report.num_queries, report.num_ncg_queries
    ));
    s.push_str(&format!(
        "NCG@100:  policy {:.4}  baseline {:.4}  delta {:+.2}%  (p = {:.4})\n",
        report.mean_ncg_policy,
        report.mean_ncg_baseline,
        100.0 * report.rel_delta_ncg,
        report.p_value_ncg
    ));
    s.push_str(&format!(
        "blocks u: policy {:.1}  baseline {:.1}  delta {:+.2}%  (p = {:.4})\n",
        report.mean_u_policy,
        report.mean_u_baseline,
        100.0 * report.rel_delta_u,
        report.p_value_u
    ));
    if report.low_coverage {
        s.push_str("warning: segment coverage too low to report reliably\n");
    }
    s
}

/// Judgments as (doc_id, grade) pairs for test construction.
pub fn judgments_from_pairs(pairs: &[(&str, u8)]) -> BTreeMap<String, u8> {
    pairs
        .iter()
        .map(|&(d, g)| (d.to_string(), g))
        .collect()
}
