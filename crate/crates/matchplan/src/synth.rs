//! Seeded synthetic corpus and query-log generation.
//!
//! The generator builds a Zipf-distributed vocabulary with topic structure:
//! every document belongs to a topic and draws a fraction of its tokens from
//! that topic's term pool, so multi-term queries built from one topic have
//! realistic co-occurrence. Title, URL, and anchor affinity for topic terms
//! rises with static rank, and relevance judgments are concentrated on
//! high-static-rank documents that match many query terms — mirroring a web
//! corpus where the best documents sit early in a static-rank-ordered index.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryThresholds, Document, FieldId, Query, NUM_FIELDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_queries: usize,
    pub vocab_size: usize,
    /// Zipf exponent for the background token distribution.
    pub zipf_exponent: f64,
    pub num_topics: usize,
    pub terms_per_topic: usize,
    /// Probability that a body token is drawn from the document's topic pool.
    pub topic_affinity: f64,
    /// Mean body length in tokens (Poisson).
    pub body_len_mean: f64,
    /// Fraction of queries generated per category; the remainder are
    /// single-term OTHER queries.
    pub cat1_fraction: f64,
    pub cat2_fraction: f64,
    /// Judged documents per query.
    pub judged_per_query: usize,
    /// Categorizer thresholds the CAT2 generator must respect.
    pub thresholds: CategoryThresholds,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 100_000,
            num_queries: 10_000,
            vocab_size: 20_000,
            zipf_exponent: 1.05,
            num_topics: 100,
            terms_per_topic: 12,
            topic_affinity: 0.4,
            body_len_mean: 50.0,
            cat1_fraction: 0.4,
            cat2_fraction: 0.4,
            judged_per_query: 16,
            thresholds: CategoryThresholds::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_docs == 0 || self.num_queries == 0 {
            return Err(Error::Config("num_docs and num_queries must be >= 1".into()));
        }
        if self.vocab_size < 100 {
            return Err(Error::Config("vocab_size must be >= 100".into()));
        }
        if self.num_topics == 0 || self.terms_per_topic < 4 {
            return Err(Error::Config(
                "need at least one topic with >= 4 terms".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.topic_affinity) {
            return Err(Error::Config("topic_affinity must be in [0, 1]".into()));
        }
        if self.body_len_mean < 5.0 {
            return Err(Error::Config("body_len_mean must be >= 5".into()));
        }
        if self.cat1_fraction < 0.0
            || self.cat2_fraction < 0.0
            || self.cat1_fraction + self.cat2_fraction > 1.0
        {
            return Err(Error::Config("category fractions must sum to <= 1".into()));
        }
        if self.judged_per_query == 0 {
            return Err(Error::Config("judged_per_query must be >= 1".into()));
        }
        Ok(())
    }
}

fn term_string(rank: usize) -> String {
    format!("t{rank:05}")
}

/// The pool of judgable documents per query term list: the head of the
/// lowest-df term's document list, ordered by static rank descending.
const JUDGMENT_POOL_CAP: usize = 2_000;

struct World {
    docs: Vec<Document>,
    static_ranks: Vec<f64>,
    /// term rank -> documents containing the term (any field), ascending.
    term_docs: Vec<Vec<u32>>,
    /// Per-doc sorted distinct term ranks, for membership tests.
    doc_terms: Vec<Vec<u32>>,
    /// Per-topic term ranks.
    topics: Vec<Vec<usize>>,
}

fn generate_docs(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<World> {
    let weights: Vec<f64> = (0..cfg.vocab_size)
        .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("zipf weights: {e}")))?;

    // Topic pools come from the mid-frequency band so that topic terms end
    // up with moderate document frequency after the topic boost.
    let band_lo = (cfg.vocab_size / 1000).max(20);
    let band_hi = (cfg.vocab_size / 5).max(band_lo + cfg.terms_per_topic * 2);
    let band_hi = band_hi.min(cfg.vocab_size);
    let topics: Vec<Vec<usize>> = (0..cfg.num_topics)
        .map(|_| {
            rand::seq::index::sample(rng, band_hi - band_lo, cfg.terms_per_topic)
                .into_iter()
                .map(|i| band_lo + i)
                .collect()
        })
        .collect();

    let body_len = Poisson::new(cfg.body_len_mean)
        .map_err(|e| Error::Config(format!("body length distribution: {e}")))?;

    let mut docs = Vec::with_capacity(cfg.num_docs);
    let mut static_ranks = Vec::with_capacity(cfg.num_docs);
    let mut term_docs: Vec<Vec<u32>> = vec![Vec::new(); cfg.vocab_size];
    let mut doc_terms: Vec<Vec<u32>> = Vec::with_capacity(cfg.num_docs);
    let id_width = (cfg.num_docs as f64).log10().ceil().max(1.0) as usize;

    for d in 0..cfg.num_docs {
        let topic = &topics[rng.random_range(0..cfg.num_topics)];
        let static_rank = rng.random::<f64>();

        let draw = |affinity: f64, rng: &mut ChaCha8Rng| -> usize {
            if rng.random::<f64>() < affinity {
                topic[rng.random_range(0..topic.len())]
            } else {
                zipf.sample(rng)
            }
        };

        let n_body = (body_len.sample(rng) as usize).max(5);
        let body: Vec<usize> = (0..n_body).map(|_| draw(cfg.topic_affinity, rng)).collect();
        // The best documents advertise their topic in title and URL, and
        // attract topical anchor text.
        let title_affinity = 0.3 + 0.6 * static_rank;
        let n_title = rng.random_range(2..=5);
        let title: Vec<usize> = (0..n_title).map(|_| draw(title_affinity, rng)).collect();
        let url_affinity = 0.2 + 0.5 * static_rank;
        let n_url = rng.random_range(1..=3);
        let url: Vec<usize> = (0..n_url).map(|_| draw(url_affinity, rng)).collect();
        let n_anchor = rng.random_range(0..=2) + (static_rank * 3.0) as usize;
        let anchor: Vec<usize> = (0..n_anchor)
            .map(|_| draw(0.2 + 0.5 * static_rank, rng))
            .collect();

        let mut distinct: Vec<u32> = body
            .iter()
            .chain(&title)
            .chain(&url)
            .chain(&anchor)
            .map(|&r| r as u32)
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        for &r in &distinct {
            term_docs[r as usize].push(d as u32);
        }

        let mut fields: [Vec<String>; NUM_FIELDS] = Default::default();
        fields[FieldId::Anchor as usize] = anchor.iter().map(|&r| term_string(r)).collect();
        fields[FieldId::Url as usize] = url.iter().map(|&r| term_string(r)).collect();
        fields[FieldId::Body as usize] = body.iter().map(|&r| term_string(r)).collect();
        fields[FieldId::Title as usize] = title.iter().map(|&r| term_string(r)).collect();
        docs.push(Document {
            doc_id: format!("d{d:0id_width$}"),
            static_rank,
            fields,
        });
        static_ranks.push(static_rank);
        doc_terms.push(distinct);
    }

    Ok(World {
        docs,
        static_ranks,
        term_docs,
        doc_terms,
        topics,
    })
}

fn doc_has_term(world: &World, doc: u32, term: u32) -> bool {
    world.doc_terms[doc as usize].binary_search(&term).is_ok()
}

/// Judge a query: pool the head (by static rank) of the lowest-df term's
/// document list, score by (terms matched, static rank), and grade the top
/// documents. Full matches at high static rank earn the top grades.
fn judge(world: &World, terms: &[usize], judged: usize) -> BTreeMap<String, u8> {
    let min_term = terms
        .iter()
        .copied()
        .min_by_key(|&t| (world.term_docs[t].len(), usize::MAX - t))
        .unwrap();
    let mut pool: Vec<u32> = world.term_docs[min_term].clone();
    pool.sort_by(|&a, &b| {
        world.static_ranks[b as usize]
            .partial_cmp(&world.static_ranks[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    pool.truncate(JUDGMENT_POOL_CAP);

    let mut scored: Vec<(usize, f64, u32)> = pool
        .into_iter()
        .map(|d| {
            let matched = terms
                .iter()
                .filter(|&&t| doc_has_term(world, d, t as u32))
                .count();
            (matched, world.static_ranks[d as usize], d)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    scored.truncate(judged);

    let n = terms.len();
    let mut out = BTreeMap::new();
    for (matched, sr, d) in scored {
        let grade = if matched == n {
            if sr > 0.66 {
                4
            } else if sr > 0.33 {
                3
            } else {
                2
            }
        } else if n > 1 && matched + 1 == n {
            1
        } else {
            0
        };
        out.insert(world.docs[d as usize].doc_id.clone(), grade);
    }
    out
}

fn sample_distinct(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, pool.len(), n.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Generate the corpus and query log. Deterministic for a fixed config.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<Document>, Vec<Query>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = generate_docs(cfg, &mut rng)?;

    // Document frequencies after generation decide CAT2 eligibility; the
    // categorizer recomputes the same counts from the built index.
    let moderate: Vec<usize> = (0..cfg.vocab_size)
        .filter(|&t| {
            let f = world.term_docs[t].len() as f64 / cfg.num_docs as f64;
            f >= cfg.thresholds.moderate_df_low * 1.2
                && f <= cfg.thresholds.moderate_df_high * 0.8
        })
        .collect();
    if moderate.len() < 3 && cfg.cat2_fraction > 0.0 {
        return Err(Error::Sampling(
            "vocabulary has no moderate-frequency band for CAT2 queries".into(),
        ));
    }
    // Prefer co-occurring CAT2 terms: topic pools restricted to the band.
    let topic_moderate: Vec<Vec<usize>> = world
        .topics
        .iter()
        .map(|t| {
            t.iter()
                .copied()
                .filter(|r| moderate.binary_search(r).is_ok())
                .collect()
        })
        .collect();

    let n_cat1 = (cfg.num_queries as f64 * cfg.cat1_fraction).round() as usize;
    let n_cat2 = (cfg.num_queries as f64 * cfg.cat2_fraction).round() as usize;
    let n_cat1 = n_cat1.min(cfg.num_queries);
    let n_cat2 = n_cat2.min(cfg.num_queries - n_cat1);
    let qid_width = (cfg.num_queries as f64).log10().ceil().max(1.0) as usize;

    let mut queries = Vec::with_capacity(cfg.num_queries);
    for q in 0..cfg.num_queries {
        let (terms, popularity) = if q < n_cat1 {
            // Rare multi-term query on one topic.
            let topic = &world.topics[rng.random_range(0..cfg.num_topics)];
            let n = rng.random_range(2..=4usize);
            let terms = sample_distinct(topic, n, &mut rng);
            (terms, rng.random_range(0..cfg.thresholds.rare_popularity_cutoff))
        } else if q < n_cat1 + n_cat2 {
            // Popular query whose terms all sit in the moderate-df band,
            // drawn from one topic when it has enough qualifying terms.
            let n = rng.random_range(2..=3usize);
            let topic = &topic_moderate[rng.random_range(0..cfg.num_topics)];
            let pool = if topic.len() >= n { topic } else { &moderate };
            let terms = sample_distinct(pool, n, &mut rng);
            (terms, rng.random_range(100..10_000u64))
        } else {
            // Single-term navigational-style query.
            let topic = &world.topics[rng.random_range(0..cfg.num_topics)];
            let t = topic[rng.random_range(0..topic.len())];
            (vec![t], rng.random_range(0..1000u64))
        };
        let judgments = judge(&world, &terms, cfg.judged_per_query);
        queries.push(Query {
            query_id: format!("q{q:0qid_width$}"),
            terms: terms.into_iter().map(term_string).collect(),
            popularity,
            judgments,
        });
    }
    Ok((world.docs, queries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{categorize, QueryCategory};
    use crate::index::build_index;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_docs: 2_000,
            num_queries: 300,
            vocab_size: 2_000,
            num_topics: 20,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = small_cfg();
        let (d1, q1) = generate(&cfg).unwrap();
        let (d2, q2) = generate(&cfg).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(q1, q2);
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = small_cfg();
        let mut other = small_cfg();
        other.seed = 43;
        let (d1, _) = generate(&cfg).unwrap();
        let (d2, _) = generate(&other).unwrap();
        assert_ne!(d1, d2);
    }

    #[test]
    fn generated_categories_hold_under_the_categorizer() {
        let cfg = small_cfg();
        let (docs, queries) = generate(&cfg).unwrap();
        let index = build_index(&docs, 64).unwrap();
        let n_cat1 = (cfg.num_queries as f64 * cfg.cat1_fraction).round() as usize;
        let n_cat2 = (cfg.num_queries as f64 * cfg.cat2_fraction).round() as usize;
        let mut cat2_hits = 0usize;
        for (i, q) in queries.iter().enumerate() {
            let dfs: Vec<f64> = q.terms.iter().map(|t| index.df_fraction(t)).collect();
            let cat = categorize(q, &dfs, &cfg.thresholds);
            if i < n_cat1 {
                assert_eq!(cat, QueryCategory::Cat1, "query {} miscategorized", q.query_id);
            } else if i < n_cat1 + n_cat2 {
                if cat == QueryCategory::Cat2 {
                    cat2_hits += 1;
                }
            } else {
                assert_eq!(cat, QueryCategory::Other);
            }
        }
        // The CAT2 generator works from post-generation dfs with a safety
        // margin; nearly every intended CAT2 query must categorize as CAT2.
        assert!(
            cat2_hits as f64 >= 0.9 * n_cat2 as f64,
            "only {cat2_hits}/{n_cat2} intended CAT2 queries qualified"
        );
    }

    #[test]
    fn judgments_reference_real_docs_and_sane_grades() {
        let (docs, queries) = generate(&small_cfg()).unwrap();
        let ids: std::collections::HashSet<&str> =
            docs.iter().map(|d| d.doc_id.as_str()).collect();
        let mut top_grades = 0usize;
        for q in &queries {
            assert!(!q.judgments.is_empty(), "{} has no judgments", q.query_id);
            for (d, &g) in &q.judgments {
                assert!(ids.contains(d.as_str()));
                assert!(g <= 4);
            }
            if q.judgments.values().any(|&g| g >= 3) {
                top_grades += 1;
            }
        }
        // Most queries must carry some high-grade mass, otherwise NCG is
        // degenerate.
        assert!(top_grades * 10 >= queries.len() * 8);
    }

    #[test]
    fn judged_docs_concentrate_on_high_static_rank() {
        let (docs, queries) = generate(&small_cfg()).unwrap();
        let rank_of: std::collections::HashMap<&str, f64> = docs
            .iter()
            .map(|d| (d.doc_id.as_str(), d.static_rank))
            .collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for q in &queries {
            for (d, &g) in &q.judgments {
                if g >= 3 {
                    sum += rank_of[d.as_str()];
                    n += 1;
                }
            }
        }
        // Grade >= 3 requires static rank above 0.33 by construction; the
        // mean must sit clearly above the corpus mean of 0.5.
        assert!(n > 0);
        assert!(sum / n as f64 > 0.6);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small_cfg();
        cfg.cat1_fraction = 0.8;
        cfg.cat2_fraction = 0.5;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.vocab_size = 10;
        assert!(generate(&cfg).is_err());
    }
}
