//! Corpus, query-log, and judgment ingestion; query categorization; sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Document field identifiers. The bit positions double as field-mask bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldId {
    Anchor = 0,
    Url = 1,
    Body = 2,
    Title = 3,
}

pub const NUM_FIELDS: usize = 4;
pub const ALL_FIELDS: [FieldId; NUM_FIELDS] =
    [FieldId::Anchor, FieldId::Url, FieldId::Body, FieldId::Title];

impl FieldId {
    pub const fn mask(self) -> u8 {
        1 << (self as u8)
    }

    pub fn letter(self) -> char {
        match self {
            FieldId::Anchor => 'A',
            FieldId::Url => 'U',
            FieldId::Body => 'B',
            FieldId::Title => 'T',
        }
    }

    pub fn from_letter(c: char) -> Option<FieldId> {
        match c.to_ascii_uppercase() {
            'A' => Some(FieldId::Anchor),
            'U' => Some(FieldId::Url),
            'B' => Some(FieldId::Body),
            'T' => Some(FieldId::Title),
            _ => None,
        }
    }
}

/// Parse a field-set string like "AUT" into a mask.
pub fn field_mask_from_letters(s: &str) -> Result<u8> {
    let mut mask = 0u8;
    for c in s.chars() {
        let f = FieldId::from_letter(c)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown field letter {c:?}")))?;
        mask |= f.mask();
    }
    Ok(mask)
}

pub fn field_mask_to_letters(mask: u8) -> String {
    ALL_FIELDS
        .iter()
        .filter(|f| mask & f.mask() != 0)
        .map(|f| f.letter())
        .collect()
}

/// A web document: unique id, query-independent quality score, and four
/// tokenized fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub static_rank: f64,
    /// Indexed by `FieldId as usize`.
    pub fields: [Vec<String>; NUM_FIELDS],
}

impl Document {
    pub fn field(&self, f: FieldId) -> &[String] {
        &self.fields[f as usize]
    }
}

/// A query with historical popularity and graded relevance judgments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub terms: Vec<String>,
    pub popularity: u64,
    /// doc_id -> grade on the five-point scale 0..=4.
    pub judgments: BTreeMap<String, u8>,
}

pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryCategory {
    Cat1,
    Cat2,
    Other,
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryCategory::Cat1 => write!(f, "CAT1"),
            QueryCategory::Cat2 => write!(f, "CAT2"),
            QueryCategory::Other => write!(f, "OTHER"),
        }
    }
}

impl std::str::FromStr for QueryCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CAT1" => Ok(QueryCategory::Cat1),
            "CAT2" => Ok(QueryCategory::Cat2),
            "OTHER" => Ok(QueryCategory::Other),
            other => Err(Error::InvalidArgument(format!(
                "unknown query category {other:?}"
            ))),
        }
    }
}

/// Thresholds for the rule-based query categorizer. The boundaries are
/// configuration, not claims: CAT1 is short multi-term queries with low
/// historical popularity, CAT2 is multi-term queries where every term has
/// moderate document frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryThresholds {
    pub rare_popularity_cutoff: u64,
    pub moderate_df_low: f64,
    pub moderate_df_high: f64,
}

impl Default for CategoryThresholds {
    fn default() -> Self {
        CategoryThresholds {
            rare_popularity_cutoff: 10,
            moderate_df_low: 0.01,
            moderate_df_high: 0.2,
        }
    }
}

/// Lowercase and split on non-alphanumeric runs, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Rule-based query categorization over (num_terms, per-term df fraction,
/// popularity). CAT1 wins when both CAT1 and CAT2 match.
pub fn categorize(
    query: &Query,
    df_fractions: &[f64],
    thresholds: &CategoryThresholds,
) -> QueryCategory {
    let nt = query.terms.len();
    let cat1 = (2..=4).contains(&nt) && query.popularity < thresholds.rare_popularity_cutoff;
    if cat1 {
        return QueryCategory::Cat1;
    }
    let cat2 = nt >= 2
        && df_fractions.len() == nt
        && df_fractions
            .iter()
            .all(|&f| f >= thresholds.moderate_df_low && f <= thresholds.moderate_df_high);
    if cat2 {
        QueryCategory::Cat2
    } else {
        QueryCategory::Other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Weighted,
    Unweighted,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weighted" => Ok(SampleMode::Weighted),
            "unweighted" => Ok(SampleMode::Unweighted),
            other => Err(Error::InvalidArgument(format!(
                "unknown sample mode {other:?}"
            ))),
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleMode::Weighted => write!(f, "weighted"),
            SampleMode::Unweighted => write!(f, "unweighted"),
        }
    }
}

/// Sample query indices. Unweighted draws uniformly without replacement;
/// weighted draws with replacement, probability proportional to popularity.
pub fn sample_queries(
    queries: &[Query],
    mode: SampleMode,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SampleMode::Unweighted => {
            if count > queries.len() {
                return Err(Error::Sampling(format!(
                    "unweighted sample of {count} from population of {}",
                    queries.len()
                )));
            }
            Ok(rand::seq::index::sample(&mut rng, queries.len(), count).into_vec())
        }
        SampleMode::Weighted => {
            let weights: Vec<u64> = queries.iter().map(|q| q.popularity).collect();
            if weights.iter().all(|&w| w == 0) {
                return Err(Error::Sampling(
                    "weighted sampling with all-zero popularity".into(),
                ));
            }
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::Sampling(format!("weighted index: {e}")))?;
            Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
        }
    }
}

/// Load a corpus file: one tab-separated record per line with
/// `doc_id  static_rank  url  title  body  anchor`. Text fields are
/// tokenized on load.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 tab-separated columns, found {}", cols.len()),
            ));
        }
        let doc_id = cols[0].to_string();
        if doc_id.is_empty() {
            return Err(Error::parse(path, lineno, "empty doc_id"));
        }
        let static_rank: f64 = cols[1]
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad static_rank: {e}")))?;
        if !static_rank.is_finite() || static_rank < 0.0 {
            return Err(Error::parse(path, lineno, "static_rank must be finite and >= 0"));
        }
        if !seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateDocId(doc_id));
        }
        let mut fields: [Vec<String>; NUM_FIELDS] = Default::default();
        fields[FieldId::Url as usize] = tokenize(cols[2]);
        fields[FieldId::Title as usize] = tokenize(cols[3]);
        fields[FieldId::Body as usize] = tokenize(cols[4]);
        fields[FieldId::Anchor as usize] = tokenize(cols[5]);
        docs.push(Document {
            doc_id,
            static_rank,
            fields,
        });
    }
    Ok(docs)
}

/// Write a corpus in the load format; tokens are joined by single spaces, so
/// load(write(load(f))) reproduces records field-for-field.
pub fn write_corpus<W: Write>(docs: &[Document], out: &mut W) -> std::io::Result<()> {
    for d in docs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            d.doc_id,
            d.static_rank,
            d.field(FieldId::Url).join(" "),
            d.field(FieldId::Title).join(" "),
            d.field(FieldId::Body).join(" "),
            d.field(FieldId::Anchor).join(" "),
        )?;
    }
    Ok(())
}

pub fn write_corpus_file(docs: &[Document], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(docs, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a query file: one tab-separated record per line with
/// `query_id  query_text  popularity  judgments` where judgments are
/// comma-separated `doc_id:grade` pairs (possibly empty).
pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut queries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let query_id = cols[0].to_string();
        if !seen.insert(query_id.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate query_id {query_id:?}")));
        }
        let terms = tokenize(cols[1]);
        if terms.is_empty() {
            return Err(Error::parse(path, lineno, "query has no terms after tokenization"));
        }
        let popularity: u64 = cols[2]
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad popularity: {e}")))?;
        let mut judgments = BTreeMap::new();
        if !cols[3].is_empty() {
            for pair in cols[3].split(',') {
                let (doc, grade) = pair.split_once(':').ok_or_else(|| {
                    Error::parse(path, lineno, format!("bad judgment pair {pair:?}"))
                })?;
                let grade: u8 = grade
                    .parse()
                    .map_err(|e| Error::parse(path, lineno, format!("bad grade: {e}")))?;
                if grade > MAX_GRADE {
                    return Err(Error::parse(path, lineno, format!("grade {grade} out of scale")));
                }
                judgments.insert(doc.to_string(), grade);
            }
        }
        queries.push(Query {
            query_id,
            terms,
            popularity,
            judgments,
        });
    }
    Ok(queries)
}

pub fn write_queries_file(queries: &[Query], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        let judgments = q
            .judgments
            .iter()
            .map(|(d, g)| format!("{d}:{g}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            q.query_id,
            q.terms.join(" "),
            q.popularity,
            judgments
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
