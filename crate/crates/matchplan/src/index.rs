//! Fielded inverted index ordered by static rank, read in fixed-size blocks,
//! with exact accounting of block fetch events.
//!
//! # Index file format (`MPL0`, version 1)
//!
//! All integers little-endian.
//!
//! ```text
//! magic      4 bytes  "MPL0"
//! version    u32
//! block_size u64
//! doc_count  u64
//! term_count u64
//! doc table, doc_count entries in ordinal order:
//!   id_len u32, id bytes, static_rank f64 (raw bits)
//! dictionary, term_count entries in ascending term order:
//!   term_len u32, term bytes, posting_count u64, postings:
//!     doc_ordinal u32, field_mask u8, tf[4] u16 (A, U, B, T)
//! ```
//!
//! Postings are stored uncompressed; the byte layout is exact, so re-saving
//! a loaded index is bit-identical.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::{Document, NUM_FIELDS};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"MPL0";
pub const INDEX_VERSION: u32 = 1;

/// One posting: a document position in static-rank order, which fields the
/// term occurs in, and the per-field term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub field_mask: u8,
    pub tf: [u16; NUM_FIELDS],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostingList {
    pub postings: Vec<Posting>,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    /// Per-field term frequencies for a document, if present.
    pub fn tf_for(&self, doc_ordinal: u32) -> Option<&Posting> {
        self.postings
            .binary_search_by_key(&doc_ordinal, |p| p.doc_ordinal)
            .ok()
            .map(|i| &self.postings[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocEntry {
    pub doc_id: String,
    pub static_rank: f64,
}

/// Immutable fielded index. Documents are ordered by descending static rank
/// (ties broken by ascending doc_id); posting lists are ascending by the
/// resulting ordinal.
#[derive(Debug, Clone)]
pub struct FieldedIndex {
    pub block_size: usize,
    docs: Vec<DocEntry>,
    dict: BTreeMap<String, PostingList>,
    doc_ids: HashMap<String, u32>,
}

impl FieldedIndex {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, ordinal: u32) -> &DocEntry {
        &self.docs[ordinal as usize]
    }

    pub fn ordinal_of(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids.get(doc_id).copied()
    }

    pub fn max_static_rank(&self) -> f64 {
        self.docs.first().map(|d| d.static_rank).unwrap_or(0.0)
    }

    pub fn posting_list(&self, term: &str) -> Option<&PostingList> {
        self.dict.get(term)
    }

    /// Document frequency: number of documents containing the term in at
    /// least one field.
    pub fn df(&self, term: &str) -> u64 {
        self.dict.get(term).map(|l| l.len() as u64).unwrap_or(0)
    }

    pub fn df_fraction(&self, term: &str) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.df(term) as f64 / self.docs.len() as f64
        }
    }

    pub fn num_terms(&self) -> usize {
        self.dict.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &String> {
        self.dict.keys()
    }
}

/// Build a fielded index over a corpus. Ordinals are assigned by descending
/// static rank, ties by ascending doc_id.
pub fn build_index(corpus: &[Document], block_size: usize) -> Result<FieldedIndex> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if block_size == 0 {
        return Err(Error::InvalidArgument("block_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        corpus[b]
            .static_rank
            .partial_cmp(&corpus[a].static_rank)
            .unwrap()
            .then_with(|| corpus[a].doc_id.cmp(&corpus[b].doc_id))
    });

    let mut docs = Vec::with_capacity(corpus.len());
    let mut doc_ids = HashMap::with_capacity(corpus.len());
    for (ordinal, &i) in order.iter().enumerate() {
        let d = &corpus[i];
        if doc_ids.insert(d.doc_id.clone(), ordinal as u32).is_some() {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
        docs.push(DocEntry {
            doc_id: d.doc_id.clone(),
            static_rank: d.static_rank,
        });
    }

    let mut dict: BTreeMap<String, PostingList> = BTreeMap::new();
    let mut per_doc: HashMap<&str, [u16; NUM_FIELDS]> = HashMap::new();
    for (ordinal, &i) in order.iter().enumerate() {
        let d = &corpus[i];
        per_doc.clear();
        for (field, tokens) in d.fields.iter().enumerate() {
            for t in tokens {
                let tf = per_doc.entry(t.as_str()).or_default();
                tf[field] = tf[field].saturating_add(1);
            }
        }
        // BTreeMap insertion order does not matter, but iterate terms in a
        // deterministic order anyway to keep tf saturation reproducible.
        let mut terms: Vec<(&&str, &[u16; NUM_FIELDS])> = per_doc.iter().collect();
        terms.sort_unstable_by_key(|(t, _)| **t);
        for (term, tf) in terms {
            let mask = (0..NUM_FIELDS)
                .filter(|&f| tf[f] > 0)
                .fold(0u8, |m, f| m | (1 << f));
            dict.entry((*term).to_string())
                .or_default()
                .postings
                .push(Posting {
                    doc_ordinal: ordinal as u32,
                    field_mask: mask,
                    tf: *tf,
                });
        }
    }

    Ok(FieldedIndex {
        block_size,
        docs,
        dict,
        doc_ids,
    })
}

pub fn save_index(index: &FieldedIndex, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(INDEX_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(INDEX_VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(index.block_size as u64)
        .map_err(io)?;
    w.write_u64::<LittleEndian>(index.docs.len() as u64)
        .map_err(io)?;
    w.write_u64::<LittleEndian>(index.dict.len() as u64)
        .map_err(io)?;
    for d in &index.docs {
        w.write_u32::<LittleEndian>(d.doc_id.len() as u32)
            .map_err(io)?;
        w.write_all(d.doc_id.as_bytes()).map_err(io)?;
        w.write_u64::<LittleEndian>(d.static_rank.to_bits())
            .map_err(io)?;
    }
    for (term, list) in &index.dict {
        w.write_u32::<LittleEndian>(term.len() as u32).map_err(io)?;
        w.write_all(term.as_bytes()).map_err(io)?;
        w.write_u64::<LittleEndian>(list.postings.len() as u64)
            .map_err(io)?;
        for p in &list.postings {
            w.write_u32::<LittleEndian>(p.doc_ordinal).map_err(io)?;
            w.write_u8(p.field_mask).map_err(io)?;
            for f in 0..NUM_FIELDS {
                w.write_u16::<LittleEndian>(p.tf[f]).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn load_index(path: &Path) -> Result<FieldedIndex> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |msg: &str| Error::CorruptIndex {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != INDEX_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != INDEX_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let block_size = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    if block_size == 0 {
        return Err(corrupt("block_size is zero"));
    }
    let doc_count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let term_count = r.read_u64::<LittleEndian>().map_err(io)? as usize;

    let read_string = |r: &mut BufReader<File>| -> Result<String> {
        let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io)?;
        String::from_utf8(buf).map_err(|_| corrupt("non-utf8 string"))
    };

    let mut docs = Vec::with_capacity(doc_count);
    let mut doc_ids = HashMap::with_capacity(doc_count);
    for ordinal in 0..doc_count {
        let doc_id = read_string(&mut r)?;
        let static_rank = f64::from_bits(r.read_u64::<LittleEndian>().map_err(io)?);
        if doc_ids.insert(doc_id.clone(), ordinal as u32).is_some() {
            return Err(Error::DuplicateDocId(doc_id));
        }
        docs.push(DocEntry {
            doc_id,
            static_rank,
        });
    }

    let mut dict = BTreeMap::new();
    for _ in 0..term_count {
        let term = read_string(&mut r)?;
        let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut postings = Vec::with_capacity(count);
        let mut prev: Option<u32> = None;
        for _ in 0..count {
            let doc_ordinal = r.read_u32::<LittleEndian>().map_err(io)?;
            let field_mask = r.read_u8().map_err(io)?;
            if field_mask == 0 || field_mask > 0x0f {
                return Err(corrupt("invalid field mask"));
            }
            if doc_ordinal as usize >= doc_count {
                return Err(corrupt("doc ordinal out of range"));
            }
            if let Some(p) = prev {
                if doc_ordinal <= p {
                    return Err(corrupt("postings not strictly ascending"));
                }
            }
            prev = Some(doc_ordinal);
            let mut tf = [0u16; NUM_FIELDS];
            for f in tf.iter_mut() {
                *f = r.read_u16::<LittleEndian>().map_err(io)?;
            }
            postings.push(Posting {
                doc_ordinal,
                field_mask,
                tf,
            });
        }
        dict.insert(term, PostingList { postings });
    }

    Ok(FieldedIndex {
        block_size,
        docs,
        dict,
        doc_ids,
    })
}

/// A document emitted by the scan: its ordinal and, for every query term
/// position, the set of fields the term occurs in (0 = absent or not
/// consulted under the active term set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedDoc {
    pub doc_ordinal: u32,
    pub term_masks: Vec<u8>,
}

struct SubCursor {
    /// Index into the unique-term list table; postings for this term.
    pos: usize,
    last_block: Option<usize>,
}

/// Cursor over the posting lists of a query's terms. The scan emits
/// documents in ascending ordinal order; `u` counts block fetch events with
/// an LRU-of-1 per list, so sequential traversal fetches each block once and
/// re-scanning after a reset fetches (and counts) blocks again.
///
/// The active term set controls which lists the scan consults: a match rule
/// that requires only a subset of the terms reads only those lists, which is
/// what makes relaxed rules cheaper than strict ones. The scan frontier is
/// shared, so switching rules continues from the current index position;
/// lists activated later seek forward to the frontier.
pub struct ScanCursor<'a> {
    index: &'a FieldedIndex,
    /// One entry per query term position: index into `unique`.
    term_slots: Vec<usize>,
    /// Unique terms with their posting lists (empty for unknown terms).
    lists: Vec<Option<&'a PostingList>>,
    subs: Vec<SubCursor>,
    active: Vec<bool>,
    /// Next ordinal the scan may emit.
    frontier: u32,
    blocks_accessed: u64,
}

impl<'a> ScanCursor<'a> {
    pub fn num_terms(&self) -> usize {
        self.term_slots.len()
    }

    /// Cumulative block fetch events.
    pub fn blocks_accessed(&self) -> u64 {
        self.blocks_accessed
    }

    /// Restrict the scan to the posting lists of the given term positions.
    pub fn set_active_terms(&mut self, positions: &[usize]) {
        for a in self.active.iter_mut() {
            *a = false;
        }
        for &p in positions {
            self.active[self.term_slots[p]] = true;
        }
    }

    pub fn activate_all_terms(&mut self) {
        for a in self.active.iter_mut() {
            *a = true;
        }
    }

    fn touch(&mut self, slot: usize, posting_idx: usize) {
        let block = posting_idx / self.index.block_size;
        if self.subs[slot].last_block != Some(block) {
            self.subs[slot].last_block = Some(block);
            self.blocks_accessed += 1;
        }
    }

    /// Advance to the next document at or past the frontier in which at
    /// least one active term occurs. Returns the ordinal and per-term-position
    /// field masks; `None` when the active lists are exhausted.
    pub fn advance(&mut self) -> Option<ScannedDoc> {
        let mut next: Option<u32> = None;
        for slot in 0..self.lists.len() {
            if !self.active[slot] {
                continue;
            }
            let Some(list) = self.lists[slot] else {
                continue;
            };
            // Seek to the frontier. Lists activated mid-scan jump forward;
            // only the landing block is fetched.
            let mut pos = self.subs[slot].pos;
            if pos < list.postings.len() && list.postings[pos].doc_ordinal < self.frontier {
                pos += list.postings[pos..]
                    .partition_point(|p| p.doc_ordinal < self.frontier);
                self.subs[slot].pos = pos;
            }
            if pos >= list.postings.len() {
                continue;
            }
            self.touch(slot, pos);
            let head = list.postings[pos].doc_ordinal;
            next = Some(match next {
                Some(n) => n.min(head),
                None => head,
            });
        }
        let doc = next?;

        let mut term_masks = vec![0u8; self.term_slots.len()];
        for slot in 0..self.lists.len() {
            if !self.active[slot] {
                continue;
            }
            let Some(list) = self.lists[slot] else {
                continue;
            };
            let pos = self.subs[slot].pos;
            if pos < list.postings.len() && list.postings[pos].doc_ordinal == doc {
                let mask = list.postings[pos].field_mask;
                for (t, &s) in self.term_slots.iter().enumerate() {
                    if s == slot {
                        term_masks[t] = mask;
                    }
                }
                self.subs[slot].pos = pos + 1;
            }
        }
        self.frontier = doc + 1;
        Some(ScannedDoc {
            doc_ordinal: doc,
            term_masks,
        })
    }

    /// Reset the scan to the beginning of the index. Block accounting is
    /// cumulative: re-scanned blocks are fetched and counted again.
    pub fn reset(&mut self) {
        self.frontier = 0;
        for s in self.subs.iter_mut() {
            s.pos = 0;
            s.last_block = None;
        }
    }
}

/// Open a scan cursor over the query terms, positioned before ordinal 0 with
/// fresh block accounting and all terms active. Unknown terms are permitted
/// and contribute empty lists.
pub fn open_cursor<'a>(index: &'a FieldedIndex, terms: &[String]) -> Result<ScanCursor<'a>> {
    if terms.is_empty() {
        return Err(Error::InvalidArgument("open_cursor with no terms".into()));
    }
    let mut unique: Vec<&str> = Vec::new();
    let mut term_slots = Vec::with_capacity(terms.len());
    for t in terms {
        let slot = match unique.iter().position(|u| u == t) {
            Some(i) => i,
            None => {
                unique.push(t.as_str());
                unique.len() - 1
            }
        };
        term_slots.push(slot);
    }
    let lists: Vec<Option<&PostingList>> =
        unique.iter().map(|t| index.posting_list(t)).collect();
    let subs = (0..unique.len())
        .map(|_| SubCursor {
            pos: 0,
            last_block: None,
        })
        .collect();
    let active = vec![true; unique.len()];
    Ok(ScanCursor {
        index,
        term_slots,
        lists,
        subs,
        active,
        frontier: 0,
        blocks_accessed: 0,
    })
}
