//! Local candidate search over the KB: BM25 keyword relevance over entity
//! titles (labels and surface forms) and optionally descriptions, fused
//! multiplicatively with entity popularity.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KbSnapshot};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_POPULARITY_LAMBDA: f64 = 0.3;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
const CONTENT_WEIGHT: f64 = 0.5;

const INDEX_MAGIC: &[u8; 8] = b"TKBIDX\0\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchFields {
    TitleOnly,
    TitleAndContent,
}

impl std::str::FromStr for SearchFields {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "title" => Ok(SearchFields::TitleOnly),
            "title+content" => Ok(SearchFields::TitleAndContent),
            other => Err(format!("unknown search fields `{other}` (expected title or title+content)")),
        }
    }
}

impl std::fmt::Display for SearchFields {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchFields::TitleOnly => "title",
            SearchFields::TitleAndContent => "title+content",
        })
    }
}

/// Lowercased alphanumeric runs.
pub fn search_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchIndex {
    fields: SearchFields,
    lambda: f64,
    doc_ids: Vec<EntityId>,
    doc_lengths: Vec<f64>,
    avg_doc_length: f64,
    popularity: Vec<f64>,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: EntityId,
    pub rank: usize,
    pub retrieval_score: f64,
}

impl SearchIndex {
    pub fn build(kb: &KbSnapshot, fields: SearchFields) -> Self {
        Self::build_with_lambda(kb, fields, DEFAULT_POPULARITY_LAMBDA)
    }

    pub fn build_with_lambda(kb: &KbSnapshot, fields: SearchFields, lambda: f64) -> Self {
        let mut entities: Vec<_> = kb.entities().iter().collect();
        entities.sort_by(|a, b| a.id.cmp(&b.id));

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(entities.len());
        for (doc, e) in entities.iter().enumerate() {
            let mut tf: BTreeMap<String, f64> = BTreeMap::new();
            let forms = kb.surface_forms(&e.id).expect("entity exists");
            for f in forms {
                for t in search_tokens(f) {
                    tf.insert(t, 1.0);
                }
            }
            let mut length = tf.len() as f64;
            if fields == SearchFields::TitleAndContent {
                let content = search_tokens(&e.description);
                length += CONTENT_WEIGHT * content.len() as f64;
                for t in content {
                    *tf.entry(t).or_insert(0.0) += CONTENT_WEIGHT;
                }
            }
            doc_lengths.push(length);
            for (t, w) in tf {
                postings.entry(t).or_default().push(Posting { doc: doc as u32, tf: w });
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().sum::<f64>() / doc_lengths.len() as f64
        };
        SearchIndex {
            fields,
            lambda,
            doc_ids: entities.iter().map(|e| e.id.clone()).collect(),
            doc_lengths,
            avg_doc_length,
            popularity: entities.iter().map(|e| e.popularity).collect(),
            postings,
        }
    }

    pub fn fields(&self) -> SearchFields {
        self.fields
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    /// Top-`k` entities by `bm25 * (1 + lambda * ln(1 + popularity))`, ties
    /// broken by ascending entity id.
    pub fn search(&self, query: &str, k: usize) -> Vec<Candidate> {
        let mut q = search_tokens(query);
        q.sort();
        q.dedup();
        if q.is_empty() || k == 0 || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let n = self.doc_ids.len() as f64;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for t in &q {
            let Some(list) = self.postings.get(t) else { continue };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for p in list {
                let dl = self.doc_lengths[p.doc as usize];
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length);
                *scores.entry(p.doc).or_insert(0.0) += idf * p.tf * (BM25_K1 + 1.0) / (p.tf + norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .map(|(d, s)| (d, s * (1.0 + self.lambda * self.popularity[d as usize].ln_1p())))
            .collect();
        // doc order equals entity-id order, so the index is the tie-break
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (d, s))| Candidate {
                entity_id: self.doc_ids[d as usize].clone(),
                rank: i + 1,
                retrieval_score: s,
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(INDEX_MAGIC)
            .and_then(|_| w.write_all(&INDEX_VERSION.to_le_bytes()))
            .map_err(|e| Error::io("<index>", e))?;
        bincode::serialize_into(w, self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        let mut version = [0u8; 4];
        r.read_exact(&mut magic)
            .and_then(|_| r.read_exact(&mut version))
            .map_err(|e| Error::io("<index>", e))?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Serde("not a search index file".into()));
        }
        let version = u32::from_le_bytes(version);
        if version != INDEX_VERSION {
            return Err(Error::Serde(format!("unsupported index version {version}")));
        }
        bincode::deserialize_from(r).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}
