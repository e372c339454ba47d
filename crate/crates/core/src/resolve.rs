//! Entity resolution over the unlinked occurrences that discovery kept as
//! entities. Occurrences of one key in two tables merge when the tables' type
//! distributions agree; different keys merge when the surface classifier says
//! so. Positive pairs are closed transitively into typed clusters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{core_mentions, normalize_text, MentionKey, Table};
use crate::discover::{MentionDossier, Verdict, VerdictClass};
use crate::error::{Error, Result};
use crate::eval::{Occurrence, OccurrencePair};
use crate::kb::{EntityId, KbSnapshot, TypeId};
use crate::learn::{Dataset, Example, TreeEnsembleModel};
use crate::link::TableLinks;
use crate::sim::{cosine, edit_distance_norm, jaccard_terms, set_jaccard, LexicalSims};

pub const DEFAULT_THETA: f64 = 0.95;
pub const EMBEDDING_THRESHOLD: f64 = 0.95;

pub const TABLE_FEATURES: [&str; 7] = [
    "caption_jaccard",
    "page_title_jaccard",
    "surrounding_jaccard",
    "heading_jaccard",
    "entity_jaccard",
    "type_cosine",
    "heading_bipartite",
];

pub const SURFACE_FEATURES: [&str; 12] = [
    "edit",
    "letter",
    "jaccard",
    "substring",
    "mention_cosine",
    "caption_jaccard",
    "page_title_jaccard",
    "surrounding_jaccard",
    "heading_jaccard",
    "entity_jaccard",
    "type_cosine",
    "heading_bipartite",
];

/// L2-normalized weights over types.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    pub weights: BTreeMap<TypeId, f64>,
}

impl TypeDistribution {
    pub fn from_counts(counts: BTreeMap<TypeId, f64>) -> Self {
        let norm = counts.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return TypeDistribution::default();
        }
        TypeDistribution {
            weights: counts.into_iter().filter(|(_, w)| *w > 0.0).map(|(t, w)| (t, w / norm)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn cosine(&self, other: &TypeDistribution) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        crate::discover::map_cosine(&self.weights, &other.weights)
    }
}

/// Type with the highest weight; ties go to the deepest type, then the smallest id.
pub fn dominant_type(weights: &BTreeMap<TypeId, f64>, kb: &KbSnapshot) -> Option<TypeId> {
    let h = kb.hierarchy();
    weights
        .iter()
        .fold(None::<(&TypeId, f64)>, |best, (t, &w)| match best {
            Some((bt, bw)) if bw > w || (bw == w && h.depth(bt) >= h.depth(t)) => best,
            _ => Some((t, w)),
        })
        .map(|(t, _)| t.clone())
}

/// Ancestor-expanded type counts over the linked mentions, L2-normalized.
pub fn table_type_distribution(links: &TableLinks, kb: &KbSnapshot) -> Result<TypeDistribution> {
    let mut counts: BTreeMap<TypeId, f64> = BTreeMap::new();
    for (_, e) in links.linked() {
        for t in kb.expanded_types(e)? {
            *counts.entry(t.clone()).or_insert(0.0) += 1.0;
        }
    }
    Ok(TypeDistribution::from_counts(counts))
}

/// Same entity iff the cosine of the two distributions reaches `theta`.
pub fn type_resolve(d1: &TypeDistribution, d2: &TypeDistribution, theta: f64) -> bool {
    !d1.is_empty() && !d2.is_empty() && d1.cosine(d2) >= theta
}

/// Maximum-weight assignment on a rectangular matrix via the Hungarian method.
/// Returns the matched weight sum and, per row, the assigned column.
pub fn max_weight_matching(w: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = w.len();
    let cols = w.iter().map(Vec::len).max().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 { -w.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0) };
    // 1-based potentials; p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= w[i - 1].len() {
            assign[i - 1] = Some(j - 1);
            total += w[i - 1][j - 1];
        }
    }
    (total, assign)
}

/// Matched edit-similarity of the best heading alignment over the longer list.
pub fn heading_bipartite_similarity(h1: &[String], h2: &[String]) -> f64 {
    if h1.is_empty() || h2.is_empty() {
        return 0.0;
    }
    let a: Vec<String> = h1.iter().map(|h| normalize_text(h)).collect();
    let b: Vec<String> = h2.iter().map(|h| normalize_text(h)).collect();
    let w: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| 1.0 - edit_distance_norm(x, y)).collect())
        .collect();
    max_weight_matching(&w).0 / a.len().max(b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention2VecConfig {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for Mention2VecConfig {
    fn default() -> Self {
        Mention2VecConfig { dimension: 64, window: 5, negatives: 5, epochs: 5, min_count: 2, seed: 42 }
    }
}

const LEARNING_RATE: f64 = 0.025;
const MIN_LEARNING_RATE: f64 = 0.025 * 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionEmbeddings {
    pub config: Mention2VecConfig,
    pub vectors: BTreeMap<MentionKey, Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling where each core column, in row order,
/// is one sentence of mention keys.
pub fn train_mention_embeddings(tables: &[Table], config: &Mention2VecConfig) -> MentionEmbeddings {
    let mut counts: BTreeMap<MentionKey, usize> = BTreeMap::new();
    let raw_sentences: Vec<Vec<MentionKey>> = tables
        .iter()
        .map(|t| core_mentions(t).into_iter().map(|m| m.key).collect())
        .collect();
    for s in &raw_sentences {
        for k in s {
            *counts.entry(k.clone()).or_insert(0) += 1;
        }
    }
    let vocab: Vec<MentionKey> = counts
        .iter()
        .filter(|(_, &c)| c >= config.min_count.max(1))
        .map(|(k, _)| k.clone())
        .collect();
    let id_of: HashMap<&MentionKey, usize> = vocab.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let sentences: Vec<Vec<usize>> = raw_sentences
        .iter()
        .map(|s| s.iter().filter_map(|k| id_of.get(k).copied()).collect::<Vec<_>>())
        .filter(|s| s.len() > 1)
        .collect();
    let dim = config.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..vocab.len() * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0; vocab.len() * dim];
    // unigram^0.75 cumulative table for negative draws
    let mut cdf = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for k in &vocab {
        acc += (counts[k] as f64).powf(0.75);
        cdf.push(acc);
    }
    let total_steps = (config.epochs * sentences.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    if !vocab.is_empty() {
        for _ in 0..config.epochs {
            for s in &sentences {
                for (i, &center) in s.iter().enumerate() {
                    let lr = (LEARNING_RATE * (1.0 - step as f64 / total_steps)).max(MIN_LEARNING_RATE);
                    step += 1;
                    let lo = i.saturating_sub(config.window);
                    let hi = (i + config.window + 1).min(s.len());
                    for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                        if j == i {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let ci = center * dim;
                        for n in 0..=config.negatives {
                            let (target, label) = if n == 0 {
                                (ctx, 1.0)
                            } else {
                                let r = rng.gen::<f64>() * acc;
                                let t = cdf.partition_point(|&c| c <= r).min(vocab.len() - 1);
                                if t == ctx {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let ti = target * dim;
                            let dot: f64 = (0..dim).map(|d| input[ci + d] * output[ti + d]).sum();
                            let g = (label - sigmoid(dot)) * lr;
                            for d in 0..dim {
                                grad[d] += g * output[ti + d];
                                output[ti + d] += g * input[ci + d];
                            }
                        }
                        for d in 0..dim {
                            input[ci + d] += grad[d];
                        }
                    }
                }
            }
        }
    }
    let vectors = vocab
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, input[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    MentionEmbeddings { config: *config, vectors }
}

impl MentionEmbeddings {
    /// Cosine of two mention vectors; 0 when either is missing.
    pub fn cosine(&self, a: &MentionKey, b: &MentionKey) -> f64 {
        match (self.vectors.get(a), self.vectors.get(b)) {
            (Some(x), Some(y)) => cosine(x, y),
            _ => 0.0,
        }
    }

    /// Text form: a `count dimension` header, then `key<TAB>values` lines.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.vectors.len(), self.config.dimension)?;
        for (k, v) in &self.vectors {
            let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}\t{}", k, vals.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data(&name, 1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let dim: usize = header
            .split_whitespace()
            .nth(1)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::data(&name, 1, "header must be `count dimension`"))?;
        let mut vectors = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let (k, vals) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(&name, i + 2, "expected key<TAB>values"))?;
            let v: Vec<f64> = vals
                .split(' ')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(&name, i + 2, format!("bad value: {e}")))?;
            if v.len() != dim {
                return Err(Error::data(&name, i + 2, format!("expected {dim} values, found {}", v.len())));
            }
            let key = MentionKey::normalize(k).ok_or_else(|| Error::data(&name, i + 2, "empty key"))?;
            vectors.insert(key, v);
        }
        Ok(MentionEmbeddings { config: Mention2VecConfig { dimension: dim, ..Default::default() }, vectors })
    }
}

/// Per-table inputs of the table similarity features.
#[derive(Debug, Clone)]
pub struct TableProfile {
    pub caption: String,
    pub page_title: String,
    pub surrounding: String,
    pub headings: Vec<String>,
    pub heading_set: BTreeSet<String>,
    pub entities: BTreeSet<EntityId>,
    pub types: TypeDistribution,
}

impl TableProfile {
    pub fn new(t: &Table, links: Option<&TableLinks>, kb: &KbSnapshot) -> Result<Self> {
        let (entities, types) = match links {
            Some(l) => (l.linked().map(|(_, e)| e.clone()).collect(), table_type_distribution(l, kb)?),
            None => (BTreeSet::new(), TypeDistribution::default()),
        };
        Ok(TableProfile {
            caption: t.context.caption.clone(),
            page_title: t.context.page_title.clone(),
            surrounding: t.context.surrounding_text.clone(),
            headings: t.headings.clone(),
            heading_set: t.headings.iter().map(|h| normalize_text(h)).filter(|h| !h.is_empty()).collect(),
            entities,
            types,
        })
    }
}

pub fn table_similarity_features(a: &TableProfile, b: &TableProfile) -> [f64; 7] {
    [
        jaccard_terms(&a.caption, &b.caption),
        jaccard_terms(&a.page_title, &b.page_title),
        jaccard_terms(&a.surrounding, &b.surrounding),
        set_jaccard(&a.heading_set, &b.heading_set),
        set_jaccard(&a.entities, &b.entities),
        a.types.cosine(&b.types),
        heading_bipartite_similarity(&a.headings, &b.headings),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SurfaceMode {
    /// Trained classifier over `SURFACE_FEATURES`.
    #[default]
    Model,
    /// Mention-embedding cosine against `EMBEDDING_THRESHOLD`.
    Embedding,
}

impl std::str::FromStr for SurfaceMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "model" => Ok(SurfaceMode::Model),
            "embedding" => Ok(SurfaceMode::Embedding),
            _ => Err(format!("unknown surface mode `{s}` (expected model or embedding)")),
        }
    }
}

impl std::fmt::Display for SurfaceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SurfaceMode::Model => "model",
            SurfaceMode::Embedding => "embedding",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveConfig {
    pub theta: f64,
    pub surface_mode: SurfaceMode,
    /// Blocking tokens shared by more keys than this are ignored.
    pub block_max_df: usize,
    pub mention2vec: Mention2VecConfig,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        ResolveConfig {
            theta: DEFAULT_THETA,
            surface_mode: SurfaceMode::Model,
            block_max_df: 50,
            mention2vec: Mention2VecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCluster {
    pub members: BTreeSet<Occurrence>,
    pub canonical: String,
    pub assigned_type: Option<TypeId>,
    pub tables: BTreeSet<String>,
}

/// Connected components of the positive pairs over `nodes`, sorted by their
/// smallest member. Order of `positives` does not matter.
pub fn connected_components(nodes: &BTreeSet<Occurrence>, positives: &[OccurrencePair]) -> Vec<BTreeSet<Occurrence>> {
    let index: BTreeMap<&Occurrence, usize> = nodes.iter().enumerate().map(|(i, o)| (o, i)).collect();
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for OccurrencePair(a, b) in positives {
        let (Some(&x), Some(&y)) = (index.get(a), index.get(b)) else { continue };
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        // smaller root wins so the result is independent of processing order
        if rx != ry {
            let (lo, hi) = if rx < ry { (rx, ry) } else { (ry, rx) };
            parent[hi] = lo;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<Occurrence>> = BTreeMap::new();
    for (i, o) in nodes.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(o.clone());
    }
    groups.into_values().collect()
}

/// Read-only resolution context.
pub struct Resolver<'a> {
    pub kb: &'a KbSnapshot,
    pub memb: &'a MentionEmbeddings,
    pub config: ResolveConfig,
    profiles: HashMap<String, TableProfile>,
    raw: HashMap<(String, MentionKey), BTreeMap<String, usize>>,
}

impl<'a> Resolver<'a> {
    pub fn new(
        tables: &[Table],
        links: &[TableLinks],
        kb: &'a KbSnapshot,
        memb: &'a MentionEmbeddings,
        config: ResolveConfig,
    ) -> Result<Self> {
        let by: HashMap<&str, &TableLinks> = links.iter().map(|l| (l.table_id.as_str(), l)).collect();
        let profiles = tables
            .par_iter()
            .map(|t| TableProfile::new(t, by.get(t.id.as_str()).copied(), kb).map(|p| (t.id.clone(), p)))
            .collect::<Result<HashMap<_, _>>>()?;
        let mut raw: HashMap<(String, MentionKey), BTreeMap<String, usize>> = HashMap::new();
        for t in tables {
            for m in core_mentions(t) {
                *raw.entry((t.id.clone(), m.key)).or_default().entry(m.raw.trim().to_string()).or_insert(0) += 1;
            }
        }
        Ok(Resolver { kb, memb, config, profiles, raw })
    }

    fn profile(&self, table_id: &str) -> Result<&TableProfile> {
        self.profiles
            .get(table_id)
            .ok_or_else(|| Error::Lookup { kind: "table", id: table_id.to_string() })
    }

    /// Features of a pair; symmetric because pairs are stored sorted.
    pub fn surface_features(&self, pair: &OccurrencePair) -> Result<Vec<f64>> {
        let OccurrencePair(a, b) = pair;
        let s = LexicalSims::between(a.key.as_str(), b.key.as_str());
        let mut v = s.to_array().to_vec();
        v.push(self.memb.cosine(&a.key, &b.key));
        v.extend(table_similarity_features(self.profile(&a.table_id)?, self.profile(&b.table_id)?));
        Ok(v)
    }

    pub fn type_resolve(&self, pair: &OccurrencePair) -> Result<bool> {
        let OccurrencePair(a, b) = pair;
        Ok(type_resolve(&self.profile(&a.table_id)?.types, &self.profile(&b.table_id)?.types, self.config.theta))
    }

    pub fn surface_resolve(&self, pair: &OccurrencePair, model: Option<&TreeEnsembleModel>) -> Result<bool> {
        match (self.config.surface_mode, model) {
            (SurfaceMode::Embedding, _) => Ok(self.memb.cosine(&pair.0.key, &pair.1.key) >= EMBEDDING_THRESHOLD),
            (SurfaceMode::Model, Some(m)) => {
                m.check_schema(&SURFACE_FEATURES)?;
                Ok(m.predict(&self.surface_features(pair)?)?.0)
            }
            (SurfaceMode::Model, None) => Err(Error::Config("surface resolution needs a trained model".into())),
        }
    }

    /// Same-key pairs go through type resolution, others through the surface model.
    pub fn decide(&self, pair: &OccurrencePair, model: Option<&TreeEnsembleModel>) -> Result<bool> {
        if pair.0.key == pair.1.key {
            self.type_resolve(pair)
        } else {
            self.surface_resolve(pair, model)
        }
    }

    /// Same-key pairs across tables plus different-key pairs that share a
    /// blocking token and come from different tables.
    pub fn candidate_pairs(&self, occurrences: &BTreeSet<Occurrence>) -> Vec<OccurrencePair> {
        let mut by_key: BTreeMap<&MentionKey, Vec<&Occurrence>> = BTreeMap::new();
        for o in occurrences {
            by_key.entry(&o.key).or_default().push(o);
        }
        let mut pairs = BTreeSet::new();
        for occ in by_key.values() {
            for (i, a) in occ.iter().enumerate() {
                for b in &occ[i + 1..] {
                    pairs.insert(OccurrencePair::new((*a).clone(), (*b).clone()));
                }
            }
        }
        let mut postings: BTreeMap<String, Vec<&MentionKey>> = BTreeMap::new();
        for k in by_key.keys() {
            let toks: BTreeSet<String> = crate::sim::tokens(k.as_str()).into_iter().collect();
            for t in toks {
                postings.entry(t).or_default().push(k);
            }
        }
        let mut key_pairs: BTreeSet<(&MentionKey, &MentionKey)> = BTreeSet::new();
        for ks in postings.values().filter(|ks| ks.len() <= self.config.block_max_df) {
            for (i, a) in ks.iter().enumerate() {
                for b in &ks[i + 1..] {
                    key_pairs.insert((a, b));
                }
            }
        }
        for (ka, kb) in key_pairs {
            for a in &by_key[ka] {
                for b in &by_key[kb] {
                    if a.table_id != b.table_id {
                        pairs.insert(OccurrencePair::new((*a).clone(), (*b).clone()));
                    }
                }
            }
        }
        pairs.into_iter().collect()
    }

    /// Occurrences of every dossier whose verdict is an entity class.
    pub fn occurrences(
        dossiers: &BTreeMap<MentionKey, MentionDossier>,
        verdicts: &BTreeMap<MentionKey, Verdict>,
    ) -> BTreeSet<Occurrence> {
        dossiers
            .iter()
            .filter(|(k, _)| verdicts.get(*k).is_some_and(|v| v.class != VerdictClass::NotEntity))
            .flat_map(|(k, d)| {
                d.origin_table_ids().map(|t| Occurrence { key: k.clone(), table_id: t.to_string() }).collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn resolve(
        &self,
        occurrences: &BTreeSet<Occurrence>,
        model: Option<&TreeEnsembleModel>,
    ) -> Result<Vec<EntityCluster>> {
        let pairs = self.candidate_pairs(occurrences);
        let decisions = pairs
            .par_iter()
            .map(|p| self.decide(p, model))
            .collect::<Result<Vec<bool>>>()?;
        let positives: Vec<OccurrencePair> = pairs
            .into_iter()
            .zip(decisions)
            .filter_map(|(p, d)| d.then_some(p))
            .collect();
        connected_components(occurrences, &positives)
            .into_iter()
            .map(|members| self.make_cluster(members))
            .collect()
    }

    fn make_cluster(&self, members: BTreeSet<Occurrence>) -> Result<EntityCluster> {
        let tables: BTreeSet<String> = members.iter().map(|o| o.table_id.clone()).collect();
        let mut weights: BTreeMap<TypeId, f64> = BTreeMap::new();
        for t in &tables {
            for (ty, w) in &self.profile(t)?.types.weights {
                *weights.entry(ty.clone()).or_insert(0.0) += w;
            }
        }
        let mut forms: BTreeMap<&str, usize> = BTreeMap::new();
        for o in &members {
            if let Some(f) = self.raw.get(&(o.table_id.clone(), o.key.clone())) {
                for (s, n) in f {
                    *forms.entry(s.as_str()).or_insert(0) += n;
                }
            }
        }
        let canonical = forms
            .iter()
            .fold(None::<(&str, usize)>, |best, (f, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((f, n)),
            })
            .map(|(f, _)| f.to_string())
            .unwrap_or_else(|| members.first().map(|o| o.key.to_string()).unwrap_or_default());
        Ok(EntityCluster { assigned_type: dominant_type(&weights, self.kb), canonical, members, tables })
    }

    /// Different-key gold pairs as surface-model examples.
    pub fn training_set(&self, gold: &BTreeMap<OccurrencePair, bool>) -> Result<Dataset> {
        let mut data = Dataset::new(SURFACE_FEATURES.iter().map(|s| s.to_string()).collect());
        for (pair, same) in gold {
            if pair.0.key == pair.1.key {
                continue;
            }
            if !self.profiles.contains_key(&pair.0.table_id) || !self.profiles.contains_key(&pair.1.table_id) {
                continue;
            }
            let OccurrencePair(a, b) = pair;
            data.push(Example {
                id: format!("{}@{}|{}@{}", a.key, a.table_id, b.key, b.table_id),
                features: self.surface_features(pair)?,
                label: *same,
                group: format!("{}|{}", a.key, b.key),
            })?;
        }
        Ok(data)
    }
}

/// Predicted same-entity decision for gold pairs: both occurrences in one cluster.
pub fn cluster_predictions(
    clusters: &[EntityCluster],
    gold: &BTreeMap<OccurrencePair, bool>,
) -> BTreeMap<OccurrencePair, bool> {
    let mut of: HashMap<&Occurrence, usize> = HashMap::new();
    for (i, c) in clusters.iter().enumerate() {
        for m in &c.members {
            of.insert(m, i);
        }
    }
    gold.keys()
        .map(|p| {
            let same = matches!((of.get(&p.0), of.get(&p.1)), (Some(a), Some(b)) if a == b);
            (p.clone(), same)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ClusterLine {
    canonical: String,
    members: Vec<(String, String)>,
    #[serde(rename = "type")]
    assigned_type: Option<String>,
    size: usize,
    tables: Vec<String>,
}

/// JSON Lines, one cluster per line.
pub fn write_clusters<W: Write>(mut w: W, clusters: &[EntityCluster]) -> std::io::Result<()> {
    for c in clusters {
        let line = ClusterLine {
            canonical: c.canonical.clone(),
            members: c.members.iter().map(|o| (o.key.to_string(), o.table_id.clone())).collect(),
            assigned_type: c.assigned_type.as_ref().map(|t| t.to_string()),
            size: c.members.len(),
            tables: c.tables.iter().cloned().collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

pub fn read_clusters(path: &Path) -> Result<Vec<EntityCluster>> {
    let name = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: ClusterLine = serde_json::from_str(&line).map_err(|e| Error::data(&name, i + 1, e.to_string()))?;
        let members = c
            .members
            .into_iter()
            .map(|(k, t)| {
                MentionKey::normalize(&k)
                    .map(|key| Occurrence { key, table_id: t })
                    .ok_or_else(|| Error::data(&name, i + 1, "empty mention"))
            })
            .collect::<Result<_>>()?;
        out.push(EntityCluster {
            members,
            canonical: c.canonical,
            assigned_type: c.assigned_type.map(TypeId::new),
            tables: c.tables.into_iter().collect(),
        });
    }
    Ok(out)
}
