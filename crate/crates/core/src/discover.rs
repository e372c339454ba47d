//! Novel entity discovery. Unlinked core mentions are gathered into
//! corpus-wide dossiers and classified as known entities the linker missed,
//! entities absent from the KB, or noise.
//!
//! Features come in four families: origin statistics of the tables a mention
//! occurs in, saliency (how well linked mentions match their labels, and how
//! close the mention is to its nearest KB label), semantic agreement with its
//! top search hit, and a temporal usage baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{identical_core_key, is_noise_mention, MentionKey, Table};
use crate::error::{Error, Result};
use crate::headmatch::HeadingMatch;
use crate::kb::{KbSnapshot, TypeId};
use crate::learn::{Dataset, Example, TreeEnsembleModel};
use crate::link::TableLinks;
use crate::retrieve::SearchIndex;
use crate::sim::{cosine, edit_distance_norm, embedding_cosine, LexicalSims, TermEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictClass {
    InKb,
    OutOfKb,
    NotEntity,
}

impl std::str::FromStr for VerdictClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "in_kb" => Ok(VerdictClass::InKb),
            "out_of_kb" => Ok(VerdictClass::OutOfKb),
            "not_entity" => Ok(VerdictClass::NotEntity),
            _ => Err(format!("unknown verdict `{s}` (expected in_kb, out_of_kb or not_entity)")),
        }
    }
}

impl std::fmt::Display for VerdictClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictClass::InKb => "in_kb",
            VerdictClass::OutOfKb => "out_of_kb",
            VerdictClass::NotEntity => "not_entity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub class: VerdictClass,
    pub score: f64,
}

/// Statistics of one origin table of a mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginStats {
    pub table_id: String,
    pub linked_count: usize,
    pub link_rate: f64,
    pub matched_heading_count: usize,
    pub core_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionDossier {
    pub key: MentionKey,
    /// Sorted by table id.
    pub origins: Vec<OriginStats>,
    pub identical_core_groups: usize,
    pub appears_as_header: bool,
    pub usage_years: BTreeMap<i32, usize>,
    /// Raw spellings and how often each was seen.
    pub raw_forms: BTreeMap<String, usize>,
}

impl MentionDossier {
    pub fn origin_table_ids(&self) -> impl Iterator<Item = &str> {
        self.origins.iter().map(|o| o.table_id.as_str())
    }

    /// Most frequent raw spelling, lexicographically smallest on ties.
    pub fn canonical_raw(&self) -> &str {
        self.raw_forms
            .iter()
            .fold(None::<(&String, usize)>, |best, (f, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((f, n)),
            })
            .map_or(self.key.as_str(), |(f, _)| f.as_str())
    }
}

/// One dossier per key left unlinked in at least one linkable table.
pub fn build_dossiers(
    tables: &[Table],
    links: &[TableLinks],
    headings: &[HeadingMatch],
) -> BTreeMap<MentionKey, MentionDossier> {
    let links_by: HashMap<&str, &TableLinks> = links.iter().map(|l| (l.table_id.as_str(), l)).collect();
    let heads_by: HashMap<&str, usize> = headings.iter().map(|h| (h.table_id.as_str(), h.num_matched())).collect();
    let mut out: BTreeMap<MentionKey, MentionDossier> = BTreeMap::new();
    for t in tables {
        let Some(l) = links_by.get(t.id.as_str()) else { continue };
        if !l.is_linkable() {
            continue;
        }
        let linked = l.num_linked();
        let stats = OriginStats {
            table_id: t.id.clone(),
            linked_count: linked,
            link_rate: linked as f64 / l.mentions.len() as f64,
            matched_heading_count: heads_by.get(t.id.as_str()).copied().unwrap_or(0),
            core_digest: identical_core_key(t).0,
        };
        let header = MentionKey::normalize(t.core_heading());
        let mut seen: BTreeSet<&MentionKey> = BTreeSet::new();
        for m in l.mentions.iter().filter(|m| m.entity.is_none()) {
            let d = out.entry(m.key.clone()).or_insert_with(|| MentionDossier {
                key: m.key.clone(),
                origins: Vec::new(),
                identical_core_groups: 0,
                appears_as_header: false,
                usage_years: BTreeMap::new(),
                raw_forms: BTreeMap::new(),
            });
            *d.raw_forms.entry(m.raw.trim().to_string()).or_insert(0) += 1;
            if !seen.insert(&m.key) {
                continue;
            }
            d.origins.push(stats.clone());
            if header.as_ref() == Some(&m.key) {
                d.appears_as_header = true;
            }
            if let Some(y) = t.context.last_edit_year {
                *d.usage_years.entry(y).or_insert(0) += 1;
            }
        }
    }
    for d in out.values_mut() {
        d.origins.sort_by(|a, b| a.table_id.cmp(&b.table_id));
        d.identical_core_groups = d.origins.iter().map(|o| &o.core_digest).collect::<BTreeSet<_>>().len();
    }
    out
}

/// `[sum, max, min, avg, std]` with population std; all zero when empty.
pub fn aggregate5(xs: &[f64]) -> [f64; 5] {
    if xs.is_empty() {
        return [0.0; 5];
    }
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = sum / n;
    let var = xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
    [sum, max, min, avg, var.sqrt()]
}

/// `[max, sum, avg, min]`; all zero when empty.
pub fn aggregate4(xs: &[f64]) -> [f64; 4] {
    let [sum, max, min, avg, _] = aggregate5(xs);
    [max, sum, avg, min]
}

/// Origin tables used for saliency: with `collapse`, one per identical-core group.
fn saliency_tables(d: &MentionDossier, collapse: bool) -> Vec<&str> {
    if !collapse {
        return d.origin_table_ids().collect();
    }
    let mut seen = BTreeSet::new();
    d.origins
        .iter()
        .filter(|o| seen.insert(&o.core_digest))
        .map(|o| o.table_id.as_str())
        .collect()
}

/// Label similarity between linked mentions of the origin tables and their
/// entities, aggregated as `(max, sum, avg, min)`.
pub fn med_features(
    d: &MentionDossier,
    links: &HashMap<&str, &TableLinks>,
    kb: &KbSnapshot,
    collapse: bool,
) -> Result<[f64; 4]> {
    let mut sims = Vec::new();
    for tid in saliency_tables(d, collapse) {
        let Some(l) = links.get(tid) else { continue };
        for (m, e) in l.linked() {
            let label = &kb
                .entity(e)
                .ok_or_else(|| Error::Lookup { kind: "entity", id: e.0.clone() })?
                .label;
            sims.push(LexicalSims::between(&m.raw, label).mean_similarity());
        }
    }
    Ok(aggregate4(&sims))
}

/// Best label similarity among the top-`k` search hits for `m`; 0 without hits.
pub fn wd_feature(m: &str, index: &SearchIndex, kb: &KbSnapshot, k: usize) -> f64 {
    index
        .search(m, k)
        .iter()
        .filter_map(|c| kb.entity(&c.entity_id))
        .map(|e| LexicalSims::between(m, &e.label).mean_similarity())
        .fold(0.0, f64::max)
}

/// Ancestor-expanded type counts over the linked mentions of the given tables.
pub fn cooccurrence_types<'a>(
    tables: impl IntoIterator<Item = &'a str>,
    links: &HashMap<&str, &TableLinks>,
    kb: &KbSnapshot,
) -> Result<BTreeMap<TypeId, f64>> {
    let mut w: BTreeMap<TypeId, f64> = BTreeMap::new();
    for tid in tables {
        let Some(l) = links.get(tid) else { continue };
        for (_, e) in l.linked() {
            for t in kb.expanded_types(e)? {
                *w.entry(t.clone()).or_insert(0.0) += 1.0;
            }
        }
    }
    Ok(w)
}

pub(crate) fn map_cosine(a: &BTreeMap<TypeId, f64>, b: &BTreeMap<TypeId, f64>) -> f64 {
    let keys: BTreeSet<&TypeId> = a.keys().chain(b.keys()).collect();
    let va: Vec<f64> = keys.iter().map(|k| a.get(*k).copied().unwrap_or(0.0)).collect();
    let vb: Vec<f64> = keys.iter().map(|k| b.get(*k).copied().unwrap_or(0.0)).collect();
    cosine(&va, &vb)
}

/// `(neural, topical, lexical)` against the rank-1 search hit of `m`.
pub fn semantic_features(
    m: &str,
    d: &MentionDossier,
    index: &SearchIndex,
    links: &HashMap<&str, &TableLinks>,
    kb: &KbSnapshot,
    emb: &TermEmbeddings,
) -> Result<[f64; 3]> {
    let Some(top) = index.search(m, 1).into_iter().next() else {
        return Ok([0.0; 3]);
    };
    let e = kb
        .entity(&top.entity_id)
        .ok_or_else(|| Error::Lookup { kind: "entity", id: top.entity_id.0.clone() })?;
    let co = cooccurrence_types(d.origin_table_ids(), links, kb)?;
    let own: BTreeMap<TypeId, f64> = kb.expanded_types(&e.id)?.iter().map(|t| (t.clone(), 1.0)).collect();
    Ok([
        embedding_cosine(m, &e.label, emb),
        map_cosine(&co, &own),
        edit_distance_norm(&crate::corpus::normalize_text(m), &crate::corpus::normalize_text(&e.label)),
    ])
}

/// Least-squares line over `(year, count)`; `(slope, r², first year, points)`.
pub fn temporal_features(usage: &BTreeMap<i32, usize>) -> [f64; 4] {
    let n = usage.len();
    let Some((&first, _)) = usage.iter().next() else {
        return [0.0; 4];
    };
    if n == 1 {
        return [0.0, 0.0, f64::from(first), 1.0];
    }
    let pts: Vec<(f64, f64)> = usage.iter().map(|(&y, &c)| (f64::from(y), c as f64)).collect();
    let nf = n as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - ybar).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    [slope, r2, f64::from(first), nf]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    Origin,
    Saliency,
    Semantic,
    Temporal,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 4] = [
        FeatureFamily::Origin,
        FeatureFamily::Saliency,
        FeatureFamily::Semantic,
        FeatureFamily::Temporal,
    ];
    pub const OSS: [FeatureFamily; 3] = [FeatureFamily::Origin, FeatureFamily::Saliency, FeatureFamily::Semantic];

    pub fn prefix(self) -> &'static str {
        match self {
            FeatureFamily::Origin => "origin_",
            FeatureFamily::Saliency => "saliency_",
            FeatureFamily::Semantic => "semantic_",
            FeatureFamily::Temporal => "temporal_",
        }
    }
}

impl std::str::FromStr for FeatureFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "origin" => Ok(FeatureFamily::Origin),
            "saliency" => Ok(FeatureFamily::Saliency),
            "semantic" => Ok(FeatureFamily::Semantic),
            "temporal" => Ok(FeatureFamily::Temporal),
            _ => Err(format!("unknown feature family `{s}`")),
        }
    }
}

/// Parses a `+`-separated family list; `oss` and `all` are shorthands.
pub fn parse_families(s: &str) -> std::result::Result<Vec<FeatureFamily>, String> {
    match s {
        "oss" => return Ok(FeatureFamily::OSS.to_vec()),
        "all" => return Ok(FeatureFamily::ALL.to_vec()),
        _ => {}
    }
    let mut v: Vec<FeatureFamily> = s.split('+').map(str::parse).collect::<std::result::Result<_, _>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

/// Full feature schema across all families.
pub fn discovery_schema() -> Vec<String> {
    let mut names: Vec<String> = ["origin_tables", "origin_identical_groups", "origin_header"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for stat in ["linked", "link_rate", "matched_headings"] {
        for f in ["sum", "max", "min", "avg", "std"] {
            names.push(format!("origin_{stat}_{f}"));
        }
    }
    for f in ["med_max", "med_sum", "med_avg", "med_min", "wd"] {
        names.push(format!("saliency_{f}"));
    }
    for f in ["neural", "topical", "lexical"] {
        names.push(format!("semantic_{f}"));
    }
    for f in ["slope", "r_squared", "usage_since_year", "frequency"] {
        names.push(format!("temporal_{f}"));
    }
    names
}

/// Schema names belonging to the given families.
pub fn family_schema(families: &[FeatureFamily]) -> Vec<String> {
    discovery_schema()
        .into_iter()
        .filter(|n| families.iter().any(|f| n.starts_with(f.prefix())))
        .collect()
}

/// Values aligned with `discovery_schema()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryFeatureVector {
    pub values: Vec<f64>,
}

impl DiscoveryFeatureVector {
    /// Values for the named subset of the schema.
    pub fn select(&self, names: &[String]) -> Result<Vec<f64>> {
        let schema = discovery_schema();
        names
            .iter()
            .map(|n| {
                schema
                    .iter()
                    .position(|s| s == n)
                    .map(|i| self.values[i])
                    .ok_or_else(|| Error::SchemaMismatch { expected: schema.join(","), found: n.clone() })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiscoveryMode {
    /// Noise pre-filter, then in-KB versus out-of-KB.
    #[default]
    Binary,
    /// Adds a learned not-an-entity stage before the binary model.
    ThreeWay,
}

impl std::str::FromStr for DiscoveryMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(DiscoveryMode::Binary),
            "three-way" => Ok(DiscoveryMode::ThreeWay),
            _ => Err(format!("unknown discovery mode `{s}` (expected binary or three-way)")),
        }
    }
}

impl std::fmt::Display for DiscoveryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiscoveryMode::Binary => "binary",
            DiscoveryMode::ThreeWay => "three-way",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub wd_k: usize,
    pub collapse_identical_cores: bool,
    pub families: Vec<FeatureFamily>,
    pub mode: DiscoveryMode,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            wd_k: 1,
            collapse_identical_cores: true,
            families: FeatureFamily::OSS.to_vec(),
            mode: DiscoveryMode::Binary,
        }
    }
}

/// Read-only inputs shared by feature extraction.
pub struct Discoverer<'a> {
    pub kb: &'a KbSnapshot,
    /// Index for the semantic top hit.
    pub index: &'a SearchIndex,
    /// Index for the nearest-label distance.
    pub wd_index: &'a SearchIndex,
    pub emb: &'a TermEmbeddings,
    pub links: HashMap<&'a str, &'a TableLinks>,
    pub config: DiscoveryConfig,
}

impl<'a> Discoverer<'a> {
    pub fn new(
        kb: &'a KbSnapshot,
        index: &'a SearchIndex,
        wd_index: &'a SearchIndex,
        emb: &'a TermEmbeddings,
        links: &'a [TableLinks],
        config: DiscoveryConfig,
    ) -> Self {
        let links = links.iter().map(|l| (l.table_id.as_str(), l)).collect();
        Discoverer { kb, index, wd_index, emb, links, config }
    }

    pub fn features(&self, d: &MentionDossier) -> Result<DiscoveryFeatureVector> {
        let m = d.canonical_raw();
        let mut v = vec![
            d.origins.len() as f64,
            d.identical_core_groups as f64,
            f64::from(u8::from(d.appears_as_header)),
        ];
        let linked: Vec<f64> = d.origins.iter().map(|o| o.linked_count as f64).collect();
        let rates: Vec<f64> = d.origins.iter().map(|o| o.link_rate).collect();
        let heads: Vec<f64> = d.origins.iter().map(|o| o.matched_heading_count as f64).collect();
        v.extend(aggregate5(&linked));
        v.extend(aggregate5(&rates));
        v.extend(aggregate5(&heads));
        v.extend(med_features(d, &self.links, self.kb, self.config.collapse_identical_cores)?);
        v.push(wd_feature(m, self.wd_index, self.kb, self.config.wd_k));
        v.extend(semantic_features(m, d, self.index, &self.links, self.kb, self.emb)?);
        v.extend(temporal_features(&d.usage_years));
        Ok(DiscoveryFeatureVector { values: v })
    }

    pub fn all_features(
        &self,
        dossiers: &BTreeMap<MentionKey, MentionDossier>,
    ) -> Result<BTreeMap<MentionKey, DiscoveryFeatureVector>> {
        let v: Vec<(&MentionKey, &MentionDossier)> = dossiers.iter().collect();
        v.par_iter()
            .map(|(k, d)| self.features(d).map(|f| ((*k).clone(), f)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().collect())
    }
}

/// Trained discovery classifiers.
#[derive(Debug, Clone)]
pub struct DiscoveryModels {
    /// Positive class is out-of-KB.
    pub binary: TreeEnsembleModel,
    /// Positive class is not-an-entity; only used in three-way mode.
    pub not_entity: Option<TreeEnsembleModel>,
}

pub fn classify_mention(
    models: &DiscoveryModels,
    features: &DiscoveryFeatureVector,
    noise_flag: bool,
    mode: DiscoveryMode,
) -> Result<Verdict> {
    if noise_flag {
        return Ok(Verdict { class: VerdictClass::NotEntity, score: 1.0 });
    }
    if mode == DiscoveryMode::ThreeWay {
        let m = models
            .not_entity
            .as_ref()
            .ok_or_else(|| Error::Config("three-way mode needs a not-entity model".into()))?;
        let (pos, score) = m.predict(&features.select(m.schema())?)?;
        if pos {
            return Ok(Verdict { class: VerdictClass::NotEntity, score });
        }
    }
    let m = &models.binary;
    let (pos, score) = m.predict(&features.select(m.schema())?)?;
    Ok(Verdict {
        class: if pos { VerdictClass::OutOfKb } else { VerdictClass::InKb },
        score,
    })
}

pub fn classify_all(
    models: &DiscoveryModels,
    dossiers: &BTreeMap<MentionKey, MentionDossier>,
    features: &BTreeMap<MentionKey, DiscoveryFeatureVector>,
    mode: DiscoveryMode,
) -> Result<BTreeMap<MentionKey, Verdict>> {
    dossiers
        .iter()
        .map(|(k, d)| {
            let f = features
                .get(k)
                .ok_or_else(|| Error::Lookup { kind: "dossier features", id: k.to_string() })?;
            classify_mention(models, f, is_noise_mention(d.canonical_raw()), mode).map(|v| (k.clone(), v))
        })
        .collect()
}

/// Labelled examples over the full schema. `target` picks the positive class;
/// with `OutOfKb`, gold not-an-entity mentions are left out. Mentions caught
/// by the noise patterns never reach a classifier and are skipped.
pub fn training_set(
    features: &BTreeMap<MentionKey, DiscoveryFeatureVector>,
    gold: &BTreeMap<MentionKey, VerdictClass>,
    target: VerdictClass,
) -> Result<Dataset> {
    let mut data = Dataset::new(discovery_schema());
    for (k, g) in gold {
        let Some(f) = features.get(k) else { continue };
        if is_noise_mention(k.as_str()) {
            continue;
        }
        if target == VerdictClass::OutOfKb && *g == VerdictClass::NotEntity {
            continue;
        }
        data.push(Example {
            id: k.to_string(),
            features: f.values.clone(),
            label: *g == target,
            group: k.to_string(),
        })?;
    }
    Ok(data)
}

/// TSV with header `mention_key, verdict, score, tables, example_table_id`.
pub fn write_verdicts<W: Write>(
    mut w: W,
    dossiers: &BTreeMap<MentionKey, MentionDossier>,
    verdicts: &BTreeMap<MentionKey, Verdict>,
) -> std::io::Result<()> {
    writeln!(w, "mention_key\tverdict\tscore\ttables\texample_table_id")?;
    for (k, v) in verdicts {
        let d = &dossiers[k];
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            crate::kb::escape_field(k.as_str()),
            v.class,
            v.score,
            d.origins.len(),
            crate::kb::escape_field(d.origins.first().map_or("", |o| o.table_id.as_str()))
        )?;
    }
    Ok(())
}

pub fn read_verdicts(path: &std::path::Path) -> Result<BTreeMap<MentionKey, Verdict>> {
    let file = path.display().to_string();
    crate::kb::read_tsv(path, 5)?
        .into_iter()
        .filter(|(_, r)| r[0] != "mention_key")
        .map(|(line, r)| {
            let key = MentionKey::normalize(&r[0]).ok_or_else(|| Error::data(file.clone(), line, "empty mention"))?;
            let class: VerdictClass = r[1].parse().map_err(|m: String| Error::data(file.clone(), line, m))?;
            let score = r[2]
                .parse()
                .map_err(|_| Error::data(file.clone(), line, format!("bad score `{}`", r[2])))?;
            Ok((key, Verdict { class, score }))
        })
        .collect()
}
