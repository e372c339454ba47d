//! Entity linking for core-column mentions: candidate retrieval, table typing
//! by majority vote, per-candidate linkability classification, disambiguation
//! and corpus-wide exact-match propagation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{core_mentions, CoreMention, MentionKey, Table};
use crate::error::{Error, Result};
use crate::eval::Correspondence;
use crate::kb::{EntityId, KbSnapshot, TypeId};
use crate::learn::{Dataset, Example, TreeEnsembleModel};
use crate::retrieve::{Candidate, SearchIndex, DEFAULT_TOP_K};
use crate::sim::{identifier_words, soft_match_phi, LexicalSims, TermEmbeddings};

pub const LINK_FEATURES: [&str; 11] = [
    "rank",
    "type_exists",
    "type_matches_table",
    "has_disambig_tag",
    "edit",
    "letter",
    "jaccard",
    "substring",
    "phi_mention_label",
    "phi_typed",
    "phi_mention_description",
];

/// Ranked candidates for every core mention of one table.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatrix {
    pub mentions: Vec<CoreMention>,
    pub candidates: Vec<Vec<Candidate>>,
}

impl CandidateMatrix {
    pub fn build(table: &Table, index: &SearchIndex, k: usize) -> Self {
        let mentions = core_mentions(table);
        let candidates = mentions.iter().map(|m| index.search(&m.raw, k)).collect();
        CandidateMatrix { mentions, candidates }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableTypeVote {
    pub winning_types: BTreeSet<TypeId>,
    pub vote_counts: BTreeMap<TypeId, usize>,
}

impl TableTypeVote {
    pub fn is_empty(&self) -> bool {
        self.winning_types.is_empty()
    }

    /// True when any of `types` is among the winners.
    pub fn matches(&self, types: &[TypeId]) -> bool {
        types.iter().any(|t| self.winning_types.contains(t))
    }
}

/// Majority vote over the types of each mention's rank-1 candidate. With
/// `expanded`, ancestors vote too.
pub fn infer_table_type(cands: &CandidateMatrix, kb: &KbSnapshot, expanded: bool) -> Result<TableTypeVote> {
    let mut vote_counts: BTreeMap<TypeId, usize> = BTreeMap::new();
    for row in &cands.candidates {
        let Some(top) = row.first() else { continue };
        let types: Vec<TypeId> = if expanded {
            kb.expanded_types(&top.entity_id)?.to_vec()
        } else {
            lookup(kb, &top.entity_id)?.types.clone()
        };
        for t in types {
            *vote_counts.entry(t).or_insert(0) += 1;
        }
    }
    let best = vote_counts.values().copied().max().unwrap_or(0);
    let winning_types = vote_counts
        .iter()
        .filter(|(_, &c)| c == best && c > 0)
        .map(|(t, _)| t.clone())
        .collect();
    Ok(TableTypeVote { winning_types, vote_counts })
}

fn lookup<'a>(kb: &'a KbSnapshot, id: &EntityId) -> Result<&'a crate::kb::KbEntity> {
    kb.entity(id).ok_or_else(|| Error::Lookup { kind: "entity", id: id.0.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkFeatureVector {
    pub rank: f64,
    pub type_exists: f64,
    pub type_matches_table: f64,
    pub has_disambig_tag: f64,
    pub edit: f64,
    pub letter: f64,
    pub jaccard: f64,
    pub substring: f64,
    pub phi_mention_label: f64,
    pub phi_typed: f64,
    pub phi_mention_description: f64,
}

impl LinkFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.rank,
            self.type_exists,
            self.type_matches_table,
            self.has_disambig_tag,
            self.edit,
            self.letter,
            self.jaccard,
            self.substring,
            self.phi_mention_label,
            self.phi_typed,
            self.phi_mention_description,
        ]
    }
}

/// Trailing parenthesized suffix such as `Boston (film)`.
pub fn has_disambiguation_tag(label: &str) -> bool {
    let l = label.trim_end();
    l.ends_with(')') && l.find('(').is_some_and(|i| i > 0 && i + 2 < l.len())
}

fn type_words<'a>(types: impl IntoIterator<Item = &'a TypeId>) -> String {
    types
        .into_iter()
        .map(|t| identifier_words(t.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Candidate types compared against the table vote: direct types plus ancestors.
fn candidate_types<'a>(kb: &'a KbSnapshot, id: &EntityId) -> Result<&'a [TypeId]> {
    kb.expanded_types(id)
}

pub fn extract_link_features(
    mention: &str,
    cand: &Candidate,
    vote: &TableTypeVote,
    kb: &KbSnapshot,
    emb: &TermEmbeddings,
) -> Result<LinkFeatureVector> {
    let entity = lookup(kb, &cand.entity_id)?;
    let expanded = candidate_types(kb, &cand.entity_id)?;
    // lexical kernels against the closest surface form
    let lex = kb
        .surface_forms(&cand.entity_id)?
        .iter()
        .map(|f| LexicalSims::between(mention, f))
        .fold(None::<LexicalSims>, |best, s| match best {
            Some(b) if b.mean_similarity() >= s.mean_similarity() => Some(b),
            _ => Some(s),
        })
        .unwrap_or_else(|| LexicalSims::between(mention, &entity.label));
    let typed_query = format!("{mention} {}", type_words(&vote.winning_types));
    let typed_doc = format!("{} {}", entity.label, type_words(&entity.types));
    Ok(LinkFeatureVector {
        rank: cand.rank as f64,
        type_exists: f64::from(u8::from(!entity.types.is_empty())),
        type_matches_table: f64::from(u8::from(vote.matches(expanded))),
        has_disambig_tag: f64::from(u8::from(has_disambiguation_tag(&entity.label))),
        edit: lex.edit,
        letter: lex.letter,
        jaccard: lex.jaccard,
        substring: lex.substring,
        phi_mention_label: soft_match_phi(mention, &entity.label, emb),
        phi_typed: soft_match_phi(&typed_query, &typed_doc, emb),
        phi_mention_description: soft_match_phi(mention, &entity.description, emb),
    })
}

/// One `(positive, score)` decision per (mention, candidate) pair.
pub type Decisions = Vec<Vec<(bool, f64)>>;

pub fn classify_candidates(model: &TreeEnsembleModel, features: &[Vec<LinkFeatureVector>]) -> Result<Decisions> {
    model.check_schema(&LINK_FEATURES)?;
    features
        .iter()
        .map(|row| row.iter().map(|f| model.predict(&f.to_vec())).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Selection {
    /// Lowest retrieval rank among positives.
    #[default]
    Rank,
    /// Highest classifier score, rank as tie-break.
    Score,
}

impl std::str::FromStr for Selection {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rank" => Ok(Selection::Rank),
            "score" => Ok(Selection::Score),
            _ => Err(format!("unknown selection `{s}` (expected rank or score)")),
        }
    }
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Selection::Rank => "rank",
            Selection::Score => "score",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub top_k: usize,
    pub vote_expanded_types: bool,
    pub empty_vote_fallback: bool,
    pub selection: Selection,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            top_k: DEFAULT_TOP_K,
            vote_expanded_types: false,
            empty_vote_fallback: false,
            selection: Selection::Rank,
        }
    }
}

/// Per-mention link, indexed like `CandidateMatrix::mentions`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkAssignment {
    pub links: Vec<Option<(EntityId, f64)>>,
}

/// Keeps at most one positive candidate per mention: the best one (by rank or
/// score) whose types meet the table vote. An empty vote keeps nothing unless
/// `fallback` is set, in which case the best positive wins.
pub fn disambiguate(
    decisions: &Decisions,
    cands: &CandidateMatrix,
    vote: &TableTypeVote,
    kb: &KbSnapshot,
    selection: Selection,
    fallback: bool,
) -> Result<LinkAssignment> {
    let mut links = Vec::with_capacity(cands.candidates.len());
    for (row, dec) in cands.candidates.iter().zip(decisions) {
        let mut best: Option<(&Candidate, f64)> = None;
        for (c, &(pos, score)) in row.iter().zip(dec) {
            if !pos {
                continue;
            }
            let eligible = if vote.is_empty() {
                fallback
            } else {
                vote.matches(candidate_types(kb, &c.entity_id)?)
            };
            if !eligible {
                continue;
            }
            let better = match (best, selection) {
                (None, _) => true,
                (Some((b, _)), Selection::Rank) => c.rank < b.rank,
                (Some((b, bs)), Selection::Score) => score > bs || (score == bs && c.rank < b.rank),
            };
            if better {
                best = Some((c, score));
            }
        }
        links.push(best.map(|(c, s)| (c.entity_id.clone(), s)));
    }
    Ok(LinkAssignment { links })
}

/// A mention's final link state within one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionLink {
    pub row_index: usize,
    pub key: MentionKey,
    pub raw: String,
    pub entity: Option<EntityId>,
    pub confidence: f64,
    /// Set when the link was inherited from another table.
    pub propagated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLinks {
    pub table_id: String,
    pub vote: TableTypeVote,
    pub mentions: Vec<MentionLink>,
}

impl TableLinks {
    pub fn linked(&self) -> impl Iterator<Item = (&MentionLink, &EntityId)> {
        self.mentions.iter().filter_map(|m| m.entity.as_ref().map(|e| (m, e)))
    }

    pub fn num_linked(&self) -> usize {
        self.linked().count()
    }

    pub fn is_linkable(&self) -> bool {
        self.mentions.iter().any(|m| m.entity.is_some())
    }
}

/// Unlinked mentions inherit the entity of an identical key linked in another
/// table whose type vote intersects theirs. Only original (non-propagated)
/// links donate, and a key with several distinct donor entities stays
/// unlinked, so a second pass changes nothing.
pub fn propagate_exact_matches(tables: &[TableLinks]) -> Vec<TableLinks> {
    let mut donors: HashMap<&MentionKey, Vec<(usize, &EntityId)>> = HashMap::new();
    for (ti, t) in tables.iter().enumerate() {
        for m in &t.mentions {
            if let (Some(e), false) = (&m.entity, m.propagated) {
                donors.entry(&m.key).or_default().push((ti, e));
            }
        }
    }
    tables
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let mut out = t.clone();
            if t.vote.is_empty() {
                return out;
            }
            for m in out.mentions.iter_mut().filter(|m| m.entity.is_none()) {
                let Some(list) = donors.get(&m.key) else { continue };
                let found: BTreeSet<&EntityId> = list
                    .iter()
                    .filter(|(di, _)| {
                        *di != ti && !tables[*di].vote.winning_types.is_disjoint(&t.vote.winning_types)
                    })
                    .map(|(_, e)| *e)
                    .collect();
                if found.len() == 1 {
                    m.entity = found.into_iter().next().cloned();
                    m.confidence = 1.0;
                    m.propagated = true;
                }
            }
            out
        })
        .collect()
}

/// Immutable linking context shared across tables.
pub struct Linker<'a> {
    pub kb: &'a KbSnapshot,
    pub index: &'a SearchIndex,
    pub emb: &'a TermEmbeddings,
    pub config: LinkConfig,
}

/// Candidates, vote and per-candidate features of one table.
pub struct PreparedTable {
    pub cands: CandidateMatrix,
    pub vote: TableTypeVote,
    pub features: Vec<Vec<LinkFeatureVector>>,
}

impl<'a> Linker<'a> {
    pub fn prepare(&self, table: &Table) -> Result<PreparedTable> {
        let cands = CandidateMatrix::build(table, self.index, self.config.top_k);
        let vote = infer_table_type(&cands, self.kb, self.config.vote_expanded_types)?;
        let features = cands
            .mentions
            .iter()
            .zip(&cands.candidates)
            .map(|(m, row)| {
                row.iter()
                    .map(|c| extract_link_features(&m.raw, c, &vote, self.kb, self.emb))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedTable { cands, vote, features })
    }

    pub fn link_table(&self, table: &Table, model: &TreeEnsembleModel) -> Result<TableLinks> {
        let p = self.prepare(table)?;
        let decisions = classify_candidates(model, &p.features)?;
        let a = disambiguate(
            &decisions,
            &p.cands,
            &p.vote,
            self.kb,
            self.config.selection,
            self.config.empty_vote_fallback,
        )?;
        let mentions = p
            .cands
            .mentions
            .into_iter()
            .zip(a.links)
            .map(|(m, l)| MentionLink {
                row_index: m.row_index,
                key: m.key,
                raw: m.raw,
                confidence: l.as_ref().map_or(0.0, |(_, s)| *s),
                entity: l.map(|(e, _)| e),
                propagated: false,
            })
            .collect();
        Ok(TableLinks { table_id: table.id.clone(), vote: p.vote, mentions })
    }

    /// Links every table in parallel, then runs propagation.
    pub fn link_corpus(&self, tables: &[Table], model: &TreeEnsembleModel) -> Result<Vec<TableLinks>> {
        model.check_schema(&LINK_FEATURES)?;
        let linked = tables
            .par_iter()
            .map(|t| self.link_table(t, model))
            .collect::<Result<Vec<_>>>()?;
        Ok(propagate_exact_matches(&linked))
    }

    /// One example per (mention, candidate) of every table with gold links;
    /// the label says whether the candidate is the gold entity of its row.
    pub fn training_set(&self, tables: &[Table], gold: &BTreeSet<Correspondence>) -> Result<Dataset> {
        let mut by_table: HashMap<&str, HashMap<usize, &str>> = HashMap::new();
        for g in gold {
            by_table.entry(&g.table_id).or_default().insert(g.position, &g.value);
        }
        let prepared = tables
            .par_iter()
            .filter(|t| by_table.contains_key(t.id.as_str()))
            .map(|t| self.prepare(t).map(|p| (t, p)))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Dataset::new(LINK_FEATURES.iter().map(|s| s.to_string()).collect());
        for (t, p) in prepared {
            let rows = &by_table[t.id.as_str()];
            for ((m, row), feats) in p.cands.mentions.iter().zip(&p.cands.candidates).zip(&p.features) {
                let target = rows.get(&m.row_index).copied();
                for (c, f) in row.iter().zip(feats) {
                    data.push(Example {
                        id: format!("{}:{}:{}", t.id, m.row_index, c.rank),
                        features: f.to_vec(),
                        label: target == Some(c.entity_id.as_str()),
                        group: t.id.clone(),
                    })?;
                }
            }
        }
        Ok(data)
    }
}

/// Predicted links as evaluation correspondences.
pub fn link_correspondences(tables: &[TableLinks]) -> BTreeSet<Correspondence> {
    tables
        .iter()
        .flat_map(|t| {
            t.linked()
                .map(move |(m, e)| Correspondence::new(t.table_id.clone(), m.row_index, e.as_str()))
        })
        .collect()
}

fn field(s: &str) -> String {
    crate::kb::escape_field(s)
}

/// TSV with header `table_id, row_index, mention, entity_id, confidence`;
/// tables without links contribute no lines.
pub fn write_links<W: Write>(mut w: W, tables: &[TableLinks]) -> std::io::Result<()> {
    writeln!(w, "table_id\trow_index\tmention\tentity_id\tconfidence")?;
    for t in tables {
        for (m, e) in t.linked() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                field(&t.table_id),
                m.row_index,
                field(&m.raw),
                field(e.as_str()),
                m.confidence
            )?;
        }
    }
    Ok(())
}

/// One parsed line of a links file.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRecord {
    pub table_id: String,
    pub row_index: usize,
    pub mention: String,
    pub entity_id: EntityId,
    pub confidence: f64,
}

pub fn read_links(path: &std::path::Path) -> Result<Vec<LinkRecord>> {
    let rows = crate::kb::read_tsv(path, 5)?;
    let file = path.display().to_string();
    rows.into_iter()
        .filter(|(_, r)| r[0] != "table_id")
        .map(|(line, r)| {
            let row_index = r[1]
                .parse()
                .map_err(|_| Error::data(file.clone(), line, format!("bad row index `{}`", r[1])))?;
            let confidence = r[4]
                .parse()
                .map_err(|_| Error::data(file.clone(), line, format!("bad confidence `{}`", r[4])))?;
            Ok(LinkRecord {
                table_id: r[0].clone(),
                row_index,
                mention: r[2].clone(),
                entity_id: EntityId::new(r[3].clone()),
                confidence,
            })
        })
        .collect()
}

/// Rebuilds per-table link state from a links file. Table votes are
/// recomputed from the linked entities' direct types.
pub fn restore_table_links(tables: &[Table], records: &[LinkRecord], kb: &KbSnapshot) -> Result<Vec<TableLinks>> {
    let mut by: HashMap<(&str, usize), &LinkRecord> = HashMap::new();
    for r in records {
        by.insert((r.table_id.as_str(), r.row_index), r);
    }
    tables
        .iter()
        .map(|t| {
            let mentions: Vec<MentionLink> = core_mentions(t)
                .into_iter()
                .map(|m| {
                    let r = by.get(&(t.id.as_str(), m.row_index));
                    MentionLink {
                        row_index: m.row_index,
                        key: m.key,
                        raw: m.raw,
                        entity: r.map(|r| r.entity_id.clone()),
                        confidence: r.map_or(0.0, |r| r.confidence),
                        propagated: false,
                    }
                })
                .collect();
            let mut vote_counts = BTreeMap::new();
            for m in &mentions {
                if let Some(e) = &m.entity {
                    for ty in &lookup(kb, e)?.types {
                        *vote_counts.entry(ty.clone()).or_insert(0) += 1;
                    }
                }
            }
            let best = vote_counts.values().copied().max().unwrap_or(0);
            let winning_types = vote_counts.iter().filter(|(_, &c)| c == best).map(|(t, _)| t.clone()).collect();
            Ok(TableLinks { table_id: t.id.clone(), vote: TableTypeVote { winning_types, vote_counts }, mentions })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KbBuilder;

    fn kb() -> KbSnapshot {
        let mut b = KbBuilder::new();
        b.add_type("Place", None).add_type("Town", Some("Place")).add_type("Film", None);
        b.add_entity("E1", "Brevik", 10.0, "town in norway").unwrap();
        b.add_entity_type("E1", "Town").unwrap();
        b.add_entity("E2", "Brevik (film)", 5.0, "a film").unwrap();
        b.add_entity_type("E2", "Film").unwrap();
        b.add_entity("E3", "Larvik", 8.0, "town").unwrap();
        b.add_entity_type("E3", "Town").unwrap();
        b.add_entity("E4", "Untyped", 1.0, "").unwrap();
        b.build().unwrap()
    }

    fn cand(e: &str, rank: usize, score: f64) -> Candidate {
        Candidate { entity_id: EntityId::new(e), rank, retrieval_score: score }
    }

    fn matrix(rows: Vec<Vec<Candidate>>) -> CandidateMatrix {
        let mentions = (0..rows.len())
            .map(|i| CoreMention {
                row_index: i,
                key: MentionKey::normalize(&format!("m{i}")).unwrap(),
                raw: format!("m{i}"),
            })
            .collect();
        CandidateMatrix { mentions, candidates: rows }
    }

    fn vote(types: &[&str]) -> TableTypeVote {
        TableTypeVote {
            winning_types: types.iter().map(|t| TypeId::new(*t)).collect(),
            vote_counts: BTreeMap::new(),
        }
    }

    #[test]
    fn majority_and_ties() {
        let kb = kb();
        let m = matrix(vec![vec![cand("E1", 1, 1.0)], vec![cand("E3", 1, 1.0)], vec![cand("E2", 1, 1.0)]]);
        let v = infer_table_type(&m, &kb, false).unwrap();
        assert_eq!(v.winning_types, [TypeId::new("Town")].into());
        assert_eq!(v.vote_counts[&TypeId::new("Film")], 1);

        let m = matrix(vec![vec![cand("E1", 1, 1.0)], vec![cand("E2", 1, 1.0)]]);
        let v = infer_table_type(&m, &kb, false).unwrap();
        assert_eq!(v.winning_types, [TypeId::new("Film"), TypeId::new("Town")].into());

        let m = matrix(vec![vec![cand("E4", 1, 1.0)], vec![]]);
        assert!(infer_table_type(&m, &kb, false).unwrap().is_empty());
    }

    #[test]
    fn expanded_vote_counts_ancestors() {
        let kb = kb();
        let m = matrix(vec![vec![cand("E1", 1, 1.0)]]);
        let v = infer_table_type(&m, &kb, true).unwrap();
        assert_eq!(v.vote_counts[&TypeId::new("Place")], 1);
    }

    #[test]
    fn self_match_features() {
        let kb = kb();
        let emb = TermEmbeddings::new(2);
        let f = extract_link_features("Brevik", &cand("E1", 3, 1.0), &vote(&["Town"]), &kb, &emb).unwrap();
        assert_eq!((f.edit, f.jaccard, f.substring, f.type_matches_table), (0.0, 1.0, 1.0, 1.0));
        assert_eq!(f.rank, 3.0);
        assert_eq!(f.has_disambig_tag, 0.0);
        assert_eq!(f.type_exists, 1.0);
        let f = extract_link_features("Brevik", &cand("E2", 1, 1.0), &vote(&["Town"]), &kb, &emb).unwrap();
        assert_eq!(f.has_disambig_tag, 1.0);
        assert_eq!(f.type_matches_table, 0.0);
        let f = extract_link_features("x", &cand("E4", 1, 1.0), &vote(&["Town"]), &kb, &emb).unwrap();
        assert_eq!(f.type_exists, 0.0);
        assert_eq!(f.to_vec().len(), LINK_FEATURES.len());
    }

    #[test]
    fn disambig_tag_detection() {
        assert!(has_disambiguation_tag("Boston (film)"));
        assert!(!has_disambiguation_tag("Boston"));
        assert!(!has_disambiguation_tag("(film)"));
        assert!(!has_disambiguation_tag("Boston ()"));
    }

    #[test]
    fn disambiguation_rules() {
        let kb = kb();
        // positives at ranks 2 and 5, both Town
        let m = matrix(vec![vec![cand("E2", 1, 9.0), cand("E1", 2, 8.0), cand("E4", 3, 7.0), cand("E2", 4, 6.0), cand("E3", 5, 5.0)]]);
        let d = vec![vec![(false, 0.1), (true, 0.6), (false, 0.0), (false, 0.0), (true, 0.9)]];
        let a = disambiguate(&d, &m, &vote(&["Town"]), &kb, Selection::Rank, false).unwrap();
        assert_eq!(a.links[0], Some((EntityId::new("E1"), 0.6)));
        let a = disambiguate(&d, &m, &vote(&["Town"]), &kb, Selection::Score, false).unwrap();
        assert_eq!(a.links[0], Some((EntityId::new("E3"), 0.9)));
        // all positives typed Film against a Town table
        let d = vec![vec![(true, 0.9), (false, 0.6), (false, 0.0), (true, 0.8), (false, 0.9)]];
        let a = disambiguate(&d, &m, &vote(&["Town"]), &kb, Selection::Rank, false).unwrap();
        assert_eq!(a.links[0], None);
    }

    #[test]
    fn empty_vote_fallback() {
        let kb = kb();
        let row: Vec<Candidate> = (1..=7).map(|r| cand(if r == 3 { "E1" } else { "E3" }, r, 10.0 - r as f64)).collect();
        let m = matrix(vec![row]);
        let mut d = vec![vec![(false, 0.0); 7]];
        d[0][2] = (true, 0.7);
        d[0][6] = (true, 0.9);
        let empty = TableTypeVote::default();
        assert_eq!(disambiguate(&d, &m, &empty, &kb, Selection::Rank, false).unwrap().links[0], None);
        let a = disambiguate(&d, &m, &empty, &kb, Selection::Rank, true).unwrap();
        assert_eq!(a.links[0], Some((EntityId::new("E1"), 0.7)));
    }

    fn tl(id: &str, types: &[&str], ms: &[(&str, Option<&str>)]) -> TableLinks {
        TableLinks {
            table_id: id.into(),
            vote: vote(types),
            mentions: ms
                .iter()
                .enumerate()
                .map(|(i, (k, e))| MentionLink {
                    row_index: i,
                    key: MentionKey::normalize(k).unwrap(),
                    raw: k.to_string(),
                    entity: e.map(EntityId::new),
                    confidence: 0.8,
                    propagated: false,
                })
                .collect(),
        }
    }

    #[test]
    fn propagation_rules() {
        let tables = vec![
            tl("a", &["SoccerClub"], &[("FC Edmonton", Some("E"))]),
            tl("b", &["SoccerClub"], &[("fc edmonton", None)]),
            tl("c", &["Town"], &[("fc edmonton", None)]),
        ];
        let out = propagate_exact_matches(&tables);
        assert_eq!(out[1].mentions[0].entity, Some(EntityId::new("E")));
        assert!(out[1].mentions[0].propagated);
        assert_eq!(out[2].mentions[0].entity, None);
        assert_eq!(propagate_exact_matches(&out), out);

        let conflict = vec![
            tl("a", &["SoccerClub"], &[("x", Some("E"))]),
            tl("b", &["SoccerClub"], &[("x", Some("F"))]),
            tl("c", &["SoccerClub"], &[("x", None)]),
        ];
        assert_eq!(propagate_exact_matches(&conflict)[2].mentions[0].entity, None);
    }

    #[test]
    fn links_file_round_trip() {
        let kb = kb();
        let table = Table {
            id: "t1".into(),
            headings: vec!["name".into()],
            core_column_index: 0,
            header_row_index: 0,
            rows: vec![vec!["Brevik".into()], vec!["Nowhere".into()]],
            context: Default::default(),
        };
        let mut links = tl("t1", &["Town"], &[("Brevik", Some("E1")), ("Nowhere", None)]);
        links.mentions[0].confidence = 0.75;
        links.mentions[1].confidence = 0.0;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("links.tsv");
        let mut buf = Vec::new();
        write_links(&mut buf, std::slice::from_ref(&links)).unwrap();
        std::fs::write(&p, &buf).unwrap();
        let recs = read_links(&p).unwrap();
        assert_eq!(recs.len(), 1);
        let restored = restore_table_links(std::slice::from_ref(&table), &recs, &kb).unwrap();
        assert_eq!(restored[0].mentions, links.mentions);
        assert_eq!(restored[0].vote.winning_types, links.vote.winning_types);
    }
}
