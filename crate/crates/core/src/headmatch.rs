//! Heading-to-property matching: cell value typing, pairwise value
//! similarity aggregates over the linked entities' triples, and a classifier
//! over label and value features.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, parse_date_year, Table};
use crate::error::{Error, Result};
use crate::eval::Correspondence;
use crate::kb::{EntityId, KbSnapshot, PropertyId};
use crate::learn::{Dataset, Example, TreeEnsembleModel};
use crate::link::TableLinks;
use crate::sim::{edit_distance_norm, identifier_words, LexicalSims};

pub const HEADING_FEATURES: [&str; 10] = [
    "is_core_column",
    "heading_length",
    "property_length",
    "edit",
    "letter",
    "jaccard",
    "substring",
    "pvs_max",
    "pvs_sum",
    "pvs_avg",
];

const EPSILON: f64 = 1e-9;

/// Declaration order is the majority-vote tie-break priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Time,
    Numerical,
    String,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedValue {
    pub raw: String,
    pub kinds: BTreeSet<ValueKind>,
    pub year: Option<i32>,
    pub number: Option<f64>,
}

impl TypedValue {
    pub fn has(&self, k: ValueKind) -> bool {
        self.kinds.contains(&k)
    }
}

static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{4}$").unwrap());
static LEADING_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").unwrap());
static UNIT_SUFFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:%|\s+\S+)?$").unwrap());

const NULL_TOKENS: [&str; 8] = ["n/a", "na", "-", "null", "none", "?", "tbd", "unknown"];
const CURRENCY: [char; 5] = ['$', '€', '£', '¥', '₹'];

fn parse_number(v: &str) -> Option<f64> {
    let s: String = v.trim().chars().filter(|c| *c != ',' && !CURRENCY.contains(c)).collect();
    let s = s.trim();
    let m = LEADING_NUMBER.find(s)?;
    if !UNIT_SUFFIX.is_match(&s[m.end()..]) {
        return None;
    }
    m.as_str().parse::<f64>().ok().filter(|x| x.is_finite())
}

pub fn detect_value_kind(v: &str) -> TypedValue {
    let raw = v.trim();
    let mut kinds = BTreeSet::new();
    let mut year = None;
    let mut number = None;
    if YEAR.is_match(raw) {
        year = raw.parse().ok();
    } else if let Some(y) = parse_date_year(raw) {
        year = Some(y);
    }
    if year.is_some() {
        kinds.insert(ValueKind::Time);
    }
    // full dates are time only; a bare year is also a number
    if year.is_none() || YEAR.is_match(raw) {
        number = parse_number(raw);
        if number.is_some() {
            kinds.insert(ValueKind::Numerical);
        }
    }
    let folded = normalize_text(raw);
    if year.is_none() && raw.chars().any(char::is_alphabetic) && !NULL_TOKENS.contains(&folded.as_str()) {
        kinds.insert(ValueKind::String);
    }
    if kinds.is_empty() {
        kinds.insert(ValueKind::Other);
    }
    TypedValue { raw: raw.to_string(), kinds, year, number }
}

fn kind_counts(values: &[TypedValue]) -> BTreeMap<ValueKind, usize> {
    let mut counts: BTreeMap<ValueKind, usize> = BTreeMap::new();
    for v in values {
        for k in &v.kinds {
            *counts.entry(*k).or_insert(0) += 1;
        }
    }
    counts
}

/// Most frequent kind over all kind sets; ties go to the earlier declared kind.
pub fn column_data_type(values: &[TypedValue]) -> ValueKind {
    majority_kinds(values).into_iter().next().unwrap_or(ValueKind::Other)
}

/// Every kind reaching the top count.
pub fn majority_kinds(values: &[TypedValue]) -> BTreeSet<ValueKind> {
    let counts = kind_counts(values);
    let top = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().filter(|(_, c)| *c == top).map(|(k, _)| k).collect()
}

pub fn value_similarity(a: &TypedValue, b: &TypedValue, kind: ValueKind) -> f64 {
    if !a.has(kind) || !b.has(kind) {
        return 0.0;
    }
    match kind {
        ValueKind::Time => match (a.year, b.year) {
            (Some(x), Some(y)) => 1.0 / (1.0 + f64::from((x - y).abs())),
            _ => 0.0,
        },
        ValueKind::Numerical => match (a.number, b.number) {
            (Some(x), Some(y)) => (1.0 - (x - y).abs() / x.abs().max(y.abs()).max(EPSILON)).clamp(0.0, 1.0),
            _ => 0.0,
        },
        ValueKind::String | ValueKind::Other => 1.0 - edit_distance_norm(&normalize_text(&a.raw), &normalize_text(&b.raw)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pvs {
    pub max: f64,
    pub sum: f64,
    pub avg: f64,
}

/// Aggregates of `value_similarity` over the cross product of the values that
/// carry `kind`.
pub fn pvs(col_values: &[TypedValue], kb_values: &[TypedValue], kind: ValueKind) -> Pvs {
    let a: Vec<&TypedValue> = col_values.iter().filter(|v| v.has(kind)).collect();
    let b: Vec<&TypedValue> = kb_values.iter().filter(|v| v.has(kind)).collect();
    if a.is_empty() || b.is_empty() {
        return Pvs::default();
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for x in &a {
        for y in &b {
            let s = value_similarity(x, y, kind);
            max = max.max(s);
            sum += s;
        }
    }
    Pvs { max, sum, avg: sum / (a.len() * b.len()) as f64 }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadingFeatureVector {
    pub is_core_column: f64,
    pub heading_length: f64,
    pub property_length: f64,
    pub edit: f64,
    pub letter: f64,
    pub jaccard: f64,
    pub substring: f64,
    pub pvs: Pvs,
}

impl HeadingFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.is_core_column,
            self.heading_length,
            self.property_length,
            self.edit,
            self.letter,
            self.jaccard,
            self.substring,
            self.pvs.max,
            self.pvs.sum,
            self.pvs.avg,
        ]
    }
}

/// Readable label of a property id.
pub fn property_label(p: &PropertyId) -> String {
    identifier_words(p.as_str())
}

pub fn heading_features(heading: &str, is_core: bool, property: &PropertyId, pvs: Pvs) -> HeadingFeatureVector {
    let h = normalize_text(heading);
    let p = property_label(property);
    let lex = LexicalSims::between(&h, &p);
    HeadingFeatureVector {
        is_core_column: f64::from(u8::from(is_core)),
        heading_length: h.chars().count() as f64,
        property_length: p.chars().count() as f64,
        edit: lex.edit,
        letter: lex.letter,
        jaccard: lex.jaccard,
        substring: lex.substring,
        pvs,
    }
}

/// A kind-compatible (column, property) pair with its features.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadingCandidate {
    pub column_index: usize,
    pub property: PropertyId,
    pub features: HeadingFeatureVector,
}

/// All candidate pairs of one table: for every column, the properties of the
/// linked entities whose objects have the column kind as a (possibly tied)
/// majority kind.
pub fn heading_candidates(table: &Table, links: &TableLinks, kb: &KbSnapshot) -> Result<Vec<HeadingCandidate>> {
    let linked: Vec<(usize, &EntityId)> = links.linked().map(|(m, e)| (m.row_index, e)).collect();
    if linked.is_empty() {
        return Ok(Vec::new());
    }
    let mut distinct: Vec<&EntityId> = linked.iter().map(|(_, e)| *e).collect();
    distinct.sort();
    distinct.dedup();
    let props: Vec<(PropertyId, Vec<TypedValue>, BTreeSet<ValueKind>)> = kb
        .properties_of(distinct)?
        .into_iter()
        .map(|(p, objs)| {
            let vals: Vec<TypedValue> = objs.iter().map(|(_, o)| detect_value_kind(o)).collect();
            let kinds = majority_kinds(&vals);
            (p, vals, kinds)
        })
        .collect();
    let mut out = Vec::new();
    for (c, heading) in table.headings.iter().enumerate() {
        let col: Vec<TypedValue> = linked
            .iter()
            .map(|(r, _)| table.cell(*r, c))
            .filter(|v| !v.trim().is_empty())
            .map(detect_value_kind)
            .collect();
        if col.is_empty() {
            continue;
        }
        let kind = column_data_type(&col);
        for (p, vals, pkinds) in &props {
            if !pkinds.contains(&kind) {
                continue;
            }
            let agg = pvs(&col, vals, kind);
            out.push(HeadingCandidate {
                column_index: c,
                property: p.clone(),
                features: heading_features(heading, c == table.core_column_index, p, agg),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingMatch {
    pub table_id: String,
    /// One slot per column.
    pub columns: Vec<Option<(PropertyId, f64)>>,
}

impl HeadingMatch {
    pub fn num_matched(&self) -> usize {
        self.columns.iter().filter(|c| c.is_some()).count()
    }

    /// Properties assigned to more than one column of this table.
    pub fn duplicates(&self) -> Vec<PropertyId> {
        let mut seen: BTreeMap<&PropertyId, usize> = BTreeMap::new();
        for (p, _) in self.columns.iter().flatten() {
            *seen.entry(p).or_insert(0) += 1;
        }
        seen.into_iter().filter(|(_, n)| *n > 1).map(|(p, _)| p.clone()).collect()
    }
}

/// Per column, the classifier-positive candidate with the highest average
/// PVS; ties fall to label Jaccard, then property id.
pub fn match_headings(table: &Table, links: &TableLinks, kb: &KbSnapshot, model: &TreeEnsembleModel) -> Result<HeadingMatch> {
    model.check_schema(&HEADING_FEATURES)?;
    let mut best: Vec<Option<(HeadingCandidate, f64)>> = vec![None; table.num_columns()];
    for cand in heading_candidates(table, links, kb)? {
        let (pos, score) = model.predict(&cand.features.to_vec())?;
        if !pos {
            continue;
        }
        let slot = &mut best[cand.column_index];
        let better = match slot {
            None => true,
            Some((b, _)) => {
                let (x, y) = (&cand.features, &b.features);
                x.pvs.avg
                    .total_cmp(&y.pvs.avg)
                    .then(x.jaccard.total_cmp(&y.jaccard))
                    .then(b.property.cmp(&cand.property))
                    .is_gt()
            }
        };
        if better {
            *slot = Some((cand, score));
        }
    }
    Ok(HeadingMatch {
        table_id: table.id.clone(),
        columns: best.into_iter().map(|b| b.map(|(c, s)| (c.property, s))).collect(),
    })
}

pub fn match_corpus(
    tables: &[Table],
    links: &[TableLinks],
    kb: &KbSnapshot,
    model: &TreeEnsembleModel,
) -> Result<Vec<HeadingMatch>> {
    let by_id = links_by_table(links);
    tables
        .par_iter()
        .filter_map(|t| by_id.get(t.id.as_str()).filter(|l| l.is_linkable()).map(|l| (t, *l)))
        .map(|(t, l)| match_headings(t, l, kb, model))
        .collect()
}

pub(crate) fn links_by_table(links: &[TableLinks]) -> HashMap<&str, &TableLinks> {
    links.iter().map(|l| (l.table_id.as_str(), l)).collect()
}

/// Candidate pairs of the gold tables labelled by the gold property.
pub fn training_set(
    tables: &[Table],
    links: &[TableLinks],
    kb: &KbSnapshot,
    gold: &BTreeSet<Correspondence>,
) -> Result<Dataset> {
    let mut gold_by: HashMap<(&str, usize), &str> = HashMap::new();
    let mut gold_tables: BTreeSet<&str> = BTreeSet::new();
    for g in gold {
        gold_by.insert((&g.table_id, g.position), &g.value);
        gold_tables.insert(&g.table_id);
    }
    let by_id = links_by_table(links);
    let per_table = tables
        .par_iter()
        .filter(|t| gold_tables.contains(t.id.as_str()))
        .filter_map(|t| by_id.get(t.id.as_str()).map(|l| (t, *l)))
        .map(|(t, l)| heading_candidates(t, l, kb).map(|c| (t, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Dataset::new(HEADING_FEATURES.iter().map(|s| s.to_string()).collect());
    for (t, cands) in per_table {
        for c in cands {
            let target = gold_by.get(&(t.id.as_str(), c.column_index)).copied();
            data.push(Example {
                id: format!("{}:{}:{}", t.id, c.column_index, c.property),
                features: c.features.to_vec(),
                label: target == Some(c.property.as_str()),
                group: t.id.clone(),
            })?;
        }
    }
    Ok(data)
}

pub fn heading_correspondences(matches: &[HeadingMatch]) -> BTreeSet<Correspondence> {
    matches
        .iter()
        .flat_map(|m| {
            m.columns
                .iter()
                .enumerate()
                .filter_map(move |(c, p)| p.as_ref().map(|(p, _)| Correspondence::new(m.table_id.clone(), c, p.as_str())))
        })
        .collect()
}

/// TSV with header `table_id, column_index, heading, property_id, confidence`.
pub fn write_headings<W: Write>(mut w: W, tables: &[Table], matches: &[HeadingMatch]) -> std::io::Result<()> {
    let by_id: HashMap<&str, &Table> = tables.iter().map(|t| (t.id.as_str(), t)).collect();
    writeln!(w, "table_id\tcolumn_index\theading\tproperty_id\tconfidence")?;
    for m in matches {
        for (c, slot) in m.columns.iter().enumerate() {
            let Some((p, conf)) = slot else { continue };
            let heading = by_id.get(m.table_id.as_str()).map_or("", |t| t.headings[c].as_str());
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                crate::kb::escape_field(&m.table_id),
                c,
                crate::kb::escape_field(heading),
                crate::kb::escape_field(p.as_str()),
                conf
            )?;
        }
    }
    Ok(())
}

pub fn read_headings(path: &std::path::Path) -> Result<BTreeSet<Correspondence>> {
    let file = path.display().to_string();
    crate::kb::read_tsv(path, 5)?
        .into_iter()
        .filter(|(_, r)| r[0] != "table_id")
        .map(|(line, r)| {
            let c = r[1]
                .parse()
                .map_err(|_| Error::data(file.clone(), line, format!("bad column index `{}`", r[1])))?;
            Ok(Correspondence::new(r[0].clone(), c, r[3].clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MentionKey;
    use crate::kb::KbBuilder;
    use crate::learn::{train, ForestConfig};
    use crate::link::{MentionLink, TableTypeVote};

    fn kinds(v: &str) -> Vec<ValueKind> {
        detect_value_kind(v).kinds.into_iter().collect()
    }

    #[test]
    fn value_kinds() {
        use ValueKind::*;
        assert_eq!(kinds("1836"), vec![Time, Numerical]);
        let v = detect_value_kind("12.5 km");
        assert_eq!(v.kinds.into_iter().collect::<Vec<_>>(), vec![Numerical, String]);
        assert_eq!(v.number, Some(12.5));
        assert_eq!(kinds("N/A"), vec![Other]);
        assert_eq!(kinds("2015-03-04"), vec![Time]);
        assert_eq!(detect_value_kind("2015-03-04").year, Some(2015));
        assert_eq!(kinds("Oslo"), vec![String]);
        assert_eq!(detect_value_kind("$1,200").number, Some(1200.0));
        assert_eq!(detect_value_kind("45%").number, Some(45.0));
        assert_eq!(kinds("Route 66"), vec![String]);
        assert_eq!(kinds("---"), vec![Other]);
    }

    #[test]
    fn number_parser_oracle() {
        let cases: [(&str, Option<f64>); 8] = [
            ("12.5 km", Some(12.5)),
            ("-3", Some(-3.0)),
            ("1,234,567", Some(1234567.0)),
            ("€ 40", Some(40.0)),
            (".5", Some(0.5)),
            ("3 4 5", None),
            ("abc", None),
            ("12kg", None),
        ];
        for (s, want) in cases {
            assert_eq!(detect_value_kind(s).number, want, "{s}");
        }
    }

    #[test]
    fn column_types() {
        use ValueKind::*;
        let col = |vs: &[&str]| column_data_type(&vs.iter().map(|v| detect_value_kind(v)).collect::<Vec<_>>());
        assert_eq!(col(&["3", "4", "x"]), Numerical);
        assert_eq!(col(&["1990", "2001-05-01"]), Time);
        assert_eq!(col(&["n/a", "-"]), Other);
        // a tie between string and numerical goes to numerical
        assert_eq!(col(&["4", "x"]), Numerical);
    }

    #[test]
    fn similarities() {
        let v = detect_value_kind;
        assert_eq!(value_similarity(&v("1990"), &v("1990"), ValueKind::Time), 1.0);
        assert_eq!(value_similarity(&v("1990"), &v("1993"), ValueKind::Time), 0.25);
        assert_eq!(value_similarity(&v("10"), &v("5"), ValueKind::Numerical), 0.5);
        assert_eq!(value_similarity(&v("10"), &v("-10"), ValueKind::Numerical), 0.0);
        assert_eq!(value_similarity(&v("0"), &v("0"), ValueKind::Numerical), 1.0);
        assert_eq!(value_similarity(&v("Oslo"), &v("oslo"), ValueKind::String), 1.0);
        assert_eq!(value_similarity(&v("Oslo"), &v("10"), ValueKind::String), 0.0);
    }

    #[test]
    fn pvs_aggregates() {
        let v = detect_value_kind;
        assert_eq!(pvs(&[v("7")], &[v("7")], ValueKind::Numerical), Pvs { max: 1.0, sum: 1.0, avg: 1.0 });
        // sims {1, 0.5, 0, 0.5}
        let p = pvs(&[v("ab"), v("cd")], &[v("ab"), v("cb")], ValueKind::String);
        assert_eq!(p, Pvs { max: 1.0, sum: 2.0, avg: 0.5 });
        assert_eq!(pvs(&[v("abc")], &[v("abc")], ValueKind::Time), Pvs::default());
        assert_eq!(pvs(&[], &[v("1")], ValueKind::Numerical), Pvs::default());
    }

    fn fixture() -> (KbSnapshot, Table, TableLinks) {
        let mut b = KbBuilder::new();
        b.add_type("Mountain", None);
        let peaks = [("E1", "Alpha", "3100"), ("E2", "Beta", "2950"), ("E3", "Gamma", "4010"), ("E4", "Delta", "1200")];
        for (id, label, elev) in peaks {
            b.add_entity(id, label, 1.0, "").unwrap();
            b.add_entity_type(id, "Mountain").unwrap();
            b.add_triple(id, "http://ex.org/ontology/elevation", elev).unwrap();
            b.add_triple(id, "http://ex.org/ontology/country", "Norway").unwrap();
            b.add_triple(id, "http://ex.org/ontology/firstAscent", "1901").unwrap();
        }
        let kb = b.build().unwrap();
        let table = Table {
            id: "t".into(),
            headings: vec!["peak".into(), "elevation".into(), "notes".into()],
            core_column_index: 0,
            header_row_index: 0,
            rows: peaks.iter().map(|(_, l, e)| vec![l.to_string(), format!("{e} m"), "nice".to_string()]).collect(),
            context: Default::default(),
        };
        let links = TableLinks {
            table_id: "t".into(),
            vote: TableTypeVote::default(),
            mentions: peaks
                .iter()
                .enumerate()
                .map(|(i, (id, l, _))| MentionLink {
                    row_index: i,
                    key: MentionKey::normalize(l).unwrap(),
                    raw: l.to_string(),
                    entity: Some(EntityId::new(*id)),
                    confidence: 1.0,
                    propagated: false,
                })
                .collect(),
        };
        (kb, table, links)
    }

    #[test]
    fn kind_filter_and_matching() {
        let (kb, table, links) = fixture();
        let cands = heading_candidates(&table, &links, &kb).unwrap();
        let elev: Vec<_> = cands.iter().filter(|c| c.column_index == 1).map(|c| c.property.as_str()).collect();
        // bare four-digit objects are both time and numerical; country is string-typed
        assert_eq!(elev, vec!["http://ex.org/ontology/elevation", "http://ex.org/ontology/firstAscent"]);
        let best = &cands.iter().find(|c| c.column_index == 1).unwrap();
        assert_eq!(best.features.pvs.max, 1.0);
        assert_eq!(best.features.jaccard, 1.0);

        let mut data = Dataset::new(HEADING_FEATURES.iter().map(|s| s.to_string()).collect());
        for (i, c) in cands.iter().enumerate() {
            let label = c.column_index == 1 && c.property.as_str().ends_with("elevation");
            for rep in 0..3 {
                data.push(Example {
                    id: format!("{i}-{rep}"),
                    features: c.features.to_vec(),
                    label,
                    group: i.to_string(),
                })
                .unwrap();
            }
        }
        let model = train(&data, &ForestConfig::default()).unwrap();
        let m = match_headings(&table, &links, &kb, &model).unwrap();
        assert_eq!(m.columns[1].as_ref().map(|(p, _)| p.as_str()), Some("http://ex.org/ontology/elevation"));
        assert_eq!(m.columns[2], None);
        assert!(m.duplicates().is_empty());
    }

    #[test]
    fn no_links_or_triples_means_no_candidates() {
        let (kb, table, mut links) = fixture();
        for m in &mut links.mentions {
            m.entity = None;
        }
        assert!(heading_candidates(&table, &links, &kb).unwrap().is_empty());
        let mut b = KbBuilder::new();
        b.add_entity("E1", "Alpha", 1.0, "").unwrap();
        let bare = b.build().unwrap();
        let (_, table, mut links) = fixture();
        links.mentions.truncate(1);
        assert!(heading_candidates(&table, &links, &bare).unwrap().is_empty());
    }

    #[test]
    fn headings_file_round_trip() {
        let (_, table, _) = fixture();
        let m = HeadingMatch {
            table_id: "t".into(),
            columns: vec![None, Some((PropertyId::new("p/elevation"), 0.9)), None],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        let mut buf = Vec::new();
        write_headings(&mut buf, std::slice::from_ref(&table), std::slice::from_ref(&m)).unwrap();
        std::fs::write(&p, buf).unwrap();
        assert_eq!(read_headings(&p).unwrap(), heading_correspondences(&[m]));
    }
}
