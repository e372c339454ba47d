//! Metrics and gold-standard handling: per-table macro precision/recall/F1
//! for linking and heading matching, accuracy for discovery and resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::MentionKey;
use crate::discover::VerdictClass;
use crate::error::{Error, Result};

/// One (table, position, value) correspondence: a row-to-entity link or a
/// column-to-property match.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub table_id: String,
    pub position: usize,
    pub value: String,
}

impl Correspondence {
    pub fn new(table_id: impl Into<String>, position: usize, value: impl Into<String>) -> Self {
        Correspondence {
            table_id: table_id.into(),
            position,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Prf {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroReport {
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    pub micro: Prf,
    pub tables: usize,
    pub per_table: BTreeMap<String, Prf>,
}

/// Macro P/R/F1 with the table as averaging unit. Only tables with non-empty
/// gold are averaged; a table without predictions scores 0 precision.
pub fn macro_prf(gold: &BTreeSet<Correspondence>, predicted: &BTreeSet<Correspondence>) -> Result<MacroReport> {
    if gold.is_empty() {
        return Err(Error::Eval("empty gold standard".into()));
    }
    let mut gold_by: BTreeMap<&str, BTreeSet<&Correspondence>> = BTreeMap::new();
    for g in gold {
        gold_by.entry(&g.table_id).or_default().insert(g);
    }
    let mut pred_by: BTreeMap<&str, BTreeSet<&Correspondence>> = BTreeMap::new();
    for p in predicted {
        pred_by.entry(&p.table_id).or_default().insert(p);
    }
    let empty = BTreeSet::new();
    let mut per_table = BTreeMap::new();
    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for (table, g) in &gold_by {
        let p = pred_by.get(table).unwrap_or(&empty);
        let correct = p.intersection(g).count();
        let prf = Prf::from_counts(correct, p.len(), g.len());
        sum_p += prf.precision;
        sum_r += prf.recall;
        sum_f += prf.f1;
        per_table.insert(table.to_string(), prf);
    }
    let n = gold_by.len() as f64;
    let correct_total = predicted.intersection(gold).count();
    Ok(MacroReport {
        macro_avg: Prf {
            precision: sum_p / n,
            recall: sum_r / n,
            f1: sum_f / n,
        },
        micro: Prf::from_counts(correct_total, predicted.len(), gold.len()),
        tables: gold_by.len(),
        per_table,
    })
}

/// Fraction of gold keys whose prediction matches; missing predictions are wrong.
pub fn accuracy<K: Ord, V: PartialEq>(gold: &BTreeMap<K, V>, predicted: &BTreeMap<K, V>) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Eval("empty gold standard".into()));
    }
    let hits = gold
        .iter()
        .filter(|(k, v)| predicted.get(k) == Some(v))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Confusion counts for a binary classifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let prf = Prf::from_counts(self.tp, self.tp + self.fp, self.tp + self.fn_);
        let acc = if self.total() == 0 { 0.0 } else { (self.tp + self.tn) as f64 / self.total() as f64 };
        BTreeMap::from([
            ("accuracy".to_string(), acc),
            ("precision".to_string(), prf.precision),
            ("recall".to_string(), prf.recall),
            ("f1".to_string(), prf.f1),
        ])
    }
}

/// A mention occurrence in a specific table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Occurrence {
    pub key: MentionKey,
    pub table_id: String,
}

/// Unordered pair of occurrences, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccurrencePair(pub Occurrence, pub Occurrence);

impl OccurrencePair {
    pub fn new(a: Occurrence, b: Occurrence) -> Self {
        if a <= b {
            OccurrencePair(a, b)
        } else {
            OccurrencePair(b, a)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GoldStandard {
    pub links: BTreeSet<Correspondence>,
    pub headings: BTreeSet<Correspondence>,
    pub verdicts: BTreeMap<MentionKey, VerdictClass>,
    pub resolution: BTreeMap<OccurrencePair, bool>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LinkRow {
    table_id: String,
    row_index: usize,
    entity_id: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct HeadingRow {
    table_id: String,
    column_index: usize,
    property_id: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct VerdictRow {
    mention: String,
    verdict: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct ResolutionRow {
    mention1: String,
    table1: String,
    mention2: String,
    table2: String,
    same: u8,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::data(path.display().to_string(), line, e.to_string())
}

fn key_of(path: &Path, s: &str) -> Result<MentionKey> {
    MentionKey::normalize(s).ok_or_else(|| Error::data(path.display().to_string(), 0, "empty mention in gold file"))
}

pub fn read_gold_links(path: &Path) -> Result<BTreeSet<Correspondence>> {
    let mut out = BTreeSet::new();
    for row in csv_reader(path)?.deserialize::<LinkRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        out.insert(Correspondence::new(r.table_id, r.row_index, r.entity_id));
    }
    Ok(out)
}

pub fn read_gold_headings(path: &Path) -> Result<BTreeSet<Correspondence>> {
    let mut out = BTreeSet::new();
    for row in csv_reader(path)?.deserialize::<HeadingRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        out.insert(Correspondence::new(r.table_id, r.column_index, r.property_id));
    }
    Ok(out)
}

pub fn read_gold_verdicts(path: &Path) -> Result<BTreeMap<MentionKey, VerdictClass>> {
    let mut out = BTreeMap::new();
    for row in csv_reader(path)?.deserialize::<VerdictRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        let v: VerdictClass = r
            .verdict
            .parse()
            .map_err(|m: String| Error::data(path.display().to_string(), 0, m))?;
        out.insert(key_of(path, &r.mention)?, v);
    }
    Ok(out)
}

pub fn read_gold_resolution(path: &Path) -> Result<BTreeMap<OccurrencePair, bool>> {
    let mut out = BTreeMap::new();
    for row in csv_reader(path)?.deserialize::<ResolutionRow>() {
        let r = row.map_err(|e| csv_error(path, e))?;
        let a = Occurrence { key: key_of(path, &r.mention1)?, table_id: r.table1 };
        let b = Occurrence { key: key_of(path, &r.mention2)?, table_id: r.table2 };
        out.insert(OccurrencePair::new(a, b), r.same != 0);
    }
    Ok(out)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_gold_links(path: &Path, links: &BTreeSet<Correspondence>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for c in links {
        w.serialize(LinkRow { table_id: c.table_id.clone(), row_index: c.position, entity_id: c.value.clone() })
            .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_gold_headings(path: &Path, headings: &BTreeSet<Correspondence>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for c in headings {
        w.serialize(HeadingRow { table_id: c.table_id.clone(), column_index: c.position, property_id: c.value.clone() })
            .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_gold_verdicts(path: &Path, verdicts: &BTreeMap<MentionKey, VerdictClass>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (k, v) in verdicts {
        w.serialize(VerdictRow { mention: k.to_string(), verdict: v.to_string() })
            .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

pub fn write_gold_resolution(path: &Path, pairs: &BTreeMap<OccurrencePair, bool>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (OccurrencePair(a, b), same) in pairs {
        w.serialize(ResolutionRow {
            mention1: a.key.to_string(),
            table1: a.table_id.clone(),
            mention2: b.key.to_string(),
            table2: b.table_id.clone(),
            same: u8::from(*same),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    finish(w, path)
}

/// Last path segment of a DBpedia-style URI; other strings pass through.
pub fn strip_uri(s: &str) -> String {
    let s = s.trim();
    if s.starts_with("http://") || s.starts_with("https://") {
        s.rsplit(['/', '#']).next().unwrap_or(s).to_string()
    } else {
        s.to_string()
    }
}

fn t2d_dir_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn t2d_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    r.records().map(|x| x.map_err(|e| csv_error(path, e))).collect()
}

fn table_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// T2Dv2 entity gold: one CSV per table (`uri, label, row`), rows counted
/// including the header row, which `header_rows` removes.
pub fn read_t2d_links(dir: &Path, header_rows: usize) -> Result<BTreeSet<Correspondence>> {
    let mut out = BTreeSet::new();
    for file in t2d_dir_files(dir)? {
        let table = table_id_of(&file);
        for (i, rec) in t2d_records(&file)?.iter().enumerate() {
            let (Some(uri), Some(row)) = (rec.get(0), rec.get(2)) else {
                return Err(Error::data(file.display().to_string(), i + 1, "expected uri,label,row"));
            };
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| Error::data(file.display().to_string(), i + 1, format!("bad row index `{row}`")))?;
            let Some(row) = row.checked_sub(header_rows) else { continue };
            out.insert(Correspondence::new(table.clone(), row, strip_uri(uri)));
        }
    }
    Ok(out)
}

/// T2Dv2 property gold: one CSV per table (`uri, header, is_key, column`).
pub fn read_t2d_headings(dir: &Path) -> Result<BTreeSet<Correspondence>> {
    let mut out = BTreeSet::new();
    for file in t2d_dir_files(dir)? {
        let table = table_id_of(&file);
        for (i, rec) in t2d_records(&file)?.iter().enumerate() {
            let (Some(uri), Some(col)) = (rec.get(0), rec.get(3)) else {
                return Err(Error::data(file.display().to_string(), i + 1, "expected uri,header,is_key,column"));
            };
            let col: usize = col
                .trim()
                .parse()
                .map_err(|_| Error::data(file.display().to_string(), i + 1, format!("bad column index `{col}`")))?;
            out.insert(Correspondence::new(table.clone(), col, strip_uri(uri)));
        }
    }
    Ok(out)
}

/// Named metrics for one task, printable as JSON or an aligned table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn from_macro(task: &str, r: &MacroReport, predicted: usize, gold: usize) -> Self {
        EvalReport {
            task: task.into(),
            metrics: BTreeMap::from([
                ("macro_precision".into(), r.macro_avg.precision),
                ("macro_recall".into(), r.macro_avg.recall),
                ("macro_f1".into(), r.macro_avg.f1),
                ("micro_precision".into(), r.micro.precision),
                ("micro_recall".into(), r.micro.recall),
                ("micro_f1".into(), r.micro.f1),
            ]),
            counts: BTreeMap::from([
                ("tables".into(), r.tables),
                ("predicted".into(), predicted),
                ("gold".into(), gold),
            ]),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self
            .metrics
            .keys()
            .chain(self.counts.keys())
            .map(String::len)
            .max()
            .unwrap_or(0);
        let mut s = format!("{}\n", self.task);
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "  {k:<width$}  {v:.4}");
        }
        for (k, v) in &self.counts {
            let _ = writeln!(s, "  {k:<width$}  {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[(&str, usize, &str)]) -> BTreeSet<Correspondence> {
        items.iter().map(|(t, p, v)| Correspondence::new(*t, *p, *v)).collect()
    }

    #[test]
    fn macro_two_table_example() {
        let gold = set(&[("t1", 0, "a"), ("t1", 1, "b"), ("t2", 0, "c"), ("t2", 1, "d")]);
        // t1 perfect; t2 one of two right with two predictions: P = R = 0.5
        let pred = set(&[("t1", 0, "a"), ("t1", 1, "b"), ("t2", 0, "c"), ("t2", 1, "x")]);
        let r = macro_prf(&gold, &pred).unwrap();
        assert_eq!(r.macro_avg, Prf { precision: 0.75, recall: 0.75, f1: 0.75 });
        assert_eq!(r.tables, 2);
    }

    #[test]
    fn macro_edge_cases() {
        let gold = set(&[("t1", 0, "a")]);
        assert_eq!(macro_prf(&gold, &gold).unwrap().macro_avg, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(macro_prf(&gold, &BTreeSet::new()).unwrap().macro_avg, Prf::default());
        assert!(macro_prf(&BTreeSet::new(), &gold).is_err());
        // predictions for a table without gold are outside the macro average
        let pred = set(&[("t1", 0, "a"), ("t9", 0, "z")]);
        assert_eq!(macro_prf(&gold, &pred).unwrap().macro_avg.f1, 1.0);
    }

    #[test]
    fn accuracy_examples() {
        let gold: BTreeMap<u32, bool> = [(1, true), (2, false), (3, true), (4, false)].into();
        assert_eq!(accuracy(&gold, &gold).unwrap(), 1.0);
        let pred: BTreeMap<u32, bool> = [(1, true), (2, false), (3, false), (4, true)].into();
        assert_eq!(accuracy(&gold, &pred).unwrap(), 0.5);
        let partial: BTreeMap<u32, bool> = [(1, true), (2, false), (3, true)].into();
        assert_eq!(accuracy(&gold, &partial).unwrap(), 0.75);
        assert!(accuracy(&BTreeMap::<u32, bool>::new(), &pred).is_err());
    }

    #[test]
    fn binary_counts() {
        let mut c = BinaryCounts::default();
        c.record(true, true);
        c.record(true, false);
        c.record(false, false);
        c.record(false, true);
        let m = c.metrics();
        assert_eq!(m["accuracy"], 0.5);
        assert_eq!(m["precision"], 0.5);
        assert_eq!(m["f1"], 0.5);
    }

    #[test]
    fn gold_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let links = set(&[("t1", 0, "E1"), ("t2", 3, "E, with comma")]);
        let p = dir.path().join("links.csv");
        write_gold_links(&p, &links).unwrap();
        assert_eq!(read_gold_links(&p).unwrap(), links);

        let pairs: BTreeMap<OccurrencePair, bool> = [(
            OccurrencePair::new(
                Occurrence { key: MentionKey::normalize("b").unwrap(), table_id: "t2".into() },
                Occurrence { key: MentionKey::normalize("a").unwrap(), table_id: "t1".into() },
            ),
            true,
        )]
        .into();
        let p = dir.path().join("res.csv");
        write_gold_resolution(&p, &pairs).unwrap();
        assert_eq!(read_gold_resolution(&p).unwrap(), pairs);
    }

    #[test]
    fn t2d_adapter() {
        let dir = tempfile::tempdir().unwrap();
        let ents = dir.path().join("entities");
        std::fs::create_dir(&ents).unwrap();
        std::fs::write(
            ents.join("12345_678.csv"),
            "\"http://dbpedia.org/resource/Oslo\",\"Oslo\",\"1\"\n\"http://dbpedia.org/resource/Bergen\",\"Bergen\",\"2\"\n",
        )
        .unwrap();
        let links = read_t2d_links(&ents, 1).unwrap();
        assert_eq!(links, set(&[("12345_678", 0, "Oslo"), ("12345_678", 1, "Bergen")]));
        let props = dir.path().join("properties");
        std::fs::create_dir(&props).unwrap();
        std::fs::write(
            props.join("12345_678.csv"),
            "\"http://dbpedia.org/ontology/populationTotal\",\"population\",\"False\",\"2\"\n",
        )
        .unwrap();
        assert_eq!(read_t2d_headings(&props).unwrap(), set(&[("12345_678", 2, "populationTotal")]));
    }

    #[test]
    fn report_text_is_aligned() {
        let r = EvalReport {
            task: "link".into(),
            metrics: BTreeMap::from([("macro_f1".into(), 0.5), ("p".into(), 1.0)]),
            counts: BTreeMap::new(),
        };
        let t = r.to_text();
        assert!(t.contains("  macro_f1  0.5000"));
        assert!(t.contains("  p         1.0000"));
    }
}
