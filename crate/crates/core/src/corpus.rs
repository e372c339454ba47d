//! Relational table corpus: parsing, mention normalization and the
//! mention-level views consumed by the linking and discovery stages.
//!
//! The canonical on-disk format is JSON Lines, one table per line. Records in
//! the WDC web-table layout (a `relation` array, optionally column-major) are
//! accepted through an import adapter and converted to the same [`Table`].

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_YEAR: i32 = 1990;
pub const MAX_YEAR: i32 = 2100;

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for (i, tok) in raw.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.extend(tok.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Cross-table identity of a mention string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionKey(String);

impl MentionKey {
    /// Returns `None` when nothing is left after normalization.
    pub fn normalize(raw: &str) -> Option<MentionKey> {
        let norm = normalize_text(raw);
        if norm.is_empty() {
            None
        } else {
            Some(MentionKey(norm))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MentionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableContext {
    pub page_title: String,
    pub caption: String,
    pub surrounding_text: String,
    pub last_edit_year: Option<i32>,
}

/// A relational table with a single core column. `rows` holds data rows only;
/// the header row lives in `headings`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub headings: Vec<String>,
    pub core_column_index: usize,
    /// Position of the header row in the source listing.
    pub header_row_index: usize,
    pub rows: Vec<Vec<String>>,
    pub context: TableContext,
}

impl Table {
    pub fn num_columns(&self) -> usize {
        self.headings.len()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.headings.is_empty() {
            return Err("headings list is empty".into());
        }
        if self.core_column_index >= self.headings.len() {
            return Err(format!(
                "core column index {} out of range for {} columns",
                self.core_column_index,
                self.headings.len()
            ));
        }
        if let Some((i, row)) = self
            .rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != self.headings.len())
        {
            return Err(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                self.headings.len()
            ));
        }
        if let Some(y) = self.context.last_edit_year {
            if !(MIN_YEAR..=MAX_YEAR).contains(&y) {
                return Err(format!("last edit year {y} outside [{MIN_YEAR}, {MAX_YEAR}]"));
            }
        }
        Ok(())
    }

    pub fn core_heading(&self) -> &str {
        &self.headings[self.core_column_index]
    }

    pub fn cell(&self, row: usize, column: usize) -> &str {
        &self.rows[row][column]
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&CanonicalRecord::from(self)).expect("table serializes")
    }
}

/// One core-column mention occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreMention {
    pub row_index: usize,
    pub key: MentionKey,
    pub raw: String,
}

/// Non-empty core-column cells in row order.
pub fn core_mentions(table: &Table) -> Vec<CoreMention> {
    table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(row_index, row)| {
            let raw = &row[table.core_column_index];
            MentionKey::normalize(raw).map(|key| CoreMention {
                row_index,
                key,
                raw: raw.clone(),
            })
        })
        .collect()
}

/// Version of the shipped noise pattern list.
pub const NOISE_PATTERNS_VERSION: u32 = 1;

const MONTHS: &str = "jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?";

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[+-]?(?:\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)%?$").unwrap()
});
static ISO_DATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{4})-(\d{1,2})-(\d{1,2})$").unwrap());
static SLASH_DATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4})$").unwrap());
static MONTH_DATE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)^(?:{MONTHS})\.? (\d{{1,2}}), (\d{{4}})$")).unwrap()
});
static EMAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}$").unwrap()
});

/// Noise patterns in application order: number, the three date layouts, email.
fn noise_patterns() -> [&'static Regex; 5] {
    [&NUMBER_RE, &ISO_DATE_RE, &SLASH_DATE_RE, &MONTH_DATE_RE, &EMAIL_RE]
}

/// True for mentions that cannot be named entities: numbers, dates, email addresses.
pub fn is_noise_mention(mention: &str) -> bool {
    let m = mention.trim();
    !m.is_empty() && noise_patterns().iter().any(|re| re.is_match(m))
}

/// Year of a recognized date string (`YYYY-MM-DD`, `DD/MM/YYYY`, `MM/DD/YYYY`,
/// `Month DD, YYYY`).
pub fn parse_date_year(s: &str) -> Option<i32> {
    let s = s.trim();
    if let Some(c) = ISO_DATE_RE.captures(s) {
        let (m, d) = (c[2].parse::<u32>().ok()?, c[3].parse::<u32>().ok()?);
        return ((1..=12).contains(&m) && (1..=31).contains(&d)).then(|| c[1].parse().ok())?;
    }
    if let Some(c) = SLASH_DATE_RE.captures(s) {
        let (a, b) = (c[1].parse::<u32>().ok()?, c[2].parse::<u32>().ok()?);
        let valid = (1..=31).contains(&a) && (1..=31).contains(&b) && (a <= 12 || b <= 12);
        return valid.then(|| c[3].parse().ok())?;
    }
    if let Some(c) = MONTH_DATE_RE.captures(s) {
        let d = c[1].parse::<u32>().ok()?;
        return (1..=31).contains(&d).then(|| c[2].parse().ok())?;
    }
    None
}

/// Order- and duplicate-insensitive digest of a table's normalized core mentions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreDigest(pub String);

pub fn identical_core_key(table: &Table) -> CoreDigest {
    let keys: BTreeSet<MentionKey> = core_mentions(table).into_iter().map(|m| m.key).collect();
    let mut hasher = Sha256::new();
    for k in &keys {
        hasher.update(k.as_str().as_bytes());
        hasher.update([0u8]);
    }
    CoreDigest(hex_digest(&hasher.finalize()))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub tables: Vec<Table>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CanonicalRecord {
    id: String,
    headings: Vec<String>,
    rows: Vec<Vec<String>>,
    core_column_index: usize,
    #[serde(default)]
    header_row_index: usize,
    #[serde(default)]
    page_title: String,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    surrounding_text: String,
    #[serde(default)]
    last_edit_year: Option<i32>,
}

impl From<&Table> for CanonicalRecord {
    fn from(t: &Table) -> Self {
        CanonicalRecord {
            id: t.id.clone(),
            headings: t.headings.clone(),
            rows: t.rows.clone(),
            core_column_index: t.core_column_index,
            header_row_index: t.header_row_index,
            page_title: t.context.page_title.clone(),
            caption: t.context.caption.clone(),
            surrounding_text: t.context.surrounding_text.clone(),
            last_edit_year: t.context.last_edit_year,
        }
    }
}

impl From<CanonicalRecord> for Table {
    fn from(r: CanonicalRecord) -> Self {
        Table {
            id: r.id,
            headings: r.headings,
            core_column_index: r.core_column_index,
            header_row_index: r.header_row_index,
            rows: r.rows,
            context: TableContext {
                page_title: r.page_title,
                caption: r.caption,
                surrounding_text: r.surrounding_text,
                last_edit_year: r.last_edit_year,
            },
        }
    }
}

/// WDC web-table record. In `HORIZONTAL` orientation `relation` is column-major.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WdcRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    table_num: Option<i64>,
    relation: Vec<Vec<String>>,
    #[serde(default)]
    table_orientation: Option<String>,
    #[serde(default)]
    header_row_index: Option<i64>,
    #[serde(default)]
    key_column_index: Option<i64>,
    #[serde(default)]
    page_title: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    text_before_table: Option<String>,
    #[serde(default)]
    text_after_table: Option<String>,
    #[serde(default)]
    last_modified: Option<String>,
}

static YEAR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})\b").unwrap());

fn first_plausible_year(s: &str) -> Option<i32> {
    YEAR_RE
        .captures_iter(s)
        .filter_map(|c| c[1].parse::<i32>().ok())
        .find(|y| (MIN_YEAR..=MAX_YEAR).contains(y))
}

fn transpose(m: &[Vec<String>]) -> std::result::Result<Vec<Vec<String>>, String> {
    let Some(first) = m.first() else {
        return Ok(Vec::new());
    };
    let height = first.len();
    if m.iter().any(|c| c.len() != height) {
        return Err("ragged relation matrix".into());
    }
    Ok((0..height)
        .map(|r| m.iter().map(|col| col[r].clone()).collect())
        .collect())
}

impl WdcRecord {
    fn into_table(self, line_no: usize) -> std::result::Result<Table, String> {
        let column_major = self
            .table_orientation
            .as_deref()
            .is_none_or(|o| !o.eq_ignore_ascii_case("VERTICAL"));
        let mut rows = if column_major {
            transpose(&self.relation)?
        } else {
            self.relation
        };
        let header_row_index = usize::try_from(self.header_row_index.unwrap_or(0)).unwrap_or(0);
        if header_row_index >= rows.len() {
            return Err(format!("header row {header_row_index} beyond {} rows", rows.len()));
        }
        let headings = rows.remove(header_row_index);
        let core_column_index = usize::try_from(self.key_column_index.unwrap_or(0))
            .map_err(|_| "negative key column index".to_string())?;
        let id = self.id.unwrap_or_else(|| match (&self.url, self.table_num) {
            (Some(u), Some(n)) => format!("{u}#{n}"),
            (Some(u), None) => u.clone(),
            _ => format!("line-{line_no}"),
        });
        let surrounding = [self.text_before_table, self.text_after_table]
            .into_iter()
            .flatten()
            .filter(|s| !s.trim().is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Table {
            id,
            headings,
            core_column_index,
            header_row_index,
            rows,
            context: TableContext {
                page_title: self.page_title.unwrap_or_default(),
                caption: self.title.unwrap_or_default(),
                surrounding_text: surrounding,
                last_edit_year: self.last_modified.as_deref().and_then(first_plausible_year),
            },
        })
    }
}

fn parse_record(line: &str, line_no: usize) -> std::result::Result<Table, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let table = if value.get("relation").is_some() {
        let rec: WdcRecord =
            serde_json::from_value(value).map_err(|e| format!("bad WDC record: {e}"))?;
        rec.into_table(line_no)?
    } else {
        let rec: CanonicalRecord =
            serde_json::from_value(value).map_err(|e| format!("bad record: {e}"))?;
        rec.into()
    };
    table.validate()?;
    if core_mentions(&table).is_empty() {
        return Err("empty core column".into());
    }
    Ok(table)
}

/// Parses a JSON Lines corpus. Malformed or invalid lines are skipped and
/// reported as warnings; blank lines are ignored.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<corpus stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, line_no) {
            Ok(t) => out.tables.push(t),
            Err(message) => out.warnings.push(ParseWarning {
                line: line_no,
                message,
            }),
        }
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<ParsedCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut w: W, tables: &[Table]) -> std::io::Result<()> {
    for t in tables {
        writeln!(w, "{}", t.to_json_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(core: &[&str]) -> Table {
        Table {
            id: "t".into(),
            headings: vec!["Name".into(), "X".into()],
            core_column_index: 0,
            header_row_index: 0,
            rows: core.iter().map(|c| vec![c.to_string(), "1".into()]).collect(),
            context: TableContext::default(),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Cisco   Systems\tINC "), "cisco systems inc");
        assert_eq!(normalize_text("ÉCOLE"), "école");
        assert!(MentionKey::normalize(" \t ").is_none());
        let once = normalize_text(" A  b ");
        assert_eq!(normalize_text(&once), once);
    }

    #[test]
    fn core_mentions_skip_empty_and_normalize() {
        let t = table(&["IBM", " ibm ", "", "IBM"]);
        let ms = core_mentions(&t);
        assert_eq!(ms.len(), 3);
        assert!(ms.iter().all(|m| m.key.as_str() == "ibm"));
        assert_eq!(ms.iter().map(|m| m.row_index).collect::<Vec<_>>(), vec![0, 1, 3]);
        assert_eq!(ms[1].raw, " ibm ");
    }

    #[test]
    fn core_mentions_row_order() {
        let t = table(&["a", "b", "c", "d", "e"]);
        let keys: Vec<_> = core_mentions(&t).into_iter().map(|m| m.key.0).collect();
        assert_eq!(keys, vec!["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn noise_patterns_match() {
        for s in ["1,234.5", "42", "-3.5", "12%", "2015-03-01", "03/01/2015", "31/12/2014",
                  "January 5, 2015", "Sep. 30, 2001", "john@acme.com"] {
            assert!(is_noise_mention(s), "{s}");
        }
        for s in ["FC Edmonton", "IBM", "1,23,4", "3M", "Route 66", ""] {
            assert!(!is_noise_mention(s), "{s}");
        }
    }

    #[test]
    fn date_years() {
        assert_eq!(parse_date_year("2015-03-01"), Some(2015));
        assert_eq!(parse_date_year("12/31/1999"), Some(1999));
        assert_eq!(parse_date_year("March 3, 1836"), Some(1836));
        assert_eq!(parse_date_year("2015-13-01"), None);
        assert_eq!(parse_date_year("1836"), None);
    }

    #[test]
    fn identical_core_digest_is_set_semantics() {
        let d = |c: &[&str]| identical_core_key(&table(c));
        assert_eq!(d(&["a", "b", "c"]), d(&["c", "b", "a"]));
        assert_ne!(d(&["a", "b"]), d(&["a", "b", "c"]));
        assert_eq!(d(&["a", "a", "b"]), d(&["a", "b"]));
        assert_eq!(d(&["A ", "b"]), d(&["a", "B"]));
    }

    #[test]
    fn skip_and_count_malformed_lines() {
        let good = table(&["x"]).to_json_line();
        let input = format!("{good}\n{{not json\n{good}\n");
        let parsed = parse_corpus(input.as_bytes()).unwrap();
        assert_eq!(parsed.tables.len(), 2);
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].line, 2);
    }

    #[test]
    fn out_of_range_core_column_is_dropped() {
        let line = r#"{"id":"t","headings":["a","b"],"rows":[["x","y"]],"coreColumnIndex":2,"headerRowIndex":0,"pageTitle":"","caption":"","surroundingText":"","lastEditYear":null}"#;
        let parsed = parse_corpus(line.as_bytes()).unwrap();
        assert!(parsed.tables.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].message.contains("core column"));
    }

    #[test]
    fn empty_core_column_is_dropped() {
        let t = table(&["", "  "]);
        let parsed = parse_corpus(t.to_json_line().as_bytes()).unwrap();
        assert!(parsed.tables.is_empty());
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn year_out_of_range_is_rejected() {
        let mut t = table(&["x"]);
        t.context.last_edit_year = Some(1850);
        let parsed = parse_corpus(t.to_json_line().as_bytes()).unwrap();
        assert!(parsed.tables.is_empty());
    }

    #[test]
    fn wdc_column_major_equals_row_major() {
        // 3x3 source matrix including the header row; the oracle transposes it by hand.
        let cols = vec![
            vec!["Club", "Alpha FC", "Beta FC"],
            vec!["Ground", "North Park", "South Park"],
            vec!["Founded", "1901", "1923"],
        ];
        let mut rows_by_hand = vec![vec![String::new(); 3]; 3];
        for (c, col) in cols.iter().enumerate() {
            for (r, cell) in col.iter().enumerate() {
                rows_by_hand[r][c] = cell.to_string();
            }
        }
        let wdc = serde_json::json!({
            "id": "w1", "relation": cols, "tableOrientation": "HORIZONTAL",
            "headerRowIndex": 0, "keyColumnIndex": 0, "pageTitle": "Clubs",
            "title": "List", "textBeforeTable": "before", "textAfterTable": "after",
            "lastModified": "Tue, 14 Jul 2015 10:00:00 GMT"
        });
        let row_major = serde_json::json!({
            "id": "w1", "relation": rows_by_hand, "tableOrientation": "VERTICAL",
            "headerRowIndex": 0, "keyColumnIndex": 0, "pageTitle": "Clubs",
            "title": "List", "textBeforeTable": "before", "textAfterTable": "after",
            "lastModified": "Tue, 14 Jul 2015 10:00:00 GMT"
        });
        let a = parse_corpus(wdc.to_string().as_bytes()).unwrap();
        let b = parse_corpus(row_major.to_string().as_bytes()).unwrap();
        assert_eq!(a.tables.len(), 1);
        assert_eq!(a.tables, b.tables);
        let t = &a.tables[0];
        assert_eq!(t.headings, vec!["Club", "Ground", "Founded"]);
        assert_eq!(t.rows[1], vec!["Beta FC", "South Park", "1923"]);
        assert_eq!(t.context.last_edit_year, Some(2015));
        assert_eq!(t.context.surrounding_text, "before after");
        // header row excluded from mentions
        let keys: Vec<_> = core_mentions(t).into_iter().map(|m| m.key.0).collect();
        assert_eq!(keys, vec!["alpha fc", "beta fc"]);
    }
}
