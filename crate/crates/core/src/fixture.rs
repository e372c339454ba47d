//! Seeded generator for a small synthetic KB, table corpus and gold standard.
//!
//! Five domains, each with a type chain and three properties (a string, a
//! year and a plain number). Tables mix KB mentions, novel recurring names,
//! labels of KB entities from a different domain and noise cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_corpus, MentionKey, Table, TableContext};
use crate::discover::VerdictClass;
use crate::eval::{
    write_gold_headings, write_gold_links, write_gold_resolution, write_gold_verdicts, Correspondence,
    Occurrence, OccurrencePair,
};
use crate::kb::{KbBuilder, KbSnapshot};
use crate::sim::{tokens, TermEmbeddings};
use crate::{Error, Result};

pub const ENTITIES_PER_DOMAIN: usize = 60;
pub const TABLES_PER_DOMAIN: usize = 8;
pub const KB_ROWS: usize = 10;
pub const NOVEL_PER_DOMAIN: usize = 12;
pub const EMBEDDING_DIM: usize = 16;
const HOMONYMS: usize = 5;

const KB_SYLLABLES: [&str; 28] = [
    "bre", "vik", "lar", "mon", "dal", "kor", "fen", "gru", "hal", "jor", "kel", "lun", "mar", "nor",
    "ost", "pra", "rin", "sol", "tam", "ulv", "ved", "wes", "ber", "gan", "tis", "som", "rad", "lef",
];
const NOVEL_SYLLABLES: [&str; 12] = [
    "zy", "qua", "xo", "phe", "yuk", "zab", "quil", "xen", "oph", "yer", "zor", "quen",
];
const FIRST_NAMES: [&str; 10] = ["Anna", "Erik", "Lena", "Ola", "Mia", "Jonas", "Sara", "Nils", "Ida", "Per"];
const FILM_WORDS: [&str; 6] = ["Night", "Dawn", "Road", "Echo", "Storm", "Harbor"];
const COUNTRIES: [&str; 8] = [
    "Norway", "Chile", "Kenya", "Portugal", "Canada", "Japan", "Austria", "Peru",
];
const NATIONALITIES: [&str; 8] = [
    "Norwegian", "Chilean", "Kenyan", "Portuguese", "Canadian", "Japanese", "Austrian", "Peruvian",
];
const INDUSTRIES: [&str; 8] = [
    "software", "mining", "retail", "shipping", "banking", "textiles", "aerospace", "pharmaceuticals",
];
const DISTRACTOR_VALUES: [&str; 8] = ["yes", "no", "active", "closed", "pending", "listed", "retired", "unknown"];

struct Domain {
    leaf: &'static str,
    chain: &'static [&'static str],
    core_headings: [&'static str; 3],
    props: [(&'static str, [&'static str; 3]); 3],
    years: (i32, i32),
    numbers: (u32, u32),
    noun: &'static str,
}

const DOMAINS: [Domain; 5] = [
    Domain {
        leaf: "SoccerClub",
        chain: &["Agent", "Organisation", "SportsTeam", "SoccerClub"],
        core_headings: ["Club", "Team", "Name"],
        props: [
            ("ground", ["Ground", "Stadium", "Home ground"]),
            ("founded", ["Founded", "Est.", "Year founded"]),
            ("capacity", ["Capacity", "Seats", "Stadium capacity"]),
        ],
        years: (1870, 1990),
        numbers: (10_000, 90_000),
        noun: "football clubs",
    },
    Domain {
        leaf: "Company",
        chain: &["Agent", "Organisation", "Company"],
        core_headings: ["Company", "Name", "Firm"],
        props: [
            ("industry", ["Industry", "Sector", "Business"]),
            ("foundingYear", ["Founded", "Founding year", "Since"]),
            ("numberOfEmployees", ["Employees", "Staff", "Number of employees"]),
        ],
        years: (1850, 2005),
        numbers: (10_000, 99_000),
        noun: "companies",
    },
    Domain {
        leaf: "Town",
        chain: &["Place", "PopulatedPlace", "Settlement", "Town"],
        core_headings: ["Town", "Name", "Municipality"],
        props: [
            ("country", ["Country", "Nation", "Located in"]),
            ("established", ["Established", "Founded", "Charter"]),
            ("populationTotal", ["Population", "Inhabitants", "Pop."]),
        ],
        years: (1100, 1900),
        numbers: (10_000, 990_000),
        noun: "towns",
    },
    Domain {
        leaf: "Film",
        chain: &["Work", "Film"],
        core_headings: ["Title", "Film", "Movie"],
        props: [
            ("director", ["Director", "Directed by", "Filmmaker"]),
            ("releaseYear", ["Year", "Released", "Release year"]),
            ("runtime", ["Runtime", "Length (min)", "Minutes"]),
        ],
        years: (1930, 2015),
        numbers: (80, 180),
        noun: "films",
    },
    Domain {
        leaf: "Athlete",
        chain: &["Agent", "Person", "Athlete"],
        core_headings: ["Athlete", "Name", "Player"],
        props: [
            ("nationality", ["Nationality", "Country", "Nation"]),
            ("birthYear", ["Born", "Birth year", "Year of birth"]),
            ("height", ["Height", "Height (cm)", "cm"]),
        ],
        years: (1950, 2000),
        numbers: (150, 210),
        noun: "athletes",
    },
];

const SOCCER: usize = 0;
const COMPANY: usize = 1;
const TOWN: usize = 2;
const FILM: usize = 3;

/// A generated KB entity with its property values.
#[derive(Debug, Clone)]
struct GenEntity {
    id: String,
    domain: usize,
    label: String,
    /// Forms used as table mentions; the first is the label or the preferred surface form.
    mention_forms: Vec<String>,
    string_value: String,
    year: i32,
    number: u32,
}

#[derive(Debug, Clone)]
struct NovelEntity {
    id: String,
    domain: usize,
    form: String,
    variant: Option<String>,
}

/// Gold standard split into training and test parts.
#[derive(Debug, Clone, Default)]
pub struct GoldSplit {
    pub links_train: BTreeSet<Correspondence>,
    pub links_test: BTreeSet<Correspondence>,
    pub headings_train: BTreeSet<Correspondence>,
    pub headings_test: BTreeSet<Correspondence>,
    pub verdicts_train: BTreeMap<MentionKey, VerdictClass>,
    pub verdicts_test: BTreeMap<MentionKey, VerdictClass>,
    pub resolution_train: BTreeMap<OccurrencePair, bool>,
    pub resolution_test: BTreeMap<OccurrencePair, bool>,
}

impl GoldSplit {
    pub fn all_verdicts(&self) -> BTreeMap<MentionKey, VerdictClass> {
        let mut out = self.verdicts_train.clone();
        out.extend(self.verdicts_test.clone());
        out
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub kb: KbSnapshot,
    pub tables: Vec<Table>,
    pub embeddings: TermEmbeddings,
    pub gold: GoldSplit,
    pub test_tables: BTreeSet<String>,
}

/// Relative file names written by [`Fixture::write_to`].
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const KB_DIR: &str = "kb";
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const CONFIG: &str = "pipeline.conf";
    pub const LINKS_TRAIN: &str = "gold/links_train.csv";
    pub const LINKS_TEST: &str = "gold/links_test.csv";
    pub const HEADINGS_TRAIN: &str = "gold/headings_train.csv";
    pub const HEADINGS_TEST: &str = "gold/headings_test.csv";
    pub const VERDICTS_TRAIN: &str = "gold/verdicts_train.csv";
    pub const VERDICTS_TEST: &str = "gold/verdicts_test.csv";
    pub const RESOLUTION_TRAIN: &str = "gold/resolution_train.csv";
    pub const RESOLUTION_TEST: &str = "gold/resolution_test.csv";
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn fresh_name(rng: &mut ChaCha8Rng, syllables: &[&str], parts: usize, used: &mut BTreeSet<String>) -> String {
    loop {
        let mut name = String::new();
        let mut last = "";
        for _ in 0..parts {
            let s = loop {
                let s = *syllables.choose(rng).unwrap();
                if s != last {
                    break s;
                }
            };
            name.push_str(s);
            last = s;
        }
        let name = capitalize(&name);
        if used.insert(name.clone()) {
            return name;
        }
    }
}

fn entity_id(label: &str) -> String {
    label.replace(' ', "_")
}

fn format_number(n: u32, with_separator: bool) -> String {
    if !with_separator || n < 1000 {
        return n.to_string();
    }
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn string_value(rng: &mut ChaCha8Rng, domain: usize, used: &mut BTreeSet<String>) -> String {
    match domain {
        SOCCER => format!("{} Park", fresh_name(rng, &KB_SYLLABLES, 2, used)),
        COMPANY => INDUSTRIES.choose(rng).unwrap().to_string(),
        TOWN => COUNTRIES.choose(rng).unwrap().to_string(),
        FILM => format!(
            "{} {}",
            FIRST_NAMES.choose(rng).unwrap(),
            fresh_name(rng, &KB_SYLLABLES, 2, used)
        ),
        _ => NATIONALITIES.choose(rng).unwrap().to_string(),
    }
}

fn pool_value(rng: &mut ChaCha8Rng, domain: usize, entities: &[GenEntity]) -> String {
    let same: Vec<&GenEntity> = entities.iter().filter(|e| e.domain == domain).collect();
    same.choose(rng).unwrap().string_value.clone()
}

struct Row {
    mention: String,
    kind: RowKind,
    string_value: String,
    year: i32,
    number: u32,
}

enum RowKind {
    Kb(String),
    Novel(String),
    CrossType(String),
    Noise,
}

/// Generates the fixture deterministically from `seed`.
pub fn generate(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut builder = KbBuilder::new();
    for d in &DOMAINS {
        let mut parent: Option<&str> = None;
        for t in d.chain {
            builder.add_type(*t, parent);
            parent = Some(t);
        }
    }

    let mut entities: Vec<GenEntity> = Vec::new();
    let mut town_bases = Vec::new();
    for (d, domain) in DOMAINS.iter().enumerate() {
        for i in 0..ENTITIES_PER_DOMAIN {
            let (label, forms) = match d {
                SOCCER => {
                    let b = fresh_name(&mut rng, &KB_SYLLABLES, 2, &mut used);
                    (format!("{b} FC"), vec![format!("{b} FC"), format!("{b} Football Club")])
                }
                COMPANY => {
                    let b = fresh_name(&mut rng, &KB_SYLLABLES, 2, &mut used);
                    (format!("{b} Corp"), vec![format!("{b} Corp"), format!("{b} Corporation")])
                }
                TOWN => {
                    let b = fresh_name(&mut rng, &KB_SYLLABLES, 2, &mut used);
                    town_bases.push(b.clone());
                    (b.clone(), vec![b.clone(), format!("{b} Town")])
                }
                FILM if i < HOMONYMS => {
                    let b = town_bases[i].clone();
                    (format!("{b} (film)"), vec![b.clone()])
                }
                FILM => {
                    let b = fresh_name(&mut rng, &KB_SYLLABLES, 2, &mut used);
                    let w = FILM_WORDS.choose(&mut rng).unwrap();
                    let l = format!("{b} {w}");
                    (l.clone(), vec![l])
                }
                _ => {
                    let b = fresh_name(&mut rng, &KB_SYLLABLES, 2, &mut used);
                    let f = FIRST_NAMES.choose(&mut rng).unwrap();
                    let initial = &f[..1];
                    (format!("{f} {b}"), vec![format!("{f} {b}"), format!("{initial}. {b}")])
                }
            };
            let e = GenEntity {
                id: entity_id(&label),
                domain: d,
                label,
                mention_forms: forms,
                string_value: string_value(&mut rng, d, &mut used),
                year: rng.gen_range(domain.years.0..=domain.years.1),
                number: rng.gen_range(domain.numbers.0..=domain.numbers.1),
            };
            entities.push(e);
        }
    }

    for e in &entities {
        let domain = &DOMAINS[e.domain];
        let mut popularity = rng.gen_range(1.0..1000.0f64).round();
        if e.domain == FILM && e.label.ends_with("(film)") {
            popularity = (popularity / 10.0).round().max(1.0);
        }
        let description = match e.domain {
            SOCCER => format!("football club playing at {}", e.string_value),
            COMPANY => format!("{} company", e.string_value),
            TOWN => format!("town in {}", e.string_value),
            FILM => format!("film directed by {}", e.string_value),
            _ => format!("{} athlete", e.string_value),
        };
        builder
            .add_entity(e.id.clone(), e.label.clone(), popularity, description)
            .expect("unique ids");
        builder.add_entity_type(&e.id, domain.leaf).expect("entity exists");
        for f in &e.mention_forms {
            if f != &e.label {
                builder.add_surface_form(f, &e.id).expect("entity exists");
            }
        }
        let p = &domain.props;
        builder.add_triple(&e.id, p[0].0, &e.string_value).expect("entity exists");
        builder.add_triple(&e.id, p[1].0, &e.year.to_string()).expect("entity exists");
        builder.add_triple(&e.id, p[2].0, &e.number.to_string()).expect("entity exists");
    }
    let kb = builder.build().expect("generated KB is consistent");

    // Novel entities; a few names are shared between novel towns and novel companies.
    let mut novel: Vec<NovelEntity> = Vec::new();
    let shared: Vec<String> = (0..3)
        .map(|_| fresh_name(&mut rng, &NOVEL_SYLLABLES, 2, &mut used))
        .collect();
    for d in 0..DOMAINS.len() {
        for n in 0..NOVEL_PER_DOMAIN {
            let base = if (d == TOWN || d == COMPANY) && n < shared.len() {
                shared[n].clone()
            } else {
                fresh_name(&mut rng, &NOVEL_SYLLABLES, 2 + n % 2, &mut used)
            };
            let with_variant = n % 2 == 0 && !(d == COMPANY && n < shared.len());
            let (form, variant) = match d {
                SOCCER => (format!("{base} FC"), Some(base.clone())),
                COMPANY => (format!("{base} Corp"), Some(base.clone())),
                TOWN => (base.clone(), Some(format!("{base} Village"))),
                FILM => {
                    let w = FILM_WORDS[n % FILM_WORDS.len()];
                    (format!("{base} {w}"), None)
                }
                _ => {
                    let f = FIRST_NAMES[n % FIRST_NAMES.len()];
                    (format!("{f} {base}"), Some(base.clone()))
                }
            };
            let (form, variant) = match (d, n) {
                (COMPANY, 11) => ("Trustees Of Boston University".to_string(), None),
                (TOWN, 11) => ("Trustees Of Boston".to_string(), None),
                _ => (form, if with_variant { variant } else { None }),
            };
            novel.push(NovelEntity {
                id: format!("novel-{}-{n:02}", DOMAINS[d].leaf.to_lowercase()),
                domain: d,
                form,
                variant,
            });
        }
    }

    let test_tables: BTreeSet<String> = (0..DOMAINS.len())
        .flat_map(|d| {
            let mut ids = vec![table_id(d, 7)];
            if d < 3 {
                ids.push(table_id(d, 6));
            }
            ids
        })
        .collect();

    let mut cross_used: BTreeSet<usize> = BTreeSet::new();
    let mut tables = Vec::new();
    let mut gold_links = BTreeSet::new();
    let mut gold_headings = BTreeSet::new();
    let mut verdicts: BTreeMap<MentionKey, VerdictClass> = BTreeMap::new();
    let mut occurrences: Vec<(Occurrence, String)> = Vec::new();

    for (d, domain) in DOMAINS.iter().enumerate() {
        let members: Vec<usize> = (0..entities.len()).filter(|&i| entities[i].domain == d).collect();
        let mut perm = members.clone();
        perm.shuffle(&mut rng);
        let novel_slots = novel_schedule(&mut rng);
        let domain_novel: Vec<&NovelEntity> = novel.iter().filter(|n| n.domain == d).collect();
        let mut seen_novel: BTreeMap<usize, usize> = BTreeMap::new();

        for j in 0..TABLES_PER_DOMAIN {
            let tid = table_id(d, j);
            let mut rows: Vec<Row> = Vec::new();
            for r in 0..KB_ROWS {
                let e = &entities[perm[(j * KB_ROWS + r) % perm.len()]];
                let roll: f64 = rng.gen();
                let mut mention = if roll < 0.2 && e.mention_forms.len() > 1 {
                    e.mention_forms[1].clone()
                } else {
                    e.mention_forms[0].clone()
                };
                if rng.gen_bool(0.1) {
                    mention = mention.to_uppercase();
                }
                rows.push(Row {
                    mention,
                    kind: RowKind::Kb(e.id.clone()),
                    string_value: e.string_value.clone(),
                    year: e.year,
                    number: e.number,
                });
            }
            for &n in &novel_slots[j] {
                let ne = domain_novel[n];
                let count = seen_novel.entry(n).or_insert(0);
                let mention = match (&ne.variant, *count) {
                    (Some(v), 1) => v.clone(),
                    _ => ne.form.clone(),
                };
                *count += 1;
                rows.push(Row {
                    mention,
                    kind: RowKind::Novel(ne.id.clone()),
                    string_value: pool_value(&mut rng, d, &entities),
                    year: rng.gen_range(domain.years.0..=domain.years.1),
                    number: rng.gen_range(domain.numbers.0..=domain.numbers.1),
                });
            }
            let other = (d + 1 + j % 4) % DOMAINS.len();
            let cross = loop {
                let i = rng.gen_range(0..entities.len());
                let e = &entities[i];
                let homonym = (e.domain == TOWN && i - TOWN * ENTITIES_PER_DOMAIN < HOMONYMS)
                    || e.label.ends_with("(film)");
                if e.domain == other && !homonym && cross_used.insert(i) {
                    break i;
                }
            };
            rows.push(Row {
                mention: entities[cross].label.clone(),
                kind: RowKind::CrossType(entities[cross].id.clone()),
                string_value: pool_value(&mut rng, d, &entities),
                year: rng.gen_range(domain.years.0..=domain.years.1),
                number: rng.gen_range(domain.numbers.0..=domain.numbers.1),
            });
            let k = d * TABLES_PER_DOMAIN + j;
            let noise = match j % 4 {
                0 => format_number(10_000 + 137 * k as u32, true),
                1 => format!("{}-{:02}-{:02}", 2000 + k % 15, 1 + k % 12, 1 + k % 28),
                2 => format!("contact{k}@example.org"),
                _ => format!("{}.{}", 10 + k, k % 10),
            };
            rows.push(Row {
                mention: noise,
                kind: RowKind::Noise,
                string_value: pool_value(&mut rng, d, &entities),
                year: rng.gen_range(domain.years.0..=domain.years.1),
                number: rng.gen_range(domain.numbers.0..=domain.numbers.1),
            });
            rows.shuffle(&mut rng);

            let variant = j % 3;
            let headings = vec![
                domain.core_headings[variant].to_string(),
                domain.props[0].1[variant].to_string(),
                domain.props[1].1[variant].to_string(),
                domain.props[2].1[(variant + j / 3) % 3].to_string(),
                ["Notes", "Status", "Remarks"][j % 3].to_string(),
            ];
            for (c, p) in domain.props.iter().enumerate() {
                gold_headings.insert(Correspondence::new(tid.clone(), c + 1, p.0));
            }
            let mut cells = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                let key = MentionKey::normalize(&row.mention).expect("non-empty mention");
                match &row.kind {
                    RowKind::Kb(id) => {
                        gold_links.insert(Correspondence::new(tid.clone(), r, id.clone()));
                    }
                    RowKind::Novel(id) => {
                        verdicts.insert(key.clone(), VerdictClass::OutOfKb);
                        occurrences.push((Occurrence { key, table_id: tid.clone() }, id.clone()));
                    }
                    RowKind::CrossType(id) => {
                        verdicts.insert(key.clone(), VerdictClass::InKb);
                        occurrences.push((Occurrence { key, table_id: tid.clone() }, id.clone()));
                    }
                    RowKind::Noise => {
                        verdicts.insert(key, VerdictClass::NotEntity);
                    }
                }
                cells.push(vec![
                    row.mention.clone(),
                    row.string_value.clone(),
                    row.year.to_string(),
                    format_number(row.number, rng.gen_bool(0.5)),
                    DISTRACTOR_VALUES.choose(&mut rng).unwrap().to_string(),
                ]);
            }
            let country = COUNTRIES[(d + j) % COUNTRIES.len()];
            tables.push(Table {
                id: tid.clone(),
                headings,
                core_column_index: 0,
                header_row_index: 0,
                rows: cells,
                context: TableContext {
                    page_title: format!("List of {} in {country}", domain.noun),
                    caption: format!("{} {}", capitalize(domain.noun), j + 1),
                    surrounding_text: format!(
                        "The following {} are registered in {country}.",
                        domain.noun
                    ),
                    last_edit_year: Some(2010 + ((d + j) % 6) as i32),
                },
            });
        }
    }

    let resolution = resolution_pairs(&occurrences);
    let embeddings = build_embeddings(&mut rng, &entities, &kb, &tables);

    let mut gold = GoldSplit::default();
    for c in gold_links {
        if test_tables.contains(&c.table_id) {
            gold.links_test.insert(c);
        } else {
            gold.links_train.insert(c);
        }
    }
    for c in gold_headings {
        if test_tables.contains(&c.table_id) {
            gold.headings_test.insert(c);
        } else {
            gold.headings_train.insert(c);
        }
    }
    let mut keys: Vec<(MentionKey, VerdictClass)> = verdicts.into_iter().collect();
    keys.shuffle(&mut rng);
    let cut = keys.len() * 4 / 5;
    for (i, (k, v)) in keys.into_iter().enumerate() {
        if i < cut {
            gold.verdicts_train.insert(k, v);
        } else {
            gold.verdicts_test.insert(k, v);
        }
    }
    let mut pairs: Vec<(OccurrencePair, bool)> = resolution.into_iter().collect();
    pairs.shuffle(&mut rng);
    let cut = pairs.len() * 4 / 5;
    for (i, (p, same)) in pairs.into_iter().enumerate() {
        if i < cut {
            gold.resolution_train.insert(p, same);
        } else {
            gold.resolution_test.insert(p, same);
        }
    }

    Fixture {
        kb,
        tables,
        embeddings,
        gold,
        test_tables,
    }
}

fn table_id(domain: usize, j: usize) -> String {
    format!("{}-{j:02}", DOMAINS[domain].leaf.to_lowercase())
}

/// Three novel slots per table, each novel entity in exactly two tables.
fn novel_schedule(rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    loop {
        let mut slots: Vec<usize> = (0..NOVEL_PER_DOMAIN).chain(0..NOVEL_PER_DOMAIN).collect();
        slots.shuffle(rng);
        let chunks: Vec<Vec<usize>> = slots.chunks(3).map(|c| c.to_vec()).collect();
        let ok = chunks
            .iter()
            .all(|c| c.iter().collect::<BTreeSet<_>>().len() == c.len());
        if ok {
            return chunks;
        }
    }
}

/// Gold pairs: every pair of entity occurrences that shares the key or a
/// token, labelled by whether both refer to the same underlying entity.
fn resolution_pairs(occurrences: &[(Occurrence, String)]) -> BTreeMap<OccurrencePair, bool> {
    let toks: Vec<BTreeSet<String>> = occurrences
        .iter()
        .map(|(o, _)| tokens(o.key.as_str()).into_iter().collect())
        .collect();
    let mut out = BTreeMap::new();
    for i in 0..occurrences.len() {
        for j in i + 1..occurrences.len() {
            let (a, ea) = &occurrences[i];
            let (b, eb) = &occurrences[j];
            if a.table_id == b.table_id {
                continue;
            }
            if a.key == b.key || !toks[i].is_disjoint(&toks[j]) {
                out.insert(OccurrencePair::new(a.clone(), b.clone()), ea == eb);
            }
        }
    }
    out
}

fn build_embeddings(
    rng: &mut ChaCha8Rng,
    entities: &[GenEntity],
    kb: &KbSnapshot,
    tables: &[Table],
) -> TermEmbeddings {
    let centroids: Vec<Vec<f64>> = (0..DOMAINS.len())
        .map(|_| (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut domains_of: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut note = |text: &str, d: usize| {
        for t in tokens(text) {
            domains_of.entry(t).or_default().insert(d);
        }
    };
    for (e, ke) in entities.iter().zip(kb.entities()) {
        note(&ke.label, e.domain);
        note(&ke.description, e.domain);
        for f in &e.mention_forms {
            note(f, e.domain);
        }
    }
    for (d, domain) in DOMAINS.iter().enumerate() {
        for t in domain.chain {
            note(&crate::sim::identifier_words(t), d);
        }
    }
    for (i, t) in tables.iter().enumerate() {
        let d = i / TABLES_PER_DOMAIN;
        for row in &t.rows {
            note(&row[t.core_column_index], d);
        }
    }
    let mut emb = TermEmbeddings::new(EMBEDDING_DIM);
    for (token, ds) in domains_of {
        let v: Vec<f64> = (0..EMBEDDING_DIM)
            .map(|k| {
                let c: f64 = ds.iter().map(|&d| centroids[d][k]).sum::<f64>() / ds.len() as f64;
                c + rng.gen_range(-0.25..0.25)
            })
            .collect();
        emb.insert(&token, v).expect("dimension matches");
    }
    emb
}

impl Fixture {
    /// Writes corpus, KB, embeddings, gold files and a pipeline config into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("gold")).map_err(|e| Error::io(dir, e))?;
        let corpus_path = dir.join(files::CORPUS);
        let f = File::create(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
        write_corpus(BufWriter::new(f), &self.tables).map_err(|e| Error::io(&corpus_path, e))?;
        self.kb.write_dir(&dir.join(files::KB_DIR))?;
        let emb_path = dir.join(files::EMBEDDINGS);
        let f = File::create(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
        self.embeddings
            .write(BufWriter::new(f))
            .map_err(|e| Error::io(&emb_path, e))?;
        let g = &self.gold;
        write_gold_links(&dir.join(files::LINKS_TRAIN), &g.links_train)?;
        write_gold_links(&dir.join(files::LINKS_TEST), &g.links_test)?;
        write_gold_headings(&dir.join(files::HEADINGS_TRAIN), &g.headings_train)?;
        write_gold_headings(&dir.join(files::HEADINGS_TEST), &g.headings_test)?;
        write_gold_verdicts(&dir.join(files::VERDICTS_TRAIN), &g.verdicts_train)?;
        write_gold_verdicts(&dir.join(files::VERDICTS_TEST), &g.verdicts_test)?;
        write_gold_resolution(&dir.join(files::RESOLUTION_TRAIN), &g.resolution_train)?;
        write_gold_resolution(&dir.join(files::RESOLUTION_TEST), &g.resolution_test)?;
        let config = format!(
            "# generated fixture configuration\n\
             corpus = {}\nkb = {}\nembeddings = {}\nout = out\n\
             gold.links_train = {}\ngold.headings_train = {}\n\
             gold.verdicts_train = {}\ngold.resolution_train = {}\n",
            files::CORPUS,
            files::KB_DIR,
            files::EMBEDDINGS,
            files::LINKS_TRAIN,
            files::HEADINGS_TRAIN,
            files::VERDICTS_TRAIN,
            files::RESOLUTION_TRAIN,
        );
        let conf_path = dir.join(files::CONFIG);
        std::fs::write(&conf_path, config).map_err(|e| Error::io(&conf_path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_noise_mention;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7);
        let b = generate(7);
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.gold.resolution_train, b.gold.resolution_train);
        assert_eq!(a.kb.len(), 300);
        assert_eq!(a.tables.len(), 40);
    }

    #[test]
    fn tables_validate_and_noise_is_recognized() {
        let f = generate(1);
        for t in &f.tables {
            t.validate().unwrap();
            assert_eq!(t.rows.len(), 15);
        }
        for (k, v) in f.gold.all_verdicts() {
            assert_eq!(is_noise_mention(k.as_str()), v == VerdictClass::NotEntity, "{k}");
        }
    }

    #[test]
    fn gold_links_point_to_kb_entities() {
        let f = generate(3);
        for c in f.gold.links_train.iter().chain(&f.gold.links_test) {
            assert!(f.kb.entity(&crate::kb::EntityId::new(c.value.clone())).is_some());
        }
        assert_eq!(f.test_tables.len(), 8);
        assert!(f.gold.resolution_train.values().any(|&s| s));
        assert!(f.gold.resolution_train.values().any(|&s| !s));
    }

    #[test]
    fn hard_negative_pair_is_in_gold() {
        let f = generate(42);
        let mut all = f.gold.resolution_train.clone();
        all.extend(f.gold.resolution_test.clone());
        let hit = all.iter().any(|(p, &same)| {
            !same
                && p.0.key.as_str().starts_with("trustees of boston")
                && p.1.key.as_str().starts_with("trustees of boston")
                && p.0.key != p.1.key
        });
        assert!(hit);
    }
}
