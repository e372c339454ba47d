//! Knowledge-base snapshot: typed entities, a type hierarchy, surface forms
//! and subject-predicate-object triples, loaded from five TSV files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, MentionKey};
use crate::error::{Error, Result};

macro_rules! id_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_newtype!(EntityId);
id_newtype!(TypeId);
id_newtype!(
    /// KB predicate identifier, e.g. `populationTotal`.
    PropertyId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntity {
    pub id: EntityId,
    pub label: String,
    pub popularity: f64,
    pub description: String,
    pub types: Vec<TypeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: PropertyId,
    pub object: String,
}

#[derive(Debug, Clone, Default)]
pub struct TypeHierarchy {
    parent: BTreeMap<TypeId, Option<TypeId>>,
}

impl TypeHierarchy {
    pub fn contains(&self, t: &TypeId) -> bool {
        self.parent.contains_key(t)
    }

    pub fn parent(&self, t: &TypeId) -> Option<&TypeId> {
        self.parent.get(t).and_then(Option::as_ref)
    }

    /// `t` followed by its ancestors up to the root.
    pub fn chain(&self, t: &TypeId) -> Vec<TypeId> {
        let mut out = vec![t.clone()];
        let mut cur = t;
        while let Some(p) = self.parent(cur) {
            out.push(p.clone());
            cur = p;
        }
        out
    }

    /// Distance to the root (roots have depth 0).
    pub fn depth(&self, t: &TypeId) -> usize {
        self.chain(t).len() - 1
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TypeId, Option<&TypeId>)> {
        self.parent.iter().map(|(k, v)| (k, v.as_ref()))
    }

    fn check(&self) -> std::result::Result<(), String> {
        for (t, p) in &self.parent {
            if let Some(p) = p {
                if !self.parent.contains_key(p) {
                    return Err(format!("type `{t}` has unknown parent `{p}`"));
                }
            }
        }
        for t in self.parent.keys() {
            let mut seen = HashSet::new();
            let mut cur = Some(t);
            while let Some(c) = cur {
                if !seen.insert(c) {
                    return Err(format!("type hierarchy cycle through `{t}`"));
                }
                cur = self.parent(c);
            }
        }
        Ok(())
    }
}

/// Immutable KB snapshot.
#[derive(Debug, Clone, Default)]
pub struct KbSnapshot {
    entities: Vec<KbEntity>,
    by_id: HashMap<EntityId, usize>,
    hierarchy: TypeHierarchy,
    surface_index: HashMap<String, Vec<EntityId>>,
    entity_forms: Vec<Vec<String>>,
    triples: Vec<Vec<Triple>>,
    expanded: Vec<Vec<TypeId>>,
}

impl KbSnapshot {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[KbEntity] {
        &self.entities
    }

    pub fn hierarchy(&self) -> &TypeHierarchy {
        &self.hierarchy
    }

    pub fn entity(&self, id: &EntityId) -> Option<&KbEntity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    fn index_of(&self, id: &EntityId) -> Result<usize> {
        self.by_id.get(id).copied().ok_or_else(|| Error::Lookup {
            kind: "entity",
            id: id.0.clone(),
        })
    }

    /// Direct types plus all ancestors, most specific first.
    pub fn expanded_types(&self, id: &EntityId) -> Result<&[TypeId]> {
        Ok(&self.expanded[self.index_of(id)?])
    }

    /// Raw surface forms of an entity; the canonical label comes first.
    pub fn surface_forms(&self, id: &EntityId) -> Result<&[String]> {
        Ok(&self.entity_forms[self.index_of(id)?])
    }

    pub fn surface_lookup(&self, key: &MentionKey) -> &[EntityId] {
        self.surface_index
            .get(key.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn surface_index_len(&self) -> usize {
        self.surface_index.len()
    }

    pub fn triples(&self, id: &EntityId) -> Result<&[Triple]> {
        Ok(&self.triples[self.index_of(id)?])
    }

    /// Triples of `entities` grouped by predicate.
    pub fn properties_of<'a, I>(&self, entities: I) -> Result<BTreeMap<PropertyId, Vec<(EntityId, String)>>>
    where
        I: IntoIterator<Item = &'a EntityId>,
    {
        let mut out: BTreeMap<PropertyId, Vec<(EntityId, String)>> = BTreeMap::new();
        for id in entities {
            for t in self.triples(id)? {
                out.entry(t.predicate.clone())
                    .or_default()
                    .push((id.clone(), t.object.clone()));
            }
        }
        Ok(out)
    }

    /// Writes the snapshot as the five TSV files into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SnapshotPaths::in_dir(dir);
        let mut rows: Vec<Vec<String>> = self
            .entities
            .iter()
            .map(|e| {
                vec![e.id.0.clone(), e.label.clone(), fmt_f64(e.popularity), e.description.clone()]
            })
            .collect();
        write_tsv(&paths.entities, &rows)?;
        rows = self
            .entities
            .iter()
            .flat_map(|e| e.types.iter().map(move |t| vec![e.id.0.clone(), t.0.clone()]))
            .collect();
        write_tsv(&paths.types, &rows)?;
        rows = self
            .hierarchy
            .iter()
            .map(|(t, p)| vec![t.0.clone(), p.map(|p| p.0.clone()).unwrap_or_default()])
            .collect();
        write_tsv(&paths.hierarchy, &rows)?;
        rows = self
            .entities
            .iter()
            .zip(&self.entity_forms)
            .flat_map(|(e, forms)| {
                forms
                    .iter()
                    .skip(1)
                    .map(move |f| vec![f.clone(), e.id.0.clone()])
            })
            .collect();
        write_tsv(&paths.surface_forms, &rows)?;
        rows = self
            .triples
            .iter()
            .flatten()
            .map(|t| vec![t.subject.0.clone(), t.predicate.0.clone(), t.object.clone()])
            .collect();
        write_tsv(&paths.triples, &rows)
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Incremental construction with invariant checks at [`KbBuilder::build`].
#[derive(Debug, Default)]
pub struct KbBuilder {
    hierarchy: BTreeMap<TypeId, Option<TypeId>>,
    entities: Vec<KbEntity>,
    by_id: HashMap<EntityId, usize>,
    forms: Vec<Vec<String>>,
    triples: Vec<Vec<Triple>>,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_type(&mut self, t: impl Into<String>, parent: Option<&str>) -> &mut Self {
        self.hierarchy
            .insert(TypeId(t.into()), parent.map(|p| TypeId(p.to_string())));
        self
    }

    pub fn add_entity(
        &mut self,
        id: impl Into<String>,
        label: impl Into<String>,
        popularity: f64,
        description: impl Into<String>,
    ) -> std::result::Result<&mut Self, String> {
        let id = EntityId(id.into());
        if self.by_id.contains_key(&id) {
            return Err(format!("duplicate entity id `{id}`"));
        }
        if !(popularity >= 0.0 && popularity.is_finite()) {
            return Err(format!("entity `{id}` has invalid popularity {popularity}"));
        }
        let label = label.into();
        self.by_id.insert(id.clone(), self.entities.len());
        self.forms.push(vec![label.clone()]);
        self.triples.push(Vec::new());
        self.entities.push(KbEntity {
            id,
            label,
            popularity,
            description: description.into(),
            types: Vec::new(),
        });
        Ok(self)
    }

    fn idx(&self, id: &str) -> std::result::Result<usize, String> {
        self.by_id
            .get(&EntityId(id.to_string()))
            .copied()
            .ok_or_else(|| format!("unknown entity `{id}`"))
    }

    pub fn add_entity_type(&mut self, id: &str, t: &str) -> std::result::Result<&mut Self, String> {
        let i = self.idx(id)?;
        let t = TypeId(t.to_string());
        if !self.hierarchy.contains_key(&t) {
            return Err(format!("entity `{id}` references type `{t}` missing from the hierarchy"));
        }
        if !self.entities[i].types.contains(&t) {
            self.entities[i].types.push(t);
        }
        Ok(self)
    }

    pub fn add_surface_form(&mut self, form: &str, id: &str) -> std::result::Result<&mut Self, String> {
        let i = self.idx(id)?;
        if !self.forms[i].iter().any(|f| f == form) {
            self.forms[i].push(form.to_string());
        }
        Ok(self)
    }

    pub fn add_triple(&mut self, subject: &str, predicate: &str, object: &str) -> std::result::Result<&mut Self, String> {
        let i = self.idx(subject)?;
        self.triples[i].push(Triple {
            subject: EntityId(subject.to_string()),
            predicate: PropertyId(predicate.to_string()),
            object: object.to_string(),
        });
        Ok(self)
    }

    pub fn build(self) -> std::result::Result<KbSnapshot, String> {
        let hierarchy = TypeHierarchy {
            parent: self.hierarchy,
        };
        hierarchy.check()?;
        let mut surface_index: HashMap<String, Vec<EntityId>> = HashMap::new();
        for (e, forms) in self.entities.iter().zip(&self.forms) {
            for f in forms {
                let key = normalize_text(f);
                if key.is_empty() {
                    continue;
                }
                let ids = surface_index.entry(key).or_default();
                if !ids.contains(&e.id) {
                    ids.push(e.id.clone());
                }
            }
        }
        let expanded = self
            .entities
            .iter()
            .map(|e| expand_types(&hierarchy, &e.types))
            .collect();
        Ok(KbSnapshot {
            entities: self.entities,
            by_id: self.by_id,
            hierarchy,
            surface_index,
            entity_forms: self.forms,
            triples: self.triples,
            expanded,
        })
    }
}

/// Ancestor closure of `direct`, ordered by depth (deepest first), then first encounter.
fn expand_types(h: &TypeHierarchy, direct: &[TypeId]) -> Vec<TypeId> {
    let mut seen: Vec<TypeId> = Vec::new();
    for t in direct {
        for a in h.chain(t) {
            if !seen.contains(&a) {
                seen.push(a);
            }
        }
    }
    let mut keyed: Vec<(usize, usize, TypeId)> = seen
        .into_iter()
        .enumerate()
        .map(|(i, t)| (h.depth(&t), i, t))
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, t)| t).collect()
}

/// Locations of the five snapshot files.
#[derive(Debug, Clone)]
pub struct SnapshotPaths {
    pub entities: PathBuf,
    pub types: PathBuf,
    pub hierarchy: PathBuf,
    pub surface_forms: PathBuf,
    pub triples: PathBuf,
}

impl SnapshotPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SnapshotPaths {
            entities: dir.join("entities.tsv"),
            types: dir.join("types.tsv"),
            hierarchy: dir.join("type_hierarchy.tsv"),
            surface_forms: dir.join("surface_forms.tsv"),
            triples: dir.join("triples.tsv"),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [&self.entities, &self.types, &self.hierarchy, &self.surface_forms, &self.triples]
    }
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub(crate) fn write_tsv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| escape_field(f)).collect();
        writeln!(w, "{}", line.join("\t")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a TSV file into (line number, unescaped fields). Blank and `#` lines are skipped.
pub(crate) fn read_tsv(path: &Path, arity: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields: Vec<String> = line.split('\t').map(unescape_field).collect();
        if fields.len() == arity - 1 {
            // trailing empty field dropped by an editor
            fields.push(String::new());
        }
        if fields.len() != arity {
            return Err(Error::data(&name, i + 1, format!("expected {arity} fields, found {}", fields.len())));
        }
        out.push((i + 1, fields));
    }
    Ok(out)
}

/// Loads and validates a snapshot. Dangling references are fatal and report
/// the offending file and line.
pub fn load_snapshot(paths: &SnapshotPaths) -> Result<KbSnapshot> {
    for p in paths.all() {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "snapshot file missing")));
        }
    }
    let mut b = KbBuilder::new();
    let name = |p: &Path| p.display().to_string();

    for (_, f) in read_tsv(&paths.hierarchy, 2)? {
        let parent = (!f[1].is_empty()).then_some(f[1].as_str());
        b.add_type(f[0].clone(), parent);
    }
    for (line, f) in read_tsv(&paths.entities, 4)? {
        let pop: f64 = f[2]
            .parse()
            .map_err(|_| Error::data(name(&paths.entities), line, format!("bad popularity `{}`", f[2])))?;
        b.add_entity(f[0].clone(), f[1].clone(), pop, f[3].clone())
            .map_err(|m| Error::data(name(&paths.entities), line, m))?;
    }
    for (line, f) in read_tsv(&paths.types, 2)? {
        b.add_entity_type(&f[0], &f[1])
            .map_err(|m| Error::data(name(&paths.types), line, m))?;
    }
    for (line, f) in read_tsv(&paths.surface_forms, 2)? {
        b.add_surface_form(&f[0], &f[1])
            .map_err(|m| Error::data(name(&paths.surface_forms), line, m))?;
    }
    for (line, f) in read_tsv(&paths.triples, 3)? {
        b.add_triple(&f[0], &f[1], &f[2])
            .map_err(|m| Error::data(name(&paths.triples), line, m))?;
    }
    b.build().map_err(|m| Error::data(name(&paths.hierarchy), 0, m))
}
