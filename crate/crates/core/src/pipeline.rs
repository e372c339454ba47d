//! Batch stages over files in an output directory.
//!
//! Every stage reads its inputs from the configured corpus and KB plus the
//! files written by earlier stages, so running stages one at a time gives
//! the same outputs as [`run_pipeline`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{read_corpus, write_corpus, MentionKey, Table};
use crate::discover::{
    self, build_dossiers, classify_all, family_schema, parse_families, write_verdicts, Discoverer,
    DiscoveryConfig, DiscoveryFeatureVector, DiscoveryModels, DiscoveryMode, MentionDossier, Verdict, VerdictClass,
};
use crate::eval::{self, Correspondence, EvalReport, OccurrencePair};
use crate::headmatch::{self, match_corpus, write_headings, HeadingMatch};
use crate::kb::{load_snapshot, KbSnapshot, PropertyId, SnapshotPaths};
use crate::learn::{train, Dataset, ForestConfig, TreeEnsembleModel};
use crate::link::{link_correspondences, read_links, restore_table_links, write_links, LinkConfig, Linker, TableLinks};
use crate::resolve::{self, read_clusters, train_mention_embeddings, write_clusters, MentionEmbeddings, ResolveConfig, Resolver};
use crate::retrieve::{SearchFields, SearchIndex, DEFAULT_POPULARITY_LAMBDA};
use crate::sim::TermEmbeddings;
use crate::{Error, Result};

/// Output file names inside the output directory.
pub mod outputs {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const INGEST_WARNINGS: &str = "ingest_warnings.txt";
    pub const INDEX: &str = "index.bin";
    pub const WD_INDEX: &str = "wd_index.bin";
    pub const LINKS: &str = "links.tsv";
    pub const HEADINGS: &str = "headings.tsv";
    pub const VERDICTS: &str = "verdicts.tsv";
    pub const CLUSTERS: &str = "clusters.jsonl";
    pub const MENTION_EMBEDDINGS: &str = "mention_embeddings.txt";
    pub const MANIFEST: &str = "manifest.json";
    pub const MODELS: &str = "models";
}

/// Model files trained or loaded by the stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Link,
    Headings,
    Discover,
    DiscoverNotEntity,
    Resolve,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Link,
        Task::Headings,
        Task::Discover,
        Task::DiscoverNotEntity,
        Task::Resolve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Link => "link",
            Task::Headings => "headings",
            Task::Discover => "discover",
            Task::DiscoverNotEntity => "discover_not_entity",
            Task::Resolve => "resolve",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Typed pipeline configuration built from flat `key = value` settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub models: BTreeMap<Task, PathBuf>,
    pub gold_links: Option<PathBuf>,
    pub gold_headings: Option<PathBuf>,
    pub gold_verdicts: Option<PathBuf>,
    pub gold_resolution: Option<PathBuf>,
    pub index_fields: SearchFields,
    pub wd_fields: SearchFields,
    pub popularity_lambda: f64,
    pub link: LinkConfig,
    pub discover: DiscoveryConfig,
    pub resolve: ResolveConfig,
    pub forest: ForestConfig,
    pub seed: u64,
    /// Settings as given, after path resolution; recorded in the manifest.
    pub settings: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            kb: None,
            embeddings: None,
            out_dir: PathBuf::from("out"),
            models: BTreeMap::new(),
            gold_links: None,
            gold_headings: None,
            gold_verdicts: None,
            gold_resolution: None,
            index_fields: SearchFields::TitleOnly,
            wd_fields: SearchFields::TitleOnly,
            popularity_lambda: DEFAULT_POPULARITY_LAMBDA,
            link: LinkConfig::default(),
            discover: DiscoveryConfig::default(),
            resolve: ResolveConfig::default(),
            forest: ForestConfig::default(),
            seed: 42,
            settings: BTreeMap::new(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_settings(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Loads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = PipelineConfig::default();
        cfg.out_dir = base.join("out");
        for (k, v) in parse_settings(&text)? {
            cfg.set(&k, &v, base)?;
        }
        Ok(cfg)
    }

    /// Applies one setting. Relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || {
            let p = PathBuf::from(value);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let recorded = match key {
            "corpus" | "kb" | "embeddings" | "out" => Some(path()),
            k if k.starts_with("model.") || k.starts_with("gold.") => Some(path()),
            _ => None,
        };
        match key {
            "corpus" => self.corpus = recorded.clone(),
            "kb" => self.kb = recorded.clone(),
            "embeddings" => self.embeddings = recorded.clone(),
            "out" => self.out_dir = path(),
            "gold.links_train" => self.gold_links = recorded.clone(),
            "gold.headings_train" => self.gold_headings = recorded.clone(),
            "gold.verdicts_train" => self.gold_verdicts = recorded.clone(),
            "gold.resolution_train" => self.gold_resolution = recorded.clone(),
            k if k.starts_with("model.") => {
                let task: Task = k["model.".len()..].parse().map_err(Error::Config)?;
                self.models.insert(task, path());
            }
            "seed" => self.seed = parse_value(key, value)?,
            "retrieval.k" => self.link.top_k = parse_value(key, value)?,
            "retrieval.fields" => self.index_fields = value.parse().map_err(Error::Config)?,
            "retrieval.lambda" => self.popularity_lambda = parse_value(key, value)?,
            "link.vote_expanded" => self.link.vote_expanded_types = parse_bool(key, value)?,
            "link.fallback" => self.link.empty_vote_fallback = parse_bool(key, value)?,
            "link.selection" => self.link.selection = value.parse().map_err(Error::Config)?,
            "discover.wd_k" => self.discover.wd_k = parse_value(key, value)?,
            "discover.wd_fields" => self.wd_fields = value.parse().map_err(Error::Config)?,
            "discover.collapse" => self.discover.collapse_identical_cores = parse_bool(key, value)?,
            "discover.families" => self.discover.families = parse_families(value).map_err(Error::Config)?,
            "discover.mode" => self.discover.mode = value.parse().map_err(Error::Config)?,
            "resolve.theta" => self.resolve.theta = parse_value(key, value)?,
            "resolve.surface_mode" => self.resolve.surface_mode = value.parse().map_err(Error::Config)?,
            "resolve.block_max_df" => self.resolve.block_max_df = parse_value(key, value)?,
            "mention2vec.dim" => self.resolve.mention2vec.dimension = parse_value(key, value)?,
            "mention2vec.window" => self.resolve.mention2vec.window = parse_value(key, value)?,
            "mention2vec.negatives" => self.resolve.mention2vec.negatives = parse_value(key, value)?,
            "mention2vec.epochs" => self.resolve.mention2vec.epochs = parse_value(key, value)?,
            "mention2vec.min_count" => self.resolve.mention2vec.min_count = parse_value(key, value)?,
            "forest.trees" => self.forest.n_trees = parse_value(key, value)?,
            "forest.max_depth" => self.forest.max_depth = parse_value(key, value)?,
            "forest.min_split" => self.forest.min_samples_split = parse_value(key, value)?,
            "forest.max_features" => {
                self.forest.max_features = if value == "sqrt" { None } else { Some(parse_value(key, value)?) }
            }
            _ => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        if self.link.top_k == 0 {
            return Err(Error::Config("retrieval.k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.resolve.theta) {
            return Err(Error::Config("resolve.theta must lie in [0, 1]".into()));
        }
        let shown = recorded.map_or_else(|| value.to_string(), |p| p.display().to_string());
        self.settings.insert(key.to_string(), shown);
        Ok(())
    }

    /// Checks that every configured input path exists.
    pub fn validate(&self) -> Result<()> {
        let missing = |p: &Path| Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound));
        let corpus = self.require(&self.corpus, "corpus")?;
        if !corpus.is_file() {
            return Err(missing(corpus));
        }
        let kb = self.require(&self.kb, "kb")?;
        for p in SnapshotPaths::in_dir(kb).all() {
            if !p.is_file() {
                return Err(missing(p));
            }
        }
        let optional = [&self.embeddings, &self.gold_links, &self.gold_headings, &self.gold_verdicts, &self.gold_resolution];
        for p in optional.into_iter().flatten().chain(self.models.values()) {
            if !p.exists() {
                return Err(missing(p));
            }
        }
        Ok(())
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn model_out(&self, task: Task) -> PathBuf {
        self.out_dir.join(outputs::MODELS).join(format!("{}.json", task.name()))
    }

    /// Forest settings for `task`, with a seed derived from the global seed.
    pub fn forest_for(&self, task: Task) -> ForestConfig {
        ForestConfig {
            seed: stage_seed(self.seed, task.name()),
            ..self.forest.clone()
        }
    }

    fn resolve_config(&self) -> ResolveConfig {
        let mut r = self.resolve.clone();
        r.mention2vec.seed = stage_seed(self.seed, "mention2vec");
        r
    }
}

/// Seed for a named stage, stable across platforms.
pub fn stage_seed(global: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}:{tag}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Corpus, KB and term embeddings.
pub struct Inputs {
    pub tables: Vec<Table>,
    pub kb: KbSnapshot,
    pub emb: TermEmbeddings,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Inputs> {
        let corpus = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
        let kb = load_snapshot(&SnapshotPaths::in_dir(cfg.require(&cfg.kb, "kb")?))?;
        let emb = match &cfg.embeddings {
            Some(p) => TermEmbeddings::load(p)?,
            None => TermEmbeddings::new(1),
        };
        Ok(Inputs { tables: corpus.tables, kb, emb })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub counts: BTreeMap<String, usize>,
    pub outputs: Vec<String>,
}

/// Run metadata: settings, input digests and per-stage statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn input_digests(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if let Some(p) = &cfg.corpus {
        out.insert("corpus".into(), file_digest(p)?);
    }
    if let Some(dir) = &cfg.kb {
        for p in SnapshotPaths::in_dir(dir).all() {
            let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            out.insert(format!("kb/{name}"), file_digest(p)?);
        }
    }
    if let Some(p) = &cfg.embeddings {
        out.insert("embeddings".into(), file_digest(p)?);
    }
    Ok(out)
}

fn record_stage(cfg: &PipelineConfig, stage: &str, rec: StageRecord) -> Result<()> {
    let path = cfg.out(outputs::MANIFEST);
    let mut m = match std::fs::read_to_string(&path) {
        Ok(s) => serde_json::from_str(&s).unwrap_or_default(),
        Err(_) => RunManifest::default(),
    };
    m.version = env!("CARGO_PKG_VERSION").to_string();
    m.seed = cfg.seed;
    m.settings = cfg.settings.clone();
    m.inputs = input_digests(cfg)?;
    m.stages.insert(stage.to_string(), rec);
    let s = serde_json::to_string_pretty(&m).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&path, s + "\n").map_err(|e| Error::io(&path, e))
}

fn create_out(cfg: &PipelineConfig) -> Result<()> {
    let dir = cfg.out_dir.join(outputs::MODELS);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    f(BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn finish(self, counts: &[(&str, usize)], outputs: &[&str]) -> StageRecord {
        StageRecord {
            seconds: self.0.elapsed().as_secs_f64(),
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Validates the corpus and writes its canonical form with a warnings list.
pub fn stage_ingest(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let parsed = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    write_file(&cfg.out(outputs::CORPUS), |w| write_corpus(w, &parsed.tables))?;
    let warnings: String = parsed
        .warnings
        .iter()
        .map(|w| format!("line {}: {}\n", w.line, w.message))
        .collect();
    let wpath = cfg.out(outputs::INGEST_WARNINGS);
    std::fs::write(&wpath, warnings).map_err(|e| Error::io(&wpath, e))?;
    let rec = timer.finish(
        &[("tables", parsed.tables.len()), ("warnings", parsed.warnings.len())],
        &[outputs::CORPUS, outputs::INGEST_WARNINGS],
    );
    record_stage(cfg, "ingest", rec.clone())?;
    Ok(rec)
}

/// Builds the retrieval index and, if it uses other fields, the distance index.
pub fn stage_index(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let kb = load_snapshot(&SnapshotPaths::in_dir(cfg.require(&cfg.kb, "kb")?))?;
    let index = SearchIndex::build_with_lambda(&kb, cfg.index_fields, cfg.popularity_lambda);
    index.save(&cfg.out(outputs::INDEX))?;
    let mut outs = vec![outputs::INDEX];
    if cfg.wd_fields != cfg.index_fields {
        SearchIndex::build_with_lambda(&kb, cfg.wd_fields, cfg.popularity_lambda).save(&cfg.out(outputs::WD_INDEX))?;
        outs.push(outputs::WD_INDEX);
    }
    let rec = timer.finish(&[("documents", index.num_docs())], &outs);
    record_stage(cfg, "build-index", rec.clone())?;
    Ok(rec)
}

/// Loads a saved index when its settings match, otherwise builds one.
fn obtain_index(cfg: &PipelineConfig, kb: &KbSnapshot, fields: SearchFields) -> Result<SearchIndex> {
    for name in [outputs::INDEX, outputs::WD_INDEX] {
        let p = cfg.out(name);
        if p.exists() {
            let idx = SearchIndex::load(&p)?;
            if idx.fields() == fields && idx.lambda() == cfg.popularity_lambda && idx.num_docs() == kb.len() {
                return Ok(idx);
            }
        }
    }
    Ok(SearchIndex::build_with_lambda(kb, fields, cfg.popularity_lambda))
}

/// A configured model file, or a fresh model trained from gold and saved under
/// the output directory.
fn obtain_model(
    cfg: &PipelineConfig,
    task: Task,
    train_fn: impl FnOnce() -> Result<TreeEnsembleModel>,
) -> Result<TreeEnsembleModel> {
    if let Some(p) = cfg.models.get(&task) {
        return TreeEnsembleModel::load(p);
    }
    let model = train_fn()?;
    model.save(&cfg.model_out(task))?;
    Ok(model)
}

fn gold_path(p: &Option<PathBuf>, task: Task) -> Result<&Path> {
    p.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "no `model.{}` and no training gold for it",
            task.name()
        ))
    })
}

/// Link training examples from the configured gold.
pub fn link_dataset(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Dataset> {
    let gold = eval::read_gold_links(gold_path(&cfg.gold_links, Task::Link)?)?;
    let index = obtain_index(cfg, &inputs.kb, cfg.index_fields)?;
    let linker = Linker { kb: &inputs.kb, index: &index, emb: &inputs.emb, config: cfg.link };
    linker.training_set(&inputs.tables, &gold)
}

pub fn stage_link(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let inputs = Inputs::load(cfg)?;
    let index = obtain_index(cfg, &inputs.kb, cfg.index_fields)?;
    let linker = Linker { kb: &inputs.kb, index: &index, emb: &inputs.emb, config: cfg.link };
    let model = obtain_model(cfg, Task::Link, || {
        let gold = eval::read_gold_links(gold_path(&cfg.gold_links, Task::Link)?)?;
        train(&linker.training_set(&inputs.tables, &gold)?, &cfg.forest_for(Task::Link))
    })?;
    let links = linker.link_corpus(&inputs.tables, &model)?;
    write_file(&cfg.out(outputs::LINKS), |w| write_links(w, &links))?;
    let linked: usize = links.iter().map(TableLinks::num_linked).sum();
    let propagated = links.iter().flat_map(|t| &t.mentions).filter(|m| m.propagated).count();
    let rec = timer.finish(
        &[
            ("tables", links.len()),
            ("linkable_tables", links.iter().filter(|l| l.is_linkable()).count()),
            ("linked", linked),
            ("propagated", propagated),
        ],
        &[outputs::LINKS],
    );
    record_stage(cfg, "link", rec.clone())?;
    Ok(rec)
}

fn load_links(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Vec<TableLinks>> {
    let path = cfg.out(outputs::LINKS);
    if !path.exists() {
        return Err(Error::Config(format!("{} is missing; run the link stage first", path.display())));
    }
    restore_table_links(&inputs.tables, &read_links(&path)?, &inputs.kb)
}

pub fn headings_dataset(cfg: &PipelineConfig, inputs: &Inputs, links: &[TableLinks]) -> Result<Dataset> {
    let gold = eval::read_gold_headings(gold_path(&cfg.gold_headings, Task::Headings)?)?;
    headmatch::training_set(&inputs.tables, links, &inputs.kb, &gold)
}

pub fn stage_headings(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let inputs = Inputs::load(cfg)?;
    let links = load_links(cfg, &inputs)?;
    let model = obtain_model(cfg, Task::Headings, || {
        train(&headings_dataset(cfg, &inputs, &links)?, &cfg.forest_for(Task::Headings))
    })?;
    let matches = match_corpus(&inputs.tables, &links, &inputs.kb, &model)?;
    write_file(&cfg.out(outputs::HEADINGS), |w| write_headings(w, &inputs.tables, &matches))?;
    let matched: usize = matches.iter().map(HeadingMatch::num_matched).sum();
    let rec = timer.finish(&[("tables", matches.len()), ("matched", matched)], &[outputs::HEADINGS]);
    record_stage(cfg, "match-headings", rec.clone())?;
    Ok(rec)
}

fn load_headings(cfg: &PipelineConfig, tables: &[Table]) -> Result<Vec<HeadingMatch>> {
    let path = cfg.out(outputs::HEADINGS);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} is missing; run the match-headings stage first",
            path.display()
        )));
    }
    let corr = headmatch::read_headings(&path)?;
    let mut by: BTreeMap<&str, Vec<&Correspondence>> = BTreeMap::new();
    for c in &corr {
        by.entry(c.table_id.as_str()).or_default().push(c);
    }
    Ok(tables
        .iter()
        .filter_map(|t| {
            let cs = by.get(t.id.as_str())?;
            let mut columns = vec![None; t.num_columns()];
            for c in cs {
                if let Some(slot) = columns.get_mut(c.position) {
                    *slot = Some((PropertyId::new(c.value.clone()), 1.0));
                }
            }
            Some(HeadingMatch { table_id: t.id.clone(), columns })
        })
        .collect())
}

/// Dossiers and their full feature vectors, computed from the stage files.
pub struct DiscoveryState {
    pub dossiers: BTreeMap<MentionKey, MentionDossier>,
    pub features: BTreeMap<MentionKey, DiscoveryFeatureVector>,
}

pub fn discovery_state(cfg: &PipelineConfig, inputs: &Inputs) -> Result<DiscoveryState> {
    let links = load_links(cfg, inputs)?;
    let headings = load_headings(cfg, &inputs.tables)?;
    let dossiers = build_dossiers(&inputs.tables, &links, &headings);
    let index = obtain_index(cfg, &inputs.kb, cfg.index_fields)?;
    let wd_index = if cfg.wd_fields == cfg.index_fields {
        None
    } else {
        Some(obtain_index(cfg, &inputs.kb, cfg.wd_fields)?)
    };
    let d = Discoverer::new(
        &inputs.kb,
        &index,
        wd_index.as_ref().unwrap_or(&index),
        &inputs.emb,
        &links,
        cfg.discover.clone(),
    );
    let features = d.all_features(&dossiers)?;
    Ok(DiscoveryState { dossiers, features })
}

/// Training examples for one discovery classifier, projected to `families`.
pub fn discovery_dataset(
    cfg: &PipelineConfig,
    state: &DiscoveryState,
    target: VerdictClass,
    families: &[discover::FeatureFamily],
) -> Result<Dataset> {
    let gold = eval::read_gold_verdicts(gold_path(&cfg.gold_verdicts, Task::Discover)?)?;
    let full = discover::training_set(&state.features, &gold, target)?;
    let names = family_schema(families);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    full.project(&refs)
}

pub fn stage_discover(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let inputs = Inputs::load(cfg)?;
    let state = discovery_state(cfg, &inputs)?;
    let families = cfg.discover.families.clone();
    let binary = obtain_model(cfg, Task::Discover, || {
        let data = discovery_dataset(cfg, &state, VerdictClass::OutOfKb, &families)?;
        train(&data, &cfg.forest_for(Task::Discover))
    })?;
    let not_entity = if cfg.discover.mode == DiscoveryMode::ThreeWay {
        Some(obtain_model(cfg, Task::DiscoverNotEntity, || {
            let data = discovery_dataset(cfg, &state, VerdictClass::NotEntity, &families)?;
            train(&data, &cfg.forest_for(Task::DiscoverNotEntity))
        })?)
    } else {
        None
    };
    let models = DiscoveryModels { binary, not_entity };
    let verdicts = classify_all(&models, &state.dossiers, &state.features, cfg.discover.mode)?;
    write_file(&cfg.out(outputs::VERDICTS), |w| write_verdicts(w, &state.dossiers, &verdicts))?;
    let count = |c: VerdictClass| verdicts.values().filter(|v| v.class == c).count();
    let rec = timer.finish(
        &[
            ("dossiers", state.dossiers.len()),
            ("verdicts", verdicts.len()),
            ("in_kb", count(VerdictClass::InKb)),
            ("out_of_kb", count(VerdictClass::OutOfKb)),
            ("not_entity", count(VerdictClass::NotEntity)),
        ],
        &[outputs::VERDICTS],
    );
    record_stage(cfg, "discover", rec.clone())?;
    Ok(rec)
}

fn load_verdicts(cfg: &PipelineConfig) -> Result<BTreeMap<MentionKey, Verdict>> {
    let path = cfg.out(outputs::VERDICTS);
    if !path.exists() {
        return Err(Error::Config(format!("{} is missing; run the discover stage first", path.display())));
    }
    discover::read_verdicts(&path)
}

pub fn resolution_dataset(resolver: &Resolver<'_>, cfg: &PipelineConfig) -> Result<Dataset> {
    let gold = eval::read_gold_resolution(gold_path(&cfg.gold_resolution, Task::Resolve)?)?;
    resolver.training_set(&gold)
}

pub fn stage_resolve(cfg: &PipelineConfig) -> Result<StageRecord> {
    let timer = Timer::start();
    create_out(cfg)?;
    let inputs = Inputs::load(cfg)?;
    let links = load_links(cfg, &inputs)?;
    let verdicts = load_verdicts(cfg)?;
    let dossiers = build_dossiers(&inputs.tables, &links, &[]);
    let rcfg = cfg.resolve_config();
    let memb = train_mention_embeddings(&inputs.tables, &rcfg.mention2vec);
    write_file(&cfg.out(outputs::MENTION_EMBEDDINGS), |w| memb.write(w))?;
    let resolver = Resolver::new(&inputs.tables, &links, &inputs.kb, &memb, rcfg.clone())?;
    let model = match rcfg.surface_mode {
        resolve::SurfaceMode::Embedding => None,
        resolve::SurfaceMode::Model => Some(obtain_model(cfg, Task::Resolve, || {
            train(&resolution_dataset(&resolver, cfg)?, &cfg.forest_for(Task::Resolve))
        })?),
    };
    let occurrences = Resolver::occurrences(&dossiers, &verdicts);
    let clusters = resolver.resolve(&occurrences, model.as_ref())?;
    write_file(&cfg.out(outputs::CLUSTERS), |w| write_clusters(w, &clusters))?;
    let multi = clusters.iter().filter(|c| c.members.len() > 1).count();
    let rec = timer.finish(
        &[
            ("occurrences", occurrences.len()),
            ("clusters", clusters.len()),
            ("multi_member_clusters", multi),
        ],
        &[outputs::CLUSTERS, outputs::MENTION_EMBEDDINGS],
    );
    record_stage(cfg, "resolve", rec.clone())?;
    Ok(rec)
}

/// All stages in order.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    stage_ingest(cfg)?;
    stage_index(cfg)?;
    stage_link(cfg)?;
    stage_headings(cfg)?;
    stage_discover(cfg)?;
    stage_resolve(cfg)?;
    let path = cfg.out(outputs::MANIFEST);
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Serde(e.to_string()))
}

/// Trains the model of `task` from the configured gold and earlier stage files.
pub fn train_task(cfg: &PipelineConfig, task: Task) -> Result<TreeEnsembleModel> {
    let inputs = Inputs::load(cfg)?;
    let data = task_dataset(cfg, &inputs, task, &cfg.discover.families)?;
    train(&data, &cfg.forest_for(task))
}

/// Training examples of `task`; `families` applies to the discovery tasks.
pub fn task_dataset(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    task: Task,
    families: &[discover::FeatureFamily],
) -> Result<Dataset> {
    match task {
        Task::Link => link_dataset(cfg, inputs),
        Task::Headings => headings_dataset(cfg, inputs, &load_links(cfg, inputs)?),
        Task::Discover | Task::DiscoverNotEntity => {
            let state = discovery_state(cfg, inputs)?;
            let target = if task == Task::Discover { VerdictClass::OutOfKb } else { VerdictClass::NotEntity };
            discovery_dataset(cfg, &state, target, families)
        }
        Task::Resolve => {
            let links = load_links(cfg, inputs)?;
            let rcfg = cfg.resolve_config();
            let memb = train_mention_embeddings(&inputs.tables, &rcfg.mention2vec);
            let resolver = Resolver::new(&inputs.tables, &links, &inputs.kb, &memb, rcfg)?;
            resolution_dataset(&resolver, cfg)
        }
    }
}

/// Gold file layouts accepted by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoldFormat {
    Csv,
    /// Directory of per-table CSV files; the value is the number of header rows.
    T2d(usize),
}

pub fn evaluate_links(gold: &Path, format: GoldFormat, predicted: &Path) -> Result<EvalReport> {
    let g = match format {
        GoldFormat::Csv => eval::read_gold_links(gold)?,
        GoldFormat::T2d(h) => eval::read_t2d_links(gold, h)?,
    };
    let p: BTreeSet<Correspondence> = read_links(predicted)?
        .into_iter()
        .map(|r| Correspondence::new(r.table_id, r.row_index, eval::strip_uri(r.entity_id.as_str())))
        .collect();
    let g: BTreeSet<Correspondence> = g
        .into_iter()
        .map(|c| Correspondence::new(c.table_id, c.position, eval::strip_uri(&c.value)))
        .collect();
    let r = eval::macro_prf(&g, &p)?;
    Ok(EvalReport::from_macro("link", &r, p.len(), g.len()))
}

pub fn evaluate_headings(gold: &Path, format: GoldFormat, predicted: &Path) -> Result<EvalReport> {
    let g = match format {
        GoldFormat::Csv => eval::read_gold_headings(gold)?,
        GoldFormat::T2d(_) => eval::read_t2d_headings(gold)?,
    };
    let strip = |s: BTreeSet<Correspondence>| -> BTreeSet<Correspondence> {
        s.into_iter()
            .map(|c| Correspondence::new(c.table_id, c.position, eval::strip_uri(&c.value)))
            .collect()
    };
    let (g, p) = (strip(g), strip(headmatch::read_headings(predicted)?));
    let r = eval::macro_prf(&g, &p)?;
    Ok(EvalReport::from_macro("headings", &r, p.len(), g.len()))
}

pub fn evaluate_verdicts(gold: &Path, predicted: &Path) -> Result<EvalReport> {
    let g = eval::read_gold_verdicts(gold)?;
    let p: BTreeMap<MentionKey, VerdictClass> = discover::read_verdicts(predicted)?
        .into_iter()
        .map(|(k, v)| (k, v.class))
        .collect();
    let acc = eval::accuracy(&g, &p)?;
    let mut counts = eval::BinaryCounts::default();
    for (k, v) in &g {
        if *v == VerdictClass::NotEntity {
            continue;
        }
        counts.record(*v == VerdictClass::OutOfKb, p.get(k) == Some(&VerdictClass::OutOfKb));
    }
    let mut metrics = BTreeMap::from([("accuracy".to_string(), acc)]);
    for (k, v) in counts.metrics() {
        if k != "accuracy" {
            metrics.insert(format!("out_of_kb_{k}"), v);
        }
    }
    Ok(EvalReport {
        task: "discover".into(),
        metrics,
        counts: BTreeMap::from([
            ("gold".into(), g.len()),
            ("predicted".into(), p.len()),
            ("missing".into(), g.keys().filter(|k| !p.contains_key(*k)).count()),
        ]),
    })
}

pub fn evaluate_resolution(gold: &Path, predicted: &Path) -> Result<EvalReport> {
    let g: BTreeMap<OccurrencePair, bool> = eval::read_gold_resolution(gold)?;
    let clusters = read_clusters(predicted)?;
    let p = resolve::cluster_predictions(&clusters, &g);
    let acc = eval::accuracy(&g, &p)?;
    let mut counts = eval::BinaryCounts::default();
    for (k, v) in &g {
        counts.record(*v, p[k]);
    }
    let mut metrics = counts.metrics();
    metrics.insert("accuracy".into(), acc);
    Ok(EvalReport {
        task: "resolve".into(),
        metrics,
        counts: BTreeMap::from([("pairs".into(), g.len()), ("clusters".into(), clusters.len())]),
    })
}

/// Loads mention embeddings written by the resolve stage.
pub fn load_mention_embeddings(cfg: &PipelineConfig) -> Result<MentionEmbeddings> {
    MentionEmbeddings::load(&cfg.out(outputs::MENTION_EMBEDDINGS))
}

/// Link correspondences of a finished run, for callers that evaluate in memory.
pub fn predicted_links(cfg: &PipelineConfig) -> Result<BTreeSet<Correspondence>> {
    let inputs = Inputs::load(cfg)?;
    Ok(link_correspondences(&load_links(cfg, &inputs)?))
}
