//! `tablekb` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tablekb::fixture;
use tablekb::learn::{cross_validate, train, Dataset, TreeEnsembleModel};
use tablekb::pipeline::{self, outputs, GoldFormat, Inputs, PipelineConfig, StageRecord, Task};
use tablekb::Error;

#[derive(Parser)]
#[command(name = "tablekb", version, about = "Match web tables to a KB and discover novel entities")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override any config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    kb: Option<String>,
    #[arg(long, global = true)]
    embeddings: Option<String>,
    /// Output directory for stage files.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long = "top-k", global = true)]
    top_k: Option<String>,
    #[arg(long = "wd-topk", global = true)]
    wd_topk: Option<String>,
    #[arg(long = "wd-fields", global = true)]
    wd_fields: Option<String>,
    #[arg(long = "collapse-identical-cores", global = true)]
    collapse_identical_cores: Option<String>,
    #[arg(long, global = true)]
    families: Option<String>,
    #[arg(long = "discovery-mode", global = true)]
    discovery_mode: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long = "mention2vec-dim", global = true)]
    mention2vec_dim: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        let named = [
            ("corpus", &self.corpus),
            ("kb", &self.kb),
            ("embeddings", &self.embeddings),
            ("out", &self.out),
            ("seed", &self.seed),
            ("retrieval.k", &self.top_k),
            ("discover.wd_k", &self.wd_topk),
            ("discover.wd_fields", &self.wd_fields),
            ("discover.collapse", &self.collapse_identical_cores),
            ("discover.families", &self.families),
            ("discover.mode", &self.discovery_mode),
            ("resolve.theta", &self.theta),
            ("mention2vec.dim", &self.mention2vec_dim),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {s}` is not KEY=VALUE")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Link,
    Headings,
    Discover,
    Resolve,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    T2d,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the corpus.
    Ingest,
    /// Build the KB search index.
    BuildIndex,
    /// Link core-column mentions to KB entities.
    Link,
    /// Match column headings to KB properties.
    MatchHeadings,
    /// Classify unlinked mentions.
    Discover,
    /// Cluster mention occurrences into entities.
    Resolve,
    /// Run every stage in order.
    Run,
    /// Train the model of a task from a dataset TSV or the configured gold.
    Train {
        task: Task,
        /// Labelled dataset TSV; defaults to examples built from the configured gold.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Score a dataset TSV with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validate a task's classifier.
    Cv {
        task: Task,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Write a task's training examples as a dataset TSV.
    ExportDataset {
        task: Task,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Compare stage outputs against a gold standard.
    Eval {
        #[arg(value_enum)]
        task: EvalTask,
        #[arg(long)]
        gold: PathBuf,
        /// Prediction file; defaults to the stage output in the output directory.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Header rows counted in T2D row indices.
        #[arg(long, default_value_t = 1)]
        header_rows: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic fixture corpus, KB and gold files.
    GenFixture {
        /// Uses the global `--seed` (default 42).
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in cli.overrides.pairs()? {
        cfg.set(&k, &v, Path::new("."))?;
    }
    Ok(cfg)
}

fn print_stage(name: &str, rec: &StageRecord) {
    let counts: Vec<String> = rec.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{name}: {} ({:.2}s)", counts.join(" "), rec.seconds);
}

fn dataset_for(cfg: &PipelineConfig, task: Task, data: &Option<PathBuf>) -> Result<Dataset, Error> {
    match data {
        Some(p) => Dataset::read_tsv(p),
        None => {
            let inputs = Inputs::load(cfg)?;
            pipeline::task_dataset(cfg, &inputs, task, &cfg.discover.families)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    if let Command::GenFixture { output } = &cli.command {
        let seed = match &cli.overrides.seed {
            Some(s) => s.parse().map_err(|_| Error::Config(format!("invalid seed `{s}`")))?,
            None => 42,
        };
        fixture::generate(seed).write_to(output)?;
        println!("fixture written to {}", output.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest => print_stage("ingest", &pipeline::stage_ingest(&cfg)?),
        Command::BuildIndex => print_stage("build-index", &pipeline::stage_index(&cfg)?),
        Command::Link => print_stage("link", &pipeline::stage_link(&cfg)?),
        Command::MatchHeadings => print_stage("match-headings", &pipeline::stage_headings(&cfg)?),
        Command::Discover => print_stage("discover", &pipeline::stage_discover(&cfg)?),
        Command::Resolve => print_stage("resolve", &pipeline::stage_resolve(&cfg)?),
        Command::Run => {
            let m = pipeline::run_pipeline(&cfg)?;
            for stage in ["ingest", "build-index", "link", "match-headings", "discover", "resolve"] {
                if let Some(rec) = m.stages.get(stage) {
                    print_stage(stage, rec);
                }
            }
            println!("manifest: {}", cfg.out(outputs::MANIFEST).display());
        }
        Command::Train { task, data, output } => {
            let ds = dataset_for(&cfg, *task, data)?;
            let model = train(&ds, &cfg.forest_for(*task))?;
            model.save(output)?;
            println!("trained {} on {} examples -> {}", task.name(), ds.len(), output.display());
        }
        Command::Predict { model, data } => {
            let m = TreeEnsembleModel::load(model)?;
            let ds = Dataset::read_tsv(data)?;
            m.check_schema(ds.schema())?;
            println!("id\tpredicted\tscore");
            for e in ds.examples() {
                let (p, s) = m.predict(&e.features)?;
                println!("{}\t{}\t{s}", e.id, u8::from(p));
            }
        }
        Command::Cv { task, data, folds } => {
            let ds = dataset_for(&cfg, *task, data)?;
            let report = cross_validate(&ds, *folds, &cfg.forest_for(*task))?;
            for (k, m) in &report.summary {
                println!("{k}\t{:.4}\t{:.4}", m.mean, m.std);
            }
        }
        Command::ExportDataset { task, output } => {
            let ds = dataset_for(&cfg, *task, &None)?;
            let f = std::fs::File::create(output).map_err(|e| Error::io(output, e))?;
            ds.write_tsv(std::io::BufWriter::new(f)).map_err(|e| Error::io(output, e))?;
            println!("{} examples -> {}", ds.len(), output.display());
        }
        Command::Eval { task, gold, pred, format, header_rows, json } => {
            let fmt = match format {
                Format::Csv => GoldFormat::Csv,
                Format::T2d => GoldFormat::T2d(*header_rows),
            };
            let default_pred = |name: &str| pred.clone().unwrap_or_else(|| cfg.out(name));
            let report = match task {
                EvalTask::Link => pipeline::evaluate_links(gold, fmt, &default_pred(outputs::LINKS))?,
                EvalTask::Headings => pipeline::evaluate_headings(gold, fmt, &default_pred(outputs::HEADINGS))?,
                EvalTask::Discover => pipeline::evaluate_verdicts(gold, &default_pred(outputs::VERDICTS))?,
                EvalTask::Resolve => pipeline::evaluate_resolution(gold, &default_pred(outputs::CLUSTERS))?,
            };
            if *json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::GenFixture { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Training(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
