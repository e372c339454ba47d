//! Bagged Gini decision trees shared by every classification step, with
//! stratified group-aware cross-validation and impurity-based importances.
//!
//! Training is deterministic: examples are ordered by id before sampling and
//! every tree draws from its own ChaCha stream derived from the model seed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BinaryCounts;

const MODEL_FORMAT: &str = "tablekb-forest";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    pub label: bool,
    /// Source table or mention; examples sharing a group never straddle folds.
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    schema: Vec<String>,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(schema: Vec<String>) -> Self {
        Dataset {
            schema,
            examples: Vec::new(),
        }
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn push(&mut self, ex: Example) -> Result<()> {
        if ex.features.len() != self.schema.len() {
            return Err(Error::SchemaMismatch {
                expected: self.schema.join(","),
                found: format!("{} values", ex.features.len()),
            });
        }
        if ex.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training(format!("example `{}` has non-finite features", ex.id)));
        }
        self.examples.push(ex);
        Ok(())
    }

    /// Keeps only the named features, in the given order.
    pub fn project(&self, names: &[&str]) -> Result<Dataset> {
        let cols: Vec<usize> = names
            .iter()
            .map(|n| {
                self.schema.iter().position(|s| s == n).ok_or_else(|| Error::Lookup {
                    kind: "feature",
                    id: n.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            schema: names.iter().map(|s| s.to_string()).collect(),
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    features: cols.iter().map(|&c| e.features[c]).collect(),
                    ..e.clone()
                })
                .collect(),
        })
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label).count();
        (pos, self.examples.len() - pos)
    }

    /// TSV with a header naming the features; the last column is the 0/1 label.
    /// Optional leading `@id` and `@group` columns carry example metadata.
    pub fn read_tsv(path: &Path) -> Result<Dataset> {
        let name = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data(&name, 1, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let has_id = cols.first() == Some(&"@id");
        let has_group = cols.get(usize::from(has_id)) == Some(&"@group");
        let skip = usize::from(has_id) + usize::from(has_group);
        if cols.len() < skip + 2 {
            return Err(Error::data(&name, 1, "need at least one feature and a label column"));
        }
        let schema: Vec<String> = cols[skip..cols.len() - 1].iter().map(|s| s.to_string()).collect();
        let mut ds = Dataset::new(schema);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(Error::data(&name, line_no, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let features = f[skip..f.len() - 1]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::data(&name, line_no, format!("bad feature value: {e}")))?;
            let label = match f[f.len() - 1] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::data(&name, line_no, format!("bad label `{other}`"))),
            };
            let id = if has_id { f[0].to_string() } else { format!("row{line_no:08}") };
            let group = if has_group { f[usize::from(has_id)].to_string() } else { id.clone() };
            ds.push(Example { id, features, label, group })
                .map_err(|e| Error::data(&name, line_no, e.to_string()))?;
        }
        Ok(ds)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "@id\t@group\t{}\tlabel", self.schema.join("\t"))?;
        for e in &self.examples {
            let vals: Vec<String> = e.features.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}\t{}\t{}\t{}", e.id, e.group, vals.join("\t"), u8::from(e.label))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            max_features: None,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Node {
    Leaf { positive: bool },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { positive } => return *positive,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    format: String,
    version: u32,
    schema: Vec<String>,
    config: ForestConfig,
    importances: Vec<f64>,
    trees: Vec<Tree>,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<bool>,
    config: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, pos: usize, n: usize) -> usize {
        self.nodes.push(Node::Leaf { positive: 2 * pos > n });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold, impurity decrease) among the sampled features,
    /// extending the sample until some feature yields a valid split.
    fn best_split(&mut self, idx: &[usize], pos: usize) -> Option<(usize, f64, f64)> {
        let d = self.importance.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        let n = idx.len() as f64;
        let parent = gini(pos as f64, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(idx.len());
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for k in 0..sorted.len() - 1 {
                if sorted[k].1 {
                    left_pos += 1.0;
                }
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let right_pos = pos as f64 - left_pos;
                let child = (nl * gini(left_pos, nl) + nr * gini(right_pos, nr)) / n;
                let decrease = parent - child;
                if decrease > 1e-12 && best.is_none_or(|b| decrease > b.2) {
                    let threshold = sorted[k].0 + (sorted[k + 1].0 - sorted[k].0) / 2.0;
                    best = Some((f, threshold, decrease));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        if pos == 0 || pos == n || depth >= self.config.max_depth || n < self.config.min_samples_split {
            return self.leaf(pos, n);
        }
        let Some((feature, threshold, decrease)) = self.best_split(&idx, pos) else {
            return self.leaf(pos, n);
        };
        self.importance[feature] += n as f64 * decrease;
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { positive: false });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

/// Trains a bagged forest. Requires at least two examples of each class.
pub fn train(data: &Dataset, config: &ForestConfig) -> Result<TreeEnsembleModel> {
    let (pos, neg) = data.class_counts();
    if pos < 2 || neg < 2 {
        return Err(Error::Training(format!(
            "need at least two examples per class, got {pos} positive and {neg} negative"
        )));
    }
    if config.n_trees == 0 {
        return Err(Error::Config("n_trees must be positive".into()));
    }
    let d = data.schema.len();
    let mut ordered: Vec<&Example> = data.examples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mtry = config
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d.max(1));

    let results: Vec<(Tree, Vec<f64>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64 + 1);
            let n = ordered.len();
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut b = TreeBuilder {
                x: ordered.iter().map(|e| e.features.as_slice()).collect(),
                y: ordered.iter().map(|e| e.label).collect(),
                config,
                mtry,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            b.grow(sample, 0);
            (Tree { nodes: b.nodes }, b.importance)
        })
        .collect();

    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(results.len());
    for (tree, imp) in results {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            importances.iter_mut().zip(&imp).for_each(|(a, v)| *a += v / total);
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(TreeEnsembleModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        schema: data.schema.clone(),
        config: config.clone(),
        importances,
        trees,
    })
}

impl TreeEnsembleModel {
    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Fails unless `schema` matches the model's feature names exactly.
    pub fn check_schema<S: AsRef<str>>(&self, schema: &[S]) -> Result<()> {
        let same = schema.len() == self.schema.len()
            && schema.iter().zip(&self.schema).all(|(a, b)| a.as_ref() == b);
        if same {
            Ok(())
        } else {
            Err(Error::SchemaMismatch {
                expected: self.schema.join(","),
                found: schema.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(","),
            })
        }
    }

    /// `(label, score)` where score is the fraction of trees voting positive
    /// and the label is `score >= 0.5`.
    pub fn predict(&self, x: &[f64]) -> Result<(bool, f64)> {
        if x.len() != self.schema.len() {
            return Err(Error::SchemaMismatch {
                expected: self.schema.join(","),
                found: format!("{} values", x.len()),
            });
        }
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        let score = votes as f64 / self.trees.len() as f64;
        Ok((score >= 0.5, score))
    }

    /// Normalized mean impurity decrease per feature.
    pub fn feature_importance(&self) -> BTreeMap<String, f64> {
        self.schema.iter().cloned().zip(self.importances.iter().copied()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TreeEnsembleModel = serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Serde(format!("unsupported model format {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Assigns each example to a fold. Groups stay whole; each group goes to the
/// fold currently holding the fewest examples of the group's majority class.
pub fn assign_folds(data: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let (pos, neg) = data.class_counts();
    if pos.min(neg) < folds {
        return Err(Error::Training(format!(
            "{folds} folds need at least {folds} examples per class, got {pos} positive and {neg} negative"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in data.examples.iter().enumerate() {
        groups.entry(e.group.as_str()).or_default().push(i);
    }
    if groups.len() < folds {
        return Err(Error::Training(format!("{} groups cannot fill {folds} folds", groups.len())));
    }
    let mut order: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

    let mut assignment = vec![usize::MAX; data.len()];
    let mut per_class = vec![[0usize; 2]; folds];
    let mut totals = vec![0usize; folds];
    for (_, members) in order {
        let p = members.iter().filter(|&&i| data.examples[i].label).count();
        let class = usize::from(2 * p >= members.len());
        let fold = (0..folds)
            .min_by_key(|&f| (per_class[f][class], totals[f], f))
            .expect("folds > 0");
        for &i in &members {
            assignment[i] = fold;
            per_class[fold][usize::from(data.examples[i].label)] += 1;
        }
        totals[fold] += members.len();
    }
    Ok(assignment)
}

/// Group-aware holdout split; returns (train, test).
pub fn holdout_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut groups: Vec<&str> = data.examples.iter().map(|e| e.group.as_str()).collect();
    groups.sort();
    groups.dedup();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (groups.len() as f64 * test_fraction).round() as usize;
    let test_groups: std::collections::HashSet<&str> = groups.into_iter().take(n_test).collect();
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| test_groups.contains(data.examples[i].group.as_str()));
    Ok((data.subset(&train), data.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: usize,
    pub per_fold: Vec<BTreeMap<String, f64>>,
    pub summary: BTreeMap<String, MetricSummary>,
}

impl CvReport {
    pub fn mean(&self, metric: &str) -> f64 {
        self.summary.get(metric).map_or(f64::NAN, |m| m.mean)
    }
}

/// Stratified, group-aware k-fold cross-validation.
pub fn cross_validate(data: &Dataset, folds: usize, config: &ForestConfig) -> Result<CvReport> {
    let assignment = assign_folds(data, folds, config.seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for f in 0..folds {
        let (test, train_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assignment[i] == f);
        let model = train(&data.subset(&train_idx), config)?;
        let mut counts = BinaryCounts::default();
        for &i in &test {
            let e = &data.examples[i];
            let (pred, _) = model.predict(&e.features)?;
            counts.record(e.label, pred);
        }
        per_fold.push(counts.metrics());
    }
    let mut summary = BTreeMap::new();
    for key in per_fold[0].keys() {
        let vals: Vec<f64> = per_fold.iter().map(|m| m[key]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        summary.insert(key.clone(), MetricSummary { mean, std: var.sqrt() });
    }
    Ok(CvReport { folds, per_fold, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> Dataset {
        let mut ds = Dataset::new(vec!["x".into(), "y".into()]);
        for i in 0..n {
            let label = i % 2 == 0;
            let x = if label { 1.0 + (i as f64) * 0.01 } else { -1.0 - (i as f64) * 0.01 };
            ds.push(Example {
                id: format!("e{i:03}"),
                features: vec![x, (i % 7) as f64],
                label,
                group: format!("g{}", i / 2),
            })
            .unwrap();
        }
        ds
    }

    #[test]
    fn separable_training_accuracy() {
        let ds = separable(40);
        let m = train(&ds, &ForestConfig::default()).unwrap();
        for e in ds.examples() {
            assert_eq!(m.predict(&e.features).unwrap().0, e.label);
        }
    }

    #[test]
    fn fixed_seed_identical_bytes() {
        let ds = separable(30);
        let a = train(&ds, &ForestConfig::default()).unwrap().to_json();
        let b = train(&ds, &ForestConfig::default()).unwrap().to_json();
        assert_eq!(a, b);
        let back = TreeEnsembleModel::from_json(&a).unwrap();
        assert_eq!(back.to_json(), a);
    }

    #[test]
    fn single_class_is_rejected() {
        let mut ds = Dataset::new(vec!["x".into()]);
        for i in 0..5 {
            ds.push(Example { id: i.to_string(), features: vec![i as f64], label: true, group: i.to_string() }).unwrap();
        }
        assert!(matches!(train(&ds, &ForestConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn predict_checks_arity() {
        let m = train(&separable(20), &ForestConfig::default()).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(Error::SchemaMismatch { .. })));
        assert!(m.check_schema(&["x", "y"]).is_ok());
        assert!(m.check_schema(&["y", "x"]).is_err());
    }

    #[test]
    fn unanimous_and_boundary_scores() {
        let m = train(&separable(20).project(&["x"]).unwrap(), &ForestConfig::default()).unwrap();
        assert_eq!(m.predict(&[5.0]).unwrap(), (true, 1.0));
        // two-tree model with one vote each way: the >= rule makes 0.5 positive
        let mut split = m.clone();
        split.trees = vec![
            Tree { nodes: vec![Node::Leaf { positive: true }] },
            Tree { nodes: vec![Node::Leaf { positive: false }] },
        ];
        assert_eq!(split.predict(&[0.0]).unwrap(), (true, 0.5));
    }

    #[test]
    fn importances_normalized() {
        let m = train(&separable(40), &ForestConfig::default()).unwrap();
        let imp = m.feature_importance();
        let total: f64 = imp.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(imp.values().all(|v| *v >= 0.0));
        assert!(imp["x"] > imp["y"]);
    }

    #[test]
    fn unused_feature_has_zero_importance() {
        let mut ds = Dataset::new(vec!["signal".into(), "constant".into()]);
        for i in 0..20 {
            ds.push(Example { id: format!("{i:02}"), features: vec![(i % 2) as f64, 3.0], label: i % 2 == 1, group: i.to_string() }).unwrap();
        }
        let imp = train(&ds, &ForestConfig::default()).unwrap().feature_importance();
        assert_eq!(imp["constant"], 0.0);
        assert!((imp["signal"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_independence() {
        let ds = separable(40);
        let mut shuffled = ds.clone();
        shuffled.examples.reverse();
        let a = train(&ds, &ForestConfig::default()).unwrap();
        let b = train(&shuffled, &ForestConfig::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn folds_partition_and_keep_groups() {
        let ds = separable(40);
        let folds = assign_folds(&ds, 5, 7).unwrap();
        assert!(folds.iter().all(|&f| f < 5));
        for f in 0..5 {
            assert!(folds.contains(&f));
        }
        let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (e, f) in ds.examples().iter().zip(&folds) {
            by_group.entry(&e.group).or_default().push(*f);
        }
        assert!(by_group.values().all(|fs| fs.iter().all(|f| *f == fs[0])));
    }

    #[test]
    fn cv_on_separable_data() {
        let report = cross_validate(&separable(50), 5, &ForestConfig::default()).unwrap();
        assert_eq!(report.folds, 5);
        assert_eq!(report.mean("accuracy"), 1.0);
    }

    #[test]
    fn cv_needs_enough_examples() {
        assert!(cross_validate(&separable(6), 5, &ForestConfig::default()).is_err());
    }

    #[test]
    fn holdout_keeps_groups_whole() {
        let ds = separable(40);
        let (train, test) = holdout_split(&ds, 0.2, 1).unwrap();
        assert_eq!(train.len() + test.len(), 40);
        assert_eq!(test.len(), 8);
        for e in test.examples() {
            assert!(train.examples().iter().all(|t| t.group != e.group));
        }
    }

    #[test]
    fn dataset_tsv_round_trip() {
        let ds = separable(6);
        let mut buf = Vec::new();
        ds.write_tsv(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, &buf).unwrap();
        assert_eq!(Dataset::read_tsv(&p).unwrap(), ds);
        std::fs::write(&p, "a\tb\tlabel\n1\t2\t1\n3\t4\t0\n").unwrap();
        let plain = Dataset::read_tsv(&p).unwrap();
        assert_eq!(plain.schema(), &["a".to_string(), "b".to_string()]);
        assert_eq!(plain.len(), 2);
    }
}
