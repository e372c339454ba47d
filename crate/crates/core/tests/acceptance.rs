//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tablekb::corpus::{CoreMention, MentionKey, Table, TableContext};
use tablekb::discover::{
    aggregate4, build_dossiers, med_features, temporal_features, wd_feature, FeatureFamily, VerdictClass,
};
use tablekb::eval::{accuracy, macro_prf, write_gold_verdicts, Correspondence};
use tablekb::fixture::{files, generate};
use tablekb::headmatch::{detect_value_kind, pvs, ValueKind};
use tablekb::kb::{EntityId, KbBuilder, KbSnapshot, TypeId};
use tablekb::learn::cross_validate;
use tablekb::link::{disambiguate, CandidateMatrix, MentionLink, Selection, TableLinks, TableTypeVote};
use tablekb::pipeline::{self, GoldFormat, Inputs, PipelineConfig, Task};
use tablekb::resolve::{heading_bipartite_similarity, max_weight_matching};
use tablekb::retrieve::{Candidate, SearchFields, SearchIndex};
use tablekb::sim::{edit_distance_norm, jaccard_terms, letter_overlap, substring_indicator};

const ORACLE_PAIRS: usize = 1000;
const ORACLE_MAX_LEN: usize = 12;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(5);
const FORMULA_TOL: f64 = 1e-9;
const DISAMBIGUATION_MATRICES: usize = 200;
const MATCHING_MATRICES: usize = 500;
const MATCHING_MAX_SIZE: usize = 6;
const MATCHING_TOL: f64 = 1e-9;
const FIXTURE_SEED: u64 = 42;
const LINK_F1_MIN: f64 = 0.95;
const HEADING_F1_MIN: f64 = 0.95;
const DISCOVERY_ACC_MIN: f64 = 0.90;
const RESOLUTION_ACC_MIN: f64 = 0.95;
const RUN_TIME_LIMIT: Duration = Duration::from_secs(60);
const OSS_SLACK: f64 = 0.02;
const CV_FOLDS: usize = 5;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------- independent oracles ----------

fn oracle_levenshtein(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn oracle_edit_norm(a: &str, b: &str) -> f64 {
    let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let longest = ca.len().max(cb.len());
    if longest == 0 {
        0.0
    } else {
        oracle_levenshtein(&ca, &cb) as f64 / longest as f64
    }
}

fn oracle_letter_overlap(a: &str, b: &str) -> f64 {
    let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let longest = ca.len().max(cb.len());
    if longest == 0 {
        return 0.0;
    }
    let mut shared = 0;
    for (i, c) in ca.iter().enumerate() {
        let first_time = !ca[..i].contains(c);
        if first_time && cb.contains(c) {
            shared += 1;
        }
    }
    shared as f64 / longest as f64
}

fn oracle_words(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in s.split_whitespace() {
        let w = w.to_lowercase();
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let (wa, wb) = (oracle_words(a), oracle_words(b));
    let inter = wa.iter().filter(|w| wb.contains(w)).count();
    let union = wa.len() + wb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_contains(hay: &[char], needle: &[char]) -> bool {
    (0..=hay.len().saturating_sub(needle.len()))
        .any(|s| hay.len() >= needle.len() && hay[s..s + needle.len()] == *needle)
}

fn oracle_substring(a: &str, b: &str) -> f64 {
    let na: Vec<char> = oracle_words_in_order(a).chars().collect();
    let nb: Vec<char> = oracle_words_in_order(b).chars().collect();
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    f64::from(u8::from(oracle_contains(&na, &nb) || oracle_contains(&nb, &na)))
}

fn oracle_words_in_order(s: &str) -> String {
    s.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: [char; 7] = ['a', 'b', 'c', 'A', 'd', ' ', ' '];
    let n = rng.gen_range(0..=ORACLE_MAX_LEN);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(String, String)> = (0..ORACLE_PAIRS)
        .map(|_| (random_string(&mut rng), random_string(&mut rng)))
        .collect();
    let start = Instant::now();
    for (a, b) in &pairs {
        let checks = [
            ("edit", edit_distance_norm(a, b), oracle_edit_norm(a, b)),
            ("letter", letter_overlap(a, b), oracle_letter_overlap(a, b)),
            ("jaccard", jaccard_terms(a, b), oracle_jaccard(a, b)),
            ("substring", substring_indicator(a, b), oracle_substring(a, b)),
        ];
        for (name, got, want) in checks {
            check(got == want, format!("{name}({a:?}, {b:?}) = {got}, oracle {want}"))?;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < ORACLE_TIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!("{ORACLE_PAIRS} pairs, {elapsed:.2?}"))
}

// ---------- formula fixtures ----------

fn table(id: &str, core: &[&str], year: Option<i32>) -> Table {
    Table {
        id: id.into(),
        headings: vec!["name".into(), "other".into()],
        core_column_index: 0,
        header_row_index: 0,
        rows: core.iter().map(|c| vec![c.to_string(), "x".into()]).collect(),
        context: TableContext { last_edit_year: year, ..Default::default() },
    }
}

fn links_for(t: &Table, linked: &[(&str, &str)]) -> TableLinks {
    let map: HashMap<&str, &str> = linked.iter().copied().collect();
    TableLinks {
        table_id: t.id.clone(),
        vote: TableTypeVote::default(),
        mentions: tablekb::corpus::core_mentions(t)
            .into_iter()
            .map(|m| {
                let e = map.get(m.raw.as_str()).map(|e| EntityId::new(*e));
                MentionLink {
                    row_index: m.row_index,
                    key: m.key,
                    raw: m.raw,
                    confidence: f64::from(u8::from(e.is_some())),
                    entity: e,
                    propagated: false,
                }
            })
            .collect(),
    }
}

fn close(got: f64, want: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= FORMULA_TOL, format!("{what}: got {got}, want {want}"))
}

fn criterion_2() -> Outcome {
    // link rate: 4 of 10 mentions linked
    let names: Vec<String> = (0..10).map(|i| format!("m{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let t = table("t", &refs, None);
    let linked: Vec<(&str, &str)> = refs[..4].iter().map(|m| (*m, "E")).collect();
    let ds = build_dossiers(std::slice::from_ref(&t), &[links_for(&t, &linked)], &[]);
    close(ds[&MentionKey::normalize("m9").unwrap()].origins[0].link_rate, 0.4, "link rate")?;

    // PVS over a 2x2 string cross product with sims {1, 0.5, 0.5, 0}
    let col: Vec<_> = ["ab", "cd"].iter().map(|s| detect_value_kind(s)).collect();
    let kbv: Vec<_> = ["ab", "cb"].iter().map(|s| detect_value_kind(s)).collect();
    let p = pvs(&col, &kbv, ValueKind::String);
    close(p.max, 1.0, "pvs max")?;
    close(p.sum, 2.0, "pvs sum")?;
    close(p.avg, 0.5, "pvs avg")?;

    // MED aggregation and a single identical pair
    let agg = aggregate4(&[1.0, 0.5]);
    for (g, w, n) in [(agg[0], 1.0, "max"), (agg[1], 1.5, "sum"), (agg[2], 0.75, "avg"), (agg[3], 0.5, "min")] {
        close(g, w, &format!("med {n}"))?;
    }
    let mut b = KbBuilder::new();
    b.add_type("Club", None);
    b.add_entity("E1", "Clyde", 1.0, "").unwrap();
    b.add_entity_type("E1", "Club").unwrap();
    b.add_entity("E2", "Zephyr Wanderers", 1.0, "").unwrap();
    b.add_entity_type("E2", "Club").unwrap();
    let kb = b.build().unwrap();
    let t1 = table("t1", &["Clyde", "Novo"], None);
    let l1 = links_for(&t1, &[("Clyde", "E1")]);
    let ds = build_dossiers(std::slice::from_ref(&t1), std::slice::from_ref(&l1), &[]);
    let lmap: HashMap<&str, &TableLinks> = HashMap::from([("t1", &l1)]);
    let med = med_features(&ds[&MentionKey::normalize("novo").unwrap()], &lmap, &kb, true).map_err(|e| e.to_string())?;
    for (g, n) in med.iter().zip(["max", "sum", "avg", "min"]) {
        close(*g, 1.0, &format!("single-pair med {n}"))?;
    }

    // nearest-label distance
    let idx = SearchIndex::build(&kb, SearchFields::TitleOnly);
    close(wd_feature("Clyde", &idx, &kb, 1), 1.0, "wd exact label")?;
    close(wd_feature("qqq", &idx, &kb, 1), 0.0, "wd no hits")?;

    // least squares over yearly counts
    let tf = temporal_features(&BTreeMap::from([(2013, 1), (2014, 2), (2015, 3)]));
    close(tf[0], 1.0, "slope")?;
    close(tf[1], 1.0, "r squared")?;
    close(tf[2], 2013.0, "usage since")?;
    close(tf[3], 3.0, "frequency")?;
    let single = temporal_features(&BTreeMap::from([(2014, 5)]));
    check(single == [0.0, 0.0, 2014.0, 1.0], format!("single point gave {single:?}"))?;
    Ok("link rate, PVS, MED, WD, slope/r² within 1e-9".into())
}

// ---------- disambiguation ----------

fn random_kb(rng: &mut ChaCha8Rng) -> (KbSnapshot, Vec<TypeId>) {
    let mut b = KbBuilder::new();
    let types: Vec<String> = (0..6).map(|i| format!("T{i}")).collect();
    b.add_type("T0", None);
    b.add_type("T1", Some("T0"));
    b.add_type("T2", Some("T0"));
    b.add_type("T3", Some("T1"));
    b.add_type("T4", None);
    b.add_type("T5", Some("T4"));
    for e in 0..20 {
        let id = format!("E{e}");
        b.add_entity(&id, &id, 1.0, "").unwrap();
        let t = &types[rng.gen_range(0..types.len())];
        b.add_entity_type(&id, t).unwrap();
    }
    (b.build().unwrap(), types.into_iter().map(TypeId::new).collect())
}

fn expected_choice(
    row: &[Candidate],
    dec: &[(bool, f64)],
    vote: &TableTypeVote,
    kb: &KbSnapshot,
    selection: Selection,
) -> Option<EntityId> {
    let mut eligible: Vec<(&Candidate, f64)> = row
        .iter()
        .zip(dec)
        .filter(|(c, d)| {
            d.0 && !vote.is_empty()
                && kb
                    .expanded_types(&c.entity_id)
                    .unwrap()
                    .iter()
                    .any(|t| vote.winning_types.contains(t))
        })
        .map(|(c, d)| (c, d.1))
        .collect();
    eligible.sort_by(|a, b| match selection {
        Selection::Rank => a.0.rank.cmp(&b.0.rank),
        Selection::Score => b.1.total_cmp(&a.1).then(a.0.rank.cmp(&b.0.rank)),
    });
    eligible.first().map(|(c, _)| c.entity_id.clone())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..DISAMBIGUATION_MATRICES {
        let (kb, types) = random_kb(&mut rng);
        let n = rng.gen_range(1..=6);
        let mut mentions = Vec::new();
        let mut candidates = Vec::new();
        let mut decisions = Vec::new();
        for i in 0..n {
            let k = rng.gen_range(0..=5);
            let mut ids: Vec<usize> = (0..20).collect();
            for j in 0..k {
                let s = rng.gen_range(j..20);
                ids.swap(j, s);
            }
            let mut score = 10.0;
            let row: Vec<Candidate> = (0..k)
                .map(|r| {
                    score -= rng.gen_range(0.01..2.0);
                    Candidate { entity_id: EntityId::new(format!("E{}", ids[r])), rank: r + 1, retrieval_score: score }
                })
                .collect();
            decisions.push((0..k).map(|_| (rng.gen_bool(0.5), rng.gen_range(0.0..1.0))).collect::<Vec<_>>());
            mentions.push(CoreMention {
                row_index: i,
                key: MentionKey::normalize(&format!("m{i}")).unwrap(),
                raw: format!("m{i}"),
            });
            candidates.push(row);
        }
        let winning: BTreeSet<TypeId> = types.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
        let vote = TableTypeVote { winning_types: winning, vote_counts: BTreeMap::new() };
        let cands = CandidateMatrix { mentions, candidates };
        let mut rescaled = cands.clone();
        for row in &mut rescaled.candidates {
            for c in row {
                c.retrieval_score = (c.retrieval_score * 3.0 + 7.0).exp();
            }
        }
        for selection in [Selection::Rank, Selection::Score] {
            let a = disambiguate(&decisions, &cands, &vote, &kb, selection, false).map_err(|e| e.to_string())?;
            let b = disambiguate(&decisions, &rescaled, &vote, &kb, selection, false).map_err(|e| e.to_string())?;
            check(a == b, format!("trial {trial}: rescaling retrieval scores changed the output"))?;
            check(a.links.len() == n, format!("trial {trial}: {} slots for {n} mentions", a.links.len()))?;
            for (i, link) in a.links.iter().enumerate() {
                let want = expected_choice(&cands.candidates[i], &decisions[i], &vote, &kb, selection);
                check(
                    link.as_ref().map(|l| &l.0) == want.as_ref(),
                    format!("trial {trial} mention {i}: got {link:?}, want {want:?}"),
                )?;
                if let (Some((e, _)), false) = (link, vote.is_empty()) {
                    check(vote.matches(kb.expanded_types(e).unwrap()), format!("trial {trial}: type mismatch"))?;
                }
            }
        }
    }
    Ok(format!("{DISAMBIGUATION_MATRICES} matrices x 2 selection modes"))
}

// ---------- bipartite matching ----------

fn brute_force_matching(w: &[Vec<f64>]) -> f64 {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| w[i][j]).collect()).collect();
        return brute_force_matching(&t);
    }
    fn go(w: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
        if i == w.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[i][j] + go(w, i + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; cols])
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..MATCHING_MATRICES {
        let r = rng.gen_range(1..=MATCHING_MAX_SIZE);
        let c = rng.gen_range(1..=MATCHING_MAX_SIZE);
        let w: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let (got, assignment) = max_weight_matching(&w);
        let want = brute_force_matching(&w);
        check((got - want).abs() <= MATCHING_TOL, format!("trial {trial}: {got} vs optimum {want}"))?;
        let cols: Vec<usize> = assignment.iter().flatten().copied().collect();
        check(
            cols.iter().collect::<BTreeSet<_>>().len() == cols.len() && cols.len() == r.min(c),
            format!("trial {trial}: assignment is not a matching"),
        )?;
        let from_assignment: f64 = assignment
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| w[i][j]))
            .sum();
        check((from_assignment - got).abs() <= MATCHING_TOL, format!("trial {trial}: weight disagrees with assignment"))?;

        // heading lists of the same sizes
        let words = ["name", "year", "city", "club", "country", "founded", "ground", "seats"];
        let h1: Vec<String> = (0..r).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        let h2: Vec<String> = (0..c).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        let hw: Vec<Vec<f64>> = h1
            .iter()
            .map(|a| h2.iter().map(|b| 1.0 - oracle_edit_norm(a, b)).collect())
            .collect();
        let want_h = brute_force_matching(&hw) / r.max(c) as f64;
        let got_h = heading_bipartite_similarity(&h1, &h2);
        check((got_h - want_h).abs() <= MATCHING_TOL, format!("trial {trial}: headings {got_h} vs {want_h}"))?;
    }
    Ok(format!("{MATCHING_MATRICES} matrices up to {MATCHING_MAX_SIZE}x{MATCHING_MAX_SIZE}"))
}

// ---------- end to end ----------

struct FixtureRun {
    dir: PathBuf,
    cfg: PipelineConfig,
    elapsed: Duration,
}

fn fixture_run(dir: &Path) -> Result<FixtureRun, String> {
    let start = Instant::now();
    generate(FIXTURE_SEED).write_to(dir).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::from_file(&dir.join(files::CONFIG)).map_err(|e| e.to_string())?;
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    Ok(FixtureRun { dir: dir.to_path_buf(), cfg, elapsed: start.elapsed() })
}

fn criterion_5(run: &FixtureRun) -> Outcome {
    let out = &run.cfg.out_dir;
    let d = &run.dir;
    let link = pipeline::evaluate_links(&d.join(files::LINKS_TEST), GoldFormat::Csv, &out.join("links.tsv"))
        .map_err(|e| e.to_string())?;
    let head = pipeline::evaluate_headings(&d.join(files::HEADINGS_TEST), GoldFormat::Csv, &out.join("headings.tsv"))
        .map_err(|e| e.to_string())?;
    let disc = pipeline::evaluate_verdicts(&d.join(files::VERDICTS_TEST), &out.join("verdicts.tsv"))
        .map_err(|e| e.to_string())?;
    let res = pipeline::evaluate_resolution(&d.join(files::RESOLUTION_TEST), &out.join("clusters.jsonl"))
        .map_err(|e| e.to_string())?;
    let (lf, hf) = (link.metrics["macro_f1"], head.metrics["macro_f1"]);
    let (da, ra) = (disc.metrics["accuracy"], res.metrics["accuracy"]);
    let summary = format!(
        "link F1 {lf:.3}, heading F1 {hf:.3}, discovery acc {da:.3}, resolution acc {ra:.3}, {:.2?}",
        run.elapsed
    );
    let ok = lf >= LINK_F1_MIN
        && hf >= HEADING_F1_MIN
        && da >= DISCOVERY_ACC_MIN
        && ra >= RESOLUTION_ACC_MIN
        && run.elapsed < RUN_TIME_LIMIT;
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).unwrap().display().to_string();
            out.insert(rel, std::fs::read(&p)?);
        }
    }
    Ok(())
}

fn stage_outputs(out_dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    collect_files(out_dir, out_dir, &mut files).map_err(|e| e.to_string())?;
    files.remove(pipeline::outputs::MANIFEST);
    Ok(files)
}

fn criterion_6(a: &FixtureRun, b: &FixtureRun) -> Outcome {
    let fa = stage_outputs(&a.cfg.out_dir)?;
    let fb = stage_outputs(&b.cfg.out_dir)?;
    check(fa.keys().eq(fb.keys()), format!("file sets differ: {:?} vs {:?}", fa.keys(), fb.keys()))?;
    for (name, bytes) in &fa {
        check(bytes == &fb[name], format!("{name} differs between runs"))?;
    }
    for required in ["models/link.json", "models/resolve.json", "mention_embeddings.txt", "clusters.jsonl"] {
        check(fa.contains_key(required), format!("{required} missing"))?;
    }
    Ok(format!("{} output files byte-identical", fa.len()))
}

fn criterion_7() -> Outcome {
    let set = |items: &[(&str, usize, &str)]| -> BTreeSet<Correspondence> {
        items.iter().map(|(t, p, v)| Correspondence::new(*t, *p, *v)).collect()
    };
    let gold = set(&[("t1", 0, "a"), ("t1", 1, "b"), ("t2", 0, "c"), ("t2", 1, "d")]);
    let pred = set(&[("t1", 0, "a"), ("t1", 1, "b"), ("t2", 0, "c"), ("t2", 1, "x")]);
    let r = macro_prf(&gold, &pred).map_err(|e| e.to_string())?;
    let m = r.macro_avg;
    check(
        m.precision == 0.75 && m.recall == 0.75 && m.f1 == 0.75,
        format!("macro = ({}, {}, {})", m.precision, m.recall, m.f1),
    )?;
    let g: BTreeMap<u8, bool> = BTreeMap::from([(1, true), (2, false), (3, true), (4, false)]);
    let p: BTreeMap<u8, bool> = BTreeMap::from([(1, true), (2, true), (3, false), (4, false)]);
    let acc = accuracy(&g, &p).map_err(|e| e.to_string())?;
    check(acc == 0.5, format!("accuracy = {acc}"))?;
    Ok("macro (0.75, 0.75, 0.75), accuracy 0.5".into())
}

fn criterion_8(run: &FixtureRun) -> Outcome {
    let fx = generate(FIXTURE_SEED);
    let all_gold: BTreeMap<MentionKey, VerdictClass> = fx.gold.all_verdicts();
    let gold_path = run.dir.join("gold/verdicts_all.csv");
    write_gold_verdicts(&gold_path, &all_gold).map_err(|e| e.to_string())?;
    let mut cfg = run.cfg.clone();
    cfg.gold_verdicts = Some(gold_path);
    let inputs = Inputs::load(&cfg).map_err(|e| e.to_string())?;
    let state = pipeline::discovery_state(&cfg, &inputs).map_err(|e| e.to_string())?;
    let forest = cfg.forest_for(Task::Discover);
    let cv_acc = |families: &[FeatureFamily]| -> Result<f64, String> {
        let data = pipeline::discovery_dataset(&cfg, &state, VerdictClass::OutOfKb, families).map_err(|e| e.to_string())?;
        Ok(cross_validate(&data, CV_FOLDS, &forest).map_err(|e| e.to_string())?.mean("accuracy"))
    };
    let oss = cv_acc(&FeatureFamily::OSS)?;
    let mut best_single = 0.0f64;
    let mut parts = Vec::new();
    for f in FeatureFamily::ALL {
        let a = cv_acc(&[f])?;
        parts.push(format!("{}{a:.3}", f.prefix()));
        best_single = best_single.max(a);
    }
    let summary = format!("OSS {oss:.3} vs singles [{}]", parts.join(", "));
    if oss >= best_single - OSS_SLACK {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_9(run: &FixtureRun) -> Outcome {
    let fx = generate(FIXTURE_SEED);
    let ents = run.dir.join("t2d/entities");
    let props = run.dir.join("t2d/properties");
    std::fs::create_dir_all(&ents).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&props).map_err(|e| e.to_string())?;
    let mut by_table: BTreeMap<&str, Vec<&Correspondence>> = BTreeMap::new();
    for c in &fx.gold.links_test {
        by_table.entry(&c.table_id).or_default().push(c);
    }
    for (t, cs) in &by_table {
        let mut w = csv::Writer::from_path(ents.join(format!("{t}.csv"))).map_err(|e| e.to_string())?;
        for c in cs {
            let uri = format!("http://dbpedia.org/resource/{}", c.value);
            w.write_record([uri.as_str(), "", &(c.position + 1).to_string()]).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    let mut by_table: BTreeMap<&str, Vec<&Correspondence>> = BTreeMap::new();
    for c in &fx.gold.headings_test {
        by_table.entry(&c.table_id).or_default().push(c);
    }
    for (t, cs) in &by_table {
        let mut w = csv::Writer::from_path(props.join(format!("{t}.csv"))).map_err(|e| e.to_string())?;
        for c in cs {
            let uri = format!("http://dbpedia.org/ontology/{}", c.value);
            w.write_record([uri.as_str(), "", "False", &c.position.to_string()]).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    let out = &run.cfg.out_dir;
    let l = pipeline::evaluate_links(&ents, GoldFormat::T2d(1), &out.join("links.tsv")).map_err(|e| e.to_string())?;
    let h = pipeline::evaluate_headings(&props, GoldFormat::T2d(1), &out.join("headings.tsv")).map_err(|e| e.to_string())?;
    Ok(format!(
        "T2D-format eval: link P/R/F1 {:.3}/{:.3}/{:.3}, headings F1 {:.3}",
        l.metrics["macro_precision"], l.metrics["macro_recall"], l.metrics["macro_f1"], h.metrics["macro_f1"]
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "similarity kernels agree with brute-force oracles", criterion_1()),
        (2, "formula fixtures", criterion_2()),
        (3, "disambiguation invariants", criterion_3()),
        (4, "bipartite matching equals exhaustive optimum", criterion_4()),
        (7, "metric correctness", criterion_7()),
    ];
    let tmp = tempfile::tempdir().expect("temp dir");
    let first = fixture_run(&tmp.path().join("run1"));
    let second = fixture_run(&tmp.path().join("run2"));
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            results.push((5, "end-to-end fixture", criterion_5(a)));
            results.push((6, "determinism", criterion_6(a, b)));
            results.push((8, "OSS composition", criterion_8(a)));
            results.push((9, "T2D-format evaluation", criterion_9(a)));
        }
        _ => {
            let err = first.as_ref().err().or(second.as_ref().err()).cloned().unwrap_or_default();
            for (id, name) in [(5, "end-to-end fixture"), (6, "determinism"), (8, "OSS composition"), (9, "T2D-format evaluation")] {
                results.push((id, name, Err(format!("pipeline failed: {err}"))));
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {id}: {name} ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} ({detail})");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
