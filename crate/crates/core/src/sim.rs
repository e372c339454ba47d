//! Pairwise text-similarity kernels: the four lexical measures, embedding
//! cosine, and the max-cosine soft-match kernel used as a semantic matcher.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::normalize_text;
use crate::error::{Error, Result};

/// Whitespace tokens of the normalized text.
pub fn tokens(s: &str) -> Vec<String> {
    normalize_text(s).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `LD(a, b) / max(|a|, |b|)`; 0 when both are empty.
pub fn edit_distance_norm(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

/// Shared distinct characters over the longer length. Identical strings with
/// repeated characters score below 1.
pub fn letter_overlap(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    let la: HashSet<char> = a.chars().collect();
    let lb: HashSet<char> = b.chars().collect();
    la.intersection(&lb).count() as f64 / longest as f64
}

/// Jaccard similarity of the normalized term sets; 0 when both are empty.
pub fn jaccard_terms(a: &str, b: &str) -> f64 {
    let wa: BTreeSet<String> = tokens(a).into_iter().collect();
    let wb: BTreeSet<String> = tokens(b).into_iter().collect();
    set_jaccard(&wa, &wb)
}

pub fn set_jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// 1 if either normalized string contains the other. Empty strings never match.
pub fn substring_indicator(a: &str, b: &str) -> f64 {
    let (na, nb) = (normalize_text(a), normalize_text(b));
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    f64::from(u8::from(na.contains(&nb) || nb.contains(&na)))
}

/// The four lexical kernels, in feature order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalSims {
    pub edit: f64,
    pub letter: f64,
    pub jaccard: f64,
    pub substring: f64,
}

impl LexicalSims {
    /// Computes all four kernels on the normalized forms of `a` and `b`.
    pub fn between(a: &str, b: &str) -> Self {
        let (na, nb) = (normalize_text(a), normalize_text(b));
        LexicalSims {
            edit: edit_distance_norm(&na, &nb),
            letter: letter_overlap(&na, &nb),
            jaccard: jaccard_terms(&na, &nb),
            substring: substring_indicator(&na, &nb),
        }
    }

    /// Unweighted mean of the four kernels, with edit distance turned into a similarity.
    pub fn mean_similarity(&self) -> f64 {
        ((1.0 - self.edit) + self.letter + self.jaccard + self.substring) / 4.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.edit, self.letter, self.jaccard, self.substring]
    }
}

/// Mean of the four lexical kernels between two labels.
pub fn label_similarity(a: &str, b: &str) -> f64 {
    LexicalSims::between(a, b).mean_similarity()
}

/// Term vectors loaded from a word2vec-style text file.
#[derive(Debug, Clone, Default)]
pub struct TermEmbeddings {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl TermEmbeddings {
    pub fn new(dimension: usize) -> Self {
        TermEmbeddings {
            dimension,
            vectors: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Inserts a vector under the normalized token.
    pub fn insert(&mut self, token: &str, v: Vec<f64>) -> std::result::Result<(), String> {
        if v.len() != self.dimension {
            return Err(format!("vector for `{token}` has length {}, expected {}", v.len(), self.dimension));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("vector for `{token}` has non-finite components"));
        }
        self.vectors.insert(normalize_text(token), v);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Mean of the in-vocabulary token vectors of `text`.
    pub fn mean_vector(&self, text: &str) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dimension];
        let mut n = 0usize;
        for t in tokens(text) {
            if let Some(v) = self.get(&t) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::data(&name, 1, "empty embedding file"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        let (Some(vocab), Some(dim)) = (parse_usize(parts.next()), parse_usize(parts.next())) else {
            return Err(Error::data(&name, 1, "header must be `<vocab_size> <dimension>`"));
        };
        if dim == 0 {
            return Err(Error::data(&name, 1, "dimension must be positive"));
        }
        let mut emb = TermEmbeddings::new(dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            let v: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let v = v.map_err(|e| Error::data(&name, i + 1, format!("bad float: {e}")))?;
            emb.insert(token, v).map_err(|m| Error::data(&name, i + 1, m))?;
        }
        if emb.len() != vocab {
            return Err(Error::data(&name, 1, format!("header declares {vocab} tokens, found {}", emb.len())));
        }
        Ok(emb)
    }

    /// Writes tokens in sorted order.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.vectors.len(), self.dimension)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for k in keys {
            let v: Vec<String> = self.vectors[k].iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{k} {}", v.join(" "))?;
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine of the mean token vectors; 0 when either side is fully out of vocabulary.
pub fn embedding_cosine(a: &str, b: &str, emb: &TermEmbeddings) -> f64 {
    match (emb.mean_vector(a), emb.mean_vector(b)) {
        (Some(va), Some(vb)) => cosine(&va, &vb),
        _ => 0.0,
    }
}

/// Soft term matching: for each query token, the best cosine (clamped to
/// `[0, 1]`) against any document token, averaged over all query tokens.
/// Out-of-vocabulary query tokens contribute 0.
pub fn soft_match_phi(query: &str, doc: &str, emb: &TermEmbeddings) -> f64 {
    let q = tokens(query);
    let doc_vecs: Vec<&[f64]> = tokens(doc).iter().filter_map(|t| emb.get(t)).collect();
    if q.is_empty() || doc_vecs.is_empty() {
        return 0.0;
    }
    let total: f64 = q
        .iter()
        .map(|t| match emb.get(t) {
            Some(qv) => doc_vecs
                .iter()
                .map(|dv| cosine(qv, dv).clamp(0.0, 1.0))
                .fold(0.0, f64::max),
            None => 0.0,
        })
        .sum();
    total / q.len() as f64
}

/// Words of a URI or camelCase identifier: `http://x/ontology/releaseDate`
/// becomes `release date`.
pub fn identifier_words(id: &str) -> String {
    let last = id.rsplit(['/', '#', ':']).next().unwrap_or(id);
    let mut out = String::with_capacity(last.len() + 4);
    let mut prev: Option<char> = None;
    for c in last.chars() {
        if c == '_' || c == '-' {
            out.push(' ');
        } else {
            if c.is_uppercase() && prev.is_some_and(|p| p.is_lowercase() || p.is_ascii_digit()) {
                out.push(' ');
            }
            out.push(c);
        }
        prev = Some(c);
    }
    normalize_text(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb2d() -> TermEmbeddings {
        let mut e = TermEmbeddings::new(2);
        e.insert("east", vec![1.0, 0.0]).unwrap();
        e.insert("north", vec![0.0, 1.0]).unwrap();
        e.insert("northeast", vec![1.0, 1.0]).unwrap();
        e.insert("west", vec![-1.0, 0.0]).unwrap();
        e
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance_norm("abc", "abc"), 0.0);
        assert_eq!(edit_distance_norm("a", ""), 1.0);
        assert_eq!(edit_distance_norm("", ""), 0.0);
        let d = edit_distance_norm("Cisco Technolgy, Inc.", "Cisco Technology, Inc.");
        assert!((d - 1.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn letter_overlap_examples() {
        assert_eq!(letter_overlap("abc", "cba"), 1.0);
        assert!((letter_overlap("aab", "aab") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(letter_overlap("xyz", "abc"), 0.0);
        assert_eq!(letter_overlap("", ""), 0.0);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_terms("Cisco", "Cisco Systems"), 0.5);
        assert_eq!(jaccard_terms("a b", "b a"), 1.0);
        assert_eq!(jaccard_terms("a", "b"), 0.0);
        assert_eq!(jaccard_terms("", "  "), 0.0);
    }

    #[test]
    fn substring_examples() {
        assert_eq!(substring_indicator("Cisco", "Cisco Systems"), 1.0);
        assert_eq!(substring_indicator("abc", "abd"), 0.0);
        assert_eq!(substring_indicator("x", "x"), 1.0);
        assert_eq!(substring_indicator("", "x"), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let e = emb2d();
        assert!((embedding_cosine("east north", "east north", &e) - 1.0).abs() < 1e-12);
        assert_eq!(embedding_cosine("east", "zzz", &e), 0.0);
        assert!(embedding_cosine("east", "north", &e).abs() < 1e-12);
        assert!((embedding_cosine("east", "west", &e) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi_examples() {
        let e = emb2d();
        assert!((soft_match_phi("east", "north east", &e) - 1.0).abs() < 1e-12);
        assert_eq!(soft_match_phi("qqq rrr", "east", &e), 0.0);
        // Brute-force table for query {north, west} vs doc {east, northeast, zzz}:
        //   north: max(cos(n,e)=0, cos(n,ne)=1/sqrt2) = 0.70710678
        //   west:  max(cos(w,e)=-1 -> 0, cos(w,ne)=-1/sqrt2 -> 0) = 0
        let got = soft_match_phi("north west", "east northeast zzz", &e);
        assert!((got - 0.5 * std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        // partially OOV query: OOV token counts as 0
        assert!((soft_match_phi("east qqq", "east", &e) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn label_similarity_identity() {
        assert_eq!(label_similarity("IBM", "ibm"), 1.0);
    }

    #[test]
    fn embedding_file_round_trip() {
        let e = emb2d();
        let mut buf = Vec::new();
        e.write(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        std::fs::write(&p, &buf).unwrap();
        let loaded = TermEmbeddings::load(&p).unwrap();
        assert_eq!(loaded.len(), 4);
        assert_eq!(loaded.get("northeast"), Some(&[1.0, 1.0][..]));
        std::fs::write(&p, "2 2\na 1 2\nb 1\n").unwrap();
        assert!(matches!(TermEmbeddings::load(&p), Err(Error::Data { line: 3, .. })));
    }

    #[test]
    fn identifier_words_split() {
        assert_eq!(identifier_words("http://dbpedia.org/ontology/releaseDate"), "release date");
        assert_eq!(identifier_words("SoccerClub"), "soccer club");
        assert_eq!(identifier_words("population_total"), "population total");
        assert_eq!(identifier_words("elevation"), "elevation");
    }
}
