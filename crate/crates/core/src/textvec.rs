//! Tokenization, word vectors, mean-pooled text embeddings and cosine
//! similarity.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "don", "down", "during", "each",
    "few", "for", "from", "further", "get", "got", "had", "has", "have", "having", "he", "her",
    "here", "hers", "herself", "him", "himself", "his", "how", "if", "in", "into", "is", "it",
    "its", "itself", "just", "ll", "me", "more", "most", "my", "myself", "no", "nor", "not", "now",
    "of", "off", "on", "once", "one", "only", "or", "other", "our", "ours", "ourselves", "out",
    "over", "own", "re", "really", "same", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "use", "used", "ve", "very", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "you", "your", "yours", "yourself", "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric runs, minus stopwords and single characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !is_stopword(t))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }
}

/// Deterministic token → unit vector map, used when no pretrained vectors
/// are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingFallback {
    pub seed: u64,
}

impl HashingFallback {
    fn vector(&self, token: &str, dim: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, token));
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        raw.iter().map(|v| (v / norm) as f32).collect()
    }
}

#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
    fallback: Option<HashingFallback>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped: usize,
}

impl WordVectors {
    pub fn from_table(dim: usize, table: HashMap<String, Vec<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("word vector dim must be positive".into()));
        }
        if let Some((tok, _)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Contract(format!("vector for `{tok}` has wrong dim")));
        }
        Ok(WordVectors {
            dim,
            table,
            fallback: None,
        })
    }

    /// Every token gets a seeded pseudo-random unit vector.
    pub fn hashing(dim: usize, seed: u64) -> Self {
        WordVectors {
            dim: dim.max(1),
            table: HashMap::new(),
            fallback: Some(HashingFallback { seed }),
        }
    }

    pub fn with_fallback(mut self, seed: u64) -> Self {
        self.fallback = Some(HashingFallback { seed });
        self
    }

    /// Whitespace-separated text vectors (`token v1 .. vd` per line) with an
    /// optional `count dim` header. When lines disagree on arity, the most
    /// common dim wins and the rest are counted as skipped.
    pub fn load(path: &Path) -> Result<(Self, LoadStats)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().peekable();
        let mut header_dim = None;
        if let Some(first) = lines.peek() {
            let parts: Vec<&str> = first.split_whitespace().collect();
            if parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
                header_dim = parts[1].parse::<usize>().ok();
                lines.next();
            }
        }

        let mut parsed: Vec<(String, Vec<f32>)> = Vec::new();
        let mut skipped = 0;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_lowercase();
            let values: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            match values {
                Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => parsed.push((token, v)),
                _ => skipped += 1,
            }
        }

        let dim = match header_dim {
            Some(d) if d > 0 => d,
            _ => {
                let mut freq: HashMap<usize, usize> = HashMap::new();
                for (_, v) in &parsed {
                    *freq.entry(v.len()).or_default() += 1;
                }
                // majority arity, smaller dim on ties
                freq.into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(d, _)| d)
                    .ok_or_else(|| Error::Format(format!("no parseable vectors in {}", path.display())))?
            }
        };

        let mut table = HashMap::new();
        for (tok, v) in parsed {
            if v.len() == dim {
                table.insert(tok, v);
            } else {
                skipped += 1;
            }
        }
        if table.is_empty() {
            return Err(Error::Format(format!("no parseable vectors in {}", path.display())));
        }
        let stats = LoadStats {
            loaded: table.len(),
            skipped,
        };
        Ok((
            WordVectors {
                dim,
                table,
                fallback: None,
            },
            stats,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty() && self.fallback.is_none()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.fallback.is_some() || self.table.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<std::borrow::Cow<'_, [f32]>> {
        if let Some(v) = self.table.get(token) {
            return Some(std::borrow::Cow::Borrowed(v.as_slice()));
        }
        self.fallback
            .map(|f| std::borrow::Cow::Owned(f.vector(token, self.dim)))
    }
}

/// Mean of the in-vocabulary token vectors. The flag is set when no token
/// was found and the zero vector was returned.
pub fn embed_text(text: &str, wv: &WordVectors) -> (EmbeddingVector, bool) {
    embed_tokens(&tokenize(text), wv)
}

pub fn embed_tokens(tokens: &[String], wv: &WordVectors) -> (EmbeddingVector, bool) {
    let mut sum = vec![0.0f64; wv.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if let Some(v) = wv.get(tok) {
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += f64::from(*x);
            }
            n += 1;
        }
    }
    if n == 0 {
        return (EmbeddingVector::zeros(wv.dim()), true);
    }
    let values = sum.into_iter().map(|s| (s / n as f64) as f32).collect();
    (EmbeddingVector { values }, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// One of the vectors had zero norm.
    pub degenerate: bool,
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Cosine> {
    cosine_slices(&a.values, &b.values)
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine over mismatched dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::from(v.to_vec())
    }

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("It applies smoothly!"), vec!["applies", "smoothly"]);
        assert!(tokenize("").is_empty());
        let t = "Great for DRY skin, 10/10 would buy.";
        assert_eq!(tokenize(t), tokenize(t));
        assert_eq!(tokenize(t), vec!["great", "dry", "skin", "10", "10", "buy"]);
    }

    #[test]
    fn tokenize_is_idempotent_on_joined_output() {
        let once = tokenize("Smells like Vanilla; the café-style aroma lasts all day!");
        let twice = tokenize(&once.join(" "));
        assert_eq!(once, twice);
    }

    #[test]
    fn load_two_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "scent 0.1 0.2 0.3\nmusk 1 0 0").unwrap();
        let (wv, stats) = WordVectors::load(f.path()).unwrap();
        assert_eq!(wv.dim(), 3);
        assert_eq!(wv.len(), 2);
        assert_eq!(stats.skipped, 0);
        let (again, _) = WordVectors::load(f.path()).unwrap();
        assert_eq!(wv.table, again.table);
    }

    #[test]
    fn load_with_header_and_mixed_dims() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a1 1 2 3\nb1 1 2 3\nc1 1 2 3 4\nd1 x y z").unwrap();
        let (wv, stats) = WordVectors::load(f.path()).unwrap();
        assert_eq!(wv.dim(), 3);
        assert_eq!(wv.len(), 2);
        assert_eq!(stats.skipped, 2);

        let mut h = tempfile::NamedTempFile::new().unwrap();
        writeln!(h, "2 2\nab 1 0\ncd 0 1").unwrap();
        let (wv, _) = WordVectors::load(h.path()).unwrap();
        assert_eq!(wv.dim(), 2);
        assert_eq!(wv.len(), 2);
    }

    #[test]
    fn load_rejects_unparseable() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "just words here\nnothing numeric").unwrap();
        assert!(matches!(WordVectors::load(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn embed_examples() {
        let mut table = HashMap::new();
        table.insert("scent".to_string(), vec![1.0, 0.0]);
        table.insert("color".to_string(), vec![0.0, 1.0]);
        let wv = WordVectors::from_table(2, table).unwrap();
        assert_eq!(embed_text("scent", &wv).0.values, vec![1.0, 0.0]);
        assert_eq!(embed_text("scent color", &wv).0.values, vec![0.5, 0.5]);
        let (z, flagged) = embed_text("unknown words only", &wv);
        assert!(flagged && z.is_zero());
    }

    #[test]
    fn hashing_fallback_is_deterministic_unit() {
        let wv = WordVectors::hashing(16, 7);
        let a = wv.get("vanilla").unwrap().into_owned();
        let b = WordVectors::hashing(16, 7).get("vanilla").unwrap().into_owned();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
        assert_ne!(a, WordVectors::hashing(16, 8).get("vanilla").unwrap().into_owned());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap().value, 0.0);
        assert!((cosine(&ev(&[2.0, 0.0]), &ev(&[1.0, 0.0])).unwrap().value - 1.0).abs() < 1e-12);
        let c = cosine(&ev(&[1.0, 1.0]), &ev(&[1.0, 0.0])).unwrap().value;
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        let z = cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])).unwrap();
        assert!(z.degenerate && z.value == 0.0);
        assert!(cosine(&ev(&[1.0]), &ev(&[1.0, 0.0])).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f32..10.0, 4),
            b in prop::collection::vec(-10.0f32..10.0, 4),
            exp in -3i32..4,
        ) {
            let (ea, eb) = (ev(&a), ev(&b));
            let ab = cosine(&ea, &eb).unwrap().value;
            let ba = cosine(&eb, &ea).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            // power-of-two factors scale f32 storage exactly
            let k = 2f32.powi(exp);
            let scaled: Vec<f32> = a.iter().map(|x| x * k).collect();
            let ka = cosine(&ev(&scaled), &eb).unwrap().value;
            prop_assert!((ka - ab).abs() < 1e-9);
        }

        #[test]
        fn embed_is_permutation_invariant(mut toks in prop::collection::vec("[a-z]{2,5}", 1..8), seed in 0u64..50) {
            let wv = WordVectors::hashing(8, seed);
            let (a, _) = embed_tokens(&toks, &wv);
            toks.reverse();
            let (b, _) = embed_tokens(&toks, &wv);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
