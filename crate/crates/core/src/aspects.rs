//! Aspect extraction: cluster review vocabulary in word-vector space, keep the
//! terms nearest each centroid, name the clusters, and tag sentences with
//! every category whose terms they mention.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Review;
use crate::error::{Error, Result};
use crate::llm::{self, Backend, TemplateName};
use crate::textvec::{tokenize, WordVectors};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectCategory {
    pub name: String,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AspectModel {
    pub categories: Vec<AspectCategory>,
    #[serde(skip)]
    term_index: BTreeMap<String, BTreeSet<String>>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub stem: bool,
}

#[derive(Deserialize)]
struct AspectModelFile {
    categories: Vec<AspectCategory>,
    #[serde(default)]
    stem: bool,
}

impl<'de> Deserialize<'de> for AspectModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = AspectModelFile::deserialize(d)?;
        AspectModel::new(f.categories, f.stem).map_err(serde::de::Error::custom)
    }
}

impl AspectModel {
    pub fn new(categories: Vec<AspectCategory>, stem: bool) -> Result<Self> {
        let mut term_index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in &categories {
            if c.name.trim().is_empty() {
                return Err(Error::Contract("aspect category with empty name".into()));
            }
            if c.terms.is_empty() {
                return Err(Error::Contract(format!("category {} has no terms", c.name)));
            }
            let distinct: BTreeSet<&String> = c.terms.iter().collect();
            if distinct.len() != c.terms.len() {
                return Err(Error::Contract(format!("category {} repeats a term", c.name)));
            }
            for t in &c.terms {
                if t.is_empty() || t.to_lowercase() != *t {
                    return Err(Error::Contract(format!("term `{t}` must be lowercase and non-empty")));
                }
                let key = if stem { light_stem(t) } else { t.clone() };
                term_index.entry(key).or_default().insert(c.name.clone());
            }
        }
        Ok(AspectModel {
            categories,
            term_index,
            stem,
        })
    }

    pub fn term_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.term_index
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Strips a handful of English inflection suffixes. Only used when the
/// stemming flag is on.
pub fn light_stem(token: &str) -> String {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.chars().count() >= 3 && !(suffix == "s" && stem.ends_with('s')) {
                return stem.to_string();
            }
        }
    }
    token.to_string()
}

/// Every category with at least one term among the sentence's tokens.
pub fn label_sentence(sentence: &str, model: &AspectModel) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for tok in tokenize(sentence) {
        let key = if model.stem { light_stem(&tok) } else { tok };
        if let Some(cats) = model.term_index.get(&key) {
            out.extend(cats.iter().cloned());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub min_freq: usize,
    /// Upper bound on the fraction of reviews a token may appear in.
    pub max_df: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_freq: 10,
            max_df: 0.3,
        }
    }
}

pub fn build_vocab(reviews: &[Review], cfg: VocabConfig) -> BTreeSet<String> {
    let mut tf: HashMap<String, usize> = HashMap::new();
    let mut df: HashMap<String, usize> = HashMap::new();
    for r in reviews {
        let toks = tokenize(&r.text);
        let uniq: BTreeSet<&String> = toks.iter().collect();
        for t in uniq {
            *df.entry(t.clone()).or_default() += 1;
        }
        for t in toks {
            *tf.entry(t).or_default() += 1;
        }
    }
    let n = reviews.len().max(1) as f64;
    tf.into_iter()
        .filter(|(t, c)| *c >= cfg.min_freq && (df[t] as f64) / n <= cfg.max_df)
        .filter(|(t, _)| t.chars().any(char::is_alphabetic))
        .map(|(t, _)| t)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<String, usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    assign: Vec<usize>,
    inertia: f64,
    trace: Vec<f64>,
    iterations: usize,
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> LloydRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut assign = vec![usize::MAX; points.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dists[i] = d;
            inertia += d;
        }
        if let Some(prev) = trace.last() {
            debug_assert!(inertia <= prev + 1e-9 * prev.max(1.0), "k-means inertia increased");
        }
        trace.push(inertia);
        if !changed && iterations > 1 {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = BTreeSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // empty cluster: re-seed on the point farthest from its centroid
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|a, b| dists[*a].total_cmp(&dists[*b]).then(b.cmp(a)))
                    .unwrap_or(0);
                taken.insert(far);
                centroids[c] = points[far].clone();
            }
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    LloydRun {
        centroids,
        assign,
        inertia,
        trace,
        iterations,
    }
}

/// Lloyd's k-means with k-means++ seeding over the vectors of `vocab`,
/// keeping the lowest-inertia run out of `restarts`.
pub fn cluster_terms(
    wv: &WordVectors,
    vocab: &BTreeSet<String>,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ClusterResult> {
    let tokens: Vec<&String> = vocab.iter().filter(|t| wv.contains(t)).collect();
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if tokens.len() < k {
        return Err(Error::Contract(format!(
            "{} in-vocabulary tokens cannot form {k} clusters",
            tokens.len()
        )));
    }
    let points: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| wv.get(t).expect("filtered").iter().map(|v| f64::from(*v)).collect())
        .collect();

    let mut best: Option<LloydRun> = None;
    for r in 0..restarts.max(1) {
        let run = lloyd(&points, k, seed.wrapping_add(r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one run");
    Ok(ClusterResult {
        k,
        centroids: run.centroids,
        assignment: tokens
            .iter()
            .zip(&run.assign)
            .map(|(t, c)| ((*t).clone(), *c))
            .collect(),
        inertia: run.inertia,
        inertia_trace: run.trace,
        iterations: run.iterations,
    })
}

/// Up to `m` cluster members ordered by distance to the centroid, ties by
/// token.
pub fn top_terms(cr: &ClusterResult, wv: &WordVectors, cluster: usize, m: usize) -> Vec<String> {
    let Some(centroid) = cr.centroids.get(cluster) else {
        return Vec::new();
    };
    let mut members: Vec<(f64, &String)> = cr
        .assignment
        .iter()
        .filter(|(_, c)| **c == cluster)
        .filter_map(|(t, _)| {
            let v: Vec<f64> = wv.get(t)?.iter().map(|x| f64::from(*x)).collect();
            Some((sq_dist(&v, centroid), t))
        })
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    members.into_iter().take(m).map(|(_, t)| t.clone()).collect()
}

pub trait CategoryNamer {
    fn name(&self, cluster: usize, terms: &[String]) -> Result<String>;
}

/// Names from a JSON map keyed by cluster index or by anchor term.
#[derive(Debug, Clone, Default)]
pub struct MappingNamer {
    pub map: BTreeMap<String, String>,
}

impl MappingNamer {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(MappingNamer {
            map: serde_json::from_str(&text)?,
        })
    }
}

impl CategoryNamer for MappingNamer {
    fn name(&self, cluster: usize, terms: &[String]) -> Result<String> {
        self.map
            .get(&cluster.to_string())
            .or_else(|| terms.iter().find_map(|t| self.map.get(t)))
            .filter(|n| !n.trim().is_empty())
            .cloned()
            .ok_or_else(|| Error::UnnamedCluster {
                cluster,
                terms: terms.to_vec(),
            })
    }
}

pub struct LlmNamer<'a> {
    pub backend: &'a dyn Backend,
}

impl CategoryNamer for LlmNamer<'_> {
    fn name(&self, _cluster: usize, terms: &[String]) -> Result<String> {
        let prompt = llm::render(
            TemplateName::CategoryNaming,
            &[("terms", terms.join(", "))],
        )?;
        let reply = self.backend.complete(TemplateName::CategoryNaming, &prompt)?;
        let line = reply
            .response_text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or_default();
        let name = line
            .strip_prefix("Category:")
            .unwrap_or(line)
            .trim()
            .trim_matches('"')
            .to_string();
        if name.is_empty() {
            return Err(Error::Parse("empty category name".into()));
        }
        Ok(name)
    }
}

/// Name each cluster; repeated names get `-2`, `-3`, ... suffixes in input
/// order.
pub fn name_categories(
    clusters: &[(usize, Vec<String>)],
    namer: &dyn CategoryNamer,
) -> Result<Vec<AspectCategory>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(clusters.len());
    for (id, terms) in clusters {
        let base = namer.name(*id, terms)?.trim().to_string();
        let mut name = base.clone();
        let count = seen.entry(base.clone()).or_insert(0);
        *count += 1;
        let mut n = *count;
        while used.contains(&name) {
            n = n.max(2);
            name = format!("{base}-{n}");
            n += 1;
        }
        used.insert(name.clone());
        out.push(AspectCategory {
            name,
            terms: terms.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
    pub top_terms: usize,
    pub vocab: VocabConfig,
    pub stem: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            k: 13,
            seed: 42,
            max_iter: 100,
            restarts: 10,
            top_terms: 15,
            vocab: VocabConfig::default(),
            stem: false,
        }
    }
}

/// Default category counts per Amazon domain.
pub fn default_k_for_domain(domain: &str) -> Option<usize> {
    match domain.to_ascii_lowercase().as_str() {
        "beauty" => Some(13),
        "sports" => Some(10),
        "toys" => Some(12),
        _ => None,
    }
}

/// Full extraction pass: vocabulary, clustering, top terms, naming.
pub fn extract_aspects(
    reviews: &[Review],
    wv: &WordVectors,
    cfg: &ExtractConfig,
    namer: &dyn CategoryNamer,
) -> Result<(AspectModel, ClusterResult)> {
    let vocab = build_vocab(reviews, cfg.vocab);
    let cr = cluster_terms(wv, &vocab, cfg.k, cfg.seed, cfg.max_iter, cfg.restarts)?;
    let clusters: Vec<(usize, Vec<String>)> = (0..cfg.k)
        .map(|c| (c, top_terms(&cr, wv, c, cfg.top_terms)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let categories = name_categories(&clusters, namer)?;
    Ok((AspectModel::new(categories, cfg.stem)?, cr))
}
