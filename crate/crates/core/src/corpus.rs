//! Review ingestion, k-core filtering, leave-one-out splits, popularity and
//! candidate-pool sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    #[serde(rename = "reviewerID")]
    pub user_id: String,
    #[serde(rename = "asin")]
    pub item_id: String,
    #[serde(rename = "overall")]
    pub rating: f64,
    #[serde(rename = "reviewText")]
    pub text: String,
    #[serde(rename = "unixReviewTime")]
    pub timestamp: i64,
}

impl Review {
    fn is_valid(&self) -> bool {
        !self.user_id.trim().is_empty()
            && !self.item_id.trim().is_empty()
            && (1.0..=5.0).contains(&self.rating)
            && self.timestamp >= 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    JsonLines,
    Csv,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            _ => InputFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub reviews: Vec<Review>,
    pub users: BTreeSet<String>,
    pub items: BTreeSet<String>,
}

impl Dataset {
    pub fn from_reviews(reviews: Vec<Review>) -> Self {
        let users = reviews.iter().map(|r| r.user_id.clone()).collect();
        let items = reviews.iter().map(|r| r.item_id.clone()).collect();
        Dataset {
            reviews,
            users,
            items,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    /// Reviews per user in (timestamp, item_id) order.
    pub fn by_user(&self) -> BTreeMap<&str, Vec<&Review>> {
        let mut out: BTreeMap<&str, Vec<&Review>> = BTreeMap::new();
        for r in &self.reviews {
            out.entry(r.user_id.as_str()).or_default().push(r);
        }
        for v in out.values_mut() {
            v.sort_by(|a, b| chrono_key(a).cmp(&chrono_key(b)));
        }
        out
    }

    pub fn by_item(&self) -> BTreeMap<&str, Vec<&Review>> {
        let mut out: BTreeMap<&str, Vec<&Review>> = BTreeMap::new();
        for r in &self.reviews {
            out.entry(r.item_id.as_str()).or_default().push(r);
        }
        for v in out.values_mut() {
            v.sort_by(|a, b| chrono_key(a).cmp(&chrono_key(b)).then(a.user_id.cmp(&b.user_id)));
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_reviews(path, &self.reviews)
    }
}

fn chrono_key(r: &Review) -> (i64, &str) {
    (r.timestamp, r.item_id.as_str())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub skipped: usize,
    /// Repeat reviews of the same item by the same user; the latest is kept.
    pub duplicates: usize,
}

/// Load reviews, skipping malformed records. Repeat (user, item) pairs keep
/// only the latest review.
pub fn load_reviews(path: &Path, format: InputFormat) -> Result<(Dataset, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let mut raw = Vec::new();
    match format {
        InputFormat::JsonLines => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Review>(&line) {
                    Ok(r) if r.is_valid() => raw.push(r),
                    _ => report.skipped += 1,
                }
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = rdr
                .headers()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
                .clone();
            let col = |names: &[&str]| {
                headers
                    .iter()
                    .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
            };
            let cols = [
                col(&["reviewerID", "user_id", "user"]),
                col(&["asin", "item_id", "item"]),
                col(&["overall", "rating"]),
                col(&["reviewText", "text"]),
                col(&["unixReviewTime", "timestamp"]),
            ];
            let [Some(u), Some(i), Some(rt), Some(tx), Some(ts)] = cols else {
                return Err(Error::Format(format!(
                    "{}: CSV header must name user, item, rating, text and timestamp columns",
                    path.display()
                )));
            };
            for rec in rdr.records() {
                let parsed = rec.ok().and_then(|rec| {
                    Some(Review {
                        user_id: rec.get(u)?.to_string(),
                        item_id: rec.get(i)?.to_string(),
                        rating: rec.get(rt)?.trim().parse().ok()?,
                        text: rec.get(tx)?.to_string(),
                        timestamp: rec.get(ts)?.trim().parse().ok()?,
                    })
                });
                match parsed {
                    Some(r) if r.is_valid() => raw.push(r),
                    _ => report.skipped += 1,
                }
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }

    let mut latest: HashMap<(String, String), usize> = HashMap::new();
    let mut kept: Vec<Option<Review>> = Vec::with_capacity(raw.len());
    for r in raw {
        let key = (r.user_id.clone(), r.item_id.clone());
        match latest.get(&key) {
            Some(&pos) => {
                report.duplicates += 1;
                let prev = kept[pos].as_ref().expect("kept slot");
                if r.timestamp >= prev.timestamp {
                    kept[pos] = Some(r);
                }
            }
            None => {
                latest.insert(key, kept.len());
                kept.push(Some(r));
            }
        }
    }
    if report.skipped > 0 || report.duplicates > 0 {
        log::warn!(
            "{}: skipped {} malformed record(s), collapsed {} duplicate(s)",
            path.display(),
            report.skipped,
            report.duplicates
        );
    }
    Ok((Dataset::from_reviews(kept.into_iter().flatten().collect()), report))
}

pub fn write_reviews(path: &Path, reviews: &[Review]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in reviews {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Iteratively drop users and items with fewer than `k` reviews until every
/// survivor has at least `k`. Runs as a degree-peeling pass over the
/// bipartite review graph.
pub fn k_core_filter(ds: &Dataset, k: usize) -> Dataset {
    let k = k.max(1);
    let n = ds.reviews.len();
    let mut user_ix: HashMap<&str, usize> = HashMap::new();
    let mut item_ix: HashMap<&str, usize> = HashMap::new();
    for r in &ds.reviews {
        let nu = user_ix.len();
        user_ix.entry(&r.user_id).or_insert(nu);
        let ni = item_ix.len();
        item_ix.entry(&r.item_id).or_insert(ni);
    }
    // nodes: users first, then items
    let offset = user_ix.len();
    let mut degree = vec![0usize; offset + item_ix.len()];
    let mut edges_of: Vec<Vec<usize>> = vec![Vec::new(); degree.len()];
    let mut ends = Vec::with_capacity(n);
    for (e, r) in ds.reviews.iter().enumerate() {
        let u = user_ix[r.user_id.as_str()];
        let i = offset + item_ix[r.item_id.as_str()];
        degree[u] += 1;
        degree[i] += 1;
        edges_of[u].push(e);
        edges_of[i].push(e);
        ends.push((u, i));
    }

    let mut alive_edge = vec![true; n];
    let mut removed = vec![false; degree.len()];
    let mut queue: VecDeque<usize> = (0..degree.len()).filter(|&v| degree[v] < k).collect();
    while let Some(v) = queue.pop_front() {
        if removed[v] {
            continue;
        }
        removed[v] = true;
        for &e in &edges_of[v] {
            if !alive_edge[e] {
                continue;
            }
            alive_edge[e] = false;
            let (u, i) = ends[e];
            let other = if u == v { i } else { u };
            degree[other] -= 1;
            degree[v] -= 1;
            if !removed[other] && degree[other] < k {
                queue.push_back(other);
            }
        }
    }

    Dataset::from_reviews(
        ds.reviews
            .iter()
            .zip(&alive_edge)
            .filter(|(_, alive)| **alive)
            .map(|(r, _)| r.clone())
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

#[derive(Debug, Clone)]
pub struct LooSplit {
    pub train: Dataset,
    pub targets: BTreeMap<String, Target>,
    /// Held-out review per target user.
    pub heldout: BTreeMap<String, Review>,
    pub history: BTreeMap<String, Vec<String>>,
    /// Users with a single review; kept in train but never evaluated.
    pub excluded_users: usize,
    /// Every item id seen in the source dataset.
    pub all_items: BTreeSet<String>,
}

/// Hold out each user's latest review, ordered by (timestamp, item_id).
pub fn leave_one_out_split(ds: &Dataset) -> LooSplit {
    let mut train = Vec::with_capacity(ds.reviews.len());
    let mut targets = BTreeMap::new();
    let mut heldout = BTreeMap::new();
    let mut history = BTreeMap::new();
    let mut excluded = 0;
    for (user, seq) in ds.by_user() {
        if seq.len() < 2 {
            excluded += 1;
            train.extend(seq.into_iter().cloned());
            continue;
        }
        let (last, rest) = seq.split_last().expect("len >= 2");
        targets.insert(
            user.to_string(),
            Target {
                user: user.to_string(),
                item: last.item_id.clone(),
                ts: last.timestamp,
            },
        );
        heldout.insert(user.to_string(), (*last).clone());
        history.insert(
            user.to_string(),
            rest.iter().map(|r| r.item_id.clone()).collect(),
        );
        train.extend(rest.iter().map(|r| (*r).clone()));
    }
    if excluded > 0 {
        log::warn!("{excluded} user(s) with a single review excluded from evaluation targets");
    }
    LooSplit {
        train: Dataset::from_reviews(train),
        targets,
        heldout,
        history,
        excluded_users: excluded,
        all_items: ds.items.clone(),
    }
}

impl LooSplit {
    pub fn write_manifest(&self, dir: &Path) -> Result<SplitManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let train_path = dir.join("train.jsonl");
        let heldout_path = dir.join("heldout.jsonl");
        self.train.write_jsonl(&train_path)?;
        write_reviews(&heldout_path, &self.heldout.values().cloned().collect::<Vec<_>>())?;
        let manifest = SplitManifest {
            train_path: PathBuf::from("train.jsonl"),
            heldout_path: PathBuf::from("heldout.jsonl"),
            targets: self.targets.values().cloned().collect(),
        };
        let path = dir.join("split.json");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
        Ok(manifest)
    }

    /// Rebuild a split from a manifest directory written by [`write_manifest`].
    ///
    /// [`write_manifest`]: LooSplit::write_manifest
    pub fn read_manifest(dir: &Path) -> Result<Self> {
        let path = dir.join("split.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SplitManifest = serde_json::from_str(&text)?;
        let (train, _) = load_reviews(&dir.join(&manifest.train_path), InputFormat::JsonLines)?;
        let (held, _) = load_reviews(&dir.join(&manifest.heldout_path), InputFormat::JsonLines)?;
        let mut full = train.reviews.clone();
        full.extend(held.reviews.iter().cloned());
        let split = leave_one_out_split(&Dataset::from_reviews(full));
        let expected: Vec<Target> = split.targets.values().cloned().collect();
        if expected != manifest.targets {
            return Err(Error::Format(format!(
                "{} does not match the reviews it points to",
                path.display()
            )));
        }
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_path: PathBuf,
    pub heldout_path: PathBuf,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityIndex {
    pub counts: BTreeMap<String, u64>,
    pub max_count: u64,
}

impl PopularityIndex {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for r in &ds.reviews {
            *counts.entry(r.item_id.clone()).or_default() += 1;
        }
        let max_count = counts.values().copied().max().unwrap_or(0);
        PopularityIndex { counts, max_count }
    }

    /// `ln(1 + c) / ln(1 + c_max)`; unseen items score 0.
    pub fn popularity(&self, item: &str) -> f64 {
        let c = self.counts.get(item).copied().unwrap_or(0);
        if self.max_count == 0 || c == 0 {
            return 0.0;
        }
        ((c as f64).ln_1p() / (self.max_count as f64).ln_1p()).clamp(0.0, 1.0)
    }
}

/// The ground-truth item plus `pool_size - 1` items the user never touched,
/// sampled uniformly and shuffled with the target at a random slot.
/// Deterministic in (seed, user).
pub fn sample_candidates(
    split: &LooSplit,
    user: &str,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let target = split
        .targets
        .get(user)
        .ok_or_else(|| Error::Contract(format!("user {user} has no held-out target")))?;
    if pool_size == 0 {
        return Err(Error::Contract("pool_size must be positive".into()));
    }
    let seen: BTreeSet<&str> = split
        .history
        .get(user)
        .map(|h| h.iter().map(String::as_str).collect())
        .unwrap_or_default();
    let eligible: Vec<&String> = split
        .all_items
        .iter()
        .filter(|i| **i != target.item && !seen.contains(i.as_str()))
        .collect();
    if pool_size - 1 > eligible.len() {
        return Err(Error::PoolTooLarge {
            user: user.to_string(),
            requested: pool_size,
            available: eligible.len() + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, user));
    let mut picks = index::sample(&mut rng, eligible.len(), pool_size - 1).into_vec();
    picks.sort_unstable();
    let mut pool: Vec<String> = picks.into_iter().map(|i| eligible[i].clone()).collect();
    use rand::seq::SliceRandom;
    pool.shuffle(&mut rng);
    let at = rng.random_range(0..=pool.len());
    pool.insert(at, target.item.clone());
    Ok(pool)
}
