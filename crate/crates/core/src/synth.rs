//! Seeded synthetic data: a small review corpus with planted aspect themes
//! and matching word vectors, and a profile-level scenario where only
//! re-weighted scoring surfaces the held-out item.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_reviews, Review};
use crate::error::{Error, Result};
use crate::eval::{EvalContext, EvalUser};
use crate::profiles::{Profile, ProfileKind};
use crate::textvec::{EmbeddingVector, WordVectors};

/// Planted themes and their terms.
pub const THEMES: [(&str, [&str; 8]); 8] = [
    ("Scent", ["musk", "vanilla", "lavender", "citrus", "floral", "fragrance", "aroma", "sandalwood"]),
    ("Texture", ["creamy", "silky", "smooth", "greasy", "lightweight", "thick", "velvety", "sticky"]),
    ("Color", ["shade", "pigment", "tint", "hue", "bright", "pastel", "matte", "glossy"]),
    ("Packaging", ["bottle", "pump", "tube", "jar", "cap", "packaging", "container", "nozzle"]),
    ("Price", ["price", "cheap", "expensive", "value", "bargain", "cost", "affordable", "pricey"]),
    ("Skin", ["moisturizing", "hydrating", "dry", "oily", "acne", "sensitive", "soothing", "irritation"]),
    ("Longevity", ["lasting", "durable", "fade", "hours", "wear", "longevity", "stays", "smudge"]),
    ("Routine", ["morning", "evening", "night", "daily", "routine", "weekend", "travel", "gym"]),
];

const ADJECTIVES: [&str; 3] = ["great", "nice", "good"];
const FILLER: [&str; 4] = ["great", "nice", "good", "love"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub min_reviews: usize,
    pub max_reviews: usize,
    /// Relative purchase weight of an item sharing both themes with the
    /// buyer; one shared theme weighs 1.
    pub pair_weight: f64,
    /// Relative purchase weight of an item sharing no theme.
    pub stray_weight: f64,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 160,
            min_reviews: 7,
            max_reviews: 12,
            pair_weight: 8.0,
            stray_weight: 0.05,
            dim: 16,
            noise: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub reviews: Vec<Review>,
    /// Token vectors in file order.
    pub vectors: Vec<(String, Vec<f32>)>,
    pub user_themes: BTreeMap<String, [usize; 2]>,
    pub item_themes: BTreeMap<String, [usize; 2]>,
}

fn two_distinct(rng: &mut ChaCha8Rng, n: usize) -> [usize; 2] {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    [a, b]
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, theme: usize) -> String {
    let terms = &THEMES[theme].1;
    let t1 = terms.choose(rng).expect("non-empty");
    let adj = ADJECTIVES.choose(rng).expect("non-empty");
    match rng.random_range(0..3) {
        0 => format!("The {t1} is {adj}"),
        1 => {
            let t2 = terms.choose(rng).expect("non-empty");
            format!("Love the {t1} and the {t2}")
        }
        _ => format!("{} {t1}", capitalize(adj)),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.users == 0 || cfg.items < 2 || cfg.min_reviews == 0 || cfg.max_reviews < cfg.min_reviews {
        return Err(Error::Contract(format!("unusable synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_themes = THEMES.len();

    let item_ids: Vec<String> = (0..cfg.items).map(|i| format!("P{i:04}")).collect();
    let item_themes: BTreeMap<String, [usize; 2]> = item_ids
        .iter()
        .map(|id| (id.clone(), two_distinct(&mut rng, n_themes)))
        .collect();

    let mut reviews = Vec::new();
    let mut user_themes = BTreeMap::new();
    for u in 0..cfg.users {
        let user = format!("U{u:04}");
        let likes = two_distinct(&mut rng, n_themes);
        user_themes.insert(user.clone(), likes);
        let weights: Vec<f64> = item_ids
            .iter()
            .map(|i| match item_themes[i].iter().filter(|t| likes.contains(t)).count() {
                2 => cfg.pair_weight,
                1 => 1.0,
                _ => cfg.stray_weight,
            })
            .collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Contract(format!("purchase weights: {e}")))?;
        let count = rng.random_range(cfg.min_reviews..=cfg.max_reviews).min(cfg.items);
        let mut bought: BTreeSet<&String> = BTreeSet::new();
        let mut ts = 1_500_000_000 + rng.random_range(0..10_000_000i64);
        while bought.len() < count {
            let pick = &item_ids[dist.sample(&mut rng)];
            if !bought.insert(pick) {
                continue;
            }
            let themes = item_themes[pick];
            let shared: Vec<usize> = themes.iter().copied().filter(|t| likes.contains(t)).collect();
            let n_sent = rng.random_range(2..=4);
            let text = (0..n_sent)
                .map(|_| {
                    let t = if !shared.is_empty() && rng.random_bool(0.7) {
                        *shared.choose(&mut rng).expect("non-empty")
                    } else {
                        *themes.choose(&mut rng).expect("non-empty")
                    };
                    sentence(&mut rng, t)
                })
                .collect::<Vec<_>>()
                .join(". ")
                + ".";
            ts += rng.random_range(3_600..2_000_000i64);
            reviews.push(Review {
                user_id: user.clone(),
                item_id: pick.clone(),
                rating: f64::from(rng.random_range(3..=5u8)),
                text,
                timestamp: ts,
            });
        }
    }

    let mut vectors = Vec::new();
    for (_, terms) in THEMES.iter() {
        let center = gaussian(&mut rng, cfg.dim, 1.0);
        for t in terms {
            let noise = gaussian(&mut rng, cfg.dim, cfg.noise);
            let v = center.iter().zip(&noise).map(|(c, n)| (c + n) as f32).collect();
            vectors.push((t.to_string(), v));
        }
    }
    for w in FILLER {
        vectors.push((w.to_string(), gaussian(&mut rng, cfg.dim, 1.0).into_iter().map(|x| x as f32).collect()));
    }

    Ok(SynthCorpus {
        reviews,
        vectors,
        user_themes,
        item_themes,
    })
}

impl SynthCorpus {
    pub fn word_vectors(&self) -> WordVectors {
        let dim = self.vectors.first().map_or(1, |(_, v)| v.len());
        WordVectors::from_table(dim, self.vectors.iter().cloned().collect()).expect("uniform dims")
    }

    /// Writes `reviews.jsonl` and `vectors.txt` (with a `count dim` header).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_reviews(&dir.join("reviews.jsonl"), &self.reviews)?;
        let path = dir.join("vectors.txt");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        let io = |e| Error::io(&path, e);
        writeln!(w, "{} {dim}", self.vectors.len()).map_err(io)?;
        for (tok, v) in &self.vectors {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            writeln!(w, "{tok} {}", vals.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Knobs of [`feedback_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub users: usize,
    /// Share of users whose pool is built so that only rotated weights
    /// surface the ground truth.
    pub engineered_share: f64,
    pub pool_size: usize,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            users: 100,
            engineered_share: 0.4,
            pool_size: 100,
            distractors: 12,
            seed: 42,
        }
    }
}

fn at_cosine(c: f64) -> EmbeddingVector {
    EmbeddingVector::from(vec![c as f32, (1.0 - c * c).max(0.0).sqrt() as f32])
}

fn scenario_profile(id: &str, kind: ProfileKind, emb: EmbeddingVector, cats: &[&str]) -> Profile {
    Profile {
        owner_id: id.to_string(),
        kind,
        summaries: cats.iter().map(|c| (c.to_string(), format!("cares about {}", c.to_lowercase()))).collect(),
        embedding: emb,
        built_at: 0,
    }
}

/// Profile-level evaluation context. For engineered users the ground truth
/// has cosine 0.3, full category overlap and popularity 1; a block of
/// distractors has cosine 0.8, full overlap and popularity 0.3; everything
/// else scores zero. Under (0.4, 0.4, 0.2) the distractors outrank the
/// ground truth (0.78 vs 0.72); once 0.1 moves from profile to popularity
/// weight the order flips (0.73 vs 0.79). Other users get random pools.
pub fn feedback_scenario(cfg: &ScenarioConfig) -> EvalContext {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut users = Vec::with_capacity(cfg.users);
    let mut items = BTreeMap::new();
    let mut popularity = BTreeMap::new();
    let user_cats = ["A", "B"];
    let all_cats = ["A", "B", "C", "D"];
    let engineered = (cfg.users as f64 * cfg.engineered_share).round() as usize;

    for u in 0..cfg.users {
        let uid = format!("S{u:03}");
        let profile = scenario_profile(&uid, ProfileKind::User, at_cosine(1.0), &user_cats);
        let mut pool = Vec::with_capacity(cfg.pool_size);
        let gt = format!("{uid}-gt");
        let mut add = |id: String, p: Profile, pop: f64, pool: &mut Vec<String>| {
            items.insert(id.clone(), p);
            popularity.insert(id.clone(), pop);
            pool.push(id);
        };
        if u < engineered {
            add(gt.clone(), scenario_profile(&gt, ProfileKind::Item, at_cosine(0.3), &user_cats), 1.0, &mut pool);
            for d in 0..cfg.distractors {
                let id = format!("{uid}-d{d:02}");
                add(id.clone(), scenario_profile(&id, ProfileKind::Item, at_cosine(0.8), &user_cats), 0.3, &mut pool);
            }
            for n in pool.len()..cfg.pool_size {
                let id = format!("{uid}-n{n:03}");
                add(id.clone(), scenario_profile(&id, ProfileKind::Item, at_cosine(0.0), &["Z"]), 0.0, &mut pool);
            }
        } else {
            for n in 0..cfg.pool_size {
                let id = if n == 0 { gt.clone() } else { format!("{uid}-r{n:03}") };
                let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let k = rng.random_range(1..=all_cats.len());
                let mut cats = all_cats.to_vec();
                cats.shuffle(&mut rng);
                cats.truncate(k);
                let pop = rng.random_range(0.0..1.0);
                add(id.clone(), scenario_profile(&id, ProfileKind::Item, at_cosine(angle.cos()), &cats), pop, &mut pool);
            }
        }
        pool.shuffle(&mut rng);
        let history: Vec<String> = (0..3)
            .map(|h| {
                let id = format!("{uid}-h{h}");
                items.insert(id.clone(), scenario_profile(&id, ProfileKind::Item, at_cosine(0.5), &["A"]));
                popularity.insert(id.clone(), 0.5);
                id
            })
            .collect();
        users.push(EvalUser {
            user_id: uid,
            profile,
            history,
            ground_truth: gt,
            pool,
            reference: "cares about a and b".into(),
            ts: u as i64,
        });
    }
    EvalContext {
        users,
        items,
        popularity,
        pool_size: cfg.pool_size,
        seed: cfg.seed,
        wv: WordVectors::hashing(8, cfg.seed),
    }
}
