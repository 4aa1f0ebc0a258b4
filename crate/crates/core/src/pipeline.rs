//! Stage functions over an on-disk artifact layout. Each stage reads what
//! earlier stages wrote under the output directory and the profile store.
//!
//! ```text
//! <out>/split/{train,heldout}.jsonl, split.json   ingest
//! <out>/aspects.json, clusters.json               extract-aspects
//! <store>/{user,item}/*                           build-profiles
//! <out>/recommend/<user>_<task>.json              recommend, explain
//! <out>/reports/<task>_<config>.{json,rows.jsonl} evaluate, ablate
//! <out>/ablation.txt                              ablate
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Agent, FeedbackRecord, RecommendationResult, TaskKind};
use crate::aspects::{extract_aspects, AspectModel, CategoryNamer, ExtractConfig, LlmNamer, MappingNamer};
use crate::corpus::{k_core_filter, leave_one_out_split, load_reviews, sample_candidates, InputFormat, LooSplit, PopularityIndex};
use crate::error::{Error, Result};
use crate::eval::{evaluate, render_table, run_ablation, EvalConfig, EvalContext, EvalReport, EvalUser, RunLog};
use crate::llm::{Backend, LlmConfig};
use crate::memory::MemoryStore;
use crate::profiles::{build_profiles, LlmSummarizer, Profile, ProfileConfig, ProfileKind};
use crate::textvec::WordVectors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub reviews: PathBuf,
    /// Text word vectors; without them every token gets a seeded hashed
    /// vector.
    pub word_vectors: Option<PathBuf>,
    /// Optional JSON map from cluster index or anchor term to a category
    /// name. Without it clusters are named by the backend.
    pub category_names: Option<PathBuf>,
    pub store: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            reviews: PathBuf::from("reviews.jsonl"),
            word_vectors: None,
            category_names: None,
            store: PathBuf::from("out/store"),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub k_core: usize,
    pub seed: u64,
    /// Dimension of hashed vectors when no vector file is configured.
    pub hash_dim: usize,
    /// Give out-of-vocabulary tokens a hashed vector instead of skipping
    /// them.
    pub oov_fallback: bool,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            k_core: 5,
            seed: 42,
            hash_dim: 64,
            oov_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: CorpusParams,
    pub aspects: ExtractConfig,
    pub profiles: ProfileConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
    pub ablation_tasks: Vec<TaskKind>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            corpus: CorpusParams::default(),
            aspects: ExtractConfig::default(),
            profiles: ProfileConfig::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
            ablation_tasks: vec![TaskKind::Direct, TaskKind::Sequential],
            workers: 4,
        }
    }
}

impl RunConfig {
    /// One seed for every seeded step.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.aspects.seed = seed;
        self.eval.seed = seed;
    }

    /// Resolve relative paths against `base`, usually the config file's
    /// directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.reviews);
        fix(&mut self.paths.store);
        fix(&mut self.paths.out);
        if let Some(p) = self.paths.word_vectors.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.category_names.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self, stage: Stage) -> Result<()> {
        if stage == Stage::Ingest && !self.paths.reviews.exists() {
            return Err(Error::Contract(format!("reviews file {} does not exist", self.paths.reviews.display())));
        }
        for p in [&self.paths.word_vectors, &self.paths.category_names].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Contract(format!("{} does not exist", p.display())));
            }
        }
        if self.workers == 0 {
            return Err(Error::Contract("workers must be at least 1".into()));
        }
        if self.corpus.hash_dim == 0 {
            return Err(Error::Contract("hash_dim must be positive".into()));
        }
        if self.ablation_tasks.is_empty() {
            return Err(Error::Contract("ablation_tasks is empty".into()));
        }
        self.llm.validate()?;
        self.eval.validate()
    }
}

/// Pipeline stages, named after the subcommands that run them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    ExtractAspects,
    BuildProfiles,
    Recommend,
    Explain,
    Evaluate,
    Ablate,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::ExtractAspects => "extract-aspects",
            Stage::BuildProfiles => "build-profiles",
            Stage::Recommend => "recommend",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
        }
    }
}

/// Artifact locations derived from a config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
    pub store: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout {
            out: cfg.paths.out.clone(),
            store: cfg.paths.store.clone(),
        }
    }

    pub fn split_dir(&self) -> PathBuf {
        self.out.join("split")
    }

    pub fn aspects(&self) -> PathBuf {
        self.out.join("aspects.json")
    }

    pub fn clusters(&self) -> PathBuf {
        self.out.join("clusters.json")
    }

    pub fn profiles_marker(&self) -> PathBuf {
        self.store.join("profiles.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn recommend_dir(&self) -> PathBuf {
        self.out.join("recommend")
    }

    pub fn ablation_table(&self) -> PathBuf {
        self.out.join("ablation.txt")
    }

    /// Inputs a stage reads, each with the stage producing it.
    pub fn inputs(&self, stage: Stage) -> Vec<(PathBuf, Stage)> {
        let split = (self.split_dir().join("split.json"), Stage::Ingest);
        let aspects = (self.aspects(), Stage::ExtractAspects);
        let profiles = (self.profiles_marker(), Stage::BuildProfiles);
        match stage {
            Stage::Ingest => vec![],
            Stage::ExtractAspects => vec![split],
            Stage::BuildProfiles => vec![split, aspects],
            _ => vec![split, profiles],
        }
    }

    pub fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Ingest => vec![self.split_dir()],
            Stage::ExtractAspects => vec![self.aspects(), self.clusters()],
            Stage::BuildProfiles => vec![self.store.join("user"), self.store.join("item"), self.profiles_marker()],
            Stage::Recommend | Stage::Explain => vec![self.recommend_dir()],
            Stage::Evaluate => vec![self.reports_dir(), self.store.join("log.jsonl")],
            Stage::Ablate => vec![self.reports_dir(), self.ablation_table(), self.store.join("log.jsonl")],
        }
    }

    pub fn require(&self, stage: Stage) -> Result<()> {
        for (path, producer) in self.inputs(stage) {
            if !path.exists() {
                return Err(Error::MissingArtifact {
                    path,
                    producer: producer.command(),
                });
            }
        }
        Ok(())
    }
}

/// Human-readable description of what a stage would read and write.
pub fn plan(cfg: &RunConfig, stage: Stage) -> Vec<String> {
    let layout = Layout::new(cfg);
    let mut lines = vec![format!("stage: {}", stage.command())];
    if stage == Stage::Ingest {
        lines.push(format!("read   {}", cfg.paths.reviews.display()));
    }
    for (p, producer) in layout.inputs(stage) {
        let state = if p.exists() { "present" } else { "missing" };
        lines.push(format!("read   {} ({state}, from {})", p.display(), producer.command()));
    }
    for p in layout.outputs(stage) {
        lines.push(format!("write  {}", p.display()));
    }
    lines
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_word_vectors(cfg: &RunConfig) -> Result<WordVectors> {
    match &cfg.paths.word_vectors {
        Some(path) => {
            let (wv, stats) = WordVectors::load(path)?;
            log::info!("{} word vectors of dim {} ({} skipped)", stats.loaded, wv.dim(), stats.skipped);
            Ok(if cfg.corpus.oov_fallback {
                wv.with_fallback(cfg.corpus.seed)
            } else {
                wv
            })
        }
        None => Ok(WordVectors::hashing(cfg.corpus.hash_dim, cfg.corpus.seed)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub loaded: usize,
    pub skipped: usize,
    pub duplicates: usize,
    pub kept_reviews: usize,
    pub users: usize,
    pub items: usize,
    pub targets: usize,
}

pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let path = &cfg.paths.reviews;
    let (ds, report) = load_reviews(path, InputFormat::from_path(path))?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset(path.clone()));
    }
    let core = k_core_filter(&ds, cfg.corpus.k_core);
    if core.is_empty() {
        return Err(Error::Contract(format!(
            "no reviews survive {}-core filtering",
            cfg.corpus.k_core
        )));
    }
    let split = leave_one_out_split(&core);
    split.write_manifest(&Layout::new(cfg).split_dir())?;
    Ok(IngestSummary {
        loaded: ds.reviews.len(),
        skipped: report.skipped,
        duplicates: report.duplicates,
        kept_reviews: core.reviews.len(),
        users: core.users.len(),
        items: core.items.len(),
        targets: split.targets.len(),
    })
}

fn load_split(layout: &Layout) -> Result<LooSplit> {
    LooSplit::read_manifest(&layout.split_dir())
}

pub fn extract_aspects_stage(cfg: &RunConfig, backend: &dyn Backend) -> Result<AspectModel> {
    let layout = Layout::new(cfg);
    layout.require(Stage::ExtractAspects)?;
    let split = load_split(&layout)?;
    let wv = load_word_vectors(cfg)?;
    let mapping;
    let llm_namer;
    let namer: &dyn CategoryNamer = match &cfg.paths.category_names {
        Some(p) => {
            mapping = MappingNamer::load(p)?;
            &mapping
        }
        None => {
            llm_namer = LlmNamer { backend };
            &llm_namer
        }
    };
    let (model, clusters) = extract_aspects(&split.train.reviews, &wv, &cfg.aspects, namer)?;
    model.save(&layout.aspects())?;
    write_json(&layout.clusters(), &clusters)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub users: usize,
    pub items: usize,
    /// Profiles whose content changed and were rewritten.
    pub written: usize,
}

pub fn build_profiles_stage(cfg: &RunConfig, backend: &dyn Backend) -> Result<ProfileSummary> {
    let layout = Layout::new(cfg);
    layout.require(Stage::BuildProfiles)?;
    let split = load_split(&layout)?;
    let model = AspectModel::load(&layout.aspects())?;
    let wv = load_word_vectors(cfg)?;
    let summarizer = LlmSummarizer { backend };
    let store = MemoryStore::open(&layout.store)?;

    let pool = worker_pool(cfg.workers)?;
    let (users, items) = pool.install(|| -> Result<_> {
        let users = build_profiles(&split.train.by_user(), ProfileKind::User, &model, &summarizer, &wv, &cfg.profiles)?;
        let items = build_profiles(&split.train.by_item(), ProfileKind::Item, &model, &summarizer, &wv, &cfg.profiles)?;
        Ok((users, items))
    })?;

    let mut written = 0;
    for p in users.values().chain(items.values()) {
        // Unchanged profiles keep their version so reruns leave the store as is.
        if store.get_profile(p.kind, &p.owner_id).as_ref() != Some(p) {
            store.put_profile(p)?;
            written += 1;
        }
    }
    let summary = ProfileSummary {
        users: users.len(),
        items: items.len(),
        written,
    };
    write_json(
        &layout.profiles_marker(),
        &ProfileSummary { written: 0, ..summary.clone() },
    )?;
    Ok(summary)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))
}

/// Evaluation users with their pools, item profiles and popularity. Items
/// with no training reviews get an empty profile.
pub fn build_context(
    split: &LooSplit,
    users: &BTreeMap<String, Profile>,
    items: &BTreeMap<String, Profile>,
    wv: WordVectors,
    pool_size: usize,
    seed: u64,
) -> Result<EvalContext> {
    let pop = PopularityIndex::from_dataset(&split.train);
    let dim = wv.dim();
    let mut all = BTreeMap::new();
    let mut popularity = BTreeMap::new();
    for id in &split.all_items {
        let p = items
            .get(id)
            .cloned()
            .unwrap_or_else(|| Profile::empty(id, ProfileKind::Item, dim));
        all.insert(id.clone(), p);
        popularity.insert(id.clone(), pop.popularity(id));
    }
    let mut eval_users = Vec::with_capacity(split.targets.len());
    for (uid, target) in &split.targets {
        let Some(profile) = users.get(uid) else {
            log::warn!("user {uid} has no profile; skipped");
            continue;
        };
        eval_users.push(EvalUser {
            user_id: uid.clone(),
            profile: profile.clone(),
            history: split.history.get(uid).cloned().unwrap_or_default(),
            ground_truth: target.item.clone(),
            pool: sample_candidates(split, uid, pool_size, seed)?,
            reference: split.heldout.get(uid).map(|r| r.text.clone()).unwrap_or_default(),
            ts: target.ts,
        });
    }
    Ok(EvalContext {
        users: eval_users,
        items: all,
        popularity,
        pool_size,
        seed,
        wv,
    })
}

pub fn load_context(cfg: &RunConfig, stage: Stage) -> Result<EvalContext> {
    let layout = Layout::new(cfg);
    layout.require(stage)?;
    let split = load_split(&layout)?;
    let store = MemoryStore::open(&layout.store)?;
    let users = store.profiles(ProfileKind::User);
    let items = store.profiles(ProfileKind::Item);
    if users.is_empty() {
        return Err(Error::MissingArtifact {
            path: layout.store.join("user"),
            producer: Stage::BuildProfiles.command(),
        });
    }
    build_context(&split, &users, &items, load_word_vectors(cfg)?, cfg.eval.pool_size, cfg.eval.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendOutput {
    pub ground_truth: String,
    pub hit: bool,
    pub result: RecommendationResult,
    pub feedback: Vec<FeedbackRecord>,
}

/// Run one task for one user under the configured re-ranking and
/// self-feedback switches, write the result and log the run.
pub fn recommend(cfg: &RunConfig, backend: &dyn Backend, user: &str, task: TaskKind) -> Result<RecommendOutput> {
    let stage = if task == TaskKind::Explanation {
        Stage::Explain
    } else {
        Stage::Recommend
    };
    let ctx = load_context(cfg, stage)?;
    let u = ctx
        .users
        .iter()
        .find(|u| u.user_id == user)
        .ok_or_else(|| Error::Contract(format!("user {user} is not an evaluation user")))?;
    let ecfg = EvalConfig {
        task,
        ..cfg.eval.clone()
    };
    let agent = Agent::new(backend, ecfg.agent_config())?;
    let input = ctx.task_input(u, task, ecfg.category_source)?;
    let rounds = if ecfg.use_sf { ecfg.max_rounds } else { 0 };
    let outcome = agent.self_feedback_loop(&input, &ecfg.weights, &u.ground_truth, rounds, ecfg.feedback_mode())?;

    let store = MemoryStore::open(&cfg.paths.store)?;
    store.append_batch(
        outcome
            .events
            .iter()
            .map(|e| (e.kind, u.ts, with_config(&e.payload, &ecfg.name()))),
    )?;
    let out = RecommendOutput {
        ground_truth: u.ground_truth.clone(),
        hit: outcome.result.ranked_items.contains(&u.ground_truth),
        result: outcome.result,
        feedback: outcome.feedback,
    };
    let path = Layout::new(cfg)
        .recommend_dir()
        .join(format!("{}_{}.json", file_safe(user), task.as_str()));
    write_json(&path, &out)?;
    Ok(out)
}

fn with_config(payload: &serde_json::Value, name: &str) -> serde_json::Value {
    let mut p = payload.clone();
    if let Some(obj) = p.as_object_mut() {
        obj.insert("config".into(), json!(name));
    }
    p
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn report_stem(report: &EvalReport) -> String {
    format!("{}_{}", report.task.as_str(), file_safe(&report.name))
}

fn persist(layout: &Layout, store: &MemoryStore, report: &EvalReport, log: RunLog) -> Result<()> {
    let dir = layout.reports_dir();
    let stem = report_stem(report);
    write_json(&dir.join(format!("{stem}.json")), report)?;
    report.write_rows(&dir.join(format!("{stem}.rows.jsonl")))?;
    store.append_batch(
        log.into_iter()
            .map(|(ts, e)| (e.kind, ts, with_config(&e.payload, &report.name))),
    )?;
    Ok(())
}

pub fn evaluate_stage(cfg: &RunConfig, backend: &dyn Backend, cancel: Option<&AtomicBool>) -> Result<EvalReport> {
    let ctx = load_context(cfg, Stage::Evaluate)?;
    let (report, log) = evaluate(&ctx, &cfg.eval, backend, cfg.workers, cancel)?;
    let layout = Layout::new(cfg);
    let store = MemoryStore::open(&layout.store)?;
    persist(&layout, &store, &report, log)?;
    Ok(report)
}

/// The full grid for every ablation task. Writes one report per cell and
/// an aligned summary table.
pub fn ablate(cfg: &RunConfig, backend: &dyn Backend, cancel: Option<&AtomicBool>) -> Result<Vec<EvalReport>> {
    let ctx = load_context(cfg, Stage::Ablate)?;
    let runs = run_ablation(&ctx, &cfg.eval, &cfg.ablation_tasks, backend, cfg.workers, cancel)?;
    let layout = Layout::new(cfg);
    let store = MemoryStore::open(&layout.store)?;
    let mut reports = Vec::with_capacity(runs.len());
    for (report, log) in runs {
        persist(&layout, &store, &report, log)?;
        reports.push(report);
    }
    let mut table = String::new();
    for task in &cfg.ablation_tasks {
        let of_task: Vec<&EvalReport> = reports.iter().filter(|r| r.task == *task).collect();
        table.push_str(&format!("[{}]\n", task.as_str()));
        table.push_str(&render_table(&of_task));
        table.push('\n');
    }
    fs::write(layout.ablation_table(), &table).map_err(|e| Error::io(layout.ablation_table(), e))?;
    Ok(reports)
}
