//! Leave-one-out evaluation: ranking metrics, text-overlap metrics for
//! explanations, and the re-ranking x self-feedback ablation grid.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Agent, AgentConfig, AgentEvent, FeedbackMode, TaskInput, TaskKind};
use crate::error::{Error, Result};
use crate::llm::Backend;
use crate::profiles::Profile;
use crate::rerank::{CategorySource, RerankWeights};
use crate::textvec::{cosine, embed_text, WordVectors};

/// 1-based rank of `gt`, if present.
pub fn rank_of(ranked: &[String], gt: &str) -> Option<usize> {
    ranked.iter().position(|i| i == gt).map(|p| p + 1)
}

pub fn hit_at(ranked: &[String], gt: &str, n: usize) -> u8 {
    u8::from(rank_of(ranked, gt).is_some_and(|r| r <= n))
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` inside the cutoff.
pub fn ndcg_at(ranked: &[String], gt: &str, n: usize) -> f64 {
    match rank_of(ranked, gt) {
        Some(r) if r <= n => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// A text metric value; `degenerate` marks an empty input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScore {
    pub value: f64,
    pub degenerate: bool,
}

impl TextScore {
    fn degenerate() -> Self {
        TextScore {
            value: 0.0,
            degenerate: true,
        }
    }

    fn of(value: f64) -> Self {
        TextScore {
            value,
            degenerate: false,
        }
    }
}

/// Lowercased alphanumeric runs; unlike `textvec::tokenize`, stopwords and
/// short tokens are kept.
pub fn text_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate / reference n-gram totals.
fn overlap(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// Sentence BLEU over unigrams and bigrams: geometric mean of the unigram
/// precision and the add-one smoothed bigram precision, times the brevity
/// penalty.
pub fn bleu2(cand: &[String], reference: &[String]) -> TextScore {
    if cand.is_empty() {
        return TextScore::degenerate();
    }
    let (m1, t1, _) = overlap(cand, reference, 1);
    let (m2, t2, _) = overlap(cand, reference, 2);
    let p1 = m1 as f64 / t1 as f64;
    let p2 = (m2 as f64 + 1.0) / (t2 as f64 + 1.0);
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    TextScore {
        value: (bp * (p1 * p2).sqrt()).clamp(0.0, 1.0),
        degenerate: reference.is_empty(),
    }
}

fn f1(matched: usize, cand_total: usize, ref_total: usize) -> f64 {
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / cand_total as f64;
    let r = matched as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> TextScore {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let (m, tc, tr) = overlap(cand, reference, n);
    if tc == 0 || tr == 0 {
        return TextScore::degenerate();
    }
    TextScore::of(f1(m, tc, tr))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> TextScore {
    if cand.is_empty() || reference.is_empty() {
        return TextScore::degenerate();
    }
    TextScore::of(f1(lcs_len(cand, reference), cand.len(), reference.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub top_k: usize,
    pub pool_size: usize,
    pub rerank_top_k: usize,
    pub use_rr: bool,
    pub use_sf: bool,
    pub max_rounds: usize,
    pub seed: u64,
    pub task: TaskKind,
    /// Unranked candidates shown when re-ranking is off.
    pub prompt_budget: usize,
    /// Keep feedback-adjusted weights for the next user instead of
    /// resetting. Forces users to run one at a time.
    pub carry_weights: bool,
    pub weights: RerankWeights,
    pub category_source: CategorySource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: vec![5, 10],
            top_k: 10,
            pool_size: 100,
            rerank_top_k: 30,
            use_rr: true,
            use_sf: true,
            max_rounds: 3,
            seed: 42,
            task: TaskKind::Direct,
            prompt_budget: 100,
            carry_weights: false,
            weights: RerankWeights::default(),
            category_source: CategorySource::UserProfile,
        }
    }
}

/// The four re-ranking / self-feedback combinations, best first.
pub const GRID: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

pub fn config_name(use_rr: bool, use_sf: bool) -> String {
    format!(
        "{}+{}",
        if use_rr { "RR" } else { "No-RR" },
        if use_sf { "SF" } else { "No-SF" }
    )
}

impl EvalConfig {
    pub fn name(&self) -> String {
        config_name(self.use_rr, self.use_sf)
    }

    pub fn feedback_mode(&self) -> FeedbackMode {
        if self.use_rr {
            FeedbackMode::Rr
        } else {
            FeedbackMode::Norr
        }
    }

    pub fn effective_cutoffs(&self) -> Vec<usize> {
        let kept: BTreeSet<usize> = self.cutoffs.iter().copied().filter(|n| *n >= 1 && *n <= self.top_k).collect();
        if kept.len() != self.cutoffs.len() {
            log::warn!("cutoffs above top_k ({}) dropped: {:?}", self.top_k, self.cutoffs);
        }
        kept.into_iter().collect()
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            top_k: self.top_k,
            rerank_top_k: self.rerank_top_k,
            use_rr: self.use_rr,
            prompt_budget: self.prompt_budget,
            ..AgentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size < self.top_k {
            return Err(Error::Contract(format!(
                "pool_size ({}) must be >= top_k ({})",
                self.pool_size, self.top_k
            )));
        }
        if self.effective_cutoffs().is_empty() {
            return Err(Error::Contract("no usable cutoffs".into()));
        }
        self.weights.validate()?;
        self.agent_config().validate()
    }
}

/// One evaluation user with everything fixed before any configuration runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUser {
    pub user_id: String,
    pub profile: Profile,
    pub history: Vec<String>,
    pub ground_truth: String,
    pub pool: Vec<String>,
    /// Held-out review text; the explanation reference.
    pub reference: String,
    /// Logical time of the evaluation point.
    pub ts: i64,
}

/// Shared, immutable inputs of a run: users with their sampled pools, item
/// profiles and popularity.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub users: Vec<EvalUser>,
    pub items: BTreeMap<String, Profile>,
    pub popularity: BTreeMap<String, f64>,
    pub pool_size: usize,
    pub seed: u64,
    pub wv: WordVectors,
}

impl EvalContext {
    fn pop(&self, item: &str) -> f64 {
        self.popularity.get(item).copied().unwrap_or(0.0)
    }

    pub fn user_categories(&self, u: &EvalUser, source: CategorySource) -> BTreeSet<String> {
        match source {
            CategorySource::UserProfile => u.profile.categories(),
            CategorySource::PurchasedItems => u
                .history
                .iter()
                .filter_map(|i| self.items.get(i))
                .flat_map(Profile::categories)
                .collect(),
        }
    }

    pub fn task_input<'a>(&'a self, u: &'a EvalUser, task: TaskKind, source: CategorySource) -> Result<TaskInput<'a>> {
        let pool = u
            .pool
            .iter()
            .map(|id| {
                self.items
                    .get(id)
                    .map(|p| (p, self.pop(id)))
                    .ok_or_else(|| Error::Contract(format!("no profile for candidate {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskInput {
            task,
            user: &u.profile,
            user_categories: self.user_categories(u, source),
            history: u.history.iter().filter_map(|i| self.items.get(i)).collect(),
            pool,
        })
    }
}

pub fn pool_digest(pool: &[String]) -> String {
    let mut h = Sha256::new();
    for id in pool {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub user: String,
    pub task: TaskKind,
    pub ground_truth: String,
    pub ranked: Vec<String>,
    pub rank: Option<usize>,
    /// `HR@n`, `NDCG@n` and, for explanations, `BLEU2`, `R-1`, `R-2`, `R-L`
    /// and `SemSim`.
    pub metrics: BTreeMap<String, f64>,
    pub rounds: usize,
    pub parse_degradations: usize,
    pub weight_fallbacks: usize,
    pub pool_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub users: usize,
    pub task_errors: usize,
    pub cancelled: usize,
    pub parse_degradations: usize,
    pub weight_fallbacks: usize,
    pub feedback_rounds: usize,
    pub degenerate_text_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub task: TaskKind,
    pub config: EvalConfig,
    pub means: BTreeMap<String, f64>,
    pub counters: Counters,
    #[serde(skip)]
    pub rows: Vec<EvalRow>,
}

/// Note attached to the semantic-similarity column.
pub const SEMSIM_NOTE: &str =
    "SemSim is cosine between mean word vectors; it is not comparable to BERTScore";

fn mean_of(rows: &[EvalRow]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        for (k, v) in &r.metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

impl EvalReport {
    /// Means recompute from rows, NDCG never exceeds HR, and both are
    /// non-decreasing in the cutoff.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(format!("{} / {}: {m}", self.name, self.task)));
        if mean_of(&self.rows) != self.means {
            return fail("means do not recompute from rows".into());
        }
        let cutoffs = self.config.effective_cutoffs();
        for r in self.rows.iter().filter(|r| r.error.is_none()) {
            let mut prev = (0.0, 0.0);
            for n in &cutoffs {
                let hr = r.metrics[&format!("HR@{n}")];
                let nd = r.metrics[&format!("NDCG@{n}")];
                if nd > hr || hr < prev.0 || nd < prev.1 {
                    return fail(format!("metric invariant broken for user {}", r.user));
                }
                prev = (hr, nd);
            }
        }
        Ok(())
    }

    pub fn write_rows(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["config"] = self.name.clone().into();
            serde_json::to_writer(&mut w, &v)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn explanation_scores(text: &str, reference: &str, wv: &WordVectors) -> (BTreeMap<String, f64>, usize) {
    let body = text.split_once(':').map_or(text, |(_, b)| b).trim();
    let (c, r) = (text_tokens(body), text_tokens(reference));
    let scores = [
        ("BLEU2", bleu2(&c, &r)),
        ("R-1", rouge_n(&c, &r, 1)),
        ("R-2", rouge_n(&c, &r, 2)),
        ("R-L", rouge_l(&c, &r)),
    ];
    let degenerate = scores.iter().filter(|(_, s)| s.degenerate).count();
    let mut m: BTreeMap<String, f64> = scores.iter().map(|(k, s)| (k.to_string(), s.value)).collect();
    let sem = cosine(&embed_text(body, wv).0, &embed_text(reference, wv).0)
        .map(|c| c.value)
        .unwrap_or(0.0);
    m.insert("SemSim".into(), sem);
    (m, degenerate)
}

struct UserRun {
    row: EvalRow,
    events: Vec<AgentEvent>,
    final_weights: RerankWeights,
    degenerate_text: usize,
}

fn run_user(
    ctx: &EvalContext,
    cfg: &EvalConfig,
    agent: &Agent,
    u: &EvalUser,
    weights: &RerankWeights,
    cutoffs: &[usize],
) -> Result<UserRun> {
    let input = ctx.task_input(u, cfg.task, cfg.category_source)?;
    let rounds = if cfg.use_sf { cfg.max_rounds } else { 0 };
    let out = agent.self_feedback_loop(&input, weights, &u.ground_truth, rounds, cfg.feedback_mode())?;
    let ranked = out.result.ranked_items;
    let mut metrics = BTreeMap::new();
    for n in cutoffs {
        metrics.insert(format!("HR@{n}"), f64::from(hit_at(&ranked, &u.ground_truth, *n)));
        metrics.insert(format!("NDCG@{n}"), ndcg_at(&ranked, &u.ground_truth, *n));
    }
    let mut explanation = None;
    let mut degenerate_text = 0;
    if let Some(ex) = &out.result.explanations {
        let pick = if ranked.contains(&u.ground_truth) { &u.ground_truth } else { &ranked[0] };
        if let Some(text) = ex.get(pick) {
            let (m, d) = explanation_scores(text, &u.reference, &ctx.wv);
            metrics.extend(m);
            degenerate_text = d;
            explanation = Some(text.clone());
        }
    }
    let final_weights = out.feedback.last().map_or(*weights, |r| r.new_weights);
    Ok(UserRun {
        row: EvalRow {
            user: u.user_id.clone(),
            task: cfg.task,
            ground_truth: u.ground_truth.clone(),
            rank: rank_of(&ranked, &u.ground_truth),
            ranked,
            metrics,
            rounds: out.result.feedback_rounds,
            parse_degradations: out.result.parse_degradations,
            weight_fallbacks: out.feedback.iter().filter(|r| r.fallback).count(),
            pool_digest: pool_digest(&u.pool),
            explanation,
            error: None,
        },
        events: out.events,
        final_weights,
        degenerate_text,
    })
}

fn error_row(u: &EvalUser, task: TaskKind, msg: String) -> EvalRow {
    EvalRow {
        user: u.user_id.clone(),
        task,
        ground_truth: u.ground_truth.clone(),
        ranked: Vec::new(),
        rank: None,
        metrics: BTreeMap::new(),
        rounds: 0,
        parse_degradations: 0,
        weight_fallbacks: 0,
        pool_digest: pool_digest(&u.pool),
        explanation: None,
        error: Some(msg),
    }
}

const CANCELLED: &str = "cancelled";

/// Timestamped log records of a run, in user order.
pub type RunLog = Vec<(i64, AgentEvent)>;

/// Evaluate every context user under one configuration. Per-user failures
/// become error rows and are counted; they never enter the means.
pub fn evaluate(
    ctx: &EvalContext,
    cfg: &EvalConfig,
    backend: &dyn Backend,
    workers: usize,
    cancel: Option<&AtomicBool>,
) -> Result<(EvalReport, RunLog)> {
    cfg.validate()?;
    if cfg.pool_size != ctx.pool_size || cfg.seed != ctx.seed {
        return Err(Error::Contract(format!(
            "context was sampled with pool_size {} and seed {}, config asks for {} and {}",
            ctx.pool_size, ctx.seed, cfg.pool_size, cfg.seed
        )));
    }
    let agent = Agent::new(backend, cfg.agent_config())?;
    let cutoffs = cfg.effective_cutoffs();
    let cancelled = || cancel.is_some_and(|c| c.load(Ordering::Relaxed));

    let runs: Vec<std::result::Result<UserRun, Box<EvalRow>>> = if cfg.carry_weights {
        let mut w = cfg.weights;
        let mut out = Vec::with_capacity(ctx.users.len());
        for u in &ctx.users {
            if cancelled() {
                out.push(Err(Box::new(error_row(u, cfg.task, CANCELLED.into()))));
                continue;
            }
            match run_user(ctx, cfg, &agent, u, &w, &cutoffs) {
                Ok(run) => {
                    w = run.final_weights;
                    out.push(Ok(run));
                }
                Err(e) => out.push(Err(Box::new(error_row(u, cfg.task, e.to_string())))),
            }
        }
        out
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
        pool.install(|| {
            ctx.users
                .par_iter()
                .map(|u| {
                    if cancelled() {
                        return Err(Box::new(error_row(u, cfg.task, CANCELLED.into())));
                    }
                    run_user(ctx, cfg, &agent, u, &cfg.weights, &cutoffs)
                        .map_err(|e| Box::new(error_row(u, cfg.task, e.to_string())))
                })
                .collect()
        })
    };

    let mut counters = Counters {
        users: ctx.users.len(),
        ..Counters::default()
    };
    let mut rows = Vec::with_capacity(runs.len());
    let mut log = Vec::new();
    for (u, run) in ctx.users.iter().zip(runs) {
        match run {
            Ok(run) => {
                counters.parse_degradations += run.row.parse_degradations;
                counters.weight_fallbacks += run.row.weight_fallbacks;
                counters.feedback_rounds += run.row.rounds;
                counters.degenerate_text_scores += run.degenerate_text;
                log.extend(run.events.into_iter().map(|e| (u.ts, e)));
                rows.push(run.row);
            }
            Err(row) => {
                if row.error.as_deref() == Some(CANCELLED) {
                    counters.cancelled += 1;
                } else {
                    log::warn!("user {}: {}", row.user, row.error.as_deref().unwrap_or_default());
                    counters.task_errors += 1;
                }
                rows.push(*row);
            }
        }
    }
    let report = EvalReport {
        name: cfg.name(),
        task: cfg.task,
        config: cfg.clone(),
        means: mean_of(&rows),
        counters,
        rows,
    };
    report.check_invariants()?;
    Ok((report, log))
}

/// All four grid cells for each task, in grid order then task order. Pools
/// come from the shared context, so every cell sees the same candidates.
pub fn run_ablation(
    ctx: &EvalContext,
    base: &EvalConfig,
    tasks: &[TaskKind],
    backend: &dyn Backend,
    workers: usize,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<(EvalReport, RunLog)>> {
    let mut out = Vec::new();
    for (use_rr, use_sf) in GRID {
        for task in tasks {
            let cfg = EvalConfig {
                use_rr,
                use_sf,
                task: *task,
                ..base.clone()
            };
            out.push(evaluate(ctx, &cfg, backend, workers, cancel)?);
        }
    }
    Ok(out)
}

const COLUMN_ORDER: [&str; 5] = ["BLEU2", "R-1", "R-2", "R-L", "SemSim"];

/// Aligned text table, one line per report.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let mut cols: Vec<String> = Vec::new();
    let mut cutoffs: BTreeSet<usize> = BTreeSet::new();
    for r in reports {
        cutoffs.extend(r.config.effective_cutoffs());
    }
    for n in &cutoffs {
        cols.push(format!("HR@{n}"));
        cols.push(format!("NDCG@{n}"));
    }
    for c in COLUMN_ORDER {
        if reports.iter().any(|r| r.means.contains_key(c)) {
            cols.push(c.to_string());
        }
    }
    let mut header = vec!["Config".to_string(), "Task".to_string()];
    header.extend(cols.iter().cloned());
    header.push("Users".into());
    header.push("Errors".into());
    let mut lines: Vec<Vec<String>> = vec![header];
    for r in reports {
        let mut line = vec![r.name.clone(), r.task.to_string()];
        for c in &cols {
            line.push(r.means.get(c).map_or("-".to_string(), |v| format!("{v:.4}")));
        }
        line.push((r.counters.users - r.counters.task_errors - r.counters.cancelled).to_string());
        line.push(r.counters.task_errors.to_string());
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    if cols.iter().any(|c| c == "SemSim") {
        let _ = writeln!(out, "\n{SEMSIM_NOTE}");
    }
    out
}
