//! The recommendation agent: present candidates (re-ranked or not), ask the
//! backend for a ranked list, explain it, and when evaluating against a known
//! ground truth, run the self-feedback loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::llm::{self, fmt_weight, parse_explanations, parse_ranked_items, parse_weight_proposal, Backend, TemplateName};
use crate::memory::LogKind;
use crate::profiles::{Profile, GENERAL_CATEGORY};
use crate::rerank::{rerank_with_categories, RerankWeights};
use crate::util::truncate_words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Direct,
    Sequential,
    Explanation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Direct, TaskKind::Sequential, TaskKind::Explanation];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Direct => "direct",
            TaskKind::Sequential => "sequential",
            TaskKind::Explanation => "explanation",
        }
    }

    fn template(self) -> TemplateName {
        match self {
            TaskKind::Direct => TemplateName::DirectRec,
            TaskKind::Sequential => TemplateName::SequentialRec,
            TaskKind::Explanation => TemplateName::Explanation,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown task `{s}` (direct, sequential, explanation)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Ask for new re-ranking weights and re-rank.
    Rr,
    /// Ask for a different list over the same unranked candidates.
    Norr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub user_id: String,
    pub task: TaskKind,
    pub ranked_items: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanations: Option<BTreeMap<String, String>>,
    pub weights_used: RerankWeights,
    pub feedback_rounds: usize,
    pub parse_degradations: usize,
    /// Candidate ids shown in the final prompt, in prompt order.
    pub presented: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub round: usize,
    pub old_weights: RerankWeights,
    pub new_weights: RerankWeights,
    pub reasoning: String,
    pub hit_after: bool,
    /// The weight proposal could not be parsed and the fixed adjustment was
    /// applied instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub top_k: usize,
    /// How many re-ranked candidates are shown to the model.
    pub rerank_top_k: usize,
    pub use_rr: bool,
    /// Cap on unranked candidates shown when re-ranking is off.
    pub prompt_budget: usize,
    pub history_window: usize,
    pub explanation_words: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            top_k: 10,
            rerank_top_k: 30,
            use_rr: true,
            prompt_budget: 100,
            history_window: 5,
            explanation_words: 15,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Contract("top_k must be at least 1".into()));
        }
        if self.rerank_top_k < self.top_k {
            return Err(Error::Contract(format!(
                "rerank_top_k ({}) must be >= top_k ({})",
                self.rerank_top_k, self.top_k
            )));
        }
        if self.prompt_budget < self.top_k {
            return Err(Error::Contract("prompt_budget must be >= top_k".into()));
        }
        Ok(())
    }
}

/// Everything one task run needs about one user.
#[derive(Debug, Clone)]
pub struct TaskInput<'a> {
    pub task: TaskKind,
    pub user: &'a Profile,
    /// `C(u)` as used by the category term of the score.
    pub user_categories: BTreeSet<String>,
    /// Purchased items, oldest first.
    pub history: Vec<&'a Profile>,
    /// Candidates with their popularity, in sampled order.
    pub pool: Vec<(&'a Profile, f64)>,
}

/// A memory log record produced by the agent; the caller assigns the
/// timestamp and sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEvent {
    pub kind: LogKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub result: RecommendationResult,
    pub feedback: Vec<FeedbackRecord>,
    pub events: Vec<AgentEvent>,
}

pub struct Agent<'a> {
    backend: &'a dyn Backend,
    cfg: AgentConfig,
}

pub fn item_block(p: &Profile) -> String {
    let cats: Vec<String> = p.categories().into_iter().collect();
    let summary = p
        .summaries
        .iter()
        .map(|(c, s)| format!("{c}: {s}"))
        .collect::<Vec<_>>()
        .join(" | ");
    format!("Item ID: {}\nCategory: {}\nProfile: {}", p.owner_id, cats.join(", "), summary)
}

pub fn item_blocks(items: &[&Profile]) -> String {
    items.iter().map(|p| item_block(p)).collect::<Vec<_>>().join("\n\n")
}

fn short_line(p: &Profile) -> String {
    let cats: Vec<String> = p.categories().into_iter().collect();
    format!("{} ({})", p.owner_id, cats.join(", "))
}

/// The last `window` purchases as numbered lines, each starting on a new
/// line.
pub fn recent_items_text(history: &[&Profile], window: usize) -> String {
    let start = history.len().saturating_sub(window);
    history[start..]
        .iter()
        .enumerate()
        .map(|(i, p)| format!("\n{}. {}", i + 1, short_line(p)))
        .collect()
}

fn weights_json(w: &RerankWeights) -> Value {
    json!({"alpha": w.alpha, "beta": w.beta, "gamma": w.gamma})
}

/// Category an explanation should cite: the first one the user and item
/// share, else the item's first, else the catch-all.
fn cited_category(user_cats: &BTreeSet<String>, item: &Profile) -> String {
    let item_cats = item.categories();
    item_cats
        .iter()
        .find(|c| user_cats.contains(*c))
        .or_else(|| item_cats.iter().next())
        .cloned()
        .unwrap_or_else(|| GENERAL_CATEGORY.to_string())
}

impl<'a> Agent<'a> {
    pub fn new(backend: &'a dyn Backend, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Agent { backend, cfg })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Candidates shown to the model: the re-ranked head, or the sampled
    /// order cut to the prompt budget. Sequential runs never show history
    /// items.
    pub fn present<'p>(&self, input: &TaskInput<'p>, w: &RerankWeights) -> Result<Vec<&'p Profile>> {
        let seen: BTreeSet<&str> = if input.task == TaskKind::Sequential {
            input.history.iter().map(|p| p.owner_id.as_str()).collect()
        } else {
            BTreeSet::new()
        };
        let pool: Vec<(&'p Profile, f64)> = input
            .pool
            .iter()
            .filter(|(p, _)| !seen.contains(p.owner_id.as_str()))
            .copied()
            .collect();
        if pool.is_empty() {
            return Err(Error::Contract(format!("empty candidate pool for {}", input.user.owner_id)));
        }
        if !self.cfg.use_rr {
            return Ok(pool.iter().take(self.cfg.prompt_budget).map(|(p, _)| *p).collect());
        }
        let by_id: BTreeMap<&str, &'p Profile> = pool.iter().map(|(p, _)| (p.owner_id.as_str(), *p)).collect();
        let scored = rerank_with_categories(input.user, &input.user_categories, &pool, w, self.cfg.rerank_top_k)?;
        Ok(scored.iter().map(|s| by_id[s.item_id.as_str()]).collect())
    }

    fn task_prompt(&self, input: &TaskInput, shown: &[&Profile]) -> Result<String> {
        let mut b: Vec<(&str, String)> = vec![
            ("user_profile_text", input.user.text()),
            ("num_items", shown.len().to_string()),
            ("item_blocks", item_blocks(shown)),
            ("top_k", self.cfg.top_k.to_string()),
        ];
        if input.task == TaskKind::Sequential {
            if input.history.is_empty() {
                return Err(Error::Contract(format!(
                    "sequential task needs purchase history for {}",
                    input.user.owner_id
                )));
            }
            b.push(("recent_items_text", recent_items_text(&input.history, self.cfg.history_window)));
        }
        llm::render(input.task.template(), &b)
    }

    /// Parse a ranked reply; unusable replies fall back to the presented
    /// order. Returns the list and how many degradations occurred.
    fn ranked_from(&self, reply: &str, shown_ids: &[String], avoid: &[String]) -> (Vec<String>, usize) {
        match parse_ranked_items(reply, shown_ids, self.cfg.top_k) {
            Ok(r) => (r.items, usize::from(r.padded > 0)),
            Err(_) => {
                let mut fallback: Vec<String> = shown_ids.iter().filter(|i| !avoid.contains(i)).cloned().collect();
                fallback.extend(shown_ids.iter().filter(|i| avoid.contains(i)).cloned());
                fallback.truncate(self.cfg.top_k);
                (fallback, 1)
            }
        }
    }

    fn explanations_for(
        &self,
        reply: &str,
        user_cats: &BTreeSet<String>,
        ranked: &[&Profile],
    ) -> (BTreeMap<String, String>, usize) {
        let ids: Vec<String> = ranked.iter().map(|p| p.owner_id.clone()).collect();
        let parsed = parse_explanations(reply, &ids);
        let mut misses = 0;
        let mut out = BTreeMap::new();
        for p in ranked {
            let id = &p.owner_id;
            let sentence = match parsed.get(id) {
                Some(line) => {
                    let body = line[id.len() + 1..].trim();
                    format!("{id}: {}", truncate_words(body, self.cfg.explanation_words).0)
                }
                None => {
                    misses += 1;
                    format!("{id}: matches on {}", cited_category(user_cats, p))
                }
            };
            out.insert(id.clone(), sentence);
        }
        (out, misses)
    }

    /// One pass of the task under weights `w`.
    pub fn run_task(&self, input: &TaskInput, w: &RerankWeights) -> Result<RecommendationResult> {
        let shown = self.present(input, w)?;
        let shown_ids: Vec<String> = shown.iter().map(|p| p.owner_id.clone()).collect();
        let prompt = self.task_prompt(input, &shown)?;
        let reply = self.backend.complete(input.task.template(), &prompt)?;
        let (ranked, mut degradations) = self.ranked_from(&reply.response_text, &shown_ids, &[]);
        let explanations = if input.task == TaskKind::Explanation {
            let by_id: BTreeMap<&str, &Profile> = shown.iter().map(|p| (p.owner_id.as_str(), *p)).collect();
            let ranked_profiles: Vec<&Profile> = ranked.iter().map(|id| by_id[id.as_str()]).collect();
            let (ex, misses) = self.explanations_for(&reply.response_text, &input.user_categories, &ranked_profiles);
            degradations += misses;
            Some(ex)
        } else {
            None
        };
        Ok(RecommendationResult {
            user_id: input.user.owner_id.clone(),
            task: input.task,
            ranked_items: ranked,
            explanations,
            weights_used: *w,
            feedback_rounds: 0,
            parse_degradations: degradations,
            presented: shown_ids,
        })
    }

    /// Serving path: one run, no ground truth, one log event.
    pub fn recommend(&self, input: &TaskInput, w: &RerankWeights) -> Result<Outcome> {
        let result = self.run_task(input, w)?;
        let events = vec![recommendation_event(&result)];
        Ok(Outcome {
            result,
            feedback: Vec::new(),
            events,
        })
    }

    pub fn direct_recommend(&self, user: &Profile, user_categories: BTreeSet<String>, pool: Vec<(&Profile, f64)>, w: &RerankWeights) -> Result<RecommendationResult> {
        let input = TaskInput {
            task: TaskKind::Direct,
            user,
            user_categories,
            history: Vec::new(),
            pool,
        };
        self.run_task(&input, w)
    }

    pub fn sequential_recommend<'p>(
        &self,
        user: &'p Profile,
        user_categories: BTreeSet<String>,
        history: Vec<&'p Profile>,
        pool: Vec<(&'p Profile, f64)>,
        w: &RerankWeights,
    ) -> Result<RecommendationResult> {
        let input = TaskInput {
            task: TaskKind::Sequential,
            user,
            user_categories,
            history,
            pool,
        };
        self.run_task(&input, w)
    }

    /// One explanation per recommended item, at most `explanation_words`
    /// words after the id. Items the reply skips get a fixed sentence citing
    /// a shared category.
    pub fn generate_explanations(
        &self,
        user: &Profile,
        user_categories: &BTreeSet<String>,
        ranked: &[&Profile],
    ) -> Result<(BTreeMap<String, String>, usize)> {
        if ranked.is_empty() {
            return Ok((BTreeMap::new(), 0));
        }
        let prompt = llm::render(
            TemplateName::Explanation,
            &[
                ("user_profile_text", user.text()),
                ("num_items", ranked.len().to_string()),
                ("item_blocks", item_blocks(ranked)),
                ("top_k", ranked.len().to_string()),
            ],
        )?;
        let reply = self.backend.complete(TemplateName::Explanation, &prompt)?;
        Ok(self.explanations_for(&reply.response_text, user_categories, ranked))
    }

    /// Run the task, then while the ground truth is missing and rounds
    /// remain, revise: new weights and a re-rank in `Rr` mode, a different
    /// list over the same candidates in `Norr` mode. Stops on the first hit.
    pub fn self_feedback_loop(
        &self,
        input: &TaskInput,
        initial: &RerankWeights,
        ground_truth: &str,
        max_rounds: usize,
        mode: FeedbackMode,
    ) -> Result<Outcome> {
        let gt = input
            .pool
            .iter()
            .find(|(p, _)| p.owner_id == ground_truth)
            .map(|(p, _)| *p)
            .ok_or_else(|| Error::Contract(format!("ground truth {ground_truth} is not in the pool")))?;

        let mut result = self.run_task(input, initial)?;
        let mut events = vec![recommendation_event(&result)];
        let mut records = Vec::new();
        let mut weights = *initial;
        let mut degradations = result.parse_degradations;

        while !result.ranked_items.iter().any(|i| i == ground_truth) && records.len() < max_rounds {
            let round = records.len() + 1;
            let prev = result.ranked_items.clone();
            let by_id: BTreeMap<&str, &Profile> = input.pool.iter().map(|(p, _)| (p.owner_id.as_str(), *p)).collect();
            let prev_text = prev
                .iter()
                .filter_map(|id| by_id.get(id.as_str()))
                .map(|p| format!("- {}", short_line(p)))
                .collect::<Vec<_>>()
                .join("\n");

            match mode {
                FeedbackMode::Rr => {
                    let prompt = llm::render(
                        TemplateName::FeedbackRr,
                        &[
                            ("user_profile_text", input.user.text()),
                            ("prev_recommended", prev_text),
                            ("selected_item", format!("- {}", short_line(gt))),
                            ("profile_weight", fmt_weight(weights.alpha)),
                            ("category_weight", fmt_weight(weights.beta)),
                            ("popularity_weight", fmt_weight(weights.gamma)),
                        ],
                    )?;
                    let reply = self.backend.complete(TemplateName::FeedbackRr, &prompt)?;
                    let (new_weights, reasoning, fallback) = match parse_weight_proposal(&reply.response_text) {
                        Ok(p) => (p.weights, p.reasoning, false),
                        Err(_) => (fallback_weights(&weights), String::new(), true),
                    };
                    degradations += usize::from(fallback);
                    result = self.run_task(input, &new_weights)?;
                    degradations += result.parse_degradations;
                    let hit = result.ranked_items.iter().any(|i| i == ground_truth);
                    let rec = FeedbackRecord {
                        round,
                        old_weights: weights,
                        new_weights,
                        reasoning,
                        hit_after: hit,
                        fallback,
                    };
                    events.push(AgentEvent {
                        kind: LogKind::WeightChange,
                        payload: json!({
                            "user": input.user.owner_id,
                            "task": input.task,
                            "round": round,
                            "old_weights": weights_json(&rec.old_weights),
                            "new_weights": weights_json(&rec.new_weights),
                            "reasoning": rec.reasoning,
                            "fallback": fallback,
                            "ranked": result.ranked_items,
                            "hit": hit,
                        }),
                    });
                    weights = new_weights;
                    records.push(rec);
                }
                FeedbackMode::Norr => {
                    let shown = self.present(input, &weights)?;
                    let shown_ids: Vec<String> = shown.iter().map(|p| p.owner_id.clone()).collect();
                    let prompt = llm::render(
                        TemplateName::FeedbackNorr,
                        &[
                            ("user_profile_text", input.user.text()),
                            ("prev_recommended", prev_text),
                            ("item_blocks", item_blocks(&shown)),
                            ("top_k", self.cfg.top_k.to_string()),
                        ],
                    )?;
                    let reply = self.backend.complete(TemplateName::FeedbackNorr, &prompt)?;
                    let (ranked, d) = self.ranked_from(&reply.response_text, &shown_ids, &prev);
                    degradations += d;
                    let explanations = if input.task == TaskKind::Explanation {
                        let by_shown: BTreeMap<&str, &Profile> =
                            shown.iter().map(|p| (p.owner_id.as_str(), *p)).collect();
                        let ranked_profiles: Vec<&Profile> = ranked.iter().map(|id| by_shown[id.as_str()]).collect();
                        let (ex, misses) = self.generate_explanations(input.user, &input.user_categories, &ranked_profiles)?;
                        degradations += misses;
                        Some(ex)
                    } else {
                        None
                    };
                    let hit = ranked.iter().any(|i| i == ground_truth);
                    result = RecommendationResult {
                        user_id: input.user.owner_id.clone(),
                        task: input.task,
                        ranked_items: ranked,
                        explanations,
                        weights_used: weights,
                        feedback_rounds: 0,
                        parse_degradations: d,
                        presented: shown_ids,
                    };
                    events.push(AgentEvent {
                        kind: LogKind::Feedback,
                        payload: json!({
                            "user": input.user.owner_id,
                            "task": input.task,
                            "round": round,
                            "ranked": result.ranked_items,
                            "hit": hit,
                        }),
                    });
                    records.push(FeedbackRecord {
                        round,
                        old_weights: weights,
                        new_weights: weights,
                        reasoning: String::new(),
                        hit_after: hit,
                        fallback: false,
                    });
                }
            }
        }
        result.feedback_rounds = records.len();
        result.parse_degradations = degradations;
        Ok(Outcome {
            result,
            feedback: records,
            events,
        })
    }
}

/// Applied when a weight proposal cannot be parsed: move 0.1 from the
/// profile weight to the category weight.
pub fn fallback_weights(w: &RerankWeights) -> RerankWeights {
    let moved = w.alpha.min(0.1);
    RerankWeights::normalized(w.alpha - moved, w.beta + moved, w.gamma).unwrap_or(*w)
}

fn recommendation_event(r: &RecommendationResult) -> AgentEvent {
    AgentEvent {
        kind: LogKind::Recommendation,
        payload: json!({
            "user": r.user_id,
            "task": r.task,
            "round": 0,
            "weights": weights_json(&r.weights_used),
            "presented": r.presented.len(),
            "ranked": r.ranked_items,
            "parse_degradations": r.parse_degradations,
        }),
    }
}
