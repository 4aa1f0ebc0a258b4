//! Multi-aspect profiles: review sentences grouped by aspect category, one
//! short summary per category, and a mean-pooled embedding of the summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aspects::{label_sentence, AspectModel};
use crate::corpus::Review;
use crate::error::{Error, Result};
use crate::llm::{self, Backend, TemplateName};
use crate::textvec::{embed_text, EmbeddingVector, WordVectors};
use crate::util::truncate_words;

pub const GENERAL_CATEGORY: &str = "General";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    User,
    Item,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::User => "user",
            ProfileKind::Item => "item",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub owner_id: String,
    pub kind: ProfileKind,
    pub summaries: BTreeMap<String, String>,
    /// Stored separately as binary; see [`write_embedding`].
    #[serde(skip)]
    pub embedding: EmbeddingVector,
    pub built_at: i64,
}

impl Profile {
    /// Profile with no summaries and a zero embedding, for owners without
    /// any training reviews.
    pub fn empty(owner_id: &str, kind: ProfileKind, dim: usize) -> Self {
        Profile {
            owner_id: owner_id.to_string(),
            kind,
            summaries: BTreeMap::new(),
            embedding: EmbeddingVector::zeros(dim),
            built_at: 0,
        }
    }

    /// `C(u)` / `C(i)`: the categories this profile has summaries for.
    pub fn categories(&self) -> BTreeSet<String> {
        self.summaries.keys().cloned().collect()
    }

    /// Summaries concatenated in category order; the embedding input.
    pub fn summary_text(&self) -> String {
        self.summaries.values().cloned().collect::<Vec<_>>().join(" ")
    }

    pub fn recompute_embedding(&self, wv: &WordVectors) -> EmbeddingVector {
        embed_text(&self.summary_text(), wv).0
    }

    /// `Category: summary` lines, as shown to the model.
    pub fn text(&self) -> String {
        if self.summaries.is_empty() {
            return "(no profile available)".into();
        }
        self.summaries
            .iter()
            .map(|(c, s)| format!("{c}: {s}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub word_limit: usize,
    /// Only the most recent sentences of each category are summarized.
    pub max_sentences: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            word_limit: 10,
            max_sentences: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRequest {
    pub aspect: String,
    pub sentences: Vec<String>,
    pub word_limit: usize,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, req: &SummaryRequest) -> Result<String>;
}

/// First sentence, cut to the word limit.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveSummarizer;

impl Summarizer for ExtractiveSummarizer {
    fn summarize(&self, req: &SummaryRequest) -> Result<String> {
        Ok(extractive(req))
    }
}

fn extractive(req: &SummaryRequest) -> String {
    let first = req
        .sentences
        .iter()
        .map(|s| s.trim())
        .find(|s| !s.is_empty())
        .unwrap_or_default();
    truncate_words(first, req.word_limit).0
}

pub struct LlmSummarizer<'a> {
    pub backend: &'a dyn Backend,
}

impl Summarizer for LlmSummarizer<'_> {
    fn summarize(&self, req: &SummaryRequest) -> Result<String> {
        let prompt = llm::render(
            TemplateName::AspectSummary,
            &[
                ("aspect", req.aspect.clone()),
                ("word_limit", req.word_limit.to_string()),
                ("combined_text", req.sentences.join("\n")),
            ],
        )?;
        let reply = self.backend.complete(TemplateName::AspectSummary, &prompt)?;
        Ok(parse_summary(&reply.response_text))
    }
}

/// The `Summary:` line of a reply, or its first line that is not the echoed
/// `Aspect:` header.
pub fn parse_summary(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if let Some(s) = lines.iter().find_map(|l| l.strip_prefix("Summary:")) {
        return s.trim().to_string();
    }
    lines
        .iter()
        .find(|l| !l.starts_with("Aspect:"))
        .map(|l| l.to_string())
        .unwrap_or_default()
}

/// Split on `.`, `!` and `?`, dropping empty pieces.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Sentences of `reviews`, in order, under every category they are
/// labeled with.
pub fn group_by_category<'a>(
    reviews: impl IntoIterator<Item = &'a Review>,
    model: &AspectModel,
) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in reviews {
        for sentence in split_sentences(&r.text) {
            for cat in label_sentence(&sentence, model) {
                out.entry(cat).or_default().push(sentence.clone());
            }
        }
    }
    out
}

/// Summarize one category. Over-long output is cut to the word limit and
/// empty output falls back to the extractive summary.
pub fn summarize_category(req: &SummaryRequest, summarizer: &dyn Summarizer) -> Result<String> {
    if req.sentences.is_empty() {
        return Err(Error::Contract(format!("no sentences to summarize for {}", req.aspect)));
    }
    let raw = summarizer.summarize(req)?;
    let (text, cut) = truncate_words(&raw, req.word_limit);
    if cut {
        log::warn!(
            "summary for {} exceeded {} words, truncated",
            req.aspect,
            req.word_limit
        );
    }
    if text.is_empty() {
        let fallback = extractive(req);
        if fallback.is_empty() {
            return Err(Error::Contract(format!("nothing to summarize for {}", req.aspect)));
        }
        return Ok(fallback);
    }
    Ok(text)
}

pub fn build_profile(
    owner_id: &str,
    kind: ProfileKind,
    reviews: &[&Review],
    model: &AspectModel,
    summarizer: &dyn Summarizer,
    wv: &WordVectors,
    cfg: &ProfileConfig,
) -> Result<Profile> {
    if reviews.is_empty() {
        return Err(Error::Contract(format!("no reviews for {} {owner_id}", kind.as_str())));
    }
    let mut ordered: Vec<&Review> = reviews.to_vec();
    ordered.sort_by(|a, b| {
        (a.timestamp, &a.item_id, &a.user_id).cmp(&(b.timestamp, &b.item_id, &b.user_id))
    });
    let groups = group_by_category(ordered.iter().copied(), model);

    let mut summaries = BTreeMap::new();
    for (aspect, sentences) in groups {
        let keep = sentences.len().saturating_sub(cfg.max_sentences);
        let req = SummaryRequest {
            aspect: aspect.clone(),
            sentences: sentences[keep..].to_vec(),
            word_limit: cfg.word_limit,
        };
        summaries.insert(aspect, summarize_category(&req, summarizer)?);
    }
    if summaries.is_empty() {
        let first = ordered
            .iter()
            .flat_map(|r| split_sentences(&r.text))
            .next()
            .unwrap_or_else(|| "no review text".to_string());
        summaries.insert(GENERAL_CATEGORY.to_string(), truncate_words(&first, cfg.word_limit).0);
    }

    let mut profile = Profile {
        owner_id: owner_id.to_string(),
        kind,
        summaries,
        embedding: EmbeddingVector::default(),
        built_at: ordered.iter().map(|r| r.timestamp).max().unwrap_or(0),
    };
    profile.embedding = profile.recompute_embedding(wv);
    Ok(profile)
}

/// Profiles for every owner in `groups`, built in parallel on the current
/// rayon pool. Output order follows the map order.
pub fn build_profiles(
    groups: &BTreeMap<&str, Vec<&Review>>,
    kind: ProfileKind,
    model: &AspectModel,
    summarizer: &dyn Summarizer,
    wv: &WordVectors,
    cfg: &ProfileConfig,
) -> Result<BTreeMap<String, Profile>> {
    let owners: Vec<(&&str, &Vec<&Review>)> = groups.iter().collect();
    let built: Vec<Result<Profile>> = owners
        .par_iter()
        .map(|(owner, reviews)| build_profile(owner, kind, reviews, model, summarizer, wv, cfg))
        .collect();
    built
        .into_iter()
        .map(|p| p.map(|p| (p.owner_id.clone(), p)))
        .collect()
}

/// Little-endian `u32` dimension followed by that many `f32` values.
pub fn encode_embedding(e: &EmbeddingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * e.values.len());
    out.extend_from_slice(&(e.values.len() as u32).to_le_bytes());
    for v in &e.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> std::result::Result<EmbeddingVector, String> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or("missing dim header")?;
    let dim = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if body.len() != dim * 4 {
        return Err(format!("expected {} value bytes, found {}", dim * 4, body.len()));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(EmbeddingVector { values })
}

pub fn write_embedding(path: &Path, e: &EmbeddingVector) -> Result<()> {
    fs::write(path, encode_embedding(e)).map_err(|err| Error::io(path, err))
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingVector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes).map_err(|reason| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    })
}
