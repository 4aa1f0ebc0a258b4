use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::rerank::RerankWeights;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRanking {
    pub items: Vec<String>,
    /// How many trailing items were filled from the candidate order.
    pub padded: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn boundary_before(text: &str, at: usize) -> bool {
    text[..at].chars().next_back().is_none_or(|c| !is_word_char(c))
}

fn boundary_after(text: &str, at: usize) -> bool {
    text[at..].chars().next().is_none_or(|c| !is_word_char(c))
}

/// Candidate ids in the order they first appear in `text`, matched on word
/// boundaries with the longest id winning at each position.
pub(crate) fn scan_ids(text: &str, candidates: &[String]) -> Vec<String> {
    let mut by_len: Vec<&String> = candidates.iter().filter(|c| !c.is_empty()).collect();
    by_len.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    by_len.dedup();

    let mut found = Vec::new();
    let mut seen = BTreeSet::new();
    let mut i = 0;
    'outer: while i < text.len() {
        if boundary_before(text, i) {
            for cand in &by_len {
                let end = i + cand.len();
                if text[i..].starts_with(cand.as_str()) && boundary_after(text, end) {
                    if seen.insert(cand.as_str()) {
                        found.push((*cand).clone());
                    }
                    i = end;
                    continue 'outer;
                }
            }
        }
        i += text[i..].chars().next().map_or(1, char::len_utf8);
    }
    found
}

/// Extract up to `top_k` candidate ids from a free-text reply. Short replies
/// are padded from the candidate list in its given order; a reply naming no
/// candidate at all is an error.
pub fn parse_ranked_items(text: &str, candidates: &[String], top_k: usize) -> Result<ParsedRanking> {
    let mut items = scan_ids(text, candidates);
    if items.is_empty() {
        return Err(Error::Parse("no candidate id in response".into()));
    }
    items.truncate(top_k);
    let mut padded = 0;
    if items.len() < top_k {
        let have: BTreeSet<String> = items.iter().cloned().collect();
        for c in candidates {
            if items.len() >= top_k {
                break;
            }
            if !have.contains(c) && !items.contains(c) {
                items.push(c.clone());
                padded += 1;
            }
        }
    }
    Ok(ParsedRanking { items, padded })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightProposal {
    pub weights: RerankWeights,
    pub reasoning: String,
}

/// The first JSON object in `text` carrying `profile_similarity`,
/// `category_similarity` and `popularity`. Negative values clamp to zero and
/// the triple is renormalized to sum to one.
pub fn parse_weight_proposal(text: &str) -> Result<WeightProposal> {
    for (pos, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let num = |k: &str| obj.get(k).and_then(Value::as_f64);
        let (Some(p), Some(c), Some(pop)) = (
            num("profile_similarity"),
            num("category_similarity"),
            num("popularity"),
        ) else {
            continue;
        };
        let weights = RerankWeights::normalized(p.max(0.0), c.max(0.0), pop.max(0.0))
            .map_err(|_| Error::Parse("proposed weights are all zero".into()))?;
        let reasoning = obj
            .get("reasoning")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        return Ok(WeightProposal { weights, reasoning });
    }
    Err(Error::Parse("no weight object in response".into()))
}

/// `id: sentence` lines keyed by the candidate id that opens the line.
pub fn parse_explanations(text: &str, candidates: &[String]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for raw in text.lines() {
        let line = raw
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim_start();
        // "2. id: ..." numbering
        let unnumbered = line.trim_start_matches(|c: char| c.is_ascii_digit());
        let line = match unnumbered.strip_prefix(['.', ')']) {
            Some(rest) if unnumbered.len() < line.len() => rest.trim_start(),
            _ => line,
        };
        let Some(colon) = line.find(':') else { continue };
        let head = line[..colon].trim().trim_matches(['*', '"', '[', ']']);
        let body = line[colon + 1..].trim();
        if body.is_empty() {
            continue;
        }
        if let Some(id) = candidates.iter().find(|c| c.as_str() == head) {
            out.entry(id.clone()).or_insert_with(|| format!("{id}: {body}"));
        }
    }
    out
}
