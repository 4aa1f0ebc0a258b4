//! Deterministic stand-in for a chat model. Every reply is a pure function
//! of the template name and the prompt text:
//!
//! * `aspect_summary`: the first review sentence, cut to the word limit.
//! * `direct_rec` / `sequential_rec`: the first `top_k` candidate ids in
//!   prompt order.
//! * `explanation`: `<id>: matches user profile on <first shared category>`.
//! * `feedback_rr`: moves 0.1 of weight from the largest to the smallest
//!   component.
//! * `feedback_norr`: the candidate list reversed.
//! * `category_naming`: the first two terms joined with ` & `.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::{fmt_weight, Backend, ChatExchange, TemplateName};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct MockBackend {
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reply(template: TemplateName, prompt: &str) -> Result<String> {
        match template {
            TemplateName::AspectSummary => aspect_summary(prompt),
            TemplateName::DirectRec | TemplateName::SequentialRec => {
                let top_k = top_k(prompt)?;
                Ok(numbered(item_ids(prompt).into_iter().take(top_k)))
            }
            TemplateName::Explanation => explanation(prompt),
            TemplateName::FeedbackRr => feedback_rr(prompt),
            TemplateName::FeedbackNorr => {
                let top_k = top_k(prompt)?;
                Ok(numbered(item_ids(prompt).into_iter().rev().take(top_k)))
            }
            TemplateName::CategoryNaming => {
                let terms = section_after(prompt, "appear in similar contexts:\n")
                    .and_then(|s| s.lines().next())
                    .ok_or_else(|| Error::Protocol("mock: no terms in naming prompt".into()))?;
                let top: Vec<&str> = terms.split(',').map(str::trim).filter(|t| !t.is_empty()).take(2).collect();
                Ok(format!("Category: {}", top.join(" & ")))
            }
        }
    }
}

impl Backend for MockBackend {
    fn complete(&self, template: TemplateName, prompt: &str) -> Result<ChatExchange> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(ChatExchange {
            prompt: prompt.to_string(),
            model: "mock".into(),
            response_text: Self::reply(template, prompt)?,
            latency: Duration::ZERO,
            retries_used: 0,
        })
    }
}

fn section_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    prompt.find(marker).map(|p| &prompt[p + marker.len()..])
}

fn numbered(ids: impl Iterator<Item = String>) -> String {
    ids.enumerate()
        .map(|(i, id)| format!("{}. {id}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn top_k(prompt: &str) -> Result<usize> {
    let rest = section_after(prompt, "Choose the top ")
        .or_else(|| section_after(prompt, "Select "))
        .ok_or_else(|| Error::Protocol("mock: prompt does not state top_k".into()))?;
    rest.split_whitespace()
        .next()
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Protocol("mock: unreadable top_k".into()))
}

fn item_ids(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Item ID: "))
        .map(|s| s.trim().to_string())
        .collect()
}

fn aspect_summary(prompt: &str) -> Result<String> {
    let aspect = section_after(prompt, "\nAspect: ")
        .and_then(|s| s.lines().next())
        .unwrap_or_default();
    let limit: usize = section_after(prompt, "one sentence within ")
        .and_then(|s| s.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(10);
    let body = section_after(prompt, "\"\"\"\n")
        .and_then(|s| s.split("\n\"\"\"").next())
        .unwrap_or_default();
    let first = body.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    let (summary, _) = crate::util::truncate_words(first, limit);
    Ok(format!("Aspect: {aspect}\nSummary: {summary}"))
}

/// Category names listed in the user-profile section as `Name: summary`
/// lines.
fn user_categories(prompt: &str) -> Vec<String> {
    let Some(rest) = section_after(prompt, "Summarize what the user values in products:") else {
        return Vec::new();
    };
    let block = rest.split("\n[").next().unwrap_or_default();
    block
        .lines()
        .filter_map(|l| l.trim().split_once(':').map(|(c, _)| c.trim().to_string()))
        .filter(|c| !c.is_empty())
        .collect()
}

fn explanation(prompt: &str) -> Result<String> {
    let top_k = top_k(prompt)?;
    let user = user_categories(prompt);
    let mut lines = Vec::new();
    let mut current: Option<String> = None;
    for l in prompt.lines() {
        if let Some(id) = l.strip_prefix("Item ID: ") {
            current = Some(id.trim().to_string());
        } else if let (Some(id), Some(cats)) = (current.as_ref(), l.strip_prefix("Category: ")) {
            let cats: Vec<&str> = cats.split(',').map(str::trim).filter(|c| !c.is_empty()).collect();
            let shared = cats.iter().find(|c| user.iter().any(|u| u == *c));
            let pick = shared.or(cats.first()).copied().unwrap_or("General");
            lines.push(format!("{id}: matches user profile on {pick}"));
            current = None;
        }
    }
    lines.truncate(top_k);
    Ok(lines.join("\n"))
}

fn feedback_rr(prompt: &str) -> Result<String> {
    let read = |label: &str| -> Result<f64> {
        section_after(prompt, label)
            .and_then(|s| s.lines().next())
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Protocol(format!("mock: missing `{label}`")))
    };
    let mut w = [
        read("- Profile similarity: ")?,
        read("- Category similarity: ")?,
        read("- Popularity: ")?,
    ];
    let names = ["profile_similarity", "category_similarity", "popularity"];
    // first index wins ties in both directions
    let largest = (0..3).fold(0, |best, i| if w[i] > w[best] { i } else { best });
    let smallest = (0..3).fold(0, |best, i| if w[i] < w[best] { i } else { best });
    let moved = w[largest].min(0.1);
    if largest != smallest {
        w[largest] -= moved;
        w[smallest] += moved;
    }
    Ok(format!(
        "{{\n  \"profile_similarity\": {},\n  \"category_similarity\": {},\n  \"popularity\": {},\n  \"reasoning\": \"moved {} from {} to {}\"\n}}",
        fmt_weight(w[0]),
        fmt_weight(w[1]),
        fmt_weight(w[2]),
        fmt_weight(moved),
        names[largest],
        names[smallest]
    ))
}
