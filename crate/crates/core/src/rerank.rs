//! Candidate scoring: `S = alpha * cos(user, item) + beta * jaccard(C(u), C(i))
//! + gamma * pop(item)`, highest first.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::Profile;
use crate::textvec::cosine;

/// Non-negative weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        RerankWeights {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.2,
        }
    }
}

impl RerankWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = RerankWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    /// Scale non-negative weights so they sum to one.
    pub fn normalized(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if [alpha, beta, gamma].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        let sum = alpha + beta + gamma;
        if sum <= 0.0 {
            return Err(Error::Contract("weights sum to zero".into()));
        }
        Ok(RerankWeights {
            alpha: alpha / sum,
            beta: beta / sum,
            gamma: gamma / sum,
        })
    }

    /// Accept user-supplied weights: they must already sum to one within
    /// `1e-6` unless `force_normalize` is set. The result is exactly
    /// normalized either way.
    pub fn from_user(alpha: f64, beta: f64, gamma: f64, force_normalize: bool) -> Result<Self> {
        let sum = alpha + beta + gamma;
        if !force_normalize && (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "weights sum to {sum}, expected 1 (pass --normalize-weights to rescale)"
            )));
        }
        Self::normalized(alpha, beta, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract(format!("invalid weights {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Contract(format!("weights {self:?} do not sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub item_id: String,
    pub s_total: f64,
    pub sim_profile: f64,
    pub sim_category: f64,
    pub pop: f64,
}

/// Jaccard overlap; two empty sets score 0.
pub fn category_similarity(cu: &BTreeSet<String>, ci: &BTreeSet<String>) -> f64 {
    let inter = cu.intersection(ci).count();
    let union = cu.len() + ci.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn combine(w: &RerankWeights, sim_profile: f64, sim_category: f64, pop: f64) -> f64 {
    w.alpha * sim_profile + w.beta * sim_category + w.gamma * pop
}

/// Where the user's category set comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    /// Categories of the user's own profile.
    #[default]
    UserProfile,
    /// Union of the categories of the items the user bought.
    PurchasedItems,
}

pub fn user_categories<'a>(
    user: &Profile,
    purchased: impl IntoIterator<Item = &'a Profile>,
    source: CategorySource,
) -> BTreeSet<String> {
    match source {
        CategorySource::UserProfile => user.categories(),
        CategorySource::PurchasedItems => purchased.into_iter().flat_map(|p| p.categories()).collect(),
    }
}

pub fn score(user: &Profile, item: &Profile, pop: f64, w: &RerankWeights) -> Result<ScoredCandidate> {
    score_with_categories(user, &user.categories(), item, pop, w)
}

pub fn score_with_categories(
    user: &Profile,
    user_cats: &BTreeSet<String>,
    item: &Profile,
    pop: f64,
    w: &RerankWeights,
) -> Result<ScoredCandidate> {
    if !(0.0..=1.0).contains(&pop) {
        return Err(Error::Contract(format!("popularity {pop} outside [0, 1]")));
    }
    let sim_profile = cosine(&user.embedding, &item.embedding)?.value;
    let sim_category = category_similarity(user_cats, &item.categories());
    Ok(ScoredCandidate {
        item_id: item.owner_id.clone(),
        s_total: combine(w, sim_profile, sim_category, pop),
        sim_profile,
        sim_category,
        pop,
    })
}

/// Descending score, ties by ascending id.
pub fn order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.s_total
        .total_cmp(&a.s_total)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

pub fn rerank(
    user: &Profile,
    candidates: &[(&Profile, f64)],
    w: &RerankWeights,
    top_k: usize,
) -> Result<Vec<ScoredCandidate>> {
    rerank_with_categories(user, &user.categories(), candidates, w, top_k)
}

pub fn rerank_with_categories(
    user: &Profile,
    user_cats: &BTreeSet<String>,
    candidates: &[(&Profile, f64)],
    w: &RerankWeights,
    top_k: usize,
) -> Result<Vec<ScoredCandidate>> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to re-rank".into()));
    }
    if top_k == 0 {
        return Err(Error::Contract("top_k must be at least 1".into()));
    }
    w.validate()?;
    let mut scored = candidates
        .iter()
        .map(|(item, pop)| score_with_categories(user, user_cats, item, *pop, w))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(order);
    scored.truncate(top_k);
    Ok(scored)
}
