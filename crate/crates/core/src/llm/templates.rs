//! Prompt bodies. Placeholders are `{name}`; literal braces are doubled.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    AspectSummary,
    DirectRec,
    SequentialRec,
    Explanation,
    FeedbackRr,
    FeedbackNorr,
    CategoryNaming,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::AspectSummary,
        TemplateName::DirectRec,
        TemplateName::SequentialRec,
        TemplateName::Explanation,
        TemplateName::FeedbackRr,
        TemplateName::FeedbackNorr,
        TemplateName::CategoryNaming,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::AspectSummary => "aspect_summary",
            TemplateName::DirectRec => "direct_rec",
            TemplateName::SequentialRec => "sequential_rec",
            TemplateName::Explanation => "explanation",
            TemplateName::FeedbackRr => "feedback_rr",
            TemplateName::FeedbackNorr => "feedback_norr",
            TemplateName::CategoryNaming => "category_naming",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateName::AspectSummary => ASPECT_SUMMARY,
            TemplateName::DirectRec => DIRECT_REC,
            TemplateName::SequentialRec => SEQUENTIAL_REC,
            TemplateName::Explanation => EXPLANATION,
            TemplateName::FeedbackRr => FEEDBACK_RR,
            TemplateName::FeedbackNorr => FEEDBACK_NORR,
            TemplateName::CategoryNaming => CATEGORY_NAMING,
        }
    }
}

impl std::fmt::Display for TemplateName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const ASPECT_SUMMARY: &str = r#"You are an intelligent assistant that builds personalized user profiles for a recommendation system.

Your job is to summarize what the user values most regarding the aspect "{aspect}", based on the reviews below.
Only extract information that is directly related to the aspect "{aspect}".
Ignore general praise, irrelevant sentences, or duplicated expressions.

Focus on capturing the user's unique preferences and patterns for this aspect.
Summarize the user's preference or priority into one sentence within {word_limit} words, reflecting what kind of features the user tends to like or look for.

Reviews:
"""
{combined_text}
"""

Answer format:
Aspect: {aspect}
Summary: <Your {word_limit}-word sentence here>
"#;

const DIRECT_REC: &str = r#"You are a smart recommendation agent.

[User Profile]
Summarize what the user values in products:
{user_profile_text}

[Candidate Items]
You are given {num_items} candidate items. Each includes a category and aspect-based profile summary.

{item_blocks}

[Task]
Based on the user profile and the information for each item, select the top-{top_k} items that best match the user's preferences. For each item, consider how it matches with the user's specific aspects and preferences.

Think step by step before making a final decision. Choose the top {top_k} products to recommend in order of priority, from highest to lowest.
"#;

const SEQUENTIAL_REC: &str = r#"You are a smart recommendation agent.

[User Profile]
Summarize what the user values in products:
{user_profile_text}

[User Purchase History]
The user has recently purchased these items in this exact order (oldest to newest):{recent_items_text}

[Candidate Items]
You are given {num_items} candidate items. Each includes a category and aspect-based profile summary.

{item_blocks}

[Task]
Based on both the user's profile and purchase sequence/pattern, predict the next item the user is most likely to purchase.
The sequential pattern and evolution of the user's preferences over time.
The user's aspect-based preferences from their profile

Think step by step before making a final decision, Choose the top {top_k} products to recommend in order of priority, from highest to lowest.
"#;

const EXPLANATION: &str = r#"You are a smart recommendation agent.

[User Profile]
Summarize what the user values in products: {user_profile_text}

[Candidate Items]
You are given {num_items} candidate items. Each includes a category and aspect-based profile summary.

{item_blocks}

[Task]
Based on the user profile and the information for each item, select the top-{top_k} items that best match the user's preferences and explain the recommendation reason based on aspects. For each item, consider how it matches with the user's specific aspects and preferences.

Think step by step before making a final decision, Choose the top {top_k} products to recommend in order of priority, from highest to lowest.

[Example]
Explanation:
- id1: Brief explanation how this item matches user's specific aspects (15 words max)
"#;

const FEEDBACK_RR: &str = r#"You are a recommendation system weight analysis expert.

[User Profile]
{user_profile_text}

[Previously Recommendation]
{prev_recommended}

[Actually Selected Item]
{selected_item}

[Current Weights]
- Profile similarity: {profile_weight}
- Category similarity: {category_weight}
- Popularity: {popularity_weight}

Analysis:
1. What are the differences between the actually selected item and recommended items?
2. How should weights be adjusted to rank the actual item higher?

Propose new weights in the following format:
{{
  "profile_similarity": 0.X,
  "category_similarity": 0.X,
  "popularity": 0.X,
  "reasoning": "Explanation for weight adjustment"
}}
"#;

const FEEDBACK_NORR: &str = r#"You are a recommendation system that needs to improve its strategy.

[User Profile]
{user_profile_text}

[Previous Recommendation]
You previously recommended these items, but the customer didn't choose any of them:
{prev_recommended}

[All Candidate Items]
{item_blocks}

[Task]
Since the customer didn't choose any of your previous recommendations, you need to:
Reconsider your recommendation strategy
Think about different aspects or categories that might better match the user's preferences
Select {top_k} different items that could better satisfy the customer's needs

Try to recommend items from different categories or with different characteristics than before.

Choose the top {top_k} products to recommend in order of priority, from highest to lowest.
"#;

const CATEGORY_NAMING: &str = r#"You are an assistant that names aspect categories discovered in product reviews.

The following terms were grouped together because they appear in similar contexts:
{terms}

Using domain knowledge, give a short, interpretable aspect category name (one to three words) that covers these terms.

Answer format:
Category: <name>
"#;
