//! Multi-aspect recommendation agent.
//!
//! Reviews are turned into aspect categories (unsupervised clustering over word
//! vectors), then into per-user and per-item profiles made of one short summary
//! per category. Candidates are re-ranked with a weighted blend of profile
//! similarity, category overlap and popularity before an LLM (or the
//! deterministic [`llm::MockBackend`]) picks the final list. When the held-out
//! item is missed, a self-feedback loop adjusts the weights and retries.
//!
//! The [`eval`] module runs the leave-one-out protocol and the re-ranking /
//! self-feedback ablation grid.

pub mod agent;
pub mod aspects;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod llm;
pub mod memory;
pub mod pipeline;
pub mod profiles;
pub mod rerank;
pub mod synth;
pub mod textvec;

mod util;

pub use error::{Error, Result};

pub use agent::{FeedbackMode, FeedbackRecord, RecommendationResult, TaskKind};
pub use aspects::{AspectCategory, AspectModel, ClusterResult};
pub use corpus::{Dataset, LooSplit, PopularityIndex, Review};
pub use eval::{EvalConfig, EvalReport};
pub use llm::{Backend, LlmConfig, MockBackend, TemplateName};
pub use memory::{LogEntry, LogKind, MemoryStore};
pub use profiles::{Profile, ProfileKind};
pub use rerank::{RerankWeights, ScoredCandidate};
pub use textvec::{EmbeddingVector, WordVectors};
