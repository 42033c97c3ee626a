//! Reference-free evaluation of retrieval-augmented answers for hazard and
//! infrastructure decision support.
//!
//! The crate covers synthetic question generation, exact embedding retrieval,
//! a model gateway with an offline mock backend, four model-based metrics
//! (specificity, robustness, masked relevance, context utilization),
//! readability and agreement statistics, the end-to-end pipeline, and the
//! storage and analytics behind the human annotation service.

pub mod annotation;
pub mod answer;
pub mod claims;
pub mod context;
pub mod contract;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod relevance;
pub mod robustness;
pub mod specificity;
pub mod stats;
pub mod text;
pub mod vector;

pub use answer::{parse_answer, StructuredAnswer};
pub use error::{Error, FieldError, Result};
pub use gateway::{
    Capability, ChatModel, ChatRequest, Embedder, Provider, ProviderProfile, ProviderRegistry,
    Reranker, TokenScore, TokenScorer,
};
