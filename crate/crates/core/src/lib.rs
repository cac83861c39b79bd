//! Controllable sequential re-ranking.
//!
//! A transition retriever proposes candidates for the next item in a user's
//! history; control tokens describe attribute values the user asks for; a
//! small scorer trained with a pairwise loss over how many tokens each
//! candidate satisfies re-orders the list.

pub mod config;
pub mod control;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod pipeline;
pub mod ranker;
pub mod retrieval;
pub mod service;

pub use config::RunConfig;
pub use error::{Error, Result};
