//! Language-model agents for serial-reproduction chains.
//!
//! [`LlmBackend`] drives the reproduce, describe and render roles through a
//! chat-completions API, parsing matrix replies with [`parse_matrix`] and
//! logging every call as an [`LlmExchange`]. [`stub`] provides a
//! deterministic server speaking the same protocol.

mod backend;
mod client;
mod embed;
mod parse;
pub mod prompts;
pub mod stub;

pub use backend::{request_id, LlmBackend};
pub use client::{
    png_data_url, ChatMessage, ContentPart, ExchangeLog, ImageUrl, InputMode, LlmClient,
    LlmClientConfig, LlmError, LlmExchange, Outcome, RateLimiter,
};
pub use embed::{RemoteEmbeddingConfig, RemoteEmbeddingProvider};
pub use parse::{parse_matrix, parse_matrix_sized, ParseError};
pub use prompts::Task;
pub use stub::{StubConfig, StubReply, StubServer};
