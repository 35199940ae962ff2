pub mod catalog;
pub mod text;
pub mod expander;
pub mod embedding;
pub mod http;
pub mod retry;
pub mod index;
pub mod retrieval;
pub mod prompt;
pub mod gateway;
pub mod review;
pub mod jsonl;
pub mod eval;
pub mod config;
pub mod pipeline;
pub mod fixtures;

#[cfg(test)]
mod test_server;
