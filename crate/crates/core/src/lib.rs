//! Text-to-SQL with self-generated in-context examples.
//!
//! For each question the model links the schema, writes ten similar
//! (question, SQL, reasoning) examples, and grades each one for semantic,
//! structural and reasoning similarity. Examples whose weighted relevance
//! clears a threshold go into the final prompt. [`pipeline::Runner`] drives
//! the stages over a run directory; [`eval`] grades predictions by execution
//! and exact match; [`analysis`] produces the score census, similarity bins,
//! and threshold and weight sweeps.
//!
//! Every model call goes through [`llm::LlmClient`], which caches responses
//! by request hash, so runs can be replayed offline. [`demo`] ships a small
//! fixture with scripted replies.

pub mod analysis;
pub mod dataset;
pub mod demo;
pub mod eval;
pub mod generation;
pub mod inference;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod scoring;
