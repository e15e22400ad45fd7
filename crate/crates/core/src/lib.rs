//! Generative LARP engine core: world specs, LLM providers, extraction,
//! character agents, the narrative runtime, scene layout and persistence.

pub mod agent;
pub mod event;
pub mod extract;
pub mod layout;
pub mod llm;
pub mod runtime;
pub mod schema;
pub mod store;
