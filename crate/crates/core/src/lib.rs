//! Dialogue state tracking with a graph-attention expert, a pluggable
//! sequence expert, a domain-voting router and retrieval-augmented slot value
//! generation, plus the evaluation harness that scores the whole pipeline.

pub mod autodiff;
pub mod config;
pub mod dialogue;
pub mod eval;
pub mod gat;
pub mod http;
pub mod retrieval;
pub mod router;
pub mod seq;
pub mod text;
pub mod valuegen;
