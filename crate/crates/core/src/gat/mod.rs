//! Graph-attention expert: utterance graphs, multi-head attention layers,
//! multi-label decoders and multi-task training.

mod config;
mod graph;
mod layer;
mod loss;
mod model;
mod train;

use std::path::PathBuf;

pub use config::{ActivationKind, AttentionScoring, GatConfig};
pub use graph::{build_graph, temporal_edges, DialogueGraph, EdgeIndex};
pub use layer::{
    gat_layer_forward, multi_head_forward, HeadCombine, HeadVars, LayerOutput, MultiHeadOutput,
    Residual,
};
pub use loss::{multitask_loss, LossOutput, LossWeights};
pub use model::{
    GatModel, HeadLogits, LabelSpace, NodeLabels, NodeProbabilities, PREDICTION_THRESHOLD,
};
pub use train::{
    build_samples, evaluate_samples, train, EpochRecord, Sample, SampleAccuracy, TrainOptions,
    TrainingLog, TrainingOutcome,
};

use crate::autodiff::AutodiffError;
use crate::retrieval::RetrievalError;

#[derive(Debug, thiserror::Error)]
pub enum GatError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("embedding turn {turn}: {source}")]
    Embedding { turn: usize, source: RetrievalError },
    #[error("graph: {0}")]
    Graph(String),
    #[error("node {0} has no self-loop")]
    MissingSelfLoop(usize),
    #[error("invalid GAT config: {0}")]
    InvalidConfig(String),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("feature dimension {actual} does not match model input dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("no training samples: {0}")]
    NoSamples(String),
    #[error("model sidecar: {0}")]
    Sidecar(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
