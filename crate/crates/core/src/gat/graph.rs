use std::collections::BTreeSet;
use std::rc::Rc;

use super::GatError;
use crate::autodiff::Tensor;
use crate::dialogue::{ContextWindow, Speaker};
use crate::retrieval::EmbeddingProvider;

/// Utterance graph: one node per utterance, directed temporal edges plus self-loops.
///
/// An edge `(src, dst)` carries a message from `src` into `dst`, so the
/// neighborhood of node `i` is every `src` with an edge into `i`. Edges are
/// kept sorted by `(dst, src)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueGraph {
    node_features: Tensor,
    speakers: Vec<Speaker>,
    edges: Vec<(usize, usize)>,
}

/// Edge endpoints as shared slices, ready for segment operations on a tape.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub node_count: usize,
}

impl DialogueGraph {
    /// Validates edges: endpoints in range and a self-loop on every node.
    pub fn from_parts(
        node_features: Tensor,
        speakers: Vec<Speaker>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GatError> {
        let n = node_features.rows();
        if node_features.shape().len() != 2 || speakers.len() != n {
            return Err(GatError::Graph(format!(
                "features {:?} with {} speaker tags",
                node_features.shape(),
                speakers.len()
            )));
        }
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().map(|(s, d)| (d, s)).collect();
        if let Some(&(d, s)) = edges.iter().find(|(d, s)| *d >= n || *s >= n) {
            return Err(GatError::Graph(format!("edge {s}->{d} outside {n} nodes")));
        }
        for i in 0..n {
            if !edges.contains(&(i, i)) {
                return Err(GatError::MissingSelfLoop(i));
            }
        }
        Ok(Self {
            node_features,
            speakers,
            edges: edges.into_iter().map(|(d, s)| (s, d)).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn speakers(&self) -> &[Speaker] {
        &self.speakers
    }

    /// `(src, dst)` pairs sorted by destination.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn temporal_edge_count(&self) -> usize {
        self.edges.iter().filter(|(s, d)| s != d).count()
    }

    pub fn edge_index(&self) -> EdgeIndex {
        EdgeIndex {
            src: self.edges.iter().map(|e| e.0).collect(),
            dst: self.edges.iter().map(|e| e.1).collect(),
            node_count: self.node_count(),
        }
    }

    /// Sources feeding node `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == i).map(|e| e.0)
    }
}

/// Self-loops plus `i -> i+1` (and `i+1 -> i` when bidirectional).
pub fn temporal_edges(n: usize, bidirectional: bool) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for i in 1..n {
        edges.push((i - 1, i));
        if bidirectional {
            edges.push((i, i - 1));
        }
    }
    edges
}

/// Encodes each speaker-tagged utterance of the window as one node.
pub fn build_graph(
    ctx: &ContextWindow,
    encoder: &dyn EmbeddingProvider,
    bidirectional: bool,
) -> Result<DialogueGraph, GatError> {
    if ctx.turns.is_empty() {
        return Err(GatError::Graph("empty context window".into()));
    }
    let dim = encoder.dimension();
    let mut features = Vec::with_capacity(ctx.turns.len() * dim);
    for (i, turn) in ctx.turns.iter().enumerate() {
        let v = encoder
            .embed(&turn.tagged_text())
            .map_err(|source| GatError::Embedding {
                turn: ctx.start + i,
                source,
            })?;
        if v.len() != dim {
            return Err(GatError::Graph(format!(
                "turn {} embedded to {} values, provider dimension is {dim}",
                ctx.start + i,
                v.len()
            )));
        }
        features.extend(v);
    }
    let n = ctx.turns.len();
    let node_features = Tensor::new(vec![n, dim], features)?;
    DialogueGraph::from_parts(
        node_features,
        ctx.turns.iter().map(|t| t.speaker).collect(),
        temporal_edges(n, bidirectional),
    )
}
