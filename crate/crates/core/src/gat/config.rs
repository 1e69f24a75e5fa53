use serde::{Deserialize, Serialize};

use super::GatError;
use crate::autodiff::Activation;
use crate::dialogue::WindowSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Elu,
    LeakyRelu,
    Sigmoid,
}

impl ActivationKind {
    pub fn to_activation(self, slope: f64) -> Activation {
        match self {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Elu => Activation::Elu,
            ActivationKind::LeakyRelu => Activation::LeakyRelu(slope),
            ActivationKind::Sigmoid => Activation::Sigmoid,
        }
    }
}

/// How attention logits are scored for an edge `j -> i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScoring {
    /// `LeakyReLU(a^T [W h_i | W h_j])`, attention vector of length `2F'`.
    #[default]
    Concat,
    /// `a^T LeakyReLU(W h_i + W h_j)` with shared weights, attention vector of length `F'`.
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    /// Per-head output width `F'`.
    pub hidden: usize,
    pub residual: bool,
    /// Nonlinearity after intermediate layers.
    pub sigma: ActivationKind,
    /// Nonlinearity after the final, head-averaged layer.
    pub output_sigma: ActivationKind,
    pub bidirectional_edges: bool,
    pub context_window: WindowSize,
    pub scoring: AttentionScoring,
    pub negative_slope: f64,
    /// Width of the hidden layer in each decoder MLP.
    pub decoder_hidden: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self::large()
    }
}

impl GatConfig {
    fn preset(layers: usize, heads: usize, hidden: usize) -> Self {
        Self {
            layers,
            heads,
            hidden,
            residual: true,
            sigma: ActivationKind::Elu,
            output_sigma: ActivationKind::Identity,
            bidirectional_edges: false,
            context_window: WindowSize::Full,
            scoring: AttentionScoring::Concat,
            negative_slope: 0.2,
            decoder_hidden: hidden,
        }
    }

    /// 1 layer, 4 heads, 128 hidden.
    pub fn small() -> Self {
        Self::preset(1, 4, 128)
    }

    /// 2 layers, 8 heads, 256 hidden.
    pub fn baseline() -> Self {
        Self::preset(2, 8, 256)
    }

    /// 3 layers, 12 heads, 512 hidden.
    pub fn large() -> Self {
        Self::preset(3, 12, 512)
    }

    /// 4 layers, 16 heads, 768 hidden.
    pub fn xlarge() -> Self {
        Self::preset(4, 16, 768)
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "baseline" => Some(Self::baseline()),
            "large" => Some(Self::large()),
            "xlarge" => Some(Self::xlarge()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), GatError> {
        let mut problems = Vec::new();
        if self.layers < 1 {
            problems.push("layers must be >= 1");
        }
        if self.heads < 1 {
            problems.push("heads must be >= 1");
        }
        if self.hidden < 1 {
            problems.push("hidden must be >= 1");
        }
        if self.decoder_hidden < 1 {
            problems.push("decoder_hidden must be >= 1");
        }
        if !self.negative_slope.is_finite() {
            problems.push("negative_slope must be finite");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GatError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Input width of layer `l` given the node feature width.
    pub fn layer_input_dim(&self, l: usize, feature_dim: usize) -> usize {
        if l == 0 {
            feature_dim
        } else {
            self.heads * self.hidden
        }
    }

    /// Output width of layer `l`: concatenated heads, or `F'` for the final averaged layer.
    pub fn layer_output_dim(&self, l: usize) -> usize {
        if l + 1 == self.layers {
            self.hidden
        } else {
            self.heads * self.hidden
        }
    }

    pub fn attention_dim(&self) -> usize {
        match self.scoring {
            AttentionScoring::Concat => 2 * self.hidden,
            AttentionScoring::V2 => self.hidden,
        }
    }
}
