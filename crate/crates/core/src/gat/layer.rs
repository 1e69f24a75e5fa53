use super::{AttentionScoring, EdgeIndex, GatError};
use crate::autodiff::{Activation, Tape, Var};

/// Tape handles for one attention head: `w` is `[F_in, F']`, `a` is `[2F', 1]`
/// for concatenation scoring or `[F', 1]` for v2 scoring.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w: Var,
    pub a: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `[n, F']` node features.
    pub features: Var,
    /// `[E]` attention coefficients aligned with the edge list.
    pub attention: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadCombine {
    /// Apply `σ` per head, then concatenate (intermediate layers).
    Concat,
    /// Average heads, then apply `σ` (final layer).
    Mean,
}

#[derive(Debug, Clone, Copy)]
pub enum Residual {
    Off,
    Identity,
    /// `[F_in, F_out]` projection applied to the layer input.
    Projection(Var),
}

#[derive(Debug, Clone)]
pub struct MultiHeadOutput {
    pub features: Var,
    pub attention: Vec<Var>,
}

/// Attention-weighted aggregation `Σ_j α_ij W h_j` before the nonlinearity.
fn aggregate(
    tape: &Tape,
    h: Var,
    head: HeadVars,
    edges: &EdgeIndex,
    slope: f64,
    scoring: AttentionScoring,
) -> Result<(Var, Var), GatError> {
    let z = tape.matmul(h, head.w)?;
    let z_dst = tape.gather_rows(z, edges.dst.clone())?;
    let z_src = tape.gather_rows(z, edges.src.clone())?;
    let scores = match scoring {
        AttentionScoring::Concat => {
            let pair = tape.concat_last_dim(&[z_dst, z_src])?;
            let e = tape.matmul(pair, head.a)?;
            tape.leaky_relu(e, slope)
        }
        AttentionScoring::V2 => {
            let sum = tape.add(z_dst, z_src)?;
            let act = tape.leaky_relu(sum, slope);
            tape.matmul(act, head.a)?
        }
    };
    let scores = tape.reshape(scores, vec![edges.dst.len()])?;
    let alpha = tape.segment_softmax(scores, edges.dst.clone())?;
    let weighted = tape.mul_rows(z_src, alpha)?;
    let out = tape.scatter_add_rows(weighted, edges.dst.clone(), edges.node_count)?;
    Ok((out, alpha))
}

/// One attention head: `h_i' = σ(Σ_{j ∈ N_i} α_ij W h_j)`.
pub fn gat_layer_forward(
    tape: &Tape,
    h: Var,
    head: HeadVars,
    edges: &EdgeIndex,
    slope: f64,
    sigma: Activation,
    scoring: AttentionScoring,
) -> Result<LayerOutput, GatError> {
    let (agg, attention) = aggregate(tape, h, head, edges, slope, scoring)?;
    Ok(LayerOutput {
        features: tape.activate(agg, sigma),
        attention,
    })
}

/// K heads combined by concatenation or averaging, with an optional residual
/// added after the nonlinearity.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_forward(
    tape: &Tape,
    h: Var,
    heads: &[HeadVars],
    edges: &EdgeIndex,
    combine: HeadCombine,
    residual: Residual,
    slope: f64,
    sigma: Activation,
    scoring: AttentionScoring,
) -> Result<MultiHeadOutput, GatError> {
    if heads.is_empty() {
        return Err(GatError::InvalidConfig(
            "at least one head is required".into(),
        ));
    }
    let mut outs = Vec::with_capacity(heads.len());
    let mut attention = Vec::with_capacity(heads.len());
    for &head in heads {
        let (agg, alpha) = aggregate(tape, h, head, edges, slope, scoring)?;
        outs.push(agg);
        attention.push(alpha);
    }
    let features = match combine {
        HeadCombine::Concat => {
            let activated: Vec<Var> = outs.iter().map(|&o| tape.activate(o, sigma)).collect();
            if activated.len() == 1 {
                activated[0]
            } else {
                tape.concat_last_dim(&activated)?
            }
        }
        HeadCombine::Mean => {
            let mean = if outs.len() == 1 {
                outs[0]
            } else {
                tape.mean_over_heads(&outs)?
            };
            tape.activate(mean, sigma)
        }
    };
    let features = match residual {
        Residual::Off => features,
        Residual::Identity => tape.add(features, h)?,
        Residual::Projection(p) => {
            let projected = tape.matmul(h, p)?;
            tape.add(features, projected)?
        }
    };
    Ok(MultiHeadOutput {
        features,
        attention,
    })
}
