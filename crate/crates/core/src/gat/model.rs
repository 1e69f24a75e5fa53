use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    multi_head_forward, multitask_loss, DialogueGraph, GatConfig, GatError, HeadCombine, HeadVars,
    LossOutput, LossWeights, Residual,
};
use crate::autodiff::{sigmoid, Activation, ParamId, ParameterSet, Tape, Tensor, Var};
use crate::dialogue::Ontology;

pub const PREDICTION_THRESHOLD: f64 = 0.5;

const SIDECAR_FORMAT: &str = "gem-dst-gat";
const SIDECAR_VERSION: u32 = 1;

/// Ordered label inventories for the three decoder heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub intents: Vec<String>,
    pub domains: Vec<String>,
    pub slots: Vec<String>,
}

impl LabelSpace {
    pub fn from_ontology(ontology: &Ontology) -> Self {
        Self {
            intents: ontology.intent_labels(),
            domains: ontology.domain_labels(),
            slots: ontology.slot_labels(),
        }
    }

    pub fn multi_hot(labels: &[String], active: &BTreeSet<String>) -> Vec<f64> {
        labels
            .iter()
            .map(|l| if active.contains(l) { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadLogits {
    pub intent: Var,
    pub domain: Var,
    pub slot: Var,
}

/// Per-node sigmoid outputs, each `[n, labels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProbabilities {
    pub intent: Tensor,
    pub domain: Tensor,
    pub slot: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabels {
    pub intents: BTreeSet<String>,
    pub domains: BTreeSet<String>,
    pub slots: BTreeSet<String>,
}

impl NodeProbabilities {
    /// Labels whose probability reaches the 0.5 threshold at `node`.
    pub fn labels(&self, node: usize, space: &LabelSpace) -> NodeLabels {
        let pick = |t: &Tensor, names: &[String]| {
            t.row(node)
                .iter()
                .zip(names)
                .filter(|(p, _)| **p >= PREDICTION_THRESHOLD)
                .map(|(_, n)| n.clone())
                .collect()
        };
        NodeLabels {
            intents: pick(&self.intent, &space.intents),
            domains: pick(&self.domain, &space.domains),
            slots: pick(&self.slot, &space.slots),
        }
    }
}

#[derive(Debug, Clone)]
enum ResidualParam {
    Off,
    Identity,
    Projection(ParamId),
}

#[derive(Debug, Clone)]
struct LayerParams {
    heads: Vec<(ParamId, ParamId)>,
    residual: ResidualParam,
}

#[derive(Debug, Clone)]
struct DecoderParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    config: GatConfig,
    input_dim: usize,
    labels: LabelSpace,
}

/// Stacked multi-head attention layers followed by intent, domain and slot decoders.
#[derive(Debug, Clone)]
pub struct GatModel {
    config: GatConfig,
    input_dim: usize,
    labels: LabelSpace,
    params: ParameterSet,
    layers: Vec<LayerParams>,
    decoders: [DecoderParams; 3],
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
    )
    .expect("uniform draws are finite")
}

impl GatModel {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(
        config: GatConfig,
        input_dim: usize,
        labels: LabelSpace,
        seed: u64,
    ) -> Result<Self, GatError> {
        config.validate()?;
        if input_dim == 0 {
            return Err(GatError::InvalidConfig(
                "input dimension must be positive".into(),
            ));
        }
        if labels.intents.is_empty() || labels.domains.is_empty() || labels.slots.is_empty() {
            return Err(GatError::InvalidConfig(
                "every decoder needs at least one label".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let hidden = config.hidden;
        let att = config.attention_dim();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let fin = config.layer_input_dim(l, input_dim);
            let fout = config.layer_output_dim(l);
            let mut heads = Vec::with_capacity(config.heads);
            for k in 0..config.heads {
                let w = params.add(
                    format!("gat.{l}.{k}.w"),
                    glorot(&mut rng, fin, hidden, &[fin, hidden]),
                )?;
                let a = params.add(
                    format!("gat.{l}.{k}.a"),
                    glorot(&mut rng, att, 1, &[att, 1]),
                )?;
                heads.push((w, a));
            }
            let residual = match (config.residual, fin == fout) {
                (false, _) => ResidualParam::Off,
                (true, true) => ResidualParam::Identity,
                (true, false) => ResidualParam::Projection(params.add(
                    format!("gat.{l}.residual"),
                    glorot(&mut rng, fin, fout, &[fin, fout]),
                )?),
            };
            layers.push(LayerParams { heads, residual });
        }
        let dh = config.decoder_hidden;
        let mut decoder = |task: &str, classes: usize| -> Result<DecoderParams, GatError> {
            Ok(DecoderParams {
                w1: params.add(
                    format!("decoder.{task}.w1"),
                    glorot(&mut rng, hidden, dh, &[hidden, dh]),
                )?,
                b1: params.add(format!("decoder.{task}.b1"), Tensor::zeros(&[dh]))?,
                w2: params.add(
                    format!("decoder.{task}.w2"),
                    glorot(&mut rng, dh, classes, &[dh, classes]),
                )?,
                b2: params.add(format!("decoder.{task}.b2"), Tensor::zeros(&[classes]))?,
            })
        };
        let decoders = [
            decoder("intent", labels.intents.len())?,
            decoder("domain", labels.domains.len())?,
            decoder("slot", labels.slots.len())?,
        ];
        Ok(Self {
            config,
            input_dim,
            labels,
            params,
            layers,
            decoders,
        })
    }

    pub fn config(&self) -> &GatConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn check_graph(&self, graph: &DialogueGraph) -> Result<(), GatError> {
        if graph.feature_dim() != self.input_dim {
            return Err(GatError::Dimension {
                expected: self.input_dim,
                actual: graph.feature_dim(),
            });
        }
        Ok(())
    }

    /// Records the forward pass; returns decoder logits and per-layer, per-head attention.
    pub fn forward(
        &self,
        tape: &Tape,
        graph: &DialogueGraph,
    ) -> Result<(HeadLogits, Vec<Vec<Var>>), GatError> {
        self.check_graph(graph)?;
        let edges = graph.edge_index();
        let c = &self.config;
        let mut h = tape.constant(graph.node_features().clone());
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let heads: Vec<HeadVars> = layer
                .heads
                .iter()
                .map(|&(w, a)| HeadVars {
                    w: tape.param(&self.params, w),
                    a: tape.param(&self.params, a),
                })
                .collect();
            let residual = match layer.residual {
                ResidualParam::Off => Residual::Off,
                ResidualParam::Identity => Residual::Identity,
                ResidualParam::Projection(p) => Residual::Projection(tape.param(&self.params, p)),
            };
            let (combine, sigma) = if last {
                (HeadCombine::Mean, c.output_sigma)
            } else {
                (HeadCombine::Concat, c.sigma)
            };
            let out = multi_head_forward(
                tape,
                h,
                &heads,
                &edges,
                combine,
                residual,
                c.negative_slope,
                sigma.to_activation(c.negative_slope),
                c.scoring,
            )?;
            h = out.features;
            attention.push(out.attention);
        }
        let decode = |d: &DecoderParams| -> Result<Var, GatError> {
            let z = tape.matmul(h, tape.param(&self.params, d.w1))?;
            let z = tape.add_bias(z, tape.param(&self.params, d.b1))?;
            let z = tape.activate(z, Activation::Elu);
            let z = tape.matmul(z, tape.param(&self.params, d.w2))?;
            Ok(tape.add_bias(z, tape.param(&self.params, d.b2))?)
        };
        let logits = HeadLogits {
            intent: decode(&self.decoders[0])?,
            domain: decode(&self.decoders[1])?,
            slot: decode(&self.decoders[2])?,
        };
        Ok((logits, attention))
    }

    pub fn predict(&self, graph: &DialogueGraph) -> Result<NodeProbabilities, GatError> {
        let tape = Tape::new();
        let (logits, _) = self.forward(&tape, graph)?;
        let probs = |v: Var| tape.value(v).map(sigmoid);
        Ok(NodeProbabilities {
            intent: probs(logits.intent),
            domain: probs(logits.domain),
            slot: probs(logits.slot),
        })
    }

    /// Thresholded labels for the last node of the graph.
    pub fn predict_current(&self, graph: &DialogueGraph) -> Result<NodeLabels, GatError> {
        let probs = self.predict(graph)?;
        Ok(probs.labels(graph.node_count() - 1, &self.labels))
    }

    /// Attention coefficients as `[layer][head][edge]`, aligned with `graph.edges()`.
    pub fn attention(&self, graph: &DialogueGraph) -> Result<Vec<Vec<Vec<f64>>>, GatError> {
        let tape = Tape::new();
        let (_, attention) = self.forward(&tape, graph)?;
        Ok(attention
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&a| tape.value(a).data().to_vec())
                    .collect()
            })
            .collect())
    }

    /// Multi-task loss on `graph` with targets `[n, labels]` per head and a row mask.
    pub fn loss(
        &self,
        tape: &Tape,
        graph: &DialogueGraph,
        targets: [&Tensor; 3],
        mask: &[f64],
        weights: &LossWeights,
    ) -> Result<LossOutput, GatError> {
        let (logits, _) = self.forward(tape, graph)?;
        multitask_loss(tape, &logits, targets, mask, weights)
    }

    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    /// Writes the parameter checkpoint at `path` and a JSON config sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<(), GatError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| GatError::Io { path: p, source }
        };
        let file = File::create(path).map_err(io(path))?;
        self.params.write_checkpoint(BufWriter::new(file))?;
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            config: self.config.clone(),
            input_dim: self.input_dim,
            labels: self.labels.clone(),
        };
        let text =
            serde_json::to_string_pretty(&sidecar).map_err(|e| GatError::Sidecar(e.to_string()))?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, text).map_err(io(&side))
    }

    pub fn load(path: &Path) -> Result<Self, GatError> {
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| GatError::Io {
            path: side.clone(),
            source,
        })?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| GatError::Sidecar(e.to_string()))?;
        if sidecar.format != SIDECAR_FORMAT || sidecar.version != SIDECAR_VERSION {
            return Err(GatError::Sidecar(format!(
                "unsupported sidecar {} v{}",
                sidecar.format, sidecar.version
            )));
        }
        let mut model = Self::new(sidecar.config, sidecar.input_dim, sidecar.labels, 0)?;
        let file = File::open(path).map_err(|source| GatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let loaded = ParameterSet::read_checkpoint(BufReader::new(file))?;
        if loaded.len() != model.params.len() {
            return Err(GatError::Sidecar(format!(
                "checkpoint has {} tensors, config implies {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for (expected, got) in model.params.ids().zip(loaded.ids()) {
            let (en, gn) = (model.params.name(expected), loaded.name(got));
            let (es, gs) = (
                model.params.value(expected).shape(),
                loaded.value(got).shape(),
            );
            if en != gn || es != gs {
                return Err(GatError::Sidecar(format!(
                    "checkpoint tensor {gn} {gs:?} does not match expected {en} {es:?}"
                )));
            }
        }
        model.params = loaded;
        Ok(model)
    }
}
