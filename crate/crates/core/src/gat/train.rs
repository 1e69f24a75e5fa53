use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_graph, DialogueGraph, GatError, GatModel, LabelSpace, LossWeights, NodeLabels};
use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::dialogue::{build_context_window, Dialogue, WindowSize};
use crate::retrieval::EmbeddingProvider;

/// One user turn: its context-window graph with targets on the final node only.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dialogue_id: String,
    pub turn: usize,
    pub graph: DialogueGraph,
    pub targets: [Tensor; 3],
    pub mask: Vec<f64>,
    pub gold: NodeLabels,
}

/// Builds one sample per user turn of every dialogue.
pub fn build_samples(
    dialogues: &[Dialogue],
    labels: &LabelSpace,
    encoder: &dyn EmbeddingProvider,
    window: WindowSize,
    bidirectional: bool,
) -> Result<Vec<Sample>, GatError> {
    let mut samples = Vec::new();
    for d in dialogues {
        for t in d.user_turn_indices() {
            let ctx =
                build_context_window(d, t, window).map_err(|e| GatError::Graph(e.to_string()))?;
            let graph = build_graph(&ctx, encoder, bidirectional)?;
            let n = graph.node_count();
            let turn = &d.turns[t];
            let target = |names: &[String], active| {
                let mut data = vec![0.0; n * names.len()];
                data[(n - 1) * names.len()..]
                    .copy_from_slice(&LabelSpace::multi_hot(names, active));
                Tensor::new(vec![n, names.len()], data)
            };
            let targets = [
                target(&labels.intents, &turn.gold_intents)?,
                target(&labels.domains, &turn.gold_domains)?,
                target(&labels.slots, &turn.gold_slots)?,
            ];
            let mut mask = vec![0.0; n];
            mask[n - 1] = 1.0;
            samples.push(Sample {
                dialogue_id: d.id.clone(),
                turn: t,
                graph,
                targets,
                mask,
                gold: NodeLabels {
                    intents: turn.gold_intents.clone(),
                    domains: turn.gold_domains.clone(),
                    slots: turn.gold_slots.clone(),
                },
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Exact-set accuracies of the current-node predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleAccuracy {
    pub intent: f64,
    pub domain: f64,
    pub slot: f64,
}

pub fn evaluate_samples(model: &GatModel, samples: &[Sample]) -> Result<SampleAccuracy, GatError> {
    if samples.is_empty() {
        return Ok(SampleAccuracy::default());
    }
    let predictions: Vec<NodeLabels> = samples
        .par_iter()
        .map(|s| model.predict_current(&s.graph))
        .collect::<Result<_, _>>()?;
    let n = samples.len() as f64;
    let frac = |f: &dyn Fn(&NodeLabels, &NodeLabels) -> bool| {
        samples
            .iter()
            .zip(&predictions)
            .filter(|(s, p)| f(&s.gold, p))
            .count() as f64
            / n
    };
    Ok(SampleAccuracy {
        intent: frac(&|g, p| g.intents == p.intents),
        domain: frac(&|g, p| g.domains == p.domains),
        slot: frac(&|g, p| g.slots == p.slots),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_intent: f64,
    pub loss_domain: f64,
    pub loss_slot: f64,
    pub val_intent_acc: f64,
    pub val_domain_acc: f64,
    pub val_slot_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch records serialize") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), GatError> {
        let mut f = std::fs::File::create(path).map_err(|source| GatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| GatError::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: GatModel,
    pub log: TrainingLog,
}

/// Adam over shuffled mini-batches; returns the epoch with the best validation
/// slot accuracy (intent accuracy breaks ties, then the earlier epoch).
///
/// With an empty validation set the training samples are scored instead.
pub fn train(
    mut model: GatModel,
    train: &[Sample],
    val: &[Sample],
    weights: &LossWeights,
    opts: &TrainOptions,
) -> Result<TrainingOutcome, GatError> {
    weights.validate()?;
    if opts.epochs == 0 {
        return Ok(TrainingOutcome {
            model,
            log: TrainingLog::default(),
        });
    }
    if train.is_empty() {
        return Err(GatError::NoSamples(
            "training split has no user turns".into(),
        ));
    }
    if opts.batch_size == 0 || !(opts.learning_rate.is_finite() && opts.learning_rate > 0.0) {
        return Err(GatError::InvalidConfig(format!(
            "batch_size {} and learning_rate {} must be positive",
            opts.batch_size, opts.learning_rate
        )));
    }
    let scored = if val.is_empty() { train } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, f64, GatModel)> = None;
    let mut step = 0usize;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for batch in order.chunks(opts.batch_size) {
            step += 1;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train[i];
                let tape = Tape::new();
                let out = model.loss(
                    &tape,
                    &s.graph,
                    [&s.targets[0], &s.targets[1], &s.targets[2]],
                    &s.mask,
                    weights,
                )?;
                let total = tape.value(out.total).item();
                if !total.is_finite() {
                    return Err(GatError::Divergence {
                        epoch,
                        step,
                        detail: format!("loss is {total}"),
                    });
                }
                for (acc, v) in sums
                    .iter_mut()
                    .zip([total, out.intent, out.domain, out.slot])
                {
                    *acc += v;
                }
                let scaled = tape.scale(out.total, scale);
                let grads = tape.backward(scaled, false)?;
                model.params_mut().accumulate(&grads);
            }
            model
                .params_mut()
                .step(opts.learning_rate)
                .map_err(|e| match e {
                    AutodiffError::NanGradient(name) => GatError::Divergence {
                        epoch,
                        step,
                        detail: format!("non-finite gradient for {name}"),
                    },
                    other => other.into(),
                })?;
        }
        let acc = evaluate_samples(&model, scored)?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            loss_total: sums[0] / n,
            loss_intent: sums[1] / n,
            loss_domain: sums[2] / n,
            loss_slot: sums[3] / n,
            val_intent_acc: acc.intent,
            val_domain_acc: acc.domain,
            val_slot_acc: acc.slot,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val slot {:.4} intent {:.4}",
            record.loss_total,
            acc.slot,
            acc.intent
        );
        log.epochs.push(record);
        let improved = best
            .as_ref()
            .is_none_or(|(slot, intent, _)| (acc.slot, acc.intent) > (*slot, *intent));
        if improved {
            best = Some((acc.slot, acc.intent, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let model = best.map(|(_, _, m)| m).unwrap_or(model);
    Ok(TrainingOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Turn;
    use crate::gat::GatConfig;
    use crate::retrieval::HashEmbeddingProvider;

    fn labels() -> LabelSpace {
        LabelSpace {
            intents: vec!["find_hotel".into(), "find_train".into()],
            domains: vec!["hotel".into(), "train".into()],
            slots: vec!["hotel-area".into(), "train-day".into()],
        }
    }

    fn fixture() -> Vec<Dialogue> {
        let mut u1 = Turn::user("somewhere in the north please");
        u1.gold_intents.insert("find_hotel".into());
        u1.gold_domains.insert("hotel".into());
        u1.gold_slots.insert("hotel-area".into());
        let mut u2 = Turn::user("a train leaving on monday");
        u2.gold_intents.insert("find_train".into());
        u2.gold_domains.insert("train".into());
        u2.gold_slots.insert("train-day".into());
        vec![Dialogue::new("d1", vec![u1, Turn::assistant("sure"), u2])]
    }

    fn small() -> GatConfig {
        GatConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            decoder_hidden: 8,
            ..GatConfig::small()
        }
    }

    fn samples() -> Vec<Sample> {
        build_samples(
            &fixture(),
            &labels(),
            &HashEmbeddingProvider::new(16),
            WindowSize::Full,
            false,
        )
        .unwrap()
    }

    #[test]
    fn samples_mask_only_the_current_node() {
        let s = samples();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].mask, vec![0.0, 0.0, 1.0]);
        assert_eq!(s[1].targets[2].row(2), &[0.0, 1.0]);
        assert!(s[1].targets[2].row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let model = GatModel::new(small(), 16, labels(), 1).unwrap();
        let out = train(
            model.clone(),
            &samples(),
            &[],
            &LossWeights::default(),
            &TrainOptions {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.model.params().same_weights(model.params()));
        assert!(out.log.epochs.is_empty());
    }

    #[test]
    fn overfits_fixture_and_is_deterministic() {
        let s = samples();
        let opts = TrainOptions {
            epochs: 40,
            learning_rate: 0.02,
            batch_size: 2,
            seed: 7,
        };
        let run = || {
            let model = GatModel::new(small(), 16, labels(), 3).unwrap();
            train(
                model,
                &s,
                &[],
                &LossWeights::new(1.0, 0.5, 2.0).unwrap(),
                &opts,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.model.params().same_weights(b.model.params()));
        assert_eq!(a.log, b.log);
        for sample in &s {
            assert_eq!(a.model.predict_current(&sample.graph).unwrap(), sample.gold);
        }
        assert_eq!(a.log.to_jsonl().lines().count(), 40);
    }
}
