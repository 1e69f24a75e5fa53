use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Metrics};
use crate::dialogue::Dialogue;
use crate::gat::{
    build_samples, evaluate_samples, train, GatConfig, GatModel, LabelSpace, LossWeights,
    SampleAccuracy, TrainOptions,
};
use crate::retrieval::EmbeddingProvider;

/// One configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub gat: GatConfig,
    pub weights: LossWeights,
}

/// Data and training settings shared by every cell.
pub struct SweepSetup<'a> {
    pub train: &'a [Dialogue],
    pub validation: &'a [Dialogue],
    pub eval: &'a [Dialogue],
    pub labels: LabelSpace,
    pub encoder: &'a dyn EmbeddingProvider,
    pub options: TrainOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub best_epoch: Option<usize>,
    pub accuracy: Option<SampleAccuracy>,
    /// End-to-end metrics when a pipeline evaluator was supplied.
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

type PipelineEval<'a> = &'a (dyn Fn(&GatModel, &SweepCell) -> Result<Metrics, EvalError> + Sync);

fn run_cell(
    setup: &SweepSetup<'_>,
    cell: &SweepCell,
    pipeline: Option<PipelineEval<'_>>,
) -> Result<SweepRow, String> {
    let window = cell.gat.context_window;
    let bidir = cell.gat.bidirectional_edges;
    let samples = |d: &[Dialogue]| {
        build_samples(d, &setup.labels, setup.encoder, window, bidir).map_err(|e| e.to_string())
    };
    let train_samples = samples(setup.train)?;
    let val_samples = samples(setup.validation)?;
    let eval_samples = samples(setup.eval)?;
    let model = GatModel::new(
        cell.gat.clone(),
        setup.encoder.dimension(),
        setup.labels.clone(),
        setup.seed,
    )
    .map_err(|e| e.to_string())?;
    let outcome = train(
        model,
        &train_samples,
        &val_samples,
        &cell.weights,
        &setup.options,
    )
    .map_err(|e| e.to_string())?;
    let accuracy = evaluate_samples(&outcome.model, &eval_samples).map_err(|e| e.to_string())?;
    let metrics = match pipeline {
        Some(f) => Some(f(&outcome.model, cell).map_err(|e| e.to_string())?),
        None => None,
    };
    Ok(SweepRow {
        cell: cell.clone(),
        best_epoch: outcome.log.best_epoch,
        accuracy: Some(accuracy),
        metrics,
        error: None,
    })
}

/// Trains and scores one model per cell. A failing cell yields a row with
/// `error` set; the remaining cells still run.
pub fn ablation_sweep(
    setup: &SweepSetup<'_>,
    cells: &[SweepCell],
    pipeline: Option<PipelineEval<'_>>,
) -> Vec<SweepRow> {
    cells
        .par_iter()
        .map(|cell| {
            run_cell(setup, cell, pipeline).unwrap_or_else(|error| SweepRow {
                cell: cell.clone(),
                best_epoch: None,
                accuracy: None,
                metrics: None,
                error: Some(error),
            })
        })
        .collect()
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        "name,window,alpha,beta,gamma,best_epoch,intent_acc,domain_acc,slot_acc,jga,jta,error"
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let w = &self.cell.weights;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cell.name,
            self.cell.gat.context_window,
            w.alpha,
            w.beta,
            w.gamma,
            self.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt(self.accuracy.map(|a| a.intent)),
            opt(self.accuracy.map(|a| a.domain)),
            opt(self.accuracy.map(|a| a.slot)),
            opt(self.metrics.as_ref().map(|m| m.jga)),
            opt(self.metrics.as_ref().map(|m| m.jta)),
            self.error
                .as_deref()
                .unwrap_or("")
                .replace([',', '\n'], " "),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synthetic::separable_corpus;
    use crate::retrieval::HashEmbeddingProvider;

    #[test]
    fn failing_cell_does_not_stop_the_sweep() {
        let corpus = separable_corpus(4, 1);
        let encoder = HashEmbeddingProvider::new(16);
        let setup = SweepSetup {
            train: &corpus.dialogues,
            validation: &[],
            eval: &corpus.dialogues,
            labels: LabelSpace::from_ontology(&corpus.ontology),
            encoder: &encoder,
            options: TrainOptions {
                epochs: 2,
                ..TrainOptions::default()
            },
            seed: 0,
        };
        let good = SweepCell {
            name: "ok".into(),
            gat: GatConfig::small(),
            weights: LossWeights::default(),
        };
        let mut bad = good.clone();
        bad.name = "bad".into();
        bad.gat.heads = 0;
        let rows = ablation_sweep(&setup, &[good, bad], None);
        assert!(rows[0].error.is_none() && rows[0].accuracy.is_some());
        assert!(rows[1].error.is_some());
        assert!(rows[1].csv_line().starts_with("bad,"));
    }
}
