use crate::data::Example;
use crate::error::{Error, Result};
use crate::grid::ModelOutputs;
use crate::metrics::{score, total_loss, DetectionScores};
use crate::model::Model;
use crate::tensor::Tensor;

/// Anything that maps a batch of `[n, S, S, 3]` inputs to per-image maps.
pub trait Predictor {
    fn predict(&self, inputs: &Tensor) -> Result<Vec<ModelOutputs>>;
}

impl Predictor for Model {
    fn predict(&self, inputs: &Tensor) -> Result<Vec<ModelOutputs>> {
        Model::predict(self, inputs)
    }
}

/// Concatenates `[1, S, S, 3]` inputs along the batch axis.
pub fn stack_inputs(batch: &[&Example]) -> Result<Tensor> {
    let first = batch.first().ok_or_else(|| Error::invalid("batch", "empty batch"))?;
    let shape = first.input.shape();
    let mut data = Vec::with_capacity(first.input.len() * batch.len());
    for e in batch {
        if e.input.shape() != shape {
            return Err(Error::shape("batch", shape, e.input.shape()));
        }
        data.extend_from_slice(e.input.data());
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = batch.len();
    Tensor::new(out_shape, data)
}

/// Mean loss and mean scores over a set of examples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub scores: DetectionScores,
}

pub fn evaluate_examples<P: Predictor + ?Sized>(predictor: &P, examples: &[Example], batch_size: usize) -> Result<EvalResult> {
    if examples.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let (mut loss, mut iou, mut ssim) = (0.0, 0.0, 0.0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let outputs = predictor.predict(&stack_inputs(&refs)?)?;
        if outputs.len() != chunk.len() {
            return Err(Error::invalid(
                "evaluate",
                format!("predictor returned {} outputs for {} inputs", outputs.len(), chunk.len()),
            ));
        }
        for (out, ex) in outputs.iter().zip(chunk) {
            loss += total_loss(out, &ex.targets)?.total();
            let s = score(out, &ex.targets)?;
            iou += s.centroid_mean_iou;
            ssim += s.dimensions_ssim;
        }
    }
    let n = examples.len() as f64;
    Ok(EvalResult {
        loss: loss / n,
        scores: DetectionScores {
            centroid_mean_iou: iou / n,
            dimensions_ssim: ssim / n,
        },
    })
}

/// The evaluation report written as JSON.
pub type EvalReport = DetectionScores;

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, examples: &[Example]) -> Result<EvalReport> {
    Ok(evaluate_examples(predictor, examples, 8)?.scores)
}

pub fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}
