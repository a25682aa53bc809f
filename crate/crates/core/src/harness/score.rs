use serde::Serialize;

use crate::data::{FeatureSequence, Instance};
use crate::encoders::EmbeddingTable;
use crate::error::Result;
use crate::model::{Acrm, Batch};
use crate::numerics::{softmax_in_place, Graph, ParamSet, Scalar};
use crate::prediction::{infer_top_k, BoundaryPrediction};

use super::metrics::{evaluate, EvalReport};

/// Evaluation-mode outputs for one video/query pair, valid frames only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameScores {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub internal: Vec<f64>,
    /// `[T][m]` attention weights, when requested and attention is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<f64>>>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p, None);
    p
}

impl FrameScores {
    pub fn top_k(&self, k: usize) -> Result<Vec<BoundaryPrediction>> {
        infer_top_k(&self.start, &self.end, k)
    }
}

/// Runs the model without dropout over `items` in batches of `batch_size`.
/// Items are grouped by length internally; results come back in input order.
pub fn score<S: Scalar>(
    model: &Acrm,
    params: &ParamSet<S>,
    table: &EmbeddingTable,
    items: &[(&FeatureSequence, &[usize])],
    batch_size: usize,
    with_attention: bool,
) -> Result<Vec<FrameScores>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| (items[i].0.frames(), i));
    let mut out: Vec<Option<FrameScores>> = vec![None; items.len()];
    for chunk in order.chunks(batch_size.max(1)) {
        let feats: Vec<&FeatureSequence> = chunk.iter().map(|&i| items[i].0).collect();
        let toks: Vec<&[usize]> = chunk.iter().map(|&i| items[i].1).collect();
        let batch = Batch::<S>::new(&feats, &toks, table)?;
        let graph = Graph::new();
        let bound = params.bind(&graph);
        let fwd = model.forward(&bound, &batch, None)?;
        let (s, e, f) = (
            fwd.logits.start.value(),
            fwd.logits.end.value(),
            fwd.logits.internal.value(),
        );
        let att = fwd.attention.filter(|_| with_attention).map(|a| a.value());
        let b_count = chunk.len();
        for (b, &i) in chunk.iter().enumerate() {
            let len = batch.frames.lens[b];
            let take = |t: &crate::numerics::Tensor<S>| t.row(b)[..len].iter().map(|x| x.to_f64_lossy()).collect();
            let attention = att.as_ref().map(|a| {
                let m = batch.words.lens[b];
                (0..len)
                    .map(|t| a.row(t * b_count + b)[..m].iter().map(|x| x.to_f64_lossy()).collect())
                    .collect()
            });
            out[i] = Some(FrameScores {
                start: take(&s),
                end: take(&e),
                internal: take(&f),
                attention,
            });
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every item scored")).collect())
}

/// Default recall grid.
pub const IOU_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// Scores a labelled split and computes recalls for every `n` in `n_list`
/// at every IoU threshold in `m_list`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split<S: Scalar>(
    model: &Acrm,
    params: &ParamSet<S>,
    table: &EmbeddingTable,
    instances: &[Instance],
    n_list: &[usize],
    m_list: &[f64],
    batch_size: usize,
) -> Result<EvalReport> {
    let items: Vec<(&FeatureSequence, &[usize])> = instances
        .iter()
        .map(|i| (i.features.as_ref(), i.tokens.as_slice()))
        .collect();
    let scores = score(model, params, table, &items, batch_size, false)?;
    let k = n_list.iter().copied().max().unwrap_or(1);
    let ranked = scores
        .iter()
        .map(|s| Ok(s.top_k(k)?.iter().map(|p| (p.start, p.end)).collect()))
        .collect::<Result<Vec<Vec<_>>>>()?;
    let gts: Vec<(usize, usize)> = instances.iter().map(|i| (i.gt_start_idx, i.gt_end_idx)).collect();
    evaluate(&ranked, &gts, n_list, m_list)
}
