use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSequence, Instance};
use crate::encoders::{Dropout, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{Acrm, Batch};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, ParamSet, Scalar};

use super::metrics::{EvalReport, Recall};
use super::score::{evaluate_split, IOU_THRESHOLDS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size-weighted means over the epoch.
    pub l_c: f64,
    pub l_i: f64,
    pub loss: f64,
    pub miou: f64,
    pub recalls: Vec<Recall>,
    pub seconds: f64,
    pub degenerate_spans: usize,
}

pub struct TrainOutcome<S> {
    /// Best parameters, already rounded to checkpoint precision.
    pub params: ParamSet<S>,
    pub adam: AdamState<S>,
    pub best_epoch: usize,
    pub report: EvalReport,
    pub log: Vec<EpochRecord>,
    /// The embedding table the model was trained with.
    pub table: EmbeddingTable,
}

/// Rounds every value to 32-bit precision, the storage format of checkpoints.
pub fn quantize<S: Scalar>(params: &ParamSet<S>) -> ParamSet<S> {
    params.cast::<f32>().cast::<S>()
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + stream);
    rng
}

/// Trains from freshly initialized parameters, evaluating on `eval` after
/// every epoch and keeping the parameters with the best mIoU. Stops after
/// `max_epochs`, or once `patience` epochs pass without improvement.
pub fn train<S: Scalar>(
    model: &Acrm,
    table: &EmbeddingTable,
    train: &[Instance],
    eval: &[Instance],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<S>> {
    let cfg = &model.config;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Data("training needs non-empty train and eval splits".into()));
    }
    let table = table.quantized();
    let mut params: ParamSet<S> = quantize(&model.init_params());
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut best: Option<(usize, ParamSet<S>, AdamState<S>, EvalReport)> = None;
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs.max(1) {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 0));
        let mut drop_rng = epoch_rng(cfg.seed, epoch, 1);
        let (mut sum_c, mut sum_i, mut sum_l, mut degenerate) = (0.0, 0.0, 0.0, 0);

        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            let diverged = |source| Error::Diverged {
                ids: items
                    .iter()
                    .map(|i| format!("{}: {}", i.video_id, i.raw_query))
                    .collect(),
                source,
            };
            let feats: Vec<&FeatureSequence> = items.iter().map(|i| i.features.as_ref()).collect();
            let toks: Vec<&[usize]> = items.iter().map(|i| i.tokens.as_slice()).collect();
            let spans: Vec<(usize, usize)> = items.iter().map(|i| (i.gt_start_idx, i.gt_end_idx)).collect();
            let batch = Batch::<S>::new(&feats, &toks, &table)?;

            let graph = Graph::new();
            let bound = params.bind(&graph);
            let mut dropout = Dropout {
                rate: cfg.dropout,
                rng: &mut drop_rng,
            };
            let step = (|| -> Result<_> {
                let out = model.forward(&bound, &batch, Some(&mut dropout))?;
                let parts = model.loss(&out, &batch.frames.lens, &spans)?;
                let mut grads = graph.backward(parts.total)?;
                Ok((parts, bound.gradients(&mut grads)))
            })();
            let (parts, grads) = match step {
                Ok(x) => x,
                Err(Error::Numerics(e)) => return Err(diverged(e)),
                Err(e) => return Err(e),
            };
            adam_step(&mut params, &grads, &mut adam, &adam_cfg).map_err(diverged)?;

            let k = items.len() as f64;
            sum_c += k * parts.boundary.value().data()[0].to_f64_lossy();
            sum_i += k * parts.internal.value().data()[0].to_f64_lossy();
            sum_l += k * parts.total.value().data()[0].to_f64_lossy();
            degenerate += parts.degenerate;
        }
        if degenerate > 0 {
            log::warn!("epoch {epoch}: {degenerate} single-frame spans used the fallback divisor");
        }

        let snapshot = quantize(&params);
        let report = evaluate_split(model, &snapshot, &table, eval, &[1], &IOU_THRESHOLDS, cfg.batch_size)?;
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            l_c: sum_c / n,
            l_i: sum_i / n,
            loss: sum_l / n,
            miou: report.miou,
            recalls: report.recalls.clone(),
            seconds: started.elapsed().as_secs_f64(),
            degenerate_spans: degenerate,
        };
        log::info!(
            "epoch {epoch}: L_c {:.4} L_I {:.4} L {:.4} mIoU {:.4} ({:.1}s)",
            record.l_c,
            record.l_i,
            record.loss,
            record.miou,
            record.seconds
        );
        on_epoch(&record);
        log.push(record);

        let improved = best.as_ref().is_none_or(|b| report.miou > b.3.miou);
        if improved {
            best = Some((epoch, snapshot, adam.clone(), report));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, params, adam, report) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        adam,
        best_epoch,
        report,
        log,
        table,
    })
}
