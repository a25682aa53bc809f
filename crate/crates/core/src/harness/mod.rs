//! Configuration, training, evaluation, checkpoints and prediction files.

mod checkpoint;
mod config;
pub mod gradcheck;
mod metrics;
mod predict;
mod score;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Precision, SEED_ENV};
pub use metrics::{evaluate, iou, EvalReport, InstanceResult, Recall};
pub use predict::{predict_file, PredictOptions, PredictSummary};
pub use score::{evaluate_split, score, softmax, FrameScores, IOU_THRESHOLDS};
pub use train::{quantize, train, EpochRecord, TrainOutcome};

use crate::data::Instance;
use crate::encoders::EmbeddingTable;
use crate::error::Result;
use crate::model::Acrm;
use crate::numerics::Scalar;

/// A finished run: the best checkpoint and the per-epoch log.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    pub log: Vec<EpochRecord>,
}

/// Trains in the precision named by the config and packages the best epoch.
pub fn train_checkpoint(
    model: &Acrm,
    table: &EmbeddingTable,
    train_set: &[Instance],
    eval_set: &[Instance],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedRun> {
    fn run<S: Scalar>(
        model: &Acrm,
        table: &EmbeddingTable,
        train_set: &[Instance],
        eval_set: &[Instance],
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainedRun> {
        let out = train::<S>(model, table, train_set, eval_set, on_epoch)?;
        Ok(TrainedRun {
            checkpoint: Checkpoint::new(model, out.best_epoch, &out.table, &out.params, Some(&out.adam)),
            report: out.report,
            log: out.log,
        })
    }
    match model.config.precision {
        Precision::F32 => run::<f32>(model, table, train_set, eval_set, on_epoch),
        Precision::F64 => run::<f64>(model, table, train_set, eval_set, on_epoch),
    }
}

/// Evaluates a checkpoint on a labelled split in the checkpoint's precision.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    instances: &[Instance],
    n_list: &[usize],
    m_list: &[f64],
    batch_size: usize,
) -> Result<EvalReport> {
    let model = ckpt.model()?;
    match ckpt.config.precision {
        Precision::F32 => evaluate_split(
            &model,
            &ckpt.params::<f32>(),
            &ckpt.table,
            instances,
            n_list,
            m_list,
            batch_size,
        ),
        Precision::F64 => evaluate_split(
            &model,
            &ckpt.params::<f64>(),
            &ckpt.table,
            instances,
            n_list,
            m_list,
            batch_size,
        ),
    }
}
