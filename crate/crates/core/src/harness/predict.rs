use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::data::{index_to_span, load_annotations, load_features, tokenize, FeatureSequence, LoadStats};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

use super::checkpoint::Checkpoint;
use super::config::Precision;
use super::score::{score, softmax, FrameScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictOptions {
    pub dump_scores: bool,
    pub dump_attention: bool,
    pub batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            dump_scores: false,
            dump_attention: false,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredictSummary {
    pub predicted: usize,
    pub failed: usize,
    pub skipped_lines: usize,
}

#[derive(Serialize)]
struct ScoreDump<'a> {
    start: &'a [f64],
    end: &'a [f64],
    internal: &'a [f64],
    p_start: Vec<f64>,
    p_end: Vec<f64>,
    p_internal: Vec<f64>,
}

#[derive(Serialize)]
struct AttentionDump<'a> {
    words: &'a [String],
    /// `[frame][word]`
    weights: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    video: &'a str,
    query: &'a str,
    pred_start_idx: usize,
    pred_end_idx: usize,
    pred_start_s: f64,
    pred_end_s: f64,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<ScoreDump<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attention: Option<AttentionDump<'a>>,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    video: &'a str,
    query: &'a str,
    error: String,
}

/// Scores every record of an annotation file and writes one JSON line per
/// record, in input order. Records that cannot be scored (missing features,
/// empty query) produce an error line instead.
pub fn predict_file(
    ckpt: &Checkpoint,
    annotations: &Path,
    features_dir: &Path,
    out_path: &Path,
    opts: PredictOptions,
) -> Result<PredictSummary> {
    let mut stats = LoadStats::default();
    let records = load_annotations(annotations, false, &mut stats)?;
    let vocab = ckpt.table.vocab();

    let mut cache: HashMap<&str, Result<Arc<FeatureSequence>, String>> = HashMap::new();
    let mut resolved = Vec::with_capacity(records.len());
    for rec in &records {
        let feats = cache
            .entry(rec.video.as_str())
            .or_insert_with(|| {
                load_features(features_dir, &rec.video, Some(ckpt.d_in))
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone();
        let item = feats.and_then(|f| {
            let words = tokenize(&rec.query).map_err(|e| e.to_string())?;
            let tokens = vocab.encode(&words);
            Ok((f, words, tokens))
        });
        resolved.push(item);
    }

    let valid: Vec<(&FeatureSequence, &[usize])> = resolved
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|(f, _, t)| (f.as_ref(), t.as_slice()))
        .collect();
    let model = ckpt.model()?;
    let want_att = opts.dump_attention;
    let scores = match ckpt.config.precision {
        Precision::F32 => score_with::<f32>(ckpt, &model, &valid, opts.batch_size, want_att)?,
        Precision::F64 => score_with::<f64>(ckpt, &model, &valid, opts.batch_size, want_att)?,
    };

    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut w = BufWriter::new(file);
    let mut summary = PredictSummary {
        skipped_lines: stats.rejected(),
        ..Default::default()
    };
    let mut next = scores.iter();
    for (rec, item) in records.iter().zip(&resolved) {
        let line = match item {
            Err(error) => {
                summary.failed += 1;
                serde_json::to_string(&ErrorLine {
                    video: &rec.video,
                    query: &rec.query,
                    error: error.clone(),
                })
            }
            Ok((f, words, _)) => {
                let s = next.next().expect("one score per valid item");
                let best = s.top_k(1)?[0];
                let (start_s, end_s) = index_to_span(best.start, best.end, f.frames(), rec.duration);
                summary.predicted += 1;
                serde_json::to_string(&PredictionLine {
                    video: &rec.video,
                    query: &rec.query,
                    pred_start_idx: best.start,
                    pred_end_idx: best.end,
                    pred_start_s: start_s,
                    pred_end_s: end_s,
                    score: best.score,
                    scores: opts.dump_scores.then(|| ScoreDump {
                        start: &s.start,
                        end: &s.end,
                        internal: &s.internal,
                        p_start: softmax(&s.start),
                        p_end: softmax(&s.end),
                        p_internal: softmax(&s.internal),
                    }),
                    attention: s.attention.as_ref().map(|a| AttentionDump { words, weights: a }),
                })
            }
        }
        .expect("prediction line serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(out_path, e))?;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(summary)
}

fn score_with<S: Scalar>(
    ckpt: &Checkpoint,
    model: &crate::model::Acrm,
    items: &[(&FeatureSequence, &[usize])],
    batch_size: usize,
    with_attention: bool,
) -> Result<Vec<FrameScores>> {
    score(
        model,
        &ckpt.params::<S>(),
        &ckpt.table,
        items,
        batch_size,
        with_attention,
    )
}
