use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use super::annotations::{load_annotations, AnnotationRecord};
use super::features::{load_features, FeatureSequence};
use super::text::{time_to_index, tokenize};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Counters for records rejected or adjusted while loading.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub malformed: usize,
    pub invalid_interval: usize,
    pub empty_query: usize,
    pub clamped_times: usize,
    pub missing_features: usize,
}

impl LoadStats {
    pub fn rejected(&self) -> usize {
        self.malformed + self.invalid_interval + self.empty_query + self.missing_features
    }
}

/// One video/query/moment tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub video_id: String,
    pub features: Arc<FeatureSequence>,
    pub raw_query: String,
    pub words: Vec<String>,
    pub tokens: Vec<usize>,
    pub duration: f64,
    pub gt_start_s: f64,
    pub gt_end_s: f64,
    pub gt_start_idx: usize,
    pub gt_end_idx: usize,
}

impl Instance {
    pub fn frames(&self) -> usize {
        self.features.frames()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub instances: Vec<Instance>,
    pub vocab: Vocabulary,
    pub d_in: usize,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Maps a record onto a feature sequence. The ground-truth indices always
/// satisfy `start_idx <= end_idx < T`; out-of-range times are clamped and
/// counted.
pub fn resolve_record(
    rec: &AnnotationRecord,
    words: Vec<String>,
    features: Arc<FeatureSequence>,
    vocab: &Vocabulary,
    stats: &mut LoadStats,
) -> Instance {
    let frames = features.frames();
    let (s_idx, s_clamped) = time_to_index(rec.start, frames, rec.duration);
    let (e_idx, e_clamped) = time_to_index(rec.end, frames, rec.duration);
    if s_clamped || e_clamped {
        log::warn!(
            "{}: moment [{}, {}] outside [0, {}], clamped",
            rec.video,
            rec.start,
            rec.end,
            rec.duration
        );
        stats.clamped_times += 1;
    }
    let (s_idx, e_idx) = (s_idx.min(e_idx), e_idx.max(s_idx));
    Instance {
        video_id: rec.video.clone(),
        features,
        raw_query: rec.query.clone(),
        tokens: vocab.encode(&words),
        words,
        duration: rec.duration,
        gt_start_s: rec.start,
        gt_end_s: rec.end,
        gt_start_idx: s_idx,
        gt_end_idx: e_idx,
    }
}

/// Loads an annotation file and the feature files it references.
///
/// With `vocab == None` the vocabulary is built from this split (use for
/// training data only). Records whose query has no tokens or whose feature
/// file is absent are skipped and counted.
pub fn load_split(
    annotations: &Path,
    features_dir: &Path,
    vocab: Option<&Vocabulary>,
    d_in: Option<usize>,
    strict: bool,
) -> Result<(DatasetSplit, LoadStats)> {
    let mut stats = LoadStats::default();
    let records = load_annotations(annotations, strict, &mut stats)?;
    let mut cache: HashMap<String, Arc<FeatureSequence>> = HashMap::new();
    let mut dim = d_in;
    let mut staged = Vec::with_capacity(records.len());
    for rec in records {
        let words = match tokenize(&rec.query) {
            Ok(w) => w,
            Err(e) => {
                log::warn!("{}: {e}; record rejected", rec.video);
                stats.empty_query += 1;
                continue;
            }
        };
        let features = match cache.get(&rec.video) {
            Some(f) => f.clone(),
            None => match load_features(features_dir, &rec.video, dim) {
                Ok(f) => {
                    dim.get_or_insert(f.dim());
                    let f = Arc::new(f);
                    cache.insert(rec.video.clone(), f.clone());
                    f
                }
                Err(Error::Io { source, path }) if source.kind() == std::io::ErrorKind::NotFound && !strict => {
                    log::warn!("{}: feature file missing; record rejected", path.display());
                    stats.missing_features += 1;
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        staged.push((rec, words, features));
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::build(staged.iter().map(|(_, w, _)| w)),
    };
    let instances = staged
        .into_iter()
        .map(|(rec, words, f)| resolve_record(&rec, words, f, &vocab, &mut stats))
        .collect();
    Ok((
        DatasetSplit {
            instances,
            vocab,
            d_in: dim.unwrap_or(0),
        },
        stats,
    ))
}
