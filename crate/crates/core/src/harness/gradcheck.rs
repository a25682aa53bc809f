//! Finite-difference check of the full training loss on small random
//! instances, for every architecture variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{FeatureSequence, Vocabulary};
use crate::encoders::EmbeddingTable;
use crate::error::Result;
use crate::interaction::{InteractionKind, Normalization};
use crate::model::{Acrm, Batch};
use crate::numerics::{grad_check, ParamSet, Tensor, DEFAULT_STEP};

use super::config::ModelConfig;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const MAX_FRAMES: usize = 6;
pub const MAX_WORDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantCheck {
    pub variant: String,
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

impl VariantCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Small-width configuration used for the checks.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        attention_dim: None,
        predictor_hidden: 8,
        embed_dim: 5,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// The four interaction/normalization variants, mean pooling instead of
/// attention, and a shared predictor LSTM.
pub fn variants() -> Vec<(String, ModelConfig)> {
    let base = small_config();
    let mut out = Vec::new();
    for (kind, k) in [(InteractionKind::Mul, "d"), (InteractionKind::Sub, "s")] {
        for (norm, n) in [(Normalization::Tanh, "t"), (Normalization::Gauss, "g")] {
            out.push((
                format!("{k}{n}"),
                ModelConfig {
                    interaction: kind,
                    normalization: norm,
                    ..base.clone()
                },
            ));
        }
    }
    out.push((
        "mean-pool".into(),
        ModelConfig {
            attention: false,
            ..base.clone()
        },
    ));
    out.push((
        "tied-lstm".into(),
        ModelConfig {
            tied_lstm: true,
            ..base
        },
    ));
    out
}

const D_IN: usize = 4;
const VOCAB: usize = 7;

/// Checks `trials` random instances (T <= 6, m <= 5) at random parameter
/// points; the reported error is the maximum over all of them.
pub fn check_variant(name: &str, cfg: &ModelConfig, trials: usize, seed: u64) -> Result<VariantCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..VOCAB).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build([&words]);
    let mut out = VariantCheck {
        variant: name.to_string(),
        trials,
        coordinates: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for _ in 0..trials {
        let cfg = ModelConfig {
            seed: rng.gen(),
            ..cfg.clone()
        };
        let model = Acrm::new(&cfg, D_IN)?;
        let table = EmbeddingTable::new(
            vocab.clone(),
            cfg.embed_dim,
            (0..vocab.len() * cfg.embed_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )?;
        let frames = rng.gen_range(1..=MAX_FRAMES);
        let m = rng.gen_range(1..=MAX_WORDS);
        let feats = FeatureSequence::new(
            frames,
            D_IN,
            (0..frames * D_IN).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )?;
        let tokens: Vec<usize> = (0..m).map(|_| rng.gen_range(0..vocab.len())).collect();
        let s = rng.gen_range(0..frames);
        let e = rng.gen_range(s..frames);
        let batch = Batch::<f64>::new(&[&feats], &[&tokens], &table)?;

        let mut point: ParamSet<f64> = model.init_params();
        for (_, t) in point.iter_mut() {
            let jitter = Tensor::<f64>::uniform(t.shape(), 0.1, &mut rng);
            for (x, j) in t.data_mut().iter_mut().zip(jitter.data()) {
                *x += j;
            }
        }
        let report = grad_check(
            |_, bound| -> Result<_> {
                let fwd = model.forward(bound, &batch, None)?;
                Ok(model.loss(&fwd, &batch.frames.lens, &[(s, e)])?.total)
            },
            &point,
            DEFAULT_STEP,
        )?;
        out.coordinates += report.coordinates;
        if out.max_rel_error.is_nan() {
            continue;
        }
        if report.max_rel_error.is_nan() || report.max_rel_error > out.max_rel_error {
            out.max_rel_error = report.max_rel_error;
            out.worst = report.worst;
        }
    }
    Ok(out)
}

/// Runs [`check_variant`] for every entry of [`variants`].
pub fn check_all(trials: usize, seed: u64) -> Result<Vec<VariantCheck>> {
    variants()
        .iter()
        .enumerate()
        .map(|(i, (name, cfg))| check_variant(name, cfg, trials, seed.wrapping_add(i as u64)))
        .collect()
}
