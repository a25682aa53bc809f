//! The full network: encoders, attention, interaction and heads, wired
//! together over padded batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{mean_pool_query, Attention};
use crate::data::FeatureSequence;
use crate::encoders::{encode_query, encode_video, BiLstm, Dropout, EmbeddingTable, Padded};
use crate::error::{Error, Result};
use crate::harness::ModelConfig;
use crate::interaction::{interact, Projection};
use crate::numerics::{Bound, ParamSet, Scalar, Tensor, Var};
use crate::prediction::{boundary_loss, internal_loss, total_loss, Logits, Predictor};

/// Padded inputs for a batch of video/query pairs.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub frames: Padded<S>,
    pub words: Padded<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn new(features: &[&FeatureSequence], tokens: &[&[usize]], table: &EmbeddingTable) -> Result<Self> {
        if features.len() != tokens.len() {
            return Err(Error::Data("batch needs one query per video".into()));
        }
        let seqs = features
            .iter()
            .map(|f| Tensor::<S>::from_f64(&[f.frames(), f.dim()], f.data()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let queries = tokens
            .iter()
            .map(|t| table.lookup::<S>(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames: Padded::pack(&seqs.iter().collect::<Vec<_>>())?,
            words: Padded::pack(&queries.iter().collect::<Vec<_>>())?,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Forward<'g, S> {
    /// `[B, T]` each.
    pub logits: Logits<'g, S>,
    /// `[T*B, m]` frame-by-word weights when attention is on.
    pub attention: Option<Var<'g, S>>,
    /// `[T*B, c]` cross features.
    pub cross: Var<'g, S>,
}

pub struct LossParts<'g, S> {
    pub boundary: Var<'g, S>,
    pub internal: Var<'g, S>,
    pub total: Var<'g, S>,
    /// Single-frame spans that took the fallback divisor.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Acrm {
    pub config: ModelConfig,
    pub d_in: usize,
    pub video_lstm: BiLstm,
    pub query_lstm: BiLstm,
    pub attention: Option<Attention>,
    pub video_proj: Projection,
    pub query_proj: Projection,
    pub predictor: Predictor,
}

impl Acrm {
    pub fn new(config: &ModelConfig, d_in: usize) -> Result<Self> {
        config.validate()?;
        if d_in == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let d = config.d;
        let video_lstm = BiLstm::new("video.lstm", d_in, d / 2);
        let query_lstm = BiLstm::new("query.lstm", config.embed_dim, d / 2);
        debug_assert_eq!(video_lstm.output_dim(), query_lstm.output_dim());
        Ok(Self {
            config: config.clone(),
            d_in,
            video_lstm,
            query_lstm,
            attention: config
                .attention
                .then(|| Attention::new("att", d, config.attention_width())),
            video_proj: Projection::new("proj.video", d),
            query_proj: Projection::new("proj.query", d),
            predictor: Predictor::new(
                config.interaction.output_dim(d),
                d,
                config.predictor_hidden,
                config.tied_lstm,
            ),
        })
    }

    /// Fresh parameters drawn from `config.seed`.
    pub fn init_params<S: Scalar>(&self) -> ParamSet<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut p = ParamSet::new();
        self.video_lstm.init(&mut p, &mut rng);
        self.query_lstm.init(&mut p, &mut rng);
        if let Some(a) = &self.attention {
            a.init(&mut p, &mut rng);
        }
        self.video_proj.init(&mut p, &mut rng);
        self.query_proj.init(&mut p, &mut rng);
        self.predictor.init(&mut p, &mut rng);
        p
    }

    /// Runs the network; `dropout` is `None` in evaluation mode.
    pub fn forward<'g, S: Scalar>(
        &self,
        bound: &Bound<'g, S>,
        batch: &Batch<S>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Forward<'g, S>> {
        if batch.frames.rows.cols() != self.d_in {
            return Err(Error::Data(format!(
                "features have dimension {}, model expects {}",
                batch.frames.rows.cols(),
                self.d_in
            )));
        }
        let hv = encode_video(bound, &self.video_lstm, &batch.frames, dropout.as_deref_mut())?;
        let hq = encode_query(bound, &self.query_lstm, &batch.words, dropout.as_deref_mut())?;
        let rows = hv.shape()[0];
        let (summary, weights) = match &self.attention {
            Some(att) => {
                let a = att.attend(bound, hv, hq, &batch.words.lens)?;
                (a.summary, Some(a.weights))
            }
            None => (mean_pool_query(rows, hq, &batch.words.lens)?, None),
        };
        let norm = self.config.normalization;
        let v_hat = self.video_proj.apply(bound, hv, norm)?;
        let q_hat = self.query_proj.apply(bound, summary, norm)?;
        let cross = interact(v_hat, q_hat, self.config.interaction)?;
        let logits = self.predictor.forward(bound, cross, &batch.frames.lens, dropout)?;
        Ok(Forward {
            logits,
            attention: weights,
            cross,
        })
    }

    pub fn loss<'g, S: Scalar>(
        &self,
        out: &Forward<'g, S>,
        frame_lens: &[usize],
        spans: &[(usize, usize)],
    ) -> Result<LossParts<'g, S>> {
        let boundary = boundary_loss(out.logits.start, out.logits.end, frame_lens, spans)?;
        let (internal, degenerate) = internal_loss(out.logits.internal, frame_lens, spans, self.config.strict_mean)?;
        let total = total_loss(boundary, internal, self.config.lambda)?;
        Ok(LossParts {
            boundary,
            internal,
            total,
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;
    use crate::interaction::{InteractionKind, Normalization};
    use crate::numerics::{grad_check, Graph, DEFAULT_STEP};
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 4,
            predictor_hidden: 3,
            embed_dim: 3,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn table(rng: &mut ChaCha8Rng) -> EmbeddingTable {
        let vocab = Vocabulary::from(vec!["<unk>".to_string(), "a".into(), "b".into(), "c".into()]);
        let rows = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingTable::new(vocab, 3, rows).unwrap()
    }

    fn features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn concat_widens_only_the_predictor_input() {
        let cfg = ModelConfig {
            interaction: InteractionKind::Concat,
            ..tiny_config()
        };
        let m = Acrm::new(&cfg, 2).unwrap();
        let p = m.init_params::<f64>();
        assert_eq!(p.get("pred.start.lstm.fwd.w_x").unwrap().shape(), &[8, 8]);
        assert_eq!(p.get("proj.video.w").unwrap().shape(), &[4, 4]);
    }

    #[test]
    fn mean_pool_variant_has_no_attention_parameters() {
        let cfg = ModelConfig {
            attention: false,
            ..tiny_config()
        };
        let p = Acrm::new(&cfg, 2).unwrap().init_params::<f64>();
        assert!(p.names().all(|n| !n.starts_with("att.")));
    }

    #[test]
    fn padded_batch_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tbl = table(&mut rng);
        let f = [features(&mut rng, 4, 2), features(&mut rng, 2, 2)];
        let q: [&[usize]; 2] = [&[1, 2, 3], &[2]];
        for (norm, kind) in [
            (Normalization::Tanh, InteractionKind::Mul),
            (Normalization::Gauss, InteractionKind::Sub),
        ] {
            let cfg = ModelConfig {
                normalization: norm,
                interaction: kind,
                ..tiny_config()
            };
            let model = Acrm::new(&cfg, 2).unwrap();
            let batch = Batch::<f64>::new(&[&f[0], &f[1]], &q, &tbl).unwrap();
            let report = grad_check(
                |_g, b| -> Result<_> {
                    let out = model.forward(b, &batch, None)?;
                    Ok(model.loss(&out, &batch.frames.lens, &[(1, 3), (0, 1)])?.total)
                },
                &model.init_params(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(report.passed(1e-4), "{report:?}");
        }
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tbl = table(&mut rng);
        let model = Acrm::new(&tiny_config(), 3).unwrap();
        let f = features(&mut rng, 3, 2);
        let batch = Batch::<f64>::new(&[&f], &[&[1]], &tbl).unwrap();
        let g = Graph::new();
        let p = model.init_params::<f64>();
        assert!(model.forward(&p.bind(&g), &batch, None).is_err());
    }
}
