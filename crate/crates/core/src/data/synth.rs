//! Synthetic moment-retrieval data with a planted, query-dependent signal.
//!
//! Each signal word owns a random unit direction in feature space. An
//! instance picks a moment `[a, b]` and a query containing exactly one signal
//! word; frames inside the moment get `signal * direction` added on top of
//! Gaussian noise. Everything derives from `seed`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotations::{write_annotations, AnnotationRecord};
use super::features::{feature_path, write_features, FeatureSequence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Total instances; the last `eval_instances` form the eval split.
    pub num_instances: usize,
    pub eval_instances: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d_in: usize,
    pub signal_words: usize,
    pub filler_words: usize,
    pub moment_min: usize,
    pub moment_max: usize,
    pub query_min: usize,
    pub query_max: usize,
    pub signal: f64,
    pub noise_std: f64,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_instances: 600,
            eval_instances: 100,
            t_min: 30,
            t_max: 50,
            d_in: 16,
            signal_words: 8,
            filler_words: 40,
            moment_min: 4,
            moment_max: 12,
            query_min: 3,
            query_max: 8,
            signal: 2.0,
            noise_std: 1.0,
            embed_dim: 300,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("need 1 <= t_min <= t_max");
        }
        if self.moment_min == 0 || self.moment_min > self.moment_max || self.moment_min > self.t_min {
            return bad("need 1 <= moment_min <= min(moment_max, t_min)");
        }
        if self.query_min == 0 || self.query_min > self.query_max {
            return bad("need 1 <= query_min <= query_max");
        }
        if self.d_in == 0 || self.embed_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.signal_words == 0 || (self.query_max > 1 && self.filler_words == 0) {
            return bad("need at least one signal word and one filler word");
        }
        if self.eval_instances > self.num_instances {
            return bad("eval_instances exceeds num_instances");
        }
        if !(self.signal >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("signal and noise_std must be non-negative");
        }
        Ok(())
    }
}

/// Generated annotations, features and word vectors, ready to be written.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub train: Vec<AnnotationRecord>,
    pub eval: Vec<AnnotationRecord>,
    pub features: Vec<(String, FeatureSequence)>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    /// Signal word of every instance, in generation order.
    pub signal_of: Vec<String>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let signal_words: Vec<String> = (0..cfg.signal_words).map(|i| format!("sig{i:03}")).collect();
    let filler_words: Vec<String> = (0..cfg.filler_words).map(|i| format!("w{i:03}")).collect();
    let directions: Vec<Vec<f64>> = signal_words.iter().map(|_| unit_vector(&mut rng, cfg.d_in)).collect();
    let emb_scale = Normal::new(0.0, 0.5).expect("valid normal");
    let embeddings = signal_words
        .iter()
        .chain(&filler_words)
        .map(|w| {
            (
                w.clone(),
                (0..cfg.embed_dim).map(|_| emb_scale.sample(&mut rng)).collect(),
            )
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::with_capacity(cfg.num_instances);
    let mut features = Vec::with_capacity(cfg.num_instances);
    let mut signal_of = Vec::with_capacity(cfg.num_instances);
    for i in 0..cfg.num_instances {
        let frames = rng.gen_range(cfg.t_min..=cfg.t_max);
        let len = rng.gen_range(cfg.moment_min..=cfg.moment_max.min(frames));
        let start = rng.gen_range(0..=frames - len);
        let end = start + len - 1;

        let qlen = rng.gen_range(cfg.query_min..=cfg.query_max);
        let which = rng.gen_range(0..cfg.signal_words);
        let slot = rng.gen_range(0..qlen);
        let words: Vec<&str> = (0..qlen)
            .map(|k| {
                if k == slot {
                    signal_words[which].as_str()
                } else {
                    filler_words.choose(&mut rng).expect("filler words exist").as_str()
                }
            })
            .collect();

        let dir = &directions[which];
        let mut data = Vec::with_capacity(frames * cfg.d_in);
        for t in 0..frames {
            let boost = if (start..=end).contains(&t) { cfg.signal } else { 0.0 };
            for &u in dir {
                let x = noise.sample(&mut rng) + boost * u;
                // Stored as f32 on disk; keep the in-memory copy identical.
                data.push(x as f32 as f64);
            }
        }
        let video = format!("synth{}_{i:05}", cfg.seed);
        features.push((video.clone(), FeatureSequence::new(frames, cfg.d_in, data)?));
        // One second per frame; times sit at frame midpoints.
        records.push(AnnotationRecord {
            video,
            duration: frames as f64,
            start: start as f64 + 0.5,
            end: end as f64 + 0.5,
            query: words.join(" "),
        });
        signal_of.push(signal_words[which].clone());
    }
    let eval = records.split_off(cfg.num_instances - cfg.eval_instances);
    Ok(SynthDataset {
        config: cfg.clone(),
        train: records,
        eval,
        features,
        embeddings,
        signal_of,
    })
}

impl SynthDataset {
    /// Writes `train.jsonl`, `eval.jsonl`, `embeddings.txt`,
    /// `synth_config.json` and `features/<video>.feat` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for (video, seq) in &self.features {
            write_features(&feature_path(&feat_dir, video), seq)?;
        }
        write_annotations(&dir.join("train.jsonl"), &self.train)?;
        write_annotations(&dir.join("eval.jsonl"), &self.eval)?;

        let emb_path = dir.join("embeddings.txt");
        let file = File::create(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
        let mut w = BufWriter::new(file);
        for (word, vec) in &self.embeddings {
            let mut line = word.clone();
            for v in vec {
                line.push(' ');
                line.push_str(&format!("{v:?}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(&emb_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&emb_path, e))?;

        let cfg_path = dir.join("synth_config.json");
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_instances: 3,
            eval_instances: 1,
            t_min: 20,
            t_max: 20,
            d_in: 8,
            embed_dim: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shape_contract() {
        let ds = generate_synthetic(&small()).unwrap();
        assert_eq!(ds.train.len() + ds.eval.len(), 3);
        for (_, f) in &ds.features {
            assert_eq!((f.frames(), f.dim()), (20, 8));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small()).unwrap().write(a.path()).unwrap();
        generate_synthetic(&small()).unwrap().write(b.path()).unwrap();
        for name in ["train.jsonl", "eval.jsonl", "embeddings.txt"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
        let fa = feature_path(&a.path().join("features"), "synth7_00001");
        let fb = feature_path(&b.path().join("features"), "synth7_00001");
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
    }

    #[test]
    fn moment_frames_carry_the_signal_direction() {
        let cfg = SynthConfig {
            num_instances: 40,
            eval_instances: 0,
            noise_std: 0.0,
            ..small()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for (rec, (_, f)) in ds.train.iter().zip(&ds.features) {
            let (a, b) = (rec.start.floor() as usize, rec.end.floor() as usize);
            for t in 0..f.frames() {
                let norm = f.frame(t).iter().map(|x| x * x).sum::<f64>().sqrt();
                let expected = if (a..=b).contains(&t) { 2.0 } else { 0.0 };
                assert!((norm - expected).abs() < 1e-5, "t={t} norm={norm}");
            }
            assert_eq!(rec.query.split(' ').filter(|w| w.starts_with("sig")).count(), 1);
        }
    }

    #[test]
    fn rejects_moments_longer_than_videos() {
        let cfg = SynthConfig {
            moment_min: 25,
            moment_max: 30,
            ..small()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
