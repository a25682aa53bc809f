use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{InteractionKind, Normalization};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "ACRM_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder output width (both directions together).
    pub d: usize,
    /// Attention scoring width; `d` when unset.
    pub attention_dim: Option<usize>,
    pub predictor_hidden: usize,
    pub embed_dim: usize,
    pub normalization: Normalization,
    pub interaction: InteractionKind,
    /// Frame-by-word attention; mean pooling of the query when off.
    pub attention: bool,
    pub tied_lstm: bool,
    pub strict_mean: bool,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Arithmetic used for training and scoring.
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            attention_dim: None,
            predictor_hidden: 256,
            embed_dim: 300,
            normalization: Normalization::Tanh,
            interaction: InteractionKind::Mul,
            attention: true,
            tied_lstm: false,
            strict_mean: false,
            lambda: 0.7,
            lr: 0.001,
            batch_size: 64,
            dropout: 0.5,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl ModelConfig {
    pub fn attention_width(&self) -> usize {
        self.attention_dim.unwrap_or(self.d)
    }

    /// Short variant tag: interaction letter then normalization letter.
    pub fn variant(&self) -> String {
        let k = match self.interaction {
            InteractionKind::Mul => "d",
            InteractionKind::Sub => "s",
            InteractionKind::Concat => "c",
        };
        let n = match self.normalization {
            Normalization::Tanh => "t",
            Normalization::Gauss => "g",
        };
        format!("{k}{n}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d must be positive and even, got {}", self.d));
        }
        if self.attention_width() == 0 || self.predictor_hidden == 0 || self.embed_dim == 0 {
            return bad("widths must be positive".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Reads a TOML file; absent keys keep their defaults.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `ACRM_SEED` if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.d, c.predictor_hidden, c.embed_dim, c.batch_size),
            (256, 256, 300, 64)
        );
        assert_eq!((c.lr, c.dropout, c.lambda), (0.001, 0.5, 0.7));
        assert_eq!(c.attention_width(), 256);
        assert_eq!(c.variant(), "dt");
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ModelConfig {
            d: 64,
            normalization: Normalization::Gauss,
            interaction: InteractionKind::Sub,
            ..Default::default()
        };
        let back: ModelConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial: ModelConfig = toml::from_str("lambda = 1.1\ninteraction = \"concat\"").unwrap();
        assert_eq!(partial.lambda, 1.1);
        assert_eq!(partial.interaction, InteractionKind::Concat);
        assert_eq!(partial.d, 256);
        assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            ModelConfig {
                d: 7,
                ..Default::default()
            },
            ModelConfig {
                lambda: -0.1,
                ..Default::default()
            },
            ModelConfig {
                dropout: 1.0,
                ..Default::default()
            },
            ModelConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
