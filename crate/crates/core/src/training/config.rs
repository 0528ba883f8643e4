//! Training configuration with the two named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rule;

/// Model variant: the full model and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPrior,
    NoAttention,
    PureGan,
    Vae,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoPrior,
        Variant::NoAttention,
        Variant::PureGan,
        Variant::Vae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPrior => "no_prior",
            Variant::NoAttention => "no_attention",
            Variant::PureGan => "pure_gan",
            Variant::Vae => "vae",
        }
    }

    /// Latent codes come from the composition prior rather than `N(0, I)`.
    pub fn uses_prior(self) -> bool {
        matches!(self, Variant::Full | Variant::NoAttention)
    }

    /// The discriminator is conditioned on the histogram through attention.
    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPrior)
    }

    /// Weight actually applied to the cavity loss; the plain GAN drops it.
    pub fn effective_lambda(self, lambda: f64) -> f64 {
        if self == Variant::PureGan {
            0.0
        } else {
            lambda
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::field(
                    "variant",
                    format!("`{s}` is not one of full, no_prior, no_attention, pure_gan, vae"),
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub variant: Variant,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_interval: usize,
    pub rule: Rule,
}

impl TrainConfig {
    /// Full-scale settings: plain minibatch SGD.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 10,
            lr: 1e-5,
            weight_decay: 1.6e-6,
            lambda: 1.0,
            variant: Variant::Full,
            seed: 0,
            checkpoint_interval: 100,
            rule: Rule::Sgd,
        }
    }

    /// Settings sized for a single desktop CPU.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-4,
            rule: Rule::RmsProp,
            checkpoint_interval: 50,
            ..TrainConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::field(
                "preset",
                format!("`{other}` is not one of paper, desk"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be >= 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::field(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::field(
                "lr",
                format!("must be positive, got {}", self.lr),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::field("weight_decay", "must be >= 0"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_differ_where_documented() {
        let (p, d) = (TrainConfig::paper(), TrainConfig::desk());
        assert_eq!((p.epochs, p.batch_size, p.lr), (2000, 10, 1e-5));
        assert_eq!(
            (d.epochs, d.batch_size, d.lr, d.rule),
            (200, 10, 1e-4, Rule::RmsProp)
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("gan".parse::<Variant>().is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        let cfg = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::desk()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("lambda"));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig::desk();
        let back: TrainConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
