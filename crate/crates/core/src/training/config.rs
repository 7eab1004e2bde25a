use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Five-class two-view patches.
    Patch,
    #[default]
    TwoView,
    FourView,
    Segmentation,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Patch => "patch",
            Stage::TwoView => "two-view",
            Stage::FourView => "four-view",
            Stage::Segmentation => "segmentation",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Stage::Segmentation => 2e-4,
            _ => 1e-5,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            Stage::Patch | Stage::TwoView => 8,
            Stage::FourView => 4,
            Stage::Segmentation => 32,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::config(format!("unknown stage {s:?}")))
    }
}

/// Weight of positive examples in the binary losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PosWeight {
    /// `#negatives / #positives` on the training split, per head.
    #[default]
    #[serde(with = "auto")]
    Auto,
    Fixed(f64),
}

mod auto {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"auto\" or a number, got {s:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegLoss {
    Bce,
    /// BCE plus soft Dice.
    #[default]
    BceDice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub stage: Stage,
    /// Defaults per stage when absent.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub pos_weight: PosWeight,
    pub seg_loss: SegLoss,
    pub seed: u64,
    pub augment: bool,
    /// Share of the training set held out for validation.
    pub val_fraction: f64,
    /// Stop as soon as the validation metric reaches this value.
    pub target: Option<f64>,
    pub threshold: f64,
    /// Checkpoint to transfer weights from before training.
    pub init: Option<PathBuf>,
    /// Where to write the retained checkpoint.
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::TwoView,
            lr: None,
            weight_decay: 5e-4,
            batch_size: None,
            max_epochs: 50,
            patience: 10,
            pos_weight: PosWeight::Auto,
            seg_loss: SegLoss::BceDice,
            seed: 0,
            augment: true,
            val_fraction: 0.2,
            target: None,
            threshold: 0.5,
            init: None,
            output: None,
        }
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        TrainConfig {
            stage,
            ..Self::default()
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(self.stage.default_lr())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(self.stage.default_batch_size())
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {lr}")));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight-decay must be finite and non-negative"));
        }
        if self.batch_size() == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch-size and max-epochs must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config(format!("val-fraction {} is not in (0, 1)", self.val_fraction)));
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("pos-weight must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_defaults() {
        assert_eq!(TrainConfig::for_stage(Stage::Segmentation).lr(), 2e-4);
        assert_eq!(TrainConfig::for_stage(Stage::TwoView).lr(), 1e-5);
        assert_eq!(TrainConfig::for_stage(Stage::FourView).batch_size(), 4);
        assert_eq!(TrainConfig::for_stage(Stage::Segmentation).batch_size(), 32);
    }

    #[test]
    fn pos_weight_parses_auto_or_number() {
        let c: TrainConfig = serde_json::from_str(r#"{"pos-weight": "auto"}"#).unwrap();
        assert_eq!(c.pos_weight, PosWeight::Auto);
        let c: TrainConfig = serde_json::from_str(r#"{"pos-weight": 2.5, "stage": "four-view"}"#).unwrap();
        assert_eq!(c.pos_weight, PosWeight::Fixed(2.5));
        assert_eq!(c.stage, Stage::FourView);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"pos-weight": "big"}"#).is_err());
        let back = serde_json::to_value(TrainConfig::default()).unwrap();
        assert_eq!(back["pos-weight"], "auto");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for c in [
            TrainConfig { lr: Some(-1.0), ..Default::default() },
            TrainConfig { batch_size: Some(0), ..Default::default() },
            TrainConfig { val_fraction: 1.0, ..Default::default() },
            TrainConfig { pos_weight: PosWeight::Fixed(f64::NAN), ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        assert!("two-view".parse::<Stage>().is_ok());
        assert!("three-view".parse::<Stage>().is_err());
    }
}
