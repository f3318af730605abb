//! Augmentation, the optimisation loop and the multi-view training regimes.

mod augment;
mod multiview;
mod optim;
mod trainer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{SplitMode, PATCH_SIZE};
use crate::volume::View;

pub use augment::{augment, AugmentConfig, Transform};
pub use multiview::{train_multiview, train_regime, view_patches};
pub use optim::{is_regularized, l2_penalty, Adam, AdamConfig};
pub use trainer::{
    batch_tensors, epoch_order, evaluate_loss, train_model, train_model_with, train_step, EpochRecord, TrainHistory,
};

/// Which views feed which models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewRegime {
    SingleView(View),
    MixedViews,
    PerViewEnsemble,
}

impl Default for ViewRegime {
    fn default() -> Self {
        ViewRegime::PerViewEnsemble
    }
}

impl fmt::Display for ViewRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewRegime::SingleView(v) => write!(f, "single_view({v})"),
            ViewRegime::MixedViews => f.write_str("mixed_views"),
            ViewRegime::PerViewEnsemble => f.write_str("per_view_ensemble"),
        }
    }
}

impl FromStr for ViewRegime {
    type Err = Error;

    /// Accepts `mixed_views`, `per_view_ensemble`, `single_view` (axial),
    /// `single_view(<view>)` and `single_view:<view>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "mixed_views" | "mixed" => return Ok(ViewRegime::MixedViews),
            "per_view_ensemble" | "ensemble" => return Ok(ViewRegime::PerViewEnsemble),
            "single_view" | "baseline" => return Ok(ViewRegime::SingleView(View::Axial)),
            _ => {}
        }
        let inner = s
            .strip_prefix("single_view(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("single_view:"));
        match inner {
            Some(v) => Ok(ViewRegime::SingleView(v.parse().map_err(Error::Config)?)),
            None => Err(Error::Config(format!("unknown view regime '{s}'"))),
        }
    }
}

impl Serialize for ViewRegime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ViewRegime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ViewRegime {
    /// Views a model set trained under this regime contains, in ensemble order.
    pub fn model_views(self) -> Vec<View> {
        match self {
            ViewRegime::SingleView(v) => vec![v],
            ViewRegime::MixedViews => vec![View::Axial],
            ViewRegime::PerViewEnsemble => View::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Constant Adam step size.
    pub learning_rate: f64,
    /// Coefficient of the squared-norm penalty on convolution kernels.
    pub l2_strength: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub view_regime: ViewRegime,
    pub adam: AdamConfig,
    /// Return the weights with the lowest validation loss instead of the last ones.
    pub keep_best: bool,
    pub patch_size: usize,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 300,
            learning_rate: 1e-4,
            l2_strength: 1e-5,
            seed: 0,
            augment: AugmentConfig::default(),
            view_regime: ViewRegime::default(),
            adam: AdamConfig::default(),
            keep_best: false,
            patch_size: PATCH_SIZE,
            train_fraction: 0.8,
            split_mode: SplitMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2_strength.is_finite() && self.l2_strength >= 0.0) {
            return Err(Error::Config(format!("l2_strength must be non-negative, got {}", self.l2_strength)));
        }
        if self.patch_size < 1 {
            return Err(Error::Config("patch_size must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction)));
        }
        if !(self.augment.max_rotation_deg >= 0.0 && self.augment.max_rotation_deg <= 180.0) {
            return Err(Error::Config("max_rotation_deg must lie in [0, 180]".into()));
        }
        Ok(())
    }

    /// Parses TOML, falling back to JSON.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = match toml::from_str(text) {
            Ok(c) => c,
            Err(te) => serde_json::from_str(text).map_err(|je| Error::Serde(format!("not TOML ({te}) nor JSON ({je})")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs), (8, 300));
        assert_eq!((c.learning_rate, c.l2_strength), (1e-4, 1e-5));
        assert_eq!((c.adam.beta1, c.adam.beta2, c.adam.epsilon), (0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }

    #[test]
    fn regime_strings_round_trip() {
        for r in [
            ViewRegime::MixedViews,
            ViewRegime::PerViewEnsemble,
            ViewRegime::SingleView(View::Axial),
            ViewRegime::SingleView(View::Sagittal),
            ViewRegime::SingleView(View::Coronal),
        ] {
            assert_eq!(r.to_string().parse::<ViewRegime>().unwrap(), r);
        }
        assert_eq!("single_view:coronal".parse::<ViewRegime>().unwrap(), ViewRegime::SingleView(View::Coronal));
        assert!("triple".parse::<ViewRegime>().is_err());
        assert_eq!(ViewRegime::PerViewEnsemble.model_views().len(), 3);
    }

    #[test]
    fn toml_and_json_configs() {
        let t = TrainConfig::parse("epochs = 5\nview_regime = \"mixed_views\"\n[augment]\nrotation = false\n").unwrap();
        assert_eq!(t.epochs, 5);
        assert_eq!(t.view_regime, ViewRegime::MixedViews);
        assert!(!t.augment.rotation && t.augment.horizontal_flip);
        let j = TrainConfig::parse(r#"{"batch_size": 2, "view_regime": "single_view(sagittal)"}"#).unwrap();
        assert_eq!(j.batch_size, 2);
        assert_eq!(j.view_regime, ViewRegime::SingleView(View::Sagittal));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("learning_rate = 0.0").is_err());
        assert!(TrainConfig::parse("learning_rate = -1.0").is_err());
        assert!(TrainConfig::parse("nonsense [").is_err());
    }
}
