use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::data::SplitSpec;
use crate::embedding::InfoLayout;
use crate::encoder::EncoderConfig;
use crate::objectives::{Objective, DEFAULT_MASK_RATIO};

pub const CONFIG_VERSION: u32 = 1;

/// Run configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub objective: Objective,
    /// Encoder size: `desk` or `full`.
    pub preset: String,
    /// Informatics fields, comma separated, `-` for none.
    pub layout: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub mask_ratio: f64,
    /// Weight of the masked-token term in the combined objective.
    pub lambda: f64,
    pub split: SplitSpec,
    pub seed: u64,
    /// Early-stopping patience in epochs on validation MAE; 0 disables it.
    pub patience: usize,
    /// Evaluation threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Seed of the synthetic element table used when no table file is given.
    pub element_seed: u64,
    /// Overrides every dropout rate of the preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: CONFIG_VERSION,
            objective: Objective::Mlm,
            preset: "desk".into(),
            layout: "-".into(),
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            warmup_fraction: 0.05,
            mask_ratio: DEFAULT_MASK_RATIO,
            lambda: 1.0,
            split: SplitSpec::KFold(5),
            seed: 0,
            patience: 0,
            workers: 0,
            element_seed: 0,
            dropout: None,
        }
    }
}

/// Finetuning settings per benchmark: batch size, rate, decay, epochs.
const BENCHMARK_FINETUNE: [(&str, usize, f64, f64, usize); 9] = [
    ("jdft2d", 128, 1e-5, 0.001, 50),
    ("phonons", 128, 1e-4, 0.001, 100),
    ("dielectric", 128, 1e-4, 0.001, 100),
    ("gvrh", 128, 1e-4, 0.01, 200),
    ("kvrh", 128, 1e-4, 0.001, 100),
    ("perovskites", 128, 1e-5, 0.01, 50),
    ("mp_gap", 512, 1e-4, 0.0001, 200),
    ("mp_e_form", 128, 1e-4, 0.0001, 200),
    ("hmof", 128, 1e-5, 0.01, 200),
];

impl TrainConfig {
    /// Named settings: `desk-mlm`, `desk-lpp`, `desk-mlm+lpp`, `desk-finetune`,
    /// `full-mlm`, `full-lpp`, `full-mlm+lpp` and `full-<benchmark>` for
    /// the finetuning benchmarks (jdft2d, phonons, dielectric, gvrh, kvrh,
    /// perovskites, mp_gap, mp_e_form, hmof).
    pub fn named(name: &str) -> Option<TrainConfig> {
        let base = TrainConfig::default();
        let pretrain = |preset: &str, objective: Objective, epochs: usize, lr: f64| TrainConfig {
            preset: preset.into(),
            objective,
            epochs,
            lr,
            mask_ratio: if objective.uses_masking() { DEFAULT_MASK_RATIO } else { 0.0 },
            ..TrainConfig::default()
        };
        Some(match name {
            "desk-mlm" => TrainConfig {
                batch_size: 32,
                ..pretrain("desk", Objective::Mlm, 300, 2e-3)
            },
            "desk-lpp" => pretrain("desk", Objective::Lpp, 150, 3e-4),
            "desk-mlm+lpp" => pretrain("desk", Objective::MlmLpp, 150, 1e-3),
            "desk-finetune" => TrainConfig {
                epochs: 200,
                ..base
            },
            "full-mlm" => pretrain("full", Objective::Mlm, 50, 1e-6),
            "full-lpp" => pretrain("full", Objective::Lpp, 150, 1e-6),
            "full-mlm+lpp" => pretrain("full", Objective::MlmLpp, 150, 1e-6),
            other => {
                let bench = other.strip_prefix("full-")?;
                let &(_, batch_size, lr, weight_decay, epochs) = BENCHMARK_FINETUNE.iter().find(|p| p.0 == bench)?;
                let (layout, split) = if bench == "hmof" {
                    (InfoLayout::mof().to_text(), SplitSpec::Ratio(vec![0.7, 0.15, 0.15]))
                } else {
                    ("-".to_string(), SplitSpec::KFold(5))
                };
                TrainConfig {
                    preset: "full".into(),
                    layout,
                    split,
                    batch_size,
                    lr,
                    weight_decay,
                    epochs,
                    ..base
                }
            }
        })
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not {CONFIG_VERSION}", self.version));
        }
        if EncoderConfig::preset(&self.preset, 1, 1).is_none() {
            return bad(format!("unknown preset `{}` (desk, full)", self.preset));
        }
        self.info_layout()?;
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} must lie in [0, 1)", self.warmup_fraction));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} must lie in [0, 1]", self.mask_ratio));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout {p} must lie in [0, 1)"));
            }
        }
        self.split.validate().map_err(|e| TrainingError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn info_layout(&self) -> Result<InfoLayout, TrainingError> {
        InfoLayout::from_text(&self.layout).map_err(TrainingError::Config)
    }

    /// Encoder dimensions for a vocabulary and sequence length.
    pub fn encoder_config(&self, vocab_size: usize, max_len: usize) -> Result<EncoderConfig, TrainingError> {
        let mut c = EncoderConfig::preset(&self.preset, vocab_size, max_len)
            .ok_or_else(|| TrainingError::Config(format!("unknown preset `{}`", self.preset)))?;
        if let Some(p) = self.dropout {
            c.attention_dropout = p;
            c.hidden_dropout = p;
            c.head_dropout = p;
        }
        Ok(c)
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, usize::from)
        } else {
            self.workers
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainingError> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| TrainingError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::named("full-hmof").unwrap();
        c.dropout = Some(0.0);
        let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.split, SplitSpec::Ratio(vec![0.7, 0.15, 0.15]));
        let partial = TrainConfig::from_toml("epochs = 3\nobjective = \"mlm+lpp\"\n").unwrap();
        assert_eq!((partial.epochs, partial.objective), (3, Objective::MlmLpp));
        assert_eq!(partial.batch_size, 64);
    }

    #[test]
    fn presets_and_rejections() {
        let mlm = TrainConfig::named("full-mlm").unwrap();
        assert_eq!((mlm.epochs, mlm.batch_size, mlm.lr, mlm.mask_ratio), (50, 64, 1e-6, 0.25));
        let lpp = TrainConfig::named("full-lpp").unwrap();
        assert_eq!((lpp.epochs, lpp.mask_ratio), (150, 0.0));
        let gap = TrainConfig::named("full-mp_gap").unwrap();
        assert_eq!((gap.batch_size, gap.weight_decay), (512, 0.0001));
        assert!(TrainConfig::named("full-unknown").is_none());
        for name in ["desk-mlm", "desk-lpp", "desk-mlm+lpp", "desk-finetune", "full-mlm+lpp", "full-jdft2d"] {
            TrainConfig::named(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::from_toml("epochz = 3").is_err());
        assert!(TrainConfig::from_toml("version = 2").is_err());
        assert!(TrainConfig::from_toml("preset = \"huge\"").is_err());
        assert!(TrainConfig::from_toml("warmup_fraction = 1.0").is_err());
        assert!(TrainConfig::from_toml("split = \"kfold1\"").is_err());
    }
}
