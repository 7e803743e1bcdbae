//! Run configuration: a TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use mtlqa::analysis::{AnalysisConfig, LabelKey, TTestKind, TsneConfig, HISTOGRAM_BINS};
use mtlqa::data::{EncodeOptions, SyntheticConfig};
use mtlqa::model::ModelSpec;
use mtlqa::train::{TargetMode, TrainConfig};
use mtlqa::{Error, Result};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MTLQA_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Six review domains.
    #[default]
    SubjqaLike,
    /// Encyclopedic examples only.
    SquadLike,
    /// Both slices.
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `train.jsonl`, `dev.jsonl`, `test.jsonl`.
    pub dir: Option<PathBuf>,
    pub preset: Preset,
    /// Train/dev/test fractions.
    pub fractions: [f64; 3],
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            preset: Preset::SubjqaLike,
            fractions: [0.8, 0.1, 0.1],
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Single- or multi-task training over `model.tasks`.
    #[default]
    Joint,
    /// Domain stage, subjectivity stage, then QA with auxiliary targets.
    Sequential,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub mode: TrainMode,
    pub targets: TargetMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub variance_target: f64,
    pub test: TTestKind,
    pub bins: usize,
    pub projection: Option<LabelKey>,
    pub tsne: TsneConfig,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            variance_target: 0.95,
            test: TTestKind::Pooled,
            bins: HISTOGRAM_BINS,
            projection: None,
            tsne: TsneConfig::default(),
        }
    }
}

impl AnalysisSection {
    pub fn report_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            variance_target: self.variance_target,
            test: self.test,
            bins: self.bins,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encode: EncodeOptions,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    /// Defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("config", e.to_string()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(CONFIG_ECHO), self.to_toml()?)?;
        Ok(())
    }

    /// Synthetic-generation config implied by the preset.
    pub fn synthetic(&self) -> SyntheticConfig {
        let mut s = self.data.synthetic.clone();
        match self.data.preset {
            Preset::SubjqaLike => s.squad_like = 0,
            Preset::SquadLike => {
                if s.squad_like == 0 {
                    s.squad_like = s.n_per_domain * s.domains.len().max(1);
                }
                s.domains.clear();
            }
            Preset::Combined => {
                if s.squad_like == 0 {
                    s.squad_like = s.n_per_domain * s.domains.len().max(1);
                }
            }
        }
        s
    }

    pub fn validate_data(&self) -> Result<()> {
        let f = self.data.fractions;
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err("data.fractions", "must be three numbers in [0, 1] summing to 1"));
        }
        let s = &self.data.synthetic;
        for (field, v) in [
            ("data.synthetic.answerable_rate", s.answerable_rate),
            ("data.synthetic.subjective_rate", s.subjective_rate),
            ("data.synthetic.squad_answerable_rate", s.squad_answerable_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(field, "must lie in [0, 1]"));
            }
        }
        if s.min_sentences == 0 || s.min_sentences > s.max_sentences {
            return Err(config_err("data.synthetic.min_sentences", "need 1 ≤ min_sentences ≤ max_sentences"));
        }
        Ok(())
    }

    pub fn validate_model(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.encode.max_len > self.model.encoder.max_seq_len {
            return Err(config_err(
                "encode.max_len",
                format!(
                    "{} exceeds model.encoder.max_seq_len {}",
                    self.encode.max_len, self.model.encoder.max_seq_len
                ),
            ));
        }
        Ok(())
    }

    pub fn validate_analysis(&self) -> Result<()> {
        let a = &self.analysis;
        if !(a.variance_target > 0.0 && a.variance_target <= 1.0) {
            return Err(config_err("analysis.variance_target", "must lie in (0, 1]"));
        }
        if a.bins == 0 {
            return Err(config_err("analysis.bins", "must be at least 1"));
        }
        if !(a.tsne.perplexity > 0.0) || a.tsne.iters == 0 {
            return Err(config_err("analysis.tsne", "perplexity and iters must be positive"));
        }
        Ok(())
    }
}

pub fn config_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses a unit enum from its serialized name.
pub fn parse_enum<T: DeserializeOwned>(field: &str, value: &str) -> Result<T> {
    T::deserialize(value.trim().into_deserializer())
        .map_err(|e: serde::de::value::Error| config_err(field, format!("`{value}`: {e}")))
}

/// `$MTLQA_OUT` or `runs`.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from)
}
