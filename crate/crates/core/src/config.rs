//! Run configuration: a TOML file with one table per section, overridable by
//! `section.key=value` assignments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binning::BinningConfig;
use crate::embedding::{TsneConfig, TsneOptions};
use crate::error::{Error, Result};
use crate::eval::{EvalSettings, Representation, DEFAULT_FOLDS};
use crate::fillup::{Background, FillupOptions};
use crate::ingest::{parse_abundance_table_with, AbundanceTable, ParseOptions};
use crate::nn::{Architecture, ConvDim, Head, TrainingConfig};
use crate::synthetic::{generate, SyntheticConfig};

pub const CONFIG_FILE_NAME: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Name written into result rows.
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abundance: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Generate the table from the `synthetic` section instead of reading files.
    pub synthetic: bool,
    pub species_only: bool,
    pub phylogenetic: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: "dataset".into(),
            abundance: None,
            labels: None,
            synthetic: false,
            species_only: true,
            phylogenetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    pub perplexity: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_epochs: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_epoch: usize,
    pub seed: u64,
    pub target: usize,
    pub point_size: usize,
    pub background: Background,
}

impl Default for TsneSection {
    fn default() -> Self {
        let c = TsneConfig::default();
        let o = TsneOptions::default();
        TsneSection {
            perplexity: c.perplexity,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            early_exaggeration: c.early_exaggeration,
            exaggeration_epochs: c.exaggeration_epochs,
            momentum_initial: c.momentum_initial,
            momentum_final: c.momentum_final,
            momentum_switch_epoch: c.momentum_switch_epoch,
            seed: c.seed,
            target: o.target,
            point_size: o.point_size,
            background: o.background,
        }
    }
}

impl TsneSection {
    pub fn config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            early_exaggeration: self.early_exaggeration,
            exaggeration_epochs: self.exaggeration_epochs,
            momentum_initial: self.momentum_initial,
            momentum_final: self.momentum_final,
            momentum_switch_epoch: self.momentum_switch_epoch,
            seed: self.seed,
        }
    }

    pub fn options(&self) -> TsneOptions {
        TsneOptions {
            target: self.target,
            point_size: self.point_size,
            background: self.background,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub arch: Architecture,
    pub head: Head,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_hidden: Option<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            arch: Architecture {
                conv_dim: ConvDim::Conv2d,
                depth: 5,
                width: 20,
            },
            head: Head::TwoNode,
            fc_hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub representation: Representation,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            representation: Representation::FillupAbd,
            folds: DEFAULT_FOLDS,
            repeats: 1,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub binning: BinningConfig,
    pub fillup: FillupOptions,
    pub tsne: TsneSection,
    pub network: NetworkSection,
    pub training: TrainingConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Applies `section.key=value`; the value is read as a TOML literal, or
    /// as a plain string when it is not one.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not section.key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {key:?} is not section.key")))?;
        let mut root =
            toml::Table::try_from(&*self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))?;
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("unknown config section {section:?}")))?;
        table.insert(field.to_string(), parse_value(raw.trim()));
        *self = root
            .try_into()
            .map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))?;
        Ok(())
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CONFIG_FILE_NAME);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            dataset: self.data.name.clone(),
            binning: self.binning.clone(),
            fillup: self.fillup.clone(),
            tsne: self.tsne.config(),
            tsne_render: self.tsne.options(),
            head: self.network.head,
            fc_hidden: self.network.fc_hidden,
            training: self.training.clone(),
            folds: self.eval.folds,
            repeats: self.eval.repeats,
            seed: self.eval.seed,
            jobs: self.eval.jobs,
        }
    }

    /// The table named by the `data` section, sorted phylogenetically unless disabled.
    pub fn load_table(&self) -> Result<AbundanceTable> {
        let table = if self.data.synthetic {
            generate(&self.synthetic)?.table
        } else {
            let abd = self
                .data
                .abundance
                .as_deref()
                .ok_or_else(|| Error::Config("data.abundance is not set".into()))?;
            let labels = self
                .data
                .labels
                .as_deref()
                .ok_or_else(|| Error::Config("data.labels is not set".into()))?;
            parse_abundance_table_with(
                abd,
                labels,
                ParseOptions {
                    species_only: self.data.species_only,
                },
            )?
        };
        Ok(if self.data.phylogenetic {
            table.sort_phylogenetically()
        } else {
            table
        })
    }
}
