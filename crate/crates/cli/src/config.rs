use std::path::{Path, PathBuf};

use monde::data::{Generator, Split};
use monde::eval::QuadBox;
use monde::models::{Family, ModelSpec};
use monde::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; dataset, split, initialisation and batch order derive from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub generator: Option<GeneratorBlock>,
    #[serde(default)]
    pub csv: Option<CsvBlock>,
    /// Train, validation and test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBlock {
    #[serde(flatten)]
    pub generator: Generator,
    pub n: usize,
    /// Defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvBlock {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub has_header: bool,
    /// Response columns (0-based).
    pub responses: Vec<usize>,
    /// Covariate columns; defaults to every non-response column.
    #[serde(default)]
    pub covariates: Option<Vec<usize>>,
    /// Treat columns as prices: convert to log losses and add lagged covariates.
    #[serde(default)]
    pub prices: bool,
    #[serde(default = "default_lag")]
    pub lag: usize,
}

fn default_lag() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    TestLl,
    TailClassify,
    TailDep,
    Mi,
    PairwiseLl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Split the metrics are computed on.
    pub split: Split,
    /// Tail quantile levels for classification.
    pub q: Vec<f64>,
    /// Defaults to 99 points on [0.005, 0.995].
    pub u_grid: Option<Vec<f64>>,
    /// Response pairs for tail dependence, mutual information and pairwise
    /// likelihoods; defaults to all pairs.
    pub pairs: Option<Vec<[usize; 2]>>,
    /// Covariate row on the original scale for model-based curves;
    /// defaults to the training mean.
    pub condition: Option<Vec<f64>>,
    pub quad_n: usize,
    /// Quadrature box on the standardised scale; defaults to model quantiles.
    pub quad_box: Option<QuadBox>,
    /// Label permutations for the AUC null distribution.
    pub permutations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::TestLl],
            split: Split::Test,
            q: vec![0.95],
            u_grid: None,
            pairs: None,
            condition: None,
            quad_n: 256,
            quad_box: None,
            permutations: 200,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, reporting the offending field path on failure.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| CliError::config("<root>", e.message()))?;
        if let Some(family) = value.get("model").and_then(|m| m.get("family")) {
            let name = family.as_str().unwrap_or_default();
            if Family::parse(name).is_none() {
                return Err(CliError::UnknownFamily {
                    field: "model.family".into(),
                    value: family.as_str().map_or_else(|| family.to_string(), str::to_string),
                });
            }
        }
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(value).map_err(|e| CliError::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::config("<root>", e.to_string()))?;
        let mut cfg = Self::from_toml(text)?;
        if let Some(csv) = &mut cfg.dataset.csv {
            if csv.path.is_relative() {
                if let Some(dir) = path.parent() {
                    csv.path = dir.join(&csv.path);
                }
            }
        }
        Ok((cfg, bytes))
    }

    fn validate(&self) -> CliResult<()> {
        match (&self.dataset.generator, &self.dataset.csv) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(CliError::config("dataset", "exactly one of `generator` or `csv` is required")),
        }
        if matches!(self.model, ModelSpec::DiagonalGaussian) {
            return Err(CliError::UnknownFamily {
                field: "model.family".into(),
                value: "diagonal-gaussian".into(),
            });
        }
        self.training
            .validate()
            .map_err(|e| CliError::config("training", e.to_string()))?;
        if self.eval.q.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(CliError::config("eval.q", "levels must lie in (0, 1)"));
        }
        if self.eval.quad_n < 2 {
            return Err(CliError::config("eval.quad_n", "needs at least 2 nodes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset.generator]
kind = "sin-normal"
n = 200

[model]
family = "umonde"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.dataset.split, [0.6, 0.2, 0.2]);
        assert_eq!(cfg.model, ModelSpec::default_for(Family::Umonde));
        assert_eq!(cfg.training, TrainConfig::default());
        assert_eq!(cfg.eval.metrics, vec![Metric::TestLl]);
    }

    #[test]
    fn unknown_family_names_the_field() {
        let text = MINIMAL.replace("umonde", "rnade");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(&err, CliError::UnknownFamily { field, value } if field == "model.family" && value == "rnade"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let text = format!("{MINIMAL}\n[training]\nbatch_size = \"big\"\n");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            CliError::Config { path, .. } => assert_eq!(path, "training.batch_size"),
            e => panic!("{e}"),
        }
        let text = format!("{MINIMAL}\n[eval]\nmetricz = []\n");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            CliError::Config { path, message } => assert!(path == "eval.metricz" && message.contains("unknown field"), "{path}: {message}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn dataset_source_must_be_unique() {
        let text = format!("{MINIMAL}\n[dataset.csv]\npath = \"x.csv\"\nresponses = [0]\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Config { .. })));
        let text = "[dataset]\nsplit = [0.5, 0.25, 0.25]\n[model]\nfamily = \"pumonde\"\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Config { .. })));
    }
}
