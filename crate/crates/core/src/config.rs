//! Pipeline and per-model configuration.
//!
//! The primary file is `config.yml`. It is generated with [`gen_config`],
//! loaded with [`load_config`], and written byte-stably (fixed key order,
//! lowercase booleans) so identical inputs produce identical files. Loading
//! is strict: unknown keys are errors, every invariant is checked, and every
//! error names the offending field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::interpolate::GridSpec;

/// The learners the platform knows how to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Nn,
    Forest,
    Gradboost,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::Nn, ModelId::Forest, ModelId::Gradboost];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Nn => "nn",
            ModelId::Forest => "forest",
            ModelId::Gradboost => "gradboost",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(ModelId::Nn),
            "forest" => Ok(ModelId::Forest),
            "gradboost" => Ok(ModelId::Gradboost),
            other => Err(Error::Config(format!(
                "unknown model identifier '{}'",
                other
            ))),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The primary pipeline configuration (`config.yml`).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub csv_path: PathBuf,
    pub matrix_root: Option<PathBuf>,
    pub normalize: bool,
    pub transform: bool,
    pub impute: bool,
    pub imputation_models: PathBuf,
    pub mid_process_data: PathBuf,
    pub training_data: PathBuf,
    pub training_output: PathBuf,
    pub two_stage: bool,
    pub models: Vec<ModelId>,
    pub seed: u64,
    pub neighbor_count: usize,
    pub idw_power: f64,
    pub grid: Option<GridSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            csv_path: "input_data/data.csv".into(),
            matrix_root: None,
            normalize: true,
            transform: true,
            impute: true,
            imputation_models: "imputation_models".into(),
            mid_process_data: "mid_process_data".into(),
            training_data: "mid_process_data/prepped.csv".into(),
            training_output: "training_output".into(),
            two_stage: false,
            models: vec![ModelId::Nn, ModelId::Forest, ModelId::Gradboost],
            seed: 42,
            neighbor_count: 5,
            idw_power: 2.0,
            grid: None,
        }
    }
}

fn check_relative(field: &str, p: &Path) -> Result<()> {
    if p.as_os_str().is_empty() {
        return Err(Error::Config(format!("{}: path is empty", field)));
    }
    if p.is_absolute() {
        return Err(Error::Config(format!(
            "{}: '{}' is absolute; all paths must be relative",
            field,
            p.display()
        )));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check_relative("csv_path", &self.csv_path)?;
        if let Some(root) = &self.matrix_root {
            check_relative("matrix_root", root)?;
        }
        check_relative("imputation_models", &self.imputation_models)?;
        check_relative("mid_process_data", &self.mid_process_data)?;
        check_relative("training_data", &self.training_data)?;
        check_relative("training_output", &self.training_output)?;
        if self.models.is_empty() {
            return Err(Error::Config("models: list is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if !seen.insert(*m) {
                return Err(Error::Config(format!("models: duplicate entry '{}'", m)));
            }
        }
        if self.neighbor_count < 1 {
            return Err(Error::Config("neighbor_count: must be >= 1".into()));
        }
        if !(self.idw_power > 0.0) || !self.idw_power.is_finite() {
            return Err(Error::Config("idw_power: must be a positive real".into()));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    /// Render `config.yml` content. Field order is fixed, booleans lowercase,
    /// optional fields omitted when absent, so output bytes are stable.
    pub fn to_yaml_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("csv_path: {}\n", self.csv_path.display()));
        if let Some(root) = &self.matrix_root {
            s.push_str(&format!("matrix_root: {}\n", root.display()));
        }
        s.push_str(&format!("normalize: {}\n", self.normalize));
        s.push_str(&format!("transform: {}\n", self.transform));
        s.push_str(&format!("impute: {}\n", self.impute));
        s.push_str(&format!(
            "imputation_models: {}\n",
            self.imputation_models.display()
        ));
        s.push_str(&format!(
            "mid_process_data: {}\n",
            self.mid_process_data.display()
        ));
        s.push_str(&format!(
            "training_data: {}\n",
            self.training_data.display()
        ));
        s.push_str(&format!(
            "training_output: {}\n",
            self.training_output.display()
        ));
        s.push_str(&format!("two_stage: {}\n", self.two_stage));
        s.push_str("models:\n");
        for m in &self.models {
            s.push_str(&format!("- {}\n", m));
        }
        s.push_str(&format!("seed: {}\n", self.seed));
        s.push_str(&format!("neighbor_count: {}\n", self.neighbor_count));
        s.push_str(&format!("idw_power: {}\n", self.idw_power));
        if let Some(g) = &self.grid {
            s.push_str("grid:\n");
            s.push_str(&format!("  origin_lon: {}\n", g.origin_lon));
            s.push_str(&format!("  origin_lat: {}\n", g.origin_lat));
            s.push_str(&format!("  cell_size: {}\n", g.cell_size));
            s.push_str(&format!("  n_x: {}\n", g.n_x));
            s.push_str(&format!("  n_y: {}\n", g.n_y));
        }
        s
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.yml");
        std::fs::write(&path, self.to_yaml_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Apply a string-typed override to a named field.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "csv_path" => self.csv_path = value.into(),
            "matrix_root" => self.matrix_root = Some(value.into()),
            "normalize" => self.normalize = parse_bool_str(key, value)?,
            "transform" => self.transform = parse_bool_str(key, value)?,
            "impute" => self.impute = parse_bool_str(key, value)?,
            "imputation_models" => self.imputation_models = value.into(),
            "mid_process_data" => self.mid_process_data = value.into(),
            "training_data" => self.training_data = value.into(),
            "training_output" => self.training_output = value.into(),
            "two_stage" => self.two_stage = parse_bool_str(key, value)?,
            "models" => {
                self.models = value
                    .split(',')
                    .map(|m| ModelId::parse(m.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "seed" => {
                self.seed = value.parse().map_err(|_| {
                    Error::Config(format!(
                        "seed: '{}' is not a 64-bit unsigned integer",
                        value
                    ))
                })?;
            }
            "neighbor_count" => {
                self.neighbor_count = value.parse().map_err(|_| {
                    Error::Config(format!(
                        "neighbor_count: '{}' is not a positive integer",
                        value
                    ))
                })?;
            }
            "idw_power" => {
                self.idw_power = value.parse().map_err(|_| {
                    Error::Config(format!("idw_power: '{}' is not a number", value))
                })?;
            }
            other => return Err(Error::Config(format!("unknown override key '{}'", other))),
        }
        Ok(())
    }
}

fn parse_bool_str(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "TRUE" | "True" => Ok(true),
        "false" | "FALSE" | "False" => Ok(false),
        other => Err(Error::Config(format!(
            "{}: '{}' is not a boolean",
            field, other
        ))),
    }
}

/// Generate `config.yml` in `dir` from defaults plus overrides.
pub fn gen_config(overrides: &[(String, String)], dir: &Path) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    for (key, value) in overrides {
        config.set_field(key, value)?;
    }
    config.validate()?;
    config.write_to(dir)?;
    Ok(config)
}

// --- loading ---------------------------------------------------------------

/// Strip the `...` elision lines documentation-style configs sometimes carry;
/// they are not YAML content.
fn strip_elisions(text: &str) -> String {
    text.lines()
        .filter(|l| l.trim() != "...")
        .collect::<Vec<_>>()
        .join("\n")
}

fn yaml_mapping(path: &Path, text: &str) -> Result<serde_yaml::Mapping> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| Error::Yaml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match value {
        serde_yaml::Value::Mapping(m) => Ok(m),
        _ => Err(Error::Yaml {
            path: path.to_path_buf(),
            message: "top level is not a mapping".into(),
        }),
    }
}

fn key_string(path: &Path, key: &serde_yaml::Value) -> Result<String> {
    key.as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Yaml {
            path: path.to_path_buf(),
            message: "non-string key".into(),
        })
}

fn value_bool(field: &str, v: &serde_yaml::Value) -> Result<bool> {
    match v {
        serde_yaml::Value::Bool(b) => Ok(*b),
        serde_yaml::Value::String(s) => parse_bool_str(field, s),
        other => Err(Error::Config(format!(
            "{}: expected a boolean, got {:?}",
            field, other
        ))),
    }
}

fn value_string(field: &str, v: &serde_yaml::Value) -> Result<String> {
    match v {
        serde_yaml::Value::String(s) => Ok(s.clone()),
        serde_yaml::Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Config(format!(
            "{}: expected a string, got {:?}",
            field, other
        ))),
    }
}

fn value_f64(field: &str, v: &serde_yaml::Value) -> Result<f64> {
    match v {
        serde_yaml::Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| Error::Config(format!("{}: not a number", field))),
        other => Err(Error::Config(format!(
            "{}: expected a number, got {:?}",
            field, other
        ))),
    }
}

fn value_u64(field: &str, v: &serde_yaml::Value) -> Result<u64> {
    match v {
        serde_yaml::Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| Error::Config(format!("{}: not an unsigned integer", field))),
        other => Err(Error::Config(format!(
            "{}: expected an integer, got {:?}",
            field, other
        ))),
    }
}

fn value_usize(field: &str, v: &serde_yaml::Value) -> Result<usize> {
    Ok(value_u64(field, v)? as usize)
}

/// Load and validate `config.yml`.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mapping = yaml_mapping(path, &strip_elisions(&raw))?;

    let mut fields: BTreeMap<String, serde_yaml::Value> = BTreeMap::new();
    for (k, v) in mapping {
        let key = key_string(path, &k)?;
        if fields.insert(key.clone(), v).is_some() {
            return Err(Error::Config(format!("duplicate field '{}'", key)));
        }
    }

    const KNOWN: [&str; 15] = [
        "csv_path",
        "matrix_root",
        "normalize",
        "transform",
        "impute",
        "imputation_models",
        "mid_process_data",
        "training_data",
        "training_output",
        "two_stage",
        "models",
        "seed",
        "neighbor_count",
        "idw_power",
        "grid",
    ];
    for key in fields.keys() {
        if !KNOWN.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown field '{}'", key)));
        }
    }

    let mut take = |name: &str| fields.remove(name);
    let require = |name: &str, v: Option<serde_yaml::Value>| {
        v.ok_or_else(|| Error::Config(format!("missing required field '{}'", name)))
    };

    let defaults = PipelineConfig::default();
    let csv_path = value_string("csv_path", &require("csv_path", take("csv_path"))?)?;
    let matrix_root = take("matrix_root")
        .map(|v| value_string("matrix_root", &v))
        .transpose()?;
    let normalize = value_bool("normalize", &require("normalize", take("normalize"))?)?;
    let transform = value_bool("transform", &require("transform", take("transform"))?)?;
    let impute = value_bool("impute", &require("impute", take("impute"))?)?;
    let imputation_models = value_string(
        "imputation_models",
        &require("imputation_models", take("imputation_models"))?,
    )?;
    let mid_process_data = value_string(
        "mid_process_data",
        &require("mid_process_data", take("mid_process_data"))?,
    )?;
    let training_data = value_string(
        "training_data",
        &require("training_data", take("training_data"))?,
    )?;
    let training_output = value_string(
        "training_output",
        &require("training_output", take("training_output"))?,
    )?;
    let two_stage = value_bool("two_stage", &require("two_stage", take("two_stage"))?)?;
    let models = match require("models", take("models"))? {
        serde_yaml::Value::Sequence(items) => items
            .iter()
            .map(|item| ModelId::parse(&value_string("models", item)?))
            .collect::<Result<Vec<_>>>()?,
        other => {
            return Err(Error::Config(format!(
                "models: expected a list, got {:?}",
                other
            )))
        }
    };
    let seed = take("seed")
        .map(|v| value_u64("seed", &v))
        .transpose()?
        .unwrap_or(defaults.seed);
    let neighbor_count = take("neighbor_count")
        .map(|v| value_usize("neighbor_count", &v))
        .transpose()?
        .unwrap_or(defaults.neighbor_count);
    let idw_power = take("idw_power")
        .map(|v| value_f64("idw_power", &v))
        .transpose()?
        .unwrap_or(defaults.idw_power);
    let grid = take("grid").map(|v| parse_grid(path, &v)).transpose()?;

    let config = PipelineConfig {
        csv_path: csv_path.into(),
        matrix_root: matrix_root.map(Into::into),
        normalize,
        transform,
        impute,
        imputation_models: imputation_models.into(),
        mid_process_data: mid_process_data.into(),
        training_data: training_data.into(),
        training_output: training_output.into(),
        two_stage,
        models,
        seed,
        neighbor_count,
        idw_power,
        grid,
    };
    config.validate()?;
    Ok(config)
}

fn parse_grid(path: &Path, v: &serde_yaml::Value) -> Result<GridSpec> {
    let m = match v {
        serde_yaml::Value::Mapping(m) => m,
        _ => return Err(Error::Config("grid: expected a mapping".into())),
    };
    let mut origin_lon = None;
    let mut origin_lat = None;
    let mut cell_size = None;
    let mut n_x = None;
    let mut n_y = None;
    for (k, v) in m {
        match key_string(path, k)?.as_str() {
            "origin_lon" => origin_lon = Some(value_f64("grid.origin_lon", v)?),
            "origin_lat" => origin_lat = Some(value_f64("grid.origin_lat", v)?),
            "cell_size" => cell_size = Some(value_f64("grid.cell_size", v)?),
            "n_x" => n_x = Some(value_usize("grid.n_x", v)?),
            "n_y" => n_y = Some(value_usize("grid.n_y", v)?),
            other => return Err(Error::Config(format!("grid: unknown field '{}'", other))),
        }
    }
    let req = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::Config(format!("missing required field 'grid.{}'", name)))
    };
    let spec = GridSpec::new(
        req("origin_lon", origin_lon)?,
        req("origin_lat", origin_lat)?,
        req("cell_size", cell_size)?,
        n_x.ok_or_else(|| Error::Config("missing required field 'grid.n_x'".into()))?,
        n_y.ok_or_else(|| Error::Config("missing required field 'grid.n_y'".into()))?,
    )?;
    Ok(spec)
}

// --- per-model configuration -----------------------------------------------

/// Hyperparameters for one learner family.
#[derive(Debug, Clone, PartialEq)]
pub enum Hyperparams {
    Nn {
        hidden_layers: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    },
    Forest {
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        feature_fraction: f64,
    },
    Gradboost {
        n_trees: usize,
        learning_rate: f64,
        max_depth: usize,
        subsample_fraction: f64,
    },
}

/// One learner's configuration: cross-validation folds plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_id: ModelId,
    pub folds: usize,
    pub hp: Hyperparams,
}

impl ModelConfig {
    pub fn defaults(model_id: ModelId) -> Self {
        let hp = match model_id {
            ModelId::Nn => Hyperparams::Nn {
                hidden_layers: vec![32, 32],
                epochs: 50,
                learning_rate: 0.01,
                batch_size: 256,
            },
            ModelId::Forest => Hyperparams::Forest {
                n_trees: 100,
                max_depth: 16,
                min_leaf: 3,
                feature_fraction: 0.7,
            },
            ModelId::Gradboost => Hyperparams::Gradboost {
                n_trees: 150,
                learning_rate: 0.1,
                max_depth: 3,
                subsample_fraction: 0.8,
            },
        };
        ModelConfig {
            model_id,
            folds: 10,
            hp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("{}.{}", self.model_id, name);
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "{}: folds must be >= 2",
                self.model_id
            )));
        }
        let check_count = |name: &str, v: usize| -> Result<()> {
            if v < 1 {
                Err(Error::Config(format!("{}: must be >= 1", field(name))))
            } else {
                Ok(())
            }
        };
        let check_unit = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{}: must be in (0, 1]", field(name))))
            }
        };
        match &self.hp {
            Hyperparams::Nn {
                hidden_layers,
                epochs,
                learning_rate,
                batch_size,
            } => {
                for (i, &width) in hidden_layers.iter().enumerate() {
                    if width < 1 {
                        return Err(Error::Config(format!(
                            "nn.hidden_layers[{}]: must be >= 1",
                            i
                        )));
                    }
                }
                check_count("epochs", *epochs)?;
                check_unit("learning_rate", *learning_rate)?;
                check_count("batch_size", *batch_size)?;
            }
            Hyperparams::Forest {
                n_trees,
                max_depth,
                min_leaf,
                feature_fraction,
            } => {
                check_count("n_trees", *n_trees)?;
                check_count("max_depth", *max_depth)?;
                check_count("min_leaf", *min_leaf)?;
                check_unit("feature_fraction", *feature_fraction)?;
            }
            Hyperparams::Gradboost {
                n_trees,
                learning_rate,
                max_depth,
                subsample_fraction,
            } => {
                check_count("n_trees", *n_trees)?;
                check_unit("learning_rate", *learning_rate)?;
                check_count("max_depth", *max_depth)?;
                check_unit("subsample_fraction", *subsample_fraction)?;
            }
        }
        Ok(())
    }
}

/// Load `<dir>/<model_id>.yml`, merging file fields over documented defaults.
/// A missing file yields the defaults unchanged.
pub fn load_model_config(model_id: ModelId, dir: &Path) -> Result<ModelConfig> {
    let mut config = ModelConfig::defaults(model_id);
    let path = dir.join(format!("{}.yml", model_id));
    if !path.exists() {
        return Ok(config);
    }
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mapping = yaml_mapping(&path, &strip_elisions(&raw))?;
    for (k, v) in mapping {
        let key = key_string(&path, &k)?;
        if key == "folds" {
            config.folds = value_usize("folds", &v)?;
            continue;
        }
        match (&mut config.hp, key.as_str()) {
            (Hyperparams::Nn { hidden_layers, .. }, "hidden_layers") => {
                let seq = v.as_sequence().ok_or_else(|| {
                    Error::Config("nn.hidden_layers: expected a list of positive integers".into())
                })?;
                *hidden_layers = seq
                    .iter()
                    .map(|item| value_usize("nn.hidden_layers", item))
                    .collect::<Result<Vec<_>>>()?;
            }
            (Hyperparams::Nn { epochs, .. }, "epochs") => *epochs = value_usize("nn.epochs", &v)?,
            (Hyperparams::Nn { learning_rate, .. }, "learning_rate") => {
                *learning_rate = value_f64("nn.learning_rate", &v)?
            }
            (Hyperparams::Nn { batch_size, .. }, "batch_size") => {
                *batch_size = value_usize("nn.batch_size", &v)?
            }
            (Hyperparams::Forest { n_trees, .. }, "n_trees") => {
                *n_trees = value_usize("forest.n_trees", &v)?
            }
            (Hyperparams::Forest { max_depth, .. }, "max_depth") => {
                *max_depth = value_usize("forest.max_depth", &v)?
            }
            (Hyperparams::Forest { min_leaf, .. }, "min_leaf") => {
                *min_leaf = value_usize("forest.min_leaf", &v)?
            }
            (
                Hyperparams::Forest {
                    feature_fraction, ..
                },
                "feature_fraction",
            ) => *feature_fraction = value_f64("forest.feature_fraction", &v)?,
            (Hyperparams::Gradboost { n_trees, .. }, "n_trees") => {
                *n_trees = value_usize("gradboost.n_trees", &v)?
            }
            (Hyperparams::Gradboost { learning_rate, .. }, "learning_rate") => {
                *learning_rate = value_f64("gradboost.learning_rate", &v)?
            }
            (Hyperparams::Gradboost { max_depth, .. }, "max_depth") => {
                *max_depth = value_usize("gradboost.max_depth", &v)?
            }
            (
                Hyperparams::Gradboost {
                    subsample_fraction, ..
                },
                "subsample_fraction",
            ) => *subsample_fraction = value_f64("gradboost.subsample_fraction", &v)?,
            (_, other) => {
                return Err(Error::Config(format!(
                    "{}: unknown field '{}'",
                    path.display(),
                    other
                )))
            }
        }
    }
    config.validate()?;
    Ok(config)
}
