//! The three base learners and the machinery they share: dataset extraction,
//! deterministic training, serialization, and out-of-fold prediction
//! generation for stacking.

pub mod cart;
pub mod forest;
pub mod gradboost;
pub mod nn;

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Hyperparams, ModelConfig, ModelId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_indexed, seeded_rng};
use crate::table::SiteDayTable;
use forest::{fit_forest, ForestModel, ForestParams};
use gradboost::{fit_gradboost, GbModel, GbParams};
use nn::{fit_nn, NnModel, NnParams};

/// Fully observed numeric design matrix plus target, with the (site, date)
/// keys carried alongside but never used as features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Row-major, n x p.
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub keys: Vec<(String, NaiveDate)>,
}

impl Dataset {
    /// Extract the rows with an observed outcome; all covariate columns
    /// become features. Errors if features still contain missing values.
    pub fn from_table(table: &SiteDayTable) -> Result<Self> {
        let outcome = table
            .outcome()
            .ok_or_else(|| Error::Train("table has no MonitorData column".into()))?;
        let rows: Vec<usize> = (0..table.n_rows())
            .filter(|&i| outcome[i].is_some())
            .collect();
        if rows.is_empty() {
            return Err(Error::Train("no rows with an observed outcome".into()));
        }
        let (features, keys) = gather_features(table, &rows)?;
        Ok(Dataset {
            feature_names: table.column_names(),
            features,
            target: rows.iter().map(|&i| outcome[i].unwrap()).collect(),
            keys,
        })
    }

    /// Feature rows for every table row (prediction path; outcome ignored).
    pub fn features_only(
        table: &SiteDayTable,
    ) -> Result<(Vec<Vec<f64>>, Vec<(String, NaiveDate)>)> {
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        gather_features(table, &rows)
    }

    /// Feature rows for every table row with columns taken in `order`, so
    /// prediction inputs whose CSV lists covariates in a different order than
    /// training still line up with the trained models.
    pub fn features_in_order(
        table: &SiteDayTable,
        order: &[String],
    ) -> Result<(Vec<Vec<f64>>, Vec<(String, NaiveDate)>)> {
        let columns: Vec<&crate::table::Column> = order
            .iter()
            .map(|name| {
                table
                    .column(name)
                    .ok_or_else(|| Error::Predict(format!("input lacks feature column '{}'", name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut features = Vec::with_capacity(table.n_rows());
        let mut keys = Vec::with_capacity(table.n_rows());
        for i in 0..table.n_rows() {
            let mut row = Vec::with_capacity(columns.len());
            for col in &columns {
                match col.values[i] {
                    Some(v) => row.push(v),
                    None => {
                        return Err(Error::Predict(format!(
                            "feature '{}' is missing at (site '{}', {})",
                            col.name,
                            table.site_ids()[i],
                            table.dates()[i]
                        )))
                    }
                }
            }
            features.push(row);
            keys.push((table.site_ids()[i].clone(), table.dates()[i]));
        }
        Ok((features, keys))
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    /// Row subset in the given index order.
    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
        }
    }

    /// Feature-major copy of the design matrix.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        let p = self.feature_names.len();
        let mut cols = vec![Vec::with_capacity(self.features.len()); p];
        for row in &self.features {
            for (j, v) in row.iter().enumerate() {
                cols[j].push(*v);
            }
        }
        cols
    }

    /// Append one feature column, returning a new dataset.
    pub fn with_extra_feature(&self, name: &str, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n_rows() {
            return Err(Error::Train(format!("feature '{}': wrong length", name)));
        }
        if self.feature_names.iter().any(|n| n == name) {
            return Err(Error::Train(format!("feature '{}' already exists", name)));
        }
        let mut ds = self.clone();
        ds.feature_names.push(name.to_string());
        for (row, v) in ds.features.iter_mut().zip(values) {
            row.push(v);
        }
        Ok(ds)
    }
}

fn gather_features(
    table: &SiteDayTable,
    rows: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<(String, NaiveDate)>)> {
    let columns = table.columns();
    if columns.is_empty() {
        return Err(Error::Train("table has no covariate columns".into()));
    }
    let mut features = Vec::with_capacity(rows.len());
    let mut keys = Vec::with_capacity(rows.len());
    for &i in rows {
        let mut row = Vec::with_capacity(columns.len());
        for col in columns {
            match col.values[i] {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::Train(format!(
                        "feature '{}' is missing at (site '{}', {}); run imputation first",
                        col.name,
                        table.site_ids()[i],
                        table.dates()[i]
                    )))
                }
            }
        }
        features.push(row);
        keys.push((table.site_ids()[i].clone(), table.dates()[i]));
    }
    Ok((features, keys))
}

/// A trained base learner, serializable to a versioned structured text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrainedBaseModel {
    Nn(NnModel),
    Forest(ForestModel),
    Gradboost(GbModel),
}

impl TrainedBaseModel {
    pub fn model_id(&self) -> ModelId {
        match self {
            TrainedBaseModel::Nn(_) => ModelId::Nn,
            TrainedBaseModel::Forest(_) => ModelId::Forest,
            TrainedBaseModel::Gradboost(_) => ModelId::Gradboost,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedBaseModel::Nn(m) => m.n_features(),
            TrainedBaseModel::Forest(m) => m.n_features,
            TrainedBaseModel::Gradboost(m) => m.n_features,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: TrainedBaseModel,
}

pub fn save_model(model: &TrainedBaseModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = ModelFile {
        format_version: 1,
        model: model.clone(),
    };
    let text = serde_yaml::to_string(&file).map_err(|e| Error::Yaml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedBaseModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.format_version != 1 {
        return Err(Error::Train(format!(
            "{}: unsupported model format version {}",
            path.display(),
            file.format_version
        )));
    }
    Ok(file.model)
}

/// Train one base learner on the full dataset.
pub fn train_base_model(
    dataset: &Dataset,
    config: &ModelConfig,
    seed: u64,
) -> Result<TrainedBaseModel> {
    config.validate()?;
    let n = dataset.n_rows();
    if n < 2 {
        return Err(Error::Train(format!("need at least 2 rows, have {}", n)));
    }
    if dataset.feature_names.is_empty() {
        return Err(Error::Train("dataset has no features".into()));
    }
    let model = match &config.hp {
        Hyperparams::Nn {
            hidden_layers,
            epochs,
            learning_rate,
            batch_size,
        } => TrainedBaseModel::Nn(fit_nn(
            &dataset.features,
            &dataset.target,
            &NnParams {
                hidden_layers: hidden_layers.clone(),
                epochs: *epochs,
                learning_rate: *learning_rate,
                batch_size: *batch_size,
            },
            seed,
        )),
        Hyperparams::Forest {
            n_trees,
            max_depth,
            min_leaf,
            feature_fraction,
        } => TrainedBaseModel::Forest(fit_forest(
            &dataset.columns(),
            &dataset.target,
            &ForestParams {
                n_trees: *n_trees,
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                feature_fraction: *feature_fraction,
            },
            seed,
        )),
        Hyperparams::Gradboost {
            n_trees,
            learning_rate,
            max_depth,
            subsample_fraction,
        } => TrainedBaseModel::Gradboost(fit_gradboost(
            &dataset.columns(),
            &dataset.target,
            &GbParams {
                n_trees: *n_trees,
                learning_rate: *learning_rate,
                max_depth: *max_depth,
                subsample_fraction: *subsample_fraction,
            },
            seed,
        )),
    };
    Ok(model)
}

/// Deterministic predictions for a batch of feature rows.
pub fn predict_base(model: &TrainedBaseModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let expected = model.n_features();
    for (i, row) in features.iter().enumerate() {
        if row.len() != expected {
            return Err(Error::Predict(format!(
                "row {}: {} features, model expects {}",
                i,
                row.len(),
                expected
            )));
        }
    }
    Ok(match model {
        TrainedBaseModel::Nn(m) => features.iter().map(|r| m.predict_row(r)).collect(),
        TrainedBaseModel::Forest(m) => features.par_iter().map(|r| m.predict_row(r)).collect(),
        TrainedBaseModel::Gradboost(m) => features.par_iter().map(|r| m.predict_row(r)).collect(),
    })
}

/// Seeded balanced fold assignment: returns the fold id of every row.
/// The first `n % folds` folds receive one extra row.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, "folds"));
    order.shuffle(&mut rng);
    let base = n / folds;
    let extra = n % folds;
    let mut assignment = vec![0; n];
    let mut cursor = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        for &row in &order[cursor..cursor + size] {
            assignment[row] = fold;
        }
        cursor += size;
    }
    assignment
}

/// Cross-validated predictions: each row is predicted by a model trained
/// without its fold. Folds train in parallel; output slots are pre-assigned
/// so the result is independent of scheduling.
pub fn oof_predictions(
    dataset: &Dataset,
    config: &ModelConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = dataset.n_rows();
    if folds < 2 || folds > n {
        return Err(Error::Train(format!(
            "folds must be between 2 and {}, got {}",
            n, folds
        )));
    }
    let assignment = fold_assignments(n, folds, seed);
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
            let test_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
            let sub = dataset.subset(&train_rows);
            let model = train_base_model(
                &sub,
                config,
                derive_seed_indexed(seed, "oof-fold", fold as u64),
            )?;
            let rows: Vec<Vec<f64>> = test_rows
                .iter()
                .map(|&i| dataset.features[i].clone())
                .collect();
            let preds = predict_base(&model, &rows)?;
            Ok((test_rows, preds))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = vec![0.0; n];
    for (rows, preds) in per_fold {
        for (row, pred) in rows.into_iter().zip(preds) {
            out[row] = pred;
        }
    }
    Ok(out)
}
