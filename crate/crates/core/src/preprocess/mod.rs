//! The transformation -> imputation -> normalization chain.
//!
//! Fitting happens once, on training data; every fitted parameter is
//! persisted under the imputation-models directory so prediction replays the
//! exact chain. The stage order is recorded in the state itself, never
//! assumed. Enabled stages checkpoint their output, and the final table is
//! always checkpointed as `prepped`.

pub mod impute;
pub mod normalize;
pub mod transform;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::save_checkpoint;
use crate::manifest::RunManifest;
use crate::progress::Progress;
use crate::table::SiteDayTable;

pub use impute::{apply_impute, fit_impute, ImputationModel, ImputationModelSet, DEFAULT_RIDGE};
pub use normalize::{
    apply_normalize, fit_normalize, invert_normalize, ColumnRange, NormalizationParams,
};
pub use transform::{apply_transform, fit_transform, invert_transform, TransformParams};

pub const STATE_FILE: &str = "preprocess_state.yml";

/// Everything needed to replay training-time preprocessing bit-compatibly.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessState {
    pub stage_order: Vec<String>,
    pub transform_enabled: bool,
    pub impute_enabled: bool,
    pub normalize_enabled: bool,
    /// Covariate column names in table order.
    pub schema: Vec<String>,
    pub transform: Option<TransformParams>,
    pub imputation: Option<ImputationModelSet>,
    pub normalization: Option<NormalizationParams>,
}

impl PreprocessState {
    pub fn noop(schema: Vec<String>) -> Self {
        PreprocessState {
            stage_order: stage_order(),
            transform_enabled: false,
            impute_enabled: false,
            normalize_enabled: false,
            schema,
            transform: None,
            imputation: None,
            normalization: None,
        }
    }
}

fn stage_order() -> Vec<String> {
    vec!["transform".into(), "impute".into(), "normalize".into()]
}

/// Run the enabled stages on a training table, checkpointing after each one,
/// and persist the fitted state under the imputation-models directory.
///
/// `root` is the run root all configured relative paths resolve against.
pub fn run_preprocess(
    table: &SiteDayTable,
    config: &PipelineConfig,
    root: &Path,
    mut manifest: Option<&mut RunManifest>,
    progress: &Progress,
) -> Result<(SiteDayTable, PreprocessState)> {
    let variables = table.column_names();
    let mid_dir = root.join(&config.mid_process_data);
    let mut state = PreprocessState {
        stage_order: stage_order(),
        transform_enabled: config.transform,
        impute_enabled: config.impute,
        normalize_enabled: config.normalize,
        schema: variables.clone(),
        transform: None,
        imputation: None,
        normalization: None,
    };

    let mut current = table.clone();
    if config.transform {
        progress.stage("preprocess:transform", 0.0);
        let params = fit_transform(&current, &variables)?;
        current = apply_transform(&current, &params)?;
        save_checkpoint(
            &current,
            "transformed",
            &mid_dir,
            root,
            manifest.as_deref_mut(),
        )?;
        state.transform = Some(params);
        progress.stage("preprocess:transform", 100.0);
    }
    if config.impute {
        progress.stage("preprocess:impute", 0.0);
        let set = fit_impute(&current, &variables, DEFAULT_RIDGE)?;
        current = apply_impute(&current, &set)?;
        save_checkpoint(&current, "imputed", &mid_dir, root, manifest.as_deref_mut())?;
        state.imputation = Some(set);
        progress.stage("preprocess:impute", 100.0);
    }
    if config.normalize {
        progress.stage("preprocess:normalize", 0.0);
        let params = fit_normalize(&current, &variables)?;
        current = apply_normalize(&current, &params)?;
        state.normalization = Some(params);
        progress.stage("preprocess:normalize", 100.0);
    }
    save_checkpoint(&current, "prepped", &mid_dir, root, manifest.as_deref_mut())?;

    let state_dir = root.join(&config.imputation_models);
    save_state(&state, &state_dir)?;
    if let Some(m) = manifest.as_deref_mut() {
        m.record_artifact(root, &state_dir.join(STATE_FILE))?;
        if let Some(imp) = &state.imputation {
            for variable in imp.models.keys() {
                m.record_artifact(root, &state_dir.join(format!("{}.coef.csv", variable)))?;
            }
        }
    }
    Ok((current, state))
}

/// Replay the stored chain on new data. The input covariate set must match
/// the training schema exactly.
pub fn apply_state(table: &SiteDayTable, state: &PreprocessState) -> Result<SiteDayTable> {
    check_schema(table, &state.schema)?;
    let mut current = table.clone();
    if state.transform_enabled {
        let params = state.transform.as_ref().ok_or_else(|| {
            Error::Preprocess("state enables transform but has no parameters".into())
        })?;
        current = apply_transform(&current, params)?;
    }
    if state.impute_enabled {
        let set = state
            .imputation
            .as_ref()
            .ok_or_else(|| Error::Preprocess("state enables impute but has no models".into()))?;
        current = apply_impute(&current, set)?;
        // columns that were complete at fit time have no model; any
        // missingness they show at apply time falls back to the median
        for (name, med) in &set.medians {
            if let Some(col) = current.column(name) {
                if col.values.iter().any(|v| v.is_none()) {
                    let values = col.values.iter().map(|v| Some(v.unwrap_or(*med))).collect();
                    current = current.with_column_values(name, values)?;
                }
            }
        }
    }
    if state.normalize_enabled {
        let params = state
            .normalization
            .as_ref()
            .ok_or_else(|| Error::Preprocess("state enables normalize but has no ranges".into()))?;
        current = apply_normalize(&current, params)?;
    }
    Ok(current)
}

fn check_schema(table: &SiteDayTable, schema: &[String]) -> Result<()> {
    let have: std::collections::BTreeSet<&String> =
        table.columns().iter().map(|c| &c.name).collect();
    let want: std::collections::BTreeSet<&String> = schema.iter().collect();
    let missing: Vec<&str> = want.difference(&have).map(|s| s.as_str()).collect();
    let extra: Vec<&str> = have.difference(&want).map(|s| s.as_str()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "covariate schema mismatch: missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(())
}

// --- persistence -------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    format_version: u32,
    stage_order: Vec<String>,
    transform_enabled: bool,
    impute_enabled: bool,
    normalize_enabled: bool,
    schema: Vec<String>,
    transform_family: Option<String>,
    lambdas: BTreeMap<String, f64>,
    medians: BTreeMap<String, f64>,
    imputed_variables: Vec<String>,
    ranges: BTreeMap<String, RangeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RangeFile {
    min: f64,
    max: f64,
    constant: bool,
}

pub fn save_state(state: &PreprocessState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = StateFile {
        format_version: 1,
        stage_order: state.stage_order.clone(),
        transform_enabled: state.transform_enabled,
        impute_enabled: state.impute_enabled,
        normalize_enabled: state.normalize_enabled,
        schema: state.schema.clone(),
        transform_family: state.transform.as_ref().map(|t| t.family.clone()),
        lambdas: state
            .transform
            .as_ref()
            .map(|t| t.lambdas.clone())
            .unwrap_or_default(),
        medians: state
            .imputation
            .as_ref()
            .map(|i| i.medians.clone())
            .unwrap_or_default(),
        imputed_variables: state
            .imputation
            .as_ref()
            .map(|i| i.models.keys().cloned().collect())
            .unwrap_or_default(),
        ranges: state
            .normalization
            .as_ref()
            .map(|n| {
                n.ranges
                    .iter()
                    .map(|(k, r)| {
                        (
                            k.clone(),
                            RangeFile {
                                min: r.min,
                                max: r.max,
                                constant: r.constant,
                            },
                        )
                    })
                    .collect()
            })
            .unwrap_or_default(),
    };
    let path = dir.join(STATE_FILE);
    let text = serde_yaml::to_string(&file).map_err(|e| Error::Yaml {
        path: path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    if let Some(imp) = &state.imputation {
        for (variable, model) in &imp.models {
            let mut out = String::from("term,value\n");
            out.push_str(&format!(
                "intercept,{}\n",
                crate::ingest::format_value(model.intercept)
            ));
            out.push_str(&format!(
                "ridge_penalty,{}\n",
                crate::ingest::format_value(model.ridge_penalty)
            ));
            for (name, coef) in &model.coefficients {
                out.push_str(&format!(
                    "coef:{},{}\n",
                    name,
                    crate::ingest::format_value(*coef)
                ));
            }
            for (site, offset) in &model.site_offsets {
                out.push_str(&format!(
                    "site:{},{}\n",
                    site,
                    crate::ingest::format_value(*offset)
                ));
            }
            let coef_path = dir.join(format!("{}.coef.csv", variable));
            std::fs::write(&coef_path, out).map_err(|e| Error::io(&coef_path, e))?;
        }
    }
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<PreprocessState> {
    let path = dir.join(STATE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: StateFile = serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
        path: path.clone(),
        message: e.to_string(),
    })?;

    let transform = if file.transform_enabled {
        Some(TransformParams {
            family: file
                .transform_family
                .clone()
                .unwrap_or_else(|| "yeo-johnson".into()),
            lambdas: file.lambdas.clone(),
        })
    } else {
        None
    };

    let imputation = if file.impute_enabled {
        let mut models = BTreeMap::new();
        for variable in &file.imputed_variables {
            let coef_path = dir.join(format!("{}.coef.csv", variable));
            models.insert(variable.clone(), load_coef_file(variable, &coef_path)?);
        }
        Some(ImputationModelSet {
            medians: file.medians.clone(),
            models,
        })
    } else {
        None
    };

    let normalization = if file.normalize_enabled {
        Some(NormalizationParams {
            ranges: file
                .ranges
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        ColumnRange {
                            min: r.min,
                            max: r.max,
                            constant: r.constant,
                        },
                    )
                })
                .collect(),
        })
    } else {
        None
    };

    Ok(PreprocessState {
        stage_order: file.stage_order,
        transform_enabled: file.transform_enabled,
        impute_enabled: file.impute_enabled,
        normalize_enabled: file.normalize_enabled,
        schema: file.schema,
        transform,
        imputation,
        normalization,
    })
}

fn load_coef_file(variable: &str, path: &Path) -> Result<ImputationModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut intercept = None;
    let mut ridge_penalty = None;
    let mut coefficients = Vec::new();
    let mut site_offsets = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let (term, value) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("{} line {}: malformed row", path.display(), i + 1))
        })?;
        let value: f64 = value.parse().map_err(|_| {
            Error::Data(format!(
                "{} line {}: bad number '{}'",
                path.display(),
                i + 1,
                value
            ))
        })?;
        if term == "intercept" {
            intercept = Some(value);
        } else if term == "ridge_penalty" {
            ridge_penalty = Some(value);
        } else if let Some(name) = term.strip_prefix("coef:") {
            coefficients.push((name.to_string(), value));
        } else if let Some(site) = term.strip_prefix("site:") {
            site_offsets.insert(site.to_string(), value);
        } else {
            return Err(Error::Data(format!(
                "{} line {}: unknown term '{}'",
                path.display(),
                i + 1,
                term
            )));
        }
    }
    Ok(ImputationModel {
        variable: variable.to_string(),
        intercept: intercept
            .ok_or_else(|| Error::Data(format!("{}: missing intercept", path.display())))?,
        coefficients,
        ridge_penalty: ridge_penalty.unwrap_or(DEFAULT_RIDGE),
        site_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;
    use chrono::NaiveDate;
    use tempfile::tempdir;

    fn toy_table() -> SiteDayTable {
        let n = 20;
        let site_ids: Vec<String> = (0..n).map(|i| format!("s{}", i % 4)).collect();
        let dates: Vec<NaiveDate> = (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2000, 1, 1 + (i / 4) as u32).unwrap())
            .collect();
        let a: Vec<Option<f64>> = (0..n)
            .map(|i| Some((i as f64 * 0.73).sin() * 4.0 + 5.0))
            .collect();
        let b: Vec<Option<f64>> = (0..n)
            .map(|i| {
                if i % 7 == 3 {
                    None
                } else {
                    Some((i as f64) * 0.5 + 1.0)
                }
            })
            .collect();
        let outcome: Vec<Option<f64>> = (0..n)
            .map(|i| if i % 5 == 0 { None } else { Some(i as f64) })
            .collect();
        SiteDayTable::new(
            site_ids,
            dates,
            Some(outcome),
            vec![
                Column {
                    name: "a".into(),
                    values: a,
                },
                Column {
                    name: "b".into(),
                    values: b,
                },
            ],
        )
        .unwrap()
    }

    fn config_with_flags(transform: bool, impute: bool, normalize: bool) -> PipelineConfig {
        PipelineConfig {
            transform,
            impute,
            normalize,
            ..PipelineConfig::default()
        }
    }

    fn cells_close(a: &SiteDayTable, b: &SiteDayTable, tol: f64) -> bool {
        a.columns().iter().zip(b.columns()).all(|(ca, cb)| {
            ca.values.iter().zip(&cb.values).all(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= tol,
                (None, None) => true,
                _ => false,
            })
        })
    }

    #[test]
    fn all_stages_checkpoint_and_replay_exactly() {
        let dir = tempdir().unwrap();
        let table = toy_table();
        let config = config_with_flags(true, true, true);
        let (prepped, state) =
            run_preprocess(&table, &config, dir.path(), None, &Progress::quiet()).unwrap();

        let mid = dir.path().join("mid_process_data");
        assert!(mid.join("transformed.csv").exists());
        assert!(mid.join("imputed.csv").exists());
        assert!(mid.join("prepped.csv").exists());

        // replay on raw input reproduces the prepped table
        let replayed = apply_state(&table, &state).unwrap();
        assert!(cells_close(&replayed, &prepped, 1e-12));
        assert_eq!(prepped.missing_count(), 0);

        // every training value in [0,1] after normalization
        for col in prepped.columns() {
            for v in col.values.iter().flatten() {
                assert!((0.0..=1.0).contains(v), "{}", v);
            }
        }

        // outcome untouched throughout
        assert_eq!(prepped.outcome().unwrap(), table.outcome().unwrap());
    }

    #[test]
    fn state_round_trips_through_disk() {
        let dir = tempdir().unwrap();
        let table = toy_table();
        let config = config_with_flags(true, true, true);
        let (_, state) =
            run_preprocess(&table, &config, dir.path(), None, &Progress::quiet()).unwrap();
        let loaded = load_state(&dir.path().join("imputation_models")).unwrap();
        assert_eq!(state, loaded);

        // replay through the reloaded state is identical too
        let a = apply_state(&table, &state).unwrap();
        let b = apply_state(&table, &loaded).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_flags_false_is_identity() {
        let dir = tempdir().unwrap();
        let table = toy_table();
        let config = config_with_flags(false, false, false);
        let (out, state) =
            run_preprocess(&table, &config, dir.path(), None, &Progress::quiet()).unwrap();
        assert_eq!(out, table);
        assert!(
            state.transform.is_none()
                && state.imputation.is_none()
                && state.normalization.is_none()
        );
        assert!(dir.path().join("mid_process_data/prepped.csv").exists());
        assert!(!dir.path().join("mid_process_data/transformed.csv").exists());
    }

    #[test]
    fn impute_without_missingness_checkpoints_equal() {
        let dir = tempdir().unwrap();
        let table = toy_table();
        // fill b so nothing is missing
        let b_full: Vec<Option<f64>> = (0..table.n_rows()).map(|i| Some(i as f64)).collect();
        let table = table.with_column_values("b", b_full).unwrap();
        let config = config_with_flags(true, true, false);
        run_preprocess(&table, &config, dir.path(), None, &Progress::quiet()).unwrap();
        let mid = dir.path().join("mid_process_data");
        let transformed = std::fs::read(mid.join("transformed.csv")).unwrap();
        let imputed = std::fs::read(mid.join("imputed.csv")).unwrap();
        assert_eq!(transformed, imputed);
    }

    #[test]
    fn schema_mismatch_names_columns() {
        let table = toy_table();
        let state = PreprocessState::noop(vec!["a".into(), "zzz".into()]);
        let err = apply_state(&table, &state).unwrap_err().to_string();
        assert!(err.contains("zzz") && err.contains("b"), "{}", err);
    }
}
