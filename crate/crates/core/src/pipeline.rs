//! End-to-end orchestration: train the configured ensemble, persist every
//! artifact under training_output with a run manifest, and replay the whole
//! chain for prediction.
//!
//! All configured paths are relative and resolve against the run root (the
//! directory holding config.yml), so a run directory moves between machines
//! intact. Exactly one writer owns training_output for a run's duration,
//! enforced with a lock file. Any stage failure aborts with the stage name
//! and marks the manifest incomplete.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::config::{load_model_config, ModelId, PipelineConfig};
use crate::ensemble::{
    fit_gam, load_ensemble, predict_gam, save_ensemble, EnsembleModel, GamConfig,
};
use crate::error::{Error, Result};
use crate::ingest::{
    assemble_from_matrices, matrix_tree_calendar, read_csv_data, read_sites, write_table_csv,
    SITES_FILE,
};
use crate::interpolate::{grid_points, GridSpec};
use crate::learners::{
    load_model, oof_predictions, predict_base, save_model, train_base_model, Dataset,
    TrainedBaseModel,
};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::preprocess::{apply_state, load_state, run_preprocess, PreprocessState};
use crate::progress::Progress;
use crate::rng::derive_seed;
use crate::synth::variance;
use crate::table::{Column, SiteDayTable, SiteRecord};
use crate::two_stage::{
    augment_with_neighbor_predictions, Stage2Meta, NEIGHBOR_COLUMN, STAGE2_DIR,
};

pub const LOCK_FILE: &str = ".lock";
pub const MODELS_DIR: &str = "models";
pub const TRAIN_PREDICTIONS_FILE: &str = "train_predictions.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Train(format!(
                "{} is locked by another run (remove {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn with_stage<T>(
    manifest: &mut RunManifest,
    manifest_path: &Path,
    name: &str,
    f: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    manifest.stage_start(name);
    match f(manifest) {
        Ok(value) => {
            manifest.stage_end(name);
            Ok(value)
        }
        Err(e) => {
            manifest.complete = false;
            let _ = manifest.save(manifest_path);
            Err(Error::stage(name, e))
        }
    }
}

/// One trained stage: base models plus the GAM stack, in config order.
struct StageModels {
    base: Vec<(ModelId, TrainedBaseModel)>,
    ensemble: EnsembleModel,
}

impl StageModels {
    /// Per-model prediction columns followed by the ensemble column.
    fn predict_columns(&self, features: &[Vec<f64>]) -> Result<Vec<(String, Vec<f64>)>> {
        let mut columns = Vec::with_capacity(self.base.len() + 1);
        for (id, model) in &self.base {
            columns.push((id.to_string(), predict_base(model, features)?));
        }
        let base_columns: Vec<Vec<f64>> = columns.iter().map(|(_, c)| c.clone()).collect();
        let ens = predict_gam(&self.ensemble, &base_columns)?;
        columns.push(("ensemble".to_string(), ens));
        Ok(columns)
    }
}

/// Train base models and the GAM on out-of-fold predictions; write artifacts
/// under `out_dir`. `seed_tag` distinguishes stage-1 from stage-2 streams.
fn train_model_suite(
    dataset: &Dataset,
    config: &PipelineConfig,
    root: &Path,
    out_dir: &Path,
    seed_tag: &str,
    manifest: &mut RunManifest,
    progress: &Progress,
) -> Result<StageModels> {
    let mut base = Vec::new();
    let mut oof_columns = Vec::new();
    let label_prefix = if seed_tag.is_empty() {
        String::new()
    } else {
        "stage2:".to_string()
    };
    for &model_id in &config.models {
        let stage_label = format!("{}train:{}", label_prefix, model_id);
        progress.stage(&stage_label, 0.0);
        let model_config = load_model_config(model_id, root)?;
        let model_seed = derive_seed(config.seed, &format!("{}{}", seed_tag, model_id));
        let model = train_base_model(dataset, &model_config, model_seed)?;
        progress.stage(&stage_label, 50.0);
        let oof_seed = derive_seed(config.seed, &format!("{}{}-oof", seed_tag, model_id));
        let oof = oof_predictions(dataset, &model_config, model_config.folds, oof_seed)?;
        let path = out_dir.join(format!("{}.model", model_id));
        save_model(&model, &path)?;
        manifest.record_artifact(root, &path)?;
        base.push((model_id, model));
        oof_columns.push(oof);
        progress.stage(&stage_label, 100.0);
    }

    let names: Vec<String> = config.models.iter().map(|m| m.to_string()).collect();
    progress.stage(&format!("{}ensemble", label_prefix), 0.0);
    let ensemble = fit_gam(&oof_columns, &dataset.target, &names, &GamConfig::default())?;
    if !ensemble.converged {
        progress.warn(&format!(
            "{}ensemble backfitting stopped at {} iterations, final change {:e}",
            label_prefix, ensemble.backfit_iterations, ensemble.final_change
        ));
    }
    let path = out_dir.join("ensemble.model");
    save_ensemble(&ensemble, &path)?;
    manifest.record_artifact(root, &path)?;
    progress.stage(&format!("{}ensemble", label_prefix), 100.0);
    Ok(StageModels { base, ensemble })
}

/// Run only the preprocessing chain: read csv_path, fit and apply the
/// enabled stages, checkpoint intermediates, persist the state, and write the
/// prepped table at training_data. Returns the training_data path.
pub fn preprocess_only(
    config: &PipelineConfig,
    root: &Path,
    progress: &Progress,
) -> Result<PathBuf> {
    config.validate()?;
    let csv_path = root.join(&config.csv_path);
    let raw = read_csv_data(&csv_path)?;
    let (prepped, _state) = run_preprocess(&raw, config, root, None, progress)?;
    let training_data = root.join(&config.training_data);
    let checkpoint = root.join(&config.mid_process_data).join("prepped.csv");
    if training_data != checkpoint {
        write_table_csv(&prepped, &training_data)?;
    }
    Ok(training_data)
}

/// Assemble the input CSV from the configured matrix tree; the registry is
/// `sites.csv` under matrix_root, copied next to the output for later stages.
pub fn assemble_input(
    config: &PipelineConfig,
    root: &Path,
    progress: &Progress,
) -> Result<PathBuf> {
    config.validate()?;
    let matrix_root = config
        .matrix_root
        .as_ref()
        .ok_or_else(|| Error::Config("assemble needs matrix_root in the config".into()))?;
    let tree = root.join(matrix_root);
    progress.stage("assemble", 0.0);
    let registry = read_sites(&tree.join(SITES_FILE))?;
    let calendar = matrix_tree_calendar(&tree)?;
    let table = assemble_from_matrices(&tree, &registry, &calendar)?;
    let csv_path = root.join(&config.csv_path);
    write_table_csv(&table, &csv_path)?;
    let registry_out = root.join(sites_path_for(&config.csv_path));
    if registry_out != tree.join(SITES_FILE) {
        crate::ingest::write_sites(&registry, &registry_out)?;
    }
    progress.stage("assemble", 100.0);
    Ok(csv_path)
}

/// Conventional registry location: `sites.csv` next to the input CSV.
pub fn sites_path_for(csv_path: &Path) -> PathBuf {
    csv_path
        .parent()
        .map(|d| d.join(SITES_FILE))
        .unwrap_or_else(|| PathBuf::from(SITES_FILE))
}

/// Run training end to end; returns the final manifest.
pub fn train(config: &PipelineConfig, root: &Path, progress: &Progress) -> Result<RunManifest> {
    config.validate()?;
    let output_dir = root.join(&config.training_output);
    let _lock = OutputLock::acquire(&output_dir)?;
    let manifest_path = output_dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::new(config.seed, config.to_yaml_string());

    // read or produce the prepped training table plus its preprocess state
    let (prepped, _state) = with_stage(&mut manifest, &manifest_path, "read", |m| {
        load_or_preprocess(config, root, m, progress)
    })?;

    let dataset = with_stage(&mut manifest, &manifest_path, "dataset", |_| {
        Dataset::from_table(&prepped)
    })?;

    let models_dir = output_dir.join(MODELS_DIR);
    let stage1 = with_stage(&mut manifest, &manifest_path, "train", |m| {
        train_model_suite(&dataset, config, root, &models_dir, "", m, progress)
    })?;

    let mut train_columns = with_stage(&mut manifest, &manifest_path, "train-predictions", |_| {
        stage1.predict_columns(&dataset.features)
    })?;

    if config.two_stage {
        let stage2_columns = with_stage(&mut manifest, &manifest_path, "stage2", |m| {
            let sites = read_sites(&root.join(sites_path_for(&config.csv_path)))?;
            let ens_train = train_columns
                .last()
                .expect("ensemble column present")
                .1
                .clone();
            let (dataset2, meta) = augment_training_dataset(&dataset, &ens_train, &sites, config)?;
            let stage2_dir = output_dir.join(STAGE2_DIR);
            let stage2 =
                train_model_suite(&dataset2, config, root, &stage2_dir, "stage2-", m, progress)?;
            meta.save(&stage2_dir)?;
            m.record_artifact(root, &stage2_dir.join(crate::two_stage::META_FILE))?;
            let cols = stage2.predict_columns(&dataset2.features)?;
            Ok(cols.last().expect("ensemble column").1.clone())
        })?;
        train_columns.push(("stage2".to_string(), stage2_columns));
    }

    with_stage(&mut manifest, &manifest_path, "finalize", |m| {
        let path = output_dir.join(TRAIN_PREDICTIONS_FILE);
        write_prediction_csv(&path, &dataset.keys, &train_columns)?;
        m.record_artifact(root, &path)?;
        Ok(())
    })?;

    manifest.complete = true;
    manifest.save(&manifest_path)?;
    progress.stage("done", 100.0);
    Ok(manifest)
}

fn load_or_preprocess(
    config: &PipelineConfig,
    root: &Path,
    manifest: &mut RunManifest,
    progress: &Progress,
) -> Result<(SiteDayTable, PreprocessState)> {
    let training_data = root.join(&config.training_data);
    let state_dir = root.join(&config.imputation_models);
    let any_stage = config.transform || config.impute || config.normalize;

    if training_data.exists() {
        progress.stage("read", 0.0);
        let table = read_csv_data(&training_data)?;
        let state = if state_dir.join(crate::preprocess::STATE_FILE).exists() {
            load_state(&state_dir)?
        } else if any_stage {
            return Err(Error::Preprocess(format!(
                "{} exists but no preprocess state found under {}; \
                 run the preprocess step or point csv_path at raw data",
                training_data.display(),
                state_dir.display()
            )));
        } else {
            let state = PreprocessState::noop(table.column_names());
            crate::preprocess::save_state(&state, &state_dir)?;
            manifest.record_artifact(root, &state_dir.join(crate::preprocess::STATE_FILE))?;
            state
        };
        progress.stage("read", 100.0);
        return Ok((table, state));
    }

    let csv_path = root.join(&config.csv_path);
    if !csv_path.exists() {
        return Err(Error::Data(format!(
            "neither training data ({}) nor input CSV ({}) exists",
            training_data.display(),
            csv_path.display()
        )));
    }
    progress.stage("read", 0.0);
    let raw = read_csv_data(&csv_path)?;
    progress.stage("read", 100.0);
    let (prepped, state) = run_preprocess(&raw, config, root, Some(manifest), progress)?;

    // the prepped checkpoint lands in mid_process_data/prepped.csv; mirror it
    // at the configured training_data path when that differs
    let checkpoint = root.join(&config.mid_process_data).join("prepped.csv");
    if training_data != checkpoint {
        write_table_csv(&prepped, &training_data)?;
        manifest.record_artifact(root, &training_data)?;
    }
    Ok((prepped, state))
}

fn augment_training_dataset(
    dataset: &Dataset,
    stage1_ensemble: &[f64],
    sites: &[SiteRecord],
    config: &PipelineConfig,
) -> Result<(Dataset, Stage2Meta)> {
    let pred_table = prediction_table(&dataset.keys, stage1_ensemble)?;
    let augmented = augment_with_neighbor_predictions(
        &pred_table,
        "stage1_pred",
        sites,
        config.neighbor_count,
        config.idw_power,
    )?;
    let meta = Stage2Meta::from_range(stage1_ensemble, config.neighbor_count, config.idw_power);
    let neighbor: Vec<f64> = augmented
        .column(NEIGHBOR_COLUMN)
        .expect("augmentation adds the column")
        .values
        .iter()
        .map(|v| meta.normalize(v.expect("augmentation fills every row")))
        .collect();
    let dataset2 = dataset.with_extra_feature(NEIGHBOR_COLUMN, neighbor)?;
    Ok((dataset2, meta))
}

/// A keyed single-column table carrying stage-1 predictions; keys must
/// already be unique and canonically ordered.
fn prediction_table(keys: &[(String, NaiveDate)], preds: &[f64]) -> Result<SiteDayTable> {
    SiteDayTable::new(
        keys.iter().map(|(s, _)| s.clone()).collect(),
        keys.iter().map(|(_, d)| *d).collect(),
        None,
        vec![Column {
            name: "stage1_pred".into(),
            values: preds.iter().map(|&v| Some(v)).collect(),
        }],
    )
}

fn write_prediction_csv(
    path: &Path,
    keys: &[(String, NaiveDate)],
    columns: &[(String, Vec<f64>)],
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let mut header = vec!["site_id".to_string(), "date".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    for (i, (site, date)) in keys.iter().enumerate() {
        let mut record = vec![site.clone(), date.format("%Y-%m-%d").to_string()];
        for (_, values) in columns {
            record.push(crate::ingest::format_value(values[i]));
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Prediction input: a site-day table (plus registry when two-stage needs
/// coordinates) or a grid specification assembled from the matrix tree.
pub enum PredictInput {
    Table {
        table: SiteDayTable,
        sites: Option<Vec<SiteRecord>>,
    },
    Grid(GridSpec),
}

/// Prediction output: keys plus one column per base model, the ensemble, and
/// stage2 when applicable.
#[derive(Debug)]
pub struct Predictions {
    pub site_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub path: PathBuf,
}

/// Replay preprocessing and the model chain on new inputs; writes
/// `predictions.csv` under training_output.
pub fn predict(
    config: &PipelineConfig,
    root: &Path,
    input: PredictInput,
    progress: &Progress,
) -> Result<Predictions> {
    config.validate()?;
    let output_dir = root.join(&config.training_output);
    let manifest = RunManifest::load(&output_dir.join(MANIFEST_FILE))?;
    manifest.verify(root)?;

    progress.stage("predict:read", 0.0);
    let (raw, sites) = match input {
        PredictInput::Table { table, sites } => (table, sites),
        PredictInput::Grid(spec) => {
            let matrix_root = config.matrix_root.as_ref().ok_or_else(|| {
                Error::Predict("grid prediction needs matrix_root in the config".into())
            })?;
            let tree = root.join(matrix_root);
            let registry = grid_points(&spec)?;
            let calendar = matrix_tree_calendar(&tree)?;
            let table = assemble_from_matrices(&tree, &registry, &calendar)?;
            (table, Some(registry))
        }
    };
    progress.stage("predict:read", 100.0);

    let state = load_state(&root.join(&config.imputation_models))?;
    progress.stage("predict:preprocess", 0.0);
    let prepped = apply_state(&raw, &state)?;
    progress.stage("predict:preprocess", 100.0);

    // extract in training schema order: the input CSV may list the same
    // covariates in a different order
    let (features, keys) = Dataset::features_in_order(&prepped, &state.schema)?;

    progress.stage("predict:models", 0.0);
    let models_dir = output_dir.join(MODELS_DIR);
    let stage1 = load_stage(&models_dir, config)?;
    let mut columns = stage1.predict_columns(&features)?;
    progress.stage("predict:models", 100.0);

    let stage2_dir = output_dir.join(STAGE2_DIR);
    if config.two_stage && stage2_dir.exists() {
        progress.stage("predict:stage2", 0.0);
        let sites = sites.ok_or_else(|| {
            Error::Predict(
                "two-stage prediction needs a site registry (sites.csv next to the input)".into(),
            )
        })?;
        let meta = Stage2Meta::load(&stage2_dir)?;
        let ens = columns.last().expect("ensemble column").1.clone();
        let pred_table = prediction_table(&keys, &ens)?;
        let augmented = augment_with_neighbor_predictions(
            &pred_table,
            "stage1_pred",
            &sites,
            meta.neighbor_count,
            meta.idw_power,
        )?;
        let neighbor: Vec<f64> = augmented
            .column(NEIGHBOR_COLUMN)
            .expect("augmentation adds the column")
            .values
            .iter()
            .map(|v| meta.normalize(v.expect("filled")))
            .collect();
        let mut features2 = features.clone();
        for (row, v) in features2.iter_mut().zip(&neighbor) {
            row.push(*v);
        }
        let stage2 = load_stage(&stage2_dir, config)?;
        let stage2_columns = stage2.predict_columns(&features2)?;
        columns.push((
            "stage2".to_string(),
            stage2_columns.last().expect("ensemble column").1.clone(),
        ));
        progress.stage("predict:stage2", 100.0);
    }

    let path = output_dir.join(PREDICTIONS_FILE);
    write_prediction_csv(&path, &keys, &columns)?;
    progress.stage("predict:done", 100.0);

    Ok(Predictions {
        site_ids: keys.iter().map(|(s, _)| s.clone()).collect(),
        dates: keys.iter().map(|(_, d)| *d).collect(),
        columns,
        path,
    })
}

fn load_stage(dir: &Path, config: &PipelineConfig) -> Result<StageModels> {
    let mut base = Vec::new();
    for &model_id in &config.models {
        let path = dir.join(format!("{}.model", model_id));
        let model = load_model(&path)?;
        if model.model_id() != model_id {
            return Err(Error::Predict(format!(
                "{} holds a {} model, expected {}",
                path.display(),
                model.model_id(),
                model_id
            )));
        }
        base.push((model_id, model));
    }
    let ensemble = load_ensemble(&dir.join("ensemble.model"))?;
    Ok(StageModels { base, ensemble })
}

/// Summary of a completed run for the `info` command.
pub fn run_info(config: &PipelineConfig, root: &Path) -> Result<String> {
    let output_dir = root.join(&config.training_output);
    let manifest = RunManifest::load(&output_dir.join(MANIFEST_FILE))?;
    let mut out = String::new();
    out.push_str(&format!("tool_version: {}\n", manifest.tool_version));
    out.push_str(&format!("seed: {}\n", manifest.seed));
    out.push_str(&format!(
        "models: {}\n",
        config
            .models
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    out.push_str(&format!("complete: {}\n", manifest.complete));
    out.push_str("stages:\n");
    for stage in &manifest.stages {
        out.push_str(&format!(
            "  {} ({} .. {})\n",
            stage.name, stage.started, stage.ended
        ));
    }
    out.push_str("artifacts:\n");
    for artifact in &manifest.artifacts {
        out.push_str(&format!(
            "  {}  sha256:{}\n",
            artifact.path, artifact.sha256
        ));
    }
    out.push_str("checkpoints:\n");
    for checkpoint in &manifest.checkpoints {
        out.push_str(&format!(
            "  {}  sha256:{}\n",
            checkpoint.path, checkpoint.sha256
        ));
    }
    Ok(out)
}

/// Coefficient of determination against observed values.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    1.0 - ss_res / (variance(observed) * observed.len() as f64)
}

/// Root-mean-square error.
pub fn rmse(observed: &[f64], predicted: &[f64]) -> f64 {
    let mse: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / observed.len() as f64;
    mse.sqrt()
}

/// Map keyed predictions for joins in tests and the two-stage evaluation.
pub fn keyed_column(
    predictions: &Predictions,
    column: &str,
) -> Option<BTreeMap<(String, NaiveDate), f64>> {
    let values = &predictions.columns.iter().find(|(n, _)| n == column)?.1;
    Some(
        predictions
            .site_ids
            .iter()
            .zip(&predictions.dates)
            .zip(values)
            .map(|((s, d), v)| ((s.clone(), *d), *v))
            .collect(),
    )
}
