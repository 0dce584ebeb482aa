//! End-to-end pipeline tests: train + predict round trips, determinism,
//! artifact layout, two-stage behavior, and grid prediction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plume_core::config::{gen_config, PipelineConfig};
use plume_core::ingest::{read_csv_data, read_sites};
use plume_core::interpolate::{grid_points, GridSpec};
use plume_core::manifest::{sha256_file, RunManifest};
use plume_core::pipeline::{self, predict, train, PredictInput};
use plume_core::synth::{generate, write_dataset, SynthSpec};
use plume_core::Progress;

fn quiet() -> Progress {
    Progress::quiet()
}

/// Lay out a run directory: input data, site registry, config, fast model
/// configs. Returns (root, config).
fn setup_run(dir: &Path, extra_overrides: &[(&str, &str)]) -> PipelineConfig {
    let data = generate(&SynthSpec {
        n_sites: 12,
        n_days: 10,
        noise_sd: 1.0,
        seed: 21,
    })
    .unwrap();
    write_dataset(&data, &dir.join("input_data")).unwrap();

    std::fs::write(
        dir.join("nn.yml"),
        "hidden_layers: [8]\nepochs: 8\nlearning_rate: 0.05\nbatch_size: 32\nfolds: 3\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("forest.yml"),
        "n_trees: 12\nmax_depth: 6\nmin_leaf: 2\nfeature_fraction: 0.8\nfolds: 3\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("gradboost.yml"),
        "n_trees: 20\nlearning_rate: 0.2\nmax_depth: 3\nsubsample_fraction: 0.9\nfolds: 3\n",
    )
    .unwrap();

    let mut overrides: Vec<(String, String)> =
        vec![("csv_path".to_string(), "input_data/data.csv".to_string())];
    for (k, v) in extra_overrides {
        overrides.push((k.to_string(), v.to_string()));
    }
    gen_config(&overrides, dir).unwrap()
}

fn walk_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if !dir.exists() {
        return out;
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn train_then_predict_replays_training_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[]);
    let manifest = train(&config, dir.path(), &quiet()).unwrap();
    assert!(manifest.complete);

    let models_dir = dir.path().join("training_output/models");
    for name in [
        "nn.model",
        "forest.model",
        "gradboost.model",
        "ensemble.model",
    ] {
        assert!(models_dir.join(name).exists(), "{} missing", name);
    }

    // predict on the training inputs
    let table = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    let sites = read_sites(&dir.path().join("input_data/sites.csv")).unwrap();
    let predictions = predict(
        &config,
        dir.path(),
        PredictInput::Table {
            table,
            sites: Some(sites),
        },
        &quiet(),
    )
    .unwrap();

    // header order: per-model columns then ensemble
    let names: Vec<&str> = predictions
        .columns
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    assert_eq!(names, vec!["nn", "forest", "gradboost", "ensemble"]);

    // stored training-time predictions match the replay (training rows only:
    // synthetic data has no missing outcomes, so all rows align)
    let train_preds =
        read_prediction_csv(&dir.path().join("training_output/train_predictions.csv"));
    for (name, values) in &predictions.columns {
        for ((site, date), value) in predictions
            .site_ids
            .iter()
            .zip(&predictions.dates)
            .map(|(s, d)| (s.clone(), *d))
            .zip(values)
        {
            let stored = train_preds[&(site.clone(), date, name.clone())];
            assert!(
                (stored - value).abs() < 1e-12,
                "{} at ({}, {}): {} vs {}",
                name,
                site,
                date,
                stored,
                value
            );
        }
    }

    // the output csv has the documented header
    let first_line = std::fs::read_to_string(&predictions.path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(first_line, "site_id,date,nn,forest,gradboost,ensemble");
}

fn read_prediction_csv(path: &Path) -> BTreeMap<(String, chrono::NaiveDate, String), f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let mut out = BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let site = cells[0].to_string();
        let date = chrono::NaiveDate::parse_from_str(cells[1], "%Y-%m-%d").unwrap();
        for (i, name) in header.iter().enumerate().skip(2) {
            out.insert(
                (site.clone(), date, name.clone()),
                cells[i].parse().unwrap(),
            );
        }
    }
    out
}

#[test]
fn single_model_run_produces_single_input_gam() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("models", "forest")]);
    train(&config, dir.path(), &quiet()).unwrap();
    let models_dir = dir.path().join("training_output/models");
    let files: Vec<String> = std::fs::read_dir(&models_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let mut sorted = files.clone();
    sorted.sort();
    assert_eq!(sorted, vec!["ensemble.model", "forest.model"]);
}

#[test]
fn two_stage_flag_controls_stage2_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("models", "forest,gradboost")]);
    train(&config, dir.path(), &quiet()).unwrap();
    assert!(!dir.path().join("training_output/stage2").exists());

    let dir2 = tempfile::tempdir().unwrap();
    let config2 = setup_run(
        dir2.path(),
        &[("models", "forest,gradboost"), ("two_stage", "true")],
    );
    train(&config2, dir2.path(), &quiet()).unwrap();
    let stage2 = dir2.path().join("training_output/stage2");
    for name in [
        "forest.model",
        "gradboost.model",
        "ensemble.model",
        "meta.yml",
    ] {
        assert!(stage2.join(name).exists(), "{} missing", name);
    }

    // stage-2 prediction emits the extra column
    let table = read_csv_data(&dir2.path().join("input_data/data.csv")).unwrap();
    let sites = read_sites(&dir2.path().join("input_data/sites.csv")).unwrap();
    let predictions = predict(
        &config2,
        dir2.path(),
        PredictInput::Table {
            table,
            sites: Some(sites),
        },
        &quiet(),
    )
    .unwrap();
    let names: Vec<&str> = predictions
        .columns
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    assert_eq!(names, vec!["forest", "gradboost", "ensemble", "stage2"]);
}

#[test]
fn identical_runs_produce_identical_artifacts() {
    let run = |seed_dir: &Path| -> Vec<(String, String)> {
        let config = setup_run(
            seed_dir,
            &[("models", "forest,gradboost"), ("two_stage", "true")],
        );
        train(&config, seed_dir, &quiet()).unwrap();
        walk_files(&seed_dir.join("training_output"))
            .into_iter()
            .map(|p| {
                let rel = p
                    .strip_prefix(seed_dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                let hash = sha256_file(&p).unwrap();
                (rel, hash)
            })
            .collect()
    };
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = run(a_dir.path());
    let b = run(b_dir.path());
    assert_eq!(a.len(), b.len());
    for ((pa, ha), (pb, hb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        if pa.ends_with("manifest.yml") {
            // timing lines are the documented nondeterministic exception
            let strip = |dir: &Path| {
                std::fs::read_to_string(dir.join("training_output/manifest.yml"))
                    .unwrap()
                    .lines()
                    .filter(|l| {
                        !l.trim_start().starts_with("started:")
                            && !l.trim_start().starts_with("ended:")
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(a_dir.path()), strip(b_dir.path()));
        } else {
            assert_eq!(ha, hb, "{} differs between identical runs", pa);
        }
    }
}

#[test]
fn manifest_references_every_training_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("two_stage", "true")]);
    let manifest = train(&config, dir.path(), &quiet()).unwrap();
    for file in walk_files(&dir.path().join("training_output")) {
        let rel = file
            .strip_prefix(dir.path())
            .unwrap()
            .to_string_lossy()
            .replace('\\', "/");
        if rel.ends_with("manifest.yml") {
            continue;
        }
        assert!(manifest.references(&rel), "{} not referenced", rel);
    }
}

#[test]
fn predict_never_mutates_training_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[]);
    train(&config, dir.path(), &quiet()).unwrap();

    let before: BTreeMap<PathBuf, String> = walk_files(&dir.path().join("training_output"))
        .into_iter()
        .map(|p| (p.clone(), sha256_file(&p).unwrap()))
        .collect();

    let table = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    predict(
        &config,
        dir.path(),
        PredictInput::Table { table, sites: None },
        &quiet(),
    )
    .unwrap();

    for (path, hash) in &before {
        assert_eq!(
            &sha256_file(path).unwrap(),
            hash,
            "{} changed",
            path.display()
        );
    }
}

#[test]
fn predict_rejects_missing_covariate_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[]);
    train(&config, dir.path(), &quiet()).unwrap();

    // drop one covariate from the input
    let text = std::fs::read_to_string(dir.path().join("input_data/data.csv")).unwrap();
    let dropped: Vec<String> = text
        .lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            cells.remove(3); // a covariate column
            cells.join(",")
        })
        .collect();
    let crippled = dir.path().join("crippled.csv");
    std::fs::write(&crippled, dropped.join("\n")).unwrap();

    let table = read_csv_data(&crippled).unwrap();
    let err = predict(
        &config,
        dir.path(),
        PredictInput::Table { table, sites: None },
        &quiet(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("missing"), "{}", err);
}

#[test]
fn predict_handles_permuted_input_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("models", "forest")]);
    train(&config, dir.path(), &quiet()).unwrap();

    let canonical = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    let reference = predict(
        &config,
        dir.path(),
        PredictInput::Table {
            table: canonical.clone(),
            sites: None,
        },
        &quiet(),
    )
    .unwrap();

    // same data, covariate columns reversed in the file
    let text = std::fs::read_to_string(dir.path().join("input_data/data.csv")).unwrap();
    let reversed: Vec<String> = text
        .lines()
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            let (keys, covs) = cells.split_at(3);
            let mut reordered: Vec<&str> = keys.to_vec();
            reordered.extend(covs.iter().rev());
            reordered.join(",")
        })
        .collect();
    let permuted_path = dir.path().join("permuted.csv");
    std::fs::write(&permuted_path, reversed.join("\n")).unwrap();
    let permuted = read_csv_data(&permuted_path).unwrap();

    let out = predict(
        &config,
        dir.path(),
        PredictInput::Table {
            table: permuted,
            sites: None,
        },
        &quiet(),
    )
    .unwrap();
    for ((name_a, col_a), (name_b, col_b)) in reference.columns.iter().zip(&out.columns) {
        assert_eq!(name_a, name_b);
        for (a, b) in col_a.iter().zip(col_b) {
            assert_eq!(a.to_bits(), b.to_bits(), "{}: {} vs {}", name_a, a, b);
        }
    }
}

#[test]
fn predict_detects_tampered_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("models", "forest")]);
    train(&config, dir.path(), &quiet()).unwrap();

    let model_path = dir.path().join("training_output/models/forest.model");
    let mut contents = std::fs::read_to_string(&model_path).unwrap();
    contents.push('\n');
    std::fs::write(&model_path, contents).unwrap();

    let table = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    let err = predict(
        &config,
        dir.path(),
        PredictInput::Table { table, sites: None },
        &quiet(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("hash mismatch"), "{}", err);
}

#[test]
fn failed_stage_marks_manifest_incomplete_and_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("two_stage", "true")]);
    // remove the site registry so the stage2 stage fails
    std::fs::remove_file(dir.path().join("input_data/sites.csv")).unwrap();
    let err = train(&config, dir.path(), &quiet()).unwrap_err();
    assert!(err.to_string().contains("stage2"), "{}", err);

    let manifest = RunManifest::load(&dir.path().join("training_output/manifest.yml")).unwrap();
    assert!(!manifest.complete);
}

#[test]
fn grid_prediction_assembles_from_matrix_tree() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(
        dir.path(),
        &[("models", "forest"), ("matrix_root", "grid_tree")],
    );
    train(&config, dir.path(), &quiet()).unwrap();

    // build a matrix tree for a 2x2 grid carrying the training covariates
    let spec = GridSpec::new(-70.5, 42.5, 1.0, 2, 2).unwrap();
    let grid = grid_points(&spec).unwrap();
    let dates = ["2012-01-01", "2012-01-02"];
    let tree = dir.path().join("grid_tree");
    let training = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    for column in training.columns() {
        let var_dir = tree.join(&column.name);
        std::fs::create_dir_all(&var_dir).unwrap();
        let sites_yaml: String = grid
            .iter()
            .map(|s| format!("- '{}'\n", s.site_id))
            .collect();
        let dates_yaml: String = dates.iter().map(|d| format!("- {}\n", d)).collect();
        std::fs::write(
            var_dir.join("manifest.yml"),
            format!(
                "variable: {}\nsites:\n{}dates:\n{}",
                column.name, sites_yaml, dates_yaml
            ),
        )
        .unwrap();
        // constant plausible values per variable
        let observed: Vec<f64> = column.values.iter().flatten().copied().collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let rows: Vec<String> = (0..grid.len())
            .map(|i| {
                (0..dates.len())
                    .map(|j| format!("{}", mean + 0.01 * (i + j) as f64))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        std::fs::write(var_dir.join("values.csv"), rows.join("\n")).unwrap();
    }

    let predictions = predict(&config, dir.path(), PredictInput::Grid(spec), &quiet()).unwrap();
    assert_eq!(predictions.site_ids.len(), 8); // 4 cells x 2 days
    assert!(predictions.site_ids.iter().all(|s| s.starts_with("g_")));
    let names: Vec<&str> = predictions
        .columns
        .iter()
        .map(|(n, _)| n.as_str())
        .collect();
    assert_eq!(names, vec!["forest", "ensemble"]);
}

#[test]
fn retrain_reuses_prepped_data_and_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[("models", "forest")]);
    train(&config, dir.path(), &quiet()).unwrap();
    let first_model = sha256_file(&dir.path().join("training_output/models/forest.model")).unwrap();

    // second run takes the prepped-data-present path and reproduces the model
    let manifest = train(&config, dir.path(), &quiet()).unwrap();
    assert!(manifest.complete);
    let second_model =
        sha256_file(&dir.path().join("training_output/models/forest.model")).unwrap();
    assert_eq!(first_model, second_model);

    let table = read_csv_data(&dir.path().join("input_data/data.csv")).unwrap();
    let predictions = predict(
        &config,
        dir.path(),
        PredictInput::Table { table, sites: None },
        &quiet(),
    )
    .unwrap();
    assert_eq!(predictions.columns.len(), 2);
}

#[test]
fn train_from_external_prepped_data_without_stages() {
    let dir = tempfile::tempdir().unwrap();
    // a fully observed table dropped directly at the training_data path,
    // with every preprocessing flag off and no raw csv at all
    let data = generate(&SynthSpec {
        n_sites: 10,
        n_days: 8,
        noise_sd: 0.5,
        seed: 77,
    })
    .unwrap();
    let complete = {
        // replace the masked covariate with a fully observed copy
        let col = data.table.column("cov_lin").unwrap();
        let filled: Vec<Option<f64>> = col
            .values
            .iter()
            .map(|v| Some(v.unwrap_or(0.0)))
            .collect();
        data.table.with_column_values("cov_lin", filled).unwrap()
    };
    std::fs::create_dir_all(dir.path().join("mid_process_data")).unwrap();
    plume_core::ingest::write_table_csv(
        &complete,
        &dir.path().join("mid_process_data/prepped.csv"),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("forest.yml"),
        "n_trees: 8\nmax_depth: 5\nmin_leaf: 2\nfeature_fraction: 1\nfolds: 3\n",
    )
    .unwrap();
    let config = gen_config(
        &[
            ("models".into(), "forest".into()),
            ("normalize".into(), "false".into()),
            ("transform".into(), "false".into()),
            ("impute".into(), "false".into()),
        ],
        dir.path(),
    )
    .unwrap();

    train(&config, dir.path(), &quiet()).unwrap();
    // a no-op state was synthesized so prediction can replay
    assert!(dir
        .path()
        .join("imputation_models/preprocess_state.yml")
        .exists());
    let predictions = predict(
        &config,
        dir.path(),
        PredictInput::Table {
            table: complete,
            sites: None,
        },
        &quiet(),
    )
    .unwrap();
    assert_eq!(predictions.columns.len(), 2);
}

#[test]
fn concurrent_lock_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup_run(dir.path(), &[]);
    let lock_dir = dir.path().join("training_output");
    std::fs::create_dir_all(&lock_dir).unwrap();
    std::fs::write(lock_dir.join(".lock"), "").unwrap();
    let err = train(&config, dir.path(), &quiet()).unwrap_err();
    assert!(err.to_string().contains("locked"), "{}", err);
}

#[test]
fn r_squared_and_rmse_sanity() {
    let y = vec![1.0, 2.0, 3.0, 4.0];
    assert!((pipeline::r_squared(&y, &y) - 1.0).abs() < 1e-12);
    let mean = vec![2.5; 4];
    assert!(pipeline::r_squared(&y, &mean).abs() < 1e-12);
    assert!((pipeline::rmse(&y, &mean) - (1.25f64).sqrt()).abs() < 1e-12);
}
