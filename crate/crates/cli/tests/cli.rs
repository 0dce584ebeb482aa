//! Black-box tests of the `plume` binary: exit codes, the documented
//! three-call workflow, progress output, and quiet mode.

use std::path::Path;
use std::process::{Command, Output};

fn plume(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plume"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn workflow_synth_genconfig_train_predict() {
    let dir = tempfile::tempdir().unwrap();

    let out = plume(
        dir.path(),
        &[
            "synth",
            "--sites",
            "8",
            "--days",
            "6",
            "--noise-sd",
            "1.0",
            "--out",
            "input_data",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    // fast model settings so the test stays quick
    for (file, body) in [
        (
            "nn.yml",
            "hidden_layers: [4]\nepochs: 4\nlearning_rate: 0.05\nbatch_size: 16\nfolds: 2\n",
        ),
        (
            "forest.yml",
            "n_trees: 5\nmax_depth: 4\nmin_leaf: 2\nfeature_fraction: 0.8\nfolds: 2\n",
        ),
        (
            "gradboost.yml",
            "n_trees: 5\nlearning_rate: 0.3\nmax_depth: 2\nsubsample_fraction: 1\nfolds: 2\n",
        ),
    ] {
        std::fs::write(dir.path().join(file), body).unwrap();
    }

    let out = plume(dir.path(), &["gen-config"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(dir.path().join("config.yml").exists());

    let out = plume(dir.path(), &["train", "--threads", "2"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(dir.path().join("training_output/manifest.yml").exists());
    // progress lines are machine-greppable
    assert!(
        stderr_of(&out).lines().any(|l| l.starts_with("STAGE ")),
        "{}",
        stderr_of(&out)
    );

    let out = plume(dir.path(), &["predict"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let predictions = dir.path().join("training_output/predictions.csv");
    assert!(predictions.exists());
    let header = std::fs::read_to_string(&predictions)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "site_id,date,nn,forest,gradboost,ensemble");

    let out = plume(dir.path(), &["info"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("seed: 42"), "{}", text);
    assert!(text.contains("sha256:"), "{}", text);
}

#[test]
fn train_without_config_exits_1_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("config.yml"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn unknown_subcommand_exits_1_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(dir.path(), &["transmogrify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).to_lowercase().contains("usage"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn unknown_flag_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_override_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(dir.path(), &["gen-config", "--set", "models=svm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("unknown model identifier"));
}

#[test]
fn quiet_suppresses_progress_but_not_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(
        dir.path(),
        &[
            "--quiet", "synth", "--sites", "4", "--days", "3", "--out", "a",
        ],
    );
    assert!(out.status.success());
    assert!(stderr_of(&out).is_empty(), "{}", stderr_of(&out));
    assert!(dir.path().join("a/data.csv").exists());

    // same generation without --quiet produces identical bytes
    let out = plume(
        dir.path(),
        &["synth", "--sites", "4", "--days", "3", "--out", "b"],
    );
    assert!(out.status.success());
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synth_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["x", "y"] {
        let out = plume(
            dir.path(),
            &[
                "synth", "--sites", "5", "--days", "4", "--seed", "7", "--out", name,
            ],
        );
        assert!(out.status.success());
    }
    for file in ["data.csv", "sites.csv"] {
        let x = std::fs::read(dir.path().join("x").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("y").join(file)).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn assemble_then_preprocess_from_matrix_tree() {
    let dir = tempfile::tempdir().unwrap();

    // minimal matrix tree: 2 sites x 3 days, outcome plus one covariate
    let tree = dir.path().join("tree");
    for (name, rows) in [
        ("MonitorData", "5.5,5.6,5.7\n6.1,6.0,"),
        ("aod", "0.4,0.5,0.6\n0.7,,0.9"),
    ] {
        let var_dir = tree.join(name);
        std::fs::create_dir_all(&var_dir).unwrap();
        std::fs::write(
            var_dir.join("manifest.yml"),
            format!(
                "variable: {}\nsites:\n- 'a'\n- 'b'\ndates:\n- 2012-01-01\n- 2012-01-02\n- 2012-01-03\n",
                name
            ),
        )
        .unwrap();
        std::fs::write(var_dir.join("values.csv"), rows).unwrap();
    }
    std::fs::write(
        tree.join("sites.csv"),
        "site_id,lon,lat\na,-70.1,42.3\nb,-70.5,42.9\n",
    )
    .unwrap();

    let out = plume(
        dir.path(),
        &[
            "gen-config",
            "--set",
            "matrix_root=tree",
            "--set",
            "impute=false",
            "--set",
            "transform=false",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let out = plume(dir.path(), &["assemble"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = dir.path().join("input_data/data.csv");
    assert!(csv.exists());
    assert!(dir.path().join("input_data/sites.csv").exists());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("site_id,date,MonitorData,aod"), "{}", text);
    assert_eq!(text.lines().count(), 7); // header + 2 sites x 3 days

    let out = plume(dir.path(), &["preprocess"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(dir.path().join("mid_process_data/prepped.csv").exists());
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = plume(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-config"));
}
