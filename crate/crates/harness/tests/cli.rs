use std::fs;
use std::path::Path;
use std::process::Command;

use dmtl_core::datagen::{generate, write_csv_tasks, GenConfig, TaskKind};
use dmtl_core::TaskDataset;

fn dmtl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dmtl"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &std::process::Output) -> i32 {
    out.status.code().unwrap()
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("spec.in.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_run_and_summarize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = dmtl(&[
        "gen",
        "--p",
        "6",
        "--m",
        "4",
        "--n",
        "15",
        "--r",
        "2",
        "--corr-decay",
        "0.5",
        "--task",
        "classification",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "meta.json",
        "task_1.csv",
        "task_4.csv",
        "wstar.csv",
        "utrue.csv",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }

    let spec = write_spec(
        tmp.path(),
        &format!(
            r#"{{"data": {{"dataset": {{"path": {:?}}}}}, "solvers": ["dgsp", "svd_truncate"], "seeds": [1, 2],
                "epsilons": [0.5], "mc_samples": 200}}"#,
            data
        ),
    );
    let run_dir = tmp.path().join("run");
    let out = dmtl(&["run", "--spec", &spec, "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("trace_dgsp_seed2.csv").exists());
    assert!(run_dir.join("trace_best_rep_seed1.csv").exists());

    let again = tmp.path().join("again.csv");
    let out = dmtl(&[
        "summarize",
        "--in",
        run_dir.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(&again).unwrap(),
        fs::read(run_dir.join("summary.csv")).unwrap()
    );
    assert!(fs::read_to_string(&again)
        .unwrap()
        .contains("rounds_to_eps_0.5"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let o = out_dir.to_str().unwrap();
    let bad = [
        r#"{"data": {"generate": {"n": 5, "p": 4, "m": 3, "r": 9, "corr_decay": 1.0, "task_kind": "regression"}}, "solvers": ["local"], "seeds": [1]}"#,
        r#"{"data": {"generate": {"n": 5, "p": 4, "m": 3, "r": 1, "corr_decay": 1.0, "task_kind": "regression"}}, "solvers": [], "seeds": [1]}"#,
        r#"{"data": {"generate": {"n": 5, "p": 4, "m": 3, "r": 1, "corr_decay": 1.0, "task_kind": "regression"}}, "solvers": ["local"], "seeds": [1, 1]}"#,
        r#"{"data": {"dataset": {"path": "/nonexistent/dir"}}, "solvers": ["local"], "seeds": [1]}"#,
        r#"{"solvers": ["local"]"#,
    ];
    for body in bad {
        let spec = write_spec(tmp.path(), body);
        let out = dmtl(&["run", "--spec", &spec, "--out", o]);
        assert_eq!(
            code(&out),
            2,
            "{body}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = dmtl(&[
        "gen",
        "--p",
        "3",
        "--m",
        "3",
        "--n",
        "5",
        "--r",
        "4",
        "--task",
        "regression",
        "--out",
        o,
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let inst = generate(&GenConfig::new(12, 4, 3, 1, 1.0, TaskKind::Regression, 1)).unwrap();
    let mut tasks = inst.train;
    let mut y = tasks[0].responses().clone();
    y[3] = 1e300;
    tasks[0] = TaskDataset::new(0, tasks[0].features().clone(), y).unwrap();
    write_csv_tasks(&data, &tasks, TaskKind::Regression, None, None).unwrap();
    let spec = write_spec(
        tmp.path(),
        &format!(
            r#"{{"data": {{"dataset": {{"path": {data:?}}}}}, "solvers": ["acc_prox_gd"], "seeds": [1], "tune": false}}"#
        ),
    );
    let run_dir = tmp.path().join("run");
    let out = dmtl(&["run", "--spec", &spec, "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(run_dir.join("trace_acc_prox_gd_seed1.csv")).unwrap();
    assert!(trace.lines().last().unwrap().contains("diverged"));
}
