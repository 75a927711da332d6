use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use cdc_core::checkpoint::read_checkpoint;
use cdc_core::data::read_dataset;
use cdc_core::report::RunReport;
use cdc_core::trainer::{harmonic_mean, initial_bank};
use cdc_core::TrainConfig;

fn cdc(args: &[&str]) -> Output {
    cdc_env(args, &[])
}

fn cdc_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdc"));
    cmd.args(args).env_remove("CDC_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("cdc runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset so train/eval tests stay fast in debug builds.
fn small_dataset(dir: &Path, name: &str, dim: usize) -> PathBuf {
    let path = dir.join(name);
    let dim = dim.to_string();
    let o = cdc(&[
        "gen",
        "--dim",
        &dim,
        "--relevant",
        "6",
        "--irrelevant",
        "6",
        "--base-classes",
        "3",
        "--new-classes",
        "3",
        "--shots",
        "8",
        "--test-per-class",
        "20",
        "--seed",
        "4",
        "--out",
        s(&path),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

fn bundled_dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/desk-small.cdcds")
}

fn value_after(text: &str, prefix: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix:?} line"));
    line[prefix.len()..].trim().parse().unwrap()
}

#[test]
fn gen_defaults_write_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.cdcds");
    let o = cdc(&["gen", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("CDCDS v1 d=64 C=10"));
    assert!(stdout(&o).contains("80 base-train"));
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let [a, b, c] = ["a", "b", "c"].map(|n| dir.path().join(n));
    for p in [&a, &b] {
        assert_eq!(
            code(&cdc(&[
                "gen",
                "--seed",
                "7",
                "--test-per-class",
                "5",
                "--out",
                s(p)
            ])),
            0
        );
    }
    assert_eq!(
        code(&cdc(&[
            "gen",
            "--seed",
            "8",
            "--test-per-class",
            "5",
            "--out",
            s(&c)
        ])),
        0
    );
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn gen_rejects_too_small_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let o = cdc(&[
        "gen",
        "--dim",
        "4",
        "--relevant",
        "8",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("dimension 4 too small"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn bad_flags_exit_with_usage_code() {
    assert_eq!(code(&cdc(&["gen", "--dim", "many"])), 2);
    assert_eq!(code(&cdc(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let ck = dir.path().join("c.bin");
    let o = cdc(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--channels",
        "wobble:1",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--channels"));
    let o = cdc(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--tau",
        "0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_precedence_is_flag_file_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let gen = |out: &Path, extra: &[&str], env: &[(&str, &str)]| {
        let mut args = vec!["gen", "--test-per-class", "3", "--out", s(out)];
        args.extend_from_slice(extra);
        assert_eq!(code(&cdc_env(&args, env)), 0);
        std::fs::read(out).unwrap()
    };
    let seven = gen(&p("seven"), &["--seed", "7"], &[]);
    assert_eq!(gen(&p("env"), &[], &[("CDC_SEED", "7")]), seven);
    assert_ne!(
        gen(&p("flag"), &["--seed", "1"], &[("CDC_SEED", "7")]),
        seven
    );

    let cfg = p("seed.toml");
    std::fs::write(&cfg, "[scm]\nseed = 7\n").unwrap();
    assert_eq!(
        gen(&p("file"), &["--config", s(&cfg)], &[("CDC_SEED", "3")]),
        seven
    );

    let o = cdc_env(&["gen", "--out", s(&p("bad"))], &[("CDC_SEED", "x")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("CDC_SEED"));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[scm]\ndim = 24\nrelevant = 4\nirrelevant = 4\ntest_per_class = 2\n",
    )
    .unwrap();
    let out = dir.path().join("d");
    assert_eq!(
        code(&cdc(&["gen", "--config", s(&cfg), "--out", s(&out)])),
        0
    );
    assert!(std::fs::read_to_string(&out)
        .unwrap()
        .starts_with("CDCDS v1 d=24 C=10\n"));
    assert_eq!(
        code(&cdc(&[
            "gen",
            "--config",
            s(&cfg),
            "--dim",
            "12",
            "--out",
            s(&out)
        ])),
        0
    );
    assert!(std::fs::read_to_string(&out)
        .unwrap()
        .starts_with("CDCDS v1 d=12 C=10\n"));

    std::fs::write(&cfg, "[scm]\ndimension = 24\n").unwrap();
    let o = cdc(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let ck = dir.path().join("c.bin");
    let o = cdc(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--epochs",
        "0",
        "--seed",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = read_dataset(&data).unwrap();
    let expected = initial_bank(
        &ds,
        &TrainConfig {
            seed: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(read_checkpoint(&ck).unwrap(), expected);
    let report =
        RunReport::from_toml(&std::fs::read_to_string(ck.with_extension("report.toml")).unwrap())
            .unwrap();
    assert!(report.history.epochs.is_empty());
    assert!(report.notes.iter().any(|n| n.contains("zero epochs")));
}

#[test]
fn single_template_with_beta_warns() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let ck = dir.path().join("c.bin");
    let o = cdc(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--m",
        "1",
        "--beta",
        "5",
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0);
    let err = stderr(&o);
    assert_eq!(
        err.matches("decoupling term is inactive").count(),
        1,
        "{err}"
    );
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let ck = dir.path().join("c.bin");
    let report = dir.path().join("train.toml");
    let common = ["--tau", "0.1", "--epochs", "3"];
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--report",
        s(&report),
    ];
    args.extend_from_slice(&common);
    let o = cdc(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trained = RunReport::from_toml(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(trained.history.epochs.len(), 3);
    assert_eq!(trained.per_template.len(), 4);
    assert!(trained.similarity.is_some());

    let eval_report = dir.path().join("eval.toml");
    let o = cdc(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--tau",
        "0.1",
        "--report",
        s(&eval_report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let (base, new, hm) = (
        value_after(&out, "base "),
        value_after(&out, "new "),
        value_after(&out, "hm "),
    );
    assert!((harmonic_mean(base, new) - hm).abs() <= 0.01, "{out}");
    let evaluated = RunReport::from_toml(&std::fs::read_to_string(&eval_report).unwrap()).unwrap();
    assert_eq!(evaluated.eval, trained.eval);

    let o = cdc(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--tau",
        "0.1",
        "--per-template-only",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(!out.lines().any(|l| l.starts_with("hm ")), "{out}");
    assert_eq!(
        out.lines()
            .filter(|l| l.trim_start().starts_with(char::is_numeric))
            .count(),
        4
    );
}

#[test]
fn eval_rejects_mismatched_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let data16 = small_dataset(dir.path(), "d16.cdcds", 16);
    let data20 = small_dataset(dir.path(), "d20.cdcds", 20);
    let ck = dir.path().join("c.bin");
    assert_eq!(
        code(&cdc(&[
            "train",
            "--data",
            s(&data16),
            "--checkpoint",
            s(&ck),
            "--epochs",
            "0"
        ])),
        0
    );
    let o = cdc(&["eval", "--data", s(&data20), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 5);
    let err = stderr(&o);
    assert!(err.contains("d=16") && err.contains("d=20"), "{err}");
}

#[test]
fn unreadable_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("c.bin");
    let missing = dir.path().join("missing.cdcds");
    assert_eq!(
        code(&cdc(&[
            "train",
            "--data",
            s(&missing),
            "--checkpoint",
            s(&ck)
        ])),
        3
    );

    let bad = dir.path().join("bad.cdcds");
    std::fs::write(&bad, "CDCDS v2 d=3 C=2\n").unwrap();
    let o = cdc(&["train", "--data", s(&bad), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let data = small_dataset(dir.path(), "d.cdcds", 16);
    std::fs::write(&ck, b"NOPE").unwrap();
    assert_eq!(
        code(&cdc(&["eval", "--data", s(&data), "--checkpoint", s(&ck)])),
        3
    );
}

#[test]
fn sweep_validates_axis_and_values() {
    let o = cdc(&["sweep", "--axis", "depth", "--values", "1,2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("depth"));
    assert_eq!(code(&cdc(&["sweep", "--axis", "m", "--values", ""])), 2);
    assert_eq!(code(&cdc(&["sweep", "--axis", "m", "--values", " , "])), 2);
    assert_eq!(
        code(&cdc(&["sweep", "--axis", "beta", "--values", "high"])),
        2
    );
}

#[test]
fn sweep_over_template_counts_prints_one_row_each() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let report = dir.path().join("sweep.toml");
    let o = cdc(&[
        "sweep",
        "--axis",
        "m",
        "--values",
        "1,2,4",
        "--seeds",
        "0,1",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--tau",
        "0.1",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for v in ["1 ", "2 ", "4 "] {
        assert_eq!(out.lines().filter(|l| l.starts_with(v)).count(), 1, "{out}");
    }
    let text = std::fs::read_to_string(&report).unwrap();
    let parsed: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(parsed["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn ablation_none_row_is_the_averaging_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let report = dir.path().join("sweep.toml");
    let o = cdc(&[
        "sweep",
        "--axis",
        "ablation",
        "--values",
        "none",
        "--seeds",
        "3",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--tau",
        "0.1",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let parsed: toml::Table = toml::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let row = &parsed["rows"].as_array().unwrap()[0];

    let ck = dir.path().join("c.bin");
    let train_report = dir.path().join("t.toml");
    let o = cdc(&[
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--report",
        s(&train_report),
        "--seed",
        "3",
        "--epochs",
        "2",
        "--tau",
        "0.1",
        "--classifier",
        "ce",
        "--fusion",
        "mean-softmax",
        "--beta",
        "0",
        "--gamma",
        "0",
        "--channels",
        "",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = RunReport::from_toml(&std::fs::read_to_string(&train_report).unwrap())
        .unwrap()
        .eval
        .unwrap();
    assert_eq!(row["base"].as_float().unwrap(), eval.base_accuracy);
    assert_eq!(row["new"].as_float().unwrap(), eval.new_accuracy);
}

#[test]
fn default_training_on_bundled_dataset_finishes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("c.bin");
    let start = Instant::now();
    let o = cdc(&[
        "train",
        "--data",
        s(&bundled_dataset()),
        "--checkpoint",
        s(&ck),
    ]);
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(secs < 120.0, "{secs:.1}s");
}

#[test]
fn bundled_config_trains_the_desk_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let ck = dir.path().join("c.bin");
    let o = cdc(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&bundled_dataset()),
        "--checkpoint",
        s(&ck),
        "--epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report =
        RunReport::from_toml(&std::fs::read_to_string(ck.with_extension("report.toml")).unwrap())
            .unwrap();
    assert_eq!(report.train.tau, 0.05);
    assert_eq!(report.train.epochs, 2);
}

#[test]
fn train_echoes_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "d.cdcds", 16);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nbeta = 2.5\ngamma = 0.5\n").unwrap();
    let ck = dir.path().join("c.bin");
    let o = cdc(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--gamma",
        "0.25",
        "--epochs",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let block: String = out
        .lines()
        .take_while(|l| !l.starts_with("zero epochs"))
        .map(|l| format!("{l}\n"))
        .collect();
    let parsed: toml::Table = toml::from_str(&block).unwrap();
    let echoed: TrainConfig = parsed["train"].clone().try_into().unwrap();
    let expected = TrainConfig {
        beta: 2.5,
        gamma: 0.25,
        epochs: 0,
        ..TrainConfig::default()
    };
    assert_eq!(echoed, expected);
}
