use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tce(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tce"));
    cmd.args(args).env_remove("TCE_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path, seed: &str) -> String {
    let out = tce(
        &[
            "gen-data",
            "--attrs",
            "4",
            "--objs",
            "3",
            "--feature-dim",
            "5",
            "--per-concept",
            "4",
            "--word-dim",
            "4",
            "--seed",
            seed,
            "--out",
            s(dir),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("data.txt").to_str().unwrap().to_string()
}

const FAST: [&str; 8] = [
    "--epochs",
    "2",
    "--set",
    "latent_dim=4",
    "--set",
    "hidden_dim=4",
    "--set",
    "visprod_hidden=4",
];

#[test]
fn invalid_seen_fraction_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tce(&["gen-data", "--seen-frac", "1.2", "--out", s(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seen-frac"));
}

#[test]
fn train_eval_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir.path().join("d"), "1");
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", s(&run)];
    args.extend(FAST);
    let out = tce(&args, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run_manifest.txt", "model.ckpt", "train_log.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ev = dir.path().join("ev");
    let out = tce(
        &[
            "eval",
            "--checkpoint",
            s(&run.join("model.ckpt")),
            "--data",
            &data,
            "--out",
            s(&ev),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), metrics);
    assert!(fs::read_to_string(ev.join("curve.csv"))
        .unwrap()
        .starts_with("bias,open_seen,open_unseen\n"));

    let table = dir.path().join("table.csv");
    let spec = format!("tce={}", s(&ev.join("metrics.csv")));
    let out = tce(&["report", &spec, "--out", s(&table)], &[]);
    assert!(out.status.success());
    let t = fs::read_to_string(&table).unwrap();
    let mut lines = t.lines();
    assert_eq!(
        lines.next(),
        Some("run,closed_unseen,open_unseen,open_seen,unseen_hm,all_hm,auc,attr_acc,obj_acc")
    );
    assert!(lines.next().unwrap().starts_with("tce,"));
}

#[test]
fn run_manifest_is_written_before_loading_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let missing = dir.path().join("missing.txt");
    let out = tce(
        &["train", "--data", s(&missing), "--epochs", "3", "--out", s(&run)],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let manifest = fs::read_to_string(run.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("epochs = 3"));
    // the manifest doubles as a configuration file
    let body: String = manifest
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let c = tce_core::config::TrainConfig::from_text(&body).unwrap();
    assert_eq!(c.epochs, 3);
}

#[test]
fn seed_precedence_flag_then_file_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    let missing = dir.path().join("none.txt");
    let seed_of = |extra: &[&str], envs: &[(&str, &str)], name: &str| {
        let run = dir.path().join(name);
        let mut args = vec!["train", "--data", s(&missing), "--out", s(&run)];
        args.extend_from_slice(extra);
        tce(&args, envs);
        let m = fs::read_to_string(run.join("run_manifest.txt")).unwrap();
        m.lines().find_map(|l| l.strip_prefix("seed = ")).unwrap().to_string()
    };
    fs::write(&cfg, "seed = 11\n").unwrap();
    assert_eq!(seed_of(&[], &[], "a"), "0");
    assert_eq!(seed_of(&[], &[("TCE_SEED", "5")], "b"), "5");
    assert_eq!(seed_of(&["--config", s(&cfg)], &[("TCE_SEED", "5")], "c"), "11");
    assert_eq!(
        seed_of(&["--config", s(&cfg), "--seed", "9"], &[("TCE_SEED", "5")], "d"),
        "9"
    );
}

#[test]
fn mismatched_checkpoint_is_a_compat_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_data(&dir.path().join("a"), "1");
    let other = dir.path().join("b");
    let out = tce(
        &[
            "gen-data",
            "--attrs",
            "5",
            "--objs",
            "3",
            "--feature-dim",
            "5",
            "--per-concept",
            "2",
            "--out",
            s(&other),
        ],
        &[],
    );
    assert!(out.status.success());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", &a, "--out", s(&run)];
    args.extend(FAST);
    assert!(tce(&args, &[]).status.success());
    let out = tce(
        &[
            "eval",
            "--checkpoint",
            s(&run.join("model.ckpt")),
            "--data",
            s(&other.join("data.txt")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir.path().join("d"), "2");
    let run = dir.path().join("run");
    let out = tce(
        &[
            "train",
            "--data",
            &data,
            "--out",
            s(&run),
            "--epochs",
            "20",
            "--lr",
            "1e300",
            "--set",
            "lr_attr_table=1e300",
            "--set",
            "latent_dim=4",
            "--set",
            "hidden_dim=4",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn ablation_writes_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir.path().join("d"), "3");
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", s(&run), "--ablation", "table3"];
    args.extend(FAST);
    let out = tce(&args, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let out = tce(
        &["train", "--data", &data, "--out", s(&run), "--ablation", "table9"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_counts_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "gen-data".to_string(),
            "--attrs".into(),
            "16".into(),
            "--objs".into(),
            "12".into(),
            "--seen-frac".into(),
            "0.6".into(),
            "--per-concept".into(),
            "50".into(),
            "--seed".into(),
            "7".into(),
            "--feature-dim".into(),
            "8".into(),
            "--word-dim".into(),
            "4".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let v = args(s(d));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        assert!(tce(&refs, &[]).status.success());
    }
    for f in ["data.txt", "words.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let d = tce_core::dataforge::load_feature_dataset(&a.join("data.txt")).unwrap();
    let (seen, unseen) = (d.space().seen().len(), d.space().unseen().len());
    assert_eq!(seen + unseen, 16 * 12);
    assert_eq!(seen, (0.6f64 * 192.0).round() as usize);
    assert_eq!(d.split_len(tce_core::dataforge::Split::Train), 50 * seen);
    assert_eq!(d.split_len(tce_core::dataforge::Split::Val), 50 * 192);
    assert_eq!(d.split_len(tce_core::dataforge::Split::Test), 50 * 192);
}

#[test]
fn rerun_from_run_manifest_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir.path().join("d"), "4");
    let first = dir.path().join("first");
    let out = tce(
        &[
            "train",
            "--model",
            "tce",
            "--data",
            &data,
            "--epochs",
            "5",
            "--seed",
            "1",
            "--set",
            "latent_dim=4",
            "--out",
            s(&first),
        ],
        &[],
    );
    assert!(out.status.success());
    let log = fs::read_to_string(first.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let second = dir.path().join("second");
    let manifest = first.join("run_manifest.txt");
    let out = tce(
        &["train", "--data", &data, "--config", s(&manifest), "--out", s(&second)],
        &[("TCE_SEED", "99")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "train_log.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let ev = |split: &str| {
        tce(
            &[
                "eval",
                "--checkpoint",
                s(&first.join("model.ckpt")),
                "--data",
                &data,
                "--split",
                split,
            ],
            &[],
        )
        .stdout
    };
    assert_eq!(ev("val"), ev("val"));
    assert_ne!(ev("val"), ev("test"));
}
