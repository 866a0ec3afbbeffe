use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cat-cli"))
        .args(args)
        .env_remove("CAT_EPOCHS")
        .output()
        .expect("spawn cat-cli")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_mpi_summary_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let args = |out| {
        vec![
            "gen-mpi", "--n", "10", "--len", "50", "--delta", "0.2", "--seed", "3", "--out", out,
        ]
    };
    assert_eq!(ok(&args(p(&a))).trim(), "10 series, 2 classes");
    ok(&args(p(&b)));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mpi.jsonl");
    let run = dir.path().join("run");
    let cfg = dir.path().join("cat.cfg");
    std::fs::write(&cfg, "# short run\nepochs = 2\nw = 8\nh = 8\nl = 8\n").unwrap();
    ok(&[
        "gen-mpi",
        "--n",
        "40",
        "--len",
        "60",
        "--delta",
        "0.2",
        "--seed",
        "1",
        "--out",
        p(&data),
    ]);
    let line = ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--set",
        "delta=0.4",
        "--out",
        p(&run),
    ]);
    assert!(line.starts_with("trained 2 epochs on 32 series"), "{line}");
    assert!(line.contains("test accuracy"), "{line}");

    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,loss_s,loss_rl,loss_b,reward,acc_train,acc_val,seconds,recurrent_steps"
    );
    assert_eq!(lines.count(), 2);
    let saved = std::fs::read_to_string(run.join("config.cfg")).unwrap();
    assert!(saved.contains("delta = 0.4") && saved.contains("epochs = 2"));
    assert!(run.join("manifest.json").exists());

    let acc = ok(&[
        "eval",
        "--data",
        p(&run.join("test.jsonl")),
        "--checkpoint",
        p(&run.join("best.ckpt")),
    ]);
    let acc = acc.trim();
    assert!(
        acc.starts_with("accuracy 0.") || acc == "accuracy 1.000",
        "{acc}"
    );
    assert_eq!(acc.len(), "accuracy 0.000".len());
    assert!(
        line.trim().ends_with(&format!("test {acc}")),
        "{line} vs {acc}"
    );
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mpi.jsonl");
    ok(&["gen-mpi", "--n", "10", "--len", "20", "--out", p(&data)]);
    let out = cli(&[
        "train",
        "--data",
        p(&data),
        "--set",
        "gamma=1",
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));

    let out = Command::new(env!("CARGO_BIN_EXE_cat-cli"))
        .args(["train", "--data", p(&data), "--out", p(dir.path())])
        .env("CAT_EPOCHS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("CAT_EPOCHS"));

    let out = cli(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&dir.path().join("missing.ckpt")),
    ]);
    assert!(!out.status.success());
    assert!(
        cli(&["gen-mpi", "--n", "3", "--out", p(&data)])
            .status
            .code()
            != Some(0)
    );
    assert!(cli(&["frobnicate"]).status.code() != Some(0));
}

#[test]
fn probe_and_downsample() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("raw.csv");
    let mut text = String::from("t,x,label\n");
    for i in 0..100 {
        let label = usize::from(i >= 50);
        text += &format!("{i},{},{label}\n", (i as f64 * 0.3).sin());
    }
    std::fs::write(&csv, text).unwrap();
    let probed = dir.path().join("probe.jsonl");
    let line = ok(&[
        "probe",
        "--input",
        p(&csv),
        "--window",
        "20",
        "--out",
        p(&probed),
    ]);
    assert_eq!(line.trim(), "5 series, 2 classes");

    let down = dir.path().join("down.jsonl");
    let line = ok(&[
        "downsample",
        "--data",
        p(&probed),
        "--fraction",
        "0.5",
        "--out",
        p(&down),
    ]);
    assert!(line.starts_with("5 series, 2 classes, kept "), "{line}");
}

#[test]
fn sweep_ablate_and_bench_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--n", "20", "--len", "40", "--set", "epochs=1", "--set", "w=4", "--set", "h=4", "--set",
        "l=4",
    ];
    let out = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep",
        "--variable",
        "k",
        "--values",
        "1,2",
        "--repeats",
        "2",
        "--jobs",
        "2",
    ];
    args.extend(small);
    args.extend([
        "--baselines",
        "gru-mean",
        "--set",
        "impute_grid=10",
        "--out",
        p(&out),
    ]);
    let text = ok(&args);
    assert_eq!(text.lines().count(), 4, "{text}");
    let table = std::fs::read_to_string(&out).unwrap();
    assert!(table.starts_with("method,variable,value,repeats,mean,std,median,accuracies"));
    assert!(out.with_extension("manifest.json").exists());

    let out = dir.path().join("ablate.csv");
    let mut args = vec!["ablate", "--signal-width", "0.2", "--seeds", "1"];
    args.extend(small);
    args.extend(["--out", p(&out)]);
    let text = ok(&args);
    assert!(text.contains("cat-random"), "{text}");

    let out = dir.path().join("timing.csv");
    let mut args = vec!["bench", "--set", "impute_grid=50"];
    args.extend(small);
    args.extend(["--out", p(&out)]);
    let text = ok(&args);
    assert!(text.contains("60 recurrent steps/epoch"), "{text}");
    assert!(text.contains("1000 recurrent steps/epoch"), "{text}");
}

#[test]
fn help_lists_defaults() {
    let text = ok(&["gen-mpi", "--help"]);
    assert!(
        text.contains("[default: 5000]") && text.contains("[default: 0.1]"),
        "{text}"
    );
    let text = ok(&["sweep", "--help"]);
    assert!(text.contains("--jobs") && text.contains("[default: 1]"));
    let keys = ok(&["keys"]);
    assert!(keys
        .lines()
        .any(|l| l.starts_with("alpha") && l.contains("100")));
}
