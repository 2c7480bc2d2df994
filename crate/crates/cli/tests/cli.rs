use std::path::Path;
use std::process::Command;

fn recbayes(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_recbayes")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, agent: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{agent}.cfg"));
    let text = format!("# small run\ndomain = lbf\nsize = 5\nset = team\nagent = {agent}\ntrials = 3\nseed = 5\n{extra}");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_on_a_small_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    recbayes(&["collect", "--domain", "lbf", "--size", "5", "--set", "team", "--t", "6", "--l", "16", "--seed", "1", "--out", p(&data)]);
    for k in 1..=3 {
        assert!(data.join(format!("k{k}.rbtj")).exists());
    }

    let ckpt = d.join("clf").join("team.rbck");
    let out = recbayes(&[
        "train-classifier", "--data", p(&data), "--k", "3", "--epochs", "2", "--batch", "4", "--seed", "2", "--out", p(&ckpt),
    ]);
    assert!(out.contains("best epoch"));
    let metrics = std::fs::read_to_string(ckpt.with_extension("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_loss,val_final_acc\n"));
    assert_eq!(metrics.lines().count(), 3);

    let tables = d.join("tables");
    recbayes(&["train-policy", "--domain", "lbf", "--size", "5", "--set", "team", "--episodes", "20", "--out", p(&tables)]);
    assert!(tables.join("k3.rbqp").exists());

    let runs = d.join("runs");
    for (agent, extra) in [
        ("original", String::new()),
        ("random", String::new()),
        ("recbayes", format!("classifier = {}\n", p(&ckpt))),
        ("oracle", format!("policies = {}\n", p(&tables))),
    ] {
        let cfg = write_config(d, agent, &extra);
        let out = recbayes(&["evaluate", "--config", p(&cfg), "--out", p(&runs.join(agent))]);
        assert!(out.contains("over 9 trials"), "{out}");
        for f in ["trials.csv", "summary.csv", "trace.csv", "trace_mean.csv", "beliefs.svg", "manifest.txt"] {
            assert!(runs.join(agent).join(f).exists(), "{agent} {f}");
        }
    }

    let report = d.join("report");
    let out = recbayes(&[
        "report", "--original", p(&runs.join("original")), "--random", p(&runs.join("random")),
        "--runs", p(&runs.join("recbayes")), p(&runs.join("oracle")), "--out", p(&report),
    ]);
    assert!(out.contains("recbayes:") && out.contains("normalized"), "{out}");
    assert_eq!(std::fs::read_to_string(report.join("report.csv")).unwrap().lines().count(), 3);
    assert!(report.join("report.svg").exists());
}

#[test]
fn manifest_is_a_config_that_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "random", "");
    recbayes(&["evaluate", "--config", p(&cfg), "--out", p(&d.join("a"))]);
    recbayes(&["evaluate", "--config", p(&d.join("a").join("manifest.txt")), "--out", p(&d.join("b"))]);
    assert_eq!(
        std::fs::read(d.join("a").join("manifest.txt")).unwrap(),
        std::fs::read(d.join("b").join("manifest.txt")).unwrap()
    );
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "domain = chess\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_recbayes"))
        .args(["evaluate", "--config", p(&cfg), "--out", p(tmp.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain"));
    let out = Command::new(env!("CARGO_BIN_EXE_recbayes")).args(["collect", "--domain", "lbf"]).output().unwrap();
    assert!(!out.status.success());
}
