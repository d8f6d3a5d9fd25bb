use std::path::Path;
use std::process::{Command, Output};

fn brownlab(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_brownlab"));
    cmd.args(args).env_remove("BROWNLAB_OUT");
    if let Some(dir) = out {
        cmd.env("BROWNLAB_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn formula_values() {
    let o = brownlab(&["formula", "--k", "2", "--lambda", "0"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("0.666666666667"));

    let o = brownlab(&["formula", "--dims"], None);
    let s = stdout(&o);
    assert!(
        s.contains("1.333333333333")
            && s.contains("1.750000000000")
            && s.contains("0.452035741742")
    );

    let o = brownlab(&["formula"], None);
    let s = stdout(&o);
    assert!(s.contains("1,1.250000000000,0.250000000000"));
    assert!(s.contains("5,4.000000000000,2.000000000000"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["formula", "--k", "-1"][..],
        &["formula", "--k", "0"],
        &["formula", "--lambda", "x"],
        &["estimate", "nonsense"],
        &["estimate", "xi", "--k", "7"],
        &["estimate", "xi", "--scales", "6..2"],
        &["estimate", "eigen", "--particles", "10"],
        &["estimate", "xi", "--config", "/nonexistent/brownlab.json"],
        &[],
    ] {
        let o = brownlab(args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_1_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = brownlab(
        &[
            "estimate",
            "xi",
            "--scales",
            "2..4",
            "--samples",
            "20",
            "--out",
            blocker.join("sub").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("writing output"));
}

#[test]
fn estimates_are_byte_identical_under_seed_reuse() {
    let args = [
        "estimate",
        "xi",
        "--k",
        "1",
        "--lambda",
        "1",
        "--scales",
        "2..4",
        "--samples",
        "150",
        "--seed",
        "7",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut one = vec!["--threads", "1"];
    one.extend(args);
    let mut four = vec!["--threads", "4"];
    four.extend(args);
    let oa = brownlab(&one, Some(a.path()));
    let ob = brownlab(&four, Some(b.path()));
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(oa.stdout, ob.stdout);
    for f in ["xi.csv", "xi.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        assert!(!x.is_empty());
    }
    let csv = std::fs::read_to_string(a.path().join("xi.csv")).unwrap();
    assert!(csv.starts_with("n,lambda,k,mean,std_error,samples,swallowed\n"));
    assert_eq!(csv.lines().count(), 4);
    let s = stdout(&oa);
    assert!(
        s.contains("estimate")
            && s.contains("stderr")
            && s.contains("target 1.250000")
            && s.contains(" z ")
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"y": 2.0, "bins": 4, "walks": 300, "seed": 3, "prefix": "strip"}"#,
    )
    .unwrap();
    let o = brownlab(
        &[
            "estimate",
            "strip-density",
            "--config",
            cfg.to_str().unwrap(),
            "--walks",
            "400",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let js: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("strip.json")).unwrap())
            .unwrap();
    assert_eq!(js["params"]["walks"], 400);
    assert_eq!(js["params"]["bins"], 4);
    assert_eq!(js["seed"], 3);
    assert_eq!(js["result"]["walks"], 400);
    let csv = std::fs::read_to_string(dir.path().join("strip.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    // The comparison table is also printed.
    assert!(stdout(&o).starts_with("lo,hi,expected,observed,count,z\n"));

    std::fs::write(&cfg, r#"{"walkz": 3}"#).unwrap();
    let o = brownlab(
        &[
            "estimate",
            "strip-density",
            "--config",
            cfg.to_str().unwrap(),
        ],
        Some(dir.path()),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(
        &[
            "estimate",
            "frontier-dim",
            "--steps",
            "20000",
            "--extent",
            "128",
            "--span",
            "120",
            "--walks",
            "2",
        ],
        Some(dir.path()),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("target 1.333333"));
    let js: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("frontier-dim.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(js["result"]["walks"].as_array().unwrap().len(), 2);
    assert!(js["result"]["dimension"].as_f64().unwrap() > 1.0);
    let csv = std::fs::read_to_string(dir.path().join("frontier-dim.csv")).unwrap();
    assert!(csv.starts_with("walk,box_size,count\n0,1,"));
}

#[test]
fn eigen_summary_reports_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = brownlab(
        &[
            "estimate",
            "eigen",
            "--lambda",
            "0.5",
            "--particles",
            "100",
            "--steps",
            "6",
        ],
        Some(dir.path()),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("target 1.459490"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("eigen.csv")).unwrap();
    assert!(csv.starts_with("step,mean_weight,ess,xi_running\n"));
    assert_eq!(csv.lines().count(), 7);
}
