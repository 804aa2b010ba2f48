use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitflow"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("splitflow-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_config(dir: &Path, text: &str) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    bin().arg("run").arg(&path).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flat_cone_identities_pass() {
    let dir = scratch("cone");
    let o = bin().args(["identities", "--model", "flat-cone", "--ladder", "24,48,96", "--out"]).arg(&dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for f in ["identities.json", "identities.csv", "identities_long.csv", "summary.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = scratch("bad");
    let o = run_config(&dir, "[model]\nkind = \"warped\"\nm = \"two\"\n\n[grid]\norder = 4\n");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("config.toml:3:"), "{err}");
}

#[test]
fn invalid_ladder_exits_2_with_line() {
    let dir = scratch("ladder");
    let o = run_config(&dir, "[grid]\norder = 4\nladder = [48, 24]\n");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("config.toml:3:") && err.contains("strictly increasing"), "{err}");
}

#[test]
fn usage_error_exits_2() {
    let o = bin().args(["identities", "--model", "sphere"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_suite_list_gives_empty_report() {
    let dir = scratch("empty");
    let o = run_config(&dir, &format!("[run]\nsuites = []\noutput = {:?}\n", dir.join("out")));
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 0);
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn rerun_is_byte_identical_and_rates_populated() {
    let dir = scratch("det");
    let text = |out: &str| {
        format!(
            "[model]\nkind = \"warped\"\nm = 2\n[grid]\nladder = [12, 24]\nfiber_points = 8\n[run]\nsuites = [\"identities\"]\nseed = 3\noutput = {:?}\n",
            dir.join(out)
        )
    };
    let a = run_config(&dir, &text("a"));
    let b = run_config(&dir, &text("b"));
    assert_eq!(a.status.code(), b.status.code());
    let ja = fs::read(dir.join("a/identities.json")).unwrap();
    let jb = fs::read(dir.join("b/identities.json")).unwrap();
    assert_eq!(ja, jb);
    let long = fs::read_to_string(dir.join("a/identities_long.csv")).unwrap();
    let row = long.lines().find(|l| l.starts_with("nablah,24,")).expect("fine level row");
    assert!(!row.ends_with(','), "rate column empty: {row}");
}

#[test]
fn report_merges_inputs() {
    let dir = scratch("report");
    let run = run_config(
        &dir,
        &format!("[grid]\nladder = [12, 24]\nfiber_points = 8\n[run]\nsuites = [\"identities\"]\noutput = {:?}\n", dir.join("in")),
    );
    let o = bin().arg("report").arg(dir.join("in/summary.json")).arg(dir.join("in/identities.json")).arg("--out").arg(dir.join("merged")).output().unwrap();
    assert_eq!(o.status.code(), run.status.code());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("merged/summary.json")).unwrap()).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    let empty = bin().arg("report").arg("--out").arg(dir.join("none")).output().unwrap();
    assert_eq!(empty.status.code(), Some(0));
}

#[test]
fn flow_exports_snapshots() {
    let dir = scratch("flow");
    let o = bin()
        .args(["flow", "--model", "warped", "--ladder", "12", "--t-final", "0.01", "--dt", "0.0025", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("flow/series.json")).unwrap()).unwrap();
    assert_eq!(meta["direction"], "BackwardTau");
    let snaps = meta["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 5);
    assert!(dir.join("flow").join(snaps[0]["vertical_file"].as_str().unwrap()).exists());
}

#[test]
fn non_einstein_preservation_detects_failure() {
    let dir = scratch("noneinstein");
    let o = run_config(
        &dir,
        &format!(
            "[preservation]\ncase = \"non-einstein\"\npoints = 16\n[flow]\nt_final = 0.02\n[run]\nsuites = [\"preservation\"]\noutput = {:?}\n",
            dir.join("out")
        ),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("structural failure correctly detected"));
    assert!(dir.join("out/preservation-non-einstein.json").exists());
}
