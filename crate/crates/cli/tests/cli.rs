use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curlcurl-lod"))
}

#[test]
fn validate_passes() {
    let out = bin().arg("validate").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| !l.starts_with("[FAIL]")));
    assert!(text.trim_end().ends_with("0 failed"));
}

#[test]
fn run_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    fs::write(&config, "example=2\nlevels=0:1\nm=1,1\nref-level=3\n# flags override the line below\nsource-correction=all\n").unwrap();
    let csv = |name: &str| {
        let path = dir.path().join(name);
        let status = bin()
            .args(["run", "--config"])
            .arg(&config)
            .args(["--source-correction", "boundary", "--no-timing", "--plot", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read_to_string(path).unwrap()
    };
    let a = csv("a.csv");
    assert_eq!(a, csv("b.csv"));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "example,dim,j,H,m,dof_coarse,dof_fine,err_lod,err_fem,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,2,0,"));
    assert!(dir.path().join("a.py").exists());
}

#[test]
fn rejects_bad_input() {
    let bad = |args: &[&str]| !bin().args(args).output().unwrap().status.success();
    assert!(bad(&["run", "--example", "5"]));
    assert!(bad(&["run", "--levels", "3:1"]));
    assert!(bad(&["run", "--dim", "3", "--ref-level", "4"]));
    assert!(bad(&["run", "--medium", "glass"]));
    assert!(bad(&["run", "--levels", "1:2", "--m", "1"]));
}
