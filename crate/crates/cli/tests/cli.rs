use std::fs;
use std::process::{Command, Output};

fn fcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcn"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn kernels_row_dump() {
    let out = fcn(&["kernels", "--alpha", "0.4", "--mesh", "graded", "--N", "8", "--gamma", "2", "--row", "3"]);
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "n,k,a,b,A");
    assert_eq!(lines.len(), 4);
    // b is undefined on the last cell
    assert_eq!(lines[3].split(',').nth(3), Some(""));
}

#[test]
fn convergence_writes_table_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let out = fcn(&[
        "convergence", "--alpha", "0.6", "--sigma", "1.6", "--gamma", "1", "--N", "8,16", "--M", "64",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let s = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "N,eN,order");
    assert!(lines[1].starts_with("8,") && lines[1].ends_with(','));
    assert!(lines[2].starts_with("16,"));
    assert!(lines[3].contains("expected_order=1.60"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nalpha=0.6\nsigma=1.6\nN=8\nM=32\nmesh=graded\ngamma=1\n").unwrap();
    let base = fcn(&["--config", cfg.to_str().unwrap(), "solve"]);
    let over = fcn(&["--config", cfg.to_str().unwrap(), "solve", "--N", "16"]);
    assert!(base.status.success() && over.status.success());
    assert_eq!(String::from_utf8(base.stdout).unwrap().lines().count(), 1 + 9);
    let s = String::from_utf8(over.stdout).unwrap();
    assert_eq!(s.lines().next(), Some("n,t_n,error_L2"));
    assert_eq!(s.lines().count(), 1 + 17);
}

#[test]
fn audit_is_deterministic_and_passes() {
    let args = ["--threads", "2", "audit", "--alpha", "0.6", "--mesh", "random", "--N", "16", "--seeds", "5,6"];
    let a = fcn(&args);
    let b = fcn(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8(a.stdout).unwrap().starts_with("check,n,k,margin,pass\n"));
}

#[test]
fn empty_seed_list_exits_zero() {
    let out = fcn(&["consistency", "--seeds", "", "--N", "16"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "n,t_offset,upsilon,g_loc,g_his,ecs_rhs,e_glob,r_offset\n");
}

#[test]
fn mesh_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let nodes: Vec<String> = (0..=8).map(|k| format!("{:?}", (k as f64 / 8.0).powi(2))).collect();
    fs::write(&mesh, format!("# theta=0.2\n{}\n", nodes.join("\n"))).unwrap();
    let out = fcn(&["audit", "--alpha", "0.4", "--mesh", "file", "--mesh-file", mesh.to_str().unwrap(), "--N", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_input_is_reported() {
    let out = fcn(&["solve", "--N", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("N must be at least 8"));
    let out = fcn(&["audit", "--mesh", "hexagonal"]);
    assert_eq!(out.status.code(), Some(2));
}
