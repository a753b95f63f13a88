use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vpblab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpblab"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn vpblab")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_manifest_with_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = vpblab(&["simulate", "--config", "default"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert!(m["ledger"].is_object());
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.len() >= 4);
    for f in outputs {
        let path = out.join(f["path"].as_str().unwrap());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn spectrum_reports_five_branches_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let o = vpblab(&["spectrum", "--epsilon", "1", "--smax", "1", "--points", "6"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("branches.csv")).unwrap();
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for line in text.lines().skip(1) {
        let s = line.split(',').nth(1).unwrap().to_string();
        *counts.entry(s).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    assert!(counts.values().all(|&c| c == 5), "{counts:?}");
}

#[test]
fn zero_epsilon_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vpblab(&["simulate", "--epsilon", "0"], &tmp.path().join("bad"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
}

#[test]
fn bad_worker_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_vpblab"))
        .args(["spectrum", "--epsilon", "1", "--out-dir"])
        .arg(tmp.path().join("w"))
        .env("VPB_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("VPB_WORKERS"));
}

#[test]
fn existing_output_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let args = ["spectrum", "--epsilon", "0.5", "--points", "4"];
    assert!(vpblab(&args, &out).status.success());
    let before = fs::read(out.join("manifest.json")).unwrap();
    let o = vpblab(&args, &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), before);
}

#[test]
fn runs_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["simulate", "--config", "default", "--seed", "7", "--T", "0.1"];
    assert!(vpblab(&args, &a).status.success());
    assert!(vpblab(&args, &b).status.success());
    for f in ["conservation.csv", "energy.csv", "snapshot_final.csv", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_parsed_and_unknown_keys_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.cfg");
    fs::write(&good, "# small run\nepsilon = 0.25\nmodes = 2\ndegree = 4\nT = 0.05\n").unwrap();
    let out = tmp.path().join("good");
    let o = vpblab(&["simulate", "--config", good.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["config"]["epsilon"], 0.25);

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "epsilon = 0.25\nwobble = 3\n").unwrap();
    let o = vpblab(&["simulate", "--config", bad.to_str().unwrap()], &tmp.path().join("bad"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wobble"));
}

#[test]
fn uq_and_energy_report_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("uq");
    let o = vpblab(&["uq"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let norms = fs::read_to_string(out.join("mixed_norms.csv")).unwrap();
    assert!(norms.starts_with("t,l2,sup_nodes,sup,l2_inf,dz"));

    let out = tmp.path().join("energy");
    let o = vpblab(&["energy-report", "--eps-list", "1,0.1", "--T", "4"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ineq = fs::read_to_string(out.join("inequalities.csv")).unwrap();
    for line in ineq.lines().skip(1) {
        let slack: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(slack >= 0.0, "{line}");
    }
}
