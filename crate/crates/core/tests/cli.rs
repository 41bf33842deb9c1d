use std::path::Path;
use std::process::{Command, Output};

fn spaceris(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spaceris"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn missing_config_exits_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaceris(&["simulate", "--config", "/definitely/not/here.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    let line = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"], "config_missing");
}

#[test]
fn unknown_key_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"ris\": {\"num_elements\": 8},\n  \"colour\": 1\n}\n").unwrap();
    let o = spaceris(&["linkbudget", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("config_invalid"), "{err}");
}

#[test]
fn linkbudget_has_six_components_and_total() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaceris(&["linkbudget"], dir.path());
    assert!(o.status.success());
    let lines = csv_lines(&dir.path().join("linkbudget.csv"));
    assert!(lines[0].starts_with("# spaceris schema=linkbudget/v1 config_sha256="));
    assert_eq!(lines[1], "component,db");
    assert_eq!(lines[2], "-,dB");
    let names: Vec<&str> = lines[3..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["spreading", "absorption", "rain", "cloud", "plasma", "nrp", "total_db"]);
}

#[test]
fn geometry_columns_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = spaceris(&["geometry", "--slots", "3"], dir.path());
    assert!(o.status.success());
    let lines = csv_lines(&dir.path().join("geometry.csv"));
    assert_eq!(lines[1], "slot,plane,sat,x_m,y_m,z_m,anomaly_rad");
    assert_eq!(lines.len(), 3 + 3 * 66);
    assert!(dir.path().join("orbit.csv").exists());
}

#[test]
fn seed_flag_is_echoed_and_changes_hash_input() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    spaceris(&["linkbudget", "--seed", "3"], a.path());
    spaceris(&["linkbudget", "--seed", "4"], b.path());
    let la = csv_lines(&a.path().join("linkbudget.csv"));
    let lb = csv_lines(&b.path().join("linkbudget.csv"));
    assert!(la[0].ends_with("seed=3 workers=1"));
    assert!(lb[0].ends_with("seed=4 workers=1"));
    assert_ne!(la[0], lb[0]);
    assert_eq!(la[3..], lb[3..]);
}

#[test]
fn simulate_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json");
    let o = spaceris(&["simulate", "--config", cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["bcd_trace", "woa_trace", "learning_curve", "episode_trace", "association", "power", "summary"] {
        let lines = csv_lines(&dir.path().join(format!("{name}.csv")));
        assert!(lines[0].contains(&format!("schema={name}/v1")));
        assert_eq!(lines[1].split(',').count(), lines[2].split(',').count());
    }
    let bcd = csv_lines(&dir.path().join("bcd_trace.csv"));
    assert_eq!(bcd[1], "round,block,objective,feasible");
    let curve = csv_lines(&dir.path().join("learning_curve.csv"));
    assert_eq!(curve[1], "iter,agent,reward_mean,reward_std,value_loss,policy_loss");
}

#[test]
fn train_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json");
    let o = spaceris(&["train", "--config", cfg], dir.path());
    assert!(o.status.success());
    let bytes = std::fs::read(dir.path().join("checkpoint.bin")).unwrap();
    let nets = spaceris::learnkit::read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(nets.len(), 8);
}

#[test]
fn sweep_writes_named_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json");
    let o = spaceris(&["sweep", "--config", cfg, "--kind", "packet_size", "--grid", "2000,4000"], dir.path());
    assert!(o.status.success());
    let lines = csv_lines(&dir.path().join("latency_vs_size.csv"));
    assert_eq!(lines[1], "packet_size_bits,scheme,mean_latency_s,feasible,error");
    assert_eq!(lines.len(), 5);
    let bad = spaceris(&["sweep", "--kind", "nope"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}
