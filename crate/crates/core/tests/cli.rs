use std::path::Path;
use std::process::{Command, Output};

fn fedmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmm")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A short config so each CLI run takes well under a second.
fn quick_config(dir: &Path, extra_train: &str) -> String {
    let path = dir.join("quick.json");
    let body = format!(r#"{{"train": {{"rounds": 2, "local_epochs": 1{extra_train}}}, "run": {{"seeds": 2}}}}"#);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_writes_one_file_per_hospital_modality_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = fedmm(&["generate", "--seed", "4", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let files = read_dir_bytes(&a);
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["h1_A.csv", "h2_A.csv", "h2_B.csv", "h3_B.csv", "manifest.json"]);
    assert_eq!(files, read_dir_bytes(&b));

    // hospital 2 holds 315 + 285 samples; one header line
    let h2 = std::fs::read_to_string(a.join("h2_A.csv")).unwrap();
    assert_eq!(h2.lines().count(), 1 + 600);
}

#[test]
fn generate_into_unwritable_location_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let o = fedmm(&["generate", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_local_writes_one_run_per_hospital_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = fedmm(&["train", "--config", &cfg, "--method", "local", "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    let hospitals: Vec<&str> = runs.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(hospitals, ["1", "2", "3"]);
    assert!(runs.lines().skip(1).all(|l| l.starts_with("local,")));
    // summary goes to stdout
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("method,hospital,"));
    let rounds = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 2 * 3);
    assert!(out.join("roc_local_1.csv").exists());
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn multi_fedavg_manifest_records_zero_fill() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = fedmm(&["train", "--config", &cfg, "--method", "multi-fedavg", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    let filled = &manifest["notes"]["zero_filled_modalities"];
    assert_eq!(filled["1"], serde_json::json!(["B"]), "{filled}");
    assert_eq!(filled["2"], serde_json::json!([]));
    assert_eq!(filled["3"], serde_json::json!(["A"]));
}

#[test]
fn fedmm_trace_flag_writes_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = fedmm(&["train", "--config", &cfg, "--trace", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("seed,round,direction,client_id,payload_kind,modality,payload_bytes\n"));
    // hospital 1 only ever exchanges modality 0, hospital 3 only modality 1
    for line in trace.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        match f[3] {
            "1" => assert_eq!(f[5], "0"),
            "3" => assert_eq!(f[5], "1"),
            _ => {}
        }
    }
    // no prototypes go out in round 1
    assert!(!trace.lines().any(|l| l.contains(",1,Broadcast,") && l.contains("Prototypes")));
}

#[test]
fn invalid_config_exits_with_config_code_and_names_key() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"lr": -1.0}}"#).unwrap();
    let o = fedmm(&["train", "--config", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));

    std::fs::write(&path, r#"{"train": {"rounds": 3, "learning_rate": 0.1}}"#).unwrap();
    let o = fedmm(&["train", "--config", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn unknown_method_and_sweep_key_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = fedmm(&["train", "--method", "fedprox", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = fedmm(&["ablation", "--sweep", "train.lr=0.1,0.2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for key in ["train.t0", "model.fusion", "topology.modality_subset"] {
        assert!(msg.contains(key), "{msg}");
    }
}

#[test]
fn report_requires_runs_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = fedmm(&["report", "--in", empty.to_str().unwrap(), "--out", tmp.path().join("s.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn report_merges_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, method) in [(&a, "local"), (&b, "centralized")] {
        let o = fedmm(&["train", "--config", &cfg, "--method", method, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let summary = tmp.path().join("merged/summary.csv");
    let o = fedmm(&["report", "--in", a.to_str().unwrap(), b.to_str().unwrap(), "--out", summary.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&summary).unwrap();
    let keys: Vec<String> = text.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys, ["centralized,pooled,2", "local,1,2", "local,2,2", "local,3,2"]);
}

#[test]
fn ablation_writes_subdirectories_and_sweep_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), "");
    let out = tmp.path().join("abl");
    let o = fedmm(&["ablation", "--config", &cfg, "--sweep", "model.fusion=concat,mean", "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("fusion=concat/runs.csv").exists());
    assert!(out.join("fusion=mean/runs.csv").exists());
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("sweep_value,hospital,mean_auc,std_auc,mean_acc,std_acc\n"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 3);
}

#[test]
fn trains_from_generated_feature_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = fedmm(&["generate", "--seed", "0", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let cfg = serde_json::json!({
        "topology": manifest["notes"]["file_topology"],
        "train": {"rounds": 2, "local_epochs": 1},
        "run": {"seeds": [0]},
    });
    let cfg_path = data.join("from_files.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();

    let (from_files, synthetic) = (tmp.path().join("f"), tmp.path().join("s"));
    let o = fedmm(&["train", "--config", cfg_path.to_str().unwrap(), "--out", from_files.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let quick = quick_config(tmp.path(), "");
    let o = fedmm(&["train", "--config", &quick, "--seeds", "0", "--out", synthetic.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // the files hold exactly the synthetic data for data seed 0
    assert_eq!(
        std::fs::read(from_files.join("runs.csv")).unwrap(),
        std::fs::read(synthetic.join("runs.csv")).unwrap()
    );
}
