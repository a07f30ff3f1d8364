use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn config(dir: &Path, arch: &str, steps: u64) -> std::path::PathBuf {
    let text = format!(
        r#"
schema_version = 1
seed = 3

[model]
arch = "{arch}"

[pretrain]
steps = {steps}
peak_lr = 1e-3
size = [32, 48]
checkpoint_every = 2

[finetune]
steps = 0
data = "shifted"
size = [32, 48]

[[eval]]
name = "val"
data = "synthetic"
count = 2
"#
    );
    let path = dir.join(format!("{arch}.toml"));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_and_malformed_configs_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = flowlab(&["train", "--config", p(&dir.path().join("absent.toml")), "--out", p(&out)]);
    assert_ne!(code(&o), 0);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nseed = 0\n[pretrain]\nstepz = 3\n").unwrap();
    let o = flowlab(&["train", "--config", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = flowlab(&["profile", "--resolutions", "64by96", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_flow_file_exits_with_data_status() {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join("x.flo");
    fs::write(&flo, b"PIEH\x02\x00\x00\x00").unwrap();
    let o = flowlab(&["render", p(&flo), p(&dir.path().join("x.png"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn datagen_manifest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "pwc", 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = flowlab(&["datagen", "--config", p(&cfg), "--count", "25", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("manifest.json")).unwrap());
    let m = flowlab::data::Manifest::parse(&ma).unwrap();
    assert_eq!(m.records.len(), 25);

    let c = dir.path().join("c");
    let o = flowlab(&["datagen", "--config", p(&cfg), "--count", "2", "--out", p(&c), "--materialize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let files = fs::read_dir(c.join("samples")).unwrap().count();
    assert!(files >= 2, "{files} sample files");
}

#[test]
fn identity_eval_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "pwc", 1);
    let out = dir.path().join("eval");
    let o = flowlab(&["eval", "--config", p(&cfg), "--identity", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let r = &doc["sets"]["val"]["report"];
    assert_eq!(r["aepe"].as_f64(), Some(0.0), "{doc}");
    assert_eq!(r["fl_all"].as_f64(), Some(0.0));
}

#[test]
fn zero_flow_renders_white() {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join("zero.flo");
    fs::write(&flo, flowlab::io::write_flo(&flowlab::io::FlowField::zeros(5, 3)).unwrap()).unwrap();
    let ppm = dir.path().join("zero.ppm");
    let o = flowlab(&["render", p(&flo), p(&ppm)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = fs::read(&ppm).unwrap();
    let pixels = &bytes[bytes.len() - 5 * 3 * 3..];
    assert!(pixels.iter().all(|&b| b == 255));
    let png = dir.path().join("zero.png");
    assert_eq!(code(&flowlab(&["render", p(&flo), p(&png)])), 0);
    assert_eq!(&fs::read(&png).unwrap()[1..4], b"PNG");
}

#[test]
fn profile_marks_over_budget_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prof");
    let o = Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args(["profile", "--resolutions", "32x48,64x96,96x144,128x192", "--repeats", "2"])
        .args(["--archs", "pwc,raft", "--out", p(&out)])
        .env("FLOWLAB_ALLPAIRS_BUDGET", "2097152")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("profile.md")).unwrap();
    let raft = table.lines().find(|l| l.contains("raft")).unwrap();
    assert!(raft.contains("OOM"), "{table}");
    let pwc = table.lines().find(|l| l.contains("pwc")).unwrap();
    assert!(!pwc.contains("OOM"), "{table}");
}

#[test]
fn train_finetune_and_fingerprint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let pwc = config(dir.path(), "pwc", 2);
    let raft = config(dir.path(), "raft", 2);
    let out = dir.path().join("train");
    let o = flowlab(&["train", "--config", p(&pwc), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = fs::read_to_string(out.join("records.jsonl")).unwrap();
    let steps = records.lines().filter(|l| l.contains("\"step\"") && l.contains("\"kind\":\"step\"")).count();
    assert_eq!(steps, 2, "{records}");
    let ck = out.join("final.flck");
    assert!(out.join("checkpoints/latest.flck").exists());

    let ft = dir.path().join("ft");
    let o = flowlab(&["finetune", "--config", p(&pwc), "--checkpoint", p(&ck), "--out", p(&ft)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let load = |path: &Path| flowlab::arch::Checkpoint::from_bytes(&fs::read(path).unwrap()).unwrap().state;
    assert_eq!(load(&ft.join("final.flck")), load(&ck));

    let bad = dir.path().join("bad");
    let o = flowlab(&["finetune", "--config", p(&raft), "--checkpoint", p(&ck), "--out", p(&bad)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let ev = dir.path().join("ev");
    let o = flowlab(&["eval", "--config", p(&pwc), "--checkpoint", p(&ck), "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(ev.join("report.md")).unwrap().contains("| val |"));
}
