use std::fs;
use std::path::PathBuf;

use flowlab::arch::Checkpoint;
use flowlab::data::Manifest;
use flowlab::experiment::ExperimentConfig;
use flowlab::io::{decode_png8, read_flo, read_kitti_png};
use flowlab::train::TrainRecord;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn every_seed_is_accepted_by_its_decoder() {
    for (p, b) in seeds("flo_read") {
        read_flo(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("kitti_png_read") {
        let f = read_kitti_png(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!((0..f.len()).any(|i| !f.is_valid(i)) && (0..f.len()).any(|i| f.is_valid(i)));
    }
    for (p, b) in seeds("png8_decode") {
        decode_png8(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("checkpoint_read") {
        let c = Checkpoint::from_bytes(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(c.to_bytes(), b);
    }
    for (p, b) in seeds("manifest_parse") {
        Manifest::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("config_parse") {
        ExperimentConfig::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("record_parse") {
        for line in text(&b).lines() {
            let r = TrainRecord::parse_line(line).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(r.to_line(), line);
        }
    }
}
