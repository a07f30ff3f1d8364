#![no_main]
use flowlab::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text) {
            let _ = Manifest::parse(&m.to_json()).expect("serialized manifests parse");
        }
    }
});
