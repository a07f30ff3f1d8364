#![no_main]
use flowlab::train::TrainRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for line in text.lines() {
            if let Ok(r) = TrainRecord::parse_line(line) {
                let _ = TrainRecord::parse_line(&r.to_line()).expect("serialized records parse");
            }
        }
    }
});
