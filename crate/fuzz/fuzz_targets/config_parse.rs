#![no_main]
use flowlab::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = ExperimentConfig::parse(text) {
            let _ = c.grid_cells();
            let _ = c.eval_sets();
        }
    }
});
