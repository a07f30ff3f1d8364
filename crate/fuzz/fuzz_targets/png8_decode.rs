#![no_main]
use flowlab::io::{decode_png8, write_png8};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png8(data) {
        let bytes = write_png8(&img).expect("decoded images encode");
        assert_eq!(decode_png8(&bytes).expect("re-encoded images decode"), img);
    }
});
