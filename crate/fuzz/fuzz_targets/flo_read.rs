#![no_main]
use flowlab::io::{read_flo, write_flo};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = read_flo(data) {
        let bytes = write_flo(&flow).expect("decoded fields encode");
        let again = read_flo(&bytes).expect("re-encoded fields decode");
        assert_eq!(again.width(), flow.width());
        assert_eq!(again.height(), flow.height());
        assert_eq!(again.valid_count(), flow.valid_count());
    }
});
