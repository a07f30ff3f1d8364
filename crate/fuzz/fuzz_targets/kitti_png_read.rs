#![no_main]
use flowlab::io::{read_kitti_png, write_kitti_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = read_kitti_png(data) {
        // every decodable value is in range, so it must encode back
        let bytes = write_kitti_png(&flow).expect("decoded fields encode");
        let again = read_kitti_png(&bytes).expect("re-encoded fields decode");
        assert_eq!(again.valid_count(), flow.valid_count());
        for i in (0..flow.len()).filter(|&i| flow.is_valid(i)) {
            assert_eq!((again.u()[i], again.v()[i]), (flow.u()[i], flow.v()[i]));
        }
    }
});
