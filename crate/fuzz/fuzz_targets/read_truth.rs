#![no_main]

use libfuzzer_sys::fuzz_target;
use vamnar::simgen::{read_truth, write_truth};

fuzz_target!(|data: &[u8]| {
    if let Ok(values) = read_truth(data) {
        let mut out = Vec::new();
        write_truth(&values, &mut out).unwrap();
        let back = read_truth(out.as_slice()).unwrap();
        assert_eq!(back.len(), values.len());
    }
});
