#![no_main]

use libfuzzer_sys::fuzz_target;
use vamnar::compare::PosteriorSummary;

fuzz_target!(|data: &[u8]| {
    if let Ok(summary) = PosteriorSummary::read(data) {
        let mut out = Vec::new();
        summary.write(&mut out).unwrap();
        assert_eq!(
            PosteriorSummary::read(out.as_slice()).unwrap().rows.len(),
            summary.rows.len()
        );
    }
});
