#![no_main]

use libfuzzer_sys::fuzz_target;
use vamnar::panel::{load_panel, LoadOptions, Standardization};

fuzz_target!(|data: &[u8]| {
    let Some((&flags, body)) = data.split_first() else {
        return;
    };
    let options = LoadOptions {
        strict: flags & 1 != 0,
        raw_scores: (flags & 2 != 0).then_some(Standardization::DISTRICT),
    };
    if let Ok((panel, report)) = load_panel(body, options) {
        assert_eq!(report.students_admitted, panel.len());
        assert!(panel.students().iter().all(|s| s.n_observed() > 0));
    }
});
