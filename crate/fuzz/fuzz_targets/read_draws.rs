#![no_main]

use libfuzzer_sys::fuzz_target;
use vamnar::mcmc::ChainArchive;
use vamnar::model::ModelSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(archive) = ChainArchive::read_draws(data, ModelSpec::default(), 0) {
        let n = archive.n_params();
        assert!(archive.chains.iter().all(|c| c.values.len() == c.len() * n));
        let mut out = Vec::new();
        archive.write_draws(&mut out).unwrap();
    }
});
