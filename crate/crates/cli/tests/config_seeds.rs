use std::path::Path;
use vamnar_cli::config::RunConfig;

#[test]
fn fuzz_config_seeds_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/run_config");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.to_toml(), cfg.to_toml());
        seen += 1;
    }
    assert!(seen >= 3);
}
