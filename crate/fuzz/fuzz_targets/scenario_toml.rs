#![no_main]

use hybridbeam::scenario::parse_scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_scenario(text) {
        // anything accepted must survive a round trip
        let again = parse_scenario(&cfg.to_toml_string()).expect("re-parse of emitted scenario");
        assert_eq!(cfg, again);
    }
});
