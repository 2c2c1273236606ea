#![no_main]

use hybridbeam::scenario::{apply_override, with_overrides};
use hybridbeam::small_preset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let lines: Vec<&str> = text.lines().take(8).collect();
    let base = small_preset();
    let mut table = toml::Table::try_from(&base).unwrap_or_default();
    for l in &lines {
        let _ = apply_override(&mut table, l);
    }
    if let Ok(cfg) = with_overrides(&base, &lines) {
        assert!(cfg.validate().is_ok());
    }
});
