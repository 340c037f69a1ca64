#![no_main]

use libfuzzer_sys::fuzz_target;
use waveobs::experiments::parse_config;

// Accepted configs must survive the canonical round trip with the same hash.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = parse_config(text) else {
        return;
    };
    let canonical = cfg.canonical().expect("valid config serializes");
    let again = parse_config(&canonical).expect("canonical form parses");
    assert_eq!(again, cfg);
    assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
});
