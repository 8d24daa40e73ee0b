#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(s) {
            let again = RunConfig::parse(&cfg.to_cfg_string()).expect("canonical form parses");
            assert_eq!(again.to_cfg_string(), cfg.to_cfg_string());
        }
    }
});
