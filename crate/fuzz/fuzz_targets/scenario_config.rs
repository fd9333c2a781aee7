#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ghjm::config::ScenarioConfig::from_toml(text);
});
