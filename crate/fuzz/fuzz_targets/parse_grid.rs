#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(grid) = ghjm::io::parse_grid(text) {
        assert!(!grid.is_empty() && grid.iter().all(|t| t.is_finite()));
    }
});
