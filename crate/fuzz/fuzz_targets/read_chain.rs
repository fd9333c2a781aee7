#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((names, draws, stats)) = ghjm::io::read_chain(data) {
        assert_eq!(draws.len(), stats.len());
        assert!(draws.iter().all(|d| d.len() == names.len()));
    }
});
