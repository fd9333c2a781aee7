#![no_main]
use libfuzzer_sys::fuzz_target;

// Input is the longitudinal table and the survival table separated by a NUL byte.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == 0).unwrap_or(data.len());
    let (long, surv) = data.split_at(split);
    let surv = surv.get(1..).unwrap_or_default();
    if let Ok(dataset) = ghjm::io::read_dataset(long, surv) {
        let mut out = Vec::new();
        ghjm::io::write_survival(&mut out, &dataset).expect("a parsed dataset writes back");
        let _ = ghjm::io::dataset_hash(&dataset);
    }
});
