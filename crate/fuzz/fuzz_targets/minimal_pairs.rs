#![no_main]

use capvae::probe::parse_pairs;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(pairs) = parse_pairs(text) {
        let rendered: String = pairs.iter().map(|p| p.to_tsv_line() + "\n").collect();
        assert_eq!(parse_pairs(&rendered).expect("re-parse"), pairs);
    }
});
