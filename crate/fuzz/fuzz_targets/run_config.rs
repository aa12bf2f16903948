#![no_main]

use std::path::Path;

use capvae_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::parse(text, Path::new("/fuzz")) {
        let again = RunConfig::parse(&cfg.to_text(), Path::new("/elsewhere")).expect("re-parse");
        assert_eq!(again, cfg);
    }
});
