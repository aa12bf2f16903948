#![no_main]

use capvae::corpus::Vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(vocab) = Vocab::parse(text) {
        // Whatever parses must survive a write/parse round trip unchanged.
        let again = Vocab::parse(&vocab.to_file_string()).expect("re-parse");
        assert_eq!(again.content_tokens(), vocab.content_tokens());
    }
});
