#![no_main]

use capvae::corpus::{build_vocab, content_of, Corpus, Split, DEFAULT_MAX_TOKENS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(vocab) = build_vocab(text.lines(), 64) else {
        return;
    };
    let corpus = Corpus::from_lines(text.lines(), &vocab, DEFAULT_MAX_TOKENS, "fuzz", Split::Train);
    for s in &corpus.sentences {
        assert!(content_of(s).len() <= DEFAULT_MAX_TOKENS);
        assert!(s.iter().all(|&id| (id as usize) < vocab.len()));
    }
    let lines = corpus.to_lines(&vocab);
    let again = Corpus::from_lines(&lines, &vocab, DEFAULT_MAX_TOKENS, "fuzz", Split::Train);
    assert_eq!(again.sentences, corpus.sentences);
});
