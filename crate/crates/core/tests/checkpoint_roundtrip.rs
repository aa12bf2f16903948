use capvae::checkpoint::{Checkpoint, Precision};
use capvae::corpus::{build_vocab, Corpus, Split};
use capvae::synth::ToyGrammar;
use capvae::train::{rate_distortion, train, TrainConfig};
use capvae_autodiff::CellKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(cell: CellKind, latent_dim: usize) -> (Checkpoint, Corpus) {
    let g = ToyGrammar::new(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lines = g.sentences(80, &mut rng);
    let vocab = build_vocab(&lines, 1000).unwrap();
    let corpus = Corpus::from_lines(&lines, &vocab, 10, "toy", Split::Train);
    let cfg = TrainConfig {
        cell,
        emb_dim: 6,
        hidden: 8,
        latent_dim,
        epochs: 1,
        c_target: 2.0,
        ..TrainConfig::desk()
    };
    let trained = train(&cfg, vocab.len(), &corpus, &corpus).unwrap();
    (Checkpoint::from_trained(&trained, &vocab), corpus)
}

#[test]
fn full_precision_round_trip_is_exact() {
    for (cell, dz) in [(CellKind::Gru, 3), (CellKind::Lstm, 2), (CellKind::Gru, 0)] {
        let (ck, corpus) = tiny(cell, dz);
        let bytes = ck.to_bytes(Precision::F64);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(Precision::F64), bytes);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.epochs_done, 1);
        if dz > 0 {
            assert_eq!(
                rate_distortion(&back.model, &corpus, 3).unwrap(),
                rate_distortion(&ck.model, &corpus, 3).unwrap()
            );
        }
    }
}

#[test]
fn single_precision_is_close_and_stable() {
    let (ck, corpus) = tiny(CellKind::Gru, 3);
    let bytes = ck.to_bytes(Precision::F32);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(Precision::F32), bytes);
    let (d0, r0) = rate_distortion(&ck.model, &corpus, 3).unwrap();
    let (d1, r1) = rate_distortion(&back.model, &corpus, 3).unwrap();
    assert!((d0 - d1).abs() < 1e-4 * d0.abs().max(1.0));
    assert!((r0 - r1).abs() < 1e-4 * r0.abs().max(1.0));
}

#[test]
fn truncated_and_corrupted_bytes_are_rejected() {
    let (ck, _) = tiny(CellKind::Lstm, 2);
    let bytes = ck.to_bytes(Precision::F64);
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(Checkpoint::from_bytes(&longer).is_err());
    let text = String::from_utf8_lossy(&bytes).replacen("hidden = 8", "hidden = 9", 1);
    assert!(Checkpoint::from_bytes(text.as_bytes()).is_err());
}

#[test]
fn saved_file_loads() {
    let (ck, _) = tiny(CellKind::Gru, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path, Precision::F64).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(Precision::F64), ck.to_bytes(Precision::F64));
}
