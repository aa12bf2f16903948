//! Writes the small synthetic data set used for CPU-scale experiments:
//! train/dev/test sentences from the toy grammar, agreement minimal pairs,
//! and two information-oracle worlds.
//!
//!     cargo run --release -p capvae --example desk_corpus -- desk/

use std::path::PathBuf;

use capvae::oracle::{DiscreteWorld, Encoder};
use capvae::probe::write_pairs;
use capvae::synth::{ToyGrammar, AGREEMENT_SUBCATEGORIES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRAIN: usize = 5000;
const HELD_OUT: usize = 500;
const PAIRS_PER_SUBCATEGORY: usize = 25;

fn main() -> capvae::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "desk".into()));
    std::fs::create_dir_all(&dir).map_err(|e| capvae::Error::io(&dir, e))?;
    let grammar = ToyGrammar::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, n) in [
        ("train.txt", TRAIN),
        ("dev.txt", HELD_OUT),
        ("test.txt", HELD_OUT),
    ] {
        let path = dir.join(name);
        let text = grammar.sentences(n, &mut rng).join("\n") + "\n";
        std::fs::write(&path, text).map_err(|e| capvae::Error::io(&path, e))?;
    }
    let mut pairs = Vec::new();
    for sub in AGREEMENT_SUBCATEGORIES {
        for _ in 0..PAIRS_PER_SUBCATEGORY {
            pairs.push(grammar.minimal_pair(sub, &mut rng)?);
        }
    }
    write_pairs(dir.join("pairs.tsv"), &pairs)?;

    let unit = |m: f64| Encoder {
        mu: vec![m],
        var: vec![1.0],
    };
    DiscreteWorld::uniform(vec![unit(3.0), unit(-3.0)])?.write(dir.join("two_gaussians.world"))?;
    DiscreteWorld::random(8, 2, &mut rng)?.write(dir.join("random8.world"))?;
    println!("wrote desk data to {}", dir.display());
    Ok(())
}
