//! Fixtures shared by integration test targets.
#![allow(dead_code)]

use std::collections::HashSet;

use capvae::corpus::{Corpus, Split, TokenId, Vocab, BOS, EOS};
use capvae::harness::{fce, FceConfig, FceRun};
use capvae::model::VaeModel;
use capvae::probe::ConditionalScorer;
use capvae::synth::BigramLanguage;
use capvae::train::{batch_loss, standard_normal, ObjectiveKind, TrainConfig};
use capvae_autodiff::{
    grad_check_params, CellKind, CellState, Embedding, Linear, ParamStore, RecurrentCell, Tape,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn randomize_biases(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    // Non-zero biases so every term of the gradient is exercised.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("b_") || store.name(id).ends_with("bias") {
            for x in store.value_mut(id).data_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
    }
}

/// Worst relative gradient error of embedding, recurrent cell and output
/// layer composed over two masked sequences.
pub fn layer_gradient_error(kind: CellKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "emb", 7, 4, &mut rng);
    let cell = RecurrentCell::new(&mut store, "cell", kind, 4, 5, &mut rng);
    let head = Linear::new(&mut store, "out", 5, 7, &mut rng);
    randomize_biases(&mut store, &mut rng, 0.5);
    let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
    let targets: Vec<Option<usize>> = (0..6)
        .map(|i| {
            if i == 5 {
                None
            } else {
                Some(rng.random_range(0..7))
            }
        })
        .collect();
    grad_check_params(
        &store,
        |t, s| {
            let x = emb.forward(t, s, &ids)?;
            let proj = cell.project_input(t, s, x)?;
            let mut state = cell.zero_state(t, 2);
            let mut hidden = Vec::new();
            for step in 0..3 {
                let xp = t.slice_rows(proj, 2 * step, 2 * step + 2)?;
                let new = cell.step_projected(t, s, xp, state)?;
                state = CellState::blend(t, state, new, &[1.0, if step < 2 { 1.0 } else { 0.0 }])?;
                hidden.push(state.hidden());
            }
            let h = t.concat_rows(&hidden)?;
            let logits = head.forward(t, s, h)?;
            let ce = t.cross_entropy(logits, &targets)?;
            Ok(t.sum(ce))
        },
        EPS,
        None,
        &mut rng,
    )
    .unwrap()
    .max_relative_error
}

fn random_sentence(rng: &mut impl Rng, vocab: usize) -> Vec<TokenId> {
    let len = rng.random_range(1..5);
    let mut s = vec![BOS];
    s.extend((0..len).map(|_| rng.random_range(3..vocab as TokenId)));
    s.push(EOS);
    s
}

/// Worst relative gradient error of the full training objective with
/// respect to every parameter of a small model.
pub fn objective_gradient_error(cell: CellKind, objective: ObjectiveKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        cell,
        objective,
        emb_dim: 3,
        hidden: 4,
        latent_dim: 2,
        // A target the batch KL cannot sit on keeps |KL − C| differentiable.
        c_target: 0.05,
        beta: 1.7,
        ..TrainConfig::desk()
    };
    let vocab = 8;
    let mut model = VaeModel::new(cfg.dims(vocab), &mut rng).unwrap();
    randomize_biases(&mut model.store, &mut rng, 0.3);
    let batch: Vec<Vec<TokenId>> = (0..3).map(|_| random_sentence(&mut rng, vocab)).collect();
    let refs: Vec<&[TokenId]> = batch.iter().map(|s| s.as_slice()).collect();
    let noise = standard_normal(&mut rng, refs.len(), cfg.latent_dim);
    let probe = model.clone();
    grad_check_params(
        &model.store,
        |t: &mut Tape, s| {
            let m = VaeModel {
                store: s.clone(),
                ..probe.clone()
            };
            batch_loss(t, &m, &cfg, &refs, Some(noise.clone()))
                .map(|b| b.loss)
                .map_err(|e| capvae_autodiff::Error::Invalid(e.to_string()))
        },
        EPS,
        Some(12),
        &mut rng,
    )
    .unwrap()
    .max_relative_error
}

/// Prefers every grammatical sentence under any code.
pub struct Rigged {
    pub grammatical: HashSet<String>,
}

impl ConditionalScorer for Rigged {
    fn code_of(&self, _: &str) -> capvae::Result<Vec<f64>> {
        Ok(vec![0.0])
    }

    fn nll(&self, sentence: &str, _: &[f64]) -> capvae::Result<f64> {
        Ok(if self.grammatical.contains(sentence) {
            1.0
        } else {
            5.0
        })
    }
}

/// Knows two sentences; each code reproduces its own sentence.
pub struct Memorizer {
    pub sentences: [String; 2],
}

impl ConditionalScorer for Memorizer {
    fn code_of(&self, sentence: &str) -> capvae::Result<Vec<f64>> {
        Ok(vec![if sentence == self.sentences[0] { 1.0 } else { -1.0 }])
    }

    fn nll(&self, sentence: &str, code: &[f64]) -> capvae::Result<f64> {
        let nearest = if code[0] >= 0.0 { 0 } else { 1 };
        Ok(if sentence == self.sentences[nearest] {
            0.1
        } else {
            9.0
        })
    }
}

/// Small recurrent language model settings for bigram control runs.
pub fn control_lm() -> TrainConfig {
    TrainConfig {
        cell: CellKind::Lstm,
        emb_dim: 16,
        hidden: 32,
        latent_dim: 0,
        lr: 3e-3,
        epochs: 6,
        batch_size: 32,
        ..TrainConfig::desk()
    }
}

pub struct ControlRun {
    pub entropy: f64,
    pub run: FceRun,
}

/// FCE with a bigram language as its own sentence source, scored on fresh
/// samples of the same language.
pub fn bigram_control(seed: u64, repeats: usize) -> ControlRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lang = BigramLanguage::random(10, 0.1, 0.3, &mut rng).unwrap();
    let vocab = Vocab::from_tokens((0..lang.num_tokens()).map(BigramLanguage::token_name)).unwrap();
    let test_lines = lang.sentences(3000, &mut rng);
    let test = Corpus::from_lines(&test_lines, &vocab, usize::MAX, "bigram-test", Split::Test);
    let cfg = FceConfig {
        synthetic_size: 3000,
        repeats,
        lm: control_lm(),
        seed: seed ^ 0xfce,
    };
    let run = fce(&lang, &test, &vocab, &cfg).unwrap();
    ControlRun {
        entropy: lang.sentence_entropy(),
        run,
    }
}
