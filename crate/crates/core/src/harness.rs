//! Experiment pipelines: bucketed reconstruction scores, synthetic corpus
//! generation from the prior, and forward cross-entropy (FCE).
//!
//! FCE trains a fresh language model on sentences drawn from a source (a VAE
//! decoding prior samples, or any other sampler) and reports its mean
//! per-sentence NLL on held-out human text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{bucketize, unk_rate, Bucket, Corpus, Split, TokenId, Vocab};
use crate::decoding::{generate_batch, DecodePolicy};
use crate::error::{Error, Result};
use crate::metrics::{
    active_units, bleu_n, log_det_cov, mean_norm_sq, rouge_n, self_bleu4, AU_THRESHOLD, SELF_BLEU_SAMPLE,
};
use crate::model::VaeModel;
use crate::synth::BigramLanguage;
use crate::train::{rate_distortion, train, TrainConfig};

/// Reconstruction scores for one length bucket. ROUGE is `None` when no
/// reference in the bucket has enough tokens for the order.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketScores {
    pub bucket: Bucket,
    pub sentences: usize,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge2: Option<f64>,
    pub rouge4: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub rows: Vec<BucketScores>,
    /// Labels of buckets left out because they held no sentences.
    pub omitted: Vec<&'static str>,
}

/// Encodes every test sentence, draws one posterior sample (generator seeded
/// with `seed`), greedy-decodes it and scores the output against the input
/// per length bucket. Sentences without content tokens are skipped.
pub fn reconstruction_report(model: &VaeModel, test: &Corpus, seed: u64) -> Result<ReconstructionReport> {
    if model.is_language_model() {
        return Err(Error::invalid("reconstruction needs a model with a latent code"));
    }
    let kept: Vec<Vec<TokenId>> = test.sentences.iter().filter(|s| s.len() > 2).cloned().collect();
    if kept.is_empty() {
        return Err(Error::Empty("test corpus has no non-empty sentences".into()));
    }
    let refs: Vec<&[TokenId]> = kept.iter().map(|s| s.as_slice()).collect();
    let posts = model.encode_batch(&refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Vec<f64>> = posts.iter().map(|p| p.sample(&mut rng)).collect();
    let mut decode_rng = ChaCha8Rng::seed_from_u64(seed);
    let decoded = generate_batch(model, &codes, 0, &DecodePolicy::greedy(), &mut decode_rng)?;

    let framed = test.with_sentences(kept);
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for (bucket, _) in bucketize(&framed) {
        let (cands, refs): (Vec<Vec<TokenId>>, Vec<Vec<TokenId>>) = framed
            .contents()
            .zip(&decoded)
            .filter(|(r, _)| bucket.contains(r.len()))
            .map(|(r, c)| (c.clone(), r.to_vec()))
            .unzip();
        if cands.is_empty() {
            omitted.push(bucket.label);
            continue;
        }
        rows.push(BucketScores {
            bucket,
            sentences: cands.len(),
            bleu2: bleu_n(&cands, &refs, 2)?,
            bleu4: bleu_n(&cands, &refs, 4)?,
            rouge2: rouge_n(&cands, &refs, 2).ok(),
            rouge4: rouge_n(&cands, &refs, 4).ok(),
        });
    }
    Ok(ReconstructionReport { rows, omitted })
}

/// `n` standard normal codes of dimension `dim` from a generator seeded with
/// `seed`. The same seed gives the same codes for every model of that
/// latent size.
pub fn prior_codes(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
        .collect()
}

/// A generated corpus plus the number of sentences that ended immediately.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub corpus: Corpus,
    pub empty: usize,
}

/// Decodes `n` prior draws under `policy`. Codes come from `seed` (see
/// [`prior_codes`]), token sampling from `policy.seed`, so corpora from
/// different checkpoints share their codes when they share `seed`. Language
/// models decode `n` unconditional sentences. Empty sentences are kept.
pub fn generate_corpus(model: &VaeModel, n: usize, policy: &DecodePolicy, seed: u64) -> Result<Generated> {
    if n == 0 {
        return Err(Error::invalid("generate at least one sentence"));
    }
    let codes = if model.is_language_model() {
        Vec::new()
    } else {
        prior_codes(n, model.dims.latent_dim, seed)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let content = generate_batch(model, &codes, n, policy, &mut rng)?;
    let empty = content.iter().filter(|s| s.is_empty()).count();
    Ok(Generated {
        corpus: Corpus::from_content(content, "generated", Split::Generated),
        empty,
    })
}

/// Anything that can produce tokenized sentences for FCE.
pub trait SentenceSource {
    /// Short description for reports.
    fn label(&self) -> String;

    /// `n` sentences as token strings; `seed` fixes every random choice.
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<String>>>;
}

/// Prior samples decoded by a trained VAE, rendered through its vocabulary.
/// The sampling seed of `policy` is replaced by one derived from each
/// request's seed.
pub struct VaeSource<'a> {
    pub model: &'a VaeModel,
    pub vocab: &'a Vocab,
    pub policy: DecodePolicy,
}

impl SentenceSource for VaeSource<'_> {
    fn label(&self) -> String {
        self.policy.kind.to_string()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<String>>> {
        let policy = DecodePolicy {
            seed: seed ^ DECODE_STREAM,
            ..self.policy
        };
        let generated = generate_corpus(self.model, n, &policy, seed)?;
        Ok(generated
            .corpus
            .sentences
            .iter()
            .map(|s| self.vocab.decode(s))
            .collect())
    }
}

/// Keeps the decoding stream of a repeat apart from its code stream.
const DECODE_STREAM: u64 = 0xdec0_de00_5eed;

impl SentenceSource for BigramLanguage {
    fn label(&self) -> String {
        format!("bigram({} tokens)", self.num_tokens())
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<String>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.sentence(&mut rng)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FceConfig {
    /// Sentences per synthetic training corpus.
    pub synthetic_size: usize,
    pub repeats: usize,
    /// Language model settings; `latent_dim` is forced to 0.
    pub lm: TrainConfig,
    pub seed: u64,
}

impl FceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::invalid("FCE needs at least one repeat"));
        }
        if self.synthetic_size < 2 {
            return Err(Error::invalid("synthetic corpus needs at least two sentences"));
        }
        self.lm.validate()
    }
}

/// FCE outcome over all repeats. Corpus statistics (`unk_generated`,
/// `mean_len`, `self_bleu4`) describe the first repeat's synthetic corpus
/// after remapping through the shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct FceRun {
    pub source: String,
    pub synthetic_size: usize,
    pub nll: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over repeats, 0 for a single repeat.
    pub std: f64,
    pub unk_generated: f64,
    pub unk_test: f64,
    pub mean_len: f64,
    pub self_bleu4: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Forward cross-entropy. Each repeat draws a fresh synthetic corpus,
/// encodes it with `shared_vocab`, trains a decoder-shaped language model on
/// it from scratch and records the mean per-sentence NLL of `human_test`
/// (which must already be encoded with `shared_vocab`).
pub fn fce(
    source: &dyn SentenceSource,
    human_test: &Corpus,
    shared_vocab: &Vocab,
    cfg: &FceConfig,
) -> Result<FceRun> {
    cfg.validate()?;
    if human_test.is_empty() {
        return Err(Error::Empty("human test corpus".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nll = Vec::with_capacity(cfg.repeats);
    let mut first: Option<Corpus> = None;
    let dev_size = (cfg.synthetic_size / 10).max(1);
    for _ in 0..cfg.repeats {
        let corpus_seed: u64 = seeds.random();
        let dev_seed: u64 = seeds.random();
        let lm_seed: u64 = seeds.random();
        let train_set = encode_sample(source, cfg.synthetic_size, corpus_seed, shared_vocab)?;
        if train_set.contents().all(|c| c.is_empty()) {
            return Err(Error::Empty("synthetic corpus has only empty sentences".into()));
        }
        let dev_set = encode_sample(source, dev_size, dev_seed, shared_vocab)?;
        let lm_cfg = TrainConfig {
            latent_dim: 0,
            seed: lm_seed,
            ..cfg.lm.clone()
        };
        let lm = train(&lm_cfg, shared_vocab.len(), &train_set, &dev_set)?;
        nll.push(rate_distortion(&lm.model, human_test, 0)?.1);
        first.get_or_insert(train_set);
    }
    let first = first.expect("at least one repeat");
    let (mean, std) = mean_std(&nll);
    let contents: Vec<Vec<TokenId>> = first.contents().map(|c| c.to_vec()).collect();
    Ok(FceRun {
        source: source.label(),
        synthetic_size: cfg.synthetic_size,
        nll,
        mean,
        std,
        unk_generated: unk_rate(&first),
        unk_test: unk_rate(human_test),
        mean_len: first.mean_length(),
        self_bleu4: self_bleu4(&contents, SELF_BLEU_SAMPLE)?,
    })
}

fn encode_sample(source: &dyn SentenceSource, n: usize, seed: u64, vocab: &Vocab) -> Result<Corpus> {
    let sentences = source.sample(n, seed)?.iter().map(|t| vocab.encode(t)).collect();
    Ok(Corpus {
        sentences,
        source: source.label(),
        split: Split::Generated,
    })
}

/// Latent-space and reconstruction diagnostics of one model on one corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub corpus: String,
    pub c_target: f64,
    pub distortion: f64,
    pub rate: f64,
    /// `-inf` when the sample covariance is singular.
    pub log_det_cov: f64,
    pub mean_norm_sq: f64,
    pub active_units: usize,
    pub reconstruction: ReconstructionReport,
    pub unk_rate: f64,
    pub mean_len: f64,
    pub self_bleu4: f64,
}

/// Computes every diagnostic with posterior samples and reconstructions
/// drawn from generators seeded with `seed`. Aggregate-posterior statistics
/// use one sample per non-empty sentence.
pub fn metrics_report(model: &VaeModel, c_target: f64, test: &Corpus, seed: u64) -> Result<MetricsReport> {
    let (rate, distortion) = rate_distortion(model, test, seed)?;
    let refs: Vec<&[TokenId]> = test
        .sentences
        .iter()
        .filter(|s| s.len() > 2)
        .map(|s| s.as_slice())
        .collect();
    let posts = model.encode_batch(&refs)?;
    let means: Vec<Vec<f64>> = posts.iter().map(|p| p.mu.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = posts.iter().map(|p| p.sample(&mut rng)).collect();
    let contents: Vec<Vec<TokenId>> = test.contents().map(|c| c.to_vec()).collect();
    Ok(MetricsReport {
        corpus: test.source.clone(),
        c_target,
        distortion,
        rate,
        log_det_cov: log_det_cov(&samples)?.value(),
        mean_norm_sq: mean_norm_sq(&samples)?,
        active_units: active_units(&means, AU_THRESHOLD)?,
        reconstruction: reconstruction_report(model, test, seed)?,
        unk_rate: unk_rate(test),
        mean_len: test.mean_length(),
        self_bleu4: self_bleu4(&contents, SELF_BLEU_SAMPLE)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        let (m2, s2) = mean_std(&[3.0, 1.0, 2.0]);
        assert_eq!((m, s), (m2, s2));
    }

    #[test]
    fn prior_codes_depend_only_on_seed() {
        assert_eq!(prior_codes(4, 3, 9), prior_codes(4, 3, 9));
        assert_ne!(prior_codes(4, 3, 9), prior_codes(4, 3, 10));
        assert_eq!(prior_codes(4, 3, 9)[..2], prior_codes(2, 3, 9)[..]);
    }
}
