use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use capvae::checkpoint::Checkpoint;
use capvae::corpus::{build_vocab, tokenize, Corpus, Split, Vocab};
use capvae::decoding::{distinct_count, homotopy, DecodeKind, DecodePolicy};
use capvae::harness::{
    fce, generate_corpus, metrics_report, prior_codes, reconstruction_report, FceConfig, VaeSource,
};
use capvae::oracle::DiscreteWorld;
use capvae::probe::{probe, read_pairs, CodeMode, VaeScorer};
use capvae::report::{
    bounds_table, fce_table, metrics_table, probe_table, reconstruction_table, trace_table, FceRow,
};
use capvae::train::{train_with, ObjectiveKind};
use capvae_autodiff::CellKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest::{Manifest, SeedSource};
use crate::UsageError;

#[derive(Debug, Parser)]
#[command(
    name = "capvae",
    version,
    about = "Train and evaluate text VAEs with a KL capacity target"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Flags override config file values.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration file (`key = value` lines under `[section]` headers)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; drawn at random and recorded in the manifest when omitted
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct CheckpointArg {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VAE and write model.ckpt, vocab.txt and trace.csv
    Train {
        #[command(flatten)]
        common: Common,
        /// Training sentences, one per line
        #[arg(long)]
        train: Option<PathBuf>,
        /// Development sentences for the per-epoch trace
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Existing vocabulary file; built from the training data when absent
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Capacity target C in nats
        #[arg(long)]
        c: Option<f64>,
        /// Weight of the capacity penalty
        #[arg(long)]
        beta: Option<f64>,
        /// abs_penalty or max_free_bits
        #[arg(long)]
        objective: Option<ObjectiveKind>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// gru or lstm
        #[arg(long)]
        cell: Option<CellKind>,
        /// Latent size; 0 trains a plain language model
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Drop sentences longer than this many tokens
        #[arg(long)]
        max_tokens: Option<usize>,
        /// Use the large architecture (256/512/64, lr 8.5e-4)
        #[arg(long)]
        large: bool,
    },
    /// Greedy reconstruction BLEU/ROUGE per length bucket
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Test sentences, one per line
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Decode sentences from prior samples
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Number of sentences
        #[arg(long)]
        n: Option<usize>,
        /// greedy, topk:K or nucleus:P
        #[arg(long)]
        policy: Option<DecodeKind>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Rate, distortion, latent statistics and reconstruction scores on a test set
    Metrics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Forward cross-entropy of language models trained on generated text
    Fce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Human test sentences scored by each language model
        #[arg(long)]
        test: Option<PathBuf>,
        /// Vocabulary shared across compared corpora; defaults to the checkpoint's
        #[arg(long)]
        shared_vocab: Option<PathBuf>,
        #[arg(long)]
        policy: Option<DecodeKind>,
        /// Sentences per synthetic corpus; defaults to the training-set size
        #[arg(long)]
        synthetic_size: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Language model epochs; defaults to the VAE's
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Minimal-pair grammaticality probe
    Probe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Tab-separated pairs: category, sub_category, grammatical, ungrammatical
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Use one posterior sample per sentence instead of the posterior mean
        #[arg(long)]
        sample_codes: bool,
    },
    /// Decode points on the straight line between two codes
    Homotopy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Start sentence (encoded to its posterior mean); a prior draw when omitted
        #[arg(long, requires = "to")]
        from: Option<String>,
        /// End sentence
        #[arg(long, requires = "from")]
        to: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        policy: Option<DecodeKind>,
    },
    /// Check H − D ≤ I ≤ R on a finite world with Gaussian encoders
    Oracle {
        #[command(flatten)]
        common: Common,
        /// World file
        #[arg(long)]
        world: Option<PathBuf>,
        /// Monte-Carlo samples per estimate
        #[arg(long)]
        samples: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Reconstruct { common, .. }
            | Command::Generate { common, .. }
            | Command::Metrics { common, .. }
            | Command::Fce { common, .. }
            | Command::Probe { common, .. }
            | Command::Homotopy { common, .. }
            | Command::Oracle { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Generate { .. } => "generate",
            Command::Metrics { .. } => "metrics",
            Command::Fce { .. } => "fce",
            Command::Probe { .. } => "probe",
            Command::Homotopy { .. } => "homotopy",
            Command::Oracle { .. } => "oracle",
        }
    }
}

/// Settings resolved from the config file, flags and the seed.
struct Ctx {
    cfg: RunConfig,
    seed: u64,
    seed_source: SeedSource,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => RunConfig::read(path)?,
            None => RunConfig::default(),
        };
        let (seed, seed_source) = match common.seed.or(cfg.seed) {
            Some(s) => (s, SeedSource::Given),
            None => (rand::rng().random(), SeedSource::Drawn),
        };
        cfg.seed = Some(seed);
        cfg.train.seed = seed;
        if let Some(out) = &common.out {
            cfg.out_dir = out.clone();
        }
        let out = cfg.out_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            cfg,
            seed,
            seed_source,
            out,
        })
    }

    /// Independent sub-seeds for the separate random streams of a command.
    fn sub_seeds<const N: usize>(&self) -> [u64; N] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        std::array::from_fn(|_| rng.random())
    }

    fn checkpoint(&self, arg: &CheckpointArg) -> Result<(PathBuf, Checkpoint)> {
        let path = arg
            .checkpoint
            .clone()
            .or_else(|| self.cfg.data.checkpoint.clone())
            .ok_or_else(|| UsageError("--checkpoint is required".into()))?;
        let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        Ok((path, ckpt))
    }

    fn policy(&self, kind: Option<DecodeKind>, seed: u64) -> Result<DecodePolicy> {
        let policy = DecodePolicy {
            kind: kind.unwrap_or(self.cfg.policy),
            max_len: self.cfg.max_len,
            seed,
        };
        policy.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(policy)
    }

    fn corpus(
        &self,
        flag: &Option<PathBuf>,
        fallback: &Option<PathBuf>,
        what: &str,
        vocab: &Vocab,
        split: Split,
    ) -> Result<Corpus> {
        let path = flag
            .clone()
            .or_else(|| fallback.clone())
            .ok_or_else(|| UsageError(format!("--{what} is required")))?;
        Ok(Corpus::read(&path, vocab, self.cfg.max_tokens, split)?)
    }

    fn finish(
        &self,
        command: &str,
        checkpoint: Option<PathBuf>,
        outputs: Vec<PathBuf>,
        stdout: &mut dyn Write,
    ) -> Result<()> {
        for o in &outputs {
            writeln!(stdout, "wrote {}", o.display())?;
        }
        let manifest = Manifest {
            command,
            seed: self.seed,
            seed_source: self.seed_source,
            config_text: self.cfg.to_text(),
            checkpoint,
            outputs,
        };
        manifest.write(&self.out)?;
        Ok(())
    }
}

fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

pub fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let name = cli.command.name();
    let mut ctx = Ctx::new(cli.command.common())?;
    match cli.command {
        Command::Train {
            train,
            dev,
            vocab,
            c,
            beta,
            objective,
            epochs,
            lr,
            cell,
            latent_dim,
            max_tokens,
            large,
            ..
        } => {
            let t = &mut ctx.cfg.train;
            if large {
                let seed = t.seed;
                *t = capvae::train::TrainConfig {
                    c_target: t.c_target,
                    beta: t.beta,
                    objective: t.objective,
                    epochs: t.epochs,
                    cell: t.cell,
                    ..capvae::train::TrainConfig::large()
                };
                t.seed = seed;
            }
            if let Some(v) = c {
                t.c_target = v;
            }
            if let Some(v) = beta {
                t.beta = v;
            }
            if let Some(v) = objective {
                t.objective = v;
            }
            if let Some(v) = epochs {
                t.epochs = v;
            }
            if let Some(v) = lr {
                t.lr = v;
            }
            if let Some(v) = cell {
                t.cell = v;
            }
            if let Some(v) = latent_dim {
                t.latent_dim = v;
            }
            if let Some(v) = max_tokens {
                ctx.cfg.max_tokens = v;
            }
            if let Some(v) = vocab {
                ctx.cfg.data.vocab = Some(v);
            }
            ctx.cfg.train.validate().map_err(|e| UsageError(e.to_string()))?;
            let train_path = train
                .or_else(|| ctx.cfg.data.train.clone())
                .ok_or_else(|| UsageError("--train is required".into()))?;
            ctx.cfg.data.train = Some(train_path.clone());
            let vocab = match ctx.cfg.data.vocab.as_ref().filter(|p| p.exists()) {
                Some(p) => Vocab::read(p)?,
                None => {
                    let text = std::fs::read_to_string(&train_path)
                        .with_context(|| format!("reading {}", train_path.display()))?;
                    build_vocab(text.lines(), ctx.cfg.vocab_size)?
                }
            };
            let train_set = Corpus::read(&train_path, &vocab, ctx.cfg.max_tokens, Split::Train)?;
            let dev_set = ctx.corpus(&dev, &ctx.cfg.data.dev, "dev", &vocab, Split::Dev)?;
            writeln!(
                stderr,
                "training on {} sentences, |V| = {}, C = {}",
                train_set.len(),
                vocab.len(),
                ctx.cfg.train.c_target
            )?;
            let trained = train_with(&ctx.cfg.train, vocab.len(), &train_set, &dev_set, |r| {
                let _ = writeln!(
                    stderr,
                    "epoch {:>3}  loss {:.4}  dev D {:.4}  dev R {:.4}",
                    r.epoch, r.train_loss, r.dev_distortion, r.dev_rate
                );
            })?;
            let ckpt_path = ctx.out.join("model.ckpt");
            Checkpoint::from_trained(&trained, &vocab).save(&ckpt_path, ctx.cfg.precision)?;
            let vocab_path = ctx.out.join("vocab.txt");
            vocab.write(&vocab_path)?;
            let trace_path = ctx.out.join("trace.csv");
            trace_table(&trained.trace).save(&trace_path)?;
            ctx.finish(name, None, vec![ckpt_path, vocab_path, trace_path], stdout)
        }
        Command::Reconstruct { ckpt, test, .. } => {
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            let test = ctx.corpus(&test, &ctx.cfg.data.test, "test", &ck.vocab, Split::Test)?;
            let report = reconstruction_report(&ck.model, &test, ctx.seed)?;
            for label in &report.omitted {
                writeln!(stderr, "note: bucket {label} has no sentences and is omitted")?;
            }
            for r in &report.rows {
                writeln!(
                    stdout,
                    "{:<8} n={:<6} BLEU-2 {}  BLEU-4 {}  ROUGE-2 {}  ROUGE-4 {}",
                    r.bucket.label,
                    r.sentences,
                    percent(r.bleu2),
                    percent(r.bleu4),
                    r.rouge2.map(percent).unwrap_or("-".into()),
                    r.rouge4.map(percent).unwrap_or("-".into())
                )?;
            }
            let out = ctx.out.join("reconstruction.csv");
            reconstruction_table(&report).save(&out)?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Generate {
            ckpt,
            n,
            policy,
            max_len,
            ..
        } => {
            if let Some(m) = max_len {
                ctx.cfg.max_len = m;
            }
            if let Some(p) = policy {
                ctx.cfg.policy = p;
            }
            if let Some(n) = n {
                ctx.cfg.generate = n;
            }
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            let [z_seed, decode_seed] = ctx.sub_seeds();
            let policy = ctx.policy(None, decode_seed)?;
            let generated = generate_corpus(&ck.model, ctx.cfg.generate, &policy, z_seed)?;
            if generated.empty > 0 {
                writeln!(
                    stderr,
                    "warning: {} generated sentences are empty",
                    generated.empty
                )?;
            }
            let out = ctx.out.join("generated.txt");
            let mut text = generated.corpus.to_lines(&ck.vocab).join("\n");
            text.push('\n');
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Metrics { ckpt, test, .. } => {
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            let test = ctx.corpus(&test, &ctx.cfg.data.test, "test", &ck.vocab, Split::Test)?;
            let report = metrics_report(&ck.model, ck.config.c_target, &test, ctx.seed)?;
            writeln!(
                stdout,
                "C {}  D {:.4}  R {:.4}  AU {}  log det Cov {:.4}  |mean|^2 {:.4}",
                report.c_target,
                report.distortion,
                report.rate,
                report.active_units,
                report.log_det_cov,
                report.mean_norm_sq
            )?;
            let out = ctx.out.join("metrics.csv");
            metrics_table(&[report]).save(&out)?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Fce {
            ckpt,
            test,
            shared_vocab,
            policy,
            synthetic_size,
            repeats,
            epochs,
            ..
        } => {
            if let Some(r) = repeats {
                ctx.cfg.repeats = r;
            }
            if let Some(s) = synthetic_size {
                ctx.cfg.synthetic_size = Some(s);
            }
            if let Some(p) = policy {
                ctx.cfg.policy = p;
            }
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            let shared = match &shared_vocab {
                Some(p) => Vocab::read(p)?,
                None => ck.vocab.clone(),
            };
            let test = ctx.corpus(&test, &ctx.cfg.data.test, "test", &shared, Split::Test)?;
            let size = match (ctx.cfg.synthetic_size, &ctx.cfg.data.train) {
                (Some(s), _) => s,
                (None, Some(train)) => std::fs::read_to_string(train)
                    .with_context(|| format!("reading {}", train.display()))?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .count(),
                (None, None) => {
                    return Err(
                        UsageError("--synthetic-size is required without a training corpus".into()).into(),
                    )
                }
            };
            let [decode_seed, fce_seed] = ctx.sub_seeds();
            let mut lm = ck.config.clone();
            if let Some(e) = epochs {
                lm.epochs = e;
            }
            let cfg = FceConfig {
                synthetic_size: size,
                repeats: ctx.cfg.repeats,
                lm,
                seed: fce_seed,
            };
            let source = VaeSource {
                model: &ck.model,
                vocab: &ck.vocab,
                policy: ctx.policy(None, decode_seed)?,
            };
            let run = fce(&source, &test, &shared, &cfg)?;
            writeln!(
                stdout,
                "FCE {:.4} ({:.4})  %unk generated {:.2}  %unk test {:.2}  mean len {:.2}  self-BLEU-4 {}",
                run.mean,
                run.std,
                run.unk_generated,
                run.unk_test,
                run.mean_len,
                percent(run.self_bleu4)
            )?;
            let out = ctx.out.join("fce.csv");
            let row = FceRow {
                corpus: &test.source,
                c_target: ck.config.c_target,
                vocab_size: shared.len(),
                run: &run,
            };
            fce_table(&[row]).save(&out)?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Probe {
            ckpt,
            pairs,
            sample_codes,
            ..
        } => {
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            let pairs_path = pairs
                .or_else(|| ctx.cfg.data.pairs.clone())
                .ok_or_else(|| UsageError("--pairs is required".into()))?;
            let pairs = read_pairs(&pairs_path)?;
            let mut scorer = VaeScorer::new(&ck.model, &ck.vocab);
            if sample_codes {
                scorer.mode = CodeMode::Sample(ctx.seed);
            }
            let rows = probe(&scorer, &pairs)?;
            for r in &rows {
                writeln!(
                    stdout,
                    "{} / {}: p1 {:.3} p2 {:.3} p1_bar {:.3} p2_bar {:.3} ({} pairs)",
                    r.category, r.sub_category, r.p1, r.p2, r.p1_bar, r.p2_bar, r.n_pairs
                )?;
            }
            let out = ctx.out.join("probe.csv");
            probe_table(&rows).save(&out)?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Homotopy {
            ckpt,
            from,
            to,
            steps,
            policy,
            ..
        } => {
            if let Some(s) = steps {
                ctx.cfg.steps = s;
            }
            let (path, ck) = ctx.checkpoint(&ckpt)?;
            if ck.model.is_language_model() {
                return Err(UsageError("homotopy needs a model with a latent code".into()).into());
            }
            let [z_seed, decode_seed] = ctx.sub_seeds();
            let (z1, z2) = match (from, to) {
                (Some(a), Some(b)) => {
                    let code = |s: &str| -> Result<Vec<f64>> {
                        let ids = ck.vocab.encode(&tokenize(s));
                        Ok(ck.model.encode(&ids)?.mu)
                    };
                    (code(&a)?, code(&b)?)
                }
                _ => {
                    let mut codes = prior_codes(2, ck.model.dims.latent_dim, z_seed);
                    let z2 = codes.pop().expect("two codes");
                    (codes.pop().expect("two codes"), z2)
                }
            };
            let policy = ctx.policy(policy, decode_seed)?;
            let rows = homotopy(&ck.model, &z1, &z2, ctx.cfg.steps, &policy)?;
            let lines: Vec<String> = rows.iter().map(|r| ck.vocab.decode(r).join(" ")).collect();
            for (i, l) in lines.iter().enumerate() {
                writeln!(stdout, "{i}: {l}")?;
            }
            writeln!(stdout, "distinct: {}", distinct_count(&rows))?;
            let out = ctx.out.join("homotopy.txt");
            std::fs::write(&out, lines.join("\n") + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            ctx.finish(name, Some(path), vec![out], stdout)
        }
        Command::Oracle { world, samples, .. } => {
            if let Some(s) = samples {
                ctx.cfg.samples = s;
            }
            let world_path = world
                .or_else(|| ctx.cfg.data.world.clone())
                .ok_or_else(|| UsageError("--world is required".into()))?;
            let w = DiscreteWorld::read(&world_path)?;
            let report = w.bounds_check(ctx.cfg.samples, ctx.seed)?;
            writeln!(stdout, "{report}")?;
            let out = ctx.out.join("bounds.csv");
            bounds_table(&label(&world_path), &report).save(&out)?;
            ctx.finish(name, None, vec![out], stdout)
        }
    }
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
