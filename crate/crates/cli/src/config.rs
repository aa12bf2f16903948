//! Run configuration files: `key = value` lines grouped under `[section]`
//! headers, `#` comments. Keys before the first header belong to the top
//! level. Unknown sections and keys are rejected, and relative paths are
//! resolved against the directory holding the file.
//!
//! ```text
//! seed = 7
//! [data]
//! train = data/train.txt
//! dev = data/dev.txt
//! test = data/test.txt
//! max_tokens = 20
//! [train]
//! c_target = 15
//! cell = gru
//! [decode]
//! policy = nucleus:0.9
//! [output]
//! dir = runs/c15
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use capvae::checkpoint::{apply_config_key, config_lines, Precision};
use capvae::decoding::{DecodeKind, DEFAULT_HOMOTOPY_STEPS, DEFAULT_MAX_LEN};
use capvae::oracle::DEFAULT_SAMPLES;
use capvae::train::TrainConfig;
use thiserror::Error;

/// `line` is 0 for problems with the configuration as a whole.
#[derive(Debug, Error)]
#[error("config{}: {msg}", if *.line > 0 { format!(" line {}", .line) } else { String::new() })]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        msg: msg.into(),
    }
}

pub const DEFAULT_VOCAB_SIZE: usize = 20_000;
pub const DEFAULT_MAX_TOKENS: usize = capvae::corpus::DEFAULT_MAX_TOKENS;
pub const DEFAULT_REPEATS: usize = 3;
pub const DEFAULT_GENERATE: usize = 100;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub train: TrainConfig,
    pub policy: DecodeKind,
    pub max_len: usize,
    pub steps: usize,
    pub generate: usize,
    pub synthetic_size: Option<usize>,
    pub repeats: usize,
    pub samples: usize,
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataPaths::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            train: TrainConfig::desk(),
            policy: DecodeKind::Greedy,
            max_len: DEFAULT_MAX_LEN,
            steps: DEFAULT_HOMOTOPY_STEPS,
            generate: DEFAULT_GENERATE,
            synthetic_size: None,
            repeats: DEFAULT_REPEATS,
            samples: DEFAULT_SAMPLES,
            out_dir: PathBuf::from("."),
            precision: Precision::F64,
        }
    }
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| err(line, format!("bad value for `{key}`: {value:?}")))
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses `text`, resolving relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self {
            out_dir: base_dir.to_path_buf(),
            ..Self::default()
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(n, format!("unterminated section header {line:?}")))?;
                if !["data", "train", "decode", "fce", "oracle", "output"].contains(&name) {
                    return Err(err(n, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(&section, key, value, base_dir)
                .map_err(|msg| err(n, msg))?;
        }
        cfg.validate().map_err(|msg| err(0, msg))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        if self.vocab_size <= capvae::corpus::NUM_RESERVED {
            return Err(format!("vocab_size must exceed {}", capvae::corpus::NUM_RESERVED));
        }
        if self.max_tokens == 0 || self.max_len == 0 {
            return Err("max_tokens and max_len must be positive".into());
        }
        if self.steps < 2 {
            return Err("homotopy needs at least 2 steps".into());
        }
        if self.repeats == 0 || self.generate == 0 {
            return Err("repeats and count must be positive".into());
        }
        if self.samples < capvae::oracle::MIN_SAMPLES {
            return Err(format!(
                "oracle samples must be at least {}",
                capvae::oracle::MIN_SAMPLES
            ));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        use anyhow::Context;
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, base)?)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let num = |k: &str, v: &str| -> Result<usize, String> { number(0, k, v).map_err(|e| e.msg) };
        match (section, key) {
            ("", "seed") => self.seed = Some(number(0, key, value).map_err(|e| e.msg)?),
            ("data", "train") => self.data.train = Some(resolve(base, value)),
            ("data", "dev") => self.data.dev = Some(resolve(base, value)),
            ("data", "test") => self.data.test = Some(resolve(base, value)),
            ("data", "vocab") => self.data.vocab = Some(resolve(base, value)),
            ("data", "pairs") => self.data.pairs = Some(resolve(base, value)),
            ("data", "world") => self.data.world = Some(resolve(base, value)),
            ("data", "checkpoint") => self.data.checkpoint = Some(resolve(base, value)),
            ("data", "vocab_size") => self.vocab_size = num(key, value)?,
            ("data", "max_tokens") => self.max_tokens = num(key, value)?,
            ("train", "preset") => {
                let seed = self.train.seed;
                self.train = match value {
                    "desk" => TrainConfig::desk(),
                    "large" => TrainConfig::large(),
                    other => return Err(format!("unknown preset `{other}` (desk or large)")),
                };
                self.train.seed = seed;
            }
            ("train", k) => apply_config_key(&mut self.train, k, value).map_err(|e| e.to_string())?,
            ("decode", "policy") => self.policy = value.parse().map_err(|e: capvae::Error| e.to_string())?,
            ("decode", "max_len") => self.max_len = num(key, value)?,
            ("decode", "steps") => self.steps = num(key, value)?,
            ("decode", "count") => self.generate = num(key, value)?,
            ("fce", "synthetic_size") => self.synthetic_size = Some(num(key, value)?),
            ("fce", "repeats") => self.repeats = num(key, value)?,
            ("oracle", "samples") => self.samples = num(key, value)?,
            ("output", "dir") => self.out_dir = resolve(base, value),
            ("output", "precision") => {
                self.precision = match value {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    other => return Err(format!("unknown precision `{other}` (f64 or f32)")),
                }
            }
            (s, k) => {
                return Err(if s.is_empty() {
                    format!("unknown top-level key `{k}`")
                } else {
                    format!("unknown key `{k}` in [{s}]")
                })
            }
        }
        Ok(())
    }

    /// Canonical text form with absolute paths, used for manifests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed = {seed}");
        }
        out.push_str("[data]\n");
        let d = &self.data;
        for (k, v) in [
            ("train", &d.train),
            ("dev", &d.dev),
            ("test", &d.test),
            ("vocab", &d.vocab),
            ("pairs", &d.pairs),
            ("world", &d.world),
            ("checkpoint", &d.checkpoint),
        ] {
            if let Some(p) = v {
                let _ = writeln!(out, "{k} = {}", p.display());
            }
        }
        let _ = writeln!(
            out,
            "vocab_size = {}\nmax_tokens = {}",
            self.vocab_size, self.max_tokens
        );
        out.push_str("[train]\n");
        for (k, v) in config_lines(&self.train) {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(
            out,
            "[decode]\npolicy = {}\nmax_len = {}\nsteps = {}\ncount = {}",
            self.policy, self.max_len, self.steps, self.generate
        );
        out.push_str("[fce]\n");
        if let Some(n) = self.synthetic_size {
            let _ = writeln!(out, "synthetic_size = {n}");
        }
        let _ = writeln!(out, "repeats = {}", self.repeats);
        let _ = writeln!(out, "[oracle]\nsamples = {}", self.samples);
        let precision = match self.precision {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        };
        let _ = writeln!(
            out,
            "[output]\ndir = {}\nprecision = {precision}",
            self.out_dir.display()
        );
        out
    }
}
