//! Checkpoint files: a UTF-8 text header followed by a raw little-endian
//! float payload.
//!
//! ```text
//! capvae-checkpoint v1
//! [config]
//! key = value                      (every TrainConfig field)
//! [state]
//! epochs_done = 10
//! rng_seed = <64 hex digits>
//! rng_stream = 0
//! rng_word_pos = 1234
//! [vocab]
//! count = N
//! <N content tokens, one per line, ids 4..4+N>
//! [tensors]
//! precision = f64 | f32
//! tensor <name> <dim>x<dim>… <byte offset> <element count>
//! end
//! <payload>
//! ```
//!
//! Tensor lines appear in parameter order; offsets are relative to the first
//! payload byte and tensors are stored back to back.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::VaeModel;
use crate::train::{TrainConfig, Trained};

pub const MAGIC: &str = "capvae-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: VaeModel,
    pub epochs_done: usize,
    pub rng: ChaCha8Rng,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// `key = value` lines for every config field, in a fixed order.
pub fn config_lines(cfg: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("beta".into(), cfg.beta.to_string()),
        ("c_target".into(), cfg.c_target.to_string()),
        ("objective".into(), cfg.objective.to_string()),
        ("lr".into(), cfg.lr.to_string()),
        ("epochs".into(), cfg.epochs.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("cell".into(), cfg.cell.as_str().to_string()),
        ("emb_dim".into(), cfg.emb_dim.to_string()),
        ("hidden".into(), cfg.hidden.to_string()),
        ("latent_dim".into(), cfg.latent_dim.to_string()),
        ("grad_clip".into(), cfg.grad_clip.to_string()),
    ]
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(format!("bad value for {key}: {value:?}")))
}

/// Applies one `key = value` setting to a config. Unknown keys are errors.
pub fn apply_config_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "beta" => cfg.beta = parse_value(key, value)?,
        "c_target" => cfg.c_target = parse_value(key, value)?,
        "objective" => cfg.objective = value.parse()?,
        "lr" => cfg.lr = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "cell" => {
            cfg.cell = value
                .parse()
                .map_err(|e: capvae_autodiff::Error| bad(e.to_string()))?
        }
        "emb_dim" => cfg.emb_dim = parse_value(key, value)?,
        "hidden" => cfg.hidden = parse_value(key, value)?,
        "latent_dim" => cfg.latent_dim = parse_value(key, value)?,
        "grad_clip" => cfg.grad_clip = parse_value(key, value)?,
        other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Reads `\n`-terminated UTF-8 lines off the front of a byte buffer.
struct HeaderLines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderLines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.bytes[self.pos..];
        let n = rest.iter().position(|&b| b == b'\n')?;
        let line = std::str::from_utf8(&rest[..n]).ok()?;
        self.pos += n + 1;
        Some(line)
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

impl Checkpoint {
    pub fn from_trained(trained: &Trained, vocab: &Vocab) -> Self {
        Self {
            config: trained.config.clone(),
            vocab: vocab.clone(),
            model: trained.model.clone(),
            epochs_done: trained.epochs_done,
            rng: trained.rng.clone(),
        }
    }

    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut h = String::new();
        h.push_str(MAGIC);
        h.push_str("\n[config]\n");
        for (k, v) in config_lines(&self.config) {
            h.push_str(&format!("{k} = {v}\n"));
        }
        h.push_str("[state]\n");
        h.push_str(&format!("epochs_done = {}\n", self.epochs_done));
        h.push_str(&format!("rng_seed = {}\n", hex(&self.rng.get_seed())));
        h.push_str(&format!("rng_stream = {}\n", self.rng.get_stream()));
        h.push_str(&format!("rng_word_pos = {}\n", self.rng.get_word_pos()));
        h.push_str("[vocab]\n");
        let tokens = self.vocab.content_tokens();
        h.push_str(&format!("count = {}\n", tokens.len()));
        for t in tokens {
            h.push_str(t);
            h.push('\n');
        }
        h.push_str("[tensors]\n");
        h.push_str(&format!("precision = {}\n", precision.as_str()));
        let store = &self.model.store;
        let mut offset = 0;
        for id in store.ids() {
            let v = store.value(id);
            let dims: Vec<String> = v.shape().iter().map(|d| d.to_string()).collect();
            let dims = if dims.is_empty() {
                "scalar".to_string()
            } else {
                dims.join("x")
            };
            h.push_str(&format!(
                "tensor {} {} {} {}\n",
                store.name(id),
                dims,
                offset,
                v.numel()
            ));
            offset += v.numel() * precision.width();
        }
        h.push_str("end\n");
        let mut out = h.into_bytes();
        out.reserve(offset);
        for id in store.ids() {
            for &x in store.value(id).data() {
                match precision {
                    Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = HeaderLines { bytes, pos: 0 };
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("not a checkpoint (expected `{MAGIC}`)")));
        }

        let expect_section = |lines: &mut HeaderLines, name: &str| -> Result<()> {
            match lines.next() {
                Some(l) if l == name => Ok(()),
                other => Err(bad(format!("expected {name}, found {other:?}"))),
            }
        };
        let kv = |line: Option<&str>| -> Result<(String, String)> {
            let line = line.ok_or_else(|| bad("truncated header"))?;
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            Ok((k.to_string(), v.to_string()))
        };

        expect_section(&mut lines, "[config]")?;
        let mut config = TrainConfig::desk();
        let n_keys = config_lines(&config).len();
        for _ in 0..n_keys {
            let (k, v) = kv(lines.next())?;
            apply_config_key(&mut config, &k, &v).map_err(|e| bad(e.to_string()))?;
        }
        config.validate().map_err(|e| bad(e.to_string()))?;

        expect_section(&mut lines, "[state]")?;
        let mut field = |key: &str| -> Result<String> {
            let (k, v) = kv(lines.next())?;
            if k != key {
                return Err(bad(format!("expected {key}, found {k}")));
            }
            Ok(v)
        };
        let epochs_done: usize = parse_value("epochs_done", &field("epochs_done")?)?;
        let seed = unhex(&field("rng_seed")?).ok_or_else(|| bad("rng_seed must be 64 hex digits"))?;
        let stream: u64 = parse_value("rng_stream", &field("rng_stream")?)?;
        let word_pos: u128 = parse_value("rng_word_pos", &field("rng_word_pos")?)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        expect_section(&mut lines, "[vocab]")?;
        let (k, v) = kv(lines.next())?;
        if k != "count" {
            return Err(bad("expected vocab count"));
        }
        let count: usize = parse_value("count", &v)?;
        let mut tokens = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            tokens.push(
                lines
                    .next()
                    .ok_or_else(|| bad("truncated vocabulary"))?
                    .to_string(),
            );
        }
        let vocab = Vocab::from_tokens(tokens).map_err(|e| bad(e.to_string()))?;

        expect_section(&mut lines, "[tensors]")?;
        let (k, v) = kv(lines.next())?;
        let precision = match (k.as_str(), v.as_str()) {
            ("precision", "f64") => Precision::F64,
            ("precision", "f32") => Precision::F32,
            _ => return Err(bad(format!("bad precision line `{k} = {v}`"))),
        };

        let mut directory = Vec::new();
        loop {
            match lines.next() {
                Some("end") => break,
                Some(line) => directory.push(line),
                None => return Err(bad("missing `end` after the tensor directory")),
            }
        }
        let payload = lines.rest();
        let w = precision.width();
        let dims = config.dims(vocab.len());
        // Checked before allocating so a corrupt header cannot request a
        // huge model.
        let expected = dims.num_scalars().and_then(|n| n.checked_mul(w));
        if expected != Some(payload.len()) {
            return Err(bad(format!(
                "payload has {} bytes, model needs {expected:?}",
                payload.len()
            )));
        }
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let mut model = VaeModel::new(dims, &mut dummy).map_err(|e| bad(e.to_string()))?;
        let ids: Vec<_> = model.store.ids().collect();
        if directory.len() != ids.len() {
            return Err(bad(format!(
                "{} tensor lines, model has {} tensors",
                directory.len(),
                ids.len()
            )));
        }
        let mut expected_offset = 0usize;
        for (id, line) in ids.into_iter().zip(directory) {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 5 || parts[0] != "tensor" {
                return Err(bad(format!("malformed tensor line {line:?}")));
            }
            let name = model.store.name(id).to_string();
            if parts[1] != name {
                return Err(bad(format!("expected tensor {name}, found {}", parts[1])));
            }
            let shape: Vec<usize> = if parts[2] == "scalar" {
                Vec::new()
            } else {
                parts[2]
                    .split('x')
                    .map(|d| parse_value("tensor dimension", d))
                    .collect::<Result<_>>()?
            };
            let target = model.store.value(id);
            if shape != target.shape() {
                return Err(bad(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    target.shape()
                )));
            }
            let offset: usize = parse_value("offset", parts[3])?;
            let len: usize = parse_value("length", parts[4])?;
            if offset != expected_offset || len != target.numel() {
                return Err(bad(format!("tensor {name} has inconsistent offset or length")));
            }
            let bytes = &payload[offset..offset + len * w];
            let values: Vec<f64> = bytes
                .chunks_exact(w)
                .map(|c| match precision {
                    Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                    Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                })
                .collect();
            if values.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("tensor {name} holds non-finite values")));
            }
            model.store.value_mut(id).data_mut().copy_from_slice(&values);
            expected_offset += len * w;
        }
        Ok(Self {
            config,
            vocab,
            model,
            epochs_done,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes(precision)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
