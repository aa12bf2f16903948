//! Provenance record written next to every command's outputs. It is the only
//! output that carries a timestamp.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Whether the seed came from the user or was drawn for this run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSource {
    Given,
    Drawn,
}

pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub config_text: String,
    pub checkpoint: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest<'_> {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut out = String::new();
        let _ = writeln!(out, "tool = capvae {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command = {}", self.command);
        let source = match self.seed_source {
            SeedSource::Given => "given",
            SeedSource::Drawn => "drawn",
        };
        let _ = writeln!(out, "seed = {} ({source})", self.seed);
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(out, "created_unix = {secs}");
        if let Some(ckpt) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint = {}", ckpt.display());
            let _ = writeln!(out, "checkpoint_sha256 = {}", sha256_file(ckpt)?);
        }
        for o in &self.outputs {
            let _ = writeln!(out, "output = {} sha256={}", o.display(), sha256_file(o)?);
        }
        out.push_str("\n# effective configuration\n");
        out.push_str(&self.config_text);
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
