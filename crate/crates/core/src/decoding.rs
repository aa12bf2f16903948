//! Greedy, top-k and nucleus decoding, and latent homotopies.
//!
//! Both filters break probability ties in favour of the lower token id.
//! Nucleus keeps the smallest descending-probability prefix whose mass
//! reaches `p`.

use std::fmt;
use std::str::FromStr;

use capvae_autodiff::Tape;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{codes_tensor, VaeModel};

pub const DEFAULT_MAX_LEN: usize = 50;
pub const DEFAULT_HOMOTOPY_STEPS: usize = 7;

/// Slack allowed when comparing cumulative mass against `p`, so that a
/// prefix whose exact mass equals `p` is not extended by roundoff.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeKind {
    Greedy,
    TopK(usize),
    Nucleus(f64),
}

impl DecodeKind {
    pub fn validate(self) -> Result<()> {
        match self {
            DecodeKind::TopK(0) => Err(Error::invalid("top-k needs k >= 1")),
            DecodeKind::Nucleus(p) if !(p > 0.0 && p <= 1.0) => Err(Error::invalid(format!(
                "nucleus threshold must lie in (0, 1], got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DecodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeKind::Greedy => write!(f, "greedy"),
            DecodeKind::TopK(k) => write!(f, "topk:{k}"),
            DecodeKind::Nucleus(p) => write!(f, "nucleus:{p}"),
        }
    }
}

impl FromStr for DecodeKind {
    type Err = Error;

    /// `greedy`, `topk:K` or `nucleus:P`.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.split_once(':') {
            None if s == "greedy" => DecodeKind::Greedy,
            Some(("topk", k)) => DecodeKind::TopK(
                k.parse()
                    .map_err(|_| Error::invalid(format!("bad top-k value `{k}`")))?,
            ),
            Some(("nucleus", p)) => DecodeKind::Nucleus(
                p.parse()
                    .map_err(|_| Error::invalid(format!("bad nucleus threshold `{p}`")))?,
            ),
            _ => return Err(Error::invalid(format!("unknown decoding policy `{s}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodePolicy {
    pub kind: DecodeKind,
    pub max_len: usize,
    pub seed: u64,
}

impl DecodePolicy {
    pub fn greedy() -> Self {
        Self {
            kind: DecodeKind::Greedy,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }

    pub fn new(kind: DecodeKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            max_len: DEFAULT_MAX_LEN,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        self.kind.validate()
    }
}

/// Ids sorted by descending probability, ties by ascending id.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn keep_renormalized(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for &i in keep {
        out[i] = probs[i] / mass;
    }
    out
}

/// Keeps the `k` most probable ids and renormalizes. `k >= |V|` returns the
/// input unchanged.
pub fn top_k_filter(probs: &[f64], k: usize) -> Vec<f64> {
    if k >= probs.len() {
        return probs.to_vec();
    }
    let order = ranked(probs);
    keep_renormalized(probs, &order[..k.max(1)])
}

/// Number of ids the nucleus filter keeps.
pub fn nucleus_size(probs: &[f64], p: f64) -> usize {
    let order = ranked(probs);
    let mut mass = 0.0;
    for (n, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= p - MASS_TOLERANCE {
            return n + 1;
        }
    }
    order.len()
}

/// Keeps the smallest high-probability prefix with mass `>= p` and
/// renormalizes. `p >= 1` returns the input unchanged.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let order = ranked(probs);
    let n = nucleus_size(probs, p);
    keep_renormalized(probs, &order[..n])
}

pub fn argmax(probs: &[f64]) -> usize {
    ranked(probs)[0]
}

fn sample_from(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

fn softmax_row(logits: &[f64], banned: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = logits.to_vec();
    for &b in banned {
        out[b] = f64::NEG_INFINITY;
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in out.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Picks the next token from a distribution under `kind`.
pub fn choose(kind: DecodeKind, probs: &[f64], rng: &mut impl Rng) -> usize {
    match kind {
        DecodeKind::Greedy => argmax(probs),
        DecodeKind::TopK(k) => sample_from(&top_k_filter(probs, k), rng),
        DecodeKind::Nucleus(p) => sample_from(&nucleus_filter(probs, p), rng),
    }
}

/// Sentences decoded per tape.
const GENERATE_CHUNK: usize = 128;

/// Decodes each code in `zs` (or `count` sentences from a language model
/// when `zs` is empty). Returns content tokens without `<s>`/`</s>`; at most
/// `max_len` tokens each. `<pad>` and `<s>` are never emitted.
///
/// Sampling draws from `rng` in sentence order, one draw per live sentence
/// per step.
pub fn generate_batch(
    model: &VaeModel,
    zs: &[Vec<f64>],
    count: usize,
    policy: &DecodePolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<TokenId>>> {
    policy.validate()?;
    let lm = model.is_language_model();
    let total = if lm { count } else { zs.len() };
    let mut out = Vec::with_capacity(total);
    let mut start = 0;
    while start < total {
        let end = (start + GENERATE_CHUNK).min(total);
        let b = end - start;
        let mut tape = Tape::new();
        let z = if lm {
            None
        } else {
            Some(tape.constant(codes_tensor(&zs[start..end], model.dims.latent_dim)?))
        };
        let latent = model.decoder.project_latent(&mut tape, &model.store, z)?;
        let mut state = model.decoder.start(&mut tape, b);
        let mut prev = vec![BOS; b];
        let mut done = vec![false; b];
        let mut seqs: Vec<Vec<TokenId>> = vec![Vec::new(); b];
        for _ in 0..policy.max_len + 1 {
            let (logits, next) = model
                .decoder
                .step(&mut tape, &model.store, &prev, latent, state)?;
            state = next;
            let logits = tape.value(logits).clone();
            for i in 0..b {
                if done[i] {
                    continue;
                }
                let probs = softmax_row(logits.row(i), &[PAD as usize, BOS as usize]);
                let tok = choose(policy.kind, &probs, rng) as TokenId;
                if tok == EOS || seqs[i].len() == policy.max_len {
                    done[i] = true;
                } else {
                    seqs[i].push(tok);
                    prev[i] = tok;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out.extend(seqs);
        start = end;
    }
    Ok(out)
}

/// Decodes one code with a generator seeded from `policy.seed`.
pub fn generate(model: &VaeModel, z: &[f64], policy: &DecodePolicy) -> Result<Vec<TokenId>> {
    if z.len() != model.dims.latent_dim {
        return Err(Error::invalid(format!(
            "latent code of dimension {}, model expects {}",
            z.len(),
            model.dims.latent_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    Ok(generate_batch(model, &[z.to_vec()], 1, policy, &mut rng)?.remove(0))
}

/// `(1 − t)·z1 + t·z2` for `t = 0, 1/(steps−1), …, 1`.
pub fn interpolate(z1: &[f64], z2: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps < 2 {
        return Err(Error::invalid("homotopy needs at least 2 steps"));
    }
    if z1.len() != z2.len() {
        return Err(Error::invalid("homotopy endpoints differ in dimension"));
    }
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            z1.iter().zip(z2).map(|(a, b)| (1.0 - t) * a + t * b).collect()
        })
        .collect())
}

/// Decodes every point of the straight path from `z1` to `z2`.
pub fn homotopy(
    model: &VaeModel,
    z1: &[f64],
    z2: &[f64],
    steps: usize,
    policy: &DecodePolicy,
) -> Result<Vec<Vec<TokenId>>> {
    let path = interpolate(z1, z2, steps)?;
    if z1.len() != model.dims.latent_dim {
        return Err(Error::invalid(format!(
            "latent code of dimension {}, model expects {}",
            z1.len(),
            model.dims.latent_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    generate_batch(model, &path, 0, policy, &mut rng)
}

/// Number of distinct sentences among decoded rows.
pub fn distinct_count(rows: &[Vec<TokenId>]) -> usize {
    let mut sorted: Vec<&Vec<TokenId>> = rows.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn top_k_examples() {
        assert!(close(
            &top_k_filter(&[0.5, 0.3, 0.1, 0.1], 2),
            &[0.625, 0.375, 0.0, 0.0]
        ));
        assert_eq!(top_k_filter(&[0.5, 0.3, 0.2], 3), vec![0.5, 0.3, 0.2]);
        let t = top_k_filter(&[0.4, 0.3, 0.3], 2);
        assert!(t[0] > 0.0 && t[1] > 0.0 && t[2] == 0.0);
    }

    #[test]
    fn nucleus_examples() {
        let f = nucleus_filter(&[0.5, 0.3, 0.15, 0.05], 0.9);
        assert!(close(&f, &[10.0 / 19.0, 6.0 / 19.0, 3.0 / 19.0, 0.0]));
        assert_eq!(nucleus_filter(&[0.2, 0.8], 1.0), vec![0.2, 0.8]);
        assert_eq!(nucleus_filter(&[0.95, 0.05], 0.9), vec![1.0, 0.0]);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("greedy".parse::<DecodeKind>().unwrap(), DecodeKind::Greedy);
        assert_eq!("topk:5".parse::<DecodeKind>().unwrap(), DecodeKind::TopK(5));
        assert_eq!(
            "nucleus:0.9".parse::<DecodeKind>().unwrap(),
            DecodeKind::Nucleus(0.9)
        );
        assert!("topk:0".parse::<DecodeKind>().is_err());
        assert!("nucleus:1.5".parse::<DecodeKind>().is_err());
        assert!("beam:4".parse::<DecodeKind>().is_err());
        for k in [DecodeKind::Greedy, DecodeKind::TopK(15), DecodeKind::Nucleus(0.5)] {
            assert_eq!(k.to_string().parse::<DecodeKind>().unwrap(), k);
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let p = interpolate(&[0.0, 2.0], &[1.0, -2.0], 7).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p[0], vec![0.0, 2.0]);
        assert_eq!(p[6], vec![1.0, -2.0]);
        assert!(interpolate(&[0.0], &[1.0], 1).is_err());
    }
}
