//! Finite worlds with explicit Gaussian encoders, where rate, mutual
//! information and the Bayes-optimal distortion can be computed exactly or by
//! Monte Carlo against exact mixture densities. Used to check
//! `H − D ≤ I(x;z) ≤ R` mechanically.
//!
//! Inputs whose encoders are bitwise identical are merged into one group
//! before any estimate: they are indistinguishable from `z`, and merging makes
//! the fully collapsed world report `I = 0` and `D = H` exactly instead of up
//! to rounding.
//!
//! World file format:
//!
//! ```text
//! world v1
//! dim 2
//! # probability, then mean and variance vectors
//! input 0.5 mu 1.0 0.0 var 1.0 1.0
//! input 0.5 mu -1.0 0.0 var 1.0 1.0
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::gaussian_kl;

const MAGIC: &str = "world v1";
/// Tolerance on the total input probability.
const PROB_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const MIN_SAMPLES: usize = 1000;

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: 0.0 }
    }

    fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        if draws.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.se)
    }
}

/// Diagonal Gaussian `N(mu, diag(var))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl Encoder {
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((zi, m), v) in z.iter().zip(&self.mu).zip(&self.var) {
            acc += (2.0 * PI * v).ln() + (zi - m) * (zi - m) / v;
        }
        -0.5 * acc
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.var)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Closed-form `KL(N(mu, var) ‖ N(0, I))`.
    pub fn kl_to_prior(&self) -> f64 {
        let lv: Vec<f64> = self.var.iter().map(|v| v.ln()).collect();
        gaussian_kl(&self.mu, &lv)
    }
}

fn log_prior(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|x| (2.0 * PI).ln() + x * x).sum::<f64>()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Inputs sharing one encoder.
#[derive(Clone, Debug)]
struct Group {
    encoder: Encoder,
    members: Vec<usize>,
    /// Normalized group probability.
    weight: f64,
}

/// Inputs with probabilities `p̂(x)` and one Gaussian encoder each.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteWorld {
    pub probs: Vec<f64>,
    pub encoders: Vec<Encoder>,
}

impl DiscreteWorld {
    pub fn new(probs: Vec<f64>, encoders: Vec<Encoder>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("a world needs at least one input"));
        }
        if probs.len() != encoders.len() {
            return Err(Error::invalid("one encoder per input"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("input probabilities must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::invalid(format!(
                "input probabilities sum to {total}, not 1"
            )));
        }
        let dim = encoders[0].mu.len();
        if dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        for e in &encoders {
            if e.mu.len() != dim || e.var.len() != dim {
                return Err(Error::invalid("encoders disagree on the latent dimension"));
            }
            if e.mu.iter().any(|m| !m.is_finite()) || e.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid(
                    "encoder means must be finite and variances positive",
                ));
            }
        }
        Ok(Self { probs, encoders })
    }

    /// Uniform input distribution.
    pub fn uniform(encoders: Vec<Encoder>) -> Result<Self> {
        let n = encoders.len();
        Self::new(vec![1.0 / n as f64; n], encoders)
    }

    /// Random world: probabilities proportional to `U(0.2, 1)`, means from
    /// `N(0, 1.5²)`, variances `exp(U(−2, 1))`.
    pub fn random(n: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::invalid("random world needs n ≥ 1 and dim ≥ 1"));
        }
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let encoders = (0..n)
            .map(|_| Encoder {
                mu: (0..dim)
                    .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                var: (0..dim).map(|_| rng.random_range(-2.0f64..1.0).exp()).collect(),
            })
            .collect();
        Self::new(raw.iter().map(|r| r / total).collect(), encoders)
    }

    /// Every encoder equal to the prior.
    pub fn collapsed(n: usize, dim: usize) -> Result<Self> {
        let prior = Encoder {
            mu: vec![0.0; dim],
            var: vec![1.0; dim],
        };
        Self::uniform(vec![prior; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.encoders[0].mu.len()
    }

    fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `H = −Σ p̂ log p̂` in nats.
    pub fn entropy(&self) -> f64 {
        let total = self.total();
        self.probs.iter().map(|p| -p * (p / total).ln()).sum::<f64>() / total
    }

    fn groups(&self) -> Vec<Group> {
        let mut groups: Vec<Group> = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            match groups.iter_mut().find(|g| g.encoder == *e) {
                Some(g) => g.members.push(i),
                None => groups.push(Group {
                    encoder: e.clone(),
                    members: vec![i],
                    weight: 0.0,
                }),
            }
        }
        let total = self.total();
        for g in &mut groups {
            g.weight = g.members.iter().map(|&i| self.probs[i]).sum::<f64>() / total;
        }
        groups
    }

    /// `log q(z)` for the input mixture, as `log Σ_g w_g q_g(z)`.
    fn log_mixture(groups: &[Group], z: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(groups.iter().map(|g| g.weight.ln() + g.encoder.log_density(z)));
        log_sum_exp(scratch)
    }

    /// Stratified Monte Carlo: each draw takes one `z ∼ q_g` per group and
    /// returns `Σ_g w_g f(g, z_g)`.
    fn stratified(
        &self,
        samples: usize,
        seed: u64,
        mut f: impl FnMut(&[Group], usize, &[f64], &mut Vec<f64>) -> f64,
    ) -> Estimate {
        let groups = self.groups();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scratch = Vec::with_capacity(groups.len());
        let draws: Vec<f64> = (0..samples)
            .map(|_| {
                let mut acc = 0.0;
                for (gi, g) in groups.iter().enumerate() {
                    let z = g.encoder.sample(&mut rng);
                    acc += g.weight * f(&groups, gi, &z, &mut scratch);
                }
                acc
            })
            .collect();
        Estimate::from_draws(&draws)
    }

    /// Exact rate `R = Σ_x p̂(x)·KL(q(z|x) ‖ N(0, I))`.
    pub fn rate(&self) -> f64 {
        let total = self.total();
        self.probs
            .iter()
            .zip(&self.encoders)
            .map(|(p, e)| p * e.kl_to_prior())
            .sum::<f64>()
            / total
    }

    /// `I(x;z) = E[log q(z|x) − log q(z)]` by Monte Carlo with the exact
    /// mixture density for `q(z)`.
    pub fn mutual_information_mc(&self, samples: usize, seed: u64) -> Result<Estimate> {
        check_samples(samples)?;
        if self.groups().len() == 1 {
            return Ok(Estimate::exact(0.0));
        }
        Ok(self.stratified(samples, seed, |groups, gi, z, scratch| {
            groups[gi].encoder.log_density(z) - Self::log_mixture(groups, z, scratch)
        }))
    }

    /// `KL(q(z) ‖ N(0, I))` of the aggregate posterior by Monte Carlo.
    pub fn aggregate_kl_mc(&self, samples: usize, seed: u64) -> Result<Estimate> {
        check_samples(samples)?;
        Ok(self.stratified(samples, seed, |groups, _, z, scratch| {
            Self::log_mixture(groups, z, scratch) - log_prior(z)
        }))
    }

    /// Distortion of the Bayes decoder `p(x|z) ∝ p̂(x)·q(z|x)`. The part of
    /// `−log p(x|z)` that picks `x` inside its group is exact; the part that
    /// identifies the group is estimated.
    pub fn bayes_distortion(&self, samples: usize, seed: u64) -> Result<Estimate> {
        check_samples(samples)?;
        let groups = self.groups();
        let total = self.total();
        let within: f64 = groups
            .iter()
            .map(|g| {
                let mass: f64 = g.members.iter().map(|&i| self.probs[i]).sum();
                g.members
                    .iter()
                    .map(|&i| -self.probs[i] * (self.probs[i] / mass).ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / total;
        if groups.len() == 1 {
            return Ok(Estimate::exact(within));
        }
        let between = self.stratified(samples, seed, |groups, gi, z, scratch| {
            let own = groups[gi].weight.ln() + groups[gi].encoder.log_density(z);
            Self::log_mixture(groups, z, scratch) - own
        });
        Ok(Estimate {
            mean: within + between.mean,
            se: between.se,
        })
    }

    /// Distortion `−E[log decoder(z)[x]]` of an arbitrary decoder returning
    /// log-probabilities over inputs.
    pub fn decoder_distortion(
        &self,
        samples: usize,
        seed: u64,
        decoder: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Estimate> {
        check_samples(samples)?;
        let total = self.total();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws = Vec::with_capacity(samples);
        for _ in 0..samples {
            let mut acc = 0.0;
            for (x, e) in self.encoders.iter().enumerate() {
                let z = e.sample(&mut rng);
                let logp = decoder(&z);
                if logp.len() != self.len() {
                    return Err(Error::invalid("decoder must score every input"));
                }
                acc -= self.probs[x] / total * logp[x];
            }
            draws.push(acc);
        }
        Ok(Estimate::from_draws(&draws))
    }

    /// Log-posterior over inputs under the Bayes decoder.
    pub fn bayes_log_posterior(&self, z: &[f64]) -> Vec<f64> {
        let joint: Vec<f64> = self
            .probs
            .iter()
            .zip(&self.encoders)
            .map(|(p, e)| p.ln() + e.log_density(z))
            .collect();
        let norm = log_sum_exp(&joint);
        joint.iter().map(|j| j - norm).collect()
    }

    /// Estimates all quantities with independent streams derived from `seed`
    /// and checks `H − D ≤ I + 3·SE` and `I ≤ R + 3·SE`.
    pub fn bounds_check(&self, samples: usize, seed: u64) -> Result<BoundsReport> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let report = BoundsReport {
            entropy: self.entropy(),
            distortion: self.bayes_distortion(samples, seeds.random())?,
            mutual_information: self.mutual_information_mc(samples, seeds.random())?,
            rate: self.rate(),
            aggregate_kl: self.aggregate_kl_mc(samples, seeds.random())?,
        };
        if !report.holds() {
            return Err(Error::BoundViolation(report.to_string()));
        }
        Ok(report)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(Error::parse(n, format!("expected `{MAGIC}`, found {other:?}"))),
            None => return Err(Error::parse(0, "empty world file")),
        }
        let dim: usize = match lines.next() {
            Some((n, l)) => {
                let v = l
                    .strip_prefix("dim ")
                    .ok_or_else(|| Error::parse(n, "expected `dim <d>`"))?;
                v.trim()
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad dimension {v:?}")))?
            }
            None => return Err(Error::parse(0, "missing `dim` line")),
        };
        let mut probs = Vec::new();
        let mut encoders = Vec::new();
        for (n, line) in lines {
            let words: Vec<&str> = line.split_whitespace().collect();
            let expected = 2 * dim + 4;
            if words.len() != expected
                || words[0] != "input"
                || words[2] != "mu"
                || words.get(3 + dim) != Some(&"var")
            {
                return Err(Error::parse(
                    n,
                    format!("expected `input <p> mu <{dim} values> var <{dim} values>`"),
                ));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(n, format!("bad number {s:?}")))
            };
            probs.push(num(words[1])?);
            encoders.push(Encoder {
                mu: words[3..3 + dim].iter().map(|w| num(w)).collect::<Result<_>>()?,
                var: words[4 + dim..].iter().map(|w| num(w)).collect::<Result<_>>()?,
            });
        }
        Self::new(probs, encoders)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{MAGIC}\ndim {}\n", self.dim());
        for (p, e) in self.probs.iter().zip(&self.encoders) {
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            out.push_str(&format!("input {p:?} mu {} var {}\n", join(&e.mu), join(&e.var)));
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "use at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// `KL(N(mu, exp(log_var)) ‖ N(0, I))` by Monte Carlo.
pub fn kl_monte_carlo(mu: &[f64], log_var: &[f64], samples: usize, seed: u64) -> Estimate {
    let e = Encoder {
        mu: mu.to_vec(),
        var: log_var.iter().map(|lv| lv.exp()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let z = e.sample(&mut rng);
            e.log_density(&z) - log_prior(&z)
        })
        .collect();
    Estimate::from_draws(&draws)
}

/// Entropy, Bayes distortion, mutual information and rate of one world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundsReport {
    pub entropy: f64,
    pub distortion: Estimate,
    pub mutual_information: Estimate,
    pub rate: f64,
    pub aggregate_kl: Estimate,
}

impl BoundsReport {
    /// `I + 3·SE − (H − D)`, nonnegative when the lower bound holds.
    pub fn lower_margin(&self) -> f64 {
        let se = self.distortion.se.hypot(self.mutual_information.se);
        self.mutual_information.mean + 3.0 * se - (self.entropy - self.distortion.mean)
    }

    /// `R + 3·SE − I`, nonnegative when the upper bound holds.
    pub fn upper_margin(&self) -> f64 {
        self.rate + 3.0 * self.mutual_information.se - self.mutual_information.mean
    }

    pub fn holds(&self) -> bool {
        self.lower_margin() >= 0.0 && self.upper_margin() >= 0.0
    }

    /// `|R − I − KL(q(z)‖p(z))|` in units of the combined standard error.
    pub fn identity_z_score(&self) -> f64 {
        let gap = (self.rate - self.mutual_information.mean - self.aggregate_kl.mean).abs();
        let se = self.mutual_information.se.hypot(self.aggregate_kl.se);
        if se == 0.0 {
            if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / se
        }
    }
}

impl fmt::Display for BoundsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "H={:.6} D={} H-D={:.6} I={} R={:.6} KL(q(z)||p(z))={} lower_margin={:.6} upper_margin={:.6}",
            self.entropy,
            self.distortion,
            self.entropy - self.distortion.mean,
            self.mutual_information,
            self.rate,
            self.aggregate_kl,
            self.lower_margin(),
            self.upper_margin()
        )
    }
}
