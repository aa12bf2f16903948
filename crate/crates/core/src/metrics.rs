//! Latent-space diagnostics and n-gram overlap scores.
//!
//! Covariances use the unbiased `1/(n−1)` normalization. BLEU and ROUGE
//! scores lie in `[0, 1]`.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const AU_THRESHOLD: f64 = 0.01;

fn check_samples(samples: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = samples
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Empty(format!("{what}: no samples")))?;
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid(format!("{what}: samples differ in dimension")));
    }
    Ok(d)
}

fn mean_vector(samples: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for s in samples {
        for (a, b) in m.iter_mut().zip(s) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

/// Dimensions whose posterior mean varies across inputs by more than
/// `delta` (unbiased sample variance).
pub fn active_units(means: &[Vec<f64>], delta: f64) -> Result<usize> {
    if means.len() < 2 {
        return Err(Error::invalid("active units need at least two posterior means"));
    }
    let d = check_samples(means, "active units")?;
    let m = mean_vector(means, d);
    let n = means.len() as f64;
    Ok((0..d)
        .filter(|&i| {
            let var = means.iter().map(|v| (v[i] - m[i]).powi(2)).sum::<f64>() / (n - 1.0);
            var > delta
        })
        .count())
}

/// Sample mean and unbiased sample covariance.
pub fn sample_moments(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = check_samples(samples, "covariance")?;
    if samples.len() <= d {
        return Err(Error::invalid(format!(
            "{} samples cannot determine a {d}-dimensional covariance",
            samples.len()
        )));
    }
    let m = DVector::from_vec(mean_vector(samples, d));
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &m;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (samples.len() - 1) as f64;
    Ok((m, cov))
}

/// Log-determinant of a sample covariance.
#[derive(Clone, Debug, PartialEq)]
pub enum LogDet {
    Finite(f64),
    /// The covariance is not numerically positive definite.
    Singular {
        reason: String,
    },
}

impl LogDet {
    /// The value, with `−∞` standing in for a singular covariance.
    pub fn value(&self) -> f64 {
        match self {
            LogDet::Finite(v) => *v,
            LogDet::Singular { .. } => f64::NEG_INFINITY,
        }
    }
}

fn cholesky_log_det(cov: DMatrix<f64>) -> LogDet {
    let d = cov.nrows();
    match cov.cholesky() {
        Some(ch) => {
            let l = ch.l_dirty();
            let diag: Vec<f64> = (0..d).map(|i| l[(i, i)]).collect();
            if diag.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return LogDet::Singular {
                    reason: "non-positive Cholesky pivot".into(),
                };
            }
            LogDet::Finite(2.0 * diag.iter().map(|x| x.ln()).sum::<f64>())
        }
        None => LogDet::Singular {
            reason: format!("{d}×{d} covariance is not positive definite"),
        },
    }
}

/// `log det Cov[z]` over samples `z`, via a Cholesky factorization.
pub fn log_det_cov(samples: &[Vec<f64>]) -> Result<LogDet> {
    let (_, cov) = sample_moments(samples)?;
    Ok(cholesky_log_det(cov))
}

/// `KL(N(m, S) ‖ N(0, I)) = ½(tr S + mᵀm − d − log det S)` for the moment
/// fit of the samples.
pub fn moment_match_kl(samples: &[Vec<f64>]) -> Result<f64> {
    let (m, cov) = sample_moments(samples)?;
    let d = cov.nrows() as f64;
    let trace = cov.trace();
    match cholesky_log_det(cov) {
        LogDet::Finite(ld) => Ok(0.5 * (trace + m.norm_squared() - d - ld)),
        LogDet::Singular { reason } => Err(Error::Singular(reason)),
    }
}

/// `‖mean(z)‖²`.
pub fn mean_norm_sq(samples: &[Vec<f64>]) -> Result<f64> {
    let d = check_samples(samples, "mean norm")?;
    Ok(mean_vector(samples, d).iter().map(|x| x * x).sum())
}

fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap<T: Hash + Eq + Clone>(cand: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, c.values().sum())
}

/// BLEU from per-order `(matched, total)` counts and the hypothesis and
/// reference lengths. Orders without any hypothesis n-gram are dropped;
/// zero-match orders use precision `1/(2·total)`.
fn bleu_from_counts(orders: &[(usize, usize)], hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let usable: Vec<f64> = orders
        .iter()
        .filter(|&&(_, total)| total > 0)
        .map(|&(m, total)| {
            if m == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                m as f64 / total as f64
            }
        })
        .collect();
    if usable.is_empty() {
        return 0.0;
    }
    let log_p = usable.iter().map(|p| p.ln()).sum::<f64>() / usable.len() as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * log_p.exp()
}

/// Corpus-level BLEU-n of aligned candidate/reference pairs.
pub fn bleu_n<T: Hash + Eq + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("BLEU of an empty corpus".into()));
    }
    if n == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let mut orders = vec![(0usize, 0usize); n];
    for (c, r) in candidates.iter().zip(references) {
        for (k, o) in orders.iter_mut().enumerate() {
            let (m, t) = clipped_overlap(c, r, k + 1);
            o.0 += m;
            o.1 += t;
        }
    }
    let hyp: usize = candidates.iter().map(Vec::len).sum();
    let refl: usize = references.iter().map(Vec::len).sum();
    Ok(bleu_from_counts(&orders, hyp, refl))
}

/// Corpus-level ROUGE-n recall.
pub fn rouge_n<T: Hash + Eq + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("ROUGE order must be at least 1"));
    }
    let (mut matched, mut total) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let rc = ngram_counts(r, n);
        if rc.is_empty() {
            continue;
        }
        let cc = ngram_counts(c, n);
        matched += rc
            .iter()
            .map(|(g, &k)| k.min(cc.get(g).copied().unwrap_or(0)))
            .sum::<usize>();
        total += rc.values().sum::<usize>();
    }
    if total == 0 {
        return Err(Error::invalid(format!("no reference has a {n}-gram")));
    }
    Ok(matched as f64 / total as f64)
}

pub const SELF_BLEU_SAMPLE: usize = 10_000;

/// Mean sentence-level BLEU-4 of each of the first `sample_size` sentences
/// against every other sentence of the corpus as references.
///
/// Clipping uses, per n-gram, the largest count in any other sentence; the
/// brevity penalty uses the closest other length (shorter wins ties).
pub fn self_bleu4<T: Hash + Eq + Clone + Ord>(corpus: &[Vec<T>], sample_size: usize) -> Result<f64> {
    const N: usize = 4;
    if corpus.len() < 2 {
        return Err(Error::invalid("self-BLEU needs at least two sentences"));
    }
    // Top two (count, owner) per n-gram so "max over the others" is O(1).
    let mut best: HashMap<&[T], [(usize, usize); 2]> = HashMap::new();
    for (owner, s) in corpus.iter().enumerate() {
        for n in 1..=N {
            for (g, k) in ngram_counts(s, n) {
                let e = best.entry(g).or_insert([(0, usize::MAX); 2]);
                if k > e[0].0 {
                    e[1] = e[0];
                    e[0] = (k, owner);
                } else if k > e[1].0 {
                    e[1] = (k, owner);
                }
            }
        }
    }
    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    for s in corpus {
        *lengths.entry(s.len()).or_default() += 1;
    }
    let take = sample_size.min(corpus.len());
    let mut sum = 0.0;
    for (i, hyp) in corpus.iter().take(take).enumerate() {
        let mut orders = [(0usize, 0usize); N];
        for (n, o) in orders.iter_mut().enumerate() {
            for (g, k) in ngram_counts(hyp, n + 1) {
                let e = best[g];
                let other = if e[0].1 == i { e[1].0 } else { e[0].0 };
                o.0 += k.min(other);
                o.1 += k;
            }
        }
        let ref_len = closest_other_length(&lengths, hyp.len());
        sum += bleu_from_counts(&orders, hyp.len(), ref_len);
    }
    Ok(sum / take as f64)
}

fn closest_other_length(lengths: &BTreeMap<usize, usize>, own: usize) -> usize {
    let available = |l: usize, c: usize| if l == own { c > 1 } else { c > 0 };
    let below = lengths
        .range(..=own)
        .rev()
        .find(|(&l, &c)| available(l, c))
        .map(|(&l, _)| l);
    let above = lengths
        .range(own..)
        .find(|(&l, &c)| available(l, c))
        .map(|(&l, _)| l);
    match (below, above) {
        (Some(b), Some(a)) => {
            if own - b <= a - own {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => own,
    }
}
