//! Grammaticality probing with minimal pairs.
//!
//! For a pair `(x⁺, x⁻)` with codes `z⁺ = code(x⁺)` and `z⁻ = code(x⁻)`:
//!
//! * `p1` hit: `NLL(x⁺|z⁺) < NLL(x⁻|z⁺)`
//! * `p2` hit: `NLL(x⁺|z⁻) < NLL(x⁻|z⁻)`
//!
//! Ties are misses. The averaged variants replace `z⁺`/`z⁻` with the mean
//! code over the pair's sub-category.
//!
//! Pair files are tab-separated: `category<TAB>sub_category<TAB>x⁺<TAB>x⁻`.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, Vocab};
use crate::error::{Error, Result};
use crate::model::VaeModel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalPair {
    pub category: String,
    pub sub_category: String,
    pub grammatical: String,
    pub ungrammatical: String,
}

impl MinimalPair {
    pub fn new(category: &str, sub_category: &str, grammatical: &str, ungrammatical: &str) -> Result<Self> {
        let fields = [category, sub_category, grammatical, ungrammatical];
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::invalid("minimal pair fields must be non-empty"));
        }
        if fields.iter().any(|f| f.contains('\t') || f.contains('\n')) {
            return Err(Error::invalid(
                "minimal pair fields cannot contain tabs or newlines",
            ));
        }
        if tokenize(grammatical) == tokenize(ungrammatical) {
            return Err(Error::invalid(format!(
                "minimal pair members are identical: {grammatical:?}"
            )));
        }
        Ok(Self {
            category: category.trim().to_string(),
            sub_category: sub_category.trim().to_string(),
            grammatical: grammatical.trim().to_string(),
            ungrammatical: ungrammatical.trim().to_string(),
        })
    }

    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.category, self.sub_category, self.grammatical, self.ungrammatical
        )
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<MinimalPair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                n + 1,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let pair = MinimalPair::new(fields[0], fields[1], fields[2], fields[3])
            .map_err(|e| Error::parse(n + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<MinimalPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[MinimalPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.to_tsv_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Something that maps sentences to codes and scores sentences given a code.
pub trait ConditionalScorer {
    fn code_of(&self, sentence: &str) -> Result<Vec<f64>>;

    /// `−log p(sentence | code)` in nats.
    fn nll(&self, sentence: &str, code: &[f64]) -> Result<f64>;

    fn codes_of(&self, sentences: &[&str]) -> Result<Vec<Vec<f64>>> {
        sentences.iter().map(|s| self.code_of(s)).collect()
    }

    fn nlls(&self, queries: &[(&str, &[f64])]) -> Result<Vec<f64>> {
        queries.iter().map(|(s, z)| self.nll(s, z)).collect()
    }
}

/// How a trained VAE turns a sentence into a code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeMode {
    /// Posterior mean.
    Mean,
    /// One posterior sample; the generator is reseeded for every batch so a
    /// sentence's code depends only on its position in the request.
    Sample(u64),
}

pub struct VaeScorer<'a> {
    pub model: &'a VaeModel,
    pub vocab: &'a Vocab,
    pub mode: CodeMode,
}

impl<'a> VaeScorer<'a> {
    pub fn new(model: &'a VaeModel, vocab: &'a Vocab) -> Self {
        Self {
            model,
            vocab,
            mode: CodeMode::Mean,
        }
    }

    fn encode_text(&self, s: &str) -> Vec<u32> {
        self.vocab.encode(&tokenize(s))
    }
}

impl ConditionalScorer for VaeScorer<'_> {
    fn code_of(&self, sentence: &str) -> Result<Vec<f64>> {
        Ok(self.codes_of(&[sentence])?.remove(0))
    }

    fn nll(&self, sentence: &str, code: &[f64]) -> Result<f64> {
        self.model.reconstruction_nll(&self.encode_text(sentence), code)
    }

    fn codes_of(&self, sentences: &[&str]) -> Result<Vec<Vec<f64>>> {
        let ids: Vec<Vec<u32>> = sentences.iter().map(|s| self.encode_text(s)).collect();
        let refs: Vec<&[u32]> = ids.iter().map(|s| s.as_slice()).collect();
        let posts = self.model.encode_batch(&refs)?;
        Ok(match self.mode {
            CodeMode::Mean => posts.into_iter().map(|p| p.mu).collect(),
            CodeMode::Sample(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                posts.iter().map(|p| p.sample(&mut rng)).collect()
            }
        })
    }

    fn nlls(&self, queries: &[(&str, &[f64])]) -> Result<Vec<f64>> {
        let ids: Vec<Vec<u32>> = queries.iter().map(|(s, _)| self.encode_text(s)).collect();
        let refs: Vec<&[u32]> = ids.iter().map(|s| s.as_slice()).collect();
        let codes: Vec<Vec<f64>> = queries.iter().map(|(_, z)| z.to_vec()).collect();
        self.model.nll_batch(&refs, &codes)
    }
}

/// `(p1_hit, p2_hit)` for one pair.
pub fn pair_scores(scorer: &dyn ConditionalScorer, pair: &MinimalPair) -> Result<(bool, bool)> {
    let codes = scorer.codes_of(&[&pair.grammatical, &pair.ungrammatical])?;
    Ok(hits_given(scorer, std::slice::from_ref(pair), &codes[0], &codes[1])?[0])
}

/// Hits for every pair scored against the fixed codes `z_plus`, `z_minus`.
fn hits_given(
    scorer: &dyn ConditionalScorer,
    pairs: &[MinimalPair],
    z_plus: &[f64],
    z_minus: &[f64],
) -> Result<Vec<(bool, bool)>> {
    let mut queries: Vec<(&str, &[f64])> = Vec::with_capacity(pairs.len() * 4);
    for p in pairs {
        queries.push((&p.grammatical, z_plus));
        queries.push((&p.ungrammatical, z_plus));
        queries.push((&p.grammatical, z_minus));
        queries.push((&p.ungrammatical, z_minus));
    }
    let n = scorer.nlls(&queries)?;
    Ok(n.chunks(4).map(|q| (q[0] < q[1], q[2] < q[3])).collect())
}

/// Scores of one sub-category.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub category: String,
    pub sub_category: String,
    pub p1: f64,
    pub p2: f64,
    pub p1_bar: f64,
    pub p2_bar: f64,
    pub n_pairs: usize,
}

fn mean_code(codes: &mut [(&str, Vec<f64>)]) -> Vec<f64> {
    // Summing in text order makes the mean independent of pair order.
    codes.sort_by(|a, b| a.0.cmp(b.0));
    let d = codes[0].1.len();
    let mut m = vec![0.0; d];
    for (_, z) in codes.iter() {
        for (a, b) in m.iter_mut().zip(z) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|x| *x /= codes.len() as f64);
    m
}

/// Per-sub-category `p1`, `p2` with individual codes and `p̄1`, `p̄2` with
/// the sub-category's averaged codes. Rows are sorted by category, then
/// sub-category.
pub fn probe(scorer: &dyn ConditionalScorer, pairs: &[MinimalPair]) -> Result<Vec<ProbeRow>> {
    if pairs.is_empty() {
        return Err(Error::Empty("no minimal pairs".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<MinimalPair>> = BTreeMap::new();
    for p in pairs {
        groups
            .entry((p.category.clone(), p.sub_category.clone()))
            .or_default()
            .push(p.clone());
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((category, sub_category), group) in groups {
        let mut texts: Vec<&str> = Vec::with_capacity(group.len() * 2);
        for p in &group {
            texts.push(&p.grammatical);
            texts.push(&p.ungrammatical);
        }
        let codes = scorer.codes_of(&texts)?;
        let (mut h1, mut h2) = (0usize, 0usize);
        for (i, p) in group.iter().enumerate() {
            let (a, b) = hits_given(scorer, std::slice::from_ref(p), &codes[2 * i], &codes[2 * i + 1])?[0];
            h1 += a as usize;
            h2 += b as usize;
        }
        let mut plus: Vec<(&str, Vec<f64>)> = group
            .iter()
            .enumerate()
            .map(|(i, p)| (p.grammatical.as_str(), codes[2 * i].clone()))
            .collect();
        let mut minus: Vec<(&str, Vec<f64>)> = group
            .iter()
            .enumerate()
            .map(|(i, p)| (p.ungrammatical.as_str(), codes[2 * i + 1].clone()))
            .collect();
        let z_plus = mean_code(&mut plus);
        let z_minus = mean_code(&mut minus);
        let avg = hits_given(scorer, &group, &z_plus, &z_minus)?;
        let n = group.len();
        let frac = |h: usize| h as f64 / n as f64;
        rows.push(ProbeRow {
            category,
            sub_category,
            p1: frac(h1),
            p2: frac(h2),
            p1_bar: frac(avg.iter().filter(|h| h.0).count()),
            p2_bar: frac(avg.iter().filter(|h| h.1).count()),
            n_pairs: n,
        });
    }
    Ok(rows)
}

/// `(p̄1, p̄2)` per `(category, sub_category)`.
pub fn averaged_code_scores(
    scorer: &dyn ConditionalScorer,
    pairs: &[MinimalPair],
) -> Result<BTreeMap<(String, String), (f64, f64)>> {
    Ok(probe(scorer, pairs)?
        .into_iter()
        .map(|r| ((r.category, r.sub_category), (r.p1_bar, r.p2_bar)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "# header\nSVA\tSimple\tthe author laughs\tthe author laugh\n\n";
        let pairs = parse_pairs(text).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].sub_category, "Simple");
        let again = parse_pairs(&pairs[0].to_tsv_line()).unwrap();
        assert_eq!(again, pairs);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_pairs("a\tb\tc\n").is_err());
        assert!(parse_pairs("a\tb\tsame\tsame\n").is_err());
        assert!(parse_pairs("a\t \tx\ty\n").is_err());
        let err = parse_pairs("ok\tok\tx\ty\nbad\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
