//! Synthetic languages for desk-scale experiments.
//!
//! [`ToyGrammar`] produces English-like sentences with subject–verb
//! agreement and Zipfian word choice, plus agreement minimal pairs.
//! [`BigramLanguage`] is a first-order Markov language whose per-sentence
//! entropy is known in closed form.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::probe::MinimalPair;

const NOUNS: &[(&str, &str)] = &[
    ("author", "authors"),
    ("guard", "guards"),
    ("pilot", "pilots"),
    ("doctor", "doctors"),
    ("teacher", "teachers"),
    ("farmer", "farmers"),
    ("senator", "senators"),
    ("dancer", "dancers"),
    ("child", "children"),
    ("woman", "women"),
    ("man", "men"),
    ("dog", "dogs"),
    ("cat", "cats"),
    ("horse", "horses"),
    ("student", "students"),
    ("painter", "painters"),
    ("singer", "singers"),
    ("customer", "customers"),
    ("manager", "managers"),
    ("officer", "officers"),
    ("surgeon", "surgeons"),
    ("minister", "ministers"),
    ("lawyer", "lawyers"),
    ("baker", "bakers"),
    ("driver", "drivers"),
    ("skater", "skaters"),
    ("mechanic", "mechanics"),
    ("architect", "architects"),
    ("clerk", "clerks"),
    ("poet", "poets"),
    ("nurse", "nurses"),
    ("sailor", "sailors"),
    ("king", "kings"),
    ("queen", "queens"),
    ("boy", "boys"),
    ("girl", "girls"),
];

const INTRANSITIVE: &[(&str, &str)] = &[
    ("laughs", "laugh"),
    ("smiles", "smile"),
    ("sleeps", "sleep"),
    ("waits", "wait"),
    ("runs", "run"),
    ("sings", "sing"),
    ("dances", "dance"),
    ("talks", "talk"),
    ("falls", "fall"),
    ("arrives", "arrive"),
    ("leaves", "leave"),
    ("works", "work"),
    ("cries", "cry"),
    ("jumps", "jump"),
    ("swims", "swim"),
    ("shouts", "shout"),
    ("writes", "write"),
    ("reads", "read"),
    ("travels", "travel"),
    ("rests", "rest"),
];

const TRANSITIVE: &[(&str, &str)] = &[
    ("likes", "like"),
    ("hates", "hate"),
    ("admires", "admire"),
    ("sees", "see"),
    ("knows", "know"),
    ("meets", "meet"),
    ("helps", "help"),
    ("follows", "follow"),
    ("calls", "call"),
    ("loves", "love"),
    ("trusts", "trust"),
    ("watches", "watch"),
    ("avoids", "avoid"),
    ("thanks", "thank"),
    ("blames", "blame"),
    ("visits", "visit"),
];

const ADJECTIVES: &[&str] = &[
    "old", "young", "tall", "happy", "quiet", "clever", "angry", "small", "brave", "tired", "famous", "rich",
    "poor", "kind", "strange", "busy", "lonely", "proud", "gentle", "nervous",
];

const PREPOSITIONS: &[&str] = &[
    "near", "behind", "beside", "with", "from", "above", "below", "around",
];

const ADVERBS: &[&str] = &[
    "quickly", "slowly", "often", "rarely", "today", "again", "quietly", "loudly", "early", "late",
];

const DET_SINGULAR: &[&str] = &["the", "a", "every", "this"];
const DET_PLURAL: &[&str] = &["the", "some", "many", "these", "those"];

pub const AGREEMENT: &str = "SUBJECT-VERB AGREEMENT";
pub const SUB_SIMPLE: &str = "Simple";
pub const SUB_ACROSS_PP: &str = "Across a prepositional phrase";
pub const SUB_ACROSS_ORC: &str = "Across an object relative clause";
pub const SUB_VP_COORD: &str = "Short VP coordination";
pub const AGREEMENT_SUBCATEGORIES: [&str; 4] = [SUB_SIMPLE, SUB_ACROSS_PP, SUB_ACROSS_ORC, SUB_VP_COORD];

/// Zipf-weighted sampler over a fixed word list.
#[derive(Clone, Debug)]
struct Zipf(WeightedIndex<f64>);

impl Zipf {
    fn new(n: usize, exponent: f64) -> Self {
        let weights = (1..=n).map(|r| (r as f64).powf(-exponent));
        Zipf(WeightedIndex::new(weights).expect("non-empty word list"))
    }

    fn pick(&self, rng: &mut impl Rng) -> usize {
        self.0.sample(rng)
    }
}

/// Probabilistic grammar of short declarative sentences.
#[derive(Clone, Debug)]
pub struct ToyGrammar {
    nouns: Zipf,
    intransitive: Zipf,
    transitive: Zipf,
    adjectives: Zipf,
    prepositions: Zipf,
    adverbs: Zipf,
    max_tokens: usize,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        Self::new(20)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Number {
    Singular,
    Plural,
}

impl ToyGrammar {
    pub fn new(max_tokens: usize) -> Self {
        let s = 1.0;
        Self {
            nouns: Zipf::new(NOUNS.len(), s),
            intransitive: Zipf::new(INTRANSITIVE.len(), s),
            transitive: Zipf::new(TRANSITIVE.len(), s),
            adjectives: Zipf::new(ADJECTIVES.len(), s),
            prepositions: Zipf::new(PREPOSITIONS.len(), s),
            adverbs: Zipf::new(ADVERBS.len(), s),
            max_tokens,
        }
    }

    /// Every word the grammar can emit.
    pub fn lexicon() -> Vec<&'static str> {
        let mut words: Vec<&str> = Vec::new();
        for (a, b) in NOUNS.iter().chain(INTRANSITIVE).chain(TRANSITIVE) {
            words.push(a);
            words.push(b);
        }
        words.extend(ADJECTIVES);
        words.extend(PREPOSITIONS);
        words.extend(ADVERBS);
        words.extend(DET_SINGULAR);
        words.extend(DET_PLURAL);
        words.extend(["that", "and", "."]);
        words.sort_unstable();
        words.dedup();
        words
    }

    fn number(rng: &mut impl Rng) -> Number {
        if rng.random_bool(0.5) {
            Number::Singular
        } else {
            Number::Plural
        }
    }

    fn det(&self, n: Number, rng: &mut impl Rng) -> &'static str {
        let list = match n {
            Number::Singular => DET_SINGULAR,
            Number::Plural => DET_PLURAL,
        };
        list[rng.random_range(0..list.len())]
    }

    fn noun(&self, n: Number, rng: &mut impl Rng) -> &'static str {
        let (sg, pl) = NOUNS[self.nouns.pick(rng)];
        if n == Number::Singular {
            sg
        } else {
            pl
        }
    }

    fn verb(
        table: &[(&'static str, &'static str)],
        zipf: &Zipf,
        n: Number,
        rng: &mut impl Rng,
    ) -> &'static str {
        let (sg, pl) = table[zipf.pick(rng)];
        if n == Number::Singular {
            sg
        } else {
            pl
        }
    }

    fn simple_np(&self, n: Number, adj_p: f64, out: &mut Vec<&'static str>, rng: &mut impl Rng) {
        out.push(self.det(n, rng));
        let mut adjs = 0;
        while adjs < 2 && rng.random_bool(adj_p) {
            out.push(ADJECTIVES[self.adjectives.pick(rng)]);
            adjs += 1;
        }
        out.push(self.noun(n, rng));
    }

    fn pp(&self, out: &mut Vec<&'static str>, rng: &mut impl Rng) {
        out.push(PREPOSITIONS[self.prepositions.pick(rng)]);
        let n = Self::number(rng);
        self.simple_np(n, 0.2, out, rng);
    }

    fn object_relative(&self, out: &mut Vec<&'static str>, rng: &mut impl Rng) {
        out.push("that");
        let n = Self::number(rng);
        self.simple_np(n, 0.0, out, rng);
        out.push(Self::verb(TRANSITIVE, &self.transitive, n, rng));
    }

    fn sentence_once(&self, rng: &mut impl Rng) -> Vec<&'static str> {
        let mut out = Vec::with_capacity(16);
        let n = Self::number(rng);
        self.simple_np(n, 0.3, &mut out, rng);
        let r: f64 = rng.random();
        if r < 0.2 {
            self.pp(&mut out, rng);
        } else if r < 0.32 {
            self.object_relative(&mut out, rng);
        }
        let r: f64 = rng.random();
        if r < 0.45 {
            out.push(Self::verb(INTRANSITIVE, &self.intransitive, n, rng));
            if rng.random_bool(0.3) {
                out.push(ADVERBS[self.adverbs.pick(rng)]);
            }
        } else if r < 0.85 {
            out.push(Self::verb(TRANSITIVE, &self.transitive, n, rng));
            let m = Self::number(rng);
            self.simple_np(m, 0.3, &mut out, rng);
            if rng.random_bool(0.1) {
                self.pp(&mut out, rng);
            }
        } else {
            out.push(Self::verb(INTRANSITIVE, &self.intransitive, n, rng));
            out.push("and");
            out.push(Self::verb(INTRANSITIVE, &self.intransitive, n, rng));
        }
        out.push(".");
        out
    }

    /// One sentence of at most `max_tokens` tokens (longer draws are
    /// rejected and redrawn).
    pub fn sentence(&self, rng: &mut impl Rng) -> Vec<&'static str> {
        loop {
            let s = self.sentence_once(rng);
            if s.len() <= self.max_tokens {
                return s;
            }
        }
    }

    pub fn sentences(&self, n: usize, rng: &mut impl Rng) -> Vec<String> {
        (0..n).map(|_| self.sentence(rng).join(" ")).collect()
    }

    /// An agreement minimal pair for `sub_category`; the ungrammatical
    /// member flips the number of the verb that must agree with the subject.
    pub fn minimal_pair(&self, sub_category: &str, rng: &mut impl Rng) -> Result<MinimalPair> {
        let n = Self::number(rng);
        let flip = |v: (&'static str, &'static str)| match n {
            Number::Singular => (v.0, v.1),
            Number::Plural => (v.1, v.0),
        };
        let mut prefix = Vec::new();
        self.simple_np(n, 0.0, &mut prefix, rng);
        let (good, bad): (Vec<&str>, Vec<&str>) = match sub_category {
            SUB_SIMPLE | SUB_ACROSS_PP | SUB_ACROSS_ORC => {
                if sub_category == SUB_ACROSS_PP {
                    prefix.push(PREPOSITIONS[self.prepositions.pick(rng)]);
                    // Attractor of the opposite number makes the test harder.
                    let m = if n == Number::Singular {
                        Number::Plural
                    } else {
                        Number::Singular
                    };
                    self.simple_np(m, 0.0, &mut prefix, rng);
                } else if sub_category == SUB_ACROSS_ORC {
                    prefix.push("that");
                    let m = if n == Number::Singular {
                        Number::Plural
                    } else {
                        Number::Singular
                    };
                    self.simple_np(m, 0.0, &mut prefix, rng);
                    prefix.push(Self::verb(TRANSITIVE, &self.transitive, m, rng));
                }
                let (g, b) = flip(INTRANSITIVE[self.intransitive.pick(rng)]);
                let mut good = prefix.clone();
                good.extend([g, "."]);
                let mut bad = prefix;
                bad.extend([b, "."]);
                (good, bad)
            }
            SUB_VP_COORD => {
                let first = flip(INTRANSITIVE[self.intransitive.pick(rng)]).0;
                let mut second = flip(INTRANSITIVE[self.intransitive.pick(rng)]);
                while second.0 == first {
                    second = flip(INTRANSITIVE[self.intransitive.pick(rng)]);
                }
                prefix.extend([first, "and"]);
                let mut good = prefix.clone();
                good.extend([second.0, "."]);
                let mut bad = prefix;
                bad.extend([second.1, "."]);
                (good, bad)
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown agreement sub-category {other:?}"
                )))
            }
        };
        MinimalPair::new(AGREEMENT, sub_category, &good.join(" "), &bad.join(" "))
    }
}

/// First-order Markov language over tokens `w0 … w{k-1}` with a start state
/// and an end symbol.
#[derive(Clone, Debug)]
pub struct BigramLanguage {
    /// Row 0 is the start state, row `i + 1` follows token `i`. Columns
    /// `0..k` are tokens, column `k` ends the sentence (always 0 in row 0).
    transitions: Vec<Vec<f64>>,
    samplers: Vec<WeightedIndex<f64>>,
}

impl BigramLanguage {
    pub fn new(transitions: Vec<Vec<f64>>) -> Result<Self> {
        let k = transitions
            .len()
            .checked_sub(1)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::invalid("bigram language needs at least one token"))?;
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::invalid(format!(
                    "transition row {i} has {} entries, expected {}",
                    row.len(),
                    k + 1
                )));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "transition row {i} is not a distribution"
                )));
            }
        }
        if transitions[0][k] != 0.0 {
            return Err(Error::invalid("the start state must not end the sentence"));
        }
        if transitions[1..].iter().any(|r| r[k] <= 0.0) {
            return Err(Error::invalid("every token needs a positive end probability"));
        }
        let samplers = transitions
            .iter()
            .map(|r| WeightedIndex::new(r.iter().copied()).expect("validated row"))
            .collect();
        Ok(Self {
            transitions,
            samplers,
        })
    }

    /// Random language with `k` tokens, each row concentrated on a few
    /// successors, and end probabilities in `[end_lo, end_hi]`.
    pub fn random(k: usize, end_lo: f64, end_hi: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0 < end_lo && end_lo <= end_hi && end_hi < 1.0) {
            return Err(Error::invalid("end probabilities must satisfy 0 < lo <= hi < 1"));
        }
        let mut rows = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3)).collect();
            let total: f64 = w.iter().sum();
            let end = if i == 0 {
                0.0
            } else {
                rng.random_range(end_lo..=end_hi)
            };
            w.iter_mut().for_each(|x| *x *= (1.0 - end) / total);
            w.push(end);
            rows.push(w);
        }
        Self::new(rows)
    }

    pub fn num_tokens(&self) -> usize {
        self.transitions.len() - 1
    }

    pub fn token_name(i: usize) -> String {
        format!("w{i}")
    }

    pub fn sentence(&self, rng: &mut impl Rng) -> Vec<String> {
        let k = self.num_tokens();
        let mut state = 0;
        let mut out = Vec::new();
        loop {
            let next = self.samplers[state].sample(rng);
            if next == k {
                return out;
            }
            out.push(Self::token_name(next));
            state = next + 1;
        }
    }

    pub fn sentences(&self, n: usize, rng: &mut impl Rng) -> Vec<String> {
        (0..n).map(|_| self.sentence(rng).join(" ")).collect()
    }

    /// Expected number of visits to each state (start state included) before
    /// the sentence ends.
    fn expected_visits(&self) -> DVector<f64> {
        let k = self.num_tokens();
        let n = k + 1;
        // v = e₀ + Qᵀ v with Q the state-to-state block of the transitions.
        let mut a = DMatrix::<f64>::identity(n, n);
        for (i, row) in self.transitions.iter().enumerate() {
            for j in 0..k {
                a[(j + 1, i)] -= row[j];
            }
        }
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        a.lu()
            .solve(&e)
            .expect("transient chain has an invertible fundamental matrix")
    }

    /// Exact entropy of a whole sentence (end symbol included), in nats.
    pub fn sentence_entropy(&self) -> f64 {
        let visits = self.expected_visits();
        self.transitions
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
                visits[i] * h
            })
            .sum()
    }

    /// Expected number of tokens per sentence, end symbol excluded.
    pub fn mean_length(&self) -> f64 {
        self.expected_visits().iter().skip(1).sum()
    }

    /// Exact log-probability of a token sequence, in nats.
    pub fn log_prob<S: AsRef<str>>(&self, tokens: &[S]) -> Option<f64> {
        let k = self.num_tokens();
        let mut state = 0;
        let mut lp = 0.0;
        for t in tokens {
            let j: usize = t.as_ref().strip_prefix('w')?.parse().ok().filter(|&j| j < k)?;
            lp += self.transitions[state][j].ln();
            state = j + 1;
        }
        Some(lp + self.transitions[state][k].ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grammar_sentences_respect_length_and_lexicon() {
        let g = ToyGrammar::new(20);
        let lex = ToyGrammar::lexicon();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let s = g.sentence(&mut rng);
            assert!(s.len() <= 20 && s.len() >= 4);
            assert_eq!(*s.last().unwrap(), ".");
            assert!(s.iter().all(|w| lex.binary_search(w).is_ok()));
        }
        assert!(lex.len() < 400);
    }

    #[test]
    fn minimal_pairs_differ_in_one_verb() {
        let g = ToyGrammar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sub in AGREEMENT_SUBCATEGORIES {
            for _ in 0..50 {
                let p = g.minimal_pair(sub, &mut rng).unwrap();
                let a: Vec<&str> = p.grammatical.split(' ').collect();
                let b: Vec<&str> = p.ungrammatical.split(' ').collect();
                assert_eq!(a.len(), b.len());
                assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1, "{p:?}");
            }
        }
        assert!(g.minimal_pair("nonsense", &mut rng).is_err());
    }

    #[test]
    fn bigram_entropy_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lang = BigramLanguage::random(6, 0.2, 0.35, &mut rng).unwrap();
        let h = lang.sentence_entropy();
        let n = 40_000;
        let mut sum = 0.0;
        let mut len = 0.0;
        for _ in 0..n {
            let s = lang.sentence(&mut rng);
            len += s.len() as f64;
            sum -= lang.log_prob(&s).unwrap();
        }
        let mc = sum / n as f64;
        assert!((mc - h).abs() / h < 0.02, "{mc} vs {h}");
        assert!((len / n as f64 - lang.mean_length()).abs() < 0.05);
    }

    #[test]
    fn single_token_language_entropy() {
        // One token, ends with probability q after each token:
        // length L ≥ 1 geometric, entropy = H_b(q)/q.
        let q: f64 = 0.25;
        let lang = BigramLanguage::new(vec![vec![1.0, 0.0], vec![1.0 - q, q]]).unwrap();
        let hb = -q * q.ln() - (1.0 - q) * (1.0 - q).ln();
        assert!((lang.sentence_entropy() - hb / q).abs() < 1e-12);
        assert!((lang.mean_length() - 1.0 / q).abs() < 1e-12);
    }

    #[test]
    fn invalid_languages_rejected() {
        assert!(BigramLanguage::new(vec![vec![1.0]]).is_err());
        assert!(BigramLanguage::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).is_err());
        assert!(BigramLanguage::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
    }
}
