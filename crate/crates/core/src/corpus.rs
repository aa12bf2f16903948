//! Tokenization, vocabularies, corpora and length buckets.
//!
//! Corpus files are UTF-8 with one sentence per line and space-separated
//! tokens. Tokens are lowercased on ingestion. Encoded sentences are framed
//! as `<s> … </s>`.
//!
//! Vocabulary files start with four `#` header lines naming the reserved
//! symbols, followed by one token per line; the token on line `k` after the
//! header has id `k + 4`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Sentences longer than this many tokens are dropped on ingestion.
pub const DEFAULT_MAX_TOKENS: usize = 50;

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

pub fn is_reserved(id: TokenId) -> bool {
    (id as usize) < NUM_RESERVED
}

/// Bijection between tokens and ids; ids `0..4` are the reserved symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from content tokens in id order (ids start at 4).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for tok in tokens {
            let tok: String = tok.into();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid vocabulary token {tok:?}")));
            }
            if index.contains_key(&tok) {
                return Err(Error::invalid(format!("duplicate vocabulary token {tok:?}")));
            }
            index.insert(tok.clone(), all.len() as TokenId);
            all.push(tok);
        }
        Ok(Self { tokens: all, index })
    }

    /// Total size including the reserved symbols.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    /// Content tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `<s> ids… </s>` for already tokenized text.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        out.push(BOS);
        out.extend(tokens.iter().map(|t| self.id(t.as_ref())));
        out.push(EOS);
        out
    }

    /// Tokens of `ids` with framing and padding removed.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (i, r) in RESERVED.iter().enumerate() {
            let _ = writeln!(s, "# {i} {r}");
        }
        for t in self.content_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        for _ in 0..NUM_RESERVED {
            match lines.next() {
                Some((_, l)) if l.starts_with('#') => {}
                Some((n, _)) => return Err(Error::parse(n + 1, "expected reserved-symbol header line")),
                None => return Err(Error::parse(0, "vocabulary file shorter than its header")),
            }
        }
        let mut tokens = Vec::new();
        for (n, line) in lines {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(Error::parse(n + 1, format!("invalid token line {line:?}")));
            }
            if RESERVED.contains(&line) {
                return Err(Error::parse(
                    n + 1,
                    format!("reserved symbol {line} listed as a token"),
                ));
            }
            tokens.push(line.to_string());
        }
        Self::from_tokens(tokens).map_err(|e| Error::parse(0, e.to_string()))
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

/// Most frequent tokens first, ties broken lexicographically; at most
/// `max_size` content tokens (reserved symbols are not counted).
pub fn build_vocab<I, S>(lines: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size <= NUM_RESERVED {
        return Err(Error::invalid(format!(
            "max_size must exceed {NUM_RESERVED}, got {max_size}"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            any = true;
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Empty("vocabulary source has no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Vocabulary of tokens present in every source. Ids are ordered by total
/// count across sources, then lexicographically, so the result does not
/// depend on source order.
pub fn build_shared_vocab<S: AsRef<str>>(sources: &[Vec<S>]) -> Result<Vocab> {
    if sources.len() < 2 {
        return Err(Error::invalid("a shared vocabulary needs at least two sources"));
    }
    let mut shared: Option<BTreeSet<String>> = None;
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for source in sources {
        let mut seen = BTreeSet::new();
        for line in source {
            for tok in tokenize(line.as_ref()) {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                *totals.entry(tok.clone()).or_default() += 1;
                seen.insert(tok);
            }
        }
        shared = Some(match shared {
            None => seen,
            Some(acc) => acc.intersection(&seen).cloned().collect(),
        });
    }
    let shared = shared.unwrap_or_default();
    if shared.is_empty() {
        return Err(Error::Empty("sources share no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = shared
        .into_iter()
        .map(|t| {
            let c = totals[&t];
            (t, c)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
    Generated,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Generated => "generated",
        }
    }
}

/// Encoded sentences, each framed `<s> … </s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Vec<TokenId>>,
    pub source: String,
    pub split: Split,
}

impl Corpus {
    /// Tokenizes and encodes `lines`, skipping blank lines and sentences with
    /// more than `max_tokens` tokens.
    pub fn from_lines<I, S>(lines: I, vocab: &Vocab, max_tokens: usize, source: &str, split: Split) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = lines
            .into_iter()
            .map(|l| tokenize(l.as_ref()))
            .filter(|t| !t.is_empty() && t.len() <= max_tokens)
            .map(|t| vocab.encode(&t))
            .collect();
        Self {
            sentences,
            source: source.to_string(),
            split,
        }
    }

    /// Wraps bare content-id sequences with `<s>`/`</s>`.
    pub fn from_content(content: Vec<Vec<TokenId>>, source: &str, split: Split) -> Self {
        let sentences = content
            .into_iter()
            .map(|c| {
                let mut s = Vec::with_capacity(c.len() + 2);
                s.push(BOS);
                s.extend(c);
                s.push(EOS);
                s
            })
            .collect();
        Self {
            sentences,
            source: source.to_string(),
            split,
        }
    }

    pub fn read(path: impl AsRef<Path>, vocab: &Vocab, max_tokens: usize, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_lines(
            text.lines(),
            vocab,
            max_tokens,
            &path.display().to_string(),
            split,
        ))
    }

    pub fn write(&self, path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for line in self.to_lines(vocab) {
            out.push_str(&line);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Tokens of sentence `i` without the framing symbols.
    pub fn content(&self, i: usize) -> &[TokenId] {
        content_of(&self.sentences[i])
    }

    pub fn contents(&self) -> impl Iterator<Item = &[TokenId]> {
        self.sentences.iter().map(|s| content_of(s))
    }

    pub fn mean_length(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.contents().map(<[TokenId]>::len).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn to_lines(&self, vocab: &Vocab) -> Vec<String> {
        self.sentences.iter().map(|s| vocab.decode(s).join(" ")).collect()
    }

    /// Re-encodes through another vocabulary; tokens it lacks become `<unk>`.
    pub fn remap(&self, from: &Vocab, to: &Vocab) -> Corpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| to.encode(&from.decode(s)))
            .collect();
        Corpus {
            sentences,
            source: self.source.clone(),
            split: self.split,
        }
    }

    /// Number of distinct non-reserved token types used.
    pub fn type_count(&self) -> usize {
        self.contents()
            .flatten()
            .filter(|&&id| !is_reserved(id))
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn with_sentences(&self, sentences: Vec<Vec<TokenId>>) -> Corpus {
        Corpus {
            sentences,
            source: self.source.clone(),
            split: self.split,
        }
    }
}

/// Strips a leading `<s>` and trailing `</s>` when present.
pub fn content_of(sentence: &[TokenId]) -> &[TokenId] {
    let s = sentence.strip_prefix(&[BOS]).unwrap_or(sentence);
    s.strip_suffix(&[EOS]).unwrap_or(s)
}

/// Inclusive bounds on content length (tokens, framing excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bucket {
    pub label: &'static str,
    pub min_len: usize,
    pub max_len: usize,
}

impl Bucket {
    pub fn contains(&self, len: usize) -> bool {
        (self.min_len..=self.max_len).contains(&len)
    }
}

pub const BUCKET_1: Bucket = Bucket {
    label: "bucket1",
    min_len: 0,
    max_len: 10,
};
pub const BUCKET_2: Bucket = Bucket {
    label: "bucket2",
    min_len: 11,
    max_len: 20,
};
pub const BUCKET_3: Bucket = Bucket {
    label: "bucket3",
    min_len: 21,
    max_len: 30,
};
pub const BUCKET_ALL: Bucket = Bucket {
    label: "all",
    min_len: 0,
    max_len: usize::MAX,
};
pub const BUCKETS: [Bucket; 4] = [BUCKET_1, BUCKET_2, BUCKET_3, BUCKET_ALL];

/// Splits a corpus into the length buckets plus "all". Sentences longer than
/// 30 tokens only appear in "all".
pub fn bucketize(corpus: &Corpus) -> Vec<(Bucket, Corpus)> {
    BUCKETS
        .iter()
        .map(|b| {
            let picked = corpus
                .sentences
                .iter()
                .filter(|s| b.contains(content_of(s).len()))
                .cloned()
                .collect();
            (*b, corpus.with_sentences(picked))
        })
        .collect()
}

/// Percentage of `<unk>` among content tokens (framing and padding excluded).
pub fn unk_rate(corpus: &Corpus) -> f64 {
    let mut unk = 0usize;
    let mut total = 0usize;
    for id in corpus.contents().flatten() {
        match *id {
            PAD | BOS | EOS => {}
            UNK => {
                unk += 1;
                total += 1;
            }
            _ => total += 1,
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * unk as f64 / total as f64
    }
}
