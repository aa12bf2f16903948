//! The sequence VAE: recurrent encoder with Gaussian heads, and a recurrent
//! decoder that sees `[word embedding ∥ z]` at every step.
//!
//! Batches are processed time-major: row `t·B + b` of a stacked matrix holds
//! step `t` of sentence `b`, so each step is a contiguous row slice.

use capvae_autodiff::{CellKind, CellState, Embedding, Linear, ParamStore, RecurrentCell, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::{content_of, TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    /// Zero gives a plain recurrent language model.
    pub latent_dim: usize,
    pub cell: CellKind,
}

impl ModelDims {
    /// Total parameter count of a model with these sizes, `None` on overflow.
    pub fn num_scalars(&self) -> Option<usize> {
        let g = self.cell.gates().checked_mul(self.hidden)?;
        let cell = |input: usize| -> Option<usize> {
            g.checked_mul(input.checked_add(self.hidden)?)?.checked_add(2 * g)
        };
        let linear = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
        let emb = self.vocab.checked_mul(self.emb_dim)?;
        let mut total = emb
            .checked_add(cell(self.emb_dim.checked_add(self.latent_dim)?)?)?
            .checked_add(linear(self.hidden, self.vocab)?)?;
        if self.latent_dim > 0 {
            total = total
                .checked_add(emb)?
                .checked_add(cell(self.emb_dim)?)?
                .checked_add(linear(self.hidden, self.latent_dim)?.checked_mul(2)?)?;
        }
        Some(total)
    }
}

/// Diagonal Gaussian posterior `q(z|x) = N(μ, diag(exp(log_var)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianPosterior {
    pub fn prior(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Closed-form `KL(q ‖ N(0, I))` in nats.
    pub fn kl(&self) -> f64 {
        gaussian_kl(&self.mu, &self.log_var)
    }

    /// `μ + exp(½·log_var) ⊙ noise`.
    pub fn reparameterize(&self, noise: &[f64]) -> Result<Vec<f64>> {
        reparameterize(&self.mu, &self.log_var, noise)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        reparameterize(&self.mu, &self.log_var, &noise).expect("matching dimensions")
    }
}

/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn gaussian_kl(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub fn reparameterize(mu: &[f64], log_var: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() || mu.len() != noise.len() {
        return Err(Error::invalid(format!(
            "reparameterize: mu {}, log_var {}, noise {}",
            mu.len(),
            log_var.len(),
            noise.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Per-row Gaussian KL on the tape: `[B × d]` μ and log-variance → `[B]`.
pub fn gaussian_kl_rows(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let m2 = tape.square(mu);
    let var = tape.exp(log_var);
    let a = tape.add(m2, var)?;
    let b = tape.sub(a, log_var)?;
    let b = tape.offset(b, -1.0);
    let rows = tape.sum_last(b);
    Ok(tape.scale(rows, 0.5))
}

/// `μ + exp(½·log_var) ⊙ noise` on the tape.
pub fn reparameterize_on_tape(tape: &mut Tape, mu: Var, log_var: Var, noise: Tensor) -> Result<Var> {
    if tape.value(mu).shape() != noise.shape() {
        return Err(Error::invalid(format!(
            "noise shape {:?} does not match posterior shape {:?}",
            noise.shape(),
            tape.value(mu).shape()
        )));
    }
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(noise);
    let spread = tape.mul(std, eps)?;
    Ok(tape.add(mu, spread)?)
}

fn check_ids(ids: &[TokenId], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(bad) => Err(Error::invalid(format!(
            "token id {bad} outside vocabulary of size {vocab}"
        ))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: Embedding,
    pub cell: RecurrentCell,
    pub mu_head: Linear,
    pub log_var_head: Linear,
}

impl Encoder {
    fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let embedding = Embedding::new(store, "encoder.embedding", dims.vocab, dims.emb_dim, rng);
        let cell = RecurrentCell::new(store, "encoder.cell", dims.cell, dims.emb_dim, dims.hidden, rng);
        let mu_head = Linear::new(store, "encoder.mu", dims.hidden, dims.latent_dim, rng);
        let log_var_head = Linear::new(store, "encoder.log_var", dims.hidden, dims.latent_dim, rng);
        Self {
            embedding,
            cell,
            mu_head,
            log_var_head,
        }
    }

    /// Runs over the content tokens of each sentence and maps the final hidden
    /// state to `(μ, log σ²)`, both `[B × d_z]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentences: &[&[TokenId]],
    ) -> Result<(Var, Var)> {
        let contents: Vec<&[TokenId]> = sentences.iter().map(|s| content_of(s)).collect();
        if contents.is_empty() {
            return Err(Error::Empty("encoder batch".into()));
        }
        if contents.iter().any(|c| c.is_empty()) {
            return Err(Error::Empty("cannot encode a sentence without tokens".into()));
        }
        let b = contents.len();
        let steps = contents.iter().map(|c| c.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for c in &contents {
                ids.push(c.get(t).copied().unwrap_or(PAD) as usize);
            }
        }
        let emb = self.embedding.forward(tape, store, &ids)?;
        let proj = self.cell.project_input(tape, store, emb)?;
        let mut state = self.cell.zero_state(tape, b);
        for t in 0..steps {
            let xp = tape.slice_rows(proj, t * b, (t + 1) * b)?;
            let next = self.cell.step_projected(tape, store, xp, state)?;
            let mask: Vec<f64> = contents
                .iter()
                .map(|c| if t < c.len() { 1.0 } else { 0.0 })
                .collect();
            state = if mask.iter().all(|&m| m == 1.0) {
                next
            } else {
                CellState::blend(tape, state, next, &mask)?
            };
        }
        let h = state.hidden();
        let mu = self.mu_head.forward(tape, store, h)?;
        let log_var = self.log_var_head.forward(tape, store, h)?;
        Ok((mu, log_var))
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub embedding: Embedding,
    pub cell: RecurrentCell,
    pub output: Linear,
    pub emb_dim: usize,
    pub latent_dim: usize,
}

/// Input projection of the latent code, added to every decoder step.
#[derive(Clone, Copy, Debug)]
pub struct LatentProjection(Option<Var>);

impl Decoder {
    fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let embedding = Embedding::new(store, "decoder.embedding", dims.vocab, dims.emb_dim, rng);
        let cell = RecurrentCell::new(
            store,
            "decoder.cell",
            dims.cell,
            dims.emb_dim + dims.latent_dim,
            dims.hidden,
            rng,
        );
        let output = Linear::new(store, "decoder.output", dims.hidden, dims.vocab, rng);
        Self {
            embedding,
            cell,
            output,
            emb_dim: dims.emb_dim,
            latent_dim: dims.latent_dim,
        }
    }

    /// Splits `[emb ∥ z]·W` into `emb·W_e + z·W_z` so the latent half is
    /// computed once per sentence rather than once per step.
    pub fn project_latent(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Option<Var>,
    ) -> Result<LatentProjection> {
        match (z, self.latent_dim) {
            (None, 0) => Ok(LatentProjection(None)),
            (Some(z), d) if d > 0 => {
                if tape.value(z).cols() != d || tape.value(z).rank() != 2 {
                    return Err(Error::invalid(format!(
                        "latent code shape {:?}, expected [B × {d}]",
                        tape.value(z).shape()
                    )));
                }
                let w = tape.param(store, self.cell.w_input);
                let wz = tape.slice_rows(w, self.emb_dim, self.emb_dim + d)?;
                Ok(LatentProjection(Some(tape.matmul(z, wz)?)))
            }
            (None, d) => Err(Error::invalid(format!(
                "decoder expects a {d}-dimensional latent code"
            ))),
            (Some(_), _) => Err(Error::invalid("language model decoder takes no latent code")),
        }
    }

    /// Input projections for `ids` (time-major, `B` per step) without the
    /// latent part: `[len × gates·h]`.
    fn project_tokens(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let emb = self.embedding.forward(tape, store, ids)?;
        let w = tape.param(store, self.cell.w_input);
        let we = tape.slice_rows(w, 0, self.emb_dim)?;
        let b = tape.param(store, self.cell.b_input);
        let xw = tape.matmul(emb, we)?;
        Ok(tape.add(xw, b)?)
    }

    fn add_latent(tape: &mut Tape, xp: Var, latent: LatentProjection) -> Result<Var> {
        match latent.0 {
            Some(zp) => Ok(tape.add(xp, zp)?),
            None => Ok(xp),
        }
    }

    /// Teacher-forced per-sentence NLL (nats) of framed sentences, `[B]`.
    /// The initial hidden state is zero; `z` enters only through the inputs.
    pub fn nll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sentences: &[&[TokenId]],
        z: Option<Var>,
    ) -> Result<Var> {
        if sentences.is_empty() {
            return Err(Error::Empty("decoder batch".into()));
        }
        for s in sentences {
            if s.len() < 2 || s[0] != BOS || s[s.len() - 1] != EOS {
                return Err(Error::invalid("decoder input must be framed as <s> … </s>"));
            }
            check_ids(s, self.embedding.vocab)?;
        }
        let b = sentences.len();
        let steps = sentences.iter().map(|s| s.len() - 1).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for s in sentences {
                ids.push(if t + 1 < s.len() {
                    s[t] as usize
                } else {
                    PAD as usize
                });
            }
        }
        let latent = self.project_latent(tape, store, z)?;
        let proj = self.project_tokens(tape, store, &ids)?;
        let mut state = self.cell.zero_state(tape, b);
        let mut hiddens = Vec::with_capacity(steps);
        for t in 0..steps {
            let xp = tape.slice_rows(proj, t * b, (t + 1) * b)?;
            let xp = Self::add_latent(tape, xp, latent)?;
            state = self.cell.step_projected(tape, store, xp, state)?;
            hiddens.push(state.hidden());
        }
        let all = tape.concat_rows(&hiddens)?;
        // Keep only rows that predict a real token, then fold them back into
        // per-sentence sums with a 0/1 membership matrix.
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut owner = Vec::new();
        for t in 0..steps {
            for (k, s) in sentences.iter().enumerate() {
                if t + 1 < s.len() {
                    rows.push(t * b + k);
                    targets.push(Some(s[t + 1] as usize));
                    owner.push(k);
                }
            }
        }
        let kept = tape.gather_rows(all, &rows)?;
        let logits = self.output.forward(tape, store, kept)?;
        let ce = tape.cross_entropy(logits, &targets)?;
        let n = rows.len();
        let ce = tape.reshape(ce, &[n, 1])?;
        let mut membership = vec![0.0; b * n];
        for (r, &k) in owner.iter().enumerate() {
            membership[k * n + r] = 1.0;
        }
        let m = tape.constant(Tensor::new(&[b, n], membership)?);
        let per = tape.matmul(m, ce)?;
        Ok(tape.reshape(per, &[b])?)
    }

    pub fn start(&self, tape: &mut Tape, batch: usize) -> CellState {
        self.cell.zero_state(tape, batch)
    }

    /// One free-running step: feeds `prev` tokens, returns logits `[B × V]`
    /// and the new state.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prev: &[TokenId],
        latent: LatentProjection,
        state: CellState,
    ) -> Result<(Var, CellState)> {
        check_ids(prev, self.embedding.vocab)?;
        let ids: Vec<usize> = prev.iter().map(|&t| t as usize).collect();
        let xp = self.project_tokens(tape, store, &ids)?;
        let xp = Self::add_latent(tape, xp, latent)?;
        let state = self.cell.step_projected(tape, store, xp, state)?;
        let logits = self.output.forward(tape, store, state.hidden())?;
        Ok((logits, state))
    }
}

/// Encoder, decoder and their parameters.
#[derive(Clone, Debug)]
pub struct VaeModel {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub encoder: Option<Encoder>,
    pub decoder: Decoder,
}

/// Sentences evaluated per tape in read-only passes.
pub const EVAL_CHUNK: usize = 64;

impl VaeModel {
    /// A VAE, or a plain language model when `dims.latent_dim == 0`.
    pub fn new(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        if dims.vocab < 5 || dims.emb_dim == 0 || dims.hidden == 0 {
            return Err(Error::invalid(format!("degenerate model dimensions {dims:?}")));
        }
        let mut store = ParamStore::new();
        let encoder = (dims.latent_dim > 0).then(|| Encoder::new(&mut store, &dims, rng));
        let decoder = Decoder::new(&mut store, &dims, rng);
        Ok(Self {
            dims,
            store,
            encoder,
            decoder,
        })
    }

    pub fn is_language_model(&self) -> bool {
        self.encoder.is_none()
    }

    fn encoder(&self) -> Result<&Encoder> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::invalid("language model has no encoder"))
    }

    /// `(μ, log σ²)` on the tape for a batch of framed sentences.
    pub fn encode_on_tape(&self, tape: &mut Tape, sentences: &[&[TokenId]]) -> Result<(Var, Var)> {
        for s in sentences {
            check_ids(s, self.dims.vocab)?;
        }
        self.encoder()?.forward(tape, &self.store, sentences)
    }

    pub fn encode(&self, sentence: &[TokenId]) -> Result<GaussianPosterior> {
        Ok(self.encode_batch(&[sentence])?.remove(0))
    }

    pub fn encode_batch(&self, sentences: &[&[TokenId]]) -> Result<Vec<GaussianPosterior>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let (mu, lv) = self.encode_on_tape(&mut tape, chunk)?;
            let (mu, lv) = (tape.value(mu), tape.value(lv));
            for i in 0..chunk.len() {
                out.push(GaussianPosterior {
                    mu: mu.row(i).to_vec(),
                    log_var: lv.row(i).to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// `−log p(x|z)` for each framed sentence and its code (ignored, and may
    /// be empty, for a language model).
    pub fn nll_batch(&self, sentences: &[&[TokenId]], codes: &[Vec<f64>]) -> Result<Vec<f64>> {
        let lm = self.is_language_model();
        if !lm && codes.len() != sentences.len() {
            return Err(Error::invalid(format!(
                "{} sentences but {} codes",
                sentences.len(),
                codes.len()
            )));
        }
        let mut out = Vec::with_capacity(sentences.len());
        for (ci, chunk) in sentences.chunks(EVAL_CHUNK).enumerate() {
            let mut tape = Tape::new();
            let z = if lm {
                None
            } else {
                let zs = &codes[ci * EVAL_CHUNK..ci * EVAL_CHUNK + chunk.len()];
                Some(tape.constant(codes_tensor(zs, self.dims.latent_dim)?))
            };
            let nll = self.decoder.nll(&mut tape, &self.store, chunk, z)?;
            out.extend_from_slice(tape.value(nll).data());
        }
        Ok(out)
    }

    pub fn reconstruction_nll(&self, sentence: &[TokenId], z: &[f64]) -> Result<f64> {
        Ok(self.nll_batch(&[sentence], &[z.to_vec()])?[0])
    }
}

/// Stacks codes into a `[B × d]` tensor.
pub fn codes_tensor(codes: &[Vec<f64>], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(codes.len() * dim);
    for z in codes {
        if z.len() != dim {
            return Err(Error::invalid(format!(
                "latent code of dimension {}, expected {dim}",
                z.len()
            )));
        }
        data.extend_from_slice(z);
    }
    Ok(Tensor::new(&[codes.len(), dim], data)?)
}
