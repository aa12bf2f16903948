//! Embeddings, linear maps and GRU/LSTM cells over a [`Tape`].
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] and
//! are bound to the tape on first use.
//!
//! Initialization: recurrent and linear weights are uniform in
//! `(−1/√fan, 1/√fan)` with `fan` the hidden size (recurrent) or input width
//! (linear), embeddings are `N(0, 0.1²)` and biases start at zero.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const EMBEDDING_INIT_STD: f64 = 0.1;

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// A `|V| × d` lookup table.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
        let table = store.add(name, Tensor::new(&[vocab, dim], data).expect("shape"));
        Self { table, vocab, dim }
    }

    /// `[ids.len() × dim]` rows of the table.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::Index {
                index: bad,
                size: self.vocab,
            });
        }
        let table = tape.param(store, self.table);
        tape.gather_rows(table, ids)
    }
}

/// `y = x·W + b` with `W: [in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(&[in_dim, out_dim], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Invalid(format!("unknown cell kind `{other}`"))),
        }
    }
}

/// Recurrent state: `h` for a GRU, `(h, c)` for an LSTM. Each is `[B × h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellState {
    Gru(Var),
    Lstm { h: Var, c: Var },
}

impl CellState {
    pub fn hidden(&self) -> Var {
        match *self {
            CellState::Gru(h) | CellState::Lstm { h, .. } => h,
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellState::Gru(_) => CellKind::Gru,
            CellState::Lstm { .. } => CellKind::Lstm,
        }
    }

    /// `old + mask ⊙ (new − old)` with one constant mask weight per row,
    /// so rows with mask 0 keep their previous state.
    pub fn blend(tape: &mut Tape, old: CellState, new: CellState, mask: &[f64]) -> Result<CellState> {
        let mut mix = |o: Var, n: Var| -> Result<Var> {
            let d = tape.sub(n, o)?;
            let d = tape.scale_rows(d, mask.to_vec())?;
            tape.add(o, d)
        };
        match (old, new) {
            (CellState::Gru(o), CellState::Gru(n)) => Ok(CellState::Gru(mix(o, n)?)),
            (CellState::Lstm { h: oh, c: oc }, CellState::Lstm { h: nh, c: nc }) => Ok(CellState::Lstm {
                h: mix(oh, nh)?,
                c: mix(oc, nc)?,
            }),
            _ => Err(Error::Invalid("cannot blend GRU and LSTM states".into())),
        }
    }
}

/// GRU or LSTM cell with separate input and hidden biases.
///
/// GRU gate blocks are `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x·W_r + b_r + h·U_r + c_r)
/// u  = σ(x·W_u + b_u + h·U_u + c_u)
/// n  = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
///
/// LSTM gate blocks are `[input | forget | cell | output]`:
///
/// ```text
/// c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)
/// h' = σ(o) ⊙ tanh(c')
/// ```
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
}

impl RecurrentCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let g = kind.gates() * hidden;
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let w_input = store.add(
            format!("{name}.w_input"),
            uniform_tensor(&[input_dim, g], bound, rng),
        );
        let w_hidden = store.add(
            format!("{name}.w_hidden"),
            uniform_tensor(&[hidden, g], bound, rng),
        );
        let b_input = store.add(format!("{name}.b_input"), Tensor::zeros(&[g]));
        let b_hidden = store.add(format!("{name}.b_hidden"), Tensor::zeros(&[g]));
        Self {
            kind,
            input_dim,
            hidden,
            w_input,
            w_hidden,
            b_input,
            b_hidden,
        }
    }

    /// `gates·(input + hidden) + 2·gates` per hidden unit.
    pub fn num_params(&self) -> usize {
        let g = self.kind.gates() * self.hidden;
        g * (self.input_dim + self.hidden) + 2 * g
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> CellState {
        let z = |t: &mut Tape| t.constant(Tensor::zeros(&[batch, self.hidden]));
        match self.kind {
            CellKind::Gru => CellState::Gru(z(tape)),
            CellKind::Lstm => CellState::Lstm {
                h: z(tape),
                c: z(tape),
            },
        }
    }

    /// Input half of the gate pre-activations, `x·W + b` for `x: [N × in]`.
    /// Lets a whole sequence be projected with one matrix product.
    pub fn project_input(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim || tape.value(x).rank() != 2 {
            return Err(Error::Shape {
                op: "recurrent input",
                a: tape.value(x).shape().to_vec(),
                b: vec![self.input_dim],
            });
        }
        let w = tape.param(store, self.w_input);
        let b = tape.param(store, self.b_input);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    /// One step from already projected inputs `[B × gates·h]`.
    pub fn step_projected(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xproj: Var,
        state: CellState,
    ) -> Result<CellState> {
        if state.kind() != self.kind {
            return Err(Error::Invalid(format!(
                "{} state passed to a {} cell",
                state.kind().as_str(),
                self.kind.as_str()
            )));
        }
        let h = self.hidden;
        let u = tape.param(store, self.w_hidden);
        let c = tape.param(store, self.b_hidden);
        let hu = tape.matmul(state.hidden(), u)?;
        let hproj = tape.add(hu, c)?;
        match state {
            CellState::Gru(prev) => {
                let sum = tape.add(xproj, hproj)?;
                let r_pre = tape.slice_cols(sum, 0, h)?;
                let u_pre = tape.slice_cols(sum, h, 2 * h)?;
                let r = tape.sigmoid(r_pre);
                let z = tape.sigmoid(u_pre);
                let xn = tape.slice_cols(xproj, 2 * h, 3 * h)?;
                let hn = tape.slice_cols(hproj, 2 * h, 3 * h)?;
                let rhn = tape.mul(r, hn)?;
                let n_pre = tape.add(xn, rhn)?;
                let n = tape.tanh(n_pre);
                // h' = n + u ⊙ (h − n)
                let diff = tape.sub(prev, n)?;
                let keep = tape.mul(z, diff)?;
                Ok(CellState::Gru(tape.add(n, keep)?))
            }
            CellState::Lstm { c: cell, .. } => {
                let sum = tape.add(xproj, hproj)?;
                let i_pre = tape.slice_cols(sum, 0, h)?;
                let f_pre = tape.slice_cols(sum, h, 2 * h)?;
                let g_pre = tape.slice_cols(sum, 2 * h, 3 * h)?;
                let o_pre = tape.slice_cols(sum, 3 * h, 4 * h)?;
                let i = tape.sigmoid(i_pre);
                let f = tape.sigmoid(f_pre);
                let g = tape.tanh(g_pre);
                let o = tape.sigmoid(o_pre);
                let fc = tape.mul(f, cell)?;
                let ig = tape.mul(i, g)?;
                let c_new = tape.add(fc, ig)?;
                let tc = tape.tanh(c_new);
                let h_new = tape.mul(o, tc)?;
                Ok(CellState::Lstm { h: h_new, c: c_new })
            }
        }
    }

    /// One recurrent update for input rows `x: [B × in]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: CellState) -> Result<CellState> {
        let xproj = self.project_input(tape, store, x)?;
        self.step_projected(tape, store, xproj, state)
    }
}

/// `−log softmax(logits)[target]` for a single `[V]` logit vector.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    tape.cross_entropy(logits, &[Some(target)])
}
