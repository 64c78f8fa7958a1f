//! Layers composed from graph primitives: affine maps, LSTM cells and
//! additive (MLP-scored) attention.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Axis, Bound, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: store.add_uniform(format!("{name}.w"), input, output, rng),
            b: store.add_uniform(format!("{name}.b"), 1, output, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add(y, p[self.b])
    }
}

/// Recurrent state of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmState {
            h: g.constant(Tensor::zeros(1, hidden)),
            c: g.constant(Tensor::zeros(1, hidden)),
        }
    }

    pub fn from_values(g: &mut Graph, v: &LstmValues) -> Self {
        LstmState {
            h: g.constant(v.h.clone()),
            c: g.constant(v.c.clone()),
        }
    }

    pub fn values(&self, g: &Graph) -> LstmValues {
        LstmValues {
            h: g.value(self.h).clone(),
            c: g.value(self.c).clone(),
        }
    }
}

/// Graph-independent snapshot of an [`LstmState`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmValues {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmValues {
    pub fn zeros(hidden: usize) -> Self {
        LstmValues {
            h: Tensor::zeros(1, hidden),
            c: Tensor::zeros(1, hidden),
        }
    }
}

/// LSTM cell with gate layout `[input, forget, candidate, output]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Lstm {
            wx: store.add_uniform(format!("{name}.wx"), input, 4 * hidden, rng),
            wh: store.add_uniform(format!("{name}.wh"), hidden, 4 * hidden, rng),
            b: store.add_uniform(format!("{name}.b"), 1, 4 * hidden, rng),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Input contribution `x·Wx + b` for every row of `x` at once.
    pub fn project_inputs(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p[self.wx])?;
        g.add(xw, p[self.b])
    }

    /// One step given a precomputed `[1, 4h]` input projection.
    pub fn step_projected(&self, g: &mut Graph, p: &Bound, xw: Var, state: LstmState) -> Result<LstmState> {
        let hw = g.matmul(state.h, p[self.wh])?;
        let z = g.add(xw, hw)?;
        let h = self.hidden;
        let i = g.slice(z, Axis::Cols, 0, h)?;
        let f = g.slice(z, Axis::Cols, h, 2 * h)?;
        let c_hat = g.slice(z, Axis::Cols, 2 * h, 3 * h)?;
        let o = g.slice(z, Axis::Cols, 3 * h, 4 * h)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let c_hat = g.tanh(c_hat);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, c_hat)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let xw = self.project_inputs(g, p, x)?;
        self.step_projected(g, p, xw, state)
    }

    /// Runs over every row of `x` (in reverse when `reverse`), starting from
    /// zero state. Returns `[m, h]` outputs in original time order.
    pub fn run(&self, g: &mut Graph, p: &Bound, x: Var, reverse: bool) -> Result<Var> {
        let m = g.value(x).rows();
        let xw = self.project_inputs(g, p, x)?;
        let mut state = LstmState::zeros(g, self.hidden);
        let mut outs = vec![state.h; m];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..m).rev())
        } else {
            Box::new(0..m)
        };
        for t in order {
            let row = g.slice(xw, Axis::Rows, t, t + 1)?;
            state = self.step_projected(g, p, row, state)?;
            outs[t] = state.h;
        }
        g.concat(&outs, Axis::Rows)
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// `[m, in] -> [m, 2h]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let f = self.fwd.run(g, p, x, false)?;
        let b = self.bwd.run(g, p, x, true)?;
        g.concat(&[f, b], Axis::Cols)
    }
}

/// Additive attention: `score_j = v · tanh(W_k k_j + W_q q + b)`.
#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    w_key: ParamId,
    w_query: ParamId,
    bias: ParamId,
    v: ParamId,
}

/// Keys projected once per memory.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMemory {
    pub values: Var,
    keys: Var,
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        memory_dim: usize,
        query_dim: usize,
        attn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        AdditiveAttention {
            w_key: store.add_uniform(format!("{name}.w_key"), memory_dim, attn_dim, rng),
            w_query: store.add_uniform(format!("{name}.w_query"), query_dim, attn_dim, rng),
            bias: store.add_uniform(format!("{name}.b"), 1, attn_dim, rng),
            v: store.add_uniform(format!("{name}.v"), 1, attn_dim, rng),
        }
    }

    pub fn memory(&self, g: &mut Graph, p: &Bound, values: Var) -> Result<AttentionMemory> {
        let k = g.matmul(values, p[self.w_key])?;
        let keys = g.add(k, p[self.bias])?;
        Ok(AttentionMemory { values, keys })
    }

    /// Returns `(context [1, memory_dim], weights [1, M])`.
    pub fn attend(&self, g: &mut Graph, p: &Bound, mem: &AttentionMemory, query: Var) -> Result<(Var, Var)> {
        let q = g.matmul(query, p[self.w_query])?;
        let e = g.add(mem.keys, q)?;
        let e = g.tanh(e);
        let scores = g.matmul_nt(p[self.v], e)?;
        let weights = g.softmax(scores);
        let ctx = g.matmul(weights, mem.values)?;
        Ok((ctx, weights))
    }
}
