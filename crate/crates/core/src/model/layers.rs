use rand::Rng;

use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var, MASK_SCORE};

/// `y = x W + b`, with `W` stored as `[input, output]`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Result<Self, NumericsError> {
        let w = store.add_uniform(&format!("{name}.w"), &[input, output], rng)?;
        let b = if bias {
            Some(store.add_zeros(&format!("{name}.b"), &[1, output])?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Gated recurrent cell with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub(crate) struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, NumericsError> {
        let w_x = store.add_uniform(&format!("{name}.w_x"), &[input, 4 * hidden], rng)?;
        let w_h = store.add_uniform(&format!("{name}.w_h"), &[hidden, 4 * hidden], rng)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(&format!("{name}.b"), Tensor::new(vec![1, 4 * hidden], bias)?)?;
        Ok(Self { w_x, w_h, b, hidden })
    }

    /// Input contribution `x W_x + b` for every row of `x` at once.
    pub fn project_inputs(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(store, self.w_x);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    /// One step from pre-projected inputs `[B, 4h]`. A `None` state is the zero state.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xw: Var,
        prev: Option<LstmState>,
    ) -> Result<LstmState, NumericsError> {
        let h = self.hidden;
        let gates = match prev {
            Some(s) => {
                let w = tape.param(store, self.w_h);
                let hw = tape.matmul(s.h, w)?;
                tape.add(xw, hw)?
            }
            None => xw,
        };
        let sig = tape.sigmoid(gates)?;
        let i = tape.slice_cols(sig, 0, h)?;
        let o = tape.slice_cols(sig, 3 * h, h)?;
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g)?;
        let ig = tape.mul(i, g)?;
        let c = match prev {
            Some(s) => {
                let f = tape.slice_cols(sig, h, h)?;
                let fc = tape.mul(f, s.c)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Keeps `prev` where `mask` is 0 and `next` where it is 1. `mask` is `[B, 1]`.
fn carry(tape: &mut Tape, next: Var, prev: Option<Var>, mask: Var) -> Result<Var, NumericsError> {
    match prev {
        Some(p) => {
            let d = tape.sub(next, p)?;
            let d = tape.mul(d, mask)?;
            tape.add(p, d)
        }
        None => tape.mul(next, mask),
    }
}

/// Runs a cell over a time-major sequence `[T*B, in]`, returning `[T*B, h]`.
/// Steps past an example's length leave its state untouched, so padding never
/// reaches the valid positions in either direction.
pub(crate) fn run_lstm(
    cell: &LstmCell,
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    lengths: &[usize],
    steps: usize,
    reverse: bool,
) -> Result<Var, NumericsError> {
    let batch = lengths.len();
    let xw = cell.project_inputs(tape, store, x)?;
    let mut state: Option<LstmState> = None;
    let mut outputs = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let xt = tape.slice_rows(xw, t * batch, batch)?;
        let mut next = cell.step(tape, store, xt, state)?;
        if lengths.iter().any(|&l| t >= l) {
            let m: Vec<f64> = lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
            let mask = tape.constant(Tensor::new(vec![batch, 1], m)?);
            next = LstmState {
                h: carry(tape, next.h, state.map(|s| s.h), mask)?,
                c: carry(tape, next.c, state.map(|s| s.c), mask)?,
            };
        }
        outputs[t] = Some(next.h);
        state = Some(next);
    }
    let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
    tape.concat(&outputs, 0)
}

/// Stack of bidirectional layers; each direction has `output / 2` units.
#[derive(Clone, Debug)]
pub(crate) struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
}

impl BiLstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        layers: usize,
    ) -> Result<Self, NumericsError> {
        let half = output / 2;
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input } else { output };
            let fwd = LstmCell::new(store, rng, &format!("{name}.l{l}.fwd"), inp, half)?;
            let bwd = LstmCell::new(store, rng, &format!("{name}.l{l}.bwd"), inp, half)?;
            cells.push((fwd, bwd));
        }
        Ok(Self { layers: cells })
    }

    /// `between` is applied to the output of every layer except the last.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: Var,
        lengths: &[usize],
        steps: usize,
        between: &mut dyn FnMut(&mut Tape, Var) -> Result<Var, NumericsError>,
    ) -> Result<Var, NumericsError> {
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let f = run_lstm(fwd, tape, store, x, lengths, steps, false)?;
            let b = run_lstm(bwd, tape, store, x, lengths, steps, true)?;
            x = tape.concat(&[f, b], 1)?;
            if l + 1 < self.layers.len() {
                x = between(tape, x)?;
            }
        }
        Ok(x)
    }
}

/// Additive attention `score(t) = v . tanh(W_k h_t + W_q z)`.
#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub keys: Linear,
    pub query: Linear,
    pub v: ParamId,
}

/// Encoder states prepared for repeated attention queries.
#[derive(Clone, Debug)]
pub struct AttnMemory {
    pub(crate) states: Var,
    pub(crate) keys: Var,
    pub(crate) mask_bias: Var,
    pub(crate) tile: Vec<usize>,
    pub(crate) lengths: Vec<usize>,
    pub(crate) steps: usize,
    pub(crate) batch: usize,
    pub(crate) dim: usize,
}

impl AttnMemory {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        att_dim: usize,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            keys: Linear::new(store, rng, &format!("{name}.keys"), dim, att_dim, true)?,
            query: Linear::new(store, rng, &format!("{name}.query"), dim, att_dim, false)?,
            v: store.add_uniform(&format!("{name}.v"), &[att_dim, 1], rng)?,
        })
    }

    /// `states` is time-major `[T*B, d]`.
    pub fn memory(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        states: Var,
        lengths: &[usize],
        steps: usize,
    ) -> Result<AttnMemory, NumericsError> {
        let batch = lengths.len();
        let keys = self.keys.forward(tape, store, states)?;
        let att_dim = tape.shape(keys)[1];
        let dim = tape.value(states).cols();
        let mut bias = vec![0.0; batch * steps];
        for (b, &l) in lengths.iter().enumerate() {
            bias[b * steps + l..(b + 1) * steps].fill(MASK_SCORE);
        }
        let mask_bias = tape.constant(Tensor::new(vec![batch, steps], bias)?);
        let mut tile = Vec::with_capacity(steps * batch * att_dim);
        for _ in 0..steps {
            for b in 0..batch {
                tile.extend(b * att_dim..(b + 1) * att_dim);
            }
        }
        Ok(AttnMemory {
            states,
            keys,
            mask_bias,
            tile,
            lengths: lengths.to_vec(),
            steps,
            batch,
            dim,
        })
    }

    /// Returns the context `[B, d]` and the attention weights `[B, T]`.
    /// `None` stands for a zero query.
    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mem: &AttnMemory,
        query: Option<Var>,
    ) -> Result<(Var, Var), NumericsError> {
        let (t, b) = (mem.steps, mem.batch);
        let pre = match query {
            Some(z) => {
                let q = self.query.forward(tape, store, z)?;
                let att_dim = tape.shape(q)[1];
                let tiled = tape.gather(q, mem.tile.clone(), vec![t * b, att_dim])?;
                tape.add(mem.keys, tiled)?
            }
            None => mem.keys,
        };
        let act = tape.tanh(pre)?;
        let v = tape.param(store, self.v);
        let scores = tape.matmul(act, v)?;
        let scores = tape.reshape(scores, &[t, b])?;
        let scores = tape.transpose(scores)?;
        let scores = tape.add(scores, mem.mask_bias)?;
        let log_w = tape.log_softmax(scores)?;
        let weights = tape.exp(log_w)?;
        let wt = tape.transpose(weights)?;
        let wt = tape.reshape(wt, &[t * b, 1])?;
        let weighted = tape.mul(mem.states, wt)?;
        let weighted = tape.reshape(weighted, &[t, b * mem.dim])?;
        let ctx = tape.sum_rows(weighted)?;
        let ctx = tape.reshape(ctx, &[b, mem.dim])?;
        Ok((ctx, weights))
    }
}
