//! Recurrent cells: parameters, single steps and backpropagation through a
//! whole sequence for one layer.
//!
//! Gate order inside [`CellParams::gates`]:
//!
//! | cell  | gates                                   |
//! |-------|-----------------------------------------|
//! | S-RNN | `h`                                     |
//! | LSTM  | `f` forget, `i` input, `c` candidate, `o` output |
//! | GRU   | `z` update, `r` reset, `h` candidate    |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Matrix, Result, RnnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Elman network, `h' = tanh(W x + U h + b)`.
    Srnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [Self::Srnn, Self::Lstm, Self::Gru];

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            Self::Srnn => &["h"],
            Self::Lstm => &["f", "i", "c", "o"],
            Self::Gru => &["z", "r", "h"],
        }
    }

    pub fn num_gates(self) -> usize {
        self.gate_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Srnn => "srnn",
            Self::Lstm => "lstm",
            Self::Gru => "gru",
        }
    }

    /// Parameters of one layer with `hidden` units fed `input` features.
    pub fn param_count(self, hidden: usize, input: usize) -> usize {
        self.num_gates() * (hidden * input + hidden * hidden + hidden)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "srnn" | "s-rnn" | "rnn" => Ok(Self::Srnn),
            "lstm" => Ok(Self::Lstm),
            "gru" => Ok(Self::Gru),
            _ => Err(format!("unknown cell `{s}` (expected srnn|lstm|gru)")),
        }
    }
}

/// `W` (hidden x input), `U` (hidden x hidden) and `b` (hidden) of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: Matrix::zeros(hidden, input),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    /// `W x + U h + b`
    fn preactivation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.b.clone();
        self.w.gemv_acc(x, &mut a);
        self.u.gemv_acc(h, &mut a);
        a
    }

    /// Accumulate the gradient of a gate whose preactivation gradient is
    /// `da`, given the step's input and the vector multiplied by `U`.
    fn accumulate(&mut self, da: &[f64], x: &[f64], h: &[f64]) {
        self.w.outer_acc(da, x);
        self.u.outer_acc(da, h);
        for (b, d) in self.b.iter_mut().zip(da) {
            *b += d;
        }
    }

    fn add_assign(&mut self, other: &Gate) {
        self.w.add_assign(&other.w);
        self.u.add_assign(&other.u);
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }
}

/// Parameters of one recurrent layer. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub gates: Vec<Gate>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, hidden: usize, input: usize) -> Self {
        Self {
            kind,
            gates: (0..kind.num_gates())
                .map(|_| Gate::zeros(hidden, input))
                .collect(),
        }
    }

    /// Glorot-uniform weights, zero biases, LSTM forget bias 1.
    pub fn init(kind: CellKind, hidden: usize, input: usize, rng: &mut impl rand::Rng) -> Self {
        let mut p = Self::zeros(kind, hidden, input);
        let limit_w = (6.0 / (input + hidden) as f64).sqrt();
        let limit_u = (6.0 / (2 * hidden) as f64).sqrt();
        for gate in &mut p.gates {
            for v in gate.w.data_mut() {
                *v = rng.random_range(-limit_w..=limit_w);
            }
            for v in gate.u.data_mut() {
                *v = rng.random_range(-limit_u..=limit_u);
            }
        }
        if kind == CellKind::Lstm {
            p.gates[0].b.iter_mut().for_each(|b| *b = 1.0);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].b.len()
    }

    pub fn input(&self) -> usize {
        self.gates[0].w.cols()
    }

    pub fn param_count(&self) -> usize {
        self.kind.param_count(self.hidden(), self.input())
    }

    /// Parameter slices in canonical order: per gate `W`, `U`, `b`.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.gates
            .iter()
            .flat_map(|g| [g.w.data(), g.u.data(), g.b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.gates
            .iter_mut()
            .flat_map(|g| [g.w.data_mut(), g.u.data_mut(), g.b.as_mut_slice()])
    }

    pub fn add_assign(&mut self, other: &CellParams) {
        for (a, b) in self.gates.iter_mut().zip(&other.gates) {
            a.add_assign(b);
        }
    }

    fn check(&self, x: &[f64], state: &CellState) -> Result<()> {
        let n = self.hidden();
        let shapes_ok = x.len() == self.input()
            && state.h.len() == n
            && match (&state.c, self.kind) {
                (Some(c), CellKind::Lstm) => c.len() == n,
                (None, CellKind::Lstm) => false,
                (_, _) => true,
            };
        if shapes_ok {
            Ok(())
        } else {
            Err(RnnError::ShapeMismatch(format!(
                "{} cell expects x[{}], h[{n}]{}; got x[{}], h[{}]{}",
                self.kind,
                self.input(),
                if self.kind == CellKind::Lstm {
                    format!(", C[{n}]")
                } else {
                    String::new()
                },
                x.len(),
                state.h.len(),
                state
                    .c
                    .as_ref()
                    .map(|c| format!(", C[{}]", c.len()))
                    .unwrap_or_default(),
            )))
        }
    }
}

/// Hidden vector and, for LSTM, the cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: (kind == CellKind::Lstm).then(|| vec![0.0; hidden]),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gate outputs in gate order.
    acts: Vec<Vec<f64>>,
    /// LSTM: `tanh(C_t)`.
    tanh_c: Vec<f64>,
    /// GRU: `r ⊙ h_prev`.
    rh: Vec<f64>,
}

fn step_cached(p: &CellParams, x: &[f64], state: &CellState) -> (CellState, StepCache) {
    let h = &state.h;
    let mut cache = StepCache {
        x: x.to_vec(),
        h_prev: h.clone(),
        c_prev: Vec::new(),
        acts: Vec::with_capacity(p.gates.len()),
        tanh_c: Vec::new(),
        rh: Vec::new(),
    };
    let next = match p.kind {
        CellKind::Srnn => {
            let h_new: Vec<f64> = p.gates[0]
                .preactivation(x, h)
                .into_iter()
                .map(f64::tanh)
                .collect();
            cache.acts.push(h_new.clone());
            CellState { h: h_new, c: None }
        }
        CellKind::Lstm => {
            let c_prev = state.c.as_deref().expect("checked LSTM state");
            let f: Vec<f64> = p.gates[0]
                .preactivation(x, h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let i: Vec<f64> = p.gates[1]
                .preactivation(x, h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let g: Vec<f64> = p.gates[2]
                .preactivation(x, h)
                .into_iter()
                .map(f64::tanh)
                .collect();
            let o: Vec<f64> = p.gates[3]
                .preactivation(x, h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let c: Vec<f64> = (0..h.len())
                .map(|k| i[k] * g[k] + f[k] * c_prev[k])
                .collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
            cache.c_prev = c_prev.to_vec();
            cache.acts.extend([f, i, g, o]);
            cache.tanh_c = tanh_c;
            CellState {
                h: h_new,
                c: Some(c),
            }
        }
        CellKind::Gru => {
            let z: Vec<f64> = p.gates[0]
                .preactivation(x, h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let r: Vec<f64> = p.gates[1]
                .preactivation(x, h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
            let cand: Vec<f64> = p.gates[2]
                .preactivation(x, &rh)
                .into_iter()
                .map(f64::tanh)
                .collect();
            let h_new = (0..h.len())
                .map(|k| z[k] * h[k] + (1.0 - z[k]) * cand[k])
                .collect();
            cache.acts.extend([z, r, cand]);
            cache.rh = rh;
            CellState { h: h_new, c: None }
        }
    };
    (next, cache)
}

/// One LSTM step:
/// `f, i, o = σ(W x + U h + b)`, `C̃ = tanh(W_c x + U_c h + b_c)`,
/// `C' = i ⊙ C̃ + f ⊙ C`, `h' = o ⊙ tanh(C')`.
pub fn lstm_step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    expect_kind(params, CellKind::Lstm)?;
    step(params, x, state)
}

/// One GRU step:
/// `z, r = σ(W x + U h + b)`, `h' = z ⊙ h + (1 - z) ⊙ tanh(W_h x + U_h (r ⊙ h) + b_h)`.
pub fn gru_step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    expect_kind(params, CellKind::Gru)?;
    step(params, x, state)
}

/// One Elman step, `h' = tanh(W x + U h + b)`.
pub fn srnn_step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    expect_kind(params, CellKind::Srnn)?;
    step(params, x, state)
}

/// One step of whichever cell `params` describes.
pub fn step(params: &CellParams, x: &[f64], state: &CellState) -> Result<CellState> {
    params.check(x, state)?;
    Ok(step_cached(params, x, state).0)
}

fn expect_kind(params: &CellParams, kind: CellKind) -> Result<()> {
    if params.kind == kind {
        Ok(())
    } else {
        Err(RnnError::ShapeMismatch(format!(
            "expected {kind} parameters, got {}",
            params.kind
        )))
    }
}

/// Run one layer over a sequence from a zero state. Returns the hidden vector
/// of every step and the caches for [`backward_layer`].
pub(crate) fn forward_layer(
    p: &CellParams,
    inputs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<StepCache>)> {
    let mut state = CellState::zeros(p.kind, p.hidden());
    let mut hs = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for x in inputs {
        p.check(x, &state)?;
        let (next, cache) = step_cached(p, x, &state);
        hs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    Ok((hs, caches))
}

/// Full backpropagation through time for one layer. `dh_out[t]` is the
/// gradient arriving at `h_t` from above. Returns parameter gradients and the
/// gradient with respect to each step's input.
pub(crate) fn backward_layer(
    p: &CellParams,
    caches: &[StepCache],
    dh_out: &[Vec<f64>],
) -> (CellParams, Vec<Vec<f64>>) {
    let n = p.hidden();
    let mut grads = CellParams::zeros(p.kind, n, p.input());
    let mut dxs = vec![Vec::new(); caches.len()];
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];

    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let dh: Vec<f64> = dh_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; p.input()];
        let mut dh_prev = vec![0.0; n];

        match p.kind {
            CellKind::Srnn => {
                let h = &cache.acts[0];
                let da: Vec<f64> = (0..n).map(|k| dh[k] * (1.0 - h[k] * h[k])).collect();
                grads.gates[0].accumulate(&da, &cache.x, &cache.h_prev);
                p.gates[0].w.gemv_t_acc(&da, &mut dx);
                p.gates[0].u.gemv_t_acc(&da, &mut dh_prev);
            }
            CellKind::Lstm => {
                let [f, i, g, o] = [
                    &cache.acts[0],
                    &cache.acts[1],
                    &cache.acts[2],
                    &cache.acts[3],
                ];
                let tc = &cache.tanh_c;
                let mut das = vec![vec![0.0; n]; 4];
                for k in 0..n {
                    let d_o = dh[k] * tc[k];
                    let dc = dc_next[k] + dh[k] * o[k] * (1.0 - tc[k] * tc[k]);
                    let d_f = dc * cache.c_prev[k];
                    let d_i = dc * g[k];
                    let d_g = dc * i[k];
                    dc_next[k] = dc * f[k];
                    das[0][k] = d_f * f[k] * (1.0 - f[k]);
                    das[1][k] = d_i * i[k] * (1.0 - i[k]);
                    das[2][k] = d_g * (1.0 - g[k] * g[k]);
                    das[3][k] = d_o * o[k] * (1.0 - o[k]);
                }
                for (gate, (pg, da)) in grads.gates.iter_mut().zip(p.gates.iter().zip(&das)) {
                    gate.accumulate(da, &cache.x, &cache.h_prev);
                    pg.w.gemv_t_acc(da, &mut dx);
                    pg.u.gemv_t_acc(da, &mut dh_prev);
                }
            }
            CellKind::Gru => {
                let [z, r, cand] = [&cache.acts[0], &cache.acts[1], &cache.acts[2]];
                let h_prev = &cache.h_prev;
                let da_h: Vec<f64> = (0..n)
                    .map(|k| dh[k] * (1.0 - z[k]) * (1.0 - cand[k] * cand[k]))
                    .collect();
                grads.gates[2].accumulate(&da_h, &cache.x, &cache.rh);
                p.gates[2].w.gemv_t_acc(&da_h, &mut dx);
                let mut d_rh = vec![0.0; n];
                p.gates[2].u.gemv_t_acc(&da_h, &mut d_rh);

                let mut da_z = vec![0.0; n];
                let mut da_r = vec![0.0; n];
                for k in 0..n {
                    dh_prev[k] += dh[k] * z[k] + d_rh[k] * r[k];
                    da_z[k] = dh[k] * (h_prev[k] - cand[k]) * z[k] * (1.0 - z[k]);
                    da_r[k] = d_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                }
                for (idx, da) in [(0, &da_z), (1, &da_r)] {
                    grads.gates[idx].accumulate(da, &cache.x, h_prev);
                    p.gates[idx].w.gemv_t_acc(da, &mut dx);
                    p.gates[idx].u.gemv_t_acc(da, &mut dh_prev);
                }
            }
        }
        dxs[t] = dx;
        dh_next = dh_prev;
    }
    (grads, dxs)
}
