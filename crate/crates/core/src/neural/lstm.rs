use rand::Rng;

use super::gradcheck::Parameterized;
use super::tensor::Tensor;
use crate::error::{dims, Result};

/// Single-layer LSTM. Gate rows are stacked in the order input, forget,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[4H, D]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("shape")
        };
        let w_ih = uniform(&[4 * hidden, input]);
        let w_hh = uniform(&[4 * hidden, hidden]);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self { w_ih, w_hh, bias }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }

    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(LstmState, StepCache)> {
        let (d, h) = (self.input_size(), self.hidden_size());
        if x.len() != d || state.h.len() != h || state.c.len() != h {
            return Err(dims(format!(
                "lstm expects input {d} and state {h}, got input {} and state ({}, {})",
                x.len(),
                state.h.len(),
                state.c.len()
            )));
        }
        let wi = self.w_ih.data();
        let wh = self.w_hh.data();
        let mut gates: Vec<f64> = (0..4 * h)
            .map(|r| {
                let a: f64 = wi[r * d..(r + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum();
                let b: f64 = wh[r * h..(r + 1) * h].iter().zip(&state.h).map(|(w, v)| w * v).sum();
                a + b + self.bias.data()[r]
            })
            .collect();
        for (r, z) in gates.iter_mut().enumerate() {
            *z = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(*z) };
        }
        let mut c = vec![0.0; h];
        let mut out = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * state.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            out[j] = o * tanh_c[j];
        }
        Ok((
            LstmState { h: out, c },
            StepCache {
                x: x.to_vec(),
                h_prev: state.h.clone(),
                c_prev: state.c.clone(),
                gates,
                tanh_c,
            },
        ))
    }

    /// Runs from a zero state and returns every hidden state.
    pub fn forward_sequence(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<StepCache>)> {
        let mut state = LstmState::zeros(self.hidden_size());
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &state)?;
            hs.push(next.h.clone());
            caches.push(cache);
            state = next;
        }
        Ok((hs, caches))
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient flowing
    /// into the hidden state of step `t` from outside the recurrence.
    /// Accumulates into `grads` (order of [`Lstm::params`]) and returns the
    /// gradient for every input.
    pub fn backward_sequence(&self, caches: &[StepCache], dh: &[Vec<f64>], grads: &mut [Tensor]) -> Vec<Vec<f64>> {
        assert_eq!(caches.len(), dh.len(), "one hidden gradient per step");
        assert_eq!(grads.len(), 3, "gradients for w_ih, w_hh, bias");
        let (d, h) = (self.input_size(), self.hidden_size());
        let wi = self.w_ih.data();
        let wh = self.w_hh.data();
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![Vec::new(); caches.len()];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let g = &cache.gates;
            for j in 0..h {
                let dh_j = dh[t][j] + dh_next[j];
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = cache.tanh_c[j];
                let dc = dc_next[j] + dh_j * o * (1.0 - tc * tc);
                dz[j] = dc * gg * i * (1.0 - i);
                dz[h + j] = dc * cache.c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                dz[3 * h + j] = dh_j * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let mut dx = vec![0.0; d];
            let mut dhp = vec![0.0; h];
            {
                let (gwi, rest) = grads.split_at_mut(1);
                let (gwh, gb) = rest.split_at_mut(1);
                let gwi = gwi[0].data_mut();
                let gwh = gwh[0].data_mut();
                let gb = gb[0].data_mut();
                for r in 0..4 * h {
                    let z = dz[r];
                    gb[r] += z;
                    if z == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        gwi[r * d + k] += z * cache.x[k];
                        dx[k] += z * wi[r * d + k];
                    }
                    for k in 0..h {
                        gwh[r * h + k] += z * cache.h_prev[k];
                        dhp[k] += z * wh[r * h + k];
                    }
                }
            }
            dh_next = dhp;
            dxs[t] = dx;
        }
        dxs
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<&Tensor> {
        Lstm::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Lstm::params_mut(self)
    }
}
