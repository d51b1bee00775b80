//! LSTM cell, fully-connected layer and softmax with exact reverse-mode
//! gradients, plus a central-difference gradient checker.
//!
//! Gate layout in every `4H`-row weight block is fixed: input, forget,
//! cell candidate, output. Checkpoints depend on it.
//!
//! ```text
//! z = W_ih x + b_ih + W_hh h + b_hh
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::params::{NamedTensors, TensorView};

/// Number of gate blocks in the stacked weight matrices.
pub const GATES: usize = 4;

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one single-layer LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub b_ih: Vector,
    pub b_hh: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.h.len()
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    /// Gate pre-activations, `4H`.
    pub pre: Vector,
    /// Gate activations (σ, σ, tanh, σ), `4H`.
    pub gates: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

/// Result of backpropagating through a run of LSTM steps.
#[derive(Clone, Debug)]
pub struct LstmBackward {
    pub grads: LstmParams,
    /// `dL/dx_t` for every step.
    pub inputs: Vec<Vector>,
    /// Gradient with respect to the initial `(h, c)`.
    pub state0: LstmState,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmParams {
            w_ih: Matrix::zeros(GATES * hidden, input_dim),
            w_hh: Matrix::zeros(GATES * hidden, hidden),
            b_ih: vec![0.0; GATES * hidden],
            b_hh: vec![0.0; GATES * hidden],
        }
    }

    /// Every entry drawn from `U(-1/√H, 1/√H)`.
    pub fn random<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::arg(format!(
                "LSTM dimensions must be positive (input {input_dim}, hidden {hidden})"
            )));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = LstmParams::zeros(input_dim, hidden);
        for (_, t) in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    fn check_input(&self, state: &LstmState, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "lstm_step",
                format!("input dim {}", self.input_dim()),
                format!("x of {}", x.len()),
            ));
        }
        if state.h.len() != self.hidden() || state.c.len() != self.hidden() {
            return Err(Error::shape(
                "lstm_step",
                format!("hidden {}", self.hidden()),
                format!("state h {} / c {}", state.h.len(), state.c.len()),
            ));
        }
        Ok(())
    }

    /// One recurrence step.
    pub fn step(&self, state: &LstmState, x: &[f64]) -> Result<(LstmState, StepCache)> {
        self.check_input(state, x)?;
        let hd = self.hidden();
        let mut pre: Vector = self.b_ih.iter().zip(&self.b_hh).map(|(a, b)| a + b).collect();
        self.w_ih.matvec_acc(x, &mut pre);
        self.w_hh.matvec_acc(&state.h, &mut pre);

        let mut gates = vec![0.0; GATES * hd];
        for (k, (g, &z)) in gates.iter_mut().zip(&pre).enumerate() {
            *g = if k / hd == 2 { z.tanh() } else { logistic(z) };
        }
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);

        let c: Vector = (0..hd).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
        let tanh_c: Vector = c.iter().map(|v| v.tanh()).collect();
        let h: Vector = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

        let next = LstmState {
            h: h.clone(),
            c: c.clone(),
        };
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            pre,
            gates,
            c,
            tanh_c,
            h,
        };
        Ok((next, cache))
    }

    /// Runs the cell over `xs` from `state0`, keeping every cache.
    pub fn run(&self, state0: &LstmState, xs: &[Vector]) -> Result<(LstmState, Vec<StepCache>)> {
        let mut state = state0.clone();
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(&state, x)?;
            state = next;
            caches.push(cache);
        }
        Ok((state, caches))
    }

    /// Reverse of one step. `dh`/`dc` are the total gradients reaching the
    /// step's output state; parameter gradients accumulate into `grads`.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmParams,
    ) -> (Vector, Vector, Vector) {
        let hd = self.hidden();
        let g = &cache.gates;
        let mut dpre = vec![0.0; GATES * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, cand, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dpre[j] = dct * cand * i * (1.0 - i);
            dpre[hd + j] = dct * cache.c_prev[j] * f * (1.0 - f);
            dpre[2 * hd + j] = dct * i * (1.0 - cand * cand);
            dpre[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dct * f;
        }
        grads.w_ih.add_outer(&dpre, &cache.x);
        grads.w_hh.add_outer(&dpre, &cache.h_prev);
        for (k, d) in dpre.iter().enumerate() {
            grads.b_ih[k] += d;
            grads.b_hh[k] += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.w_ih.matvec_t_acc(&dpre, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        self.w_hh.matvec_t_acc(&dpre, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

impl NamedTensors for LstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView {
                name: "w_ih".into(),
                shape: vec![self.w_ih.rows(), self.w_ih.cols()],
                data: self.w_ih.as_slice(),
            },
            TensorView {
                name: "w_hh".into(),
                shape: vec![self.w_hh.rows(), self.w_hh.cols()],
                data: self.w_hh.as_slice(),
            },
            TensorView {
                name: "b_ih".into(),
                shape: vec![self.b_ih.len()],
                data: &self.b_ih,
            },
            TensorView {
                name: "b_hh".into(),
                shape: vec![self.b_hh.len()],
                data: &self.b_hh,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_ih".into(), self.w_ih.as_mut_slice()),
            ("w_hh".into(), self.w_hh.as_mut_slice()),
            ("b_ih".into(), self.b_ih.as_mut_slice()),
            ("b_hh".into(), self.b_hh.as_mut_slice()),
        ]
    }

    fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_dim(), self.hidden())
    }
}

/// Seeded LSTM initialization from a ChaCha8 stream.
pub fn lstm_init(seed: u64, input_dim: usize, hidden: usize) -> Result<LstmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LstmParams::random(&mut rng, input_dim, hidden)
}

pub fn lstm_step(params: &LstmParams, state: &LstmState, x: &[f64]) -> Result<(LstmState, StepCache)> {
    params.step(state, x)
}

/// Backpropagation through time over `caches`.
///
/// `grad_final` is the gradient reaching the last `(h, c)`; `per_step`
/// optionally adds an external `dL/dh_t` at each step (e.g. from an output
/// head).
pub fn lstm_backward(
    params: &LstmParams,
    caches: &[StepCache],
    grad_final: &LstmState,
    per_step: Option<&[Vector]>,
) -> Result<LstmBackward> {
    let hd = params.hidden();
    if caches.is_empty() {
        return Err(Error::arg("lstm_backward needs at least one cached step"));
    }
    if grad_final.h.len() != hd || grad_final.c.len() != hd {
        return Err(Error::shape(
            "lstm_backward",
            format!("hidden {hd}"),
            format!("grad h {} / c {}", grad_final.h.len(), grad_final.c.len()),
        ));
    }
    if let Some(ps) = per_step {
        if ps.len() != caches.len() || ps.iter().any(|g| g.len() != hd) {
            return Err(Error::shape(
                "lstm_backward",
                format!("{} steps of hidden {hd}", caches.len()),
                format!("{} per-step gradients", ps.len()),
            ));
        }
    }
    if let Some(c) = caches
        .iter()
        .find(|c| c.h.len() != hd || c.x.len() != params.input_dim())
    {
        return Err(Error::shape(
            "lstm_backward",
            format!("params {}->{}", params.input_dim(), hd),
            format!("cache {}->{}", c.x.len(), c.h.len()),
        ));
    }

    let mut grads = params.zeros_like();
    let mut inputs = vec![Vec::new(); caches.len()];
    let mut dh = grad_final.h.clone();
    let mut dc = grad_final.c.clone();
    for t in (0..caches.len()).rev() {
        if let Some(ps) = per_step {
            for (a, b) in dh.iter_mut().zip(&ps[t]) {
                *a += b;
            }
        }
        let (dx, dh_prev, dc_prev) = params.step_backward(&caches[t], &dh, &dc, &mut grads);
        inputs[t] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok(LstmBackward {
        grads,
        inputs,
        state0: LstmState { h: dh, c: dc },
    })
}

/// Fully-connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vector,
}

impl Linear {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Linear {
            w: Matrix::zeros(output_dim, input_dim),
            b: vec![0.0; output_dim],
        }
    }

    /// Entries from `U(-1/√in, 1/√in)`.
    pub fn random<R: Rng>(rng: &mut R, input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::arg("linear layer dimensions must be positive"));
        }
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut l = Linear::zeros(input_dim, output_dim);
        for (_, t) in l.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        }
        Ok(l)
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        crate::linalg::affine(&self.w, x, &self.b)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vector {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.w.matvec_t_acc(dy, &mut dx);
        dx
    }
}

impl NamedTensors for Linear {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView {
                name: "w".into(),
                shape: vec![self.w.rows(), self.w.cols()],
                data: self.w.as_slice(),
            },
            TensorView {
                name: "b".into(),
                shape: vec![self.b.len()],
                data: &self.b,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("w".into(), self.w.as_mut_slice()), ("b".into(), self.b.as_mut_slice())]
    }

    fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Result<Vector> {
    if z.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vector = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Outcome of a finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

/// Finite-difference formula used by [`grad_check_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(p+ε) − L(p−ε)) / 2ε`, error O(ε²).
    #[default]
    Central,
    /// `(−L(p+2ε) + 8L(p+ε) − 8L(p−ε) + L(p−2ε)) / 12ε`, error O(ε⁴).
    /// Tolerates a larger ε, which keeps round-off small on tiny entries.
    Central4,
}

/// Compares `analytic` against central differences of `loss` at every
/// entry of `params`.
///
/// The per-entry error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], eps: f64, loss: F) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_with(params, analytic, eps, Stencil::Central, loss)
}

pub fn grad_check_with<F>(
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    stencil: Stencil,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::arg(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} parameters", params.len()),
            format!("{} gradient entries", analytic.len()),
        ));
    }
    let (offsets, weights, denom): (&[f64], &[f64], f64) = match stencil {
        Stencil::Central => (&[1.0, -1.0], &[1.0, -1.0], 2.0),
        Stencil::Central4 => (&[2.0, 1.0, -1.0, -2.0], &[-1.0, 8.0, -8.0, 1.0], 12.0),
    };
    let mut probe = params.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..params.len() {
        let orig = probe[i];
        let mut acc = 0.0;
        for (&o, &w) in offsets.iter().zip(weights) {
            probe[i] = orig + o * eps;
            let l = loss(&probe);
            if !l.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became {l} when perturbing parameter #{i} by {}",
                    o * eps
                )));
            }
            acc += w * l;
        }
        probe[i] = orig;
        let numeric = acc / (denom * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::NamedTensors;

    fn loss_from_final(params: &LstmParams, xs: &[Vector], w: &LstmState) -> f64 {
        let (s, _) = params.run(&LstmState::zeros(params.hidden()), xs).unwrap();
        crate::linalg::dot(&s.h, &w.h) + crate::linalg::dot(&s.c, &w.c)
    }

    #[test]
    fn init_is_deterministic_bounded_and_seed_sensitive() {
        let a = lstm_init(7, 6, 8).unwrap();
        let b = lstm_init(7, 6, 8).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.flatten().iter().all(|v| v.abs() <= bound));
        let c = lstm_init(8, 6, 8).unwrap();
        assert_ne!(a.flatten(), c.flatten());
        assert!(lstm_init(1, 0, 4).is_err());
        assert!(lstm_init(1, 3, 0).is_err());
    }

    #[test]
    fn zero_params_zero_state_stays_zero() {
        let p = LstmParams::zeros(3, 4);
        let (s, _) = p.step(&LstmState::zeros(4), &[1.0, -2.0, 5.0]).unwrap();
        assert!(s.h.iter().chain(&s.c).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_halve_cell() {
        let p = LstmParams::zeros(2, 3);
        let state = LstmState {
            h: vec![0.0; 3],
            c: vec![1.0, -2.0, 0.5],
        };
        let (s, _) = p.step(&state, &[0.0, 0.0]).unwrap();
        for j in 0..3 {
            let c = 0.5 * state.c[j];
            assert!((s.c[j] - c).abs() < 1e-15);
            assert!((s.h[j] - 0.5 * c.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmParams::zeros(2, 3);
        for j in 3..6 {
            p.b_ih[j] = 20.0;
        }
        let state = LstmState {
            h: vec![0.1, 0.2, 0.3],
            c: vec![1.0, -0.7, 0.25],
        };
        let (s, _) = p.step(&state, &[0.4, -0.4]).unwrap();
        for j in 0..3 {
            assert!((s.c[j] - state.c[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn step_rejects_wrong_input() {
        let p = LstmParams::zeros(3, 2);
        assert!(matches!(p.step(&LstmState::zeros(2), &[1.0]), Err(Error::Shape { .. })));
        assert!(p.step(&LstmState::zeros(3), &[1.0; 3]).is_err());
    }

    #[test]
    fn cache_replays_bit_for_bit() {
        let p = lstm_init(3, 4, 5).unwrap();
        let xs: Vec<Vector> = (0..4)
            .map(|t| vec![t as f64 * 0.3, -0.2, 1.1, 0.05 * t as f64])
            .collect();
        let (_, caches) = p.run(&LstmState::zeros(5), &xs).unwrap();
        for c in &caches {
            let prev = LstmState {
                h: c.h_prev.clone(),
                c: c.c_prev.clone(),
            };
            let (s, _) = p.step(&prev, &c.x).unwrap();
            assert_eq!(s.h, c.h);
            assert_eq!(s.c, c.c);
            assert!(s.h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = lstm_init(5, 2, 3).unwrap();
        let xs = vec![vec![0.5, -1.0], vec![2.0, 0.1]];
        let (_, caches) = p.run(&LstmState::zeros(3), &xs).unwrap();
        let back = lstm_backward(&p, &caches, &LstmState::zeros(3), None).unwrap();
        assert!(back.grads.flatten().iter().all(|&v| v == 0.0));
        assert!(back.inputs.iter().flatten().all(|&v| v == 0.0));
        assert!(back.state0.h.iter().chain(&back.state0.c).all(|&v| v == 0.0));
    }

    fn check_bptt(seed: u64, d: usize, h: usize, steps: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = LstmParams::random(&mut rng, d, h).unwrap();
        let xs: Vec<Vector> = (0..steps)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w = LstmState {
            h: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (_, caches) = p.run(&LstmState::zeros(h), &xs).unwrap();
        let back = lstm_backward(&p, &caches, &w, None).unwrap();
        let mut probe = p.clone();
        grad_check(&p.flatten(), &back.grads.flatten(), 1e-5, |flat| {
            probe.assign_flat(flat);
            loss_from_final(&probe, &xs, &w)
        })
        .unwrap()
        .max_rel_error
    }

    #[test]
    fn bptt_single_step_matches_finite_differences() {
        let err = check_bptt(11, 2, 2, 1);
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn bptt_five_steps_matches_finite_differences() {
        let err = check_bptt(12, 6, 8, 5);
        assert!(err < 1e-5, "max rel error {err}");
    }

    #[test]
    fn bptt_input_and_initial_state_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let p = LstmParams::random(&mut rng, 3, 4).unwrap();
        let xs: Vec<Vector> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let s0 = LstmState {
            h: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
            c: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let per_step: Vec<Vector> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let loss = |xs: &[Vector], s0: &LstmState| {
            let (_, caches) = p.run(s0, xs).unwrap();
            caches
                .iter()
                .zip(&per_step)
                .map(|(c, w)| crate::linalg::dot(&c.h, w))
                .sum::<f64>()
        };
        let (_, caches) = p.run(&s0, &xs).unwrap();
        let back = lstm_backward(&p, &caches, &LstmState::zeros(4), Some(&per_step)).unwrap();

        let flat_x: Vec<f64> = xs.concat();
        let analytic_x: Vec<f64> = back.inputs.concat();
        let err = grad_check(&flat_x, &analytic_x, 1e-5, |f| {
            let xs: Vec<Vector> = f.chunks(3).map(|c| c.to_vec()).collect();
            loss(&xs, &s0)
        })
        .unwrap();
        assert!(err.max_rel_error < 1e-6, "{err:?}");

        let flat_s = crate::linalg::concat(&s0.h, &s0.c);
        let analytic_s = crate::linalg::concat(&back.state0.h, &back.state0.c);
        let err = grad_check(&flat_s, &analytic_s, 1e-5, |f| {
            let s = LstmState {
                h: f[..4].to_vec(),
                c: f[4..].to_vec(),
            };
            loss(&xs, &s)
        })
        .unwrap();
        assert!(err.max_rel_error < 1e-6, "{err:?}");
    }

    #[test]
    fn bptt_random_configurations() {
        let mut seed = 100;
        for &h in &[2, 8] {
            for &d in &[2, 6] {
                for &steps in &[1, 4, 10] {
                    seed += 1;
                    let err = check_bptt(seed, d, h, steps);
                    assert!(err < 1e-5, "H={h} D={d} T={steps}: {err}");
                }
            }
        }
    }

    #[test]
    fn backward_shape_errors() {
        let p = lstm_init(1, 2, 3).unwrap();
        assert!(lstm_backward(&p, &[], &LstmState::zeros(3), None).is_err());
        let (_, caches) = p.run(&LstmState::zeros(3), &[vec![0.0, 1.0]]).unwrap();
        assert!(lstm_backward(&p, &caches, &LstmState::zeros(2), None).is_err());
        let other = lstm_init(1, 2, 4).unwrap();
        assert!(lstm_backward(&other, &caches, &LstmState::zeros(4), None).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Linear::random(&mut rng, 5, 3).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = [0.3, -1.2, 0.7];
        let mut g = l.zeros_like();
        let dx = l.backward(&x, &w, &mut g);
        let mut probe = l.clone();
        let err = grad_check(&l.flatten(), &g.flatten(), 1e-5, |f| {
            probe.assign_flat(f);
            crate::linalg::dot(&probe.forward(&x).unwrap(), &w)
        })
        .unwrap();
        assert!(err.max_rel_error < 1e-8);
        let err = grad_check(&x, &dx, 1e-5, |f| crate::linalg::dot(&l.forward(f).unwrap(), &w)).unwrap();
        assert!(err.max_rel_error < 1e-8);
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let big = softmax(&[1000.0, 0.0, 0.0]).unwrap();
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-12 && big[2] < 1e-12);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let z: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.09003).abs() < 1e-5);
        assert!((p[1] - 0.24473).abs() < 1e-5);
        assert!((p[2] - 0.66524).abs() < 1e-5);
        let extreme = softmax(&[700.0, -700.0, 0.0]).unwrap();
        assert!((extreme.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn grad_check_quadratic_and_detector() {
        let p = vec![0.5, -1.5, 2.0, 3.25];
        let quad = |q: &[f64]| 0.5 * q.iter().map(|v| v * v).sum::<f64>();
        let err = grad_check(&p, &p, 1e-4, quad).unwrap();
        assert!(err.max_rel_error < 1e-9, "{err:?}");
        let mut bad = p.clone();
        bad[2] *= 2.0;
        let err = grad_check(&p, &bad, 1e-4, quad).unwrap();
        assert!(err.max_rel_error > 0.3);
        assert_eq!(err.worst_index, 2);
    }

    #[test]
    fn fourth_order_stencil_is_exact_on_quartics() {
        let p: Vec<f64> = vec![0.5, -1.5, 2.0];
        let quartic = |q: &[f64]| q.iter().map(|v| v.powi(4) / 4.0 + v.powi(3)).sum::<f64>();
        let grad: Vec<f64> = p.iter().map(|v| v.powi(3) + 3.0 * v * v).collect();
        let err = grad_check_with(&p, &grad, 1e-2, Stencil::Central4, quartic).unwrap();
        assert!(err.max_rel_error < 1e-12, "{err:?}");
        let two_point = grad_check(&p, &grad, 1e-2, quartic).unwrap();
        assert!(two_point.max_rel_error > 1e-6);
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let err = grad_check(
            &[0.0, 1.0],
            &[0.0, 0.0],
            1e-3,
            |q| if q[1] > 1.0 { f64::NAN } else { 0.0 },
        )
        .unwrap_err();
        assert!(err.to_string().contains("#1"), "{err}");
        assert!(grad_check(&[0.0], &[0.0], 0.1, |_| 0.0).is_err());
    }
}
