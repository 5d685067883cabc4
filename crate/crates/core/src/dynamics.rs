//! Discrete-time spike-response neuron model.
//!
//! Each layer keeps one membrane trace `P` and one synaptic trace `Q` per
//! presynaptic input (not per synapse), a refractory trace `R` and the
//! membrane potential `U` per output neuron, and the binary spikes `S`.
//! The continuous membrane potential of a neuron is recovered from the
//! traces as `U = W·P - rho·R + b`.
//!
//! One call to [`LayerState::step_traces`] advances the traces by `dt`:
//!
//! ```text
//! Q <- beta  Q + (1 - beta)  S_in
//! P <- alpha P + (1 - alpha) Q_old
//! R <- gamma R + (1 - gamma) S_old
//! ```
//!
//! `P` reads the synaptic trace from before this step's update, and `R` is
//! driven by the layer's own previous output.

use ndarray::{Array, Array2, ArrayBase, ArrayView1, ArrayView2, Data, Dimension, NdFloat, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};

pub(crate) fn cast<A: NdFloat>(x: f64) -> A {
    A::from(x).expect("f64 is representable in every NdFloat")
}

/// Per-step decay factors derived from the time constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    /// Membrane decay per step, `exp(-dt / tau_mem)`.
    pub alpha: f64,
    /// Synaptic decay per step, `exp(-dt / tau_syn)`.
    pub beta: f64,
    /// Refractory decay per step, `exp(-dt / tau_ref)`.
    pub gamma: f64,
    pub dt: f64,
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_ref: f64,
}

impl DecayConstants {
    /// All arguments are in milliseconds and must be strictly positive.
    pub fn new(dt: f64, tau_mem: f64, tau_syn: f64, tau_ref: f64) -> Result<Self> {
        for (name, v) in [
            ("dt", dt),
            ("tau_mem", tau_mem),
            ("tau_syn", tau_syn),
            ("tau_ref", tau_ref),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(DecayConstants {
            alpha: (-dt / tau_mem).exp(),
            beta: (-dt / tau_syn).exp(),
            gamma: (-dt / tau_ref).exp(),
            dt,
            tau_mem,
            tau_syn,
            tau_ref,
        })
    }

    /// Builds constants directly from decay factors; time constants are
    /// back-computed for `dt = 1`.
    pub fn from_factors(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(DecayConstants {
            alpha,
            beta,
            gamma,
            dt: 1.0,
            tau_mem: -1.0 / alpha.ln(),
            tau_syn: -1.0 / beta.ln(),
            tau_ref: -1.0 / gamma.ln(),
        })
    }
}

/// Boxcar pseudo-derivative of the spike threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub half_width: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { half_width: 0.5 }
    }
}

impl SurrogateSpec {
    pub fn new(half_width: f64) -> Result<Self> {
        if half_width > 0.0 {
            Ok(SurrogateSpec { half_width })
        } else {
            Err(Error::Config(format!(
                "surrogate half width must be positive, got {half_width}"
            )))
        }
    }
}

/// Dynamical variables of one layer for a minibatch.
///
/// `p` and `q` are `[batch, n_in]`; `r`, `u` and `s` are `[batch, n_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<A> {
    pub p: Array2<A>,
    pub q: Array2<A>,
    pub r: Array2<A>,
    pub u: Array2<A>,
    pub s: Array2<A>,
}

impl<A: NdFloat> LayerState<A> {
    pub fn zeros(batch: usize, n_in: usize, n_out: usize) -> Self {
        LayerState {
            p: Array2::zeros((batch, n_in)),
            q: Array2::zeros((batch, n_in)),
            r: Array2::zeros((batch, n_out)),
            u: Array2::zeros((batch, n_out)),
            s: Array2::zeros((batch, n_out)),
        }
    }

    pub fn batch(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.r.ncols()
    }

    pub fn reset(&mut self) {
        for a in [&mut self.p, &mut self.q, &mut self.r, &mut self.u, &mut self.s] {
            a.fill(A::zero());
        }
    }

    /// Advances `P`, `Q` and `R` by one step in place.
    pub fn step_traces(&mut self, input: ArrayView2<A>, k: &DecayConstants) -> Result<()> {
        ensure_shape("step_traces input", self.q.shape(), input.shape())?;
        let (alpha, beta, gamma) = (cast::<A>(k.alpha), cast::<A>(k.beta), cast::<A>(k.gamma));
        let one = A::one();
        Zip::from(&mut self.p)
            .and(&mut self.q)
            .and(&input)
            .for_each(|p, q, &x| {
                let q_old = *q;
                *q = beta * q_old + (one - beta) * x;
                *p = alpha * *p + (one - alpha) * q_old;
            });
        Zip::from(&mut self.r)
            .and(&self.s)
            .for_each(|r, &s| *r = gamma * *r + (one - gamma) * s);
        Ok(())
    }
}

/// Pure form of [`LayerState::step_traces`].
pub fn step_traces<A: NdFloat>(
    state: &LayerState<A>,
    input: ArrayView2<A>,
    k: &DecayConstants,
) -> Result<LayerState<A>> {
    let mut next = state.clone();
    next.step_traces(input, k)?;
    Ok(next)
}

/// `U = P·Wᵀ - rho·R + b` for a dense weight matrix `[n_out, n_in]`.
pub fn membrane<A: NdFloat>(
    state: &LayerState<A>,
    weight: ArrayView2<A>,
    bias: ArrayView1<A>,
    rho: A,
) -> Result<Array2<A>> {
    ensure_shape("membrane weight", &[state.n_out(), state.n_in()], weight.shape())?;
    ensure_shape("membrane bias", &[state.n_out()], bias.shape())?;
    let mut u = state.p.dot(&weight.t());
    u.zip_mut_with(&state.r, |u, &r| *u -= rho * r);
    u += &bias;
    Ok(u)
}

/// Heaviside step with `Θ(0) = 1`.
pub fn threshold<A, S, D>(u: &ArrayBase<S, D>) -> Array<A, D>
where
    A: NdFloat,
    S: Data<Elem = A>,
    D: Dimension,
{
    u.mapv(|x| if x < A::zero() { A::zero() } else { A::one() })
}

/// Boxcar: 1 on the closed interval `[-half_width, half_width]`, 0 elsewhere.
pub fn surrogate_derivative<A, S, D>(u: &ArrayBase<S, D>, spec: &SurrogateSpec) -> Array<A, D>
where
    A: NdFloat,
    S: Data<Elem = A>,
    D: Dimension,
{
    let w = cast::<A>(spec.half_width);
    u.mapv(|x| if x.abs() <= w { A::one() } else { A::zero() })
}

/// Piecewise-linear activation `clamp(U + half_width, 0, 2·half_width)`.
/// Its derivative is the boxcar of [`surrogate_derivative`].
pub fn piecewise_linear<A: NdFloat>(x: A, spec: &SurrogateSpec) -> A {
    let w = cast::<A>(spec.half_width);
    (x + w).max(A::zero()).min(w + w)
}
