use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::conv::{im2col, max_pool, unpool};
use super::topology::LayerShape;
use crate::dynamics::{cast, DecayConstants, LayerState};
use crate::error::{ensure_shape, Error, Result};

/// Multiplicative noise applied to the readout matrix to build the
/// sign-concordant feedback matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNoiseSpec {
    pub mean: f64,
    pub std: f64,
    pub clip_at_zero: bool,
}

impl Default for FeedbackNoiseSpec {
    fn default() -> Self {
        FeedbackNoiseSpec {
            mean: 1.0,
            std: 0.5,
            clip_at_zero: true,
        }
    }
}

/// Trainable and fixed parameters of one layer.
///
/// The readout `G` and feedback `H` matrices are `[n_readout, n_out]` and
/// cannot be modified once the layer exists.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<A> {
    pub weight: Array2<A>,
    pub bias: Array1<A>,
    readout: Array2<A>,
    feedback: Array2<A>,
    pub rho: A,
    pub decay: DecayConstants,
    pub dropout: f64,
}

impl<A: NdFloat> LayerParams<A> {
    pub(crate) fn from_parts(
        weight: Array2<A>,
        bias: Array1<A>,
        readout: Array2<A>,
        feedback: Array2<A>,
        rho: A,
        decay: DecayConstants,
        dropout: f64,
    ) -> Self {
        LayerParams {
            weight,
            bias,
            readout,
            feedback,
            rho,
            decay,
            dropout,
        }
    }

    pub fn readout(&self) -> &Array2<A> {
        &self.readout
    }

    pub fn feedback(&self) -> &Array2<A> {
        &self.feedback
    }

    /// Same parameters in another float type.
    pub fn cast<B: NdFloat>(&self) -> LayerParams<B> {
        let c = |a: &Array2<A>| a.mapv(|x| cast::<B>(x.to_f64().unwrap()));
        LayerParams {
            weight: c(&self.weight),
            bias: self.bias.mapv(|x| cast::<B>(x.to_f64().unwrap())),
            readout: c(&self.readout),
            feedback: c(&self.feedback),
            rho: cast::<B>(self.rho.to_f64().unwrap()),
            decay: self.decay,
            dropout: self.dropout,
        }
    }
}

/// Intermediate values of one forward step that the weight update reuses.
#[derive(Debug, Clone)]
pub struct ForwardCache<A> {
    /// im2col patches of `P` (conv layers only).
    pub(crate) patches: Option<Array2<A>>,
    /// Winning conv position per pooled unit (conv layers only).
    pub(crate) route: Option<Array2<u32>>,
}

impl<A> Default for ForwardCache<A> {
    fn default() -> Self {
        ForwardCache {
            patches: None,
            route: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<A> {
    pub shape: LayerShape,
    pub params: LayerParams<A>,
}

impl<A: NdFloat> Layer<A> {
    /// `W ~ U(±1/√fan_in)`, `b = 0`, `G ~ U(±1/√n_out)`, `H = G ⊙ ω`.
    pub fn init<R: Rng>(
        shape: LayerShape,
        n_readout: usize,
        dropout: f64,
        decay: DecayConstants,
        rho: f64,
        noise: &FeedbackNoiseSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if noise.std < 0.0 || !noise.std.is_finite() {
            return Err(Error::Config(format!(
                "feedback noise std must be >= 0, got {}",
                noise.std
            )));
        }
        let (rows, cols) = shape.weight_dims();
        let wb = 1.0 / (shape.fan_in() as f64).sqrt();
        let wdist = Uniform::new_inclusive(-wb, wb);
        let weight = Array2::from_shape_simple_fn((rows, cols), || cast::<A>(wdist.sample(rng)));
        let gb = 1.0 / (shape.n_out() as f64).sqrt();
        let gdist = Uniform::new_inclusive(-gb, gb);
        let readout = Array2::from_shape_simple_fn((n_readout, shape.n_out()), || gdist.sample(rng));
        let omega = Normal::new(noise.mean, noise.std).map_err(|e| Error::Config(e.to_string()))?;
        let feedback = readout.mapv(|g| {
            let mut w = omega.sample(rng);
            if noise.clip_at_zero && w < 0.0 {
                w = 0.0;
            }
            cast::<A>(g * w)
        });
        Ok(Layer {
            shape,
            params: LayerParams {
                weight,
                bias: Array1::zeros(shape.bias_len()),
                readout: readout.mapv(cast::<A>),
                feedback,
                rho: cast::<A>(rho),
                decay,
                dropout,
            },
        })
    }

    pub fn new_state(&self, batch: usize) -> LayerState<A> {
        LayerState::zeros(batch, self.shape.n_in(), self.shape.n_out())
    }

    /// Steps the traces with `input`, computes `U` and the output spikes
    /// (stored in `state.u` and `state.s`).
    ///
    /// Conv layers compute `U` on the max-pooled convolution of `P`:
    /// `U = pool(W * P) - rho·R + b`.
    pub fn forward(&self, state: &mut LayerState<A>, input: ArrayView2<A>) -> Result<ForwardCache<A>> {
        ensure_shape("layer state", &[input.nrows(), self.shape.n_in()], state.p.shape())?;
        state.step_traces(input, &self.params.decay)?;
        let (u, cache) = self.membrane(state)?;
        state.u = u;
        Zip::from(&mut state.s)
            .and(&state.u)
            .for_each(|s, &u| *s = if u < A::zero() { A::zero() } else { A::one() });
        Ok(cache)
    }

    /// Membrane potential for the current traces without touching the state.
    pub fn membrane(&self, state: &LayerState<A>) -> Result<(Array2<A>, ForwardCache<A>)> {
        let p = &self.params;
        let batch = state.batch();
        let (mut u, cache) = match self.shape {
            LayerShape::Dense { .. } => (state.p.dot(&p.weight.t()), ForwardCache::default()),
            LayerShape::Conv(g) => {
                let patches = im2col(&g, state.p.view());
                let conv = p.weight.dot(&patches);
                let (pooled, route) = max_pool(&g, conv.view(), batch);
                (
                    pooled,
                    ForwardCache {
                        patches: Some(patches),
                        route: Some(route),
                    },
                )
            }
        };
        let rho = p.rho;
        u.zip_mut_with(&state.r, |u, &r| *u -= rho * r);
        match self.shape {
            LayerShape::Dense { .. } => u += &p.bias,
            LayerShape::Conv(g) => {
                let plane = g.h_out * g.w_out;
                for mut row in u.rows_mut() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x += p.bias[j / plane];
                    }
                }
            }
        }
        Ok((u, cache))
    }

    /// `Y = (mask ⊙ S)·Gᵀ / (1 - p)`; without a mask no dropout is applied.
    pub fn local_readout(&self, spikes: ArrayView2<A>, mask: Option<&Array2<A>>) -> Result<Array2<A>> {
        ensure_shape("readout input", &[spikes.nrows(), self.shape.n_out()], spikes.shape())?;
        match mask {
            None => Ok(spikes.dot(&self.params.readout.t())),
            Some(m) => {
                ensure_shape("dropout mask", spikes.shape(), m.shape())?;
                let scale = cast::<A>(1.0 / (1.0 - self.params.dropout));
                let kept = &spikes * m;
                Ok(kept.dot(&self.params.readout.t()) * scale)
            }
        }
    }

    /// Turns a postsynaptic modulator `[batch, n_out]` into weight and bias
    /// gradients summed over the batch: the outer product with `P` for dense
    /// layers, and for conv layers the correlation of the routed modulator
    /// with the `P` patches.
    pub fn weight_gradient(
        &self,
        modulator: ArrayView2<A>,
        state: &LayerState<A>,
        cache: &ForwardCache<A>,
    ) -> Result<(Array2<A>, Array1<A>)> {
        ensure_shape("modulator", &[state.batch(), self.shape.n_out()], modulator.shape())?;
        match self.shape {
            LayerShape::Dense { .. } => Ok((modulator.t().dot(&state.p), modulator.sum_axis(Axis(0)))),
            LayerShape::Conv(g) => {
                let (patches, route) = match (&cache.patches, &cache.route) {
                    (Some(p), Some(r)) => (p, r),
                    _ => return Err(Error::Config("conv gradient needs the forward cache".into())),
                };
                let full = unpool(&g, modulator, route);
                let dw = full.dot(&patches.t());
                let db = full.sum_axis(Axis(1));
                Ok((dw, db))
            }
        }
    }
}

/// i.i.d. Bernoulli(1 - p) keep-mask.
pub fn make_dropout_mask<A: NdFloat, R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<A> {
    if p <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 - p;
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < keep { A::one() } else { A::zero() })
}
