//! Local losses, the per-timestep three-factor weight update, and AdaMax.
//!
//! For layer `l` at one timestep the update only reads that layer's readout
//! residual, its membrane potential `U` and its presynaptic trace `P`:
//!
//! ```text
//! error_i = Σ_k F_ki ∂L/∂Y_k          (F = G, or the sign-concordant H)
//! ΔW_ij  ∝ (error_i σ'(U_i) + ∂L_reg/∂U_i) P_j
//! ```
//!
//! Nothing is stored across timesteps, so the memory needed for learning
//! does not grow with sequence length.

mod loss;
mod optim;

pub use loss::{local_error, LossSpec, RegularizerSpec};
pub use optim::{AdaMaxConfig, AdaMaxState, LrSchedule};

use ndarray::{Array1, Array2, ArrayView2, Ix1, Ix2, NdFloat};
use serde::{Deserialize, Serialize};

use crate::dynamics::{cast, surrogate_derivative, LayerState, SurrogateSpec};
use crate::error::{ensure_shape, Result};
use crate::network::{ForwardCache, Layer, Network};

/// Matrix used to project readout residuals back onto a layer's neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// The readout matrix `G` itself.
    Transpose,
    /// The fixed noisy copy `H` that shares the signs of `G`.
    #[default]
    SignConcordant,
}

/// Dense form of the update: `dW = (error ⊙ σ'(U))ᵀ P`, `db = Σ_batch error ⊙ σ'(U)`.
pub fn decolle_update<A: NdFloat>(
    error: ArrayView2<A>,
    u: ArrayView2<A>,
    p: ArrayView2<A>,
    spec: &SurrogateSpec,
) -> Result<(Array2<A>, Array1<A>)> {
    ensure_shape("decolle error", u.shape(), error.shape())?;
    ensure_shape("decolle trace batch", &[u.nrows()], &[p.nrows()])?;
    let modulator = &error * &surrogate_derivative(&u, spec);
    Ok((modulator.t().dot(&p), modulator.sum_axis(ndarray::Axis(0))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient<A> {
    pub weight: Array2<A>,
    pub bias: Array1<A>,
    /// Batch-mean local loss at this step.
    pub loss: f64,
    /// Batch-mean regularizer value at this step.
    pub reg: f64,
}

/// Everything that defines a layer's local objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalObjective {
    pub loss: LossSpec,
    pub regularizer: RegularizerSpec,
    pub surrogate: SurrogateSpec,
    pub feedback: FeedbackMode,
}

impl LocalObjective {
    /// Gradient of the batch-mean local loss of `layer` for one timestep.
    ///
    /// `readout` and `mask` are the values the forward pass produced; the
    /// error is routed back through the dropout mask with the same
    /// `1/(1-p)` scaling.
    pub fn layer_gradient<A: NdFloat>(
        &self,
        layer: &Layer<A>,
        state: &LayerState<A>,
        cache: &ForwardCache<A>,
        readout: &Array2<A>,
        mask: Option<&Array2<A>>,
        target: ArrayView2<A>,
    ) -> Result<LayerGradient<A>> {
        let batch = state.batch();
        let losses = self.loss.per_sample(readout.view(), target)?;
        let feedback = match self.feedback {
            FeedbackMode::Transpose => layer.params.readout(),
            FeedbackMode::SignConcordant => layer.params.feedback(),
        };
        let mut error = local_error(feedback.view(), readout.view(), target, &self.loss)?;
        if let Some(m) = mask {
            let scale = cast::<A>(1.0 / (1.0 - layer.params.dropout));
            error.zip_mut_with(m, |e, &k| *e = *e * k * scale);
        }
        let mut modulator = error * surrogate_derivative(&state.u, &self.surrogate);
        let mut reg = 0.0;
        if !self.regularizer.is_off() {
            modulator += &self.regularizer.gradient(state.u.view());
            reg = self.regularizer.per_sample(state.u.view()).mean().unwrap_or(0.0);
        }
        let inv_b = cast::<A>(1.0 / batch as f64);
        modulator.mapv_inplace(|x| x * inv_b);
        let (weight, bias) = layer.weight_gradient(modulator.view(), state, cache)?;
        Ok(LayerGradient {
            weight,
            bias,
            loss: losses.mean().unwrap_or(0.0),
            reg,
        })
    }
}

/// AdaMax state for every trainable tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOptimizer<A> {
    pub config: AdaMaxConfig,
    pub weights: Vec<AdaMaxState<A, Ix2>>,
    pub biases: Vec<AdaMaxState<A, Ix1>>,
}

impl<A: NdFloat> NetworkOptimizer<A> {
    pub fn new(config: AdaMaxConfig, net: &Network<A>) -> Self {
        NetworkOptimizer {
            config,
            weights: net
                .layers
                .iter()
                .map(|l| AdaMaxState::new(l.params.weight.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| AdaMaxState::new(l.params.bias.raw_dim()))
                .collect(),
        }
    }

    /// Applies one layer's gradient at learning rate `lr`.
    pub fn apply(&mut self, net: &mut Network<A>, layer: usize, grad: &LayerGradient<A>, lr: f64) -> Result<()> {
        let params = &mut net.layers[layer].params;
        self.weights[layer].step(&self.config, lr, &grad.weight, &mut params.weight)?;
        self.biases[layer].step(&self.config, lr, &grad.bias, &mut params.bias)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DecayConstants;
    use crate::network::{FeedbackNoiseSpec, NetworkTopology};
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decolle_update_examples() {
        let spec = SurrogateSpec::default();
        let (dw, db) = decolle_update(
            arr2(&[[0.0f64]]).view(),
            arr2(&[[0.1]]).view(),
            arr2(&[[0.7]]).view(),
            &spec,
        )
        .unwrap();
        assert_eq!((dw[[0, 0]], db[0]), (0.0, 0.0));
        let (dw, _) = decolle_update(
            arr2(&[[1.0f64, -2.0]]).view(),
            arr2(&[[0.6, -0.9]]).view(),
            arr2(&[[0.7, 0.2, 0.1]]).view(),
            &spec,
        )
        .unwrap();
        assert!(dw.iter().all(|&v| v == 0.0));
        let (dw, db) = decolle_update(
            arr2(&[[2.0f64]]).view(),
            arr2(&[[0.0]]).view(),
            arr2(&[[0.25]]).view(),
            &spec,
        )
        .unwrap();
        assert_eq!(dw[[0, 0]], 0.5);
        assert_eq!(db[0], 2.0);
    }

    fn setup() -> (Network<f64>, Vec<LayerState<f64>>, ChaCha8Rng) {
        let topo = NetworkTopology::dense(10, &[8, 6, 4], 3);
        let decay = DecayConstants::new(1.0, 10.0, 5.0, 10.0).unwrap();
        let mut net = Network::<f64>::new(&topo, decay, 1.0, &FeedbackNoiseSpec::default(), 3).unwrap();
        for l in &mut net.layers {
            l.params.weight.mapv_inplace(|w| w * 4.0);
            l.params.bias.fill(0.3);
        }
        let states = net.new_states(2);
        (net, states, ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn updates_do_not_depend_on_other_layers_weights() {
        let (net, mut states, mut rng) = setup();
        let obj = LocalObjective::default();
        for _ in 0..20 {
            let x = Array2::from_shape_simple_fn((2, 10), || if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
            net.forward::<ChaCha8Rng>(&mut states, x.view(), None).unwrap();
        }
        let x = Array2::from_shape_simple_fn((2, 10), || if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let target = Array2::from_elem((2, 3), 0.5);
        let grads = |net: &Network<f64>| {
            let mut st = states.clone();
            let out = net.forward::<ChaCha8Rng>(&mut st, x.view(), None).unwrap();
            (0..3)
                .map(|l| {
                    obj.layer_gradient(
                        &net.layers[l],
                        &st[l],
                        &out.caches[l],
                        &out.readouts[l],
                        None,
                        target.view(),
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        let base = grads(&net);
        for l in 0..3 {
            let mut perturbed = net.clone();
            perturbed.layers[l].params.weight.mapv_inplace(|w| w + 0.3);
            let g = grads(&perturbed);
            for m in (0..3).filter(|&m| m != l) {
                assert_eq!(g[m], base[m], "perturbing layer {l} changed layer {m}");
            }
            assert_ne!(g[l], base[l]);
        }
    }

    #[test]
    fn readout_only_sees_own_layer() {
        let (net, mut states, mut rng) = setup();
        let x = Array2::from_shape_simple_fn((2, 10), || if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let base = net.forward::<ChaCha8Rng>(&mut states.clone(), x.view(), None).unwrap();
        let mut other = net.clone();
        let g0 = other.layers[0].params.readout().mapv(|g| -3.0 * g);
        other.layers[0] = Layer {
            shape: other.layers[0].shape,
            params: crate::network::LayerParams::from_parts(
                other.layers[0].params.weight.clone(),
                other.layers[0].params.bias.clone(),
                g0.clone(),
                g0,
                1.0,
                other.layers[0].params.decay,
                0.0,
            ),
        };
        let out = other.forward::<ChaCha8Rng>(&mut states, x.view(), None).unwrap();
        assert_eq!(out.readouts[1], base.readouts[1]);
        assert_eq!(out.readouts[2], base.readouts[2]);
    }

    #[test]
    fn matching_targets_freeze_parameters() {
        let (mut net, mut states, mut rng) = setup();
        let obj = LocalObjective {
            regularizer: RegularizerSpec::off(),
            ..Default::default()
        };
        let mut opt = NetworkOptimizer::new(
            AdaMaxConfig {
                lr: 0.1,
                ..Default::default()
            },
            &net,
        );
        let before = net.clone();
        for _ in 0..200 {
            let x = Array2::from_shape_simple_fn((2, 10), || if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
            let out = net.forward::<ChaCha8Rng>(&mut states, x.view(), None).unwrap();
            for l in 0..3 {
                let g = obj
                    .layer_gradient(
                        &net.layers[l],
                        &states[l],
                        &out.caches[l],
                        &out.readouts[l],
                        None,
                        out.readouts[l].view(),
                    )
                    .unwrap();
                opt.apply(&mut net, l, &g, 0.1).unwrap();
            }
        }
        assert_eq!(net, before);
    }
}
