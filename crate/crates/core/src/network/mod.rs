//! Feedforward stack of dense and convolutional spiking layers, each with a
//! fixed random local readout.

mod conv;
mod layer;
mod topology;

pub use layer::{make_dropout_mask, FeedbackNoiseSpec, ForwardCache, Layer, LayerParams};
pub use topology::{ConvGeometry, LayerShape, LayerSpec, NetworkTopology};

use ndarray::{Array2, ArrayView2, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DecayConstants, LayerState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Network<A> {
    pub topology: NetworkTopology,
    pub layers: Vec<Layer<A>>,
}

/// Everything one network step produces besides the updated states.
#[derive(Debug, Clone)]
pub struct NetworkStep<A> {
    /// One `[batch, n_readout]` readout per layer.
    pub readouts: Vec<Array2<A>>,
    /// Dropout keep-masks used by each readout (`None` when dropout was off).
    pub masks: Vec<Option<Array2<A>>>,
    pub caches: Vec<ForwardCache<A>>,
}

impl<A: NdFloat> Network<A> {
    /// Deterministic in `seed`. Layers draw `W`, `G` then `ω` in order from a
    /// single ChaCha8 stream.
    pub fn new(
        topology: &NetworkTopology,
        decay: DecayConstants,
        rho: f64,
        noise: &FeedbackNoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        let shapes = topology.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shapes
            .into_iter()
            .zip(&topology.layers)
            .map(|(shape, spec)| Layer::init(shape, spec.readout(), spec.dropout(), decay, rho, noise, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            topology: topology.clone(),
            layers,
        })
    }

    pub fn from_layers(topology: NetworkTopology, layers: Vec<Layer<A>>) -> Result<Self> {
        let shapes = topology.shapes()?;
        if shapes.len() != layers.len() || shapes.iter().zip(&layers).any(|(s, l)| *s != l.shape) {
            return Err(Error::TopologyMismatch);
        }
        Ok(Network { topology, layers })
    }

    pub fn n_input(&self) -> usize {
        self.layers[0].shape.n_in()
    }

    pub fn new_states(&self, batch: usize) -> Vec<LayerState<A>> {
        self.layers.iter().map(|l| l.new_state(batch)).collect()
    }

    /// Advances every layer by one step, feeding each layer's spikes to the
    /// next. Readouts see only their own layer's spikes. Dropout masks are
    /// drawn from `dropout_rng` when given.
    pub fn forward<R: Rng>(
        &self,
        states: &mut [LayerState<A>],
        input: ArrayView2<A>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<NetworkStep<A>> {
        if states.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "expected {} layer states, got {}",
                self.layers.len(),
                states.len()
            )));
        }
        let n = self.layers.len();
        let mut step = NetworkStep {
            readouts: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            caches: Vec::with_capacity(n),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, rest) = states.split_at_mut(i);
            let layer_input = if i == 0 { input.view() } else { before[i - 1].s.view() };
            let state = &mut rest[0];
            let cache = layer.forward(state, layer_input)?;
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if layer.params.dropout > 0.0 => Some(make_dropout_mask(
                    (state.batch(), layer.shape.n_out()),
                    layer.params.dropout,
                    rng,
                )),
                _ => None,
            };
            step.readouts.push(layer.local_readout(state.s.view(), mask.as_ref())?);
            step.masks.push(mask);
            step.caches.push(cache);
        }
        Ok(step)
    }

    pub fn cast<B: NdFloat>(&self) -> Network<B> {
        Network {
            topology: self.topology.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    shape: l.shape,
                    params: l.params.cast(),
                })
                .collect(),
        }
    }
}
