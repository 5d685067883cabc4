//! Versioned binary checkpoints.
//!
//! ```text
//! magic    8 bytes  "DCLLCKPT"
//! version  u32      1
//! topology u64 length + UTF-8 TOML of the network topology
//! step     u64      minibatch iteration at which the checkpoint was taken
//! layers   u32 count, then per layer:
//!            weight, bias, readout, feedback   (tensor)
//!            rho f32, dropout f64, decay 7 x f64
//!            weight m, weight u (tensor), weight t u64
//!            bias m, bias u (tensor), bias t u64
//! tensor   u32 rank, rank x u64 dims, then f32 values
//! ```
//!
//! All integers and floats are little-endian.

use ndarray::{Array, Array1, Array2, Dimension, IxDyn};

use crate::dynamics::DecayConstants;
use crate::learning::{AdaMaxConfig, AdaMaxState, NetworkOptimizer};
use crate::network::{Layer, LayerParams, Network, NetworkTopology};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DCLLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: NetworkOptimizer<f32>,
    pub step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor<D: Dimension>(&mut self, a: &Array<f32, D>) {
        self.u32(a.ndim() as u32);
        for &d in a.shape() {
            self.u64(d as u64);
        }
        for &x in a.iter() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor<D: Dimension>(&mut self) -> Result<Array<f32, D>> {
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let len = len
            .filter(|&l| l.saturating_mul(4) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint("tensor larger than the file".into()))?;
        let data = (0..len).map(|_| self.f32()).collect::<Result<Vec<_>>>()?;
        Array::from_shape_vec(IxDyn(&dims), data)
            .expect("length matches dims")
            .into_dimensionality::<D>()
            .map_err(|_| Error::Checkpoint(format!("unexpected tensor rank {rank}")))
    }
}

pub fn save_checkpoint(network: &Network<f32>, optimizer: &NetworkOptimizer<f32>, step: u64) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let topo = toml::to_string(&network.topology).expect("topology is serializable");
    w.u64(topo.len() as u64);
    w.0.extend_from_slice(topo.as_bytes());
    w.u64(step);
    w.u32(network.layers.len() as u32);
    for (i, layer) in network.layers.iter().enumerate() {
        let p = &layer.params;
        w.tensor(&p.weight);
        w.tensor(&p.bias);
        w.tensor(p.readout());
        w.tensor(p.feedback());
        w.0.extend_from_slice(&p.rho.to_le_bytes());
        w.f64(p.dropout);
        let d = p.decay;
        for v in [d.alpha, d.beta, d.gamma, d.dt, d.tau_mem, d.tau_syn, d.tau_ref] {
            w.f64(v);
        }
        let (ws, bs) = (&optimizer.weights[i], &optimizer.biases[i]);
        w.tensor(&ws.m);
        w.tensor(&ws.u);
        w.u64(ws.t);
        w.tensor(&bs.m);
        w.tensor(&bs.u);
        w.u64(bs.t);
    }
    w.0
}

/// Restores a checkpoint, refusing files whose topology differs from
/// `expected`.
pub fn load_checkpoint(bytes: &[u8], expected: &NetworkTopology, config: AdaMaxConfig) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u64()? as usize;
    let topo_text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("topology is not UTF-8".into()))?;
    let topology: NetworkTopology = toml::from_str(topo_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if &topology != expected {
        return Err(Error::TopologyMismatch);
    }
    let shapes = topology.shapes()?;
    let step = r.u64()?;
    let n = r.u32()? as usize;
    if n != shapes.len() {
        return Err(Error::TopologyMismatch);
    }
    let mut layers = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for shape in shapes {
        let weight: Array2<f32> = r.tensor()?;
        let bias: Array1<f32> = r.tensor()?;
        let readout: Array2<f32> = r.tensor()?;
        let feedback: Array2<f32> = r.tensor()?;
        let rho = r.f32()?;
        let dropout = r.f64()?;
        let mut d = [0.0; 7];
        for v in d.iter_mut() {
            *v = r.f64()?;
        }
        if weight.dim() != shape.weight_dims()
            || bias.len() != shape.bias_len()
            || readout.ncols() != shape.n_out()
            || feedback.dim() != readout.dim()
        {
            return Err(Error::TopologyMismatch);
        }
        let decay = DecayConstants {
            alpha: d[0],
            beta: d[1],
            gamma: d[2],
            dt: d[3],
            tau_mem: d[4],
            tau_syn: d[5],
            tau_ref: d[6],
        };
        let wm: Array2<f32> = r.tensor()?;
        let wu: Array2<f32> = r.tensor()?;
        let wt = r.u64()?;
        let bm: Array1<f32> = r.tensor()?;
        let bu: Array1<f32> = r.tensor()?;
        let bt = r.u64()?;
        if wm.dim() != weight.dim() || wu.dim() != weight.dim() || bm.len() != bias.len() || bu.len() != bias.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        weights.push(AdaMaxState { m: wm, u: wu, t: wt });
        biases.push(AdaMaxState { m: bm, u: bu, t: bt });
        layers.push(Layer {
            shape,
            params: LayerParams::from_parts(weight, bias, readout, feedback, rho, decay, dropout),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        network: Network::from_layers(topology, layers)?,
        optimizer: NetworkOptimizer {
            config,
            weights,
            biases,
        },
        step,
    })
}
