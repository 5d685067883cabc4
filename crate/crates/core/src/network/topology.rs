use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_stride() -> usize {
    1
}

fn default_pool() -> usize {
    1
}

/// Declarative description of one spiking layer and its local readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        readout: usize,
        #[serde(default)]
        dropout: f64,
    },
    Conv {
        channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// Max-pool window (and stride); 1 disables pooling.
        #[serde(default = "default_pool")]
        pool: usize,
        readout: usize,
        #[serde(default)]
        dropout: f64,
    },
}

impl LayerSpec {
    pub fn readout(&self) -> usize {
        match *self {
            LayerSpec::Dense { readout, .. } | LayerSpec::Conv { readout, .. } => readout,
        }
    }

    pub fn dropout(&self) -> f64 {
        match *self {
            LayerSpec::Dense { dropout, .. } | LayerSpec::Conv { dropout, .. } => dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    /// `[n]` for flat input or `[channels, height, width]` for images.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Resolved geometry of a convolution + max-pool stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub h_conv: usize,
    pub w_conv: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(
        (c_in, h_in, w_in): (usize, usize, usize),
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: usize,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || kernel == 0 || stride == 0 || pool == 0 {
            return Err(Error::Config("conv sizes, stride and pool must be positive".into()));
        }
        let (hp, wp) = (h_in + 2 * padding, w_in + 2 * padding);
        if hp < kernel || wp < kernel {
            return Err(Error::Config(format!(
                "kernel {kernel} does not fit a {h_in}x{w_in} input with padding {padding}"
            )));
        }
        let h_conv = (hp - kernel) / stride + 1;
        let w_conv = (wp - kernel) / stride + 1;
        let (h_out, w_out) = (h_conv / pool, w_conv / pool);
        if h_out == 0 || w_out == 0 {
            return Err(Error::Config(format!(
                "pool {pool} is larger than the {h_conv}x{w_conv} conv output"
            )));
        }
        Ok(ConvGeometry {
            c_in,
            h_in,
            w_in,
            c_out,
            kernel,
            stride,
            padding,
            pool,
            h_conv,
            w_conv,
            h_out,
            w_out,
        })
    }

    pub fn n_in(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn n_out(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn conv_positions(&self) -> usize {
        self.h_conv * self.w_conv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Dense { n_in: usize, n_out: usize },
    Conv(ConvGeometry),
}

impl LayerShape {
    pub fn n_in(&self) -> usize {
        match self {
            LayerShape::Dense { n_in, .. } => *n_in,
            LayerShape::Conv(g) => g.n_in(),
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            LayerShape::Dense { n_out, .. } => *n_out,
            LayerShape::Conv(g) => g.n_out(),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerShape::Dense { n_in, .. } => *n_in,
            LayerShape::Conv(g) => g.patch_len(),
        }
    }

    /// Shape of the trainable weight matrix; conv kernels are stored as
    /// `[c_out, c_in·k·k]`.
    pub fn weight_dims(&self) -> (usize, usize) {
        match self {
            LayerShape::Dense { n_in, n_out } => (*n_out, *n_in),
            LayerShape::Conv(g) => (g.c_out, g.patch_len()),
        }
    }

    pub fn bias_len(&self) -> usize {
        match self {
            LayerShape::Dense { n_out, .. } => *n_out,
            LayerShape::Conv(g) => g.c_out,
        }
    }

    /// Output as `[channels, height, width]` (dense layers report `[n]`).
    pub fn output_dims(&self) -> Vec<usize> {
        match self {
            LayerShape::Dense { n_out, .. } => vec![*n_out],
            LayerShape::Conv(g) => vec![g.c_out, g.h_out, g.w_out],
        }
    }
}

impl NetworkTopology {
    /// Resolves every layer's geometry, checking that consecutive shapes compose.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        if self.layers.is_empty() {
            return Err(Error::Config("topology has no layers".into()));
        }
        if !(self.input.len() == 1 || self.input.len() == 3) || self.input.contains(&0) {
            return Err(Error::Config(format!(
                "input must be [n] or [channels, height, width] with positive sizes, got {:?}",
                self.input
            )));
        }
        let mut dims = self.input.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let p = spec.dropout();
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("layer {i}: dropout must be in [0, 1), got {p}")));
            }
            if spec.readout() == 0 {
                return Err(Error::Config(format!("layer {i}: readout size must be positive")));
            }
            let shape = match *spec {
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: dense layer needs units > 0")));
                    }
                    LayerShape::Dense {
                        n_in: dims.iter().product(),
                        n_out: units,
                    }
                }
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                    pool,
                    ..
                } => {
                    if dims.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv layer needs a [c, h, w] input, got {dims:?}"
                        )));
                    }
                    LayerShape::Conv(
                        ConvGeometry::new((dims[0], dims[1], dims[2]), channels, kernel, stride, padding, pool)
                            .map_err(|e| Error::Config(format!("layer {i}: {e}")))?,
                    )
                }
            };
            dims = shape.output_dims();
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Three 7x7 conv layers (64/128/128 channels, padding 2) with 2x2
    /// max-pooling after the first and third, each with a dropout + dense
    /// local classifier.
    pub fn gesture_convnet(input: [usize; 3], classes: usize) -> Self {
        let conv = |channels, pool| LayerSpec::Conv {
            channels,
            kernel: 7,
            stride: 1,
            padding: 2,
            pool,
            readout: classes,
            dropout: 0.5,
        };
        NetworkTopology {
            input: input.to_vec(),
            layers: vec![conv(64, 2), conv(128, 1), conv(128, 2)],
        }
    }

    pub fn dense(n_in: usize, units: &[usize], readout: usize) -> Self {
        NetworkTopology {
            input: vec![n_in],
            layers: units
                .iter()
                .map(|&u| LayerSpec::Dense {
                    units: u,
                    readout,
                    dropout: 0.0,
                })
                .collect(),
        }
    }
}
