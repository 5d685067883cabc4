//! Central finite differences of the one-timestep surrogate loss.
//!
//! With `P`, `R` frozen, the spike nonlinearity is replaced by the
//! piecewise-linear `σ_pl` whose slope is the boxcar, so the loss
//! `W ↦ L(G·σ_pl(U(W)), Ŷ) + L_reg(U(W))` is differentiable almost
//! everywhere and its gradient must equal the engine's closed-form update.
//! With sign-concordant feedback the readout becomes
//! `G·s₀ + H·(σ_pl(U) - s₀)` with `s₀` frozen at the unperturbed point,
//! which has the same value but routes the gradient through `H`.
//!
//! The forward map here is a direct loop implementation, independent of the
//! engine's im2col and pooling code.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rel_error, OracleReport};
use crate::dynamics::{piecewise_linear, DecayConstants, LayerState};
use crate::learning::{FeedbackMode, LocalObjective, LossSpec, RegularizerSpec};
use crate::network::{make_dropout_mask, ConvGeometry, FeedbackNoiseSpec, Layer, LayerShape};
use crate::Result;

const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleLayer {
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Conv {
        c_in: usize,
        size: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub name: String,
    pub layer: OracleLayer,
    pub n_readout: usize,
    pub batch: usize,
    pub objective: LocalObjective,
    pub dropout: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub h: f64,
}

impl GradCheckConfig {
    pub fn new(name: &str, layer: OracleLayer, loss: LossSpec, regularized: bool, feedback: FeedbackMode) -> Self {
        GradCheckConfig {
            name: name.to_string(),
            layer,
            n_readout: 3,
            batch: 2,
            objective: LocalObjective {
                loss,
                regularizer: if regularized {
                    RegularizerSpec {
                        lambda1: 0.7,
                        lambda2: 0.9,
                        ..Default::default()
                    }
                } else {
                    RegularizerSpec::off()
                },
                feedback,
                ..Default::default()
            },
            dropout: 0.0,
            seed: 1,
            tolerance: 1e-4,
            h: 1e-5,
        }
    }
}

/// Configurations covering dense/conv, both losses, regularizer on/off,
/// both feedback modes, pooling and dropout.
pub fn standard_configs() -> Vec<GradCheckConfig> {
    let dense = OracleLayer::Dense { n_in: 8, n_out: 4 };
    let conv = OracleLayer::Conv {
        c_in: 2,
        size: 8,
        c_out: 3,
        kernel: 3,
        stride: 1,
        padding: 1,
        pool: 2,
    };
    let strided = OracleLayer::Conv {
        c_in: 3,
        size: 9,
        c_out: 2,
        kernel: 3,
        stride: 2,
        padding: 0,
        pool: 1,
    };
    let smooth = LossSpec::SmoothL1 { delta: 1.0 };
    let mut configs = vec![
        GradCheckConfig::new("dense-mse-G", dense, LossSpec::Mse, false, FeedbackMode::Transpose),
        GradCheckConfig::new(
            "dense-smoothl1-reg-H",
            dense,
            smooth,
            true,
            FeedbackMode::SignConcordant,
        ),
        GradCheckConfig::new(
            "dense-mse-reg-H-dropout",
            OracleLayer::Dense { n_in: 16, n_out: 12 },
            LossSpec::Mse,
            true,
            FeedbackMode::SignConcordant,
        ),
        GradCheckConfig::new("conv-pool-mse-G", conv, LossSpec::Mse, false, FeedbackMode::Transpose),
        GradCheckConfig::new(
            "conv-pool-smoothl1-reg-H",
            conv,
            smooth,
            true,
            FeedbackMode::SignConcordant,
        ),
        GradCheckConfig::new(
            "conv-stride-smoothl1-reg-G-dropout",
            strided,
            smooth,
            true,
            FeedbackMode::Transpose,
        ),
        GradCheckConfig::new("dense-smoothl1-G", dense, smooth, false, FeedbackMode::Transpose),
        GradCheckConfig::new(
            "conv-pool-mse-reg-H-dropout",
            conv,
            LossSpec::Mse,
            true,
            FeedbackMode::SignConcordant,
        ),
    ];
    configs[2].batch = 3;
    configs[2].dropout = 0.5;
    configs[5].dropout = 0.3;
    configs[7].dropout = 0.5;
    for (i, c) in configs.iter_mut().enumerate() {
        c.seed = 100 + i as u64;
    }
    configs
}

/// Frozen single-timestep problem.
struct Problem {
    layer: Layer<f64>,
    p: Array2<f64>,
    r: Array2<f64>,
    target: Array2<f64>,
    mask: Option<Array2<f64>>,
    /// `σ_pl(U)` at the unperturbed parameters (after masking).
    s0: Array2<f64>,
    cfg: GradCheckConfig,
}

/// Forward pass by direct loops. Returns `U` and the pooling winners.
fn direct_membrane(
    layer: &Layer<f64>,
    weight: &Array2<f64>,
    bias: &Array1<f64>,
    p: &Array2<f64>,
    r: &Array2<f64>,
) -> (Array2<f64>, Vec<usize>) {
    let batch = p.nrows();
    let rho = layer.params.rho;
    let mut winners = Vec::new();
    let u = match layer.shape {
        LayerShape::Dense { n_in, n_out } => Array2::from_shape_fn((batch, n_out), |(b, i)| {
            (0..n_in).map(|j| weight[[i, j]] * p[[b, j]]).sum::<f64>() - rho * r[[b, i]] + bias[i]
        }),
        LayerShape::Conv(g) => {
            let mut u = Array2::zeros((batch, g.n_out()));
            for b in 0..batch {
                let conv = |co: usize, oy: usize, ox: usize| {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h_in && (ix as usize) < g.w_in {
                                    acc += weight[[co, (ci * g.kernel + ky) * g.kernel + kx]]
                                        * p[[b, (ci * g.h_in + iy as usize) * g.w_in + ix as usize]];
                                }
                            }
                        }
                    }
                    acc
                };
                for co in 0..g.c_out {
                    for py in 0..g.h_out {
                        for px in 0..g.w_out {
                            let mut best = (f64::NEG_INFINITY, 0);
                            for wy in 0..g.pool {
                                for wx in 0..g.pool {
                                    let (oy, ox) = (py * g.pool + wy, px * g.pool + wx);
                                    let v = conv(co, oy, ox);
                                    if v > best.0 {
                                        best = (v, wy * g.pool + wx);
                                    }
                                }
                            }
                            winners.push(best.1);
                            let j = (co * g.h_out + py) * g.w_out + px;
                            u[[b, j]] = best.0 - rho * r[[b, j]] + bias[co];
                        }
                    }
                }
            }
            u
        }
    };
    (u, winners)
}

impl Problem {
    fn build(cfg: &GradCheckConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let shape = match cfg.layer {
            OracleLayer::Dense { n_in, n_out } => LayerShape::Dense { n_in, n_out },
            OracleLayer::Conv {
                c_in,
                size,
                c_out,
                kernel,
                stride,
                padding,
                pool,
            } => LayerShape::Conv(ConvGeometry::new(
                (c_in, size, size),
                c_out,
                kernel,
                stride,
                padding,
                pool,
            )?),
        };
        let decay = DecayConstants::new(1.0, 10.0, 5.0, 10.0)?;
        let mut layer = Layer::<f64>::init(
            shape,
            cfg.n_readout,
            cfg.dropout,
            decay,
            1.0,
            &FeedbackNoiseSpec::default(),
            &mut rng,
        )?;
        layer.params.bias.mapv_inplace(|_| rng.gen_range(-0.2..0.2));
        let (n_in, n_out) = (shape.n_in(), shape.n_out());
        let p = Array2::from_shape_simple_fn((cfg.batch, n_in), || rng.gen_range(0.0..1.0));
        let r = Array2::from_shape_simple_fn((cfg.batch, n_out), || rng.gen_range(0.0..0.3));
        let target = Array2::from_shape_simple_fn((cfg.batch, cfg.n_readout), || rng.gen_range(-1.5..1.5));
        let mask = (cfg.dropout > 0.0).then(|| make_dropout_mask((cfg.batch, n_out), cfg.dropout, &mut rng));
        let mut problem = Problem {
            layer,
            p,
            r,
            target,
            mask,
            s0: Array2::zeros((0, 0)),
            cfg: cfg.clone(),
        };
        let (u, _) = direct_membrane(
            &problem.layer,
            &problem.layer.params.weight,
            &problem.layer.params.bias,
            &problem.p,
            &problem.r,
        );
        problem.s0 = problem.masked_activation(&u);
        Ok(problem)
    }

    fn masked_activation(&self, u: &Array2<f64>) -> Array2<f64> {
        let spec = &self.cfg.objective.surrogate;
        let mut s = u.mapv(|x| piecewise_linear(x, spec));
        if let Some(m) = &self.mask {
            let scale = 1.0 / (1.0 - self.cfg.dropout);
            s.zip_mut_with(m, |s, &k| *s *= k * scale);
        }
        s
    }

    fn readout_of(&self, s: &Array2<f64>) -> Array2<f64> {
        let g = self.layer.params.readout();
        match self.cfg.objective.feedback {
            FeedbackMode::Transpose => s.dot(&g.t()),
            FeedbackMode::SignConcordant => self.s0.dot(&g.t()) + (s - &self.s0).dot(&self.layer.params.feedback().t()),
        }
    }

    /// Batch-mean loss and a signature of every piecewise region it sits in.
    fn evaluate(&self, weight: &Array2<f64>, bias: &Array1<f64>) -> (f64, Vec<u8>) {
        let obj = &self.cfg.objective;
        let (u, winners) = direct_membrane(&self.layer, weight, bias, &self.p, &self.r);
        let y = self.readout_of(&self.masked_activation(&u));
        let w = obj.surrogate.half_width;
        let mut sig: Vec<u8> = winners.iter().map(|&k| k as u8).collect();
        sig.extend(
            u.iter()
                .map(|&x| (x < -w) as u8 + 2 * (x > w) as u8 + 4 * (x + obj.regularizer.u_margin > 0.0) as u8),
        );
        let mut total = 0.0;
        for b in 0..u.nrows() {
            let mean_u = u.row(b).mean().unwrap();
            sig.push((obj.regularizer.rate_floor - mean_u > 0.0) as u8);
            for k in 0..y.ncols() {
                let res = y[[b, k]] - self.target[[b, k]];
                if let LossSpec::SmoothL1 { delta } = obj.loss {
                    sig.push((res.abs() < delta) as u8);
                }
                total += obj.loss.value(res);
            }
        }
        if !obj.regularizer.is_off() {
            total += obj.regularizer.per_sample(u.view()).sum();
        }
        (total / u.nrows() as f64, sig)
    }

    fn analytic(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut state = LayerState::<f64>::zeros(self.cfg.batch, self.layer.shape.n_in(), self.layer.shape.n_out());
        state.p.assign(&self.p);
        state.r.assign(&self.r);
        let (u, cache) = self.layer.membrane(&state)?;
        state.u = u;
        let spec = self.cfg.objective.surrogate;
        let activation = state.u.mapv(|x| piecewise_linear(x, &spec));
        let y = self.layer.local_readout(activation.view(), self.mask.as_ref())?;
        let g = self.cfg.objective.layer_gradient(
            &self.layer,
            &state,
            &cache,
            &y,
            self.mask.as_ref(),
            self.target.view(),
        )?;
        Ok((g.weight, g.bias))
    }
}

/// Compares the closed-form update with central differences over every
/// weight and bias entry. Coordinates whose `±2h` neighbourhood crosses a
/// kink (surrogate edges, rectifiers, smooth-L1 transition, pooling
/// winner change) are excluded and counted.
pub fn fd_gradient_check(cfg: &GradCheckConfig) -> Result<OracleReport> {
    let problem = Problem::build(cfg)?;
    let (dw, db) = problem.analytic()?;
    let base_w = problem.layer.params.weight.clone();
    let base_b = problem.layer.params.bias.clone();
    let h = cfg.h;
    let mut worst = (0.0f64, String::from("-"));
    let (mut checked, mut excluded) = (0usize, 0usize);

    let mut check = |analytic: f64, id: String, eval: &dyn Fn(f64) -> (f64, Vec<u8>)| {
        let (_, far_lo) = eval(-2.0 * h);
        let (_, far_hi) = eval(2.0 * h);
        let (_, mid) = eval(0.0);
        if far_lo != mid || far_hi != mid {
            excluded += 1;
            return;
        }
        let numeric = (eval(h).0 - eval(-h).0) / (2.0 * h);
        let err = rel_error(analytic, numeric, REL_FLOOR);
        checked += 1;
        if err > worst.0 || worst.1 == "-" {
            worst = (err.max(worst.0), if err >= worst.0 { id } else { worst.1.clone() });
        }
    };

    for ((i, j), &a) in dw.indexed_iter() {
        let eval = |d: f64| {
            let mut w = base_w.clone();
            w[[i, j]] += d;
            problem.evaluate(&w, &base_b)
        };
        check(a, format!("W[{i},{j}]"), &eval);
    }
    for (i, &a) in db.iter().enumerate() {
        let eval = |d: f64| {
            let mut b = base_b.clone();
            b[i] += d;
            problem.evaluate(&base_w, &b)
        };
        check(a, format!("b[{i}]"), &eval);
    }
    Ok(OracleReport {
        name: cfg.name.clone(),
        max_rel_error: worst.0,
        worst: worst.1,
        n_checked: checked,
        excluded,
        tolerance: cfg.tolerance,
        pass: checked > 0 && worst.0 <= cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_mse_transpose_passes() {
        let cfg = &standard_configs()[0];
        let r = fd_gradient_check(cfg).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.excluded_fraction() < 0.05, "{r}");
    }

    #[test]
    fn every_standard_config_passes() {
        let configs = standard_configs();
        assert!(configs.len() >= 6);
        for cfg in &configs {
            let r = fd_gradient_check(cfg).unwrap();
            println!("{r}");
            assert!(r.pass, "{r}");
            assert!(r.excluded_fraction() < 0.05, "{r}");
        }
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // Perturbing the feedback choice makes the analytic path disagree.
        let mut cfg = standard_configs()[1].clone();
        cfg.objective.feedback = FeedbackMode::SignConcordant;
        let problem = Problem::build(&cfg).unwrap();
        let (dw, _) = problem.analytic().unwrap();
        let mut cfg_g = cfg.clone();
        cfg_g.objective.feedback = FeedbackMode::Transpose;
        let problem_g = Problem::build(&cfg_g).unwrap();
        let (dw_g, _) = problem_g.analytic().unwrap();
        let max_rel = dw
            .iter()
            .zip(dw_g.iter())
            .map(|(&a, &b)| rel_error(a, b, REL_FLOOR))
            .fold(0.0, f64::max);
        assert!(max_rel > 1e-2, "G and H feedback should give different updates");
    }
}
