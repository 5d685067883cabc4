use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use serde::{Deserialize, Serialize};

use crate::dynamics::cast;
use crate::error::{ensure_shape, Error, Result};

/// Per-readout loss, summed over readout units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `½ Σ (Y - Ŷ)²`
    Mse,
    /// Quadratic `r²/(2δ)` for `|r| < δ`, linear `|r| - δ/2` beyond.
    SmoothL1 { delta: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::SmoothL1 { delta: 1.0 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::SmoothL1 { delta } if !(delta > 0.0) => {
                Err(Error::Config(format!("smooth-L1 delta must be positive, got {delta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Mse => 0.5 * r * r,
            LossSpec::SmoothL1 { delta } => {
                if r.abs() < delta {
                    0.5 * r * r / delta
                } else {
                    r.abs() - 0.5 * delta
                }
            }
        }
    }

    pub fn derivative<A: NdFloat>(&self, r: A) -> A {
        match *self {
            LossSpec::Mse => r,
            LossSpec::SmoothL1 { delta } => {
                let d = cast::<A>(delta);
                (r / d).max(-A::one()).min(A::one())
            }
        }
    }

    /// Loss of each batch row.
    pub fn per_sample<A: NdFloat>(&self, y: ArrayView2<A>, target: ArrayView2<A>) -> Result<Array1<f64>> {
        ensure_shape("loss target", y.shape(), target.shape())?;
        Ok(Zip::from(y.rows()).and(target.rows()).map_collect(|y, t| {
            y.iter()
                .zip(t.iter())
                .map(|(&a, &b)| self.value((a - b).to_f64().unwrap()))
                .sum()
        }))
    }

    /// `∂L/∂Y`, shape `[batch, n_readout]`.
    pub fn gradient<A: NdFloat>(&self, y: ArrayView2<A>, target: ArrayView2<A>) -> Result<Array2<A>> {
        ensure_shape("loss target", y.shape(), target.shape())?;
        Ok(Zip::from(&y).and(&target).map_collect(|&a, &b| self.derivative(a - b)))
    }
}

/// Backprojects the readout residual through `feedback` (`G` or `H`,
/// `[n_readout, n_out]`): `error = ∂L/∂Y · feedback`, shape `[batch, n_out]`.
pub fn local_error<A: NdFloat>(
    feedback: ArrayView2<A>,
    y: ArrayView2<A>,
    target: ArrayView2<A>,
    loss: &LossSpec,
) -> Result<Array2<A>> {
    ensure_shape("readout width", &[y.nrows(), feedback.nrows()], y.shape())?;
    let residual = loss.gradient(y, target)?;
    Ok(residual.dot(&feedback))
}

/// Membrane-potential regularizer
/// `λ1 ⟨[U + margin]⁺⟩ + λ2 [floor - ⟨U⟩]⁺`, averaged over the layer's units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default = "default_margin")]
    pub u_margin: f64,
    #[serde(default = "default_floor")]
    pub rate_floor: f64,
}

fn default_margin() -> f64 {
    0.01
}

fn default_floor() -> f64 {
    0.1
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            lambda1: 0.05,
            lambda2: 0.05,
            u_margin: default_margin(),
            rate_floor: default_floor(),
        }
    }
}

impl RegularizerSpec {
    pub fn off() -> Self {
        RegularizerSpec {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Default::default()
        }
    }

    pub fn is_off(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("regularizer coefficients must be non-negative".into()));
        }
        Ok(())
    }

    pub fn per_sample<A: NdFloat>(&self, u: ArrayView2<A>) -> Array1<f64> {
        let n = u.ncols() as f64;
        u.map_axis(Axis(1), |row| {
            let mut above = 0.0;
            let mut mean = 0.0;
            for &x in row {
                let x = x.to_f64().unwrap();
                above += (x + self.u_margin).max(0.0);
                mean += x;
            }
            self.lambda1 * above / n + self.lambda2 * (self.rate_floor - mean / n).max(0.0)
        })
    }

    /// `∂L_reg/∂U`, shape of `u`.
    pub fn gradient<A: NdFloat>(&self, u: ArrayView2<A>) -> Array2<A> {
        let n = u.ncols();
        let inv_n = 1.0 / n as f64;
        let mut g = Array2::<A>::zeros(u.raw_dim());
        for (row, mut out) in u.rows().into_iter().zip(g.rows_mut()) {
            let mean = row.iter().map(|x| x.to_f64().unwrap()).sum::<f64>() * inv_n;
            let floor_term = if self.rate_floor - mean > 0.0 {
                -self.lambda2 * inv_n
            } else {
                0.0
            };
            let margin = cast::<A>(self.u_margin);
            let l1 = cast::<A>(self.lambda1 * inv_n);
            let f = cast::<A>(floor_term);
            for (o, &x) in out.iter_mut().zip(row) {
                *o = if x + margin > A::zero() { l1 + f } else { f };
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn local_error_examples() {
        let g = arr2(&[[1.0f64, 0.0], [0.0, 1.0]]);
        let y = arr2(&[[0.3, -0.7]]);
        let e = local_error(g.view(), y.view(), y.view(), &LossSpec::Mse).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        let e = local_error(g.view(), y.view(), Array2::zeros((1, 2)).view(), &LossSpec::Mse).unwrap();
        assert_eq!(e, y);
        let e = local_error(
            arr2(&[[1.0]]).view(),
            arr2(&[[10.0]]).view(),
            arr2(&[[0.0]]).view(),
            &LossSpec::SmoothL1 { delta: 1.0 },
        )
        .unwrap();
        assert_eq!(e[[0, 0]], 1.0);
        assert!(local_error(
            g.view(),
            arr2(&[[1.0, 2.0, 3.0]]).view(),
            arr2(&[[1.0, 2.0, 3.0]]).view(),
            &LossSpec::Mse
        )
        .is_err());
    }

    #[test]
    fn smooth_l1_is_continuously_differentiable() {
        let loss = LossSpec::SmoothL1 { delta: 1.0 };
        for &r in &[-3.0, -1.0, -0.4, 0.0, 0.4, 1.0, 3.0] {
            let h = 1e-6;
            let fd = (loss.value(r + h) - loss.value(r - h)) / (2.0 * h);
            assert!((fd - loss.derivative(r)).abs() < 1e-5, "r={r}");
        }
        assert_eq!(loss.value(1.0), 0.5);
        assert_eq!(loss.value(2.0), 1.5);
        assert!(LossSpec::SmoothL1 { delta: 0.0 }.validate().is_err());
    }

    #[test]
    fn regularizer_gradient_examples() {
        let n = 8;
        let spec = RegularizerSpec {
            lambda1: 1.0,
            lambda2: 0.0,
            ..Default::default()
        };
        let g = spec.gradient(Array2::<f64>::from_elem((1, n), -1.0).view());
        assert!(g.iter().all(|&v| v == 0.0));
        let g = spec.gradient(Array2::<f64>::ones((1, n)).view());
        assert!(g.iter().all(|&v| v == 1.0 / n as f64));

        let spec = RegularizerSpec {
            lambda1: 0.0,
            lambda2: 1.0,
            ..Default::default()
        };
        let g = spec.gradient(Array2::<f64>::from_elem((1, n), 0.2).view());
        assert!(g.iter().all(|&v| v == 0.0));
        let g = spec.gradient(Array2::<f64>::from_elem((1, n), -0.3).view());
        assert!(g.iter().all(|&v| v == -1.0 / n as f64));
        assert!((spec.per_sample(Array2::<f64>::from_elem((1, n), -0.3).view())[0] - 0.4).abs() < 1e-12);
    }
}
