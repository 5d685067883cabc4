use ndarray::Array2;

use super::{rel_error, OracleReport};
use crate::dynamics::{DecayConstants, LayerState};

/// `P[n]` after a lone input spike at step 0:
/// `(1-α)(1-β)(βⁿ - αⁿ)/(β - α)`, or `n αⁿ⁻¹ (1-α)²` when `α = β`.
pub fn impulse_closed_form(alpha: f64, beta: f64, n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if alpha == beta {
        n as f64 * alpha.powi(n as i32 - 1) * (1.0 - alpha).powi(2)
    } else {
        (1.0 - alpha) * (1.0 - beta) * (beta.powi(n as i32) - alpha.powi(n as i32)) / (beta - alpha)
    }
}

/// Iterates the trace recurrences in 64-bit and compares every step with
/// the closed form (absolute error; traces never exceed 1).
pub fn trace_impulse_check(k: &DecayConstants, steps: u32) -> OracleReport {
    const TOL: f64 = 1e-10;
    let mut state = LayerState::<f64>::zeros(1, 1, 1);
    let spike = Array2::from_elem((1, 1), 1.0);
    let silent = Array2::zeros((1, 1));
    let mut worst = (0.0, 0);
    for n in 0..steps {
        let input = if n == 0 { &spike } else { &silent };
        state.step_traces(input.view(), k).expect("1x1 shapes");
        let err = rel_error(state.p[[0, 0]], impulse_closed_form(k.alpha, k.beta, n), 1.0);
        if err > worst.0 {
            worst = (err, n);
        }
    }
    OracleReport {
        name: format!("impulse alpha={} beta={}", k.alpha, k.beta),
        max_rel_error: worst.0,
        worst: format!("n={}", worst.1),
        n_checked: steps as usize,
        excluded: 0,
        tolerance: TOL,
        pass: worst.0 <= TOL,
    }
}
