//! Brute-force checks of the analytic shortcuts used by the engine.

mod gradcheck;
mod impulse;
pub mod memory;

pub use gradcheck::{fd_gradient_check, standard_configs, GradCheckConfig, OracleLayer};
pub use impulse::{impulse_closed_form, trace_impulse_check};
pub use memory::{memory_probe, CountingAllocator, MemoryPoint};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    /// `|a - b| / max(|a|, |b|, floor)` over all checked coordinates.
    pub max_rel_error: f64,
    pub worst: String,
    pub n_checked: usize,
    pub excluded: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn excluded_fraction(&self) -> f64 {
        let total = self.n_checked + self.excluded;
        if total == 0 {
            0.0
        } else {
            self.excluded as f64 / total as f64
        }
    }

    pub const CSV_HEADER: &'static str = "name,max_rel_error,worst,n_checked,excluded,tolerance,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{},{:e},{}",
            self.name, self.max_rel_error, self.worst, self.n_checked, self.excluded, self.tolerance, self.pass
        )
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {}: max rel err {:.3e} (tol {:.0e}) at {}, {} checked, {} excluded ({:.1}%)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.worst,
            self.n_checked,
            self.excluded,
            100.0 * self.excluded_fraction()
        )
    }
}

pub(crate) fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
