//! Run-wide tunables shared by the command-line front end.

use thiserror::Error;

use crate::augment::DEFAULT_BAND_PX;
use crate::postprocess::{Connectivity, PipelineConfig};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field} must be positive")]
pub struct ConfigError {
    pub field: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub min_area: usize,
    pub band_px: usize,
    pub parallel_slope_eps: f64,
    pub convergence_tol: f64,
    pub max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: 0,
            min_area: p.min_area,
            band_px: DEFAULT_BAND_PX,
            parallel_slope_eps: p.parallel_slope_eps,
            convergence_tol: p.convergence_tol,
            max_iters: p.max_iters,
        }
    }
}

impl RunConfig {
    /// Checks that every tunable except the seed is positive.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            ("min_area", self.min_area > 0),
            ("band_px", self.band_px > 0),
            ("parallel_slope_eps", self.parallel_slope_eps > 0.0),
            ("convergence_tol", self.convergence_tol > 0.0),
            ("max_iters", self.max_iters > 0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some(&(field, _)) => Err(ConfigError { field }),
            None => Ok(()),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            min_area: self.min_area,
            connectivity: Connectivity::Eight,
            parallel_slope_eps: self.parallel_slope_eps,
            convergence_tol: self.convergence_tol,
            max_iters: self.max_iters,
        }
    }
}
