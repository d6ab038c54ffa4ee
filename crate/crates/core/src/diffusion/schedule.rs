use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_MIN: f64 = 0.0292;
pub const DEFAULT_SIGMA_MAX: f64 = 14.6146;
pub const DEFAULT_RHO: f64 = 7.0;

/// Strictly decreasing noise levels followed by a terminal zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    /// Number of denoising steps.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }
}

/// Karras et al. schedule: interpolate linearly in `sigma^(1/rho)` space
/// between `sigma_max` and `sigma_min`, then append 0.
pub fn karras_sigma_schedule(
    n: usize,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
) -> Result<SigmaSchedule> {
    if n == 0 {
        return Err(Error::domain("schedule needs at least one step"));
    }
    if !(sigma_min.is_finite() && sigma_min > 0.0) {
        return Err(Error::domain(format!("sigma_min must be > 0, got {sigma_min}")));
    }
    if !(sigma_max.is_finite() && sigma_max > sigma_min) {
        return Err(Error::domain(format!(
            "sigma_max must exceed sigma_min, got {sigma_max} <= {sigma_min}"
        )));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::domain(format!("rho must be > 0, got {rho}")));
    }
    if n == 1 {
        return Ok(SigmaSchedule {
            sigmas: vec![sigma_max, 0.0],
        });
    }

    let inv_rho = 1.0 / rho;
    let max_inv = sigma_max.powf(inv_rho);
    let min_inv = sigma_min.powf(inv_rho);
    let mut sigmas: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (max_inv + t * (min_inv - max_inv)).powf(rho)
        })
        .collect();
    sigmas[0] = sigma_max;
    sigmas[n - 1] = sigma_min;
    sigmas.push(0.0);

    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::domain(format!(
            "schedule is not strictly decreasing for n={n}, sigma in [{sigma_min}, {sigma_max}], rho={rho}"
        )));
    }
    Ok(SigmaSchedule { sigmas })
}
