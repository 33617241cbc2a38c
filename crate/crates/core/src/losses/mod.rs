//! Training objectives.
//!
//! - [`clc_loss`]: ℓ1 plus `1 − MS-SSIM`, used to fit the label constructor.
//! - [`ias_loss`]: the student objective. Image-level ℓ1 against the
//!   pseudo-label, plus a weighted original-label term made of the
//!   contrastive [`rain_robust_loss`] and the distribution-level [`sw_loss`].

mod composite;
mod msssim;
mod pixel;
mod robust;
mod sliced;

pub use composite::{clc_loss, ias_loss, IasBatch, LossBreakdown};
pub use msssim::{msssim, ssim_index, MsSsimConfig};
pub use pixel::l1_loss;
pub use robust::{rain_robust_from_features, rain_robust_loss};
pub use sliced::{projection_matrix, sliced_wasserstein, sw_loss, FrozenFeatureStack};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard five-scale MS-SSIM exponents.
pub const MSSSIM_FULL_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Every weight and constant of the CLC and IAS objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ori: f64,
    pub lambda_sw: f64,
    pub tau: f64,
    pub sw_projection_dim: usize,
    pub sw_feature_levels: usize,
    pub feature_stack_seed: u64,
    pub msssim_scales: usize,
    pub msssim_scale_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ori: 0.1,
            lambda_sw: 0.08,
            tau: 0.25,
            sw_projection_dim: 64,
            sw_feature_levels: 3,
            feature_stack_seed: 17,
            msssim_scales: 3,
            msssim_scale_weights: renormalized_weights(3),
        }
    }
}

/// The first `scales` standard MS-SSIM exponents, rescaled to sum to one.
pub fn renormalized_weights(scales: usize) -> Vec<f64> {
    let head = &MSSSIM_FULL_WEIGHTS[..scales.min(MSSSIM_FULL_WEIGHTS.len())];
    let total: f64 = head.iter().sum();
    head.iter().map(|w| w / total).collect()
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.msssim_scales == 0 || self.msssim_scale_weights.len() != self.msssim_scales {
            return Err(Error::Config(format!(
                "msssim_scale_weights has {} entries for {} scales",
                self.msssim_scale_weights.len(),
                self.msssim_scales
            )));
        }
        let total: f64 = self.msssim_scale_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "msssim_scale_weights sum to {total}, expected 1"
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.sw_projection_dim == 0 || self.sw_feature_levels == 0 || self.sw_feature_levels > 3
        {
            return Err(Error::Config(
                "sw_projection_dim must be ≥ 1 and sw_feature_levels in 1..=3".into(),
            ));
        }
        if self.lambda_ori < 0.0 || self.lambda_sw < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn msssim(&self) -> MsSsimConfig {
        MsSsimConfig {
            scale_weights: self.msssim_scale_weights.clone(),
            ..MsSsimConfig::default()
        }
    }
}
