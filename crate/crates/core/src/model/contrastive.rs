//! Margin-based contrastive loss on cosine similarities.
//!
//! L = 1/(N1·N2) Σ_i Σ_j W_ij · max(0, m − S_ij)², W_ij = exp(α·[L1_i = L2_j]).
//! The hinge applies to every pair; same-label pairs are up-weighted by e^α.
//! The `conventional` variant uses (1 − S)² on same-label pairs and
//! max(0, S − m)² on the rest, with the same weights.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::tape::{contrastive_parts, ContrastiveParams};
use super::ModelError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub alpha: f64,
    pub pretrain_epochs: usize,
    pub conventional: bool,
    /// Apply the loss to each modality's representation instead of the fused one.
    pub per_modality: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            alpha: 1.0,
            pretrain_epochs: 10,
            conventional: false,
            per_modality: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn params(&self) -> ContrastiveParams {
        ContrastiveParams {
            margin: self.margin,
            alpha: self.alpha,
            conventional: self.conventional,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.margin.is_finite() || !self.alpha.is_finite() {
            return Err(ModelError::Config(
                "contrastive margin and scale must be finite".into(),
            ));
        }
        Ok(())
    }
}

pub fn contrastive_loss<T: Scalar>(
    z1: ArrayView2<T>,
    z2: ArrayView2<T>,
    l1: &[usize],
    l2: &[usize],
    cfg: &ContrastiveConfig,
) -> Result<T, ModelError> {
    Ok(contrastive_parts(z1, z2, l1, l2, cfg.params())?.loss)
}
