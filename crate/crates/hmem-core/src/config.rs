//! Store configuration.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Minimum number of hierarchy levels (a root layer plus the episode layer).
pub const MIN_LEVELS: u8 = 2;
/// Maximum number of hierarchy levels.
pub const MAX_LEVELS: u8 = 6;

/// Shape and dynamics parameters of a hierarchical store.
///
/// `levels` counts all layers including the episode layer, so a store with
/// the default `levels = 4` has three index layers (domain, category, trace)
/// above the episodes. All weight/strength parameters are expressed in the
/// same units the retention state uses: weights are dimensionless, strength
/// is in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Number of layers, episode layer included. In `[2, 6]`.
    pub levels: u8,
    /// Dimension of every semantic vector in the store.
    pub dimension: usize,
    /// Per-level beam width used by routed retrieval.
    pub k_per_level: usize,
    /// Number of episodes returned by a retrieval.
    pub final_n: usize,
    /// Cosine similarity at or above which an inserted level entry is merged
    /// into an existing sibling instead of creating a new node. In `(0, 1]`.
    pub merge_threshold: f64,
    /// Floor for retention strength, in seconds. New episodes start here.
    pub strength_min: f64,
    /// Strength multiplier per reinforcement event is `1 + reinforcement`.
    pub reinforcement: f64,
    /// Default approval multiplier is `1 + alpha_approve`.
    pub alpha_approve: f64,
    /// Default rebuttal multiplier is `1 - beta_rebut`.
    pub beta_rebut: f64,
    /// Lower clamp for memory weights.
    pub weight_min: f64,
    /// Upper clamp for memory weights.
    pub weight_max: f64,
    /// Episodes with weight at or below `weight_min + prune_epsilon` are
    /// tombstoned by `compact`.
    pub prune_epsilon: f64,
    /// When set, episode ranking uses `similarity * weight^gamma` instead of
    /// similarity alone. Off by default: weights are reported as confidence
    /// metadata, not used for ordering.
    #[serde(default)]
    pub blend_gamma: Option<f64>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            dimension: 384,
            k_per_level: 10,
            final_n: 10,
            merge_threshold: 0.85,
            strength_min: 3600.0,
            reinforcement: 0.5,
            alpha_approve: 0.2,
            beta_rebut: 0.5,
            weight_min: 0.01,
            weight_max: 10.0,
            prune_epsilon: 0.0,
            blend_gamma: None,
        }
    }
}

// NaN fails every predicate below, so a NaN-poisoned config cannot validate.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

impl HierarchyConfig {
    /// Validate every field, returning the first violation with the field
    /// named.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.levels < MIN_LEVELS || self.levels > MAX_LEVELS {
            return Err(ConfigError::new(
                "levels",
                format!(
                    "must be in [{MIN_LEVELS}, {MAX_LEVELS}], got {}",
                    self.levels
                ),
            ));
        }
        if self.dimension == 0 {
            return Err(ConfigError::new("dimension", "must be positive"));
        }
        if self.k_per_level == 0 {
            return Err(ConfigError::new("k_per_level", "must be positive"));
        }
        if self.final_n == 0 {
            return Err(ConfigError::new("final_n", "must be positive"));
        }
        if !(positive(self.merge_threshold) && self.merge_threshold <= 1.0) {
            return Err(ConfigError::new(
                "merge_threshold",
                format!("must be in (0, 1], got {}", self.merge_threshold),
            ));
        }
        if !positive(self.strength_min) {
            return Err(ConfigError::new("strength_min", "must be positive"));
        }
        if !non_negative(self.reinforcement) {
            return Err(ConfigError::new("reinforcement", "must be non-negative"));
        }
        if !non_negative(self.alpha_approve) {
            return Err(ConfigError::new("alpha_approve", "must be non-negative"));
        }
        if !(non_negative(self.beta_rebut) && self.beta_rebut <= 1.0) {
            return Err(ConfigError::new("beta_rebut", "must be in [0, 1]"));
        }
        if !positive(self.weight_min) {
            return Err(ConfigError::new("weight_min", "must be positive"));
        }
        let admits_initial_weight = self.weight_min <= 1.0 && 1.0 <= self.weight_max;
        if !admits_initial_weight {
            // New episodes start at weight 1.0; the clamp range must admit it.
            return Err(ConfigError::new(
                "weight_min",
                format!(
                    "range [{}, {}] must contain 1.0",
                    self.weight_min, self.weight_max
                ),
            ));
        }
        if !non_negative(self.prune_epsilon) {
            return Err(ConfigError::new("prune_epsilon", "must be non-negative"));
        }
        if let Some(g) = self.blend_gamma {
            if !positive(g) {
                return Err(ConfigError::new("blend_gamma", "must be positive when set"));
            }
        }
        Ok(())
    }

    /// Layer index of the episode layer (== `levels`).
    pub fn episode_layer(&self) -> u8 {
        self.levels
    }
}
