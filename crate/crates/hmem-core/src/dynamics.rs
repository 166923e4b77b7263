//! Memory weight evolution: exponential forgetting, feedback adjustment,
//! and access reinforcement.
//!
//! Every episode's weight follows `w <- w * exp(-dt / S)` where `dt` is the
//! time since the episode's decay anchor and `S` its retention strength.
//! The anchor records how far decay has been applied, which makes the
//! operation idempotent and composable: decaying to `t1` and then to `t2`
//! produces the same weight as decaying straight to `t2`.
//!
//! Feedback multiplies the weight after settling pending decay: approval
//! scales it up and reinforces strength, rebuttal scales it down, neutral
//! leaves the curve alone. An externally supplied multiplier (for example
//! from an LLM judge) is clipped to a safe range before use.

use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::node::{NodeId, RetentionState};
use crate::store::MemoryStore;

/// Range external feedback multipliers are clipped to.
pub const FACTOR_MIN: f64 = 0.5;
/// Upper end of the external multiplier clip range.
pub const FACTOR_MAX: f64 = 1.5;

/// Reaction a user showed to an answer that drew on a memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    /// The user confirmed the answer: the memory is reinforced.
    Approve,
    /// No clear signal: the memory follows its forgetting curve.
    Neutral,
    /// The user contradicted the answer: the memory is weakened.
    Rebut,
}

/// User feedback on a retrieved memory, optionally carrying an externally
/// generated multiplier. The factor is clipped to `[0.5, 1.5]` at
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub factor: Option<f64>,
}

impl Feedback {
    pub fn new(kind: FeedbackKind, factor: Option<f64>) -> Self {
        Self {
            kind,
            factor: factor.map(|f| f.clamp(FACTOR_MIN, FACTOR_MAX)),
        }
    }

    pub fn approve() -> Self {
        Self::new(FeedbackKind::Approve, None)
    }

    pub fn neutral() -> Self {
        Self::new(FeedbackKind::Neutral, None)
    }

    pub fn rebut() -> Self {
        Self::new(FeedbackKind::Rebut, None)
    }

    /// The multiplier that will actually be applied to the weight under the
    /// given defaults. An explicit factor is further bounded so approval can
    /// never shrink a weight and rebuttal can never grow one.
    pub fn effective_multiplier(&self, alpha_approve: f64, beta_rebut: f64) -> f64 {
        match (self.kind, self.factor) {
            (FeedbackKind::Approve, Some(f)) => f.max(1.0),
            (FeedbackKind::Approve, None) => 1.0 + alpha_approve,
            (FeedbackKind::Neutral, Some(f)) => f,
            (FeedbackKind::Neutral, None) => 1.0,
            (FeedbackKind::Rebut, Some(f)) => f.min(1.0),
            (FeedbackKind::Rebut, None) => 1.0 - beta_rebut,
        }
    }
}

/// What [`MemoryStore::apply_feedback`] did to an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeedbackOutcome {
    /// Weight after decay settlement, multiplication, and clamping.
    pub weight: f64,
    /// The multiplier that was applied.
    pub multiplier: f64,
    /// Strength after any reinforcement.
    pub strength: f64,
}

/// Retention factor `exp(-dt / strength)` for a non-negative elapsed time.
fn retention_factor(dt: i64, strength: f64) -> f64 {
    (-(dt.max(0) as f64) / strength).exp()
}

impl MemoryStore {
    /// Apply pending decay to every live episode, bringing each decay anchor
    /// forward to `now`. `last_access` is untouched: decay is not an access.
    /// Anchors ahead of `now` (a clock that went backwards) are left alone.
    /// Returns the number of episodes whose weight changed.
    pub fn decay(&mut self, now: i64) -> usize {
        let (w_min, w_max) = (self.config.weight_min, self.config.weight_max);
        let episode_layer = self.config.levels as usize - 1;
        let mut changed = 0;
        for node in &mut self.layers[episode_layer] {
            if node.tombstone {
                continue;
            }
            let r = &mut node.retention;
            let dt = now - r.decay_anchor;
            if dt <= 0 {
                continue;
            }
            let new_weight = (r.weight * retention_factor(dt, r.strength)).clamp(w_min, w_max);
            if new_weight != r.weight {
                changed += 1;
            }
            r.weight = new_weight;
            r.decay_anchor = now;
        }
        changed
    }

    /// Adjust one episode's weight in response to user feedback.
    ///
    /// Pending decay is settled first so the multiplier acts on the weight
    /// the forgetting curve would assign at `now`; the result is clamped to
    /// the configured range. Approval additionally reinforces strength by
    /// `1 + reinforcement`. The episode's `last_access` moves to `now`.
    pub fn apply_feedback(
        &mut self,
        episode: NodeId,
        feedback: Feedback,
        now: i64,
    ) -> Result<FeedbackOutcome, StoreError> {
        let cfg = self.config.clone();
        let multiplier = feedback.effective_multiplier(cfg.alpha_approve, cfg.beta_rebut);
        let node = match self.node_raw_mut(episode) {
            Some(n) if !n.tombstone => n,
            _ => return Err(StoreError::NotFound(episode)),
        };
        if node.content.is_none() {
            return Err(StoreError::NotAnEpisode(episode, cfg.levels));
        }
        let r = &mut node.retention;
        settle_decay(r, now, cfg.weight_min, cfg.weight_max);
        r.weight = (r.weight * multiplier).clamp(cfg.weight_min, cfg.weight_max);
        if feedback.kind == FeedbackKind::Approve {
            r.strength *= 1.0 + cfg.reinforcement;
        }
        r.last_access = now;
        Ok(FeedbackOutcome {
            weight: r.weight,
            multiplier,
            strength: r.strength,
        })
    }

    /// Record a direct reinforcement access: settle pending decay, grow
    /// strength by `1 + reinforcement`, and mark the access.
    pub fn touch(&mut self, episode: NodeId, now: i64) -> Result<RetentionState, StoreError> {
        let cfg = self.config.clone();
        let node = match self.node_raw_mut(episode) {
            Some(n) if !n.tombstone => n,
            _ => return Err(StoreError::NotFound(episode)),
        };
        if node.content.is_none() {
            return Err(StoreError::NotAnEpisode(episode, cfg.levels));
        }
        let r = &mut node.retention;
        settle_decay(r, now, cfg.weight_min, cfg.weight_max);
        r.strength *= 1.0 + cfg.reinforcement;
        r.last_access = now;
        r.access_count += 1;
        Ok(*r)
    }
}

fn settle_decay(r: &mut RetentionState, now: i64, w_min: f64, w_max: f64) {
    let dt = now - r.decay_anchor;
    if dt > 0 {
        r.weight = (r.weight * retention_factor(dt, r.strength)).clamp(w_min, w_max);
        r.decay_anchor = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HierarchyConfig;
    use crate::test_util::{onehot4, record4};

    fn store_with_episode(timestamp: i64) -> (MemoryStore, NodeId) {
        let config = HierarchyConfig {
            dimension: 4,
            ..HierarchyConfig::default()
        };
        let mut store = MemoryStore::new(config).unwrap();
        let id = store
            .insert(&record4("d", "c", "t", "text", "", timestamp), onehot4(4))
            .unwrap();
        (store, id)
    }

    #[test]
    fn zero_elapsed_time_leaves_weight_unchanged() {
        let (mut store, id) = store_with_episode(1000);
        assert_eq!(store.decay(1000), 0);
        assert_eq!(store.node(id).unwrap().retention.weight, 1.0);
    }

    #[test]
    fn one_time_constant_decays_to_e_inverse() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.strength = 86_400.0;
        store.set_retention(id, r).unwrap();

        assert_eq!(store.decay(1000 + 86_400), 1);
        let got = store.node(id).unwrap().retention.weight;
        let expected = (-1.0f64).exp(); // oracle: direct closed form
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn decay_clamps_at_the_floor() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.weight = 0.02;
        store.set_retention(id, r).unwrap();
        store.decay(1000 + 100_000_000);
        assert_eq!(store.node(id).unwrap().retention.weight, 0.01);
        // Further decay changes nothing: already at the floor.
        assert_eq!(store.decay(1000 + 200_000_000), 0);
    }

    #[test]
    fn decay_composes() {
        let (mut store, id) = store_with_episode(1000);
        let (mut direct, id2) = store_with_episode(1000);
        store.decay(2000);
        store.decay(5000);
        direct.decay(5000);
        let a = store.node(id).unwrap().retention.weight;
        let b = direct.node(id2).unwrap().retention.weight;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn decay_ignores_backward_clocks() {
        let (mut store, id) = store_with_episode(1000);
        assert_eq!(store.decay(500), 0);
        let r = store.node(id).unwrap().retention;
        assert_eq!(r.weight, 1.0);
        assert_eq!(r.decay_anchor, 1000);
    }

    #[test]
    fn approve_applies_default_alpha() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.weight = 0.5;
        store.set_retention(id, r).unwrap();
        let out = store
            .apply_feedback(id, Feedback::approve(), 1000)
            .unwrap();
        assert!((out.weight - 0.6).abs() < 1e-12, "0.5 * 1.2 = 0.6");
        assert_eq!(out.multiplier, 1.2);
        // Approval reinforces strength by exactly (1 + rho).
        assert_eq!(out.strength, 3600.0 * 1.5);
    }

    #[test]
    fn neutral_keeps_weight_but_marks_access() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.weight = 0.5;
        r.decay_anchor = 2222; // decay already settled up to the event time
        store.set_retention(id, r).unwrap();
        let out = store.apply_feedback(id, Feedback::neutral(), 2222).unwrap();
        assert_eq!(out.weight, 0.5);
        let r = store.node(id).unwrap().retention;
        assert_eq!(r.last_access, 2222);
        assert_eq!(r.strength, 3600.0, "neutral does not reinforce");
    }

    #[test]
    fn feedback_settles_pending_decay_first() {
        let (mut store, id) = store_with_episode(1000);
        let out = store
            .apply_feedback(id, Feedback::neutral(), 1000 + 3600)
            .unwrap();
        // Oracle: one time constant of decay, then the neutral multiplier 1.
        let expected = (-1.0f64).exp();
        assert!((out.weight - expected).abs() < 1e-12);
    }

    #[test]
    fn rebut_with_external_factor() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.weight = 0.5;
        store.set_retention(id, r).unwrap();
        let out = store
            .apply_feedback(id, Feedback::new(FeedbackKind::Rebut, Some(0.5)), 1000)
            .unwrap();
        assert!((out.weight - 0.25).abs() < 1e-12);
    }

    #[test]
    fn factors_are_clipped_and_direction_bounded() {
        let f = Feedback::new(FeedbackKind::Approve, Some(3.0));
        assert_eq!(f.factor, Some(1.5));
        assert_eq!(f.effective_multiplier(0.2, 0.5), 1.5);

        // A low factor cannot turn approval into a penalty.
        let f = Feedback::new(FeedbackKind::Approve, Some(0.1));
        assert_eq!(f.factor, Some(0.5));
        assert_eq!(f.effective_multiplier(0.2, 0.5), 1.0);

        // Nor can a high factor turn rebuttal into a boost.
        let f = Feedback::new(FeedbackKind::Rebut, Some(1.4));
        assert_eq!(f.effective_multiplier(0.2, 0.5), 1.0);

        let f = Feedback::new(FeedbackKind::Rebut, Some(0.02));
        assert_eq!(f.effective_multiplier(0.2, 0.5), 0.5);
    }

    #[test]
    fn feedback_on_interior_or_unknown_nodes_fails() {
        let (mut store, _id) = store_with_episode(1000);
        let interior = NodeId::new(2, 0);
        assert!(matches!(
            store.apply_feedback(interior, Feedback::approve(), 1),
            Err(StoreError::NotAnEpisode(..))
        ));
        assert!(matches!(
            store.apply_feedback(NodeId::new(4, 99), Feedback::approve(), 1),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn touch_settles_decay_then_reinforces() {
        let (mut store, id) = store_with_episode(1000);
        // Immediate repeat: weight stays, strength compounds.
        let r1 = store.touch(id, 1000).unwrap();
        assert_eq!(r1.weight, 1.0);
        assert_eq!(r1.strength, 3600.0 * 1.5);
        let r2 = store.touch(id, 1000).unwrap();
        assert_eq!(r2.weight, 1.0);
        assert_eq!(r2.strength, 3600.0 * 1.5 * 1.5);
        assert_eq!(r2.access_count, 2);

        // After one time constant, weight decays by e^-1 before the boost.
        let dt = r2.strength as i64;
        let r3 = store.touch(id, 1000 + dt).unwrap();
        let expected = (-(dt as f64) / r2.strength).exp();
        assert!((r3.weight - expected).abs() < 1e-12);
        assert_eq!(r3.strength, r2.strength * 1.5);
    }

    #[test]
    fn touch_on_tombstoned_episode_is_not_found() {
        let (mut store, id) = store_with_episode(1000);
        let mut r = store.node(id).unwrap().retention;
        r.weight = store.config().weight_min;
        store.set_retention(id, r).unwrap();
        store.compact();
        assert!(matches!(
            store.touch(id, 2000),
            Err(StoreError::NotFound(_))
        ));
    }
}
