//! Joint-space near-duplicate filter with the empty-queue bypass.

use crate::types::{DistanceMetric, JointState, Observation, ValidationError};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    last_processed: Option<JointState>,
    epsilon: f64,
    metric: DistanceMetric,
}

/// Why an observation was (or was not) let through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterDecision {
    /// The queue is empty: processed regardless of similarity.
    Forced,
    /// Nothing processed yet.
    First,
    /// Far enough from the last processed state.
    Moved { distance: f64 },
    /// Near-duplicate; drop it.
    Suppressed { distance: f64 },
}

impl FilterDecision {
    pub fn needs_processing(self) -> bool {
        !matches!(self, FilterDecision::Suppressed { .. })
    }
}

pub fn distance(a: &JointState, b: &JointState, metric: DistanceMetric) -> f64 {
    let diffs = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs());
    match metric {
        DistanceMetric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        DistanceMetric::Linf => diffs.fold(0.0, f64::max),
    }
}

impl FilterState {
    pub fn new(epsilon: f64, metric: DistanceMetric) -> Self {
        assert!(epsilon >= 0.0, "epsilon must be non-negative");
        Self {
            last_processed: None,
            epsilon,
            metric,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn last_processed(&self) -> Option<&JointState> {
        self.last_processed.as_ref()
    }

    pub fn decide(
        &self,
        obs: &Observation,
        queue_empty: bool,
    ) -> Result<FilterDecision, ValidationError> {
        let Some(last) = &self.last_processed else {
            return Ok(if queue_empty {
                FilterDecision::Forced
            } else {
                FilterDecision::First
            });
        };
        if last.dim() != obs.joints.dim() {
            return Err(ValidationError::DimMismatch {
                expected: last.dim(),
                found: obs.joints.dim(),
            });
        }
        if queue_empty {
            return Ok(FilterDecision::Forced);
        }
        let d = distance(last, &obs.joints, self.metric);
        Ok(if d >= self.epsilon {
            FilterDecision::Moved { distance: d }
        } else {
            FilterDecision::Suppressed { distance: d }
        })
    }

    pub fn needs_processing(
        &self,
        obs: &Observation,
        queue_empty: bool,
    ) -> Result<bool, ValidationError> {
        self.decide(obs, queue_empty)
            .map(FilterDecision::needs_processing)
    }

    /// Call after an observation has actually been sent.
    pub fn mark_processed(&mut self, joints: &JointState) {
        self.last_processed = Some(joints.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(values: Vec<f64>) -> Observation {
        Observation {
            timestep: 0,
            joints: JointState::new(values).unwrap(),
            aux: Vec::new(),
            capture_time_ms: 0,
        }
    }

    fn primed(epsilon: f64, metric: DistanceMetric, at: Vec<f64>) -> FilterState {
        let mut f = FilterState::new(epsilon, metric);
        f.mark_processed(&JointState::new(at).unwrap());
        f
    }

    #[test]
    fn identical_observation_is_suppressed() {
        let f = primed(0.01, DistanceMetric::L2, vec![0.1, 0.2]);
        assert!(!f.needs_processing(&obs(vec![0.1, 0.2]), false).unwrap());
    }

    #[test]
    fn empty_queue_bypasses() {
        let f = primed(0.01, DistanceMetric::L2, vec![0.1, 0.2]);
        assert!(f.needs_processing(&obs(vec![0.1, 0.2]), true).unwrap());
        assert_eq!(
            f.decide(&obs(vec![0.1, 0.2]), true).unwrap(),
            FilterDecision::Forced
        );
    }

    #[test]
    fn large_move_passes() {
        let f = primed(0.01, DistanceMetric::L2, vec![0.0, 0.0]);
        // 0.3-0.4-0.5 triangle
        let d = f.decide(&obs(vec![0.3, 0.4]), false).unwrap();
        match d {
            FilterDecision::Moved { distance } => assert!((distance - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linf_uses_max_component() {
        let f = primed(0.35, DistanceMetric::Linf, vec![0.0, 0.0]);
        // L2 would be 0.5 >= 0.35, Linf is 0.4
        assert!(f.needs_processing(&obs(vec![0.3, 0.4]), false).unwrap());
        let f = primed(0.45, DistanceMetric::Linf, vec![0.0, 0.0]);
        assert!(!f.needs_processing(&obs(vec![0.3, 0.4]), false).unwrap());
        let f = primed(0.45, DistanceMetric::L2, vec![0.0, 0.0]);
        assert!(f.needs_processing(&obs(vec![0.3, 0.4]), false).unwrap());
    }

    #[test]
    fn first_observation_always_passes() {
        let f = FilterState::new(10.0, DistanceMetric::L2);
        assert_eq!(
            f.decide(&obs(vec![1.0]), false).unwrap(),
            FilterDecision::First
        );
    }

    #[test]
    fn zero_epsilon_disables_filter() {
        let f = primed(0.0, DistanceMetric::L2, vec![0.5]);
        assert!(f.needs_processing(&obs(vec![0.5]), false).unwrap());
    }

    #[test]
    fn dim_mismatch() {
        let f = primed(0.0, DistanceMetric::L2, vec![0.5, 0.5]);
        assert_eq!(
            f.needs_processing(&obs(vec![0.5]), false),
            Err(ValidationError::DimMismatch {
                expected: 2,
                found: 1
            })
        );
    }
}
