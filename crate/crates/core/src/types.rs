//! Shared domain types.
//!
//! Everything here is an immutable value after construction. Timesteps are
//! counted in control ticks; wall time is derived as `timestep * delta_t_ms`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("action chunk is empty")]
    EmptyChunk,
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("vector must have at least one component")]
    ZeroDim,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn check_finite(values: &[f64]) -> Result<(), ValidationError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ValidationError::NonFiniteValue { index }),
        None => Ok(()),
    }
}

/// Joint-space state of the robot (or of the simulated world).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState(Vec<f64>);

impl JointState {
    pub fn new(values: Vec<f64>) -> Result<Self, ValidationError> {
        if values.is_empty() {
            return Err(ValidationError::ZeroDim);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A single low-level command: one target vector per control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(values: Vec<f64>) -> Result<Self, ValidationError> {
        if values.is_empty() {
            return Err(ValidationError::ZeroDim);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    /// Builds an action without validation. Used by decoders and tests that
    /// need to hand malformed data to [`validate_chunk`].
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestep: u64,
    pub joints: JointState,
    /// Opaque payload standing in for images and instructions.
    pub aux: Vec<u8>,
    pub capture_time_ms: u64,
}

/// A server-produced run of consecutive actions. The k-th action is meant for
/// timestep `start_timestep + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub start_timestep: u64,
    pub chunk_id: u64,
    pub actions: Vec<Action>,
}

impl ActionChunk {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Timestep of the last action. Panics on an empty chunk.
    pub fn end_timestep(&self) -> u64 {
        assert!(!self.actions.is_empty(), "empty chunk has no end");
        self.start_timestep + self.actions.len() as u64 - 1
    }

    pub fn timesteps(&self) -> impl Iterator<Item = (u64, &Action)> + '_ {
        let start = self.start_timestep;
        self.actions
            .iter()
            .enumerate()
            .map(move |(k, a)| (start + k as u64, a))
    }
}

/// Checks that a chunk is non-empty, dimensionally consistent and finite.
pub fn validate_chunk(chunk: &ActionChunk, expected_dim: usize) -> Result<(), ValidationError> {
    if chunk.actions.is_empty() {
        return Err(ValidationError::EmptyChunk);
    }
    for action in &chunk.actions {
        if action.dim() != expected_dim {
            return Err(ValidationError::DimMismatch {
                expected: expected_dim,
                found: action.dim(),
            });
        }
        check_finite(action.values())?;
    }
    Ok(())
}

/// How an incoming chunk is combined with the actions still queued.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Aggregation {
    /// Newest chunk wins on overlapping timesteps.
    #[default]
    ReplaceOverlap,
    /// `alpha * old + (1 - alpha) * incoming` on overlapping timesteps.
    ExpBlend { alpha: f64 },
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::ReplaceOverlap => write!(f, "replace"),
            Aggregation::ExpBlend { alpha } => write!(f, "blend:{alpha}"),
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "replace" {
            return Ok(Aggregation::ReplaceOverlap);
        }
        if let Some(rest) = s.strip_prefix("blend:") {
            let alpha: f64 = rest
                .parse()
                .map_err(|_| ValidationError::InvalidConfig(format!("bad blend alpha `{rest}`")))?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(ValidationError::InvalidConfig(format!(
                    "blend alpha must be in (0,1), got {alpha}"
                )));
            }
            return Ok(Aggregation::ExpBlend { alpha });
        }
        Err(ValidationError::InvalidConfig(format!(
            "unknown aggregation `{s}` (expected replace or blend:<alpha>)"
        )))
    }
}

/// Distance used by the joint-space similarity filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    #[default]
    L2,
    Linf,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceMetric::L2 => write!(f, "l2"),
            DistanceMetric::Linf => write!(f, "linf"),
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "l2" | "L2" => Ok(DistanceMetric::L2),
            "linf" | "Linf" | "LINF" => Ok(DistanceMetric::Linf),
            other => Err(ValidationError::InvalidConfig(format!(
                "unknown metric `{other}` (expected l2 or linf)"
            ))),
        }
    }
}

/// Robot-client parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// Chunk size.
    pub n: usize,
    /// Queue threshold fraction.
    pub g: f64,
    /// Joint-space similarity threshold; 0 disables the filter.
    pub epsilon: f64,
    pub metric: DistanceMetric,
    pub delta_t_ms: u64,
    pub aggregation: Aggregation,
    /// Number of control ticks to run after the initial chunk.
    pub horizon: u64,
    /// Delay between deciding to observe and the observation leaving the
    /// client.
    pub capture_delay_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            n: 50,
            g: 0.7,
            epsilon: 0.0,
            metric: DistanceMetric::L2,
            delta_t_ms: 33,
            aggregation: Aggregation::ReplaceOverlap,
            horizon: 600,
            capture_delay_ms: 0,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let bad = |msg: String| Err(ValidationError::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.g) {
            return bad(format!("g must be in [0,1], got {}", self.g));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            ));
        }
        if self.delta_t_ms == 0 {
            return bad("delta_t_ms must be > 0".into());
        }
        if let Aggregation::ExpBlend { alpha } = self.aggregation {
            if !(alpha > 0.0 && alpha < 1.0) {
                return bad(format!("blend alpha must be in (0,1), got {alpha}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(len: usize, dim: usize) -> ActionChunk {
        ActionChunk {
            start_timestep: 0,
            chunk_id: 0,
            actions: (0..len)
                .map(|_| Action::from_raw(vec![0.25; dim]))
                .collect(),
        }
    }

    #[test]
    fn well_formed_chunk_validates() {
        assert_eq!(validate_chunk(&chunk(50, 6), 6), Ok(()));
    }

    #[test]
    fn short_action_is_dim_mismatch() {
        let mut c = chunk(50, 6);
        c.actions[17] = Action::from_raw(vec![0.0; 5]);
        assert_eq!(
            validate_chunk(&c, 6),
            Err(ValidationError::DimMismatch {
                expected: 6,
                found: 5
            })
        );
    }

    #[test]
    fn nan_is_rejected() {
        let mut c = chunk(3, 2);
        c.actions[1] = Action::from_raw(vec![0.0, f64::NAN]);
        assert_eq!(
            validate_chunk(&c, 2),
            Err(ValidationError::NonFiniteValue { index: 1 })
        );
    }

    #[test]
    fn empty_chunk_is_rejected() {
        assert_eq!(
            validate_chunk(&chunk(0, 2), 2),
            Err(ValidationError::EmptyChunk)
        );
    }

    #[test]
    fn implied_timesteps_follow_start() {
        let mut c = chunk(4, 1);
        c.start_timestep = 90;
        let steps: Vec<u64> = c.timesteps().map(|(t, _)| t).collect();
        assert_eq!(steps, vec![90, 91, 92, 93]);
        assert_eq!(c.end_timestep(), 93);
    }

    #[test]
    fn joint_state_rejects_empty_and_inf() {
        assert_eq!(JointState::new(vec![]), Err(ValidationError::ZeroDim));
        assert!(JointState::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn config_ranges() {
        let mut c = ClientConfig::default();
        assert!(c.validate().is_ok());
        c.g = 1.5;
        assert!(c.validate().is_err());
        c.g = 1.0;
        c.delta_t_ms = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn aggregation_parses() {
        assert_eq!(
            "replace".parse::<Aggregation>(),
            Ok(Aggregation::ReplaceOverlap)
        );
        assert_eq!(
            "blend:0.5".parse::<Aggregation>(),
            Ok(Aggregation::ExpBlend { alpha: 0.5 })
        );
        assert!("blend:1.0".parse::<Aggregation>().is_err());
    }
}
