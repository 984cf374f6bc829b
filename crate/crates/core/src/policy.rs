//! Built-in stub policies.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::types::{Action, Observation};
use crate::world::{step_toward, Phase, POINT_MASS_ACTION_DIM, POINT_MASS_JOINT_DIM};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("observation has {found} joints, policy expects {expected}")]
    BadObservation { expected: usize, found: usize },
    #[error("replay file: {0}")]
    Replay(String),
}

/// Maps an observation to `n` actions, the first meant for `obs.timestep`.
pub trait Policy: Send {
    fn action_dim(&self) -> usize;
    fn joint_dim(&self) -> usize;
    fn predict(&mut self, obs: &Observation, n: usize) -> Result<Vec<Action>, PolicyError>;
}

/// Straight-line waypoints to the goal of the current phase, at most
/// `v_max` apart, holding once the goal is reached.
#[derive(Debug, Clone)]
pub struct ScriptedPointMass {
    pub v_max: f64,
}

impl ScriptedPointMass {
    pub fn new(v_max: f64) -> Self {
        Self { v_max }
    }
}

impl Policy for ScriptedPointMass {
    fn action_dim(&self) -> usize {
        POINT_MASS_ACTION_DIM
    }

    fn joint_dim(&self) -> usize {
        POINT_MASS_JOINT_DIM
    }

    fn predict(&mut self, obs: &Observation, n: usize) -> Result<Vec<Action>, PolicyError> {
        let j = obs.joints.values();
        if j.len() != POINT_MASS_JOINT_DIM {
            return Err(PolicyError::BadObservation {
                expected: POINT_MASS_JOINT_DIM,
                found: j.len(),
            });
        }
        let agent = [j[0], j[1]];
        let goal = match Phase::from_real(j[6]) {
            Phase::ToCube => [j[2], j[3]],
            Phase::Grasped => [j[4], j[5]],
            Phase::Done => agent,
        };
        let mut pos = agent;
        Ok((0..n)
            .map(|_| {
                pos = step_toward(pos, goal, self.v_max);
                Action::from_raw(pos.to_vec())
            })
            .collect())
    }
}

/// Scripted policy plus seeded Gaussian perturbation of every waypoint.
#[derive(Debug, Clone)]
pub struct NoisePolicy {
    inner: ScriptedPointMass,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl NoisePolicy {
    pub fn new(v_max: f64, sigma: f64, seed: u64) -> Self {
        Self {
            inner: ScriptedPointMass::new(v_max),
            noise: Normal::new(0.0, sigma.max(0.0)).expect("sigma is non-negative"),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500),
        }
    }
}

impl Policy for NoisePolicy {
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn joint_dim(&self) -> usize {
        self.inner.joint_dim()
    }

    fn predict(&mut self, obs: &Observation, n: usize) -> Result<Vec<Action>, PolicyError> {
        let clean = self.inner.predict(obs, n)?;
        Ok(clean
            .into_iter()
            .map(|a| {
                Action::from_raw(
                    a.values()
                        .iter()
                        .map(|v| v + self.noise.sample(&mut self.rng))
                        .collect(),
                )
            })
            .collect())
    }
}

/// Plays back a recorded action sequence indexed by timestep. Past the end
/// of the recording the last action is held.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    actions: Vec<Action>,
    joint_dim: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<Action>, joint_dim: usize) -> Result<Self, PolicyError> {
        let Some(first) = actions.first() else {
            return Err(PolicyError::Replay("recording is empty".into()));
        };
        let dim = first.dim();
        if let Some(bad) = actions.iter().position(|a| a.dim() != dim) {
            return Err(PolicyError::Replay(format!(
                "action {bad} has a different dimension"
            )));
        }
        Ok(Self { actions, joint_dim })
    }

    /// One action per line; values separated by commas or whitespace. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str, joint_dim: usize) -> Result<Self, PolicyError> {
        let mut actions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PolicyError::Replay(format!("line {}: {e}", lineno + 1)))?;
            let action = Action::new(values)
                .map_err(|e| PolicyError::Replay(format!("line {}: {e}", lineno + 1)))?;
            actions.push(action);
        }
        Self::new(actions, joint_dim)
    }

    pub fn load(path: &Path, joint_dim: usize) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Replay(format!("{}: {e}", path.display())))?;
        Self::parse(&text, joint_dim)
    }
}

impl Policy for ReplayPolicy {
    fn action_dim(&self) -> usize {
        self.actions[0].dim()
    }

    fn joint_dim(&self) -> usize {
        self.joint_dim
    }

    fn predict(&mut self, obs: &Observation, n: usize) -> Result<Vec<Action>, PolicyError> {
        let last = self.actions.len() - 1;
        Ok((0..n as u64)
            .map(|k| {
                let idx = (obs.timestep + k).min(last as u64) as usize;
                self.actions[idx].clone()
            })
            .collect())
    }
}
